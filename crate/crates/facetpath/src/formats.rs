//! Output formats: path corpus, checkpoints, attention tables, reports and
//! training traces.

use std::fmt::Write as _;
use std::path::Path;

use facetpath_core::model::AttentionRow;
use facetpath_core::numerics::Tensor;
use facetpath_core::training::{Aggregate, MeanStd};
use facetpath_core::{FacetSubgraph, MetricsReport, ModelParams, PathRecord, TrainTrace};
use serde_json::json;

use crate::error::{Error, Result};
use crate::io::{data_lines, read_text};

/// One kept path per line, node ids separated by spaces, in discovery order.
pub fn paths_tsv(sub: &FacetSubgraph) -> String {
    let mut out = String::new();
    for p in sub.paths() {
        let ids: Vec<String> = p.nodes.iter().map(usize::to_string).collect();
        out.push_str(&ids.join(" "));
        out.push('\n');
    }
    out
}

/// Parse a path corpus back into records, in file order.
pub fn read_paths(path: &Path) -> Result<Vec<PathRecord>> {
    let text = read_text(path)?;
    data_lines(&text)
        .map(|(line, l)| {
            let nodes = l
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::ingest(path, Some(line), format!("invalid node id {v:?}"))))
                .collect::<Result<Vec<usize>>>()?;
            Ok(PathRecord { nodes })
        })
        .collect()
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MF2V";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint, little-endian:
/// `"MF2V"`, `u32` version, `u32` record count, then per record
/// `u32` name length, name bytes, `u32` rank, `u64` per dim, `f64` payload.
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let tensors = params.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!("{name}: rank {rank}, only 2 is supported")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let len = rows.checked_mul(cols).filter(|n| n.checked_mul(8).is_some());
        let len = len.ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let payload = r.take(len * 8)?;
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    if r.at != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(ModelParams::from_named(&tensors)?)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// `node,type,alpha_1..alpha_K`.
pub fn attention_csv(rows: &[AttentionRow], type_names: &[String]) -> String {
    let k = rows.first().map_or(0, |r| r.alpha.len());
    let mut out = String::from("node,type");
    for i in 1..=k {
        write!(out, ",alpha_{i}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{}", r.node, type_names[r.node_type]).unwrap();
        for a in &r.alpha {
            write!(out, ",{a:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Per-run rows. With `timing = false` the wall-clock column is left out, so
/// two runs of the same configuration give identical text.
pub fn report_csv(report: &MetricsReport, timing: bool) -> String {
    let mut out = String::from("axis_value,seed,train_fraction,auc,micro_f1,macro_f1,nmi,ari,epochs,best_epoch");
    if timing {
        out.push_str(",ms");
    }
    out.push('\n');
    for r in &report.rows {
        write!(
            out,
            "{},{},{:?},{:?},{:?},{:?},{},{},{},{}",
            r.axis_value,
            r.seed,
            r.train_fraction,
            r.auc,
            r.micro_f1,
            r.macro_f1,
            opt(r.nmi),
            opt(r.ari),
            r.epochs,
            r.best_epoch
        )
        .unwrap();
        if timing {
            write!(out, ",{:?}", r.ms).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Mean and standard deviation per axis value.
pub fn summary_csv(report: &MetricsReport) -> String {
    let mut out = String::from("axis_value,runs");
    for m in ["auc", "micro_f1", "macro_f1", "nmi", "ari", "epochs", "ms"] {
        write!(out, ",{m}_mean,{m}_std").unwrap();
    }
    out.push('\n');
    let pair = |m: Option<MeanStd>| match m {
        Some(m) => format!("{:?},{:?}", m.mean, m.std),
        None => String::from(","),
    };
    for a in &report.aggregates {
        let Aggregate { axis_value, runs, auc, micro_f1, macro_f1, nmi, ari, epochs, ms } = a;
        writeln!(
            out,
            "{axis_value},{runs},{},{},{},{},{},{},{}",
            pair(Some(*auc)),
            pair(Some(*micro_f1)),
            pair(Some(*macro_f1)),
            pair(*nmi),
            pair(*ari),
            pair(Some(*epochs)),
            pair(Some(*ms))
        )
        .unwrap();
    }
    out
}

/// Training trace as JSON lines: one `warmup` record, one `epoch` record per
/// epoch, one closing `summary` record.
pub fn trace_jsonl(seed: u64, trace: &TrainTrace) -> String {
    let mut out = String::new();
    let mut push = |v: serde_json::Value| {
        out.push_str(&v.to_string());
        out.push('\n');
    };
    push(json!({ "kind": "warmup", "seed": seed, "losses": trace.warmup_losses }));
    for e in &trace.epochs {
        push(json!({
            "kind": "epoch",
            "seed": seed,
            "epoch": e.epoch,
            "train_loss": e.train_loss,
            "train_loss_mean": e.train_loss_mean,
            "val_loss": e.val_loss,
            "ms": e.ms,
        }));
    }
    push(json!({
        "kind": "summary",
        "seed": seed,
        "best_epoch": trace.best_epoch,
        "best_val_loss": trace.best_val_loss,
        "stop_reason": trace.stop_reason,
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use facetpath_core::training::MetricRow;
    use facetpath_core::HyperParams;

    fn params() -> ModelParams {
        let hyper = HyperParams { k_facets: 2, dim: 3, ..Default::default() };
        let mut rng = facetpath_core::rng::seeded(4);
        let e = Tensor::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.25 - 1.0);
        ModelParams::with_embeddings(e, &hyper, 3, &mut rng)
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = params();
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], b"MF2V");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
    }

    #[test]
    fn checkpoint_rejects_damage() {
        let bytes = encode_checkpoint(&params());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(decode_checkpoint(&v2).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
    }

    #[test]
    fn attention_table_layout() {
        let rows = vec![
            AttentionRow { node: 0, node_type: 0, alpha: vec![0.25, 0.75], isolated: false },
            AttentionRow { node: 2, node_type: 0, alpha: vec![0.5, 0.5], isolated: true },
        ];
        let csv = attention_csv(&rows, &["A".to_string()]);
        assert_eq!(csv, "node,type,alpha_1,alpha_2\n0,A,0.25,0.75\n2,A,0.5,0.5\n");
    }

    #[test]
    fn report_without_timing_drops_ms() {
        let row = MetricRow {
            axis_value: "gumbel".into(),
            seed: 1,
            train_fraction: 0.8,
            auc: 0.5,
            micro_f1: 1.0,
            macro_f1: 1.0,
            nmi: None,
            ari: Some(0.0),
            epochs: 3,
            best_epoch: 2,
            ms: 12.5,
        };
        let report = MetricsReport::from_rows(vec![row]);
        let without = report_csv(&report, false);
        assert_eq!(without.lines().nth(1).unwrap(), "gumbel,1,0.8,0.5,1.0,1.0,,0.0,3,2");
        assert!(report_csv(&report, true).lines().nth(1).unwrap().ends_with(",12.5"));
        let summary = summary_csv(&report);
        assert!(summary.lines().nth(1).unwrap().starts_with("gumbel,1,0.5,0.0,"));
    }

    #[test]
    fn paths_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("paths.tsv");
        std::fs::write(&p, "0 4 1\n# comment\n2 5 6 3\n").unwrap();
        let paths = read_paths(&p).unwrap();
        assert_eq!(paths[1].nodes, vec![2, 5, 6, 3]);
        let sub = FacetSubgraph::from_walks(vec![0, 1, 2, 3], vec![paths]);
        assert_eq!(paths_tsv(&sub), "0 4 1\n2 5 6 3\n");
    }
}
