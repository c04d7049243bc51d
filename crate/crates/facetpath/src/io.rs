//! Graph directory format.
//!
//! | file | content |
//! |------|---------|
//! | `nodes.tsv` | `id <TAB> type_name`; ids must be exactly `0..N` |
//! | `edges.tsv` | `src <TAB> dst`; symmetrized, duplicates collapsed |
//! | `labels.tsv` | optional `id <TAB> class`, target-type nodes only |
//! | `features-<type>.csv` | optional, one row per node of that type in ascending id order |
//! | `meta.tsv` | optional `type <TAB> name` lines (type order), `target <TAB> name`, `classes <TAB> n` |
//!
//! Blank lines and lines starting with `#` are skipped. Fields may be
//! separated by tabs or spaces, so type names cannot contain whitespace.
//! Without `meta.tsv`, types are numbered in order of first appearance and
//! the target type is the type of node 0.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use facetpath_core::numerics::Tensor;
use facetpath_core::HeteroGraph;

use crate::error::{Error, Result};

pub const NODES: &str = "nodes.tsv";
pub const EDGES: &str = "edges.tsv";
pub const LABELS: &str = "labels.tsv";
pub const META: &str = "meta.tsv";

pub fn features_file(type_name: &str) -> String {
    format!("features-{type_name}.csv")
}

/// Non-comment lines with their 1-based line numbers.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Read a whole file; a missing file is an ingest error.
pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::ingest(path, None, "missing file"),
        _ => Error::io(path, e),
    })
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    if path.exists() {
        read_text(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Split a line into exactly `n` whitespace-separated fields.
fn fields<'a>(path: &Path, line: usize, text: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = text.split_whitespace().collect();
    if f.len() != n {
        return Err(Error::ingest(path, Some(line), format!("expected {n} fields, found {}", f.len())));
    }
    Ok(f)
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::ingest(path, Some(line), format!("invalid {what} {field:?}")))
}

struct Meta {
    types: Vec<String>,
    target: Option<String>,
    classes: Option<usize>,
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join(META);
    let mut meta = Meta { types: Vec::new(), target: None, classes: None };
    let Some(text) = read_optional(&path)? else { return Ok(meta) };
    for (line, l) in data_lines(&text) {
        let f = fields(&path, line, l, 2)?;
        match f[0] {
            "type" => {
                if meta.types.iter().any(|t| t == f[1]) {
                    return Err(Error::ingest(&path, Some(line), format!("type {} listed twice", f[1])));
                }
                meta.types.push(f[1].to_string());
            }
            "target" => meta.target = Some(f[1].to_string()),
            "classes" => meta.classes = Some(parse(&path, line, f[1], "class count")?),
            other => return Err(Error::ingest(&path, Some(line), format!("unknown key {other:?}"))),
        }
    }
    Ok(meta)
}

/// Read a graph directory.
pub fn load_graph(dir: &Path) -> Result<HeteroGraph> {
    let meta = read_meta(dir)?;

    let path = dir.join(NODES);
    let text = read_text(&path)?;
    let mut by_id: BTreeMap<usize, (usize, String)> = BTreeMap::new();
    for (line, l) in data_lines(&text) {
        let f = fields(&path, line, l, 2)?;
        let id: usize = parse(&path, line, f[0], "node id")?;
        if by_id.insert(id, (line, f[1].to_string())).is_some() {
            return Err(Error::ingest(&path, Some(line), format!("node {id} listed twice")));
        }
    }
    let n = by_id.len();
    if let Some((&id, (line, _))) = by_id.iter().find(|(&id, _)| id >= n) {
        return Err(Error::ingest(&path, Some(*line), format!("node ids must be 0..{n}, found {id}")));
    }
    if n == 0 {
        return Err(Error::ingest(&path, None, "no nodes"));
    }

    let mut type_names = meta.types.clone();
    let mut node_type = Vec::with_capacity(n);
    for (line, name) in by_id.values() {
        let t = match type_names.iter().position(|t| t == name) {
            Some(t) => t,
            None if meta.types.is_empty() => {
                type_names.push(name.clone());
                type_names.len() - 1
            }
            None => return Err(Error::ingest(&path, Some(*line), format!("type {name} missing from {META}"))),
        };
        node_type.push(t);
    }
    let target_type = match &meta.target {
        Some(name) => type_names
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| Error::ingest(&dir.join(META), None, format!("unknown target type {name}")))?,
        None => node_type[0],
    };

    let path = dir.join(EDGES);
    let text = read_text(&path)?;
    let mut edges = Vec::new();
    for (line, l) in data_lines(&text) {
        let f = fields(&path, line, l, 2)?;
        let a: usize = parse(&path, line, f[0], "node id")?;
        let b: usize = parse(&path, line, f[1], "node id")?;
        if a >= n || b >= n {
            return Err(Error::ingest(&path, Some(line), format!("edge ({a}, {b}) references an unknown node")));
        }
        if a == b {
            return Err(Error::ingest(&path, Some(line), format!("self-loop on node {a}")));
        }
        edges.push((a, b));
    }
    let mut g = HeteroGraph::new(type_names.clone(), node_type.clone(), &edges, target_type)?;

    let path = dir.join(LABELS);
    if let Some(text) = read_optional(&path)? {
        let mut labels = BTreeMap::new();
        for (line, l) in data_lines(&text) {
            let f = fields(&path, line, l, 2)?;
            let id: usize = parse(&path, line, f[0], "node id")?;
            let class: usize = parse(&path, line, f[1], "class")?;
            if id >= n {
                return Err(Error::ingest(&path, Some(line), format!("label for unknown node {id}")));
            }
            if node_type[id] != target_type {
                return Err(Error::ingest(
                    &path,
                    Some(line),
                    format!(
                        "node {id} has type {} but only target type {} may be labeled",
                        type_names[node_type[id]], type_names[target_type]
                    ),
                ));
            }
            if labels.insert(id, class).is_some() {
                return Err(Error::ingest(&path, Some(line), format!("node {id} labeled twice")));
            }
        }
        g = g.with_labels(labels, meta.classes.unwrap_or(0))?;
    }

    for (t, name) in type_names.iter().enumerate() {
        let path = dir.join(features_file(name));
        let Some(text) = read_optional(&path)? else { continue };
        let expected_rows = node_type.iter().filter(|&&x| x == t).count();
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (line, l) in data_lines(&text) {
            let row: Vec<f64> = l
                .split(',')
                .map(|v| parse(&path, line, v.trim(), "feature value"))
                .collect::<Result<_>>()?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(Error::ingest(&path, Some(line), format!("row has {} values, expected {c}", row.len())));
                }
                Some(_) => {}
            }
            data.extend(row);
            rows += 1;
        }
        if rows != expected_rows {
            return Err(Error::ingest(&path, None, format!("{rows} feature rows for {expected_rows} nodes of type {name}")));
        }
        g = g.with_features(t, Tensor::from_vec(rows, cols.unwrap_or(0), data)?)?;
    }
    Ok(g)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write `g` so that [`load_graph`] reproduces it exactly.
pub fn write_graph(g: &HeteroGraph, dir: &Path) -> Result<()> {
    for name in g.type_names() {
        if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == ',' || c == '/') {
            return Err(Error::Config(format!("type name {name:?} cannot be written to a graph directory")));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut meta = String::new();
    for name in g.type_names() {
        writeln!(meta, "type\t{name}").unwrap();
    }
    writeln!(meta, "target\t{}", g.type_names()[g.target_type()]).unwrap();
    writeln!(meta, "classes\t{}", g.num_classes()).unwrap();
    write(&dir.join(META), &meta)?;

    let mut nodes = String::from("# id\ttype\n");
    for (id, &t) in g.node_types().iter().enumerate() {
        writeln!(nodes, "{id}\t{}", g.type_names()[t]).unwrap();
    }
    write(&dir.join(NODES), &nodes)?;

    let mut edges = String::from("# src\tdst\n");
    for (a, b) in g.edges() {
        writeln!(edges, "{a}\t{b}").unwrap();
    }
    write(&dir.join(EDGES), &edges)?;

    let label_path = dir.join(LABELS);
    if g.labels().is_empty() {
        if label_path.exists() {
            fs::remove_file(&label_path).map_err(|e| Error::io(&label_path, e))?;
        }
    } else {
        let mut labels = String::from("# id\tclass\n");
        for (id, class) in g.labels() {
            writeln!(labels, "{id}\t{class}").unwrap();
        }
        write(&label_path, &labels)?;
    }

    for (t, name) in g.type_names().iter().enumerate() {
        let Some(x) = g.features(t) else { continue };
        let mut csv = String::new();
        for r in 0..x.rows() {
            let row: Vec<String> = x.row(r).iter().map(|v| format!("{v:?}")).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write(&dir.join(features_file(name)), &csv)?;
    }
    Ok(())
}

/// Read `id <TAB> class` lines.
pub fn read_labels(path: &Path) -> Result<BTreeMap<usize, usize>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (line, l) in data_lines(&text) {
        let f = fields(path, line, l, 2)?;
        let id = parse(path, line, f[0], "node id")?;
        if out.insert(id, parse(path, line, f[1], "class")?).is_some() {
            return Err(Error::ingest(path, Some(line), format!("node {id} listed twice")));
        }
    }
    Ok(out)
}

/// Read `id,v1[,v2..]` prediction rows. A first line starting with `id` is a
/// header.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<usize, Vec<f64>>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    let mut width = None;
    for (i, (line, l)) in data_lines(&text).enumerate() {
        if i == 0 && l.starts_with("id") {
            continue;
        }
        let mut parts = l.split(',').map(str::trim);
        let id: usize = parse(path, line, parts.next().unwrap_or(""), "node id")?;
        let values: Vec<f64> = parts.map(|v| parse(path, line, v, "prediction")).collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::ingest(path, Some(line), "row has no prediction"));
        }
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(Error::ingest(path, Some(line), "rows have different widths"));
        }
        if out.insert(id, values).is_some() {
            return Err(Error::ingest(path, Some(line), format!("node {id} listed twice")));
        }
    }
    Ok(out)
}
