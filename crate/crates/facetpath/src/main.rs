use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use facetpath::bench::{run_ablation, time_scaling, AblationSpec, TimingConfig};
use facetpath::config::RunConfig;
use facetpath::error::{Error, Result};
use facetpath::formats::{
    attention_csv, load_checkpoint, paths_tsv, read_paths, report_csv, save_checkpoint, summary_csv, trace_jsonl,
};
use facetpath::io::{load_graph, read_labels, read_predictions, write_graph};
use facetpath::parallel::{build_subgraph_parallel, default_workers, run_seeds, WallClock};
use facetpath_core::eval;
use facetpath_core::hetgraph::{generate_synthetic, SyntheticSpec};
use facetpath_core::model::{export_attention, SubgraphPlan};
use facetpath_core::numerics::Tensor;
use facetpath_core::{FacetSubgraph, MetricsReport, Task, WalkConfig};

#[derive(Parser)]
#[command(name = "facetpath", version, about = "Multi-facet path embeddings for heterogeneous graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample paths and write the kept ones, one per line.
    Walk {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        len: usize,
        #[arg(long, default_value_t = 1000)]
        attempts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Walk exactly `len` steps and test only the last node.
        #[arg(long)]
        strict_f1: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the multi-seed protocol and write results, traces and checkpoints.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score predictions against a labels file.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "true")]
        truth: PathBuf,
        #[arg(long, value_enum)]
        metric: Metric,
    },
    /// Sweep one axis over the seed list.
    Ablate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Per-epoch forward+backward time against K, with a linear fit.
    Timing {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        k: Vec<usize>,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
    },
    /// Write a planted-facet synthetic graph directory.
    GenSynthetic {
        #[arg(long, default_value_t = 150)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Facet attention per target node from a checkpoint and its path corpus.
    Attention {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        paths: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    F1,
    Auc,
    Nmi,
    Ari,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: facetpath_core::Error| e.to_string())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| facetpath::Error::Io { path: path.to_path_buf(), source: e })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    Ok(cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Walk { graph, out, len, attempts, seed, strict_f1, workers } => {
            let g = load_graph(&graph)?;
            let cfg = WalkConfig { path_length: len, attempts, seed, strict_f1 };
            let sub = build_subgraph_parallel(&g, &cfg, workers.unwrap_or_else(default_workers))?;
            write(&out, &paths_tsv(&sub))?;
            println!("{} paths over {} target nodes", sub.num_edges(), sub.target_ids().len());
        }
        Command::Train { graph, task, config, seed_list, out, workers } => {
            let g = load_graph(&graph)?;
            let mut cfg = load_config(config.as_deref())?;
            if let Some(t) = task {
                cfg.train.task = t;
            }
            if let Some(s) = seed_list {
                cfg.train.seeds = s;
            }
            cfg.validate()?;
            fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            write(&out.join("cfg.json"), &serde_json::to_string_pretty(&cfg).expect("config serializes"))?;
            let clock = WallClock::new();
            let outcomes = run_seeds(&g, &cfg.train, &cfg.hyper, workers.unwrap_or_else(default_workers), &clock)?;
            let mut traces = String::new();
            for o in &outcomes {
                let seed = o.row.seed;
                traces.push_str(&trace_jsonl(seed, &o.trace));
                save_checkpoint(&o.params, &out.join(format!("ckpt-seed{seed}.mf2v")))?;
                write(&out.join(format!("paths-seed{seed}.tsv")), &paths_tsv(&o.subgraph))?;
                let plan = SubgraphPlan::new(&o.subgraph)?;
                let rows = export_attention(g.node_types(), &plan, &o.params, &cfg.hyper)?;
                write(&out.join(format!("attention-seed{seed}.csv")), &attention_csv(&rows, g.type_names()))?;
            }
            let report = MetricsReport::from_rows(outcomes.into_iter().map(|o| o.row).collect());
            write(&out.join("trace.jsonl"), &traces)?;
            write(&out.join("results.csv"), &report_csv(&report, true))?;
            write(&out.join("summary.csv"), &summary_csv(&report))?;
            print!("{}", summary_csv(&report));
        }
        Command::Eval { pred, truth, metric } => {
            let preds = read_predictions(&pred)?;
            let labels = read_labels(&truth)?;
            let mut y = Vec::with_capacity(preds.len());
            for id in preds.keys() {
                match labels.get(id) {
                    Some(&c) => y.push(c),
                    None => return Err(Error::Config(format!("node {id} has a prediction but no label"))),
                }
            }
            let width = preds.values().next().map_or(0, Vec::len);
            let as_labels = || -> Result<Vec<usize>> {
                if width != 1 {
                    return Err(Error::Config("this metric needs one predicted label per row".into()));
                }
                preds
                    .values()
                    .map(|v| match v[0] {
                        x if x >= 0.0 && x.fract() == 0.0 => Ok(x as usize),
                        x => Err(Error::Config(format!("predicted label {x} is not a class index"))),
                    })
                    .collect()
            };
            match metric {
                Metric::F1 => {
                    let p = as_labels()?;
                    println!("micro_f1\t{}", eval::micro_f1(&p, &y)?);
                    println!("macro_f1\t{}", eval::macro_f1(&p, &y, None)?);
                }
                Metric::Auc if width == 1 => {
                    let scores: Vec<f64> = preds.values().map(|v| v[0]).collect();
                    if let Some(c) = y.iter().find(|&&c| c > 1) {
                        return Err(Error::Config(format!("single-score AUC needs 0/1 labels, found {c}")));
                    }
                    let positive: Vec<bool> = y.iter().map(|&c| c == 1).collect();
                    println!("auc\t{}", eval::auc(&scores, &positive)?);
                }
                Metric::Auc => {
                    let data: Vec<f64> = preds.values().flatten().copied().collect();
                    let probs = Tensor::from_vec(preds.len(), width, data)?;
                    let r = eval::auc_ovr(&probs, &y)?;
                    println!("auc\t{}", r.value);
                    if !r.skipped.is_empty() {
                        eprintln!("skipped classes without both positives and negatives: {:?}", r.skipped);
                    }
                }
                Metric::Nmi => println!("nmi\t{}", eval::nmi(&as_labels()?, &y)?),
                Metric::Ari => println!("ari\t{}", eval::ari(&as_labels()?, &y)?),
            }
        }
        Command::Ablate { spec, out, workers } => {
            let text = facetpath::io::read_text(&spec)?;
            let spec: AblationSpec =
                serde_json::from_str(&text).map_err(|source| Error::Json { path: spec.clone(), source })?;
            let report = run_ablation(&spec, workers.unwrap_or_else(default_workers), &WallClock::new())?;
            write(&out, &report_csv(&report, true))?;
            write(&out.with_extension("json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
            write(&out.with_extension("summary.csv"), &summary_csv(&report))?;
            print!("{}", summary_csv(&report));
        }
        Command::Timing { k, graph, config, epochs } => {
            let g = load_graph(&graph)?;
            let cfg = load_config(config.as_deref())?;
            let tc = TimingConfig { ks: k, epochs, hyper: cfg.hyper, walk: cfg.train.walk, ..Default::default() };
            let r = time_scaling(&g, &tc)?;
            println!("k,epochs,ms_per_epoch");
            for p in &r.points {
                println!("{},{},{:.4}", p.k, p.epochs, p.ms_per_epoch);
            }
            println!("# slope_ms_per_facet {:.6} intercept_ms {:.6} r_squared {:.6}", r.fit.slope, r.fit.intercept, r.fit.r_squared);
        }
        Command::GenSynthetic { n, k, classes, noise, seed, out } => {
            let spec = SyntheticSpec { n_per_type: n, k_facets: k, n_classes: classes, noise, seed, ..Default::default() };
            let s = generate_synthetic(&spec)?;
            write_graph(&s.graph, &out)?;
            println!("{} nodes, {} edges", s.graph.num_nodes(), s.graph.num_edges());
        }
        Command::Attention { graph, checkpoint, paths, config, out } => {
            let g = load_graph(&graph)?;
            let cfg = load_config(config.as_deref())?;
            let params = load_checkpoint(&checkpoint)?;
            if params.k_facets() != cfg.hyper.k_facets || params.layers() != cfg.hyper.layers {
                return Err(Error::Config(format!(
                    "checkpoint has K={} L={}, config has K={} L={}",
                    params.k_facets(),
                    params.layers(),
                    cfg.hyper.k_facets,
                    cfg.hyper.layers
                )));
            }
            let sub = FacetSubgraph::from_walks(g.target_nodes(), [read_paths(&paths)?]);
            sub.validate(&g, usize::MAX)?;
            let plan = SubgraphPlan::new(&sub)?;
            let rows = export_attention(g.node_types(), &plan, &params, &cfg.hyper)?;
            write(&out, &attention_csv(&rows, g.type_names()))?;
        }
    }
    Ok(())
}
