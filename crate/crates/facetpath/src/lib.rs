//! Filesystem formats, threading, wall-clock timing and the experiment
//! harness around [`facetpath_core`].
//!
//! - [`io`]: graph directories (`nodes.tsv`, `edges.tsv`, `labels.tsv`,
//!   `features-<type>.csv`, `meta.tsv`).
//! - [`formats`]: path corpus, `MF2V` checkpoints, attention CSV, result
//!   tables and JSON-lines traces.
//! - [`parallel`]: threaded walker and seed runner with results identical to
//!   the sequential ones.
//! - [`config`] reads and validates `cfg.json`.
//! - [`bench`]: ablation sweeps and runtime-vs-K scaling.

pub mod bench;
pub mod config;
pub mod error;
pub mod formats;
pub mod io;
pub mod parallel;

pub use error::{Error, Result};

// The tape allocates and frees many mid-sized buffers per epoch; the system
// allocator returns them to the OS each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;
