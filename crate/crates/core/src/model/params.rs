use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::HyperParams;
use crate::error::{bail, Result};
use crate::hetgraph::HeteroGraph;
use crate::numerics::{BatchNormState, Tensor};

/// Every tensor the model owns: trainables plus batch-norm running
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Base embedding `E`, one row per node of every type.
    pub embeddings: Tensor,
    /// `K` facet projections, each `d x d`; facet `n` of a node is
    /// `facet_proj[n] · E(v)`.
    pub facet_proj: Vec<Tensor>,
    /// Facet scorer `W_B`, `1 x d`, shared by all facets and edges.
    pub scorer: Tensor,
    pub bn_gamma: Vec<Tensor>,
    pub bn_beta: Vec<Tensor>,
    pub bn_state: Vec<BatchNormState>,
    /// Optional per-layer `d x d` weights; empty unless enabled.
    pub layer_weights: Vec<Tensor>,
    /// Node-classification head, `C x d` plus `1 x C` bias.
    pub classifier: Tensor,
    pub classifier_bias: Tensor,
}

pub(crate) fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// Base embeddings before warm-up: node features projected per type when a
/// type has them, uniform `±sqrt(6 / 2d)` otherwise.
pub fn init_embeddings<R: Rng + ?Sized>(g: &HeteroGraph, dim: usize, rng: &mut R) -> Tensor {
    let mut e = xavier(g.num_nodes(), dim, dim, dim, rng);
    let rank = g.rank_within_type();
    for t in 0..g.type_names().len() {
        let Some(x) = g.features(t) else { continue };
        let proj = xavier(x.cols(), dim, x.cols(), dim, rng);
        let projected = x.matmul(&proj).expect("projection shape follows feature width");
        for v in 0..g.num_nodes() {
            if g.node_type(v) == t {
                e.row_mut(v).copy_from_slice(projected.row(rank[v]));
            }
        }
    }
    e
}

impl ModelParams {
    /// Fresh parameters with base embeddings from [`init_embeddings`].
    pub fn init<R: Rng + ?Sized>(g: &HeteroGraph, hyper: &HyperParams, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let d = hyper.dim;
        let embeddings = init_embeddings(g, d, rng);
        Ok(Self::with_embeddings(embeddings, hyper, g.num_classes().max(1), rng))
    }

    pub fn with_embeddings<R: Rng + ?Sized>(embeddings: Tensor, hyper: &HyperParams, num_classes: usize, rng: &mut R) -> Self {
        let d = hyper.dim;
        let facet_proj = (0..hyper.k_facets).map(|_| xavier(d, d, d, d, rng)).collect();
        let scorer = xavier(1, d, d, 1, rng);
        let layer_weights = if hyper.layer_weights {
            (0..hyper.layers).map(|_| xavier(d, d, d, d, rng)).collect()
        } else {
            Vec::new()
        };
        let classifier = xavier(num_classes, d, d, num_classes, rng);
        Self {
            embeddings,
            facet_proj,
            scorer,
            bn_gamma: (0..hyper.layers).map(|_| Tensor::ones(1, d)).collect(),
            bn_beta: (0..hyper.layers).map(|_| Tensor::zeros(1, d)).collect(),
            bn_state: (0..hyper.layers).map(|_| BatchNormState::new(d)).collect(),
            layer_weights,
            classifier,
            classifier_bias: Tensor::zeros(1, num_classes),
        }
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn k_facets(&self) -> usize {
        self.facet_proj.len()
    }

    pub fn layers(&self) -> usize {
        self.bn_gamma.len()
    }

    /// Trainable tensors in a fixed order.
    pub fn trainables(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        out.push(&self.embeddings);
        out.extend(self.facet_proj.iter());
        out.push(&self.scorer);
        for l in 0..self.layers() {
            out.push(&self.bn_gamma[l]);
            out.push(&self.bn_beta[l]);
        }
        out.extend(self.layer_weights.iter());
        out.push(&self.classifier);
        out.push(&self.classifier_bias);
        out
    }

    /// Same order as [`ModelParams::trainables`].
    pub fn trainables_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        out.push(&mut self.embeddings);
        out.extend(self.facet_proj.iter_mut());
        out.push(&mut self.scorer);
        for (g, b) in self.bn_gamma.iter_mut().zip(self.bn_beta.iter_mut()) {
            out.push(g);
            out.push(b);
        }
        out.extend(self.layer_weights.iter_mut());
        out.push(&mut self.classifier);
        out.push(&mut self.classifier_bias);
        out
    }

    /// Names matching [`ModelParams::trainables`].
    pub fn trainable_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.push(String::from("embeddings"));
        out.extend((0..self.k_facets()).map(|n| format!("facet_proj.{n}")));
        out.push(String::from("scorer"));
        for l in 0..self.layers() {
            out.push(format!("bn.{l}.gamma"));
            out.push(format!("bn.{l}.beta"));
        }
        out.extend((0..self.layer_weights.len()).map(|l| format!("layer.{l}.weight")));
        out.push(String::from("classifier.weight"));
        out.push(String::from("classifier.bias"));
        out
    }

    /// Every tensor including batch-norm buffers, for checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .trainable_names()
            .into_iter()
            .zip(self.trainables().into_iter().cloned())
            .collect();
        for (l, st) in self.bn_state.iter().enumerate() {
            out.push((format!("bn.{l}.running_mean"), Tensor::row_vector(&st.running_mean)));
            out.push((format!("bn.{l}.running_var"), Tensor::row_vector(&st.running_var)));
        }
        out
    }

    /// Inverse of [`ModelParams::named_tensors`].
    pub fn from_named(tensors: &[(String, Tensor)]) -> Result<Self> {
        let find = |name: &str| -> Result<Tensor> {
            match tensors.iter().find(|(n, _)| n == name) {
                Some((_, t)) => Ok(t.clone()),
                None => bail!(Contract, "checkpoint has no tensor named {name}"),
            }
        };
        let count = |prefix: &str, suffix: &str| {
            (0..).take_while(|i| tensors.iter().any(|(n, _)| *n == format!("{prefix}{i}{suffix}"))).count()
        };
        let k = count("facet_proj.", "");
        let layers = count("bn.", ".gamma");
        let lw = count("layer.", ".weight");
        let mut bn_state = Vec::new();
        for l in 0..layers {
            let mean = find(&format!("bn.{l}.running_mean"))?;
            let var = find(&format!("bn.{l}.running_var"))?;
            let mut st = BatchNormState::new(mean.cols());
            st.running_mean = mean.into_data();
            st.running_var = var.into_data();
            bn_state.push(st);
        }
        let params = Self {
            embeddings: find("embeddings")?,
            facet_proj: (0..k).map(|n| find(&format!("facet_proj.{n}"))).collect::<Result<_>>()?,
            scorer: find("scorer")?,
            bn_gamma: (0..layers).map(|l| find(&format!("bn.{l}.gamma"))).collect::<Result<_>>()?,
            bn_beta: (0..layers).map(|l| find(&format!("bn.{l}.beta"))).collect::<Result<_>>()?,
            bn_state,
            layer_weights: (0..lw).map(|l| find(&format!("layer.{l}.weight"))).collect::<Result<_>>()?,
            classifier: find("classifier.weight")?,
            classifier_bias: find("classifier.bias")?,
        };
        params.check_shapes()?;
        Ok(params)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dim();
        if self.facet_proj.is_empty() {
            bail!(Shape, "model needs at least one facet projection");
        }
        for (n, w) in self.facet_proj.iter().enumerate() {
            if w.shape() != (d, d) {
                bail!(Shape, "facet_proj.{n} is {:?}, expected {d}x{d}", w.shape());
            }
        }
        self.scorer.expect_shape((1, d), "scorer")?;
        for l in 0..self.layers() {
            self.bn_gamma[l].expect_shape((1, d), "bn gamma")?;
            self.bn_beta[l].expect_shape((1, d), "bn beta")?;
        }
        for w in &self.layer_weights {
            w.expect_shape((d, d), "layer weight")?;
        }
        if self.classifier.cols() != d || self.classifier_bias.shape() != (1, self.classifier.rows()) {
            bail!(Shape, "classifier head does not match dimension {d}");
        }
        Ok(())
    }
}
