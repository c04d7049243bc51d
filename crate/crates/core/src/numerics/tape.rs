//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order. [`Tape::backward`] walks it once in reverse.

use alloc::format;
use alloc::vec::Vec;

use super::tensor::{dot, Tensor};
use super::{clamp_prob, sigmoid_scalar, softplus_scalar, PROB_FLOOR};
use crate::error::{bail, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    RowScale(Var, Var),
    RowMean(Var),
    RowSum(Var),
    Sum(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Column(Var, usize),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    Elu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax(Var),
    NllSum(Var, Vec<(usize, usize)>),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Tensor, inv_std: Vec<f64> },
    Affine { x: Var, gamma: Var, beta: Var, shift: Vec<f64>, scale: Vec<f64> },
    StraightThrough(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder. Build values with [`Tape::param`] / [`Tape::constant`],
/// combine them with the op methods, then call [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape that fails any op producing NaN or infinity.
    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self { nodes: Vec::new(), check_finite }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            bail!(Numerics, "non-finite value produced by {}", op_name(&op));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            bail!(Shape, "{what}: {}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1);
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "hadamard")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(v, Op::Hadamard(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`, the usual linear-layer product with weights stored row-wise.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        self.push(v, Op::MatMulT(a, b), &[a, b])
    }

    /// Add the `1 x c` row `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            bail!(Shape, "add_row: {}x{} onto {}x{}", rv.rows(), rv.cols(), xv.rows(), xv.cols());
        }
        let mut v = xv.clone();
        for r in 0..v.rows() {
            for (o, b) in v.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(x, row), &[x, row])
    }

    /// Multiply row `i` of `x` by `s[i]`, where `s` is `r x 1`.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.cols() != 1 || sv.rows() != xv.rows() {
            bail!(Shape, "row_scale: {}x{} against {}x{}", sv.rows(), sv.cols(), xv.rows(), xv.cols());
        }
        let mut v = xv.clone();
        for r in 0..v.rows() {
            let f = sv.get(r, 0);
            v.row_mut(r).iter_mut().for_each(|o| *o *= f);
        }
        self.push(v, Op::RowScale(x, s), &[x, s])
    }

    /// Mean over rows, `1 x c`.
    pub fn row_mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            bail!(Shape, "row_mean of an empty tensor");
        }
        let mut v = Tensor::zeros(1, xv.cols());
        for r in 0..xv.rows() {
            for (o, a) in v.data_mut().iter_mut().zip(xv.row(r)) {
                *o += a;
            }
        }
        let inv = 1.0 / xv.rows() as f64;
        v.data_mut().iter_mut().for_each(|o| *o *= inv);
        self.push(v, Op::RowMean(x), &[x])
    }

    /// Sum across columns, `r x 1`.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let v = Tensor::from_fn(xv.rows(), 1, |r, _| xv.row(r).iter().sum());
        self.push(v, Op::RowSum(x), &[x])
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::filled(1, 1, self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail!(Shape, "concat_rows of nothing");
        }
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                bail!(Shape, "concat_rows: {} columns vs {cols}", pv.cols());
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail!(Shape, "concat_cols of nothing");
        }
        let rows = self.value(parts[0]).rows();
        if let Some(p) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            bail!(Shape, "concat_cols: {} rows vs {rows}", self.value(*p).rows());
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::from_vec(rows, cols, data)?;
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Column `c` of `x` as an `r x 1` tensor.
    pub fn column(&mut self, x: Var, c: usize) -> Result<Var> {
        let xv = self.value(x);
        if c >= xv.cols() {
            bail!(Shape, "column {c} of a {}-column tensor", xv.cols());
        }
        let v = Tensor::from_fn(xv.rows(), 1, |r, _| xv.get(r, c));
        self.push(v, Op::Column(x, c), &[x])
    }

    /// Rows `index[0], index[1], ..` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.rows()) {
            bail!(Shape, "gather_rows: row {bad} of {}", xv.rows());
        }
        let mut data = Vec::with_capacity(index.len() * xv.cols());
        for &i in index {
            data.extend_from_slice(xv.row(i));
        }
        let v = Tensor::from_vec(index.len(), xv.cols(), data)?;
        self.push(v, Op::Gather(x, index.to_vec()), &[x])
    }

    /// `out[index[i]] += x[i]` into a zero `rows x c` tensor.
    pub fn scatter_add_rows(&mut self, x: Var, index: &[usize], rows: usize) -> Result<Var> {
        let xv = self.value(x);
        if index.len() != xv.rows() {
            bail!(Shape, "scatter_add_rows: {} indices for {} rows", index.len(), xv.rows());
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            bail!(Shape, "scatter_add_rows: target row {bad} of {rows}");
        }
        let mut v = Tensor::zeros(rows, xv.cols());
        for (r, &dst) in index.iter().enumerate() {
            for (o, a) in v.row_mut(dst).iter_mut().zip(xv.row(r)) {
                *o += a;
            }
        }
        self.push(v, Op::ScatterAdd(x, index.to_vec()), &[x])
    }

    /// `x` if `x > 0`, else `e^x - 1`.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { libm::expm1(a) });
        self.push(v, Op::Elu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(sigmoid_scalar);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    /// `ln(1 + e^x)`; `softplus(-x) = -ln σ(x)`.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(softplus_scalar);
        self.push(v, Op::Softplus(x), &[x])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut v = xv.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let out = super::softmax_vec(row);
            row.copy_from_slice(&out);
        }
        self.push(v, Op::Softmax(x), &[x])
    }

    /// `-Σ ln max(p[r][c], 1e-12)` over the given `(row, col)` picks.
    pub fn nll_sum(&mut self, probs: Var, picks: &[(usize, usize)]) -> Result<Var> {
        let pv = self.value(probs);
        let mut total = 0.0;
        for &(r, c) in picks {
            if r >= pv.rows() || c >= pv.cols() {
                bail!(Shape, "nll_sum pick ({r}, {c}) outside {}x{}", pv.rows(), pv.cols());
            }
            total -= libm::log(clamp_prob(pv.get(r, c)));
        }
        self.push(Tensor::filled(1, 1, total), Op::NllSum(probs, picks.to_vec()), &[probs])
    }

    /// Batch normalization with batch statistics. `gamma` and `beta` are
    /// `1 x c`. Returns the output and the biased batch mean and variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        if n < 2 {
            bail!(Numerics, "batch norm in train mode needs at least 2 rows, got {n}");
        }
        self.check_affine(gamma, beta, c)?;
        let mut mean = alloc::vec![0.0; c];
        for r in 0..n {
            for (m, a) in mean.iter_mut().zip(xv.row(r)) {
                *m += a;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = alloc::vec![0.0; c];
        for r in 0..n {
            for ((s, a), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (a - m) * (a - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / libm::sqrt(s + eps)).collect();
        let xhat = Tensor::from_fn(n, c, |r, j| (xv.get(r, j) - mean[j]) * inv_std[j]);
        let (g, b) = (self.value(gamma), self.value(beta));
        let out = Tensor::from_fn(n, c, |r, j| xhat.get(r, j) * g.get(0, j) + b.get(0, j));
        let var_out = self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta])?;
        Ok((var_out, mean, var))
    }

    /// `((x - shift) * scale) * gamma + beta` with constant per-column
    /// `shift` and `scale`. Batch norm in eval mode.
    pub fn affine_cols(&mut self, x: Var, gamma: Var, beta: Var, shift: &[f64], scale: &[f64]) -> Result<Var> {
        let c = self.value(x).cols();
        self.check_affine(gamma, beta, c)?;
        if shift.len() != c || scale.len() != c {
            bail!(Shape, "affine_cols: statistics for {} / {} columns, input has {c}", shift.len(), scale.len());
        }
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let out = Tensor::from_fn(xv.rows(), c, |r, j| {
            (xv.get(r, j) - shift[j]) * scale[j] * g.get(0, j) + b.get(0, j)
        });
        self.push(
            out,
            Op::Affine { x, gamma, beta, shift: shift.to_vec(), scale: scale.to_vec() },
            &[x, gamma, beta],
        )
    }

    fn check_affine(&self, gamma: Var, beta: Var, c: usize) -> Result<()> {
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            let s = self.value(v).shape();
            if s != (1, c) {
                bail!(Shape, "{name} is {}x{}, expected 1x{c}", s.0, s.1);
            }
        }
        Ok(())
    }

    /// Forward value `hard`, gradient routed unchanged to `soft`.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var> {
        self.value(soft).expect_shape(hard.shape(), "straight_through")?;
        self.push(hard, Op::StraightThrough(soft), &[soft])
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Contract(format!("backward needs a 1x1 loss, got {r}x{c}")));
        }
        let mut grads: Vec<Option<Tensor>> = alloc::vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(1, 1));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        // Only leaves and recorded ops that require grad keep gradients.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|x| x * f)),
            Op::MatMul(a, b) => {
                // out = A B: dA = G Bᵀ, dB = Aᵀ G
                if self.requires_grad(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMulT(a, b) => {
                // out = A Bᵀ: dA = G B, dB = Gᵀ A
                if self.requires_grad(*a) {
                    let ga = g.matmul(self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = g.t_matmul(self.value(*a))?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires_grad(*row) {
                    self.accumulate(grads, *row, column_sums(g));
                }
            }
            Op::RowScale(x, s) => {
                let sv = self.value(*s);
                if self.requires_grad(*x) {
                    let mut gx = g.clone();
                    for r in 0..gx.rows() {
                        let f = sv.get(r, 0);
                        gx.row_mut(r).iter_mut().for_each(|o| *o *= f);
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.requires_grad(*s) {
                    let xv = self.value(*x);
                    let gs = Tensor::from_fn(g.rows(), 1, |r, _| dot(g.row(r), xv.row(r)));
                    self.accumulate(grads, *s, gs);
                }
            }
            Op::RowMean(x) => {
                let rows = self.value(*x).rows();
                let inv = 1.0 / rows as f64;
                let gx = Tensor::from_fn(rows, g.cols(), |_, c| g.get(0, c) * inv);
                self.accumulate(grads, *x, gx);
            }
            Op::RowSum(x) => {
                let cols = self.value(*x).cols();
                let gx = Tensor::from_fn(g.rows(), cols, |r, _| g.get(r, 0));
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                self.accumulate(grads, *x, Tensor::filled(r, c, g.get(0, 0)));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                    self.accumulate(grads, p, Tensor::from_vec(r, c, slice)?);
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    let gp = Tensor::from_fn(r, c, |i, j| g.get(i, offset + j));
                    self.accumulate(grads, p, gp);
                    offset += c;
                }
            }
            Op::Column(x, col) => {
                let (r, c) = self.value(*x).shape();
                let gx = Tensor::from_fn(r, c, |i, j| if j == *col { g.get(i, 0) } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Gather(x, index) => {
                let (r, c) = self.value(*x).shape();
                let mut gx = Tensor::zeros(r, c);
                for (i, &src) in index.iter().enumerate() {
                    for (o, a) in gx.row_mut(src).iter_mut().zip(g.row(i)) {
                        *o += a;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ScatterAdd(x, index) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(index.len() * c);
                for &dst in index {
                    data.extend_from_slice(g.row(dst));
                }
                self.accumulate(grads, *x, Tensor::from_vec(index.len(), c, data)?);
            }
            Op::Elu(x) => {
                let gx = self.value(*x).zip_map(out, |a, y| if a > 0.0 { 1.0 } else { y + 1.0 })?;
                self.accumulate(grads, *x, gx.zip_map(g, |d, gg| d * gg)?);
            }
            Op::Sigmoid(x) => {
                let gx = out.zip_map(g, |y, gg| gg * y * (1.0 - y))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Softplus(x) => {
                let gx = self.value(*x).zip_map(g, |a, gg| gg * sigmoid_scalar(a))?;
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let mut gx = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    let inner = dot(y, gy);
                    for (o, (yy, gg)) in gx.row_mut(r).iter_mut().zip(y.iter().zip(gy)) {
                        *o = yy * (gg - inner);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::NllSum(p, picks) => {
                let pv = self.value(*p);
                let mut gp = Tensor::zeros(pv.rows(), pv.cols());
                let seed = g.get(0, 0);
                for &(r, c) in picks {
                    let prob = pv.get(r, c);
                    if prob > PROB_FLOOR {
                        gp.set(r, c, gp.get(r, c) - seed / prob);
                    }
                }
                self.accumulate(grads, *p, gp);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let (n, c) = xhat.shape();
                let gv = self.value(*gamma);
                if self.requires_grad(*gamma) {
                    let gg = Tensor::from_fn(1, c, |_, j| (0..n).map(|r| g.get(r, j) * xhat.get(r, j)).sum());
                    self.accumulate(grads, *gamma, gg);
                }
                if self.requires_grad(*beta) {
                    self.accumulate(grads, *beta, column_sums(g));
                }
                if self.requires_grad(*x) {
                    let nf = n as f64;
                    let mut gx = Tensor::zeros(n, c);
                    for j in 0..c {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for r in 0..n {
                            let d = g.get(r, j) * gv.get(0, j);
                            sum_d += d;
                            sum_dx += d * xhat.get(r, j);
                        }
                        for r in 0..n {
                            let d = g.get(r, j) * gv.get(0, j);
                            gx.set(r, j, inv_std[j] / nf * (nf * d - sum_d - xhat.get(r, j) * sum_dx));
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::Affine { x, gamma, beta, shift, scale } => {
                let (xv, gv) = (self.value(*x), self.value(*gamma));
                let (n, c) = xv.shape();
                if self.requires_grad(*x) {
                    let gx = Tensor::from_fn(n, c, |r, j| g.get(r, j) * scale[j] * gv.get(0, j));
                    self.accumulate(grads, *x, gx);
                }
                if self.requires_grad(*gamma) {
                    let gg = Tensor::from_fn(1, c, |_, j| {
                        (0..n).map(|r| g.get(r, j) * (xv.get(r, j) - shift[j]) * scale[j]).sum()
                    });
                    self.accumulate(grads, *gamma, gg);
                }
                if self.requires_grad(*beta) {
                    self.accumulate(grads, *beta, column_sums(g));
                }
            }
            Op::StraightThrough(soft) => self.accumulate(grads, *soft, g.clone()),
        }
        Ok(())
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, a) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += a;
        }
    }
    out
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Hadamard(..) => "hadamard",
        Op::Scale(..) => "scale",
        Op::MatMul(..) => "matmul",
        Op::MatMulT(..) => "matmul_t",
        Op::AddRow(..) => "add_row",
        Op::RowScale(..) => "row_scale",
        Op::RowMean(..) => "row_mean",
        Op::RowSum(..) => "row_sum",
        Op::Sum(..) => "sum",
        Op::ConcatRows(..) => "concat_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::Column(..) => "column",
        Op::Gather(..) => "gather_rows",
        Op::ScatterAdd(..) => "scatter_add_rows",
        Op::Elu(..) => "elu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Softplus(..) => "softplus",
        Op::Softmax(..) => "softmax",
        Op::NllSum(..) => "nll_sum",
        Op::BatchNorm { .. } => "batch_norm",
        Op::Affine { .. } => "affine_cols",
        Op::StraightThrough(..) => "straight_through",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    /// Central differences of `f` at `x`, one entry at a time.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Tensor {
        let h = 1e-5;
        let mut g = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    /// Builds `loss(tape, x)`, returns analytic and numeric gradients.
    fn check(x: Tensor, build: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let loss = build(&mut tape, v);
        let analytic = tape.backward(loss).unwrap().wrt(v);
        let f = |t: &Tensor| {
            let mut tape = Tape::new();
            let v = tape.param(t.clone());
            let l = build(&mut tape, v);
            tape.value(l).get(0, 0)
        };
        let numeric = numeric_grad(&x, &f);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-6, "rel err {err}: {analytic:?} vs {numeric:?}");
    }

    fn sample(rows: usize, cols: usize, salt: f64) -> Tensor {
        Tensor::from_fn(rows, cols, |r, c| libm::sin(1.3 * r as f64 + 0.7 * c as f64 + salt) * 1.5)
    }

    /// Weighted sum so every output entry matters.
    fn weighted(t: &mut Tape, y: Var) -> Var {
        let (r, c) = t.value(y).shape();
        let w = t.constant(Tensor::from_fn(r, c, |i, j| 0.3 + 0.1 * (i as f64) - 0.2 * (j as f64)));
        let p = t.hadamard(y, w).unwrap();
        t.sum(p).unwrap()
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.param(Tensor::filled(1, 1, 3.0));
        let y = t.param(Tensor::filled(1, 1, -2.5));
        let p = t.hadamard(x, y).unwrap();
        let g = t.backward(p).unwrap();
        assert_eq!(g.wrt(x).get(0, 0), -2.5);
        assert_eq!(g.wrt(y).get(0, 0), 3.0);
    }

    #[test]
    fn unused_param_gets_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::filled(2, 2, 1.0));
        let unused = t.param(Tensor::filled(3, 1, 1.0));
        let l = t.sum(x).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(3, 1));
        assert_eq!(g.wrt(l).get(0, 0), 1.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros(2, 1));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn finite_guard() {
        let mut t = Tape::with_finite_checks(true);
        let x = t.param(Tensor::filled(1, 1, 1e308));
        assert!(matches!(t.scale(x, 10.0), Err(Error::Numerics(_))));
        let mut t = Tape::new();
        let x = t.param(Tensor::filled(1, 1, 1e308));
        assert!(t.scale(x, 10.0).is_ok());
    }

    #[test]
    fn kernel_examples() {
        let mut t = Tape::new();
        let x = t.constant(sample(3, 4, 0.1));
        let i = t.constant(Tensor::identity(3));
        let ix = t.matmul(i, x).unwrap();
        assert_eq!(t.value(ix), t.value(x));

        let same = t.constant(Tensor::from_fn(4, 3, |_, c| c as f64 + 0.5));
        let m = t.row_mean(same).unwrap();
        assert_eq!(t.value(m).data(), &[0.5, 1.5, 2.5]);

        let idx = [2, 0, 1];
        let s = t.scatter_add_rows(x, &idx, 3).unwrap();
        let back = t.gather_rows(s, &idx).unwrap();
        assert_eq!(t.value(back), t.value(x));
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(2, 3));
        let b = t.param(Tensor::zeros(3, 2));
        assert!(matches!(t.add(a, b), Err(Error::Shape(_))));
        assert!(matches!(t.matmul_t(a, b), Err(Error::Shape(_))));
        assert!(t.matmul(a, b).is_ok());
        assert!(matches!(t.gather_rows(a, &[5]), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_of_each_op() {
        check(sample(3, 4, 0.05), |t, x| {
            let y = t.elu(x).unwrap();
            weighted(t, y)
        });
        check(sample(3, 4, 0.2), |t, x| {
            let y = t.sigmoid(x).unwrap();
            weighted(t, y)
        });
        check(sample(3, 4, 0.4), |t, x| {
            let y = t.softplus(x).unwrap();
            weighted(t, y)
        });
        check(sample(3, 4, 0.6), |t, x| {
            let y = t.softmax(x).unwrap();
            weighted(t, y)
        });
        check(sample(3, 4, 0.8).map(|v| v.abs() + 0.1), |t, x| {
            let p = t.softmax(x).unwrap();
            t.nll_sum(p, &[(0, 1), (1, 3), (2, 0), (0, 1)]).unwrap()
        });
        let w = sample(5, 4, 1.0);
        check(sample(3, 4, 1.2), |t, x| {
            let wv = t.constant(w.clone());
            let y = t.matmul_t(x, wv).unwrap();
            weighted(t, y)
        });
        check(w.clone(), |t, wv| {
            let x = t.constant(sample(3, 4, 1.2));
            let y = t.matmul_t(x, wv).unwrap();
            weighted(t, y)
        });
        check(sample(4, 2, 1.4), |t, b| {
            let a = t.constant(sample(3, 4, 1.6));
            let y = t.matmul(a, b).unwrap();
            weighted(t, y)
        });
        check(sample(3, 4, 1.4), |t, a| {
            let b = t.constant(sample(4, 2, 1.6));
            let y = t.matmul(a, b).unwrap();
            weighted(t, y)
        });
        check(sample(4, 3, 1.8), |t, x| {
            let g = t.gather_rows(x, &[3, 0, 3, 1]).unwrap();
            let s = t.scatter_add_rows(g, &[1, 1, 0, 2], 3).unwrap();
            let m = t.row_mean(s).unwrap();
            let r = t.row_sum(s).unwrap();
            let a = weighted(t, m);
            let b = weighted(t, r);
            t.add(a, b).unwrap()
        });
        check(sample(4, 1, 2.0), |t, s| {
            let x = t.constant(sample(4, 3, 2.2));
            let y = t.row_scale(x, s).unwrap();
            weighted(t, y)
        });
        check(sample(4, 3, 2.0), |t, x| {
            let s = t.constant(sample(4, 1, 2.2));
            let y = t.row_scale(x, s).unwrap();
            let row = t.row_mean(x).unwrap();
            let z = t.add_row(y, row).unwrap();
            weighted(t, z)
        });
        check(sample(3, 2, 2.4), |t, x| {
            let c0 = t.column(x, 1).unwrap();
            let c1 = t.column(x, 0).unwrap();
            let cat = t.concat_cols(&[c0, x, c1]).unwrap();
            let rows = t.concat_rows(&[cat, cat]).unwrap();
            let d = t.sub(rows, rows).unwrap();
            let s = t.scale(rows, -0.7).unwrap();
            let z = t.add(d, s).unwrap();
            weighted(t, z)
        });
    }

    #[test]
    fn batch_norm_gradients() {
        let gamma = Tensor::row_vector(&[1.3, -0.4, 0.8]);
        let beta = Tensor::row_vector(&[0.1, 0.2, -0.3]);
        let (g2, b2) = (gamma.clone(), beta.clone());
        check(sample(5, 3, 0.3), move |t, x| {
            let g = t.constant(g2.clone());
            let b = t.constant(b2.clone());
            let (y, _, _) = t.batch_norm_train(x, g, b, 1e-5).unwrap();
            let e = t.elu(y).unwrap();
            weighted(t, e)
        });
        let x = sample(5, 3, 0.3);
        let b3 = beta.clone();
        check(gamma.clone(), move |t, g| {
            let xv = t.constant(x.clone());
            let b = t.constant(b3.clone());
            let (y, _, _) = t.batch_norm_train(xv, g, b, 1e-5).unwrap();
            let e = t.elu(y).unwrap();
            weighted(t, e)
        });
        let shift = vec![0.2, -0.1, 0.05];
        let scale = vec![1.5, 0.7, 2.0];
        check(gamma, move |t, g| {
            let xv = t.constant(sample(4, 3, 0.9));
            let b = t.constant(Tensor::row_vector(&[0.0, 0.1, 0.2]));
            let y = t.affine_cols(xv, g, b, &shift, &scale).unwrap();
            weighted(t, y)
        });
    }

    #[test]
    fn straight_through_routes_to_soft() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row_vector(&[0.2, 0.5]));
        let soft = t.softmax(x).unwrap();
        let hard = t.straight_through(Tensor::row_vector(&[0.0, 1.0]), soft).unwrap();
        assert_eq!(t.value(hard).data(), &[0.0, 1.0]);
        let w = t.constant(Tensor::row_vector(&[1.0, 0.0]));
        let p = t.hadamard(hard, w).unwrap();
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap().wrt(x);
        let y: Vec<f64> = t.value(soft).data().to_vec();
        assert!((g.get(0, 0) - y[0] * (1.0 - y[0])).abs() < 1e-15);
    }
}
