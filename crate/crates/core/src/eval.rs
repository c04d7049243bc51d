//! Classification and clustering metrics, plus seeded k-means.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::numerics::Tensor;

/// Counts indexed `[true][pred]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTable {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionTable {
    /// `classes` of `None` takes the union of the observed labels.
    pub fn new(pred: &[usize], truth: &[usize], classes: Option<usize>) -> Result<Self> {
        check_pair(pred, truth)?;
        let seen = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
        let classes = match classes {
            Some(c) if c < seen => bail!(Metric, "label {} outside a universe of {c} classes", seen - 1),
            Some(c) => c,
            None => seen,
        };
        let mut counts = alloc::vec![0; classes * classes];
        for (&p, &t) in pred.iter().zip(truth) {
            counts[t * classes + p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(tp, fp, fn)` of one class.
    pub fn class_counts(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let col: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
        let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        (tp, col - tp, row - tp)
    }
}

fn check_pair(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        bail!(Metric, "length mismatch: {} vs {}", a.len(), b.len());
    }
    if a.is_empty() {
        bail!(Metric, "metric of an empty labelling");
    }
    Ok(())
}

fn f1_ratio(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Pooled F1; equals accuracy for single-label predictions.
pub fn micro_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = ConfusionTable::new(pred, truth, None)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in 0..table.classes() {
        let (a, b, d) = table.class_counts(c);
        tp += a;
        fp += b;
        fn_ += d;
    }
    Ok(f1_ratio(tp, fp, fn_))
}

/// Unweighted mean of per-class F1 over `classes` (or the observed labels).
/// A class of the universe that never occurs scores 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], classes: Option<usize>) -> Result<f64> {
    let table = ConfusionTable::new(pred, truth, classes)?;
    let present: Vec<usize> = match classes {
        Some(c) => (0..c).collect(),
        None => {
            let mut l: Vec<usize> = pred.iter().chain(truth).copied().collect();
            l.sort_unstable();
            l.dedup();
            l
        }
    };
    let total: f64 = present
        .iter()
        .map(|&c| {
            let (tp, fp, fn_) = table.class_counts(c);
            f1_ratio(tp, fp, fn_)
        })
        .sum();
    Ok(total / present.len() as f64)
}

/// Binary ROC AUC as the Mann-Whitney statistic, ties counted one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        bail!(Metric, "length mismatch: {} scores, {} labels", scores.len(), labels.len());
    }
    if scores.iter().any(|s| s.is_nan()) {
        bail!(Metric, "NaN score");
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        bail!(Metric, "AUC needs both classes, got {pos} positive and {neg} negative");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the U statistic, kept integral.
    let mut twice_u = 0u64;
    let mut neg_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let gp = group.iter().filter(|&&x| labels[x]).count() as u64;
        let gn = group.len() as u64 - gp;
        twice_u += gp * (2 * neg_below + gn);
        neg_below += gn;
        i = j;
    }
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// One-vs-rest multiclass AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct OvrAuc {
    /// Unweighted mean over the scored classes.
    pub value: f64,
    /// Classes skipped because they are absent from (or fill) the labels.
    pub skipped: Vec<usize>,
}

pub fn auc_ovr(probs: &Tensor, labels: &[usize]) -> Result<OvrAuc> {
    if probs.rows() != labels.len() {
        bail!(Metric, "{} probability rows for {} labels", probs.rows(), labels.len());
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.cols()) {
        bail!(Metric, "label {bad} outside {} classes", probs.cols());
    }
    let mut sum = 0.0;
    let mut scored = 0;
    let mut skipped = Vec::new();
    for c in 0..probs.cols() {
        let bin: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let n_pos = bin.iter().filter(|&&b| b).count();
        if n_pos == 0 || n_pos == bin.len() {
            skipped.push(c);
            continue;
        }
        let col: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, c)).collect();
        sum += auc(&col, &bin)?;
        scored += 1;
    }
    if scored == 0 {
        bail!(Metric, "no class has both positive and negative examples");
    }
    Ok(OvrAuc { value: sum / scored as f64, skipped })
}

/// Contingency counts of two labellings over dense relabelled ids.
struct Contingency {
    n: u64,
    cells: BTreeMap<(usize, usize), u64>,
    a: Vec<u64>,
    b: Vec<u64>,
}

fn dense(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

impl Contingency {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        check_pair(a, b)?;
        let (da, ka) = dense(a);
        let (db, kb) = dense(b);
        let mut cells = BTreeMap::new();
        let mut ca = alloc::vec![0; ka];
        let mut cb = alloc::vec![0; kb];
        for (&x, &y) in da.iter().zip(&db) {
            *cells.entry((x, y)).or_insert(0) += 1;
            ca[x] += 1;
            cb[y] += 1;
        }
        Ok(Self { n: a.len() as u64, cells, a: ca, b: cb })
    }

    /// Same partition up to relabelling.
    fn is_bijective(&self) -> bool {
        self.cells.len() == self.a.len() && self.cells.len() == self.b.len()
    }
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * libm::log(p)
        })
        .sum()
}

/// Normalized mutual information, geometric-mean normalization.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = Contingency::new(a, b)?;
    if t.is_bijective() {
        return Ok(1.0);
    }
    let n = t.n as f64;
    let ha = entropy(&t.a, n);
    let hb = entropy(&t.b, n);
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = t
        .cells
        .iter()
        .map(|(&(i, j), &c)| {
            let pij = c as f64 / n;
            pij * libm::log(c as f64 * n / (t.a[i] as f64 * t.b[j] as f64))
        })
        .sum();
    Ok((mi / libm::sqrt(ha * hb)).clamp(0.0, 1.0))
}

fn choose2(x: u64) -> i128 {
    (x as i128) * (x as i128 - 1) / 2
}

/// Adjusted Rand index, evaluated as one integer ratio.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = Contingency::new(a, b)?;
    let index: i128 = t.cells.values().map(|&c| choose2(c)).sum();
    let sa: i128 = t.a.iter().map(|&c| choose2(c)).sum();
    let sb: i128 = t.b.iter().map(|&c| choose2(c)).sum();
    let pairs = choose2(t.n);
    // (index - E) / (max - E) with E = sa sb / pairs and max = (sa + sb) / 2,
    // scaled by 2 pairs.
    let num = 2 * index * pairs - 2 * sa * sb;
    let den = (sa + sb) * pairs - 2 * sa * sb;
    if den == 0 {
        // Both one cluster or both all singletons.
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub centers: Tensor,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-6 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus<R: rand::Rng + ?Sized>(x: &Tensor, k: usize, rng: &mut R) -> Tensor {
    let n = x.rows();
    let mut chosen = alloc::vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen.push(pick);
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    Tensor::from_fn(k, x.cols(), |r, c| x.get(chosen[r], c))
}

fn assign(x: &Tensor, centers: &Tensor, labels: &mut [usize], dist: &mut [f64]) -> f64 {
    for i in 0..x.rows() {
        let mut best = labels[i].min(centers.rows() - 1);
        let mut best_d = sq_dist(x.row(i), centers.row(best));
        for c in 0..centers.rows() {
            let d = sq_dist(x.row(i), centers.row(c));
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        labels[i] = best;
        dist[i] = best_d;
    }
    dist.iter().sum()
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters are re-seeded at
/// the point farthest from its center.
pub fn kmeans(x: &Tensor, k: usize, seed: u64, cfg: KMeansConfig) -> Result<ClusterAssignment> {
    let n = x.rows();
    if k == 0 || n < k {
        bail!(Metric, "k-means needs 1 <= k <= n, got k = {k}, n = {n}");
    }
    if !x.all_finite() {
        bail!(Metric, "k-means input is not finite");
    }
    let mut rng = crate::rng::seeded(seed);
    let mut centers = plus_plus(x, k, &mut rng);
    let mut labels = alloc::vec![0usize; n];
    let mut dist = alloc::vec![0.0; n];
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iter {
        trace.push(assign(x, &centers, &mut labels, &mut dist));
        let mut sizes = alloc::vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[labels[i]] > 1)
                .max_by(|&i, &j| dist[i].total_cmp(&dist[j]).then(j.cmp(&i)))
                .expect("n >= k leaves a cluster with two points");
            sizes[labels[far]] -= 1;
            labels[far] = c;
            dist[far] = 0.0;
            sizes[c] = 1;
        }
        let mut next = Tensor::zeros(k, x.cols());
        for (i, &l) in labels.iter().enumerate() {
            for (o, v) in next.row_mut(l).iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        for c in 0..k {
            let inv = 1.0 / sizes[c] as f64;
            next.row_mut(c).iter_mut().for_each(|v| *v *= inv);
        }
        let shift = (0..k).map(|c| sq_dist(next.row(c), centers.row(c))).fold(0.0, f64::max);
        centers = next;
        if libm::sqrt(shift) < cfg.tol {
            break;
        }
    }
    let inertia = assign(x, &centers, &mut labels, &mut dist);
    trace.push(inertia);
    Ok(ClusterAssignment { labels, k, centers, inertia, trace })
}
