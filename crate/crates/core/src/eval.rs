//! Structure-preservation metrics: mean relative rank error, cross-validated
//! linear accuracy and Hungarian-matched clustering accuracy.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain;
use crate::rng::{stream, Domain};

pub const METRICS_VERSION: &str = "evnet-metrics/1";
pub const DEFAULT_RRE_K: usize = 10;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: String,
    pub metric: String,
    pub value: f64,
    pub k_or_folds: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(metric: &str, value: f64, k_or_folds: usize, seed: u64) -> Self {
        MetricReport {
            version: METRICS_VERSION.to_string(),
            metric: metric.to_string(),
            value,
            k_or_folds,
            seed,
        }
    }
}

fn sq_row(x: ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Other points ordered by distance from `i`, ties to the lower index.
fn ordering(x: ArrayView2<'_, f64>, i: usize) -> Vec<usize> {
    let d: Vec<f64> = (0..x.nrows()).map(|j| sq_row(x, i, j)).collect();
    let mut idx: Vec<usize> = (0..x.nrows()).filter(|&j| j != i).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    idx
}

/// 1-based rank of every point (the query itself gets 0).
fn ranks(order: &[usize], m: usize) -> Vec<usize> {
    let mut r = vec![0; m];
    for (pos, &j) in order.iter().enumerate() {
        r[j] = pos + 1;
    }
    r
}

/// `1 / (M Σ_{k'=1..k} |M - 2k'| / k')`.
pub fn rre_normalizer(m: usize, k: usize) -> f64 {
    let s: f64 = (1..=k).map(|kp| (m as f64 - 2.0 * kp as f64).abs() / kp as f64).sum();
    1.0 / (m as f64 * s)
}

/// Mean relative rank error with 1-based ranks, averaging both directions.
pub fn rre(high: ArrayView2<'_, f64>, low: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    let m = high.nrows();
    if low.nrows() != m {
        return Err(Error::DimensionMismatch(format!("{m} rows vs {} rows", low.nrows())));
    }
    if k == 0 || m <= 2 * k {
        return Err(Error::invalid(format!("RRE needs k >= 1 and M > 2k (M = {m}, k = {k})")));
    }
    let per_point: Vec<(f64, f64)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let oh = ordering(high, i);
            let ol = ordering(low, i);
            let rh = ranks(&oh, m);
            let rl = ranks(&ol, m);
            let mut a = 0.0;
            for &j in &oh[..k] {
                a += (rh[j] as f64 - rl[j] as f64).abs() / rh[j] as f64;
            }
            let mut b = 0.0;
            for &j in &ol[..k] {
                b += (rl[j] as f64 - rh[j] as f64).abs() / rl[j] as f64;
            }
            (a, b)
        })
        .collect();
    let mut mr_a = 0.0;
    let mut mr_b = 0.0;
    for (a, b) in per_point {
        mr_a += a;
        mr_b += b;
    }
    let t = rre_normalizer(m, k);
    Ok((t * mr_a + t * mr_b) / 2.0)
}

fn check_labels(m: usize, labels: &[usize], folds: usize) -> Result<usize> {
    if labels.len() != m {
        return Err(Error::DimensionMismatch(format!("{m} rows but {} labels", labels.len())));
    }
    let c = labels.iter().max().map_or(0, |&l| l + 1);
    let mut counts = vec![0usize; c];
    for &l in labels {
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&n| n > 0).count();
    if present < 2 {
        return Err(Error::invalid("linear accuracy needs at least 2 classes"));
    }
    if let Some((cls, n)) = counts.iter().enumerate().find(|(_, &n)| n > 0 && n < folds) {
        return Err(Error::invalid(format!(
            "class {cls} has {n} members, fewer than the {folds} folds"
        )));
    }
    Ok(c)
}

/// Stratified fold id per row.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let c = labels.iter().max().map_or(0, |&l| l + 1);
    let mut fold = vec![0; labels.len()];
    for cls in 0..c {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == cls).collect();
        members.shuffle(&mut stream(seed, Domain::Folds, cls as u64, 0));
        for (pos, &i) in members.iter().enumerate() {
            fold[i] = pos % folds;
        }
    }
    fold
}

/// Multinomial logistic regression settings. The objective is the mean
/// cross-entropy plus `l2/2 ‖W‖²` (biases unpenalized), minimized by damped
/// Newton steps with backtracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the largest gradient entry falls below this.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1e-4,
            max_iter: 200,
            tol: 1e-9,
        }
    }
}

/// Affine map `x ↦ L⁻¹(x - μ)` with `LLᵀ` the (ridged) covariance.
struct Whitener {
    mean: Array1<f64>,
    inv_chol: Array2<f64>,
}

impl Whitener {
    fn fit(x: &Array2<f64>) -> Whitener {
        let (m, d) = x.dim();
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = x - &mean;
        let mut cov = centered.t().dot(&centered) / m as f64;
        let ridge = 1e-12 * (cov.diag().sum() / d as f64).max(1e-300);
        for j in 0..d {
            cov[[j, j]] += ridge;
        }
        let mut l = Array2::<f64>::zeros((d, d));
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..j).map(|p| l[[i, p]] * l[[j, p]]).sum();
                if i == j {
                    l[[i, i]] = (cov[[i, i]] - s).max(ridge).sqrt();
                } else {
                    l[[i, j]] = (cov[[i, j]] - s) / l[[j, j]];
                }
            }
        }
        // forward substitution for L⁻¹
        let mut inv = Array2::<f64>::zeros((d, d));
        for col in 0..d {
            for i in 0..d {
                let rhs = if i == col { 1.0 } else { 0.0 };
                let s: f64 = (0..i).map(|p| l[[i, p]] * inv[[p, col]]).sum();
                inv[[i, col]] = (rhs - s) / l[[i, i]];
            }
        }
        Whitener { mean, inv_chol: inv }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean).dot(&self.inv_chol.t())
    }
}

/// Trained softmax classifier over whitened inputs.
pub struct LogisticModel {
    whitener: Whitener,
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl LogisticModel {
    pub fn fit(x: &Array2<f64>, labels: &[usize], classes: usize, cfg: &LogisticConfig) -> LogisticModel {
        let whitener = Whitener::fit(x);
        let xw = whitener.apply(x);
        let (m, d) = xw.dim();
        let (c, a) = (classes, d + 1);
        // rows carry a trailing 1 so the bias is the last coefficient
        let mut xa = Array2::<f64>::ones((m, a));
        xa.slice_mut(ndarray::s![.., ..d]).assign(&xw);
        let mut y = Array2::<f64>::zeros((m, c));
        for (i, &l) in labels.iter().enumerate() {
            y[[i, l]] = 1.0;
        }
        let penalty = |theta: &Array2<f64>| -> Array2<f64> {
            let mut p = theta * cfg.l2;
            p.row_mut(d).fill(0.0);
            p
        };
        let objective = |theta: &Array2<f64>| -> f64 {
            let s = xa.dot(theta);
            let mut ce = 0.0;
            for (r, &l) in s.axis_iter(Axis(0)).zip(labels) {
                let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                ce += lse - r[l];
            }
            let w = theta.slice(ndarray::s![..d, ..]);
            ce / m as f64 + 0.5 * cfg.l2 * w.iter().map(|v| v * v).sum::<f64>()
        };
        // theta is (d + 1) × C
        let mut theta = Array2::<f64>::zeros((a, c));
        let mut value = objective(&theta);
        for _ in 0..cfg.max_iter {
            let p = softmax_rows(&xa.dot(&theta));
            let grad = xa.t().dot(&(&p - &y)) / m as f64 + penalty(&theta);
            if grad.iter().all(|g| g.abs() < cfg.tol) {
                break;
            }
            let n = a * c;
            let mut h = Array2::<f64>::zeros((n, n));
            for i in 0..m {
                let xi = xa.row(i);
                for k in 0..c {
                    for l in 0..c {
                        let w = p[[i, k]] * (if k == l { 1.0 } else { 0.0 } - p[[i, l]]) / m as f64;
                        if w == 0.0 {
                            continue;
                        }
                        for u in 0..a {
                            for v in 0..a {
                                h[[k * a + u, l * a + v]] += w * xi[u] * xi[v];
                            }
                        }
                    }
                }
            }
            for k in 0..c {
                for u in 0..d {
                    h[[k * a + u, k * a + u]] += cfg.l2;
                }
            }
            // the common shift of all class scores is a null direction
            let scale = (0..n).map(|i| h[[i, i]]).fold(0.0, f64::max).max(1e-300);
            for i in 0..n {
                h[[i, i]] += 1e-10 * scale;
            }
            let g: Vec<f64> = (0..c).flat_map(|k| (0..a).map(move |u| (k, u))).map(|(k, u)| grad[[u, k]]).collect();
            let Some(step) = solve(h, g.clone()) else {
                break;
            };
            let descent: f64 = step.iter().zip(&g).map(|(s, g)| s * g).sum();
            if !(descent > 0.0) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let mut trial = theta.clone();
                for k in 0..c {
                    for u in 0..a {
                        trial[[u, k]] -= t * step[k * a + u];
                    }
                }
                let v = objective(&trial);
                if v <= value - 1e-4 * t * descent {
                    theta = trial;
                    value = v;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let weight = theta.slice(ndarray::s![..d, ..]).to_owned();
        let bias = theta.row(d).to_owned();
        LogisticModel { whitener, weight, bias }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let s = self.whitener.apply(x).dot(&self.weight) + &self.bias;
        s.axis_iter(Axis(0))
            .map(|r| (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b }))
            .collect()
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve(mut a: Array2<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[piv, col]] == 0.0 || !a[[piv, col]].is_finite() {
            return None;
        }
        if piv != col {
            for j in 0..n {
                a.swap([piv, j], [col, j]);
            }
            b.swap(piv, col);
        }
        for i in col + 1..n {
            let f = a[[i, col]] / a[[col, col]];
            if f != 0.0 {
                for j in col..n {
                    a[[i, j]] -= f * a[[col, j]];
                }
                b[i] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[[i, j]] * x[j]).sum();
        x[i] = (b[i] - s) / a[[i, i]];
    }
    Some(x)
}

fn softmax_rows(s: &Array2<f64>) -> Array2<f64> {
    let mut out = s.clone();
    for mut r in out.axis_iter_mut(Axis(0)) {
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        r.mapv_inplace(|v| (v - max).exp());
        let total = r.sum();
        r /= total;
    }
    out
}

/// Mean held-out accuracy of the logistic proxy over stratified folds.
pub fn linear_accuracy(embedding: ArrayView2<'_, f64>, labels: &[usize], folds: usize, seed: u64) -> Result<f64> {
    linear_accuracy_with(embedding, labels, folds, seed, &LogisticConfig::default())
}

pub fn linear_accuracy_with(
    embedding: ArrayView2<'_, f64>,
    labels: &[usize],
    folds: usize,
    seed: u64,
    cfg: &LogisticConfig,
) -> Result<f64> {
    if folds < 2 {
        return Err(Error::invalid("at least 2 folds required"));
    }
    let classes = check_labels(embedding.nrows(), labels, folds)?;
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding coordinate".into()));
    }
    let fold_of = stratified_folds(labels, folds, seed);
    let accs: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
            let xt = embedding.select(Axis(0), &train);
            let yt: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let model = LogisticModel::fit(&xt, &yt, classes, cfg);
            let pred = model.predict(&embedding.select(Axis(0), &test));
            let hits = test.iter().zip(&pred).filter(|(&i, &p)| labels[i] == p).count();
            hits as f64 / test.len() as f64
        })
        .collect();
    Ok(accs.iter().sum::<f64>() / folds as f64)
}

/// Rows = clusters, columns = classes.
pub fn contingency(assignments: &[usize], labels: &[usize]) -> Result<Array2<u64>> {
    if assignments.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} assignments vs {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    let k = assignments.iter().max().map_or(0, |&a| a + 1);
    let c = labels.iter().max().map_or(0, |&l| l + 1);
    let mut t = Array2::zeros((k, c));
    for (&a, &l) in assignments.iter().zip(labels) {
        t[[a, l]] += 1;
    }
    Ok(t)
}

/// Maximum-weight assignment on a rectangular table via the Hungarian
/// method on the padded square cost matrix. Returns the matched total.
pub fn max_matching(table: &Array2<u64>) -> u64 {
    let (r, c) = table.dim();
    let n = r.max(c);
    if n == 0 {
        return 0;
    }
    let top = table.iter().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| -> i64 {
        if i < r && j < c {
            top - table[[i, j]] as i64
        } else {
            top
        }
    };
    // potentials formulation, 1-based with a virtual column 0
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n)
        .filter(|&j| p[j] >= 1 && p[j] - 1 < r && j - 1 < c)
        .map(|j| table[[p[j] - 1, j - 1]])
        .sum()
}

/// Fraction of rows correctly labelled under the best one-to-one mapping of
/// clusters to classes.
pub fn clustering_accuracy(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    let t = contingency(assignments, labels)?;
    if labels.is_empty() {
        return Err(Error::invalid("no rows"));
    }
    Ok(max_matching(&t) as f64 / labels.len() as f64)
}

/// K-means with K = number of classes on the embedding, then matched
/// accuracy.
pub fn kmeans_accuracy(embedding: ArrayView2<'_, f64>, labels: &[usize], seed: u64) -> Result<f64> {
    let k = labels.iter().max().map_or(0, |&l| l + 1);
    if labels.len() != embedding.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows vs {} labels",
            embedding.nrows(),
            labels.len()
        )));
    }
    let model = explain::kmeans_fit(embedding, k, seed)?;
    clustering_accuracy(&model.assignments, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::Rng;

    #[test]
    fn rre_of_identical_spaces_is_zero() {
        let mut rng = stream(1, Domain::Synthetic, 0, 0);
        let x = Array2::from_shape_fn((30, 4), |_| rng.random::<f64>());
        assert_eq!(rre(x.view(), x.view(), 10).unwrap(), 0.0);
    }

    #[test]
    fn rre_guards() {
        let x = Array2::<f64>::zeros((20, 2));
        assert!(rre(x.view(), x.view(), 10).is_err());
        assert!(rre(x.view(), x.slice(ndarray::s![..19, ..]), 1).is_err());
    }

    #[test]
    fn rre_swap_of_nearest_pair() {
        // on a line the two nearest neighbours of the origin trade places
        let high = array![[0.0], [1.0], [2.0], [10.0], [20.0], [30.0]];
        let low = array![[0.0], [2.0], [1.0], [10.0], [20.0], [30.0]];
        let v = rre(high.view(), low.view(), 1).unwrap();
        // counted by hand: points 0..3 each contribute |1 - 2| / 1 in both
        // directions, points 4 and 5 contribute nothing; T = 1 / (6 * 4)
        assert_eq!(rre_normalizer(6, 1), 1.0 / 24.0);
        approx::assert_relative_eq!(v, 1.0 / 6.0, max_relative = 1e-15);
    }

    #[test]
    fn logistic_separable_blobs() {
        let mut rng = stream(3, Domain::Synthetic, 0, 0);
        let mut x = Array2::zeros((100, 2));
        let mut labels = vec![0; 100];
        for i in 0..100 {
            let c = i % 2;
            labels[i] = c;
            x[[i, 0]] = rng.random_range(-1.0..1.0) + if c == 0 { -5.0 } else { 5.0 };
            x[[i, 1]] = rng.random_range(-1.0..1.0);
        }
        assert_eq!(linear_accuracy(x.view(), &labels, 5, 0).unwrap(), 1.0);
    }

    #[test]
    fn shuffled_labels_are_near_chance() {
        let mut total = 0.0;
        for seed in 0..10 {
            let mut rng = stream(seed, Domain::Synthetic, 1, 0);
            let x = Array2::from_shape_fn((200, 2), |_| rng.random::<f64>());
            let mut labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
            labels.shuffle(&mut rng);
            total += linear_accuracy(x.view(), &labels, 5, seed).unwrap();
        }
        let mean = total / 10.0;
        assert!((mean - 0.5).abs() <= 0.05, "{mean}");
    }

    #[test]
    fn single_class_or_tiny_class_rejected() {
        let x = Array2::<f64>::zeros((10, 2));
        assert!(linear_accuracy(x.view(), &[0; 10], 5, 0).is_err());
        let mut l = vec![0; 10];
        l[0] = 1;
        assert!(linear_accuracy(x.view(), &l, 5, 0).is_err());
    }

    #[test]
    fn clustering_examples() {
        let labels = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(clustering_accuracy(&labels, &labels).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&[2, 2, 0, 0, 1, 1], &labels).unwrap(), 1.0);
        // contingency [[5,1],[2,4]]
        let mut a = vec![0; 6];
        a.extend(vec![1; 6]);
        let l = [0, 0, 0, 0, 0, 1, 0, 0, 1, 1, 1, 1];
        assert_eq!(contingency(&a, &l).unwrap(), array![[5, 1], [2, 4]]);
        assert_eq!(clustering_accuracy(&a, &l).unwrap(), 0.75);
        assert!(clustering_accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn rectangular_tables() {
        assert_eq!(max_matching(&array![[3, 1, 0]]), 3);
        assert_eq!(max_matching(&array![[3], [4], [1]]), 4);
    }

    proptest! {
        #[test]
        fn clustering_accuracy_is_relabel_invariant(seed in 0u64..1000) {
            let mut rng = stream(seed, Domain::Synthetic, 2, 0);
            let a: Vec<usize> = (0..40).map(|_| rng.random_range(0..4)).collect();
            let l: Vec<usize> = (0..40).map(|_| rng.random_range(0..3)).collect();
            let mut perm: Vec<usize> = (0..4).collect();
            perm.shuffle(&mut rng);
            let a2: Vec<usize> = a.iter().map(|&x| perm[x]).collect();
            prop_assert_eq!(clustering_accuracy(&a, &l).unwrap(), clustering_accuracy(&a2, &l).unwrap());
        }

        #[test]
        fn rre_symmetric_and_bounded(seed in 0u64..200) {
            let mut rng = stream(seed, Domain::Synthetic, 3, 0);
            let a = Array2::from_shape_fn((25, 3), |_| rng.random::<f64>());
            let b = Array2::from_shape_fn((25, 2), |_| rng.random::<f64>());
            let ab = rre(a.view(), b.view(), 5).unwrap();
            let ba = rre(b.view(), a.view(), 5).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn rre_ignores_rigid_motion(seed in 0u64..100, theta in 0.0f64..6.3, dx in -10.0f64..10.0, dy in -10.0f64..10.0) {
            let mut rng = stream(seed, Domain::Synthetic, 4, 0);
            let a = Array2::from_shape_fn((30, 4), |_| rng.random::<f64>());
            let b = Array2::from_shape_fn((30, 2), |_| rng.random::<f64>());
            let (c, s) = (theta.cos(), theta.sin());
            let moved = Array2::from_shape_fn((30, 2), |(i, j)| {
                if j == 0 { c * b[[i, 0]] - s * b[[i, 1]] + dx } else { s * b[[i, 0]] + c * b[[i, 1]] + dy }
            });
            let before = rre(a.view(), b.view(), 5).unwrap();
            let after = rre(a.view(), moved.view(), 5).unwrap();
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn clustering_accuracy_ignores_label_names(seed in 0u64..500) {
            let mut rng = stream(seed, Domain::Synthetic, 5, 0);
            let a: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
            let l: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
            let mut perm: Vec<usize> = (0..3).collect();
            perm.shuffle(&mut rng);
            let l2: Vec<usize> = l.iter().map(|&x| perm[x]).collect();
            prop_assert_eq!(clustering_accuracy(&a, &l).unwrap(), clustering_accuracy(&a, &l2).unwrap());
        }
    }

    proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn linear_accuracy_survives_affine_maps(
            seed in 0u64..1000,
            m in proptest::array::uniform4(-3.0f64..3.0),
            shift in proptest::array::uniform2(-50.0f64..50.0),
        ) {
            let det = m[0] * m[3] - m[1] * m[2];
            proptest::prop_assume!(det.abs() > 0.1);
            let mut rng = stream(seed, Domain::Synthetic, 6, 0);
            let labels: Vec<usize> = (0..90).map(|i| i % 3).collect();
            let x = Array2::from_shape_fn((90, 2), |(i, j)| {
                let centre = [[0.0, 0.0], [2.0, 0.5], [0.5, 2.0]][labels[i]][j];
                centre + rng.random_range(-1.0..1.0)
            });
            let y = Array2::from_shape_fn((90, 2), |(i, j)| {
                m[2 * j] * x[[i, 0]] + m[2 * j + 1] * x[[i, 1]] + shift[j]
            });
            let a = linear_accuracy(x.view(), &labels, 5, seed).unwrap();
            let b = linear_accuracy(y.view(), &labels, 5, seed).unwrap();
            prop_assert!((a - b).abs() <= 0.02, "{a} vs {b}");
        }
    }
}
