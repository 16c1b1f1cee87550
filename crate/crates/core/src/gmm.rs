//! Diagonal-covariance Gaussian mixtures: k-means++ initialization, EM,
//! log-likelihood scoring, sufficient statistics and MAP mean adaptation.

use std::f64::consts::PI;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{self, ConfigDigest};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Variance floor as a fraction of the global per-dimension data variance.
pub const VAR_FLOOR_RATIO: f64 = 1e-4;
/// Absolute lower bound so that constant dimensions still get a positive floor.
pub const MIN_VARIANCE: f64 = 1e-10;
pub const KMEANS_ITERS: usize = 10;

const MAGIC: &[u8; 4] = b"SKGM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub components: usize,
    pub max_iters: usize,
    /// Stop when the per-frame log-likelihood gain falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            components: 512,
            max_iters: 50,
            tol: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    weights: Vec<f64>,
    means: Matrix,
    variances: Matrix,
    // ln w_k − ½ Σ_d ln(2π σ²_kd)
    log_norm: Vec<f64>,
    inv_var: Matrix,
}

impl DiagGmm {
    pub fn new(weights: Vec<f64>, means: Matrix, variances: Matrix) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Domain(
                "a mixture needs at least one component".into(),
            ));
        }
        for m in [&means, &variances] {
            if m.rows() != k {
                return Err(Error::DimMismatch {
                    expected: k,
                    got: m.rows(),
                });
            }
        }
        if means.cols() != variances.cols() || means.cols() == 0 {
            return Err(Error::DimMismatch {
                expected: means.cols(),
                got: variances.cols(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain(
                "mixture weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if !means.is_finite()
            || variances
                .as_slice()
                .iter()
                .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::Domain(
                "means must be finite and variances positive".into(),
            ));
        }
        let dim = means.cols();
        let mut inv_var = variances.clone();
        inv_var
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = 1.0 / *v);
        let log_norm = (0..k)
            .map(|c| {
                let logdet: f64 = variances.row(c).iter().map(|v| v.ln()).sum();
                weights[c].ln() - 0.5 * (dim as f64 * (2.0 * PI).ln() + logdet)
            })
            .collect();
        Ok(Self {
            weights,
            means,
            variances,
            log_norm,
            inv_var,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Matrix {
        &self.means
    }

    pub fn variances(&self) -> &Matrix {
        &self.variances
    }

    fn check_dim(&self, data: &Matrix) -> Result<()> {
        if data.cols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: data.cols(),
            });
        }
        Ok(())
    }

    /// Per-component `ln w_k + ln N(x; μ_k, σ²_k)` into `out`; returns their log-sum-exp.
    fn joint_log(&self, x: &[f64], out: &mut [f64]) -> f64 {
        for (k, o) in out.iter_mut().enumerate() {
            let mu = self.means.row(k);
            let iv = self.inv_var.row(k);
            let mut q = 0.0;
            for d in 0..x.len() {
                let e = x[d] - mu[d];
                q += e * e * iv[d];
            }
            *o = self.log_norm[k] - 0.5 * q;
        }
        log_sum_exp(out)
    }

    /// Log density of one frame.
    pub fn frame_log_likelihood(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.num_components()];
        self.joint_log(x, &mut buf)
    }

    /// Per-frame log densities.
    pub fn frame_log_likelihoods(&self, data: &Matrix) -> Result<Vec<f64>> {
        self.check_dim(data)?;
        let mut buf = vec![0.0; self.num_components()];
        Ok(data
            .iter_rows()
            .map(|x| self.joint_log(x, &mut buf))
            .collect())
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Average per-frame log-likelihood `(1/T) Σ_t ln Σ_k w_k N(x_t; μ_k, σ²_k)`.
pub fn log_likelihood(model: &DiagGmm, data: &Matrix) -> Result<f64> {
    if data.rows() == 0 {
        return Err(Error::Data(
            "log-likelihood of an empty feature matrix".into(),
        ));
    }
    let ll = model.frame_log_likelihoods(data)?;
    Ok(ll.iter().sum::<f64>() / ll.len() as f64)
}

/// Zeroth- and first-order posterior statistics of a frame set under a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub zeroth: Vec<f64>,
    /// K × dim posterior-weighted sums.
    pub first: Matrix,
    pub frames_seen: usize,
}

impl SufficientStats {
    pub fn zeros(k: usize, dim: usize) -> Self {
        Self {
            zeroth: vec![0.0; k],
            first: Matrix::zeros(k, dim),
            frames_seen: 0,
        }
    }

    pub fn merge(&mut self, other: &SufficientStats) -> Result<()> {
        if other.zeroth.len() != self.zeroth.len() || other.first.cols() != self.first.cols() {
            return Err(Error::DimMismatch {
                expected: self.first.as_slice().len(),
                got: other.first.as_slice().len(),
            });
        }
        for (a, b) in self.zeroth.iter_mut().zip(&other.zeroth) {
            *a += b;
        }
        for (a, b) in self
            .first
            .as_mut_slice()
            .iter_mut()
            .zip(other.first.as_slice())
        {
            *a += b;
        }
        self.frames_seen += other.frames_seen;
        Ok(())
    }
}

pub fn accumulate_stats(model: &DiagGmm, data: &Matrix) -> Result<SufficientStats> {
    model.check_dim(data)?;
    let (k, dim) = (model.num_components(), model.dim());
    let mut s = SufficientStats::zeros(k, dim);
    let mut buf = vec![0.0; k];
    for x in data.iter_rows() {
        let total = model.joint_log(x, &mut buf);
        for c in 0..k {
            let g = (buf[c] - total).exp();
            if g == 0.0 {
                continue;
            }
            s.zeroth[c] += g;
            for (f, v) in s.first.row_mut(c).iter_mut().zip(x) {
                *f += g * v;
            }
        }
    }
    s.frames_seen = data.rows();
    Ok(s)
}

/// Moves each UBM mean toward the data mean of its component:
/// `μ'_k = α_k x̄_k + (1 − α_k) μ_k` with `α_k = n_k / (n_k + r)`.
/// Weights and variances are copied unchanged.
pub fn map_adapt_means(ubm: &DiagGmm, stats: &SufficientStats, relevance: f64) -> Result<DiagGmm> {
    if !(relevance > 0.0 && relevance.is_finite()) {
        return Err(Error::Domain(format!(
            "relevance factor must be positive, got {relevance}"
        )));
    }
    if stats.zeroth.len() != ubm.num_components() || stats.first.cols() != ubm.dim() {
        return Err(Error::DimMismatch {
            expected: ubm.num_components(),
            got: stats.zeroth.len(),
        });
    }
    if let Some(n) = stats.zeroth.iter().find(|n| !(**n >= 0.0)) {
        return Err(Error::Domain(format!("negative occupancy {n}")));
    }
    let mut means = ubm.means.clone();
    for (k, &n) in stats.zeroth.iter().enumerate() {
        if n == 0.0 {
            continue;
        }
        let alpha = n / (n + relevance);
        for (m, f) in means.row_mut(k).iter_mut().zip(stats.first.row(k)) {
            *m = alpha * (f / n) + (1.0 - alpha) * *m;
        }
    }
    DiagGmm::new(ubm.weights.clone(), means, ubm.variances.clone())
}

/// Per-dimension floor `max(1e-4 · var_d, 1e-10)` from the global data variance.
pub fn variance_floor(data: &Matrix) -> Vec<f64> {
    let n = data.rows().max(1) as f64;
    let dim = data.cols();
    let mut mean = vec![0.0; dim];
    for x in data.iter_rows() {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; dim];
    for x in data.iter_rows() {
        var.iter_mut()
            .zip(x.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m) / n);
    }
    var.iter()
        .map(|v| (VAR_FLOOR_RATIO * v).max(MIN_VARIANCE))
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &Matrix, x: &[f64]) -> (usize, f64) {
    centers
        .iter_rows()
        .enumerate()
        .map(|(c, m)| (c, sq_dist(m, x)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// k-means++ seeding followed by [`KMEANS_ITERS`] Lloyd iterations. Cluster
/// means, floored variances and proportions become the mixture parameters.
pub fn kmeans_init(data: &Matrix, k: usize, seed: u64) -> Result<DiagGmm> {
    let (n, dim) = (data.rows(), data.cols());
    if k == 0 {
        return Err(Error::Domain("k-means needs at least one cluster".into()));
    }
    if n < k {
        return Err(Error::Data(format!(
            "{n} frames cannot seed {k} components"
        )));
    }
    if dim == 0 {
        return Err(Error::Data("zero-dimensional features".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Matrix::zeros(k, dim);
    centers
        .row_mut(0)
        .copy_from_slice(data.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = data
        .iter_rows()
        .map(|x| sq_dist(x, centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(data.row(pick));
        for (i, x) in data.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, centers.row(c)));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        for (i, x) in data.iter_rows().enumerate() {
            assign[i] = nearest(&centers, x).0;
        }
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (i, x) in data.iter_rows().enumerate() {
            counts[assign[i]] += 1;
            sums.row_mut(assign[i])
                .iter_mut()
                .zip(x)
                .for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let cnt = counts[c] as f64;
                centers
                    .row_mut(c)
                    .iter_mut()
                    .zip(sums.row(c))
                    .for_each(|(m, s)| *m = s / cnt);
            }
        }
    }
    for (i, x) in data.iter_rows().enumerate() {
        assign[i] = nearest(&centers, x).0;
    }

    let floor = variance_floor(data);
    let global: Vec<f64> = floor.iter().map(|f| f / VAR_FLOOR_RATIO).collect();
    let mut counts = vec![0usize; k];
    let mut sums = Matrix::zeros(k, dim);
    let mut sq = Matrix::zeros(k, dim);
    for (i, x) in data.iter_rows().enumerate() {
        let c = assign[i];
        counts[c] += 1;
        for d in 0..dim {
            sums.row_mut(c)[d] += x[d];
            sq.row_mut(c)[d] += x[d] * x[d];
        }
    }
    let mut means = centers;
    let mut variances = Matrix::zeros(k, dim);
    for c in 0..k {
        let cnt = counts[c] as f64;
        for d in 0..dim {
            let v = if counts[c] >= 2 {
                let m = sums.get(c, d) / cnt;
                means.set(c, d, m);
                // centred second pass is unnecessary at this precision; clamp round-off
                (sq.get(c, d) / cnt - m * m).max(0.0)
            } else {
                global[d]
            };
            variances.set(c, d, v.max(floor[d]));
        }
    }
    // clusters left empty by duplicates still get a small share
    let denom: f64 = counts.iter().map(|&c| c.max(1) as f64).sum();
    let weights = counts.iter().map(|&c| c.max(1) as f64 / denom).collect();
    DiagGmm::new(weights, means, variances)
}

/// Diagonal EM. Returns the fitted model and the total data log-likelihood
/// before each M-step, followed by that of the returned model.
///
/// Stops after `max_iters` M-steps or once the per-frame gain drops below `tol`.
pub fn em_fit(
    model: &DiagGmm,
    data: &Matrix,
    max_iters: usize,
    tol: f64,
) -> Result<(DiagGmm, Vec<f64>)> {
    if data.rows() == 0 {
        return Err(Error::Data("EM on an empty feature matrix".into()));
    }
    model.check_dim(data)?;
    let floor = variance_floor(data);
    let (k, dim, n) = (model.num_components(), model.dim(), data.rows() as f64);
    let mut current = model.clone();
    let mut history = Vec::with_capacity(max_iters + 1);
    let mut buf = vec![0.0; k];
    for it in 0..=max_iters {
        let mut occ = vec![0.0; k];
        let mut first = Matrix::zeros(k, dim);
        let mut second = Matrix::zeros(k, dim);
        let mut total = 0.0;
        for x in data.iter_rows() {
            let lse = current.joint_log(x, &mut buf);
            total += lse;
            for c in 0..k {
                let g = (buf[c] - lse).exp();
                if g == 0.0 {
                    continue;
                }
                occ[c] += g;
                let f = first.row_mut(c);
                for d in 0..dim {
                    f[d] += g * x[d];
                }
                let s = second.row_mut(c);
                for d in 0..dim {
                    s[d] += g * x[d] * x[d];
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::Numeric(format!(
                "EM log-likelihood became {total} at iteration {it}"
            )));
        }
        let converged = history.last().is_some_and(|&prev| (total - prev) / n < tol);
        history.push(total);
        if it == max_iters || converged {
            break;
        }

        let occ_sum: f64 = occ.iter().sum();
        let weights: Vec<f64> = occ.iter().map(|o| o / occ_sum).collect();
        let mut means = current.means.clone();
        let mut variances = current.variances.clone();
        for c in 0..k {
            if occ[c] <= 0.0 {
                continue;
            }
            for d in 0..dim {
                let m = first.get(c, d) / occ[c];
                let v = second.get(c, d) / occ[c] - m * m;
                means.set(c, d, m);
                variances.set(c, d, v.max(floor[d]));
            }
        }
        current = DiagGmm::new(weights, means, variances)?;
    }
    Ok((current, history))
}

/// k-means++ initialization followed by EM, both driven by `cfg`.
pub fn train_gmm(data: &Matrix, cfg: &EmConfig) -> Result<(DiagGmm, Vec<f64>)> {
    let init = kmeans_init(data, cfg.components, cfg.seed)?;
    em_fit(&init, data, cfg.max_iters, cfg.tol)
}

/// Model file: magic, version, K, dim, 32-byte config digest, then weights,
/// means and variances as little-endian f64.
pub fn write_gmm(model: &DiagGmm, digest: &ConfigDigest, path: impl AsRef<Path>) -> Result<()> {
    codec::write_atomic(path.as_ref(), |w| encode_gmm(model, digest, w))
}

pub(crate) fn encode_gmm(
    model: &DiagGmm,
    digest: &ConfigDigest,
    w: &mut impl std::io::Write,
) -> std::io::Result<()> {
    codec::write_header(w, MAGIC, VERSION)?;
    w.write_u64::<LittleEndian>(model.num_components() as u64)?;
    w.write_u64::<LittleEndian>(model.dim() as u64)?;
    w.write_all(digest)?;
    codec::write_f64s(w, &model.weights)?;
    codec::write_f64s(w, model.means.as_slice())?;
    codec::write_f64s(w, model.variances.as_slice())
}

/// SHA-256 of the model parameters, used to tie derived models to their parent.
pub fn model_digest(model: &DiagGmm) -> ConfigDigest {
    use sha2::{Digest, Sha256};
    let mut bytes = Vec::new();
    encode_gmm(model, &[0; 32], &mut bytes).expect("writing to memory");
    Sha256::digest(&bytes).into()
}

pub fn read_gmm(path: impl AsRef<Path>) -> Result<(DiagGmm, ConfigDigest)> {
    decode_gmm(&mut codec::open_read(path.as_ref())?)
}

pub(crate) fn decode_gmm(r: &mut impl std::io::Read) -> Result<(DiagGmm, ConfigDigest)> {
    const WHAT: &str = "GMM model file";
    codec::read_header(r, MAGIC, VERSION, WHAT)?;
    let k = codec::read_len(r, WHAT)?;
    let dim = codec::read_len(r, WHAT)?;
    if k == 0 || dim == 0 || k.checked_mul(dim).is_none_or(|n| n > 1 << 32) {
        return Err(Error::Parse(format!(
            "{WHAT}: implausible shape {k} × {dim}"
        )));
    }
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest).map_err(codec::truncated(WHAT))?;
    let weights = codec::read_f64s(r, k, WHAT)?;
    let means = Matrix::from_vec(k, dim, codec::read_f64s(r, k * dim, WHAT)?)?;
    let variances = Matrix::from_vec(k, dim, codec::read_f64s(r, k * dim, WHAT)?)?;
    Ok((DiagGmm::new(weights, means, variances)?, digest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn gauss_model(w: Vec<f64>, mu: Vec<Vec<f64>>, var: Vec<Vec<f64>>) -> DiagGmm {
        let d = mu[0].len();
        DiagGmm::new(
            w,
            Matrix::from_rows(&mu, d).unwrap(),
            Matrix::from_rows(&var, d).unwrap(),
        )
        .unwrap()
    }

    /// Direct density summation in linear space.
    fn naive_ll(m: &DiagGmm, data: &Matrix) -> f64 {
        let mut total = 0.0;
        for x in data.iter_rows() {
            let mut p = 0.0;
            for k in 0..m.num_components() {
                let mut dens = m.weights()[k];
                for d in 0..m.dim() {
                    let v = m.variances().get(k, d);
                    let e = x[d] - m.means().get(k, d);
                    dens *= (-(e * e) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
                }
                p += dens;
            }
            total += p.ln();
        }
        total / data.rows() as f64
    }

    fn random_data(seed: u64, n: usize, dim: usize, clusters: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..clusters)
            .map(|_| (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect())
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c = &centers[rng.random_range(0..clusters)];
                let s = rng.random_range(0.3..2.0);
                c.iter()
                    .map(|m| m + s * Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
                    .collect()
            })
            .collect();
        Matrix::from_rows(&rows, dim).unwrap()
    }

    #[test]
    fn density_at_mode() {
        let m = gauss_model(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]);
        let ll = log_likelihood(&m, &Matrix::zeros(1, 1)).unwrap();
        assert!((ll + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        assert!((ll - -0.91894).abs() < 1e-5);
    }

    #[test]
    fn identical_components_collapse() {
        let one = gauss_model(vec![1.0], vec![vec![1.0, -2.0]], vec![vec![0.5, 3.0]]);
        let two = gauss_model(
            vec![0.5, 0.5],
            vec![vec![1.0, -2.0], vec![1.0, -2.0]],
            vec![vec![0.5, 3.0], vec![0.5, 3.0]],
        );
        let data = random_data(4, 30, 2, 2);
        let a = log_likelihood(&one, &data).unwrap();
        let b = log_likelihood(&two, &data).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.random_range(1..=8);
            let dim = rng.random_range(1..=4);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let w = raw.iter().map(|r| r / s).collect();
            let mu = (0..k)
                .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let var = (0..k)
                .map(|_| (0..dim).map(|_| rng.random_range(0.2..4.0)).collect())
                .collect();
            let m = gauss_model(w, mu, var);
            let data = random_data(rng.random(), 10, dim, 2);
            let fast = log_likelihood(&m, &data).unwrap();
            assert!((fast - naive_ll(&m, &data)).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_models_rejected() {
        let mu = Matrix::zeros(2, 1);
        assert!(DiagGmm::new(
            vec![0.5, 0.6],
            mu.clone(),
            Matrix::from_vec(2, 1, vec![1.0; 2]).unwrap()
        )
        .is_err());
        assert!(DiagGmm::new(
            vec![0.5, 0.5],
            mu.clone(),
            Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap()
        )
        .is_err());
        assert!(DiagGmm::new(vec![1.0], mu, Matrix::zeros(1, 1)).is_err());
        let m = gauss_model(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]);
        assert!(matches!(
            log_likelihood(&m, &Matrix::zeros(3, 2)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn kmeans_single_cluster_is_moments() {
        let data = random_data(2, 200, 3, 3);
        let m = kmeans_init(&data, 1, 5).unwrap();
        for d in 0..3 {
            let col = data.column(d);
            let mean = col.iter().sum::<f64>() / 200.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 200.0;
            assert!((m.means().get(0, d) - mean).abs() < 1e-10);
            assert!((m.variances().get(0, d) - var).abs() < 1e-9);
        }
        assert_eq!(m.weights(), &[1.0]);
    }

    #[test]
    fn kmeans_separates_clouds() {
        let sigma = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, sigma).unwrap();
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 100.0 * sigma };
                vec![c + noise.sample(&mut rng), -c + noise.sample(&mut rng)]
            })
            .collect();
        let data = Matrix::from_rows(&rows, 2).unwrap();
        let m = kmeans_init(&data, 2, 1).unwrap();
        let mut xs: Vec<(f64, f64)> = (0..2)
            .map(|k| (m.means().get(k, 0), m.means().get(k, 1)))
            .collect();
        xs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert!(xs[0].0.abs() < 0.01 && xs[0].1.abs() < 0.01);
        assert!((xs[1].0 - 1.0).abs() < 0.01 && (xs[1].1 + 1.0).abs() < 0.01);
        assert!(kmeans_init(&data, 401, 1).is_err());
    }

    #[test]
    fn kmeans_deterministic() {
        let data = random_data(3, 300, 2, 4);
        assert_eq!(
            kmeans_init(&data, 4, 77).unwrap(),
            kmeans_init(&data, 4, 77).unwrap()
        );
    }

    #[test]
    fn kmeans_survives_duplicates() {
        let data = Matrix::from_vec(4, 1, vec![1.0; 4]).unwrap();
        let m = kmeans_init(&data, 3, 0).unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.variances().as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn em_single_component_closed_form() {
        let data = random_data(6, 150, 2, 3);
        let start = gauss_model(vec![1.0], vec![vec![5.0, 5.0]], vec![vec![0.1, 9.0]]);
        let (m, hist) = em_fit(&start, &data, 1, 0.0).unwrap();
        assert_eq!(hist.len(), 2);
        for d in 0..2 {
            let col = data.column(d);
            let mean = col.iter().sum::<f64>() / 150.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 150.0;
            assert!((m.means().get(0, d) - mean).abs() < 1e-12);
            assert!((m.variances().get(0, d) - var).abs() < 1e-9);
        }
    }

    #[test]
    fn em_recovers_two_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..5000)
            .map(|_| {
                let c = if rng.random::<bool>() { 5.0 } else { -5.0 };
                vec![c + n.sample(&mut rng)]
            })
            .collect();
        let data = Matrix::from_rows(&rows, 1).unwrap();
        let cfg = EmConfig {
            components: 2,
            ..Default::default()
        };
        let (m, _) = train_gmm(&data, &cfg).unwrap();
        let mut mu = [m.means().get(0, 0), m.means().get(1, 0)];
        mu.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(
            (mu[0] + 5.0).abs() < 0.2 && (mu[1] - 5.0).abs() < 0.2,
            "{mu:?}"
        );
    }

    #[test]
    fn em_errors() {
        let m = gauss_model(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]);
        assert!(matches!(
            em_fit(&m, &Matrix::zeros(0, 1), 5, 1e-5),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            em_fit(&m, &Matrix::zeros(4, 2), 5, 1e-5),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn stats_single_component_and_additivity() {
        let data = random_data(9, 40, 3, 2);
        let one = kmeans_init(&data, 1, 0).unwrap();
        let s = accumulate_stats(&one, &data).unwrap();
        assert_eq!(s.zeroth, vec![40.0]);
        for d in 0..3 {
            let sum: f64 = data.column(d).iter().sum();
            assert!((s.first.get(0, d) - sum).abs() < 1e-12);
        }

        let three = kmeans_init(&data, 3, 0).unwrap();
        let a = data.select_rows(&(0..40).map(|i| i < 15).collect::<Vec<_>>());
        let b = data.select_rows(&(0..40).map(|i| i >= 15).collect::<Vec<_>>());
        let mut merged = accumulate_stats(&three, &a).unwrap();
        merged
            .merge(&accumulate_stats(&three, &b).unwrap())
            .unwrap();
        let whole = accumulate_stats(&three, &data).unwrap();
        assert_eq!(merged.frames_seen, 40);
        for (p, q) in merged.zeroth.iter().zip(&whole.zeroth) {
            assert!((p - q).abs() < 1e-9);
        }
        for (p, q) in merged.first.as_slice().iter().zip(whole.first.as_slice()) {
            assert!((p - q).abs() < 1e-9);
        }
        assert!((whole.zeroth.iter().sum::<f64>() - 40.0).abs() < 1e-6);
    }

    #[test]
    fn posterior_concentrates_far_apart() {
        let m = gauss_model(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![200.0]],
            vec![vec![1.0], vec![1.0]],
        );
        let s = accumulate_stats(&m, &Matrix::zeros(1, 1)).unwrap();
        assert!(s.zeroth[0] > 1.0 - 1e-12);
    }

    #[test]
    fn map_cases() {
        let ubm = gauss_model(
            vec![0.5, 0.5],
            vec![vec![0.0, 1.0], vec![4.0, 4.0]],
            vec![vec![1.0; 2], vec![1.0; 2]],
        );
        let stats = SufficientStats {
            zeroth: vec![0.0, 3.0],
            first: Matrix::from_rows(&[vec![0.0, 0.0], vec![6.0, 18.0]], 2).unwrap(),
            frames_seen: 3,
        };
        let a = map_adapt_means(&ubm, &stats, 3.0).unwrap();
        assert_eq!(a.means().row(0), ubm.means().row(0));
        assert_eq!(a.means().row(1), &[3.0, 5.0]);
        assert_eq!(a.variances(), ubm.variances());
        assert_eq!(a.weights(), ubm.weights());

        let big = SufficientStats {
            zeroth: vec![1e9, 1e9],
            first: Matrix::from_rows(&[vec![2e9, -1e9], vec![7e9, 1e9]], 2).unwrap(),
            frames_seen: 2_000_000_000,
        };
        let b = map_adapt_means(&ubm, &big, 3.0).unwrap();
        assert!((b.means().get(0, 0) - 2.0).abs() < 1e-6);
        assert!((b.means().get(1, 0) - 7.0).abs() < 1e-6);

        let mut neg = stats.clone();
        neg.zeroth[0] = -1.0;
        assert!(map_adapt_means(&ubm, &neg, 3.0).is_err());
        assert!(map_adapt_means(&ubm, &stats, 0.0).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let data = random_data(1, 100, 3, 3);
        let m = kmeans_init(&data, 3, 2).unwrap();
        let digest = codec::config_digest(&EmConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gmm");
        write_gmm(&m, &digest, &p).unwrap();
        let (back, dg) = read_gmm(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(dg, digest);

        let mut buf = Vec::new();
        encode_gmm(&m, &digest, &mut buf).unwrap();
        assert!(matches!(
            decode_gmm(&mut &buf[..buf.len() - 1]),
            Err(Error::Parse(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(50))]

            #[test]
            fn em_is_monotone(seed in any::<u64>(), dim in 1usize..=4, k in 1usize..=8) {
                let data = random_data(seed, 120, dim, 3);
                let init = kmeans_init(&data, k, seed).unwrap();
                let (m, hist) = em_fit(&init, &data, 15, 0.0).unwrap();
                for w in hist.windows(2) {
                    prop_assert!(w[1] >= w[0] - 1e-8, "{} -> {}", w[0], w[1]);
                }
                prop_assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-10);
                let floor = variance_floor(&data);
                for c in 0..k {
                    for d in 0..dim {
                        prop_assert!(m.variances().get(c, d) >= floor[d]);
                    }
                }
            }

            #[test]
            fn map_interpolates(n in 0.0f64..1e4, r in 0.1f64..20.0, mu in -10.0f64..10.0, xbar in -10.0f64..10.0) {
                let ubm = gauss_model(vec![1.0], vec![vec![mu]], vec![vec![1.0]]);
                let stats = SufficientStats { zeroth: vec![n], first: Matrix::from_vec(1, 1, vec![n * xbar]).unwrap(), frames_seen: 0 };
                let a = map_adapt_means(&ubm, &stats, r).unwrap().means().get(0, 0);
                let (lo, hi) = (mu.min(xbar), mu.max(xbar));
                prop_assert!(a >= lo - 1e-9 && a <= hi + 1e-9);
            }
        }
    }
}
