//! Normal–Inverse-Wishart conjugate machinery, Gaussian densities and the
//! Chinese-restaurant-process partition prior. Everything is in natural-log
//! space.
//!
//! The NIW parameterization follows Murphy (2007): `Sigma ~ IW(nu0, Lambda0)`
//! with `Lambda0` a scale matrix, and `mu | Sigma ~ N(mu0, Sigma / kappa0)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{chol_log_det, chol_quad_form, cholesky_jittered, to_row_major, SpdFactor};

const LN_PI: f64 = 1.144_729_885_849_400_2;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Hyperparameters of a Normal–Inverse-Wishart distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NiwParams {
    pub mu0: DVector<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    pub lambda0: DMatrix<f64>,
}

impl NiwParams {
    pub fn new(mu0: DVector<f64>, kappa0: f64, nu0: f64, lambda0: DMatrix<f64>) -> Result<Self> {
        let d = mu0.len();
        if d == 0 {
            return Err(Error::InvalidParameter("prior dimension must be >= 1".into()));
        }
        if lambda0.nrows() != d || lambda0.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: lambda0.nrows(),
            });
        }
        if !(kappa0 > 0.0) {
            return Err(Error::InvalidParameter(format!("kappa0 must be > 0, got {kappa0}")));
        }
        if !(nu0 > d as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!(
                "nu0 must exceed d - 1 = {}, got {nu0}",
                d - 1
            )));
        }
        SpdFactor::strict(&lambda0, "prior scale")?;
        Ok(NiwParams {
            mu0,
            kappa0,
            nu0,
            lambda0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }
}

/// Assignment of `n` items to unlabeled blocks, stored in canonical
/// first-occurrence order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
}

impl Partition {
    /// Canonicalize arbitrary labels: the first distinct label becomes 0,
    /// the next 1, and so on.
    pub fn from_labels<L: PartialEq + Copy>(labels: &[L]) -> Self {
        let mut seen: Vec<L> = Vec::new();
        let mut assignment = Vec::with_capacity(labels.len());
        let mut sizes = Vec::new();
        for &l in labels {
            let block = match seen.iter().position(|&s| s == l) {
                Some(b) => b,
                None => {
                    seen.push(l);
                    sizes.push(0);
                    seen.len() - 1
                }
            };
            sizes[block] += 1;
            assignment.push(block);
        }
        Partition { assignment, sizes }
    }

    /// Fast path for integer labels.
    pub fn from_indices(labels: &[usize]) -> Self {
        let max = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut remap = vec![usize::MAX; max];
        let mut assignment = Vec::with_capacity(labels.len());
        let mut sizes: Vec<usize> = Vec::new();
        for &l in labels {
            if remap[l] == usize::MAX {
                remap[l] = sizes.len();
                sizes.push(0);
            }
            sizes[remap[l]] += 1;
            assignment.push(remap[l]);
        }
        Partition { assignment, sizes }
    }

    /// Every item in its own block.
    pub fn singletons(n: usize) -> Self {
        Partition {
            assignment: (0..n).collect(),
            sizes: vec![1; n],
        }
    }

    /// All items in one block.
    pub fn single_block(n: usize) -> Self {
        Partition {
            assignment: vec![0; n],
            sizes: if n == 0 { vec![] } else { vec![n] },
        }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Members of each block, in block order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (i, &b) in self.assignment.iter().enumerate() {
            out[b].push(i);
        }
        out
    }

    /// Block membership as bitmasks over item indices (n <= 64).
    pub fn block_masks(&self) -> Vec<u64> {
        assert!(self.len() <= 64, "block masks need n <= 64");
        let mut out = vec![0u64; self.sizes.len()];
        for (i, &b) in self.assignment.iter().enumerate() {
            out[b] |= 1 << i;
        }
        out
    }

    pub(crate) fn from_canonical_unchecked(assignment: Vec<usize>) -> Self {
        let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0; k];
        for &b in &assignment {
            sizes[b] += 1;
        }
        Partition { assignment, sizes }
    }
}

/// `ln Gamma_d(a)`, the multivariate log-gamma function.
pub fn ln_mvgamma(d: usize, a: f64) -> f64 {
    let df = d as f64;
    df * (df - 1.0) / 4.0 * LN_PI + (1..=d).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

/// Log density of a multivariate normal.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let d = mean.len();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    let factor = SpdFactor::new(cov, "covariance")?;
    if factor.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: factor.dim(),
        });
    }
    let diff: Vec<f64> = (0..d).map(|i| x[i] - mean[i]).collect();
    Ok(mvn_logpdf_factored(&diff, &factor))
}

/// Log density given `x - mean` and a factored covariance.
pub(crate) fn mvn_logpdf_factored(diff: &[f64], factor: &SpdFactor) -> f64 {
    let d = factor.dim() as f64;
    -0.5 * (d * LN_2PI + factor.log_det() + factor.quad_form(diff))
}

/// `sum_i ln N(x_i | component[z_i])`.
pub fn gmm_loglik(
    x: &DMatrix<f64>,
    partition: &Partition,
    components: &[(DVector<f64>, DMatrix<f64>)],
) -> Result<f64> {
    if partition.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: partition.len(),
        });
    }
    if components.len() < partition.n_blocks() {
        return Err(Error::DimensionMismatch {
            expected: partition.n_blocks(),
            found: components.len(),
        });
    }
    let d = x.ncols();
    let factors = components
        .iter()
        .map(|(mean, cov)| {
            if mean.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: mean.len(),
                });
            }
            SpdFactor::new(cov, "component")
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut diff = vec![0.0; d];
    for (i, &z) in partition.assignment().iter().enumerate() {
        let mean = &components[z].0;
        for c in 0..d {
            diff[c] = x[(i, c)] - mean[c];
        }
        total += mvn_logpdf_factored(&diff, &factors[z]);
    }
    Ok(total)
}

/// Conjugate posterior of the NIW prior after observing the rows of `x`.
///
/// Uses the centered scatter so the result does not depend on row order
/// beyond summation rounding.
pub fn niw_posterior(prior: &NiwParams, x: &DMatrix<f64>) -> NiwParams {
    let m = x.nrows();
    if m == 0 {
        return prior.clone();
    }
    let d = prior.dim();
    let mf = m as f64;
    let mean = DVector::from_fn(d, |c, _| x.column(c).sum() / mf);
    let mut scatter = DMatrix::zeros(d, d);
    for i in 0..m {
        let r = DVector::from_fn(d, |c, _| x[(i, c)] - mean[c]);
        scatter += &r * r.transpose();
    }
    let kappa_n = prior.kappa0 + mf;
    let dev = &mean - &prior.mu0;
    let mu_n = (&prior.mu0 * prior.kappa0 + &mean * mf) / kappa_n;
    let lambda_n = &prior.lambda0 + scatter + (&dev * dev.transpose()) * (prior.kappa0 * mf / kappa_n);
    NiwParams {
        mu0: mu_n,
        kappa0: kappa_n,
        nu0: prior.nu0 + mf,
        lambda0: symmetrize(lambda_n),
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Log marginal likelihood of the rows of `x` under a Gaussian likelihood
/// with NIW prior, via the ratio of normalizers. Zero rows give `0.0`.
pub fn log_marginal(x: &DMatrix<f64>, prior: &NiwParams) -> Result<f64> {
    let m = x.nrows();
    if m == 0 {
        return Ok(0.0);
    }
    if x.ncols() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            found: x.ncols(),
        });
    }
    let post = niw_posterior(prior, x);
    let d = prior.dim();
    let df = d as f64;
    let ld0 = SpdFactor::new(&prior.lambda0, "prior scale")?.log_det();
    let ldn = SpdFactor::new(&post.lambda0, "posterior scale")?.log_det();
    Ok(-(m as f64) * df / 2.0 * LN_PI + ln_mvgamma(d, post.nu0 / 2.0) - ln_mvgamma(d, prior.nu0 / 2.0)
        + prior.nu0 / 2.0 * ld0
        - post.nu0 / 2.0 * ldn
        + df / 2.0 * (prior.kappa0 / post.kappa0).ln())
}

/// Log posterior-predictive (multivariate Student-t) density of `x` given
/// NIW parameters, which may be a prior or a posterior.
pub fn log_predictive(x: &DVector<f64>, params: &NiwParams) -> Result<f64> {
    let d = params.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    let df = d as f64;
    let nu = params.nu0 - df + 1.0;
    let scale = &params.lambda0 * ((params.kappa0 + 1.0) / (params.kappa0 * nu));
    let factor = SpdFactor::new(&scale, "predictive scale")?;
    let diff: Vec<f64> = (0..d).map(|i| x[i] - params.mu0[i]).collect();
    let q = factor.quad_form(&diff);
    Ok(ln_gamma((nu + df) / 2.0) - ln_gamma(nu / 2.0) - df / 2.0 * (nu * PI).ln() - 0.5 * factor.log_det()
        - (nu + df) / 2.0 * (q / nu).ln_1p())
}

/// Log probability of a partition under `CRP(alpha)`:
/// `ln[alpha^k prod_j (n_j - 1)! / prod_{i<n} (alpha + i)]`.
pub fn crp_log_prob(partition: &Partition, alpha: f64) -> f64 {
    let n = partition.len();
    if n == 0 {
        return 0.0;
    }
    let k = partition.n_blocks() as f64;
    let blocks: f64 = partition.block_sizes().iter().map(|&s| ln_factorial(s - 1)).sum();
    k * alpha.ln() + blocks - crp_log_normalizer(n, alpha)
}

/// `ln n!`, summed directly for small `n` so that `ln 0! = ln 1! = 0` exactly.
pub fn ln_factorial(n: usize) -> f64 {
    if n <= 256 {
        (2..=n).map(|i| (i as f64).ln()).sum()
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// `ln prod_{i=0}^{n-1} (alpha + i)`.
pub fn crp_log_normalizer(n: usize, alpha: f64) -> f64 {
    if n <= 256 {
        (0..n).map(|i| (alpha + i as f64).ln()).sum()
    } else {
        ln_gamma(alpha + n as f64) - ln_gamma(alpha)
    }
}

/// Running sufficient statistics (count, sum, sum of outer products) of
/// points expressed relative to the prior mean.
#[derive(Debug, Clone)]
pub(crate) struct SuffStats {
    pub n: usize,
    pub sum: Vec<f64>,
    pub outer: Vec<f64>,
}

impl SuffStats {
    pub fn new(d: usize) -> Self {
        SuffStats {
            n: 0,
            sum: vec![0.0; d],
            outer: vec![0.0; d * d],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        let d = self.sum.len();
        self.n += 1;
        for i in 0..d {
            self.sum[i] += x[i];
            for j in 0..d {
                self.outer[i * d + j] += x[i] * x[j];
            }
        }
    }

    pub fn remove(&mut self, x: &[f64]) {
        let d = self.sum.len();
        self.n -= 1;
        if self.n == 0 {
            self.sum.iter_mut().for_each(|v| *v = 0.0);
            self.outer.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        for i in 0..d {
            self.sum[i] -= x[i];
            for j in 0..d {
                self.outer[i * d + j] -= x[i] * x[j];
            }
        }
    }

    pub fn merge(&mut self, other: &SuffStats) {
        self.n += other.n;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.outer.iter_mut().zip(&other.outer) {
            *a += b;
        }
    }
}

/// Cached multivariate Student-t posterior predictive.
#[derive(Debug, Clone)]
pub(crate) struct Predictive {
    pub loc: Vec<f64>,
    pub chol: Vec<f64>,
    pub half_nu_plus_d: f64,
    pub nu: f64,
    pub log_norm: f64,
}

/// NIW prior recentered at its own mean, with constants precomputed for
/// fast marginal and predictive evaluation on shifted sufficient statistics.
#[derive(Debug, Clone)]
pub(crate) struct ShiftedNiw {
    pub d: usize,
    pub shift: Vec<f64>,
    pub kappa0: f64,
    pub nu0: f64,
    pub lambda0: Vec<f64>,
    lambda0_log_det: f64,
    ln_mvgamma_nu0: f64,
}

impl ShiftedNiw {
    pub fn new(prior: &NiwParams) -> Result<Self> {
        let d = prior.dim();
        let lambda0 = to_row_major(&prior.lambda0);
        let lambda0_log_det = SpdFactor::new(&prior.lambda0, "prior scale")?.log_det();
        Ok(ShiftedNiw {
            d,
            shift: prior.mu0.iter().copied().collect(),
            kappa0: prior.kappa0,
            nu0: prior.nu0,
            lambda0,
            lambda0_log_det,
            ln_mvgamma_nu0: ln_mvgamma(d, prior.nu0 / 2.0),
        })
    }

    pub fn shift_into(&self, x: impl Iterator<Item = f64>, out: &mut [f64]) {
        for ((o, v), s) in out.iter_mut().zip(x).zip(&self.shift) {
            *o = v - s;
        }
    }

    /// Posterior scale `Lambda0 + SS - s s^T / kappa_n` written into `out`.
    fn posterior_scale(&self, stats: &SuffStats, out: &mut [f64]) -> f64 {
        let d = self.d;
        let kn = self.kappa0 + stats.n as f64;
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] =
                    self.lambda0[i * d + j] + stats.outer[i * d + j] - stats.sum[i] * stats.sum[j] / kn;
            }
        }
        kn
    }

    /// Constant part of the log marginal for a block of `m` points.
    pub fn marginal_const(&self, m: usize) -> f64 {
        let d = self.d as f64;
        let mf = m as f64;
        -mf * d / 2.0 * LN_PI + ln_mvgamma(self.d, (self.nu0 + mf) / 2.0) - self.ln_mvgamma_nu0
            + self.nu0 / 2.0 * self.lambda0_log_det
            + d / 2.0 * (self.kappa0 / (self.kappa0 + mf)).ln()
    }

    /// Log marginal likelihood of a block from its shifted statistics.
    /// `scratch` needs `d * d` entries.
    pub fn log_marginal_with(&self, stats: &SuffStats, constant: f64, scratch: &mut [f64]) -> Option<f64> {
        if stats.n == 0 {
            return Some(0.0);
        }
        self.posterior_scale(stats, scratch);
        if !cholesky_jittered(scratch, self.d) {
            return None;
        }
        let nu_n = self.nu0 + stats.n as f64;
        Some(constant - nu_n / 2.0 * chol_log_det(scratch, self.d))
    }

    pub fn log_marginal(&self, stats: &SuffStats) -> Option<f64> {
        let mut scratch = vec![0.0; self.d * self.d];
        self.log_marginal_with(stats, self.marginal_const(stats.n), &mut scratch)
    }

    /// Student-t posterior predictive for a block.
    pub fn predictive(&self, stats: &SuffStats) -> Option<Predictive> {
        let d = self.d;
        let df = d as f64;
        let mut chol = vec![0.0; d * d];
        let kn = self.posterior_scale(stats, &mut chol);
        let nu = self.nu0 + stats.n as f64 - df + 1.0;
        let factor = (kn + 1.0) / (kn * nu);
        chol.iter_mut().for_each(|v| *v *= factor);
        if !cholesky_jittered(&mut chol, d) {
            return None;
        }
        let loc = stats.sum.iter().map(|s| s / kn).collect();
        let log_norm =
            ln_gamma((nu + df) / 2.0) - ln_gamma(nu / 2.0) - df / 2.0 * (nu * PI).ln() - 0.5 * chol_log_det(&chol, d);
        Some(Predictive {
            loc,
            chol,
            half_nu_plus_d: (nu + df) / 2.0,
            nu,
            log_norm,
        })
    }
}

impl Predictive {
    /// Log density at a shifted point. `scratch` needs `2 * d` entries.
    pub fn log_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.loc.len();
        let (diff, work) = scratch.split_at_mut(d);
        for i in 0..d {
            diff[i] = x[i] - self.loc[i];
        }
        let q = chol_quad_form(&self.chol, d, diff, work);
        self.log_norm - self.half_nu_plus_d * (q / self.nu).ln_1p()
    }
}

/// `ln(sum(exp(v)))` with the usual max shift.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
