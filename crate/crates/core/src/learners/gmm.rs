//! EM for a Gaussian mixture with a known number of components.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use crate::bayes::{log_sum_exp, mvn_logpdf_factored, Partition};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when the objective gains less than this per point.
    pub tol: f64,
    /// Ridge added to every covariance, as a fraction of the average
    /// per-coordinate variance of the data.
    pub reg: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            restarts: 3,
            max_iter: 500,
            tol: 1e-6,
            reg: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmState {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// Objective at every E-step: the log-likelihood minus the ridge
    /// penalty `(c/2) sum_j tr(Sigma_j^-1)`. EM ascends it monotonically.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub ridge: f64,
}

impl GmmState {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Final value of the traced objective.
    pub fn objective(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Component index of maximum responsibility for each row.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let factors = factor_all(&self.covs)?;
        let d = self.dim();
        let mut diff = vec![0.0; d];
        Ok((0..x.nrows())
            .map(|i| {
                let mut best = (0, f64::NEG_INFINITY);
                for j in 0..self.k {
                    for c in 0..d {
                        diff[c] = x[(i, c)] - self.means[j][c];
                    }
                    let v = self.weights[j].ln() + mvn_logpdf_factored(&diff, &factors[j]);
                    if v > best.1 {
                        best = (j, v);
                    }
                }
                best.0
            })
            .collect())
    }

    pub fn classify(&self, x: &DMatrix<f64>) -> Result<Partition> {
        Ok(Partition::from_indices(&self.predict(x)?))
    }
}

fn factor_all(covs: &[DMatrix<f64>]) -> Result<Vec<SpdFactor>> {
    covs.iter()
        .enumerate()
        .map(|(j, c)| SpdFactor::new(c, &format!("GMM component {j}")))
        .collect()
}

/// Best-of-restarts EM fit. Restarts that collapse a component are
/// skipped; if every restart collapses, the last error is returned.
pub fn gmm_em_fit<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, restarts: usize, rng: &mut R) -> Result<GmmState> {
    gmm_em_fit_with(
        x,
        k,
        &EmConfig {
            restarts,
            ..EmConfig::default()
        },
        rng,
    )
}

pub fn gmm_em_fit_with<R: Rng + ?Sized>(x: &DMatrix<f64>, k: usize, config: &EmConfig, rng: &mut R) -> Result<GmmState> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    if config.restarts == 0 {
        return Err(Error::InvalidParameter("EM needs at least one restart".into()));
    }
    let d = x.ncols();
    let mean = x.row_mean().transpose();
    let mut pooled = DMatrix::zeros(d, d);
    for i in 0..n {
        let r = x.row(i).transpose() - &mean;
        pooled += &r * r.transpose();
    }
    pooled /= n as f64;
    let avg_var = pooled.trace() / d as f64;
    let ridge = config.reg * if avg_var > 0.0 { avg_var } else { 1.0 };

    let mut best: Option<GmmState> = None;
    let mut last_err = None;
    for _ in 0..config.restarts {
        let idx = sample(rng, n, k);
        let means: Vec<DVector<f64>> = idx.iter().map(|i| x.row(i).transpose()).collect();
        let init_cov = &pooled + DMatrix::identity(d, d) * ridge;
        let init = GmmState {
            k,
            weights: vec![1.0 / k as f64; k],
            means,
            covs: vec![init_cov; k],
            loglik_trace: Vec::new(),
            converged: false,
            ridge,
        };
        match run_em(x, init, config) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.objective() > b.objective()) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart ran"))
}

fn run_em(x: &DMatrix<f64>, mut state: GmmState, config: &EmConfig) -> Result<GmmState> {
    let (n, d, k) = (x.nrows(), x.ncols(), state.k);
    let mut resp = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    let mut diff = vec![0.0; d];
    for iter in 0..=config.max_iter {
        // E-step, and the objective at the current parameters
        let factors = factor_all(&state.covs)?;
        let mut loglik = 0.0;
        for i in 0..n {
            for j in 0..k {
                for c in 0..d {
                    diff[c] = x[(i, c)] - state.means[j][c];
                }
                row[j] = state.weights[j].ln() + mvn_logpdf_factored(&diff, &factors[j]);
            }
            let z = log_sum_exp(&row);
            loglik += z;
            for j in 0..k {
                resp[(i, j)] = (row[j] - z).exp();
            }
        }
        let penalty: f64 = state
            .covs
            .iter()
            .map(|c| c.clone().try_inverse().map_or(f64::INFINITY, |inv| inv.trace()))
            .sum::<f64>()
            * state.ridge
            / 2.0;
        let objective = loglik - penalty;
        if let Some(&prev) = state.loglik_trace.last() {
            state.loglik_trace.push(objective);
            if (objective - prev) / (n as f64) < config.tol {
                state.converged = true;
                return Ok(state);
            }
        } else {
            state.loglik_trace.push(objective);
        }
        if iter == config.max_iter {
            break;
        }

        // M-step
        for j in 0..k {
            let mass: f64 = resp.column(j).sum();
            if mass < 1e-12 {
                return Err(Error::DegenerateComponent { component: j, mass });
            }
            let mut mu = DVector::zeros(d);
            for i in 0..n {
                mu += x.row(i).transpose() * resp[(i, j)];
            }
            mu /= mass;
            let mut cov = DMatrix::identity(d, d) * state.ridge;
            for i in 0..n {
                let r = x.row(i).transpose() - &mu;
                cov += &r * r.transpose() * resp[(i, j)];
            }
            cov /= mass;
            state.covs[j] = (&cov + cov.transpose()) / 2.0;
            state.means[j] = mu;
            state.weights[j] = mass / n as f64;
        }
        let total: f64 = state.weights.iter().sum();
        state.weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn assert_monotone(trace: &[f64]) {
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace decreased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn one_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(200, 2, |_, c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * (1.0 + c as f64) + 5.0
        });
        let fit = gmm_em_fit(&x, 1, 1, &mut rng).unwrap();
        let mean = x.row_mean().transpose();
        let mut cov = DMatrix::zeros(2, 2);
        for i in 0..200 {
            let r = x.row(i).transpose() - &mean;
            cov += &r * r.transpose();
        }
        cov /= 200.0;
        assert!((&fit.means[0] - &mean).amax() < 1e-10);
        assert!((&fit.covs[0] - &cov).amax() < 1e-6 * cov.amax());
        assert_eq!(fit.weights, vec![1.0]);
        assert!(fit.classify(&x).unwrap().n_blocks() == 1);
        assert_monotone(&fit.loglik_trace);
    }

    #[test]
    fn separated_clusters_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(400, 1, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if i < 200 { -10.0 + z } else { 10.0 + z }
        });
        let fit = gmm_em_fit(&x, 2, 3, &mut rng).unwrap();
        let mut m: Vec<f64> = fit.means.iter().map(|v| v[0]).collect();
        m.sort_by(f64::total_cmp);
        let lo = x.rows(0, 200).mean();
        let hi = x.rows(200, 200).mean();
        assert!((m[0] - lo).abs() < 0.1 && (m[1] - hi).abs() < 0.1, "{m:?}");
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_monotone(&fit.loglik_trace);
        let labels = fit.predict(&x).unwrap();
        assert!(labels[..200].iter().all(|&l| l == labels[0]));
        assert!(labels[200..].iter().all(|&l| l != labels[0]));
    }

    #[test]
    fn overlapping_fits_stay_monotone() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(150, 3, |i, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + (i % 3) as f64
            });
            let fit = gmm_em_fit(&x, 4, 2, &mut rng).unwrap();
            assert_monotone(&fit.loglik_trace);
        }
    }

    #[test]
    fn rejects_too_many_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gmm_em_fit(&DMatrix::zeros(2, 1), 3, 1, &mut rng).is_err());
        let fit = gmm_em_fit(&DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), 1, 1, &mut rng).unwrap();
        assert!(fit.predict(&DMatrix::zeros(1, 2)).is_err());
    }
}
