//! Collapsed Gibbs sampling for the Dirichlet-process Gaussian mixture
//! (Neal 2000, algorithm 3) with restricted-Gibbs split-merge moves
//! (Jain & Neal 2004).
//!
//! Component parameters are integrated out under the NIW prior, so the
//! state is just the assignment plus per-block sufficient statistics.
//! Points are stored relative to the prior mean.

use nalgebra::DMatrix;
use rand::Rng;

use crate::bayes::{ln_factorial, NiwParams, Partition, Predictive, ShiftedNiw, SuffStats};
use crate::error::{Error, Result};

/// How a fitted DPGMM labels held-out points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransferMode {
    /// Training blocks frozen; each point independently takes the argmax of
    /// `n_j t_j(x)` over blocks and `alpha t_0(x)` for a new block.
    #[default]
    Frozen,
    /// Held-out points are Gibbs-sampled jointly against the fixed training
    /// assignment for the given number of sweeps.
    Joint { sweeps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpgmmConfig {
    pub sweeps: usize,
    pub splitmerge_every: usize,
    pub splitmerge_moves: usize,
    pub intermediate_scans: usize,
    pub transfer: TransferMode,
}

impl Default for DpgmmConfig {
    fn default() -> Self {
        DpgmmConfig {
            sweeps: 500,
            splitmerge_every: 5,
            splitmerge_moves: 1,
            intermediate_scans: 5,
            transfer: TransferMode::Frozen,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    stats: SuffStats,
    pred: Predictive,
}

/// Sampler state: an assignment and the statistics of every non-empty block.
#[derive(Debug, Clone)]
pub struct DpgmmState {
    prior: NiwParams,
    niw: ShiftedNiw,
    prior_pred: Predictive,
    alpha: f64,
    labels: Vec<usize>,
    blocks: Vec<Block>,
    sweep_count: usize,
}

fn refreshed(niw: &ShiftedNiw, stats: SuffStats) -> Block {
    let pred = niw
        .predictive(&stats)
        .expect("posterior scale of a PD prior plus scatter is PD");
    Block { stats, pred }
}

/// Draw an index with probability proportional to `exp(log_weights)`.
pub(crate) fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in log_weights.iter().enumerate() {
        u -= (w - max).exp();
        if u <= 0.0 {
            return i;
        }
    }
    log_weights.len() - 1
}

fn shifted_rows(niw: &ShiftedNiw, x: &DMatrix<f64>) -> Vec<f64> {
    let d = niw.d;
    let mut out = vec![0.0; x.nrows() * d];
    for i in 0..x.nrows() {
        niw.shift_into(x.row(i).iter().copied(), &mut out[i * d..(i + 1) * d]);
    }
    out
}

fn check_dim(x: &DMatrix<f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.ncols(),
        });
    }
    Ok(())
}

impl DpgmmState {
    /// All points in one block.
    pub fn new(x: &DMatrix<f64>, prior: &NiwParams, alpha: f64) -> Result<Self> {
        Self::from_labels(x, prior, alpha, &vec![0; x.nrows()])
    }

    /// Start from an arbitrary labeling.
    pub fn from_labels(x: &DMatrix<f64>, prior: &NiwParams, alpha: f64, labels: &[usize]) -> Result<Self> {
        check_dim(x, prior.dim())?;
        if labels.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: labels.len(),
            });
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        let niw = ShiftedNiw::new(prior)?;
        let d = niw.d;
        let prior_pred = niw.predictive(&SuffStats::new(d)).expect("prior scale is PD");
        let partition = Partition::from_indices(labels);
        let pts = shifted_rows(&niw, x);
        let mut stats: Vec<SuffStats> = (0..partition.n_blocks()).map(|_| SuffStats::new(d)).collect();
        for (i, &b) in partition.assignment().iter().enumerate() {
            stats[b].add(&pts[i * d..(i + 1) * d]);
        }
        let blocks = stats.into_iter().map(|s| refreshed(&niw, s)).collect();
        Ok(DpgmmState {
            prior: prior.clone(),
            prior_pred,
            alpha,
            labels: partition.assignment().to_vec(),
            blocks,
            sweep_count: 0,
            niw,
        })
    }

    pub fn partition(&self) -> Partition {
        Partition::from_indices(&self.labels)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sweep_count(&self) -> usize {
        self.sweep_count
    }

    pub fn prior(&self) -> &NiwParams {
        &self.prior
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Sizes of the blocks in internal order.
    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.stats.n).collect()
    }

    fn remove_block(&mut self, b: usize) {
        let last = self.blocks.len() - 1;
        self.blocks.swap_remove(b);
        if b != last {
            for l in self.labels.iter_mut() {
                if *l == last {
                    *l = b;
                }
            }
        }
    }

    fn detach(&mut self, i: usize, xi: &[f64]) {
        let b = self.labels[i];
        self.blocks[b].stats.remove(xi);
        if self.blocks[b].stats.n == 0 {
            self.remove_block(b);
        } else {
            let stats = std::mem::replace(&mut self.blocks[b].stats, SuffStats::new(0));
            self.blocks[b] = refreshed(&self.niw, stats);
        }
    }

    fn attach(&mut self, i: usize, xi: &[f64], b: usize) {
        if b == self.blocks.len() {
            let mut stats = SuffStats::new(self.niw.d);
            stats.add(xi);
            self.blocks.push(refreshed(&self.niw, stats));
        } else {
            let mut stats = std::mem::replace(&mut self.blocks[b].stats, SuffStats::new(0));
            stats.add(xi);
            self.blocks[b] = refreshed(&self.niw, stats);
        }
        self.labels[i] = b;
    }

    /// `ln n_j t_j(x)` for every block, then `ln alpha t_0(x)` last.
    fn assignment_weights(&self, xi: &[f64], weights: &mut Vec<f64>, scratch: &mut [f64]) {
        weights.clear();
        for b in &self.blocks {
            weights.push((b.stats.n as f64).ln() + b.pred.log_density(xi, scratch));
        }
        weights.push(self.alpha.ln() + self.prior_pred.log_density(xi, scratch));
    }

    fn sweep_indices<R: Rng + ?Sized>(&mut self, pts: &[f64], indices: std::ops::Range<usize>, rng: &mut R) {
        let d = self.niw.d;
        let mut weights = Vec::with_capacity(self.blocks.len() + 1);
        let mut scratch = vec![0.0; 2 * d];
        for i in indices {
            let xi = &pts[i * d..(i + 1) * d];
            self.detach(i, xi);
            self.assignment_weights(xi, &mut weights, &mut scratch);
            let b = sample_log_weights(&weights, rng);
            self.attach(i, xi, b);
        }
    }

    /// One sequential Gibbs scan over every point.
    pub fn gibbs_sweep<R: Rng + ?Sized>(&mut self, x: &DMatrix<f64>, rng: &mut R) -> Result<()> {
        self.check_shape(x)?;
        let pts = shifted_rows(&self.niw, x);
        self.sweep_indices(&pts, 0..self.labels.len(), rng);
        self.sweep_count += 1;
        debug_assert!(self.is_consistent(x), "block statistics drifted from the data");
        Ok(())
    }

    fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        check_dim(x, self.niw.d)?;
        if x.nrows() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: self.labels.len(),
                found: x.nrows(),
            });
        }
        Ok(())
    }

    /// Block statistics agree with a recomputation from `x`.
    pub fn is_consistent(&self, x: &DMatrix<f64>) -> bool {
        let d = self.niw.d;
        let pts = shifted_rows(&self.niw, x);
        let mut stats: Vec<SuffStats> = (0..self.blocks.len()).map(|_| SuffStats::new(d)).collect();
        for (i, &b) in self.labels.iter().enumerate() {
            if b >= stats.len() {
                return false;
            }
            stats[b].add(&pts[i * d..(i + 1) * d]);
        }
        stats.iter().zip(&self.blocks).all(|(s, b)| {
            let scale = 1.0 + b.stats.outer.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            s.n == b.stats.n
                && s.n > 0
                && s.sum.iter().zip(&b.stats.sum).all(|(p, q)| (p - q).abs() <= 1e-6 * scale.sqrt())
                && s.outer.iter().zip(&b.stats.outer).all(|(p, q)| (p - q).abs() <= 1e-6 * scale)
        })
    }

    fn block_log_marginal(&self, stats: &SuffStats) -> f64 {
        self.niw
            .log_marginal(stats)
            .expect("posterior scale of a PD prior plus scatter is PD")
    }

    /// One restricted-Gibbs scan over `members`, moving each between the
    /// two launch blocks. Returns the log probability of the assignments
    /// made; with `forced`, assignments follow it instead of being sampled.
    #[allow(clippy::too_many_arguments)]
    fn restricted_scan<R: Rng + ?Sized>(
        &self,
        pts: &[f64],
        members: &[usize],
        side_a: &mut [bool],
        a: &mut Block,
        b: &mut Block,
        forced: Option<&[bool]>,
        rng: &mut R,
    ) -> f64 {
        let d = self.niw.d;
        let mut scratch = vec![0.0; 2 * d];
        let mut log_q = 0.0;
        for (slot, &k) in members.iter().enumerate() {
            let xk = &pts[k * d..(k + 1) * d];
            let from = if side_a[slot] { &mut *a } else { &mut *b };
            let mut stats = std::mem::replace(&mut from.stats, SuffStats::new(0));
            stats.remove(xk);
            *from = refreshed(&self.niw, stats);
            let la = (a.stats.n as f64).ln() + a.pred.log_density(xk, &mut scratch);
            let lb = (b.stats.n as f64).ln() + b.pred.log_density(xk, &mut scratch);
            let hi = la.max(lb);
            let norm = hi + ((la - hi).exp() + (lb - hi).exp()).ln();
            let to_a = match forced {
                Some(f) => f[slot],
                None => rng.random::<f64>() < (la - norm).exp(),
            };
            log_q += if to_a { la - norm } else { lb - norm };
            side_a[slot] = to_a;
            let to = if to_a { &mut *a } else { &mut *b };
            let mut stats = std::mem::replace(&mut to.stats, SuffStats::new(0));
            stats.add(xk);
            *to = refreshed(&self.niw, stats);
        }
        log_q
    }

    /// `ln` of the posterior ratio (split / merged) up to the proposal term:
    /// CRP prior ratio times marginal likelihood ratio.
    fn split_log_target_ratio(&self, a: &SuffStats, b: &SuffStats, merged: &SuffStats) -> f64 {
        self.alpha.ln() + ln_factorial(a.n - 1) + ln_factorial(b.n - 1) - ln_factorial(merged.n - 1)
            + self.block_log_marginal(a)
            + self.block_log_marginal(b)
            - self.block_log_marginal(merged)
    }

    /// One split-merge Metropolis–Hastings move. Returns whether the
    /// proposal was accepted.
    pub fn split_merge<R: Rng + ?Sized>(
        &mut self,
        x: &DMatrix<f64>,
        rng: &mut R,
        intermediate_scans: usize,
    ) -> Result<bool> {
        self.check_shape(x)?;
        let n = self.labels.len();
        if n < 2 {
            return Ok(false);
        }
        let d = self.niw.d;
        let pts = shifted_rows(&self.niw, x);
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (ci, cj) = (self.labels[i], self.labels[j]);
        let members: Vec<usize> = (0..n)
            .filter(|&k| k != i && k != j && (self.labels[k] == ci || self.labels[k] == cj))
            .collect();

        // launch state
        let mut side_a: Vec<bool> = members.iter().map(|_| rng.random::<bool>()).collect();
        let mut sa = SuffStats::new(d);
        let mut sb = SuffStats::new(d);
        sa.add(&pts[i * d..(i + 1) * d]);
        sb.add(&pts[j * d..(j + 1) * d]);
        for (slot, &k) in members.iter().enumerate() {
            if side_a[slot] {
                sa.add(&pts[k * d..(k + 1) * d]);
            } else {
                sb.add(&pts[k * d..(k + 1) * d]);
            }
        }
        let mut a = refreshed(&self.niw, sa);
        let mut b = refreshed(&self.niw, sb);
        for _ in 0..intermediate_scans {
            self.restricted_scan(&pts, &members, &mut side_a, &mut a, &mut b, None, rng);
        }

        if ci == cj {
            let log_q = self.restricted_scan(&pts, &members, &mut side_a, &mut a, &mut b, None, rng);
            let merged = &self.blocks[ci].stats;
            let log_accept = self.split_log_target_ratio(&a.stats, &b.stats, merged) - log_q;
            if log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept {
                let new = self.blocks.len();
                self.labels[j] = new;
                for (slot, &k) in members.iter().enumerate() {
                    if !side_a[slot] {
                        self.labels[k] = new;
                    }
                }
                self.blocks[ci] = a;
                self.blocks.push(b);
                return Ok(true);
            }
            Ok(false)
        } else {
            let original: Vec<bool> = members.iter().map(|&k| self.labels[k] == ci).collect();
            let log_q = self.restricted_scan(&pts, &members, &mut side_a, &mut a, &mut b, Some(&original), rng);
            let mut merged = self.blocks[ci].stats.clone();
            merged.merge(&self.blocks[cj].stats);
            let log_accept =
                log_q - self.split_log_target_ratio(&self.blocks[ci].stats, &self.blocks[cj].stats, &merged);
            if log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept {
                for l in self.labels.iter_mut() {
                    if *l == cj {
                        *l = ci;
                    }
                }
                self.blocks[ci] = refreshed(&self.niw, merged);
                self.remove_block(cj);
                return Ok(true);
            }
            Ok(false)
        }
    }

    /// Label held-out points against the fitted blocks. Points that prefer
    /// a new block share one extra label.
    pub fn classify<R: Rng + ?Sized>(&self, x_eval: &DMatrix<f64>, mode: TransferMode, rng: &mut R) -> Result<Partition> {
        check_dim(x_eval, self.niw.d)?;
        let d = self.niw.d;
        let pts = shifted_rows(&self.niw, x_eval);
        let mut weights = Vec::with_capacity(self.blocks.len() + 1);
        let mut scratch = vec![0.0; 2 * d];
        let frozen: Vec<usize> = (0..x_eval.nrows())
            .map(|i| {
                self.assignment_weights(&pts[i * d..(i + 1) * d], &mut weights, &mut scratch);
                weights
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &w)| if w > best.1 { (j, w) } else { best })
                    .0
            })
            .collect();
        match mode {
            TransferMode::Frozen => Ok(Partition::from_indices(&frozen)),
            TransferMode::Joint { sweeps } => {
                let n_train = self.labels.len();
                let mut joint = self.clone();
                let mut all_pts = vec![0.0; 0];
                all_pts.resize(n_train * d, 0.0);
                all_pts.extend_from_slice(&pts);
                let k = joint.blocks.len();
                for (i, &b) in frozen.iter().enumerate() {
                    let xi = &pts[i * d..(i + 1) * d];
                    joint.labels.push(usize::MAX);
                    joint.attach(n_train + i, xi, b.min(k));
                }
                for _ in 0..sweeps {
                    joint.sweep_indices(&all_pts, n_train..joint.labels.len(), rng);
                }
                Ok(Partition::from_indices(&joint.labels[n_train..]))
            }
        }
    }
}

/// Gibbs sweeps from a single-block start, with split-merge moves after
/// every `splitmerge_every`-th sweep. Returns the final state, a posterior
/// sample rather than a MAP estimate.
pub fn dpgmm_fit<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    prior: &NiwParams,
    alpha: f64,
    config: &DpgmmConfig,
    rng: &mut R,
) -> Result<DpgmmState> {
    if config.sweeps == 0 {
        return Err(Error::InvalidParameter("DPGMM needs at least one sweep".into()));
    }
    let mut state = DpgmmState::new(x, prior, alpha)?;
    for s in 1..=config.sweeps {
        state.gibbs_sweep(x, rng)?;
        if config.splitmerge_every > 0 && s % config.splitmerge_every == 0 {
            for _ in 0..config.splitmerge_moves {
                state.split_merge(x, rng, config.intermediate_scans)?;
            }
        }
    }
    Ok(state)
}
