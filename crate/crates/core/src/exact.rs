//! Exact learner evidence for small datasets, and the teaching score built
//! on it.
//!
//! The evidence sums the CRP prior times the product of block marginals over
//! every set partition. Rather than walking all Bell(n) partitions, the
//! subset recursion
//!
//! ```text
//! g(0) = 1,   g(S) = sum_{B ⊆ S, min(S) ∈ B} alpha (|B|-1)! m(B) g(S \ B)
//! ```
//!
//! visits each (partition, block) pair once in `O(3^n)` time and `O(2^n)`
//! memory. Dividing `g(all)` by `prod_{i<n} (alpha + i)` gives the evidence.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::bayes::{crp_log_normalizer, ln_factorial, gmm_loglik, mvn_logpdf_factored, NiwParams, Partition, ShiftedNiw, SuffStats};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::phoneme::CategoryModel;

/// Hard cap on items for subset tables and enumeration.
pub const MAX_SUBSET_ITEMS: usize = 20;
/// Beyond this, exact evidence is slow enough to warrant a warning.
pub const PRACTICAL_SUBSET_ITEMS: usize = 13;

fn check_limit(n: usize, max: usize) -> Result<()> {
    if n > max {
        return Err(Error::SubsetLimitExceeded { n, max });
    }
    if n > PRACTICAL_SUBSET_ITEMS {
        warn!("exact evidence over {n} items costs O(3^{n}); more than {PRACTICAL_SUBSET_ITEMS} is impractical");
    }
    Ok(())
}

/// Log marginal likelihood of every subset of `n` points, indexed by bitmask.
#[derive(Debug, Clone)]
pub struct SubsetMarginalTable {
    n: usize,
    values: Vec<f64>,
}

impl SubsetMarginalTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, mask: usize) -> f64 {
        self.values[mask]
    }
}

/// Compute `ln m(S)` for all `2^n` subsets `S` of the rows of `x`.
pub fn build_subset_table(x: &DMatrix<f64>, prior: &NiwParams) -> Result<SubsetMarginalTable> {
    let n = x.nrows();
    check_limit(n, MAX_SUBSET_ITEMS)?;
    if x.ncols() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            found: x.ncols(),
        });
    }
    let mut engine = SubsetEngine::new(prior, n)?;
    engine.load_points(x);
    engine.fill_marginals()?;
    Ok(SubsetMarginalTable {
        n,
        values: engine.marginals,
    })
}

/// `ln P(X | prior, alpha)` summed over every partition of the rows of `x`.
pub fn log_evidence(x: &DMatrix<f64>, prior: &NiwParams, alpha: f64) -> Result<f64> {
    let n = x.nrows();
    check_limit(n, MAX_SUBSET_ITEMS)?;
    if x.ncols() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prior.dim(),
            found: x.ncols(),
        });
    }
    let mut engine = SubsetEngine::new(prior, n)?;
    engine.load_points(x);
    engine.fill_marginals()?;
    Ok(engine.evidence(alpha))
}

/// Evidence from a precomputed subset table.
pub fn log_evidence_from_table(table: &SubsetMarginalTable, alpha: f64) -> f64 {
    let mut g = vec![0.0; table.values.len()];
    subset_recursion(table.n, &table.values, alpha, &mut g)
}

fn subset_recursion(n: usize, marginals: &[f64], alpha: f64, g: &mut [f64]) -> f64 {
    let size = 1usize << n;
    let ln_alpha = alpha.ln();
    // ln(alpha (|B|-1)!) by block size
    let block_const: Vec<f64> = (0..=n)
        .map(|s| if s == 0 { 0.0 } else { ln_alpha + ln_factorial(s - 1) })
        .collect();
    let weight = |b: usize| block_const[b.count_ones() as usize] + marginals[b];
    g[0] = 0.0;
    for s in 1..size {
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        let mut best = f64::NEG_INFINITY;
        let mut sub = rest;
        loop {
            let b = sub | low;
            let t = weight(b) + g[s ^ b];
            if t > best {
                best = t;
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
        let mut acc = 0.0;
        if best > f64::NEG_INFINITY {
            let mut sub = rest;
            loop {
                let b = sub | low;
                acc += (weight(b) + g[s ^ b] - best).exp();
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
        }
        g[s] = best + acc.ln();
    }
    g[size - 1] - crp_log_normalizer(n, alpha)
}

/// Reusable buffers for repeated evidence evaluation on same-sized data.
#[derive(Debug, Clone)]
struct SubsetEngine {
    niw: ShiftedNiw,
    n: usize,
    points: Vec<f64>,
    marginals: Vec<f64>,
    g: Vec<f64>,
    consts: Vec<f64>,
    scratch: Vec<f64>,
}

impl SubsetEngine {
    fn new(prior: &NiwParams, n: usize) -> Result<Self> {
        let niw = ShiftedNiw::new(prior)?;
        let d = niw.d;
        let consts = (0..=n).map(|m| niw.marginal_const(m)).collect();
        Ok(SubsetEngine {
            n,
            points: vec![0.0; n * d],
            marginals: vec![0.0; 1 << n],
            g: vec![0.0; 1 << n],
            consts,
            scratch: vec![0.0; d * d],
            niw,
        })
    }

    fn load_points(&mut self, x: &DMatrix<f64>) {
        let d = self.niw.d;
        for i in 0..self.n {
            let (niw, pts) = (&self.niw, &mut self.points[i * d..(i + 1) * d]);
            niw.shift_into(x.row(i).iter().copied(), pts);
        }
    }

    /// Depth-first walk over subsets, each extending its parent by one
    /// higher-indexed point, so statistics are built incrementally with
    /// `O(n)` live accumulators.
    fn fill_marginals(&mut self) -> Result<()> {
        let d = self.niw.d;
        let mut stack: Vec<SuffStats> = (0..=self.n).map(|_| SuffStats::new(d)).collect();
        self.marginals[0] = 0.0;
        self.visit(0, 0, &mut stack)
    }

    fn visit(&mut self, mask: usize, start: usize, stack: &mut [SuffStats]) -> Result<()> {
        let d = self.niw.d;
        let depth = mask.count_ones() as usize;
        for i in start..self.n {
            let (parents, children) = stack.split_at_mut(depth + 1);
            let child = &mut children[0];
            child.clone_from(&parents[depth]);
            child.add(&self.points[i * d..(i + 1) * d]);
            let next = mask | (1 << i);
            let lm = self
                .niw
                .log_marginal_with(child, self.consts[child.n], &mut self.scratch)
                .ok_or_else(|| Error::NonPositiveDefiniteCovariance {
                    label: "posterior scale".into(),
                })?;
            self.marginals[next] = lm;
            self.visit(next, i + 1, stack)?;
        }
        Ok(())
    }

    fn evidence(&mut self, alpha: f64) -> f64 {
        subset_recursion(self.n, &self.marginals, alpha, &mut self.g)
    }
}

/// Iterator over all set partitions of `n` items as restricted growth
/// strings, each in canonical form.
#[derive(Debug, Clone)]
pub struct Partitions {
    current: Vec<usize>,
    // prefix_max[i] = max(current[..i])
    prefix_max: Vec<usize>,
    done: bool,
}

impl Iterator for Partitions {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let out = Partition::from_canonical_unchecked(self.current.clone());
        let n = self.current.len();
        let mut i = n;
        loop {
            if i <= 1 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.current[i] <= self.prefix_max[i] {
                self.current[i] += 1;
                for j in (i + 1)..n {
                    self.current[j] = 0;
                    self.prefix_max[j] = self.prefix_max[j - 1].max(self.current[j - 1]);
                }
                break;
            }
        }
        Some(out)
    }
}

/// Every set partition of `n <= 13` items, each exactly once.
pub fn enumerate_partitions(n: usize) -> Result<Partitions> {
    if n > PRACTICAL_SUBSET_ITEMS {
        return Err(Error::SubsetLimitExceeded {
            n,
            max: PRACTICAL_SUBSET_ITEMS,
        });
    }
    Ok(Partitions {
        current: vec![0; n],
        prefix_max: vec![0; n],
        done: false,
    })
}

/// The hypothesis being taught: fixed component parameters and the
/// all-distinct assignment of point `i` to component `i`.
#[derive(Debug, Clone)]
pub struct TeachingTarget {
    components: Vec<(DVector<f64>, DMatrix<f64>)>,
    partition: Partition,
}

impl TeachingTarget {
    pub fn new(components: Vec<(DVector<f64>, DMatrix<f64>)>) -> Self {
        let k = components.len();
        TeachingTarget {
            components,
            partition: Partition::singletons(k),
        }
    }

    pub fn from_model(model: &CategoryModel) -> Self {
        TeachingTarget::new(model.phonemes().iter().map(|p| (p.mean.clone(), p.cov.clone())).collect())
    }

    pub fn components(&self) -> &[(DVector<f64>, DMatrix<f64>)] {
        &self.components
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }
}

/// `ln P(X | theta, Z) - ln P(X | prior, alpha)`: the log teaching density
/// up to terms that do not depend on `X`.
///
/// The CRP probability of the target partition and the NIW density of the
/// target parameters are constant in `X`, so they are left out; only
/// differences between scores are meaningful.
pub fn teaching_log_score(x: &DMatrix<f64>, target: &TeachingTarget, prior: &NiwParams, alpha: f64) -> Result<f64> {
    if x.nrows() != target.k() {
        return Err(Error::DimensionMismatch {
            expected: target.k(),
            found: x.nrows(),
        });
    }
    let lik = gmm_loglik(x, target.partition(), target.components())?;
    Ok(lik - log_evidence(x, prior, alpha)?)
}

/// Repeated teaching-score evaluation with cached factorizations and buffers.
#[derive(Debug, Clone)]
pub struct TeachingScorer {
    means: Vec<DVector<f64>>,
    factors: Vec<SpdFactor>,
    engine: SubsetEngine,
    alpha: f64,
    diff: Vec<f64>,
}

impl TeachingScorer {
    pub fn new(target: &TeachingTarget, prior: &NiwParams, alpha: f64) -> Result<Self> {
        let k = target.k();
        check_limit(k, MAX_SUBSET_ITEMS)?;
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        let d = prior.dim();
        let factors = target
            .components()
            .iter()
            .map(|(mean, cov)| {
                if mean.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: mean.len(),
                    });
                }
                SpdFactor::new(cov, "target component")
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TeachingScorer {
            means: target.components().iter().map(|(m, _)| m.clone()).collect(),
            factors,
            engine: SubsetEngine::new(prior, k)?,
            alpha,
            diff: vec![0.0; d],
        })
    }

    pub fn from_model(model: &CategoryModel) -> Result<Self> {
        TeachingScorer::new(&TeachingTarget::from_model(model), model.prior(), model.alpha())
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.diff.len()
    }

    pub fn score(&mut self, x: &DMatrix<f64>) -> Result<f64> {
        let (k, d) = (self.k(), self.dim());
        if x.nrows() != k || x.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                found: x.nrows() * x.ncols(),
            });
        }
        let mut lik = 0.0;
        for (i, (mean, factor)) in self.means.iter().zip(&self.factors).enumerate() {
            for c in 0..d {
                self.diff[c] = x[(i, c)] - mean[c];
            }
            lik += mvn_logpdf_factored(&self.diff, factor);
        }
        self.engine.load_points(x);
        self.engine.fill_marginals()?;
        Ok(lik - self.engine.evidence(self.alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{crp_log_prob, log_marginal, log_sum_exp};
    use approx::assert_relative_eq;

    fn bell(n: usize) -> u64 {
        // Bell triangle
        let mut row = vec![1u64];
        for _ in 0..n {
            let mut next = vec![*row.last().unwrap()];
            for v in &row {
                let last = *next.last().unwrap();
                next.push(last + v);
            }
            row = next;
        }
        row[0]
    }

    #[test]
    fn bell_numbers() {
        assert_eq!(enumerate_partitions(3).unwrap().count(), 5);
        assert_eq!(enumerate_partitions(4).unwrap().count(), 15);
        for n in 0..=9 {
            assert_eq!(enumerate_partitions(n).unwrap().count() as u64, bell(n), "n={n}");
        }
        assert_eq!(bell(12), 4_213_597);
        assert!(enumerate_partitions(14).is_err());
    }

    #[test]
    fn partitions_are_canonical_and_distinct() {
        let all: Vec<_> = enumerate_partitions(5).unwrap().collect();
        let set: std::collections::HashSet<_> = all.iter().cloned().collect();
        assert_eq!(set.len(), all.len());
        for p in &all {
            assert_eq!(&Partition::from_indices(p.assignment()), p);
        }
    }

    fn small_prior() -> NiwParams {
        NiwParams::new(
            DVector::from_row_slice(&[0.0, 0.0]),
            1.0,
            2.0,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.5]),
        )
        .unwrap()
    }

    fn rows(x: &DMatrix<f64>, mask: usize) -> DMatrix<f64> {
        let idx: Vec<usize> = (0..x.nrows()).filter(|i| mask >> i & 1 == 1).collect();
        DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
    }

    #[test]
    fn table_matches_direct_calls() {
        let x = DMatrix::from_row_slice(3, 2, &[0.3, -0.2, 1.7, 0.9, -1.1, 0.4]);
        let prior = small_prior();
        let t = build_subset_table(&x, &prior).unwrap();
        assert_eq!(t.values().len(), 8);
        assert_eq!(t.get(0), 0.0);
        for mask in 1..8 {
            assert_relative_eq!(t.get(mask), log_marginal(&rows(&x, mask), &prior).unwrap(), epsilon = 1e-10);
        }
        let one = build_subset_table(&rows(&x, 1), &prior).unwrap();
        assert_eq!(one.values().len(), 2);
    }

    #[test]
    fn evidence_single_point() {
        let x = DMatrix::from_row_slice(1, 2, &[0.3, -0.2]);
        let prior = small_prior();
        assert_relative_eq!(
            log_evidence(&x, &prior, 1.3).unwrap(),
            log_marginal(&x, &prior).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn evidence_matches_enumeration() {
        let x = DMatrix::from_row_slice(5, 2, &[0.3, -0.2, 1.7, 0.9, -1.1, 0.4, 2.5, 2.0, -0.3, -0.8]);
        let prior = small_prior();
        let alpha = 0.8;
        let terms: Vec<f64> = enumerate_partitions(5)
            .unwrap()
            .map(|p| {
                crp_log_prob(&p, alpha)
                    + p.block_masks()
                        .iter()
                        .map(|&m| log_marginal(&rows(&x, m as usize), &prior).unwrap())
                        .sum::<f64>()
            })
            .collect();
        let naive = log_sum_exp(&terms);
        let dp = log_evidence(&x, &prior, alpha).unwrap();
        assert_relative_eq!(dp, naive, max_relative = 1e-10);
    }

    #[test]
    fn large_alpha_favors_singletons() {
        let x = DMatrix::from_row_slice(3, 2, &[0.3, -0.2, 1.7, 0.9, -1.1, 0.4]);
        let prior = small_prior();
        let singles: f64 = (0..3).map(|i| log_marginal(&rows(&x, 1 << i), &prior).unwrap()).sum();
        assert!((log_evidence(&x, &prior, 1e6).unwrap() - singles).abs() < 1e-3);
    }

    #[test]
    fn limit_is_enforced() {
        let x = DMatrix::zeros(21, 1);
        let prior = NiwParams::new(DVector::zeros(1), 1.0, 1.0, DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(
            build_subset_table(&x, &prior),
            Err(Error::SubsetLimitExceeded { n: 21, max: 20 })
        ));
    }

    #[test]
    fn scorer_matches_free_function() {
        let model = crate::phoneme::builtin_model();
        let target = TeachingTarget::from_model(&model);
        let x = DMatrix::from_fn(12, 3, |i, j| model.phonemes()[i].mean[j] + 7.0 * (i as f64 - j as f64));
        let free = teaching_log_score(&x, &target, model.prior(), model.alpha()).unwrap();
        let mut scorer = TeachingScorer::from_model(&model).unwrap();
        assert_relative_eq!(scorer.score(&x).unwrap(), free, max_relative = 1e-12);
        assert!(teaching_log_score(&x.rows(0, 11).into_owned(), &target, model.prior(), 1.0).is_err());
    }
}
