//! Comparison metrics and the descriptive reports on teaching data.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

use crate::bayes::Partition;
use crate::error::{Error, Result};
use crate::phoneme::{CategoryModel, FormantSet, CORNER_VOWELS};
use crate::teacher::TeachingSample;

/// Adjusted Rand index with its sparse contingency table.
#[derive(Debug, Clone, PartialEq)]
pub struct AriScore {
    pub value: f64,
    /// `((block in U, block in V), overlap)`, sorted, non-zero entries only.
    pub contingency: Vec<((usize, usize), u64)>,
}

struct PairCounts {
    together_both: i128,
    together_u: i128,
    together_v: i128,
    total: i128,
    contingency: Vec<((usize, usize), u64)>,
}

fn choose2(n: u64) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

fn pair_counts(u: &Partition, v: &Partition) -> Result<PairCounts> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    for (&a, &b) in u.assignment().iter().zip(v.assignment()) {
        *table.entry((a, b)).or_default() += 1;
    }
    let mut contingency: Vec<_> = table.into_iter().collect();
    contingency.sort_unstable();
    Ok(PairCounts {
        together_both: contingency.iter().map(|&(_, c)| choose2(c)).sum(),
        together_u: u.block_sizes().iter().map(|&s| choose2(s as u64)).sum(),
        together_v: v.block_sizes().iter().map(|&s| choose2(s as u64)).sum(),
        total: choose2(u.len() as u64),
        contingency,
    })
}

/// Adjusted Rand index, in exact integer arithmetic up to the final
/// division. When the chance-corrected denominator vanishes (both
/// partitions all-singletons or both one block) the partitions agree and
/// the value is 1.
pub fn ari(u: &Partition, v: &Partition) -> Result<AriScore> {
    let c = pair_counts(u, v)?;
    if u.len() < 2 {
        return Err(Error::InvalidParameter("ARI needs at least two items".into()));
    }
    // scaled by 2 * total to stay integral
    let numer = 2 * (c.total * c.together_both - c.together_u * c.together_v);
    let denom = c.total * (c.together_u + c.together_v) - 2 * c.together_u * c.together_v;
    let value = if denom == 0 { 1.0 } else { numer as f64 / denom as f64 };
    Ok(AriScore {
        value,
        contingency: c.contingency,
    })
}

/// ARI of two label vectors.
pub fn ari_labels(u: &[usize], v: &[usize]) -> Result<f64> {
    Ok(ari(&Partition::from_indices(u), &Partition::from_indices(v))?.value)
}

/// Fraction of item pairs on which the two partitions agree.
pub fn rand_index(u: &Partition, v: &Partition) -> Result<f64> {
    let c = pair_counts(u, v)?;
    if c.total == 0 {
        return Err(Error::InvalidParameter("Rand index needs at least two items".into()));
    }
    let agree = c.total + 2 * c.together_both - c.together_u - c.together_v;
    Ok(agree as f64 / c.total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form converges fast for small arguments
        let pi2 = std::f64::consts::PI.powi(2);
        let mut cdf = 0.0;
        for k in 1..=20 {
            let j = (2 * k - 1) as f64;
            cdf += (-j * j * pi2 / (8.0 * lambda * lambda)).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sf = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sf += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-300 {
            break;
        }
    }
    (2.0 * sf).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value at
/// effective size `n1 n2 / (n1 + n2)`.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("sample contains NaN".into()));
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = a[i].min(b[j]);
        while i < n1 && a[i] == v {
            i += 1;
        }
        while j < n2 && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(ne.sqrt() * d),
        n1,
        n2,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// `(mean x - mean y) / pooled sd`, unbiased variances.
pub fn cohens_d(x: &[f64], y: &[f64]) -> Result<f64> {
    for (s, name) in [(x, "x"), (y, "y")] {
        if s.len() < 2 {
            return Err(Error::InsufficientSamples {
                label: name.into(),
                required: 2,
                available: s.len(),
            });
        }
    }
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let pooled = (((n1 - 1.0) * vx + (n2 - 1.0) * vy) / (n1 + n2 - 2.0)).sqrt();
    if !(pooled > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((mx - my) / pooled)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for `x` stochastically greater than `y`.
    pub p_greater: f64,
}

/// Mann–Whitney U with midranks, tie-corrected normal approximation and
/// continuity correction.
pub fn mann_whitney(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut pooled: Vec<(f64, bool)> = x.iter().map(|&v| (v, true)).chain(y.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pooled.len();
    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j + 1) as f64 / 2.0;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        rank_sum_x += midrank * pooled[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let u = rank_sum_x - n1 * (n1 + 1.0) / 2.0;
    let nf = n as f64;
    let var = n1 * n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    let shifted = u - n1 * n2 / 2.0;
    let (z, p) = if var > 0.0 {
        let cc = if shifted == 0.0 { 0.0 } else { 0.5 * shifted.signum() };
        let z = (shifted - cc) / var.sqrt();
        (z, 0.5 * erfc(z / std::f64::consts::SQRT_2))
    } else {
        (0.0, 0.5)
    };
    Ok(MannWhitney { u, z, p_greater: p })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

/// Median of a sample; NaN when empty.
pub fn sample_median(values: &[f64]) -> f64 {
    median(values)
}

/// Per-category means over all teaching samples pooled.
pub fn teaching_means(model: &CategoryModel, teach: &[TeachingSample]) -> Result<Vec<DVector<f64>>> {
    if teach.is_empty() {
        return Err(Error::EmptySample);
    }
    let (k, d) = (model.len(), model.dim());
    let mut means = vec![DVector::zeros(d); k];
    for s in teach {
        if s.points.nrows() != k || s.points.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                found: s.points.len(),
            });
        }
        for (j, m) in means.iter_mut().enumerate() {
            *m += s.points.row(j).transpose();
        }
    }
    for m in means.iter_mut() {
        *m /= teach.len() as f64;
    }
    Ok(means)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDelta {
    pub a: String,
    pub b: String,
    pub is_corner: bool,
    pub d_ads: f64,
    pub d_teach: f64,
    pub delta: f64,
}

impl PairDelta {
    pub fn name(&self) -> String {
        format!("{}-{}", self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticulationReport {
    pub formants: FormantSet,
    pub pairs: Vec<PairDelta>,
}

impl ArticulationReport {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairDelta> {
        self.pairs.iter().find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }
}

fn distance(a: &DVector<f64>, b: &DVector<f64>, dims: &[usize]) -> f64 {
    dims.iter().map(|&c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt()
}

/// Change in Euclidean distance between every pair of category means,
/// from the model (ADS) to the pooled teaching samples.
pub fn articulation_report(model: &CategoryModel, teach: &[TeachingSample], formants: FormantSet) -> Result<ArticulationReport> {
    let teach_means = teaching_means(model, teach)?;
    let dims = formants.dims(model.dim());
    let corner: Vec<Option<usize>> = CORNER_VOWELS.iter().map(|c| model.index_of(c)).collect();
    let ph = model.phonemes();
    let mut pairs = Vec::with_capacity(ph.len() * (ph.len().saturating_sub(1)) / 2);
    for i in 0..ph.len() {
        for j in i + 1..ph.len() {
            let d_ads = distance(&ph[i].mean, &ph[j].mean, &dims);
            let d_teach = distance(&teach_means[i], &teach_means[j], &dims);
            pairs.push(PairDelta {
                a: ph[i].label.clone(),
                b: ph[j].label.clone(),
                is_corner: corner.contains(&Some(i)) && corner.contains(&Some(j)),
                d_ads,
                d_teach,
                delta: d_teach - d_ads,
            });
        }
    }
    Ok(ArticulationReport { formants, pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDelta {
    pub label: String,
    /// `F1` for a variance, `F1F2` for a covariance.
    pub entry: String,
    pub is_variance: bool,
    pub delta: f64,
}

/// Teaching-sample covariance minus model covariance, per category, for
/// every variance and covariance entry.
pub fn variance_report(model: &CategoryModel, teach: &[TeachingSample]) -> Result<Vec<VarianceDelta>> {
    let means = teaching_means(model, teach)?;
    let n = teach.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            label: model.labels().first().map_or_else(String::new, |l| l.to_string()),
            required: 2,
            available: n,
        });
    }
    let d = model.dim();
    let mut out = Vec::new();
    for (j, p) in model.phonemes().iter().enumerate() {
        let mut cov = DMatrix::zeros(d, d);
        for s in teach {
            let r = s.points.row(j).transpose() - &means[j];
            cov += &r * r.transpose();
        }
        cov /= (n - 1) as f64;
        for a in 0..d {
            out.push(VarianceDelta {
                label: p.label.clone(),
                entry: format!("F{}", a + 1),
                is_variance: true,
                delta: cov[(a, a)] - p.cov[(a, a)],
            });
        }
        for a in 0..d {
            for b in a + 1..d {
                out.push(VarianceDelta {
                    label: p.label.clone(),
                    entry: format!("F{}F{}", a + 1, b + 1),
                    is_variance: false,
                    delta: cov[(a, b)] - p.cov[(a, b)],
                });
            }
        }
    }
    Ok(out)
}

fn triangle_area(p: [&DVector<f64>; 3], dims: &[usize], planar: bool) -> f64 {
    let u: Vec<f64> = dims.iter().map(|&c| p[1][c] - p[0][c]).collect();
    let v: Vec<f64> = dims.iter().map(|&c| p[2][c] - p[0][c]).collect();
    if planar {
        return 0.5 * (u[0] * v[1] - u[1] * v[0]).abs();
    }
    // Lagrange identity: |u x v|^2 = |u|^2 |v|^2 - (u.v)^2
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let vv: f64 = v.iter().map(|a| a * a).sum();
    let uv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    0.5 * (uu * vv - uv * uv).max(0.0).sqrt()
}

/// Area of the corner-vowel triangle for the model means and for the
/// pooled teaching means: `(area_ads, area_teach)`.
pub fn corner_triangle(model: &CategoryModel, teach: &[TeachingSample], formants: FormantSet) -> Result<(f64, f64)> {
    let idx = CORNER_VOWELS
        .iter()
        .map(|c| model.index_of(c).ok_or_else(|| Error::MissingCornerVowel(c.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let teach_means = teaching_means(model, teach)?;
    let dims = formants.dims(model.dim());
    let planar = dims.len() == 2;
    let ph = model.phonemes();
    let ads = triangle_area([&ph[idx[0]].mean, &ph[idx[1]].mean, &ph[idx[2]].mean], &dims, planar);
    let teach = triangle_area([&teach_means[idx[0]], &teach_means[idx[1]], &teach_means[idx[2]]], &dims, planar);
    Ok((ads, teach))
}

pub fn write_articulation_csv<W: Write>(reports: &[ArticulationReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["pair", "is_corner", "formants", "d_ads", "d_teach", "delta"])?;
    for r in reports {
        for p in &r.pairs {
            w.write_record([
                p.name(),
                p.is_corner.to_string(),
                r.formants.to_string(),
                p.d_ads.to_string(),
                p.d_teach.to_string(),
                p.delta.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::csv(e.to_string()))?;
    Ok(())
}

pub fn write_variance_csv<W: Write>(rows: &[VarianceDelta], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label", "entry", "delta"])?;
    for r in rows {
        w.write_record([r.label.clone(), r.entry.clone(), r.delta.to_string()])?;
    }
    w.flush().map_err(|e| Error::csv(e.to_string()))?;
    Ok(())
}

/// A named KS comparison for the report CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct KsRow {
    pub group_a: String,
    pub group_b: String,
    pub result: KsResult,
}

pub fn write_ks_csv<W: Write>(rows: &[KsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group_a", "group_b", "statistic", "p_value"])?;
    for r in rows {
        w.write_record([
            r.group_a.clone(),
            r.group_b.clone(),
            r.result.statistic.to_string(),
            r.result.p_value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::builtin_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn p(labels: &[usize]) -> Partition {
        Partition::from_indices(labels)
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&p(&[1, 2, 3, 3]), &p(&[1, 2, 3, 3])).unwrap().value, 1.0);
        assert_eq!(ari(&p(&[1, 1, 1, 1]), &p(&[1, 1, 2, 2])).unwrap().value, 0.0);
        let a = ari(&p(&[0, 0, 1, 1, 2]), &p(&[0, 1, 1, 2, 2])).unwrap().value;
        let b = ari(&p(&[0, 0, 1, 1, 2]), &p(&[5, 7, 7, 3, 3])).unwrap().value;
        assert_eq!(a, b);
        assert!(matches!(ari(&p(&[0, 1]), &p(&[0])), Err(Error::LengthMismatch { left: 2, right: 1 })));
        assert!(ari(&p(&[0]), &p(&[0])).is_err());
    }

    #[test]
    fn ari_contingency_counts_overlaps() {
        let s = ari(&p(&[0, 0, 1, 1]), &p(&[0, 1, 1, 1])).unwrap();
        assert_eq!(s.contingency, vec![((0, 0), 1), ((0, 1), 1), ((1, 1), 2)]);
    }

    #[test]
    fn ari_known_value() {
        // hand-computed: index 2, a 4, b 4, total 10 -> (2 - 1.6)/(4 - 1.6)
        let v = ari(&p(&[0, 0, 0, 1, 1]), &p(&[0, 0, 1, 1, 1])).unwrap().value;
        assert!((v - 0.4 / 2.4).abs() < 1e-15);
    }

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index(&p(&[0, 1, 1]), &p(&[0, 1, 1])).unwrap(), 1.0);
        assert!((rand_index(&p(&[1, 1, 2, 2]), &p(&[1, 2, 1, 2])).unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(rand_index(&p(&[0, 1, 2]), &p(&[2, 0, 1])).unwrap(), 1.0);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().statistic, 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[3.0, 4.0, 5.0]).unwrap().statistic, 1.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[1.5, 2.5]).unwrap().statistic, 0.5);
        assert!(matches!(ks_two_sample(&[], &[1.0]), Err(Error::EmptySample)));
        // ties across samples are evaluated at the shared point
        assert_eq!(ks_two_sample(&[1.0, 1.0], &[1.0, 2.0]).unwrap().statistic, 0.5);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // standard table values
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 5e-4);
        assert!((kolmogorov_sf(1.63) - 0.0098).abs() < 5e-4);
        assert!((kolmogorov_sf(0.5) - 0.9639).abs() < 5e-4);
        // the two series agree where they meet
        let lo = {
            let l: f64 = 1.18;
            let mut s = 0.0;
            for k in 1..100 {
                let k = k as f64;
                s += (-1f64).powf(k - 1.0) * (-2.0 * k * k * l * l).exp();
            }
            2.0 * s
        };
        assert!((kolmogorov_sf(1.179_999_999) - lo).abs() < 1e-9);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn cohens_d_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(cohens_d(&x, &x).unwrap(), 0.0);
        assert!(cohens_d(&[5.0, 6.0], &[1.0, 2.0]).unwrap() > 0.0);
        assert!(matches!(cohens_d(&[1.0, 1.0], &[1.0, 1.0]), Err(Error::ZeroVariance)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..20000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..20000).map(|_| StandardNormal.sample(&mut rng)).map(|v: f64| v - 1.0).collect();
        assert!((cohens_d(&a, &b).unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn mann_whitney_direction() {
        let hi = [5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let lo = [1.0, 2.0, 3.0, 4.0, 4.5, 3.5, 2.5, 1.5];
        let r = mann_whitney(&hi, &lo).unwrap();
        assert_eq!(r.u, 64.0);
        assert!(r.p_greater < 0.001);
        assert!(mann_whitney(&lo, &hi).unwrap().p_greater > 0.999);
        let same = mann_whitney(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(same.p_greater, 0.5);
    }

    fn replicated_means(model: &CategoryModel, copies: usize) -> Vec<TeachingSample> {
        let pts = DMatrix::from_fn(model.len(), model.dim(), |i, j| model.phonemes()[i].mean[j]);
        (0..copies)
            .map(|i| TeachingSample {
                chain_id: 0,
                iteration: i + 1,
                points: pts.clone(),
            })
            .collect()
    }

    #[test]
    fn articulation_of_model_means_is_flat() {
        let model = builtin_model();
        let teach = replicated_means(&model, 3);
        let r = articulation_report(&model, &teach, FormantSet::F123).unwrap();
        assert_eq!(r.pairs.len(), 66);
        assert!(r.pairs.iter().all(|p| p.delta.abs() < 1e-9 && p.d_ads >= 0.0));
        assert_eq!(r.pairs.iter().filter(|p| p.is_corner).count(), 3);
        let ai = r.pair("ɑ", "i").unwrap();
        let oracle = (480.89f64.powi(2) + 1230.13f64.powi(2) + 550.19f64.powi(2)).sqrt();
        assert!((ai.d_ads - oracle).abs() < 1e-9);
        assert!((ai.d_ads - 1430.8).abs() < 0.1);
        let (a, t) = corner_triangle(&model, &teach, FormantSet::F12).unwrap();
        assert!((a - t).abs() < 1e-6 && a > 0.0);
    }

    #[test]
    fn f12_distances_drop_f3() {
        let model = builtin_model();
        let teach = replicated_means(&model, 1);
        let r = articulation_report(&model, &teach, FormantSet::F12).unwrap();
        let ai = r.pair("i", "ɑ").unwrap();
        assert!((ai.d_ads - (480.89f64.powi(2) + 1230.13f64.powi(2)).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn triangle_areas() {
        let a = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![3.0, 0.0, 0.0]);
        let c = DVector::from_vec(vec![0.0, 4.0, 5.0]);
        assert_eq!(triangle_area([&a, &b, &c], &[0, 1], true), 6.0);
        assert!((triangle_area([&a, &b, &c], &[0, 1, 2], false) - 0.5 * 3.0 * 41f64.sqrt()).abs() < 1e-12);
        let d = DVector::from_vec(vec![6.0, 0.0, 0.0]);
        assert_eq!(triangle_area([&a, &b, &d], &[0, 1, 2], false), 0.0);
    }

    #[test]
    fn variance_report_null_case() {
        let model = builtin_model();
        let data = crate::phoneme::sample_ads(&model, 100_000, 11);
        let (k, d) = (model.len(), model.dim());
        let teach: Vec<TeachingSample> = (0..100_000)
            .map(|s| TeachingSample {
                chain_id: 0,
                iteration: s,
                points: DMatrix::from_fn(k, d, |j, c| data.points[(j * 100_000 + s, c)]),
            })
            .collect();
        let rows = variance_report(&model, &teach).unwrap();
        assert_eq!(rows.len(), 12 * 6);
        for r in &rows {
            let p = model.phoneme(&r.label).unwrap();
            let entry: Vec<usize> = r.entry[1..].split('F').map(|c| c.parse::<usize>().unwrap() - 1).collect();
            let (a, b) = (entry[0], *entry.last().unwrap());
            // standard error of a sample covariance entry
            let se = ((p.cov[(a, a)] * p.cov[(b, b)] + p.cov[(a, b)].powi(2)) / 100_000.0).sqrt();
            assert!(r.delta.abs() < 5.0 * se, "{} {}: {} (se {se})", r.label, r.entry, r.delta);
        }
        assert!(variance_report(&model, &teach[..1]).is_err());
    }

    #[test]
    fn missing_corner_vowel() {
        let model = builtin_model();
        let keep: Vec<_> = model.phonemes().iter().filter(|p| p.label != "u").cloned().collect();
        let small = CategoryModel::new(keep).unwrap();
        let teach = replicated_means(&small, 2);
        assert!(matches!(corner_triangle(&small, &teach, FormantSet::F12), Err(Error::MissingCornerVowel(v)) if v == "u"));
    }

    #[test]
    fn csv_writers_emit_headers() {
        let model = builtin_model();
        let teach = replicated_means(&model, 2);
        let r = articulation_report(&model, &teach, FormantSet::F123).unwrap();
        let mut buf = Vec::new();
        write_articulation_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("pair,is_corner,formants,d_ads,d_teach,delta\n"));
        assert_eq!(text.lines().count(), 67);
    }
}
