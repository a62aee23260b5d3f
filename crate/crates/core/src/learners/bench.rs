//! Benchmark protocols: learners run on ADS draws, on draws from a
//! teaching pool, and fitted on teaching data then applied to ADS.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dpgmm::{dpgmm_fit, DpgmmConfig};
use super::gmm::{gmm_em_fit_with, EmConfig};
use super::linear::{train_linear, LinearHyper, LinearKind};
use crate::bayes::Partition;
use crate::error::{Error, Result};
use crate::eval::ari;
use crate::phoneme::{sample_ads_with, CategoryModel, FormantSet, LabeledDataset, Provenance};
use crate::seeding::{derive_seed, stream};
use crate::teacher::TeachingSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Learner {
    Dpgmm,
    Gmm,
    Logit,
    Svm,
}

impl Learner {
    pub const ALL: [Learner; 4] = [Learner::Dpgmm, Learner::Gmm, Learner::Logit, Learner::Svm];

    pub fn name(self) -> &'static str {
        match self {
            Learner::Dpgmm => "DPGMM",
            Learner::Gmm => "GMM",
            Learner::Logit => "LOGIT",
            Learner::Svm => "SVM",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }

    pub fn is_supervised(self) -> bool {
        matches!(self, Learner::Logit | Learner::Svm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Ads,
    Teaching,
    Transfer,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Ads, Condition::Teaching, Condition::Transfer];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Ads => "ADS",
            Condition::Teaching => "TEACHING",
            Condition::Transfer => "TRANSFER",
        }
    }

    fn tag(self) -> u64 {
        self as u64
    }
}

macro_rules! display_from_name {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    )*};
}
display_from_name!(Learner, Condition);

impl FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dpgmm" => Ok(Learner::Dpgmm),
            "gmm" => Ok(Learner::Gmm),
            "logit" | "logistic" => Ok(Learner::Logit),
            "svm" => Ok(Learner::Svm),
            other => Err(Error::InvalidParameter(format!("unknown learner `{other}`"))),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ads" => Ok(Condition::Ads),
            "teaching" | "teach" => Ok(Condition::Teaching),
            "transfer" => Ok(Condition::Transfer),
            other => Err(Error::InvalidParameter(format!("unknown condition `{other}`"))),
        }
    }
}

/// Labeled teaching examples, pooled over samples.
#[derive(Debug, Clone)]
pub struct TeachingPool {
    points: DMatrix<f64>,
    by_label: Vec<Vec<usize>>,
    labels: Vec<String>,
}

impl TeachingPool {
    /// Row `j` of every sample is an example of category `j`.
    pub fn from_samples(model: &CategoryModel, samples: &[TeachingSample]) -> Result<Self> {
        let (k, d) = (model.len(), model.dim());
        let mut points = DMatrix::zeros(samples.len() * k, d);
        let mut by_label = vec![Vec::with_capacity(samples.len()); k];
        for (s, sample) in samples.iter().enumerate() {
            if sample.points.nrows() != k || sample.points.ncols() != d {
                return Err(Error::DimensionMismatch {
                    expected: k * d,
                    found: sample.points.len(),
                });
            }
            for j in 0..k {
                let row = s * k + j;
                points.row_mut(row).copy_from(&sample.points.row(j));
                by_label[j].push(row);
            }
        }
        Ok(TeachingPool {
            points,
            by_label,
            labels: model.labels().iter().map(|l| l.to_string()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    /// Smallest number of examples available for any category.
    pub fn min_per_label(&self) -> usize {
        self.by_label.iter().map(Vec::len).min().unwrap_or(0)
    }

    fn check(&self, required: usize) -> Result<()> {
        for (label, rows) in self.labels.iter().zip(&self.by_label) {
            if rows.len() < required {
                return Err(Error::InsufficientPool {
                    label: label.clone(),
                    required,
                    available: rows.len(),
                });
            }
        }
        Ok(())
    }

    /// `count` disjoint draws of `per_label` examples per category, each
    /// without replacement; phoneme-major within a draw.
    pub fn draw_disjoint<R: Rng + ?Sized>(&self, per_label: usize, count: usize, rng: &mut R) -> Result<Vec<LabeledDataset>> {
        self.check(per_label * count)?;
        let d = self.points.ncols();
        let k = self.by_label.len();
        let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(k * per_label); count];
        for pool in &self.by_label {
            let chosen = sample(rng, pool.len(), per_label * count);
            for (slot, i) in chosen.iter().enumerate() {
                rows[slot / per_label].push(pool[i]);
            }
        }
        Ok(rows
            .into_iter()
            .map(|r| LabeledDataset {
                points: DMatrix::from_fn(r.len(), d, |i, c| self.points[(r[i], c)]),
                labels: (0..k).flat_map(|j| std::iter::repeat_n(j, per_label)).collect(),
                provenance: Provenance::Teaching,
            })
            .collect())
    }

    pub fn draw<R: Rng + ?Sized>(&self, per_label: usize, rng: &mut R) -> Result<LabeledDataset> {
        Ok(self.draw_disjoint(per_label, 1, rng)?.pop().expect("one draw"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub learners: Vec<Learner>,
    pub conditions: Vec<Condition>,
    pub formants: Vec<FormantSet>,
    pub per_phoneme: usize,
    pub sets: usize,
    pub seed: u64,
    pub dpgmm: DpgmmConfig,
    pub em: EmConfig,
    pub linear: LinearHyper,
    pub record_wall_time: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            learners: Learner::ALL.to_vec(),
            conditions: Condition::ALL.to_vec(),
            formants: vec![FormantSet::F123],
            per_phoneme: 500,
            sets: 500,
            seed: 0,
            dpgmm: DpgmmConfig::default(),
            em: EmConfig::default(),
            linear: LinearHyper::default(),
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub learner: Learner,
    pub condition: Condition,
    pub formants: FormantSet,
    pub per_phoneme: usize,
    pub dataset_id: usize,
    pub seed: u64,
    pub ari: f64,
    pub n_blocks_found: usize,
    pub wall_ms: Option<f64>,
}

const DATA_TAG: u64 = 0xDA7A;
const LEARN_TAG: u64 = 0x1EA2;

/// Seed of the data streams for one dataset index: shared by every
/// learner, so learners are compared on the same draws.
pub fn dataset_seed(master: u64, per_phoneme: usize, dataset_id: usize) -> u64 {
    derive_seed(master, &[DATA_TAG, per_phoneme as u64, dataset_id as u64])
}

pub fn job_seed(master: u64, learner: Learner, condition: Condition, formants: FormantSet, per_phoneme: usize, dataset_id: usize) -> u64 {
    derive_seed(
        master,
        &[LEARN_TAG, learner.tag(), condition.tag(), formants as u64, per_phoneme as u64, dataset_id as u64],
    )
}

struct Job {
    learner: Learner,
    condition: Condition,
    formants: FormantSet,
    dataset_id: usize,
}

/// Training data and the labeled set the prediction is scored on.
struct Task {
    train: LabeledDataset,
    eval: Option<LabeledDataset>,
}

fn draw_task(
    model: &CategoryModel,
    pool: Option<&TeachingPool>,
    learner: Learner,
    condition: Condition,
    per_phoneme: usize,
    data_seed: u64,
) -> Result<Task> {
    let mut ads_rng = stream(data_seed, &[Condition::Ads.tag()]);
    let mut pool_rng = stream(data_seed, &[Condition::Teaching.tag()]);
    let need_pool = || pool.ok_or(Error::InsufficientPool {
        label: "teaching pool".into(),
        required: per_phoneme,
        available: 0,
    });
    let supervised = learner.is_supervised();
    Ok(match condition {
        Condition::Ads => {
            let first = sample_ads_with(model, per_phoneme, &mut ads_rng);
            let eval = supervised.then(|| sample_ads_with(model, per_phoneme, &mut ads_rng));
            Task { train: first, eval }
        }
        Condition::Teaching => {
            let pool = need_pool()?;
            if supervised {
                let mut draws = pool.draw_disjoint(per_phoneme, 2, &mut pool_rng)?;
                let eval = draws.pop();
                Task {
                    train: draws.pop().expect("two draws"),
                    eval,
                }
            } else {
                Task {
                    train: pool.draw(per_phoneme, &mut pool_rng)?,
                    eval: None,
                }
            }
        }
        Condition::Transfer => {
            let train = need_pool()?.draw(per_phoneme, &mut pool_rng)?;
            let eval = sample_ads_with(model, per_phoneme, &mut ads_rng);
            Task { train, eval: Some(eval) }
        }
    })
}

fn run_learner(model: &CategoryModel, learner: Learner, task: &Task, config: &BenchConfig, rng: &mut ChaCha8Rng) -> Result<(Partition, Vec<usize>)> {
    let eval = task.eval.as_ref().unwrap_or(&task.train);
    let predicted = match learner {
        Learner::Dpgmm => {
            let state = dpgmm_fit(&task.train.points, model.prior(), model.alpha(), &config.dpgmm, rng)?;
            match &task.eval {
                None => state.partition(),
                Some(e) => state.classify(&e.points, config.dpgmm.transfer, rng)?,
            }
        }
        Learner::Gmm => {
            let fit = gmm_em_fit_with(&task.train.points, model.len(), &config.em, rng)?;
            fit.classify(&eval.points)?
        }
        Learner::Logit | Learner::Svm => {
            let kind = if learner == Learner::Logit { LinearKind::Logit } else { LinearKind::Svm };
            let hyper = LinearHyper {
                seed: rng.random(),
                ..config.linear.clone()
            };
            train_linear(kind, &task.train.points, &task.train.labels, &hyper)?.classify(&eval.points)?
        }
    };
    Ok((predicted, eval.labels.clone()))
}

/// Every (learner, condition, formant set, dataset) job, run in parallel
/// and returned in that nested order.
pub fn run_benchmark(model: &CategoryModel, pool: Option<&TeachingPool>, config: &BenchConfig) -> Result<Vec<BenchResult>> {
    if config.per_phoneme == 0 {
        return Err(Error::InvalidParameter("per_phoneme must be positive".into()));
    }
    let needs_pool = config.conditions.iter().any(|&c| c != Condition::Ads);
    if needs_pool {
        let pool = pool.filter(|p| !p.is_empty()).ok_or_else(|| Error::InsufficientPool {
            label: "teaching pool".into(),
            required: config.per_phoneme,
            available: 0,
        })?;
        let worst = config
            .conditions
            .iter()
            .filter(|&&c| c != Condition::Ads)
            .map(|&c| {
                let two = c == Condition::Teaching && config.learners.iter().any(|l| l.is_supervised());
                config.per_phoneme * if two { 2 } else { 1 }
            })
            .max()
            .unwrap_or(0);
        pool.check(worst)?;
    }
    let views: Vec<(FormantSet, CategoryModel, Option<TeachingPool>)> = config
        .formants
        .iter()
        .map(|&f| {
            let m = f.apply(model)?;
            let p = pool.map(|p| {
                let dims = f.dims(model.dim());
                TeachingPool {
                    points: DMatrix::from_fn(p.points.nrows(), dims.len(), |i, c| p.points[(i, dims[c])]),
                    by_label: p.by_label.clone(),
                    labels: p.labels.clone(),
                }
            });
            Ok((f, m, p))
        })
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for &learner in &config.learners {
        for &condition in &config.conditions {
            for &formants in &config.formants {
                for dataset_id in 0..config.sets {
                    jobs.push(Job {
                        learner,
                        condition,
                        formants,
                        dataset_id,
                    });
                }
            }
        }
    }
    jobs.par_iter()
        .map(|job| {
            let (_, view, view_pool) = views.iter().find(|v| v.0 == job.formants).expect("view per formant set");
            let seed = job_seed(config.seed, job.learner, job.condition, job.formants, config.per_phoneme, job.dataset_id);
            let data_seed = dataset_seed(config.seed, config.per_phoneme, job.dataset_id);
            let start = Instant::now();
            let task = draw_task(view, view_pool.as_ref(), job.learner, job.condition, config.per_phoneme, data_seed)?;
            let mut rng = stream(seed, &[]);
            let (predicted, truth) = run_learner(view, job.learner, &task, config, &mut rng)?;
            let score = ari(&predicted, &Partition::from_indices(&truth))?;
            Ok(BenchResult {
                learner: job.learner,
                condition: job.condition,
                formants: job.formants,
                per_phoneme: config.per_phoneme,
                dataset_id: job.dataset_id,
                seed,
                ari: score.value,
                n_blocks_found: predicted.n_blocks(),
                wall_ms: config.record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3),
            })
        })
        .collect()
}

pub const BENCH_HEADER: [&str; 9] = [
    "learner",
    "condition",
    "formants",
    "per_phoneme",
    "dataset_id",
    "seed",
    "ari",
    "n_blocks_found",
    "wall_ms",
];

/// Write results; `wall_ms` is left empty when not recorded so reruns are
/// byte-identical.
pub fn write_bench_csv<W: Write>(results: &[BenchResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(BENCH_HEADER)?;
    for r in results {
        w.write_record([
            r.learner.to_string(),
            r.condition.to_string(),
            r.formants.to_string(),
            r.per_phoneme.to_string(),
            r.dataset_id.to_string(),
            r.seed.to_string(),
            r.ari.to_string(),
            r.n_blocks_found.to_string(),
            r.wall_ms.map(|v| format!("{v:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::csv(e.to_string()))?;
    Ok(())
}

pub fn load_bench_csv(path: &std::path::Path) -> Result<Vec<BenchResult>> {
    let file = crate::phoneme::open(path)?;
    read_bench_csv(std::io::BufReader::new(file)).map_err(|e| e.with_path(path))
}

pub fn read_bench_csv<R: Read>(reader: R) -> Result<Vec<BenchResult>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(BENCH_HEADER) {
        return Err(Error::csv(format!("unexpected benchmark header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line());
        let bad = |what: &str| Error::MalformedCsv {
            path: None,
            line,
            message: format!("bad {what}"),
        };
        out.push(BenchResult {
            learner: rec[0].parse()?,
            condition: rec[1].parse()?,
            formants: rec[2].parse()?,
            per_phoneme: rec[3].parse().map_err(|_| bad("per_phoneme"))?,
            dataset_id: rec[4].parse().map_err(|_| bad("dataset_id"))?,
            seed: rec[5].parse().map_err(|_| bad("seed"))?,
            ari: rec[6].parse().map_err(|_| bad("ari"))?,
            n_blocks_found: rec[7].parse().map_err(|_| bad("n_blocks_found"))?,
            wall_ms: if rec[8].is_empty() { None } else { Some(rec[8].parse().map_err(|_| bad("wall_ms"))?) },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::builtin_model;

    fn fake_pool(model: &CategoryModel, n: usize) -> TeachingPool {
        let ads = crate::phoneme::sample_ads(model, n, 99);
        let k = model.len();
        let samples: Vec<TeachingSample> = (0..n)
            .map(|s| TeachingSample {
                chain_id: 0,
                iteration: s,
                points: DMatrix::from_fn(k, model.dim(), |j, c| ads.points[(j * n + s, c)]),
            })
            .collect();
        TeachingPool::from_samples(model, &samples).unwrap()
    }

    #[test]
    fn smoke_dpgmm_single_set() {
        let model = builtin_model();
        let config = BenchConfig {
            learners: vec![Learner::Dpgmm],
            conditions: vec![Condition::Ads],
            per_phoneme: 2,
            sets: 1,
            dpgmm: DpgmmConfig {
                sweeps: 5,
                ..DpgmmConfig::default()
            },
            ..BenchConfig::default()
        };
        let r = run_benchmark(&model, None, &config).unwrap();
        assert_eq!(r.len(), 1);
        assert!((-1.0..=1.0).contains(&r[0].ari));
    }

    #[test]
    fn pool_shortfall_reports_counts() {
        let model = builtin_model();
        let pool = fake_pool(&model, 3);
        let config = BenchConfig {
            learners: vec![Learner::Logit],
            conditions: vec![Condition::Teaching],
            per_phoneme: 2,
            sets: 1,
            ..BenchConfig::default()
        };
        match run_benchmark(&model, Some(&pool), &config) {
            Err(Error::InsufficientPool { required: 4, available: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            run_benchmark(&model, None, &config),
            Err(Error::InsufficientPool { available: 0, .. })
        ));
    }

    #[test]
    fn disjoint_draws_share_no_rows() {
        let model = builtin_model();
        let pool = fake_pool(&model, 10);
        let mut rng = stream(1, &[]);
        let draws = pool.draw_disjoint(5, 2, &mut rng).unwrap();
        assert_eq!(draws[0].len(), 60);
        for i in 0..60 {
            for j in 0..60 {
                assert_ne!(draws[0].points.row(i), draws[1].points.row(j));
            }
        }
        assert_eq!(draws[0].labels[5], 1);
    }

    #[test]
    fn all_cells_run_and_are_deterministic() {
        let model = builtin_model();
        let pool = fake_pool(&model, 40);
        let config = BenchConfig {
            conditions: Condition::ALL.to_vec(),
            formants: vec![FormantSet::F123, FormantSet::F12],
            per_phoneme: 10,
            sets: 2,
            seed: 5,
            dpgmm: DpgmmConfig {
                sweeps: 10,
                ..DpgmmConfig::default()
            },
            ..BenchConfig::default()
        };
        let a = run_benchmark(&model, Some(&pool), &config).unwrap();
        assert_eq!(a.len(), 4 * 3 * 2 * 2);
        let b = run_benchmark(&model, Some(&pool), &config).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| (-1.0..=1.0).contains(&r.ari) && r.wall_ms.is_none()));
        let mut buf = Vec::new();
        write_bench_csv(&a, &mut buf).unwrap();
        assert_eq!(read_bench_csv(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn names_parse_back() {
        for l in Learner::ALL {
            assert_eq!(l.to_string().parse::<Learner>().unwrap(), l);
        }
        for c in Condition::ALL {
            assert_eq!(c.to_string().parse::<Condition>().unwrap(), c);
        }
        assert!("knn".parse::<Learner>().is_err());
    }
}
