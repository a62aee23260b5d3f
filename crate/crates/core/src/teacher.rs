//! Metropolis sampling of teaching datasets.
//!
//! A state is one point per category (`k x d`). Proposals add isotropic
//! Gaussian noise, which is symmetric, so acceptance depends only on the
//! difference of teaching scores. Chains run independently on streams split
//! from a master seed and are merged in `(chain, iteration)` order.

use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::TeachingScorer;
use crate::linalg::SpdFactor;
use crate::phoneme::CategoryModel;
use crate::seeding;

/// Which coordinates a proposal perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum UpdateMode {
    /// Every coordinate of every point.
    #[default]
    AllPoints,
    /// Every coordinate of one uniformly chosen point.
    SinglePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSchedule {
    pub chains: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub samples_per_chain: usize,
    /// Proposal noise in Hz; a variance in Hz² when `noise_is_variance`.
    pub proposal_sd: f64,
    pub noise_is_variance: bool,
    pub autotune: bool,
    pub target_rate: f64,
    pub pilot_iters: usize,
    pub update: UpdateMode,
    pub seed: u64,
}

impl Default for ChainSchedule {
    fn default() -> Self {
        ChainSchedule {
            chains: 10,
            burn_in: 500,
            thin: 20,
            samples_per_chain: 1000,
            proposal_sd: 40.0,
            noise_is_variance: false,
            autotune: false,
            target_rate: 0.23,
            pilot_iters: 1000,
            update: UpdateMode::AllPoints,
            seed: 0,
        }
    }
}

impl ChainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.chains == 0 || self.thin == 0 || self.samples_per_chain == 0 {
            return bad("chains, thin and samples must all be >= 1");
        }
        if !(self.proposal_sd > 0.0) || !self.proposal_sd.is_finite() {
            return bad("proposal sd must be positive");
        }
        if self.autotune && !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return bad("target acceptance rate must lie in (0, 1)");
        }
        if self.autotune && self.pilot_iters == 0 {
            return bad("autotune needs at least one pilot iteration");
        }
        Ok(())
    }

    /// Proposal standard deviation in Hz.
    pub fn step_sd(&self) -> f64 {
        if self.noise_is_variance {
            self.proposal_sd.sqrt()
        } else {
            self.proposal_sd
        }
    }

    /// Total post-pilot iterations per chain.
    pub fn iterations(&self) -> usize {
        self.burn_in + self.thin * self.samples_per_chain
    }
}

/// One kept state: row `i` is the example for category `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeachingSample {
    pub chain_id: usize,
    pub iteration: usize,
    pub points: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainDiagnostics {
    pub chain_id: usize,
    pub seed: u64,
    /// Acceptance over burn-in and sampling iterations (pilot excluded).
    pub acceptance_rate: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub final_proposal_sd: f64,
    pub pilot_acceptance_rate: Option<f64>,
    pub numeric_failures: usize,
    pub wall_secs: f64,
    pub score_trace: Vec<f64>,
}

/// Initial state: each row drawn from `N(mu0, Lambda0 / kappa0)`.
pub fn init_state<R: Rng + ?Sized>(model: &CategoryModel, rng: &mut R) -> TeachingSample {
    let prior = model.prior();
    let d = model.dim();
    let cov = &prior.lambda0 / prior.kappa0;
    let factor = SpdFactor::new(&cov, "prior scale").expect("prior scale is SPD");
    let mut points = DMatrix::zeros(model.len(), d);
    let mut z = vec![0.0; d];
    for i in 0..model.len() {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let draw = factor.mul_lower(&z);
        for c in 0..d {
            points[(i, c)] = prior.mu0[c] + draw[c];
        }
    }
    TeachingSample {
        chain_id: 0,
        iteration: 0,
        points,
    }
}

/// `X + E` with `E` i.i.d. `N(0, sd^2)` in every coordinate.
pub fn propose<R: Rng + ?Sized>(x: &DMatrix<f64>, sd: f64, rng: &mut R) -> DMatrix<f64> {
    x.map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
}

/// Perturb only one uniformly chosen row.
pub fn propose_single<R: Rng + ?Sized>(x: &DMatrix<f64>, sd: f64, rng: &mut R) -> DMatrix<f64> {
    let mut out = x.clone();
    let row = rng.random_range(0..x.nrows());
    for c in 0..x.ncols() {
        out[(row, c)] += sd * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

#[derive(Debug, Clone)]
pub struct MhStep {
    pub points: DMatrix<f64>,
    pub score: f64,
    pub accepted: bool,
    /// The proposal's score could not be computed and was treated as `-inf`.
    pub numeric_failure: bool,
}

/// One Metropolis transition. Accepts with probability
/// `min(1, exp(score(X') - score(X)))`.
pub fn mh_step<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    score_x: f64,
    scorer: &mut TeachingScorer,
    sd: f64,
    update: UpdateMode,
    rng: &mut R,
) -> MhStep {
    let proposal = match update {
        UpdateMode::AllPoints => propose(x, sd, rng),
        UpdateMode::SinglePoint => propose_single(x, sd, rng),
    };
    let (score, numeric_failure) = match scorer.score(&proposal) {
        Ok(s) if !s.is_nan() => (s, false),
        Ok(_) => (f64::NEG_INFINITY, true),
        Err(e) => {
            warn!("teaching score failed, rejecting proposal: {e}");
            (f64::NEG_INFINITY, true)
        }
    };
    let log_ratio = score - score_x;
    let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accept {
        MhStep {
            points: proposal,
            score,
            accepted: true,
            numeric_failure,
        }
    } else {
        MhStep {
            points: x.clone(),
            score: score_x,
            accepted: false,
            numeric_failure,
        }
    }
}

/// Result of a proposal-tuning pilot run.
#[derive(Debug, Clone)]
pub struct TuneReport {
    /// Fixed sd for production sampling.
    pub sd: f64,
    /// Acceptance over the second half of the pilot.
    pub rate: f64,
    /// Proposal sd before every pilot iteration.
    pub sd_trace: Vec<f64>,
    pub accepted_trace: Vec<bool>,
    pub points: DMatrix<f64>,
    pub score: f64,
}

/// Robbins–Monro adaptation of `ln sd` toward a target acceptance rate.
///
/// Adapts only during the pilot; the returned sd is the geometric mean over
/// the second half of the pilot and stays fixed afterwards. Fails if the
/// second-half acceptance rate is outside `target ± 0.15`.
pub fn tune_proposal<R: Rng + ?Sized>(
    scorer: &mut TeachingScorer,
    points: DMatrix<f64>,
    score: f64,
    initial_sd: f64,
    target_rate: f64,
    pilot_iters: usize,
    update: UpdateMode,
    rng: &mut R,
) -> Result<TuneReport> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::InvalidParameter(format!("target rate {target_rate} not in (0, 1)")));
    }
    if pilot_iters == 0 || !(initial_sd > 0.0) {
        return Err(Error::InvalidParameter("pilot needs iterations and a positive sd".into()));
    }
    let mut log_sd = initial_sd.ln();
    let mut x = points;
    let mut s = score;
    let mut sd_trace = Vec::with_capacity(pilot_iters);
    let mut accepted_trace = Vec::with_capacity(pilot_iters);
    let half = pilot_iters / 2;
    let (mut late_accepts, mut late_log_sd) = (0usize, 0.0);
    for t in 0..pilot_iters {
        let sd = log_sd.exp();
        sd_trace.push(sd);
        let step = mh_step(&x, s, scorer, sd, update, rng);
        accepted_trace.push(step.accepted);
        if t >= half {
            late_log_sd += log_sd;
            late_accepts += usize::from(step.accepted);
        }
        let gain = 10.0 / (t as f64 + 10.0).powf(0.6);
        log_sd += gain * (f64::from(u8::from(step.accepted)) - target_rate);
        x = step.points;
        s = step.score;
    }
    let late = (pilot_iters - half) as f64;
    let rate = late_accepts as f64 / late;
    let sd = (late_log_sd / late).exp();
    let (low, high) = (target_rate - 0.15, target_rate + 0.15);
    if rate < low || rate > high {
        return Err(Error::TuningFailed { rate, low, high, sd });
    }
    Ok(TuneReport {
        sd,
        rate,
        sd_trace,
        accepted_trace,
        points: x,
        score: s,
    })
}

/// Tune the proposal sd on `model` from a fresh initial state.
pub fn autotune_sd<R: Rng + ?Sized>(
    model: &CategoryModel,
    target_rate: f64,
    pilot_iters: usize,
    initial_sd: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut scorer = TeachingScorer::from_model(model)?;
    let init = init_state(model, rng);
    let score = scorer.score(&init.points)?;
    let report = tune_proposal(
        &mut scorer,
        init.points,
        score,
        initial_sd,
        target_rate,
        pilot_iters,
        UpdateMode::AllPoints,
        rng,
    )?;
    Ok(report.sd)
}

/// Seed of chain `chain_id`'s private stream under `master`.
pub fn chain_seed(master: u64, chain_id: usize) -> u64 {
    seeding::derive_seed(master, &[chain_id as u64])
}

/// Run one chain: optional pilot tuning, burn-in, then every `thin`-th
/// iteration kept. Thinning counts proposals, accepted or not.
pub fn run_chain(
    model: &CategoryModel,
    schedule: &ChainSchedule,
    chain_id: usize,
) -> Result<(Vec<TeachingSample>, ChainDiagnostics)> {
    let started = Instant::now();
    let seed = chain_seed(schedule.seed, chain_id);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut scorer = TeachingScorer::from_model(model)?;
    let mut x = init_state(model, &mut rng).points;
    let mut score = scorer.score(&x)?;
    let mut sd = schedule.step_sd();
    let mut pilot_rate = None;
    if schedule.autotune {
        let report = tune_proposal(
            &mut scorer,
            x,
            score,
            sd,
            schedule.target_rate,
            schedule.pilot_iters,
            schedule.update,
            &mut rng,
        )?;
        sd = report.sd;
        pilot_rate = Some(report.rate);
        x = report.points;
        score = report.score;
    }
    let mut samples = Vec::with_capacity(schedule.samples_per_chain);
    let mut trace = Vec::with_capacity(schedule.samples_per_chain);
    let (mut accepted, mut rejected, mut failures) = (0, 0, 0);
    for t in 1..=schedule.iterations() {
        let step = mh_step(&x, score, &mut scorer, sd, schedule.update, &mut rng);
        if step.accepted {
            accepted += 1;
        } else {
            rejected += 1;
        }
        failures += usize::from(step.numeric_failure);
        x = step.points;
        score = step.score;
        if t > schedule.burn_in && (t - schedule.burn_in) % schedule.thin == 0 {
            samples.push(TeachingSample {
                chain_id,
                iteration: t,
                points: x.clone(),
            });
            trace.push(score);
        }
    }
    let diagnostics = ChainDiagnostics {
        chain_id,
        seed,
        acceptance_rate: accepted as f64 / (accepted + rejected) as f64,
        accepted,
        rejected,
        final_proposal_sd: sd,
        pilot_acceptance_rate: pilot_rate,
        numeric_failures: failures,
        wall_secs: started.elapsed().as_secs_f64(),
        score_trace: trace,
    };
    Ok((samples, diagnostics))
}

/// Run every chain of `schedule` concurrently; samples come back ordered
/// by chain, then iteration.
pub fn run_chains(
    model: &CategoryModel,
    schedule: &ChainSchedule,
) -> Result<(Vec<TeachingSample>, Vec<ChainDiagnostics>)> {
    schedule.validate()?;
    let per_chain: Vec<_> = (0..schedule.chains)
        .into_par_iter()
        .map(|c| run_chain(model, schedule, c))
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(schedule.chains * schedule.samples_per_chain);
    let mut diagnostics = Vec::with_capacity(schedule.chains);
    for (s, d) in per_chain {
        samples.extend(s);
        diagnostics.push(d);
    }
    Ok((samples, diagnostics))
}

/// Write `chain,iter,label,f1,..,fd`, one row per category per sample.
pub fn write_samples<W: Write>(model: &CategoryModel, samples: &[TeachingSample], writer: W) -> Result<()> {
    let d = model.dim();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["chain".to_string(), "iter".to_string(), "label".to_string()];
    header.extend((1..=d).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for s in samples {
        for (i, p) in model.phonemes().iter().enumerate() {
            let mut row = vec![s.chain_id.to_string(), s.iteration.to_string(), p.label.clone()];
            row.extend((0..d).map(|c| s.points[(i, c)].to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<samples>".into(),
        source,
    })
}

pub fn load_samples(model: &CategoryModel, path: &Path) -> Result<Vec<TeachingSample>> {
    let file = crate::phoneme::open(path)?;
    read_samples(model, BufReader::new(file)).map_err(|e| e.with_path(path))
}

/// Read samples written by [`write_samples`]. Consecutive rows sharing
/// `(chain, iter)` form one sample and must cover every category once.
pub fn read_samples<R: Read>(model: &CategoryModel, reader: R) -> Result<Vec<TeachingSample>> {
    let d = model.dim();
    let k = model.len();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut expected = vec!["chain".to_string(), "iter".to_string(), "label".to_string()];
    expected.extend((1..=d).map(|i| format!("f{i}")));
    if header != expected {
        return Err(Error::csv(format!(
            "expected header `{}`, found `{}`",
            expected.join(","),
            header.join(",")
        )));
    }
    let mut out: Vec<TeachingSample> = Vec::new();
    let mut filled: Vec<bool> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line());
        let bad = |message: String| Error::MalformedCsv {
            path: None,
            line,
            message,
        };
        let chain: usize = record[0].parse().map_err(|e| bad(format!("chain: {e}")))?;
        let iter: usize = record[1].parse().map_err(|e| bad(format!("iter: {e}")))?;
        let row = model
            .index_of(&record[2])
            .ok_or_else(|| bad(format!("unknown label `{}`", &record[2])))?;
        let starts_new = match out.last() {
            Some(s) => s.chain_id != chain || s.iteration != iter,
            None => true,
        };
        if starts_new {
            if !filled.is_empty() && filled.iter().any(|f| !f) {
                return Err(bad("previous sample is missing categories".into()));
            }
            out.push(TeachingSample {
                chain_id: chain,
                iteration: iter,
                points: DMatrix::zeros(k, d),
            });
            filled = vec![false; k];
        }
        if std::mem::replace(&mut filled[row], true) {
            return Err(bad(format!("duplicate label `{}` in sample", &record[2])));
        }
        let sample = out.last_mut().expect("pushed above");
        for c in 0..d {
            sample.points[(row, c)] = record[3 + c].parse().map_err(|e| bad(format!("f{}: {e}", c + 1)))?;
        }
    }
    if filled.iter().any(|f| !f) {
        return Err(Error::csv("last sample is missing categories"));
    }
    Ok(out)
}
