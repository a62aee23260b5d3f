//! Acceptance checks: one PASS/FAIL line per criterion.
//!
//! Exits 0 after printing the summary so the rest of the workspace tests
//! still run; set `ACCEPTANCE_STRICT=1` to exit non-zero on any failure.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use pedagogue::bayes::{crp_log_prob, log_marginal, log_sum_exp, NiwParams, Partition};
use pedagogue::eval::{ari, articulation_report, mann_whitney, sample_median, variance_report};
use pedagogue::exact::{enumerate_partitions, log_evidence, teaching_log_score, TeachingTarget};
use pedagogue::learners::{
    gmm_em_fit_with, run_benchmark, BenchConfig, Condition, EmConfig, Learner, TeachingPool,
};
use pedagogue::phoneme::{builtin_model, sample_ads, CategoryModel, FormantSet, PhonemeSpec};
use pedagogue::seeding::stream;
use pedagogue::teacher::{run_chains, ChainDiagnostics, ChainSchedule, TeachingSample};
use pedagogue::learners::DpgmmState;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn limit(elapsed: Duration, secs: u64) -> (bool, String) {
    (elapsed.as_secs_f64() < secs as f64, format!("{:.1}s (limit {secs}s)", elapsed.as_secs_f64()))
}

/// log P(X) by summing every partition's CRP prior times block marginals.
fn enumerated_log_evidence(x: &DMatrix<f64>, prior: &NiwParams, alpha: f64) -> f64 {
    let terms: Vec<f64> = enumerate_partitions(x.nrows())
        .unwrap()
        .map(|p| partition_log_joint(x, &p, prior, alpha))
        .collect();
    log_sum_exp(&terms)
}

fn partition_log_joint(x: &DMatrix<f64>, p: &Partition, prior: &NiwParams, alpha: f64) -> f64 {
    let mut lp = crp_log_prob(p, alpha);
    for block in p.blocks() {
        let sub = DMatrix::from_fn(block.len(), x.ncols(), |i, c| x[(block[i], c)]);
        lp += log_marginal(&sub, prior).unwrap();
    }
    lp
}

fn exact_evidence() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(101, &[]);
    let prior = NiwParams::new(DVector::zeros(2), 1.0, 3.0, DMatrix::identity(2, 2)).unwrap();
    let mut worst: f64 = 0.0;
    for n in [3, 5, 8] {
        for _ in 0..20 {
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-4.0..4.0));
            let alpha = rng.random_range(0.2..5.0);
            let fast = log_evidence(&x, &prior, alpha).unwrap();
            let brute = enumerated_log_evidence(&x, &prior, alpha);
            worst = worst.max(((fast - brute) / brute).abs());
        }
    }
    let (fast_enough, t) = limit(start.elapsed(), 5);
    outcome(worst < 1e-9 && fast_enough, format!("max relative error {worst:.2e}, {t}"))
}

fn crp_normalization() -> Outcome {
    // Bell numbers guard the enumeration the sum runs over
    let bell = [1usize, 1, 2, 5, 15, 52, 203, 877, 4140, 21147];
    let mut worst: f64 = 0.0;
    let mut counts_ok = true;
    for n in 1..=9 {
        counts_ok &= enumerate_partitions(n).unwrap().count() == bell[n];
        for alpha in [0.5, 1.0, 4.0] {
            let total: f64 = enumerate_partitions(n).unwrap().map(|p| crp_log_prob(&p, alpha).exp()).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    outcome(worst <= 1e-10 && counts_ok, format!("max |sum - 1| = {worst:.2e}, partition counts match Bell numbers: {counts_ok}"))
}

fn toy_model(means: &[f64]) -> CategoryModel {
    let phonemes = means
        .iter()
        .enumerate()
        .map(|(i, &m)| PhonemeSpec::new(format!("c{i}"), DVector::from_element(1, m), DMatrix::from_element(1, 1, 1.0), 1).unwrap())
        .collect();
    CategoryModel::new(phonemes).unwrap()
}

fn sampler_toy() -> Outcome {
    let start = Instant::now();
    let model = toy_model(&[-5.0, 5.0]);
    let schedule = ChainSchedule {
        chains: 5,
        burn_in: 1000,
        thin: 10,
        samples_per_chain: 10_000,
        proposal_sd: 1.0,
        autotune: true,
        seed: 3,
        ..ChainSchedule::default()
    };
    let (samples, _) = run_chains(&model, &schedule).unwrap();

    // histogram and grid oracle share the same bins over [-14, 14]^2
    let (lo, width, bins, sub) = (-14.0, 0.5, 56usize, 5usize);
    let target = TeachingTarget::from_model(&model);
    let mut grid = vec![0.0; bins * bins];
    let mut logs = Vec::with_capacity(bins * bins * sub * sub);
    for a in 0..bins * sub {
        for b in 0..bins * sub {
            let h = width / sub as f64;
            let x = DMatrix::from_row_slice(2, 1, &[lo + (a as f64 + 0.5) * h, lo + (b as f64 + 0.5) * h]);
            logs.push(teaching_log_score(&x, &target, model.prior(), model.alpha()).unwrap());
        }
    }
    let z = log_sum_exp(&logs);
    for a in 0..bins * sub {
        for b in 0..bins * sub {
            grid[(a / sub) * bins + b / sub] += (logs[a * bins * sub + b] - z).exp();
        }
    }
    let mut hist = vec![0.0; bins * bins];
    let mut outside = 0.0;
    let w = 1.0 / samples.len() as f64;
    for s in &samples {
        let ia = ((s.points[(0, 0)] - lo) / width).floor();
        let ib = ((s.points[(1, 0)] - lo) / width).floor();
        if ia < 0.0 || ib < 0.0 || ia >= bins as f64 || ib >= bins as f64 {
            outside += w;
        } else {
            hist[ia as usize * bins + ib as usize] += w;
        }
    }
    let tv = 0.5 * (hist.iter().zip(&grid).map(|(h, g)| (h - g).abs()).sum::<f64>() + outside);
    let (fast_enough, t) = limit(start.elapsed(), 120);
    outcome(
        tv < 0.05 && fast_enough && samples.len() == 50_000,
        format!("TV {tv:.4} over {} kept samples, {t}", samples.len()),
    )
}

fn dpgmm_posterior() -> Outcome {
    let mut rng = stream(404, &[]);
    let x = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-2.5..2.5));
    let prior = NiwParams::new(DVector::zeros(2), 0.5, 3.0, DMatrix::identity(2, 2)).unwrap();
    let alpha = 1.0;
    let parts: Vec<Partition> = enumerate_partitions(6).unwrap().collect();
    let logs: Vec<f64> = parts.iter().map(|p| partition_log_joint(&x, p, &prior, alpha)).collect();
    let z = log_sum_exp(&logs);

    let sweeps = 100_000;
    let mut state = DpgmmState::new(&x, &prior, alpha).unwrap();
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..sweeps {
        state.gibbs_sweep(&x, &mut rng).unwrap();
        *counts.entry(state.partition().assignment().to_vec()).or_default() += 1;
        state.split_merge(&x, &mut rng, 5).unwrap();
        *counts.entry(state.partition().assignment().to_vec()).or_default() += 1;
    }
    let draws = (2 * sweeps) as f64;
    let tv = 0.5
        * parts
            .iter()
            .zip(&logs)
            .map(|(p, l)| (*counts.get(p.assignment()).unwrap_or(&0) as f64 / draws - (l - z).exp()).abs())
            .sum::<f64>();
    outcome(tv < 0.02, format!("TV {tv:.4} over {sweeps} sweeps, {} partitions", parts.len()))
}

struct DeskRun {
    model: CategoryModel,
    samples: Vec<TeachingSample>,
    diagnostics: Vec<ChainDiagnostics>,
    elapsed: Duration,
}

fn desk_run() -> DeskRun {
    let model = builtin_model();
    let schedule = ChainSchedule {
        chains: 2,
        burn_in: 200,
        thin: 10,
        samples_per_chain: 200,
        autotune: true,
        seed: 0,
        ..ChainSchedule::default()
    };
    let start = Instant::now();
    let (samples, diagnostics) = run_chains(&model, &schedule).unwrap();
    DeskRun {
        model,
        samples,
        diagnostics,
        elapsed: start.elapsed(),
    }
}

fn corner_hyperarticulation(run: &DeskRun) -> Outcome {
    let report = articulation_report(&run.model, &run.samples, FormantSet::F123).unwrap();
    let corners: Vec<_> = report.pairs.iter().filter(|p| p.is_corner).collect();
    let all_up = corners.len() == 3 && corners.iter().all(|p| p.delta > 0.0);
    let (fast_enough, t) = limit(run.elapsed, 30 * 60);
    let deltas: Vec<String> = corners.iter().map(|p| format!("{} {:+.1}", p.name(), p.delta)).collect();
    outcome(all_up && fast_enough, format!("{} Hz, teaching run {t}", deltas.join(", ")))
}

fn variance_increase(run: &DeskRun) -> Outcome {
    let report = variance_report(&run.model, &run.samples).unwrap();
    let variances: Vec<_> = report.iter().filter(|v| v.is_variance).collect();
    let up = variances.iter().filter(|v| v.delta > 0.0).count();
    let frac = up as f64 / variances.len() as f64;
    outcome(
        variances.len() == 36 && frac >= 0.70,
        format!("{up}/{} variance deltas positive ({:.0}%, need 70%)", variances.len(), 100.0 * frac),
    )
}

fn projection_effect(run: &DeskRun) -> Outcome {
    let full = articulation_report(&run.model, &run.samples, FormantSet::F123).unwrap();
    let flat = articulation_report(&run.model, &run.samples, FormantSet::F12).unwrap();
    let mut changed = Vec::new();
    for p in full.pairs.iter().filter(|p| !p.is_corner) {
        let q = flat.pair(&p.a, &p.b).expect("same pairs in both reports");
        if p.delta.signum() != q.delta.signum() || q.delta.abs() < 0.5 * p.delta.abs() {
            changed.push(p.name());
        }
    }
    outcome(
        !changed.is_empty(),
        format!("{} non-corner pairs flip or shrink >50% (e.g. {})", changed.len(), changed.iter().take(4).cloned().collect::<Vec<_>>().join(", ")),
    )
}

fn learning_direction(run: &DeskRun) -> Outcome {
    let start = Instant::now();
    let pool = TeachingPool::from_samples(&run.model, &run.samples).unwrap();
    let config = BenchConfig {
        learners: vec![Learner::Dpgmm],
        conditions: vec![Condition::Ads, Condition::Teaching, Condition::Transfer],
        formants: vec![FormantSet::F123],
        per_phoneme: 100,
        sets: 20,
        seed: 0,
        ..BenchConfig::default()
    };
    let results = run_benchmark(&run.model, Some(&pool), &config).unwrap();
    let aris = |c: Condition| results.iter().filter(|r| r.condition == c).map(|r| r.ari).collect::<Vec<_>>();
    let (ads, teach, transfer) = (aris(Condition::Ads), aris(Condition::Teaching), aris(Condition::Transfer));
    let (m_ads, m_teach, m_transfer) = (sample_median(&ads), sample_median(&teach), sample_median(&transfer));
    let p_teach = mann_whitney(&teach, &ads).unwrap().p_greater;
    let p_transfer = mann_whitney(&transfer, &ads).unwrap().p_greater;
    let (fast_enough, t) = limit(start.elapsed(), 2 * 3600);
    outcome(
        m_teach > m_ads && m_transfer > m_ads && p_teach < 0.05 && p_transfer < 0.05 && fast_enough,
        format!(
            "median ARI ADS {m_ads:.3}, TEACHING {m_teach:.3} (p={p_teach:.1e}), TRANSFER {m_transfer:.3} (p={p_transfer:.1e}), {t}"
        ),
    )
}

fn em_monotone(run: &DeskRun) -> Outcome {
    let pool = TeachingPool::from_samples(&run.model, &run.samples).unwrap();
    let config = EmConfig {
        restarts: 1,
        ..EmConfig::default()
    };
    let mut rng = stream(909, &[]);
    let (mut fits, mut worst_drop) = (0, 0.0f64);
    for set in 0..6u64 {
        let ads = sample_ads(&run.model, 100, 5000 + set);
        let teach = pool.draw(100, &mut rng).unwrap();
        for data in [&ads.points, &teach.points, &ads.project(&[0, 1]).points] {
            for _ in 0..3 {
                let fit = gmm_em_fit_with(data, 12, &config, &mut rng).unwrap();
                for w in fit.loglik_trace.windows(2) {
                    worst_drop = worst_drop.max(w[0] - w[1]);
                }
                fits += 1;
            }
        }
    }
    outcome(worst_drop <= 1e-9, format!("{fits} fits, largest step decrease {worst_drop:.2e}"))
}

/// Adjusted Rand index from the pair-counting definition.
fn pair_count_ari(u: &[usize], v: &[usize]) -> f64 {
    let (mut both, mut in_u, mut in_v, mut total) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            let (a, b) = (u[i] == u[j], v[i] == v[j]);
            total += 1;
            in_u += a as i64;
            in_v += b as i64;
            both += (a && b) as i64;
        }
    }
    let numer = 2 * (both * total - in_u * in_v);
    let denom = (in_u + in_v) * total - 2 * in_u * in_v;
    if denom == 0 {
        1.0
    } else {
        numer as f64 / denom as f64
    }
}

fn ari_oracle() -> Outcome {
    let mut rng = stream(1010, &[]);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let u: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let v: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        if ari(&Partition::from_indices(&u), &Partition::from_indices(&v)).unwrap().value != pair_count_ari(&u, &v) {
            mismatches += 1;
        }
    }
    let same = ari(&Partition::from_indices(&[1, 2, 3, 3]), &Partition::from_indices(&[1, 2, 3, 3])).unwrap().value;
    outcome(mismatches == 0 && same == 1.0, format!("{mismatches}/200 mismatches, ari([1,2,3,3],[1,2,3,3]) = {same}"))
}

fn acceptance_rate(run: &DeskRun) -> Outcome {
    let rates: Vec<f64> = run.diagnostics.iter().map(|d| d.acceptance_rate).collect();
    let ok = !rates.is_empty() && rates.iter().all(|r| (0.15..=0.35).contains(r));
    let shown: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
    outcome(ok, format!("production rates [{}], proposal sd [{}]", shown.join(", "), run.diagnostics.iter().map(|d| format!("{:.1}", d.final_proposal_sd)).collect::<Vec<_>>().join(", ")))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pedagogue"))
        .args(args)
        .env_remove("PEDAGOGUE_THREADS")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism_pass(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let dir = |name: &str| root.join(name).to_string_lossy().into_owned();
    let teach_dir = dir("teach");
    cli(&["teach", "--chains", "2", "--burn", "20", "--thin", "2", "--samples", "20", "--autotune", "--pilot", "200", "--seed", "5", "--out", &teach_dir])?;
    let teaching = root.join("teach/teaching.csv").to_string_lossy().into_owned();
    cli(&[
        "bench", "--teaching", &teaching, "--sets", "2", "--per-phoneme", "8", "--sweeps", "20", "--formants", "f1f2f3,f1f2", "--seed", "5",
        "--out", &dir("bench"),
    ])?;
    cli(&["sweep", "--teaching", &teaching, "--sizes", "2,4", "--sets", "2", "--sweeps", "20", "--seed", "5", "--out", &dir("sweep")])?;
    ["teach/teaching.csv", "bench/bench.csv", "sweep/sweep.csv", "sweep/sweep_summary.csv"]
        .iter()
        .map(|f| std::fs::read(root.join(f)).map(|b| (f.to_string(), b)).map_err(|e| format!("{f}: {e}")))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let first = determinism_pass(&tmp.path().join("a"));
    let second = determinism_pass(&tmp.path().join("b"));
    match (first, second) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
            let sizes: Vec<String> = a.iter().map(|(f, bytes)| format!("{f} {}B", bytes.len())).collect();
            outcome(differing.is_empty(), format!("{} identical ({}); differing: {differing:?}", a.len() - differing.len(), sizes.join(", ")))
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("CLI run failed: {e}")),
    }
}

fn main() {
    println!("acceptance: running 12 criteria");
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!("{} {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    report(1, "exact evidence equals enumeration", exact_evidence());
    report(2, "CRP normalization", crp_normalization());
    report(3, "toy sampler matches grid density", sampler_toy());
    report(4, "DPGMM partition posterior", dpgmm_posterior());
    let run = desk_run();
    report(5, "corner vowels hyper-articulated", corner_hyperarticulation(&run));
    report(6, "variance increase", variance_increase(&run));
    report(7, "projection effect", projection_effect(&run));
    report(8, "DPGMM learning direction", learning_direction(&run));
    report(9, "EM monotonicity", em_monotone(&run));
    report(10, "ARI oracle", ari_oracle());
    report(11, "acceptance-rate tuning", acceptance_rate(&run));
    report(12, "CLI determinism", determinism());

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        if std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
