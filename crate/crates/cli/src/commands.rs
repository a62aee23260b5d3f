use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use pedagogue::bayes::{crp_log_prob, log_marginal, log_sum_exp, NiwParams, Partition};
use pedagogue::eval::{
    ari, articulation_report, corner_triangle, ks_two_sample, sample_median, variance_report, write_articulation_csv,
    write_ks_csv, write_variance_csv, KsRow,
};
use pedagogue::exact::{enumerate_partitions, log_evidence};
use pedagogue::learners::bench::{load_bench_csv, write_bench_csv};
use pedagogue::learners::{
    run_benchmark, BenchConfig, BenchResult, Condition, DpgmmConfig, DpgmmState, EmConfig, Learner, LinearHyper,
    TeachingPool, TransferMode,
};
use pedagogue::phoneme::{builtin_model, load_model, sample_ads, write_dataset, CategoryModel, FormantSet};
use pedagogue::seeding::stream;
use pedagogue::teacher::{chain_seed, load_samples, run_chains, write_samples, ChainSchedule, TeachingSample, UpdateMode};
use rand::Rng;

use crate::config::{CliError, RunDir};
use crate::svg;
use crate::{AdsArgs, BenchArgs, LearnerArgs, ModelArgs, ReportArgs, SweepArgs, TeachArgs, TransferArg, UpdateArg, ValidateArgs};

fn load(args: &ModelArgs) -> Result<CategoryModel, CliError> {
    let model = if args.model == "builtin" {
        builtin_model()
    } else {
        load_model(Path::new(&args.model))?
    };
    Ok(match args.alpha {
        Some(a) => model.with_alpha(a)?,
        None => model,
    })
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> pedagogue::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn parse_list<T: std::str::FromStr<Err = pedagogue::Error>>(items: &[String]) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for s in items {
        out.push(s.trim().parse::<T>()?);
    }
    if out.is_empty() {
        return Err(CliError::config("empty list"));
    }
    Ok(out)
}

pub fn teach(name: &str, args: &TeachArgs) -> Result<(), CliError> {
    let model = load(&args.model)?;
    let schedule = ChainSchedule {
        chains: args.chains,
        burn_in: args.burn,
        thin: args.thin,
        samples_per_chain: args.samples,
        proposal_sd: args.proposal_sd,
        noise_is_variance: args.noise_is_variance,
        autotune: args.autotune,
        target_rate: args.target_rate,
        pilot_iters: args.pilot,
        update: match args.update {
            UpdateArg::All => UpdateMode::AllPoints,
            UpdateArg::Single => UpdateMode::SinglePoint,
        },
        seed: args.seed,
    };
    schedule.validate()?;
    let mut run = RunDir::create(&args.out, name, args)?;
    run.seed("master", args.seed);
    for c in 0..args.chains {
        run.seed(format!("chain{c}"), chain_seed(args.seed, c));
    }
    let (samples, diagnostics) = run_chains(&model, &schedule)?;
    let csv = csv_bytes(|b| write_samples(&model, &samples, b))?;
    let path = run.write("teaching.csv", &csv)?;
    let json = serde_json::to_vec_pretty(&diagnostics).expect("diagnostics serialize");
    run.write("diagnostics.json", &json)?;
    for d in &diagnostics {
        println!(
            "chain {}: acceptance {:.3} ({} accepted), proposal sd {:.3}{}",
            d.chain_id,
            d.acceptance_rate,
            d.accepted,
            d.final_proposal_sd,
            if d.numeric_failures > 0 { format!(", {} numeric failures", d.numeric_failures) } else { String::new() }
        );
    }
    println!("{} samples -> {}", samples.len(), path.display());
    run.finish()?;
    Ok(())
}

pub fn ads(name: &str, args: &AdsArgs) -> Result<(), CliError> {
    let model = load(&args.model)?;
    let mut run = RunDir::create(&args.out, name, args)?;
    run.seed("master", args.seed);
    let data = sample_ads(&model, args.per_phoneme, args.seed);
    let csv = csv_bytes(|b| write_dataset(&model, &data, b))?;
    let path = run.write("ads.csv", &csv)?;
    println!("{} points -> {}", data.len(), path.display());
    run.finish()?;
    Ok(())
}

fn learner_config(l: &LearnerArgs) -> (DpgmmConfig, EmConfig) {
    let dpgmm = DpgmmConfig {
        sweeps: l.sweeps,
        splitmerge_every: l.splitmerge_every,
        splitmerge_moves: 1,
        intermediate_scans: l.splitmerge_scans,
        transfer: match l.transfer {
            TransferArg::Frozen => TransferMode::Frozen,
            TransferArg::Joint => TransferMode::Joint { sweeps: l.joint_sweeps },
        },
    };
    let em = EmConfig {
        restarts: l.em_restarts,
        ..EmConfig::default()
    };
    (dpgmm, em)
}

fn load_pool(model: &CategoryModel, teaching: Option<&Path>, conditions: &[Condition]) -> Result<Option<TeachingPool>, CliError> {
    if conditions.iter().all(|&c| c == Condition::Ads) {
        return Ok(None);
    }
    let path = teaching.ok_or_else(|| CliError::config("--teaching is required for teaching and transfer conditions"))?;
    let samples = load_samples(model, path)?;
    Ok(Some(TeachingPool::from_samples(model, &samples)?))
}

fn print_medians(results: &[BenchResult]) {
    let mut cells: BTreeMap<(Learner, Condition, FormantSet, usize), Vec<f64>> = BTreeMap::new();
    for r in results {
        cells.entry((r.learner, r.condition, r.formants, r.per_phoneme)).or_default().push(r.ari);
    }
    for ((l, c, f, n), v) in cells {
        println!("{l:<6} {c:<9} {f:<5} n={n:<5} median ARI {:.4} over {} sets", sample_median(&v), v.len());
    }
}

pub fn bench(name: &str, args: &BenchArgs) -> Result<(), CliError> {
    let model = load(&args.model)?;
    let learners: Vec<Learner> = parse_list(&args.learners)?;
    let conditions: Vec<Condition> = parse_list(&args.conditions)?;
    let formants: Vec<FormantSet> = parse_list(&args.formants)?;
    let pool = load_pool(&model, args.teaching.as_deref(), &conditions)?;
    let (dpgmm, em) = learner_config(&args.learner);
    let config = BenchConfig {
        learners,
        conditions,
        formants,
        per_phoneme: args.per_phoneme,
        sets: args.sets,
        seed: args.seed,
        dpgmm,
        em,
        linear: LinearHyper::default(),
        record_wall_time: args.learner.wall_times,
    };
    let mut run = RunDir::create(&args.out, name, args)?;
    run.seed("master", args.seed);
    let results = run_benchmark(&model, pool.as_ref(), &config)?;
    let csv = csv_bytes(|b| write_bench_csv(&results, b))?;
    let path = run.write("bench.csv", &csv)?;
    print_medians(&results);
    println!("{} rows -> {}", results.len(), path.display());
    run.finish()?;
    Ok(())
}

/// Least-squares slope of `y` on `x`.
fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx > 0.0 { sxy / sxx } else { 0.0 }
}

pub fn sweep(name: &str, args: &SweepArgs) -> Result<(), CliError> {
    let model = load(&args.model)?;
    let conditions: Vec<Condition> = parse_list(&args.conditions)?;
    let formants: Vec<FormantSet> = parse_list(&args.formants)?;
    if args.sizes.is_empty() || args.sizes.contains(&0) {
        return Err(CliError::config("--sizes must be positive"));
    }
    let pool = load_pool(&model, args.teaching.as_deref(), &conditions)?;
    let (dpgmm, em) = learner_config(&args.learner);
    let mut run = RunDir::create(&args.out, name, args)?;
    run.seed("master", args.seed);
    let mut results = Vec::new();
    for &size in &args.sizes {
        let config = BenchConfig {
            learners: vec![Learner::Dpgmm],
            conditions: conditions.clone(),
            formants: formants.clone(),
            per_phoneme: size,
            sets: args.sets,
            seed: args.seed,
            dpgmm: dpgmm.clone(),
            em: em.clone(),
            linear: LinearHyper::default(),
            record_wall_time: args.learner.wall_times,
        };
        results.extend(run_benchmark(&model, pool.as_ref(), &config)?);
    }
    let csv = csv_bytes(|b| write_bench_csv(&results, b))?;
    let path = run.write("sweep.csv", &csv)?;

    let mut summary = String::from("condition,formants,slope_per_doubling,direction\n");
    for &c in &conditions {
        for &f in &formants {
            let points: Vec<(f64, f64)> = args
                .sizes
                .iter()
                .map(|&s| {
                    let v: Vec<f64> = results
                        .iter()
                        .filter(|r| r.condition == c && r.formants == f && r.per_phoneme == s)
                        .map(|r| r.ari)
                        .collect();
                    ((s as f64).log2(), v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            let b = slope(&points);
            let direction = if b > 0.0 {
                "increasing"
            } else if b < 0.0 {
                "decreasing"
            } else {
                "flat"
            };
            println!("{c:<9} {f:<5} mean-ARI slope {b:+.4} per doubling ({direction})");
            summary.push_str(&format!("{c},{f},{b},{direction}\n"));
        }
    }
    run.write("sweep_summary.csv", summary.as_bytes())?;
    println!("{} rows -> {}", results.len(), path.display());
    run.finish()?;
    Ok(())
}

fn teaching_covariances(model: &CategoryModel, teach: &[TeachingSample]) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let (k, d) = (model.len(), model.dim());
    let n = teach.len() as f64;
    (0..k)
        .map(|j| {
            let mean = teach.iter().fold(DVector::zeros(d), |acc, s| acc + s.points.row(j).transpose()) / n;
            let mut cov = DMatrix::zeros(d, d);
            for s in teach {
                let r = s.points.row(j).transpose() - &mean;
                cov += &r * r.transpose();
            }
            (mean, cov / (n - 1.0).max(1.0))
        })
        .collect()
}

pub fn report(name: &str, args: &ReportArgs) -> Result<(), CliError> {
    let model = load(&args.model)?;
    let formants: Vec<FormantSet> = parse_list(&args.formants)?;
    let teach = load_samples(&model, &args.teaching)?;
    let mut run = RunDir::create(&args.out, name, args)?;
    run.seed("ads", args.seed);

    let mut triangle = String::from("formants,area_ads,area_teach\n");
    for &f in &formants {
        let report = articulation_report(&model, &teach, f)?;
        let csv = csv_bytes(|b| write_articulation_csv(std::slice::from_ref(&report), b))?;
        run.write(&format!("articulation_{}.csv", f.name().to_lowercase()), &csv)?;
        let (a, t) = corner_triangle(&model, &teach, f)?;
        triangle.push_str(&format!("{f},{a},{t}\n"));
        let corners: Vec<String> = report
            .pairs
            .iter()
            .filter(|p| p.is_corner)
            .map(|p| format!("{} {:+.1} Hz", p.name(), p.delta))
            .collect();
        println!("{f}: corner deltas {}; triangle {a:.0} -> {t:.0} Hz^2", corners.join(", "));
    }
    run.write("triangle.csv", triangle.as_bytes())?;

    let variance = variance_report(&model, &teach)?;
    run.write("variance.csv", &csv_bytes(|b| write_variance_csv(&variance, b))?)?;
    let up = variance.iter().filter(|v| v.is_variance && v.delta > 0.0).count();
    let total = variance.iter().filter(|v| v.is_variance).count();
    println!("variance increased for {up}/{total} phoneme-formant entries");

    // teaching marginals against an equally sized ADS draw
    let ads = sample_ads(&model, teach.len(), args.seed);
    let mut ks = Vec::new();
    for (j, p) in model.phonemes().iter().enumerate() {
        for c in 0..model.dim() {
            let t: Vec<f64> = teach.iter().map(|s| s.points[(j, c)]).collect();
            let a: Vec<f64> = (0..teach.len()).map(|i| ads.points[(j * teach.len() + i, c)]).collect();
            ks.push(KsRow {
                group_a: format!("ADS:{}:F{}", p.label, c + 1),
                group_b: format!("TEACHING:{}:F{}", p.label, c + 1),
                result: ks_two_sample(&a, &t)?,
            });
        }
    }
    if let Some(path) = &args.bench {
        let results = load_bench_csv(path)?;
        let mut cells: BTreeMap<(Learner, FormantSet, usize, Condition), Vec<f64>> = BTreeMap::new();
        for r in &results {
            cells.entry((r.learner, r.formants, r.per_phoneme, r.condition)).or_default().push(r.ari);
        }
        for ((l, f, n, c), v) in &cells {
            if *c == Condition::Ads {
                continue;
            }
            if let Some(base) = cells.get(&(*l, *f, *n, Condition::Ads)) {
                ks.push(KsRow {
                    group_a: format!("{l}:ADS:{f}:{n}"),
                    group_b: format!("{l}:{c}:{f}:{n}"),
                    result: ks_two_sample(base, v)?,
                });
            }
        }
    }
    run.write("ks.csv", &csv_bytes(|b| write_ks_csv(&ks, b))?)?;

    let teach_stats = teaching_covariances(&model, &teach);
    run.write("ellipses.csv", svg::ellipse_csv(&model, &teach_stats).as_bytes())?;
    if !args.no_svg {
        run.write("samples_f1f2.svg", svg::chart(&model, &teach_stats)?.as_bytes())?;
    }
    println!("reports -> {}", run.dir.display());
    run.finish()?;
    Ok(())
}

fn check(ok: bool, label: &str, detail: String) -> bool {
    println!("{} {label}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn enumerated_evidence(x: &DMatrix<f64>, prior: &NiwParams, alpha: f64) -> pedagogue::Result<f64> {
    let mut terms = Vec::new();
    for p in enumerate_partitions(x.nrows())? {
        let mut lp = crp_log_prob(&p, alpha);
        for block in p.blocks() {
            let sub = DMatrix::from_fn(block.len(), x.ncols(), |i, c| x[(block[i], c)]);
            lp += log_marginal(&sub, prior)?;
        }
        terms.push(lp);
    }
    Ok(log_sum_exp(&terms))
}

pub fn validate(args: &ValidateArgs) -> Result<(), CliError> {
    let mut rng = stream(args.seed, &[0x7A11]);
    let mut all = true;

    let prior = NiwParams::new(DVector::zeros(2), 1.0, 2.0, DMatrix::identity(2, 2))?;
    let mut worst: f64 = 0.0;
    for n in [3, 5, 8] {
        for _ in 0..20 {
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-3.0..3.0));
            let dp = log_evidence(&x, &prior, 1.0)?;
            let brute = enumerated_evidence(&x, &prior, 1.0)?;
            worst = worst.max(((dp - brute) / brute).abs());
        }
    }
    all &= check(worst < 1e-9, "evidence recursion vs enumeration", format!("max relative error {worst:.2e}"));

    let mut worst: f64 = 0.0;
    for n in 1..=9 {
        for alpha in [0.5, 1.0, 4.0] {
            let total: f64 = enumerate_partitions(n)?.map(|p| crp_log_prob(&p, alpha).exp()).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    all &= check(worst < 1e-10, "CRP normalization", format!("max |sum - 1| {worst:.2e}"));

    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=8);
        let u: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let v: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let fast = ari(&Partition::from_indices(&u), &Partition::from_indices(&v))?.value;
        if fast != pair_count_ari(&u, &v) {
            mismatches += 1;
        }
    }
    all &= check(mismatches == 0, "ARI vs pair counting", format!("{mismatches} mismatches in 200 pairs"));

    let x = DMatrix::from_fn(6, 1, |_, _| rng.random_range(-2.0..2.0));
    let prior1 = NiwParams::new(DVector::zeros(1), 1.0, 1.0, DMatrix::identity(1, 1))?;
    let parts: Vec<Partition> = enumerate_partitions(6)?.collect();
    let mut logs = Vec::with_capacity(parts.len());
    for p in &parts {
        let mut lp = crp_log_prob(p, 1.0);
        for block in p.blocks() {
            let sub = DMatrix::from_fn(block.len(), 1, |i, _| x[(block[i], 0)]);
            lp += log_marginal(&sub, &prior1)?;
        }
        logs.push(lp);
    }
    let z = log_sum_exp(&logs);
    let exact: BTreeMap<Vec<usize>, f64> =
        parts.iter().zip(&logs).map(|(p, l)| (p.assignment().to_vec(), (l - z).exp())).collect();
    let mut state = DpgmmState::new(&x, &prior1, 1.0)?;
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for _ in 0..args.sweeps {
        state.gibbs_sweep(&x, &mut rng)?;
        *counts.entry(state.partition().assignment().to_vec()).or_default() += 1;
        state.split_merge(&x, &mut rng, 2)?;
        *counts.entry(state.partition().assignment().to_vec()).or_default() += 1;
    }
    let draws = 2 * args.sweeps;
    let tv = exact
        .iter()
        .map(|(p, q)| (*counts.get(p).unwrap_or(&0) as f64 / draws as f64 - q).abs())
        .sum::<f64>()
        / 2.0;
    all &= check(tv < 0.02, "DPGMM partition posterior", format!("total variation {tv:.4} over {} sweeps", args.sweeps));

    if all {
        Ok(())
    } else {
        Err(CliError::numeric("oracle checks failed"))
    }
}

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
    if denom == 0 { 1.0 } else { numer as f64 / denom as f64 }
}
