//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use roi_uplift::assign::{brute_force_assign, greedy_assign, FEASIBILITY_TOL};
use roi_uplift::calibrate::{fit_roi_curve, jacobian, solve_q_star, CalibrationCurve, CalibrationPoint};
use roi_uplift::eval::{auuc, evaluate, Curve, CurvePoint};
use roi_uplift::harness::{simulate_experiment, Arm, ExperimentConfig};
use roi_uplift::learners::LearnerConfig;
use roi_uplift::simulate::{gen_population, oracle_scores, PerSegment, PopulationConfig};
use roi_uplift::stats::{mean, spearman, variance};
use roi_uplift::uplift::{
    balanced_share, fit_method, fit_retrospective, magnitude_score, purchase_treated_share, transformed_target, MethodId,
    RetrospectiveOptions, Scorer,
};
use roi_uplift::{Dataset, Execution, RecordSource, UpliftScores, VisitRecord};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, started: Instant) -> std::result::Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, format!("runtime {:.2}s exceeds {:.0}s", took.as_secs_f64(), limit.as_secs_f64()))
}

fn knapsack() -> Outcome {
    let started = Instant::now();
    let example = UpliftScores::new([(3.0, -1.0), (2.0, 2.0), (1.0, 1.0), (4.0, 5.0)].map(|(y, l)| magnitude_score(y, l)).to_vec());
    let g = greedy_assign(&example).map_err(|e| e.to_string())?;
    ensure(g.total_cate_y == 4.0, format!("worked example objective {} != 4", g.total_cate_y))?;
    ensure(brute_force_assign(&example).map_err(|e| e.to_string())?.total_cate_y == 4.0, "brute force example != 4")?;

    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut ratios = Vec::new();
    for _ in 0..200 {
        let n = rng.random_range(1..=20);
        let items: Vec<_> = (0..n)
            .map(|_| {
                let (y, l) = match rng.random_range(0..3) {
                    0 => (rng.random_range(0.01..1.0), rng.random_range(-1.0..0.0)),
                    1 => (rng.random_range(0.01..1.0), rng.random_range(0.01..2.0)),
                    _ => (rng.random_range(-1.0..=0.0), rng.random_range(0.0..2.0)),
                };
                magnitude_score(y, l)
            })
            .collect();
        let s = UpliftScores::new(items);
        let g = greedy_assign(&s).map_err(|e| e.to_string())?;
        let b = brute_force_assign(&s).map_err(|e| e.to_string())?;
        ensure(g.total_cate_loss <= FEASIBILITY_TOL, format!("greedy infeasible: loss {}", g.total_cate_loss))?;
        ensure(g.total_cate_y <= b.total_cate_y + 1e-9, "greedy beat the exact optimum")?;
        ratios.push(if b.total_cate_y > 0.0 { g.total_cate_y / b.total_cate_y } else { 1.0 });
    }
    let avg = mean(&ratios);
    ensure(avg >= 0.95, format!("greedy/optimum averages {avg:.4} < 0.95"))?;
    within(Duration::from_secs(5), started)?;
    Ok(format!("worked example = 4, 200 instances feasible, greedy/optimum = {avg:.4}, {:.2}s", started.elapsed().as_secs_f64()))
}

fn retrospective_identity() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for (e, seed) in [(0.5, 11), (0.3, 12)] {
        let cfg = PopulationConfig { n: 1000, propensity: e, seed, ..Default::default() };
        let (_, oracle) = gen_population(&cfg, 0).map_err(|e| e.to_string())?;
        for o in &oracle {
            let target = o.p1 / o.p0;
            let s = purchase_treated_share(o.p1, o.p0, e);
            let odds = s / (1.0 - s) * (1.0 - e) / e;
            let b = balanced_share(s, e);
            for got in [odds, b / (1.0 - b)] {
                let rel = (got - target).abs() / target.abs().max(1.0);
                worst = worst.max(rel);
            }
            if e == 0.5 {
                worst = worst.max((s / (1.0 - s) - target).abs() / target.abs().max(1.0));
            }
        }
    }
    ensure(worst <= 1e-12, format!("identity error {worst:e} > 1e-12"))?;
    within(Duration::from_secs(1), started)?;
    Ok(format!("max relative error {worst:.1e} over 2x1000 records (e = 0.5, 0.3)"))
}

fn retrospective_end_to_end() -> Outcome {
    let learner = LearnerConfig::boosted_trees();
    let opts = RetrospectiveOptions::default();
    let mut rhos = Vec::new();
    let mut effect_only = Vec::new();
    let mut wins = 0;
    let mut slowest: f64 = 0.0;
    for seed in 0..20u64 {
        let started = Instant::now();
        let (train, _) = gen_population(&PopulationConfig { n: 200_000, seed: 1_000 + seed, ..Default::default() }, 0)
            .map_err(|e| e.to_string())?;
        let (val, oracle) = gen_population(&PopulationConfig { n: 100_000, seed: 2_000 + seed, ..Default::default() }, 0)
            .map_err(|e| e.to_string())?;
        let x = val.features();
        let retro = fit_method(MethodId::Retrospective, &train, &learner, &opts).map_err(|e| e.to_string())?;
        let two = fit_method(MethodId::TwoModels, &train, &learner, &opts).map_err(|e| e.to_string())?;
        let rs = retro.score(&x, Execution::default()).map_err(|e| e.to_string())?;
        let ts = two.score(&x, Execution::default()).map_err(|e| e.to_string())?;
        let os = oracle_scores(&oracle);
        rhos.push(spearman(&rs.sort_keys(), &os.sort_keys()));
        // Context only: the same correlation without zero-effect records.
        let (a, b): (Vec<f64>, Vec<f64>) = (0..oracle.len())
            .filter(|&i| oracle[i].p1 != oracle[i].p0)
            .map(|i| (rs.rows[i].sort_key, os.rows[i].sort_key))
            .unzip();
        effect_only.push(spearman(&a, &b));
        let r = evaluate(&val, &rs, 200).map_err(|e| e.to_string())?.report;
        let t = evaluate(&val, &ts, 200).map_err(|e| e.to_string())?.report;
        if r.max_ate_at_roi0 > t.max_ate_at_roi0 {
            wins += 1;
        }
        slowest = slowest.max(started.elapsed().as_secs_f64());
    }
    let min = rhos.iter().cloned().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "spearman min {min:.3} mean {:.3} (min {:.3} without zero-effect records), beats two-models on max ATE at ROI>=0 in {wins}/20 seeds, slowest seed {slowest:.1}s",
        mean(&rhos),
        effect_only.iter().cloned().fold(f64::INFINITY, f64::min)
    );
    ensure(min >= 0.8, format!("{detail}: spearman below 0.8"))?;
    ensure(wins >= 16, format!("{detail}: fewer than 16 wins"))?;
    ensure(slowest < 120.0, format!("{detail}: a seed took over 2 minutes"))?;
    Ok(detail)
}

/// Wraps a dataset and records every row handed out through `record`.
struct Audited<'a> {
    inner: &'a Dataset,
    touched: Mutex<Vec<usize>>,
}

impl RecordSource for Audited<'_> {
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }
    fn propensity(&self) -> f64 {
        self.inner.propensity()
    }
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn record(&self, index: usize) -> &VisitRecord {
        self.touched.lock().unwrap().push(index);
        self.inner.record(index)
    }
    fn purchase_indices(&self) -> &[usize] {
        self.inner.purchase_indices()
    }
}

fn positive_only() -> Outcome {
    let (ds, _) = gen_population(&PopulationConfig { n: 30_000, seed: 5, ..Default::default() }, 0).map_err(|e| e.to_string())?;
    let audited = Audited { inner: &ds, touched: Mutex::new(Vec::new()) };
    fit_retrospective(&audited, &LearnerConfig::boosted_trees(), &RetrospectiveOptions::default()).map_err(|e| e.to_string())?;
    let touched = audited.touched.into_inner().unwrap();
    let negatives = touched.iter().filter(|&&i| !ds.record(i).purchased).count();
    let distinct: std::collections::BTreeSet<_> = touched.iter().collect();
    ensure(negatives == 0, format!("{negatives} reads of Y = 0 rows"))?;
    ensure(!touched.is_empty(), "no rows read at all")?;
    Ok(format!(
        "{} reads over {} distinct rows, all purchases ({} of {} rows are Y = 0 and untouched)",
        touched.len(),
        distinct.len(),
        ds.len() - ds.purchase_indices().len(),
        ds.len()
    ))
}

fn transformed_outcome() -> Outcome {
    let started = Instant::now();
    let mut parts = Vec::new();
    for (e, seed) in [(0.3, 21), (0.5, 22)] {
        let cfg = PopulationConfig { n: 100_000, propensity: e, seed, ..Default::default() };
        let (ds, oracle) = gen_population(&cfg, 0).map_err(|e| e.to_string())?;
        let z: Vec<f64> = ds.records().iter().map(|r| transformed_target(r.purchased, r.treated, e)).collect();
        let ate = mean(&oracle.iter().map(|o| o.true_cate_y()).collect::<Vec<_>>());
        let se = (variance(&z) / z.len() as f64).sqrt();
        let dev = (mean(&z) - ate) / se;
        ensure(dev.abs() <= 4.0, format!("e = {e}: mean Z is {dev:.2} SE from the oracle ATE"))?;
        parts.push(format!("e = {e}: {dev:+.2} SE"));
    }
    within(Duration::from_secs(30), started)?;
    Ok(parts.join(", "))
}

fn qini_sanity() -> Outcome {
    let diag = Curve {
        points: (0..=200)
            .map(|k| {
                let q = k as f64 / 200.0;
                CurvePoint { q, value: q, raw: q, n_t: 0, n_c: 0, defined: true }
            })
            .collect(),
        normalized: true,
    };
    let a = auuc(&diag).map_err(|e| e.to_string())?;
    ensure((a - 0.5).abs() <= 1e-9, format!("diagonal AUUC {a}"))?;

    let uniform = PopulationConfig {
        n: 100_000,
        seed: 31,
        segments: PerSegment { persuadable: 1.0, sure_thing: 0.0, lost_cause: 0.0, do_not_disturb: 0.0 },
        base_rate: roi_uplift::simulate::BaseRate { coefficients: vec![0.0; 4], ..PopulationConfig::default().base_rate },
        uplift: roi_uplift::simulate::Uplift { heterogeneity: 0.0, ..PopulationConfig::default().uplift },
        ..Default::default()
    };
    let (ds, _) = gen_population(&uniform, 0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let random = UpliftScores::new((0..ds.len()).map(|_| roi_uplift::uplift::unconstrained_score(rng.random())).collect());
    let ra = evaluate(&ds, &random, 200).map_err(|e| e.to_string())?.report.auuc;
    ensure((0.45..=0.55).contains(&ra), format!("random AUUC on uniform uplift {ra:.4}"))?;

    let mut beats = 0;
    for seed in 0..20u64 {
        let (ds, oracle) = gen_population(&PopulationConfig { n: 50_000, seed: 40 + seed, ..Default::default() }, 0)
            .map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(60 + seed);
        let random = UpliftScores::new((0..ds.len()).map(|_| roi_uplift::uplift::unconstrained_score(rng.random())).collect());
        let o = evaluate(&ds, &oracle_scores(&oracle), 200).map_err(|e| e.to_string())?.report.auuc;
        let r = evaluate(&ds, &random, 200).map_err(|e| e.to_string())?.report.auuc;
        if o > r {
            beats += 1;
        }
    }
    ensure(beats == 20, format!("oracle beat random in only {beats}/20 seeds"))?;
    Ok(format!("diagonal AUUC {a:.12}, random AUUC {ra:.4}, oracle beats random 20/20"))
}

fn lm_calibration() -> Outcome {
    let started = Instant::now();
    let truth = CalibrationCurve::from_params(1.0, -2.0, -0.5);
    let exact: Vec<_> = (0..=10).map(|k| CalibrationPoint { q: k as f64 / 10.0, roi: truth.eval(k as f64 / 10.0), weight: 1.0 }).collect();
    let fit = fit_roi_curve(&exact).map_err(|e| e.to_string())?;
    let perr = (fit.a - 1.0).abs().max((fit.b + 2.0).abs()).max((fit.c + 0.5).abs());
    ensure(perr <= 1e-6, format!("parameter error {perr:e}"))?;

    let q = solve_q_star(&truth, (0.0, 1.0)).map_err(|e| e.to_string())?;
    let qerr = (q - 2f64.ln() / 2.0).abs();
    ensure(qerr <= 1e-9, format!("Q* error {qerr:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut jerr: f64 = 0.0;
    for _ in 0..10 {
        let (a, b, c, q): (f64, f64, f64, f64) =
            (rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
        let f = |a: f64, b: f64, c: f64| a * (b * q).exp() + c;
        let h = 1e-6;
        let fd = [
            (f(a + h, b, c) - f(a - h, b, c)) / (2.0 * h),
            (f(a, b + h, c) - f(a, b - h, c)) / (2.0 * h),
            (f(a, b, c + h) - f(a, b, c - h)) / (2.0 * h),
        ];
        for (an, fd) in jacobian(a, b, q).iter().zip(fd) {
            jerr = jerr.max((an - fd).abs() / an.abs().max(1.0));
        }
    }
    ensure(jerr <= 1e-6, format!("jacobian error {jerr:e}"))?;

    let noise = Normal::new(0.0, 0.02).unwrap();
    let noisy: Vec<_> = (0..50)
        .map(|k| {
            let q = k as f64 / 49.0;
            CalibrationPoint { q, roi: truth.eval(q) + noise.sample(&mut rng), weight: 1.0 }
        })
        .collect();
    let nf = fit_roi_curve(&noisy).map_err(|e| e.to_string())?;
    let rmse = ((0..=100).map(|k| (nf.eval(k as f64 / 100.0) - truth.eval(k as f64 / 100.0)).powi(2)).sum::<f64>() / 101.0).sqrt();
    ensure(rmse < 0.02, format!("noisy RMSE {rmse:.4}"))?;
    within(Duration::from_secs(1), started)?;
    Ok(format!("param error {perr:.1e}, Q* error {qerr:.1e}, jacobian error {jerr:.1e}, noisy RMSE {rmse:.4}"))
}

fn online_simulation() -> Outcome {
    let started = Instant::now();
    let mut wins = 0;
    let mut failures = Vec::new();
    let (mut b_roi, mut c_roi, mut c_rel, mut d_roi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for seed in 0..20u64 {
        let cfg = ExperimentConfig { seed, ..Default::default() };
        let (_, res) = simulate_experiment(&cfg, Execution::default()).map_err(|e| e.to_string())?;
        let last = res.reports.last().ok_or("no reports")?;
        let get = |a: Arm| last.arm(a).cum_roi.unwrap_or(f64::NAN);
        let mean_rel = |a: Arm| mean(&res.reports.iter().map(|r| r.arm(a).rel_ate.unwrap_or(f64::NAN)).collect::<Vec<_>>());
        let (b, c, d) = (get(Arm::B), get(Arm::C), get(Arm::D));
        let c_final_rel = last.arm(Arm::C).rel_ate.unwrap_or(f64::NAN);
        if !(b < 0.0) {
            failures.push(format!("seed {seed}: B ROI {b:.3}"));
        }
        if !(c > 0.0 && c_final_rel > 0.4 && c_final_rel < 0.9) {
            failures.push(format!("seed {seed}: C ROI {c:.3} rel ATE {c_final_rel:.3}"));
        }
        if !(d >= -0.05) {
            failures.push(format!("seed {seed}: D ROI {d:.3}"));
        }
        if mean_rel(Arm::D) >= mean_rel(Arm::C) {
            wins += 1;
        }
        b_roi.push(b);
        c_roi.push(c);
        c_rel.push(c_final_rel);
        d_roi.push(d);
    }
    let detail = format!(
        "mean final ROI B {:.3} C {:.3} D {:.3}, C rel ATE {:.3}..{:.3}, D rel ATE >= C in {wins}/20, {:.0}s",
        mean(&b_roi),
        mean(&c_roi),
        mean(&d_roi),
        c_rel.iter().cloned().fold(f64::INFINITY, f64::min),
        c_rel.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        started.elapsed().as_secs_f64()
    );
    ensure(failures.is_empty(), format!("{detail}; {}", failures.join("; ")))?;
    ensure(wins >= 14, format!("{detail}: fewer than 14 wins"))?;
    within(Duration::from_secs(600), started)?;
    Ok(detail)
}

fn run_cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_roi-uplift")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Every file in `dir` except run manifests.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run_manifest.jsonl")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn pipeline(root: &Path) -> std::result::Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    fs::create_dir_all(root).map_err(|e| e.to_string())?;
    let pop = PopulationConfig { n: 6_000, ..Default::default() };
    fs::write(root.join("pop.json"), serde_json::to_string(&pop).unwrap()).unwrap();
    let exp = ExperimentConfig {
        periods: 2,
        visitors_per_period: 5_000,
        train_n: 10_000,
        validation_n: 5_000,
        learner: LearnerConfig { rounds: 10, ..LearnerConfig::boosted_trees() },
        ..Default::default()
    };
    fs::write(root.join("exp.json"), serde_json::to_string(&exp).unwrap()).unwrap();
    fs::write(root.join("points.csv"), "q,roi,weight\n0.1,0.8,1\n0.3,0.3,1\n0.5,0.0,1\n0.7,-0.2,1\n0.9,-0.3,1\n").unwrap();

    run_cli(&["gen", "--config", &p("pop.json"), "--seed", "7", "--out", &p("train")])?;
    run_cli(&["gen", "--config", &p("pop.json"), "--seed", "8", "--out", &p("val")])?;
    let mut models = Vec::new();
    for m in MethodId::ALL {
        let dir = p(&format!("model-{m}"));
        run_cli(&["train", "--method", m.as_str(), "--data", &p("train/data.csv"), "--seed", "3", "--out", &dir])?;
        models.push(format!("{dir}/model.json"));
    }
    let retro = p("model-retrospective/model.json");
    let fractional = p("model-fractional-approximation/model.json");
    run_cli(&["evaluate", "--model", &retro, "--data", &p("val/data.csv"), "--out", &p("eval")])?;
    run_cli(&["assign", "--model", &fractional, "--data", &p("val/data.csv"), "--solve", "--out", &p("assign-solve")])?;
    run_cli(&["assign", "--model", &retro, "--data", &p("val/data.csv"), "--solve", "--out", &p("assign-retro")])?;
    run_cli(&["assign", "--model", &retro, "--data", &p("val/data.csv"), "--theta", "0.1", "--out", &p("assign-theta")])?;
    let val_data = p("val/data.csv");
    let mut compare = vec!["compare", "--data", &val_data, "--out"];
    let cmp_out = p("compare");
    compare.push(&cmp_out);
    compare.push("--models");
    compare.extend(models.iter().map(|s| s.as_str()));
    run_cli(&compare)?;
    run_cli(&["simulate", "--config", &p("exp.json"), "--seed", "9", "--out", &p("sim")])?;
    run_cli(&["calibrate", "--points", &p("points.csv"), "--model", &retro, "--data", &p("val/data.csv"), "--out", &p("cal")])?;
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a)?;
    pipeline(&b)?;
    let dirs = [
        "train", "val", "model-two-models", "model-transformed-outcome", "model-fractional-approximation",
        "model-retrospective", "eval", "assign-solve", "assign-retro", "assign-theta", "compare", "sim", "cal",
    ];
    let mut files = 0;
    for d in dirs {
        let (x, y) = (artifacts(&a.join(d)), artifacts(&b.join(d)));
        ensure(!x.is_empty(), format!("{d}: no artifacts"))?;
        ensure(x.len() == y.len(), format!("{d}: different file sets"))?;
        for ((nx, bx), (ny, by)) in x.iter().zip(&y) {
            ensure(nx == ny && bx == by, format!("{d}/{nx} differs between runs"))?;
            files += 1;
        }
    }
    Ok(format!("7 commands run twice, {files} artifacts byte-identical"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("knapsack correctness", knapsack),
        ("retrospective identity", retrospective_identity),
        ("retrospective end-to-end", retrospective_end_to_end),
        ("positive-only training", positive_only),
        ("transformed-outcome unbiasedness", transformed_outcome),
        ("qini/auuc sanity", qini_sanity),
        ("lm calibration", lm_calibration),
        ("online simulation", online_simulation),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{n}] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{n}] {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
