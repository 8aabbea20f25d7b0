use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use roi_uplift::assign::{greedy_assign, read_scores_csv, threshold_policy, write_assignment_csv, apply_threshold};
use roi_uplift::calibrate::{fit_roi_curve, q_to_threshold, solve_q_star, write_calibration_log, CalibrationEvent, CalibrationPoint};
use roi_uplift::eval::{evaluate, write_compare_csv, write_curve_csv, CompareRow, DEFAULT_GRID};
use roi_uplift::harness::{simulate_experiment, write_reports_jsonl, write_series_csv, ExperimentConfig};
use roi_uplift::io::{read_dataset, read_json, write_dataset, write_json, write_oracle_csv};
use roi_uplift::learners::LearnerConfig;
use roi_uplift::simulate::{gen_population, PopulationConfig};
use roi_uplift::uplift::{fit_method, MethodBundle, MethodId, RetrospectiveOptions, Scorer};
use roi_uplift::{Dataset, Error, Execution, RecordSource, Result, UpliftScores};

/// ROI-constrained uplift modeling pipeline.
#[derive(Parser)]
#[command(name = "roi-uplift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic randomized trial with its ground truth.
    Gen(GenArgs),
    /// Train an uplift method on a trial dataset.
    Train(TrainArgs),
    /// Qini and Qini-ROI curves plus summary metrics for one model.
    Evaluate(EvaluateArgs),
    /// Treatment assignment by threshold or by solving the knapsack.
    Assign(AssignArgs),
    /// Run the four-arm online trial.
    Simulate(SimulateArgs),
    /// Summary metrics for several models on one validation set.
    Compare(CompareArgs),
    /// Fit the ROI curve to (q, roi, weight) points and solve for the operating point.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Population config JSON; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drift period to generate.
    #[arg(long, default_value_t = 0)]
    period: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    method: MethodId,
    /// Dataset CSV (with its `.meta.json` sidecar).
    #[arg(long)]
    data: PathBuf,
    /// Training config JSON: `{ "learner": {...}, "retrospective": {...} }`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the learner seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AssignArgs {
    #[arg(long, requires = "data", conflicts_with = "scores")]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Precomputed `cate_y,cate_loss` CSV instead of a model.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, conflicts_with = "solve", allow_negative_numbers = true)]
    theta: Option<String>,
    #[arg(long)]
    solve: bool,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config JSON; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    periods: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// CSV with header `q,roi,weight`.
    #[arg(long)]
    points: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    q_min: f64,
    #[arg(long, default_value_t = 1.0)]
    q_max: f64,
    /// Model and dataset whose scores map Q* to a threshold.
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config_paths: Vec<PathBuf>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    tool_version: &'static str,
    duration_secs: f64,
}

/// What a command read and wrote, for the manifest.
#[derive(Default)]
struct Run {
    config_paths: Vec<PathBuf>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(default)]
struct TrainConfig {
    learner: LearnerConfig,
    retrospective: RetrospectiveOptions,
}

#[derive(Serialize)]
struct AssignOutput {
    scorer_id: String,
    #[serde(flatten)]
    summary: roi_uplift::assign::AssignmentSummary,
    exposed_fraction: f64,
    /// How the threshold was obtained.
    source: &'static str,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type CmdResult = std::result::Result<Run, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Schema(_) | Error::UnknownVersion { .. } | Error::Json(_) => 3,
        Error::DegenerateEconomics { .. } | Error::UndefinedRoi(_) => 5,
        _ => 4,
    }
}

fn load_config<T: for<'de> Deserialize<'de>>(path: &Path, run: &mut Run) -> std::result::Result<T, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("config not found: {}", path.display())));
    }
    run.config_paths.push(path.to_path_buf());
    Ok(read_json(path)?)
}

fn load_dataset(path: &Path, run: &mut Run) -> std::result::Result<Dataset, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("dataset not found: {}", path.display())));
    }
    run.inputs.push(path.to_path_buf());
    let ds = read_dataset(path)?;
    let check = ds.propensity_check();
    if !check.within_tolerance() {
        eprintln!(
            "warning: treated fraction {:.4} is {:.1} standard errors from propensity {}",
            check.treated_fraction,
            check.standard_errors,
            ds.propensity()
        );
    }
    Ok(ds)
}

fn load_model(path: &Path, run: &mut Run) -> std::result::Result<MethodBundle, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("model not found: {}", path.display())));
    }
    run.inputs.push(path.to_path_buf());
    Ok(MethodBundle::from_json(&fs::read_to_string(path)?)?)
}

fn score(bundle: &MethodBundle, ds: &Dataset) -> Result<UpliftScores> {
    if bundle.feature_dim != ds.feature_dim() {
        return Err(Error::Shape { expected: bundle.feature_dim, got: ds.feature_dim() });
    }
    bundle.fitted.score(&ds.features(), Execution::default())
}

fn create(path: PathBuf, run: &mut Run) -> std::result::Result<BufWriter<File>, Failure> {
    let f = File::create(&path)?;
    run.outputs.push(path);
    Ok(BufWriter::new(f))
}

fn json_out<T: Serialize>(path: PathBuf, value: &T, run: &mut Run) -> std::result::Result<(), Failure> {
    write_json(&path, value)?;
    run.outputs.push(path);
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> CmdResult {
    let mut run = Run::default();
    let mut config: PopulationConfig = match &a.config {
        Some(p) => load_config(p, &mut run)?,
        None => PopulationConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    run.seed = Some(config.seed);
    let (ds, oracle) = gen_population(&config, a.period)?;
    let data = a.out.join("data.csv");
    write_dataset(&data, &ds)?;
    run.outputs.push(data.clone());
    run.outputs.push(roi_uplift::io::meta_path(&data));
    let mut w = create(a.out.join("oracle.csv"), &mut run)?;
    write_oracle_csv(&mut w, &oracle)?;
    w.flush()?;
    println!("wrote {} records to {}", ds.len(), data.display());
    Ok(run)
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let mut run = Run::default();
    let mut config: TrainConfig = match &a.config {
        Some(p) => load_config(p, &mut run)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        config.learner.seed = s;
    }
    run.seed = Some(config.learner.seed);
    let ds = load_dataset(&a.data, &mut run)?;
    let fitted = fit_method(a.method, &ds, &config.learner, &config.retrospective)?;
    let bundle = MethodBundle::new(fitted, ds.propensity());
    let path = a.out.join("model.json");
    let mut w = create(path.clone(), &mut run)?;
    w.write_all(bundle.to_json()?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    println!("trained {} on {} records -> {}", a.method, ds.len(), path.display());
    Ok(run)
}

fn cmd_evaluate(a: &EvaluateArgs) -> CmdResult {
    let mut run = Run::default();
    let bundle = load_model(&a.model, &mut run)?;
    let ds = load_dataset(&a.data, &mut run)?;
    let ev = evaluate(&ds, &score(&bundle, &ds)?, a.grid)?;
    let mut w = create(a.out.join("qini.csv"), &mut run)?;
    write_curve_csv(&mut w, &ev.qini)?;
    w.flush()?;
    let mut w = create(a.out.join("qini_roi.csv"), &mut run)?;
    write_curve_csv(&mut w, &ev.qini_roi)?;
    w.flush()?;
    json_out(a.out.join("metrics.json"), &ev.report, &mut run)?;
    println!("{}", serde_json::to_string(&ev.report).map_err(Error::from)?);
    Ok(run)
}

fn parse_theta(t: &str) -> std::result::Result<f64, Failure> {
    roi_uplift::serde_float::parse(t)
        .filter(|v| !v.is_nan())
        .ok_or_else(|| Failure::Usage(format!("invalid --theta {t:?}")))
}

fn cmd_assign(a: &AssignArgs) -> CmdResult {
    let mut run = Run::default();
    let (scores, scorer_id, dataset) = match (&a.scores, &a.model, &a.data) {
        (Some(p), _, _) => {
            if !p.is_file() {
                return Err(Failure::Usage(format!("scores not found: {}", p.display())));
            }
            run.inputs.push(p.clone());
            (read_scores_csv(File::open(p)?)?, "scores".to_string(), None)
        }
        (None, Some(m), Some(d)) => {
            let bundle = load_model(m, &mut run)?;
            let ds = load_dataset(d, &mut run)?;
            let s = score(&bundle, &ds)?;
            (s, bundle.fitted.method().to_string(), Some(ds))
        }
        _ => return Err(Failure::Usage("assign needs --scores or --model with --data".into())),
    };
    let (treat, summary, source) = match (&a.theta, a.solve) {
        (Some(t), false) => {
            let theta = parse_theta(t)?;
            let treat = apply_threshold(theta, &scores);
            let mut totals = (0.0, 0.0);
            for (z, r) in treat.iter().zip(&scores.rows) {
                if *z {
                    totals.0 += r.cate_y.unwrap_or(f64::NAN);
                    totals.1 += r.cate_loss.unwrap_or(f64::NAN);
                }
            }
            let part = roi_uplift::assign::partition_quadrants(&scores);
            let summary = roi_uplift::assign::AssignmentSummary {
                threshold: theta,
                treated: treat.iter().filter(|&&z| z).count(),
                records: treat.len(),
                total_cate_y: totals.0,
                total_cate_loss: totals.1,
                budget: -part.always.iter().filter_map(|&i| scores.rows[i].cate_loss).sum::<f64>(),
                counts: roi_uplift::assign::QuadrantCounts {
                    always: part.always.len(),
                    candidates: part.candidates.len(),
                    never: part.never.len(),
                },
            };
            (treat, summary, "theta")
        }
        (None, true) => match greedy_assign(&scores) {
            Ok(g) => {
                let s = g.summary();
                (g.treat, s, "knapsack")
            }
            Err(Error::MissingMagnitudes(_)) => {
                // Ratio-only scores: operate at the largest exposed fraction
                // whose ROI on this dataset is nonnegative.
                let ds = dataset.as_ref().ok_or_else(|| Failure::Usage("--solve on ratio-only scores needs --data".into()))?;
                let ev = evaluate(ds, &scores, a.grid)?;
                let theta = q_to_threshold(&scores.sort_keys(), ev.report.max_population_at_roi0)?;
                let treat = apply_threshold(theta, &scores);
                let part = roi_uplift::assign::partition_quadrants(&scores);
                let summary = roi_uplift::assign::AssignmentSummary {
                    threshold: theta,
                    treated: treat.iter().filter(|&&z| z).count(),
                    records: treat.len(),
                    total_cate_y: f64::NAN,
                    total_cate_loss: f64::NAN,
                    budget: f64::NAN,
                    counts: roi_uplift::assign::QuadrantCounts {
                        always: part.always.len(),
                        candidates: part.candidates.len(),
                        never: part.never.len(),
                    },
                };
                (treat, summary, "qini-roi")
            }
            Err(e) => return Err(e.into()),
        },
        _ => return Err(Failure::Usage("assign needs exactly one of --theta or --solve".into())),
    };
    let policy = threshold_policy(&scorer_id, &scores, summary.threshold);
    let mut w = create(a.out.join("assignment.csv"), &mut run)?;
    write_assignment_csv(&mut w, &treat, &scores)?;
    w.flush()?;
    let out = AssignOutput { scorer_id, summary, exposed_fraction: policy.exposed_fraction, source };
    json_out(a.out.join("summary.json"), &out, &mut run)?;
    let theta = &out.summary.threshold;
    println!("theta* = {theta}");
    let rows: Vec<String> = treat.iter().enumerate().filter(|(_, z)| **z).map(|(i, _)| i.to_string()).collect();
    if rows.len() <= 50 {
        println!("treated = [{}]", rows.join(", "));
    } else {
        println!("treated = {} of {}", rows.len(), treat.len());
    }
    Ok(run)
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let mut run = Run::default();
    let mut config: ExperimentConfig = match &a.config {
        Some(p) => load_config(p, &mut run)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(p) = a.periods {
        config.periods = p;
    }
    run.seed = Some(config.seed);
    let (scorer, res) = simulate_experiment(&config, Execution::default())?;
    let mut w = create(a.out.join("reports.jsonl"), &mut run)?;
    write_reports_jsonl(&mut w, &res.reports)?;
    w.flush()?;
    let mut w = create(a.out.join("series.csv"), &mut run)?;
    write_series_csv(&mut w, &res.reports)?;
    w.flush()?;
    let mut w = create(a.out.join("calibration.jsonl"), &mut run)?;
    write_calibration_log(&mut w, &res.calibrations)?;
    w.flush()?;
    json_out(a.out.join("offline_metrics.json"), &scorer.offline.report, &mut run)?;
    if let Some(last) = res.reports.last() {
        for arm in &last.arms {
            println!(
                "arm {}: cum_roi {} rel_ate {}",
                arm.arm.as_str(),
                arm.cum_roi.map_or("undefined".into(), |v| format!("{v:.4}")),
                arm.rel_ate.map_or("undefined".into(), |v| format!("{v:.4}"))
            );
        }
    }
    Ok(run)
}

fn cmd_compare(a: &CompareArgs) -> CmdResult {
    let mut run = Run::default();
    let ds = load_dataset(&a.data, &mut run)?;
    let mut rows = Vec::new();
    for m in &a.models {
        let bundle = load_model(m, &mut run)?;
        let ev = evaluate(&ds, &score(&bundle, &ds)?, a.grid)?;
        rows.push(CompareRow { method: bundle.fitted.method().display_name().to_string(), metrics: ev.report });
    }
    let mut w = create(a.out.join("compare.csv"), &mut run)?;
    write_compare_csv(&mut w, &rows)?;
    w.flush()?;
    json_out(a.out.join("compare.json"), &rows, &mut run)?;
    for r in &rows {
        let m = r.metrics;
        println!(
            "{:<26} auuc {:.3}  population {:5.1}%  ate {:5.1}%",
            r.method,
            m.auuc,
            100.0 * m.max_population_at_roi0,
            100.0 * m.max_ate_at_roi0
        );
    }
    Ok(run)
}

fn read_points(path: &Path) -> Result<Vec<CalibrationPoint>> {
    let mut rdr = csv::Reader::from_reader(File::open(path)?);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["q", "roi", "weight"] {
        return Err(Error::Schema(format!("points header {header:?} does not match q,roi,weight")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut v = [0.0; 3];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = rec[k].trim().parse().map_err(|_| Error::Schema(format!("row {i}: bad {}", header[k])))?;
        }
        out.push(CalibrationPoint::new(v[0], v[1], v[2]).map_err(|e| Error::Schema(format!("row {i}: {e}")))?);
    }
    Ok(out)
}

fn cmd_calibrate(a: &CalibrateArgs) -> CmdResult {
    let mut run = Run::default();
    if !a.points.is_file() {
        return Err(Failure::Usage(format!("points not found: {}", a.points.display())));
    }
    run.inputs.push(a.points.clone());
    let points = read_points(&a.points)?;
    let curve = fit_roi_curve(&points)?;
    let q_star = solve_q_star(&curve, (a.q_min, a.q_max))?;
    let theta = match (&a.model, &a.data) {
        (Some(m), Some(d)) => {
            let bundle = load_model(m, &mut run)?;
            let ds = load_dataset(d, &mut run)?;
            q_to_threshold(&score(&bundle, &ds)?.sort_keys(), q_star)?
        }
        _ => f64::NAN,
    };
    let event = CalibrationEvent { period: 0, points, curve, q_star, theta };
    let path = a.out.join("calibration.jsonl");
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(&path)?);
    write_calibration_log(&mut w, std::slice::from_ref(&event))?;
    w.flush()?;
    run.outputs.push(path);
    println!(
        "a = {} b = {} c = {} converged = {} q* = {q_star} theta = {theta}",
        curve.a, curve.b, curve.c, curve.converged
    );
    Ok(run)
}

fn append_manifest(out: &Path, name: &str, run: Run, started: Instant) -> std::io::Result<()> {
    let manifest = RunManifest {
        command: name.to_string(),
        args: std::env::args().skip(1).collect(),
        config_paths: run.config_paths,
        seed: run.seed,
        inputs: run.inputs,
        outputs: run.outputs,
        tool_version: env!("CARGO_PKG_VERSION"),
        duration_secs: started.elapsed().as_secs_f64(),
    };
    let mut f = OpenOptions::new().create(true).append(true).open(out.join("run_manifest.jsonl"))?;
    let line = serde_json::to_string(&manifest).map_err(std::io::Error::other)?;
    writeln!(f, "{line}")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let (name, out) = match &cli.command {
        Command::Gen(a) => ("gen", &a.out),
        Command::Train(a) => ("train", &a.out),
        Command::Evaluate(a) => ("evaluate", &a.out),
        Command::Assign(a) => ("assign", &a.out),
        Command::Simulate(a) => ("simulate", &a.out),
        Command::Compare(a) => ("compare", &a.out),
        Command::Calibrate(a) => ("calibrate", &a.out),
    };
    if let Err(e) = fs::create_dir_all(out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Assign(a) => cmd_assign(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    };
    match result {
        Ok(run) => {
            if let Err(e) = append_manifest(out, name, run, started) {
                eprintln!("error: writing run manifest: {e}");
                return ExitCode::from(4);
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
