//! Multi-period online trial with four arms.
//!
//! | arm | policy                                   |
//! |-----|------------------------------------------|
//! | A   | never treat (control)                    |
//! | B   | always treat                             |
//! | C   | `sort_key >= theta`, fixed               |
//! | D   | `sort_key >= theta_d`, recalibrated      |
//!
//! The scorer is trained once on a period-0 randomized trial and frozen.
//! After every period arm D's ROI curve is refitted on the offline Qini-ROI
//! points plus its own cumulative online observations, and the zero crossing
//! sets the exposed fraction for the next period.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assign::apply_threshold;
use crate::calibrate::{fit_roi_curve_with, q_to_threshold, solve_q_star, CalibrationConfig, CalibrationEvent, CalibrationPoint};
use crate::economics::{deltas_from_totals, ArmTotals};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation, DEFAULT_GRID};
use crate::exec::Execution;
use crate::learners::LearnerConfig;
use crate::rng::{derive_seed, record_rng, TAG_ARM, TAG_OUTCOME, TAG_POPULATION};
use crate::simulate::{gen_population_with, Drift, PopulationConfig};
use crate::types::{FeatureMatrix, UpliftScores};
use crate::uplift::{fit_method, FittedMethod, MethodId, RetrospectiveOptions, Scorer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
    C,
    D,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::A, Arm::B, Arm::C, Arm::D];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::A => "A",
            Arm::B => "B",
            Arm::C => "C",
            Arm::D => "D",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmWeights {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for ArmWeights {
    fn default() -> Self {
        Self { a: 0.25, b: 0.25, c: 0.25, d: 0.25 }
    }
}

impl ArmWeights {
    fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    fn pick(&self, u: f64) -> Arm {
        let mut acc = 0.0;
        for (arm, w) in Arm::ALL.iter().zip(self.as_array()) {
            acc += w;
            if u < acc {
                return *arm;
            }
        }
        Arm::D
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub arm_weights: ArmWeights,
    pub periods: u32,
    pub visitors_per_period: usize,
    /// Traffic model; `n` and `seed` are ignored in favor of the sizes and
    /// seed below.
    pub population: PopulationConfig,
    pub train_n: usize,
    pub validation_n: usize,
    pub method: MethodId,
    pub learner: LearnerConfig,
    pub retrospective: RetrospectiveOptions,
    /// Arm C's threshold. When absent it is set at the largest exposed
    /// fraction with nonnegative offline ROI.
    #[serde(with = "crate::serde_float::opt", skip_serializing_if = "Option::is_none")]
    pub static_theta: Option<f64>,
    pub calibration: CalibrationConfig,
    pub grid: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    /// Base purchase rates fall every period. Uplift is additive, so each
    /// treated purchase costs less organic revenue and a threshold set on
    /// period-0 data becomes too conservative.
    fn default() -> Self {
        let population = PopulationConfig {
            drift: Drift { base_rate_shift: -0.2, segment_shift: None },
            ..Default::default()
        };
        Self {
            arm_weights: ArmWeights::default(),
            periods: 8,
            visitors_per_period: 100_000,
            population,
            train_n: 100_000,
            validation_n: 50_000,
            method: MethodId::Retrospective,
            learner: LearnerConfig::boosted_trees(),
            retrospective: RetrospectiveOptions::default(),
            static_theta: None,
            calibration: CalibrationConfig::default(),
            grid: DEFAULT_GRID,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.arm_weights.as_array();
        if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("arm weights must be positive".into()));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("arm weights must sum to 1".into()));
        }
        if self.periods == 0 {
            return Err(Error::Config("periods must be >= 1".into()));
        }
        if self.visitors_per_period == 0 || self.train_n == 0 || self.validation_n == 0 {
            return Err(Error::Config("traffic, training and validation sizes must be >= 1".into()));
        }
        if let Some(t) = self.static_theta {
            if t.is_nan() {
                return Err(Error::Config("static theta is NaN".into()));
            }
        }
        self.population.validate()?;
        self.learner.validate()?;
        self.calibration.validate()
    }

    fn stage_population(&self, stage: u64, n: usize) -> PopulationConfig {
        PopulationConfig { n, seed: derive_seed(self.seed, TAG_POPULATION, stage), ..self.population.clone() }
    }
}

/// A frozen scorer together with what was learned about it offline.
#[derive(Clone, Debug)]
pub struct PreparedScorer {
    pub fitted: FittedMethod,
    pub offline: Evaluation,
    /// Arm C's threshold.
    pub theta_c: f64,
    /// Exposed fraction of `theta_c` on the validation population.
    pub q_c: f64,
    pub offline_points: Vec<CalibrationPoint>,
}

/// Train on a period-0 trial, evaluate on a fresh period-0 sample and derive
/// arm C's threshold and the offline calibration points.
pub fn prepare_scorer(config: &ExperimentConfig, exec: Execution) -> Result<PreparedScorer> {
    config.validate()?;
    let (train, _) = gen_population_with(&config.stage_population(0, config.train_n), 0, exec)?;
    let fitted = fit_method(config.method, &train, &config.learner, &config.retrospective)?;
    let (validation, _) = gen_population_with(&config.stage_population(1, config.validation_n), 0, exec)?;
    let scores = fitted.score(&validation.features(), exec)?;
    let offline = evaluate(&validation, &scores, config.grid)?;
    let keys = scores.sort_keys();
    let (theta_c, q_c) = match config.static_theta {
        Some(t) => (t, exposed(&scores, t)),
        None => {
            let q = offline.report.max_population_at_roi0;
            let t = q_to_threshold(&keys, q)?;
            (t, exposed(&scores, t))
        }
    };
    let offline_points = offline_points(&offline, config.calibration.offline_points, config.calibration.offline_weight);
    Ok(PreparedScorer { fitted, offline, theta_c, q_c, offline_points })
}

fn exposed(scores: &UpliftScores, theta: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    apply_threshold(theta, scores).iter().filter(|&&z| z).count() as f64 / scores.len() as f64
}

/// Defined Qini-ROI points closest to `k / bins` for `k = 1..=bins`.
fn offline_points(offline: &Evaluation, bins: usize, weight: f64) -> Vec<CalibrationPoint> {
    let pts = &offline.qini_roi.points;
    let mut out: Vec<CalibrationPoint> = Vec::new();
    for k in 1..=bins {
        let target = k as f64 / bins as f64;
        let Some(p) = pts.iter().min_by(|a, b| (a.q - target).abs().total_cmp(&(b.q - target).abs())) else {
            continue;
        };
        if p.defined && p.q > 0.0 && out.last().is_none_or(|l| l.q != p.q) {
            out.push(CalibrationPoint { q: p.q, roi: p.value, weight });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmPeriod {
    pub arm: Arm,
    pub period: ArmTotals,
    pub cumulative: ArmTotals,
    /// Cumulative ROI vs arm A; absent when undefined.
    pub cum_roi: Option<f64>,
    /// Cumulative ATE vs A relative to B's; absent when undefined.
    pub rel_ate: Option<f64>,
    pub exposed_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub period: u32,
    pub arms: Vec<ArmPeriod>,
    #[serde(with = "crate::serde_float")]
    pub theta_c: f64,
    /// Arm D's threshold in force this period.
    #[serde(with = "crate::serde_float")]
    pub theta_d: f64,
    /// Exposed fraction targeted for arm D this period.
    pub q_d: f64,
    /// Whether `theta_d` came from a refit.
    pub calibrated: bool,
    /// Arms that received no visitors this period.
    pub empty_arms: Vec<Arm>,
}

impl PeriodReport {
    pub fn arm(&self, arm: Arm) -> &ArmPeriod {
        &self.arms[arm.index()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub reports: Vec<PeriodReport>,
    pub calibrations: Vec<CalibrationEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativePoint {
    pub period: u32,
    pub arm: Arm,
    pub cum_roi: Option<f64>,
    pub rel_ate: Option<f64>,
}

fn arm_metrics(cum: &[ArmTotals; 4]) -> [(Option<f64>, Option<f64>); 4] {
    let control = &cum[Arm::A.index()];
    let ate = |t: &ArmTotals| deltas_from_totals(t, control).ok().map(|d| d.ate());
    let b_ate = ate(&cum[Arm::B.index()]);
    Arm::ALL.map(|arm| {
        let t = &cum[arm.index()];
        let roi = deltas_from_totals(t, control).ok().and_then(|d| d.roi().ok());
        let rel = match (ate(t), b_ate) {
            (Some(a), Some(b)) if b != 0.0 => Some(a / b),
            _ => None,
        };
        (roi, rel)
    })
}

/// Per-arm cumulative ROI and relative ATE after each period.
pub fn cumulative_metrics(reports: &[PeriodReport]) -> Result<Vec<CumulativePoint>> {
    if reports.is_empty() {
        return Err(Error::InsufficientData("no period reports".into()));
    }
    let mut cum = [ArmTotals::default(); 4];
    let mut out = Vec::new();
    for r in reports {
        for a in &r.arms {
            cum[a.arm.index()].merge(&a.period);
        }
        for (arm, (roi, rel)) in Arm::ALL.iter().zip(arm_metrics(&cum)) {
            out.push(CumulativePoint { period: r.period, arm: *arm, cum_roi: roi, rel_ate: rel });
        }
    }
    Ok(out)
}

/// Arm of visitor `index` in `period`. Depends only on the seed and position,
/// never on features.
pub fn route_arm(weights: &ArmWeights, seed: u64, period: u32, index: usize) -> Arm {
    weights.pick(record_rng(seed, TAG_ARM, period as u64, index as u64).random())
}

/// Run the online trial with a prepared scorer.
pub fn run_experiment(config: &ExperimentConfig, scorer: &PreparedScorer, exec: Execution) -> Result<ExperimentResult> {
    config.validate()?;
    let traffic = config.stage_population(2, config.visitors_per_period);
    let cal = &config.calibration;
    let bounds = (cal.q_min, cal.q_max);

    let mut cum = [ArmTotals::default(); 4];
    let mut reports = Vec::with_capacity(config.periods as usize);
    let mut events = Vec::new();
    // (period, cumulative exposed fraction, cumulative ROI) of arm D
    let mut online: Vec<(u32, f64, f64)> = Vec::new();
    let mut target_q: Option<f64> = None;

    for period in 1..=config.periods {
        let visitors = traffic.draw_visitors(period, traffic.n, exec)?;
        let rows: Vec<&[f64]> = visitors.iter().map(|o| o.features.as_slice()).collect();
        let x = FeatureMatrix::from_rows(traffic.feature_dim, &rows)?;
        let scores = scorer.fitted.score(&x, exec)?;

        let calibrated = target_q.is_some();
        let theta_d = match target_q {
            Some(q) => q_to_threshold(&scores.sort_keys(), q)?,
            None => scorer.theta_c,
        };
        let c_treat = apply_threshold(scorer.theta_c, &scores);
        let d_treat = apply_threshold(theta_d, &scores);

        let seed = config.seed;
        let outcomes = exec.map(visitors.len(), |i| {
            let arm = route_arm(&config.arm_weights, seed, period, i);
            let treated = match arm {
                Arm::A => false,
                Arm::B => true,
                Arm::C => c_treat[i],
                Arm::D => d_treat[i],
            };
            let u: f64 = record_rng(seed, TAG_OUTCOME, period as u64, i as u64).random();
            (arm, visitors[i].realize(treated, u))
        });

        let mut totals = [ArmTotals::default(); 4];
        for (arm, rec) in &outcomes {
            totals[arm.index()].add(rec);
        }
        for (c, t) in cum.iter_mut().zip(&totals) {
            c.merge(t);
        }
        let metrics = arm_metrics(&cum);
        let arms: Vec<ArmPeriod> = Arm::ALL
            .iter()
            .map(|&arm| {
                let t = totals[arm.index()];
                let c = cum[arm.index()];
                ArmPeriod {
                    arm,
                    period: t,
                    cumulative: c,
                    cum_roi: metrics[arm.index()].0,
                    rel_ate: metrics[arm.index()].1,
                    exposed_fraction: (t.visitors > 0).then(|| t.treated as f64 / t.visitors as f64),
                }
            })
            .collect();
        let empty_arms = Arm::ALL.iter().copied().filter(|a| totals[a.index()].visitors == 0).collect();
        let q_d = target_q.unwrap_or_else(|| exposed(&scores, theta_d));
        reports.push(PeriodReport {
            period,
            arms,
            theta_c: scorer.theta_c,
            theta_d,
            q_d,
            calibrated,
            empty_arms,
        });

        let d = cum[Arm::D.index()];
        if let (Some(roi), true) = (metrics[Arm::D.index()].0, d.visitors > 0) {
            online.push((period, d.treated as f64 / d.visitors as f64, roi));
        }
        if cal.enabled && period < config.periods && period % cal.refit_every == 0 {
            let mut points = scorer.offline_points.clone();
            points.extend(online.iter().map(|&(p, q, roi)| CalibrationPoint { q, roi, weight: cal.online_weight(period - p) }));
            // A failed fit keeps the current operating point.
            if let Ok(curve) = fit_roi_curve_with(&points, &cal.lm) {
                let q_star = solve_q_star(&curve, bounds)?;
                target_q = Some(q_star);
                let theta = q_to_threshold(&scores.sort_keys(), q_star)?;
                events.push(CalibrationEvent { period, points, curve, q_star, theta });
            }
        }
    }
    Ok(ExperimentResult { reports, calibrations: events })
}

/// Prepare the scorer and run the trial.
pub fn simulate_experiment(config: &ExperimentConfig, exec: Execution) -> Result<(PreparedScorer, ExperimentResult)> {
    let scorer = prepare_scorer(config, exec)?;
    let result = run_experiment(config, &scorer, exec)?;
    Ok((scorer, result))
}

pub fn write_reports_jsonl<W: Write>(mut out: W, reports: &[PeriodReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn key(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

/// `period,arm,cum_roi,rel_ate,q,theta,calibrated` for every arm and period.
pub fn write_series_csv<W: Write>(out: W, reports: &[PeriodReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period", "arm", "cum_roi", "rel_ate", "q", "theta", "calibrated"])?;
    for r in reports {
        for a in &r.arms {
            let theta = match a.arm {
                Arm::A => String::new(),
                Arm::B => key(f64::NEG_INFINITY),
                Arm::C => key(r.theta_c),
                Arm::D => key(r.theta_d),
            };
            let calibrated = a.arm == Arm::D && r.calibrated;
            w.write_record([
                r.period.to_string(),
                a.arm.as_str().to_string(),
                opt(a.cum_roi),
                opt(a.rel_ate),
                opt(a.exposed_fraction),
                theta,
                calibrated.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
