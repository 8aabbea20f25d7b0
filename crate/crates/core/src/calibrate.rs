//! Dynamic threshold calibration.
//!
//! The realized ROI as a function of the exposed fraction `Q` is modeled as
//! `roi(Q) = a * exp(b * Q) + c`, fitted by Levenberg-Marquardt on weighted
//! residuals. The operating point is the `Q` where the fitted curve crosses
//! zero, mapped back to a score threshold through the reference distribution.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub q: f64,
    pub roi: f64,
    pub weight: f64,
}

impl CalibrationPoint {
    pub fn new(q: f64, roi: f64, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) || !roi.is_finite() || !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!("invalid calibration point q={q} roi={roi} weight={weight}")));
        }
        Ok(Self { q, roi, weight })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CalibrationCurve {
    pub fn from_params(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c, residual_norm: 0.0, iterations: 0, converged: true }
    }

    pub fn eval(&self, q: f64) -> f64 {
        self.a * (self.b * q).exp() + self.c
    }

    fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

/// Partial derivatives of `a * exp(b * q) + c` with respect to `(a, b, c)`.
pub fn jacobian(a: f64, b: f64, q: f64) -> [f64; 3] {
    let e = (b * q).exp();
    [e, a * q * e, 1.0]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub gradient_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 200, step_tolerance: 1e-10, gradient_tolerance: 1e-8, initial_lambda: 1e-3 }
    }
}

fn sse(points: &[CalibrationPoint], p: [f64; 3]) -> f64 {
    points
        .iter()
        .map(|pt| {
            let r = pt.weight * (p[0] * (p[1] * pt.q).exp() + p[2] - pt.roi);
            r * r
        })
        .sum()
}

/// Normal equations `J^T J` and gradient `J^T r` at `p`.
fn normal_equations(points: &[CalibrationPoint], p: [f64; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut jtj = [[0.0; 3]; 3];
    let mut jtr = [0.0; 3];
    for pt in points {
        let j = jacobian(p[0], p[1], pt.q).map(|v| v * pt.weight);
        let r = pt.weight * (p[0] * (p[1] * pt.q).exp() + p[2] - pt.roi);
        for i in 0..3 {
            jtr[i] += j[i] * r;
            for k in 0..3 {
                jtj[i][k] += j[i] * j[k];
            }
        }
    }
    (jtj, jtr)
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        v.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            v[row] -= f * v[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (v[row] - s) / m[row][row];
    }
    x.iter().all(|t| t.is_finite()).then_some(x)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn fit_roi_curve(points: &[CalibrationPoint]) -> Result<CalibrationCurve> {
    fit_roi_curve_with(points, &LmOptions::default())
}

pub fn fit_roi_curve_with(points: &[CalibrationPoint], opts: &LmOptions) -> Result<CalibrationCurve> {
    let mut qs: Vec<f64> = points.iter().map(|p| p.q).collect();
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    if points.len() < 3 || qs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "curve fit needs at least 3 distinct q values, got {}",
            qs.len()
        )));
    }
    let lo = points.iter().min_by(|x, y| x.q.total_cmp(&y.q)).unwrap();
    let hi = points.iter().max_by(|x, y| x.q.total_cmp(&y.q)).unwrap();
    let mut p = [lo.roi - hi.roi, -1.0, hi.roi];
    let mut cost = sse(points, p);
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal_equations(points, p);
        if norm(&jtr) <= opts.gradient_tolerance {
            break;
        }
        let mut damped = jtj;
        for i in 0..3 {
            damped[i][i] += lambda * jtj[i][i].max(1e-12);
        }
        let Some(step) = solve3(damped, jtr.map(|g| -g)) else {
            lambda *= 10.0;
            continue;
        };
        let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
        let trial_cost = sse(points, trial);
        if trial_cost.is_finite() && trial_cost < cost {
            p = trial;
            cost = trial_cost;
            lambda /= 10.0;
        } else {
            lambda *= 10.0;
        }
        if norm(&step) < opts.step_tolerance {
            break;
        }
    }
    let curve = CalibrationCurve {
        a: p[0],
        b: p[1],
        c: p[2],
        residual_norm: cost.sqrt(),
        iterations,
        converged: false,
    };
    if !curve.is_finite() || !cost.is_finite() {
        return Err(Error::FitFailure(format!("non-finite parameters after {iterations} iterations: {p:?}")));
    }
    let (_, jtr) = normal_equations(points, p);
    Ok(CalibrationCurve { converged: norm(&jtr) <= opts.gradient_tolerance, ..curve })
}

/// Exposed fraction at which the fitted ROI crosses zero, within `bounds`.
pub fn solve_q_star(curve: &CalibrationCurve, bounds: (f64, f64)) -> Result<f64> {
    if !curve.is_finite() {
        return Err(Error::FitFailure("calibration curve has non-finite parameters".into()));
    }
    let (lo, hi) = bounds;
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
        return Err(Error::Config(format!("invalid q bounds [{lo}, {hi}]")));
    }
    if curve.eval(hi) >= 0.0 {
        return Ok(hi);
    }
    if curve.eval(lo) <= 0.0 {
        return Ok(lo);
    }
    // eval(lo) > 0 > eval(hi): the curve is monotone, so exactly one root.
    let ratio = -curve.c / curve.a;
    let closed = if ratio > 0.0 && curve.b != 0.0 { ratio.ln() / curve.b } else { f64::NAN };
    let q = if closed.is_finite() && (lo..=hi).contains(&closed) {
        closed
    } else {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if curve.eval(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    Ok(q.clamp(lo, hi))
}

/// Threshold exposing the top `q` fraction of `reference`: the `ceil(q n)`-th
/// largest key. `q = 0` returns a value above every key.
pub fn q_to_threshold(reference: &[f64], q: f64) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InsufficientData("empty reference score distribution".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("exposed fraction {q} outside [0, 1]")));
    }
    let mut keys = reference.to_vec();
    keys.sort_by(|a, b| b.total_cmp(a));
    let n = keys.len();
    let k = ((q * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if k == 0 {
        let max = keys[0];
        return Ok(if max == f64::INFINITY { f64::INFINITY } else { max.next_up() });
    }
    Ok(keys[k.min(n) - 1])
}

/// Fraction of `reference` with key `>= threshold`.
pub fn exposed_fraction(reference: &[f64], threshold: f64) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    reference.iter().filter(|&&k| k >= threshold).count() as f64 / reference.len() as f64
}

/// Settings for periodic refits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// When false the threshold never moves.
    pub enabled: bool,
    pub q_min: f64,
    pub q_max: f64,
    /// Number of equal-width bins of offline curve points.
    pub offline_points: usize,
    pub offline_weight: f64,
    /// Weight of online observations at most `recent_age` periods old.
    pub recent_weight: f64,
    pub older_weight: f64,
    pub recent_age: u32,
    pub refit_every: u32,
    pub lm: LmOptions,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            q_min: 0.05,
            q_max: 1.0,
            offline_points: 20,
            offline_weight: 1.0,
            recent_weight: 4.0,
            older_weight: 2.0,
            recent_age: 3,
            refit_every: 1,
            lm: LmOptions::default(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.q_min) || !(self.q_min..=1.0).contains(&self.q_max) {
            return Err(Error::Config(format!("invalid q bounds [{}, {}]", self.q_min, self.q_max)));
        }
        if [self.offline_weight, self.recent_weight, self.older_weight].iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("calibration weights must be > 0".into()));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn online_weight(&self, age: u32) -> f64 {
        if age <= self.recent_age {
            self.recent_weight
        } else {
            self.older_weight
        }
    }
}

/// One refit, as written to the calibration log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEvent {
    pub period: u32,
    pub points: Vec<CalibrationPoint>,
    pub curve: CalibrationCurve,
    pub q_star: f64,
    #[serde(with = "crate::serde_float")]
    pub theta: f64,
}

pub fn write_calibration_log<W: Write>(mut out: W, events: &[CalibrationEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
