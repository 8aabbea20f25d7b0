//! Offline evaluation of a ranking: Qini curve, AUUC, Qini-ROI curve and the
//! summary metrics used to compare methods.
//!
//! Records are sorted by descending `sort_key`. At each prefix the control
//! arm is rescaled to the prefix's own treated count before differencing.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::economics::roi;
use crate::error::{Error, Result};
use crate::types::{Dataset, RecordSource, UpliftScores};

pub const DEFAULT_GRID: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub q: f64,
    /// Normalized incremental purchases (Qini) or ROI (Qini-ROI). NaN when
    /// undefined.
    #[serde(with = "crate::serde_float")]
    pub value: f64,
    /// Unnormalized numerator: incremental purchases or incremental revenue.
    pub raw: f64,
    pub n_t: u64,
    pub n_c: u64,
    pub defined: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    /// False when a Qini curve could not be normalized (overall effect <= 0).
    pub normalized: bool,
}

impl Curve {
    pub fn qs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.q).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }
}

#[derive(Clone, Copy, Default)]
struct Prefix {
    n_t: u64,
    n_c: u64,
    y_t: f64,
    y_c: f64,
    r_t: f64,
    r_c: f64,
    c_t: f64,
}

impl Prefix {
    fn scale(&self) -> f64 {
        if self.n_c == 0 {
            0.0
        } else {
            self.n_t as f64 / self.n_c as f64
        }
    }
    fn delta_purchases(&self) -> f64 {
        self.y_t - self.y_c * self.scale()
    }
    fn delta_revenue(&self) -> f64 {
        self.r_t - self.r_c * self.scale()
    }
}

/// Prefix sizes `floor(j * n / grid)` for `j = 0..=grid`, deduplicated.
pub fn grid_sizes(n: usize, grid: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..=grid).map(|j| j * n / grid).collect();
    ks.dedup();
    ks
}

fn prefixes(validation: &Dataset, scores: &UpliftScores, grid: usize) -> Result<Vec<(usize, Prefix)>> {
    if scores.len() != validation.len() {
        return Err(Error::Shape { expected: validation.len(), got: scores.len() });
    }
    if grid == 0 {
        return Err(Error::Config("grid must have at least one bin".into()));
    }
    let recs = validation.records();
    if !recs.iter().any(|r| r.treated) || !recs.iter().any(|r| !r.treated) {
        return Err(Error::InsufficientArm("validation data needs both treated and control records".into()));
    }
    let order = scores.ranking();
    let sizes = grid_sizes(order.len(), grid);
    let mut out = Vec::with_capacity(sizes.len());
    let mut acc = Prefix::default();
    let mut done = 0;
    for k in sizes {
        for &i in &order[done..k] {
            let r = &recs[i];
            let y = if r.purchased { 1.0 } else { 0.0 };
            if r.treated {
                acc.n_t += 1;
                acc.y_t += y;
                acc.r_t += r.revenue;
                acc.c_t += r.cost;
            } else {
                acc.n_c += 1;
                acc.y_c += y;
                acc.r_c += r.revenue;
            }
        }
        done = k;
        out.push((k, acc));
    }
    Ok(out)
}

fn q_of(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

/// Cumulative incremental purchases when targeting the top `q` fraction,
/// normalized by the full-population effect.
pub fn qini_curve(validation: &Dataset, scores: &UpliftScores, grid: usize) -> Result<Curve> {
    let pre = prefixes(validation, scores, grid)?;
    let n = validation.len();
    let total = pre.last().map(|(_, p)| p.delta_purchases()).unwrap_or(0.0);
    let normalized = total > 0.0;
    let points = pre
        .iter()
        .map(|&(k, p)| {
            let raw = p.delta_purchases();
            CurvePoint {
                q: q_of(k, n),
                value: if normalized { raw / total } else { raw },
                raw,
                n_t: p.n_t,
                n_c: p.n_c,
                defined: true,
            }
        })
        .collect();
    Ok(Curve { points, normalized })
}

/// ROI of targeting the top `q` fraction. Prefixes without investment are
/// flagged undefined.
pub fn qini_roi_curve(validation: &Dataset, scores: &UpliftScores, grid: usize) -> Result<Curve> {
    let pre = prefixes(validation, scores, grid)?;
    let n = validation.len();
    let points = pre
        .iter()
        .map(|&(k, p)| {
            let raw = p.delta_revenue();
            let value = roi(raw, p.c_t).ok();
            CurvePoint {
                q: q_of(k, n),
                value: value.unwrap_or(f64::NAN),
                raw,
                n_t: p.n_t,
                n_c: p.n_c,
                defined: value.is_some(),
            }
        })
        .collect();
    Ok(Curve { points, normalized: true })
}

/// Trapezoidal area under a normalized curve.
pub fn auuc(curve: &Curve) -> Result<f64> {
    if !curve.normalized {
        return Err(Error::Normalization(curve.points.last().map(|p| p.raw).unwrap_or(0.0)));
    }
    Ok(curve.points.windows(2).map(|w| 0.5 * (w[1].q - w[0].q) * (w[0].value + w[1].value)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auuc: f64,
    pub max_population_at_roi0: f64,
    pub max_ate_at_roi0: f64,
}

/// Summary metrics from a Qini and a Qini-ROI curve on the same grid.
/// Undefined ROI points (no investment) count as feasible.
pub fn table_metrics(qini: &Curve, qini_roi: &Curve) -> Result<MetricReport> {
    if qini.points.len() != qini_roi.points.len() || qini.points.iter().zip(&qini_roi.points).any(|(a, b)| a.q != b.q) {
        return Err(Error::Config("qini and qini-roi curves are on different grids".into()));
    }
    let auuc = auuc(qini)?;
    let mut max_population: f64 = 0.0;
    let mut max_ate: f64 = 0.0;
    for (p, r) in qini.points.iter().zip(&qini_roi.points) {
        if !r.defined || r.value >= 0.0 {
            max_population = max_population.max(p.q);
            max_ate = max_ate.max(p.value);
        }
    }
    Ok(MetricReport { auuc, max_population_at_roi0: max_population, max_ate_at_roi0: max_ate })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub qini: Curve,
    pub qini_roi: Curve,
    pub report: MetricReport,
}

pub fn evaluate(validation: &Dataset, scores: &UpliftScores, grid: usize) -> Result<Evaluation> {
    let qini = qini_curve(validation, scores, grid)?;
    let qini_roi = qini_roi_curve(validation, scores, grid)?;
    let report = table_metrics(&qini, &qini_roi)?;
    Ok(Evaluation { qini, qini_roi, report })
}

/// Write `q,value,n_t,n_c,defined`; undefined values are left empty.
pub fn write_curve_csv<W: Write>(out: W, curve: &Curve) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q", "value", "n_t", "n_c", "defined"])?;
    for p in &curve.points {
        let value = if p.defined { format!("{}", p.value) } else { String::new() };
        w.write_record([format!("{}", p.q), value, p.n_t.to_string(), p.n_c.to_string(), p.defined.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

/// One row per method: `method,auuc,max_population_at_roi0,max_ate_at_roi0`.
pub fn write_compare_csv<W: Write>(out: W, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "auuc", "max_population_at_roi0", "max_ate_at_roi0"])?;
    for r in rows {
        let m = r.metrics;
        w.write_record([
            r.method.clone(),
            format!("{}", m.auuc),
            format!("{}", m.max_population_at_roi0),
            format!("{}", m.max_ate_at_roi0),
        ])?;
    }
    w.flush()?;
    Ok(())
}
