//! The four uplift scoring methods.
//!
//! * **Two-Models**: separate purchase models per arm; score is their difference.
//! * **Transformed Outcome**: one regressor on `Y (T - e) / (e (1 - e))`.
//! * **Fractional Approximation**: the Two-Models probabilities plugged into the
//!   full greedy criterion
//!   `(P1 - P0) / (P1 (C - R1) + P0 R0)`.
//! * **Retrospective Estimation**: a classifier for `S(x) = Pr(T = 1 | x, Y = 1)`
//!   trained on purchases only. Since `S / (1 - S) = P1 / P0` (after correcting
//!   for the propensity), the greedy criterion and both sign conditions follow
//!   from `S` and the per-purchase value estimates.
//!
//! The first two only estimate uplift and serve as unconstrained benchmarks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::learners::{fit_classifier, fit_regressor, FittedModel, LearnerConfig, TrainingData, MODEL_VERSION};
use crate::types::{Dataset, FeatureMatrix, RecordScore, RecordSource, UpliftScores, ValueEstimates};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodId {
    TwoModels,
    TransformedOutcome,
    FractionalApproximation,
    Retrospective,
}

impl MethodId {
    pub const ALL: [MethodId; 4] =
        [MethodId::TwoModels, MethodId::TransformedOutcome, MethodId::FractionalApproximation, MethodId::Retrospective];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodId::TwoModels => "two-models",
            MethodId::TransformedOutcome => "transformed-outcome",
            MethodId::FractionalApproximation => "fractional-approximation",
            MethodId::Retrospective => "retrospective",
        }
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            MethodId::TwoModels => "Two-Models",
            MethodId::TransformedOutcome => "Transformed Outcome",
            MethodId::FractionalApproximation => "Fractional Approximation",
            MethodId::Retrospective => "Retrospective Estimation",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// `num / den` with the 0/0 case mapped to 0.
fn safe_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            num.signum() * f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Greedy ordering for a record with known uplift and loss.
///
/// Always-quadrant records get `+inf` (ordered among themselves by uplift per
/// unit of profit), candidates get `cate_y / cate_loss` (ties by uplift) and
/// the rest get `-inf` (ordered by uplift).
pub fn magnitude_score(cate_y: f64, cate_loss: f64) -> RecordScore {
    let y_positive = cate_y > 0.0;
    let loss_positive = cate_loss > 0.0;
    let (sort_key, tie_key) = match (y_positive, loss_positive) {
        (true, false) => (f64::INFINITY, safe_ratio(cate_y, -cate_loss)),
        (true, true) => (cate_y / cate_loss, cate_y),
        (false, _) => (f64::NEG_INFINITY, cate_y),
    };
    RecordScore { cate_y: Some(cate_y), cate_loss: Some(cate_loss), y_positive, loss_positive, sort_key, tie_key }
}

/// Uplift-only ordering used by the benchmark methods. Without a loss estimate
/// every positive-uplift record is a candidate.
pub fn unconstrained_score(cate_y: f64) -> RecordScore {
    RecordScore {
        cate_y: Some(cate_y),
        cate_loss: None,
        y_positive: cate_y > 0.0,
        loss_positive: true,
        sort_key: cate_y,
        tie_key: cate_y,
    }
}

fn arm_training(src: &Dataset, treated: bool) -> Result<TrainingData> {
    let idx: Vec<usize> = (0..src.len()).filter(|&i| src.record(i).treated == treated).collect();
    if idx.is_empty() {
        let arm = if treated { "treated" } else { "control" };
        return Err(Error::InsufficientArm(format!("no {arm} records in training data")));
    }
    let x = src.features().select(&idx);
    let y = idx.iter().map(|&i| src.record(i).purchased as u8 as f64).collect();
    TrainingData::unweighted(x, y)
}

fn check_dim(expected: usize, x: &FeatureMatrix) -> Result<()> {
    if x.rows() > 0 && x.dim() != expected {
        return Err(Error::Shape { expected, got: x.dim() });
    }
    Ok(())
}

/// Per-arm purchase models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoModels {
    pub treated: FittedModel,
    pub control: FittedModel,
}

pub fn fit_two_models(train: &Dataset, config: &LearnerConfig) -> Result<TwoModels> {
    let treated = arm_training(train, true)?;
    let control = arm_training(train, false)?;
    Ok(TwoModels { treated: fit_classifier(&treated, config)?, control: fit_classifier(&control, config)? })
}

impl TwoModels {
    /// `(P1, P0)` for every row.
    pub fn probabilities(&self, x: &FeatureMatrix, exec: Execution) -> Result<Vec<(f64, f64)>> {
        check_dim(self.treated.feature_dim, x)?;
        let p1 = self.treated.predict_batch(x, exec)?;
        let p0 = self.control.predict_batch(x, exec)?;
        Ok(p1.into_iter().zip(p0).collect())
    }

    pub fn scores(&self, x: &FeatureMatrix, exec: Execution) -> Result<UpliftScores> {
        let probs = self.probabilities(x, exec)?;
        Ok(UpliftScores::new(probs.into_iter().map(|(p1, p0)| unconstrained_score(p1 - p0)).collect()))
    }
}

/// `Y (T - e) / (e (1 - e))`; its conditional mean is the uplift.
pub fn transformed_target(purchased: bool, treated: bool, propensity: f64) -> f64 {
    if !purchased {
        return 0.0;
    }
    let t = if treated { 1.0 } else { 0.0 };
    (t - propensity) / (propensity * (1.0 - propensity))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformedOutcome {
    pub model: FittedModel,
    pub propensity: f64,
}

pub fn fit_transformed_outcome(train: &Dataset, config: &LearnerConfig) -> Result<TransformedOutcome> {
    let e = train.propensity();
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Config(format!("propensity {e} must lie in (0, 1)")));
    }
    let y = train.records().iter().map(|r| transformed_target(r.purchased, r.treated, e)).collect();
    let data = TrainingData::unweighted(train.features(), y)?;
    Ok(TransformedOutcome { model: fit_regressor(&data, config)?, propensity: e })
}

impl TransformedOutcome {
    pub fn scores(&self, x: &FeatureMatrix, exec: Execution) -> Result<UpliftScores> {
        check_dim(self.model.feature_dim, x)?;
        let z = self.model.predict_batch(x, exec)?;
        Ok(UpliftScores::new(z.into_iter().map(|v| unconstrained_score(v.clamp(-1.0, 1.0))).collect()))
    }
}

/// Mean revenue and cost per purchase, from purchases only.
pub fn fit_value_estimates<S: RecordSource + ?Sized>(train: &S) -> Result<ValueEstimates> {
    let (mut r1, mut c, mut n1) = (0.0, 0.0, 0usize);
    let (mut r0, mut n0) = (0.0, 0usize);
    for &i in train.purchase_indices() {
        let r = train.record(i);
        if r.treated {
            r1 += r.revenue;
            c += r.cost;
            n1 += 1;
        } else {
            r0 += r.revenue;
            n0 += 1;
        }
    }
    if n1 == 0 {
        return Err(Error::InsufficientData("no treated purchases (cell T=1, Y=1 is empty)".into()));
    }
    if n0 == 0 {
        return Err(Error::InsufficientData("no control purchases (cell T=0, Y=1 is empty)".into()));
    }
    ValueEstimates::new(r1 / n1 as f64, r0 / n0 as f64, c / n1 as f64)
}

/// Fractional-approximation score from arm probabilities and value estimates.
pub fn fractional_score(p1: f64, p0: f64, values: &ValueEstimates) -> RecordScore {
    magnitude_score(p1 - p0, p1 * (values.c - values.r1) + p0 * values.r0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalApproximation {
    pub models: TwoModels,
    pub values: ValueEstimates,
}

pub fn fit_fractional(train: &Dataset, config: &LearnerConfig) -> Result<FractionalApproximation> {
    let values = fit_value_estimates(train)?;
    Ok(FractionalApproximation { models: fit_two_models(train, config)?, values })
}

pub fn fractional_scores(
    models: &TwoModels,
    values: &ValueEstimates,
    x: &FeatureMatrix,
    exec: Execution,
) -> Result<UpliftScores> {
    let probs = models.probabilities(x, exec)?;
    Ok(UpliftScores::new(probs.into_iter().map(|(p1, p0)| fractional_score(p1, p0, values)).collect()))
}

/// How the retrospective score obtains per-purchase revenue and cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueMode {
    /// One revenue figure for both arms (`R1` is used for `R0` too) and one cost.
    #[default]
    Constant,
    /// Constant `R1`, `R0` and `C` estimated separately.
    ArmSpecific,
    /// Regressors for `R1(x)`, `R0(x)` and `C(x)` fit on purchases.
    PerFeature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueModels {
    pub r1: FittedModel,
    pub r0: FittedModel,
    pub c: FittedModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrospectiveModel {
    /// Classifier for `Pr(T = 1 | x, Y = 1)`.
    pub s_model: FittedModel,
    pub values: ValueEstimates,
    pub propensity: f64,
    #[serde(default)]
    pub value_mode: ValueMode,
    #[serde(default)]
    pub value_models: Option<ValueModels>,
}

/// Exact `Pr(T = 1 | Y = 1, x)` for purchase probabilities `p1`, `p0` under
/// treatment propensity `e`.
pub fn purchase_treated_share(p1: f64, p0: f64, propensity: f64) -> f64 {
    let a = propensity * p1;
    a / (a + (1.0 - propensity) * p0)
}

/// Convert `S(x)` learned under propensity `e` to the value it would take under
/// a balanced split: the odds are multiplied by `(1 - e) / e`.
pub fn balanced_share(s: f64, propensity: f64) -> f64 {
    let a = s * (1.0 - propensity);
    let b = (1.0 - s) * propensity;
    a / (a + b)
}

/// Loss-sign threshold on the balanced share: incremental loss is positive iff
/// `s < R1 / (2 R1 - C)`.
pub fn loss_sign_threshold(values: &ValueEstimates) -> Result<f64> {
    check_economics(values)?;
    Ok(values.r1 / (2.0 * values.r1 - values.c))
}

fn check_economics(values: &ValueEstimates) -> Result<()> {
    if 2.0 * values.r1 <= values.c {
        return Err(Error::DegenerateEconomics { r1: values.r1, c: values.c });
    }
    Ok(())
}

/// Retrospective score from a balanced share `s` and per-purchase values.
///
/// With `P1 = s K` and `P0 = (1 - s) K` for some `K > 0`, the greedy criterion
/// is `(2s - 1) / (s (C - R1) + (1 - s) R0)`, uplift is positive iff `s > 0.5`
/// and loss is positive iff that denominator is.
pub fn retrospective_score(s: f64, r1: f64, r0: f64, c: f64) -> RecordScore {
    let num = 2.0 * s - 1.0;
    let den = s * (c - r1) + (1.0 - s) * r0;
    let y_positive = s > 0.5;
    let loss_positive = den > 0.0;
    let (sort_key, tie_key) = match (y_positive, loss_positive) {
        (true, false) => (f64::INFINITY, safe_ratio(num, -den)),
        (true, true) => (num / den, num),
        (false, _) => (f64::NEG_INFINITY, num),
    };
    RecordScore { cate_y: None, cate_loss: None, y_positive, loss_positive, sort_key, tie_key }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrospectiveOptions {
    pub value_mode: ValueMode,
}

impl Default for RetrospectiveOptions {
    fn default() -> Self {
        Self { value_mode: ValueMode::Constant }
    }
}

/// Fit the retrospective model. Only purchase rows are read.
pub fn fit_retrospective<S: RecordSource + ?Sized>(
    train: &S,
    config: &LearnerConfig,
    options: &RetrospectiveOptions,
) -> Result<RetrospectiveModel> {
    let e = train.propensity();
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Config(format!("propensity {e} must lie in (0, 1)")));
    }
    let values = fit_value_estimates(train)?;
    if options.value_mode != ValueMode::PerFeature {
        check_economics(&values)?;
    }
    let d = train.feature_dim();
    let purchases = train.purchase_indices();
    let mut data = Vec::with_capacity(purchases.len() * d);
    let mut label = Vec::with_capacity(purchases.len());
    let mut treated_rows = Vec::new();
    let mut control_rows = Vec::new();
    for (k, &i) in purchases.iter().enumerate() {
        let r = train.record(i);
        data.extend_from_slice(&r.features);
        label.push(r.treated as u8 as f64);
        if r.treated {
            treated_rows.push(k);
        } else {
            control_rows.push(k);
        }
    }
    let x = FeatureMatrix::new(d, data)?;
    let s_model = fit_classifier(&TrainingData::unweighted(x.clone(), label)?, config)?;
    let value_models = if options.value_mode == ValueMode::PerFeature {
        let revenue: Vec<f64> = purchases.iter().map(|&i| train.record(i).revenue).collect();
        let cost: Vec<f64> = purchases.iter().map(|&i| train.record(i).cost).collect();
        let fit_on = |rows: &[usize], target: &[f64]| -> Result<FittedModel> {
            let y = rows.iter().map(|&k| target[k]).collect();
            fit_regressor(&TrainingData::unweighted(x.select(rows), y)?, config)
        };
        Some(ValueModels {
            r1: fit_on(&treated_rows, &revenue)?,
            r0: fit_on(&control_rows, &revenue)?,
            c: fit_on(&treated_rows, &cost)?,
        })
    } else {
        None
    };
    Ok(RetrospectiveModel { s_model, values, propensity: e, value_mode: options.value_mode, value_models })
}

impl RetrospectiveModel {
    /// Balanced share `S(x)` for each row.
    pub fn shares(&self, x: &FeatureMatrix, exec: Execution) -> Result<Vec<f64>> {
        check_dim(self.s_model.feature_dim, x)?;
        let s = self.s_model.predict_batch(x, exec)?;
        Ok(s.into_iter().map(|v| balanced_share(v, self.propensity)).collect())
    }
}

pub fn retrospective_scores(model: &RetrospectiveModel, x: &FeatureMatrix, exec: Execution) -> Result<UpliftScores> {
    let shares = model.shares(x, exec)?;
    let v = model.values;
    let rows = match (model.value_mode, &model.value_models) {
        (ValueMode::Constant, _) => {
            check_economics(&v)?;
            shares.iter().map(|&s| retrospective_score(s, v.r1, v.r1, v.c)).collect()
        }
        (ValueMode::ArmSpecific, _) => {
            check_economics(&v)?;
            shares.iter().map(|&s| retrospective_score(s, v.r1, v.r0, v.c)).collect()
        }
        (ValueMode::PerFeature, Some(m)) => {
            let r1 = m.r1.predict_batch(x, exec)?;
            let r0 = m.r0.predict_batch(x, exec)?;
            let c = m.c.predict_batch(x, exec)?;
            exec.map(shares.len(), |i| retrospective_score(shares[i], r1[i].max(0.0), r0[i].max(0.0), c[i].max(0.0)))
        }
        (ValueMode::PerFeature, None) => {
            return Err(Error::Schema("per-feature value mode without value models".into()));
        }
    };
    Ok(UpliftScores::new(rows))
}

/// A trained method of any kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FittedMethod {
    TwoModels(TwoModels),
    TransformedOutcome(TransformedOutcome),
    FractionalApproximation(FractionalApproximation),
    Retrospective(RetrospectiveModel),
}

/// Anything that turns feature rows into uplift scores.
pub trait Scorer: Sync {
    fn method(&self) -> MethodId;
    fn feature_dim(&self) -> usize;
    fn score(&self, x: &FeatureMatrix, exec: Execution) -> Result<UpliftScores>;
}

impl Scorer for FittedMethod {
    fn method(&self) -> MethodId {
        match self {
            FittedMethod::TwoModels(_) => MethodId::TwoModels,
            FittedMethod::TransformedOutcome(_) => MethodId::TransformedOutcome,
            FittedMethod::FractionalApproximation(_) => MethodId::FractionalApproximation,
            FittedMethod::Retrospective(_) => MethodId::Retrospective,
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            FittedMethod::TwoModels(m) => m.treated.feature_dim,
            FittedMethod::TransformedOutcome(m) => m.model.feature_dim,
            FittedMethod::FractionalApproximation(m) => m.models.treated.feature_dim,
            FittedMethod::Retrospective(m) => m.s_model.feature_dim,
        }
    }

    fn score(&self, x: &FeatureMatrix, exec: Execution) -> Result<UpliftScores> {
        match self {
            FittedMethod::TwoModels(m) => m.scores(x, exec),
            FittedMethod::TransformedOutcome(m) => m.scores(x, exec),
            FittedMethod::FractionalApproximation(m) => fractional_scores(&m.models, &m.values, x, exec),
            FittedMethod::Retrospective(m) => retrospective_scores(m, x, exec),
        }
    }
}

pub fn fit_method(
    method: MethodId,
    train: &Dataset,
    config: &LearnerConfig,
    options: &RetrospectiveOptions,
) -> Result<FittedMethod> {
    Ok(match method {
        MethodId::TwoModels => FittedMethod::TwoModels(fit_two_models(train, config)?),
        MethodId::TransformedOutcome => FittedMethod::TransformedOutcome(fit_transformed_outcome(train, config)?),
        MethodId::FractionalApproximation => FittedMethod::FractionalApproximation(fit_fractional(train, config)?),
        MethodId::Retrospective => FittedMethod::Retrospective(fit_retrospective(train, config, options)?),
    })
}

/// Serialized form of a trained method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodBundle {
    pub version: u32,
    pub feature_dim: usize,
    pub propensity: f64,
    pub fitted: FittedMethod,
}

impl MethodBundle {
    pub fn new(fitted: FittedMethod, propensity: f64) -> Self {
        Self { version: BUNDLE_VERSION, feature_dim: fitted.feature_dim(), propensity, fitted }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let found = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Schema("method bundle has no version".into()))?;
        if found != BUNDLE_VERSION as u64 {
            return Err(Error::UnknownVersion { found: found as u32, expected: BUNDLE_VERSION });
        }
        let bundle: MethodBundle = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        for m in bundle.models() {
            if m.version != MODEL_VERSION {
                return Err(Error::UnknownVersion { found: m.version, expected: MODEL_VERSION });
            }
        }
        Ok(bundle)
    }

    fn models(&self) -> Vec<&FittedModel> {
        match &self.fitted {
            FittedMethod::TwoModels(m) => vec![&m.treated, &m.control],
            FittedMethod::TransformedOutcome(m) => vec![&m.model],
            FittedMethod::FractionalApproximation(m) => vec![&m.models.treated, &m.models.control],
            FittedMethod::Retrospective(m) => {
                let mut v = vec![&m.s_model];
                if let Some(vm) = &m.value_models {
                    v.extend([&vm.r1, &vm.r0, &vm.c]);
                }
                v
            }
        }
    }
}
