//! Domain types shared by every stage of the pipeline.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One customer visit from a randomized trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub features: Vec<f64>,
    pub treated: bool,
    pub purchased: bool,
    pub revenue: f64,
    pub cost: f64,
}

impl VisitRecord {
    /// Checks the outcome invariants: no revenue or cost without a purchase,
    /// no cost without the promotion, finite nonnegative money, finite features.
    pub fn validate(&self) -> Result<()> {
        if let Some(j) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("feature {j} is not finite")));
        }
        if !(self.revenue.is_finite() && self.revenue >= 0.0) {
            return Err(Error::Schema(format!("revenue {} must be finite and >= 0", self.revenue)));
        }
        if !(self.cost.is_finite() && self.cost >= 0.0) {
            return Err(Error::Schema(format!("cost {} must be finite and >= 0", self.cost)));
        }
        if !self.purchased && (self.revenue != 0.0 || self.cost != 0.0) {
            return Err(Error::Schema("revenue or cost recorded without a purchase".into()));
        }
        if !self.treated && self.cost != 0.0 {
            return Err(Error::Schema("cost recorded on an untreated visit".into()));
        }
        Ok(())
    }
}

/// Read access to trial records.
///
/// Learners that only need purchases go through [`RecordSource::purchase_indices`]
/// and then [`RecordSource::record`], which lets tests wrap a dataset and audit
/// exactly which rows were touched.
pub trait RecordSource {
    fn feature_dim(&self) -> usize;
    fn propensity(&self) -> f64;
    fn len(&self) -> usize;
    fn record(&self, index: usize) -> &VisitRecord;
    /// Row indices of visits that ended in a purchase.
    fn purchase_indices(&self) -> &[usize];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of comparing the realized treated share with the declared propensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropensityCheck {
    pub treated_fraction: f64,
    pub standard_errors: f64,
}

impl PropensityCheck {
    pub fn within_tolerance(&self) -> bool {
        self.standard_errors <= 3.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<VisitRecord>,
    feature_dim: usize,
    propensity: f64,
    seed: Option<u64>,
    purchases: Vec<usize>,
}

impl Dataset {
    pub fn new(records: Vec<VisitRecord>, feature_dim: usize, propensity: f64) -> Result<Self> {
        if !(propensity > 0.0 && propensity < 1.0) {
            return Err(Error::Config(format!("propensity {propensity} must lie in (0, 1)")));
        }
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != feature_dim {
                return Err(Error::Shape { expected: feature_dim, got: r.features.len() });
            }
            r.validate().map_err(|e| match e {
                Error::Schema(msg) => Error::Schema(format!("row {i}: {msg}")),
                other => other,
            })?;
        }
        let purchases = records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.purchased.then_some(i))
            .collect();
        Ok(Self { records, feature_dim, propensity, seed: None, purchases })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn records(&self) -> &[VisitRecord] {
        &self.records
    }

    pub fn treated(&self) -> impl Iterator<Item = &VisitRecord> {
        self.records.iter().filter(|r| r.treated)
    }

    pub fn control(&self) -> impl Iterator<Item = &VisitRecord> {
        self.records.iter().filter(|r| !r.treated)
    }

    pub fn features(&self) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.records.len() * self.feature_dim);
        for r in &self.records {
            data.extend_from_slice(&r.features);
        }
        FeatureMatrix { dim: self.feature_dim, data }
    }

    /// Realized treated share against the declared propensity, in binomial
    /// standard errors.
    pub fn propensity_check(&self) -> PropensityCheck {
        let n = self.records.len() as f64;
        let treated = self.records.iter().filter(|r| r.treated).count() as f64;
        let frac = if n > 0.0 { treated / n } else { 0.0 };
        let se = (self.propensity * (1.0 - self.propensity) / n.max(1.0)).sqrt();
        PropensityCheck { treated_fraction: frac, standard_errors: (frac - self.propensity).abs() / se }
    }

    /// Rows `[start, end)` as a new dataset sharing this one's metadata.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let records = self.records[start..end].to_vec();
        let purchases = records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.purchased.then_some(i))
            .collect();
        Dataset { records, feature_dim: self.feature_dim, propensity: self.propensity, seed: self.seed, purchases }
    }
}

impl RecordSource for Dataset {
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn propensity(&self) -> f64 {
        self.propensity
    }

    fn len(&self) -> usize {
        self.records.len()
    }

    fn record(&self, index: usize) -> &VisitRecord {
        &self.records[index]
    }

    fn purchase_indices(&self) -> &[usize] {
        &self.purchases
    }
}

/// Dense row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 && !data.is_empty() {
            return Err(Error::Shape { expected: 0, got: data.len() });
        }
        if dim > 0 && data.len() % dim != 0 {
            return Err(Error::Shape { expected: dim, got: data.len() % dim });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Shape { expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Keep the listed rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix { dim: self.dim, data }
    }
}

/// Sign quadrant of a customer in the (utility, weight) plane of the knapsack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    /// Positive uplift at nonpositive incremental loss: treated unconditionally.
    Always,
    /// Positive uplift that costs money: competes for the budget.
    Candidate,
    /// No positive uplift: never treated.
    Never,
}

/// Per-record estimates produced by an uplift method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordScore {
    /// Estimated change in purchase probability, when the method identifies it.
    pub cate_y: Option<f64>,
    /// Estimated incremental loss (cost minus incremental revenue).
    pub cate_loss: Option<f64>,
    pub y_positive: bool,
    pub loss_positive: bool,
    /// Greedy ordering key. `+inf` for the always quadrant and `-inf` for the
    /// never quadrant in loss-aware methods.
    pub sort_key: f64,
    /// Secondary key ordering records that share a `sort_key`.
    pub tie_key: f64,
}

impl RecordScore {
    pub fn quadrant(&self) -> Quadrant {
        match (self.y_positive, self.loss_positive) {
            (false, _) => Quadrant::Never,
            (true, false) => Quadrant::Always,
            (true, true) => Quadrant::Candidate,
        }
    }

    /// Descending rank order: larger `sort_key` first, then larger `tie_key`.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .sort_key
            .total_cmp(&self.sort_key)
            .then_with(|| other.tie_key.total_cmp(&self.tie_key))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpliftScores {
    pub rows: Vec<RecordScore>,
}

impl UpliftScores {
    pub fn new(rows: Vec<RecordScore>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sort_keys(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sort_key).collect()
    }

    /// Whether every record carries both numeric CATE estimates.
    pub fn has_magnitudes(&self) -> bool {
        self.rows.iter().all(|r| r.cate_y.is_some() && r.cate_loss.is_some())
    }

    /// Record indices from best to worst; equal keys keep input order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|&a, &b| self.rows[a].rank_cmp(&self.rows[b]));
        idx
    }
}

/// A scorer plus a threshold: treat iff `sort_key >= threshold`, except that the
/// never quadrant is never treated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPolicy {
    pub scorer_id: String,
    #[serde(with = "crate::serde_float")]
    pub threshold: f64,
    /// Share of the reference population the threshold exposes.
    pub exposed_fraction: f64,
}

/// Per-purchase revenue and cost expectations, constant across customers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimates {
    /// Mean revenue of a treated purchase.
    pub r1: f64,
    /// Mean revenue of a control purchase.
    pub r0: f64,
    /// Mean promotion cost of a treated purchase.
    pub c: f64,
}

impl ValueEstimates {
    pub fn new(r1: f64, r0: f64, c: f64) -> Result<Self> {
        for (name, v) in [("r1", r1), ("r0", r0), ("c", c)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("value estimate {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(Self { r1, r0, c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: bool, y: bool, r: f64, c: f64) -> VisitRecord {
        VisitRecord { features: vec![0.0, 1.0], treated: t, purchased: y, revenue: r, cost: c }
    }

    #[test]
    fn rejects_revenue_without_purchase() {
        let err = Dataset::new(vec![rec(true, false, 5.0, 0.0)], 2, 0.5).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn rejects_cost_on_control() {
        let err = Dataset::new(vec![rec(false, true, 5.0, 1.0)], 2, 0.5).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn rejects_non_finite_features() {
        let mut r = rec(true, true, 5.0, 1.0);
        r.features[1] = f64::NAN;
        assert!(Dataset::new(vec![r], 2, 0.5).is_err());
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let mut r = rec(true, true, 5.0, 1.0);
        r.features.push(3.0);
        let err = Dataset::new(vec![rec(false, false, 0.0, 0.0), r], 2, 0.5).unwrap_err();
        assert!(matches!(err, Error::Shape { expected: 2, got: 3 }));
    }

    #[test]
    fn purchase_index_tracks_outcomes() {
        let ds = Dataset::new(
            vec![rec(true, true, 1.0, 1.0), rec(false, false, 0.0, 0.0), rec(false, true, 2.0, 0.0)],
            2,
            0.5,
        )
        .unwrap();
        assert_eq!(ds.purchase_indices(), &[0, 2]);
        assert_eq!(ds.slice(1, 3).purchase_indices(), &[1]);
    }

    #[test]
    fn propensity_check_flags_imbalance() {
        let records: Vec<_> = (0..1000).map(|i| rec(i < 900, false, 0.0, 0.0)).collect();
        let ds = Dataset::new(records, 2, 0.5).unwrap();
        assert!(!ds.propensity_check().within_tolerance());
    }

    #[test]
    fn quadrants_follow_sign_flags() {
        let base = RecordScore {
            cate_y: None,
            cate_loss: None,
            y_positive: true,
            loss_positive: false,
            sort_key: 0.0,
            tie_key: 0.0,
        };
        assert_eq!(base.quadrant(), Quadrant::Always);
        assert_eq!(RecordScore { loss_positive: true, ..base }.quadrant(), Quadrant::Candidate);
        assert_eq!(RecordScore { y_positive: false, ..base }.quadrant(), Quadrant::Never);
    }

    #[test]
    fn ranking_is_stable_on_ties() {
        let s = |k: f64| RecordScore {
            cate_y: None,
            cate_loss: None,
            y_positive: true,
            loss_positive: true,
            sort_key: k,
            tie_key: 0.0,
        };
        let scores = UpliftScores::new(vec![s(1.0), s(2.0), s(1.0), s(f64::INFINITY)]);
        assert_eq!(scores.ranking(), vec![3, 1, 0, 2]);
    }
}
