//! ROI arithmetic and treated-vs-control aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::VisitRecord;

/// Return on investment: `(delta_revenue - delta_investment) / delta_investment`.
///
/// A cohort with no incremental investment has no ROI; callers must branch on
/// the error instead of dividing.
pub fn roi(delta_revenue: f64, delta_investment: f64) -> Result<f64> {
    if !(delta_investment > 0.0) {
        return Err(Error::UndefinedRoi(delta_investment));
    }
    Ok((delta_revenue - delta_investment) / delta_investment)
}

/// Running totals for one arm of a trial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmTotals {
    pub visitors: u64,
    pub treated: u64,
    pub purchases: u64,
    pub revenue: f64,
    pub cost: f64,
}

impl ArmTotals {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a VisitRecord>) -> Self {
        let mut t = ArmTotals::default();
        for r in records {
            t.add(r);
        }
        t
    }

    pub fn add(&mut self, r: &VisitRecord) {
        self.visitors += 1;
        self.treated += r.treated as u64;
        self.purchases += r.purchased as u64;
        self.revenue += r.revenue;
        self.cost += r.cost;
    }

    pub fn merge(&mut self, other: &ArmTotals) {
        self.visitors += other.visitors;
        self.treated += other.treated;
        self.purchases += other.purchases;
        self.revenue += other.revenue;
        self.cost += other.cost;
    }
}

/// Treated-minus-control differences, expressed at treated-group scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDeltas {
    pub delta_purchases: f64,
    pub delta_revenue: f64,
    pub delta_cost: f64,
    pub n_treated: u64,
    pub n_control: u64,
}

impl GroupDeltas {
    /// Incremental purchases per treated-group visitor.
    pub fn ate(&self) -> f64 {
        self.delta_purchases / self.n_treated as f64
    }

    pub fn roi(&self) -> Result<f64> {
        roi(self.delta_revenue, self.delta_cost)
    }

    /// Incremental loss (cost minus incremental revenue).
    pub fn loss(&self) -> f64 {
        self.delta_cost - self.delta_revenue
    }
}

/// Compare a treated group with a control group. Control sums are scaled by
/// `N_t / N_c` before differencing. Control cost is zero by construction, so
/// `delta_cost` is the treated group's total cost.
pub fn group_deltas<'a, 'b>(
    treated: impl IntoIterator<Item = &'a VisitRecord>,
    control: impl IntoIterator<Item = &'b VisitRecord>,
) -> Result<GroupDeltas> {
    deltas_from_totals(&ArmTotals::from_records(treated), &ArmTotals::from_records(control))
}

pub fn deltas_from_totals(treated: &ArmTotals, control: &ArmTotals) -> Result<GroupDeltas> {
    if treated.visitors == 0 {
        return Err(Error::InsufficientData("treated group is empty".into()));
    }
    if control.visitors == 0 {
        return Err(Error::InsufficientData("control group is empty".into()));
    }
    let scale = treated.visitors as f64 / control.visitors as f64;
    Ok(GroupDeltas {
        delta_purchases: treated.purchases as f64 - control.purchases as f64 * scale,
        delta_revenue: treated.revenue - control.revenue * scale,
        delta_cost: treated.cost,
        n_treated: treated.visitors,
        n_control: control.visitors,
    })
}
