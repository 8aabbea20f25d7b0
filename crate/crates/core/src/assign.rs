//! Treatment assignment under the constraint that total incremental loss is
//! nonpositive (equivalently ROI >= 0).
//!
//! Customers with positive uplift and nonpositive loss are always treated; the
//! profit they bring becomes the budget of a residual 0/1 knapsack over the
//! customers with positive uplift and positive loss. The residual problem is
//! solved greedily by uplift-per-loss ratio, skipping items that no longer fit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AssignmentPolicy, Quadrant, UpliftScores};

/// Absolute slack allowed on the total loss of an assignment.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Largest instance [`brute_force_assign`] accepts.
pub const BRUTE_FORCE_MAX: usize = 22;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub always: Vec<usize>,
    pub candidates: Vec<usize>,
    pub never: Vec<usize>,
}

pub fn partition_quadrants(scores: &UpliftScores) -> Partition {
    let mut p = Partition::default();
    for (i, r) in scores.rows.iter().enumerate() {
        match r.quadrant() {
            Quadrant::Always => p.always.push(i),
            Quadrant::Candidate => p.candidates.push(i),
            Quadrant::Never => p.never.push(i),
        }
    }
    p
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantCounts {
    pub always: usize,
    pub candidates: usize,
    pub never: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub treat: Vec<bool>,
    /// Smallest admitted candidate key; `+inf` when no candidate was admitted.
    #[serde(with = "crate::serde_float")]
    pub threshold: f64,
    pub total_cate_y: f64,
    pub total_cate_loss: f64,
    /// Profit of the always quadrant available to candidates.
    pub budget: f64,
    pub counts: QuadrantCounts,
}

impl Assignment {
    pub fn treated_count(&self) -> usize {
        self.treat.iter().filter(|&&z| z).count()
    }

    pub fn is_feasible(&self) -> bool {
        self.total_cate_loss <= FEASIBILITY_TOL
    }

    pub fn summary(&self) -> AssignmentSummary {
        AssignmentSummary {
            threshold: self.threshold,
            treated: self.treated_count(),
            records: self.treat.len(),
            total_cate_y: self.total_cate_y,
            total_cate_loss: self.total_cate_loss,
            budget: self.budget,
            counts: self.counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSummary {
    #[serde(with = "crate::serde_float")]
    pub threshold: f64,
    pub treated: usize,
    pub records: usize,
    pub total_cate_y: f64,
    pub total_cate_loss: f64,
    pub budget: f64,
    pub counts: QuadrantCounts,
}

fn magnitudes(scores: &UpliftScores, idx: &[usize]) -> Result<Vec<(f64, f64)>> {
    idx.iter()
        .map(|&i| {
            let r = &scores.rows[i];
            match (r.cate_y, r.cate_loss) {
                (Some(y), Some(l)) => Ok((y, l)),
                _ => Err(Error::MissingMagnitudes(format!(
                    "record {i} has no uplift/loss estimates; the knapsack needs both"
                ))),
            }
        })
        .collect()
}

fn counts(p: &Partition) -> QuadrantCounts {
    QuadrantCounts { always: p.always.len(), candidates: p.candidates.len(), never: p.never.len() }
}

/// Greedy 0/1 knapsack assignment.
///
/// Requires uplift and loss estimates for every positive-uplift record.
pub fn greedy_assign(scores: &UpliftScores) -> Result<Assignment> {
    let part = partition_quadrants(scores);
    let always = magnitudes(scores, &part.always)?;
    let cands = magnitudes(scores, &part.candidates)?;

    let mut treat = vec![false; scores.len()];
    let mut total_y = 0.0;
    let mut total_loss = 0.0;
    for (&i, &(y, l)) in part.always.iter().zip(&always) {
        treat[i] = true;
        total_y += y;
        total_loss += l;
    }
    let budget = -total_loss;

    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = cands[a].0 / cands[a].1;
        let rb = cands[b].0 / cands[b].1;
        rb.total_cmp(&ra).then_with(|| cands[b].0.total_cmp(&cands[a].0)).then_with(|| a.cmp(&b))
    });
    let mut used = 0.0;
    let mut threshold = f64::INFINITY;
    for k in order {
        let (y, l) = cands[k];
        if used + l <= budget {
            used += l;
            let i = part.candidates[k];
            treat[i] = true;
            total_y += y;
            total_loss += l;
            threshold = threshold.min(scores.rows[i].sort_key);
        }
    }
    Ok(Assignment { treat, threshold, total_cate_y: total_y, total_cate_loss: total_loss, budget, counts: counts(&part) })
}

/// `a` precedes `b` lexicographically when read as `(z_0, z_1, ...)`.
fn lex_less(a: u32, b: u32) -> bool {
    let diff = a ^ b;
    diff != 0 && a & (diff & diff.wrapping_neg()) == 0
}

/// Exact optimum of the knapsack by enumeration over all `2^n` subsets.
/// Ties in the objective go to the lexicographically smallest `z`.
pub fn brute_force_assign(scores: &UpliftScores) -> Result<Assignment> {
    let n = scores.len();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::SizeLimit { n, max: BRUTE_FORCE_MAX });
    }
    let all: Vec<usize> = (0..n).collect();
    let items = magnitudes(scores, &all)?;
    let exact = |mask: u32| -> (f64, f64) {
        let mut y = 0.0;
        let mut l = 0.0;
        for (i, &(yi, li)) in items.iter().enumerate() {
            if mask >> i & 1 == 1 {
                y += yi;
                l += li;
            }
        }
        (y, l)
    };
    // Gray-code walk: one item flips per step; running sums only screen
    // candidates, winners are re-summed exactly.
    let mut best_mask = 0u32;
    let mut best_y = 0.0;
    let (mut run_y, mut run_l) = (0.0, 0.0);
    let mut mask = 0u32;
    for step in 1u64..(1u64 << n) {
        let bit = step.trailing_zeros() as usize;
        mask ^= 1 << bit;
        let (y, l) = items[bit];
        if mask >> bit & 1 == 1 {
            run_y += y;
            run_l += l;
        } else {
            run_y -= y;
            run_l -= l;
        }
        if run_l > FEASIBILITY_TOL + 1e-9 || run_y < best_y - 1e-9 {
            continue;
        }
        let (ey, el) = exact(mask);
        if el > FEASIBILITY_TOL {
            continue;
        }
        if ey > best_y || (ey == best_y && lex_less(mask, best_mask)) {
            best_y = ey;
            best_mask = mask;
        }
    }
    let (ty, tl) = exact(best_mask);
    let treat: Vec<bool> = (0..n).map(|i| best_mask >> i & 1 == 1).collect();
    let part = partition_quadrants(scores);
    let threshold = part
        .candidates
        .iter()
        .filter(|&&i| treat[i])
        .map(|&i| scores.rows[i].sort_key)
        .fold(f64::INFINITY, f64::min);
    let budget = -part.always.iter().map(|&i| items[i].1).sum::<f64>();
    Ok(Assignment { treat, threshold, total_cate_y: ty, total_cate_loss: tl, budget, counts: counts(&part) })
}

/// Treatment flags for a threshold: `sort_key >= threshold`, never quadrant excluded.
pub fn apply_threshold(threshold: f64, scores: &UpliftScores) -> Vec<bool> {
    scores.rows.iter().map(|r| r.quadrant() != Quadrant::Never && r.sort_key >= threshold).collect()
}

pub fn apply_policy(policy: &AssignmentPolicy, scores: &UpliftScores) -> Vec<bool> {
    apply_threshold(policy.threshold, scores)
}

/// Build a policy and record the share of `reference` it exposes.
pub fn threshold_policy(scorer_id: &str, reference: &UpliftScores, threshold: f64) -> AssignmentPolicy {
    let treated = apply_threshold(threshold, reference).iter().filter(|&&z| z).count();
    let exposed_fraction = if reference.is_empty() { 0.0 } else { treated as f64 / reference.len() as f64 };
    AssignmentPolicy { scorer_id: scorer_id.to_string(), threshold, exposed_fraction }
}

/// Write `row_index,z,sort_key` rows.
pub fn write_assignment_csv<W: Write>(out: W, treat: &[bool], scores: &UpliftScores) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_index", "z", "sort_key"])?;
    for (i, (z, r)) in treat.iter().zip(&scores.rows).enumerate() {
        w.write_record([i.to_string(), (*z as u8).to_string(), format_key(r.sort_key)])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `cate_y,cate_loss` rows into magnitude scores.
pub fn read_scores_csv<R: std::io::Read>(input: R) -> Result<UpliftScores> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["cate_y", "cate_loss"] {
        return Err(Error::Schema(format!("score header {header:?} does not match cate_y,cate_loss")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut v = [0.0; 2];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = rec[k]
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Schema(format!("row {i}: column {} is not a finite number", header[k])))?;
        }
        rows.push(crate::uplift::magnitude_score(v[0], v[1]));
    }
    Ok(UpliftScores::new(rows))
}

fn format_key(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}
