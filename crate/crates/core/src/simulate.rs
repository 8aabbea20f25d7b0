//! Synthetic randomized-trial populations with known potential outcomes.
//!
//! Visitors belong to one of four archetypes. Features are drawn around a
//! per-archetype center, the control purchase probability follows a logistic
//! link on the features, and the promotion adds an archetype-specific uplift:
//!
//! | archetype       | control rate | uplift   |
//! |-----------------|--------------|----------|
//! | persuadable     | low          | positive |
//! | sure thing      | high         | small    |
//! | lost cause      | ~0           | 0        |
//! | do-not-disturb  | moderate     | negative |
//!
//! A drift schedule shifts the base rate and the archetype mix by a fixed
//! amount per period.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{record_rng, TAG_OUTCOME, TAG_POPULATION, TAG_TREATMENT};
use crate::types::{Dataset, UpliftScores, VisitRecord};
use crate::uplift::magnitude_score;

/// Ground truth for one visitor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub features: Vec<f64>,
    /// Purchase probability without the promotion.
    pub p0: f64,
    /// Purchase probability with the promotion.
    pub p1: f64,
    pub r0: f64,
    pub r1: f64,
    /// Promotion cost per treated purchase.
    pub c: f64,
}

impl OracleRecord {
    pub fn true_cate_y(&self) -> f64 {
        self.p1 - self.p0
    }

    /// Expected incremental loss of treating this visitor.
    pub fn true_cate_loss(&self) -> f64 {
        self.p1 * (self.c - self.r1) + self.p0 * self.r0
    }

    /// Draw the visit outcome under the given treatment from uniform `u`.
    pub fn realize(&self, treated: bool, u: f64) -> VisitRecord {
        let p = if treated { self.p1 } else { self.p0 };
        let purchased = u < p;
        VisitRecord {
            features: self.features.clone(),
            treated,
            purchased,
            revenue: match (purchased, treated) {
                (false, _) => 0.0,
                (true, true) => self.r1,
                (true, false) => self.r0,
            },
            cost: if purchased && treated { self.c } else { 0.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Persuadable,
    SureThing,
    LostCause,
    DoNotDisturb,
}

impl Segment {
    pub const ALL: [Segment; 4] = [Segment::Persuadable, Segment::SureThing, Segment::LostCause, Segment::DoNotDisturb];

    /// Direction of the archetype center on the first three features.
    fn pattern(self) -> [f64; 3] {
        match self {
            Segment::Persuadable => [1.0, 0.0, 0.0],
            Segment::SureThing => [0.0, 1.0, 0.0],
            Segment::LostCause => [-1.0, -1.0, 0.0],
            Segment::DoNotDisturb => [0.0, 0.0, 1.0],
        }
    }
}

/// One value per archetype.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerSegment<T> {
    pub persuadable: T,
    pub sure_thing: T,
    pub lost_cause: T,
    pub do_not_disturb: T,
}

impl<T: Copy> PerSegment<T> {
    pub fn get(&self, s: Segment) -> T {
        match s {
            Segment::Persuadable => self.persuadable,
            Segment::SureThing => self.sure_thing,
            Segment::LostCause => self.lost_cause,
            Segment::DoNotDisturb => self.do_not_disturb,
        }
    }

    pub fn splat(v: T) -> Self {
        Self { persuadable: v, sure_thing: v, lost_cause: v, do_not_disturb: v }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseRate {
    /// Logit of the control purchase rate at each archetype center.
    pub intercepts: PerSegment<f64>,
    /// Logistic slope on the feature offset from the archetype center.
    /// Shorter than `feature_dim` means the remaining slopes are zero.
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uplift {
    /// Additive change in purchase probability from the promotion.
    pub effects: PerSegment<f64>,
    /// Relative spread of the effect driven by the last feature, in [0, 1).
    pub heterogeneity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Economics {
    pub r0: f64,
    pub r1: f64,
    pub c: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    /// Added to every base-rate intercept, per period.
    pub base_rate_shift: f64,
    /// Added to the archetype weights, per period, before renormalizing.
    pub segment_shift: Option<PerSegment<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub feature_dim: usize,
    pub n: usize,
    pub propensity: f64,
    pub segments: PerSegment<f64>,
    pub base_rate: BaseRate,
    pub uplift: Uplift,
    pub economics: Economics,
    /// Distance of archetype centers from the origin.
    pub separation: f64,
    /// Feature noise scale per archetype. Lost causes get a wide spread to
    /// stand in for crawler traffic with extreme feature values.
    pub spread: PerSegment<f64>,
    #[serde(default)]
    pub drift: Drift,
    pub seed: u64,
}

impl Default for PopulationConfig {
    /// A persuadable-rich world where undiscriminated treatment loses money
    /// but a targeted subpopulation pays for itself.
    fn default() -> Self {
        Self {
            feature_dim: 4,
            n: 100_000,
            propensity: 0.5,
            segments: PerSegment { persuadable: 0.45, sure_thing: 0.25, lost_cause: 0.1, do_not_disturb: 0.2 },
            base_rate: BaseRate {
                intercepts: PerSegment { persuadable: -3.0, sure_thing: 0.5, lost_cause: -9.0, do_not_disturb: -1.4 },
                coefficients: vec![0.3, 0.3, 0.3, 0.0],
            },
            uplift: Uplift {
                effects: PerSegment { persuadable: 0.08, sure_thing: 0.1, lost_cause: 0.0, do_not_disturb: -0.05 },
                heterogeneity: 0.5,
            },
            economics: Economics { r0: 10.0, r1: 10.0, c: 4.0 },
            separation: 3.0,
            spread: PerSegment { persuadable: 1.0, sure_thing: 1.0, lost_cause: 2.0, do_not_disturb: 1.0 },
            drift: Drift::default(),
            seed: 0,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.feature_dim == 0 {
            return fail("feature_dim must be >= 1".into());
        }
        if self.n == 0 {
            return fail("n must be >= 1".into());
        }
        if !(self.propensity > 0.0 && self.propensity < 1.0) {
            return fail(format!("propensity {} must lie in (0, 1)", self.propensity));
        }
        let w = Segment::ALL.map(|s| self.segments.get(s));
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail("segment weights must be finite and >= 0".into());
        }
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return fail("segment weights are all zero".into());
        }
        if (total - 1.0).abs() > 1e-9 {
            return fail(format!("segment weights sum to {total}, expected 1"));
        }
        if self.base_rate.coefficients.len() > self.feature_dim {
            return fail("more base-rate coefficients than features".into());
        }
        if !(0.0..1.0).contains(&self.uplift.heterogeneity) {
            return fail("uplift heterogeneity must lie in [0, 1)".into());
        }
        let e = self.economics;
        if [e.r0, e.r1, e.c].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return fail("revenue and cost must be finite and >= 0".into());
        }
        if Segment::ALL.iter().any(|&s| !(self.spread.get(s) > 0.0)) {
            return fail("feature spread must be > 0".into());
        }
        Ok(())
    }

    /// Archetype weights after `period` steps of drift.
    pub fn segment_weights(&self, period: u32) -> Result<[f64; 4]> {
        let mut w = Segment::ALL.map(|s| self.segments.get(s));
        if let Some(shift) = &self.drift.segment_shift {
            for (wi, s) in w.iter_mut().zip(Segment::ALL) {
                *wi = (*wi + period as f64 * shift.get(s)).max(0.0);
            }
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Config(format!("drift leaves no archetype weight at period {period}")));
        }
        Ok(w.map(|v| v / total))
    }

    fn center(&self, s: Segment, j: usize) -> f64 {
        if j < 3 {
            self.separation * s.pattern()[j]
        } else {
            0.0
        }
    }

    fn sample_visitor<R: Rng>(&self, rng: &mut R, weights: &[f64; 4], period: u32) -> OracleRecord {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut seg = Segment::DoNotDisturb;
        for (s, w) in Segment::ALL.iter().zip(weights) {
            acc += w;
            if u < acc {
                seg = *s;
                break;
            }
        }
        let spread = self.spread.get(seg);
        let mut features = Vec::with_capacity(self.feature_dim);
        let mut logit = self.base_rate.intercepts.get(seg) + period as f64 * self.drift.base_rate_shift;
        for j in 0..self.feature_dim {
            let z: f64 = StandardNormal.sample(rng);
            let offset = spread * z;
            features.push(self.center(seg, j) + offset);
            if let Some(b) = self.base_rate.coefficients.get(j) {
                logit += b * offset;
            }
        }
        let p0 = 1.0 / (1.0 + (-logit).exp());
        let last = features[self.feature_dim - 1] - self.center(seg, self.feature_dim - 1);
        let effect = self.uplift.effects.get(seg) * (1.0 + self.uplift.heterogeneity * last.tanh());
        let p1 = (p0 + effect).clamp(0.0, 1.0);
        let e = self.economics;
        OracleRecord { features, p0, p1, r0: e.r0, r1: e.r1, c: e.c }
    }

    /// Ground truth for `n` fresh visitors at the given drift period.
    pub fn draw_visitors(&self, period: u32, n: usize, exec: Execution) -> Result<Vec<OracleRecord>> {
        self.validate()?;
        let weights = self.segment_weights(period)?;
        Ok(exec.map(n, |i| {
            let mut rng = record_rng(self.seed, TAG_POPULATION, period as u64, i as u64);
            self.sample_visitor(&mut rng, &weights, period)
        }))
    }
}

/// Generate a randomized trial of `config.n` visitors at the given period.
pub fn gen_population(config: &PopulationConfig, period: u32) -> Result<(Dataset, Vec<OracleRecord>)> {
    gen_population_with(config, period, Execution::default())
}

pub fn gen_population_with(config: &PopulationConfig, period: u32, exec: Execution) -> Result<(Dataset, Vec<OracleRecord>)> {
    let oracle = config.draw_visitors(period, config.n, exec)?;
    let e = config.propensity;
    let records = exec.map(oracle.len(), |i| {
        let t = record_rng(config.seed, TAG_TREATMENT, period as u64, i as u64).random::<f64>() < e;
        let u = record_rng(config.seed, TAG_OUTCOME, period as u64, i as u64).random::<f64>();
        oracle[i].realize(t, u)
    });
    let ds = Dataset::new(records, config.feature_dim, e)?.with_seed(config.seed);
    Ok((ds, oracle))
}

/// Exact CATE estimates from the ground truth, ordered like the greedy policy.
pub fn oracle_scores(oracle: &[OracleRecord]) -> UpliftScores {
    UpliftScores::new(oracle.iter().map(|o| magnitude_score(o.true_cate_y(), o.true_cate_loss())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RecordSource;

    fn small(n: usize, seed: u64) -> PopulationConfig {
        PopulationConfig { n, seed, ..Default::default() }
    }

    #[test]
    fn oracle_score_example() {
        let o = OracleRecord { features: vec![], p0: 0.1, p1: 0.3, r0: 10.0, r1: 10.0, c: 4.0 };
        let s = oracle_scores(std::slice::from_ref(&o));
        assert!((s.rows[0].cate_y.unwrap() - 0.2).abs() < 1e-15);
        assert!((s.rows[0].cate_loss.unwrap() - (-0.8)).abs() < 1e-15);
    }

    #[test]
    fn oracle_null_effect() {
        let o = OracleRecord { features: vec![], p0: 0.4, p1: 0.4, r0: 10.0, r1: 10.0, c: 4.0 };
        assert_eq!(oracle_scores(&[o]).rows[0].cate_y, Some(0.0));
    }

    #[test]
    fn free_promotion_loss_is_negated_revenue_uplift() {
        let o = OracleRecord { features: vec![], p0: 0.15, p1: 0.35, r0: 12.0, r1: 12.0, c: 0.0 };
        assert!((o.true_cate_loss() + 12.0 * o.true_cate_y()).abs() < 1e-12);
    }

    #[test]
    fn treated_fraction_near_propensity() {
        let (ds, _) = gen_population(&small(100_000, 3), 0).unwrap();
        let frac = ds.propensity_check().treated_fraction;
        assert!((0.49..=0.51).contains(&frac), "{frac}");
    }

    #[test]
    fn lost_causes_never_buy() {
        let mut cfg = small(5_000, 1);
        cfg.segments = PerSegment { persuadable: 0.0, sure_thing: 0.0, lost_cause: 1.0, do_not_disturb: 0.0 };
        cfg.base_rate.intercepts.lost_cause = f64::NEG_INFINITY;
        let (ds, oracle) = gen_population(&cfg, 0).unwrap();
        assert!(oracle.iter().all(|o| o.p0 == 0.0 && o.p1 == 0.0));
        assert!(ds.records().iter().all(|r| !r.purchased && r.revenue == 0.0 && r.cost == 0.0));
    }

    #[test]
    fn empirical_ate_matches_oracle() {
        let (ds, oracle) = gen_population(&small(100_000, 11), 0).unwrap();
        let d = crate::economics::group_deltas(ds.treated(), ds.control()).unwrap();
        let mean_cate: f64 = oracle.iter().map(OracleRecord::true_cate_y).sum::<f64>() / oracle.len() as f64;
        let (nt, nc) = (d.n_treated as f64, d.n_control as f64);
        let pt = ds.treated().filter(|r| r.purchased).count() as f64 / nt;
        let pc = ds.control().filter(|r| r.purchased).count() as f64 / nc;
        let se = (pt * (1.0 - pt) / nt + pc * (1.0 - pc) / nc).sqrt();
        assert!((d.ate() - mean_cate).abs() < 3.0 * se, "ate {} oracle {} se {}", d.ate(), mean_cate, se);
    }

    #[test]
    fn reproducible_and_execution_independent() {
        let cfg = small(2_000, 5);
        let (a, oa) = gen_population_with(&cfg, 2, Execution::Sequential).unwrap();
        let (b, ob) = gen_population_with(&cfg, 2, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        let (c, _) = gen_population_with(&cfg, 3, Execution::Parallel).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let mut cfg = small(10, 0);
        cfg.segments = PerSegment::splat(0.0);
        assert!(matches!(gen_population(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn drift_lowers_purchase_rate() {
        let mut cfg = small(20_000, 9);
        cfg.drift.base_rate_shift = -0.15;
        let rates: Vec<f64> = (0..8)
            .map(|p| {
                let (ds, _) = gen_population(&cfg, p).unwrap();
                ds.purchase_indices().len() as f64 / ds.len() as f64
            })
            .collect();
        let periods: Vec<f64> = (0..8).map(f64::from).collect();
        assert!(crate::stats::spearman(&periods, &rates) < 0.0, "{rates:?}");
    }

    #[test]
    fn segment_drift_renormalizes() {
        let mut cfg = small(10, 0);
        cfg.drift.segment_shift =
            Some(PerSegment { persuadable: -0.1, sure_thing: 0.1, lost_cause: 0.0, do_not_disturb: 0.0 });
        let w = cfg.segment_weights(5).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
