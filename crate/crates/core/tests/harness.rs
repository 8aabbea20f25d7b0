use roi_uplift::eval::qini_roi_curve;
use roi_uplift::harness::{route_arm, simulate_experiment, Arm, ArmWeights, ExperimentConfig};
use roi_uplift::learners::LearnerConfig;
use roi_uplift::simulate::{gen_population, oracle_scores, Drift, PerSegment, PopulationConfig};
use roi_uplift::stats::spearman;
use roi_uplift::{Execution, Quadrant, RecordSource};

fn quick(seed: u64, population: PopulationConfig) -> ExperimentConfig {
    ExperimentConfig {
        visitors_per_period: 40_000,
        train_n: 40_000,
        validation_n: 20_000,
        learner: LearnerConfig { rounds: 40, ..LearnerConfig::boosted_trees() },
        population,
        seed,
        ..Default::default()
    }
}

#[test]
fn null_effect_world() {
    let mut pop = PopulationConfig::default();
    pop.uplift.effects = PerSegment::splat(0.0);
    pop.uplift.heterogeneity = 0.0;
    let cfg = ExperimentConfig { periods: 2, ..quick(3, pop) };
    let (_, res) = simulate_experiment(&cfg, Execution::default()).unwrap();
    let last = res.reports.last().unwrap();
    let a = last.arm(Arm::A).cumulative;
    let rate = |t: &roi_uplift::economics::ArmTotals| t.purchases as f64 / t.visitors as f64;
    for arm in [Arm::B, Arm::C, Arm::D] {
        let t = last.arm(arm).cumulative;
        if t.visitors == 0 {
            continue;
        }
        let (pa, pt) = (rate(&a), rate(&t));
        let se = (pa * (1.0 - pa) / a.visitors as f64 + pt * (1.0 - pt) / t.visitors as f64).sqrt();
        assert!((pt - pa).abs() <= 4.0 * se, "{arm:?}: ATE {} vs SE {se}", pt - pa);
    }
    let b = last.arm(Arm::B).cum_roi.unwrap();
    assert!((b + 1.0).abs() < 0.1, "B ROI {b}");
}

#[test]
fn shrinking_persuadable_share_lowers_q_d() {
    let mut rhos = Vec::new();
    for seed in 0..20 {
        let mut pop = PopulationConfig::default();
        pop.drift = Drift {
            base_rate_shift: 0.0,
            segment_shift: Some(PerSegment { persuadable: -0.05, sure_thing: 0.0, lost_cause: 0.02, do_not_disturb: 0.03 }),
        };
        let (_, res) = simulate_experiment(&quick(seed, pop), Execution::default()).unwrap();
        let (periods, qs): (Vec<f64>, Vec<f64>) = res.calibrations.iter().map(|e| (e.period as f64, e.q_star)).unzip();
        if qs.len() >= 2 {
            rhos.push(spearman(&periods, &qs));
        }
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    assert!(rhos.len() >= 15, "only {} seeds calibrated", rhos.len());
    assert!(mean <= 0.0, "mean rank correlation of Q* vs period {mean}");
}

#[test]
fn arm_routing_ignores_features() {
    let (ds, _) = gen_population(&PopulationConfig { n: 100_000, seed: 9, ..Default::default() }, 0).unwrap();
    let w = ArmWeights::default();
    let arms: Vec<Arm> = (0..ds.len()).map(|i| route_arm(&w, 17, 1, i)).collect();
    let x = ds.features();
    // Between-arm chi-square on each feature mean, 3 degrees of freedom.
    for j in 0..x.dim() {
        let col: Vec<f64> = (0..x.rows()).map(|i| x.row(i)[j]).collect();
        let n = col.len() as f64;
        let mu = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0);
        let chi2: f64 = Arm::ALL
            .iter()
            .map(|a| {
                let vals: Vec<f64> = col.iter().zip(&arms).filter(|(_, b)| *b == a).map(|(v, _)| *v).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.len() as f64 * (m - mu).powi(2) / var
            })
            .sum();
        assert!(chi2 < 16.27, "feature {j}: chi-square {chi2}");
    }
    let counts = Arm::ALL.map(|a| arms.iter().filter(|&&b| b == a).count() as f64);
    let chi2: f64 = counts.iter().map(|c| (c - 25_000.0).powi(2) / 25_000.0).sum();
    assert!(chi2 < 16.27, "arm counts {counts:?}");
}

#[test]
fn oracle_roi_falls_past_the_always_quadrant() {
    let (ds, oracle) = gen_population(&PopulationConfig { n: 100_000, seed: 4, ..Default::default() }, 0).unwrap();
    let scores = oracle_scores(&oracle);
    let always = scores.rows.iter().filter(|r| r.quadrant() == Quadrant::Always).count() as f64 / scores.len() as f64;
    let curve = qini_roi_curve(&ds, &scores, 100).unwrap();
    let (q, v): (Vec<f64>, Vec<f64>) = curve.points.iter().filter(|p| p.defined && p.q > always).map(|p| (p.q, p.value)).unzip();
    assert!(q.len() > 10);
    assert!(spearman(&q, &v) < 0.0);
}
