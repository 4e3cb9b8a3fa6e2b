//! Tuning with a predictor that knows the true regimes.

use knobcf_core::orchestrator::{run_full_eval_baseline, run_tuning, FnPredictor, NoClock, TuningParams};
use knobcf_core::sim::{generate_simulator_spec, standard_space, GeneratorParams, Simulator};
use knobcf_core::tuner::BoTuner;

fn two_regime_simulator() -> Simulator {
    let space = standard_space();
    let params = GeneratorParams {
        seed: 4,
        queries: 10,
        min_regimes: 2,
        max_regimes: 2,
        ..GeneratorParams::default()
    };
    Simulator::new(generate_simulator_spec(&params, &space).unwrap(), space).unwrap()
}

#[test]
fn oracle_labels_skip_most_evaluations_without_losing_the_optimum() {
    let sim = two_regime_simulator();
    let queries = sim.query_ids();
    assert_eq!(queries.len(), 10);
    let params = TuningParams {
        task: "oracle".into(),
        iterations: 50,
        init_count: 20,
        seed: 2,
        width: 16,
        m_min: 2,
    };
    let mut oracle = FnPredictor(|q: &str, c: &_| sim.regime_label(c, q, 16).unwrap());
    let mut tuner = BoTuner::new(sim.space().clone(), 2);
    let k = run_tuning(&queries, &sim, &mut tuner, &mut oracle, params.clone(), &NoClock).unwrap();
    let mut tuner = BoTuner::new(sim.space().clone(), 2);
    let b = run_full_eval_baseline(&queries, &sim, &mut tuner, params, &NoClock).unwrap();

    let tune_slots = (50 * queries.len()) as f64;
    let skipped = k.report.estimated_queries as f64 / tune_slots;
    assert!(skipped >= 0.5, "skipped fraction {skipped}");
    let ratio = k.report.best_total / b.report.best_total;
    assert!((ratio - 1.0).abs() <= 0.05, "best {} vs {}", k.report.best_total, b.report.best_total);
}

#[test]
fn oracle_labels_match_the_simulated_truth() {
    let sim = two_regime_simulator();
    let queries = sim.query_ids();
    let params = TuningParams {
        task: "oracle".into(),
        iterations: 10,
        init_count: 10,
        seed: 8,
        width: 16,
        m_min: 2,
    };
    let mut oracle = FnPredictor(|q: &str, c: &_| sim.regime_label(c, q, 16).unwrap());
    let mut tuner = BoTuner::with_candidates(sim.space().clone(), 8, 200);
    let out = run_tuning(&queries, &sim, &mut tuner, &mut oracle, params, &NoClock).unwrap();
    for row in out.dataset.rows.iter().filter(|r| r.index >= 10) {
        for e in &row.events {
            assert_eq!(e.label.as_ref(), e.truth.as_ref(), "row {} query {}", row.index, e.query);
        }
    }
}
