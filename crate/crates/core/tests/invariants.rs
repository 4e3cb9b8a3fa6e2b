use knobcf_core::classifier::classification_metrics;
use knobcf_core::gmm::{assign_label, fit_gmm, CategoryLabel};
use knobcf_core::orchestrator::{average_iteration_time, nearest_rank};
use knobcf_core::sim::standard_space;
use knobcf_core::tuner::perturb_configuration;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn label(width: usize) -> impl Strategy<Value = CategoryLabel> {
    (0u64..(1 << width)).prop_map(move |m| CategoryLabel::from_mask(width, m))
}

proptest! {
    #[test]
    fn labels_round_trip_through_text(l in label(12)) {
        let text = l.to_string();
        prop_assert_eq!(text.len(), 12);
        prop_assert_eq!(text.parse::<CategoryLabel>().unwrap(), l);
    }

    #[test]
    fn confusion_counts_cover_every_bit(pairs in prop::collection::vec((label(6), label(6)), 1..40)) {
        let (p, t): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = classification_metrics(&p, &t).unwrap();
        let total = m.true_positives + m.true_negatives + m.false_positives + m.false_negatives;
        prop_assert_eq!(total, 6 * p.len() as u64);
        prop_assert!((0.0..=1.0).contains(&m.accuracy));
        prop_assert!((0.0..=1.0).contains(&m.precision));
        prop_assert!((0.0..=1.0).contains(&m.recall));
    }

    #[test]
    fn perfect_predictions_score_one(truths in prop::collection::vec(label(5), 1..30)) {
        let m = classification_metrics(&truths, &truths).unwrap();
        prop_assert_eq!(m.accuracy, 1.0);
        prop_assert_eq!(m.false_positives + m.false_negatives, 0);
    }

    #[test]
    fn nearest_rank_returns_a_member(values in prop::collection::vec(-1e3f64..1e3, 1..50), p in 0.0f64..=1.0) {
        let r = nearest_rank(&values, p).unwrap();
        prop_assert!(values.contains(&r));
        let below = values.iter().filter(|&&v| v <= r).count();
        prop_assert!(below as f64 >= p * values.len() as f64);
    }

    #[test]
    fn average_lies_between_extremes(times in prop::collection::vec(0.0f64..100.0, 1..50)) {
        let avg = average_iteration_time(&times);
        let lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = times.iter().cloned().fold(0.0, f64::max);
        prop_assert!(avg >= lo - 1e-9 && avg <= hi + 1e-9);
    }

    #[test]
    fn fitted_labels_have_at_least_one_bit(
        data in prop::collection::vec(1.0f64..50.0, 8..40),
        probe in 0.5f64..60.0,
        seed in 0u64..50,
    ) {
        let mixture = fit_gmm(&data, 4, seed).unwrap();
        let weight: f64 = mixture.components.iter().map(|c| c.weight).sum();
        prop_assert!((weight - 1.0).abs() < 1e-9);
        let l = assign_label(&mixture, probe, 8, 0.2).unwrap();
        prop_assert!(l.count_ones() >= 1);
        prop_assert!(l.count_ones() <= mixture.len());
    }

    #[test]
    fn perturbations_stay_inside_the_space(seed in 0u64..500, scale in 0.0f64..1.0) {
        let space = standard_space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = space.default_configuration();
        let moved = perturb_configuration(&space, &base, scale, &mut rng);
        prop_assert!(space.check(&moved).is_ok());
        let enc = space.encode(&moved).unwrap();
        prop_assert!(enc.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
