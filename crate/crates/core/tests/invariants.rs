//! Cross-module invariants exercised through the public API.

use ppthin::bounds::{bound_matern_poisson, BoundReport};
use ppthin::experiment::{compute_bounds, ExperimentConfig, ExperimentKind};
use ppthin::simulate::sample_poisson;
use ppthin::space::{contract, d1_distance};
use ppthin::thinning::{realize_retention, thin, RetentionField};
use ppthin::{BoundedMetric, Norm, PointPattern, RngStream, Window};
use proptest::prelude::*;

fn pattern(max_len: usize) -> impl Strategy<Value = PointPattern> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 0..=max_len).prop_map(|pts| PointPattern::new(2, pts).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn d1_is_a_bounded_symmetric_metric(a in pattern(5), b in pattern(5), c in pattern(5)) {
        let d0 = BoundedMetric::new(Norm::Euclidean);
        let ab = d1_distance(&a, &b, d0).unwrap();
        let ba = d1_distance(&b, &a, d0).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(d1_distance(&a, &a, d0).unwrap(), 0.0);
        if a.len() == b.len() && b.len() == c.len() {
            let ac = d1_distance(&a, &c, d0).unwrap();
            let bc = d1_distance(&b, &c, d0).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn contraction_never_expands_d1(a in pattern(4), b in pattern(4), t in 1.0f64..20.0) {
        let d0 = BoundedMetric::new(Norm::Sup);
        let before = d1_distance(&a, &b, d0).unwrap();
        let after = d1_distance(&contract(&a, t).unwrap(), &contract(&b, t).unwrap(), d0).unwrap();
        prop_assert!(after <= before + 1e-12);
    }

    #[test]
    fn thinning_keeps_a_subset(seed in any::<u64>(), q in 0.0f64..=1.0, r in 0.0f64..0.2) {
        let w = Window::unit(2).haloed(r).unwrap();
        let mut rng = RngStream::new(seed, 0).rng();
        let xi = sample_poisson(&w, 30.0, &mut rng).unwrap();
        let field = RetentionField::MaternI { r, q, norm: Norm::Euclidean };
        let probs = realize_retention(&field, &xi, &w, &mut rng).unwrap();
        let out = thin(&xi, &probs, &mut rng).unwrap();
        prop_assert_eq!(out.decisions.len(), xi.len());
        prop_assert_eq!(out.retained.len(), out.decisions.iter().filter(|&&k| k).count());
        for (i, &kept) in out.decisions.iter().enumerate() {
            prop_assert!(!kept || probs[i] > 0.0);
        }
    }

    #[test]
    fn matern_poisson_bound_is_ordered(m1 in 0.01f64..100.0, r in 0.001f64..0.3) {
        let b = bound_matern_poisson(1.0, m1, r, 2, Norm::Euclidean).unwrap();
        prop_assert!(b.total_d2 <= b.total_tv);
        prop_assert!(b.looser_total_tv.unwrap() >= b.total_tv);
    }
}

#[test]
fn bound_report_round_trips_through_json() {
    let b = bound_matern_poisson(1.0, 0.5, 0.1, 2, Norm::Euclidean).unwrap().with_config_hash("abc");
    let mut buf = Vec::new();
    b.write_json(&mut buf).unwrap();
    assert_eq!(BoundReport::read_json(buf.as_slice()).unwrap(), b);
}

#[test]
fn canned_configs_round_trip_and_hash_stably() {
    for kind in [
        ExperimentKind::MaternPoisson,
        ExperimentKind::BooleanPoisson,
        ExperimentKind::RateSweep,
        ExperimentKind::Identities,
        ExperimentKind::StraussMatern,
    ] {
        let cfg = ExperimentConfig::canned(kind);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back.config_hash(), cfg.config_hash());
        let mut moved = cfg.clone();
        moved.output_dir = Some("elsewhere".into());
        assert_eq!(moved.config_hash(), cfg.config_hash());
    }
}

#[test]
fn sample_free_bounds_match_the_experiment_pipeline() {
    let cfg = ExperimentConfig::canned(ExperimentKind::MaternPoisson);
    let bounds = compute_bounds(&cfg).unwrap();
    let direct = bound_matern_poisson(1.0, 0.5, 0.1, 2, Norm::Euclidean).unwrap();
    assert!((bounds[0].1.as_ref().unwrap().total_tv - direct.total_tv).abs() < 1e-12);
}
