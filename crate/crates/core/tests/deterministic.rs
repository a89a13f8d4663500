mod common;

use common::integer_market;
use matchburn::da::Proposer;
use matchburn::deterministic::{
    aggregate_outcome, check_aggregate_stability, check_classical_stability, classical_da,
    disaggregate_outcome, max_weight_transport, sigma_limit, LimitOptions,
};
use matchburn::model::recover_waits;
use matchburn::{DeterministicOutcome, IndividualMarket, Matching};
use ndarray::{array, Array2};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deferred_acceptance_is_classically_stable(spec in integer_market(4, 3), seed in 0u64..1000) {
        let market = IndividualMarket::from_spec(&spec).unwrap();
        for proposer in [Proposer::Passengers, Proposer::Taxis] {
            let da = classical_da(&market, proposer, seed).unwrap();
            prop_assert!(check_classical_stability(&market, &da.matching).unwrap().is_stable());
        }
    }

    #[test]
    fn bridge_round_trip(spec in integer_market(4, 3), seed in 0u64..1000) {
        let market = IndividualMarket::from_spec(&spec).unwrap();
        let da = classical_da(&market, Proposer::Passengers, seed).unwrap();
        let agg = aggregate_outcome(&market, &da.matching).unwrap();
        prop_assert!(check_aggregate_stability(&spec, &agg.outcome, 0.0).unwrap().is_stable());
        // Burned time is what individuals give up to meet their type's payoff.
        prop_assert!(agg.burned_passengers.iter().chain(&agg.burned_taxis).all(|&b| b >= 0.0));
        let (tau_a, tau_g) = recover_waits(&agg.outcome, &spec).unwrap();
        for ((x, y), &mu) in agg.outcome.matching.indexed_iter() {
            if mu > 0.0 {
                prop_assert_eq!(tau_a[[x, y]].min(tau_g[[x, y]]), 0.0);
            }
        }
        let pi = disaggregate_outcome(&spec, &agg.outcome, seed).unwrap();
        prop_assert!(check_classical_stability(&market, &pi).unwrap().is_stable());
        let again = aggregate_outcome(&market, &pi).unwrap();
        prop_assert_eq!(&*again.outcome.matching, &*agg.outcome.matching);
    }

    #[test]
    fn checker_is_exact_at_the_boundary(spec in integer_market(3, 2), seed in 0u64..100) {
        let market = IndividualMarket::from_spec(&spec).unwrap();
        let da = classical_da(&market, Proposer::Taxis, seed).unwrap();
        let agg = aggregate_outcome(&market, &da.matching).unwrap();
        // Raising a payoff of a matched type by one ulp breaks equality in (iv).
        if let Some(((x, _), _)) = agg.outcome.matching.indexed_iter().find(|(_, &m)| m > 0.0) {
            let mut bumped = agg.outcome.clone();
            bumped.u[x] = f64::from_bits(bumped.u[x].to_bits() + 1).max(bumped.u[x] + f64::MIN_POSITIVE);
            let tight = check_aggregate_stability(&spec, &bumped, 0.0).unwrap();
            let gaps_at_zero = (0..spec.ny()).any(|y| {
                agg.outcome.matching[[x, y]] > 0.0 && agg.outcome.u[x] == spec.alpha[[x, y]]
            });
            if gaps_at_zero {
                prop_assert!(!tight.is_stable());
            }
        }
    }
}

#[test]
fn rounding_respects_forced_rows() {
    let w = Array2::from_elem((2, 2), Some(0.5));
    let z = max_weight_transport(&w, &[1, 1], &[1, 1], &[0.0, 1e3], &[0.0, 0.0]).unwrap();
    assert_eq!(z.row(1).sum(), 1);
    assert_eq!(z.sum(), 2);
}

#[test]
fn limit_of_one_by_one_markets() {
    for (a, g, matched) in [(1.0, 1.0, 1.0), (-1.0, 1.0, 0.0), (0.5, 2.0, 1.0)] {
        let spec = matchburn::MarketSpec {
            passenger_types: vec!["x".into()],
            taxi_types: vec!["y".into()],
            n: vec![1.0],
            m: vec![1.0],
            alpha: array![[a]],
            gamma: array![[g]],
            shocks: None,
        };
        let r = sigma_limit(&spec, &LimitOptions::default()).unwrap();
        assert!(r.exact, "{}", r.verdict);
        assert_eq!(r.outcome.matching[[0, 0]], matched);
    }
}

#[test]
fn limit_on_two_by_two() {
    let spec = matchburn::MarketSpec {
        passenger_types: vec!["x1".into(), "x2".into()],
        taxi_types: vec!["y1".into(), "y2".into()],
        n: vec![1.0, 2.0],
        m: vec![2.0, 1.0],
        alpha: array![[2.0, 1.0], [1.0, 3.0]],
        gamma: array![[1.0, 1.0], [2.0, 1.0]],
        shocks: None,
    };
    let r = sigma_limit(&spec, &LimitOptions::default()).unwrap();
    assert!(r.exact, "{}", r.verdict);
    assert!(check_aggregate_stability(&spec, &r.outcome, 0.0).unwrap().is_stable());
}

#[test]
fn mass_mismatch_is_reported_not_raised() {
    let spec = matchburn::MarketSpec {
        passenger_types: vec!["x".into()],
        taxi_types: vec!["y".into()],
        n: vec![1.0],
        m: vec![1.0],
        alpha: array![[1.0]],
        gamma: array![[1.0]],
        shocks: None,
    };
    let out = DeterministicOutcome {
        matching: Matching::new(array![[2.0]]),
        u: vec![1.0],
        v: vec![1.0],
    };
    let v = check_aggregate_stability(&spec, &out, 0.0).unwrap();
    assert!(v.cites("ii") && v.cites("iii"));
}
