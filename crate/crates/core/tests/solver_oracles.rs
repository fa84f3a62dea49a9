mod common;

use common::{sup_distance, twelve_state, DenseModel};
use proptest::prelude::*;
use qaoi::solver::{
    action_gap, evaluate_policy, greedy_policy, improve_policy, policy_iteration, value_iteration,
    Policy,
};
use qaoi::{Action, Mdp, ModelParams, Objective, SolverConfig, State};

#[test]
fn all_silent_evaluation_matches_linear_solve() {
    let params = twelve_state();
    let mdp = Mdp::new(params).unwrap();
    let dense = DenseModel::new(params);
    for objective in Objective::ALL {
        let policy = Policy::all_silent(*mdp.space());
        let v = evaluate_policy(&policy, &mdp, &SolverConfig::new(objective)).unwrap();
        let exact = dense.evaluate(policy.actions(), objective);
        assert!(sup_distance(v.values(), &exact) <= 1e-9, "{objective}");
    }
}

#[test]
fn policy_iteration_matches_enumeration_on_twelve_states() {
    let params = twelve_state();
    let mdp = Mdp::new(params).unwrap();
    let dense = DenseModel::new(params);
    for objective in Objective::ALL {
        let (best, best_values) = dense.brute_force_optimum(objective);
        let sol = policy_iteration(&mdp, &SolverConfig::new(objective)).unwrap();
        assert_eq!(sol.policy.actions(), &best[..], "{objective}");
        assert!(sup_distance(sol.values.values(), &best_values) <= 1e-9);
        let own = dense.evaluate(sol.policy.actions(), objective);
        assert!(sup_distance(sol.values.values(), &own) <= 1e-9);

        let vi = value_iteration(&mdp, &SolverConfig::new(objective)).unwrap();
        assert!(vi.sup_distance(&sol.values) <= 1e-6);
    }
}

#[test]
fn one_slot_before_the_query_transmits() {
    let params = ModelParams::new(2, 0.0, 0.0)
        .with_max_age(3)
        .with_bucket_capacity(1);
    let mdp = Mdp::new(params).unwrap();
    let config = SolverConfig::new(Objective::Qapa);
    let silent = Policy::all_silent(*mdp.space());
    let v = evaluate_policy(&silent, &mdp, &config).unwrap();
    let (improved, changed) = improve_policy(&silent, &v, &mdp, &config).unwrap();
    assert!(changed);
    let s = State::new(3, 1, 1);
    assert_eq!(improved.action(&s), Action::Transmit);

    let (best, _) = DenseModel::new(params).brute_force_optimum(Objective::Qapa);
    assert_eq!(best[mdp.space().index(&s)], Action::Transmit);
}

#[test]
fn single_period_objectives_coincide() {
    for (eps, mu) in [(0.2, 0.2), (0.5, 0.1), (0.0, 0.05), (0.9, 0.7)] {
        let mdp = Mdp::new(ModelParams::new(1, eps, mu).with_max_age(60)).unwrap();
        let pq = policy_iteration(&mdp, &SolverConfig::new(Objective::Pq)).unwrap();
        let qapa = policy_iteration(&mdp, &SolverConfig::new(Objective::Qapa)).unwrap();
        assert_eq!(pq.policy, qapa.policy);
        assert_eq!(pq.values, qapa.values);
    }
}

#[test]
fn solving_is_deterministic() {
    let mdp = Mdp::new(ModelParams::new(6, 0.3, 0.15).with_max_age(60)).unwrap();
    let config = SolverConfig::new(Objective::Qapa);
    let a = policy_iteration(&mdp, &config).unwrap();
    let b = policy_iteration(&mdp, &config).unwrap();
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.values.values(), b.values.values());
}

#[test]
fn dead_channel_value_iteration_matches_closed_form() {
    let mdp = Mdp::new(ModelParams::new(2, 1.0, 0.4).with_max_age(20)).unwrap();
    let lambda = mdp.params().discount;
    for objective in Objective::ALL {
        let v = value_iteration(&mdp, &SolverConfig::new(objective)).unwrap();
        for s in mdp.space().iter() {
            // Ages run deterministically: age + k after k slots, charged per objective.
            let expected: f64 = (1..400)
                .map(|k| {
                    let age = (s.age + k).min(20) as f64;
                    // Counting down by k over a period of 2 is the same as counting up.
                    let next_sigma = (s.slots_to_query + k) % 2;
                    let charged = match objective {
                        Objective::Pq => age,
                        Objective::Qapa if next_sigma == 0 => age,
                        Objective::Qapa => 0.0,
                    };
                    lambda.powi(k as i32 - 1) * charged
                })
                .sum();
            assert!((v.value(&s) - expected).abs() < 1e-8, "{objective} {s}");
        }
    }
}

#[test]
fn full_scale_space_is_indexable() {
    let params = ModelParams::new(40, 0.2, 0.2);
    let space = params.space().unwrap();
    assert_eq!(space.len(), 1_760_000);
    let last = State::new(4000, 39, 10);
    assert_eq!(space.index(&last), space.len() - 1);
}

fn small_params() -> impl Strategy<Value = ModelParams> {
    (
        1usize..=4,
        0.0f64..=1.0,
        0.0f64..=1.0,
        0.0f64..0.95,
        1usize..=3,
        0usize..=3,
    )
        .prop_filter_map(
            "at most 500 states",
            |(tq, eps, mu, discount, bucket, extra)| {
                let max_age = tq + extra * tq;
                let p = ModelParams::new(tq, eps, mu)
                    .with_max_age(max_age)
                    .with_bucket_capacity(bucket)
                    .with_discount(discount);
                (max_age * tq * (bucket + 1) <= 500).then_some(p)
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_equivalence(params in small_params(), qapa in any::<bool>()) {
        let objective = if qapa { Objective::Qapa } else { Objective::Pq };
        let mdp = Mdp::new(params).unwrap();
        let config = SolverConfig::new(objective);
        let sol = policy_iteration(&mdp, &config).unwrap();
        let vi = value_iteration(&mdp, &config).unwrap();
        prop_assert!(vi.sup_distance(&sol.values) <= 1e-6);
        let exact = DenseModel::new(params).evaluate(sol.policy.actions(), objective);
        prop_assert!(sup_distance(sol.values.values(), &exact) <= 1e-9);

        // Fixed-point optimality: no single-state swap helps by more than 10 tol.
        for s in mdp.space().iter() {
            if let Some(gap) = action_gap(&mdp, objective, &s, sol.values.values()) {
                let chosen_is_silent = sol.policy.action(&s) == Action::Silent;
                let improvement = if chosen_is_silent { gap } else { -gap };
                prop_assert!(improvement <= 10.0 * config.eval_tolerance, "{s}: {improvement}");
            }
        }

        // Greedy extraction from value iteration agrees wherever the gap is clear.
        let greedy = greedy_policy(&vi, &mdp, objective).unwrap();
        for s in mdp.space().iter() {
            if let Some(gap) = action_gap(&mdp, objective, &s, vi.values()) {
                if gap.abs() > 10.0 * config.eval_tolerance {
                    prop_assert_eq!(greedy.action(&s), sol.policy.action(&s));
                }
            }
        }

        // Values stay within the discounted bound.
        let bound = params.max_age as f64 / (1.0 - params.discount);
        prop_assert!(sol.values.values().iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= bound + 1e-9));
    }

    #[test]
    fn improvement_is_monotone(params in small_params(), qapa in any::<bool>()) {
        let objective = if qapa { Objective::Qapa } else { Objective::Pq };
        let mdp = Mdp::new(params).unwrap();
        let config = SolverConfig::new(objective);
        let mut policy = Policy::all_silent(*mdp.space());
        let mut values = evaluate_policy(&policy, &mdp, &config).unwrap();
        for _ in 0..50 {
            let (next, changed) = improve_policy(&policy, &values, &mdp, &config).unwrap();
            for s in mdp.space().iter().filter(|s| s.tokens == 0) {
                prop_assert_eq!(next.action(&s), Action::Silent);
            }
            if !changed {
                break;
            }
            let next_values = evaluate_policy(&next, &mdp, &config).unwrap();
            for (new, old) in next_values.values().iter().zip(values.values()) {
                prop_assert!(*new <= old + 10.0 * config.eval_tolerance);
            }
            policy = next;
            values = next_values;
        }
    }
}
