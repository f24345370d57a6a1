//! Property tests over seeded random populations: solver/oracle agreement,
//! Bellman inequalities, absorption completeness, payoff equivalence of
//! tied best responses, reduction soundness, and serialization symmetry.

use proptest::prelude::*;

use persuasion::best_response::{
    best_response, enumerate_best_response_oracle, solve_value, SenderStrategy,
};
use persuasion::chain::absorption;
use persuasion::gen;
use persuasion::io::{build, document_from};
use persuasion::model::{classify_states, shape, validate, Theta};
use persuasion::payoffs::{evaluate, receiver_optimal_value};
use persuasion::reduction::to_parsimonious;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn solver_matches_oracle(seed in any::<u64>(), m in 2usize..=5, n_signals in 2usize..=3) {
        let mut r = gen::rng(seed);
        let env = gen::random_environment(&mut r, n_signals);
        let proto = gen::random_protocol(&mut r, m, n_signals);
        prop_assert!(validate(&env, &proto).is_ok());
        let vf = solve_value(&env, &proto).unwrap();
        let oracle = enumerate_best_response_oracle(&env, &proto).unwrap();
        for i in 0..m {
            for &t in &Theta::BOTH {
                prop_assert!(
                    (vf.value(i, t) - oracle.value[t][i]).abs() <= 1e-9,
                    "state {} theta {}: {} vs {}", i, t, vf.value(i, t), oracle.value[t][i]
                );
            }
        }
    }

    #[test]
    fn bellman_inequalities_hold(seed in any::<u64>(), m in 2usize..=6) {
        let mut r = gen::rng(seed);
        let env = gen::random_environment(&mut r, 2);
        let proto = gen::random_protocol(&mut r, m, 2);
        let vf = solve_value(&env, &proto).unwrap();
        for &theta in &Theta::BOTH {
            for i in 0..m {
                let v = vf.value(i, theta);
                prop_assert!(v >= proto.action(i) - 1e-10);
                let cont: f64 = (0..env.n_signals())
                    .map(|s| {
                        env.pi(theta, s)
                            * (0..m)
                                .map(|j| proto.trans_prob(i, s, j) * vf.value(j, theta))
                                .sum::<f64>()
                    })
                    .sum();
                prop_assert!(v >= cont - 1e-10, "V({i}) = {v} < continuation {cont}");
            }
        }
    }

    #[test]
    fn chains_reach_closed_states_almost_surely(seed in any::<u64>(), m in 2usize..=6) {
        // From the support of the start distribution, mass ends in the
        // absorbing states and recurrent classes with probability one:
        // treating recurrent classes as stop regions must absorb everything.
        let mut r = gen::rng(seed);
        let env = gen::random_environment(&mut r, 2);
        let proto = gen::random_protocol(&mut r, m, 2);
        let class = classify_states(&proto);
        let mut stop_h = vec![false; m];
        for cls in &class.recurrent_classes {
            for &i in cls {
                stop_h[i] = true;
            }
        }
        for &i in &class.absorbing {
            stop_h[i] = true;
        }
        let sigma = SenderStrategy::from_stop_flags(stop_h.clone(), stop_h);
        for &theta in &Theta::BOTH {
            let a = absorption(&env, &proto, &sigma, theta).unwrap();
            prop_assert!((a.end_prob - 1.0).abs() <= 1e-9, "end prob {}", a.end_prob);
        }
    }

    #[test]
    fn tied_best_responses_agree_on_receiver_payoff(seed in any::<u64>(), m in 2usize..=4) {
        // Distinct sender-optimal stop sets that end play almost surely
        // induce the same receiver payoff.
        let mut r = gen::rng(seed);
        let env = gen::random_environment(&mut r, 2);
        let proto = gen::random_protocol(&mut r, m, 2);
        let oracle = enumerate_best_response_oracle(&env, &proto).unwrap();
        let mut payoffs: Vec<f64> = Vec::new();
        for (stop_h, ends_h) in oracle.maximizers[Theta::H].iter().take(4) {
            for (stop_l, ends_l) in oracle.maximizers[Theta::L].iter().take(4) {
                if !(*ends_h && *ends_l) {
                    continue;
                }
                let sigma = SenderStrategy::from_stop_flags(stop_h.clone(), stop_l.clone());
                payoffs.push(evaluate(&env, &proto, &sigma).unwrap().u_receiver);
            }
        }
        if let (Some(min), Some(max)) = (
            payoffs.iter().copied().reduce(f64::min),
            payoffs.iter().copied().reduce(f64::max),
        ) {
            prop_assert!(max - min <= 1e-9, "receiver payoff spread {}", max - min);
        }
    }

    #[test]
    fn parsimonious_payoff_below_relaxed_optimum(seed in any::<u64>(), m in 3usize..=6) {
        let mut r = gen::rng(seed);
        let env = gen::random_environment(&mut r, 2);
        let proto = gen::random_parsimonious(&mut r, m, 2);
        let (_, sigma) = best_response(&env, &proto).unwrap();
        let ur = evaluate(&env, &proto, &sigma).unwrap().u_receiver;
        let bound = receiver_optimal_value(&env, m).value;
        prop_assert!(ur <= bound + 1e-9, "U^R {ur} above bound {bound}");
    }

    #[test]
    fn parsimonious_shape_means_zero_one_actions(seed in any::<u64>(), m in 3usize..=6) {
        let mut r = gen::rng(seed);
        let proto = gen::random_parsimonious(&mut r, m, 2);
        let sh = shape(&proto);
        prop_assert!(sh.is_parsimonious);
        let hi = sh.hi_abs.unwrap();
        for i in 0..m {
            if i == hi {
                prop_assert!(proto.action(i) == 1.0);
            } else {
                prop_assert!(proto.action(i) == 0.0);
            }
        }
    }

    #[test]
    fn reduction_is_sound_and_idempotent(seed in any::<u64>(), m in 2usize..=5) {
        let mut r = gen::rng(seed);
        let env = gen::random_environment(&mut r, 2);
        let proto = gen::random_protocol(&mut r, m, 2);
        let (out, trace) = to_parsimonious(&env, &proto).unwrap();
        prop_assert!(shape(&out).is_parsimonious);
        prop_assert!(out.m() <= proto.m());
        prop_assert!(trace.ur_final >= trace.ur_initial - 1e-9);
        prop_assert!(trace.worst_step_gain() >= -1e-9);
        let (again, _) = to_parsimonious(&env, &out).unwrap();
        prop_assert!(again == out, "second reduction changed the protocol");
    }

    #[test]
    fn document_round_trip(seed in any::<u64>(), m in 1usize..=5) {
        let mut r = gen::rng(seed);
        let env = gen::random_environment(&mut r, 2);
        let proto = gen::random_protocol(&mut r, m, 2);
        prop_assume!(validate(&env, &proto).is_ok());
        let doc = document_from(&env, &proto);
        let (env2, proto2) = build(&doc).unwrap();
        prop_assert!(env2 == env);
        for i in 0..m {
            prop_assert!((proto2.action(i) - proto.action(i)).abs() == 0.0);
            for s in 0..2 {
                for j in 0..m {
                    prop_assert!(proto2.trans_prob(i, s, j) == proto.trans_prob(i, s, j));
                }
            }
        }
    }
}
