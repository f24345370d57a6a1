//! Payoff evaluation and closed-form optimal values.
//!
//! `evaluate` scores an arbitrary (protocol, strategy) profile for both
//! players. The closed forms give the receiver's optimal payoff over all
//! protocols with `m` memory states, the limiting sender payoff along
//! receiver-optimal sequences, and the solution of the relaxed two-variable
//! program that characterizes both. All formulas are evaluated through
//! `exp(-t)` with `t = (m-2) ln(gamma)`, so they stay finite and accurate
//! for large state counts.

use serde::Serialize;
use thiserror::Error;

use crate::best_response::SenderStrategy;
use crate::chain::{absorption, ChainError};
use crate::model::{shape, ProtocolShape};
use crate::model::{Environment, PerTheta, Protocol};

/// Errors from payoff computations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum PayoffError {
    /// The operation requires a parsimonious protocol.
    #[error("protocol shape unsuitable: {0}")]
    ShapeError(String),
    /// At the knife edge (`gamma^(m-2) <= kappa`, `p = 1/2`) every sender
    /// payoff in `[0,1]` arises from some receiver-optimal protocol.
    #[error("knife edge: prior 1/2 with gamma^(m-2) <= kappa admits any sender payoff in [0,1]")]
    KnifeEdge,
    /// Underlying chain analysis failed.
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Per-state-of-nature outcome probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaOutcome {
    /// Probability the play ends.
    pub end_prob: f64,
    /// Probability the high action is taken.
    pub prob_h: f64,
}

/// Expected payoffs of a (protocol, strategy) profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffReport {
    /// Receiver's expected payoff.
    pub u_receiver: f64,
    /// Sender's expected payoff.
    pub u_sender: f64,
    /// End and high-action probabilities per state of nature.
    pub per_theta: PerTheta<ThetaOutcome>,
}

/// Evaluates both players' expected payoffs. Play that never ends
/// contributes zero to both sides.
pub fn evaluate(
    env: &Environment,
    proto: &Protocol,
    sigma: &SenderStrategy,
) -> Result<PayoffReport, PayoffError> {
    let per_theta = PerTheta::<Result<ThetaOutcome, ChainError>>::build(|theta| {
        let a = absorption(env, proto, sigma, theta)?;
        let prob_h: f64 =
            a.mu.iter()
                .enumerate()
                .map(|(i, &mu)| mu * proto.action(i))
                .sum();
        Ok(ThetaOutcome {
            end_prob: a.end_prob,
            prob_h,
        })
    });
    let h = per_theta.h?;
    let l = per_theta.l?;
    let p = env.prior();
    Ok(PayoffReport {
        u_receiver: p * h.prob_h + (1.0 - p) * (l.end_prob - l.prob_h),
        u_sender: p * h.prob_h + (1.0 - p) * l.prob_h,
        per_theta: PerTheta { h, l },
    })
}

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// Which branch of the closed forms applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `gamma^(m-2) > kappa`: signals are informative enough for the
    /// receiver to beat the prior.
    Interior,
    /// Acting on the prior is optimal.
    Prior,
}

/// The receiver's optimal payoff over all protocols with `m` states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalValue {
    /// The optimal payoff (a supremum in the interior regime for `m >= 4`).
    pub value: f64,
    /// Which branch produced it.
    pub regime: Regime,
    /// False when no protocol attains the value exactly (interior regime
    /// with at least four states); it is then approached by vanishing-exit
    /// families.
    pub attained: bool,
}

/// `t = (m-2) ln(gamma)`, the log of the informativeness budget.
pub(crate) fn log_budget(env: &Environment, m: usize) -> f64 {
    (m as f64 - 2.0) * env.signal_model().gamma().ln()
}

/// True when `gamma^(m-2) > kappa`, compared in log space.
pub(crate) fn is_interior(env: &Environment, m: usize) -> bool {
    log_budget(env, m) > env.kappa().ln()
}

/// The receiver's optimal payoff with `m >= 2` memory states:
/// `1 - (2 sqrt(p(1-p) G) - 1)/(G - 1)` with `G = gamma^(m-2)` in the
/// interior regime, `max(p, 1-p)` otherwise. In the interior regime with
/// `m >= 4` the value is a supremum, not a maximum.
pub fn receiver_optimal_value(env: &Environment, m: usize) -> OptimalValue {
    assert!(m >= 2, "receiver_optimal_value requires m >= 2");
    let p = env.prior();
    if is_interior(env, m) {
        let t = log_budget(env, m);
        // 1 - (2 sqrt(p(1-p)) e^{t/2} - 1)/(e^t - 1), in e^{-t} form.
        let w = (-t).exp();
        let s = 2.0 * (p * (1.0 - p)).sqrt() * (-t / 2.0).exp();
        let value = 1.0 - (s - w) / (-(-t).exp_m1());
        OptimalValue {
            value,
            regime: Regime::Interior,
            attained: m < 4,
        }
    } else {
        OptimalValue {
            value: p.max(1.0 - p),
            regime: Regime::Prior,
            attained: true,
        }
    }
}

/// The limiting sender payoff along any sequence of parsimonious protocols
/// attaining the receiver's optimal payoff:
/// `p + (2p-1)/(G-1)` in the interior regime, and the corner payoffs
/// otherwise. At the knife edge (`G <= kappa` and `p = 1/2`) the limit is
/// not pinned down and an error is returned.
pub fn sender_limit_value(env: &Environment, m: usize) -> Result<f64, PayoffError> {
    assert!(m >= 2, "sender_limit_value requires m >= 2");
    let p = env.prior();
    if is_interior(env, m) {
        let t = log_budget(env, m);
        Ok(p + (2.0 * p - 1.0) / t.exp_m1())
    } else if p > 0.5 {
        Ok(1.0)
    } else if p < 0.5 {
        Ok(0.0)
    } else {
        Err(PayoffError::KnifeEdge)
    }
}

/// Solution of the relaxed program: maximize `p a + (1-p) b` over
/// `[0,1]^2` subject to `a b <= G (1-a)(1-b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelaxedSolution {
    /// Optimal high-absorption probability under the high state.
    pub alpha_star: f64,
    /// Optimal low-absorption probability under the low state.
    pub beta_star: f64,
    /// Optimal objective value.
    pub value: f64,
    /// Whether the product constraint binds at the solution (it always
    /// does).
    pub binding: bool,
    /// False only at the knife edge, where multiple solutions exist.
    pub unique: bool,
}

/// Closed-form solution of the relaxed program.
pub fn solve_relaxed(env: &Environment, m: usize) -> RelaxedSolution {
    assert!(m >= 2, "solve_relaxed requires m >= 2");
    let p = env.prior();
    if is_interior(env, m) {
        let t = log_budget(env, m);
        let u = (-t / 2.0).exp(); // 1/sqrt(G)
        let denom = -(-t).exp_m1(); // 1 - 1/G
        let alpha = (1.0 - ((1.0 - p) / p).sqrt() * u) / denom;
        let beta = (1.0 - (p / (1.0 - p)).sqrt() * u) / denom;
        let value = p * alpha + (1.0 - p) * beta;
        RelaxedSolution {
            alpha_star: alpha,
            beta_star: beta,
            value,
            binding: true,
            unique: true,
        }
    } else if p > 0.5 {
        RelaxedSolution {
            alpha_star: 1.0,
            beta_star: 0.0,
            value: p,
            binding: true,
            unique: true,
        }
    } else if p < 0.5 {
        RelaxedSolution {
            alpha_star: 0.0,
            beta_star: 1.0,
            value: 1.0 - p,
            binding: true,
            unique: true,
        }
    } else {
        RelaxedSolution {
            alpha_star: 1.0,
            beta_star: 0.0,
            value: 0.5,
            binding: true,
            unique: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Spread inequality
// ---------------------------------------------------------------------------

/// The two sides of the absorption-odds spread inequality
/// `mu_hi^H mu_lo^L <= gamma^(m-2) mu_lo^H mu_hi^L` for a parsimonious
/// protocol under the continue-everywhere best response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpreadCheck {
    /// `mu_hi^H * mu_lo^L`.
    pub lhs: f64,
    /// `gamma^(m-2) * mu_lo^H * mu_hi^L`.
    pub rhs: f64,
    /// `lhs <= rhs` within `1e-10` slack.
    pub ok: bool,
    /// Strictness report, present when `m >= 4` and all four absorption
    /// probabilities are positive.
    pub strict: Option<bool>,
}

/// Evaluates the spread inequality for a parsimonious protocol.
pub fn spread_ratio(env: &Environment, proto: &Protocol) -> Result<SpreadCheck, PayoffError> {
    let sh: ProtocolShape = shape(proto);
    if !sh.is_parsimonious {
        return Err(PayoffError::ShapeError(
            "spread inequality is defined for parsimonious protocols".into(),
        ));
    }
    let (lo, hi) = (sh.lo_abs.unwrap(), sh.hi_abs.unwrap());
    let sigma = SenderStrategy::continue_everywhere(proto.m());
    let mu = PerTheta::<Result<Vec<f64>, ChainError>>::build(|theta| {
        Ok(absorption(env, proto, &sigma, theta)?.mu)
    });
    let mu_h = mu.h?;
    let mu_l = mu.l?;
    let g = log_budget(env, proto.m()).exp();
    let lhs = mu_h[hi] * mu_l[lo];
    let rhs = g * mu_h[lo] * mu_l[hi];
    let all_positive = mu_h[hi] > 0.0 && mu_h[lo] > 0.0 && mu_l[hi] > 0.0 && mu_l[lo] > 0.0;
    let strict = (proto.m() >= 4 && all_positive).then_some(lhs < rhs);
    Ok(SpreadCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-10,
        strict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::best_response::best_response;
    use crate::family::{figure1, figure2, figure3};
    use crate::model::SignalModel;

    fn env07() -> Environment {
        Environment::symmetric_binary(0.7).unwrap()
    }

    #[test]
    fn figure2_payoffs() {
        let env = env07();
        let proto = figure2(&env);
        let (_, sigma) = best_response(&env, &proto).unwrap();
        let report = evaluate(&env, &proto, &sigma).unwrap();
        assert!((report.u_receiver - 0.7).abs() <= 1e-12);
        assert!((report.u_sender - 0.5).abs() <= 1e-12);
        assert!((report.per_theta.h.end_prob - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn figure1_payoffs() {
        let env = env07();
        let proto = figure1(&env);
        let (_, sigma) = best_response(&env, &proto).unwrap();
        let report = evaluate(&env, &proto, &sigma).unwrap();
        assert!((report.u_receiver - 0.5).abs() <= 1e-12);
        assert!((report.u_sender - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn figure3_deterministic_payoff() {
        let env = env07();
        let proto = figure3(&env, 1.0);
        let (_, sigma) = best_response(&env, &proto).unwrap();
        let report = evaluate(&env, &proto, &sigma).unwrap();
        assert!((report.u_receiver - 0.49 / 0.58).abs() <= 1e-12);
    }

    #[test]
    fn never_ending_play_scores_zero() {
        let env = env07();
        let proto = figure3(&env, 0.0);
        let sigma = SenderStrategy::continue_everywhere(5);
        let report = evaluate(&env, &proto, &sigma).unwrap();
        assert_eq!(report.u_sender, 0.0);
        assert_eq!(report.u_receiver, 0.0);
        assert_eq!(report.per_theta.h.end_prob, 0.0);
    }

    #[test]
    fn receiver_value_symmetric() {
        let env = env07();
        let v = receiver_optimal_value(&env, 5);
        assert_eq!(v.regime, Regime::Interior);
        assert!(!v.attained);
        assert!((v.value - 0.343 / 0.37).abs() <= 1e-12);
        // m = 3 is attained by the deterministic ladder.
        let v3 = receiver_optimal_value(&env, 3);
        assert!(v3.attained);
        assert!((v3.value - 0.7).abs() <= 1e-12);
    }

    #[test]
    fn receiver_value_prior_regime() {
        let sm = SignalModel::symmetric_binary(0.7).unwrap();
        let env = Environment::new(0.9, sm).unwrap();
        // gamma = 49/9 < kappa = 9 at m = 3.
        let v = receiver_optimal_value(&env, 3);
        assert_eq!(v.regime, Regime::Prior);
        assert!(v.attained);
        assert_eq!(v.value, 0.9);
    }

    #[test]
    fn receiver_value_continuous_at_boundary() {
        // gamma^(m-2) slightly above kappa: the interior branch approaches
        // max(p, 1-p).
        let p = 0.8;
        for slack in [1e-4, 1e-6, 1e-8] {
            let kappa: f64 = p / (1.0 - p);
            let gamma = kappa * (1.0 + slack);
            // two signals with likelihood ratios sqrt(gamma), 1/sqrt(gamma)
            let r = gamma.sqrt();
            let pi_h = vec![r / (1.0 + r), 1.0 / (1.0 + r)];
            let pi_l = vec![1.0 / (1.0 + r), r / (1.0 + r)];
            let sm = SignalModel::new(vec!["h".into(), "l".into()], pi_h, pi_l).unwrap();
            let env = Environment::new(p, sm).unwrap();
            let v = receiver_optimal_value(&env, 3);
            assert_eq!(v.regime, Regime::Interior);
            assert!(
                (v.value - p).abs() <= 10.0 * slack.sqrt(),
                "slack {slack}: {} vs {p}",
                v.value
            );
        }
    }

    #[test]
    fn branches_agree_at_exact_boundary() {
        // gamma = 3, m = 4, p = 0.9: gamma^2 = 9 = kappa.
        let sm = SignalModel::new(
            vec!["h".into(), "l".into()],
            vec![0.75, 0.25],
            vec![0.5, 0.5],
        )
        .unwrap();
        let env = Environment::new(0.9, sm).unwrap();
        let g: f64 = env.signal_model().gamma();
        assert!((g - 3.0).abs() < 1e-12);
        let t = log_budget(&env, 4);
        let w = (-t).exp();
        let s = 2.0 * (0.9f64 * 0.1).sqrt() * (-t / 2.0).exp();
        let interior = 1.0 - (s - w) / (-(-t).exp_m1());
        assert!((interior - 0.9).abs() <= 1e-10);
        assert_eq!(receiver_optimal_value(&env, 4).regime, Regime::Prior);
    }

    #[test]
    fn sender_value_branches() {
        let env = env07();
        assert!((sender_limit_value(&env, 5).unwrap() - 0.5).abs() <= 1e-15);

        let sm = SignalModel::symmetric_binary(0.7).unwrap();
        let env6 = Environment::new(0.6, sm.clone()).unwrap();
        let g = (49.0f64 / 9.0).powi(2);
        let expect = 0.6 + 0.2 / (g - 1.0);
        assert!((sender_limit_value(&env6, 4).unwrap() - expect).abs() <= 1e-12);

        // Prior regime corners.
        let env_low = Environment::new(0.3, sm.clone()).unwrap();
        assert_eq!(sender_limit_value(&env_low, 2).unwrap(), 0.0);
        let env_high = Environment::new(0.9, sm.clone()).unwrap();
        assert_eq!(sender_limit_value(&env_high, 3).unwrap(), 1.0);

        // Knife edge: p = 1/2 with m = 2.
        let env_half = Environment::new(0.5, sm).unwrap();
        assert!(matches!(
            sender_limit_value(&env_half, 2),
            Err(PayoffError::KnifeEdge)
        ));
    }

    #[test]
    fn relaxed_symmetric_closed_form() {
        let env = env07();
        for m in [3, 4, 5, 8] {
            let sol = solve_relaxed(&env, m);
            let sqrt_g = log_budget(&env, m).exp().sqrt();
            let expect = sqrt_g / (sqrt_g + 1.0);
            assert!((sol.alpha_star - expect).abs() <= 1e-12, "m={m}");
            assert!((sol.beta_star - expect).abs() <= 1e-12);
            assert!(sol.unique && sol.binding);
        }
    }

    #[test]
    fn relaxed_corner_case() {
        // gamma = 1.2 < kappa = 7/3 at p = 0.7, m = 3.
        let sm = SignalModel::new(
            vec!["h".into(), "l".into()],
            vec![6.0 / 11.0, 5.0 / 11.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert!((sm.gamma() - 1.2).abs() < 1e-12);
        let env = Environment::new(0.7, sm).unwrap();
        let sol = solve_relaxed(&env, 3);
        assert_eq!((sol.alpha_star, sol.beta_star), (1.0, 0.0));
        assert_eq!(sol.value, 0.7);
        assert!(sol.unique);
    }

    #[test]
    fn relaxed_binding_residual_and_grid_optimality() {
        // Closed form beats a feasibility grid and satisfies the binding
        // constraint; checked on both a symmetric and a skewed prior.
        for (p, m) in [(0.5, 5), (0.6, 4), (0.35, 4)] {
            let sm = SignalModel::symmetric_binary(0.7).unwrap();
            let env = Environment::new(p, sm).unwrap();
            let sol = solve_relaxed(&env, m);
            let g = log_budget(&env, m).exp();
            let residual =
                sol.alpha_star * sol.beta_star - g * (1.0 - sol.alpha_star) * (1.0 - sol.beta_star);
            assert!(residual.abs() <= 1e-10, "p={p} m={m}: residual {residual}");

            let n = 1200;
            let mut best = f64::NEG_INFINITY;
            for ia in 0..=n {
                let a = ia as f64 / n as f64;
                for ib in 0..=n {
                    let b = ib as f64 / n as f64;
                    if a * b <= g * (1.0 - a) * (1.0 - b) {
                        best = best.max(p * a + (1.0 - p) * b);
                    }
                }
            }
            assert!(
                best <= sol.value + 1e-6 && sol.value <= best + 2.0 / n as f64,
                "p={p} m={m}: grid {best} vs closed form {}",
                sol.value
            );
        }
    }

    #[test]
    fn relaxed_value_matches_receiver_formula() {
        for (p, m) in [(0.5, 5), (0.6, 4), (0.2, 6)] {
            let sm = SignalModel::symmetric_binary(0.7).unwrap();
            let env = Environment::new(p, sm).unwrap();
            let sol = solve_relaxed(&env, m);
            let v = receiver_optimal_value(&env, m);
            assert!((sol.value - v.value).abs() <= 1e-12, "p={p} m={m}");
        }
    }

    #[test]
    fn knife_edge_relaxed_not_unique() {
        let sm = SignalModel::symmetric_binary(0.7).unwrap();
        let env = Environment::new(0.5, sm).unwrap();
        let sol = solve_relaxed(&env, 2);
        assert!(!sol.unique);
        assert_eq!(sol.value, 0.5);
    }

    #[test]
    fn spread_equality_for_three_states() {
        let env = env07();
        let check = spread_ratio(&env, &figure2(&env)).unwrap();
        assert!((check.lhs - 0.49).abs() <= 1e-12);
        assert!((check.rhs - 0.49).abs() <= 1e-12);
        assert!(check.ok);
        assert!(check.strict.is_none()); // m = 3: strictness not reported
    }

    #[test]
    fn spread_strict_for_figure3() {
        let env = env07();
        let check = spread_ratio(&env, &figure3(&env, 0.5)).unwrap();
        assert!(check.ok);
        assert_eq!(check.strict, Some(true));
    }

    #[test]
    fn spread_trivial_when_mass_vanishes() {
        // Block the high absorber: all mass flows to the low one.
        let env = env07();
        let mut proto = figure3(&env, 0.5);
        // state 4 (index 3) on h: stay put instead of exiting upward
        proto.set_transition(3, 0, vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        let check = spread_ratio(&env, &proto).unwrap();
        assert_eq!(check.lhs, 0.0);
        assert!(check.ok);
        assert!(check.strict.is_none()); // a zero absorption probability
    }

    #[test]
    fn spread_rejects_non_parsimonious() {
        let env = env07();
        assert!(matches!(
            spread_ratio(&env, &figure1(&env)),
            Err(PayoffError::ShapeError(_))
        ));
    }

    #[test]
    fn large_state_counts_stay_finite() {
        let env = env07();
        let v = receiver_optimal_value(&env, 400);
        assert!(v.value.is_finite() && v.value <= 1.0 && v.value > 0.999);
        let s = sender_limit_value(&env, 400).unwrap();
        assert!((s - 0.5).abs() <= 1e-15);
        let sol = solve_relaxed(&env, 400);
        assert!(sol.alpha_star.is_finite() && sol.alpha_star <= 1.0);
        // At a modest size the closed forms stay strictly interior.
        let v20 = receiver_optimal_value(&env, 20);
        assert!(v20.value < 1.0 && v20.value > 0.999);
    }
}
