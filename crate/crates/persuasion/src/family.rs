//! The explicit protocol constructions: the three-state examples and the
//! near-optimal ladder family with vanishing stochastic exits.
//!
//! The family puts the two absorbing states at the ends of a ladder of
//! transient states. The extreme high signal walks the ladder up
//! deterministically, the extreme low signal walks it down; the only
//! stochastic transitions are the exit from the bottom transient state into
//! the low absorber (on the low signal) and from the top transient state
//! into the high absorber (on the high signal). As the exit rates shrink at
//! the right relative weight, the receiver's payoff climbs to its
//! closed-form optimum.

use serde::Serialize;
use thiserror::Error;

use crate::best_response::{best_response, SolveError};
use crate::chain::{absorption, ChainError};
use crate::diagnostics::{behavior_metrics, DiagError};
use crate::model::{Environment, Protocol, Theta};
use crate::payoffs::{
    evaluate, is_interior, log_budget, receiver_optimal_value, sender_limit_value, solve_relaxed,
    spread_ratio, PayoffError,
};

/// Errors from family construction and sweeps.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum FamilyError {
    /// A constructed exit probability left `(0, 1]`.
    #[error("family parameter out of range: {0}")]
    ParamOutOfRange(String),
    /// The informativeness budget does not beat the prior skewness, so the
    /// family construction is pointless: acting on the prior is optimal.
    #[error(
        "gamma^(m-2) = {budget} <= kappa = {kappa}: acting on the prior is optimal \
         (max(p, 1-p))"
    )]
    RegimeError {
        /// `gamma^(m-2)`.
        budget: f64,
        /// Prior skewness.
        kappa: f64,
    },
    /// Stopping solver failed on a family member.
    #[error(transparent)]
    Solve(#[from] SolveError),
    /// Chain analysis failed on a family member.
    #[error(transparent)]
    Chain(#[from] ChainError),
    /// Payoff machinery failed on a family member.
    #[error("payoff evaluation failed: {0}")]
    Payoff(String),
    /// Diagnostics failed on a family member.
    #[error("diagnostics failed: {0}")]
    Diag(String),
}

impl From<PayoffError> for FamilyError {
    fn from(e: PayoffError) -> Self {
        FamilyError::Payoff(e.to_string())
    }
}

impl From<DiagError> for FamilyError {
    fn from(e: DiagError) -> Self {
        FamilyError::Diag(e.to_string())
    }
}

/// Parameters of the ladder family: the state count and the two exit-rate
/// multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FamilyParams {
    /// Memory states (at least 3).
    pub m: usize,
    /// Multiplier of the low exit rate (bottom transient state, low signal).
    pub eps1: f64,
    /// Multiplier of the high exit rate (top transient state, high signal).
    pub eps2: f64,
}

/// The constructed exit probabilities: the low exit is
/// `(pi_H(h) pi_L(h))^((m-2)/2) * eps1`, the high exit is
/// `(pi_H(l) pi_L(l))^((m-2)/2) * eps2`. For `m = 3` both are clamped at 1,
/// reproducing the deterministic three-state ladder at large multipliers.
pub fn exit_probabilities(env: &Environment, params: &FamilyParams) -> (f64, f64) {
    let sm = env.signal_model();
    let (h, l) = (sm.h_signal(), sm.l_signal());
    let half_power = (params.m as f64 - 2.0) / 2.0;
    let exit_lo = (sm.pi(Theta::H, h) * sm.pi(Theta::L, h)).powf(half_power) * params.eps1;
    let exit_hi = (sm.pi(Theta::H, l) * sm.pi(Theta::L, l)).powf(half_power) * params.eps2;
    if params.m == 3 {
        (exit_lo.min(1.0), exit_hi.min(1.0))
    } else {
        (exit_lo, exit_hi)
    }
}

/// Builds the ladder family member. Non-extreme signals hold the state in
/// place at every transient state, so the construction depends only on the
/// extreme pair; absorption odds are unchanged by the holding signals.
pub fn build_family(env: &Environment, params: &FamilyParams) -> Result<Protocol, FamilyError> {
    let m = params.m;
    if m < 3 {
        return Err(FamilyError::ParamOutOfRange(format!(
            "family needs at least 3 states, got {m}"
        )));
    }
    if !params.eps1.is_finite()
        || !params.eps2.is_finite()
        || params.eps1 <= 0.0
        || params.eps2 <= 0.0
    {
        return Err(FamilyError::ParamOutOfRange(format!(
            "exit multipliers must be positive, got ({}, {})",
            params.eps1, params.eps2
        )));
    }
    let (exit_lo, exit_hi) = exit_probabilities(env, params);
    if exit_lo > 1.0 || exit_hi > 1.0 {
        return Err(FamilyError::ParamOutOfRange(format!(
            "constructed exit probabilities ({exit_lo}, {exit_hi}) exceed 1"
        )));
    }
    let sm = env.signal_model();
    let (h, l) = (sm.h_signal(), sm.l_signal());
    let n_signals = sm.len();

    let mut proto = Protocol::zeroed(m, n_signals);
    for s in 0..n_signals {
        proto.transition_mut(0, s)[0] = 1.0;
        proto.transition_mut(m - 1, s)[m - 1] = 1.0;
    }
    for i in 1..=m - 2 {
        for s in 0..n_signals {
            let row = proto.transition_mut(i, s);
            if s == l {
                if i == 1 {
                    row[0] += exit_lo;
                    row[1] += 1.0 - exit_lo;
                } else {
                    row[i - 1] = 1.0;
                }
            } else if s == h {
                if i == m - 2 {
                    row[m - 1] += exit_hi;
                    row[m - 2] += 1.0 - exit_hi;
                } else {
                    row[i + 1] = 1.0;
                }
            } else {
                row[i] = 1.0;
            }
        }
    }
    let mut g = vec![0.0; m];
    g[1] = 1.0;
    proto.set_initial(g);
    proto.set_action(m - 1, 1.0);
    Ok(proto)
}

/// The exit-weight ratio `eps2/eps1` under which the family attains the
/// receiver's optimal payoff in the vanishing-exit limit:
/// `(sqrt(G) - sqrt((1-p)/p)) / (sqrt(G) sqrt((1-p)/p) - 1)` with
/// `G = gamma^(m-2)`. Defined only in the interior regime.
pub fn optimal_weight_ratio(env: &Environment, m: usize) -> Result<f64, FamilyError> {
    if !is_interior(env, m) {
        return Err(FamilyError::RegimeError {
            budget: log_budget(env, m).exp(),
            kappa: env.kappa(),
        });
    }
    let t = log_budget(env, m);
    let c = ((1.0 - env.prior()) / env.prior()).sqrt();
    let u = (-t / 2.0).exp(); // 1/sqrt(G)
    Ok((1.0 - c * u) / (c - u))
}

/// One row of a family sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    /// Exit multiplier scale of this member.
    pub eps: f64,
    /// Receiver payoff under the best response.
    pub u_receiver: f64,
    /// Sender payoff under the best response.
    pub u_sender: f64,
    /// High-absorber probability under the high state of nature.
    pub mu_hi_h: f64,
    /// Low-absorber probability under the low state of nature.
    pub mu_lo_l: f64,
    /// Largest one-step absorbing mass of the member.
    pub max_abs_transition: f64,
    /// Entry concentration into the low absorber (worst state of nature).
    pub entry_lo: f64,
    /// Entry concentration into the high absorber (worst state of nature).
    pub entry_hi: f64,
    /// Left side of the spread inequality.
    pub spread_lhs: f64,
    /// Right side of the spread inequality.
    pub spread_rhs: f64,
    /// `|mu_hi^H - alpha*|`.
    pub bias_gap: f64,
}

/// A full sweep with its closed-form targets.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    /// State count of the family.
    pub m: usize,
    /// Rows ordered by descending exit scale.
    pub rows: Vec<SweepRow>,
    /// Closed-form receiver target.
    pub receiver_target: f64,
    /// Closed-form limiting sender payoff.
    pub sender_target: f64,
    /// Exit-weight ratio used (`eps2 = ratio * eps1`).
    pub weight_ratio: f64,
    /// Vanishing-exit limit of the high-absorber probability under the
    /// high state.
    pub mu_hi_limit: f64,
}

impl SweepResult {
    /// Receiver gap of the last (smallest-exit) row.
    pub fn final_gap(&self) -> f64 {
        self.rows
            .last()
            .map(|r| (self.receiver_target - r.u_receiver).abs())
            .unwrap_or(f64::NAN)
    }

    /// Writes the sweep as CSV with `# `-prefixed header lines embedding
    /// the configuration, then one row per member.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, config: &str) -> std::io::Result<()> {
        writeln!(w, "# {config}")?;
        writeln!(
            w,
            "# m={} weight_ratio={} receiver_target={} sender_target={} mu_hi_limit={}",
            self.m, self.weight_ratio, self.receiver_target, self.sender_target, self.mu_hi_limit
        )?;
        writeln!(
            w,
            "eps,u_receiver,u_sender,mu_mH,mu_1L,max_abs_transition,entry_metric_1,\
             entry_metric_m,spread_lhs,spread_rhs"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.eps,
                r.u_receiver,
                r.u_sender,
                r.mu_hi_h,
                r.mu_lo_l,
                r.max_abs_transition,
                r.entry_lo,
                r.entry_hi,
                r.spread_lhs,
                r.spread_rhs
            )?;
        }
        Ok(())
    }
}

/// A descending geometric grid from `max` down to `min` by `ratio`.
pub fn geometric_grid(max: f64, min: f64, ratio: f64) -> Vec<f64> {
    assert!(max >= min && min > 0.0 && ratio > 1.0);
    let mut grid = Vec::new();
    let steps = (max / min).ln() / ratio.ln();
    let n = steps.round().max(0.0) as usize;
    for k in 0..=n {
        grid.push(max / ratio.powi(k as i32));
    }
    grid
}

/// Sweeps the family over a grid of exit scales: per member, solve the best
/// response, analyze absorption, evaluate payoffs, and attach the
/// behavioral diagnostics. `m = 3` degenerates to the single exactly
/// optimal member with the larger exit clamped at one.
pub fn sweep(env: &Environment, m: usize, eps_grid: &[f64]) -> Result<SweepResult, FamilyError> {
    let ratio = optimal_weight_ratio(env, m)?;
    let receiver_target = receiver_optimal_value(env, m).value;
    let sender_target =
        sender_limit_value(env, m).map_err(|e| FamilyError::Payoff(e.to_string()))?;
    let relaxed = solve_relaxed(env, m);
    let mu_hi_limit = {
        // r sqrt(G) / (1 + r sqrt(G)), computed as alpha* of the relaxed
        // program at the optimal ratio (the two coincide).
        relaxed.alpha_star
    };

    let mut grid: Vec<f64> = if m == 3 {
        // At three states the absorption odds depend only on the exit
        // ratio, so every member with the optimal ratio is exactly optimal;
        // emit the largest feasible one (its bigger exit probability is 1).
        let (e1, e2) = exit_probabilities(
            env,
            &FamilyParams {
                m,
                eps1: 1.0,
                eps2: ratio,
            },
        );
        vec![1.0 / e1.max(e2)]
    } else {
        let mut g = eps_grid.to_vec();
        g.sort_by(|a, b| b.partial_cmp(a).unwrap());
        g.dedup();
        g
    };
    grid.retain(|&e| e > 0.0);
    if grid.is_empty() {
        return Err(FamilyError::ParamOutOfRange("empty exit grid".into()));
    }

    let mut rows = Vec::with_capacity(grid.len());
    for &eps in &grid {
        let params = FamilyParams {
            m,
            eps1: eps,
            eps2: ratio * eps,
        };
        let proto = build_family(env, &params)?;
        let (_, sigma) = best_response(env, &proto)?;
        let report = evaluate(env, &proto, &sigma)?;
        let mu_h = absorption(env, &proto, &sigma, Theta::H)?.mu;
        let mu_l = absorption(env, &proto, &sigma, Theta::L)?.mu;
        let spread = spread_ratio(env, &proto)?;
        let metrics = behavior_metrics(env, &proto)?;
        rows.push(SweepRow {
            eps,
            u_receiver: report.u_receiver,
            u_sender: report.u_sender,
            mu_hi_h: mu_h[m - 1],
            mu_lo_l: mu_l[0],
            max_abs_transition: metrics.max_abs_transition,
            entry_lo: metrics.entry_lo.h.min(metrics.entry_lo.l),
            entry_hi: metrics.entry_hi.h.min(metrics.entry_hi.l),
            spread_lhs: spread.lhs,
            spread_rhs: spread.rhs,
            bias_gap: metrics.bias_gap,
        });
    }
    Ok(SweepResult {
        m,
        rows,
        receiver_target,
        sender_target,
        weight_ratio: ratio,
        mu_hi_limit,
    })
}

// ---------------------------------------------------------------------------
// Reference protocols
// ---------------------------------------------------------------------------

/// The fully manipulable three-state ladder: no absorbing states, graded
/// actions (0, 1/2, 1), start in the middle. The high signal climbs, the
/// low signal descends, the ends hold.
pub fn figure1(env: &Environment) -> Protocol {
    let sm = env.signal_model();
    let (h, l) = (sm.h_signal(), sm.l_signal());
    let mut proto = Protocol::zeroed(3, sm.len());
    for s in 0..sm.len() {
        let up = s == h;
        let down = s == l;
        for i in 0..3usize {
            let j = if up {
                (i + 1).min(2)
            } else if down {
                i.saturating_sub(1)
            } else {
                i
            };
            proto.transition_mut(i, s)[j] = 1.0;
        }
    }
    proto.set_initial(vec![0.0, 1.0, 0.0]);
    proto.set_action(1, 0.5);
    proto.set_action(2, 1.0);
    proto
}

/// The deterministic three-state ladder with two absorbing ends: the
/// simplest parsimonious protocol, optimal at three states.
pub fn figure2(env: &Environment) -> Protocol {
    let sm = env.signal_model();
    let (h, l) = (sm.h_signal(), sm.l_signal());
    let mut proto = Protocol::zeroed(3, sm.len());
    for s in 0..sm.len() {
        proto.transition_mut(0, s)[0] = 1.0;
        proto.transition_mut(2, s)[2] = 1.0;
        let row = proto.transition_mut(1, s);
        if s == h {
            row[2] = 1.0;
        } else if s == l {
            row[0] = 1.0;
        } else {
            row[1] = 1.0;
        }
    }
    proto.set_initial(vec![0.0, 1.0, 0.0]);
    proto.set_action(2, 1.0);
    proto
}

/// The five-state ladder with literal exit probability `eps` at the two
/// penultimate states, starting from the middle. `eps = 0` is allowed and
/// closes the interior ladder (play never ends under a continuing sender);
/// any `eps` in `(0, 1]` is parsimonious.
pub fn figure3(env: &Environment, eps: f64) -> Protocol {
    assert!(
        (0.0..=1.0).contains(&eps),
        "exit probability must lie in [0,1]"
    );
    let sm = env.signal_model();
    let (h, l) = (sm.h_signal(), sm.l_signal());
    let mut proto = Protocol::zeroed(5, sm.len());
    for s in 0..sm.len() {
        proto.transition_mut(0, s)[0] = 1.0;
        proto.transition_mut(4, s)[4] = 1.0;
    }
    for i in 1..=3 {
        for s in 0..sm.len() {
            let row = proto.transition_mut(i, s);
            if s == l {
                if i == 1 {
                    row[0] += eps;
                    row[1] += 1.0 - eps;
                } else {
                    row[i - 1] = 1.0;
                }
            } else if s == h {
                if i == 3 {
                    row[4] += eps;
                    row[3] += 1.0 - eps;
                } else {
                    row[i + 1] = 1.0;
                }
            } else {
                row[i] = 1.0;
            }
        }
    }
    proto.set_initial(vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    proto.set_action(4, 1.0);
    proto
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{classify_states, shape, validate};

    fn env07() -> Environment {
        Environment::symmetric_binary(0.7).unwrap()
    }

    #[test]
    fn family_m3_with_unit_exits_is_figure2() {
        let env = env07();
        let c = (0.7f64 * 0.3).sqrt();
        let params = FamilyParams {
            m: 3,
            eps1: 1.0 / c,
            eps2: 1.0 / c,
        };
        let proto = build_family(&env, &params).unwrap();
        assert_eq!(proto, figure2(&env));
        // Clamping: larger multipliers still land on the deterministic
        // member.
        let clamped = build_family(
            &env,
            &FamilyParams {
                m: 3,
                eps1: 5.0,
                eps2: 5.0,
            },
        )
        .unwrap();
        assert_eq!(clamped, figure2(&env));
    }

    #[test]
    fn family_m5_matches_figure3_at_matched_exit() {
        let env = env07();
        let c = (0.7f64 * 0.3).powf(1.5);
        for eps in [0.1, 0.5] {
            let params = FamilyParams {
                m: 5,
                eps1: eps / c,
                eps2: eps / c,
            };
            let built = build_family(&env, &params).unwrap();
            let mut reference = figure3(&env, eps);
            // The family starts at the bottom transient state rather than
            // the middle; align before comparing.
            reference.set_initial(vec![0.0, 1.0, 0.0, 0.0, 0.0]);
            for i in 0..5 {
                for s in 0..2 {
                    for j in 0..5 {
                        assert!(
                            (built.trans_prob(i, s, j) - reference.trans_prob(i, s, j)).abs()
                                <= 1e-15,
                            "f({i},{s})({j})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn family_members_are_valid_and_parsimonious() {
        let env = env07();
        for m in [3, 4, 5, 7] {
            for eps in [1.0, 0.01] {
                let proto = build_family(
                    &env,
                    &FamilyParams {
                        m,
                        eps1: eps,
                        eps2: eps,
                    },
                )
                .unwrap();
                assert!(validate(&env, &proto).is_ok(), "m={m} eps={eps}");
                let class = classify_states(&proto);
                assert_eq!(
                    class.absorbing,
                    std::collections::BTreeSet::from([0, m - 1])
                );
                assert_eq!(class.transient.len(), m - 2);
                assert!(shape(&proto).is_parsimonious);
            }
        }
    }

    #[test]
    fn family_rejects_oversized_exits() {
        let env = env07();
        let err = build_family(
            &env,
            &FamilyParams {
                m: 5,
                eps1: 1e4,
                eps2: 1.0,
            },
        );
        assert!(matches!(err, Err(FamilyError::ParamOutOfRange(_))));
        let err = build_family(
            &env,
            &FamilyParams {
                m: 5,
                eps1: 1.0,
                eps2: 0.0,
            },
        );
        assert!(matches!(err, Err(FamilyError::ParamOutOfRange(_))));
    }

    #[test]
    fn weight_ratio_symmetric_prior_is_one() {
        let env = env07();
        for m in [3, 5, 9] {
            assert!((optimal_weight_ratio(&env, m).unwrap() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn weight_ratio_asymmetric_value_and_grid_check() {
        // p = 0.6, binary accuracy 0.7, four states.
        let sm = crate::model::SignalModel::symmetric_binary(0.7).unwrap();
        let env = Environment::new(0.6, sm).unwrap();
        let r = optimal_weight_ratio(&env, 4).unwrap();
        assert!((r - 1.343_236_719_293_041).abs() <= 1e-12, "ratio {r}");

        // Grid search over the limiting payoff confirms the maximizer.
        let sqrt_g = log_budget(&env, 4).exp().sqrt();
        let p = 0.6;
        let payoff = |rr: f64| {
            p * rr * sqrt_g / (1.0 + rr * sqrt_g) + (1.0 - p) * (sqrt_g / rr) / (1.0 + sqrt_g / rr)
        };
        let mut best = (0.0, f64::NEG_INFINITY);
        let mut rr = 0.5;
        while rr <= 3.0 {
            let v = payoff(rr);
            if v > best.1 {
                best = (rr, v);
            }
            rr += 1e-4;
        }
        assert!((best.0 - r).abs() <= 1e-3, "grid {} vs formula {r}", best.0);
        assert!(payoff(r) >= best.1 - 1e-10);
    }

    #[test]
    fn weight_ratio_regime_error() {
        let sm = crate::model::SignalModel::symmetric_binary(0.7).unwrap();
        let env = Environment::new(0.9, sm).unwrap();
        // gamma = 49/9 < kappa = 9: m = 3 is in the prior regime.
        assert!(matches!(
            optimal_weight_ratio(&env, 3),
            Err(FamilyError::RegimeError { .. })
        ));
    }

    #[test]
    fn sweep_symmetric_converges_and_is_monotone() {
        let env = env07();
        let grid = geometric_grid(1.0, 1e-4, 10.0);
        let result = sweep(&env, 5, &grid).unwrap();
        assert_eq!(result.rows.len(), 5);
        assert!((result.receiver_target - 0.343 / 0.37).abs() <= 1e-12);
        assert!(result.final_gap() <= 1e-3, "gap {}", result.final_gap());
        let mut prev = f64::NEG_INFINITY;
        for row in &result.rows {
            assert!(
                row.u_receiver >= prev - 1e-12,
                "not monotone at eps {}",
                row.eps
            );
            prev = row.u_receiver;
            // The spread inequality holds strictly along the family.
            assert!(row.spread_lhs <= row.spread_rhs + 1e-10, "eps {}", row.eps);
            assert!(row.spread_lhs < row.spread_rhs, "eps {}", row.eps);
        }
        // Sender payoffs approach 1/2 in the symmetric case.
        assert!((result.rows.last().unwrap().u_sender - 0.5).abs() <= 1e-3);
        // The deterministic member matches its closed-form payoff.
        assert!((result.rows[0].u_receiver - 0.904_911_049_448_2).abs() <= 1e-10);
    }

    #[test]
    fn sweep_limit_of_high_absorption() {
        let env = env07();
        let result = sweep(&env, 5, &[1e-6]).unwrap();
        let row = &result.rows[0];
        assert!(
            (row.mu_hi_h - result.mu_hi_limit).abs() <= 1e-3,
            "mu {} vs limit {}",
            row.mu_hi_h,
            result.mu_hi_limit
        );
        // Spread inequality strict along the family.
        assert!(row.spread_lhs < row.spread_rhs);
        // Entry metrics are exactly one by construction.
        assert_eq!(row.entry_lo, 1.0);
        assert_eq!(row.entry_hi, 1.0);
    }

    #[test]
    fn sweep_m3_single_exact_row() {
        let env = env07();
        let result = sweep(&env, 3, &geometric_grid(1.0, 1e-6, 10.0)).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert!(result.final_gap() <= 1e-12, "gap {}", result.final_gap());
        assert!((result.rows[0].u_receiver - 0.7).abs() <= 1e-12);
    }

    #[test]
    fn csv_output_is_deterministic() {
        let env = env07();
        let result = sweep(&env, 4, &[0.1, 0.01]).unwrap();
        let mut a = Vec::new();
        result.write_csv(&mut a, "test-config seed=1").unwrap();
        let mut b = Vec::new();
        result.write_csv(&mut b, "test-config seed=1").unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("# test-config seed=1\n"));
        assert!(text.contains("eps,u_receiver,u_sender,mu_mH,mu_1L"));
    }

    #[test]
    fn figure1_structure() {
        let env = env07();
        let proto = figure1(&env);
        assert!(validate(&env, &proto).is_ok());
        let class = classify_states(&proto);
        assert!(class.absorbing.is_empty());
        assert_eq!(class.recurrent_classes.len(), 1);
    }
}
