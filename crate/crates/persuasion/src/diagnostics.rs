//! Behavioral diagnostics of parsimonious protocols.
//!
//! Near-optimal parsimonious protocols show a characteristic transition
//! pattern: absorption happens almost exclusively from the two "adjacent"
//! transient states on the extreme signals, the per-step probability of
//! absorbing vanishes, crossing flows between low and high transient states
//! concentrate on the states bracketing each cut with likelihood ratios
//! tending to the extremes, and the high-absorption probability under the
//! high state approaches the relaxed-program optimum. This module computes
//! these metrics exactly from the chain; Monte Carlo enters only as a test
//! oracle.
//!
//! Throughout, transient states are ranked by their hitting-frequency
//! likelihood ratios `nu_i^H / nu_i^L`; ties are broken by state label and
//! reported, since the ranking premise excludes persistent ties.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::best_response::SenderStrategy;
use crate::chain::{absorption, ChainError};
use crate::model::{shape, Environment, PerTheta, Protocol, Theta};
use crate::payoffs::solve_relaxed;

/// Errors from the diagnostics.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum DiagError {
    /// The operation requires a parsimonious protocol.
    #[error("protocol shape unsuitable: {0}")]
    ShapeError(String),
    /// The conditioning event has probability zero.
    #[error("absorption target {target} has zero mass")]
    ZeroMass {
        /// 1-based label of the empty target.
        target: usize,
    },
    /// A structural precondition does not hold.
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    /// Underlying chain analysis failed.
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// The exact conditional law of the (state, signal) pair immediately
/// preceding absorption into a target state.
#[derive(Debug, Clone, Serialize)]
pub struct EntryDistribution {
    /// State of nature.
    pub theta: Theta,
    /// Absorbing target state.
    pub target: usize,
    /// Conditional probability of each (previous state, signal) pair.
    pub mass: BTreeMap<(usize, usize), f64>,
    /// Mass on the adjacent extreme pair: the transient state with the
    /// extremal hitting ratio together with the matching extreme signal.
    pub adjacent_extreme_mass: f64,
}

struct ParsimoniousView {
    lo: usize,
    hi: usize,
    m0: usize,
    /// All states of the protocol that are transient.
    transient: Vec<usize>,
    nu: PerTheta<Vec<f64>>,
    mu: PerTheta<Vec<f64>>,
    /// Transient states sorted by ascending `nu^H / nu^L` (ties by label).
    order: Vec<usize>,
    ties: Vec<(usize, usize)>,
}

fn parsimonious_view(env: &Environment, proto: &Protocol) -> Result<ParsimoniousView, DiagError> {
    let sh = shape(proto);
    if !sh.is_parsimonious {
        return Err(DiagError::ShapeError(
            "diagnostics require a parsimonious protocol".into(),
        ));
    }
    let (lo, hi) = (sh.lo_abs.unwrap(), sh.hi_abs.unwrap());
    let m0 = proto.initial_state().ok_or_else(|| {
        DiagError::PreconditionFailed("initial distribution must be degenerate".into())
    })?;
    if m0 == lo || m0 == hi {
        return Err(DiagError::PreconditionFailed(
            "start state must be transient".into(),
        ));
    }
    let sigma = SenderStrategy::continue_everywhere(proto.m());
    let mut nu = PerTheta {
        h: Vec::new(),
        l: Vec::new(),
    };
    let mut mu = PerTheta {
        h: Vec::new(),
        l: Vec::new(),
    };
    for &theta in &Theta::BOTH {
        let a = absorption(env, proto, &sigma, theta)?;
        if a.end_prob < 1.0 - 1e-9 {
            return Err(DiagError::PreconditionFailed(format!(
                "play must end almost surely; end probability is {} under {theta}",
                a.end_prob
            )));
        }
        nu[theta] = a.nu.clone().ok_or_else(|| {
            DiagError::PreconditionFailed("hitting frequencies unavailable".into())
        })?;
        mu[theta] = a.mu;
    }
    let transient: Vec<usize> = (0..proto.m()).filter(|&i| i != lo && i != hi).collect();
    let mut order = transient.clone();
    let ratio = |i: usize| -> f64 {
        if nu.l[i] > 0.0 {
            nu.h[i] / nu.l[i]
        } else {
            f64::INFINITY
        }
    };
    order.sort_by(|&a, &b| ratio(a).partial_cmp(&ratio(b)).unwrap().then(a.cmp(&b)));
    let mut ties = Vec::new();
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ra, rb) = (ratio(a), ratio(b));
        if (ra - rb).abs() <= 1e-9 * ra.abs().max(1.0) {
            ties.push((a, b));
        }
    }
    Ok(ParsimoniousView {
        lo,
        hi,
        m0,
        transient,
        nu,
        mu,
        order,
        ties,
    })
}

/// Computes the entry distribution into `target` by the one-step
/// decomposition: the chance of entering from `(i, s)` is proportional to
/// `nu_i * pi_theta(s) * f(i,s)(target)`.
pub fn entry_distribution(
    env: &Environment,
    proto: &Protocol,
    theta: Theta,
    target: usize,
) -> Result<EntryDistribution, DiagError> {
    let view = parsimonious_view(env, proto)?;
    if target != view.lo && target != view.hi {
        return Err(DiagError::PreconditionFailed(format!(
            "target {} is not an absorbing state",
            target + 1
        )));
    }
    entry_distribution_from_view(env, proto, &view, theta, target)
}

fn entry_distribution_from_view(
    env: &Environment,
    proto: &Protocol,
    view: &ParsimoniousView,
    theta: Theta,
    target: usize,
) -> Result<EntryDistribution, DiagError> {
    let nu = &view.nu[theta];
    let mut mass = BTreeMap::new();
    let mut total = 0.0;
    for &i in &view.transient {
        for s in 0..proto.n_signals() {
            let w = nu[i] * env.pi(theta, s) * proto.trans_prob(i, s, target);
            if w > 0.0 {
                mass.insert((i, s), w);
                total += w;
            }
        }
    }
    if total <= 0.0 {
        return Err(DiagError::ZeroMass { target: target + 1 });
    }
    for v in mass.values_mut() {
        *v /= total;
    }
    let adjacent = if target == view.lo {
        (*view.order.first().unwrap(), env.signal_model().l_signal())
    } else {
        (*view.order.last().unwrap(), env.signal_model().h_signal())
    };
    let adjacent_extreme_mass = mass.get(&adjacent).copied().unwrap_or(0.0);
    Ok(EntryDistribution {
        theta,
        target,
        mass,
        adjacent_extreme_mass,
    })
}

/// Largest one-step absorbing mass of a parsimonious protocol:
/// `max_{i transient, s} f(i,s)(lo) + f(i,s)(hi)`.
pub fn absorbing_transition_mass(proto: &Protocol) -> Result<f64, DiagError> {
    let sh = shape(proto);
    if !sh.is_parsimonious {
        return Err(DiagError::ShapeError(
            "absorbing transition mass is defined for parsimonious protocols".into(),
        ));
    }
    let (lo, hi) = (sh.lo_abs.unwrap(), sh.hi_abs.unwrap());
    let mut worst = 0.0f64;
    for i in 0..proto.m() {
        if i == lo || i == hi {
            continue;
        }
        for s in 0..proto.n_signals() {
            worst = worst.max(proto.trans_prob(i, s, lo) + proto.trans_prob(i, s, hi));
        }
    }
    Ok(worst)
}

/// Crossing-flow metrics at one cut of the ranked transient states.
///
/// `cut` splits the ranked order into positions `0..=cut` (low side) and
/// `cut+1..` (high side). Concentrations measure how much of the crossing
/// flow leaves from the state bracketing the cut; likelihood ratios compare
/// the bracketing state's crossing flow under the two states of nature.
#[derive(Debug, Clone, Serialize)]
pub struct MixingCut {
    /// Position of the cut in the ranked order.
    pub cut: usize,
    /// Share of upward crossings leaving from the top low-side state.
    pub up_concentration: PerTheta<f64>,
    /// Share of downward crossings leaving from the bottom high-side state.
    pub down_concentration: PerTheta<f64>,
    /// Likelihood ratio of the top low-side state's upward flow.
    pub up_likelihood_ratio: f64,
    /// Likelihood ratio of the bottom high-side state's downward flow.
    pub down_likelihood_ratio: f64,
}

/// The behavioral metrics of a parsimonious protocol under the
/// continue-everywhere best response.
#[derive(Debug, Clone, Serialize)]
pub struct BehaviorReport {
    /// Transient states ranked by ascending `nu^H / nu^L`.
    pub lr_order: Vec<usize>,
    /// Adjacent ranked states whose ratios tie (within relative `1e-9`).
    pub ties: Vec<(usize, usize)>,
    /// Entry concentration into the low absorber from (lowest-ratio state,
    /// extreme low signal), per state of nature.
    pub entry_lo: PerTheta<f64>,
    /// Entry concentration into the high absorber from (highest-ratio
    /// state, extreme high signal).
    pub entry_hi: PerTheta<f64>,
    /// Crossing-flow metrics for every interior cut of the ranking.
    pub mixing: Vec<MixingCut>,
    /// `|mu_hi^H - alpha*|`: distance of the high-state absorption
    /// probability from the relaxed-program optimum.
    pub bias_gap: f64,
    /// Largest one-step absorbing mass.
    pub max_abs_transition: f64,
    /// Hitting-ratio quotients of consecutive ranked states.
    pub consecutive_ratio_quotients: Vec<f64>,
}

/// Computes the full behavior report: entry concentrations, mixing
/// concentrations and likelihood ratios per cut, the bias gap, and the
/// absorbing transition mass.
pub fn behavior_metrics(env: &Environment, proto: &Protocol) -> Result<BehaviorReport, DiagError> {
    let view = parsimonious_view(env, proto)?;
    let entry_lo = PerTheta::<Result<f64, DiagError>>::build(|theta| {
        Ok(entry_distribution_from_view(env, proto, &view, theta, view.lo)?.adjacent_extreme_mass)
    });
    let entry_lo = PerTheta {
        h: entry_lo.h?,
        l: entry_lo.l?,
    };
    let entry_hi = PerTheta::<Result<f64, DiagError>>::build(|theta| {
        Ok(entry_distribution_from_view(env, proto, &view, theta, view.hi)?.adjacent_extreme_mass)
    });
    let entry_hi = PerTheta {
        h: entry_hi.h?,
        l: entry_hi.l?,
    };

    // Modified-chain transitions at signal resolution: absorbing exits are
    // redirected to the start state.
    let n = view.order.len();
    let g = |i: usize, s: usize, j: usize| -> f64 {
        let mut v = proto.trans_prob(i, s, j);
        if j == view.m0 {
            v += proto.trans_prob(i, s, view.lo) + proto.trans_prob(i, s, view.hi);
        }
        v
    };

    let mut mixing = Vec::new();
    for cut in 0..n.saturating_sub(1) {
        let low = &view.order[..=cut];
        let high = &view.order[cut + 1..];
        let top_low = view.order[cut];
        let bot_high = view.order[cut + 1];

        let flow_up = |i: usize, theta: Theta| -> f64 {
            (0..proto.n_signals())
                .map(|s| env.pi(theta, s) * high.iter().map(|&j| g(i, s, j)).sum::<f64>())
                .sum()
        };
        let flow_down = |i: usize, theta: Theta| -> f64 {
            (0..proto.n_signals())
                .map(|s| env.pi(theta, s) * low.iter().map(|&j| g(i, s, j)).sum::<f64>())
                .sum()
        };

        let up_concentration = PerTheta::build(|theta| {
            let nu = &view.nu[theta];
            let num = nu[top_low] * flow_up(top_low, theta);
            let den: f64 = low.iter().map(|&i| nu[i] * flow_up(i, theta)).sum();
            if den > 0.0 {
                num / den
            } else {
                f64::NAN
            }
        });
        let down_concentration = PerTheta::build(|theta| {
            let nu = &view.nu[theta];
            let num = nu[bot_high] * flow_down(bot_high, theta);
            let den: f64 = high.iter().map(|&i| nu[i] * flow_down(i, theta)).sum();
            if den > 0.0 {
                num / den
            } else {
                f64::NAN
            }
        });
        let up_likelihood_ratio = {
            let (h, l) = (flow_up(top_low, Theta::H), flow_up(top_low, Theta::L));
            if l > 0.0 {
                h / l
            } else {
                f64::NAN
            }
        };
        let down_likelihood_ratio = {
            let (h, l) = (flow_down(bot_high, Theta::H), flow_down(bot_high, Theta::L));
            if l > 0.0 {
                h / l
            } else {
                f64::NAN
            }
        };
        mixing.push(MixingCut {
            cut,
            up_concentration,
            down_concentration,
            up_likelihood_ratio,
            down_likelihood_ratio,
        });
    }

    let alpha = solve_relaxed(env, proto.m()).alpha_star;
    let bias_gap = (view.mu.h[view.hi] - alpha).abs();
    let max_abs_transition = absorbing_transition_mass(proto)?;

    let ratio = |i: usize, theta: Theta| view.nu[theta][i];
    let consecutive_ratio_quotients = view
        .order
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            (ratio(b, Theta::H) * ratio(a, Theta::L)) / (ratio(b, Theta::L) * ratio(a, Theta::H))
        })
        .collect();

    Ok(BehaviorReport {
        lr_order: view.order,
        ties: view.ties,
        entry_lo,
        entry_hi,
        mixing,
        bias_gap,
        max_abs_transition,
        consecutive_ratio_quotients,
    })
}

/// The largest ratio spread of hitting frequencies between two transient
/// states: `max_{i,j} (nu_i^H nu_j^L) / (nu_i^L nu_j^H)` over states with
/// positive frequencies. For a parsimonious protocol with `m-2` transient
/// states this is bounded by `gamma^(m-3)`.
pub fn hitting_ratio_spread(env: &Environment, proto: &Protocol) -> Result<f64, DiagError> {
    let view = parsimonious_view(env, proto)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in &view.transient {
        let (h, l) = (view.nu.h[i], view.nu.l[i]);
        if h > 0.0 && l > 0.0 {
            let r = h / l;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(DiagError::PreconditionFailed(
            "no transient state has positive hitting frequency".into(),
        ));
    }
    Ok(hi / lo)
}

/// Empirical entry distribution from a simulation, for cross-checks: the
/// conditional law of (previous state, signal) given absorption at `target`.
pub fn empirical_entry_distribution(
    sim: &crate::chain::SimOutcome,
    target: usize,
) -> BTreeMap<(usize, usize), f64> {
    let total: u64 = sim
        .entry_counts
        .iter()
        .filter(|((t, _, _), _)| *t == target)
        .map(|(_, &c)| c)
        .sum();
    let mut out = BTreeMap::new();
    if total == 0 {
        return out;
    }
    for (&(t, i, s), &c) in &sim.entry_counts {
        if t == target {
            out.insert((i, s), c as f64 / total as f64);
        }
    }
    out
}
