//! Constructive reduction of arbitrary protocols to parsimonious form.
//!
//! The pipeline never lowers the receiver's payoff and never adds memory
//! states. It runs in two phases:
//!
//! 1. **To simple.** Create absorbing states inside recurrent classes (the
//!    sender is willing to stop at the class's best state), ensure a second
//!    absorbing state exists, and replicate any additional absorbing state
//!    by a lottery over the two extreme ones, deleting it. Each deletion
//!    shrinks the automaton, so this terminates.
//! 2. **To parsimonious.** Prune transient states where the best response
//!    stops under both states of nature, lower the actions of never-stop
//!    states to the low absorbing level, and symmetrize the remaining
//!    asymmetric stopping states by re-optimizing the action rule over them
//!    with a linear program whose constraints keep the current best response
//!    optimal. At an optimal vertex either a box constraint or a
//!    best-response constraint binds; each case removes a state or shrinks
//!    the asymmetric set. Finally the two-level action rule is rescaled to
//!    `{0,1}`, falling back to the trivial prior protocol when that one is
//!    better.
//!
//! The driver recomputes the canonical best response whenever the state
//! space changes and otherwise carries the strategy through the rewrites,
//! which keeps the progress measure `(states, asymmetric set)` strictly
//! decreasing.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::best_response::{best_response, SenderStrategy, SolveError};
use crate::chain::{absorption, ChainError};
use crate::model::{classify_states, shape, Environment, PerTheta, Protocol, Theta};
use crate::payoffs::{evaluate, PayoffError};

/// Numerical slack when checking which linear-program constraint binds.
const BIND_TOL: f64 = 1e-7;

/// Errors from the reduction pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ReduceError {
    /// Reduction needs at least two memory states.
    #[error("reduction requires at least 2 memory states, got {0}")]
    Unsupported(usize),
    /// `merge_absorbing` needs an absorbing state strictly between the
    /// extremes.
    #[error("no intermediate absorbing state to merge")]
    NoIntermediate,
    /// Stopping solver failed.
    #[error(transparent)]
    Solve(#[from] SolveError),
    /// Chain analysis failed.
    #[error(transparent)]
    Chain(#[from] ChainError),
    /// Payoff evaluation failed.
    #[error(transparent)]
    Payoff(PayoffError),
    /// An internal invariant broke; this indicates a bug, not bad input.
    #[error("internal reduction error: {0}")]
    Internal(String),
}

impl From<PayoffError> for ReduceError {
    fn from(e: PayoffError) -> Self {
        match e {
            PayoffError::Chain(c) => ReduceError::Chain(c),
            other => ReduceError::Internal(other.to_string()),
        }
    }
}

/// Kind of a recorded reduction step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepKind {
    /// A state inside a recurrent class was made absorbing.
    MakeAbsorbing,
    /// A second absorbing state was created from the best transient state.
    SecondAbsorbing,
    /// The whole protocol was replaced by the two-state prior protocol.
    PriorFallback,
    /// An intermediate absorbing state was replicated by the extremes and
    /// deleted.
    MergeAbsorbing,
    /// A transient state where the sender stopped under both states of
    /// nature was absorbed and merged away.
    PruneStopBoth,
    /// Actions at never-stop transient states were lowered to the low
    /// absorbing level.
    LowerNeverStop,
    /// A linear-program pass re-optimized the asymmetric actions and shrank
    /// the asymmetric stopping set.
    LpSymmetrize,
    /// The two-level action rule was rescaled to 0/1.
    RescaleActions,
}

/// One recorded step of a reduction.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionStep {
    /// What happened.
    pub kind: StepKind,
    /// Human-readable certificate data (states touched, lottery weights,
    /// binding constraints), with 1-based state labels.
    pub detail: String,
    /// State count before the step.
    pub states_before: usize,
    /// State count after the step.
    pub states_after: usize,
    /// Receiver payoff before the step (under a best response).
    pub ur_before: f64,
    /// Receiver payoff after the step.
    pub ur_after: f64,
}

/// Ordered log of a reduction run.
#[derive(Debug, Clone, Serialize)]
pub struct ReductionTrace {
    /// Steps in application order.
    pub steps: Vec<ReductionStep>,
    /// Receiver payoff of the input protocol.
    pub ur_initial: f64,
    /// Receiver payoff of the output protocol.
    pub ur_final: f64,
}

impl ReductionTrace {
    fn new(ur_initial: f64) -> Self {
        ReductionTrace {
            steps: Vec::new(),
            ur_initial,
            ur_final: ur_initial,
        }
    }

    /// Smallest payoff improvement across steps (negative values mean a
    /// step lost payoff beyond numerical noise).
    pub fn worst_step_gain(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.ur_after - s.ur_before)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Receiver payoff of `proto` under the canonical best response.
fn receiver_payoff(env: &Environment, proto: &Protocol) -> Result<f64, ReduceError> {
    let (_, sigma) = best_response(env, proto)?;
    Ok(evaluate(env, proto, &sigma)?.u_receiver)
}

/// Makes state `i` absorbing, leaving everything else unchanged. Payoffs
/// are preserved when some best response stops at `i` under both states of
/// nature (the use made of it by the pipeline).
pub fn make_state_absorbing(proto: &Protocol, i: usize) -> Protocol {
    proto.with_state_absorbing(i)
}

/// Extreme absorbing states by (action, label) order.
fn absorbing_extremes(proto: &Protocol, absorbing: &BTreeSet<usize>) -> (usize, usize) {
    let key = |&i: &usize| (proto.action(i), i);
    let lo = *absorbing
        .iter()
        .min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
        .unwrap();
    let hi = *absorbing
        .iter()
        .max_by(|a, b| key(a).partial_cmp(&key(b)).unwrap())
        .unwrap();
    (lo, hi)
}

/// Replicates the absorbing state `k` by a lottery over the two extreme
/// absorbing states and deletes it. Inflows and initial mass move to the
/// high extreme with weight `rho = (a(k) - a_lo)/(a_hi - a_lo)` and to the
/// low extreme with the complement, so reaching the lottery yields the same
/// action distribution as reaching `k` did; both players' payoffs are
/// preserved exactly.
pub fn merge_absorbing(proto: &Protocol, k: usize) -> Result<Protocol, ReduceError> {
    let class = classify_states(proto);
    if class.absorbing.len() < 3 || !class.absorbing.contains(&k) {
        return Err(ReduceError::NoIntermediate);
    }
    let (lo, hi) = absorbing_extremes(proto, &class.absorbing);
    if k == lo || k == hi {
        return Err(ReduceError::NoIntermediate);
    }
    Ok(merge_into_extremes(proto, k, lo, hi))
}

fn merge_into_extremes(proto: &Protocol, k: usize, lo: usize, hi: usize) -> Protocol {
    let (a_lo, a_hi) = (proto.action(lo), proto.action(hi));
    let rho = if a_hi > a_lo {
        (proto.action(k) - a_lo) / (a_hi - a_lo)
    } else {
        0.5
    };
    let mut redirected = proto.clone();
    for j in 0..proto.m() {
        if j == k {
            continue;
        }
        for s in 0..proto.n_signals() {
            let inflow = proto.trans_prob(j, s, k);
            if inflow > 0.0 {
                let row = redirected.transition_mut(j, s);
                row[k] = 0.0;
                row[hi] += rho * inflow;
                row[lo] += (1.0 - rho) * inflow;
            }
        }
    }
    let mut g = proto.initial().to_vec();
    let mass = g[k];
    if mass > 0.0 {
        g[k] = 0.0;
        g[hi] += rho * mass;
        g[lo] += (1.0 - rho) * mass;
    }
    redirected.set_initial(g);
    redirected.without_state(k)
}

/// The two-state parsimonious protocol that acts on the prior: start at the
/// absorbing state matching the more likely state of nature.
fn prior_protocol(env: &Environment, n_signals: usize) -> Protocol {
    let mut proto = Protocol::zeroed(2, n_signals);
    for s in 0..n_signals {
        proto.transition_mut(0, s)[0] = 1.0;
        proto.transition_mut(1, s)[1] = 1.0;
    }
    proto.set_action(1, 1.0);
    let start = if env.prior() <= 0.5 { 0 } else { 1 };
    let mut g = vec![0.0; 2];
    g[start] = 1.0;
    proto.set_initial(g);
    proto
}

/// Argmax of the action rule over a set, ties broken by the lowest label.
fn argmax_action(proto: &Protocol, states: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in states {
        match best {
            None => best = Some(i),
            Some(b) if proto.action(i) > proto.action(b) => best = Some(i),
            _ => {}
        }
    }
    best
}

fn record(
    env: &Environment,
    trace: &mut ReductionTrace,
    kind: StepKind,
    detail: String,
    before: &Protocol,
    ur_before: f64,
    after: &Protocol,
) -> Result<f64, ReduceError> {
    let ur_after = receiver_payoff(env, after)?;
    trace.steps.push(ReductionStep {
        kind,
        detail,
        states_before: before.m(),
        states_after: after.m(),
        ur_before,
        ur_after,
    });
    trace.ur_final = ur_after;
    Ok(ur_after)
}

/// Transforms a protocol into a simple one (two absorbing states, all other
/// states transient) with at most as many states and weakly higher receiver
/// payoff.
pub fn to_simple(
    env: &Environment,
    proto: &Protocol,
) -> Result<(Protocol, ReductionTrace), ReduceError> {
    if proto.m() < 2 {
        return Err(ReduceError::Unsupported(proto.m()));
    }
    let mut trace = ReductionTrace::new(receiver_payoff(env, proto)?);
    let mut current = proto.clone();
    let mut ur = trace.ur_initial;
    to_simple_inner(env, &mut current, &mut trace, &mut ur)?;
    Ok((current, trace))
}

fn to_simple_inner(
    env: &Environment,
    current: &mut Protocol,
    trace: &mut ReductionTrace,
    ur: &mut f64,
) -> Result<(), ReduceError> {
    // Each pass either raises the absorbing count at fixed state count or
    // deletes a state, so (m, m - absorbing) decreases lexicographically.
    let cap = 4 * current.m() * (current.m() + 2) + 16;
    for _ in 0..cap {
        let class = classify_states(current);
        let n_abs = class.absorbing.len();
        match n_abs {
            0 => {
                let cls = class
                    .recurrent_classes
                    .first()
                    .ok_or_else(|| {
                        ReduceError::Internal("no absorbing state and no recurrent class".into())
                    })?
                    .clone();
                let target = argmax_action(current, cls.iter().copied()).unwrap();
                let next = make_state_absorbing(current, target);
                let detail = format!(
                    "state {} (best action {} in its recurrent class) made absorbing",
                    target + 1,
                    current.action(target)
                );
                *ur = record(
                    env,
                    trace,
                    StepKind::MakeAbsorbing,
                    detail,
                    current,
                    *ur,
                    &next,
                )?;
                *current = next;
            }
            1 => {
                let abs_state = *class.absorbing.iter().next().unwrap();
                if let Some(cls) = class.recurrent_classes.first() {
                    let target = argmax_action(current, cls.iter().copied()).unwrap();
                    let next = make_state_absorbing(current, target);
                    let detail = format!(
                        "state {} made absorbing inside a second recurrent class",
                        target + 1
                    );
                    *ur = record(
                        env,
                        trace,
                        StepKind::MakeAbsorbing,
                        detail,
                        current,
                        *ur,
                        &next,
                    )?;
                    *current = next;
                } else {
                    let best_other =
                        argmax_action(current, (0..current.m()).filter(|&i| i != abs_state));
                    match best_other {
                        Some(t) if current.action(t) > current.action(abs_state) => {
                            let next = make_state_absorbing(current, t);
                            let detail = format!(
                                "transient state {} (action {} above the absorbing level) \
                                 made absorbing",
                                t + 1,
                                current.action(t)
                            );
                            *ur = record(
                                env,
                                trace,
                                StepKind::SecondAbsorbing,
                                detail,
                                current,
                                *ur,
                                &next,
                            )?;
                            *current = next;
                        }
                        _ => {
                            // Every path ends at the single absorbing state:
                            // no learning happens, and acting on the prior is
                            // weakly better.
                            let next = prior_protocol(env, current.n_signals());
                            let detail = "no state beats the absorbing action; replaced by \
                                          the two-state prior protocol"
                                .to_string();
                            *ur = record(
                                env,
                                trace,
                                StepKind::PriorFallback,
                                detail,
                                current,
                                *ur,
                                &next,
                            )?;
                            *current = next;
                            return Ok(());
                        }
                    }
                }
            }
            2 => {
                if let Some(cls) = class.recurrent_classes.first() {
                    let target = argmax_action(current, cls.iter().copied()).unwrap();
                    let next = make_state_absorbing(current, target);
                    let detail = format!(
                        "state {} made absorbing inside a recurrent class",
                        target + 1
                    );
                    *ur = record(
                        env,
                        trace,
                        StepKind::MakeAbsorbing,
                        detail,
                        current,
                        *ur,
                        &next,
                    )?;
                    *current = next;
                } else {
                    return Ok(()); // simple
                }
            }
            _ => {
                let (lo, hi) = absorbing_extremes(current, &class.absorbing);
                let k = *class
                    .absorbing
                    .iter()
                    .find(|&&i| i != lo && i != hi)
                    .unwrap();
                let next = merge_into_extremes(current, k, lo, hi);
                let (a_lo, a_hi) = (current.action(lo), current.action(hi));
                let rho = if a_hi > a_lo {
                    (current.action(k) - a_lo) / (a_hi - a_lo)
                } else {
                    0.5
                };
                let detail = format!(
                    "absorbing state {} replicated by {} -> {:.6} high / {:.6} low and deleted",
                    k + 1,
                    format_extremes(lo, hi),
                    rho,
                    1.0 - rho
                );
                *ur = record(
                    env,
                    trace,
                    StepKind::MergeAbsorbing,
                    detail,
                    current,
                    *ur,
                    &next,
                )?;
                *current = next;
            }
        }
    }
    Err(ReduceError::Internal(
        "simple-reduction loop exceeded its iteration bound".into(),
    ))
}

fn format_extremes(lo: usize, hi: usize) -> String {
    format!("extremes ({}, {})", lo + 1, hi + 1)
}

// ---------------------------------------------------------------------------
// Stopping-set symmetrization
// ---------------------------------------------------------------------------

/// Affine representation `value = constant + coefs . x` over the asymmetric
/// action variables.
#[derive(Clone)]
struct Affine {
    constant: f64,
    coefs: Vec<f64>,
}

impl Affine {
    fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coefs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Per-theta affine value function of the carried strategy as the actions
/// on `vars` vary.
fn affine_values(
    env: &Environment,
    proto: &Protocol,
    sigma: &SenderStrategy,
    vars: &[usize],
    theta: Theta,
) -> Result<Vec<Affine>, ReduceError> {
    use nalgebra::{DMatrix, DVector};
    let m = proto.m();
    let p = crate::best_response::aggregate_matrix(env, proto, theta);
    let terminal: Vec<bool> = (0..m)
        .map(|i| sigma.stops(i, theta) || proto.is_absorbing_state(i))
        .collect();
    let cont: Vec<usize> = (0..m).filter(|&i| !terminal[i]).collect();
    let var_pos = |i: usize| vars.iter().position(|&v| v == i);

    let mut values: Vec<Affine> = (0..m)
        .map(|_| Affine {
            constant: 0.0,
            coefs: vec![0.0; vars.len()],
        })
        .collect();
    for i in 0..m {
        if terminal[i] {
            match var_pos(i) {
                Some(d) => values[i].coefs[d] = 1.0,
                None => values[i].constant = proto.action(i),
            }
        }
    }
    if !cont.is_empty() {
        let n = cont.len();
        let mut system = DMatrix::zeros(n, n);
        for (r, &i) in cont.iter().enumerate() {
            for (c, &j) in cont.iter().enumerate() {
                system[(r, c)] = if r == c { 1.0 - p[(i, j)] } else { -p[(i, j)] };
            }
        }
        // One right-hand side for the constant part and one per variable.
        let mut rhs = Vec::with_capacity(vars.len() + 1);
        rhs.push(DVector::from_iterator(
            n,
            cont.iter().map(|&i| {
                (0..m)
                    .filter(|&j| terminal[j] && var_pos(j).is_none())
                    .map(|j| p[(i, j)] * proto.action(j))
                    .sum::<f64>()
            }),
        ));
        for &v in vars {
            rhs.push(DVector::from_iterator(
                n,
                cont.iter()
                    .map(|&i| if terminal[v] { p[(i, v)] } else { 0.0 }),
            ));
        }
        let sols = crate::linalg::solve_many(&system, &rhs).ok_or_else(|| {
            ReduceError::Internal("singular continuation system in symmetrization".into())
        })?;
        for (r, &i) in cont.iter().enumerate() {
            values[i].constant = sols[0][r];
            for d in 0..vars.len() {
                values[i].coefs[d] = sols[d + 1][r];
            }
        }
    }
    Ok(values)
}

/// What a symmetrization pass did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LpOutcome {
    /// The asymmetric stopping set was already empty.
    Identity,
    /// The strategy now continues at the state under both states of nature;
    /// the asymmetric set shrank.
    ContinueAt {
        /// 1-based label of the state.
        state: usize,
    },
    /// The state was made absorbing and an intermediate absorbing state was
    /// merged away; the state count shrank.
    Absorbed {
        /// 1-based label of the state that became absorbing.
        state: usize,
        /// 1-based label of the deleted state (pre-deletion labels).
        removed: usize,
    },
}

/// Result of one symmetrization pass.
#[derive(Debug, Clone)]
pub struct LpPass {
    /// The adjusted protocol.
    pub protocol: Protocol,
    /// The adjusted strategy (still a best response).
    pub sigma: SenderStrategy,
    /// Which case fired.
    pub outcome: LpOutcome,
    /// Binding-constraint description for the trace.
    pub detail: String,
}

/// One pass of the stopping-set symmetrization: re-optimize the actions on
/// the asymmetric stopping states by a linear program subject to keeping
/// `sigma` a best response, move to an optimal vertex, and apply the binding
/// case. Requires a simple protocol and a best response with no transient
/// state stopping under both states of nature.
pub fn lp_symmetrize(
    env: &Environment,
    proto: &Protocol,
    sigma: &SenderStrategy,
) -> Result<LpPass, ReduceError> {
    let sh = shape(proto);
    if !sh.is_simple {
        return Err(ReduceError::Internal(
            "lp_symmetrize requires a simple protocol".into(),
        ));
    }
    let (lo, hi) = (sh.lo_abs.unwrap(), sh.hi_abs.unwrap());
    let (a_lo, a_hi) = (proto.action(lo), proto.action(hi));
    let vars: Vec<usize> = sigma
        .asymmetric_states()
        .into_iter()
        .filter(|&i| i != lo && i != hi)
        .collect();
    if vars.is_empty() {
        return Ok(LpPass {
            protocol: proto.clone(),
            sigma: sigma.clone(),
            outcome: LpOutcome::Identity,
            detail: "asymmetric stopping set empty".into(),
        });
    }

    // End-state distributions fix the objective coefficients: the play's
    // stopping probabilities do not depend on the action rule.
    let mu = PerTheta::<Result<Vec<f64>, ChainError>>::build(|theta| {
        Ok(absorption(env, proto, sigma, theta)?.mu)
    });
    let mu = PerTheta { h: mu.h?, l: mu.l? };
    let p_prior = env.prior();
    let mut objective = vec![0.0; vars.len()];
    for (d, &i) in vars.iter().enumerate() {
        if sigma.stops(i, Theta::H) {
            objective[d] += p_prior * mu.h[i];
        }
        if sigma.stops(i, Theta::L) {
            objective[d] -= (1.0 - p_prior) * mu.l[i];
        }
    }

    // Best-response rows: at stop states the action beats the continuation
    // value, at continue states the reverse.
    let values = PerTheta {
        h: affine_values(env, proto, sigma, &vars, Theta::H)?,
        l: affine_values(env, proto, sigma, &vars, Theta::L)?,
    };
    let mut rows: Vec<(usize, Theta, Affine)> = Vec::new();
    for &theta in &Theta::BOTH {
        let p = crate::best_response::aggregate_matrix(env, proto, theta);
        for i in 0..proto.m() {
            if proto.is_absorbing_state(i) {
                continue;
            }
            let mut cont = Affine {
                constant: 0.0,
                coefs: vec![0.0; vars.len()],
            };
            for j in 0..proto.m() {
                let w = p[(i, j)];
                if w == 0.0 {
                    continue;
                }
                cont.constant += w * values[theta][j].constant;
                for d in 0..vars.len() {
                    cont.coefs[d] += w * values[theta][j].coefs[d];
                }
            }
            // row = action(i) - cont  (>= 0 at stop states, <= 0 otherwise)
            let mut row = Affine {
                constant: -cont.constant,
                coefs: cont.coefs.iter().map(|c| -c).collect(),
            };
            match vars.iter().position(|&v| v == i) {
                Some(d) => row.coefs[d] += 1.0,
                None => row.constant += proto.action(i),
            }
            if !sigma.stops(i, theta) {
                row.constant = -row.constant;
                for c in &mut row.coefs {
                    *c = -*c;
                }
            }
            if row.coefs.iter().any(|c| c.abs() > 1e-12) {
                rows.push((i, theta, row));
            }
        }
    }

    // Solve the linear program.
    let mut problem = minilp::Problem::new(minilp::OptimizationDirection::Maximize);
    let lp_vars: Vec<minilp::Variable> = objective
        .iter()
        .map(|&c| problem.add_var(c, (a_lo, a_hi)))
        .collect();
    for (_, _, row) in &rows {
        let terms: Vec<(minilp::Variable, f64)> = lp_vars
            .iter()
            .zip(&row.coefs)
            .filter(|(_, &c)| c.abs() > 1e-12)
            .map(|(&v, &c)| (v, c))
            .collect();
        problem.add_constraint(&terms, minilp::ComparisonOp::Ge, -row.constant);
    }
    let solution = problem
        .solve()
        .map_err(|e| ReduceError::Internal(format!("symmetrization program failed: {e}")))?;
    let x: Vec<f64> = lp_vars
        .iter()
        .map(|&v| solution[v].clamp(a_lo, a_hi))
        .collect();

    // Adopt the optimized actions.
    let mut adjusted = proto.clone();
    for (d, &i) in vars.iter().enumerate() {
        adjusted.set_action(i, x[d]);
    }

    // Case analysis at the vertex, lowest state label first.
    let span = (a_hi - a_lo).max(1.0);
    for (d, &i) in vars.iter().enumerate() {
        if x[d] - a_lo <= BIND_TOL * span {
            return apply_continue_case(
                env,
                adjusted,
                sigma,
                i,
                a_lo,
                format!("action at state {} pinned to the low level", i + 1),
            );
        }
        if a_hi - x[d] <= BIND_TOL * span {
            return apply_stop_case(
                adjusted,
                sigma,
                i,
                format!("action at state {} pinned to the high level", i + 1),
            );
        }
    }
    for &i in &vars {
        for (ri, theta, row) in &rows {
            if *ri != i || row.eval(&x).abs() > BIND_TOL {
                continue;
            }
            // Indifferent at (i, theta): align the stopping decision
            // across states of nature.
            let target = sigma.stops(i, theta.other());
            let detail = format!(
                "indifference at state {} under {theta}; stopping aligned to {}",
                i + 1,
                if target { "stop" } else { "continue" }
            );
            return if target {
                apply_stop_case(adjusted, sigma, i, detail)
            } else {
                apply_continue_case(env, adjusted, sigma, i, a_lo, detail)
            };
        }
    }
    // Degenerate escape: an asymmetric state that the play never stops in
    // has a payoff-irrelevant action; continue there.
    for &i in &vars {
        let stops_h = sigma.stops(i, Theta::H);
        let w = if stops_h { mu.h[i] } else { mu.l[i] };
        if w <= 1e-14 {
            return apply_continue_case(
                env,
                adjusted,
                sigma,
                i,
                a_lo,
                format!("state {} never ends the play; stopping dropped", i + 1),
            );
        }
    }
    Err(ReduceError::Internal(
        "no binding constraint found at the symmetrization optimum".into(),
    ))
}

fn apply_continue_case(
    _env: &Environment,
    mut proto: Protocol,
    sigma: &SenderStrategy,
    state: usize,
    a_lo: f64,
    detail: String,
) -> Result<LpPass, ReduceError> {
    // The sender now continues at `state` under both states of nature, so
    // its action is payoff-irrelevant and drops to the low absorbing level.
    proto.set_action(state, a_lo);
    let mut sigma = sigma.clone();
    sigma.set(state, Theta::H, false);
    sigma.set(state, Theta::L, false);
    Ok(LpPass {
        protocol: proto,
        sigma,
        outcome: LpOutcome::ContinueAt { state: state + 1 },
        detail,
    })
}

fn apply_stop_case(
    proto: Protocol,
    sigma: &SenderStrategy,
    state: usize,
    detail: String,
) -> Result<LpPass, ReduceError> {
    // The sender now stops at `state` under both states of nature: make it
    // absorbing, then merge the intermediate absorbing state away.
    let absorbed = make_state_absorbing(&proto, state);
    let class = classify_states(&absorbed);
    let (lo, hi) = absorbing_extremes(&absorbed, &class.absorbing);
    let k = *class
        .absorbing
        .iter()
        .find(|&&i| i != lo && i != hi)
        .ok_or_else(|| ReduceError::Internal("three absorbing states expected".into()))?;
    let merged = merge_into_extremes(&absorbed, k, lo, hi);
    let mut sigma = sigma.clone();
    sigma.set(state, Theta::H, true);
    sigma.set(state, Theta::L, true);
    let sigma = sigma.without_state(k);
    Ok(LpPass {
        protocol: merged,
        sigma,
        outcome: LpOutcome::Absorbed {
            state: state + 1,
            removed: k + 1,
        },
        detail,
    })
}

// ---------------------------------------------------------------------------
// Full driver
// ---------------------------------------------------------------------------

/// Reduces a validated protocol to a parsimonious one with at most as many
/// states and weakly higher receiver payoff, returning the step trace.
///
/// The output is a fixed point: reapplying the reduction returns it
/// unchanged.
pub fn to_parsimonious(
    env: &Environment,
    proto: &Protocol,
) -> Result<(Protocol, ReductionTrace), ReduceError> {
    let (mut current, mut trace) = to_simple(env, proto)?;
    let mut ur = trace.ur_final;
    loop {
        current = symmetrize_and_rescale(env, current, &mut trace, &mut ur)?;
        // Converged once the canonical best response of the finished
        // artifact leaves nothing to prune; otherwise the rescale exposed a
        // stopping tie and another round (which shrinks the state space)
        // resolves it.
        let (_, sigma) = best_response(env, &current)?;
        let class = classify_states(&current);
        let has_stop_both = (0..current.m()).any(|i| {
            !class.absorbing.contains(&i) && sigma.stops(i, Theta::H) && sigma.stops(i, Theta::L)
        });
        if !has_stop_both {
            break;
        }
    }
    debug_assert!(shape(&current).is_parsimonious);
    Ok((current, trace))
}

/// Runs the prune / lower / symmetrize loop on a simple protocol and
/// rescales the resulting two-level action rule, recording every step.
fn symmetrize_and_rescale(
    env: &Environment,
    mut current: Protocol,
    trace: &mut ReductionTrace,
    ur: &mut f64,
) -> Result<Protocol, ReduceError> {
    let cap = 10 * current.m() * current.m() + 100;
    let mut passes = 0usize;
    'outer: loop {
        passes += 1;
        if passes > cap {
            return Err(ReduceError::Internal(
                "symmetrization loop exceeded its iteration bound".into(),
            ));
        }
        let class = classify_states(&current);
        let (lo, hi) = absorbing_extremes(&current, &class.absorbing);
        let (_, mut sigma) = best_response(env, &current)?;

        // Prune transient states where the best response stops under both
        // states of nature.
        let stop_both = (0..current.m())
            .find(|&i| i != lo && i != hi && sigma.stops(i, Theta::H) && sigma.stops(i, Theta::L));
        if let Some(t) = stop_both {
            let absorbed = make_state_absorbing(&current, t);
            let cls = classify_states(&absorbed);
            let (nlo, nhi) = absorbing_extremes(&absorbed, &cls.absorbing);
            let k = *cls
                .absorbing
                .iter()
                .find(|&&i| i != nlo && i != nhi)
                .ok_or_else(|| ReduceError::Internal("expected a third absorbing state".into()))?;
            let next = merge_into_extremes(&absorbed, k, nlo, nhi);
            let detail = format!(
                "sender stops at transient state {} under both states of nature; absorbed \
                 and state {} merged away",
                t + 1,
                k + 1
            );
            *ur = record(
                env,
                trace,
                StepKind::PruneStopBoth,
                detail,
                &current,
                *ur,
                &next,
            )?;
            current = next;
            continue 'outer;
        }

        // Lower never-stop transient actions to the low absorbing level.
        // This can create stopping ties, so the pass restarts afterwards to
        // let the pruning above see the recomputed best response.
        let a_lo = current.action(lo);
        let lowered: Vec<usize> = (0..current.m())
            .filter(|&i| {
                i != lo
                    && i != hi
                    && !sigma.stops(i, Theta::H)
                    && !sigma.stops(i, Theta::L)
                    && (current.action(i) - a_lo).abs() > 1e-15
            })
            .collect();
        if !lowered.is_empty() {
            let mut next = current.clone();
            for &i in &lowered {
                next.set_action(i, a_lo);
            }
            let detail = format!(
                "actions lowered to the low absorbing level at never-stop states {:?}",
                lowered.iter().map(|i| i + 1).collect::<Vec<_>>()
            );
            *ur = record(
                env,
                trace,
                StepKind::LowerNeverStop,
                detail,
                &current,
                *ur,
                &next,
            )?;
            current = next;
            continue 'outer;
        }

        // Symmetrize with the carried strategy until the state count
        // changes or the asymmetric set empties. The whole procedure has
        // converged once a pass empties the asymmetric set without touching
        // the protocol; any protocol change goes back through pruning.
        let mut protocol_changed = false;
        loop {
            if sigma
                .asymmetric_states()
                .iter()
                .all(|&i| i == lo || i == hi)
            {
                if protocol_changed {
                    continue 'outer;
                }
                break 'outer;
            }
            let before = current.clone();
            let pass = lp_symmetrize(env, &current, &sigma)?;
            let removed_state = matches!(pass.outcome, LpOutcome::Absorbed { .. });
            let detail = format!("{:?}: {}", pass.outcome, pass.detail);
            *ur = record(
                env,
                trace,
                StepKind::LpSymmetrize,
                detail,
                &current,
                *ur,
                &pass.protocol,
            )?;
            if pass.protocol != before {
                protocol_changed = true;
            }
            current = pass.protocol;
            sigma = pass.sigma;
            if removed_state {
                continue 'outer;
            }
        }
    }

    // Rescale the two-level action rule to {0, 1}, or fall back to the
    // prior protocol when acting on the prior is weakly better.
    let class = classify_states(&current);
    let (lo, hi) = absorbing_extremes(&current, &class.absorbing);
    let (a_lo, a_hi) = (current.action(lo), current.action(hi));
    let next = if a_hi - a_lo > 1e-12 {
        let mut rescaled = current.clone();
        for i in 0..current.m() {
            let a = ((current.action(i) - a_lo) / (a_hi - a_lo)).clamp(0.0, 1.0);
            rescaled.set_action(i, a);
        }
        let ur_rescaled = receiver_payoff(env, &rescaled)?;
        if ur_rescaled >= env.prior().max(1.0 - env.prior()) {
            rescaled
        } else {
            prior_protocol(env, current.n_signals())
        }
    } else {
        prior_protocol(env, current.n_signals())
    };
    let detail = if next.m() == current.m() {
        format!("actions rescaled affinely from [{a_lo}, {a_hi}] to {{0, 1}}")
    } else {
        "two-level rule dominated by acting on the prior; replaced".to_string()
    };
    *ur = record(
        env,
        trace,
        StepKind::RescaleActions,
        detail,
        &current,
        *ur,
        &next,
    )?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{figure1, figure2, figure3};

    fn env07() -> Environment {
        Environment::symmetric_binary(0.7).unwrap()
    }

    #[test]
    fn make_absorbing_is_identity_on_absorbing_states() {
        let env = env07();
        let proto = figure2(&env);
        let out = make_state_absorbing(&proto, 0);
        assert_eq!(out, proto);
    }

    #[test]
    fn make_absorbing_preserves_payoff_in_recurrent_class() {
        let env = env07();
        let proto = figure1(&env);
        let before = receiver_payoff(&env, &proto).unwrap();
        let after = receiver_payoff(&env, &make_state_absorbing(&proto, 2)).unwrap();
        assert!((before - after).abs() <= 1e-12);
    }

    #[test]
    fn merge_preserves_payoffs() {
        let env = env07();
        // 4 states: absorbing 1 (a=0), 3 (a=0.3), 4 (a=1); transient 2.
        let mut proto = Protocol::zeroed(4, 2);
        for s in 0..2 {
            for i in [0usize, 2, 3] {
                proto.transition_mut(i, s)[i] = 1.0;
            }
        }
        // state 2: h -> {4: 0.5, 3: 0.5}, l -> {1: 0.6, 3: 0.4}
        proto.set_transition(1, 0, vec![0.0, 0.0, 0.5, 0.5]);
        proto.set_transition(1, 1, vec![0.6, 0.0, 0.4, 0.0]);
        proto.set_initial(vec![0.0, 1.0, 0.0, 0.0]);
        proto.set_action(2, 0.3);
        proto.set_action(3, 1.0);

        let before_r = receiver_payoff(&env, &proto).unwrap();
        let (_, sigma) = best_response(&env, &proto).unwrap();
        let before_s = evaluate(&env, &proto, &sigma).unwrap().u_sender;

        let merged = merge_absorbing(&proto, 2).unwrap();
        assert_eq!(merged.m(), 3);
        let after_r = receiver_payoff(&env, &merged).unwrap();
        let (_, sigma2) = best_response(&env, &merged).unwrap();
        let after_s = evaluate(&env, &merged, &sigma2).unwrap().u_sender;

        assert!(
            (before_r - after_r).abs() <= 1e-12,
            "{before_r} vs {after_r}"
        );
        assert!((before_s - after_s).abs() <= 1e-12);
    }

    #[test]
    fn merge_with_extreme_action_routes_all_mass_high() {
        let env = env07();
        let mut proto = Protocol::zeroed(4, 2);
        for s in 0..2 {
            for i in [0usize, 2, 3] {
                proto.transition_mut(i, s)[i] = 1.0;
            }
        }
        proto.set_transition(1, 0, vec![0.0, 0.0, 1.0, 0.0]);
        proto.set_transition(1, 1, vec![1.0, 0.0, 0.0, 0.0]);
        proto.set_initial(vec![0.0, 1.0, 0.0, 0.0]);
        proto.set_action(2, 1.0); // ties the high extreme
        proto.set_action(3, 1.0);
        // The high extreme is the larger label among the tied states, so
        // state index 2 is the middle; rho = 1 routes its inflow high.
        let merged = merge_absorbing(&proto, 2).unwrap();
        assert_eq!(merged.m(), 3);
        assert!((merged.trans_prob(1, 0, 2) - 1.0).abs() <= 1e-15);
        let err = merge_absorbing(&figure2(&env), 0);
        assert!(matches!(err, Err(ReduceError::NoIntermediate)));
    }

    #[test]
    fn to_simple_figure1() {
        let env = env07();
        let (simple, trace) = to_simple(&env, &figure1(&env)).unwrap();
        assert!(shape(&simple).is_simple);
        assert!(simple.m() <= 3);
        assert!(trace.ur_final >= trace.ur_initial - 1e-9);
        assert!((trace.ur_initial - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn to_simple_identity_on_simple_protocols() {
        let env = env07();
        let proto = figure3(&env, 0.5);
        let (simple, trace) = to_simple(&env, &proto).unwrap();
        assert_eq!(simple, proto);
        assert!(trace.steps.is_empty());
    }

    #[test]
    fn to_parsimonious_figure2_identity() {
        let env = env07();
        let proto = figure2(&env);
        let (out, trace) = to_parsimonious(&env, &proto).unwrap();
        // Already parsimonious: only the (identity) rescale is recorded.
        assert_eq!(out, proto);
        assert!(trace.worst_step_gain() >= -1e-9);
    }

    #[test]
    fn to_parsimonious_figure1() {
        let env = env07();
        let (out, trace) = to_parsimonious(&env, &figure1(&env)).unwrap();
        assert!(shape(&out).is_parsimonious);
        assert!(out.m() <= 3);
        assert!(trace.ur_final >= 0.5 - 1e-12);
    }

    #[test]
    fn lp_pass_on_asymmetric_stop_state() {
        let env = env07();
        // Absorbing 1 (a=0.2) and 4 (a=0.8); state 3 reversed: h -> low,
        // l -> high, with action 0.6 so the sender stops only under H.
        let mut proto = Protocol::zeroed(4, 2);
        for s in 0..2 {
            proto.transition_mut(0, s)[0] = 1.0;
            proto.transition_mut(3, s)[3] = 1.0;
        }
        proto.set_transition(1, 0, vec![0.0, 0.0, 1.0, 0.0]);
        proto.set_transition(1, 1, vec![1.0, 0.0, 0.0, 0.0]);
        proto.set_transition(2, 0, vec![1.0, 0.0, 0.0, 0.0]);
        proto.set_transition(2, 1, vec![0.0, 0.0, 0.0, 1.0]);
        proto.set_initial(vec![0.0, 1.0, 0.0, 0.0]);
        proto.set_action(0, 0.2);
        proto.set_action(1, 0.2);
        proto.set_action(2, 0.6);
        proto.set_action(3, 0.8);

        let (_, sigma) = best_response(&env, &proto).unwrap();
        assert!(sigma.stops(2, Theta::H) && !sigma.stops(2, Theta::L));

        let before = evaluate(&env, &proto, &sigma).unwrap().u_receiver;
        let pass = lp_symmetrize(&env, &proto, &sigma).unwrap();
        assert!(!matches!(pass.outcome, LpOutcome::Identity));
        // Either a state was deleted or the asymmetric set shrank.
        match &pass.outcome {
            LpOutcome::Absorbed { .. } => assert_eq!(pass.protocol.m(), 3),
            LpOutcome::ContinueAt { .. } => {
                assert!(pass.sigma.asymmetric_states().is_empty())
            }
            LpOutcome::Identity => unreachable!(),
        }
        let after = evaluate(&env, &pass.protocol, &pass.sigma)
            .unwrap()
            .u_receiver;
        assert!(after >= before - 1e-9, "{after} vs {before}");
    }

    #[test]
    fn lp_identity_when_symmetric() {
        let env = env07();
        let proto = figure3(&env, 0.5);
        let (_, sigma) = best_response(&env, &proto).unwrap();
        let pass = lp_symmetrize(&env, &proto, &sigma).unwrap();
        assert_eq!(pass.outcome, LpOutcome::Identity);
    }

    #[test]
    fn full_reduction_of_asymmetric_protocol() {
        let env = env07();
        let mut proto = Protocol::zeroed(4, 2);
        for s in 0..2 {
            proto.transition_mut(0, s)[0] = 1.0;
            proto.transition_mut(3, s)[3] = 1.0;
        }
        proto.set_transition(1, 0, vec![0.0, 0.0, 1.0, 0.0]);
        proto.set_transition(1, 1, vec![1.0, 0.0, 0.0, 0.0]);
        proto.set_transition(2, 0, vec![1.0, 0.0, 0.0, 0.0]);
        proto.set_transition(2, 1, vec![0.0, 0.0, 0.0, 1.0]);
        proto.set_initial(vec![0.0, 1.0, 0.0, 0.0]);
        proto.set_action(0, 0.2);
        proto.set_action(1, 0.2);
        proto.set_action(2, 0.6);
        proto.set_action(3, 0.8);

        let ur_in = receiver_payoff(&env, &proto).unwrap();
        let (out, trace) = to_parsimonious(&env, &proto).unwrap();
        assert!(shape(&out).is_parsimonious);
        assert!(out.m() <= 4);
        assert!(trace.ur_final >= ur_in - 1e-9);
        assert!(trace.worst_step_gain() >= -1e-9);

        // Idempotence: a second run is the identity up to the recorded
        // rescale step.
        let (again, trace2) = to_parsimonious(&env, &out).unwrap();
        assert_eq!(again, out);
        assert!((trace2.ur_final - trace.ur_final).abs() <= 1e-9);
    }

    #[test]
    fn rejects_single_state() {
        let env = env07();
        let mut proto = Protocol::zeroed(1, 2);
        for s in 0..2 {
            proto.transition_mut(0, s)[0] = 1.0;
        }
        proto.set_initial(vec![1.0]);
        assert!(matches!(
            to_simple(&env, &proto),
            Err(ReduceError::Unsupported(1))
        ));
    }
}
