//! The sender's optimal stopping problem against a fixed protocol.
//!
//! For each state of nature the sender faces a finite-state stopping
//! problem: stop now and collect the current state's action probability, or
//! send another signal and let the memory state move. The value function is
//! the pointwise-least solution of
//!
//! ```text
//! V(i) = max( a(i), sum_s pi(s) sum_j f(i,s)(j) V(j) )
//! ```
//!
//! computed by monotone value iteration from `V = a`, with an exact
//! linear-system refinement once the candidate stop set stabilizes. The
//! stationary best response stops wherever `a(i)` weakly beats the
//! continuation value (ties stop).

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg;
use crate::model::{Environment, PerTheta, Protocol, Theta, STRUCTURAL_ZERO};

/// Sup-norm convergence threshold for value iteration.
pub const VALUE_TOL: f64 = 1e-12;

/// Indifference margin: the sender stops when the stopping payoff is within
/// this tolerance of the continuation value. Keeps exact ties (`a` constant,
/// all-zero actions) deterministic in floating point.
pub const TIE_TOL: f64 = 1e-12;

/// Hard cap on value-iteration sweeps.
pub const MAX_SWEEPS: usize = 1_000_000;

/// Consecutive sweeps the stop set must hold before the exact refinement is
/// attempted.
const STABLE_SWEEPS: usize = 100;

/// Largest automaton the enumeration oracle accepts (`2^m` stop sets).
pub const ORACLE_MAX_STATES: usize = 12;

/// Errors from the stopping solver.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    /// Value iteration did not converge within the sweep cap.
    #[error("value iteration hit the {cap}-sweep cap with residual {residual:e}")]
    IterationCapExceeded {
        /// The sweep cap that was reached.
        cap: usize,
        /// Sup-norm change at the last sweep.
        residual: f64,
    },
    /// The enumeration oracle refuses protocols above its size cap.
    #[error("enumeration oracle supports at most {max} states, got {m}")]
    TooLarge {
        /// States in the protocol.
        m: usize,
        /// The cap.
        max: usize,
    },
}

/// The solved value of the sender's stopping problem, per state of nature.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    v: PerTheta<Vec<f64>>,
}

impl ValueFunction {
    /// `V(i, theta)`.
    pub fn value(&self, state: usize, theta: Theta) -> f64 {
        self.v[theta][state]
    }

    /// The per-theta value vector.
    pub fn values(&self, theta: Theta) -> &[f64] {
        &self.v[theta]
    }

    /// Smallest value across states and states of nature.
    pub fn min(&self) -> f64 {
        Theta::BOTH
            .iter()
            .flat_map(|&t| self.v[t].iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// A stationary pure stop/continue rule for the sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenderStrategy {
    stop: PerTheta<Vec<bool>>,
}

impl SenderStrategy {
    /// Builds a strategy from explicit stop flags.
    pub fn from_stop_flags(stop_h: Vec<bool>, stop_l: Vec<bool>) -> Self {
        assert_eq!(stop_h.len(), stop_l.len());
        SenderStrategy {
            stop: PerTheta {
                h: stop_h,
                l: stop_l,
            },
        }
    }

    /// The strategy that never stops (used against parsimonious protocols,
    /// where continuing until absorption is a best response).
    pub fn continue_everywhere(m: usize) -> Self {
        SenderStrategy {
            stop: PerTheta {
                h: vec![false; m],
                l: vec![false; m],
            },
        }
    }

    /// The strategy that stops immediately in every state.
    pub fn stop_everywhere(m: usize) -> Self {
        SenderStrategy {
            stop: PerTheta {
                h: vec![true; m],
                l: vec![true; m],
            },
        }
    }

    /// Number of states the strategy is defined on.
    pub fn m(&self) -> usize {
        self.stop.h.len()
    }

    /// True when the sender stops in `state` under `theta`.
    pub fn stops(&self, state: usize, theta: Theta) -> bool {
        self.stop[theta][state]
    }

    pub(crate) fn set(&mut self, state: usize, theta: Theta, stop: bool) {
        self.stop[theta][state] = stop;
    }

    /// Restriction to the states kept after deleting `removed`.
    pub(crate) fn without_state(&self, removed: usize) -> Self {
        let strip = |v: &Vec<bool>| {
            v.iter()
                .enumerate()
                .filter(|&(i, _)| i != removed)
                .map(|(_, &b)| b)
                .collect::<Vec<bool>>()
        };
        SenderStrategy {
            stop: PerTheta {
                h: strip(&self.stop.h),
                l: strip(&self.stop.l),
            },
        }
    }

    /// The stopping set under `theta`.
    pub fn stopping_set(&self, theta: Theta) -> BTreeSet<usize> {
        self.stop[theta]
            .iter()
            .enumerate()
            .filter(|&(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    /// States where the sender stops under exactly one state of nature.
    pub fn asymmetric_states(&self) -> BTreeSet<usize> {
        (0..self.m())
            .filter(|&i| self.stop.h[i] != self.stop.l[i])
            .collect()
    }
}

/// Aggregated one-step transition matrix `P(i,j) = sum_s pi_theta(s) f(i,s)(j)`.
pub(crate) fn aggregate_matrix(env: &Environment, proto: &Protocol, theta: Theta) -> DMatrix<f64> {
    let m = proto.m();
    let mut p = DMatrix::zeros(m, m);
    for i in 0..m {
        for s in 0..proto.n_signals() {
            let w = env.pi(theta, s);
            for (j, &v) in proto.transition(i, s).iter().enumerate() {
                p[(i, j)] += w * v;
            }
        }
    }
    p
}

/// Solves the stopping problem for one state of nature. Returns the value
/// vector.
fn solve_theta(env: &Environment, proto: &Protocol, theta: Theta) -> Result<Vec<f64>, SolveError> {
    let m = proto.m();
    let a: Vec<f64> = (0..m).map(|i| proto.action(i)).collect();
    let p = aggregate_matrix(env, proto, theta);

    let mut v = DVector::from_vec(a.clone());
    let mut last_stop: Vec<bool> = vec![false; m];
    let mut stable = 0usize;
    let mut residual = f64::INFINITY;

    for _ in 0..MAX_SWEEPS {
        let cont = &p * &v;
        let mut delta = 0.0f64;
        let mut stop = vec![false; m];
        for i in 0..m {
            let nv = a[i].max(cont[i]);
            delta = delta.max((nv - v[i]).abs());
            stop[i] = a[i] + TIE_TOL >= cont[i];
            v[i] = nv;
        }
        residual = delta;
        if stop == last_stop {
            stable += 1;
        } else {
            stable = 0;
            last_stop = stop;
        }
        let try_refine = stable >= STABLE_SWEEPS || delta < VALUE_TOL;
        if try_refine {
            if let Some(exact) = refine(&p, &a, &last_stop, v.as_slice()) {
                return Ok(exact);
            }
            if delta < VALUE_TOL {
                // Converged but the candidate failed verification; accept the
                // iterate itself.
                return Ok(v.as_slice().to_vec());
            }
            stable = 0; // retry refinement later
        }
    }
    Err(SolveError::IterationCapExceeded {
        cap: MAX_SWEEPS,
        residual,
    })
}

/// Solves the linear system induced by a candidate stop set and verifies the
/// Bellman conditions. Returns the exact value on success.
fn refine(p: &DMatrix<f64>, a: &[f64], stop: &[bool], lower: &[f64]) -> Option<Vec<f64>> {
    let m = a.len();
    let cont_states: Vec<usize> = (0..m).filter(|&i| !stop[i]).collect();
    let mut v = a.to_vec();
    if !cont_states.is_empty() {
        let n = cont_states.len();
        let mut system = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for (r, &i) in cont_states.iter().enumerate() {
            for (c, &j) in cont_states.iter().enumerate() {
                system[(r, c)] = if r == c { 1.0 - p[(i, j)] } else { -p[(i, j)] };
            }
            let mut b = 0.0;
            for j in 0..m {
                if stop[j] {
                    b += p[(i, j)] * a[j];
                }
            }
            rhs[r] = b;
        }
        let x = linalg::solve(&system, &rhs)?;
        for (r, &i) in cont_states.iter().enumerate() {
            v[i] = x[r];
        }
    }
    // Verify: v must be a Bellman fixed point lying above the iterate.
    let cont = p * DVector::from_vec(v.clone());
    for i in 0..m {
        let bellman = a[i].max(cont[i]);
        if (v[i] - bellman).abs() > 1e-9 || v[i] < a[i] - 1e-10 || v[i] < lower[i] - 1e-9 {
            return None;
        }
    }
    Some(v)
}

/// Solves the sender's stopping problem for both states of nature,
/// returning the pointwise-least Bellman value.
pub fn solve_value(env: &Environment, proto: &Protocol) -> Result<ValueFunction, SolveError> {
    let h = solve_theta(env, proto, Theta::H)?;
    let l = solve_theta(env, proto, Theta::L)?;
    Ok(ValueFunction {
        v: PerTheta { h, l },
    })
}

/// Solves the stopping problem and derives the stationary pure best
/// response: stop wherever the stopping payoff weakly beats the continuation
/// value at the solved value function (ties stop).
pub fn best_response(
    env: &Environment,
    proto: &Protocol,
) -> Result<(ValueFunction, SenderStrategy), SolveError> {
    let vf = solve_value(env, proto)?;
    let strategy = greedy_strategy(env, proto, &vf);
    Ok((vf, strategy))
}

/// The tie-stops greedy rule at a given value function.
pub(crate) fn greedy_strategy(
    env: &Environment,
    proto: &Protocol,
    vf: &ValueFunction,
) -> SenderStrategy {
    let m = proto.m();
    let mut stop = PerTheta {
        h: vec![false; m],
        l: vec![false; m],
    };
    for &theta in &Theta::BOTH {
        let p = aggregate_matrix(env, proto, theta);
        let cont = &p * DVector::from_vec(vf.values(theta).to_vec());
        for i in 0..m {
            stop[theta][i] = proto.action(i) + TIE_TOL >= cont[i];
        }
    }
    SenderStrategy { stop }
}

// ---------------------------------------------------------------------------
// Enumeration oracle
// ---------------------------------------------------------------------------

/// Value of one stationary stop set under one state of nature, via the
/// hitting linear system. States from which play can never end score zero.
///
/// Independent of the value-iteration path: used as a test oracle.
pub fn strategy_value(
    env: &Environment,
    proto: &Protocol,
    stop: &[bool],
    theta: Theta,
) -> Option<Vec<f64>> {
    let m = proto.m();
    let p = aggregate_matrix(env, proto, theta);
    let terminal: Vec<bool> = (0..m)
        .map(|i| stop[i] || proto.is_absorbing_state(i))
        .collect();
    // Continue states with no path to a terminal state never end the game.
    let dead = never_ending_states(&p, &terminal);
    let live: Vec<usize> = (0..m).filter(|&i| !terminal[i] && !dead[i]).collect();

    let mut v = vec![0.0; m];
    for i in 0..m {
        if terminal[i] {
            v[i] = proto.action(i);
        }
    }
    if !live.is_empty() {
        let n = live.len();
        let mut system = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for (r, &i) in live.iter().enumerate() {
            for (c, &j) in live.iter().enumerate() {
                system[(r, c)] = if r == c { 1.0 - p[(i, j)] } else { -p[(i, j)] };
            }
            let mut b = 0.0;
            for j in 0..m {
                if terminal[j] {
                    b += p[(i, j)] * proto.action(j);
                }
                // flows into dead states contribute zero
            }
            rhs[r] = b;
        }
        let x = linalg::solve(&system, &rhs)?;
        for (r, &i) in live.iter().enumerate() {
            v[i] = x[r];
        }
    }
    Some(v)
}

/// Flags continue-states from which no terminal state is reachable in the
/// support graph of `p`.
fn never_ending_states(p: &DMatrix<f64>, terminal: &[bool]) -> Vec<bool> {
    let m = terminal.len();
    // Backward reachability from terminal states.
    let mut can_end = terminal.to_vec();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..m {
            if can_end[i] || terminal[i] {
                continue;
            }
            for j in 0..m {
                if p[(i, j)] > STRUCTURAL_ZERO && can_end[j] {
                    can_end[i] = true;
                    changed = true;
                    break;
                }
            }
        }
    }
    (0..m).map(|i| !can_end[i] && !terminal[i]).collect()
}

/// Result of exhaustively enumerating stationary stop sets.
#[derive(Debug, Clone)]
pub struct OracleOutcome {
    /// Pointwise maximum value over all stop sets, per state of nature.
    pub value: PerTheta<Vec<f64>>,
    /// Best start-weighted sender value, per state of nature.
    pub start_value: PerTheta<f64>,
    /// All stop sets attaining the best start value within `1e-12`,
    /// with a flag for whether play ends with probability one from the
    /// initial distribution.
    pub maximizers: PerTheta<Vec<(Vec<bool>, bool)>>,
}

/// Enumerates every stationary stop set (per state of nature,
/// `2^(non-absorbing states)` of them) and evaluates each through the
/// hitting system.
pub fn enumerate_best_response_oracle(
    env: &Environment,
    proto: &Protocol,
) -> Result<OracleOutcome, SolveError> {
    let m = proto.m();
    if m > ORACLE_MAX_STATES {
        return Err(SolveError::TooLarge {
            m,
            max: ORACLE_MAX_STATES,
        });
    }
    let free: Vec<usize> = (0..m).filter(|&i| !proto.is_absorbing_state(i)).collect();
    let n_free = free.len();

    let mut value = PerTheta {
        h: vec![f64::NEG_INFINITY; m],
        l: vec![f64::NEG_INFINITY; m],
    };
    let mut start_value = PerTheta {
        h: f64::NEG_INFINITY,
        l: f64::NEG_INFINITY,
    };
    let mut maximizers: PerTheta<Vec<(Vec<bool>, bool)>> = PerTheta {
        h: Vec::new(),
        l: Vec::new(),
    };

    for &theta in &Theta::BOTH {
        let p = aggregate_matrix(env, proto, theta);
        for mask in 0u64..(1u64 << n_free) {
            let mut stop = vec![false; m];
            for (b, &i) in free.iter().enumerate() {
                stop[i] = mask & (1 << b) != 0;
            }
            let Some(v) = strategy_value(env, proto, &stop, theta) else {
                continue;
            };
            for i in 0..m {
                if v[i] > value[theta][i] {
                    value[theta][i] = v[i];
                }
            }
            let sv: f64 = proto.initial().iter().zip(&v).map(|(&g, &x)| g * x).sum();
            if sv > start_value[theta] + 1e-12 {
                start_value[theta] = sv;
                maximizers[theta].clear();
            }
            if (sv - start_value[theta]).abs() <= 1e-12 {
                let terminal: Vec<bool> = (0..m)
                    .map(|i| stop[i] || proto.is_absorbing_state(i))
                    .collect();
                let dead = never_ending_states(&p, &terminal);
                let ends = ends_with_probability_one(&p, proto.initial(), &terminal, &dead);
                maximizers[theta].push((stop, ends));
            }
        }
    }
    Ok(OracleOutcome {
        value,
        start_value,
        maximizers,
    })
}

fn ends_with_probability_one(
    p: &DMatrix<f64>,
    initial: &[f64],
    terminal: &[bool],
    dead: &[bool],
) -> bool {
    // Play ends almost surely iff no never-ending state is reachable from
    // the support of the initial distribution through continue states.
    let m = terminal.len();
    let mut seen = vec![false; m];
    let mut stack: Vec<usize> = (0..m).filter(|&i| initial[i] > STRUCTURAL_ZERO).collect();
    while let Some(i) = stack.pop() {
        if seen[i] {
            continue;
        }
        seen[i] = true;
        if dead[i] {
            return false;
        }
        if terminal[i] {
            continue;
        }
        for j in 0..m {
            if p[(i, j)] > STRUCTURAL_ZERO && !seen[j] {
                stack.push(j);
            }
        }
    }
    true
}
