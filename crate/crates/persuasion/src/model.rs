//! Domain types for the persuasion game: signal structures, the environment,
//! receiver protocols, and structural classification of protocol states.
//!
//! A receiver protocol is a finite automaton over memory states `0..m`
//! (displayed and serialized 1-based as `1..=m`): a stochastic transition
//! function driven by signals, an initial distribution, and an action rule
//! giving the probability of taking the high action in each state.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that probability vectors sum to one.
pub const PROB_TOL: f64 = 1e-12;

/// Transition entries at or below this threshold are treated as structural
/// zeros when building the support graph. Separates numeric dust from
/// intended support.
pub const STRUCTURAL_ZERO: f64 = 1e-15;

/// The binary state of nature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Theta {
    /// The sender-preferred state.
    H,
    /// The alternative state.
    L,
}

impl Theta {
    /// Both states of nature, in a fixed order.
    pub const BOTH: [Theta; 2] = [Theta::H, Theta::L];

    /// Index into per-theta storage: `H -> 0`, `L -> 1`.
    pub fn idx(self) -> usize {
        match self {
            Theta::H => 0,
            Theta::L => 1,
        }
    }

    /// The other state of nature.
    pub fn other(self) -> Theta {
        match self {
            Theta::H => Theta::L,
            Theta::L => Theta::H,
        }
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::H => write!(f, "H"),
            Theta::L => write!(f, "L"),
        }
    }
}

/// A pair of values indexed by the state of nature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerTheta<T> {
    /// Value under `Theta::H`.
    pub h: T,
    /// Value under `Theta::L`.
    pub l: T,
}

impl<T> PerTheta<T> {
    /// Builds a pair by evaluating `f` at both states of nature.
    pub fn build(mut f: impl FnMut(Theta) -> T) -> Self {
        PerTheta {
            h: f(Theta::H),
            l: f(Theta::L),
        }
    }

    /// Immutable access by state of nature.
    pub fn get(&self, theta: Theta) -> &T {
        match theta {
            Theta::H => &self.h,
            Theta::L => &self.l,
        }
    }

    /// Mutable access by state of nature.
    pub fn get_mut(&mut self, theta: Theta) -> &mut T {
        match theta {
            Theta::H => &mut self.h,
            Theta::L => &mut self.l,
        }
    }
}

impl<T> std::ops::Index<Theta> for PerTheta<T> {
    type Output = T;
    fn index(&self, theta: Theta) -> &T {
        self.get(theta)
    }
}

impl<T> std::ops::IndexMut<Theta> for PerTheta<T> {
    fn index_mut(&mut self, theta: Theta) -> &mut T {
        self.get_mut(theta)
    }
}

/// Errors raised when constructing the fixed parts of the environment.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    /// A signal distribution entry is zero or negative.
    #[error("signal distribution must have full support: pi_{theta}({signal}) = {value}")]
    FullSupport {
        /// State of nature of the offending distribution.
        theta: Theta,
        /// Signal name.
        signal: String,
        /// Offending probability.
        value: f64,
    },
    /// A signal distribution does not sum to one.
    #[error("signal distribution pi_{theta} sums to {sum}, expected 1")]
    DistributionSum {
        /// State of nature of the offending distribution.
        theta: Theta,
        /// Actual sum.
        sum: f64,
    },
    /// The two conditional distributions coincide, so signals carry no
    /// information and the likelihood-ratio spread is degenerate.
    #[error("pi_H and pi_L coincide: all likelihood ratios equal 1")]
    Uninformative,
    /// Signal lists and probability tables disagree in length.
    #[error("signal dimension mismatch: {0}")]
    Dimension(String),
    /// Duplicate signal identifier.
    #[error("duplicate signal identifier {0:?}")]
    DuplicateSignal(String),
    /// There are no signals.
    #[error("signal set is empty")]
    EmptySignalSet,
    /// The prior must lie strictly between 0 and 1.
    #[error("prior must lie in (0,1), got {0}")]
    PriorRange(f64),
    /// A value that must be finite is not.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

/// A finite signal set with state-conditional full-support distributions.
///
/// Carries the derived likelihood ratios, their extremes `l_bar` and
/// `l_under`, and the informativeness index `gamma = l_bar / l_under`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalModel {
    signals: Vec<String>,
    pi_h: Vec<f64>,
    pi_l: Vec<f64>,
    lr: Vec<f64>,
    h_signal: usize,
    l_signal: usize,
    l_bar: f64,
    l_under: f64,
    gamma: f64,
}

impl SignalModel {
    /// Builds a signal model, validating full support, normalization, and
    /// informativeness (`gamma > 1`).
    pub fn new(signals: Vec<String>, pi_h: Vec<f64>, pi_l: Vec<f64>) -> Result<Self, ModelError> {
        if signals.is_empty() {
            return Err(ModelError::EmptySignalSet);
        }
        if pi_h.len() != signals.len() || pi_l.len() != signals.len() {
            return Err(ModelError::Dimension(format!(
                "{} signals but {} pi_H and {} pi_L entries",
                signals.len(),
                pi_h.len(),
                pi_l.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &signals {
            if !seen.insert(name.clone()) {
                return Err(ModelError::DuplicateSignal(name.clone()));
            }
        }
        for (theta, pi) in [(Theta::H, &pi_h), (Theta::L, &pi_l)] {
            for (s, &v) in pi.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ModelError::NonFinite(format!("pi_{theta}({})", signals[s])));
                }
                if v <= 0.0 {
                    return Err(ModelError::FullSupport {
                        theta,
                        signal: signals[s].clone(),
                        value: v,
                    });
                }
            }
            let sum: f64 = pi.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(ModelError::DistributionSum { theta, sum });
            }
        }
        let lr: Vec<f64> = pi_h.iter().zip(&pi_l).map(|(&h, &l)| h / l).collect();
        let mut h_signal = 0;
        let mut l_signal = 0;
        for (s, &r) in lr.iter().enumerate() {
            if r > lr[h_signal] {
                h_signal = s;
            }
            if r < lr[l_signal] {
                l_signal = s;
            }
        }
        let l_bar = lr[h_signal];
        let l_under = lr[l_signal];
        let gamma = l_bar / l_under;
        if gamma <= 1.0 {
            return Err(ModelError::Uninformative);
        }
        Ok(SignalModel {
            signals,
            pi_h,
            pi_l,
            lr,
            h_signal,
            l_signal,
            l_bar,
            l_under,
            gamma,
        })
    }

    /// The symmetric binary model: signals `h`, `l` with
    /// `pi_H(h) = pi_L(l) = q` for `q` in `(1/2, 1)`.
    pub fn symmetric_binary(q: f64) -> Result<Self, ModelError> {
        if !q.is_finite() || q <= 0.5 || q >= 1.0 {
            return Err(ModelError::Dimension(format!(
                "symmetric binary accuracy must lie in (1/2, 1), got {q}"
            )));
        }
        SignalModel::new(
            vec!["h".to_string(), "l".to_string()],
            vec![q, 1.0 - q],
            vec![1.0 - q, q],
        )
    }

    /// Number of signals.
    pub fn len(&self) -> usize {
        self.signals.len()
    }

    /// True when the signal set is empty (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    /// Signal names in order.
    pub fn signals(&self) -> &[String] {
        &self.signals
    }

    /// Name of signal `s`.
    pub fn signal_name(&self, s: usize) -> &str {
        &self.signals[s]
    }

    /// `Pr(s | theta)`.
    pub fn pi(&self, theta: Theta, s: usize) -> f64 {
        match theta {
            Theta::H => self.pi_h[s],
            Theta::L => self.pi_l[s],
        }
    }

    /// Likelihood ratio `pi_H(s) / pi_L(s)`.
    pub fn lr(&self, s: usize) -> f64 {
        self.lr[s]
    }

    /// Index of the signal with the highest likelihood ratio (ties broken by
    /// the first such signal).
    pub fn h_signal(&self) -> usize {
        self.h_signal
    }

    /// Index of the signal with the lowest likelihood ratio.
    pub fn l_signal(&self) -> usize {
        self.l_signal
    }

    /// Maximum likelihood ratio.
    pub fn l_bar(&self) -> f64 {
        self.l_bar
    }

    /// Minimum likelihood ratio.
    pub fn l_under(&self) -> f64 {
        self.l_under
    }

    /// Informativeness index: ratio of the extreme likelihood ratios.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Signals other than the argmax/argmin whose likelihood ratio ties an
    /// extreme within `1e-12`. Such signals are kept distinct in the data;
    /// the tie is surfaced for diagnostics only.
    pub fn extreme_ties(&self) -> Vec<usize> {
        self.lr
            .iter()
            .enumerate()
            .filter(|&(s, &r)| {
                s != self.h_signal
                    && s != self.l_signal
                    && ((r - self.l_bar).abs() <= 1e-12 || (r - self.l_under).abs() <= 1e-12)
            })
            .map(|(s, _)| s)
            .collect()
    }
}

/// The fixed environment: prior over the state of nature plus signal model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Environment {
    prior: f64,
    signal_model: SignalModel,
}

impl Environment {
    /// Builds an environment, validating the prior.
    pub fn new(prior: f64, signal_model: SignalModel) -> Result<Self, ModelError> {
        if !prior.is_finite() || prior <= 0.0 || prior >= 1.0 {
            return Err(ModelError::PriorRange(prior));
        }
        Ok(Environment {
            prior,
            signal_model,
        })
    }

    /// The symmetric binary environment: unbiased prior with accuracy `q`.
    pub fn symmetric_binary(q: f64) -> Result<Self, ModelError> {
        Environment::new(0.5, SignalModel::symmetric_binary(q)?)
    }

    /// `Pr(theta = H)`.
    pub fn prior(&self) -> f64 {
        self.prior
    }

    /// Prior probability of the given state of nature.
    pub fn prob(&self, theta: Theta) -> f64 {
        match theta {
            Theta::H => self.prior,
            Theta::L => 1.0 - self.prior,
        }
    }

    /// Skewness index of the prior: `max(p/(1-p), (1-p)/p) >= 1`.
    pub fn kappa(&self) -> f64 {
        let p = self.prior;
        (p / (1.0 - p)).max((1.0 - p) / p)
    }

    /// The signal model.
    pub fn signal_model(&self) -> &SignalModel {
        &self.signal_model
    }

    /// Shorthand for `signal_model().len()`.
    pub fn n_signals(&self) -> usize {
        self.signal_model.len()
    }

    /// Shorthand for `Pr(s | theta)`.
    pub fn pi(&self, theta: Theta, s: usize) -> f64 {
        self.signal_model.pi(theta, s)
    }
}

/// A receiver protocol: transition function, initial distribution, and
/// action rule over `m` memory states.
///
/// States are indexed `0..m` in the API; serialization and display use the
/// 1-based labels `1..=m`. Construction does not validate; see [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    m: usize,
    n_signals: usize,
    /// `transition[i][s][j]` = probability of moving from state `i` to `j`
    /// on signal `s`.
    transition: Vec<Vec<Vec<f64>>>,
    initial: Vec<f64>,
    action: Vec<f64>,
}

impl Protocol {
    /// Assembles a protocol from raw parts. Panics only on dimension
    /// mismatch; stochasticity is checked by [`validate`].
    pub fn from_parts(transition: Vec<Vec<Vec<f64>>>, initial: Vec<f64>, action: Vec<f64>) -> Self {
        let m = initial.len();
        assert_eq!(
            transition.len(),
            m,
            "transition rows must match state count"
        );
        assert_eq!(action.len(), m, "action rule must match state count");
        let n_signals = transition.first().map_or(0, Vec::len);
        for row in &transition {
            assert_eq!(row.len(), n_signals, "every state needs a row per signal");
            for tr in row {
                assert_eq!(tr.len(), m, "transition targets must match state count");
            }
        }
        Protocol {
            m,
            n_signals,
            transition,
            initial,
            action,
        }
    }

    /// An all-zero protocol skeleton to be filled in by builders.
    pub fn zeroed(m: usize, n_signals: usize) -> Self {
        Protocol {
            m,
            n_signals,
            transition: vec![vec![vec![0.0; m]; n_signals]; m],
            initial: vec![0.0; m],
            action: vec![0.0; m],
        }
    }

    /// Number of memory states.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of signals the transition function is defined over.
    pub fn n_signals(&self) -> usize {
        self.n_signals
    }

    /// Transition row from state `i` on signal `s`.
    pub fn transition(&self, i: usize, s: usize) -> &[f64] {
        &self.transition[i][s]
    }

    /// Probability of moving from `i` to `j` on signal `s`.
    pub fn trans_prob(&self, i: usize, s: usize, j: usize) -> f64 {
        self.transition[i][s][j]
    }

    /// The initial distribution over memory states.
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// If the initial distribution is degenerate, the state carrying all
    /// mass.
    pub fn initial_state(&self) -> Option<usize> {
        let mut found = None;
        for (i, &g) in self.initial.iter().enumerate() {
            if g > STRUCTURAL_ZERO {
                if found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found
    }

    /// Action rule: probability of the high action in state `i`.
    pub fn action(&self, i: usize) -> f64 {
        self.action[i]
    }

    /// The full action rule.
    pub fn actions(&self) -> &[f64] {
        &self.action
    }

    /// True when state `i` self-loops with probability one on every signal
    /// (off-diagonal mass at most [`STRUCTURAL_ZERO`]).
    pub fn is_absorbing_state(&self, i: usize) -> bool {
        self.transition[i].iter().all(|row| {
            row.iter()
                .enumerate()
                .all(|(j, &v)| j == i || v <= STRUCTURAL_ZERO)
        })
    }

    pub(crate) fn set_transition(&mut self, i: usize, s: usize, row: Vec<f64>) {
        assert_eq!(row.len(), self.m);
        self.transition[i][s] = row;
    }

    pub(crate) fn set_initial(&mut self, g: Vec<f64>) {
        assert_eq!(g.len(), self.m);
        self.initial = g;
    }

    pub(crate) fn set_action(&mut self, i: usize, a: f64) {
        self.action[i] = a;
    }

    pub(crate) fn transition_mut(&mut self, i: usize, s: usize) -> &mut [f64] {
        &mut self.transition[i][s]
    }

    /// Makes state `i` absorbing: self-loop with probability one on every
    /// signal; everything else unchanged.
    pub fn with_state_absorbing(&self, i: usize) -> Protocol {
        let mut out = self.clone();
        for s in 0..self.n_signals {
            let mut row = vec![0.0; self.m];
            row[i] = 1.0;
            out.transition[i][s] = row;
        }
        out
    }

    /// Removes state `k`, renumbering states above it down by one. The
    /// caller is responsible for having redistributed any probability mass
    /// pointing at `k`.
    pub(crate) fn without_state(&self, k: usize) -> Protocol {
        let keep: Vec<usize> = (0..self.m).filter(|&j| j != k).collect();
        let mut out = Protocol::zeroed(self.m - 1, self.n_signals);
        for (ni, &oi) in keep.iter().enumerate() {
            out.action[ni] = self.action[oi];
            out.initial[ni] = self.initial[oi];
            for s in 0..self.n_signals {
                for (nj, &oj) in keep.iter().enumerate() {
                    out.transition[ni][s][nj] = self.transition[oi][s][oj];
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A single validation violation with coordinates (1-based state labels,
/// signal names).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    /// A transition row does not sum to one.
    TransitionRowSum {
        /// 1-based state label.
        state: usize,
        /// Signal name.
        signal: String,
        /// Actual sum.
        sum: f64,
    },
    /// A transition entry is negative.
    NegativeTransition {
        /// 1-based source state label.
        state: usize,
        /// Signal name.
        signal: String,
        /// 1-based target state label.
        target: usize,
        /// Offending value.
        value: f64,
    },
    /// The initial distribution does not sum to one.
    InitialSum {
        /// Actual sum.
        sum: f64,
    },
    /// An initial-distribution entry is negative.
    NegativeInitial {
        /// 1-based state label.
        state: usize,
        /// Offending value.
        value: f64,
    },
    /// An action probability lies outside `[0,1]`.
    ActionRange {
        /// 1-based state label.
        state: usize,
        /// Offending value.
        value: f64,
    },
    /// The protocol's signal dimension disagrees with the environment.
    SignalDimension {
        /// Signals in the environment.
        expected: usize,
        /// Signals in the protocol.
        found: usize,
    },
    /// The protocol has no memory states.
    NoStates,
    /// A value that must be finite is not.
    NonFinite {
        /// Human-readable coordinate of the offending value.
        at: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TransitionRowSum { state, signal, sum } => {
                write!(f, "transition row sum: f({state},{signal}) sums to {sum}")
            }
            Violation::NegativeTransition {
                state,
                signal,
                target,
                value,
            } => {
                write!(
                    f,
                    "negative transition: f({state},{signal})({target}) = {value}"
                )
            }
            Violation::InitialSum { sum } => write!(f, "initial distribution sums to {sum}"),
            Violation::NegativeInitial { state, value } => {
                write!(f, "negative initial mass: g({state}) = {value}")
            }
            Violation::ActionRange { state, value } => {
                write!(f, "action out of range: a({state}) = {value}")
            }
            Violation::SignalDimension { expected, found } => {
                write!(
                    f,
                    "protocol defined over {found} signals, environment has {expected}"
                )
            }
            Violation::NoStates => write!(f, "protocol has no memory states"),
            Violation::NonFinite { at } => write!(f, "non-finite value at {at}"),
        }
    }
}

/// Outcome of validating a protocol against an environment. Violations are
/// data, not failures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// All violations found, in deterministic order.
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// True when no violations were found.
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "ok")
        } else {
            for (i, v) in self.violations.iter().enumerate() {
                if i > 0 {
                    writeln!(f)?;
                }
                write!(f, "{v}")?;
            }
            Ok(())
        }
    }
}

/// Checks stochasticity and range constraints of a protocol against an
/// environment. Returns a report with coordinates for every violation.
pub fn validate(env: &Environment, proto: &Protocol) -> ValidationReport {
    let mut violations = Vec::new();
    if proto.m() == 0 {
        violations.push(Violation::NoStates);
        return ValidationReport { violations };
    }
    if proto.n_signals() != env.n_signals() {
        violations.push(Violation::SignalDimension {
            expected: env.n_signals(),
            found: proto.n_signals(),
        });
        return ValidationReport { violations };
    }
    let names = env.signal_model().signals();
    for i in 0..proto.m() {
        for s in 0..proto.n_signals() {
            let row = proto.transition(i, s);
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    violations.push(Violation::NonFinite {
                        at: format!("f({},{})({})", i + 1, names[s], j + 1),
                    });
                } else if v < 0.0 {
                    violations.push(Violation::NegativeTransition {
                        state: i + 1,
                        signal: names[s].clone(),
                        target: j + 1,
                        value: v,
                    });
                }
                sum += v;
            }
            if !(sum - 1.0).abs().is_finite() || (sum - 1.0).abs() > PROB_TOL {
                violations.push(Violation::TransitionRowSum {
                    state: i + 1,
                    signal: names[s].clone(),
                    sum,
                });
            }
        }
    }
    let mut gsum = 0.0;
    for (i, &g) in proto.initial().iter().enumerate() {
        if !g.is_finite() {
            violations.push(Violation::NonFinite {
                at: format!("g({})", i + 1),
            });
        } else if g < 0.0 {
            violations.push(Violation::NegativeInitial {
                state: i + 1,
                value: g,
            });
        }
        gsum += g;
    }
    if !(gsum - 1.0).abs().is_finite() || (gsum - 1.0).abs() > PROB_TOL {
        violations.push(Violation::InitialSum { sum: gsum });
    }
    for i in 0..proto.m() {
        let a = proto.action(i);
        if !a.is_finite() || !(0.0..=1.0).contains(&a) {
            violations.push(Violation::ActionRange {
                state: i + 1,
                value: a,
            });
        }
    }
    ValidationReport { violations }
}

// ---------------------------------------------------------------------------
// Structural classification
// ---------------------------------------------------------------------------

/// Partition of memory states into absorbing states, transient states, and
/// non-singleton recurrent communicating classes, plus reachability from the
/// initial distribution.
///
/// The classification is independent of the state of nature: full signal
/// support makes the possible-transition graph identical under both.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateClassification {
    /// States that self-loop with probability one on every signal.
    pub absorbing: BTreeSet<usize>,
    /// States left forever with probability one.
    pub transient: BTreeSet<usize>,
    /// Closed communicating classes with more than one state.
    pub recurrent_classes: Vec<BTreeSet<usize>>,
    /// States reachable from the support of the initial distribution.
    pub reachable: BTreeSet<usize>,
}

impl StateClassification {
    /// Recurrent classes distinct from absorbing singletons, i.e. the
    /// non-singleton closed classes.
    pub fn has_nontrivial_recurrent_class(&self) -> bool {
        !self.recurrent_classes.is_empty()
    }
}

/// Builds the support graph of `sum_s f(i,s)(.)` and classifies states.
///
/// Absorbing states are exact self-loops; recurrent classes are closed
/// strongly connected components of the support graph; everything else is
/// transient.
pub fn classify_states(proto: &Protocol) -> StateClassification {
    let m = proto.m();
    // adjacency over structural support
    let mut adj = vec![Vec::new(); m];
    for i in 0..m {
        let mut targets = BTreeSet::new();
        for s in 0..proto.n_signals() {
            for (j, &v) in proto.transition(i, s).iter().enumerate() {
                if v > STRUCTURAL_ZERO {
                    targets.insert(j);
                }
            }
        }
        adj[i] = targets.into_iter().collect();
    }

    let sccs = strongly_connected_components(&adj);
    let mut absorbing = BTreeSet::new();
    let mut transient = BTreeSet::new();
    let mut recurrent_classes = Vec::new();
    for scc in &sccs {
        let closed = scc.iter().all(|&i| adj[i].iter().all(|j| scc.contains(j)));
        if !closed {
            transient.extend(scc.iter().copied());
        } else if scc.len() == 1 {
            // A closed singleton self-loops on every signal: each row's mass
            // has nowhere else to go.
            absorbing.insert(*scc.iter().next().unwrap());
        } else {
            recurrent_classes.push(scc.clone());
        }
    }
    recurrent_classes.sort_by_key(|c| *c.iter().next().unwrap());

    let mut reachable = BTreeSet::new();
    let mut stack: Vec<usize> = (0..m)
        .filter(|&i| proto.initial()[i] > STRUCTURAL_ZERO)
        .collect();
    while let Some(i) = stack.pop() {
        if reachable.insert(i) {
            for &j in &adj[i] {
                if !reachable.contains(&j) {
                    stack.push(j);
                }
            }
        }
    }

    StateClassification {
        absorbing,
        transient,
        recurrent_classes,
        reachable,
    }
}

/// Iterative Tarjan SCC over a small adjacency list, returning components
/// as sets.
fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<BTreeSet<usize>> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next_index = 0usize;
    let mut out: Vec<BTreeSet<usize>> = Vec::new();

    // Explicit DFS stack of (node, child cursor) frames.
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call_stack: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(frame) = call_stack.last_mut() {
            let (v, cursor) = (frame.0, frame.1);
            if cursor == 0 {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if cursor < adj[v].len() {
                frame.1 += 1;
                let w = adj[v][cursor];
                if index[w] == usize::MAX {
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                if low[v] == index[v] {
                    let mut comp = BTreeSet::new();
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp.insert(w);
                        if w == v {
                            break;
                        }
                    }
                    out.push(comp);
                }
                call_stack.pop();
                if let Some(parent) = call_stack.last() {
                    let p = parent.0;
                    low[p] = low[p].min(low[v]);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

/// Shape flags of a protocol: simple (two absorbing states, all others
/// transient) and parsimonious (simple, with the high action played only at
/// one absorbing state and the low action everywhere else).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolShape {
    /// Exactly two absorbing states and every other state transient.
    pub is_simple: bool,
    /// Simple, with `a = 1` at one absorbing state and `a = 0` elsewhere.
    pub is_parsimonious: bool,
    /// Absorbing state with the lower action (ties broken by smaller label).
    pub lo_abs: Option<usize>,
    /// Absorbing state with the higher action.
    pub hi_abs: Option<usize>,
}

/// Tolerance for the exact 0/1 action values required of parsimonious
/// protocols.
const ACTION_TOL: f64 = 1e-12;

/// Computes the shape flags of a validated protocol.
pub fn shape(proto: &Protocol) -> ProtocolShape {
    let class = classify_states(proto);
    shape_with_classification(proto, &class)
}

/// Shape from a precomputed classification.
pub fn shape_with_classification(proto: &Protocol, class: &StateClassification) -> ProtocolShape {
    let is_simple = class.absorbing.len() == 2
        && class.recurrent_classes.is_empty()
        && class.transient.len() == proto.m() - 2;
    if !is_simple {
        return ProtocolShape {
            is_simple,
            is_parsimonious: false,
            lo_abs: None,
            hi_abs: None,
        };
    }
    let abs: Vec<usize> = class.absorbing.iter().copied().collect();
    // Order by action, ties by smaller label (BTreeSet iteration is sorted,
    // so a stable comparison on the action alone suffices).
    let (lo, hi) = if proto.action(abs[1]) < proto.action(abs[0]) {
        (abs[1], abs[0])
    } else {
        (abs[0], abs[1])
    };
    let mut parsimonious = (proto.action(hi) - 1.0).abs() <= ACTION_TOL;
    for i in 0..proto.m() {
        if i != hi && proto.action(i).abs() > ACTION_TOL {
            parsimonious = false;
        }
    }
    ProtocolShape {
        is_simple,
        is_parsimonious: parsimonious,
        lo_abs: Some(lo),
        hi_abs: Some(hi),
    }
}
