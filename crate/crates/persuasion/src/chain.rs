//! Markov-chain analysis of a protocol under a fixed sender strategy.
//!
//! Given a protocol, a stationary sender strategy and a state of nature, the
//! play is an absorbing Markov chain on the memory states: stop states and
//! absorbing states are terminal, everywhere else the state moves by the
//! signal-averaged transition matrix. This module computes absorption
//! probabilities and expected absorption times through the fundamental
//! matrix, relative hitting frequencies through the modified chain (exits
//! redirected to the start state), the Hellman absorption identity residual,
//! and seeded Monte Carlo estimates of all of the above.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::best_response::SenderStrategy;
use crate::linalg;
use crate::model::{Environment, Protocol, Theta, STRUCTURAL_ZERO};

pub(crate) use crate::best_response::aggregate_matrix;

/// Absorption analyses treat end probabilities within this tolerance of one
/// as certain absorption.
const END_PROB_TOL: f64 = 1e-9;

/// Cap on the number of steps a single simulated run may take.
pub const RUN_STEP_CAP: u64 = 10_000_000;

/// Runs per deterministic simulation chunk. Fixed so that results do not
/// depend on the worker count.
const SIM_CHUNK: u64 = 65_536;

/// Errors from chain analysis.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ChainError {
    /// The transient linear system could not be solved reliably.
    #[error("transient system is numerically singular (trapped mass ~ {trapped_mass})")]
    SingularSystem {
        /// Estimated probability mass that never reaches a terminal state.
        trapped_mass: f64,
    },
    /// An operation's structural precondition does not hold.
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
}

/// The Markov chain induced by (protocol, strategy, state of nature).
#[derive(Debug, Clone)]
pub struct InducedChain {
    theta: Theta,
    matrix: DMatrix<f64>,
    terminal: Vec<bool>,
    start: Vec<f64>,
}

impl InducedChain {
    /// State of nature the chain is conditioned on.
    pub fn theta(&self) -> Theta {
        self.theta
    }

    /// Number of states.
    pub fn m(&self) -> usize {
        self.terminal.len()
    }

    /// One-step transition probability between continue states and their
    /// successors. Terminal states self-loop.
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// True when play ends upon reaching `i` (stop state or absorbing
    /// state).
    pub fn is_terminal(&self, i: usize) -> bool {
        self.terminal[i]
    }

    /// The start distribution.
    pub fn start(&self) -> &[f64] {
        &self.start
    }
}

/// Builds the induced chain: signal-averaged transitions at continue states,
/// terminal self-loops at stop states and absorbing states.
pub fn induce(
    env: &Environment,
    proto: &Protocol,
    sigma: &SenderStrategy,
    theta: Theta,
) -> InducedChain {
    let m = proto.m();
    let mut matrix = aggregate_matrix(env, proto, theta);
    let mut terminal = vec![false; m];
    for i in 0..m {
        // Stopping under this state of nature ends the play, as does an
        // absorbing state regardless of the strategy.
        if sigma.stops(i, theta) || proto.is_absorbing_state(i) {
            terminal[i] = true;
            for j in 0..m {
                matrix[(i, j)] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    InducedChain {
        theta,
        matrix,
        terminal,
        start: proto.initial().to_vec(),
    }
}

/// Absorption probabilities, hitting frequencies, and expected absorption
/// time of an induced chain.
#[derive(Debug, Clone)]
pub struct AbsorptionAnalysis {
    /// State of nature.
    pub theta: Theta,
    /// Absorption probability per state (zero at non-terminal states).
    pub mu: Vec<f64>,
    /// Total probability that play ends.
    pub end_prob: f64,
    /// Start mass that can never reach a terminal state.
    pub trapped_mass: f64,
    /// Relative hitting frequencies over continue states (the stationary
    /// distribution of the modified chain), present when the start is
    /// degenerate at a continue state and play ends almost surely.
    pub nu: Option<Vec<f64>>,
    /// Expected number of steps to absorption, under the same precondition.
    pub expected_time: Option<f64>,
}

impl AbsorptionAnalysis {
    /// Absorption probability of a target state.
    pub fn mu_at(&self, state: usize) -> f64 {
        self.mu[state]
    }
}

/// Internal decomposition of an induced chain shared by the dense analyses.
struct ChainParts {
    terminal: Vec<usize>,
    /// Continue states that can reach a terminal state.
    live: Vec<usize>,
    /// Continue states that cannot.
    dead: Vec<usize>,
}

fn decompose(chain: &InducedChain) -> ChainParts {
    let m = chain.m();
    let mut can_end = chain.terminal.clone();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..m {
            if can_end[i] {
                continue;
            }
            for j in 0..m {
                if chain.matrix[(i, j)] > STRUCTURAL_ZERO && can_end[j] {
                    can_end[i] = true;
                    changed = true;
                    break;
                }
            }
        }
    }
    let mut parts = ChainParts {
        terminal: Vec::new(),
        live: Vec::new(),
        dead: Vec::new(),
    };
    for i in 0..m {
        if chain.terminal[i] {
            parts.terminal.push(i);
        } else if can_end[i] {
            parts.live.push(i);
        } else {
            parts.dead.push(i);
        }
    }
    parts
}

/// Computes absorption probabilities by solving the fundamental-matrix
/// system `(I - Q) X = R`, expected time from `(I - Q)^{-1} 1`, and hitting
/// frequencies as the stationary distribution of the modified chain.
///
/// Start mass in closed continue classes is reported as `trapped_mass`; it
/// contributes to no terminal state.
pub fn absorption(
    env: &Environment,
    proto: &Protocol,
    sigma: &SenderStrategy,
    theta: Theta,
) -> Result<AbsorptionAnalysis, ChainError> {
    let chain = induce(env, proto, sigma, theta);
    absorption_of(&chain)
}

/// As [`absorption`], starting from a prebuilt chain.
pub fn absorption_of(chain: &InducedChain) -> Result<AbsorptionAnalysis, ChainError> {
    let m = chain.m();
    let parts = decompose(chain);
    let n = parts.live.len();

    // Hitting probabilities from each live state into each terminal state.
    let mut hit = vec![vec![0.0; parts.terminal.len()]; n];
    if n > 0 {
        let mut system = DMatrix::zeros(n, n);
        for (r, &i) in parts.live.iter().enumerate() {
            for (c, &j) in parts.live.iter().enumerate() {
                let p = chain.matrix[(i, j)];
                system[(r, c)] = if r == c { 1.0 - p } else { -p };
            }
        }
        let rhs: Vec<DVector<f64>> = parts
            .terminal
            .iter()
            .map(|&t| DVector::from_iterator(n, parts.live.iter().map(|&i| chain.matrix[(i, t)])))
            .collect();
        let sols = linalg::solve_many(&system, &rhs).ok_or_else(|| {
            let trapped: f64 = parts.dead.iter().map(|&i| chain.start[i]).sum();
            ChainError::SingularSystem {
                trapped_mass: trapped,
            }
        })?;
        for (c, x) in sols.iter().enumerate() {
            for r in 0..n {
                hit[r][c] = x[r].clamp(0.0, 1.0);
            }
        }
    }

    let mut mu = vec![0.0; m];
    for (c, &t) in parts.terminal.iter().enumerate() {
        let mut total = chain.start[t];
        for (r, &i) in parts.live.iter().enumerate() {
            total += chain.start[i] * hit[r][c];
        }
        mu[t] = total;
    }
    let end_prob: f64 = mu.iter().sum();
    let trapped_mass = (1.0 - end_prob).max(0.0);

    // nu and E[tau] require a degenerate start and almost-sure absorption;
    // a terminal start absorbs immediately in zero steps.
    let start_state = degenerate_start(&chain.start);
    let mut nu = None;
    let mut expected_time = None;
    if let Some(m0) = start_state {
        if chain.terminal[m0] {
            expected_time = Some(0.0);
        } else if end_prob >= 1.0 - END_PROB_TOL {
            if let Some(pos) = parts.live.iter().position(|&i| i == m0) {
                // Expected time: row m0 of (I - Q)^{-1} applied to ones.
                let mut system = DMatrix::zeros(n, n);
                for (r, &i) in parts.live.iter().enumerate() {
                    for (c, &j) in parts.live.iter().enumerate() {
                        let p = chain.matrix[(i, j)];
                        system[(r, c)] = if r == c { 1.0 - p } else { -p };
                    }
                }
                let ones = DVector::from_element(n, 1.0);
                if let Some(t) = linalg::solve(&system, &ones) {
                    expected_time = Some(t[pos]);
                }
                nu = modified_chain_of(chain, m0)
                    .map(|mc| mc.stationary_full(m))
                    .ok();
            }
        }
    }

    Ok(AbsorptionAnalysis {
        theta: chain.theta,
        mu,
        end_prob,
        trapped_mass,
        nu,
        expected_time,
    })
}

fn degenerate_start(start: &[f64]) -> Option<usize> {
    let mut found = None;
    for (i, &g) in start.iter().enumerate() {
        if g > STRUCTURAL_ZERO {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        }
    }
    found
}

/// The chain restricted to continue states with exits redirected to the
/// start state. Its stationary distribution gives the relative hitting
/// frequencies of the continue states.
#[derive(Debug, Clone)]
pub struct ModifiedChain {
    /// State of nature.
    pub theta: Theta,
    /// Original labels of the states of the modified chain, in order.
    pub states: Vec<usize>,
    /// Position of the restart state within `states`.
    pub restart: usize,
    matrix: DMatrix<f64>,
    /// Stationary distribution over `states`.
    pub stationary: Vec<f64>,
}

impl ModifiedChain {
    /// One-step probability between positions of the modified chain.
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.matrix[(from, to)]
    }

    /// Scatters the stationary distribution onto the full state space
    /// (zero at terminal states and states unreachable from the restart).
    pub fn stationary_full(&self, m: usize) -> Vec<f64> {
        let mut nu = vec![0.0; m];
        for (pos, &i) in self.states.iter().enumerate() {
            nu[i] = self.stationary[pos];
        }
        nu
    }
}

/// Builds the modified chain of an induced chain from the degenerate start
/// state `m0`: restrict to the continue states reachable from `m0`,
/// redirect every exit to `m0`.
pub fn modified_chain_of(chain: &InducedChain, m0: usize) -> Result<ModifiedChain, ChainError> {
    let m = chain.m();
    if chain.terminal[m0] {
        return Err(ChainError::PreconditionFailed(format!(
            "modified chain restart {} is terminal",
            m0 + 1
        )));
    }
    // Continue states reachable from m0 through continue states.
    let mut reach = vec![false; m];
    let mut stack = vec![m0];
    while let Some(i) = stack.pop() {
        if reach[i] {
            continue;
        }
        reach[i] = true;
        for j in 0..m {
            if chain.matrix[(i, j)] > STRUCTURAL_ZERO && !chain.terminal[j] && !reach[j] {
                stack.push(j);
            }
        }
    }
    let states: Vec<usize> = (0..m).filter(|&i| reach[i] && !chain.terminal[i]).collect();
    let restart = states.iter().position(|&i| i == m0).unwrap();
    let n = states.len();
    let mut matrix = DMatrix::zeros(n, n);
    for (r, &i) in states.iter().enumerate() {
        let mut exit = 0.0;
        for j in 0..m {
            if chain.terminal[j] {
                exit += chain.matrix[(i, j)];
            }
        }
        for (c, &j) in states.iter().enumerate() {
            matrix[(r, c)] = chain.matrix[(i, j)];
        }
        matrix[(r, restart)] += exit;
    }
    let stationary = linalg::stationary_distribution(&matrix)
        .ok_or(ChainError::SingularSystem { trapped_mass: 0.0 })?;
    Ok(ModifiedChain {
        theta: chain.theta,
        states,
        restart,
        matrix,
        stationary,
    })
}

/// Convenience wrapper building the modified chain from protocol inputs.
pub fn modified_chain(
    env: &Environment,
    proto: &Protocol,
    sigma: &SenderStrategy,
    theta: Theta,
) -> Result<ModifiedChain, ChainError> {
    let chain = induce(env, proto, sigma, theta);
    let m0 = degenerate_start(&chain.start).ok_or_else(|| {
        ChainError::PreconditionFailed("start distribution is not degenerate".into())
    })?;
    modified_chain_of(&chain, m0)
}

/// Residual of the Hellman absorption identity
/// `mu_T = E[tau] * sum_i nu_i * sum_{j in T} p_ij`, maximized over terminal
/// targets. Requires a degenerate start at a continue state and almost-sure
/// absorption.
pub fn hellman_residual(
    env: &Environment,
    proto: &Protocol,
    sigma: &SenderStrategy,
    theta: Theta,
) -> Result<f64, ChainError> {
    let chain = induce(env, proto, sigma, theta);
    let m0 = degenerate_start(&chain.start).ok_or_else(|| {
        ChainError::PreconditionFailed("start distribution is not degenerate".into())
    })?;
    if chain.terminal[m0] {
        return Err(ChainError::PreconditionFailed(
            "start state is terminal".into(),
        ));
    }
    let analysis = absorption_of(&chain)?;
    if analysis.end_prob < 1.0 - END_PROB_TOL {
        return Err(ChainError::PreconditionFailed(format!(
            "play ends with probability {} < 1",
            analysis.end_prob
        )));
    }
    let (nu, tau) = match (&analysis.nu, analysis.expected_time) {
        (Some(nu), Some(tau)) => (nu.clone(), tau),
        _ => {
            return Err(ChainError::PreconditionFailed(
                "hitting frequencies unavailable".into(),
            ))
        }
    };
    let m = chain.m();
    let mut worst = 0.0f64;
    for t in 0..m {
        if !chain.terminal[t] {
            continue;
        }
        let inflow: f64 = (0..m)
            .filter(|&i| !chain.terminal[i])
            .map(|i| nu[i] * chain.matrix[(i, t)])
            .sum();
        let predicted = tau * inflow;
        worst = worst.max((analysis.mu[t] - predicted).abs());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// Empirical counterpart of [`AbsorptionAnalysis`] with standard errors.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// State of nature simulated.
    pub theta: Theta,
    /// Number of runs.
    pub runs: u64,
    /// Seed the run stream was derived from.
    pub seed: u64,
    /// Empirical absorption frequency per state.
    pub mu_hat: Vec<f64>,
    /// Binomial standard error of each `mu_hat` entry.
    pub mu_se: Vec<f64>,
    /// Fraction of runs that ended.
    pub end_prob_hat: f64,
    /// Runs that hit the step cap without ending.
    pub capped_runs: u64,
    /// Mean steps to absorption among ended runs.
    pub expected_time_hat: f64,
    /// Standard error of the mean absorption time.
    pub time_se: f64,
    /// Empirical visit frequencies over continue states.
    pub nu_hat: Vec<f64>,
    /// Batch-means standard error of `nu_hat` (NaN with fewer than two
    /// batches).
    pub nu_se: Vec<f64>,
    /// Empirical (terminal, previous state, previous signal) counts.
    pub entry_counts: EntryCounts,
}

/// Counts of (signal prefix, terminal state) pairs across runs, for
/// polarization diagnostics. Runs that end before emitting a full prefix are
/// excluded.
pub type PrefixCounts = BTreeMap<Vec<u8>, BTreeMap<usize, u64>>;

/// Counts of (terminal state, previous state, previous signal) triples
/// among ended runs: the empirical entry distribution.
pub type EntryCounts = BTreeMap<(usize, usize, usize), u64>;

struct ChunkStats {
    absorbed: Vec<u64>,
    visits: Vec<f64>,
    total_visits: f64,
    steps_sum: f64,
    steps_sqsum: f64,
    ended: u64,
    capped: u64,
    prefixes: PrefixCounts,
    entries: EntryCounts,
}

/// Simulates `runs` independent plays with an explicit seed. Each run is
/// capped at [`RUN_STEP_CAP`] steps; capped runs are reported as non-ending
/// mass. Runs are partitioned into fixed-size chunks with derived seeds and
/// merged in chunk order, so results are identical regardless of the worker
/// count (capped by the `PPL_THREADS` environment variable).
pub fn simulate(
    env: &Environment,
    proto: &Protocol,
    sigma: &SenderStrategy,
    theta: Theta,
    runs: u64,
    seed: u64,
) -> SimOutcome {
    simulate_with_prefixes(env, proto, sigma, theta, runs, seed, 0).0
}

/// As [`simulate`], additionally tabulating the first `prefix_len` signals
/// of each ended run against its terminal state.
pub fn simulate_with_prefixes(
    env: &Environment,
    proto: &Protocol,
    sigma: &SenderStrategy,
    theta: Theta,
    runs: u64,
    seed: u64,
    prefix_len: usize,
) -> (SimOutcome, PrefixCounts) {
    assert!(runs >= 1, "simulate requires at least one run");
    let m = proto.m();
    let n_signals = proto.n_signals();

    // Cumulative sampling tables.
    let mut sig_cdf = vec![0.0; n_signals];
    let mut acc = 0.0;
    for s in 0..n_signals {
        acc += env.pi(theta, s);
        sig_cdf[s] = acc;
    }
    let mut trans_cdf = vec![vec![vec![0.0; m]; n_signals]; m];
    for i in 0..m {
        for s in 0..n_signals {
            let mut acc = 0.0;
            for j in 0..m {
                acc += proto.trans_prob(i, s, j);
                trans_cdf[i][s][j] = acc;
            }
        }
    }
    let mut start_cdf = vec![0.0; m];
    let mut acc = 0.0;
    for i in 0..m {
        acc += proto.initial()[i];
        start_cdf[i] = acc;
    }
    let terminal: Vec<bool> = (0..m)
        .map(|i| sigma.stops(i, theta) || proto.is_absorbing_state(i))
        .collect();

    let n_chunks = runs.div_ceil(SIM_CHUNK);
    let workers = worker_count(n_chunks as usize);

    let run_chunk = |chunk: u64| -> ChunkStats {
        let first = chunk * SIM_CHUNK;
        let count = SIM_CHUNK.min(runs - first);
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (chunk + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut stats = ChunkStats {
            absorbed: vec![0; m],
            visits: vec![0.0; m],
            total_visits: 0.0,
            steps_sum: 0.0,
            steps_sqsum: 0.0,
            ended: 0,
            capped: 0,
            prefixes: BTreeMap::new(),
            entries: BTreeMap::new(),
        };
        let mut prefix = Vec::with_capacity(prefix_len);
        for _ in 0..count {
            let mut state = sample_cdf(&start_cdf, rng.random::<f64>());
            let mut steps = 0u64;
            let mut prev: Option<(usize, usize)> = None;
            prefix.clear();
            while !terminal[state] && steps < RUN_STEP_CAP {
                stats.visits[state] += 1.0;
                stats.total_visits += 1.0;
                let s = sample_cdf(&sig_cdf, rng.random::<f64>());
                if prefix.len() < prefix_len {
                    prefix.push(s as u8);
                }
                prev = Some((state, s));
                state = sample_cdf(&trans_cdf[state][s], rng.random::<f64>());
                steps += 1;
            }
            if terminal[state] {
                stats.absorbed[state] += 1;
                stats.ended += 1;
                let t = steps as f64;
                stats.steps_sum += t;
                stats.steps_sqsum += t * t;
                if let Some((pi, ps)) = prev {
                    *stats.entries.entry((state, pi, ps)).or_default() += 1;
                }
                if prefix_len > 0 && prefix.len() == prefix_len {
                    *stats
                        .prefixes
                        .entry(prefix.clone())
                        .or_default()
                        .entry(state)
                        .or_default() += 1;
                }
            } else {
                stats.capped += 1;
            }
        }
        stats
    };

    let chunk_stats: Vec<ChunkStats> = if workers <= 1 || n_chunks <= 1 {
        (0..n_chunks).map(run_chunk).collect()
    } else {
        let mut slots: Vec<Option<ChunkStats>> = (0..n_chunks).map(|_| None).collect();
        let next = std::sync::atomic::AtomicU64::new(0);
        let slots_ref = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let chunk = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if chunk >= n_chunks {
                        break;
                    }
                    let stats = run_chunk(chunk);
                    slots_ref.lock().unwrap()[chunk as usize] = Some(stats);
                });
            }
        });
        slots.into_iter().map(Option::unwrap).collect()
    };

    // Merge in chunk order.
    let mut absorbed = vec![0u64; m];
    let mut visits = vec![0.0; m];
    let mut total_visits = 0.0;
    let mut steps_sum = 0.0;
    let mut steps_sqsum = 0.0;
    let mut ended = 0u64;
    let mut capped = 0u64;
    let mut prefixes: PrefixCounts = BTreeMap::new();
    let mut entry_counts: EntryCounts = BTreeMap::new();
    let mut chunk_nu: Vec<Vec<f64>> = Vec::new();
    for stats in &chunk_stats {
        for i in 0..m {
            absorbed[i] += stats.absorbed[i];
            visits[i] += stats.visits[i];
        }
        total_visits += stats.total_visits;
        steps_sum += stats.steps_sum;
        steps_sqsum += stats.steps_sqsum;
        ended += stats.ended;
        capped += stats.capped;
        if stats.total_visits > 0.0 {
            chunk_nu.push(
                stats
                    .visits
                    .iter()
                    .map(|&v| v / stats.total_visits)
                    .collect(),
            );
        }
        for (prefix, counts) in &stats.prefixes {
            let slot = prefixes.entry(prefix.clone()).or_default();
            for (&t, &c) in counts {
                *slot.entry(t).or_default() += c;
            }
        }
        for (&key, &c) in &stats.entries {
            *entry_counts.entry(key).or_default() += c;
        }
    }

    let runs_f = runs as f64;
    let mu_hat: Vec<f64> = absorbed.iter().map(|&c| c as f64 / runs_f).collect();
    let mu_se: Vec<f64> = mu_hat
        .iter()
        .map(|&p| (p * (1.0 - p) / runs_f).sqrt())
        .collect();
    let nu_hat: Vec<f64> = if total_visits > 0.0 {
        visits.iter().map(|&v| v / total_visits).collect()
    } else {
        vec![0.0; m]
    };
    let nu_se = if chunk_nu.len() >= 2 {
        let k = chunk_nu.len() as f64;
        (0..m)
            .map(|i| {
                let mean: f64 = chunk_nu.iter().map(|c| c[i]).sum::<f64>() / k;
                let var: f64 =
                    chunk_nu.iter().map(|c| (c[i] - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            })
            .collect()
    } else {
        vec![f64::NAN; m]
    };
    let (time_hat, time_se) = if ended > 0 {
        let n = ended as f64;
        let mean = steps_sum / n;
        let var = (steps_sqsum / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };

    (
        SimOutcome {
            theta,
            runs,
            seed,
            mu_hat,
            mu_se,
            end_prob_hat: ended as f64 / runs_f,
            capped_runs: capped,
            expected_time_hat: time_hat,
            time_se,
            nu_hat,
            nu_se,
            entry_counts,
        },
        prefixes,
    )
}

fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    for (i, &c) in cdf.iter().enumerate() {
        if u < c {
            return i;
        }
    }
    cdf.len() - 1
}

/// Worker cap from the `PPL_THREADS` environment variable, defaulting to the
/// available parallelism.
fn worker_count(max_useful: usize) -> usize {
    let avail = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("PPL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(avail);
    cap.min(avail).min(max_useful).max(1)
}
