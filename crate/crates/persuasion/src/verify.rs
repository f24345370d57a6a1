//! The acceptance criteria of the library, runnable from the CLI (`ppl
//! verify`) and from the test suite.
//!
//! Every tolerance is pinned here. Each criterion returns a pass/fail
//! result with measured values; the whole battery runs in well under a
//! minute. `quick` mode shrinks the random populations and the Monte Carlo
//! budget for a sub-ten-second smoke run without changing any tolerance.

use crate::best_response::{
    best_response, enumerate_best_response_oracle, solve_value, SenderStrategy,
};
use crate::chain::absorption;
use crate::chain::{hellman_residual, simulate_with_prefixes};
use crate::diagnostics::hitting_ratio_spread;
use crate::family::{figure1, figure2, figure3, geometric_grid, sweep};
use crate::gen;
use crate::model::{shape, validate, Environment, Theta};
use crate::payoffs::{
    evaluate, is_interior, receiver_optimal_value, sender_limit_value, spread_ratio,
};
use crate::reduction::to_parsimonious;

/// Options for a verification run.
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Shrink random populations and simulation budgets (tolerances are
    /// unchanged).
    pub quick: bool,
    /// Test instrumentation: added to every Hellman residual to exercise
    /// the failure path. Zero in normal operation.
    #[doc(hidden)]
    pub hellman_fault: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            quick: false,
            hellman_fault: 0.0,
        }
    }
}

/// Outcome of one criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    /// Stable identifier (used in CLI output and exit reporting).
    pub id: &'static str,
    /// True when every assertion held.
    pub passed: bool,
    /// Measured values backing the verdict.
    pub details: String,
}

impl CriterionResult {
    fn pass(id: &'static str, details: String) -> Self {
        CriterionResult {
            id,
            passed: true,
            details,
        }
    }

    fn fail(id: &'static str, details: String) -> Self {
        CriterionResult {
            id,
            passed: false,
            details,
        }
    }

    fn from(id: &'static str, passed: bool, details: String) -> Self {
        CriterionResult {
            id,
            passed,
            details,
        }
    }
}

/// Runs all criteria in order.
pub fn run_all(opts: &VerifyOptions) -> Vec<CriterionResult> {
    vec![
        criterion_01_figure2(),
        criterion_02_figure1(),
        criterion_03_figure3_deterministic(),
        criterion_04_symmetric_sweep(),
        criterion_05_asymmetric_sweep(),
        criterion_06_sender_convergence(),
        criterion_07_oracle_equivalence(opts),
        criterion_08_hellman(opts),
        criterion_09_spread(opts),
        criterion_10_hitting_ratio_bound(opts),
        criterion_11_reduction(opts),
        criterion_12_transition_diagnostics(),
        criterion_13_monte_carlo(opts),
        criterion_14_comparative_statics(),
    ]
}

fn env_sym(q: f64) -> Environment {
    Environment::symmetric_binary(q).unwrap()
}

/// The deterministic three-state ladder reproduces its exact payoffs.
pub fn criterion_01_figure2() -> CriterionResult {
    const ID: &str = "figure2-reproduction";
    let env = env_sym(0.7);
    let proto = figure2(&env);
    let (_, sigma) = match best_response(&env, &proto) {
        Ok(x) => x,
        Err(e) => return CriterionResult::fail(ID, e.to_string()),
    };
    let report = match evaluate(&env, &proto, &sigma) {
        Ok(r) => r,
        Err(e) => return CriterionResult::fail(ID, e.to_string()),
    };
    let ok = (report.u_receiver - 0.7).abs() <= 1e-12 && (report.u_sender - 0.5).abs() <= 1e-12;
    CriterionResult::from(
        ID,
        ok,
        format!(
            "U^R = {} (target 0.7), U^S = {} (target 0.5), tol 1e-12",
            report.u_receiver, report.u_sender
        ),
    )
}

/// The recurrent three-state ladder is fully manipulable: unit sender value
/// everywhere and a prior-level receiver payoff.
pub fn criterion_02_figure1() -> CriterionResult {
    const ID: &str = "figure1-manipulable";
    let env = env_sym(0.7);
    let proto = figure1(&env);
    let vf = match solve_value(&env, &proto) {
        Ok(v) => v,
        Err(e) => return CriterionResult::fail(ID, e.to_string()),
    };
    let min_v = vf.min();
    let (_, sigma) = best_response(&env, &proto).unwrap();
    let ur = evaluate(&env, &proto, &sigma)
        .map(|r| r.u_receiver)
        .unwrap_or(f64::NAN);
    let ok = (min_v - 1.0).abs() <= 1e-12 && (ur - 0.5).abs() <= 1e-12;
    CriterionResult::from(
        ID,
        ok,
        format!("min V = {min_v} (target 1), U^R = {ur} (target 0.5), tol 1e-12"),
    )
}

/// The deterministic five-state ladder reproduces its closed-form payoff.
pub fn criterion_03_figure3_deterministic() -> CriterionResult {
    const ID: &str = "figure3-deterministic";
    let env = env_sym(0.7);
    let proto = figure3(&env, 1.0);
    let (_, sigma) = best_response(&env, &proto).unwrap();
    let ur = evaluate(&env, &proto, &sigma)
        .map(|r| r.u_receiver)
        .unwrap_or(f64::NAN);
    let target = 0.49 / 0.58;
    let ok = (ur - target).abs() <= 1e-12;
    CriterionResult::from(ID, ok, format!("U^R = {ur} (target {target}), tol 1e-12"))
}

fn symmetric_sweep() -> Result<crate::family::SweepResult, crate::family::FamilyError> {
    sweep(&env_sym(0.7), 5, &geometric_grid(1.0, 1e-6, 10.0))
}

fn asymmetric_sweep() -> Result<crate::family::SweepResult, crate::family::FamilyError> {
    let sm = crate::model::SignalModel::symmetric_binary(0.7).unwrap();
    let env = Environment::new(0.6, sm).unwrap();
    sweep(&env, 4, &geometric_grid(1.0, 1e-6, 10.0))
}

/// The symmetric five-state sweep converges to the closed-form optimum and
/// is monotone in the exit scale.
pub fn criterion_04_symmetric_sweep() -> CriterionResult {
    const ID: &str = "sweep-symmetric-convergence";
    let result = match symmetric_sweep() {
        Ok(r) => r,
        Err(e) => return CriterionResult::fail(ID, e.to_string()),
    };
    let target = 0.343 / 0.37;
    let row = result.rows.iter().find(|r| (r.eps - 1e-4).abs() < 1e-9);
    let gap = row
        .map(|r| (target - r.u_receiver).abs())
        .unwrap_or(f64::NAN);
    let mut monotone = true;
    let mut prev = f64::NEG_INFINITY;
    for r in &result.rows {
        if r.u_receiver < prev - 1e-12 {
            monotone = false;
        }
        prev = r.u_receiver;
    }
    let ok = (result.receiver_target - target).abs() <= 1e-12 && gap <= 1e-3 && monotone;
    CriterionResult::from(
        ID,
        ok,
        format!("gap at eps=1e-4: {gap:.3e} (tol 1e-3), monotone: {monotone}, target {target}"),
    )
}

/// The skewed-prior four-state sweep converges to the closed form computed
/// by an independent code path.
pub fn criterion_05_asymmetric_sweep() -> CriterionResult {
    const ID: &str = "sweep-skewed-prior";
    let result = match asymmetric_sweep() {
        Ok(r) => r,
        Err(e) => return CriterionResult::fail(ID, e.to_string()),
    };
    let row = result.rows.iter().find(|r| (r.eps - 1e-4).abs() < 1e-9);
    let gap = row
        .map(|r| (result.receiver_target - r.u_receiver).abs())
        .unwrap_or(f64::NAN);
    let final_gap = result.final_gap();
    let ok = gap <= 1e-3 && final_gap <= 1e-3;
    CriterionResult::from(
        ID,
        ok,
        format!(
            "gap at eps=1e-4: {gap:.3e}, final gap: {final_gap:.3e} (tol 1e-3), target {}",
            result.receiver_target
        ),
    )
}

/// Both sweeps' sender payoffs converge to the limiting closed form.
pub fn criterion_06_sender_convergence() -> CriterionResult {
    const ID: &str = "sweep-sender-convergence";
    let sym = match symmetric_sweep() {
        Ok(r) => r,
        Err(e) => return CriterionResult::fail(ID, e.to_string()),
    };
    let asym = match asymmetric_sweep() {
        Ok(r) => r,
        Err(e) => return CriterionResult::fail(ID, e.to_string()),
    };
    let gap_sym = (sym.rows.last().unwrap().u_sender - sym.sender_target).abs();
    let gap_asym = (asym.rows.last().unwrap().u_sender - asym.sender_target).abs();
    let ok = gap_sym <= 1e-3 && gap_asym <= 1e-3 && (sym.sender_target - 0.5).abs() <= 1e-15;
    CriterionResult::from(
        ID,
        ok,
        format!(
            "sender gaps: symmetric {gap_sym:.3e} (target 0.5), skewed {gap_asym:.3e} \
             (target {}), tol 1e-3",
            asym.sender_target
        ),
    )
}

/// The Bellman solver matches exhaustive strategy enumeration on random
/// protocols.
pub fn criterion_07_oracle_equivalence(opts: &VerifyOptions) -> CriterionResult {
    const ID: &str = "oracle-equivalence";
    let cases = if opts.quick { 40 } else { 200 };
    let mut r = gen::rng(0x5EED_0007);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n_signals = 2 + (case % 2);
        let m = 2 + (case % 4); // up to 5 states
        let env = gen::random_environment(&mut r, n_signals);
        let proto = gen::random_protocol(&mut r, m, n_signals);
        debug_assert!(validate(&env, &proto).is_ok());
        let vf = match solve_value(&env, &proto) {
            Ok(v) => v,
            Err(e) => return CriterionResult::fail(ID, format!("case {case}: {e}")),
        };
        let oracle = match enumerate_best_response_oracle(&env, &proto) {
            Ok(o) => o,
            Err(e) => return CriterionResult::fail(ID, format!("case {case}: {e}")),
        };
        for i in 0..proto.m() {
            for &t in &Theta::BOTH {
                worst = worst.max((vf.value(i, t) - oracle.value[t][i]).abs());
            }
        }
        if worst > 1e-9 {
            return CriterionResult::fail(
                ID,
                format!("case {case}: solver/oracle deviation {worst:.3e} > 1e-9"),
            );
        }
    }
    CriterionResult::pass(
        ID,
        format!("{cases} protocols, worst deviation {worst:.3e} (tol 1e-9)"),
    )
}

/// The Hellman absorption identity holds on random absorbing chains.
pub fn criterion_08_hellman(opts: &VerifyOptions) -> CriterionResult {
    const ID: &str = "hellman-identity";
    let cases = if opts.quick { 40 } else { 200 };
    let mut r = gen::rng(0x5EED_0008);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n_signals = 2 + (case % 2);
        let m = 3 + (case % 4);
        let n_abs = 1 + (case % 2).min(m - 2);
        let env = gen::random_environment(&mut r, n_signals);
        let proto = gen::random_absorbing_chain(&mut r, m, n_signals, n_abs);
        let sigma = SenderStrategy::continue_everywhere(m);
        for &theta in &Theta::BOTH {
            match hellman_residual(&env, &proto, &sigma, theta) {
                Ok(res) => worst = worst.max(res + opts.hellman_fault),
                Err(e) => return CriterionResult::fail(ID, format!("case {case}: {e}")),
            }
        }
        if worst > 1e-9 {
            return CriterionResult::fail(ID, format!("case {case}: residual {worst:.3e} > 1e-9"));
        }
    }
    CriterionResult::pass(
        ID,
        format!("{cases} chains, worst residual {worst:.3e} (tol 1e-9)"),
    )
}

fn parsimonious_population(opts: &VerifyOptions) -> Vec<(Environment, crate::model::Protocol)> {
    let cases = if opts.quick { 150 } else { 1000 };
    let mut r = gen::rng(0x5EED_0009);
    (0..cases)
        .map(|case| {
            let n_signals = 2 + (case % 2);
            let m = 3 + (case % 4);
            let env = gen::random_environment(&mut r, n_signals);
            let proto = gen::random_parsimonious(&mut r, m, n_signals);
            (env, proto)
        })
        .collect()
}

/// The absorption-odds spread inequality holds on random parsimonious
/// protocols, strictly at four or more states with positive probabilities.
pub fn criterion_09_spread(opts: &VerifyOptions) -> CriterionResult {
    const ID: &str = "spread-inequality";
    let population = parsimonious_population(opts);
    let total = population.len();
    let mut strict_checked = 0usize;
    for (case, (env, proto)) in population.into_iter().enumerate() {
        let check = match spread_ratio(&env, &proto) {
            Ok(c) => c,
            Err(e) => return CriterionResult::fail(ID, format!("case {case}: {e}")),
        };
        if !check.ok {
            return CriterionResult::fail(
                ID,
                format!("case {case}: lhs {} > rhs {} + 1e-10", check.lhs, check.rhs),
            );
        }
        if let Some(strict) = check.strict {
            strict_checked += 1;
            if !strict {
                return CriterionResult::fail(
                    ID,
                    format!(
                        "case {case}: spread not strict at m >= 4 (lhs {} rhs {})",
                        check.lhs, check.rhs
                    ),
                );
            }
        }
    }
    CriterionResult::pass(
        ID,
        format!("{total} parsimonious protocols, strictness checked on {strict_checked}"),
    )
}

/// Hitting-frequency ratios across transient states stay within the
/// informativeness bound.
pub fn criterion_10_hitting_ratio_bound(opts: &VerifyOptions) -> CriterionResult {
    const ID: &str = "hitting-ratio-bound";
    let population = parsimonious_population(opts);
    let total = population.len();
    let mut worst_margin = f64::NEG_INFINITY;
    for (case, (env, proto)) in population.into_iter().enumerate() {
        let spread = match hitting_ratio_spread(&env, &proto) {
            Ok(s) => s,
            Err(e) => return CriterionResult::fail(ID, format!("case {case}: {e}")),
        };
        let bound = env.signal_model().gamma().powi(proto.m() as i32 - 3);
        worst_margin = worst_margin.max(spread - bound);
        if spread > bound + 1e-9 {
            return CriterionResult::fail(
                ID,
                format!("case {case}: ratio spread {spread} exceeds bound {bound}"),
            );
        }
    }
    CriterionResult::pass(
        ID,
        format!("{total} protocols, worst spread-minus-bound {worst_margin:.3e} (tol 1e-9)"),
    )
}

/// Reduction produces parsimonious output without losing states or receiver
/// payoff, and is idempotent.
pub fn criterion_11_reduction(opts: &VerifyOptions) -> CriterionResult {
    const ID: &str = "reduction-soundness";
    let cases = if opts.quick { 25 } else { 200 };
    let mut r = gen::rng(0x5EED_000B);
    let mut worst_gain = f64::INFINITY;
    for case in 0..cases {
        let n_signals = 2 + (case % 2);
        let m = 2 + (case % 5); // up to 6 states
        let env = gen::random_environment(&mut r, n_signals);
        let proto = gen::random_protocol(&mut r, m, n_signals);
        let ur_in = match best_response(&env, &proto)
            .map_err(|e| e.to_string())
            .and_then(|(_, s)| evaluate(&env, &proto, &s).map_err(|e| e.to_string()))
        {
            Ok(rep) => rep.u_receiver,
            Err(e) => return CriterionResult::fail(ID, format!("case {case}: {e}")),
        };
        let (out, trace) = match to_parsimonious(&env, &proto) {
            Ok(x) => x,
            Err(e) => return CriterionResult::fail(ID, format!("case {case}: {e}")),
        };
        let sh = shape(&out);
        let gain = trace.ur_final - ur_in;
        worst_gain = worst_gain.min(gain);
        if !sh.is_parsimonious || out.m() > proto.m() || gain < -1e-9 {
            return CriterionResult::fail(
                ID,
                format!(
                    "case {case}: parsimonious={} states {}->{} gain {gain:.3e}",
                    sh.is_parsimonious,
                    proto.m(),
                    out.m()
                ),
            );
        }
        let (again, _) = match to_parsimonious(&env, &out) {
            Ok(x) => x,
            Err(e) => return CriterionResult::fail(ID, format!("case {case} re-run: {e}")),
        };
        if again != out {
            return CriterionResult::fail(ID, format!("case {case}: reduction not idempotent"));
        }
    }
    CriterionResult::pass(
        ID,
        format!("{cases} protocols reduced; worst payoff gain {worst_gain:.3e} (floor -1e-9)"),
    )
}

/// Along the symmetric sweep: entry metrics are exactly one, absorbing
/// transition mass is linear in the exit scale, and the bias gap closes.
pub fn criterion_12_transition_diagnostics() -> CriterionResult {
    const ID: &str = "transition-diagnostics";
    let result = match symmetric_sweep() {
        Ok(r) => r,
        Err(e) => return CriterionResult::fail(ID, e.to_string()),
    };
    let entries_one = result
        .rows
        .iter()
        .all(|r| r.entry_lo == 1.0 && r.entry_hi == 1.0);
    let c = result.rows[0].max_abs_transition / result.rows[0].eps;
    let linear = result
        .rows
        .iter()
        .all(|r| r.max_abs_transition <= c * r.eps * (1.0 + 1e-9));
    let last = result.rows.last().unwrap();
    let bias_ok = last.bias_gap <= 1e-3;
    let ok = entries_one && linear && bias_ok;
    CriterionResult::from(
        ID,
        ok,
        format!(
            "entry metrics all 1: {entries_one}; mass <= {c:.4}*eps: {linear}; bias gap at \
             eps={}: {:.3e} (tol 1e-3)",
            last.eps, last.bias_gap
        ),
    )
}

/// Monte Carlo absorption frequencies match the fundamental matrix, and
/// both absorbing states occur after a shared signal prefix.
pub fn criterion_13_monte_carlo(opts: &VerifyOptions) -> CriterionResult {
    const ID: &str = "monte-carlo-consistency";
    let env = env_sym(0.7);
    let proto = figure3(&env, 0.1);
    let sigma = SenderStrategy::continue_everywhere(5);
    let runs = if opts.quick { 100_000 } else { 1_000_000 };
    let seed = 20_240_817;

    let mut details = Vec::new();
    let mut ok = true;
    let mut polarized = false;
    for &theta in &Theta::BOTH {
        let dense = match absorption(&env, &proto, &sigma, theta) {
            Ok(a) => a,
            Err(e) => return CriterionResult::fail(ID, e.to_string()),
        };
        let (sim, prefixes) = simulate_with_prefixes(&env, &proto, &sigma, theta, runs, seed, 2);
        for target in [0usize, 4] {
            let se = sim.mu_se[target].max(1e-9);
            let dev = (sim.mu_hat[target] - dense.mu[target]).abs();
            if dev > 3.0 * se {
                ok = false;
            }
            details.push(format!(
                "mu[{}]^{theta}: dense {:.6} sim {:.6} ({:.2} se)",
                target + 1,
                dense.mu[target],
                sim.mu_hat[target],
                dev / se
            ));
        }
        // Polarization witness: a single two-signal prefix after which both
        // absorbing states were reached in the sample.
        for counts in prefixes.values() {
            if counts.get(&0).copied().unwrap_or(0) > 0 && counts.get(&4).copied().unwrap_or(0) > 0
            {
                polarized = true;
            }
        }
    }
    if !polarized {
        ok = false;
    }
    details.push(format!("polarization witness: {polarized}"));
    CriterionResult::from(
        ID,
        ok,
        format!("{runs} runs, seed {seed}: {}", details.join("; ")),
    )
}

/// Closed-form comparative statics: the receiver's optimal value is
/// strictly increasing in accuracy and state count, the sender's limit
/// value is monotone with direction set by the prior.
pub fn criterion_14_comparative_statics() -> CriterionResult {
    const ID: &str = "comparative-statics";
    let q_grid: Vec<f64> = (0..9).map(|k| 0.55 + 0.05 * k as f64).collect();
    let mut ok = true;
    let mut notes = Vec::new();

    // Receiver: strictly increasing in q at p = 1/2, m = 5.
    let mut prev = f64::NEG_INFINITY;
    for &q in &q_grid {
        let v = receiver_optimal_value(&env_sym(q), 5).value;
        if v <= prev {
            ok = false;
            notes.push(format!("receiver not increasing at q={q}"));
        }
        prev = v;
    }
    // Receiver: strictly increasing in m at q = 0.7.
    let env = env_sym(0.7);
    let mut prev = f64::NEG_INFINITY;
    for m in 3..=8 {
        let v = receiver_optimal_value(&env, m).value;
        if v <= prev {
            ok = false;
            notes.push(format!("receiver not increasing at m={m}"));
        }
        prev = v;
    }
    // Sender: increasing in q for p < 1/2, decreasing for p > 1/2, over the
    // interior-regime grid points.
    for (p, increasing) in [(0.35, true), (0.65, false)] {
        let mut prev: Option<f64> = None;
        for &q in &q_grid {
            let sm = crate::model::SignalModel::symmetric_binary(q).unwrap();
            let env = Environment::new(p, sm).unwrap();
            if !is_interior(&env, 4) {
                prev = None;
                continue;
            }
            let v = sender_limit_value(&env, 4).unwrap();
            if let Some(prev_v) = prev {
                let fine = if increasing { v > prev_v } else { v < prev_v };
                if !fine {
                    ok = false;
                    notes.push(format!("sender not monotone at p={p} q={q}"));
                }
            }
            prev = Some(v);
        }
        // Same direction along the state-count grid.
        let sm = crate::model::SignalModel::symmetric_binary(0.7).unwrap();
        let env = Environment::new(p, sm).unwrap();
        let mut prev: Option<f64> = None;
        for m in 3..=8 {
            if !is_interior(&env, m) {
                prev = None;
                continue;
            }
            let v = sender_limit_value(&env, m).unwrap();
            if let Some(prev_v) = prev {
                let fine = if increasing { v > prev_v } else { v < prev_v };
                if !fine {
                    ok = false;
                    notes.push(format!("sender not monotone at p={p} m={m}"));
                }
            }
            prev = Some(v);
        }
    }
    let details = if notes.is_empty() {
        "receiver increasing on q- and m-grids; sender monotone per prior side".to_string()
    } else {
        notes.join("; ")
    };
    CriterionResult::from(ID, ok, details)
}
