//! `ppl` — persuasion protocol lab.
//!
//! Subcommands: `evaluate` a protocol file, `sweep` the near-optimal ladder
//! family, `reduce` a protocol to parsimonious form, and `verify` the
//! acceptance battery. Exit codes: 0 ok, 1 verification failure, 2 invalid
//! input, 3 regime or precondition error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use persuasion::best_response::best_response;
use persuasion::chain::absorption;
use persuasion::family::{geometric_grid, sweep, FamilyError};
use persuasion::gen;
use persuasion::io::{build, document_from, parse_document, InputError};
use persuasion::model::{classify_states, shape, Environment, SignalModel, Theta};
use persuasion::payoffs::{evaluate, receiver_optimal_value, sender_limit_value};
use persuasion::reduction::to_parsimonious;
use persuasion::verify::{run_all, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "ppl",
    version,
    about = "equilibrium analysis of finite-memory persuasion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and score a protocol file: shape, sender value, best
    /// response, absorption, payoffs.
    Evaluate(EvaluateArgs),
    /// Sweep the ladder family against the closed-form optimal values and
    /// write a CSV table.
    Sweep(SweepArgs),
    /// Reduce a protocol to parsimonious form, reporting the step trace.
    Reduce(ReduceArgs),
    /// Run the acceptance criteria.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct EvaluateArgs {
    /// Protocol JSON file.
    #[arg(long)]
    input: PathBuf,
    /// Also write the report to this file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed recorded in the report (evaluation itself is deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Number of memory states.
    #[arg(long)]
    m: usize,
    /// Binary symmetric signal accuracy in (1/2, 1).
    #[arg(long, default_value_t = 0.7)]
    q: f64,
    /// Prior probability of the high state.
    #[arg(long, default_value_t = 0.5)]
    prior: f64,
    /// Largest exit-scale of the grid.
    #[arg(long, default_value_t = 1.0)]
    eps_max: f64,
    /// Smallest exit-scale of the grid.
    #[arg(long, default_value_t = 1e-6)]
    eps_min: f64,
    /// Geometric ratio between grid points.
    #[arg(long, default_value_t = 10.0)]
    eps_ratio: f64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed recorded in the CSV header (the sweep is deterministic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReduceArgs {
    /// Protocol JSON file. Omitted: reduce a random protocol drawn from
    /// --seed with --m states.
    #[arg(long)]
    input: Option<PathBuf>,
    /// States of the random protocol when --input is omitted.
    #[arg(long, default_value_t = 5)]
    m: usize,
    /// Write the reduction report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Include the full step trace in the report.
    #[arg(long)]
    trace: bool,
    /// Seed for the random protocol (and recorded in the report).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run the reduced-budget smoke suite.
    #[arg(long)]
    quick: bool,
    /// Test instrumentation: offset added to Hellman residuals to exercise
    /// the failure path.
    #[arg(long, hide = true, default_value_t = 0.0)]
    inject_hellman_fault: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Reduce(args) => cmd_reduce(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

fn read_protocol(path: &PathBuf) -> Result<(Environment, persuasion::Protocol), ExitCode> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return Err(ExitCode::from(2));
        }
    };
    let doc = match parse_document(&text) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("invalid document: {e}");
            return Err(ExitCode::from(2));
        }
    };
    match build(&doc) {
        Ok(pair) => Ok(pair),
        Err(InputError::Invalid(report)) => {
            eprintln!("protocol failed validation:\n{report}");
            Err(ExitCode::from(2))
        }
        Err(e) => {
            eprintln!("{e}");
            Err(ExitCode::from(2))
        }
    }
}

fn emit(text: &str, output: &Option<PathBuf>) -> ExitCode {
    if let Some(path) = output {
        if let Err(e) = std::fs::write(path, text) {
            eprintln!("cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    println!("{text}");
    ExitCode::SUCCESS
}

fn theta_json(
    env: &Environment,
    proto: &persuasion::Protocol,
    sigma: &persuasion::SenderStrategy,
    theta: Theta,
) -> serde_json::Value {
    match absorption(env, proto, sigma, theta) {
        Ok(a) => json!({
            "mu": a.mu,
            "end_prob": a.end_prob,
            "trapped_mass": a.trapped_mass,
            "nu": a.nu,
            "expected_time": a.expected_time,
        }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> ExitCode {
    let config = format!(
        "ppl evaluate --input {} --seed {}",
        args.input.display(),
        args.seed
    );
    let (env, proto) = match read_protocol(&args.input) {
        Ok(x) => x,
        Err(code) => return code,
    };
    let (vf, sigma) = match best_response(&env, &proto) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("stopping solver failed: {e}");
            return ExitCode::from(3);
        }
    };
    let payoff = match evaluate(&env, &proto, &sigma) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("payoff evaluation failed: {e}");
            return ExitCode::from(3);
        }
    };
    let class = classify_states(&proto);
    let sh = shape(&proto);
    let mut warnings = Vec::new();
    if vf.min() >= 1.0 - 1e-9 {
        warnings.push("fully manipulable: the sender's value is 1 from every state".to_string());
    }
    let ties = env.signal_model().extreme_ties();
    if !ties.is_empty() {
        let names: Vec<&str> = ties
            .iter()
            .map(|&s| env.signal_model().signal_name(s))
            .collect();
        warnings.push(format!(
            "signals {names:?} tie an extreme likelihood ratio; they are kept distinct \
             but behave identically to the extreme pair"
        ));
    }
    let one_based = |set: &std::collections::BTreeSet<usize>| -> Vec<usize> {
        set.iter().map(|i| i + 1).collect()
    };
    let report = json!({
        "config": config,
        "seed": args.seed,
        "validation": "ok",
        "classification": {
            "absorbing": one_based(&class.absorbing),
            "transient": one_based(&class.transient),
            "recurrent_classes": class.recurrent_classes.iter().map(&one_based).collect::<Vec<_>>(),
            "reachable": one_based(&class.reachable),
        },
        "shape": {
            "is_simple": sh.is_simple,
            "is_parsimonious": sh.is_parsimonious,
            "lo_abs": sh.lo_abs.map(|i| i + 1),
            "hi_abs": sh.hi_abs.map(|i| i + 1),
        },
        "sender_value": {
            "H": vf.values(Theta::H),
            "L": vf.values(Theta::L),
        },
        "best_response": {
            "stop_H": (0..proto.m()).map(|i| sigma.stops(i, Theta::H)).collect::<Vec<_>>(),
            "stop_L": (0..proto.m()).map(|i| sigma.stops(i, Theta::L)).collect::<Vec<_>>(),
        },
        "absorption": {
            "H": theta_json(&env, &proto, &sigma, Theta::H),
            "L": theta_json(&env, &proto, &sigma, Theta::L),
        },
        "payoff": payoff,
        "warnings": warnings,
    });
    emit(
        &serde_json::to_string_pretty(&report).unwrap(),
        &args.output,
    )
}

fn cmd_sweep(args: SweepArgs) -> ExitCode {
    let config = format!(
        "ppl sweep --m {} --q {} --prior {} --eps-max {} --eps-min {} --eps-ratio {} --seed {}",
        args.m, args.q, args.prior, args.eps_max, args.eps_min, args.eps_ratio, args.seed
    );
    let sm = match SignalModel::symmetric_binary(args.q) {
        Ok(sm) => sm,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    let env = match Environment::new(args.prior, sm) {
        Ok(env) => env,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if args.m < 3 || args.eps_min <= 0.0 || args.eps_max < args.eps_min || args.eps_ratio <= 1.0 {
        eprintln!("sweep needs m >= 3 and a decreasing positive geometric grid");
        return ExitCode::from(2);
    }
    let grid = geometric_grid(args.eps_max, args.eps_min, args.eps_ratio);
    let result = match sweep(&env, args.m, &grid) {
        Ok(r) => r,
        Err(FamilyError::RegimeError { budget, kappa }) => {
            eprintln!(
                "regime error: gamma^(m-2) = {budget} <= kappa = {kappa}; no family member \
                 beats acting on the prior. Recommendation: take max(p, 1-p) = {} by \
                 committing to the better action outright.",
                args.prior.max(1.0 - args.prior)
            );
            return ExitCode::from(3);
        }
        Err(e) => {
            eprintln!("sweep failed: {e}");
            return ExitCode::from(3);
        }
    };
    let mut out = Vec::new();
    result.write_csv(&mut out, &config).unwrap();
    let text = String::from_utf8(out).unwrap();
    if let Some(path) = &args.output {
        if let Err(e) = std::fs::write(path, &text) {
            eprintln!("cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    } else {
        print!("{text}");
        std::io::stdout().flush().ok();
    }
    let receiver = receiver_optimal_value(&env, args.m);
    let sender = sender_limit_value(&env, args.m)
        .map(|v| v.to_string())
        .unwrap_or_else(|_| "indeterminate (knife edge)".to_string());
    eprintln!(
        "receiver target {} ({:?}, attained: {}), sender target {}, final gap {:.3e}",
        receiver.value,
        receiver.regime,
        receiver.attained,
        sender,
        result.final_gap()
    );
    ExitCode::SUCCESS
}

fn cmd_reduce(args: ReduceArgs) -> ExitCode {
    let config = match &args.input {
        Some(path) => format!(
            "ppl reduce --input {} --seed {} --trace {}",
            path.display(),
            args.seed,
            args.trace
        ),
        None => format!(
            "ppl reduce --m {} --seed {} --trace {}",
            args.m, args.seed, args.trace
        ),
    };
    let (env, proto) = match &args.input {
        Some(path) => match read_protocol(path) {
            Ok(x) => x,
            Err(code) => return code,
        },
        None => {
            if args.m < 2 {
                eprintln!("random reduction needs --m >= 2");
                return ExitCode::from(2);
            }
            let mut r = gen::rng(args.seed);
            let env = gen::random_environment(&mut r, 2);
            let proto = gen::random_protocol(&mut r, args.m, 2);
            (env, proto)
        }
    };
    let (reduced, trace) = match to_parsimonious(&env, &proto) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("reduction failed: {e}");
            return ExitCode::from(3);
        }
    };
    let doc = document_from(&env, &reduced);
    let mut report = json!({
        "config": config,
        "seed": args.seed,
        "ur_before": trace.ur_initial,
        "ur_after": trace.ur_final,
        "states_before": proto.m(),
        "states_after": reduced.m(),
        "protocol": doc,
    });
    if args.trace {
        report["trace"] = serde_json::to_value(&trace).unwrap();
    }
    eprintln!(
        "U^R before {} -> after {} ({} -> {} states, {} steps)",
        trace.ur_initial,
        trace.ur_final,
        proto.m(),
        reduced.m(),
        trace.steps.len()
    );
    emit(
        &serde_json::to_string_pretty(&report).unwrap(),
        &args.output,
    )
}

fn cmd_verify(args: VerifyArgs) -> ExitCode {
    let opts = VerifyOptions {
        quick: args.quick,
        hellman_fault: args.inject_hellman_fault,
    };
    let results = run_all(&opts);
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{} {:<28} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.details
        );
        if !r.passed {
            failed.push(r.id);
        }
    }
    let summary = json!({
        "mode": if args.quick { "quick" } else { "full" },
        "total": results.len(),
        "failed": failed,
    });
    println!("{summary}");
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
