use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use anova_evidence::ledger::load_ledger;
use anova_evidence::report::{evaluate_ledger, render_json, render_table};
use anova_evidence::simulator::null_exceedance;
use anova_evidence::{null_tail_probability, threshold_ratio, Error, Execution, Mode, NullShape};

const EXIT_COMPUTE: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(
    name = "anova-evidence",
    version,
    about = "Evidential value of three-cell ANOVA-regression summaries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every study of a ledger (CSV or JSON).
    Compute {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "paper")]
        mode: ModeArg,
        #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
        prior_odds: f64,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Refuse to report anything if any row is rejected.
        #[arg(long)]
        strict: bool,
    },
    /// Bound on |Z_V| equivalent to V >= v, and its null probability.
    Threshold {
        #[arg(long, value_parser = above_one)]
        v: f64,
    },
    /// Monte Carlo estimate of P(V >= v) under independence.
    Simulate {
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        n: u64,
        #[arg(long, value_parser = sigma_triple)]
        sigma: Sigma,
        #[arg(long, value_parser = above_one)]
        v: f64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1000..))]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Paper,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Clone, Copy)]
struct Sigma([f64; 3]);

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive and finite, got {s}"))
    }
}

fn above_one(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if v > 1.0 {
        Ok(v)
    } else {
        Err(format!("must exceed 1, got {s}"))
    }
}

fn sigma_triple(s: &str) -> Result<Sigma, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("not a number: {p}"))
        })
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if parts.iter().all(|x| *x > 0.0 && x.is_finite()) => Ok(Sigma([a, b, c])),
        [_, _, _] => Err("sigma entries must be positive".into()),
        _ => Err(format!(
            "expected three comma-separated values, got {}",
            parts.len()
        )),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_COMPUTE
    })
}

fn compute(input: PathBuf, mode: Mode, prior_odds: f64, format: Format, strict: bool) -> ExitCode {
    let outcome = match load_ledger(&input) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    for e in &outcome.errors {
        eprintln!("error: {e}");
    }
    if strict && !outcome.errors.is_empty() {
        eprintln!(
            "error: {} row(s) rejected; --strict forbids partial output",
            outcome.errors.len()
        );
        return ExitCode::from(EXIT_INPUT);
    }
    let mut report = match evaluate_ledger(&outcome.ledger, mode, prior_odds, Execution::default())
    {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    report.errors = outcome.errors.iter().map(|e| e.to_string()).collect();
    match format {
        Format::Table => print!("{}", render_table(&report)),
        Format::Json => println!("{}", render_json(&report)),
    }
    if outcome.errors.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INPUT)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Compute {
            input,
            mode,
            prior_odds,
            format,
            strict,
        } => {
            let mode = match mode {
                ModeArg::Paper => Mode::Paper,
                ModeArg::Exact => Mode::Exact,
            };
            compute(input, mode, prior_odds, format, strict)
        }
        Command::Threshold { v } => {
            match threshold_ratio(v).and_then(|r| Ok((r, null_tail_probability(v)?))) {
                Ok((r, p)) => {
                    println!("{r:.4}, {p:.4}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Simulate {
            n,
            sigma,
            v,
            reps,
            seed,
        } => {
            let shape = NullShape {
                n: n as usize,
                sigma: sigma.0,
            };
            match null_exceedance(shape, v, reps, seed) {
                Ok(r) => {
                    println!("n: {}", r.n);
                    println!("sigma: {}, {}, {}", r.sigma[0], r.sigma[1], r.sigma[2]);
                    println!("v: {}", r.v_threshold);
                    println!("reps: {}", r.reps);
                    println!("seed: {}", r.seed);
                    println!("exceed_prob: {:.6}", r.exceed_prob);
                    println!("mc_stderr: {:.6}", r.mc_stderr);
                    println!("analytic_prob: {:.6}", r.analytic_prob);
                    println!("difference: {:+.6}", r.exceed_prob - r.analytic_prob);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_INPUT)
                }
            }
        }
    }
}
