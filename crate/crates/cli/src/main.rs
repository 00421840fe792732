//! Operator surface for the deterministic post-training toolkit: data
//! curation, supervised warm-up, staged RL, evaluation statistics, and
//! scaling regression over synthetic verifiable tasks.
//!
//! Exit codes: 0 success, 1 input error, 2 unsatisfiable or degenerate,
//! 3 divergence (with the last good checkpoint retained on disk).

mod curate;
mod eval;
mod regress;
mod rl;
mod sft;
mod util;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "deskrl", version, about = "Deterministic post-training toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a training corpus: dedup, eval-overlap scrub, length balance.
    Curate(curate::CurateArgs),
    /// Supervised warm-up from scripted traces; one checkpoint per epoch.
    Sft(sft::SftArgs),
    /// Staged RL from an initial checkpoint over a stage plan.
    Rl(rl::RlArgs),
    /// Outcome-matrix statistics: avg@n, pass@K, solve-rate histogram.
    Eval(eval::EvalArgs),
    /// Fit score = a·log2(x) + b·log2(y) + c over a CSV of points.
    Regress(regress::RegressArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 2 for usage errors by convention, but this tool
            // reserves 2 for unsatisfiable constraints; usage errors are
            // input errors (1). Help and version information exit 0.
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Curate(args) => curate::run(args),
        Command::Sft(args) => sft::run(args),
        Command::Rl(args) => rl::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Regress(args) => regress::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
