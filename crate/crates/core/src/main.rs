use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kantorovich1d::error::Error;
use kantorovich1d::sweep::{error_json, exit_code, read_config, run, Mode, RunOptions};

/// Approximate 1-D Kantorovich potentials from closed-form dual stresses.
#[derive(Parser, Debug)]
#[command(name = "kantorovich1d", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for one k: potential samples CSV plus an energy report.
    Solve(CommonArgs),
    /// Solve for every k in the config and write one CSV row per k.
    Sweep(CommonArgs),
    /// Run the invariant suite for one k; exits 4 if any check fails.
    Verify(CommonArgs),
    /// Limit values: tent Kantorovich value and limit balance constants.
    Oracle(CommonArgs),
    /// Run whichever mode the config's `mode` key names.
    Run(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Problem config (TOML)
    #[arg(long)]
    config: PathBuf,

    /// Regularization index for solve and verify
    #[arg(long, default_value_t = 8.0)]
    k: f64,

    /// Output path; overrides the config, standard output when neither is set
    #[arg(long)]
    out: Option<PathBuf>,

    /// Accept touching or overlapping supports (solve only, uncertified)
    #[arg(long)]
    experimental_overlap: bool,

    /// Break the named verify check on purpose
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

fn execute(mode: Option<Mode>, args: CommonArgs) -> Result<i32, Error> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Io { path: args.config.display().to_string(), message: e.to_string() })?;
    // The overlap flag may come from the command line instead of the document;
    // `run` validates after merging it.
    let config = read_config(&text)?;
    let mode =
        mode.or(config.mode).ok_or_else(|| Error::Config("`run` needs a `mode` key in the config".into()))?;
    let opts = RunOptions {
        k: Some(args.k),
        out: args.out,
        experimental_overlap: args.experimental_overlap,
        inject_fault: args.inject_fault,
    };
    run(mode, &config, &opts)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Solve(a) => (Some(Mode::Solve), a),
        Command::Sweep(a) => (Some(Mode::Sweep), a),
        Command::Verify(a) => (Some(Mode::Verify), a),
        Command::Oracle(a) => (Some(Mode::Oracle), a),
        Command::Run(a) => (None, a),
    };
    let code = match execute(mode, args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
