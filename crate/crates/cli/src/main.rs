use std::process::ExitCode;

use clap::Parser;
use ebse_cli::args::{Cli, Command, Toggle};
use ebse_cli::commands;
use ebse_cli::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::cmd_synth(&a.resolve()?),
        Command::Simulate { run, design } => commands::cmd_simulate(&run.resolve()?, design.as_deref()),
        Command::Sweep(a) => commands::cmd_sweep(&a.resolve()?),
        Command::Baseline(a) => commands::cmd_baseline(&a.resolve()?),
        Command::VerifyDesign { run, design } => commands::cmd_verify(&run.resolve()?, &design),
        Command::DemoAppf { input_sharing, steps } => {
            let modes = match input_sharing {
                Some(Toggle::On) => vec![true],
                Some(Toggle::Off) => vec![false],
                None => vec![true, false],
            };
            commands::cmd_demo(&modes, steps)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap would exit 2, which is reserved for infeasible designs
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
