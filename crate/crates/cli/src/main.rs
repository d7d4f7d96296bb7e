use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use sact_cli::{Cli, CliError, RunConfig};

fn main() -> ExitCode {
    let help = format!(
        "Defaults (override with --config FILE, ${} or flags):\n\n{}",
        sact_cli::config::CONFIG_ENV,
        RunConfig::default().to_toml()
    );
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    sact_cli::run(cli)?;
    Ok(())
}
