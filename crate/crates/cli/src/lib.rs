//! Command implementations behind the `parkbench` binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod fsio;
pub mod manifest;
pub mod svg;

pub use error::CliError;

use args::{Cli, Command};

/// Runs one parsed command; `argv` is recorded in manifests.
pub fn dispatch(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => {
            let census = commands::gen::run(a, argv)?;
            print!("{}", census.render());
        }
        Command::Train(a) => {
            let s = commands::train::run(a, argv)?;
            println!(
                "checkpoint {} (best epoch {}, val L2 {})",
                s.checkpoint.display(),
                s.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
                s.best_val_l2.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
            );
        }
        Command::Eval(a) => {
            commands::eval::run(a, argv)?;
        }
        Command::Plot(a) => {
            commands::plot::run(a, argv)?;
            println!("wrote {}", a.out.display());
        }
        Command::Gradcheck(a) => {
            commands::gradcheck::run(a)?;
        }
    }
    Ok(())
}
