//! Command-line front end of the `kirkwood` laboratory: configuration,
//! cached command runs and CSV/JSON emission.

pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use clap::Parser;

pub use commands::{Ctx, Outcome};
pub use config::{Command, Flags, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "kirkwood", version, about = "Numerical laboratory for the 3:1 resonance of the restricted three-body problem")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

/// Resolves the configuration and runs the command on a pool of `workers` threads.
///
/// A numerical failure also leaves `error.json` in the output directory.
pub fn run(cli: &Cli) -> Result<Vec<Outcome>, CliError> {
    let env_cache = std::env::var_os(config::CACHE_ENV).map(Into::into);
    let cfg = RunConfig::resolve(cli.command, &cli.flags, env_cache)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
    let out_dir = cfg.out_dir.clone();
    let ctx = Ctx::new(cfg)?;
    let result = pool.install(|| ctx.run(cli.command));
    if let Err(e @ CliError::Numerical(_)) = &result {
        // best effort: the record also goes to stderr
        let _ = std::fs::create_dir_all(&out_dir).and_then(|()| std::fs::write(out_dir.join("error.json"), e.to_json() + "\n"));
    }
    result
}
