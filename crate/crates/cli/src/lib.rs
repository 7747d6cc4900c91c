//! The `attnkit` command line: decode-path equivalence, cost tables,
//! variance calibration, tensor-parallel simulation, roofline estimates and
//! a seeded selftest over all of them.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad usage (unknown
//! subcommand or variant, invalid configuration, unsupported TP degree).

pub mod commands;
pub mod config;
pub mod equiv;
pub mod suite;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use attnkit_core::AttnError;

pub use commands::{Done, TableKind};
pub use config::{threads, Format, RunConfig};
pub use equiv::{equiv_run, equiv_trial, EquivReport, EQUIV_TOL};
pub use suite::{determinism, format_report, run_suite, selftest, Criterion};

#[derive(Debug, Parser)]
#[command(name = "attnkit", version, about = "Attention-mechanism verification kit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare naive and absorbed latent decoding on random instances.
    Equiv(Common),
    /// Print the loading or intensity table.
    Tables {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = TableKind::Loading)]
        table: TableKind,
    },
    /// Estimate component variances and check the scaling factors.
    Variance {
        #[command(flatten)]
        common: Common,
        /// Force the scaling factors on and check every ratio against 1.
        #[arg(long)]
        calibrate: bool,
    },
    /// Shard weights and cache over simulated devices and decode one token.
    SimulateTp(Common),
    /// Roofline decode-time estimates per method and TP degree.
    Roofline(Common),
    /// Run the whole verification matrix twice and report each criterion.
    Selftest(Common),
}

/// Flags shared by every subcommand; each overrides the matching field of
/// the `--config` file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub d_hr: Option<usize>,
    #[arg(long)]
    pub d_c: Option<usize>,
    #[arg(long)]
    pub d_cq: Option<usize>,
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub beta_q: Option<usize>,
    #[arg(long)]
    pub beta_kv: Option<usize>,
    #[arg(long)]
    pub branches: Option<usize>,
    #[arg(long)]
    pub scaling: Option<bool>,
    #[arg(long)]
    pub gated: Option<bool>,
    #[arg(long)]
    pub rope_base: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// TP degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub tp: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
    /// Weight standard deviation σ_w.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// kimi or main.
    #[arg(long)]
    pub context: Option<String>,
    /// Cached tokens for intensity and roofline figures.
    #[arg(long)]
    pub tokens: Option<u64>,
}

impl Common {
    fn flags(&self) -> RunConfig {
        RunConfig {
            variant: self.variant.clone(),
            h: self.h,
            d: self.d,
            d_h: self.d_h,
            d_hr: self.d_hr,
            d_c: self.d_c,
            d_cq: self.d_cq,
            g: self.g,
            beta_q: self.beta_q,
            beta_kv: self.beta_kv,
            branches: self.branches,
            scaling_enabled: self.scaling,
            gated: self.gated,
            rope_base: self.rope_base,
            seed: self.seed,
            trials: self.trials,
            tp: self.tp.clone(),
            hardware: None,
            format: self.format,
            output: self.out.clone(),
            sigma_w: self.sigma,
            context: self.context.clone(),
            tokens: self.tokens,
        }
    }

    /// The config file (if any) with these flags on top.
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        Ok(file.overlay(self.flags()))
    }
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Equiv(c) | Command::SimulateTp(c) | Command::Roofline(c) | Command::Selftest(c) => c,
            Command::Tables { common, .. } | Command::Variance { common, .. } => common,
        }
    }
}

/// Run one parsed command.
pub fn dispatch(cmd: &Command) -> anyhow::Result<(RunConfig, Done)> {
    let rc = cmd.common().resolve()?;
    let threads = threads()?;
    let done = match cmd {
        Command::Equiv(_) => commands::equiv(&rc)?,
        Command::Tables { table, .. } => commands::tables(&rc, *table)?,
        Command::Variance { calibrate, .. } => commands::variance(&rc, *calibrate, threads)?,
        Command::SimulateTp(_) => commands::simulate_tp(&rc, threads)?,
        Command::Roofline(_) => commands::roofline(&rc)?,
        Command::Selftest(_) => commands::selftest(&rc, threads)?,
    };
    Ok((rc, done))
}

/// Usage errors exit 2, failed computations 1.
#[must_use]
pub fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<AttnError>() {
        Some(AttnError::Config(_) | AttnError::UnsupportedTp { .. }) => 2,
        _ => 1,
    }
}

/// Parse `args`, run, write the body to the output path or `out`, and
/// return the exit code.
pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok((rc, done)) => {
            let written = match &rc.output {
                Some(path) => std::fs::write(path, &done.body).map_err(|e| format!("cannot write {}: {e}", path.display())),
                None => out.write_all(done.body.as_bytes()).map_err(|e| e.to_string()),
            };
            if let Err(msg) = written {
                let _ = writeln!(err, "error: {msg}");
                return 1;
            }
            if let Some(note) = done.note {
                let _ = writeln!(err, "{note}");
            }
            done.code
        }
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(err, "error: {e}");
            if code == 2 && !matches!(e.downcast_ref::<AttnError>(), Some(AttnError::UnsupportedTp { .. })) {
                let _ = writeln!(err, "\n{}", Cli::command().render_usage());
            }
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("attnkit").chain(args.iter().copied()).map(OsString::from);
        let code = run(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_variant_is_usage_error() {
        let (code, _, err) = call(&["equiv", "--variant", "xyz", "--trials", "1"]);
        assert_eq!(code, 2);
        assert!(err.contains("unknown variant") && err.contains("Usage"), "{err}");
    }

    #[test]
    fn unknown_subcommand() {
        let (code, _, err) = call(&["frobnicate"]);
        assert_eq!(code, 2);
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn tp_list_parses() {
        let cli = Cli::try_parse_from(["attnkit", "simulate-tp", "--variant", "mla", "--tp", "1,2,4"]).unwrap();
        assert_eq!(cli.command.common().tp, Some(vec![1, 2, 4]));
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("simulate-tp"));
    }
}
