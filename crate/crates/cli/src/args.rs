use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cohdet", version, about = "Detection of a radar target among an unknown number of coherent signals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Thresholds for a target false-alarm probability.
    Calibrate(RunArgs),
    /// Detection probability versus SINR.
    PdCurve(RunArgs),
    /// Distribution of the declared order (MOS detectors).
    Pcc(RunArgs),
    /// AoA root mean square error versus SINR (MOS detectors).
    Rmse(RunArgs),
    /// False-alarm rate under perturbed clutter parameters at nominal thresholds.
    PfaSens(RunArgs),
    /// RMS relative log-likelihood change per cycle of the cyclic search.
    Convergence(RunArgs),
    /// Check a scenario file and print the resolved configuration.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate(_) => "calibrate",
            Command::PdCurve(_) => "pd-curve",
            Command::Pcc(_) => "pcc",
            Command::Rmse(_) => "rmse",
            Command::PfaSens(_) => "pfa-sens",
            Command::Convergence(_) => "convergence",
            Command::Validate { .. } => "validate",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario file; the built-in defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV; a `<out>.manifest.json` is written next to it. Stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated: gamf, gasd, aic, bic, gic (one per --gic-rho), gic:R.
    #[arg(long)]
    pub detectors: Option<String>,
    #[arg(long, default_value = "20,80")]
    pub gic_rho: String,
    /// SINR sweep in dB as START:STOP:STEP (or a single value).
    #[arg(long, default_value = "-10:20:1", allow_hyphen_values = true)]
    pub sinr: String,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 100_000)]
    pub calib_trials: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub pfa: f64,
    /// Defaults to the scenario's rng_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "cyclic")]
    pub search: String,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 5)]
    pub nmax: usize,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Whiten with the true interference covariance.
    #[arg(long)]
    pub known_m: bool,
    /// Use the true coherent AoAs instead of searching.
    #[arg(long)]
    pub known_aoa: bool,
    /// Hypothesis of the simulated data (h0, h1_0, h1_1, ...); defaults to the scene's own.
    #[arg(long)]
    pub hypothesis: Option<String>,
    /// Thresholds from a previous `calibrate` CSV instead of calibrating again.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// pfa-sens: one-lag clutter correlations to try.
    #[arg(long, default_value = "0.8,0.85,0.9,0.95")]
    pub rho_c: String,
    /// pfa-sens: clutter-to-noise ratios to try, dB.
    #[arg(long, default_value = "10,15,20,25,30", allow_hyphen_values = true)]
    pub cnr_db: String,
    /// convergence: number of cycles reported.
    #[arg(long, default_value_t = 10)]
    pub cycles: usize,
    /// convergence: hypotheses, comma separated (default h0 and every H1 the scene allows).
    #[arg(long)]
    pub hypotheses: Option<String>,
}
