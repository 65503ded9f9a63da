//! Command-line front end: each subcommand runs one Monte Carlo experiment and
//! writes a CSV plus a JSON manifest describing the run.

pub mod args;
mod output;

use std::path::Path;

use cohdet::config::{load_config, render_config, validate_config};
use cohdet::montecarlo::{derive_seed, CalibrationResult, Perturbation};
use cohdet::{Detector, Error, Experiment, Hypothesis, ScenarioConfig, SearchConfig};

pub use args::{Cli, Command, RunArgs};
use output::{fmt_float, Csv};

/// Process exit status for a failure.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

/// Parses `START:STOP:STEP` (inclusive) or a single value.
pub fn parse_sinr(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let num = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| config_err(format!("sinr: cannot parse '{s}'")))
    };
    match parts.as_slice() {
        [single] => Ok(vec![num(single)?]),
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(config_err("sinr: need STEP > 0 and STOP >= START"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|k| start + k as f64 * step).collect())
        }
        _ => Err(config_err(format!("sinr: expected START:STOP:STEP, got '{spec}'"))),
    }
}

fn parse_floats(name: &str, list: &str) -> Result<Vec<f64>, Failure> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| config_err(format!("{name}: cannot parse '{s}'"))))
        .collect()
}

struct Context {
    exp: Experiment,
    seed: u64,
    args: RunArgs,
}

impl Context {
    fn new(args: &RunArgs) -> Result<Self, Failure> {
        let scenario = match &args.config {
            Some(path) => load_config(path)?,
            None => ScenarioConfig::default(),
        };
        let search = SearchConfig {
            mode: args.search.parse()?,
            epsilon: args.epsilon,
            n_max: args.nmax,
        };
        search.validate()?;
        if args.trials == 0 {
            return Err(config_err("trials: must be >= 1"));
        }
        let seed = args.seed.unwrap_or(scenario.rng_seed);
        let mut exp = Experiment::new(scenario);
        exp.search = search;
        exp.known_m = args.known_m;
        exp.known_aoa = args.known_aoa;
        exp.workers = args.workers;
        Ok(Self {
            exp,
            seed,
            args: args.clone(),
        })
    }

    fn calibration_seed(&self) -> u64 {
        derive_seed(self.seed, 0)
    }

    fn evaluation_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    fn detectors(&self, mos_only: bool) -> Result<Vec<Detector>, Failure> {
        let default = if mos_only { "aic,bic,gic" } else { "gamf,gasd,aic,bic,gic" };
        let list = self.args.detectors.as_deref().unwrap_or(default);
        let rhos = parse_floats("gic-rho", &self.args.gic_rho)?;
        Ok(Detector::parse_list(list, &rhos)?)
    }

    fn hypothesis(&self) -> Result<Hypothesis, Failure> {
        let h = match &self.args.hypothesis {
            Some(s) => s.parse()?,
            None => self.exp.scenario.signal_hypothesis(),
        };
        if h.n_coherent() > self.exp.scenario.n_coherent() {
            return Err(config_err(format!(
                "hypothesis: {h} needs more coherent AoAs than the scenario defines"
            )));
        }
        Ok(h)
    }

    fn calibrate(&self, detectors: &[Detector]) -> Result<Vec<CalibrationResult>, Failure> {
        log::info!(
            "calibrating {} detectors over {} H0 trials",
            detectors.len(),
            self.args.calib_trials
        );
        Ok(self
            .exp
            .calibrate(detectors, self.args.pfa, self.args.calib_trials, self.calibration_seed())?)
    }

    fn thresholds(&self, detectors: &[Detector]) -> Result<Vec<(Detector, f64)>, Failure> {
        match &self.args.thresholds {
            Some(path) => read_thresholds(path, detectors),
            None => Ok(self
                .calibrate(detectors)?
                .into_iter()
                .map(|c| (c.detector, c.threshold))
                .collect()),
        }
    }
}

/// Reads `detector,threshold,...` rows written by `calibrate`.
fn read_thresholds(path: &Path, detectors: &[Detector]) -> Result<Vec<(Detector, f64)>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("thresholds: cannot read {}: {e}", path.display())))?;
    let mut known = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let mut cols = line.split(',');
        let (Some(name), Some(value)) = (cols.next(), cols.next()) else {
            return Err(config_err(format!("thresholds: malformed row '{line}'")));
        };
        let detector: Detector = name.parse()?;
        let value: f64 = value
            .parse()
            .map_err(|_| config_err(format!("thresholds: bad value in '{line}'")))?;
        known.push((detector, value));
    }
    detectors
        .iter()
        .map(|d| {
            known
                .iter()
                .find(|(k, _)| k == d)
                .copied()
                .ok_or_else(|| config_err(format!("thresholds: no entry for {d}")))
        })
        .collect()
}

fn calibrate(ctx: &Context) -> Result<Csv, Failure> {
    let detectors = ctx.detectors(false)?;
    let mut csv = Csv::new(&["detector", "threshold", "n_trials", "target_pfa"]);
    for c in ctx.calibrate(&detectors)? {
        csv.row(vec![
            c.detector.name(),
            fmt_float(c.threshold),
            c.n_trials.to_string(),
            fmt_float(c.target_pfa),
        ]);
    }
    Ok(csv)
}

fn pd_curve(ctx: &Context) -> Result<Csv, Failure> {
    let detectors = ctx.detectors(false)?;
    let sinr = parse_sinr(&ctx.args.sinr)?;
    let hypothesis = ctx.hypothesis()?;
    if hypothesis == Hypothesis::H0 {
        return Err(config_err("hypothesis: pd-curve needs a signal hypothesis"));
    }
    let thresholds = ctx.thresholds(&detectors)?;
    let rows = ctx
        .exp
        .evaluate(&thresholds, hypothesis, &sinr, ctx.args.trials, ctx.evaluation_seed())?;
    let mut csv = Csv::new(&["detector", "sinr_db", "pd", "stderr", "n_trials"]);
    for m in rows {
        csv.row(vec![
            m.detector.name(),
            fmt_float(m.sinr_db),
            fmt_float(m.pd()),
            fmt_float(m.stderr()),
            m.n_trials.to_string(),
        ]);
    }
    Ok(csv)
}

fn mos_rows(ctx: &Context) -> Result<Vec<cohdet::montecarlo::PointMetrics>, Failure> {
    let detectors = ctx.detectors(true)?;
    if let Some(d) = detectors.iter().find(|d| !d.is_mos()) {
        return Err(Error::UnsupportedMetric(format!("{d} does not classify")).into());
    }
    let sinr = parse_sinr(&ctx.args.sinr)?;
    let hypothesis = ctx.hypothesis()?;
    let thresholds = ctx.thresholds(&detectors)?;
    Ok(ctx
        .exp
        .evaluate(&thresholds, hypothesis, &sinr, ctx.args.trials, ctx.evaluation_seed())?)
}

fn pcc(ctx: &Context) -> Result<Csv, Failure> {
    let mut csv = Csv::new(&[
        "detector",
        "sinr_db",
        "declared_order",
        "probability",
        "conditional_probability",
    ]);
    for m in mos_rows(ctx)? {
        let n_classes = m.class_counts.as_ref().map_or(0, Vec::len);
        for k in 0..n_classes {
            let joint = m.pc(k).unwrap_or(0.0);
            let conditional = if m.n_detected == 0 {
                f64::NAN
            } else {
                joint * m.n_trials as f64 / m.n_detected as f64
            };
            csv.row(vec![
                m.detector.name(),
                fmt_float(m.sinr_db),
                k.to_string(),
                fmt_float(joint),
                fmt_float(conditional),
            ]);
        }
    }
    Ok(csv)
}

fn rmse(ctx: &Context) -> Result<Csv, Failure> {
    if ctx.hypothesis()?.n_coherent() == 0 {
        return Err(config_err("hypothesis: RMSE needs at least one coherent signal"));
    }
    let mut csv = Csv::new(&["detector", "sinr_db", "rmse_deg", "n_contributing", "n_excluded"]);
    for m in mos_rows(ctx)? {
        csv.row(vec![
            m.detector.name(),
            fmt_float(m.sinr_db),
            m.rmse().map_or_else(|| "NA".to_string(), fmt_float),
            m.n_contributing.to_string(),
            m.n_excluded.to_string(),
        ]);
    }
    Ok(csv)
}

fn pfa_sens(ctx: &Context) -> Result<Csv, Failure> {
    let detectors = ctx.detectors(false)?;
    let thresholds = ctx.thresholds(&detectors)?;
    let mut perturbations: Vec<Perturbation> = parse_floats("rho-c", &ctx.args.rho_c)?
        .into_iter()
        .map(Perturbation::RhoC)
        .collect();
    perturbations.extend(parse_floats("cnr-db", &ctx.args.cnr_db)?.into_iter().map(Perturbation::CnrDb));
    let rows = ctx
        .exp
        .pfa_sensitivity(&thresholds, &perturbations, ctx.args.trials, ctx.evaluation_seed())?;
    let mut csv = Csv::new(&["parameter", "value", "detector", "threshold", "pfa", "stderr", "n_trials"]);
    for r in rows {
        csv.row(vec![
            r.perturbation.parameter().to_string(),
            fmt_float(r.perturbation.value()),
            r.detector.name(),
            fmt_float(r.threshold),
            fmt_float(r.pfa()),
            fmt_float(r.stderr()),
            r.n_trials.to_string(),
        ]);
    }
    Ok(csv)
}

fn convergence(ctx: &Context) -> Result<Csv, Failure> {
    let cfg = &ctx.exp.scenario;
    let hypotheses: Vec<Hypothesis> = match &ctx.args.hypotheses {
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<Hypothesis>())
            .collect::<cohdet::Result<_>>()?,
        None => std::iter::once(Hypothesis::H0)
            .chain((0..=cfg.n_coherent()).map(Hypothesis::H1))
            .collect(),
    };
    if let Some(h) = hypotheses.iter().find(|h| h.n_coherent() > cfg.n_coherent()) {
        return Err(config_err(format!("hypotheses: {h} exceeds the scenario's coherent AoAs")));
    }
    if cfg.m_cap == 0 {
        return Err(config_err("m_cap: convergence needs M_c >= 1"));
    }
    let orders: Vec<usize> = (2.min(cfg.m_cap)..=cfg.m_cap).collect();
    let sinr = parse_sinr(&ctx.args.sinr)?[0];
    let rows = ctx.exp.convergence_study(
        &hypotheses,
        &orders,
        sinr,
        ctx.args.cycles,
        ctx.args.trials,
        ctx.evaluation_seed(),
    )?;
    let mut csv = Csv::new(&["hypothesis", "order", "cycle", "rms_delta"]);
    for r in rows {
        csv.row(vec![
            r.hypothesis.to_string(),
            r.order.to_string(),
            r.cycle.to_string(),
            fmt_float(r.rms_delta),
        ]);
    }
    Ok(csv)
}

fn manifest(command: &str, ctx: &Context, argv: &[String]) -> serde_json::Value {
    let a = &ctx.args;
    serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "argv": argv,
        "seed": ctx.seed,
        "calibration_seed": ctx.calibration_seed(),
        "evaluation_seed": ctx.evaluation_seed(),
        "scenario": render_config(&ctx.exp.scenario),
        "search": {
            "mode": ctx.exp.search.mode.to_string(),
            "epsilon": ctx.exp.search.epsilon,
            "n_max": ctx.exp.search.n_max,
        },
        "known_m": ctx.exp.known_m,
        "known_aoa": ctx.exp.known_aoa,
        "target_pfa": a.pfa,
        "trials": a.trials,
        "calib_trials": a.calib_trials,
        "thresholds_file": a.thresholds.as_ref().map(|p| p.display().to_string()),
        "workers": a.workers,
    })
}

fn write_outputs(csv: &Csv, out: Option<&Path>, manifest: serde_json::Value) -> Result<(), Failure> {
    let Some(path) = out else {
        print!("{}", csv.render());
        return Ok(());
    };
    let io = |e: std::io::Error| Failure::Runtime(format!("cannot write {}: {e}", path.display()));
    std::fs::write(path, csv.render()).map_err(io)?;
    let mut m = path.as_os_str().to_owned();
    m.push(".manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON") + "\n";
    std::fs::write(&m, text).map_err(io)
}

/// Runs one parsed command; `argv` is echoed into the manifest.
pub fn run(cli: &Cli, argv: &[String]) -> Result<(), Failure> {
    let (args, job): (&RunArgs, fn(&Context) -> Result<Csv, Failure>) = match &cli.command {
        Command::Validate { config } => {
            return match validate_config(config) {
                Ok(cfg) => {
                    print!("{}", render_config(&cfg));
                    Ok(())
                }
                Err(issues) => Err(Failure::Config(
                    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"),
                )),
            };
        }
        Command::Calibrate(a) => (a, calibrate),
        Command::PdCurve(a) => (a, pd_curve),
        Command::Pcc(a) => (a, pcc),
        Command::Rmse(a) => (a, rmse),
        Command::PfaSens(a) => (a, pfa_sens),
        Command::Convergence(a) => (a, convergence),
    };
    let ctx = Context::new(args)?;
    let csv = job(&ctx)?;
    write_outputs(&csv, args.out.as_deref(), manifest(cli.command.name(), &ctx, argv))
}
