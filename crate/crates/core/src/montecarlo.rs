//! Threshold calibration and Monte Carlo estimation of `P_fa`, `P_d`,
//! classification probabilities and AoA RMSE.
//!
//! Trial `t` of a run seeded with `s` draws from ChaCha8 seeded with `s` on
//! stream `t`. Results therefore do not depend on scheduling, and the same
//! trial index sees the same noise at every SINR point of a sweep.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sample_covariance, whiten_with, CMatrix, WhitenedCache, Whitening, C64};
use crate::search::{candidate_angles, maximize_on, SearchConfig, SearchMode, SteeringProjection};
use crate::signal::{steering_matrix, steering_vector, DataBatch, Hypothesis, ScenarioConfig, Synthesizer};
use crate::stats::{gamf, gasd, lambda_0, penalized_argmax, HypothesisResult, PenaltyRule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Detector {
    Gamf,
    Gasd,
    Mos(PenaltyRule),
}

impl Detector {
    pub fn name(&self) -> String {
        match self {
            Detector::Gamf => "GAMF".into(),
            Detector::Gasd => "GASD".into(),
            Detector::Mos(rule) => rule.name(),
        }
    }

    pub fn is_mos(&self) -> bool {
        matches!(self, Detector::Mos(_))
    }

    /// GAMF, GASD, AIC-D, BIC-D and GIC-D for ρ = 20 and 80.
    pub fn standard_set() -> Vec<Detector> {
        vec![
            Detector::Gamf,
            Detector::Gasd,
            Detector::Mos(PenaltyRule::Aic),
            Detector::Mos(PenaltyRule::Bic),
            Detector::Mos(PenaltyRule::Gic { rho: 20.0 }),
            Detector::Mos(PenaltyRule::Gic { rho: 80.0 }),
        ]
    }

    /// Parses a comma-separated list. A bare `gic` expands to one detector per
    /// value in `gic_rhos`; `gic:R` names a single ρ.
    pub fn parse_list(list: &str, gic_rhos: &[f64]) -> Result<Vec<Detector>> {
        let mut out = Vec::new();
        for token in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let lower = token.to_ascii_lowercase();
            if lower == "gic" || lower == "gic-d" {
                if gic_rhos.is_empty() {
                    return Err(Error::config("gic_rho", "GIC-D listed without any rho value"));
                }
                for &rho in gic_rhos {
                    out.push(Detector::Mos(PenaltyRule::gic(rho)?));
                }
            } else {
                out.push(token.parse()?);
            }
        }
        if out.is_empty() {
            return Err(Error::config("detectors", "detector list is empty"));
        }
        Ok(out)
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let rho_of = |rest: &str| -> Result<Detector> {
            let rho: f64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::config("detectors", format!("bad GIC rho in '{s}'")))?;
            Ok(Detector::Mos(PenaltyRule::gic(rho)?))
        };
        match lower.as_str() {
            "gamf" => Ok(Detector::Gamf),
            "gasd" => Ok(Detector::Gasd),
            "aic" | "aic-d" => Ok(Detector::Mos(PenaltyRule::Aic)),
            "bic" | "bic-d" => Ok(Detector::Mos(PenaltyRule::Bic)),
            _ => {
                if let Some(rest) = lower.strip_prefix("gic:").or_else(|| lower.strip_prefix("gic-d:")) {
                    rho_of(rest)
                } else if let Some(rest) = lower
                    .strip_prefix("gic-d(rho=")
                    .and_then(|r| r.strip_suffix(')'))
                {
                    rho_of(rest)
                } else {
                    Err(Error::config("detectors", format!("unknown detector '{s}'")))
                }
            }
        }
    }
}

/// Everything a trial produces that the detectors need.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialStatistics {
    /// `Λ̂_0 … Λ̂_{M_c}` with AoA estimates; only order 0 when no MOS detector is requested.
    pub per_order: Vec<HypothesisResult>,
    pub gamf: f64,
    pub gasd: f64,
    /// Actual coherent AoAs of the trial (after mismatch).
    pub true_aoas: Vec<f64>,
}

impl TrialStatistics {
    /// Decision statistic and, for MOS detectors, the declared order.
    pub fn outcome(&self, detector: Detector, n_antennas: usize, n_pulses: usize) -> (f64, Option<usize>) {
        match detector {
            Detector::Gamf => (self.gamf, None),
            Detector::Gasd => (self.gasd, None),
            Detector::Mos(rule) => {
                let (i_hat, stat) = penalized_argmax(&self.per_order, rule, n_antennas, n_pulses);
                (stat, Some(i_hat))
            }
        }
    }
}

/// SplitMix64 finalizer of `seed` and `label`, for independent sub-runs.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub detector: Detector,
    pub threshold: f64,
    pub n_trials: usize,
    pub target_pfa: f64,
    /// Ties at the threshold leave fewer exceedances than the target rank.
    pub degenerate: bool,
}

/// Metrics of one detector at one SINR point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMetrics {
    pub detector: Detector,
    pub sinr_db: f64,
    pub threshold: f64,
    pub true_order: usize,
    pub n_trials: usize,
    pub n_detected: usize,
    /// `class_counts[k]` = trials with detection and `î = k` (MOS detectors only).
    pub class_counts: Option<Vec<usize>>,
    /// Sum of per-trial squared errors over trials with `î ≥ 1`.
    pub sq_error_sum: f64,
    pub n_contributing: usize,
    pub n_excluded: usize,
}

fn binomial_stderr(p: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

impl PointMetrics {
    pub fn pd(&self) -> f64 {
        self.n_detected as f64 / self.n_trials as f64
    }

    pub fn stderr(&self) -> f64 {
        binomial_stderr(self.pd(), self.n_trials)
    }

    /// Joint probability of detecting and declaring order `k`.
    pub fn pc(&self, k: usize) -> Option<f64> {
        let counts = self.class_counts.as_ref()?;
        Some(counts.get(k).copied().unwrap_or(0) as f64 / self.n_trials as f64)
    }

    pub fn pcc(&self) -> Option<f64> {
        self.pc(self.true_order)
    }

    /// `P(î = true order | detected)`; `None` without detections.
    pub fn pcc_conditional(&self) -> Option<f64> {
        let counts = self.class_counts.as_ref()?;
        if self.n_detected == 0 {
            return None;
        }
        Some(counts.get(self.true_order).copied().unwrap_or(0) as f64 / self.n_detected as f64)
    }

    /// Mass on declared orders above / below the true one.
    pub fn over_under(&self) -> Option<(f64, f64)> {
        let counts = self.class_counts.as_ref()?;
        let n = self.n_trials as f64;
        let over: usize = counts.iter().skip(self.true_order + 1).sum();
        let under: usize = counts.iter().take(self.true_order).sum();
        Some((over as f64 / n, under as f64 / n))
    }

    /// `None` when no trial declared `î ≥ 1` or the scene has no coherent signal.
    pub fn rmse(&self) -> Option<f64> {
        if self.n_contributing == 0 {
            None
        } else {
            Some((self.sq_error_sum / self.n_contributing as f64).sqrt())
        }
    }
}

/// `(1/M) Σ_m min_k (θ_m − θ̂_k)²`; `None` when either set is empty.
pub fn squared_aoa_error(truth: &[f64], estimates: &[f64]) -> Option<f64> {
    if truth.is_empty() || estimates.is_empty() {
        return None;
    }
    let total: f64 = truth
        .iter()
        .map(|t| estimates.iter().map(|e| (t - e).powi(2)).fold(f64::INFINITY, f64::min))
        .sum();
    Some(total / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    RhoC(f64),
    CnrDb(f64),
}

impl Perturbation {
    pub fn parameter(&self) -> &'static str {
        match self {
            Perturbation::RhoC(_) => "rho_c",
            Perturbation::CnrDb(_) => "cnr_db",
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Perturbation::RhoC(v) | Perturbation::CnrDb(v) => v,
        }
    }

    fn apply(&self, cfg: &mut ScenarioConfig) {
        match *self {
            Perturbation::RhoC(v) => cfg.rho_c = v,
            Perturbation::CnrDb(v) => cfg.cnr_db = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub perturbation: Perturbation,
    pub detector: Detector,
    pub threshold: f64,
    pub n_trials: usize,
    pub n_false_alarms: usize,
}

impl SensitivityRow {
    pub fn pfa(&self) -> f64 {
        self.n_false_alarms as f64 / self.n_trials as f64
    }

    pub fn stderr(&self) -> f64 {
        binomial_stderr(self.pfa(), self.n_trials)
    }
}

/// RMS over trials of `ΔL_i(n)` for one hypothesis and order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub hypothesis: Hypothesis,
    pub order: usize,
    pub cycle: usize,
    pub rms_delta: f64,
}

/// Synthesizer and search-grid steering vectors of one run.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub synth: Synthesizer,
    /// `θ_t` followed by the grid candidates.
    angles: Vec<f64>,
    steering: CMatrix,
}

impl TrialSetup {
    fn grid_indices(&self) -> Vec<usize> {
        (1..self.angles.len()).collect()
    }

    /// Projection over the grid plus any `extra` angles not already on it,
    /// and the indices of the `extra` angles.
    fn projection(&self, cache: &WhitenedCache, extra: &[f64]) -> Result<(SteeringProjection, Vec<usize>)> {
        let mut angles = self.angles.clone();
        let mut steering = self.steering.clone();
        let mut idx = Vec::with_capacity(extra.len());
        for &a in extra {
            match angles[1..].iter().position(|&w| (w - a).abs() <= 1e-9) {
                Some(k) => idx.push(k + 1),
                None => {
                    angles.push(a);
                    idx.push(angles.len() - 1);
                    let v = steering_vector(a, steering.nrows())?;
                    let n = steering.ncols();
                    steering = steering.insert_column(n, C64::default());
                    steering.set_column(n, &v);
                }
            }
        }
        Ok((SteeringProjection::with_steering(cache, angles, steering), idx))
    }
}

/// A scenario plus the processing choices applied to each trial.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: ScenarioConfig,
    pub search: SearchConfig,
    /// Whiten with the true ICM instead of the sample covariance.
    pub known_m: bool,
    /// Use the true coherent AoAs instead of searching for them.
    pub known_aoa: bool,
    pub whitening: Whitening,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
}

impl Experiment {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self {
            scenario,
            search: SearchConfig::default(),
            known_m: false,
            known_aoa: false,
            whitening: Whitening::Cholesky,
            workers: 0,
        }
    }

    fn needs_orders(detectors: &[Detector]) -> bool {
        detectors.iter().any(Detector::is_mos)
    }

    fn run_trials<T, F>(&self, n_trials: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
        pool.install(|| (0..n_trials as u64).into_par_iter().map(&f).collect())
    }

    /// Per-run state shared by all trials.
    pub fn setup(&self) -> Result<TrialSetup> {
        let synth = Synthesizer::new(&self.scenario)?;
        let cfg = &self.scenario;
        let mut angles = vec![cfg.theta_target];
        angles.extend(candidate_angles(&cfg.grid.points(), cfg.theta_target));
        let steering = steering_matrix(&angles, cfg.n_antennas)?;
        Ok(TrialSetup { synth, angles, steering })
    }

    fn whitened(&self, setup: &TrialSetup, batch: &DataBatch) -> Result<WhitenedCache> {
        let m_hat = if self.known_m {
            setup.synth.icm().matrix.clone()
        } else {
            sample_covariance(&batch.secondary)?
        };
        whiten_with(&m_hat, setup.synth.target_steering(), &batch.primary, self.whitening)
    }

    /// Statistics of one trial. `with_orders = false` skips the AoA searches.
    pub fn trial(
        &self,
        setup: &TrialSetup,
        hypothesis: Hypothesis,
        sinr_db: Option<f64>,
        seed: u64,
        index: u64,
        with_orders: bool,
    ) -> Result<TrialStatistics> {
        let cfg = setup.synth.config();
        let batch = setup.synth.draw(hypothesis, sinr_db, &mut trial_rng(seed, index))?;
        let cache = self.whitened(setup, &batch)?;
        let mut per_order = vec![lambda_0(&cache)];
        if with_orders {
            let known: &[f64] = if self.known_aoa { &batch.true_aoas } else { &[] };
            let (proj, true_idx) = setup.projection(&cache, known)?;
            let ranked = proj.rank_by_matched_filter(&batch.primary, &setup.grid_indices());
            for order in 1..=cfg.m_cap {
                let best = if true_idx.is_empty() {
                    maximize_on(&proj, order, &ranked, &[], &self.search)?
                } else if order <= true_idx.len() {
                    proj.exhaustive(order, &true_idx, &[])?
                } else {
                    maximize_on(&proj, order - true_idx.len(), &ranked, &true_idx, &self.search)?
                };
                let mut result = best.to_result(cfg.n_pulses);
                result.order = order;
                per_order.push(result);
            }
        }
        Ok(TrialStatistics {
            per_order,
            gamf: gamf(&cache),
            gasd: gasd(&cache)?,
            true_aoas: batch.true_aoas,
        })
    }

    /// H0 decision statistics, one vector per detector, in trial order.
    pub fn null_statistics(&self, detectors: &[Detector], n_trials: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let setup = self.setup()?;
        let (n, l) = (self.scenario.n_antennas, self.scenario.n_pulses);
        let with_orders = Self::needs_orders(detectors);
        let rows = self.run_trials(n_trials, |t| {
            let s = self.trial(&setup, Hypothesis::H0, None, seed, t, with_orders)?;
            Ok(detectors.iter().map(|&d| s.outcome(d, n, l).0).collect::<Vec<f64>>())
        })?;
        Ok((0..detectors.len())
            .map(|k| rows.iter().map(|r| r[k]).collect())
            .collect())
    }

    /// Thresholds at `P_fa = target_pfa` for several detectors from one set of H0 trials.
    pub fn calibrate(
        &self,
        detectors: &[Detector],
        target_pfa: f64,
        n_trials: usize,
        seed: u64,
    ) -> Result<Vec<CalibrationResult>> {
        check_calibration_size(target_pfa, n_trials)?;
        let stats = self.null_statistics(detectors, n_trials, seed)?;
        Ok(detectors
            .iter()
            .zip(stats)
            .map(|(&detector, values)| {
                let (threshold, degenerate) = threshold_from_statistics(values, target_pfa);
                if degenerate {
                    log::warn!("degenerate calibration for {detector}: ties at threshold {threshold}");
                }
                CalibrationResult {
                    detector,
                    threshold,
                    n_trials,
                    target_pfa,
                    degenerate,
                }
            })
            .collect())
    }

    pub fn calibrate_threshold(
        &self,
        detector: Detector,
        target_pfa: f64,
        n_trials: usize,
        seed: u64,
    ) -> Result<CalibrationResult> {
        Ok(self.calibrate(&[detector], target_pfa, n_trials, seed)?.remove(0))
    }

    /// All metrics for every `(detector, threshold)` at every SINR point.
    /// Rows are ordered by SINR, then by detector.
    pub fn evaluate(
        &self,
        thresholds: &[(Detector, f64)],
        hypothesis: Hypothesis,
        sinr_db: &[f64],
        n_trials: usize,
        seed: u64,
    ) -> Result<Vec<PointMetrics>> {
        if n_trials == 0 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        let setup = self.setup()?;
        let (n, l) = (self.scenario.n_antennas, self.scenario.n_pulses);
        let detectors: Vec<Detector> = thresholds.iter().map(|t| t.0).collect();
        let with_orders = Self::needs_orders(&detectors);
        let n_classes = self.scenario.m_cap + 1;
        let true_order = hypothesis.n_coherent();
        let mut rows = Vec::with_capacity(sinr_db.len() * thresholds.len());
        for &sinr in sinr_db {
            let outcomes = self.run_trials(n_trials, |t| {
                let s = self.trial(&setup, hypothesis, Some(sinr), seed, t, with_orders)?;
                Ok(thresholds
                    .iter()
                    .map(|&(d, eta)| {
                        let (stat, i_hat) = s.outcome(d, n, l);
                        let err = i_hat
                            .filter(|&i| i >= 1)
                            .and_then(|i| squared_aoa_error(&s.true_aoas, &s.per_order[i].aoa_estimates));
                        (stat > eta, i_hat, err)
                    })
                    .collect::<Vec<_>>())
            })?;
            for (k, &(detector, threshold)) in thresholds.iter().enumerate() {
                let mut m = PointMetrics {
                    detector,
                    sinr_db: sinr,
                    threshold,
                    true_order,
                    n_trials,
                    n_detected: 0,
                    class_counts: detector.is_mos().then(|| vec![0; n_classes]),
                    sq_error_sum: 0.0,
                    n_contributing: 0,
                    n_excluded: 0,
                };
                for trial in &outcomes {
                    let (detected, i_hat, err) = trial[k];
                    if detected {
                        m.n_detected += 1;
                        if let (Some(counts), Some(i)) = (m.class_counts.as_mut(), i_hat) {
                            counts[i] += 1;
                        }
                    }
                    if let Some(i) = i_hat {
                        match err {
                            Some(e) => {
                                m.sq_error_sum += e;
                                m.n_contributing += 1;
                            }
                            None if i == 0 && true_order > 0 => m.n_excluded += 1,
                            None => {}
                        }
                    }
                }
                rows.push(m);
            }
        }
        Ok(rows)
    }

    pub fn estimate_pd(
        &self,
        detector: Detector,
        threshold: f64,
        sinr_grid_db: &[f64],
        hypothesis: Hypothesis,
        n_trials: usize,
        seed: u64,
    ) -> Result<Vec<PointMetrics>> {
        self.evaluate(&[(detector, threshold)], hypothesis, sinr_grid_db, n_trials, seed)
    }

    /// Classification distribution of a MOS detector at one SINR point.
    pub fn estimate_pcc(
        &self,
        detector: Detector,
        threshold: f64,
        sinr_db: f64,
        hypothesis: Hypothesis,
        n_trials: usize,
        seed: u64,
    ) -> Result<PointMetrics> {
        if !detector.is_mos() {
            return Err(Error::UnsupportedMetric(format!("{detector} does not classify")));
        }
        Ok(self.evaluate(&[(detector, threshold)], hypothesis, &[sinr_db], n_trials, seed)?.remove(0))
    }

    /// AoA RMSE of a MOS detector; the report's `rmse()` is `None` without contributing trials.
    pub fn estimate_rmse(
        &self,
        detector: Detector,
        threshold: f64,
        sinr_db: f64,
        hypothesis: Hypothesis,
        n_trials: usize,
        seed: u64,
    ) -> Result<PointMetrics> {
        if !detector.is_mos() {
            return Err(Error::UnsupportedMetric(format!("{detector} does not estimate AoAs")));
        }
        if hypothesis.n_coherent() == 0 {
            return Err(Error::config("hypothesis", "RMSE needs at least one coherent signal"));
        }
        self.estimate_pcc(detector, threshold, sinr_db, hypothesis, n_trials, seed)
    }

    /// Empirical `P_fa` at fixed thresholds when the clutter parameters differ
    /// from the ones used for calibration.
    pub fn pfa_sensitivity(
        &self,
        thresholds: &[(Detector, f64)],
        perturbations: &[Perturbation],
        n_trials: usize,
        seed: u64,
    ) -> Result<Vec<SensitivityRow>> {
        let detectors: Vec<Detector> = thresholds.iter().map(|t| t.0).collect();
        let mut rows = Vec::new();
        for p in perturbations {
            let mut exp = self.clone();
            p.apply(&mut exp.scenario);
            let stats = exp.null_statistics(&detectors, n_trials, seed)?;
            for (&(detector, threshold), values) in thresholds.iter().zip(stats) {
                rows.push(SensitivityRow {
                    perturbation: *p,
                    detector,
                    threshold,
                    n_trials,
                    n_false_alarms: values.iter().filter(|&&v| v > threshold).count(),
                });
            }
        }
        Ok(rows)
    }

    /// RMS of `ΔL_i(n)`, `n = 0…n_cycles`, of the cyclic search started from the
    /// matched-filter ranking. The search runs without the ε stop so that every
    /// trial contributes to every cycle; after a fixed point the change is 0.
    pub fn convergence_study(
        &self,
        hypotheses: &[Hypothesis],
        orders: &[usize],
        sinr_db: f64,
        n_cycles: usize,
        n_trials: usize,
        seed: u64,
    ) -> Result<Vec<ConvergenceRow>> {
        let setup = self.setup()?;
        let cfg = &self.scenario;
        if let Some(&bad) = orders.iter().find(|&&i| i == 0 || i > cfg.m_cap) {
            return Err(Error::config("orders", format!("order {bad} outside 1..={}", cfg.m_cap)));
        }
        let search = SearchConfig {
            mode: SearchMode::Cyclic,
            epsilon: f64::MIN_POSITIVE,
            n_max: n_cycles + 1,
        };
        let mut rows = Vec::new();
        for &hyp in hypotheses {
            let deltas = self.run_trials(n_trials, |t| {
                let batch = setup.synth.draw(hyp, Some(sinr_db), &mut trial_rng(seed, t))?;
                let cache = self.whitened(&setup, &batch)?;
                let (proj, _) = setup.projection(&cache, &[])?;
                let ranked = proj.rank_by_matched_filter(&batch.primary, &setup.grid_indices());
                orders
                    .iter()
                    .map(|&order| {
                        let trace = proj.cyclic(&[], &ranked[..order], &ranked, &search)?;
                        let mut d = trace.delta_history;
                        d.resize(n_cycles + 1, 0.0);
                        Ok(d)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            for (k, &order) in orders.iter().enumerate() {
                for cycle in 0..=n_cycles {
                    let ms = deltas.iter().map(|d| d[k][cycle].powi(2)).sum::<f64>() / n_trials.max(1) as f64;
                    rows.push(ConvergenceRow {
                        hypothesis: hyp,
                        order,
                        cycle,
                        rms_delta: ms.sqrt(),
                    });
                }
            }
        }
        Ok(rows)
    }
}

fn check_calibration_size(target_pfa: f64, n_trials: usize) -> Result<()> {
    if !(target_pfa > 0.0 && target_pfa < 1.0) {
        return Err(Error::config("pfa", "target P_fa must be in (0, 1)"));
    }
    if (n_trials as f64) * target_pfa < 100.0 * (1.0 - 1e-9) {
        return Err(Error::config(
            "calib_trials",
            format!(
                "at least 100/P_fa = {:.0} trials needed, got {n_trials}",
                (100.0 / target_pfa).ceil()
            ),
        ));
    }
    Ok(())
}

/// The `⌈n·P_fa⌉`-th largest value, and whether ties at it leave fewer
/// strict exceedances than intended.
pub fn threshold_from_statistics(mut values: Vec<f64>, target_pfa: f64) -> (f64, bool) {
    let n = values.len();
    let rank = ((n as f64 * target_pfa) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let rank = rank.min(n);
    values.sort_by(|a, b| b.total_cmp(a));
    let eta = values[rank - 1];
    let above = values.iter().take_while(|&&v| v > eta).count();
    (eta, above + 1 < rank)
}
