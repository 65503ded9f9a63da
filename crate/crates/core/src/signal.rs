//! Array and scenario model: steering vectors, the interference covariance,
//! and synthesis of primary/secondary data with fully correlated amplitudes.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ConfigIssue, Error, Result};
use crate::linalg::{cholesky_lower, CMatrix, CVector, C64};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Uniformly sampled angular sector `Ω = {start, start + step, …} ∩ [start, stop]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl AngularGrid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        let grid = Self { start, stop, step };
        let issues = grid.issues("grid");
        if issues.is_empty() {
            Ok(grid)
        } else {
            Err(Error::Config(issues))
        }
    }

    fn issues(&self, field: &str) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        if !(self.step > 0.0) || !self.step.is_finite() {
            issues.push(ConfigIssue::new(format!("{field}_step"), "step must be positive"));
        }
        if !(self.stop > self.start) {
            issues.push(ConfigIssue::new(format!("{field}_stop"), "stop must exceed start"));
        }
        if self.start <= -90.0 || self.stop >= 90.0 {
            issues.push(ConfigIssue::new(
                field,
                "grid must lie strictly inside (-90, 90) degrees",
            ));
        }
        if issues.is_empty() && self.len() < 2 {
            issues.push(ConfigIssue::new(field, "grid needs at least 2 points"));
        }
        issues
    }

    pub fn len(&self) -> usize {
        ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.start + k as f64 * self.step)
            .collect()
    }
}

/// Which data-generating hypothesis holds: `H0` (noise only) or `H1(i)`
/// (target plus `i` coherent signals).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hypothesis {
    H0,
    H1(usize),
}

impl Hypothesis {
    pub fn n_coherent(self) -> usize {
        match self {
            Hypothesis::H0 => 0,
            Hypothesis::H1(i) => i,
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hypothesis::H0 => f.write_str("H0"),
            Hypothesis::H1(i) => write!(f, "H1_{i}"),
        }
    }
}

impl FromStr for Hypothesis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if lower == "h0" {
            return Ok(Hypothesis::H0);
        }
        lower
            .strip_prefix("h1_")
            .or_else(|| lower.strip_prefix("h1,"))
            .and_then(|i| i.parse().ok())
            .map(Hypothesis::H1)
            .ok_or_else(|| Error::config("hypothesis", format!("cannot parse '{s}'")))
    }
}

/// Physical and algorithmic parameters of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_antennas: usize,
    pub n_pulses: usize,
    pub n_secondary: usize,
    pub theta_target: f64,
    /// Nominal AoAs of the coherent signals, degrees.
    pub coherent_aoas: Vec<f64>,
    pub sigma_alpha_sq: f64,
    /// Coherent-signal powers at the nominal target power `sigma_alpha_sq`.
    pub sigma_k_sq: Vec<f64>,
    /// Phase of each coherent amplitude relative to the target, degrees. Empty means all zero.
    pub phase_offsets: Vec<f64>,
    pub cnr_db: f64,
    pub rho_c: f64,
    pub sigma_n_sq: f64,
    pub grid: AngularGrid,
    pub m_cap: usize,
    pub mismatch_delta_theta: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_antennas: 16,
            n_pulses: 32,
            n_secondary: 32,
            theta_target: 0.0,
            coherent_aoas: Vec::new(),
            sigma_alpha_sq: 1.0,
            sigma_k_sq: Vec::new(),
            phase_offsets: Vec::new(),
            cnr_db: 20.0,
            rho_c: 0.9,
            sigma_n_sq: 1.0,
            grid: AngularGrid {
                start: -25.0,
                stop: 25.0,
                step: 1.0,
            },
            m_cap: 4,
            mismatch_delta_theta: 0.0,
            rng_seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Number of coherent signals present in the scene.
    pub fn n_coherent(&self) -> usize {
        self.coherent_aoas.len()
    }

    /// Replaces the coherent signals with equal-power (relative to the target) ones.
    pub fn with_coherent(mut self, aoas: &[f64]) -> Self {
        self.coherent_aoas = aoas.to_vec();
        self.sigma_k_sq = vec![self.sigma_alpha_sq; aoas.len()];
        self.phase_offsets.clear();
        self
    }

    /// The scene's own hypothesis `H1_M`.
    pub fn signal_hypothesis(&self) -> Hypothesis {
        Hypothesis::H1(self.n_coherent())
    }

    /// Checks every invariant, reporting each violation with its field name.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let n = self.n_antennas;
        let m = self.coherent_aoas.len();
        if n == 0 {
            issues.push(ConfigIssue::new("n_antennas", "N must be positive"));
        }
        if self.n_pulses == 0 {
            issues.push(ConfigIssue::new("n_pulses", "L must be positive"));
        }
        if self.n_secondary < n {
            issues.push(ConfigIssue::new(
                "n_secondary",
                format!("K >= N required (K = {}, N = {n})", self.n_secondary),
            ));
        }
        if self.m_cap >= n {
            issues.push(ConfigIssue::new(
                "m_cap",
                format!("M_c < N required (M_c = {}, N = {n})", self.m_cap),
            ));
        }
        if m > self.m_cap {
            issues.push(ConfigIssue::new(
                "coherent_aoas",
                format!("M <= M_c required (M = {m}, M_c = {})", self.m_cap),
            ));
        }
        if self.sigma_k_sq.len() != m {
            issues.push(ConfigIssue::new(
                "sigma_k_sq",
                format!("expected {m} powers, one per coherent AoA, got {}", self.sigma_k_sq.len()),
            ));
        }
        if !self.phase_offsets.is_empty() && self.phase_offsets.len() != m {
            issues.push(ConfigIssue::new(
                "phase_offsets",
                format!("expected {m} phases or none, got {}", self.phase_offsets.len()),
            ));
        }
        let delta = self.mismatch_delta_theta;
        if !(delta >= 0.0) || !delta.is_finite() {
            issues.push(ConfigIssue::new("mismatch_delta_theta", "must be >= 0"));
        }
        if !(self.theta_target.abs() < 90.0) {
            issues.push(ConfigIssue::new("theta_target", "|theta| < 90 required"));
        }
        for (k, &theta) in self.coherent_aoas.iter().enumerate() {
            if !(theta.abs() + delta.max(0.0) < 90.0) {
                issues.push(ConfigIssue::new(
                    "coherent_aoas",
                    format!("AoA #{} ({theta}) plus mismatch must stay inside (-90, 90)", k + 1),
                ));
            }
            if !((theta - self.theta_target).abs() > delta.max(0.0)) {
                issues.push(ConfigIssue::new(
                    "coherent_aoas",
                    format!("AoA #{} ({theta}) must differ from theta_target", k + 1),
                ));
            }
            for &other in &self.coherent_aoas[..k] {
                if !((theta - other).abs() > 2.0 * delta.max(0.0)) {
                    issues.push(ConfigIssue::new(
                        "coherent_aoas",
                        format!("coherent AoAs must be distinct ({other} vs {theta})"),
                    ));
                }
            }
        }
        if !(self.sigma_alpha_sq > 0.0) {
            issues.push(ConfigIssue::new("sigma_alpha_sq", "power must be > 0"));
        }
        if self.sigma_k_sq.iter().any(|&p| !(p > 0.0)) {
            issues.push(ConfigIssue::new("sigma_k_sq", "powers must be > 0"));
        }
        if !(self.sigma_n_sq > 0.0) {
            issues.push(ConfigIssue::new("sigma_n_sq", "power must be > 0"));
        }
        if !self.cnr_db.is_finite() {
            issues.push(ConfigIssue::new("cnr_db", "must be finite"));
        }
        if !(0.0..1.0).contains(&self.rho_c) {
            issues.push(ConfigIssue::new("rho_c", "0 <= rho_c < 1 required"));
        }
        let grid_issues = self.grid.issues("grid");
        if grid_issues.is_empty() {
            let usable = self
                .grid
                .points()
                .iter()
                .filter(|&&w| w != self.theta_target)
                .count();
            if usable < self.m_cap.max(1) {
                issues.push(ConfigIssue::new(
                    "grid",
                    format!("grid has {usable} points besides theta_target, M_c = {} needed", self.m_cap),
                ));
            }
        }
        issues.extend(grid_issues);
        issues
    }

    pub fn validate(&self) -> Result<()> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

/// `v(θ)` for a half-wavelength ULA: entry m is `exp{jπ m sin θ}`, m = 0…N-1.
pub fn steering_vector(theta_deg: f64, n: usize) -> Result<CVector> {
    if !(theta_deg.abs() < 90.0) {
        return Err(Error::InvalidAngle(theta_deg));
    }
    let phase = PI * theta_deg.to_radians().sin();
    Ok(CVector::from_iterator(
        n,
        (0..n).map(|m| C64::from_polar(1.0, phase * m as f64)),
    ))
}

/// Steering vectors for `angles` stacked as columns.
pub fn steering_matrix(angles: &[f64], n: usize) -> Result<CMatrix> {
    let cols = angles
        .iter()
        .map(|&a| steering_vector(a, n))
        .collect::<Result<Vec<_>>>()?;
    if cols.is_empty() {
        return Ok(CMatrix::zeros(n, 0));
    }
    Ok(CMatrix::from_columns(&cols))
}

/// `M = σ_n² I + CNR · M_c` with `M_c(i, j) = ρ_c^{|i-j|}`.
#[derive(Debug, Clone)]
pub struct InterferenceCovariance {
    pub matrix: CMatrix,
    pub sigma_n_sq: f64,
    pub cnr_db: f64,
    pub rho_c: f64,
}

pub fn icm_matrix(n: usize, sigma_n_sq: f64, cnr_db: f64, rho_c: f64) -> CMatrix {
    let cnr = db_to_linear(cnr_db);
    CMatrix::from_fn(n, n, |i, j| {
        let lag = i.abs_diff(j) as i32;
        let noise = if i == j { sigma_n_sq } else { 0.0 };
        C64::new(noise + cnr * rho_c.powi(lag), 0.0)
    })
}

pub fn build_icm(cfg: &ScenarioConfig) -> Result<InterferenceCovariance> {
    let mut issues = Vec::new();
    if !(cfg.sigma_n_sq > 0.0) {
        issues.push(ConfigIssue::new("sigma_n_sq", "power must be > 0"));
    }
    if !(0.0..1.0).contains(&cfg.rho_c) {
        issues.push(ConfigIssue::new("rho_c", "0 <= rho_c < 1 required"));
    }
    if !cfg.cnr_db.is_finite() {
        issues.push(ConfigIssue::new("cnr_db", "must be finite"));
    }
    if !issues.is_empty() {
        return Err(Error::Config(issues));
    }
    Ok(InterferenceCovariance {
        matrix: icm_matrix(cfg.n_antennas, cfg.sigma_n_sq, cfg.cnr_db, cfg.rho_c),
        sigma_n_sq: cfg.sigma_n_sq,
        cnr_db: cfg.cnr_db,
        rho_c: cfg.rho_c,
    })
}

/// `v_t^H M^{-1} v_t`.
pub fn whitened_power(icm: &CMatrix, v_t: &CVector) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(icm.clone()).ok_or(Error::Singular("interference covariance"))?;
    let x = chol.solve(v_t);
    Ok(v_t.dotc(&x).re)
}

/// Target power `σ_α²` giving the requested `SINR = σ_α² v_t^H M^{-1} v_t`.
pub fn sinr_to_sigma_alpha(sinr_db: f64, icm: &CMatrix, v_t: &CVector) -> Result<f64> {
    Ok(db_to_linear(sinr_db) / whitened_power(icm, v_t)?)
}

/// One trial's worth of data.
#[derive(Debug, Clone)]
pub struct DataBatch {
    /// `Z_L`, N x L.
    pub primary: CMatrix,
    /// Secondary vectors `z_k` as the K columns of an N x K matrix.
    pub secondary: CMatrix,
    pub true_hypothesis: Hypothesis,
    /// Actual AoAs of the coherent signals present (after mismatch perturbation).
    pub true_aoas: Vec<f64>,
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// IID `CN(0, 1)` entries, drawn in column-major order.
pub fn complex_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    let data: Vec<C64> = (0..rows * cols).map(|_| complex_normal(rng)).collect();
    CMatrix::from_vec(rows, cols, data)
}

/// Precomputed per-scenario quantities for repeated data synthesis.
///
/// Draw order per batch is fixed: the `N x (K + L)` noise matrix (secondary
/// columns first), then `L` amplitude gains, then one uniform per coherent
/// AoA for the mismatch offsets. The noise is `F w` with `F` the lower
/// Cholesky factor of `M`.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    cfg: ScenarioConfig,
    icm: InterferenceCovariance,
    noise_factor: CMatrix,
    v_t: CVector,
    target_gain: f64,
}

impl Synthesizer {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let icm = build_icm(cfg)?;
        let noise_factor = cholesky_lower(&icm.matrix)?;
        let v_t = steering_vector(cfg.theta_target, cfg.n_antennas)?;
        let target_gain = whitened_power(&icm.matrix, &v_t)?;
        Ok(Self {
            cfg: cfg.clone(),
            icm,
            noise_factor,
            v_t,
            target_gain,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn icm(&self) -> &InterferenceCovariance {
        &self.icm
    }

    pub fn target_steering(&self) -> &CVector {
        &self.v_t
    }

    pub fn sigma_alpha_sq(&self, sinr_db: f64) -> f64 {
        db_to_linear(sinr_db) / self.target_gain
    }

    /// Draws a batch; `sinr_db = None` uses the configured absolute powers.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        hypothesis: Hypothesis,
        sinr_db: Option<f64>,
        rng: &mut R,
    ) -> Result<DataBatch> {
        let cfg = &self.cfg;
        let (n, l, k) = (cfg.n_antennas, cfg.n_pulses, cfg.n_secondary);
        let m = cfg.n_coherent();
        if hypothesis.n_coherent() > m {
            return Err(Error::config(
                "hypothesis",
                format!("{hypothesis} needs {} coherent signals, scenario has {m}", hypothesis.n_coherent()),
            ));
        }

        let noise = &self.noise_factor * complex_normal_matrix(n, k + l, rng);
        let gains: Vec<C64> = (0..l).map(|_| complex_normal(rng)).collect();
        let offsets: Vec<f64> = (0..m)
            .map(|_| cfg.mismatch_delta_theta * (2.0 * rng.random::<f64>() - 1.0))
            .collect();

        let secondary = noise.columns(0, k).into_owned();
        let mut primary = noise.columns(k, l).into_owned();

        let true_aoas: Vec<f64> = match hypothesis {
            Hypothesis::H0 => Vec::new(),
            Hypothesis::H1(i) => (0..i).map(|j| cfg.coherent_aoas[j] + offsets[j]).collect(),
        };

        if let Hypothesis::H1(i) = hypothesis {
            let sigma_alpha_sq = match sinr_db {
                Some(s) => self.sigma_alpha_sq(s),
                None => cfg.sigma_alpha_sq,
            };
            let scale = sigma_alpha_sq / cfg.sigma_alpha_sq;
            // signature = V_i r, so each pulse adds g_l · V_i r
            let mut signature = self.v_t.scale(sigma_alpha_sq.sqrt());
            for (j, &theta) in true_aoas.iter().enumerate() {
                let sigma = (cfg.sigma_k_sq[j] * scale).sqrt();
                let phase = cfg.phase_offsets.get(j).copied().unwrap_or(0.0).to_radians();
                let p = steering_vector(theta, n)?;
                signature += p * C64::from_polar(sigma, phase);
            }
            debug_assert!(i == true_aoas.len());
            for (col, g) in primary.column_iter_mut().zip(&gains) {
                for (z, s) in col.into_iter().zip(signature.iter()) {
                    *z += s * g;
                }
            }
        }

        Ok(DataBatch {
            primary,
            secondary,
            true_hypothesis: hypothesis,
            true_aoas,
        })
    }
}

pub fn synthesize<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    hypothesis: Hypothesis,
    sinr_db: f64,
    rng: &mut R,
) -> Result<DataBatch> {
    Synthesizer::new(cfg)?.draw(hypothesis, Some(sinr_db), rng)
}
