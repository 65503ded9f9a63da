//! Log-GLR statistics per hypothesis order, MOS penalties, the penalized
//! decision rule, and the GAMF/GASD baselines.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_lower, condition_number, max_eigenvalue, symmetrize, CMatrix, WhitenedCache,
};
use crate::signal::steering_matrix;

/// Steering geometries whose Gram matrix exceeds this condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Scaling rule `c` of the MOS penalty `c · h(i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyRule {
    Aic,
    Bic,
    Gic { rho: f64 },
}

impl PenaltyRule {
    pub fn gic(rho: f64) -> Result<Self> {
        if rho > 1.0 && rho.is_finite() {
            Ok(PenaltyRule::Gic { rho })
        } else {
            Err(Error::config("gic_rho", format!("GIC requires rho > 1, got {rho}")))
        }
    }

    /// The factor `c`.
    pub fn scale(&self, n_antennas: usize, n_pulses: usize) -> f64 {
        match *self {
            PenaltyRule::Aic => 1.0,
            PenaltyRule::Bic => (2.0 * n_pulses as f64 * n_antennas as f64).ln() / 2.0,
            PenaltyRule::Gic { rho } => (1.0 + rho) / 2.0,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            PenaltyRule::Aic => "AIC-D".to_string(),
            PenaltyRule::Bic => "BIC-D".to_string(),
            PenaltyRule::Gic { rho } => format!("GIC-D(rho={rho})"),
        }
    }
}

impl fmt::Display for PenaltyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Number of real unknowns under `H_{1,i}`: `N² + 1 + 2i`.
pub fn parameter_count(order: usize, n_antennas: usize) -> f64 {
    (n_antennas * n_antennas + 1 + 2 * order) as f64
}

/// `c · h(i)`.
pub fn penalty(rule: PenaltyRule, order: usize, n_antennas: usize, n_pulses: usize) -> Result<f64> {
    if let PenaltyRule::Gic { rho } = rule {
        PenaltyRule::gic(rho)?;
    }
    Ok(rule.scale(n_antennas, n_pulses) * parameter_count(order, n_antennas))
}

/// Outcome of maximizing the order-`i` likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisResult {
    pub order: usize,
    /// `Λ̂_i ≥ 0`.
    pub lambda_hat: f64,
    /// Largest eigenvalue of `D_i` at the estimates (for `i = 0`, `x / ‖v_w‖²`).
    pub lambda_max: f64,
    /// `σ̂²_α` for order 0, `â_i` otherwise; clamped at 0.
    pub amplitude: f64,
    pub aoa_estimates: Vec<f64>,
}

impl HypothesisResult {
    pub fn penalized(&self, rule: PenaltyRule, n_antennas: usize, n_pulses: usize) -> f64 {
        self.lambda_hat - rule.scale(n_antennas, n_pulses) * parameter_count(self.order, n_antennas)
    }
}

/// Result of the penalized test across all orders.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub detected: bool,
    pub i_hat: usize,
    /// `max_i {Λ̂_i − c h(i)}`.
    pub statistic: f64,
    pub threshold: f64,
    pub per_order: Vec<HypothesisResult>,
}

impl Decision {
    pub fn aoa_estimates(&self) -> &[f64] {
        &self.per_order[self.i_hat].aoa_estimates
    }
}

/// `Λ̂` as a function of the maximized quotient `λ`:
/// `λ − L log(λ / L) − L` when `λ > L`, else 0.
pub fn glr_from_eigenvalue(lambda: f64, n_pulses: usize) -> f64 {
    let l = n_pulses as f64;
    if lambda > l {
        lambda - l * (lambda / l).ln() - l
    } else {
        0.0
    }
}

/// Order-0 statistic (target only, amplitude variance maximized in closed form).
pub fn lambda_0(cache: &WhitenedCache) -> HypothesisResult {
    let l = cache.n_pulses() as f64;
    let x = cache.target_energy();
    let a = cache.v_w_norm_sq();
    let (lambda_hat, amplitude) = if x > l * a {
        (
            -l * (x / (l * a)).ln() + x / a - l,
            (x - l * a) / (l * a * a),
        )
    } else {
        (0.0, 0.0)
    };
    HypothesisResult {
        order: 0,
        lambda_hat,
        lambda_max: x / a,
        amplitude,
        aoa_estimates: Vec::new(),
    }
}

/// `D_i = C_i^{-1} B_i C_i^{-H}` for `V_i = [v_t, p(θ_1), …, p(θ_i)]`.
pub fn build_d(cache: &WhitenedCache, thetas: &[f64], theta_t: f64) -> Result<CMatrix> {
    let n = cache.n_antennas();
    if thetas.len() + 1 > n {
        return Err(Error::Contract(format!(
            "order {} needs i + 1 <= N = {n}",
            thetas.len()
        )));
    }
    for (k, &a) in thetas.iter().enumerate() {
        if a == theta_t || thetas[..k].contains(&a) {
            return Err(Error::IllConditioned { cond: f64::INFINITY });
        }
    }
    let mut angles = Vec::with_capacity(thetas.len() + 1);
    angles.push(theta_t);
    angles.extend_from_slice(thetas);
    let v = steering_matrix(&angles, n)?;
    let v_w = cache.whiten_columns(&v);
    let a = v_w.adjoint() * &v_w;
    let cond = condition_number(&a);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    let y = v_w.adjoint() * &cache.z_w;
    let b = &y * y.adjoint();
    let c = cholesky_lower(&a)?;
    let c_inv_b = c
        .solve_lower_triangular(&b)
        .ok_or(Error::Singular("steering Gram factor"))?;
    // D = C^{-1} B C^{-H} = (C^{-1} (C^{-1} B)^H)^H
    let d = c
        .solve_lower_triangular(&c_inv_b.adjoint())
        .ok_or(Error::Singular("steering Gram factor"))?
        .adjoint();
    Ok(symmetrize(&d))
}

/// Order-`i` statistic at fixed coherent AoAs.
pub fn lambda_i_at(cache: &WhitenedCache, thetas: &[f64], theta_t: f64) -> Result<HypothesisResult> {
    let d = build_d(cache, thetas, theta_t)?;
    let lambda = max_eigenvalue(&d)?;
    let l = cache.n_pulses() as f64;
    Ok(HypothesisResult {
        order: thetas.len(),
        lambda_hat: glr_from_eigenvalue(lambda, cache.n_pulses()),
        lambda_max: lambda,
        amplitude: ((lambda - l) / l).max(0.0),
        aoa_estimates: thetas.to_vec(),
    })
}

/// Penalized multiple-hypothesis decision; ties in the argmax go to the smaller order.
pub fn decide(
    per_order: Vec<HypothesisResult>,
    rule: PenaltyRule,
    n_antennas: usize,
    n_pulses: usize,
    threshold: f64,
) -> Result<Decision> {
    if per_order.is_empty() {
        return Err(Error::Contract("decide needs at least order 0".into()));
    }
    if let Some((k, r)) = per_order.iter().enumerate().find(|(k, r)| r.order != *k) {
        return Err(Error::Contract(format!("per_order[{k}] has order {}", r.order)));
    }
    let (i_hat, statistic) = penalized_argmax(&per_order, rule, n_antennas, n_pulses);
    Ok(Decision {
        detected: statistic > threshold,
        i_hat,
        statistic,
        threshold,
        per_order,
    })
}

/// `(î, max_i {Λ̂_i − c h(i)})` without building a [`Decision`].
pub fn penalized_argmax(
    per_order: &[HypothesisResult],
    rule: PenaltyRule,
    n_antennas: usize,
    n_pulses: usize,
) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, r) in per_order.iter().enumerate() {
        let value = r.penalized(rule, n_antennas, n_pulses);
        if value > best.1 {
            best = (i, value);
        }
    }
    best
}

/// Generalized adaptive matched filter: `Σ_l |v_t^H M̂^{-1} z_l|² / (v_t^H M̂^{-1} v_t)`.
pub fn gamf(cache: &WhitenedCache) -> f64 {
    cache.target_energy() / cache.v_w_norm_sq()
}

/// Generalized adaptive subspace detector: GAMF divided by `Σ_m z_m^H M̂^{-1} z_m`.
pub fn gasd(cache: &WhitenedCache) -> Result<f64> {
    let total = cache.total_energy();
    if !(total > 0.0) {
        return Err(Error::UndefinedStatistic("GASD of an all-zero data matrix"));
    }
    Ok(gamf(cache) / total)
}
