//! Maximization of `Λ̂_i` over the coherent-signal AoAs on a discrete grid.
//!
//! All candidate evaluations go through [`SteeringProjection`], which holds
//! the Gram matrices `U^H U` and `U^H S_w U` of the whitened steering vectors
//! `U = F^{-1} [v_t, v(ω_1), …, v(ω_S)]`. For any index set the matrices
//! `A_i` and `B_i` are principal submatrices of these, so a candidate costs
//! one bordered update of a fixed-set factorization instead of a fresh
//! `(i+1) x (i+1)` eigenproblem:
//!
//! with `A_F = C_F C_F^H`, `D_F = C_F^{-1} B_F C_F^{-H} = Q diag(μ) Q^H` and a
//! new column `s`, the extended `D` is `[[D_F, u], [u^H, δ]]` where
//! `c = C_F^{-1} a_s`, `y = C_F^{-1} b_s`, `d² = α_s − ‖c‖²`,
//! `u = (y − D_F c) / d` and `δ = (c^H D_F c − 2 Re(c^H y) + β_s) / d²`.
//! Its largest eigenvalue is the largest root of the secular equation
//! `λ − δ = Σ_j |q_j^H u|² / (λ − μ_j)`.
//!
//! Both search modes maximize `λ_max{D_i}` itself. `Λ̂_i` is a nondecreasing
//! function of `λ_max`, so this is the same maximizer wherever the statistic
//! is nonzero.

use std::str::FromStr;

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, CMatrix, WhitenedCache, C64};
use crate::signal::{steering_matrix, AngularGrid};
use crate::stats::{glr_from_eigenvalue, HypothesisResult, MAX_CONDITION};

/// Angles closer than this are treated as the same grid point.
const ANGLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    Exhaustive,
    #[default]
    Cyclic,
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exhaustive" => Ok(SearchMode::Exhaustive),
            "cyclic" => Ok(SearchMode::Cyclic),
            other => Err(Error::config("search", format!("unknown search mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SearchMode::Exhaustive => "exhaustive",
            SearchMode::Cyclic => "cyclic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub mode: SearchMode,
    /// Relative log-likelihood change below which the cyclic search stops.
    pub epsilon: f64,
    /// Maximum number of full cycles.
    pub n_max: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            mode: SearchMode::Cyclic,
            epsilon: 1e-3,
            n_max: 5,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if !(self.epsilon > 0.0) {
            issues.push(crate::ConfigIssue::new("epsilon", "must be > 0"));
        }
        if self.n_max == 0 {
            issues.push(crate::ConfigIssue::new("nmax", "must be >= 1"));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

/// Log-likelihood `ℒ` attached to a quotient `λ`.
///
/// Equals `λ − L log(λ/L) − L` for `λ ≥ L` and continues as `λ − L` below,
/// which keeps it strictly increasing in `λ`.
pub fn log_likelihood(lambda: f64, n_pulses: usize) -> f64 {
    let l = n_pulses as f64;
    if lambda >= l {
        lambda - l * (lambda / l).ln() - l
    } else {
        lambda - l
    }
}

/// Best point found by a grid search of order `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMaximum {
    pub order: usize,
    pub lambda_max: f64,
    pub lambda_hat: f64,
    pub angles: Vec<f64>,
    pub n_evaluations: usize,
}

impl GridMaximum {
    pub fn to_result(&self, n_pulses: usize) -> HypothesisResult {
        let l = n_pulses as f64;
        HypothesisResult {
            order: self.order,
            lambda_hat: self.lambda_hat,
            lambda_max: self.lambda_max,
            amplitude: ((self.lambda_max - l) / l).max(0.0),
            aoa_estimates: self.angles.clone(),
        }
    }
}

/// History of a cyclic search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    /// `ℒ` after initialization and after every single-angle update.
    pub loglik: Vec<f64>,
    /// `ℒ` after initialization (entry 0) and after each completed cycle.
    pub cycle_loglik: Vec<f64>,
    /// `ΔL(n) = |ℒ(n+1) − ℒ(n)| / |ℒ(n+1)|` for each completed cycle.
    pub delta_history: Vec<f64>,
    pub n_cycles: usize,
    pub estimates: Vec<f64>,
    pub lambda_max: f64,
    pub lambda_hat: f64,
    pub n_evaluations: usize,
}

impl SearchTrace {
    pub fn to_maximum(&self) -> GridMaximum {
        GridMaximum {
            order: self.estimates.len(),
            lambda_max: self.lambda_max,
            lambda_hat: self.lambda_hat,
            angles: self.estimates.clone(),
            n_evaluations: self.n_evaluations,
        }
    }

    /// Largest decrease between consecutive `ℒ` values (0 for a monotone trace).
    pub fn max_decrease(&self) -> f64 {
        self.loglik
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

fn relative_change(new: f64, old: f64) -> f64 {
    let num = (new - old).abs();
    if num == 0.0 {
        0.0
    } else {
        num / new.abs()
    }
}

/// Gram matrices of whitened steering vectors over a fixed set of angles.
/// Index 0 is always the target direction.
#[derive(Debug, Clone)]
pub struct SteeringProjection {
    angles: Vec<f64>,
    steering: CMatrix,
    gram: CMatrix,
    cross: CMatrix,
    n_pulses: usize,
}

/// `A^H M A` (or `A^H A`), computing one triangle and mirroring it.
fn hermitian_form(a: &CMatrix, m: Option<&CMatrix>) -> CMatrix {
    let t = match m {
        Some(m) => m * a,
        None => a.clone(),
    };
    let n = a.ncols();
    let mut out = CMatrix::zeros(n, n);
    for j in 0..n {
        let tj = t.column(j);
        for i in 0..=j {
            let v = a.column(i).dotc(&tj);
            out[(i, j)] = v;
            out[(j, i)] = v.conj();
        }
        out[(j, j)].im = 0.0;
    }
    out
}

impl SteeringProjection {
    pub fn new(cache: &WhitenedCache, theta_t: f64, angles: &[f64]) -> Result<Self> {
        let mut all = Vec::with_capacity(angles.len() + 1);
        all.push(theta_t);
        all.extend_from_slice(angles);
        let steering = steering_matrix(&all, cache.n_antennas())?;
        Ok(Self::with_steering(cache, all, steering))
    }

    /// Uses precomputed steering vectors; column `k` must be `v(angles[k])`.
    pub fn with_steering(cache: &WhitenedCache, angles: Vec<f64>, steering: CMatrix) -> Self {
        assert_eq!(angles.len(), steering.ncols(), "one steering column per angle");
        let u = cache.whiten_columns(&steering);
        let gram = hermitian_form(&u, None);
        let cross = hermitian_form(&u, Some(&cache.s_w));
        Self {
            angles,
            steering,
            gram,
            cross,
            n_pulses: cache.n_pulses(),
        }
    }

    /// `candidates` sorted by decreasing `|(1/L) Σ_l z_l^H v(ω)|²`, ties in input order.
    pub fn rank_by_matched_filter(&self, primary: &CMatrix, candidates: &[usize]) -> Vec<usize> {
        let mean = primary.column_sum().unscale(primary.ncols() as f64);
        let power: Vec<f64> = candidates
            .iter()
            .map(|&k| self.steering.column(k).dotc(&mean).norm_sqr())
            .collect();
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| power[b].total_cmp(&power[a]));
        order.into_iter().map(|k| candidates[k]).collect()
    }

    pub fn n_pulses(&self) -> usize {
        self.n_pulses
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angle(&self, idx: usize) -> f64 {
        self.angles[idx]
    }

    /// Indices `1..` whose angle differs from the target's.
    pub fn candidates(&self) -> Vec<usize> {
        (1..self.len())
            .filter(|&k| (self.angles[k] - self.angles[0]).abs() > ANGLE_EPS)
            .collect()
    }

    fn evaluator(&self, fixed: &[usize]) -> Option<Bordered<'_>> {
        Bordered::new(self, fixed)
    }

    /// `λ_max{D}` for the columns `[v_t] ∪ set`; `None` if the geometry is degenerate.
    pub fn lambda_max(&self, set: &[usize]) -> Option<f64> {
        let mut fixed = vec![0];
        match set.split_last() {
            None => Some(self.cross[(0, 0)].re / self.gram[(0, 0)].re),
            Some((&last, rest)) => {
                fixed.extend_from_slice(rest);
                self.evaluator(&fixed)?.lambda_with(last)
            }
        }
    }

    fn angles_of(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&k| self.angles[k]).collect()
    }

    /// Exhaustive maximization over unordered `order`-subsets of `candidates`,
    /// with the `pinned` columns always present.
    pub fn exhaustive(&self, order: usize, candidates: &[usize], pinned: &[usize]) -> Result<GridMaximum> {
        if order == 0 {
            return Err(Error::Contract("exhaustive search needs at least one AoA".into()));
        }
        let candidates: Vec<usize> = candidates.iter().copied().filter(|c| !pinned.contains(c)).collect();
        if candidates.len() < order {
            return Err(Error::config(
                "grid",
                format!("{} candidate angles for {order} unknown AoAs", candidates.len()),
            ));
        }
        let mut state = Enumeration {
            best: None,
            n_evaluations: 0,
        };
        let mut prefix: Vec<usize> = pinned.to_vec();
        self.enumerate(order + pinned.len(), &candidates, 0, &mut prefix, &mut state);
        let (lambda, idx) = state.best.ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
        Ok(GridMaximum {
            order: idx.len(),
            lambda_max: lambda,
            lambda_hat: glr_from_eigenvalue(lambda, self.n_pulses),
            angles: self.angles_of(&idx),
            n_evaluations: state.n_evaluations,
        })
    }

    fn enumerate(
        &self,
        size: usize,
        candidates: &[usize],
        start: usize,
        prefix: &mut Vec<usize>,
        state: &mut Enumeration,
    ) {
        if prefix.len() + 1 == size {
            let mut fixed = Vec::with_capacity(size);
            fixed.push(0);
            fixed.extend_from_slice(prefix);
            let Some(mut ev) = self.evaluator(&fixed) else {
                state.n_evaluations += candidates.len() - start;
                return;
            };
            for &s in &candidates[start..] {
                state.n_evaluations += 1;
                if let Some(lambda) = ev.lambda_with(s) {
                    if state.best.as_ref().is_none_or(|b| lambda > b.0) {
                        let mut idx = prefix.clone();
                        idx.push(s);
                        state.best = Some((lambda, idx));
                    }
                }
            }
            return;
        }
        let remaining = size - prefix.len();
        if candidates.len() < start + remaining {
            return;
        }
        for pos in start..=candidates.len() - remaining {
            prefix.push(candidates[pos]);
            self.enumerate(size, candidates, pos + 1, prefix, state);
            prefix.pop();
        }
    }

    /// Cyclic coordinate ascent over the `init` angles; `pinned` columns are held fixed.
    pub fn cyclic(
        &self,
        pinned: &[usize],
        init: &[usize],
        candidates: &[usize],
        cfg: &SearchConfig,
    ) -> Result<SearchTrace> {
        cfg.validate()?;
        if init.is_empty() {
            return Err(Error::Contract("cyclic search needs at least one AoA".into()));
        }
        for (k, idx) in init.iter().enumerate() {
            if init[..k].contains(idx) || pinned.contains(idx) {
                return Err(Error::Contract("cyclic search initial angles must be distinct".into()));
            }
            if !candidates.contains(idx) {
                return Err(Error::Contract(format!(
                    "initial angle {} is not a candidate grid point",
                    self.angles[*idx]
                )));
            }
        }
        let l = self.n_pulses;
        let mut est = init.to_vec();
        let mut all: Vec<usize> = pinned.to_vec();
        all.extend_from_slice(&est);
        let mut lambda = self
            .lambda_max(&all)
            .ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
        let mut current = log_likelihood(lambda, l);
        let mut trace = SearchTrace {
            loglik: vec![current],
            cycle_loglik: vec![current],
            delta_history: Vec::new(),
            n_cycles: 0,
            estimates: Vec::new(),
            lambda_max: 0.0,
            lambda_hat: 0.0,
            n_evaluations: 1,
        };

        let mut fixed = Vec::with_capacity(pinned.len() + est.len());
        for _ in 0..cfg.n_max {
            let before = current;
            for k in 0..est.len() {
                fixed.clear();
                fixed.push(0);
                fixed.extend_from_slice(pinned);
                fixed.extend(est.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, &e)| e));
                let mut ev = self
                    .evaluator(&fixed)
                    .ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
                // the incumbent keeps its recorded value, so ℒ never decreases
                let mut best = (est[k], lambda);
                for &s in candidates {
                    if s == est[k] || fixed.contains(&s) {
                        continue;
                    }
                    trace.n_evaluations += 1;
                    if let Some(value) = ev.lambda_with(s) {
                        if value > best.1 {
                            best = (s, value);
                        }
                    }
                }
                est[k] = best.0;
                lambda = best.1;
                current = log_likelihood(lambda, l);
                trace.loglik.push(current);
            }
            trace.n_cycles += 1;
            trace.cycle_loglik.push(current);
            let delta = relative_change(current, before);
            trace.delta_history.push(delta);
            if delta < cfg.epsilon {
                break;
            }
        }

        all.truncate(pinned.len());
        all.extend_from_slice(&est);
        trace.estimates = self.angles_of(&all);
        trace.lambda_max = lambda;
        trace.lambda_hat = glr_from_eigenvalue(lambda, l);
        Ok(trace)
    }
}

struct Enumeration {
    best: Option<(f64, Vec<usize>)>,
    n_evaluations: usize,
}

/// Factorization of a fixed column set, extended one candidate column at a time.
struct Bordered<'a> {
    proj: &'a SteeringProjection,
    fixed: Vec<usize>,
    /// `C_F^{-1}`, row-major, lower triangular.
    c_inv: Vec<C64>,
    /// `D_F`, row-major.
    d: Vec<C64>,
    /// Eigenvalues of `D_F` and eigenvectors (column j at `q[r * f + j]`).
    mu: Vec<f64>,
    q: Vec<C64>,
    mu_max: f64,
    c: Vec<C64>,
    y: Vec<C64>,
    w: Vec<C64>,
    u: Vec<C64>,
    weights: Vec<f64>,
}

impl<'a> Bordered<'a> {
    fn new(proj: &'a SteeringProjection, fixed: &[usize]) -> Option<Self> {
        let f = fixed.len();
        let a = CMatrix::from_fn(f, f, |r, c| proj.gram[(fixed[r], fixed[c])]);
        let b = CMatrix::from_fn(f, f, |r, c| proj.cross[(fixed[r], fixed[c])]);
        let chol = nalgebra::Cholesky::new(symmetrize(&a))?;
        let l = chol.l();
        for j in 0..f {
            if !(l[(j, j)].re * l[(j, j)].re > a[(j, j)].re / MAX_CONDITION) {
                return None;
            }
        }
        let c_inv = l.solve_lower_triangular(&CMatrix::identity(f, f))?;
        let d = symmetrize(&(&c_inv * b * c_inv.adjoint()));
        let (mu, q) = if f == 1 {
            (vec![d[(0, 0)].re], vec![C64::new(1.0, 0.0)])
        } else {
            let eig = SymmetricEigen::new(d.clone());
            let q = (0..f * f).map(|k| eig.eigenvectors[(k / f, k % f)]).collect();
            (eig.eigenvalues.iter().copied().collect(), q)
        };
        let mu_max = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row_major = |m: &CMatrix| (0..f * f).map(|k| m[(k / f, k % f)]).collect::<Vec<_>>();
        Some(Self {
            proj,
            fixed: fixed.to_vec(),
            c_inv: row_major(&c_inv),
            d: row_major(&d),
            mu,
            q,
            mu_max,
            c: vec![C64::default(); f],
            y: vec![C64::default(); f],
            w: vec![C64::default(); f],
            u: vec![C64::default(); f],
            weights: vec![0.0; f],
        })
    }

    /// `λ_max{D}` for the fixed columns plus column `s`; `None` if `s` is
    /// (numerically) in the span of the fixed columns.
    fn lambda_with(&mut self, s: usize) -> Option<f64> {
        let f = self.fixed.len();
        let gram = &self.proj.gram;
        let cross = &self.proj.cross;
        for r in 0..f {
            let mut c = C64::default();
            let mut y = C64::default();
            for k in 0..=r {
                let x = self.c_inv[r * f + k];
                c += x * gram[(self.fixed[k], s)];
                y += x * cross[(self.fixed[k], s)];
            }
            self.c[r] = c;
            self.y[r] = y;
        }
        let alpha = gram[(s, s)].re;
        let beta = cross[(s, s)].re;
        let c_norm: f64 = self.c.iter().map(|z| z.norm_sqr()).sum();
        let d_sq = alpha - c_norm;
        if !(d_sq > alpha / MAX_CONDITION) {
            return None;
        }
        let d = d_sq.sqrt();
        for r in 0..f {
            let mut acc = C64::default();
            for k in 0..f {
                acc += self.d[r * f + k] * self.c[k];
            }
            self.w[r] = acc;
        }
        let mut cdc = 0.0;
        let mut cy = 0.0;
        for r in 0..f {
            cdc += (self.c[r].conj() * self.w[r]).re;
            cy += (self.c[r].conj() * self.y[r]).re;
            self.u[r] = (self.y[r] - self.w[r]) / d;
        }
        let delta = (cdc - 2.0 * cy + beta) / d_sq;
        for j in 0..f {
            let mut acc = C64::default();
            for r in 0..f {
                acc += self.q[r * f + j].conj() * self.u[r];
            }
            self.weights[j] = acc.norm_sqr();
        }
        Some(bordered_max_eigenvalue(&self.mu, self.mu_max, &self.weights, delta))
    }
}

/// Largest eigenvalue of `[[diag(μ), b], [b^H, δ]]` given `|b_j|²`.
///
/// The secular function `f(x) = x − δ − Σ_j |b_j|² / (x − μ_j)` is increasing
/// and concave right of `max μ`, so Newton started left of the root climbs
/// to it monotonically. The start is the top eigenvalue of the 2 x 2 block
/// coupling `δ` with the largest `μ`, a lower bound by interlacing.
fn bordered_max_eigenvalue(mu: &[f64], mu_max: f64, weights: &[f64], delta: f64) -> f64 {
    let top = mu
        .iter()
        .zip(weights)
        .filter(|(&m, _)| m == mu_max)
        .map(|(_, &w)| w)
        .sum::<f64>();
    let half_gap = 0.5 * (mu_max - delta);
    let mut x = 0.5 * (mu_max + delta) + (half_gap * half_gap + top).sqrt();
    let mut floor = mu_max.max(delta);
    if !(x >= floor) {
        x = floor;
    }
    for _ in 0..100 {
        let mut value = x - delta;
        let mut slope = 1.0;
        for (&m, &w) in mu.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let gap = x - m;
            value -= w / gap;
            slope += w / (gap * gap);
        }
        if !(value < 0.0) {
            // at (or numerically past) the root
            return x;
        }
        floor = x;
        let next = x - value / slope;
        if !(next > x) || next - x <= 4.0 * f64::EPSILON * x.abs() {
            return next.max(floor);
        }
        x = next;
    }
    x
}

/// Grid points usable as coherent AoAs (the target direction removed).
pub fn candidate_angles(grid: &[f64], theta_t: f64) -> Vec<f64> {
    grid.iter()
        .copied()
        .filter(|&w| (w - theta_t).abs() > ANGLE_EPS)
        .collect()
}

/// Exhaustive search of order `i` over distinct grid points.
pub fn exhaustive_search(cache: &WhitenedCache, order: usize, grid: &[f64], theta_t: f64) -> Result<GridMaximum> {
    let proj = SteeringProjection::new(cache, theta_t, &candidate_angles(grid, theta_t))?;
    proj.exhaustive(order, &proj.candidates(), &[])
}

/// Matched-filter ranking `r_s = |(1/L) Σ_l z_l^H v(ω_s)|²`; returns the top `i` angles.
/// Ties keep grid order.
pub fn init_estimates(primary: &CMatrix, grid: &[f64], order: usize) -> Result<Vec<f64>> {
    let ranked = matched_filter_ranking(primary, grid)?;
    Ok(ranked.into_iter().take(order).map(|k| grid[k]).collect())
}

fn matched_filter_ranking(primary: &CMatrix, grid: &[f64]) -> Result<Vec<usize>> {
    let l = primary.ncols() as f64;
    let mean = primary.column_sum().unscale(l);
    let v = steering_matrix(grid, primary.nrows())?;
    let power: Vec<f64> = (v.adjoint() * mean).iter().map(|z| z.norm_sqr()).collect();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| power[b].total_cmp(&power[a]));
    Ok(order)
}

fn indices_of(proj: &SteeringProjection, angles: &[f64]) -> Result<Vec<usize>> {
    angles
        .iter()
        .map(|&a| {
            (1..proj.len())
                .find(|&k| (proj.angle(k) - a).abs() <= ANGLE_EPS)
                .ok_or_else(|| Error::Contract(format!("angle {a} is not on the search grid")))
        })
        .collect()
}

/// Cyclic search of order `init.len()` from the given grid angles.
pub fn cyclic_search(
    cache: &WhitenedCache,
    grid: &[f64],
    theta_t: f64,
    cfg: &SearchConfig,
    init: &[f64],
) -> Result<SearchTrace> {
    let proj = SteeringProjection::new(cache, theta_t, &candidate_angles(grid, theta_t))?;
    let init = indices_of(&proj, init)?;
    proj.cyclic(&[], &init, &proj.candidates(), cfg)
}

/// Order-`i` maximization on a prebuilt projection using the configured mode,
/// with the `pinned` columns always present. `ranked` lists the free
/// candidates by decreasing matched-filter power; cyclic mode starts from its
/// first `i` entries.
pub fn maximize_on(
    proj: &SteeringProjection,
    order: usize,
    ranked: &[usize],
    pinned: &[usize],
    cfg: &SearchConfig,
) -> Result<GridMaximum> {
    match cfg.mode {
        SearchMode::Exhaustive => proj.exhaustive(order, ranked, pinned),
        SearchMode::Cyclic => {
            let free: Vec<usize> = ranked.iter().copied().filter(|c| !pinned.contains(c)).collect();
            if free.len() < order {
                return Err(Error::config("grid", "fewer grid points than unknown AoAs"));
            }
            Ok(proj.cyclic(pinned, &free[..order], &free, cfg)?.to_maximum())
        }
    }
}

/// Order-`i` maximization over a grid using the configured mode.
pub fn maximize(
    cache: &WhitenedCache,
    primary: &CMatrix,
    order: usize,
    grid: &[f64],
    theta_t: f64,
    cfg: &SearchConfig,
) -> Result<GridMaximum> {
    let proj = SteeringProjection::new(cache, theta_t, &candidate_angles(grid, theta_t))?;
    let ranked = proj.rank_by_matched_filter(primary, &proj.candidates());
    maximize_on(&proj, order, &ranked, &[], cfg)
}

/// Coarse search, then a finer grid of half-width `refine_width` around each
/// preliminary estimate (union of the sectors, coarse estimates included).
#[allow(clippy::too_many_arguments)]
pub fn two_stage_refine(
    cache: &WhitenedCache,
    primary: &CMatrix,
    order: usize,
    coarse: &AngularGrid,
    refine_width: f64,
    refine_step: f64,
    theta_t: f64,
    cfg: &SearchConfig,
) -> Result<GridMaximum> {
    if !(refine_step > 0.0) || refine_step > coarse.step + ANGLE_EPS {
        return Err(Error::config(
            "refine_step",
            format!("must be in (0, {}] (coarse step)", coarse.step),
        ));
    }
    if !(refine_width >= 0.0) {
        return Err(Error::config("refine_width", "must be >= 0"));
    }
    let first = maximize(cache, primary, order, &coarse.points(), theta_t, cfg)?;

    let half = (refine_width / refine_step + ANGLE_EPS).floor() as i64;
    let mut fine: Vec<f64> = Vec::new();
    for &center in &first.angles {
        for k in -half..=half {
            let w = center + k as f64 * refine_step;
            if w.abs() < 90.0 {
                fine.push(w);
            }
        }
    }
    fine.sort_by(f64::total_cmp);
    fine.dedup_by(|a, b| (*a - *b).abs() <= ANGLE_EPS);
    let fine = candidate_angles(&fine, theta_t);

    let proj = SteeringProjection::new(cache, theta_t, &fine)?;
    let candidates = proj.candidates();
    let second = match cfg.mode {
        SearchMode::Exhaustive => proj.exhaustive(order, &candidates, &[])?,
        SearchMode::Cyclic => {
            // restart from the coarse optimum so the refined value cannot be lower
            let init = indices_of(&proj, &first.angles)?;
            proj.cyclic(&[], &init, &candidates, cfg)?.to_maximum()
        }
    };
    Ok(GridMaximum {
        n_evaluations: first.n_evaluations + second.n_evaluations,
        ..second
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigenvalues, whiten, CVector};
    use crate::signal::{steering_vector, ScenarioConfig, Synthesizer, Hypothesis};
    use crate::stats::lambda_i_at;
    use crate::testutil::{random_matrix, random_pd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cache(n: usize, l: usize, seed: u64) -> WhitenedCache {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_pd(n, &mut rng);
        let z = random_matrix(n, l, &mut rng);
        whiten(&m, &steering_vector(0.0, n).unwrap(), &z).unwrap()
    }

    fn scenario_cache(cfg: &ScenarioConfig, hyp: Hypothesis, sinr: f64, seed: u64) -> (WhitenedCache, CMatrix) {
        let synth = Synthesizer::new(cfg).unwrap();
        let batch = synth.draw(hyp, Some(sinr), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let m_hat = crate::linalg::sample_covariance(&batch.secondary).unwrap();
        let cache = whiten(&m_hat, synth.target_steering(), &batch.primary).unwrap();
        (cache, batch.primary)
    }

    #[test]
    fn secular_solver_matches_dense_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for f in 1..6 {
            for _ in 0..20 {
                let h = symmetrize(&random_matrix(f + 1, f + 1, &mut rng));
                let top = h.view((0, 0), (f, f)).into_owned();
                let eig = SymmetricEigen::new(top);
                let mu: Vec<f64> = eig.eigenvalues.iter().copied().collect();
                let b: CVector = eig.eigenvectors.adjoint() * h.view((0, f), (f, 1)).column(0);
                let weights: Vec<f64> = b.iter().map(|z| z.norm_sqr()).collect();
                let mu_max = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let got = bordered_max_eigenvalue(&mu, mu_max, &weights, h[(f, f)].re);
                let expect = hermitian_eigenvalues(&h).max();
                assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{got} vs {expect}");
            }
        }
    }

    #[test]
    fn secular_solver_handles_decoupled_top_eigenvalue() {
        // b orthogonal to the top eigenvector: λ_max stays at μ_max when δ is small
        assert_eq!(bordered_max_eigenvalue(&[1.0, 5.0], 5.0, &[0.5, 0.0], 0.0), 5.0);
        assert_eq!(bordered_max_eigenvalue(&[2.0, 2.0], 2.0, &[1.0, 3.0], 2.0), 4.0);
        assert_eq!(bordered_max_eigenvalue(&[1.0, 5.0], 5.0, &[0.0, 0.0], 7.0), 7.0);
    }

    #[test]
    fn projection_matches_reference_statistic() {
        for seed in 0..10 {
            let cache = random_cache(8, 12, seed);
            let grid: Vec<f64> = (-6..=6).map(|k| 5.0 * k as f64).collect();
            let proj = SteeringProjection::new(&cache, 0.0, &candidate_angles(&grid, 0.0)).unwrap();
            for set in [vec![1usize], vec![3, 7], vec![2, 9, 11], vec![12, 1, 5, 8]] {
                let angles: Vec<f64> = set.iter().map(|&k| proj.angle(k)).collect();
                let reference = lambda_i_at(&cache, &angles, 0.0).unwrap().lambda_max;
                let fast = proj.lambda_max(&set).unwrap();
                assert!((fast - reference).abs() <= 1e-10 * reference, "{fast} vs {reference}");
            }
            let l0 = crate::stats::lambda_0(&cache).lambda_max;
            assert!((proj.lambda_max(&[]).unwrap() - l0).abs() <= 1e-12 * l0);
        }
    }

    #[test]
    fn duplicate_column_is_inadmissible() {
        let cache = random_cache(6, 8, 1);
        let proj = SteeringProjection::new(&cache, 0.0, &[10.0, 10.0, 0.0]).unwrap();
        assert!(proj.lambda_max(&[1, 2]).is_none());
        assert!(proj.lambda_max(&[3]).is_none());
        assert_eq!(proj.candidates(), vec![1, 2]);
    }

    #[test]
    fn exhaustive_evaluation_count_is_combinatorial() {
        let cache = random_cache(6, 8, 2);
        let r = exhaustive_search(&cache, 2, &[-10.0, 5.0, 20.0], 0.0).unwrap();
        assert_eq!(r.n_evaluations, 3);
        let r = exhaustive_search(&cache, 2, &[-10.0, 0.0, 5.0, 20.0, 30.0], 0.0).unwrap();
        assert_eq!(r.n_evaluations, 6);
        assert!(exhaustive_search(&cache, 3, &[-10.0, 0.0, 5.0], 0.0).is_err());
        assert!(exhaustive_search(&cache, 0, &[-10.0, 5.0], 0.0).is_err());
    }

    #[test]
    fn exhaustive_agrees_with_reference_enumeration() {
        let cache = random_cache(6, 8, 3);
        let grid = [-30.0, -12.0, 0.0, 7.0, 15.0, 40.0];
        let r = exhaustive_search(&cache, 2, &grid, 0.0).unwrap();
        let cands = candidate_angles(&grid, 0.0);
        let mut best = f64::NEG_INFINITY;
        for a in 0..cands.len() {
            for b in a + 1..cands.len() {
                best = best.max(lambda_i_at(&cache, &[cands[a], cands[b]], 0.0).unwrap().lambda_max);
            }
        }
        assert!((r.lambda_max - best).abs() <= 1e-10 * best);
        let via_reference = lambda_i_at(&cache, &r.angles, 0.0).unwrap();
        assert!((via_reference.lambda_hat - r.lambda_hat).abs() <= 1e-9 * r.lambda_hat.max(1.0));
    }

    #[test]
    fn exhaustive_independent_of_grid_order() {
        let cache = random_cache(6, 8, 4);
        let grid: Vec<f64> = (-5..=5).map(|k| 4.0 * k as f64).collect();
        let mut reversed = grid.clone();
        reversed.reverse();
        let a = exhaustive_search(&cache, 2, &grid, 0.0).unwrap();
        let b = exhaustive_search(&cache, 2, &reversed, 0.0).unwrap();
        assert!((a.lambda_max - b.lambda_max).abs() <= 1e-12 * a.lambda_max);
    }

    #[test]
    fn permuted_tuple_gives_same_statistic() {
        let cache = random_cache(8, 8, 5);
        let a = lambda_i_at(&cache, &[10.0, -20.0, 30.0], 0.0).unwrap().lambda_hat;
        let b = lambda_i_at(&cache, &[30.0, 10.0, -20.0], 0.0).unwrap().lambda_hat;
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn exhaustive_finds_injected_signal() {
        let cfg = ScenarioConfig::default().with_coherent(&[10.0]);
        let (cache, _) = scenario_cache(&cfg, Hypothesis::H1(1), 20.0, 21);
        let r = exhaustive_search(&cache, 1, &cfg.grid.points(), 0.0).unwrap();
        assert_eq!(r.angles, vec![10.0]);
    }

    #[test]
    fn init_ranks_plane_wave_first() {
        let grid: Vec<f64> = (-25..=25).map(f64::from).collect();
        let v = steering_vector(7.0, 16).unwrap();
        let z = CMatrix::from_columns(&[v.clone(), v.clone(), v]);
        assert_eq!(init_estimates(&z, &grid, 1).unwrap(), vec![7.0]);
    }

    #[test]
    fn init_on_zero_data_keeps_grid_order() {
        let grid = [-3.0, -1.0, 2.0, 4.0];
        let z = CMatrix::zeros(8, 4);
        assert_eq!(init_estimates(&z, &grid, 2).unwrap(), vec![-3.0, -1.0]);
    }

    #[test]
    fn init_finds_two_separated_sources() {
        let grid: Vec<f64> = (-25..=25).map(f64::from).collect();
        let z = CMatrix::from_columns(&[steering_vector(-15.0, 16).unwrap() + steering_vector(12.0, 16).unwrap()]);
        let mut top = init_estimates(&z, &grid, 2).unwrap();
        top.sort_by(f64::total_cmp);
        assert_eq!(top, vec![-15.0, 12.0]);
    }

    #[test]
    fn cyclic_from_optimum_is_fixed_point() {
        let cache = random_cache(8, 10, 6);
        let grid: Vec<f64> = (-8..=8).map(|k| 3.0 * k as f64).collect();
        let best = exhaustive_search(&cache, 2, &grid, 0.0).unwrap();
        let trace = cyclic_search(&cache, &grid, 0.0, &SearchConfig::default(), &best.angles).unwrap();
        assert_eq!(trace.n_cycles, 1);
        assert_eq!(trace.delta_history, vec![0.0]);
        assert_eq!(trace.lambda_max, best.lambda_max);
    }

    #[test]
    fn cyclic_rejects_bad_init() {
        let cache = random_cache(8, 10, 7);
        let grid = [-10.0, -5.0, 5.0, 10.0];
        let cfg = SearchConfig::default();
        assert!(cyclic_search(&cache, &grid, 0.0, &cfg, &[]).is_err());
        assert!(cyclic_search(&cache, &grid, 0.0, &cfg, &[5.0, 5.0]).is_err());
        assert!(cyclic_search(&cache, &grid, 0.0, &cfg, &[6.0]).is_err());
    }

    #[test]
    fn cyclic_trace_is_monotone_and_distinct() {
        let cfg = ScenarioConfig::default().with_coherent(&[10.0, 18.0]);
        let grid = cfg.grid.points();
        for seed in 0..10 {
            let (cache, primary) = scenario_cache(&cfg, Hypothesis::H1(2), 0.0, seed);
            let init = init_estimates(&primary, &candidate_angles(&grid, 0.0), 3).unwrap();
            let trace = cyclic_search(&cache, &grid, 0.0, &SearchConfig::default(), &init).unwrap();
            assert!(trace.max_decrease() <= 1e-12);
            let mut e = trace.estimates.clone();
            e.sort_by(f64::total_cmp);
            e.dedup();
            assert_eq!(e.len(), 3);
            assert!(trace.lambda_hat >= 0.0);
        }
    }

    #[test]
    fn two_stage_with_equal_step_matches_single_stage() {
        let cfg = ScenarioConfig::default().with_coherent(&[10.0]);
        let (cache, primary) = scenario_cache(&cfg, Hypothesis::H1(1), 5.0, 3);
        let search = SearchConfig {
            mode: SearchMode::Exhaustive,
            ..SearchConfig::default()
        };
        let single = maximize(&cache, &primary, 2, &cfg.grid.points(), 0.0, &search).unwrap();
        let two = two_stage_refine(&cache, &primary, 2, &cfg.grid, 2.0, 1.0, 0.0, &search).unwrap();
        assert!((single.lambda_max - two.lambda_max).abs() <= 1e-12 * single.lambda_max);
        assert!(two_stage_refine(&cache, &primary, 2, &cfg.grid, 2.0, 1.5, 0.0, &search).is_err());
    }

    #[test]
    fn two_stage_refines_off_grid_signal() {
        let cfg = ScenarioConfig::default().with_coherent(&[10.4]);
        let (cache, primary) = scenario_cache(&cfg, Hypothesis::H1(1), 25.0, 4);
        for mode in [SearchMode::Exhaustive, SearchMode::Cyclic] {
            let search = SearchConfig { mode, ..SearchConfig::default() };
            let coarse = maximize(&cache, &primary, 1, &cfg.grid.points(), 0.0, &search).unwrap();
            let fine = two_stage_refine(&cache, &primary, 1, &cfg.grid, 1.5, 0.1, 0.0, &search).unwrap();
            assert!(fine.lambda_hat >= coarse.lambda_hat);
            assert!((fine.angles[0] - 10.4).abs() <= 0.1 + 1e-9, "{:?}", fine.angles);
        }
    }

    #[test]
    fn log_likelihood_is_increasing_and_matches_statistic() {
        let l = 32;
        let mut prev = f64::NEG_INFINITY;
        for k in 1..200 {
            let lam = k as f64 * 0.5;
            let v = log_likelihood(lam, l);
            assert!(v > prev);
            prev = v;
            if lam >= 32.0 {
                assert!((v - glr_from_eigenvalue(lam, l)).abs() < 1e-12);
            }
        }
    }
}
