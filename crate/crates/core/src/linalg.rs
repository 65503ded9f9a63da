//! Complex Hermitian kernels shared by every statistic: sample covariance,
//! whitening, and largest-eigenvalue extraction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Maximum tolerated absolute asymmetry before a matrix is rejected as non-Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-8;

/// How the whitening factor `F` with `F F^H = M̂` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Whitening {
    /// Lower Cholesky factor; applied by forward substitution.
    #[default]
    Cholesky,
    /// Hermitian inverse square root `M̂^{-1/2}` from an eigen-decomposition.
    HermitianSqrt,
}

/// Applies `F^{-1}` for some `F` with `F F^H = M̂`.
#[derive(Debug, Clone)]
pub enum Whitener {
    Triangular(CMatrix),
    InverseSqrt(CMatrix),
}

impl Whitener {
    pub fn new(m_hat: &CMatrix, kind: Whitening) -> Result<Self> {
        match kind {
            Whitening::Cholesky => cholesky_lower(m_hat).map(Whitener::Triangular),
            Whitening::HermitianSqrt => {
                let eig = SymmetricEigen::new(symmetrize(m_hat));
                if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
                    return Err(Error::Singular("sample covariance"));
                }
                let q = &eig.eigenvectors;
                let scale = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from(l.sqrt().recip())));
                Ok(Whitener::InverseSqrt(q * scale * q.adjoint()))
            }
        }
    }

    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        match self {
            Whitener::Triangular(f) => f
                .solve_lower_triangular(x)
                .expect("Cholesky factor has a nonzero diagonal"),
            Whitener::InverseSqrt(w) => w * x,
        }
    }

    pub fn apply_vec(&self, x: &CVector) -> CVector {
        match self {
            Whitener::Triangular(f) => f
                .solve_lower_triangular(x)
                .expect("Cholesky factor has a nonzero diagonal"),
            Whitener::InverseSqrt(w) => w * x,
        }
    }
}

/// Per-trial whitened quantities reused by every hypothesis order.
#[derive(Debug, Clone)]
pub struct WhitenedCache {
    pub m_hat: CMatrix,
    pub whitener: Whitener,
    pub v_t: CVector,
    pub v_w: CVector,
    /// Whitened primary data `F^{-1} Z_L` (N x L).
    pub z_w: CMatrix,
    pub s_w: CMatrix,
}

impl WhitenedCache {
    pub fn n_antennas(&self) -> usize {
        self.v_t.len()
    }

    pub fn n_pulses(&self) -> usize {
        self.z_w.ncols()
    }

    /// `‖v_w‖² = v_t^H M̂^{-1} v_t`.
    pub fn v_w_norm_sq(&self) -> f64 {
        self.v_w.norm_squared()
    }

    /// `v_w^H S_w v_w = Σ_l |v_t^H M̂^{-1} z_l|²`.
    pub fn target_energy(&self) -> f64 {
        (self.z_w.adjoint() * &self.v_w).norm_squared()
    }

    /// `tr(S_w) = Σ_l z_l^H M̂^{-1} z_l`.
    pub fn total_energy(&self) -> f64 {
        self.z_w.norm_squared()
    }

    /// Whitens an arbitrary set of steering columns.
    pub fn whiten_columns(&self, v: &CMatrix) -> CMatrix {
        self.whitener.apply(v)
    }
}

/// `M̂ = (1/K) Σ z_k z_k^H` over the columns of `secondary` (N x K).
pub fn sample_covariance(secondary: &CMatrix) -> Result<CMatrix> {
    let (n, k) = secondary.shape();
    if k < n {
        return Err(Error::InsufficientSecondary { k, n });
    }
    let mut m = secondary * secondary.adjoint();
    m.unscale_mut(k as f64);
    Ok(symmetrize(&m))
}

pub fn whiten(m_hat: &CMatrix, v_t: &CVector, primary: &CMatrix) -> Result<WhitenedCache> {
    whiten_with(m_hat, v_t, primary, Whitening::Cholesky)
}

pub fn whiten_with(
    m_hat: &CMatrix,
    v_t: &CVector,
    primary: &CMatrix,
    kind: Whitening,
) -> Result<WhitenedCache> {
    let n = m_hat.nrows();
    if m_hat.ncols() != n || v_t.len() != n || primary.nrows() != n {
        return Err(Error::Contract(format!(
            "dimension mismatch: M̂ {:?}, v_t {}, Z {:?}",
            m_hat.shape(),
            v_t.len(),
            primary.shape()
        )));
    }
    let whitener = Whitener::new(m_hat, kind)?;
    let v_w = whitener.apply_vec(v_t);
    let z_w = whitener.apply(primary);
    let s_w = symmetrize(&(&z_w * z_w.adjoint()));
    Ok(WhitenedCache {
        m_hat: m_hat.clone(),
        whitener,
        v_t: v_t.clone(),
        v_w,
        z_w,
        s_w,
    })
}

/// Lower-triangular `C` with `C C^H = A`.
pub fn cholesky_lower(a: &CMatrix) -> Result<CMatrix> {
    nalgebra::Cholesky::new(symmetrize(a))
        .map(|c| c.unpack())
        .ok_or(Error::Singular("Cholesky factorization failed"))
}

/// Largest absolute entry of `D - D^H`.
pub fn hermitian_asymmetry(d: &CMatrix) -> f64 {
    let n = d.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((d[(i, j)] - d[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(D + D^H) / 2`.
pub fn symmetrize(d: &CMatrix) -> CMatrix {
    (d + d.adjoint()).unscale(2.0)
}

/// `λ_max{D}` of a Hermitian matrix.
pub fn max_eigenvalue(d: &CMatrix) -> Result<f64> {
    if !d.is_square() || d.nrows() == 0 {
        return Err(Error::Contract(format!("max_eigenvalue of {:?} matrix", d.shape())));
    }
    let asymmetry = hermitian_asymmetry(d);
    if asymmetry > HERMITIAN_TOL {
        return Err(Error::NotHermitian { asymmetry });
    }
    if d.nrows() == 1 {
        return Ok(d[(0, 0)].re);
    }
    Ok(hermitian_eigenvalues(&symmetrize(d)).max())
}

/// Eigenvalues of a Hermitian matrix (caller guarantees Hermitian input).
pub fn hermitian_eigenvalues(d: &CMatrix) -> DVector<f64> {
    d.clone().symmetric_eigenvalues()
}

/// Spectral condition number of a Hermitian positive semidefinite matrix.
pub fn condition_number(a: &CMatrix) -> f64 {
    let eig = hermitian_eigenvalues(&symmetrize(a));
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::testutil::{random_matrix, random_pd};

    fn power_iteration(d: &CMatrix) -> f64 {
        // shift to make the spectrum positive so the dominant eigenvalue is λ_max
        let n = d.nrows();
        let shift = d.iter().map(|z| z.norm()).sum::<f64>();
        let shifted = d + CMatrix::identity(n, n).scale(shift);
        let mut x = CVector::from_element(n, C64::new(1.0, 0.3));
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let y = &shifted * &x;
            let next = y.norm();
            x = y.unscale(next);
            let done = (next - lambda).abs() <= 1e-15 * next;
            lambda = next;
            if done {
                break;
            }
        }
        (x.adjoint() * d * &x)[(0, 0)].re
    }

    #[test]
    fn sample_covariance_of_repeated_basis_vector() {
        let k = 5;
        let mut z = CMatrix::zeros(3, k);
        for j in 0..k {
            z[(0, j)] = C64::new(1.0, 0.0);
        }
        let m = sample_covariance(&z).unwrap();
        for ((i, j), v) in m.iter().enumerate().map(|(idx, v)| ((idx % 3, idx / 3), v)) {
            let expect = if i == 0 && j == 0 { 1.0 } else { 0.0 };
            assert_eq!(*v, C64::new(expect, 0.0));
        }
    }

    #[test]
    fn sample_covariance_rejects_short_training() {
        let z = CMatrix::zeros(4, 3);
        assert!(matches!(
            sample_covariance(&z),
            Err(Error::InsufficientSecondary { k: 3, n: 4 })
        ));
    }

    #[test]
    fn sample_covariance_converges_to_true_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_pd(4, &mut rng);
        let f = cholesky_lower(&m).unwrap();
        let k = 100_000;
        let w = crate::signal::complex_normal_matrix(4, k, &mut rng);
        let m_hat = sample_covariance(&(&f * w)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let err = (m_hat[(i, j)] - m[(i, j)]).norm();
                assert!(err <= 0.03 * m[(i, j)].norm().max(m[(i, i)].re.min(m[(j, j)].re)));
            }
        }
    }

    #[test]
    fn identity_whitening_is_transparent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_matrix(4, 6, &mut rng);
        let v = random_matrix(4, 1, &mut rng).column(0).into_owned();
        let cache = whiten(&CMatrix::identity(4, 4), &v, &z).unwrap();
        assert!((&cache.v_w - &v).norm() < 1e-15);
        assert!((&cache.s_w - &z * z.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn scaled_identity_scales_steering_energy() {
        let v = CVector::from_element(4, C64::new(1.0, 0.0));
        let z = CMatrix::zeros(4, 2);
        let cache = whiten(&CMatrix::identity(4, 4).scale(4.0), &v, &z).unwrap();
        assert!((cache.v_w_norm_sq() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn whitened_quadratic_forms_match_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_pd(6, &mut rng);
            let z = random_matrix(6, 9, &mut rng);
            let v = random_matrix(6, 1, &mut rng).column(0).into_owned();
            let inv = m.clone().try_inverse().unwrap();
            let expect = (v.adjoint() * &inv * &z * z.adjoint() * &inv * &v)[(0, 0)].re;
            let expect_a = (v.adjoint() * &inv * &v)[(0, 0)].re;
            for kind in [Whitening::Cholesky, Whitening::HermitianSqrt] {
                let cache = whiten_with(&m, &v, &z, kind).unwrap();
                let x = (cache.v_w.adjoint() * &cache.s_w * &cache.v_w)[(0, 0)].re;
                assert!((x - expect).abs() <= 1e-10 * expect.abs());
                assert!((cache.target_energy() - expect).abs() <= 1e-10 * expect.abs());
                assert!((cache.v_w_norm_sq() - expect_a).abs() <= 1e-10 * expect_a);
            }
        }
    }

    #[test]
    fn whitening_rejects_singular_matrix() {
        let m = CMatrix::zeros(3, 3);
        let v = CVector::from_element(3, C64::new(1.0, 0.0));
        let z = CMatrix::zeros(3, 1);
        assert!(matches!(whiten(&m, &v, &z), Err(Error::Singular(_))));
        assert!(matches!(
            whiten_with(&m, &v, &z, Whitening::HermitianSqrt),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn max_eigenvalue_of_diagonal_and_scalar() {
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(3.0, 0.0),
            C64::new(2.0, 0.0),
        ]));
        assert_eq!(max_eigenvalue(&d).unwrap(), 3.0);
        let s = CMatrix::from_element(1, 1, C64::new(4.5, 0.0));
        assert_eq!(max_eigenvalue(&s).unwrap(), 4.5);
    }

    #[test]
    fn max_eigenvalue_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let a = random_matrix(5, 5, &mut rng);
            let h = symmetrize(&a);
            let expect = power_iteration(&h);
            let got = max_eigenvalue(&h).unwrap();
            assert!((got - expect).abs() <= 1e-10 * expect.abs().max(1.0), "{got} vs {expect}");
        }
    }

    #[test]
    fn max_eigenvalue_rejects_non_hermitian() {
        let mut d = CMatrix::identity(2, 2);
        d[(0, 1)] = C64::new(1.0, 0.0);
        assert!(matches!(max_eigenvalue(&d), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn condition_number_of_diagonal() {
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(2.0, 0.0), C64::new(8.0, 0.0)]));
        assert!((condition_number(&d) - 4.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn max_eigenvalue_is_positively_homogeneous(seed in 0u64..1000, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = symmetrize(&random_matrix(4, 4, &mut rng));
            let base = max_eigenvalue(&h).unwrap();
            let scaled = max_eigenvalue(&h.scale(c)).unwrap();
            proptest::prop_assert!((scaled - c * base).abs() <= 1e-10 * (c * base).abs().max(1e-6));
        }

        #[test]
        fn sample_covariance_ignores_secondary_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_matrix(3, 7, &mut rng);
            let mut cols: Vec<_> = z.column_iter().map(|c| c.into_owned()).collect();
            cols.reverse();
            cols.swap(1, 4);
            let permuted = CMatrix::from_columns(&cols);
            let a = sample_covariance(&z).unwrap();
            let b = sample_covariance(&permuted).unwrap();
            proptest::prop_assert!((a - b).norm() < 1e-12);
        }
    }
}
