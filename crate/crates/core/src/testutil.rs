use rand::Rng;

use crate::linalg::{CMatrix, C64};
use crate::signal::complex_normal_matrix;

pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    complex_normal_matrix(rows, cols, rng)
}

/// Well-conditioned random Hermitian positive definite matrix.
pub fn random_pd<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let a = random_matrix(n, 2 * n, rng);
    let mut m = &a * a.adjoint();
    m.unscale_mut(2.0 * n as f64);
    for i in 0..n {
        m[(i, i)] += C64::new(0.1, 0.0);
    }
    crate::linalg::symmetrize(&m)
}
