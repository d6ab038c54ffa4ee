//! Frechet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};

pub const COVARIANCE_REGULARIZER: f64 = 1e-6;

fn moments(x: &Array2<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let m = DMatrix::from_row_iterator(n, d, x.iter().copied());
    let mean = m.row_mean().transpose();
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    for i in 0..d {
        cov[(i, i)] += COVARIANCE_REGULARIZER;
    }
    (mean, cov)
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))` over rows as samples.
///
/// The trace of the square root equals the sum of singular values of
/// `S2^(1/2) S1^(1/2)`, whose Gram matrix `S1^(1/2) S2 S1^(1/2)` shares the
/// spectrum of `S1 S2`. Singular values keep small directions accurate where
/// square roots of tiny eigenvalues would not.
pub fn fid(real: &Array2<f64>, anon: &Array2<f64>) -> Result<f64> {
    if real.ncols() != anon.ncols() {
        return Err(Error::contract(format!(
            "feature dimensions differ: {} vs {}",
            real.ncols(),
            anon.ncols()
        )));
    }
    if real.nrows() < 2 || anon.nrows() < 2 || real.ncols() == 0 {
        return Err(Error::domain("fid needs at least two samples per set"));
    }
    if real.iter().chain(anon.iter()).any(|v| !v.is_finite()) {
        return Err(Error::domain("features must be finite"));
    }
    let (m1, s1) = moments(real);
    let (m2, s2) = moments(anon);
    let cross = sqrt_psd(&s2) * sqrt_psd(&s1);
    let tr_cross: f64 = cross.singular_values().iter().sum();
    let diff = (m1 - m2).norm_squared();
    Ok((diff + s1.trace() + s2.trace() - 2.0 * tr_cross).max(0.0))
}
