//! Dense linear algebra, softmax machinery, the principal Lambert W branch and
//! seeded random streams.
//!
//! Everything here is a pure function of its arguments. The operator norm is
//! computed by power iteration on the Gram matrix, so no external
//! decomposition library is needed.

mod lambert;
mod matrix;
mod rng;

pub use lambert::lambert_w0;
pub use matrix::{dot, norm2, Matrix, Vector};
pub use rng::{gaussian_matrix, RngStream};

use crate::error::{Error, Result};

const POWER_MAX_ITERS: usize = 200;
const POWER_REL_TOL: f64 = 1e-12;
/// Number of Gram-matrix squarings applied before the power iteration.
/// Each squaring doubles the exponent on the eigenvalue ratio.
const GRAM_SQUARINGS: usize = 6;
/// Seed of the power-iteration start vector.
const POWER_START_SEED: u64 = 0x005E_ED0F_5EC7;

/// Largest singular value of `m`.
///
/// Power iteration on `mᵀm` (or `mmᵀ`, whichever is smaller) with a seeded
/// random start. The Gram matrix is first raised to the 64th power by
/// repeated normalised squaring and the iteration runs on that, which makes
/// convergence insensitive to a small gap between the top two singular
/// values. The final estimate is the Rayleigh quotient on the Gram matrix
/// itself, refined by plain power steps.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    m.check_finite()?;
    let scale = m.max_abs();
    if scale == 0.0 {
        return Ok(0.0);
    }
    // Scaling keeps the Gram entries well inside the f64 range.
    let scaled = m.scale(1.0 / scale);
    let gram = if scaled.rows() >= scaled.cols() {
        scaled.t_matmul(&scaled)
    } else {
        scaled.matmul(&scaled.transpose())
    };
    let k = gram.rows();
    if k == 1 {
        return Ok(gram[(0, 0)].sqrt() * scale);
    }

    let mut accel = gram.clone();
    for _ in 0..GRAM_SQUARINGS {
        let f = accel.frobenius_norm();
        accel = accel.scale(1.0 / f);
        accel = accel.matmul(&accel);
    }

    let mut rng = RngStream::new(POWER_START_SEED, k as u64);
    let mut v: Vec<f64> = (0..k).map(|_| rng.standard_normal()).collect();
    normalize(&mut v);
    v = power_steps(&accel, v, POWER_MAX_ITERS);
    v = power_steps(&gram, v, POWER_MAX_ITERS);
    let gv = gram.matvec(&v);
    let lambda = dot(&v, &gv).max(0.0);
    Ok(lambda.sqrt() * scale)
}

fn power_steps(a: &Matrix, mut v: Vec<f64>, max_iters: usize) -> Vec<f64> {
    let mut prev = 0.0;
    for _ in 0..max_iters {
        let mut w = a.matvec(&v).into_inner();
        let est = norm2(&w);
        if est == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= est);
        v = w;
        if (est - prev).abs() <= POWER_REL_TOL * est {
            break;
        }
        prev = est;
    }
    v
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// `sqrt(Σ mᵢⱼ²)`.
pub fn frobenius_norm(m: &Matrix) -> Result<f64> {
    m.check_finite()?;
    Ok(m.frobenius_norm())
}

/// Softmax of a slice, stabilised by subtracting the maximum.
pub fn softmax(logits: &[f64]) -> Vector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Vector(out)
}

/// Row-wise softmax. Every output row lies on the probability simplex.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let p = softmax(m.row(i));
        out.row_mut(i).copy_from_slice(&p);
    }
    out
}

/// Tolerance used to decide whether a vector lies on the probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Jacobian of the softmax at output `p`: `diag(p) − p pᵀ`.
pub fn softmax_jacobian(p: &[f64]) -> Result<Matrix> {
    if p.is_empty() {
        return Err(Error::InvalidInput("empty probability vector".into()));
    }
    let total: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < -SIMPLEX_TOL) || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidInput(format!(
            "vector is not on the probability simplex (sum = {total})"
        )));
    }
    let n = p.len();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let diag = if i == j { p[i] } else { 0.0 };
        diag - p[i] * p[j]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn spectral_norm_identity_and_diagonal() {
        assert!(close(spectral_norm(&Matrix::identity(3)).unwrap(), 1.0, 1e-14));
        assert!(close(spectral_norm(&Matrix::diag(&[2.0, 0.5])).unwrap(), 2.0, 1e-14));
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_rejects_non_finite() {
        let m = Matrix::from_rows(&[[1.0, f64::INFINITY]]).unwrap();
        assert!(matches!(spectral_norm(&m), Err(Error::InvalidInput(_))));
        assert!(frobenius_norm(&m).is_err());
    }

    #[test]
    fn spectral_norm_degenerate_top_singular_value() {
        // Repeated top singular value: any vector in the top eigenspace works.
        let m = Matrix::diag(&[3.0, 3.0, 1.0]);
        assert!(close(spectral_norm(&m).unwrap(), 3.0, 1e-14));
    }

    #[test]
    fn spectral_norm_row_and_column_vectors() {
        let row = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        assert!(close(spectral_norm(&row).unwrap(), 5.0, 1e-15));
        assert!(close(spectral_norm(&row.transpose()).unwrap(), 5.0, 1e-15));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&Matrix::zeros(2, 2)).unwrap(), 0.0);
        let m = Matrix::from_rows(&[[3.0, 4.0]]).unwrap();
        assert_eq!(frobenius_norm(&m).unwrap(), 5.0);
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[
            [0.0, 0.0, 0.0],
            [1000.0, 0.0, 0.0],
            [std::f64::consts::LN_2, 0.0, f64::NEG_INFINITY],
        ])
        .unwrap();
        let p = softmax_rows(&m);
        for j in 0..3 {
            assert!(close(p[(0, j)], 1.0 / 3.0, 1e-15));
        }
        assert_eq!(p[(1, 0)], 1.0);
        assert!(p[(1, 1)] < 1e-300);
        assert!(close(p[(2, 0)], 2.0 / 3.0, 1e-15));
        assert!(close(p[(2, 1)], 1.0 / 3.0, 1e-15));
    }

    #[test]
    fn softmax_jacobian_examples() {
        let j = softmax_jacobian(&[1.0, 0.0]).unwrap();
        assert_eq!(j, Matrix::zeros(2, 2));
        let j = softmax_jacobian(&[0.5, 0.5]).unwrap();
        assert_eq!(j, Matrix::from_rows(&[[0.25, -0.25], [-0.25, 0.25]]).unwrap());
        assert!(softmax_jacobian(&[0.5, 0.6]).is_err());
        assert!(softmax_jacobian(&[1.5, -0.5]).is_err());
        assert!(softmax_jacobian(&[]).is_err());
    }

    #[test]
    fn softmax_jacobian_bound_on_random_simplex() {
        let mut rng = RngStream::new(11, 0);
        for trial in 0..1000 {
            let dim = 2 + trial % 63;
            let logits: Vec<f64> = (0..dim).map(|_| 4.0 * rng.standard_normal()).collect();
            let p = softmax(&logits);
            let j = softmax_jacobian(&p).unwrap();
            for i in 0..dim {
                let row_sum: f64 = j.row(i).iter().sum();
                assert!(row_sum.abs() < 1e-12);
                for k in 0..dim {
                    assert_eq!(j[(i, k)], j[(k, i)]);
                }
            }
            assert!(spectral_norm(&j).unwrap() <= 2.0 + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(row in proptest::collection::vec(-1e4f64..1e4, 1..40)) {
            let m = Matrix::from_rows(&[row]).unwrap();
            let p = softmax_rows(&m);
            let s: f64 = p.row(0).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn norm_inequality_chain(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
            let m = gaussian_matrix(rows, cols, &mut RngStream::new(seed, 0));
            let s = spectral_norm(&m).unwrap();
            let f = frobenius_norm(&m).unwrap();
            let r = (rows.min(cols) as f64).sqrt();
            prop_assert!(s <= f * (1.0 + 1e-12));
            prop_assert!(f <= r * s * (1.0 + 1e-12));
        }
    }
}
