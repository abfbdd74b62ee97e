//! Newton systems `(D + X̃ B X̃ᵀ) s = r` with diagonal `D`, solved in sample space.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{CprError, Result};
use crate::scalar::Scalar;

/// Largest feature dimension for which a singular inner system falls back
/// to a dense `d × d` solve.
pub const DENSE_FALLBACK_MAX_D: usize = 500;

/// Solves `(D + X̃ B X̃ᵀ) s = rhs` where `D = diag(d_diag)`, `X̃` is `d × n`
/// and `B` is `n × n`, factoring only the `n × n` matrix `I + B X̃ᵀ D⁻¹ X̃`.
pub fn woodbury_solve<T: Scalar>(
    b: &DMatrix<T>,
    x: &DMatrix<T>,
    d_diag: &DVector<T>,
    rhs: &DVector<T>,
) -> Result<DVector<T>> {
    let (d, n) = x.shape();
    if b.shape() != (n, n) || d_diag.len() != d || rhs.len() != d {
        return Err(CprError::DimensionMismatch(format!(
            "B {:?}, X̃ {d}×{n}, D {}, rhs {}",
            b.shape(),
            d_diag.len(),
            rhs.len()
        )));
    }
    if d_diag.iter().any(|v| !(*v > T::zero())) {
        return Err(CprError::InvalidInput("Woodbury diagonal must be positive".into()));
    }
    let d_inv = d_diag.map(|v| T::one() / v);
    let base = rhs.component_mul(&d_inv);
    if n == 0 {
        return Ok(base);
    }
    // D⁻¹X̃
    let mut dx = x.clone();
    for (mut row, &s) in dx.row_iter_mut().zip(d_inv.iter()) {
        row *= s;
    }
    let mut inner = b * x.tr_mul(&dx);
    for i in 0..n {
        inner[(i, i)] += T::one();
    }
    let t = b * x.tr_mul(&base);
    match inner.lu().solve(&t) {
        Some(u) if u.iter().all(|v| v.is_finite_value()) => Ok(base - dx * u),
        _ if d <= DENSE_FALLBACK_MAX_D => {
            warn!("singular Woodbury inner system; solving the {d}×{d} system directly");
            let mut h = x * b * x.transpose();
            for i in 0..d {
                h[(i, i)] += d_diag[i];
            }
            h.lu().solve(rhs).ok_or_else(|| CprError::Numerical("singular Newton system".into()))
        }
        _ => Err(CprError::Numerical("singular Woodbury inner system".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(b: &DMatrix<f64>, x: &DMatrix<f64>, dd: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        (DMatrix::from_diagonal(dd) + x * b * x.transpose()).try_inverse().unwrap() * r
    }

    #[test]
    fn zero_low_rank_part_divides_by_diagonal() {
        let dd = DVector::from_vec(vec![2.0, 4.0, 0.5]);
        let r = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let expected = DVector::from_vec(vec![0.5, -0.5, 6.0]);
        let x = DMatrix::from_element(3, 2, 0.3);
        assert_eq!(woodbury_solve(&DMatrix::zeros(2, 2), &x, &dd, &r).unwrap(), expected);
        let b = DMatrix::from_element(2, 2, 1.7);
        assert_eq!(woodbury_solve(&b, &DMatrix::zeros(3, 2), &dd, &r).unwrap(), expected);
    }

    #[test]
    fn small_instance_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let b = &a * a.transpose();
        let dd = DVector::from_fn(3, |_, _| rng.random_range(0.5..2.0));
        let r = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let s = woodbury_solve(&b, &x, &dd, &r).unwrap();
        assert!((&s - dense(&b, &x, &dd, &r)).amax() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(20, 7, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(7, 7, |_, _| rng.random_range(-1.0..1.0));
        let b = &a * a.transpose();
        let dd = DVector::from_element(20, 1.0);
        let r = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(woodbury_solve(&b, &x, &dd, &r).unwrap(), woodbury_solve(&b, &x, &dd, &r).unwrap());
    }

    #[test]
    fn f32_solution() {
        let x = DMatrix::<f32>::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 2.0]);
        let b = DMatrix::<f32>::identity(2, 2);
        let dd = DVector::from_element(2, 1.0f32);
        let r = DVector::from_vec(vec![1.0f32, 1.0]);
        let s = woodbury_solve(&b, &x, &dd, &r).unwrap();
        let h = DMatrix::<f32>::identity(2, 2) + &x * x.transpose();
        assert_relative_eq!((h * s - r).amax(), 0.0, epsilon = 1e-5);
    }

    #[test]
    fn shape_and_sign_errors() {
        let x = DMatrix::<f64>::zeros(3, 2);
        let b = DMatrix::zeros(2, 2);
        assert!(woodbury_solve(&b, &x, &DVector::from_element(2, 1.0), &DVector::zeros(3)).is_err());
        assert!(woodbury_solve(&b, &x, &DVector::from_element(3, 0.0), &DVector::zeros(3)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn matches_dense_inverse(seed in 0u64..1000, d in 1usize..12, n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(d, n, |_, _| rng.random_range(-1.0..1.0));
            let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let b = &a * a.transpose();
            let dd = DVector::from_fn(d, |_, _| rng.random_range(0.2..3.0));
            let r = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let s = woodbury_solve(&b, &x, &dd, &r).unwrap();
            proptest::prop_assert!((&s - dense(&b, &x, &dd, &r)).amax() < 1e-8);
        }
    }
}
