//! Generic reference computations used to cross-check the structured routes.

use nalgebra::DMatrix;

/// Moore–Penrose inverse by SVD; singular values below `1e-12 · σ_max`
/// are treated as zero.
pub fn svd_pseudoinverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let cutoff = 1e-12 * sigma_max;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += v_t.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
/// Independent of the Padé route in `nalgebra`.
pub fn expm_taylor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.amax() * n as f64;
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = m * scale;
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &a / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_inverse_of_two_state_psi() {
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let plus = svd_pseudoinverse(&psi);
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((plus - expected).amax() < 1e-14);
        assert_eq!(svd_pseudoinverse(&DMatrix::zeros(3, 3)), DMatrix::zeros(3, 3));
    }

    #[test]
    fn taylor_exp_matches_pade() {
        let a = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.5, 1.5, -1.0, 0.5, 0.5, 0.0, -1.0]);
        let diff = expm_taylor(&a) - a.clone().exp();
        assert!(diff.amax() < 1e-13);
    }

    #[test]
    fn idempotent_generator_closed_form() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let tau: f64 = 0.7;
        let expected = DMatrix::identity(2, 2) + &b * (tau.exp() - 1.0);
        assert!((expm_taylor(&(&b * tau)) - expected).amax() < 1e-14);
    }
}
