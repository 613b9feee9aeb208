//! Small dense symmetric solves on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Solves `(A + ridge·I) x = b` for symmetric positive (semi-)definite `A`
/// given row-major. Returns `None` if the factorisation fails.
pub fn solve_spd(a: &[f64], b: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let p = b.len();
    let mut m = DMatrix::from_row_slice(p, p, a);
    for i in 0..p {
        m[(i, i)] += ridge;
    }
    let chol = m.cholesky()?;
    let x = chol.solve(&DVector::from_column_slice(b));
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}

/// Lower Cholesky factor (row-major) of the inverse of symmetric `A`, adding
/// ridge until `A` factorises.
pub fn inverse_cholesky(a: &[f64], p: usize) -> Vec<f64> {
    let mut ridge = 0.0;
    loop {
        let mut m = DMatrix::from_row_slice(p, p, a);
        for i in 0..p {
            m[(i, i)] += ridge;
        }
        if let Some(chol) = m.clone().cholesky() {
            let inv = chol.inverse();
            if let Some(l) = inv.cholesky() {
                let l = l.l();
                let mut out = vec![0.0; p * p];
                for i in 0..p {
                    for j in 0..=i {
                        out[i * p + j] = l[(i, j)];
                    }
                }
                if out.iter().all(|v| v.is_finite()) {
                    return out;
                }
            }
        }
        let scale = (0..p).map(|i| a[i * p + i].abs()).fold(0.0, f64::max).max(1.0);
        ridge = if ridge == 0.0 { 1e-8 * scale } else { ridge * 10.0 };
    }
}
