//! Pole placement for the predictor feedback V_eff = −K Y.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg::{controllability_matrix, expm, is_controllable};

/// Default closed-loop spectrum −1, −1.5, −2, … for an n-state system.
pub fn default_poles(n: usize) -> Vec<f64> {
    (0..n).map(|i| -1.0 - 0.5 * i as f64).collect()
}

/// Gain K with spec(A − B̄K) = `poles`, B̄ = e^{−Ah}B, by Ackermann's
/// formula K = e_nᵀ C(A, B̄)⁻¹ p(A).
pub fn stabilizing_gain(a: &DMatrix<f64>, b: &DVector<f64>, h: f64, poles: &[f64]) -> Result<RowDVector<f64>> {
    let n = a.nrows();
    if poles.len() != n {
        return Err(Error::InvalidPoles(format!("expected {n} poles, got {}", poles.len())));
    }
    if let Some(p) = poles.iter().find(|p| !p.is_finite() || **p >= 0.0) {
        return Err(Error::InvalidPoles(format!("pole {p} is not in the open left half-plane")));
    }
    if !is_controllable(a, b) {
        return Err(Error::NotControllable);
    }
    let bbar = expm(a, -h) * b;
    if !is_controllable(a, &bbar) {
        return Err(Error::NotControllable);
    }
    let c = controllability_matrix(a, &bbar);
    let c_inv = c.try_inverse().ok_or(Error::NotControllable)?;
    let mut pa = DMatrix::identity(n, n);
    for &p in poles {
        pa = &pa * (a - DMatrix::identity(n, n) * p);
    }
    let last = c_inv.row(n - 1).into_owned();
    Ok(RowDVector::from_iterator(n, (last * pa).iter().copied()))
}

/// Eigenvalues of A − B̄K sorted by real part, as (re, im) pairs.
pub fn closed_loop_spectrum(a: &DMatrix<f64>, bbar: &DVector<f64>, k: &RowDVector<f64>) -> Vec<(f64, f64)> {
    let h = a - bbar * k;
    let mut ev: Vec<(f64, f64)> = h.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect();
    ev.sort_by(|x, y| x.0.total_cmp(&y.0));
    ev
}
