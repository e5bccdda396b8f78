use nalgebra::{DMatrix, DVector};

/// e^{A t}.
pub fn expm(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (a * t).exp()
}

/// [B, AB, …, A^{n-1}B].
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut c = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        c.set_column(k, &col);
        col = a * col;
    }
    c
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = smax * 1e-10 * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn is_controllable(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
    numerical_rank(&controllability_matrix(a, b)) == a.nrows()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}
