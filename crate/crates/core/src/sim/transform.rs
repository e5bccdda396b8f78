//! The Volterra change of variables
//!
//! ```text
//! α(x) = u(x) + ∫_0^x K_uu(x,y) u(y) + K_uv(x,y) v(y) dy + γ_α(x) X
//! β(x) = v(x) + ∫_0^x K_vu(x,y) u(y) + K_vv(x,y) v(y) dy + γ_β(x) X
//! ```
//!
//! applied node-wise with the trapezoid rule, its inverse, and the
//! explicit characteristic formula for β.

use nalgebra::DVector;

use super::{check_kernel_grid, check_path, Trajectory};
use crate::brownian::BrownianPath;
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::kernels::KernelSet;
use crate::params::SystemParams;

const INVERSE_TOL: f64 = 1e-10;
const INVERSE_MAX_ITER: usize = 100;

fn trap(i: usize, j: usize, dx: f64) -> f64 {
    if i == 0 {
        0.0
    } else if j == 0 || j == i {
        0.5 * dx
    } else {
        dx
    }
}

/// Integral terms of the transform at node i, summed over nodes j < `upto`.
fn volterra(u: &[f64], v: &[f64], ks: &KernelSet, i: usize, upto: usize) -> (f64, f64) {
    let dx = ks.dx();
    let (ruu, ruv, rvu, rvv) = (ks.k_uu.row(i), ks.k_uv.row(i), ks.k_vu.row(i), ks.k_vv.row(i));
    let (mut a, mut b) = (0.0, 0.0);
    for j in 0..upto {
        let w = trap(i, j, dx);
        a += w * (ruu[j] * u[j] + ruv[j] * v[j]);
        b += w * (rvu[j] * u[j] + rvv[j] * v[j]);
    }
    (a, b)
}

pub fn transform_profile(u: &[f64], v: &[f64], x: &DVector<f64>, ks: &KernelSet) -> (Vec<f64>, Vec<f64>) {
    let nx = ks.grid_nx;
    let xt = x.transpose();
    let mut alpha = Vec::with_capacity(nx + 1);
    let mut beta = Vec::with_capacity(nx + 1);
    for i in 0..=nx {
        let (a, b) = volterra(u, v, ks, i, i + 1);
        alpha.push(u[i] + a + ks.gamma_alpha[i].dot(&xt));
        beta.push(v[i] + b + ks.gamma_beta[i].dot(&xt));
    }
    (alpha, beta)
}

/// Fill `alpha_field` and `beta_field` from the recorded u, v and X.
pub fn apply_transform(traj: &Trajectory, ks: &KernelSet, grid: &SpaceTimeGrid) -> Result<Trajectory> {
    check_kernel_grid(ks, grid)?;
    let (uf, vf) = match (&traj.u_field, &traj.v_field) {
        (Some(u), Some(v)) => (u, v),
        _ => return Err(Error::Precondition("trajectory has no recorded u/v fields".into())),
    };
    let mut alpha = Vec::with_capacity(uf.len());
    let mut beta = Vec::with_capacity(uf.len());
    for k in 0..uf.len() {
        let (a, b) = transform_profile(&uf[k], &vf[k], &traj.x[k], ks);
        alpha.push(a);
        beta.push(b);
    }
    let mut out = traj.clone();
    out.alpha_field = Some(alpha);
    out.beta_field = Some(beta);
    Ok(out)
}

/// One Jacobi step of the fixed-point form
/// (u, v) = (α − γ_α X, β − γ_β X) − 𝒦(u, v).
pub fn neumann_step(
    alpha: &[f64],
    beta: &[f64],
    x: &DVector<f64>,
    ks: &KernelSet,
    u_prev: &[f64],
    v_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let nx = ks.grid_nx;
    let xt = x.transpose();
    let mut u = Vec::with_capacity(nx + 1);
    let mut v = Vec::with_capacity(nx + 1);
    for i in 0..=nx {
        let (a, b) = volterra(u_prev, v_prev, ks, i, i + 1);
        u.push(alpha[i] - ks.gamma_alpha[i].dot(&xt) - a);
        v.push(beta[i] - ks.gamma_beta[i].dot(&xt) - b);
    }
    (u, v)
}

/// Recover (u, v) from (α, β, X). Each sweep substitutes forward in x,
/// solving the 2×2 diagonal block at node i exactly and using the values
/// already updated at nodes j < i; sweeps repeat until the change drops
/// below 1e-10.
pub fn invert_profile(alpha: &[f64], beta: &[f64], x: &DVector<f64>, ks: &KernelSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let nx = ks.grid_nx;
    let dx = ks.dx();
    let xt = x.transpose();
    let mut u = vec![0.0; nx + 1];
    let mut v = vec![0.0; nx + 1];
    let mut change = f64::INFINITY;
    for it in 1..=INVERSE_MAX_ITER {
        change = 0.0;
        for i in 0..=nx {
            let (a, b) = volterra(&u, &v, ks, i, i);
            let ra = alpha[i] - ks.gamma_alpha[i].dot(&xt) - a;
            let rb = beta[i] - ks.gamma_beta[i].dot(&xt) - b;
            let w = trap(i, i, dx);
            let (m11, m12) = (1.0 + w * ks.k_uu.get(i, i), w * ks.k_uv.get(i, i));
            let (m21, m22) = (w * ks.k_vu.get(i, i), 1.0 + w * ks.k_vv.get(i, i));
            let det = m11 * m22 - m12 * m21;
            let ui = (m22 * ra - m12 * rb) / det;
            let vi = (m11 * rb - m21 * ra) / det;
            change = change.max((ui - u[i]).abs()).max((vi - v[i]).abs());
            u[i] = ui;
            v[i] = vi;
        }
        if !change.is_finite() {
            return Err(Error::NonFinite("inverse transform".into()));
        }
        if change < INVERSE_TOL && it > 1 {
            return Ok((u, v));
        }
    }
    Err(Error::NonConvergence { what: "inverse transform", iterations: INVERSE_MAX_ITER, last_change: change })
}

/// (u, v) snapshots, one profile per recorded step.
pub type FieldPair = (Vec<Vec<f64>>, Vec<Vec<f64>>);

pub fn invert_transform(
    alpha_field: &[Vec<f64>],
    beta_field: &[Vec<f64>],
    x: &[DVector<f64>],
    ks: &KernelSet,
    grid: &SpaceTimeGrid,
) -> Result<FieldPair> {
    check_kernel_grid(ks, grid)?;
    let mut uf = Vec::with_capacity(alpha_field.len());
    let mut vf = Vec::with_capacity(alpha_field.len());
    for k in 0..alpha_field.len() {
        let (u, v) = invert_profile(&alpha_field[k], &beta_field[k], &x[k], ks)?;
        uf.push(u);
        vf.push(v);
    }
    Ok((uf, vf))
}

/// A control signal sampled on a time grid, with values before t = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSignal {
    pub dt: f64,
    /// Value at t_k = k dt.
    pub values: Vec<f64>,
    /// `history[l−1]` is the value at −l dt.
    pub history: Vec<f64>,
}

impl ControlSignal {
    fn sample(&self, idx: isize) -> f64 {
        if idx >= 0 {
            self.values.get(idx as usize).copied().unwrap_or(0.0)
        } else {
            self.history.get((-idx - 1) as usize).copied().unwrap_or(0.0)
        }
    }

    /// Linear interpolation between samples.
    pub fn at(&self, t: f64) -> f64 {
        let s = t / self.dt;
        let r = s.round();
        if (s - r).abs() < 1e-9 {
            return self.sample(r as isize);
        }
        let i = s.floor();
        let w = s - i;
        (1.0 - w) * self.sample(i as isize) + w * self.sample(i as isize + 1)
    }
}

/// β(t, x) = V_eff(t − (1−x)/μ) + ∫_{t−(1−x)/μ}^t γ_β(x + μ(t−s)) σ(s) dW_s,
/// the Itô integral as a left-point sum over the grid increments.
pub fn beta_explicit(
    params: &SystemParams,
    ks: &KernelSet,
    signal: &ControlSignal,
    path: &BrownianPath,
    t: f64,
    x: f64,
) -> Result<f64> {
    let travel = (1.0 - x) / params.mu;
    if !(t >= travel) || !(0.0..=1.0).contains(&x) {
        return Err(Error::Precondition(format!("need t >= (1−x)/μ, got t = {t}, x = {x}")));
    }
    let dt = path.dt;
    let k = (t / dt).round() as usize;
    let j0 = ((t - travel) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut acc = 0.0;
    for j in j0..k.min(path.nt()) {
        let s = j as f64 * dt;
        let gb = ks.gamma_beta_at(x + params.mu * (t - s));
        acc += gb.dot(&params.sigma_at(s).transpose()) * path.increments[j];
    }
    Ok(signal.at(t - travel) + acc)
}

#[derive(Clone, Copy, Debug)]
pub struct TargetResidual {
    /// RMS over nodes and steps of the one-step defect divided by dt.
    pub rms: f64,
    pub max: f64,
}

/// Defect of the target transport equation dβ = μ β_x dt + γ_β σ dW along
/// a transformed trajectory, one upwind step at a time.
pub fn target_residual(
    traj: &Trajectory,
    ks: &KernelSet,
    params: &SystemParams,
    grid: &SpaceTimeGrid,
    path: &BrownianPath,
) -> Result<TargetResidual> {
    check_path(path, grid)?;
    let beta =
        traj.beta_field.as_ref().ok_or_else(|| Error::Precondition("trajectory has no transformed fields".into()))?;
    let nx = grid.nx;
    let c = grid.cfl_mu;
    let (mut sq, mut mx, mut count) = (0.0, 0.0f64, 0usize);
    for k in 0..grid.nt {
        let sig = params.sigma_at(grid.time(k));
        let dw = path.increments[k];
        for i in 0..nx {
            let noise = ks.gamma_beta[i].dot(&sig.transpose()) * dw;
            let d = beta[k + 1][i] - beta[k][i] - c * (beta[k][i + 1] - beta[k][i]) - noise;
            let r = d / grid.dt;
            sq += r * r;
            mx = mx.max(r.abs());
            count += 1;
        }
    }
    Ok(TargetResidual { rms: (sq / count as f64).sqrt(), max: mx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::solve_kernels_default;

    fn profiles(nx: usize) -> (Vec<f64>, Vec<f64>) {
        let u = (0..=nx).map(|i| (3.0 * i as f64 / nx as f64).sin()).collect();
        let v = (0..=nx).map(|i| 0.5 - (i as f64 / nx as f64).powi(2)).collect();
        (u, v)
    }

    #[test]
    fn zero_kernels_are_identity() {
        let ks = KernelSet::zeros(10, 1);
        let (u, v) = profiles(10);
        let x = DVector::from_element(1, 2.0);
        let (a, b) = transform_profile(&u, &v, &x, &ks);
        assert_eq!((a.clone(), b.clone()), (u.clone(), v.clone()));
        assert_eq!(invert_profile(&a, &b, &x, &ks).unwrap(), (u, v));
    }

    #[test]
    fn round_trip() {
        let p = SystemParams::fig1();
        let ks = solve_kernels_default(&p, 60).unwrap();
        let (u, v) = profiles(60);
        let x = DVector::from_element(1, -0.7);
        let (a, b) = transform_profile(&u, &v, &x, &ks);
        let (u2, v2) = invert_profile(&a, &b, &x, &ks).unwrap();
        let err = u.iter().zip(&u2).chain(v.iter().zip(&v2)).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(err < 1e-8, "{err:e}");
    }

    #[test]
    fn first_neumann_step_matches_hand_quadrature() {
        // K_uv ≡ ε, all else zero, γ ≡ 0: one step from (α, β) gives
        // u = α − ε ∫_0^x β, v = β
        let nx = 8;
        let eps = 1e-3;
        let mut ks = KernelSet::zeros(nx, 1);
        let mut kuv = crate::kernels::TriangleField::zeros(nx);
        for i in 0..=nx {
            for j in 0..=i {
                kuv = with_value(kuv, i, j, eps);
            }
        }
        ks.k_uv = kuv;
        let alpha: Vec<f64> = (0..=nx).map(|i| i as f64).collect();
        let beta = vec![1.0; nx + 1];
        let x = DVector::zeros(1);
        let (u, v) = neumann_step(&alpha, &beta, &x, &ks, &alpha, &beta);
        for i in 0..=nx {
            let xi = i as f64 / nx as f64;
            assert!((u[i] - (alpha[i] - eps * xi)).abs() < 1e-15);
            assert_eq!(v[i], 1.0);
        }
    }

    fn with_value(f: crate::kernels::TriangleField, i: usize, j: usize, val: f64) -> crate::kernels::TriangleField {
        let mut f = f;
        f.set(i, j, val);
        f
    }

    #[test]
    fn control_signal_interpolates_history() {
        let s = ControlSignal { dt: 0.1, values: vec![1.0, 2.0], history: vec![0.5, 0.0] };
        assert_eq!(s.at(0.0), 1.0);
        assert_eq!(s.at(-0.1), 0.5);
        assert!((s.at(-0.05) - 0.75).abs() < 1e-12);
        assert!((s.at(0.05) - 1.5).abs() < 1e-12);
    }
}
