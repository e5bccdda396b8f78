//! The input-delayed SDE obtained after the backstepping transform,
//!
//! ```text
//! dX = (A X + B V_eff(t − h) + r(t)) dt + σ(t) dW,
//! r(t) = B ∫_{t−h}^t γ_β(μ(t−s)) σ(s) dW_s,
//! ```
//!
//! stepped with the same exponential-Euler update as the coupled solver so
//! the two agree up to the transport discretisation error. With a nonzero
//! γ_β(0) the drift is A − B γ_β(0).

use nalgebra::{DMatrix, DVector};

use super::{check_kernel_grid, check_path, initial_control_history, Trajectory, BLOW_UP};
use crate::brownian::BrownianPath;
use crate::control::Controller;
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::kernels::KernelSet;
use crate::linalg::expm;
use crate::params::SystemParams;

#[derive(Clone, Debug)]
pub struct DelayedSdeModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub h: f64,
    pub dt: f64,
    pub nt: usize,
    pub delay_steps: usize,
    pub x0: DVector<f64>,
    /// e^{A dt} (with the γ_β(0) correction).
    exp_a_dt: DMatrix<f64>,
    n: usize,
    /// `taps[(l−1) n + c] = γ_β(μ l dt)_c` for l = 1..=m.
    taps: Vec<f64>,
    /// σ(t_j) for j = 0..nt.
    sigma: Vec<DVector<f64>>,
    /// `history[l−1] = V_eff(−l dt) = β(0, 1 − μ l dt)`.
    pub history: Vec<f64>,
}

impl DelayedSdeModel {
    pub fn new(params: &SystemParams, ks: &KernelSet, grid: &SpaceTimeGrid) -> Result<Self> {
        check_kernel_grid(ks, grid)?;
        params.validate()?;
        let m = grid.delay_steps;
        let dt = grid.dt;
        let a = &params.a - &params.b * &ks.gamma_beta[0];
        let taps = (1..=m)
            .flat_map(|l| ks.gamma_beta_at((params.mu * l as f64 * dt).min(1.0)).iter().copied().collect::<Vec<_>>())
            .collect();
        let sigma = (0..grid.nt).map(|j| params.sigma_at(grid.time(j))).collect();
        Ok(DelayedSdeModel {
            exp_a_dt: expm(&a, dt),
            a,
            b: params.b.clone(),
            h: m as f64 * dt,
            dt,
            nt: grid.nt,
            delay_steps: m,
            n: params.n(),
            x0: params.x0.clone(),
            taps,
            sigma,
            history: initial_control_history(params, ks, grid)?,
        })
    }

    /// s_k = Σ_{l=1..min(m,k)} γ_β(μ l dt) σ(t_{k−l}) ΔW_{k−l}, so that
    /// r(t_k) = B s_k. `past` must hold at least the first k increments.
    pub fn noise_input(&self, k: usize, past: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for l in 1..=self.delay_steps.min(k) {
            let j = k - l;
            let tap = &self.taps[(l - 1) * n..l * n];
            let w: f64 = tap.iter().zip(self.sigma[j].iter()).map(|(a, b)| a * b).sum();
            s += w * past[j];
        }
        s
    }

    /// V_eff(t_k − h), reading the pre-start history when k < m.
    fn delayed(&self, v: &[f64], k: usize) -> f64 {
        let m = self.delay_steps;
        if k >= m {
            v[k - m]
        } else {
            self.history.get(m - k - 1).copied().unwrap_or(0.0)
        }
    }
}

/// Simulate X under `ctrl`; the controller sees the same history as in the
/// coupled run. The returned trajectory has no field records and
/// `beta0[k] = V_eff(t_k − h) + s_k`.
pub fn simulate_delayed_sde(
    model: &DelayedSdeModel,
    ctrl: &Controller,
    path: &BrownianPath,
    grid: &SpaceTimeGrid,
) -> Result<Trajectory> {
    check_path(path, grid)?;
    if model.nt != grid.nt || (model.dt - grid.dt).abs() > 1e-15 || model.delay_steps != grid.delay_steps {
        return Err(Error::InvalidGrid("delayed model was built on a different grid".into()));
    }
    let nt = grid.nt;
    let dt = grid.dt;
    let mut state = ctrl.start(&model.history);
    let mut x = model.x0.clone();
    let mut traj = Trajectory {
        times: Vec::with_capacity(nt + 1),
        x: Vec::with_capacity(nt + 1),
        v_eff: Vec::with_capacity(nt + 1),
        beta0: Vec::with_capacity(nt + 1),
        history: model.history.clone(),
        ..Default::default()
    };
    for k in 0..=nt {
        let past = &path.increments[..k];
        let v = state.emit(k, &x, past);
        traj.v_eff.push(v);
        let input = model.delayed(&traj.v_eff, k) + model.noise_input(k, past);
        let norm = x.amax();
        if !norm.is_finite() || norm > BLOW_UP {
            return Err(Error::BlowUp { step: k, norm });
        }
        traj.times.push(grid.time(k));
        traj.x.push(x.clone());
        traj.beta0.push(input);
        if k == nt {
            break;
        }
        let mut xn = &model.exp_a_dt * &x;
        xn.axpy(dt * input, &model.b, 1.0);
        xn.axpy(path.increments[k], &model.sigma[k], 1.0);
        x = xn;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_brownian;
    use crate::grid::make_grid;
    use crate::kernels::solve_kernels_default;
    use crate::profile::Profile;
    use crate::sim::coupled::free_response;

    #[test]
    fn noiseless_decoupled_is_exponential() {
        let p = SystemParams { sigma: vec![Profile::zero()], ..SystemParams::decoupled_scalar() };
        let g = make_grid(&p, 20).unwrap();
        let ks = solve_kernels_default(&p, 20).unwrap();
        let model = DelayedSdeModel::new(&p, &ks, &g).unwrap();
        let path = sample_brownian(5, g.nt, g.dt).unwrap();
        let tr = simulate_delayed_sde(&model, &Controller::OpenLoop, &path, &g).unwrap();
        let want = free_response(&p, g.horizon())[0];
        assert!((tr.x[g.nt][0] - want).abs() < 1e-10 * want.abs());
    }

    #[test]
    fn scripted_input_arrives_after_delay() {
        let p = SystemParams { sigma: vec![Profile::zero()], ..SystemParams::decoupled_scalar() };
        let g = make_grid(&p, 10).unwrap();
        let ks = solve_kernels_default(&p, 10).unwrap();
        let model = DelayedSdeModel::new(&p, &ks, &g).unwrap();
        let path = sample_brownian(5, g.nt, g.dt).unwrap();
        let mut script = vec![0.0; g.nt + 1];
        script[0] = 1.0;
        let ctrl = Controller::Scripted(std::sync::Arc::new(script));
        let tr = simulate_delayed_sde(&model, &ctrl, &path, &g).unwrap();
        let m = g.delay_steps;
        for k in 0..=g.nt {
            assert_eq!(tr.beta0[k], if k == m { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn noise_input_matches_direct_sum() {
        let p = SystemParams::fig1();
        let g = make_grid(&p, 20).unwrap();
        let ks = solve_kernels_default(&p, 20).unwrap();
        let model = DelayedSdeModel::new(&p, &ks, &g).unwrap();
        let path = sample_brownian(9, g.nt, g.dt).unwrap();
        let k = g.delay_steps + 7;
        let direct: f64 = (k - g.delay_steps..k)
            .map(|j| {
                let u = p.mu * (k - j) as f64 * g.dt;
                ks.gamma_beta_at(u)[0] * 0.6 * path.increments[j]
            })
            .sum();
        assert!((model.noise_input(k, &path.increments) - direct).abs() < 1e-12);
    }
}
