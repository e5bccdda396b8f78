//! Upwind simulation of the coupled transport-SDE system.
//!
//! One step k → k+1 with c_λ = λ dt/dx, c_μ = μ dt/dx:
//!
//! ```text
//! u_i ← u_i − c_λ (u_i − u_{i−1}) + dt η⁺(x_i) v_i      i = 1..nx
//! v_i ← v_i + c_μ (v_{i+1} − v_i) + dt η⁻(x_i) u_i      i = 0..nx−1
//! X   ← e^{A dt} X + dt B v_0 + σ(t_k) ΔW_k
//! ```
//!
//! followed by the boundary conditions u_0 = q v_0 + M X and
//! v_nx = ρ u_nx + V_BS + V_eff at the new time.

use nalgebra::{DVector, RowDVector};

use super::{check_kernel_grid, check_path, initial_control_history, initial_fields, Trajectory, BLOW_UP};
use crate::brownian::BrownianPath;
use crate::control::{BoundaryLaw, Controller};
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::kernels::KernelSet;
use crate::linalg::expm;
use crate::params::SystemParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    /// Include V_BS in the boundary input. Without it V_in = V_eff and the
    /// pre-start control history is zero.
    pub backstepping: bool,
    /// Keep u and v at every step.
    pub record_fields: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { backstepping: true, record_fields: false }
    }
}

pub fn simulate_coupled(
    params: &SystemParams,
    ks: &KernelSet,
    ctrl: &Controller,
    path: &BrownianPath,
    grid: &SpaceTimeGrid,
    opts: SimOptions,
) -> Result<Trajectory> {
    check_kernel_grid(ks, grid)?;
    check_path(path, grid)?;
    if grid.cfl_lambda > 1.0 + 1e-12 || grid.cfl_mu > 1.0 + 1e-12 {
        return Err(Error::InvalidGrid("CFL condition violated".into()));
    }
    let nx = grid.nx;
    let nt = grid.nt;
    let dt = grid.dt;
    let n = params.n();
    let (cl, cm) = (grid.cfl_lambda, grid.cfl_mu);
    let eta_p: Vec<f64> = (0..=nx).map(|i| dt * params.eta_plus.eval(grid.x(i))).collect();
    let eta_m: Vec<f64> = (0..=nx).map(|i| dt * params.eta_minus.eval(grid.x(i))).collect();
    let exp_a = expm(&params.a, dt);
    let bt_dt = &params.b * dt;
    let m_row: RowDVector<f64> = params.m.clone();
    let gb0 = ks.gamma_beta[0].clone();
    let law = BoundaryLaw::new(params, ks);
    let history =
        if opts.backstepping { initial_control_history(params, ks, grid)? } else { vec![0.0; grid.delay_steps] };

    let (mut u, mut v) = initial_fields(params, nx);
    let mut un = u.clone();
    let mut vn = v.clone();
    let mut x = params.x0.clone();
    let mut xn = x.clone();
    let mut sig = vec![0.0; n];
    let mut state = ctrl.start(&history);

    let mut traj = Trajectory {
        times: Vec::with_capacity(nt + 1),
        x: Vec::with_capacity(nt + 1),
        v_eff: Vec::with_capacity(nt + 1),
        v_bs: Some(Vec::with_capacity(nt + 1)),
        v_in: Some(Vec::with_capacity(nt + 1)),
        beta0: Vec::with_capacity(nt + 1),
        history,
        u_field: opts.record_fields.then(|| Vec::with_capacity(nt + 1)),
        v_field: opts.record_fields.then(|| Vec::with_capacity(nt + 1)),
        alpha_field: None,
        beta_field: None,
    };

    for k in 0..=nt {
        u[0] = params.q * v[0] + m_row.tr_dot(&x);
        let v_eff = state.emit(k, &x, &path.increments[..k]);
        let (vbs, vin) = if opts.backstepping {
            v[nx] = law.boundary_value(&u, &v, &x, v_eff);
            let vbs = law.eval(&u, &v, &x);
            (vbs, vbs + v_eff)
        } else {
            v[nx] = params.rho * u[nx] + v_eff;
            (0.0, v_eff)
        };
        let norm = x.amax().max(u[0].abs()).max(v[nx].abs()).max(vin.abs());
        if !norm.is_finite() || norm > BLOW_UP {
            return Err(Error::BlowUp { step: k, norm });
        }

        traj.times.push(grid.time(k));
        traj.x.push(x.clone());
        traj.v_eff.push(v_eff);
        traj.v_bs.as_mut().unwrap().push(vbs);
        traj.v_in.as_mut().unwrap().push(vin);
        traj.beta0.push(v[0] + gb0.tr_dot(&x));
        if let Some(f) = traj.u_field.as_mut() {
            f.push(u.clone());
        }
        if let Some(f) = traj.v_field.as_mut() {
            f.push(v.clone());
        }
        if k == nt {
            break;
        }

        let mut field_max: f64 = 0.0;
        for i in 1..=nx {
            un[i] = u[i] - cl * (u[i] - u[i - 1]) + eta_p[i] * v[i];
            field_max = field_max.max(un[i].abs());
        }
        for i in 0..nx {
            vn[i] = v[i] + cm * (v[i + 1] - v[i]) + eta_m[i] * u[i];
            field_max = field_max.max(vn[i].abs());
        }
        if !field_max.is_finite() || field_max > BLOW_UP {
            return Err(Error::BlowUp { step: k + 1, norm: field_max });
        }
        params.sigma_into(grid.time(k), &mut sig);
        let dw = path.increments[k];
        xn.gemv(1.0, &exp_a, &x, 0.0);
        xn.axpy(v[0], &bt_dt, 1.0);
        for (xi, s) in xn.iter_mut().zip(&sig) {
            *xi += s * dw;
        }
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut u, &mut un);
        std::mem::swap(&mut v, &mut vn);
    }
    Ok(traj)
}

/// X(t_k) of the noiseless, uncontrolled linear ODE for comparison.
pub fn free_response(params: &SystemParams, t: f64) -> DVector<f64> {
    expm(&params.a, t) * &params.x0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::sample_brownian;
    use crate::grid::make_grid;
    use crate::kernels::solve_kernels_default;
    use crate::profile::Profile;

    #[test]
    fn decoupled_noiseless_matches_exponential() {
        let p = SystemParams { sigma: vec![Profile::zero()], ..SystemParams::decoupled_scalar() };
        let g = make_grid(&p, 40).unwrap();
        let ks = solve_kernels_default(&p, 40).unwrap();
        let path = sample_brownian(1, g.nt, g.dt).unwrap();
        let opts = SimOptions { backstepping: false, record_fields: false };
        let tr = simulate_coupled(&p, &ks, &Controller::OpenLoop, &path, &g, opts).unwrap();
        for k in (0..=g.nt).step_by(37) {
            let want = free_response(&p, g.time(k))[0];
            assert!((tr.x[k][0] - want).abs() < 1e-10 * want.abs(), "{k}");
        }
    }

    #[test]
    fn open_loop_fig1_grows() {
        let p = SystemParams { sigma: vec![Profile::zero()], ..SystemParams::fig1() };
        let g = make_grid(&p, 40).unwrap();
        let ks = solve_kernels_default(&p, 40).unwrap();
        let path = sample_brownian(1, g.nt, g.dt).unwrap();
        let tr = simulate_coupled(&p, &ks, &Controller::OpenLoop, &path, &g, SimOptions::default()).unwrap();
        assert!(tr.x[g.nt][0].abs() > p.x0[0].abs());
    }

    #[test]
    fn control_decomposition_is_recorded() {
        let p = SystemParams::fig1();
        let g = make_grid(&p, 20).unwrap();
        let ks = solve_kernels_default(&p, 20).unwrap();
        let path = sample_brownian(3, g.nt, g.dt).unwrap();
        let c = crate::control::feedback_for_poles(&p, &g, &[-1.0]).unwrap();
        let opts = SimOptions { backstepping: true, record_fields: true };
        let tr = simulate_coupled(&p, &ks, &c, &path, &g, opts).unwrap();
        assert_eq!(tr.len(), g.nt + 1);
        assert_eq!(tr.u_field.as_ref().unwrap().len(), g.nt + 1);
        let (vin, vbs) = (tr.v_in.as_ref().unwrap(), tr.v_bs.as_ref().unwrap());
        for k in 0..=g.nt {
            assert_eq!(vin[k], vbs[k] + tr.v_eff[k]);
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let p = SystemParams::fig1();
        let g = make_grid(&p, 20).unwrap();
        let ks = solve_kernels_default(&p, 10).unwrap();
        let path = sample_brownian(3, g.nt, g.dt).unwrap();
        assert!(simulate_coupled(&p, &ks, &Controller::OpenLoop, &path, &g, SimOptions::default()).is_err());
        let ks = solve_kernels_default(&p, 20).unwrap();
        let short = sample_brownian(3, g.nt - 1, g.dt).unwrap();
        assert!(simulate_coupled(&p, &ks, &Controller::OpenLoop, &short, &g, SimOptions::default()).is_err());
    }
}
