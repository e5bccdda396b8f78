//! Path-wise simulation of the coupled system, of the input-delayed SDE it
//! reduces to, and of the transforms between the two descriptions.

pub mod coupled;
pub mod delayed;
pub mod transform;

use nalgebra::DVector;

pub use coupled::{simulate_coupled, SimOptions};
pub use delayed::{simulate_delayed_sde, DelayedSdeModel};
pub use transform::{
    apply_transform, beta_explicit, invert_profile, invert_transform, neumann_step, target_residual, transform_profile,
    ControlSignal, TargetResidual,
};

use crate::brownian::BrownianPath;
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::kernels::KernelSet;
use crate::params::SystemParams;

/// Abort threshold for any state component.
pub const BLOW_UP: f64 = 1e12;

/// One sample path on the simulation grid; every series has nt + 1
/// entries, indexed by time step.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub v_eff: Vec<f64>,
    /// Backstepping part of the boundary input (coupled runs only).
    pub v_bs: Option<Vec<f64>>,
    /// Total boundary input V_in = V_BS + V_eff (coupled runs only).
    pub v_in: Option<Vec<f64>>,
    /// β(t, 0), the input seen by the SDE.
    pub beta0: Vec<f64>,
    /// `history[l−1]` = V_eff(−l dt), the control before t = 0.
    pub history: Vec<f64>,
    pub u_field: Option<Vec<Vec<f64>>>,
    pub v_field: Option<Vec<Vec<f64>>>,
    pub alpha_field: Option<Vec<Vec<f64>>>,
    pub beta_field: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// V_eff as a signal on the grid, including its pre-start history.
    pub fn control_signal(&self, dt: f64) -> ControlSignal {
        ControlSignal { dt, values: self.v_eff.clone(), history: self.history.clone() }
    }
}

/// Root mean square over steps k ≥ `from` of ‖a.x − b.x‖, and of ‖a.x‖.
pub fn rms_state_gap(a: &Trajectory, b: &Trajectory, from: usize) -> (f64, f64) {
    let k_end = a.x.len().min(b.x.len());
    if from >= k_end {
        return (0.0, 0.0);
    }
    let (mut d, mut m) = (0.0, 0.0);
    for k in from..k_end {
        d += (&a.x[k] - &b.x[k]).norm_squared();
        m += a.x[k].norm_squared();
    }
    let cnt = (k_end - from) as f64;
    ((d / cnt).sqrt(), (m / cnt).sqrt())
}

/// Initial profiles on the nodes with the proximal boundary condition
/// u(0,0) = q v(0,0) + M X0 imposed.
pub fn initial_fields(params: &SystemParams, nx: usize) -> (Vec<f64>, Vec<f64>) {
    let dx = 1.0 / nx as f64;
    let mut u: Vec<f64> = (0..=nx).map(|i| params.u0.eval(i as f64 * dx)).collect();
    let v: Vec<f64> = (0..=nx).map(|i| params.v0.eval(i as f64 * dx)).collect();
    u[0] = params.q * v[0] + params.m.dot(&params.x0.transpose());
    (u, v)
}

/// V_eff(−l dt) = β(0, 1 − μ l dt) for l = 1..=m, from the transformed
/// initial data.
pub fn initial_control_history(params: &SystemParams, ks: &KernelSet, grid: &SpaceTimeGrid) -> Result<Vec<f64>> {
    check_kernel_grid(ks, grid)?;
    let (u, v) = initial_fields(params, grid.nx);
    let (_, beta) = transform_profile(&u, &v, &params.x0, ks);
    let nx = grid.nx;
    Ok((1..=grid.delay_steps)
        .map(|l| {
            let x = (1.0 - params.mu * l as f64 * grid.dt).max(0.0);
            let s = x * nx as f64;
            let i = (s.floor() as usize).min(nx - 1);
            let w = s - i as f64;
            if w < 1e-9 {
                beta[i]
            } else if w > 1.0 - 1e-9 {
                beta[i + 1]
            } else {
                (1.0 - w) * beta[i] + w * beta[i + 1]
            }
        })
        .collect())
}

pub(crate) fn check_kernel_grid(ks: &KernelSet, grid: &SpaceTimeGrid) -> Result<()> {
    if ks.grid_nx != grid.nx {
        return Err(Error::InvalidGrid(format!(
            "kernels were solved on nx = {} but the simulation grid has nx = {}",
            ks.grid_nx, grid.nx
        )));
    }
    Ok(())
}

pub(crate) fn check_path(path: &BrownianPath, grid: &SpaceTimeGrid) -> Result<()> {
    if path.nt() != grid.nt || (path.dt - grid.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::Precondition(format!(
            "path has {} steps of {} but the grid has {} steps of {}",
            path.nt(),
            path.dt,
            grid.nt,
            grid.dt
        )));
    }
    Ok(())
}
