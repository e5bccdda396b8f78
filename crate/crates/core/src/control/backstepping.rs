//! The backstepping part V_BS of the boundary input.

use nalgebra::{DVector, RowDVector};

use crate::kernels::KernelSet;
use crate::params::SystemParams;
use crate::quad::trapezoid_weight;

/// Kernel data on the line x = 1, sampled once per kernel set.
#[derive(Clone, Debug)]
pub struct BoundaryLaw {
    pub rho: f64,
    pub gamma_beta_1: RowDVector<f64>,
    /// Trapezoid weight times K_vu(1, y_j).
    pub wu: Vec<f64>,
    /// Trapezoid weight times K_vv(1, y_j).
    pub wv: Vec<f64>,
}

impl BoundaryLaw {
    pub fn new(params: &SystemParams, ks: &KernelSet) -> Self {
        let nx = ks.grid_nx;
        let dx = ks.dx();
        BoundaryLaw {
            rho: params.rho,
            gamma_beta_1: ks.gamma_beta[nx].clone(),
            wu: (0..=nx).map(|j| trapezoid_weight(j, nx, dx) * ks.k_vu.get(nx, j)).collect(),
            wv: (0..=nx).map(|j| trapezoid_weight(j, nx, dx) * ks.k_vv.get(nx, j)).collect(),
        }
    }

    /// V_BS = −ρ u(1) − γ_β(1) X − ∫K_vu(1,y)u dy − ∫K_vv(1,y)v dy.
    pub fn eval(&self, u: &[f64], v: &[f64], x: &DVector<f64>) -> f64 {
        let nx = u.len() - 1;
        -self.rho * u[nx] - self.gamma_beta_1.tr_dot(x) - dot(&self.wu, u) - dot(&self.wv, v)
    }

    /// Value of v(t,1) for which the transformed boundary value β(t,1)
    /// equals `v_eff`, given every other node of the current profiles.
    /// V_BS itself depends on v(t,1) through the last quadrature node, so
    /// the boundary condition v(1) = ρu(1) + V_BS + V_eff is solved as a
    /// scalar linear equation.
    pub fn boundary_value(&self, u: &[f64], v: &[f64], x: &DVector<f64>, v_eff: f64) -> f64 {
        let nx = u.len() - 1;
        let rest = self.gamma_beta_1.tr_dot(x) + dot(&self.wu, u) + dot(&self.wv[..nx], &v[..nx]);
        (v_eff - rest) / (1.0 + self.wv[nx])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn v_bs(u: &[f64], v: &[f64], x: &DVector<f64>, ks: &KernelSet, params: &SystemParams) -> f64 {
    BoundaryLaw::new(params, ks).eval(u, v, x)
}
