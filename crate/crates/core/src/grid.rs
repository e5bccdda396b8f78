use crate::error::{Error, Result};
use crate::params::SystemParams;

/// Uniform space-time lattice for the transport solver.
///
/// The time step is always `h / delay_steps` with `h = 1/μ`, so delayed
/// reads of the boundary control are exact array lookups.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeGrid {
    pub nx: usize,
    pub dx: f64,
    pub dt: f64,
    pub nt: usize,
    pub cfl_lambda: f64,
    pub cfl_mu: f64,
    /// Number of steps spanning the delay h.
    pub delay_steps: usize,
}

impl SpaceTimeGrid {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 / self.nx as f64
    }

    pub fn horizon(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    /// Index of the grid time closest to `t`.
    pub fn step_of(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.nt)
    }
}

const MAX_REFINEMENT: usize = 64;

pub fn make_grid(params: &SystemParams, nx: usize) -> Result<SpaceTimeGrid> {
    if nx < 2 {
        return Err(Error::InvalidGrid(format!("nx must be >= 2, got {nx}")));
    }
    if !(params.lambda > 0.0) || !(params.mu > 0.0) {
        return Err(Error::InvalidGrid("transport speeds must be positive".into()));
    }
    if !(params.horizon > 0.0) {
        return Err(Error::InvalidGrid("horizon must be positive".into()));
    }
    let (lambda, mu, t_end) = (params.lambda, params.mu, params.horizon);
    let nxf = nx as f64;
    // dt = 1/(μ m) must satisfy max(λ, μ) dt <= dx
    let m_min = ((nxf * lambda.max(mu) / mu) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    for m in m_min..=m_min * MAX_REFINEMENT {
        let dt = 1.0 / (mu * m as f64);
        let nt = (t_end / dt).round() as usize;
        if nt == 0 {
            continue;
        }
        if ((nt as f64) * dt - t_end).abs() <= 1e-12 * t_end {
            return Ok(SpaceTimeGrid {
                nx,
                dx: 1.0 / nxf,
                dt,
                nt,
                cfl_lambda: lambda * dt * nxf,
                cfl_mu: mu * dt * nxf,
                delay_steps: m,
            });
        }
    }
    Err(Error::InvalidGrid(format!(
        "no time step dividing both h = {} and T = {t_end} found within {MAX_REFINEMENT}x refinement",
        1.0 / mu
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, mu: f64, t: f64) -> SystemParams {
        SystemParams { lambda, mu, horizon: t, ..SystemParams::fig1() }
    }

    #[test]
    fn fig1_grid() {
        let g = make_grid(&params(1.0, 2.0, 4.0), 100).unwrap();
        assert_eq!(g.dx, 0.01);
        assert!(g.dt <= 0.005);
        assert!(g.cfl_mu <= 1.0 + 1e-15 && g.cfl_lambda <= 1.0 + 1e-15);
        assert_eq!(g.delay_steps, 100);
        assert_eq!(g.nt, 800);
    }

    #[test]
    fn equal_speeds_follow_characteristics_exactly() {
        let g = make_grid(&params(1.0, 1.0, 1.0), 10).unwrap();
        assert!((g.dt - 0.1).abs() < 1e-15);
        assert!((g.cfl_lambda - 1.0).abs() < 1e-12);
        assert!((g.cfl_mu - 1.0).abs() < 1e-12);
        assert_eq!(g.nt, 10);
    }

    #[test]
    fn delay_is_integer_number_of_steps() {
        // h = 1/3 with nx = 30; CFL forces dt = 1/90, so h = 30 dt
        let g = make_grid(&params(1.0, 3.0, 1.0), 30).unwrap();
        assert!((g.delay_steps as f64 * g.dt - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.dt - 1.0 / 90.0).abs() < 1e-16);
        // with dt = 1/30 the same delay would be exactly 10 steps
        assert_eq!(((1.0 / 3.0) / (1.0 / 30.0_f64)).round(), 10.0);
    }

    #[test]
    fn faster_u_transport_refines_dt() {
        let g = make_grid(&params(3.0, 1.0, 2.0), 20).unwrap();
        assert!(g.cfl_lambda <= 1.0 + 1e-12);
        assert!((g.delay_steps as f64 * g.dt - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(make_grid(&params(1.0, 2.0, 4.0), 1).is_err());
        assert!(make_grid(&params(0.0, 2.0, 4.0), 10).is_err());
        assert!(make_grid(&params(1.0, -2.0, 4.0), 10).is_err());
    }

    #[test]
    fn grid_invariants_hold_over_sizes() {
        let p = params(1.0, 2.0, 4.0);
        for nx in [2, 3, 7, 25, 50, 100, 200, 333] {
            let g = make_grid(&p, nx).unwrap();
            assert_eq!(g.dx * nx as f64, 1.0);
            assert!(((g.nt as f64 * g.dt) - 4.0).abs() <= 4e-12);
            assert!(g.cfl_lambda.max(g.cfl_mu) <= 1.0 + 1e-12);
        }
    }
}
