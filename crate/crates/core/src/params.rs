//! Constants and profile functions of the coupled system
//!
//! ```text
//! dX      = (A X + B v(t,0)) dt + σ(t) dW
//! u_t + λ u_x = η⁺(x) v
//! v_t − μ v_x = η⁻(x) u
//! u(t,0) = q v(t,0) + M X(t)
//! v(t,1) = ρ u(t,1) + V_in(t)
//! ```

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::profile::Profile;

#[derive(Clone, Debug, PartialEq)]
pub struct SystemParams {
    pub lambda: f64,
    pub mu: f64,
    pub eta_plus: Profile,
    pub eta_minus: Profile,
    pub q: f64,
    pub rho: f64,
    /// SDE drift, n×n.
    pub a: DMatrix<f64>,
    /// SDE input map, n×1.
    pub b: DVector<f64>,
    /// SDE-to-PDE boundary coupling, 1×n.
    pub m: RowDVector<f64>,
    /// One profile in time per state component.
    pub sigma: Vec<Profile>,
    pub x0: DVector<f64>,
    pub u0: Profile,
    pub v0: Profile,
    /// Horizon T.
    pub horizon: f64,
}

impl SystemParams {
    /// The reference scalar scenario: an unstable SDE (A = 0.6) actuated
    /// through a 2×2 transport system with reflection at both ends.
    pub fn fig1() -> Self {
        SystemParams {
            lambda: 1.0,
            mu: 2.0,
            eta_plus: Profile::Constant(0.3),
            eta_minus: Profile::Constant(0.3),
            q: 0.25,
            rho: 1.0,
            a: DMatrix::from_element(1, 1, 0.6),
            b: DVector::from_element(1, 1.0),
            m: RowDVector::from_element(1, 1.0),
            sigma: vec![Profile::Constant(0.6)],
            x0: DVector::from_element(1, 2.0),
            u0: Profile::zero(),
            v0: Profile::zero(),
            horizon: 4.0,
        }
    }

    /// Scalar system with no in-domain coupling and no SDE feedback into
    /// the PDE; every kernel vanishes.
    pub fn decoupled_scalar() -> Self {
        SystemParams { eta_plus: Profile::zero(), eta_minus: Profile::zero(), m: RowDVector::zeros(1), ..Self::fig1() }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Transport delay from the actuated boundary to the SDE, h = 1/μ.
    pub fn delay(&self) -> f64 {
        1.0 / self.mu
    }

    pub fn sigma_at(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.sigma.iter().map(|p| p.eval(t)))
    }

    pub fn sigma_into(&self, t: f64, out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.sigma) {
            *o = p.eval(t);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if self.q == 0.0 || !self.q.is_finite() {
            return bad("q must be finite and non-zero".into());
        }
        if !self.rho.is_finite() || (self.rho * self.q).abs() >= 1.0 {
            return bad(format!("|rho q| must be < 1, got {}", (self.rho * self.q).abs()));
        }
        let n = self.n();
        if n == 0 || self.a.ncols() != n {
            return bad("A must be square and non-empty".into());
        }
        if self.b.len() != n || self.m.len() != n || self.x0.len() != n || self.sigma.len() != n {
            return bad(format!("B, M, X0 and sigma must all have dimension n = {n}"));
        }
        let finite = self.a.iter().chain(self.b.iter()).chain(self.m.iter()).chain(self.x0.iter());
        if finite.into_iter().any(|v| !v.is_finite()) {
            return bad("A, B, M, X0 must be finite".into());
        }
        if !(self.horizon.is_finite() && self.horizon > self.delay()) {
            return bad(format!("horizon T = {} must exceed the delay h = {}", self.horizon, self.delay()));
        }
        self.eta_plus.validate("eta_plus")?;
        self.eta_minus.validate("eta_minus")?;
        self.u0.validate("u0")?;
        self.v0.validate("v0")?;
        for (i, s) in self.sigma.iter().enumerate() {
            s.validate(&format!("sigma[{i}]"))?;
        }
        Ok(())
    }
}
