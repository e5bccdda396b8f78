//! Deterministic functions of the delay window.
//!
//! With the input map B inserted so that every quantity is n×n,
//!
//! ```text
//! N(u) = ∫_{−u}^0   e^{−Aτ} B γ_β(μ(τ+u)) dτ
//! g(u) = ∫_0^{h−u}  e^{−Aτ} B γ_β(μ(τ+u)) dτ
//! Γ(u) = B γ_β(μu) + g'(u) − A g(u)
//! ```
//!
//! Substituting σ = τ + u in both integrals gives `N(u) = e^{Au} I(u)` and
//! `g(u) = e^{Au} (I(h) − I(u))` with `I(u) = ∫_0^u e^{−Aσ} B γ_β(μσ) dσ`,
//! so `N(u) + g(u) = e^{Au} g(0)` and Γ vanishes identically. The direct
//! quadratures below are kept independent of this identity so tests can
//! confirm it.

use nalgebra::{DMatrix, DVector};

use crate::kernels::KernelSet;
use crate::linalg::expm;
use crate::params::SystemParams;
use crate::quad::{lagrange_cubic, simpson};

/// Panels used for every integral over (part of) one delay window.
pub const WINDOW_PANELS: usize = 64;

fn integrand(params: &SystemParams, ks: &KernelSet, tau: f64, u: f64) -> DMatrix<f64> {
    let gb = ks.gamma_beta_at(params.mu * (tau + u));
    expm(&params.a, -tau) * &params.b * gb
}

pub fn n_function(params: &SystemParams, ks: &KernelSet, u: f64) -> DMatrix<f64> {
    if u == 0.0 {
        return DMatrix::zeros(params.n(), params.n());
    }
    simpson(|tau| integrand(params, ks, tau, u), -u, 0.0, WINDOW_PANELS)
}

pub fn g_function(params: &SystemParams, ks: &KernelSet, u: f64) -> DMatrix<f64> {
    let upper = params.delay() - u;
    if upper <= 0.0 {
        return DMatrix::zeros(params.n(), params.n());
    }
    simpson(|tau| integrand(params, ks, tau, u), 0.0, upper, WINDOW_PANELS)
}

/// g'(u) by differentiating the upper limit and the integrand of g, with
/// γ_β' read from its defining ODE.
pub fn g_prime(params: &SystemParams, ks: &KernelSet, u: f64) -> DMatrix<f64> {
    let h = params.delay();
    let upper = h - u;
    let boundary = expm(&params.a, -upper) * &params.b * ks.gamma_beta_at(params.mu * h);
    if upper <= 0.0 {
        return -boundary;
    }
    let inner = simpson(
        |tau| expm(&params.a, -tau) * &params.b * ks.gamma_beta_prime_at(params, params.mu * (tau + u)),
        0.0,
        upper,
        WINDOW_PANELS,
    );
    inner * params.mu - boundary
}

pub fn gamma_fn(params: &SystemParams, ks: &KernelSet, u: f64) -> DMatrix<f64> {
    &params.b * ks.gamma_beta_at(params.mu * u) + g_prime(params, ks, u) - &params.a * g_function(params, ks, u)
}

/// Tabulated e^{Au} and I(u) on a fine uniform grid of [0, h], for fast
/// evaluation of N, g and the variance floor.
#[derive(Clone, Debug)]
pub struct DelayShapes {
    pub h: f64,
    pub n: usize,
    step: f64,
    /// Column-major entries of e^{Au_i}, one series per entry.
    exp_series: Vec<Vec<f64>>,
    integral_series: Vec<Vec<f64>>,
}

impl DelayShapes {
    pub const INTERVALS: usize = 2048;

    pub fn new(params: &SystemParams, ks: &KernelSet) -> Self {
        let h = params.delay();
        let n = params.n();
        let intervals = Self::INTERVALS;
        let step = h / intervals as f64;
        let mut exp_series = vec![Vec::with_capacity(intervals + 1); n * n];
        let mut integral_series = vec![Vec::with_capacity(intervals + 1); n * n];
        let f = |s: f64| expm(&params.a, -s) * &params.b * ks.gamma_beta_at(params.mu * s);
        let mut acc = DMatrix::zeros(n, n);
        for i in 0..=intervals {
            let u = i as f64 * step;
            if i > 0 {
                // Simpson on [u − step, u]
                let a0 = u - step;
                acc += (f(a0) + f(a0 + 0.5 * step) * 4.0 + f(u)) * (step / 6.0);
            }
            let e = expm(&params.a, u);
            for (c, v) in e.iter().enumerate() {
                exp_series[c].push(*v);
            }
            for (c, v) in acc.iter().enumerate() {
                integral_series[c].push(*v);
            }
        }
        DelayShapes { h, n, step, exp_series, integral_series }
    }

    fn lookup(&self, series: &[Vec<f64>], u: f64) -> DMatrix<f64> {
        let u = u.clamp(0.0, self.h);
        DMatrix::from_iterator(self.n, self.n, series.iter().map(|s| lagrange_cubic(s, self.step, u)))
    }

    pub fn exp_a(&self, u: f64) -> DMatrix<f64> {
        self.lookup(&self.exp_series, u)
    }

    pub fn integral(&self, u: f64) -> DMatrix<f64> {
        self.lookup(&self.integral_series, u)
    }

    pub fn n_at(&self, u: f64) -> DMatrix<f64> {
        self.exp_a(u) * self.integral(u)
    }

    pub fn g_at(&self, u: f64) -> DMatrix<f64> {
        self.exp_a(u) * (self.integral(self.h) - self.integral(u))
    }

    /// e^{Au} + N(u), the response of X(t) to noise entering at t − u.
    pub fn window_response(&self, u: f64) -> DMatrix<f64> {
        self.exp_a(u) * (DMatrix::identity(self.n, self.n) + self.integral(u))
    }

    /// ∫ σ(s)ᵀ [e^{A(t−s)} + N(t−s)]ᵀ W [e^{A(t−s)} + N(t−s)] σ(s) ds over
    /// s ∈ [max(0, t−h), t], with W = I when `weight` is None. For t ≥ h
    /// this is the variance floor of the delayed SDE; for t < h the same
    /// integral is the whole noise-driven variance, which no input can
    /// influence yet.
    pub fn v_min<F>(&self, sigma: F, weight: Option<&DMatrix<f64>>, t: f64) -> f64
    where
        F: Fn(f64) -> DVector<f64>,
    {
        let lo = (t - self.h).max(0.0);
        if t <= lo {
            return 0.0;
        }
        simpson(
            |s| {
                let m = self.window_response(t - s) * sigma(s);
                match weight {
                    Some(w) => m.dot(&(w * &m)),
                    None => m.dot(&m),
                }
            },
            lo,
            t,
            WINDOW_PANELS,
        )
    }
}

/// Variance floor for the system's own σ with identity weight.
pub fn v_min(params: &SystemParams, ks: &KernelSet, weight: Option<&DMatrix<f64>>, t: f64) -> f64 {
    DelayShapes::new(params, ks).v_min(|s| params.sigma_at(s), weight, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::solve_kernels_default;
    use crate::profile::Profile;

    fn constant_gamma_beta(c: f64) -> KernelSet {
        let mut ks = KernelSet::zeros(16, 1);
        for g in ks.gamma_beta.iter_mut() {
            g[0] = c;
        }
        ks
    }

    #[test]
    fn trivial_values() {
        let p = SystemParams::fig1();
        let ks = solve_kernels_default(&p, 40).unwrap();
        assert_eq!(n_function(&p, &ks, 0.0)[(0, 0)], 0.0);
        assert_eq!(g_function(&p, &ks, p.delay())[(0, 0)], 0.0);
        let z = KernelSet::zeros(16, 1);
        for u in [0.0, 0.1, 0.37, 0.5] {
            assert_eq!(n_function(&p, &z, u)[(0, 0)], 0.0);
            assert_eq!(g_function(&p, &z, u)[(0, 0)], 0.0);
            assert_eq!(gamma_fn(&p, &z, u)[(0, 0)], 0.0);
        }
    }

    #[test]
    fn constant_gamma_without_drift() {
        let p = SystemParams { a: DMatrix::zeros(1, 1), ..SystemParams::fig1() };
        let ks = constant_gamma_beta(0.8);
        for u in [0.0, 0.2, 0.5] {
            assert!((n_function(&p, &ks, u)[(0, 0)] - 0.8 * u).abs() < 1e-14);
        }
    }

    #[test]
    fn v_min_closed_form_without_gamma() {
        let p = SystemParams::fig1();
        let z = KernelSet::zeros(16, 1);
        let (a, s, h) = (0.6f64, 0.6f64, 0.5f64);
        let want = s * s * ((2.0 * a * h).exp() - 1.0) / (2.0 * a);
        for t in [0.5, 1.7, 4.0] {
            assert!((v_min(&p, &z, None, t) - want).abs() < 1e-10);
        }
        let quiet = SystemParams { sigma: vec![Profile::zero()], ..p };
        assert_eq!(v_min(&quiet, &z, None, 2.0), 0.0);
    }

    #[test]
    fn tables_match_direct_quadrature() {
        let p = SystemParams::fig1();
        let ks = solve_kernels_default(&p, 50).unwrap();
        let sh = DelayShapes::new(&p, &ks);
        for u in [0.0, 0.05, 0.2, 0.333, 0.5] {
            let dn = (n_function(&p, &ks, u) - sh.n_at(u)).amax();
            let dg = (g_function(&p, &ks, u) - sh.g_at(u)).amax();
            assert!(dn < 1e-8 && dg < 1e-8, "u = {u}: {dn:e} {dg:e}");
            let sum = sh.n_at(u) + sh.g_at(u);
            let want = sh.exp_a(u) * sh.g_at(0.0);
            assert!((sum - want).amax() < 1e-12);
        }
    }

    #[test]
    fn gamma_is_negligible() {
        let p = SystemParams::fig1();
        let ks = solve_kernels_default(&p, 100).unwrap();
        let scale = g_function(&p, &ks, 0.0).amax().max(1.0);
        for u in [0.01, 0.1, 0.25, 0.4, 0.49] {
            let g = gamma_fn(&p, &ks, u).amax();
            assert!(g < 1e-5 * scale * p.mu, "Γ({u}) = {g:e}");
        }
    }
}
