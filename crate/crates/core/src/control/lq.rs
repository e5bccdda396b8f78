//! Finite-horizon LQ control of the predictor state Ȳ = Y + G.
//!
//! ```text
//! Ṗ = −AᵀP − PA − Q̄ + P B̄ R⁻¹ B̄ᵀ P,     P(T−h) = 0
//! Π = P B̄ R⁻¹ B̄ᵀ − Aᵀ,                  ∂_t Φ(t,τ) = Π(t) Φ(t,τ)
//! φ(t) = ∫_{t−h}^t [∫_t^{min(s+h, T−h)} Φ(t,τ) P(τ) Γ(τ−s) dτ] σ(s) dW_s
//! V*(t) = −R(t)⁻¹ B̄ᵀ (P(t) Ȳ(t) + φ(t))   on [0, T−h], zero afterwards
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::shapes::{gamma_fn, DelayShapes};
use crate::brownian::BrownianPath;
use crate::control::artstein::{ArtsteinState, Predictor};
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::kernels::KernelSet;
use crate::linalg::{expm, min_symmetric_eigenvalue, symmetrize};
use crate::params::SystemParams;
use crate::profile::Profile;
use crate::quad::simpson;

/// Q(t) = q_time(t)·q on [h, T] and R(t) = r(t) on [0, T−h].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqWeights {
    pub q: Vec<Vec<f64>>,
    #[serde(default = "unit_profile")]
    pub q_time: Profile,
    pub r: Profile,
}

fn unit_profile() -> Profile {
    Profile::Constant(1.0)
}

impl LqWeights {
    pub fn constant(q: &DMatrix<f64>, r: f64) -> Self {
        LqWeights {
            q: q.row_iter().map(|row| row.iter().copied().collect()).collect(),
            q_time: unit_profile(),
            r: Profile::Constant(r),
        }
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        let n = self.q.len();
        DMatrix::from_fn(n, n, |i, j| self.q[i].get(j).copied().unwrap_or(f64::NAN))
    }

    pub fn q_at(&self, t: f64) -> DMatrix<f64> {
        self.q_matrix() * self.q_time.eval(t)
    }

    pub fn r_at(&self, t: f64) -> f64 {
        self.r.eval(t)
    }

    /// Q̄(t) = e^{Aᵀh} Q(t+h) e^{Ah}.
    pub fn qbar_at(&self, t: f64, exp_a_h: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
        exp_a_h.transpose() * self.q_at(t + h) * exp_a_h
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidWeights(m));
        if self.q.len() != n || self.q.iter().any(|r| r.len() != n) {
            return bad(format!("Q must be {n}×{n}"));
        }
        let q = self.q_matrix();
        if q.iter().any(|v| !v.is_finite()) {
            return bad("Q must be finite".into());
        }
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-12 * q.amax().max(1.0) {
            return bad("Q must be symmetric".into());
        }
        if min_symmetric_eigenvalue(&q) < -1e-12 * q.amax().max(1.0) {
            return bad("Q must be positive semidefinite".into());
        }
        self.q_time.validate("q_time").map_err(|e| Error::InvalidWeights(e.to_string()))?;
        self.r.validate("r").map_err(|e| Error::InvalidWeights(e.to_string()))?;
        let q_time_min = match &self.q_time {
            Profile::Constant(c) => *c,
            Profile::Table(t) => t.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
        };
        if q_time_min < 0.0 {
            return bad("q_time must be nonnegative".into());
        }
        let r_min = match &self.r {
            Profile::Constant(c) => *c,
            Profile::Table(t) => t.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
        };
        if !(r_min > 0.0) {
            return bad("R must be bounded away from zero".into());
        }
        Ok(())
    }
}

/// Samples of a matrix function and its derivative on a uniform grid,
/// evaluated in between by cubic Hermite interpolation.
#[derive(Clone, Debug)]
pub struct HermiteSeries {
    pub step: f64,
    pub values: Vec<DMatrix<f64>>,
    pub derivs: Vec<DMatrix<f64>>,
}

impl HermiteSeries {
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let last = self.values.len() - 1;
        let s = (t / self.step).clamp(0.0, last as f64);
        let i = (s.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return self.values[0].clone();
        }
        let w = s - i as f64;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * w) * (1.0 - w) * (1.0 - w),
            w * (1.0 - w) * (1.0 - w),
            w * w * (3.0 - 2.0 * w),
            w * w * (w - 1.0),
        );
        &self.values[i] * h00
            + &self.derivs[i] * (h10 * self.step)
            + &self.values[i + 1] * h01
            + &self.derivs[i + 1] * (h11 * self.step)
    }

    pub fn node(&self, i: usize) -> &DMatrix<f64> {
        &self.values[i]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn grid_steps(span: f64, step: f64) -> Result<usize> {
    let k = (span / step).round();
    if !(step > 0.0) || k < 1.0 || (k * step - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::Precondition(format!("step {step} does not divide {span}")));
    }
    Ok(k as usize)
}

/// P on [0, T−h] by backward RK4 from P(T−h) = 0.
pub fn solve_riccati(
    weights: &LqWeights,
    a: &DMatrix<f64>,
    bbar: &DVector<f64>,
    h: f64,
    horizon: f64,
    step: f64,
) -> Result<HermiteSeries> {
    let n = a.nrows();
    weights.validate(n)?;
    let steps = grid_steps(horizon, step)?;
    let exp_a_h = expm(a, h);
    let rhs = |t: f64, p: &DMatrix<f64>| -> DMatrix<f64> {
        let pb = p * bbar;
        -(a.transpose() * p) - p * a - weights.qbar_at(t, &exp_a_h, h) + &pb * pb.transpose() / weights.r_at(t)
    };
    let mut values = vec![DMatrix::zeros(n, n); steps + 1];
    let mut p = DMatrix::zeros(n, n);
    for i in (0..steps).rev() {
        let t = (i + 1) as f64 * step;
        let k1 = rhs(t, &p);
        let k2 = rhs(t - 0.5 * step, &(&p - &k1 * (0.5 * step)));
        let k3 = rhs(t - 0.5 * step, &(&p - &k2 * (0.5 * step)));
        let k4 = rhs(t - step, &(&p - &k3 * step));
        p -= (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
        symmetrize(&mut p);
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("Riccati solution at t = {}", i as f64 * step)));
        }
        values[i] = p.clone();
    }
    let derivs = values.iter().enumerate().map(|(i, p)| rhs(i as f64 * step, p)).collect();
    Ok(HermiteSeries { step, values, derivs })
}

#[derive(Clone, Debug)]
pub struct LqSolution {
    pub a: DMatrix<f64>,
    pub bbar: DVector<f64>,
    pub weights: LqWeights,
    pub h: f64,
    /// T − h.
    pub horizon: f64,
    pub p: HermiteSeries,
    /// U with U' = Π U, U(0) = I.
    pub fund: HermiteSeries,
    /// U⁻¹, with (U⁻¹)' = −U⁻¹ Π.
    pub fund_inv: HermiteSeries,
}

impl LqSolution {
    pub fn solve(
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        weights: &LqWeights,
        h: f64,
        horizon: f64,
        step: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::Precondition("the LQ horizon T − h must be positive".into()));
        }
        let bbar = expm(a, -h) * b;
        let p = solve_riccati(weights, a, &bbar, h, horizon, step)?;
        let n = a.nrows();
        let pi = |t: f64| -> DMatrix<f64> { &p.at(t) * &bbar * bbar.transpose() / weights.r_at(t) - a.transpose() };
        let steps = p.len() - 1;
        let mut u = DMatrix::identity(n, n);
        let mut fund = vec![u.clone()];
        for i in 0..steps {
            let t = i as f64 * step;
            let (p0, pm, p1) = (pi(t), pi(t + 0.5 * step), pi(t + step));
            let k1 = &p0 * &u;
            let k2 = &pm * (&u + &k1 * (0.5 * step));
            let k3 = &pm * (&u + &k2 * (0.5 * step));
            let k4 = &p1 * (&u + &k3 * step);
            u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
            fund.push(u.clone());
        }
        let fund_inv: Vec<DMatrix<f64>> = fund
            .iter()
            .map(|m| m.clone().try_inverse().ok_or_else(|| Error::NonFinite("fundamental matrix inverse".into())))
            .collect::<Result<_>>()?;
        let fund_d = fund.iter().enumerate().map(|(i, m)| pi(i as f64 * step) * m).collect();
        let inv_d = fund_inv.iter().enumerate().map(|(i, m)| -(m * pi(i as f64 * step))).collect();
        Ok(LqSolution {
            a: a.clone(),
            bbar,
            weights: weights.clone(),
            h,
            horizon,
            p,
            fund: HermiteSeries { step, values: fund, derivs: fund_d },
            fund_inv: HermiteSeries { step, values: fund_inv, derivs: inv_d },
        })
    }

    /// Solve on a grid that resolves both the simulation step and the
    /// delay window: the Riccati step is dt/(2s) with m·s ≥ 64.
    pub fn for_grid(params: &SystemParams, weights: &LqWeights, grid: &SpaceTimeGrid) -> Result<Self> {
        let h = grid.delay_steps as f64 * grid.dt;
        let s = Self::substeps(grid);
        Self::solve(&params.a, &params.b, weights, h, params.horizon - h, grid.dt / (2 * s) as f64)
    }

    pub fn substeps(grid: &SpaceTimeGrid) -> usize {
        64usize.div_ceil(grid.delay_steps).max(1)
    }

    pub fn p_at(&self, t: f64) -> DMatrix<f64> {
        self.p.at(t)
    }

    pub fn pi_at(&self, t: f64) -> DMatrix<f64> {
        &self.p.at(t) * &self.bbar * self.bbar.transpose() / self.weights.r_at(t) - self.a.transpose()
    }

    /// Φ_Π(t, τ) = U(t) U(τ)⁻¹.
    pub fn fundamental_matrix(&self, t: f64, tau: f64) -> DMatrix<f64> {
        self.fund.at(t) * self.fund_inv.at(tau)
    }
}

pub fn fundamental_matrix(lq: &LqSolution, t: f64, tau: f64) -> DMatrix<f64> {
    lq.fundamental_matrix(t, tau)
}

/// ∫_t^{min(s+h, T−h)} Φ(t,τ) P(τ) Γ(τ−s) dτ.
pub fn phi_coefficient<G>(lq: &LqSolution, gamma: &G, t: f64, s: f64) -> DMatrix<f64>
where
    G: Fn(f64) -> DMatrix<f64>,
{
    let n = lq.a.nrows();
    let upper = (s + lq.h).min(lq.horizon);
    if upper <= t {
        return DMatrix::zeros(n, n);
    }
    let panels = ((64.0 * (upper - t) / lq.h).ceil() as usize).max(2);
    let ut = lq.fund.at(t);
    ut * simpson(|tau| lq.fund_inv.at(tau) * lq.p.at(tau) * gamma(tau - s), t, upper, panels)
}

/// φ(t) as a left-point Itô sum over the increments of `path` in
/// [t − h, t); only increments strictly before t are read.
pub fn compute_phi<G, S>(lq: &LqSolution, gamma: &G, path: &BrownianPath, sigma: S, t: f64) -> DVector<f64>
where
    G: Fn(f64) -> DMatrix<f64>,
    S: Fn(f64) -> DVector<f64>,
{
    let n = lq.a.nrows();
    let dt = path.dt;
    let k = (t / dt).round() as usize;
    let m = (lq.h / dt).round() as usize;
    let mut phi = DVector::zeros(n);
    for l in 1..=m.min(k) {
        let j = k - l;
        let s = j as f64 * dt;
        let c = phi_coefficient(lq, gamma, t, s);
        phi += c * sigma(s) * path.increments[j];
    }
    phi
}

/// Precomputed per-step data of the LQ feedback on one simulation grid.
#[derive(Clone, Debug)]
pub struct LqLaw {
    pub solution: LqSolution,
    pub predictor: Arc<Predictor>,
    n: usize,
    /// Last step with t_k ≤ T − h.
    pub k_end: usize,
    /// R(t_k)⁻¹ B̄ᵀ P(t_k), flattened 1×n, for k ≤ k_end.
    gain: Vec<Vec<f64>>,
    /// R(t_k)⁻¹ B̄ᵀ, flattened.
    r_inv_bbar: Vec<Vec<f64>>,
    /// g(l dt) for l = 1..=m, row-major n×n.
    g_taps: Vec<Vec<f64>>,
    /// R(t_k)⁻¹ B̄ᵀ c_{k,l}, row-major 1×n, indexed k·m + (l−1).
    phi_rows: Vec<Vec<f64>>,
    /// σ(t_k).
    sigma: Vec<Vec<f64>>,
}

impl LqLaw {
    pub fn new(params: &SystemParams, ks: &KernelSet, weights: &LqWeights, grid: &SpaceTimeGrid) -> Result<Self> {
        let gamma = |u: f64| gamma_fn(params, ks, u);
        Self::with_gamma(params, ks, weights, grid, &gamma)
    }

    /// As [`LqLaw::new`] with an explicit Γ, so the φ machinery can be
    /// exercised with a non-vanishing drift kernel.
    pub fn with_gamma<G>(
        params: &SystemParams,
        ks: &KernelSet,
        weights: &LqWeights,
        grid: &SpaceTimeGrid,
        gamma: &G,
    ) -> Result<Self>
    where
        G: Fn(f64) -> DMatrix<f64>,
    {
        let solution = LqSolution::for_grid(params, weights, grid)?;
        let predictor = Arc::new(Predictor::new(&params.a, &params.b, grid));
        let n = params.n();
        let m = grid.delay_steps;
        let dt = grid.dt;
        let k_end = ((solution.horizon / dt) * (1.0 + 1e-12)).floor() as usize;
        let s2 = 2 * LqSolution::substeps(grid);
        let fine = dt / s2 as f64;
        let flat = |mtx: DMatrix<f64>| -> Vec<f64> { mtx.transpose().iter().copied().collect() };

        let mut gain: Vec<Vec<f64>> = Vec::with_capacity(k_end + 1);
        let mut r_inv_bbar: Vec<Vec<f64>> = Vec::with_capacity(k_end + 1);
        for k in 0..=k_end {
            let t = k as f64 * dt;
            let rb = solution.bbar.transpose() / weights.r_at(t);
            gain.push((&rb * solution.p.node(s2 * k)).iter().copied().collect());
            r_inv_bbar.push(rb.iter().copied().collect());
        }

        let shapes = DelayShapes::new(params, ks);
        let g_taps = (1..=m).map(|l| flat(shapes.g_at(l as f64 * dt))).collect();

        // c_{k,l} = U(t_k) ∫ U⁻¹(τ) P(τ) Γ(τ − t_{k−l}) dτ by Simpson on the
        // Riccati grid
        let gamma_fine: Vec<DMatrix<f64>> = (0..=s2 * m).map(|j| gamma(j as f64 * fine)).collect();
        let h_fine: Vec<DMatrix<f64>> =
            (0..=s2 * k_end).map(|i| solution.fund_inv.node(i) * solution.p.node(i)).collect();
        let mut phi_rows = Vec::with_capacity((k_end + 1) * m);
        let mut acc = DMatrix::zeros(n, n);
        for (k, rb) in r_inv_bbar.iter().enumerate().take(k_end + 1) {
            let rb = DMatrix::from_row_slice(1, n, rb);
            let row_u = rb * solution.fund.node(s2 * k);
            for l in 1..=m {
                acc.fill(0.0);
                let lo = s2 * k;
                let hi = s2 * (k + m - l).min(k_end);
                // increments before t = 0 do not exist, so l > k never contributes
                if hi > lo && l <= k {
                    let base = s2 * (k - l);
                    for i in lo..=hi {
                        let w = if i == lo || i == hi {
                            1.0
                        } else if (i - lo) % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        acc.gemm(w * fine / 3.0, &h_fine[i], &gamma_fine[i - base], 1.0);
                    }
                }
                phi_rows.push((&row_u * &acc).iter().copied().collect());
            }
        }
        let sigma = (0..=grid.nt).map(|k| params.sigma_at(k as f64 * dt).iter().copied().collect()).collect();
        Ok(LqLaw { solution, predictor, n, k_end, gain, r_inv_bbar, g_taps, phi_rows, sigma })
    }

    pub fn delay_steps(&self) -> usize {
        self.predictor.delay_steps
    }

    /// G(t_k) = Σ_{l=1..m} g(l dt) σ(t_{k−l}) ΔW_{k−l}.
    pub fn rolling_g(&self, k: usize, past: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for l in 1..=self.delay_steps().min(k) {
            let j = k - l;
            let tap = &self.g_taps[l - 1];
            let sig = &self.sigma[j];
            for r in 0..n {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += tap[r * n + c] * sig[c];
                }
                out[r] += acc * past[j];
            }
        }
        out
    }

    /// R⁻¹B̄ᵀφ(t_k) from the precomputed coefficients.
    pub fn phi_term(&self, k: usize, past: &[f64]) -> f64 {
        if k > self.k_end {
            return 0.0;
        }
        let m = self.delay_steps();
        let mut out = 0.0;
        for l in 1..=m.min(k) {
            let j = k - l;
            let row = &self.phi_rows[k * m + l - 1];
            let sig = &self.sigma[j];
            let mut acc = 0.0;
            for c in 0..self.n {
                acc += row[c] * sig[c];
            }
            out += acc * past[j];
        }
        out
    }

    /// V*(t_k) given the predictor state and the increments ΔW_j, j < k.
    pub fn emit(&self, k: usize, x: &DVector<f64>, artstein: &ArtsteinState, past: &[f64]) -> f64 {
        if k > self.k_end {
            return 0.0;
        }
        let y = artstein.predict(x);
        let g = self.rolling_g(k, past);
        let gain = &self.gain[k];
        let mut v = 0.0;
        for i in 0..self.n {
            v += gain[i] * (y[i] + g[i]);
        }
        -(v + self.phi_term(k, past))
    }

    /// R(t_k)⁻¹B̄ᵀ, exposed for diagnostics.
    pub fn r_inv_bbar(&self, k: usize) -> &[f64] {
        &self.r_inv_bbar[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form solution of ṗ = −2ap − q̄ + (b̄²/r) p², p(T') = 0.
    fn scalar_oracle(a: f64, bbar: f64, qbar: f64, r: f64, t_end: f64, t: f64) -> f64 {
        let c = bbar * bbar / r;
        let disc = (a * a + qbar * c).sqrt();
        let (pp, pm) = ((a + disc) / c, (a - disc) / c);
        let e = (pp / pm) * (c * (pp - pm) * (t - t_end)).exp();
        (pp - pm * e) / (1.0 - e)
    }

    fn scalar(a: f64) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::from_element(1, 1, a), DVector::from_element(1, 1.0))
    }

    #[test]
    fn scalar_riccati_matches_closed_form() {
        let (a, b) = scalar(0.6);
        let h = 0.5;
        let w = LqWeights::constant(&DMatrix::from_element(1, 1, 1.0), 0.1);
        let bbar = (-0.6f64 * h).exp();
        let qbar = (2.0f64 * 0.6 * h).exp();
        let p = solve_riccati(&w, &a, &(expm(&a, -h) * &b), h, 3.5, 1.0 / 800.0).unwrap();
        for (i, pi) in p.values.iter().enumerate().step_by(50) {
            let t = i as f64 / 800.0;
            let want = scalar_oracle(0.6, bbar, qbar, 0.1, 3.5, t);
            assert!((pi[(0, 0)] - want).abs() < 1e-8 * want.max(1.0), "t={t}: {} vs {want}", pi[(0, 0)]);
        }
        assert_eq!(p.values.last().unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn zero_weight_gives_zero_p() {
        let (a, b) = scalar(0.6);
        let w = LqWeights::constant(&DMatrix::zeros(1, 1), 0.1);
        let p = solve_riccati(&w, &a, &b, 0.5, 1.0, 0.01).unwrap();
        assert!(p.values.iter().all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn riccati_is_fourth_order() {
        let (a, b) = scalar(0.6);
        let w = LqWeights::constant(&DMatrix::from_element(1, 1, 1.0), 0.1);
        // probe inside the terminal transient, where the error is not yet
        // damped by the stable backward dynamics
        let p3 = |step: f64| solve_riccati(&w, &a, &b, 0.5, 3.5, step).unwrap().at(3.0)[(0, 0)];
        let (c, m, f) = (p3(0.025), p3(0.0125), p3(0.00625));
        let ratio = (c - m) / (m - f);
        assert!(ratio > 14.0 && ratio < 18.5, "ratio {ratio}");
    }

    #[test]
    fn riccati_monotone_in_weight() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, 0.2]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let q1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let q2 = &q1 + DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]);
        let p1 = solve_riccati(&LqWeights::constant(&q1, 0.2), &a, &b, 0.3, 2.0, 0.01).unwrap();
        let p2 = solve_riccati(&LqWeights::constant(&q2, 0.2), &a, &b, 0.3, 2.0, 0.01).unwrap();
        for (x, y) in p1.values.iter().zip(&p2.values) {
            assert!(min_symmetric_eigenvalue(&(y - x)) >= -1e-10);
            assert!(min_symmetric_eigenvalue(x) >= -1e-10);
            assert!((x - x.transpose()).amax() <= 1e-12);
        }
    }

    #[test]
    fn fundamental_matrix_properties() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, 0.2]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let w = LqWeights::constant(&DMatrix::identity(2, 2), 0.2);
        let lq = LqSolution::solve(&a, &b, &w, 0.3, 2.0, 0.005).unwrap();
        let id = lq.fundamental_matrix(0.7, 0.7);
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-12);
        let (t1, t2, t3) = (0.13, 0.91, 1.77);
        let lhs = lq.fundamental_matrix(t1, t2) * lq.fundamental_matrix(t2, t3);
        assert!((lhs - lq.fundamental_matrix(t1, t3)).amax() < 1e-8);
    }

    #[test]
    fn constant_pi_gives_matrix_exponential() {
        // with Q = 0 we have P = 0 and Π = −Aᵀ
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -0.7, -0.3]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let w = LqWeights::constant(&DMatrix::zeros(2, 2), 1.0);
        let lq = LqSolution::solve(&a, &b, &w, 0.3, 2.0, 0.01).unwrap();
        let want = expm(&(-a.transpose()), 0.4 - 1.5);
        assert!((lq.fundamental_matrix(0.4, 1.5) - want).amax() < 1e-9);
    }

    #[test]
    fn weights_are_validated() {
        let bad_r = LqWeights::constant(&DMatrix::from_element(1, 1, 1.0), 0.0);
        assert!(bad_r.validate(1).is_err());
        let asym = LqWeights::constant(&DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]), 1.0);
        assert!(asym.validate(2).is_err());
        let indefinite = LqWeights::constant(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 1.0);
        assert!(indefinite.validate(2).is_err());
        assert!(LqWeights::constant(&DMatrix::identity(2, 2), 1.0).validate(1).is_err());
    }
}
