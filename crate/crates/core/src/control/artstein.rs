//! Artstein predictor for the input-delayed SDE.
//!
//! On the time grid the predictor is
//!
//! ```text
//! Y_k = X_k + Σ_{l=1..m} dt e^{A((l−1)dt − h)} B V_{k−l},    m dt = h,
//! ```
//!
//! the quadrature of `∫_{t−h}^t e^{A(t−s−h)} B V(s) ds` that is exact for
//! the exponential-Euler step used by the simulators: with
//! `E = e^{A dt}` it satisfies `Y_{k+1} = E Y_k + dt B̄ V_k + dt r_k + σ_k ΔW_k`
//! identically.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::grid::SpaceTimeGrid;
use crate::linalg::expm;

#[derive(Clone, Debug)]
pub struct Predictor {
    pub dt: f64,
    pub delay: f64,
    pub delay_steps: usize,
    /// e^{A dt}.
    pub exp_a_dt: DMatrix<f64>,
    /// e^{A h}.
    pub exp_a_h: DMatrix<f64>,
    /// B̄ = e^{−A h} B.
    pub bbar: DVector<f64>,
    /// `weights[l−1] = dt e^{A((l−1)dt − h)} B`.
    weights: Vec<DVector<f64>>,
    /// The same weights laid out flat, n per lag.
    flat: Vec<f64>,
}

impl Predictor {
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>, grid: &SpaceTimeGrid) -> Self {
        let dt = grid.dt;
        let m = grid.delay_steps;
        let h = m as f64 * dt;
        let exp_a_dt = expm(a, dt);
        let bbar = expm(a, -h) * b;
        let mut weights = Vec::with_capacity(m);
        let mut w = &bbar * dt;
        for _ in 0..m {
            weights.push(w.clone());
            w = &exp_a_dt * w;
        }
        let flat = weights.iter().flat_map(|w| w.iter().copied()).collect();
        Predictor { dt, delay: h, delay_steps: m, exp_a_dt, exp_a_h: expm(a, h), bbar, weights, flat }
    }

    pub fn n(&self) -> usize {
        self.bbar.len()
    }

    pub fn weight(&self, l: usize) -> &DVector<f64> {
        &self.weights[l - 1]
    }

    /// `Y = X + Σ_l w_l V_{k−l}` where `recent(l)` returns V_{k−l}.
    pub fn predict_with<F: Fn(usize) -> f64>(&self, x: &DVector<f64>, recent: F) -> DVector<f64> {
        let mut y = x.clone();
        let ys = y.as_mut_slice();
        for (idx, w) in self.flat.chunks_exact(ys.len()).enumerate() {
            let v = recent(idx + 1);
            if v != 0.0 {
                for (yi, wi) in ys.iter_mut().zip(w) {
                    *yi += v * wi;
                }
            }
        }
        y
    }
}

/// Per-path predictor state: the last m values of V_eff.
#[derive(Clone, Debug)]
pub struct ArtsteinState {
    pub predictor: Arc<Predictor>,
    /// `buffer[l−1] = V_{k−l}`.
    buffer: VecDeque<f64>,
}

impl ArtsteinState {
    /// `history[l−1]` is V_eff(−l dt); missing entries are zero.
    pub fn new(predictor: Arc<Predictor>, history: &[f64]) -> Self {
        let m = predictor.delay_steps;
        let buffer = (0..m).map(|i| history.get(i).copied().unwrap_or(0.0)).collect();
        ArtsteinState { predictor, buffer }
    }

    pub fn zero(predictor: Arc<Predictor>) -> Self {
        Self::new(predictor, &[])
    }

    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        self.predictor.predict_with(x, |l| self.buffer[l - 1])
    }

    /// Record V_k; afterwards the state refers to step k + 1.
    pub fn push(&mut self, v: f64) {
        self.buffer.pop_back();
        self.buffer.push_front(v);
    }

    pub fn buffer(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffer.iter().copied()
    }
}

pub fn artstein_predict(state: &ArtsteinState, x: &DVector<f64>) -> DVector<f64> {
    state.predict(x)
}

/// Predictor along a recorded run: `x[k]`, `v[k]` for k = 0..=nt and the
/// pre-start history `history[l−1] = V(−l dt)`.
pub fn predictor_series(pred: &Predictor, x: &[DVector<f64>], v: &[f64], history: &[f64]) -> Vec<DVector<f64>> {
    x.iter()
        .enumerate()
        .map(|(k, xk)| {
            pred.predict_with(xk, |l| if l <= k { v[k - l] } else { history.get(l - k - 1).copied().unwrap_or(0.0) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::params::SystemParams;

    fn setup(a: f64) -> (Arc<Predictor>, SpaceTimeGrid) {
        let p = SystemParams { a: DMatrix::from_element(1, 1, a), ..SystemParams::fig1() };
        let g = make_grid(&p, 40).unwrap();
        (Arc::new(Predictor::new(&p.a, &p.b, &g)), g)
    }

    #[test]
    fn zero_buffer_is_identity() {
        let (pred, _) = setup(0.6);
        let s = ArtsteinState::zero(pred);
        let x = DVector::from_element(1, 1.2345678901234567);
        assert_eq!(artstein_predict(&s, &x), x);
    }

    #[test]
    fn constant_input_without_drift() {
        let (pred, g) = setup(0.0);
        let h = g.delay_steps as f64 * g.dt;
        let s = ArtsteinState::new(pred, &vec![0.7; g.delay_steps]);
        let y = s.predict(&DVector::from_element(1, 1.0));
        assert!((y[0] - (1.0 + 0.7 * h)).abs() < 1e-14);
    }

    #[test]
    fn buffer_shifts() {
        let (pred, _) = setup(0.6);
        let mut s = ArtsteinState::new(pred, &[1.0, 2.0]);
        s.push(5.0);
        let b: Vec<f64> = s.buffer().take(3).collect();
        assert_eq!(b, vec![5.0, 1.0, 2.0]);
    }

    #[test]
    fn one_step_identity_is_exact() {
        let (pred, g) = setup(0.6);
        let m = g.delay_steps;
        let hist: Vec<f64> = (0..m).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut s = ArtsteinState::new(pred.clone(), &hist);
        let x = DVector::from_element(1, 0.3);
        let y0 = s.predict(&x);
        // one exponential-Euler step of the delayed SDE without noise
        let v0 = -0.8;
        let delayed = hist[m - 1];
        let x1 = &pred.exp_a_dt * &x + &pred.bbar.map(|_| 1.0) * (g.dt * delayed);
        s.push(v0);
        let y1 = s.predict(&x1);
        let want = &pred.exp_a_dt * y0 + &pred.bbar * (g.dt * v0);
        assert!((y1 - want).amax() < 1e-14);
    }
}
