//! Control laws for the effective input V_eff; the full boundary input is
//! V_in = V_BS + V_eff.

pub mod artstein;
pub mod backstepping;
pub mod gain;
pub mod lq;

use std::sync::Arc;

use nalgebra::{DVector, RowDVector};
use serde::{Deserialize, Serialize};

pub use artstein::{artstein_predict, predictor_series, ArtsteinState, Predictor};
pub use backstepping::{v_bs, BoundaryLaw};
pub use gain::{closed_loop_spectrum, default_poles, stabilizing_gain};
pub use lq::{compute_phi, fundamental_matrix, solve_riccati, LqLaw, LqSolution, LqWeights};

use crate::error::Result;
use crate::grid::SpaceTimeGrid;
use crate::params::SystemParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    OpenLoop,
    StabilizingFeedback,
    LqOptimal,
    Scripted,
}

#[derive(Clone, Debug)]
pub enum Controller {
    OpenLoop,
    /// Replays `values[k]` at step k (zero past the end).
    Scripted(Arc<Vec<f64>>),
    /// V_eff = −K Y.
    Feedback {
        gain: RowDVector<f64>,
        predictor: Arc<Predictor>,
    },
    Lq(Arc<LqLaw>),
}

impl Controller {
    pub fn kind(&self) -> ControllerKind {
        match self {
            Controller::OpenLoop => ControllerKind::OpenLoop,
            Controller::Scripted(_) => ControllerKind::Scripted,
            Controller::Feedback { .. } => ControllerKind::StabilizingFeedback,
            Controller::Lq(_) => ControllerKind::LqOptimal,
        }
    }

    /// Per-path state; `history[l−1]` is V_eff(−l dt).
    pub fn start(&self, history: &[f64]) -> ControllerState<'_> {
        let artstein = match self {
            Controller::Feedback { predictor, .. } => Some(ArtsteinState::new(predictor.clone(), history)),
            Controller::Lq(law) => Some(ArtsteinState::new(law.predictor.clone(), history)),
            _ => None,
        };
        ControllerState { ctrl: self, artstein }
    }
}

/// Feedback V = −K Y for poles placed by [`stabilizing_gain`].
pub fn feedback_controller(gain: RowDVector<f64>, predictor: Arc<Predictor>) -> Controller {
    Controller::Feedback { gain, predictor }
}

/// Build the predictor feedback for a pole specification on `grid`.
pub fn feedback_for_poles(params: &SystemParams, grid: &SpaceTimeGrid, poles: &[f64]) -> Result<Controller> {
    let predictor = Arc::new(Predictor::new(&params.a, &params.b, grid));
    let k = stabilizing_gain(&params.a, &params.b, predictor.delay, poles)?;
    Ok(feedback_controller(k, predictor))
}

pub struct ControllerState<'a> {
    ctrl: &'a Controller,
    artstein: Option<ArtsteinState>,
}

impl ControllerState<'_> {
    /// V_eff at step k. `past` holds the increments ΔW_j for j < k only,
    /// so the emitted value cannot depend on later noise.
    pub fn emit(&mut self, k: usize, x: &DVector<f64>, past: &[f64]) -> f64 {
        debug_assert_eq!(past.len(), k);
        let v = match self.ctrl {
            Controller::OpenLoop => 0.0,
            Controller::Scripted(values) => values.get(k).copied().unwrap_or(0.0),
            Controller::Feedback { gain, .. } => {
                let y = self.artstein.as_ref().expect("feedback state").predict(x);
                -gain.tr_dot(&y)
            }
            Controller::Lq(law) => law.emit(k, x, self.artstein.as_ref().expect("lq state"), past),
        };
        if let Some(a) = self.artstein.as_mut() {
            a.push(v);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn zero_gain_is_open_loop() {
        let p = SystemParams::fig1();
        let g = make_grid(&p, 20).unwrap();
        let pred = Arc::new(Predictor::new(&p.a, &p.b, &g));
        let c = feedback_controller(RowDVector::zeros(1), pred);
        let mut s = c.start(&[1.0, 2.0]);
        for k in 0..5 {
            let past = vec![0.1; k];
            assert_eq!(s.emit(k, &DVector::from_element(1, 3.0), &past), 0.0);
        }
    }

    #[test]
    fn scripted_replays() {
        let c = Controller::Scripted(Arc::new(vec![1.0, -2.0]));
        let mut s = c.start(&[]);
        let x = DVector::zeros(1);
        assert_eq!(s.emit(0, &x, &[]), 1.0);
        assert_eq!(s.emit(1, &x, &[0.0]), -2.0);
        assert_eq!(s.emit(2, &x, &[0.0, 0.0]), 0.0);
        assert_eq!(c.kind(), ControllerKind::Scripted);
    }
}
