//! Path-wise quantities behind the variance and cost identities, and their
//! ensemble checks.
//!
//! With `E = e^{A dt}`, m dt = h and left-point Itô sums over the trailing
//! window (lags l = 1..m):
//!
//! ```text
//! G(t_k)  = Σ_l g(l dt) σ_{k−l} ΔW_{k−l}
//! W(t_k)  = Σ_l [e^{A l dt} + N(l dt)] σ_{k−l} ΔW_{k−l}
//! r(t_k)  = Σ_l B γ_β(μ l dt) σ_{k−l} ΔW_{k−l}
//! r̄(t_k)  = Σ_l Γ(l dt) σ_{k−l} ΔW_{k−l}
//! X(t)    = e^{Ah} (Y + G)(t − h) + W(t)
//! ```

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::Serialize;

use super::shapes::{gamma_fn, DelayShapes, WINDOW_PANELS};
use crate::brownian::BrownianPath;
use crate::control::{predictor_series, LqWeights, Predictor};
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::kernels::KernelSet;
use crate::linalg::expm;
use crate::params::SystemParams;
use crate::quad::simpson;
use crate::sim::Trajectory;
use crate::stats::{jackknife_se, mean, pairwise_sum, std_error, variance_replicates};

/// Lag-indexed kernels of the trailing-window Itô sums, stored flat.
#[derive(Clone, Debug)]
pub struct WindowSums {
    pub n: usize,
    pub m: usize,
    /// n×n row-major per lag.
    g_taps: Vec<f64>,
    resp_taps: Vec<f64>,
    gamma_taps: Vec<f64>,
    /// n per lag: B γ_β(μ l dt) is rank one, stored as the row γ_β.
    gb_taps: Vec<f64>,
    b: Vec<f64>,
    /// σ(t_j), n per step.
    sigma: Vec<f64>,
}

impl WindowSums {
    pub fn new(params: &SystemParams, ks: &KernelSet, grid: &SpaceTimeGrid) -> Self {
        let n = params.n();
        let m = grid.delay_steps;
        let dt = grid.dt;
        let shapes = DelayShapes::new(params, ks);
        let flat = |mtx: DMatrix<f64>| mtx.transpose().iter().copied().collect::<Vec<f64>>();
        let lags = 1..=m;
        let g_taps = lags.clone().flat_map(|l| flat(shapes.g_at(l as f64 * dt))).collect();
        let resp_taps = lags.clone().flat_map(|l| flat(shapes.window_response(l as f64 * dt))).collect();
        let gamma_taps = lags.clone().flat_map(|l| flat(gamma_fn(params, ks, l as f64 * dt))).collect();
        let gb_taps = lags
            .flat_map(|l| ks.gamma_beta_at((params.mu * l as f64 * dt).min(1.0)).iter().copied().collect::<Vec<_>>())
            .collect();
        let sigma =
            (0..grid.nt).flat_map(|j| params.sigma_at(grid.time(j)).iter().copied().collect::<Vec<_>>()).collect();
        WindowSums { n, m, g_taps, resp_taps, gamma_taps, gb_taps, b: params.b.iter().copied().collect(), sigma }
    }

    fn matrix_sum(&self, taps: &[f64], k: usize, inc: &[f64]) -> DVector<f64> {
        let n = self.n;
        let mut out = DVector::zeros(n);
        for l in 1..=self.m.min(k) {
            let j = k - l;
            let t = &taps[(l - 1) * n * n..l * n * n];
            let s = &self.sigma[j * n..(j + 1) * n];
            let dw = inc[j];
            for r in 0..n {
                let mut acc = 0.0;
                for c in 0..n {
                    acc += t[r * n + c] * s[c];
                }
                out[r] += acc * dw;
            }
        }
        out
    }

    /// G(t_k).
    pub fn g_at(&self, k: usize, inc: &[f64]) -> DVector<f64> {
        self.matrix_sum(&self.g_taps, k, inc)
    }

    /// W(t_k), the part of X(t_k) driven by noise inside the last delay window.
    pub fn window_at(&self, k: usize, inc: &[f64]) -> DVector<f64> {
        self.matrix_sum(&self.resp_taps, k, inc)
    }

    /// r̄(t_k).
    pub fn rbar_at(&self, k: usize, inc: &[f64]) -> DVector<f64> {
        self.matrix_sum(&self.gamma_taps, k, inc)
    }

    /// r(t_k).
    pub fn r_at(&self, k: usize, inc: &[f64]) -> DVector<f64> {
        let n = self.n;
        let mut s = 0.0;
        for l in 1..=self.m.min(k) {
            let j = k - l;
            let tap = &self.gb_taps[(l - 1) * n..l * n];
            let sig = &self.sigma[j * n..(j + 1) * n];
            s += tap.iter().zip(sig).map(|(a, b)| a * b).sum::<f64>() * inc[j];
        }
        DVector::from_iterator(n, self.b.iter().map(|b| b * s))
    }

    pub fn sigma(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.sigma[j * self.n..(j + 1) * self.n])
    }

    /// σ(t_j) ΔW_j for every step, n per step.
    pub fn scaled_increments(&self, inc: &[f64]) -> Vec<f64> {
        let n = self.n;
        inc.iter().enumerate().flat_map(|(j, dw)| self.sigma[j * n..(j + 1) * n].iter().map(move |s| s * dw)).collect()
    }

    /// Σ_l taps_l sdw_{k−l} for k = 0..=nt, n per step. Lags run in the
    /// outer loop so the inner one is a straight pass over the path.
    fn matrix_series(&self, taps: &[f64], sdw: &[f64]) -> Vec<f64> {
        let n = self.n;
        let steps = sdw.len() / n;
        let mut out = vec![0.0; (steps + 1) * n];
        for l in 1..=self.m.min(steps) {
            let t = &taps[(l - 1) * n * n..l * n * n];
            for (o, s) in out[l * n..].chunks_exact_mut(n).zip(sdw.chunks_exact(n)) {
                for (or, row) in o.iter_mut().zip(t.chunks_exact(n)) {
                    *or += row.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        out
    }

    /// G(t_k) for every step from [`Self::scaled_increments`].
    pub fn g_series(&self, sdw: &[f64]) -> Vec<f64> {
        self.matrix_series(&self.g_taps, sdw)
    }

    /// r̄(t_k) for every step.
    pub fn rbar_series(&self, sdw: &[f64]) -> Vec<f64> {
        self.matrix_series(&self.gamma_taps, sdw)
    }

    /// r(t_k) for every step.
    pub fn r_series(&self, sdw: &[f64]) -> Vec<f64> {
        let n = self.n;
        let steps = sdw.len() / n;
        let mut scalar = vec![0.0; steps + 1];
        for l in 1..=self.m.min(steps) {
            let tap = &self.gb_taps[(l - 1) * n..l * n];
            for (o, s) in scalar[l..].iter_mut().zip(sdw.chunks_exact(n)) {
                *o += tap.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        scalar.iter().flat_map(|s| self.b.iter().map(move |b| b * s)).collect()
    }
}

/// Entries k·n..(k+1)·n of a flat per-step series.
fn view(v: &[f64], k: usize, n: usize) -> DVectorView<'_, f64> {
    DVectorView::from_slice(&v[k * n..(k + 1) * n], n)
}

/// xᵀ Q x without temporaries.
fn quad_form(q: &DMatrix<f64>, x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, xi)| xi * x.iter().enumerate().map(|(j, xj)| q[(i, j)] * xj).sum::<f64>()).sum()
}

/// G(t_k) for every step of `path`.
pub fn rolling_g(
    params: &SystemParams,
    ks: &KernelSet,
    path: &BrownianPath,
    grid: &SpaceTimeGrid,
) -> Vec<DVector<f64>> {
    let sums = WindowSums::new(params, ks, grid);
    (0..=path.nt()).map(|k| sums.g_at(k, &path.increments)).collect()
}

/// Per-path cost integrals by the trapezoid rule on the simulation grid.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct CostSample {
    /// ∫_h^T Xᵀ Q X dt.
    pub state_x: f64,
    /// ∫_0^{T−h} Ȳᵀ Q̄ Ȳ dt.
    pub state_ybar: f64,
    /// ∫_0^{T−h} R V_eff² dt.
    pub control: f64,
}

impl CostSample {
    /// J_R on this path.
    pub fn total(&self) -> f64 {
        self.state_x + self.control
    }
}

/// Everything the ensemble checks need from one path. Vectors indexed by
/// check step hold n entries per step.
#[derive(Clone, Debug, Default)]
pub struct PathObservables {
    pub x: Vec<f64>,
    /// e^{Ah}(Y + G)(t − h).
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    /// Y(t) − Y(0) − Σ (A Y + B̄ V + r) dt.
    pub y_drift: Vec<f64>,
    /// `y_drift` minus Σ σ ΔW.
    pub y_gap: Vec<f64>,
    /// Ȳ(t) − Ȳ(0) − Σ (A Ȳ + B̄ V + r̄) dt.
    pub ybar_drift: Vec<f64>,
    /// `ybar_drift` minus (I + g(0)) Σ σ ΔW.
    pub ybar_gap: Vec<f64>,
    /// X(t) − e^{Ah} Y(t−h) − Σ e^{A(t−s)} (r dt + σ ΔW) over the window.
    pub link: Vec<f64>,
    pub r: Vec<f64>,
    pub g: Vec<f64>,
    pub cost: Option<CostSample>,
}

fn trap_weight(k: usize, lo: usize, hi: usize, dt: f64) -> f64 {
    if k == lo || k == hi {
        0.5 * dt
    } else {
        dt
    }
}

/// Q on [h, T], Q̄ and R on [0, T−h], sampled per step.
type CostWeights = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<f64>);

/// Computes [`PathObservables`] from a trajectory and the path that drove it.
#[derive(Clone, Debug)]
pub struct PathAnalyzer {
    pub check_steps: Vec<usize>,
    pub sums: WindowSums,
    predictor: Predictor,
    a: DMatrix<f64>,
    one_plus_g0: DMatrix<f64>,
    /// e^{A l dt} for l = 0..=m.
    exp_lags: Vec<DMatrix<f64>>,
    dt: f64,
    nt: usize,
    m: usize,
    /// Q(t_k) for k = m..=nt and Q̄(t_k), R(t_k) for k = 0..=nt−m.
    weights: Option<CostWeights>,
}

impl PathAnalyzer {
    /// `check_steps` must all lie in [m, nt].
    pub fn new(
        params: &SystemParams,
        ks: &KernelSet,
        grid: &SpaceTimeGrid,
        check_steps: Vec<usize>,
        weights: Option<&LqWeights>,
    ) -> Result<Self> {
        let m = grid.delay_steps;
        if let Some(&k) = check_steps.iter().find(|&&k| k < m || k > grid.nt) {
            return Err(Error::Precondition(format!("check step {k} outside [{m}, {}]", grid.nt)));
        }
        let predictor = Predictor::new(&params.a, &params.b, grid);
        let shapes = DelayShapes::new(params, ks);
        let n = params.n();
        let exp_lags = (0..=m).map(|l| expm(&params.a, l as f64 * grid.dt)).collect();
        let h = predictor.delay;
        let weights = match weights {
            Some(w) => {
                w.validate(n)?;
                let q = (m..=grid.nt).map(|k| w.q_at(grid.time(k))).collect();
                let qbar = (0..=grid.nt - m).map(|k| w.qbar_at(grid.time(k), &predictor.exp_a_h, h)).collect();
                let r = (0..=grid.nt - m).map(|k| w.r_at(grid.time(k))).collect();
                Some((q, qbar, r))
            }
            None => None,
        };
        Ok(PathAnalyzer {
            check_steps,
            sums: WindowSums::new(params, ks, grid),
            a: params.a.clone(),
            one_plus_g0: DMatrix::identity(n, n) + shapes.g_at(0.0),
            predictor,
            exp_lags,
            dt: grid.dt,
            nt: grid.nt,
            m,
            weights,
        })
    }

    /// The default probe times h, T/2, (T+h)/2 and T as steps.
    pub fn default_check_steps(grid: &SpaceTimeGrid) -> Vec<usize> {
        let (m, nt) = (grid.delay_steps, grid.nt);
        let mut v = vec![m, (nt / 2).max(m), (nt + m) / 2, nt];
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn analyze(&self, traj: &Trajectory, path: &BrownianPath) -> PathObservables {
        let inc = &path.increments;
        let (dt, m, nt) = (self.dt, self.m, self.nt);
        let pred = &self.predictor;
        let n = pred.n();
        let y = predictor_series(pred, &traj.x, &traj.v_eff, &traj.history);
        let sdw = self.sums.scaled_increments(inc);
        let g = self.sums.g_series(&sdw);
        let r = self.sums.r_series(&sdw);
        let rbar = self.sums.rbar_series(&sdw);
        let at = |v: &[f64], k: usize| view(v, k, n).into_owned();

        // cumulative drift-free increments of Y and Ȳ, and Σ σ ΔW, n per step
        let mut y_drift = DVector::zeros(n);
        let mut ybar_drift = DVector::zeros(n);
        let mut noise = DVector::zeros(n);
        let mut step = DVector::zeros(n);
        let mut y_drift_at = Vec::with_capacity((nt + 1) * n);
        let mut ybar_drift_at = Vec::with_capacity((nt + 1) * n);
        let mut noise_at = Vec::with_capacity((nt + 1) * n);
        for k in 0..=nt {
            y_drift_at.extend_from_slice(y_drift.as_slice());
            ybar_drift_at.extend_from_slice(ybar_drift.as_slice());
            noise_at.extend_from_slice(noise.as_slice());
            if k == nt {
                break;
            }
            let v = traj.v_eff[k];
            let (gk, gk1) = (view(&g, k, n), view(&g, k + 1, n));

            // Y(k+1) − Y(k) − (A Y + B̄ V + r) dt
            step.copy_from(&y[k + 1]);
            step -= &y[k];
            step.gemv(-dt, &self.a, &y[k], 1.0);
            step.axpy(-dt * v, &pred.bbar, 1.0);
            step.axpy(-dt, &view(&r, k, n), 1.0);
            y_drift += &step;

            // the same for Ȳ = Y + G with r̄ in place of r
            step.copy_from(&y[k + 1]);
            step += &gk1;
            step -= &y[k];
            step -= &gk;
            step.gemv(-dt, &self.a, &y[k], 1.0);
            step.gemv(-dt, &self.a, &gk, 1.0);
            step.axpy(-dt * v, &pred.bbar, 1.0);
            step.axpy(-dt, &view(&rbar, k, n), 1.0);
            ybar_drift += &step;

            noise += &view(&sdw, k, n);
        }

        let mut obs = PathObservables::default();
        for &k in &self.check_steps {
            let z = &pred.exp_a_h * (&y[k - m] + at(&g, k - m));
            let w = self.sums.window_at(k, inc);
            let mut link = &traj.x[k] - &pred.exp_a_h * &y[k - m];
            for l in 1..=m {
                let j = k - l;
                link.gemv(-dt, &self.exp_lags[l], &view(&r, j, n), 1.0);
                link.gemv(-1.0, &self.exp_lags[l], &view(&sdw, j, n), 1.0);
            }
            let (yd, ybd, nz) = (at(&y_drift_at, k), at(&ybar_drift_at, k), at(&noise_at, k));
            let y_gap = &yd - &nz;
            let ybar_gap = &ybd - &self.one_plus_g0 * &nz;
            obs.x.extend(traj.x[k].iter());
            obs.z.extend(z.iter());
            obs.w.extend(w.iter());
            obs.y_drift.extend(yd.iter());
            obs.y_gap.extend(y_gap.iter());
            obs.ybar_drift.extend(ybd.iter());
            obs.ybar_gap.extend(ybar_gap.iter());
            obs.link.extend(link.iter());
            obs.r.extend(view(&r, k, n).iter());
            obs.g.extend(view(&g, k, n).iter());
        }

        if let Some((q, qbar, rw)) = &self.weights {
            let mut c = CostSample::default();
            for k in m..=nt {
                c.state_x += trap_weight(k, m, nt, dt) * quad_form(&q[k - m], traj.x[k].as_slice());
            }
            let mut yb = vec![0.0; n];
            for k in 0..=nt - m {
                for (i, ybi) in yb.iter_mut().enumerate() {
                    *ybi = y[k][i] + g[k * n + i];
                }
                let wk = trap_weight(k, 0, nt - m, dt);
                c.state_ybar += wk * quad_form(&qbar[k], &yb);
                c.control += wk * rw[k] * traj.v_eff[k] * traj.v_eff[k];
            }
            obs.cost = Some(c);
        }
        obs
    }
}

fn column(obs: &[PathObservables], field: impl Fn(&PathObservables) -> &[f64], idx: usize) -> Vec<f64> {
    obs.iter().map(|o| field(o)[idx]).collect()
}

/// Ensemble check of one identity at one time.
#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub t: f64,
    /// Estimated quantity that should vanish.
    pub value: f64,
    pub stderr: f64,
    /// |value| / stderr (0 when both vanish).
    pub z_score: f64,
}

impl CheckRow {
    fn new(name: &str, t: f64, value: f64, stderr: f64) -> Self {
        let z_score = if value == 0.0 { 0.0 } else { value.abs() / stderr };
        CheckRow { name: name.to_string(), t, value, stderr, z_score }
    }

    pub fn passes(&self, z_max: f64) -> bool {
        self.z_score.is_finite() && self.z_score <= z_max
    }
}

/// Sample means of a per-path vector field at every check time, one row
/// per (time, component).
pub fn mean_zero_rows(
    name: &str,
    obs: &[PathObservables],
    field: impl Fn(&PathObservables) -> &[f64] + Copy,
    times: &[f64],
    n: usize,
) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        for c in 0..n {
            let col = column(obs, field, ti * n + c);
            rows.push(CheckRow::new(name, t, mean(&col), std_error(&col)));
        }
    }
    rows
}

/// Root mean square over paths of a per-path vector field at each check time.
pub fn rms_rows(
    obs: &[PathObservables],
    field: impl Fn(&PathObservables) -> &[f64] + Copy,
    times: &[f64],
    n: usize,
) -> Vec<f64> {
    (0..times.len())
        .map(|ti| {
            let sq: Vec<f64> =
                obs.iter().map(|o| field(o)[ti * n..(ti + 1) * n].iter().map(|v| v * v).sum::<f64>()).collect();
            mean(&sq).sqrt()
        })
        .collect()
}

fn trace_variance_replicates(
    obs: &[PathObservables],
    field: impl Fn(&PathObservables) -> &[f64] + Copy,
    ti: usize,
    n: usize,
) -> (f64, Vec<f64>) {
    let np = obs.len();
    let mut reps = vec![0.0; np];
    let mut v = 0.0;
    for c in 0..n {
        let col = column(obs, field, ti * n + c);
        let mu = mean(&col);
        let sq: Vec<f64> = col.iter().map(|x| (x - mu) * (x - mu)).collect();
        v += pairwise_sum(&sq) / (np as f64 - 1.0);
        for (acc, r) in reps.iter_mut().zip(variance_replicates(&col)) {
            *acc += r;
        }
    }
    (v, reps)
}

/// One row of the variance decomposition V_X = Var[e^{Ah}(Y+G)(t−h)] + V_min.
#[derive(Clone, Debug, Serialize)]
pub struct DecompositionRow {
    pub t: f64,
    pub var_x: f64,
    pub var_z: f64,
    pub v_min: f64,
    /// var_x − var_z − v_min.
    pub residual: f64,
    /// Jackknife standard error of var_x − var_z on the same paths.
    pub stderr: f64,
    pub z_score: f64,
}

pub fn decomposition_rows(obs: &[PathObservables], times: &[f64], v_min: &[f64], n: usize) -> Vec<DecompositionRow> {
    times
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let (var_x, rx) = trace_variance_replicates(obs, |o| &o.x, ti, n);
            let (var_z, rz) = trace_variance_replicates(obs, |o| &o.z, ti, n);
            let diff: Vec<f64> = rx.iter().zip(&rz).map(|(a, b)| a - b).collect();
            let stderr = jackknife_se(&diff);
            let residual = var_x - var_z - v_min[ti];
            DecompositionRow { t, var_x, var_z, v_min: v_min[ti], residual, stderr, z_score: residual.abs() / stderr }
        })
        .collect()
}

/// Covariance between e^{Ah}(Y+G)(t−h) and the window integral W(t),
/// summed over components; zero when the two are independent.
pub fn independence_rows(obs: &[PathObservables], times: &[f64], n: usize) -> Vec<CheckRow> {
    times
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let np = obs.len();
            let mut prod = vec![0.0; np];
            for c in 0..n {
                let z = column(obs, |o| &o.z, ti * n + c);
                let w = column(obs, |o| &o.w, ti * n + c);
                let (mz, mw) = (mean(&z), mean(&w));
                for p in 0..np {
                    prod[p] += (z[p] - mz) * (w[p] - mw);
                }
            }
            CheckRow::new("independence", t, mean(&prod), std_error(&prod))
        })
        .collect()
}

/// Two estimates of the expected cost J_R: directly in X, and through Ȳ
/// plus the integrated weighted variance floor.
#[derive(Clone, Debug, Serialize)]
pub struct CostCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ybar_part: f64,
    pub control_part: f64,
    pub v_min_q_integral: f64,
    /// Standard error of lhs − rhs from the per-path differences.
    pub stderr: f64,
    pub z_score: f64,
}

/// ∫_h^T V_min,Q(t) dt.
pub fn v_min_q_integral(params: &SystemParams, ks: &KernelSet, weights: &LqWeights) -> f64 {
    let shapes = DelayShapes::new(params, ks);
    let h = params.delay();
    simpson(|t| shapes.v_min(|s| params.sigma_at(s), Some(&weights.q_at(t)), t), h, params.horizon, WINDOW_PANELS)
}

pub fn cost_decomposition_check(
    obs: &[PathObservables],
    params: &SystemParams,
    ks: &KernelSet,
    weights: &LqWeights,
) -> Result<CostCheck> {
    let costs: Vec<CostSample> = obs
        .iter()
        .map(|o| o.cost.ok_or_else(|| Error::Precondition("observables were computed without LQ weights".into())))
        .collect::<Result<_>>()?;
    let lhs_s: Vec<f64> = costs.iter().map(|c| c.total()).collect();
    let ybar_s: Vec<f64> = costs.iter().map(|c| c.state_ybar).collect();
    let ctrl_s: Vec<f64> = costs.iter().map(|c| c.control).collect();
    let diff: Vec<f64> = costs.iter().map(|c| c.state_x - c.state_ybar).collect();
    let vq = v_min_q_integral(params, ks, weights);
    let lhs = mean(&lhs_s);
    let ybar_part = mean(&ybar_s);
    let control_part = mean(&ctrl_s);
    let rhs = ybar_part + control_part + vq;
    let stderr = std_error(&diff);
    let gap = mean(&diff) - vq;
    let z_score = if gap == 0.0 { 0.0 } else { gap.abs() / stderr };
    Ok(CostCheck { lhs, rhs, ybar_part, control_part, v_min_q_integral: vq, stderr, z_score })
}

/// Mean and standard error of a − b over paired samples.
pub fn paired_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    (mean(&d), std_error(&d))
}
