//! Deterministic Monte Carlo over seeded Brownian paths.
//!
//! Path i uses seed `base_seed ^ i`. Per-path results are collected in
//! index order and reduced with pairwise sums, so the output does not
//! depend on the number of worker threads.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::shapes::DelayShapes;
use crate::brownian::{path_seed, sample_brownian, BrownianPath};
use crate::control::{Controller, LqWeights};
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::kernels::KernelSet;
use crate::params::SystemParams;
use crate::sim::{simulate_coupled, simulate_delayed_sde, DelayedSdeModel, SimOptions, Trajectory};
use crate::stats::{jackknife_se, linear_fit, mean, pairwise_sum, std_error, variance_replicates};

/// Upper bound on the number of report times of a [`VarianceReport`].
pub const MAX_REPORT_POINTS: usize = 400;

/// Which model produces the trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Simulator {
    Coupled,
    Delayed,
}

/// Everything needed to simulate one path.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub params: SystemParams,
    pub ks: Arc<KernelSet>,
    pub grid: SpaceTimeGrid,
    pub controller: Controller,
    pub simulator: Simulator,
    /// Report every `stride`-th step (the final step is always included).
    pub stride: usize,
    delayed: Option<Arc<DelayedSdeModel>>,
}

impl RunSpec {
    pub fn new(
        params: SystemParams,
        ks: Arc<KernelSet>,
        grid: SpaceTimeGrid,
        controller: Controller,
        simulator: Simulator,
    ) -> Result<Self> {
        let delayed = match simulator {
            Simulator::Delayed => Some(Arc::new(DelayedSdeModel::new(&params, &ks, &grid)?)),
            Simulator::Coupled => None,
        };
        let stride = grid.nt.div_ceil(MAX_REPORT_POINTS).max(1);
        Ok(RunSpec { params, ks, grid, controller, simulator, stride, delayed })
    }

    pub fn simulate(&self, path: &BrownianPath) -> Result<Trajectory> {
        match &self.delayed {
            Some(model) => simulate_delayed_sde(model, &self.controller, path, &self.grid),
            None => simulate_coupled(&self.params, &self.ks, &self.controller, path, &self.grid, SimOptions::default()),
        }
    }

    pub fn report_steps(&self) -> Vec<usize> {
        report_steps(self.grid.nt, self.stride)
    }

    pub fn path(&self, base_seed: u64, index: usize) -> Result<BrownianPath> {
        sample_brownian(path_seed(base_seed, index as u64), self.grid.nt, self.grid.dt)
    }
}

pub fn report_steps(nt: usize, stride: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=nt).step_by(stride.max(1)).collect();
    if *steps.last().unwrap() != nt {
        steps.push(nt);
    }
    steps
}

/// Evaluate `f(i)` for i in 0..n_paths on `parallelism` worker threads and
/// return the results in index order. The first error (by index) wins.
pub fn run_ensemble<T, F>(n_paths: usize, parallelism: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if parallelism <= 1 {
        return (0..n_paths).map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Precondition(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..n_paths).into_par_iter().map(&f).collect())
}

/// Per-time ensemble statistics of X.
#[derive(Clone, Debug)]
pub struct VarianceReport {
    pub times: Vec<f64>,
    pub mean_x: Vec<DVector<f64>>,
    /// Trace-form variance E[(X − EX)ᵀ(X − EX)].
    pub var_x: Vec<f64>,
    pub stderr_var: Vec<f64>,
    pub v_min: Vec<f64>,
    pub n_paths: usize,
}

impl VarianceReport {
    /// Build from per-path samples laid out as `samples[path][t·n + c]`.
    pub fn from_samples(samples: &[Vec<f64>], times: Vec<f64>, n: usize, v_min: Vec<f64>) -> Self {
        let n_paths = samples.len();
        let mut mean_x = Vec::with_capacity(times.len());
        let mut var_x = Vec::with_capacity(times.len());
        let mut stderr_var = Vec::with_capacity(times.len());
        let mut col = vec![0.0; n_paths];
        let mut reps = vec![0.0; n_paths];
        for ti in 0..times.len() {
            let mut mu = DVector::zeros(n);
            let mut v = 0.0;
            reps.iter_mut().for_each(|r| *r = 0.0);
            for c in 0..n {
                for (p, s) in samples.iter().enumerate() {
                    col[p] = s[ti * n + c];
                }
                mu[c] = mean(&col);
                let r = variance_replicates(&col);
                let sq: Vec<f64> = col.iter().map(|x| (x - mu[c]) * (x - mu[c])).collect();
                v += pairwise_sum(&sq) / (n_paths as f64 - 1.0);
                for (acc, ri) in reps.iter_mut().zip(&r) {
                    *acc += ri;
                }
            }
            mean_x.push(mu);
            var_x.push(v);
            stderr_var.push(jackknife_se(&reps));
        }
        VarianceReport { times, mean_x, var_x, stderr_var, v_min, n_paths }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn mean_norm(&self) -> Vec<f64> {
        self.mean_x.iter().map(|m| m.norm()).collect()
    }
}

/// The variance floor at each report time, including t < h where it is the
/// whole noise-driven variance.
pub fn v_min_series(params: &SystemParams, ks: &KernelSet, times: &[f64]) -> Vec<f64> {
    let shapes = DelayShapes::new(params, ks);
    times.iter().map(|&t| shapes.v_min(|s| params.sigma_at(s), None, t)).collect()
}

/// X at the report steps of one trajectory, flattened.
pub fn report_samples(traj: &Trajectory, steps: &[usize]) -> Vec<f64> {
    steps.iter().flat_map(|&k| traj.x[k].iter().copied()).collect()
}

pub fn monte_carlo(spec: &RunSpec, n_paths: usize, base_seed: u64, parallelism: usize) -> Result<VarianceReport> {
    Ok(run_monte_carlo(spec, None, n_paths, base_seed, parallelism)?.report)
}

/// Running cost ∫_h^t Xᵀ Q X ds + ∫_0^{min(t, T−h)} R V_eff² ds by the
/// trapezoid rule, with the weights tabulated on the grid.
#[derive(Clone, Debug)]
pub struct RunningCost {
    /// Q(t_k) for k = m..=nt.
    q: Vec<DMatrix<f64>>,
    /// R(t_k) for k = 0..=nt−m.
    r: Vec<f64>,
    m: usize,
    dt: f64,
}

impl RunningCost {
    pub fn new(weights: &LqWeights, n: usize, grid: &SpaceTimeGrid) -> Result<Self> {
        weights.validate(n)?;
        let m = grid.delay_steps;
        Ok(RunningCost {
            q: (m..=grid.nt).map(|k| weights.q_at(grid.time(k))).collect(),
            r: (0..=grid.nt - m).map(|k| weights.r_at(grid.time(k))).collect(),
            m,
            dt: grid.dt,
        })
    }

    /// Cumulative cost at each of `steps` (ascending).
    pub fn series(&self, traj: &Trajectory, steps: &[usize]) -> Vec<f64> {
        let (m, dt) = (self.m, self.dt);
        let state = |k: usize| {
            let x = &traj.x[k];
            x.dot(&(&self.q[k - m] * x))
        };
        let control = |k: usize| self.r[k] * traj.v_eff[k] * traj.v_eff[k];
        let mut out = Vec::with_capacity(steps.len());
        let mut acc = 0.0;
        let mut k = 0;
        for &target in steps {
            while k < target {
                if k >= m {
                    acc += 0.5 * dt * (state(k) + state(k + 1));
                }
                if k < self.r.len() - 1 {
                    acc += 0.5 * dt * (control(k) + control(k + 1));
                }
                k += 1;
            }
            out.push(acc);
        }
        out
    }
}

/// A Monte Carlo run with the raw per-path samples kept for further fits.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub report: VarianceReport,
    /// `samples[path][t·n + c]` at the report times.
    pub samples: Vec<Vec<f64>>,
    /// Mean running cost at the report times, when weights were given.
    pub cost_running: Option<Vec<f64>>,
    /// Total cost of each path, when weights were given.
    pub path_costs: Option<Vec<f64>>,
}

impl Ensemble {
    pub fn mean_cost(&self) -> Option<(f64, f64)> {
        self.path_costs.as_ref().map(|c| (mean(c), std_error(c)))
    }

    /// Slope of var_X over report times ≥ `t_from`, with its jackknife error.
    pub fn variance_trend(&self, t_from: f64) -> Trend {
        variance_trend(&self.samples, &self.report.times, self.report.mean_x.first().map_or(1, |m| m.len()), t_from)
    }

    /// Least-squares fit of log‖mean X‖ on report times ≥ `t_from`.
    pub fn decay_rate(&self, t_from: f64) -> f64 {
        let (t, y): (Vec<f64>, Vec<f64>) = self
            .report
            .times
            .iter()
            .zip(self.report.mean_norm())
            .filter(|(t, m)| **t >= t_from - 1e-12 && *m > 0.0)
            .map(|(t, m)| (*t, m.ln()))
            .unzip();
        if t.len() < 2 {
            return f64::NAN;
        }
        linear_fit(&t, &y).slope
    }

    /// Report times t ≥ `t_from` where var_X < v_min − z·stderr.
    pub fn bound_violations(&self, t_from: f64, z: f64) -> usize {
        let r = &self.report;
        (0..r.len()).filter(|&i| r.times[i] >= t_from - 1e-12 && r.var_x[i] < r.v_min[i] - z * r.stderr_var[i]).count()
    }

    /// Mean of var_X over report times in [t_from, ∞).
    pub fn average_variance(&self, t_from: f64) -> f64 {
        let v: Vec<f64> = (0..self.report.len())
            .filter(|&i| self.report.times[i] >= t_from - 1e-12)
            .map(|i| self.report.var_x[i])
            .collect();
        mean(&v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Trend {
    pub slope: f64,
    pub stderr: f64,
}

/// Least-squares slope of the trace variance against time on t ≥ `t_from`.
/// The slope is linear in the per-time variances, so its leave-one-out
/// replicates are the same combination of theirs.
pub fn variance_trend(samples: &[Vec<f64>], times: &[f64], n: usize, t_from: f64) -> Trend {
    let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= t_from - 1e-12).collect();
    if idx.len() < 2 || samples.len() < 3 {
        return Trend { slope: f64::NAN, stderr: f64::NAN };
    }
    let ts: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
    let tm = mean(&ts);
    let sxx = pairwise_sum(&ts.iter().map(|t| (t - tm) * (t - tm)).collect::<Vec<_>>());
    let n_paths = samples.len();
    let mut slope = 0.0;
    let mut reps = vec![0.0; n_paths];
    let mut col = vec![0.0; n_paths];
    for (&i, &t) in idx.iter().zip(&ts) {
        let w = (t - tm) / sxx;
        for c in 0..n {
            for (p, s) in samples.iter().enumerate() {
                col[p] = s[i * n + c];
            }
            slope += w * crate::stats::variance(&col);
            for (acc, r) in reps.iter_mut().zip(variance_replicates(&col)) {
                *acc += w * r;
            }
        }
    }
    Trend { slope, stderr: jackknife_se(&reps) }
}

/// Run `n_paths` simulations and aggregate them; with `cost` the running
/// cost is tracked as well.
pub fn run_monte_carlo(
    spec: &RunSpec,
    cost: Option<&RunningCost>,
    n_paths: usize,
    base_seed: u64,
    parallelism: usize,
) -> Result<Ensemble> {
    if n_paths < 2 {
        return Err(Error::Precondition(format!("need at least 2 paths, got {n_paths}")));
    }
    let steps = spec.report_steps();
    let per_path = run_ensemble(n_paths, parallelism, |i| {
        let path = spec.path(base_seed, i)?;
        let traj = spec.simulate(&path)?;
        Ok((report_samples(&traj, &steps), cost.map(|c| c.series(&traj, &steps))))
    })?;
    let (samples, costs): (Vec<Vec<f64>>, Vec<Option<Vec<f64>>>) = per_path.into_iter().unzip();
    let times: Vec<f64> = steps.iter().map(|&k| spec.grid.time(k)).collect();
    let v_min = v_min_series(&spec.params, &spec.ks, &times);
    let report = VarianceReport::from_samples(&samples, times, spec.params.n(), v_min);
    let (cost_running, path_costs) = match cost {
        Some(_) => {
            let costs: Vec<Vec<f64>> = costs.into_iter().map(Option::unwrap).collect();
            let running = (0..steps.len()).map(|t| mean(&costs.iter().map(|c| c[t]).collect::<Vec<_>>())).collect();
            let totals = costs.iter().map(|c| *c.last().unwrap()).collect();
            (Some(running), Some(totals))
        }
        None => (None, None),
    };
    Ok(Ensemble { report, samples, cost_running, path_costs })
}
