//! Variance analytics and Monte Carlo identity checks.

pub mod identities;
pub mod montecarlo;
pub mod shapes;

pub use identities::{
    cost_decomposition_check, decomposition_rows, independence_rows, mean_zero_rows, paired_difference, rms_rows,
    rolling_g, v_min_q_integral, CheckRow, CostCheck, CostSample, DecompositionRow, PathAnalyzer, PathObservables,
    WindowSums,
};
pub use montecarlo::{
    monte_carlo, report_samples, report_steps, run_ensemble, run_monte_carlo, v_min_series, variance_trend, Ensemble,
    RunSpec, RunningCost, Simulator, Trend, VarianceReport,
};
pub use shapes::{g_function, g_prime, gamma_fn, n_function, v_min, DelayShapes};
