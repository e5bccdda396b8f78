//! Monte Carlo statistics against closed forms and independent sums.

use std::sync::Arc;

use pdesde::analysis::{monte_carlo, v_min, RunSpec, Simulator, VarianceReport};
use pdesde::brownian::{path_seed, sample_brownian};
use pdesde::control::Controller;
use pdesde::grid::make_grid;
use pdesde::kernels::solve_kernels_default;
use pdesde::params::SystemParams;

fn open_loop_report(params: &SystemParams, nx: usize, paths: usize, seed: u64) -> VarianceReport {
    let grid = make_grid(params, nx).unwrap();
    let ks = Arc::new(solve_kernels_default(params, nx).unwrap());
    let spec = RunSpec::new(params.clone(), ks, grid, Controller::OpenLoop, Simulator::Coupled).unwrap();
    monte_carlo(&spec, paths, seed, 1).unwrap()
}

/// Sample variance and the standard error of that variance.
fn variance_with_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (m2 * n / (n - 1.0), ((m4 - m2 * m2) / n).sqrt())
}

/// The floor V_min(t) is the variance of the noise that entered during the
/// last delay window, pushed through e^{Au}(1 + I(u)). Sample that stochastic
/// integral directly, with I built by a trapezoid rule of its own.
#[test]
fn v_min_is_the_variance_of_the_window_noise() {
    let params = SystemParams::fig1();
    let nx = 100;
    let grid = make_grid(&params, nx).unwrap();
    let ks = solve_kernels_default(&params, nx).unwrap();
    let (a, b, sigma, mu) = (params.a[(0, 0)], params.b[0], 0.6, params.mu);
    let h = params.delay();
    let t = 2.0;

    let fine = 4000;
    let du = h / fine as f64;
    let integrand = |s: f64| (-a * s).exp() * b * ks.gamma_beta_at(mu * s)[0];
    let mut i_table = vec![0.0; fine + 1];
    for k in 1..=fine {
        let (s0, s1) = ((k - 1) as f64 * du, k as f64 * du);
        i_table[k] = i_table[k - 1] + 0.5 * du * (integrand(s0) + integrand(s1));
    }
    let weight = |u: f64| {
        let idx = ((u / du).round() as usize).min(fine);
        (a * u).exp() * (1.0 + i_table[idx])
    };

    let dt = grid.dt;
    let k_end = (t / dt).round() as usize;
    let k_start = k_end - (h / dt).round() as usize;
    let samples: Vec<f64> = (0..10_000u64)
        .map(|i| {
            let p = sample_brownian(path_seed(101, i), k_end, dt).unwrap();
            (k_start..k_end).map(|k| weight(t - (k as f64 + 0.5) * dt) * sigma * p.increments[k]).sum()
        })
        .collect();
    let (var, se) = variance_with_stderr(&samples);
    let floor = v_min(&params, &ks, None, t);
    let z = (var - floor).abs() / se;
    assert!(z <= 5.0, "MC variance {var:.5} ± {se:.5} vs V_min {floor:.5} (z = {z:.2})");
}

/// Decoupled open loop: X is an Ornstein–Uhlenbeck process with known
/// mean and variance.
#[test]
fn decoupled_open_loop_matches_closed_form() {
    let params = SystemParams::decoupled_scalar();
    let (a, sigma, x0) = (params.a[(0, 0)], 0.6, params.x0[0]);
    let rep = open_loop_report(&params, 40, 4000, 5);
    for (k, &t) in rep.times.iter().enumerate().filter(|(k, _)| k % 40 == 39) {
        let var = sigma * sigma * ((2.0 * a * t).exp() - 1.0) / (2.0 * a);
        let z = (rep.var_x[k] - var).abs() / rep.stderr_var[k];
        assert!(z <= 5.0, "t = {t}: var {} vs {var} (z = {z:.2})", rep.var_x[k]);
        let mean = x0 * (a * t).exp();
        let se_mean = (var / rep.n_paths as f64).sqrt();
        assert!((rep.mean_x[k][0] - mean).abs() <= 5.0 * se_mean, "t = {t}: mean {}", rep.mean_x[k][0]);
    }
}

#[test]
fn stderr_shrinks_like_inverse_root_of_paths() {
    let params = SystemParams::decoupled_scalar();
    let small = open_loop_report(&params, 20, 1000, 9);
    let large = open_loop_report(&params, 20, 2000, 9);
    let ratios: Vec<f64> = (1..small.len()).map(|k| large.stderr_var[k] / small.stderr_var[k]).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.1, "mean stderr ratio {mean:.3}");
}

#[test]
fn ensemble_is_bitwise_reproducible() {
    let params = SystemParams::fig1();
    let a = open_loop_report(&params, 20, 50, 3);
    let b = open_loop_report(&params, 20, 50, 3);
    assert_eq!(a.var_x, b.var_x);
    assert_eq!(a.stderr_var, b.stderr_var);
}
