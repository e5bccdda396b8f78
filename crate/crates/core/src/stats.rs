//! Monte Carlo statistics: deterministic reductions, jackknife standard
//! errors, least-squares fits and the Itô isometry check.

use crate::brownian::BrownianPath;
use crate::quad::simpson;

/// Pairwise (tree) summation; the result depends only on the order of
/// `values`, never on how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&sq) / (values.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn std_error(values: &[f64]) -> f64 {
    (variance(values) / values.len() as f64).sqrt()
}

/// Jackknife standard error from leave-one-out replicates.
pub fn jackknife_se(replicates: &[f64]) -> f64 {
    let n = replicates.len() as f64;
    let m = mean(replicates);
    let sq: Vec<f64> = replicates.iter().map(|r| (r - m) * (r - m)).collect();
    ((n - 1.0) / n * pairwise_sum(&sq)).sqrt()
}

/// Leave-one-out replicates of the unbiased variance of `values`.
pub fn variance_replicates(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let s1 = pairwise_sum(values);
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    let s2 = pairwise_sum(&sq);
    values
        .iter()
        .map(|&v| {
            let a = s1 - v;
            let b = s2 - v * v;
            (b - a * a / (n - 1.0)) / (n - 2.0)
        })
        .collect()
}

/// Jackknife standard error of the sample variance.
pub fn variance_se(values: &[f64]) -> f64 {
    jackknife_se(&variance_replicates(values))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares y ≈ intercept + slope·x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let mx = mean(x);
    let my = mean(y);
    let sxy: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let sxx: Vec<f64> = x.iter().map(|a| (a - mx) * (a - mx)).collect();
    let slope = pairwise_sum(&sxy) / pairwise_sum(&sxx);
    LinearFit { slope, intercept: my - slope * mx }
}

#[derive(Clone, Copy, Debug)]
pub struct IsometryCheck {
    /// Monte Carlo mean of (∫f1 dW)(∫f2 dW).
    pub estimate: f64,
    /// Deterministic ∫ f1 f2 ds.
    pub reference: f64,
    pub std_error: f64,
}

impl IsometryCheck {
    pub fn z_score(&self) -> f64 {
        (self.estimate - self.reference).abs() / self.std_error
    }
}

/// Compare E[(∫₀ᵗ f1 dW)(∫₀ᵗ f2 dW)] against ∫₀ᵗ f1 f2 ds, using
/// left-point Itô sums on each path.
pub fn ito_isometry_check<F1, F2>(f1: F1, f2: F2, paths: &[BrownianPath], t: f64) -> IsometryCheck
where
    F1: Fn(f64) -> f64,
    F2: Fn(f64) -> f64,
{
    assert!(!paths.is_empty(), "ensemble must be nonempty");
    let products: Vec<f64> = paths
        .iter()
        .map(|p| {
            let steps = ((t / p.dt).round() as usize).min(p.nt());
            let (mut i1, mut i2) = (0.0, 0.0);
            for (k, dw) in p.increments[..steps].iter().enumerate() {
                let s = k as f64 * p.dt;
                i1 += f1(s) * dw;
                i2 += f2(s) * dw;
            }
            i1 * i2
        })
        .collect();
    let reference = simpson(|s| f1(s) * f2(s), 0.0, t, 512);
    IsometryCheck { estimate: mean(&products), reference, std_error: std_error(&products) }
}
