//! Composite quadrature rules and small interpolation helpers.

use std::ops::{AddAssign, Mul};

/// Composite Simpson rule with `panels` panels (each panel uses its
/// midpoint), exact for cubics.
pub fn simpson<T, F>(f: F, a: f64, b: f64, panels: usize) -> T
where
    F: Fn(f64) -> T,
    T: AddAssign + Mul<f64, Output = T>,
{
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut acc = f(a) * (h / 6.0);
    for p in 0..panels {
        let x0 = a + p as f64 * h;
        acc += f(x0 + 0.5 * h) * (4.0 * h / 6.0);
        let right = if p + 1 == panels { b } else { x0 + h };
        acc += f(right) * (if p + 1 == panels { h / 6.0 } else { 2.0 * h / 6.0 });
    }
    acc
}

/// Trapezoid weights for `n + 1` equally spaced nodes with spacing `h`.
pub fn trapezoid_weight(j: usize, n: usize, h: f64) -> f64 {
    if n == 0 {
        0.0
    } else if j == 0 || j == n {
        0.5 * h
    } else {
        h
    }
}

/// Cubic Lagrange interpolation of equally spaced samples `values[i] =
/// f(i * h)`, falling back to lower order when fewer than four nodes exist.
pub fn lagrange_cubic(values: &[f64], h: f64, x: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let s = x / h;
    if n < 4 {
        let i = (s.floor().max(0.0) as usize).min(n - 2);
        let w = s - i as f64;
        return values[i] * (1.0 - w) + values[i + 1] * w;
    }
    let base = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let mut acc = 0.0;
    for a in 0..4 {
        let mut l = 1.0;
        let xa = (base + a) as f64;
        for b in 0..4 {
            if a != b {
                let xb = (base + b) as f64;
                l *= (s - xb) / (xa - xb);
            }
        }
        acc += l * values[base + a];
    }
    acc
}
