//! Deterministically seeded sample paths of a scalar Wiener process.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    pub dt: f64,
    /// ΔW_k over [t_k, t_{k+1}].
    pub increments: Vec<f64>,
    /// W(t_k), with `cumulative[0] = 0`.
    pub cumulative: Vec<f64>,
}

impl BrownianPath {
    pub fn from_increments(seed: u64, dt: f64, increments: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(increments.len() + 1);
        cumulative.push(0.0);
        let mut w = 0.0;
        for &dw in &increments {
            w += dw;
            cumulative.push(w);
        }
        BrownianPath { seed, dt, increments, cumulative }
    }

    pub fn nt(&self) -> usize {
        self.increments.len()
    }

    /// Sum consecutive increments in blocks of `factor`; the result is the
    /// same Brownian motion observed on a coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.nt().is_multiple_of(factor) {
            return Err(Error::Precondition(format!("cannot coarsen {} steps by {factor}", self.nt())));
        }
        let incs = self.increments.chunks(factor).map(|c| c.iter().sum()).collect();
        Ok(Self::from_increments(self.seed, self.dt * factor as f64, incs))
    }

    /// Keep the first `keep` increments and replace the rest with those of
    /// `other`. Used to check that nothing recorded up to step `keep`
    /// depends on later noise.
    pub fn splice(&self, keep: usize, other: &BrownianPath) -> Self {
        let mut incs = self.increments.clone();
        for (k, slot) in incs.iter_mut().enumerate().skip(keep) {
            *slot = other.increments[k];
        }
        Self::from_increments(self.seed, self.dt, incs)
    }
}

/// Seed for path `index` of an ensemble keyed by `base_seed`.
pub fn path_seed(base_seed: u64, index: u64) -> u64 {
    base_seed ^ index
}

pub fn sample_brownian(seed: u64, nt: usize, dt: f64) -> Result<BrownianPath> {
    if nt == 0 || !(dt > 0.0) {
        return Err(Error::Precondition(format!("need nt >= 1 and dt > 0, got nt = {nt}, dt = {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = dt.sqrt();
    let increments = (0..nt)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
        .collect();
    Ok(BrownianPath::from_increments(seed, dt, increments))
}

pub fn sample_ensemble(base_seed: u64, n_paths: usize, nt: usize, dt: f64) -> Result<Vec<BrownianPath>> {
    (0..n_paths as u64).map(|i| sample_brownian(path_seed(base_seed, i), nt, dt)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let a = sample_brownian(42, 100, 0.01).unwrap();
        let b = sample_brownian(42, 100, 0.01).unwrap();
        assert_eq!(a, b);
        let c = sample_brownian(43, 100, 0.01).unwrap();
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn cumulative_matches_increments() {
        let p = sample_brownian(1, 50, 0.1).unwrap();
        assert_eq!(p.cumulative.len(), 51);
        assert_eq!(p.cumulative[0], 0.0);
        for k in 0..50 {
            // exact: cumulative is built by the same additions
            assert_eq!(p.cumulative[k] + p.increments[k], p.cumulative[k + 1]);
        }
    }

    #[test]
    fn coarsen_preserves_endpoint() {
        let p = sample_brownian(9, 64, 1.0 / 64.0).unwrap();
        let c = p.coarsen(4).unwrap();
        assert_eq!(c.nt(), 16);
        assert!((c.cumulative[16] - p.cumulative[64]).abs() < 1e-14);
        assert!(p.coarsen(5).is_err());
    }

    #[test]
    fn rejects_empty() {
        assert!(sample_brownian(0, 0, 0.1).is_err());
        assert!(sample_brownian(0, 10, 0.0).is_err());
    }
}
