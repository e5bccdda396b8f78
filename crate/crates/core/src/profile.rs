//! Scalar profile functions used for the spatial couplings, the diffusion
//! components and the PDE initial data.
//!
//! A profile is either a constant or a table of `(abscissa, value)` pairs
//! interpolated linearly and clamped outside the table range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant(f64),
    Table(Vec<[f64; 2]>),
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Constant(0.0)
    }
}

impl Profile {
    pub fn zero() -> Self {
        Profile::Constant(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Table(points) => {
                let first = points[0];
                let last = points[points.len() - 1];
                if x <= first[0] {
                    return first[1];
                }
                if x >= last[0] {
                    return last[1];
                }
                // first index whose abscissa exceeds x
                let hi = points.partition_point(|p| p[0] <= x);
                let [x0, y0] = points[hi - 1];
                let [x1, y1] = points[hi];
                if x1 == x0 {
                    return y1;
                }
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// Largest absolute value the profile takes.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Profile::Constant(c) => c.abs(),
            Profile::Table(points) => points.iter().fold(0.0, |m, p| f64::max(m, p[1].abs())),
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        self.sup_norm() == 0.0
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        match self {
            Profile::Constant(c) if !c.is_finite() => {
                Err(Error::InvalidParams(format!("{name}: constant is not finite")))
            }
            Profile::Constant(_) => Ok(()),
            Profile::Table(points) => {
                if points.is_empty() {
                    return Err(Error::InvalidParams(format!("{name}: empty table")));
                }
                if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
                    return Err(Error::InvalidParams(format!("{name}: non-finite table entry")));
                }
                if points.windows(2).any(|w| w[1][0] < w[0][0]) {
                    return Err(Error::InvalidParams(format!("{name}: table abscissae must be non-decreasing")));
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_interpolates_and_clamps() {
        let p = Profile::Table(vec![[0.0, 1.0], [1.0, 3.0], [2.0, 3.0]]);
        assert_eq!(p.eval(-1.0), 1.0);
        assert_eq!(p.eval(0.5), 2.0);
        assert_eq!(p.eval(1.5), 3.0);
        assert_eq!(p.eval(9.0), 3.0);
        assert_eq!(p.eval(1.0), 3.0);
    }

    #[test]
    fn json_shape() {
        let p: Profile = serde_json::from_str(r#"{"constant": 0.3}"#).unwrap();
        assert_eq!(p, Profile::Constant(0.3));
        let p: Profile = serde_json::from_str(r#"{"table": [[0, 1], [1, 2]]}"#).unwrap();
        assert_eq!(p.eval(0.25), 1.25);
    }

    #[test]
    fn rejects_unsorted_table() {
        let p = Profile::Table(vec![[1.0, 0.0], [0.0, 1.0]]);
        assert!(p.validate("eta").is_err());
        assert!(Profile::Table(vec![]).validate("eta").is_err());
    }
}
