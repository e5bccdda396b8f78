//! JSON scenario files.
//!
//! Every object rejects unknown keys. The shape is published as
//! `schema/scenario.schema.json` at the repository root.

use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::analysis::Simulator;
use crate::control::LqWeights;
use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::profile::Profile;

/// Plain-data mirror of [`SystemParams`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub lambda: f64,
    pub mu: f64,
    pub eta_plus: Profile,
    pub eta_minus: Profile,
    pub q: f64,
    pub rho: f64,
    /// Row-major n×n.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub m: Vec<f64>,
    pub sigma: Vec<Profile>,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub u0: Profile,
    #[serde(default)]
    pub v0: Profile,
    pub horizon: f64,
}

impl ParamsConfig {
    pub fn to_params(&self) -> Result<SystemParams> {
        let n = self.a.len();
        if n == 0 || self.a.iter().any(|r| r.len() != n) {
            return Err(Error::Config("a must be a nonempty square matrix".into()));
        }
        for (name, len) in
            [("b", self.b.len()), ("m", self.m.len()), ("x0", self.x0.len()), ("sigma", self.sigma.len())]
        {
            if len != n {
                return Err(Error::Config(format!("{name} must have {n} entries, got {len}")));
            }
        }
        let p = SystemParams {
            lambda: self.lambda,
            mu: self.mu,
            eta_plus: self.eta_plus.clone(),
            eta_minus: self.eta_minus.clone(),
            q: self.q,
            rho: self.rho,
            a: DMatrix::from_fn(n, n, |i, j| self.a[i][j]),
            b: DVector::from_vec(self.b.clone()),
            m: RowDVector::from_vec(self.m.clone()),
            sigma: self.sigma.clone(),
            x0: DVector::from_vec(self.x0.clone()),
            u0: self.u0.clone(),
            v0: self.v0.clone(),
            horizon: self.horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_params(p: &SystemParams) -> Self {
        ParamsConfig {
            lambda: p.lambda,
            mu: p.mu,
            eta_plus: p.eta_plus.clone(),
            eta_minus: p.eta_minus.clone(),
            q: p.q,
            rho: p.rho,
            a: p.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: p.b.iter().copied().collect(),
            m: p.m.iter().copied().collect(),
            sigma: p.sigma.clone(),
            x0: p.x0.iter().copied().collect(),
            u0: p.u0.clone(),
            v0: p.v0.clone(),
            horizon: p.horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// γ_β(0); zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_beta_0: Option<Vec<f64>>,
}

fn default_tol() -> f64 {
    crate::kernels::DEFAULT_TOL
}

fn default_max_iter() -> usize {
    crate::kernels::DEFAULT_MAX_ITER
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { tol: default_tol(), max_iter: default_max_iter(), gamma_beta_0: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    OpenLoop,
    StabilizingFeedback { poles: Vec<f64> },
    LqOptimal { weights: LqWeights },
    Scripted { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub n_paths: usize,
    pub base_seed: u64,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default = "coupled")]
    pub simulator: Simulator,
}

fn one() -> usize {
    1
}

fn coupled() -> Simulator {
    Simulator::Coupled
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Falls back to `$PDESDE_OUT_DIR`, then `./out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    #[serde(default = "yes")]
    pub trajectory: bool,
    #[serde(default)]
    pub fields: bool,
    #[serde(default = "yes")]
    pub report: bool,
    #[serde(default = "yes")]
    pub summary: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: None, trajectory: true, fields: false, report: true, summary: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub params: ParamsConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub kernels: KernelConfig,
    pub controller: ControllerConfig,
    pub montecarlo: MonteCarloConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

impl ScenarioConfig {
    /// The reference scalar scenario with the predictor feedback at −1.
    pub fn fig1() -> Self {
        ScenarioConfig {
            params: ParamsConfig::from_params(&SystemParams::fig1()),
            grid: GridConfig { nx: 200 },
            kernels: KernelConfig::default(),
            controller: ControllerConfig::StabilizingFeedback { poles: vec![-1.0] },
            montecarlo: MonteCarloConfig {
                n_paths: 10_000,
                base_seed: 7,
                parallelism: 1,
                simulator: Simulator::Coupled,
            },
            outputs: OutputConfig::default(),
        }
    }

    /// The reference scenario with every coupling removed, so all kernels vanish.
    pub fn decoupled() -> Self {
        let mut c = Self::fig1();
        c.params = ParamsConfig::from_params(&SystemParams::decoupled_scalar());
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "fig1" => Ok(Self::fig1()),
            "decoupled" => Ok(Self::decoupled()),
            _ => Err(Error::Config(format!("unknown preset {name:?} (known: fig1, decoupled)"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ScenarioConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.params.to_params()?;
        if self.grid.nx < 2 {
            return Err(Error::Config("grid.nx must be >= 2".into()));
        }
        if !(self.kernels.tol > 0.0) || self.kernels.max_iter == 0 {
            return Err(Error::Config("kernels.tol must be positive and max_iter nonzero".into()));
        }
        if let Some(g) = &self.kernels.gamma_beta_0 {
            if g.len() != p.n() {
                return Err(Error::Config(format!("kernels.gamma_beta_0 must have {} entries", p.n())));
            }
        }
        match &self.controller {
            ControllerConfig::StabilizingFeedback { poles } if poles.len() != p.n() => {
                return Err(Error::Config(format!("controller.poles must have {} entries", p.n())));
            }
            ControllerConfig::LqOptimal { weights } => weights.validate(p.n())?,
            _ => {}
        }
        if self.montecarlo.n_paths < 2 || self.montecarlo.parallelism == 0 {
            return Err(Error::Config("montecarlo.n_paths must be >= 2 and parallelism >= 1".into()));
        }
        Ok(())
    }

    pub fn system_params(&self) -> Result<SystemParams> {
        self.params.to_params()
    }

    pub fn gamma_beta_0(&self, n: usize) -> RowDVector<f64> {
        match &self.kernels.gamma_beta_0 {
            Some(g) => RowDVector::from_vec(g.clone()),
            None => RowDVector::zeros(n),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fig1_preset_values() {
        let p = ScenarioConfig::fig1().system_params().unwrap();
        assert_eq!(p, SystemParams::fig1());
        assert_eq!((p.a[(0, 0)], p.b[0], p.x0[0], p.mu, p.lambda), (0.6, 1.0, 2.0, 2.0, 1.0));
        assert_eq!((p.m[0], p.rho, p.q), (1.0, 1.0, 0.25));
        assert_eq!(p.sigma[0], Profile::Constant(0.6));
        assert_eq!((p.eta_plus.clone(), p.eta_minus.clone()), (Profile::Constant(0.3), Profile::Constant(0.3)));
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut v: serde_json::Value = serde_json::from_str(&ScenarioConfig::fig1().to_json().unwrap()).unwrap();
        v["grid"]["ny"] = 3.into();
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&ScenarioConfig::fig1().to_json().unwrap()).unwrap();
        v["extra"] = 1.into();
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let mut c = ScenarioConfig::fig1();
        c.params.b = vec![1.0, 2.0];
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::fig1();
        c.controller = ControllerConfig::StabilizingFeedback { poles: vec![-1.0, -2.0] };
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::fig1();
        c.params.q = 5.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn controller_tags() {
        let j = serde_json::to_string(&ControllerConfig::StabilizingFeedback { poles: vec![-1.0] }).unwrap();
        assert_eq!(j, r#"{"kind":"stabilizing_feedback","poles":[-1.0]}"#);
        let c: ControllerConfig = serde_json::from_str(r#"{"kind":"open_loop"}"#).unwrap();
        assert_eq!(c, ControllerConfig::OpenLoop);
    }

    fn profile() -> impl Strategy<Value = Profile> {
        prop_oneof![
            (-2.0f64..2.0).prop_map(Profile::Constant),
            proptest::collection::vec((0.0f64..1.0, -1.0f64..1.0), 1..5).prop_map(|mut v| {
                v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                Profile::Table(v.into_iter().map(|(x, y)| [x, y]).collect())
            }),
        ]
    }

    proptest! {
        #[test]
        fn json_round_trip(
            lambda in 0.1f64..5.0,
            mu in 0.5f64..5.0,
            q in 0.05f64..0.9,
            rho in -1.0f64..1.0,
            a in -2.0f64..2.0,
            eta in profile(),
            sigma in profile(),
            nx in 2usize..500,
            seed in any::<u64>(),
            pole in -5.0f64..-0.1,
            lq in any::<bool>(),
        ) {
            let mut c = ScenarioConfig::fig1();
            c.params.lambda = lambda;
            c.params.mu = mu;
            c.params.q = q;
            c.params.rho = rho;
            c.params.a = vec![vec![a]];
            c.params.eta_plus = eta.clone();
            c.params.eta_minus = eta;
            c.params.sigma = vec![sigma];
            c.params.horizon = 2.0 / mu + 1.0;
            c.grid.nx = nx;
            c.montecarlo.base_seed = seed;
            c.controller = if lq {
                ControllerConfig::LqOptimal { weights: LqWeights::constant(&DMatrix::from_element(1, 1, 1.0), 0.1) }
            } else {
                ControllerConfig::StabilizingFeedback { poles: vec![pole] }
            };
            let text = c.to_json().unwrap();
            let back = ScenarioConfig::from_json(&text).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
