//! Experiment configuration: JSON schema, suite defaults, validation with
//! field paths, and the planned cartesian product of runs.

use std::fmt;
use std::path::Path;

use hci_gibo::acquisition::QuerySearch;
use hci_gibo::gp::{DualKernelSpec, KernelSpec, ModelKernel};
use hci_gibo::improvement::ImprovementConfig;
use hci_gibo::optimizer::{OptimizerConfig, Variant};
use hci_gibo::pendulum::{EpisodeConfig, PendulumParams, POLICY_DIM};
use hci_gibo::synth::default_lengthscale;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    WithinModel,
    Toy1d,
    Pendulum,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Suite::WithinModel => "within_model",
            Suite::Toy1d => "toy1d",
            Suite::Pendulum => "pendulum",
        }
    }
}

/// Gradient Lipschitz constant: a number, or `"oracle"` to use the value
/// estimated by the within-model generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lipschitz {
    Value(f64),
    Oracle,
}

impl Serialize for Lipschitz {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Lipschitz::Value(v) => s.serialize_f64(*v),
            Lipschitz::Oracle => s.serialize_str("oracle"),
        }
    }
}

impl<'de> Deserialize<'de> for Lipschitz {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Lipschitz::Value(v)),
            Raw::Text(t) if t == "oracle" => Ok(Lipschitz::Oracle),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "lipschitz must be a number or \"oracle\", got {t:?}"
            ))),
        }
    }
}

/// Same encoding as the optimizer's `beta`: a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beta(pub f64);

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Beta(v)),
            Raw::Text(t) if t == "inf" => Ok(Beta(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "beta must be a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

/// Overrides for the improvement test; unset fields take suite defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImprovementSettings {
    pub lipschitz: Option<Lipschitz>,
    pub step: Option<f64>,
    pub alpha: Option<f64>,
    pub normalized: Option<bool>,
}

/// Isotropic kernel overrides; unset fields take suite defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSettings {
    pub outputscale: Option<f64>,
    pub lengthscale: Option<f64>,
    pub noise_variance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumSettings {
    pub real: PendulumParams,
    /// Simulator plant; defaults to the perturbed real plant.
    pub sim: Option<PendulumParams>,
    pub episode: EpisodeConfig,
}

impl PendulumSettings {
    pub fn sim_params(&self) -> PendulumParams {
        self.sim.unwrap_or_else(|| self.real.perturbed())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub optimizers: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Problem dimensions; only the within-model suite accepts more than one.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    /// Objectives per dimension for the within-model suite.
    #[serde(default = "default_n_functions")]
    pub n_functions: usize,
    #[serde(default = "default_budget")]
    pub budget_real: usize,
    /// Standard deviation of the observation noise.
    #[serde(default)]
    pub noise_std: Option<f64>,
    /// Reality-gap amplitude relative to `f` for within-model objectives.
    #[serde(default = "default_gap_amplitude")]
    pub gap_amplitude: f64,
    #[serde(default)]
    pub improvement: ImprovementSettings,
    #[serde(default)]
    pub kernel: KernelSettings,
    /// Model of the reality gap used by `s_hci_gibo`.
    #[serde(default)]
    pub gap_kernel: KernelSettings,
    #[serde(default)]
    pub beta: Option<Beta>,
    /// Queries per update for `gibo`; defaults to the dimension.
    #[serde(default)]
    pub fixed_m: Option<usize>,
    #[serde(default)]
    pub max_updates: Option<usize>,
    #[serde(default)]
    pub max_queries_per_update: Option<usize>,
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub window: Option<f64>,
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub search: QuerySearch,
    #[serde(default = "default_true")]
    pub evaluate_incumbent_initially: bool,
    #[serde(default)]
    pub pendulum: PendulumSettings,
}

fn default_n_functions() -> usize {
    1
}
fn default_budget() -> usize {
    200
}
fn default_gap_amplitude() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}

/// One entry of the cartesian product of dims × functions × optimizers × seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlannedRun {
    pub run_id: usize,
    pub optimizer: Variant,
    pub dim: usize,
    pub function_seed: u64,
    pub run_seed: u64,
}

impl fmt::Display for PlannedRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run {:>4}  {:<10}  dim {:<3} function {:<4} seed {}",
            self.run_id,
            self.optimizer.as_str(),
            self.dim,
            self.function_seed,
            self.run_seed
        )
    }
}

fn field(path: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Validation {
        path: path.to_string(),
        message: message.into(),
    }
}

fn positive(path: &str, v: Option<f64>) -> Result<(), HarnessError> {
    match v {
        Some(x) if !(x > 0.0) || !x.is_finite() => Err(field(path, format!("must be positive, got {x}"))),
        _ => Ok(()),
    }
}

fn nonnegative(path: &str, v: Option<f64>) -> Result<(), HarnessError> {
    match v {
        Some(x) if !(x >= 0.0) || !x.is_finite() => Err(field(path, format!("must be nonnegative, got {x}"))),
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation {
                path: String::new(),
                message: format!("cannot read {}: {e}", path.display()),
            })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Validation {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.optimizers.is_empty() {
            return Err(field("optimizers", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "must not be empty"));
        }
        let dims = self.dims();
        if dims.is_empty() {
            return Err(field("dims", "must not be empty"));
        }
        if dims.contains(&0) {
            return Err(field("dims", "dimensions must be positive"));
        }
        match self.suite {
            Suite::Toy1d if dims != [1] => return Err(field("dims", "the toy1d suite is one-dimensional")),
            Suite::Pendulum if dims != [POLICY_DIM] => {
                return Err(field("dims", format!("the pendulum policy has {POLICY_DIM} parameters")))
            }
            _ => {}
        }
        if self.n_functions == 0 {
            return Err(field("n_functions", "must be positive"));
        }
        if self.budget_real == 0 {
            return Err(field("budget_real", "must be positive"));
        }
        nonnegative("noise_std", self.noise_std)?;
        nonnegative("gap_amplitude", Some(self.gap_amplitude))?;

        match self.improvement.lipschitz {
            Some(Lipschitz::Value(l)) => positive("improvement.lipschitz", Some(l))?,
            Some(Lipschitz::Oracle) if self.suite != Suite::WithinModel => {
                return Err(field(
                    "improvement.lipschitz",
                    "\"oracle\" is only available for the within_model suite",
                ))
            }
            _ => {}
        }
        positive("improvement.step", self.improvement.step)?;
        if let Some(a) = self.improvement.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(field("improvement.alpha", format!("must lie in (0, 1), got {a}")));
            }
        }
        positive("kernel.outputscale", self.kernel.outputscale)?;
        positive("kernel.lengthscale", self.kernel.lengthscale)?;
        nonnegative("kernel.noise_variance", self.kernel.noise_variance)?;
        nonnegative("gap_kernel.outputscale", self.gap_kernel.outputscale)?;
        positive("gap_kernel.lengthscale", self.gap_kernel.lengthscale)?;
        if self.gap_kernel.noise_variance.is_some() {
            return Err(field(
                "gap_kernel.noise_variance",
                "the gap kernel carries no noise; set kernel.noise_variance",
            ));
        }
        if let Some(Beta(b)) = self.beta {
            if !(b >= 0.0) {
                return Err(field("beta", format!("must be nonnegative, got {b}")));
            }
        }
        if self.fixed_m == Some(0) {
            return Err(field("fixed_m", "must be positive"));
        }
        if self.max_updates == Some(0) {
            return Err(field("max_updates", "must be positive"));
        }
        if self.max_queries_per_update == Some(0) {
            return Err(field("max_queries_per_update", "must be positive"));
        }
        positive("half_width", self.half_width)?;
        positive("window", self.window)?;
        if let Some((lo, hi)) = self.bounds {
            if !(lo < hi) {
                return Err(field("bounds", format!("[{lo}, {hi}] is empty")));
            }
        }
        if let Some(theta0) = &self.theta0 {
            if dims.iter().any(|&d| d != theta0.len()) {
                return Err(field(
                    "theta0",
                    format!("has length {} but the suite plans dims {dims:?}", theta0.len()),
                ));
            }
        }
        self.search
            .validate()
            .map_err(|e| field("search", e.to_string()))?;
        if self.suite == Suite::Pendulum {
            self.pendulum.real.validate().map_err(|e| field("pendulum.real", e.to_string()))?;
            self.pendulum
                .sim_params()
                .validate()
                .map_err(|e| field("pendulum.sim", e.to_string()))?;
            self.pendulum
                .episode
                .validate()
                .map_err(|e| field("pendulum.episode", e.to_string()))?;
        }
        for &dim in &dims {
            for &variant in &self.optimizers {
                self.optimizer_config(variant, dim, 1.0, 0)
                    .and_then(|c| c.validate().map_err(|e| field("", e.to_string())))?;
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        match (&self.dims, self.suite) {
            (Some(d), _) => d.clone(),
            (None, Suite::WithinModel) => vec![2],
            (None, Suite::Toy1d) => vec![1],
            (None, Suite::Pendulum) => vec![POLICY_DIM],
        }
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std.unwrap_or(match self.suite {
            Suite::WithinModel | Suite::Toy1d => 0.1,
            Suite::Pendulum => 0.02,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta.map(|b| b.0).unwrap_or(match self.suite {
            Suite::Pendulum => 1.0,
            _ => 5.0,
        })
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match (self.bounds, self.suite) {
            (Some(b), _) => Some(b),
            (None, Suite::Pendulum) => None,
            (None, _) => Some((0.0, 1.0)),
        }
    }

    pub fn theta0(&self, dim: usize) -> Vec<f64> {
        if let Some(t) = &self.theta0 {
            return t.clone();
        }
        match self.suite {
            Suite::WithinModel => vec![0.5; dim],
            Suite::Toy1d => vec![0.6],
            Suite::Pendulum => vec![0.0; dim],
        }
    }

    pub fn uses_oracle_lipschitz(&self) -> bool {
        match self.improvement.lipschitz {
            Some(Lipschitz::Oracle) => true,
            Some(Lipschitz::Value(_)) => false,
            None => self.suite == Suite::WithinModel,
        }
    }

    fn improvement(&self, oracle_lipschitz: f64) -> ImprovementConfig {
        let s = &self.improvement;
        let (l, step, alpha, normalized) = match self.suite {
            Suite::WithinModel => (oracle_lipschitz, 0.02, 0.9, true),
            Suite::Toy1d => (4.0 * std::f64::consts::PI.powi(2), 0.02, 0.9, false),
            Suite::Pendulum => (5.0, 0.2, 0.95, true),
        };
        ImprovementConfig {
            lipschitz: match s.lipschitz {
                Some(Lipschitz::Value(v)) => v,
                _ => l,
            },
            step: s.step.unwrap_or(step),
            alpha: s.alpha.unwrap_or(alpha),
            normalized: s.normalized.unwrap_or(normalized),
        }
    }

    fn model_kernel(&self, variant: Variant, dim: usize) -> Result<ModelKernel, HarnessError> {
        let noise = self.noise_std();
        let (scale, length, gap_scale, gap_length) = match self.suite {
            Suite::WithinModel => {
                let l = default_lengthscale(dim);
                (1.0, l, self.gap_amplitude.powi(2), l)
            }
            Suite::Toy1d => (1.0, 0.2, 0.16, 0.2),
            Suite::Pendulum => (4.0, 0.3, 0.25, 0.35),
        };
        let k = &self.kernel;
        let k_f = KernelSpec::isotropic(
            dim,
            k.outputscale.unwrap_or(scale),
            k.lengthscale.unwrap_or(length),
            k.noise_variance.unwrap_or(noise * noise),
        )
        .map_err(|e| field("kernel", e.to_string()))?;
        if variant != Variant::SHciGibo {
            return Ok(k_f.into());
        }
        let g = &self.gap_kernel;
        let k_m = KernelSpec {
            outputscale: g.outputscale.unwrap_or(gap_scale),
            lengthscales: vec![g.lengthscale.unwrap_or(gap_length); dim],
            noise_variance: 0.0,
        };
        Ok(DualKernelSpec::new(k_f, k_m)
            .map_err(|e| field("gap_kernel", e.to_string()))?
            .into())
    }

    /// Optimizer settings for one run; `oracle_lipschitz` is used when the
    /// Lipschitz constant is taken from the objective generator.
    pub fn optimizer_config(
        &self,
        variant: Variant,
        dim: usize,
        oracle_lipschitz: f64,
        seed: u64,
    ) -> Result<OptimizerConfig, HarnessError> {
        let mut cfg = OptimizerConfig::new(
            self.improvement(oracle_lipschitz),
            self.model_kernel(variant, dim)?,
            self.budget_real,
        );
        cfg.bounds = self.bounds();
        cfg.search = self.search;
        cfg.beta = self.beta();
        cfg.fixed_m = match variant {
            Variant::Gibo => Some(self.fixed_m.unwrap_or(dim)),
            _ => None,
        };
        cfg.max_queries_per_update = self.max_queries_per_update;
        if let Some(m) = self.max_updates {
            cfg.max_updates = m;
        }
        if let Some(h) = self.half_width {
            cfg.half_width = h;
        }
        if let Some(w) = self.window {
            cfg.window = w;
        }
        cfg.seed = seed;
        cfg.evaluate_incumbent_initially = self.evaluate_incumbent_initially;
        Ok(cfg)
    }

    pub fn function_seeds(&self) -> Vec<u64> {
        match self.suite {
            Suite::WithinModel => (0..self.n_functions as u64).collect(),
            _ => vec![0],
        }
    }

    /// Planned runs in `run_id` order.
    pub fn plan(&self) -> Vec<PlannedRun> {
        let mut runs = Vec::new();
        for dim in self.dims() {
            for function_seed in self.function_seeds() {
                for &optimizer in &self.optimizers {
                    for &run_seed in &self.seeds {
                        runs.push(PlannedRun {
                            run_id: runs.len(),
                            optimizer,
                            dim,
                            function_seed,
                            run_seed,
                        });
                    }
                }
            }
        }
        runs
    }
}
