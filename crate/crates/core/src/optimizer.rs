//! The optimizer loops: fixed-M GIBO, HCI-GIBO and simulator-aided
//! S-HCI-GIBO.
//!
//! Each update gathers queries at the gradient-information argmax around the
//! incumbent until the stopping rule fires, then takes a gradient step. The
//! stopping rule is checked before every query, so an update whose data
//! already suffices takes no new queries at all.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::acquisition::{GradientInformation, QueryDomain, QuerySearch};
use crate::error::{invalid, Error, Result};
use crate::gp::{Dataset, GradientBelief, LabeledSample, ModelKernel, Source};
use crate::improvement::{improvement_confidence, update_step, ImprovementConfig};

/// Noisy probes of the real system and, optionally, a simulator.
pub trait Evaluator {
    fn eval_real(&mut self, theta: &[f64]) -> f64;
    /// `None` when no simulator is available; such calls are not counted.
    fn eval_sim(&mut self, theta: &[f64]) -> Option<f64>;
    fn has_sim(&self) -> bool;
    /// Number of probe invocations per source so far.
    fn queries(&self, source: Source) -> usize;
}

type Objective = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Evaluator built from closures with additive Gaussian noise.
///
/// Real and simulator noise come from separate ChaCha streams of the same
/// seed, so the real noise sequence does not depend on how many simulator
/// queries a run makes.
pub struct NoisyEvaluator {
    real: Objective,
    sim: Option<Objective>,
    noise_std: f64,
    real_rng: ChaCha8Rng,
    sim_rng: ChaCha8Rng,
    real_calls: usize,
    sim_calls: usize,
}

impl NoisyEvaluator {
    pub fn new(
        real: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        noise_std: f64,
        seed: u64,
    ) -> Self {
        let mut real_rng = ChaCha8Rng::seed_from_u64(seed);
        real_rng.set_stream(0);
        let mut sim_rng = ChaCha8Rng::seed_from_u64(seed);
        sim_rng.set_stream(1);
        Self {
            real: Box::new(real),
            sim: None,
            noise_std,
            real_rng,
            sim_rng,
            real_calls: 0,
            sim_calls: 0,
        }
    }

    pub fn with_sim(mut self, sim: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.sim = Some(Box::new(sim));
        self
    }

    fn noise(std: f64, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    }
}

impl Evaluator for NoisyEvaluator {
    fn eval_real(&mut self, theta: &[f64]) -> f64 {
        self.real_calls += 1;
        (self.real)(theta) + Self::noise(self.noise_std, &mut self.real_rng)
    }

    fn eval_sim(&mut self, theta: &[f64]) -> Option<f64> {
        let sim = self.sim.as_ref()?;
        self.sim_calls += 1;
        Some(sim(theta) + Self::noise(self.noise_std, &mut self.sim_rng))
    }

    fn has_sim(&self) -> bool {
        self.sim.is_some()
    }

    fn queries(&self, source: Source) -> usize {
        match source {
            Source::Real => self.real_calls,
            Source::Sim => self.sim_calls,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Gibo,
    HciGibo,
    SHciGibo,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gibo => "gibo",
            Variant::HciGibo => "hci_gibo",
            Variant::SHciGibo => "s_hci_gibo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub improvement: ImprovementConfig,
    pub kernel: ModelKernel,
    /// Half-width of the query box in mean lengthscales.
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    /// Global box `[low, high]^d` for queries and incumbents.
    #[serde(default)]
    pub bounds: Option<(f64, f64)>,
    #[serde(default)]
    pub search: QuerySearch,
    /// Threshold on the change of consecutive simulator utilities; `"inf"`
    /// in JSON switches after the first simulator query.
    #[serde(
        default = "default_beta",
        serialize_with = "ser_beta",
        deserialize_with = "de_beta"
    )]
    pub beta: f64,
    /// Queries per update for the fixed-M baseline.
    #[serde(default)]
    pub fixed_m: Option<usize>,
    pub budget_real: usize,
    /// Per-source query cap within one update; defaults to `3d`.
    #[serde(default)]
    pub max_queries_per_update: Option<usize>,
    #[serde(default = "default_max_updates")]
    pub max_updates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub evaluate_incumbent_initially: bool,
    /// Only samples within this many mean lengthscales of the incumbent
    /// enter the model.
    #[serde(default = "default_window")]
    pub window: f64,
}

fn default_half_width() -> f64 {
    2.0
}
fn default_beta() -> f64 {
    5.0
}
fn default_max_updates() -> usize {
    10_000
}
fn default_true() -> bool {
    true
}
fn default_window() -> f64 {
    3.0
}

fn ser_beta<S: Serializer>(beta: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if beta.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*beta)
    }
}

fn de_beta<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Beta {
        Number(f64),
        Text(String),
    }
    match Beta::deserialize(d)? {
        Beta::Number(b) => Ok(b),
        Beta::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Beta::Text(t) => Err(serde::de::Error::custom(format!(
            "beta must be a number or \"inf\", got {t:?}"
        ))),
    }
}

impl OptimizerConfig {
    pub fn new(improvement: ImprovementConfig, kernel: impl Into<ModelKernel>, budget_real: usize) -> Self {
        Self {
            improvement,
            kernel: kernel.into(),
            half_width: default_half_width(),
            bounds: None,
            search: QuerySearch::default(),
            beta: default_beta(),
            fixed_m: None,
            budget_real,
            max_queries_per_update: None,
            max_updates: default_max_updates(),
            seed: 0,
            evaluate_incumbent_initially: true,
            window: default_window(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.improvement.validate()?;
        self.kernel.validate()?;
        self.search.validate()?;
        if !(self.half_width > 0.0) || !self.half_width.is_finite() {
            return Err(invalid("half_width must be positive"));
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo < hi) {
                return Err(invalid(format!("bounds [{lo}, {hi}] are empty")));
            }
        }
        if !(self.beta >= 0.0) {
            return Err(invalid(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if self.fixed_m == Some(0) {
            return Err(invalid("fixed_m must be positive"));
        }
        if self.budget_real == 0 {
            return Err(invalid("budget_real must be positive"));
        }
        if self.max_queries_per_update == Some(0) {
            return Err(invalid("max_queries_per_update must be positive"));
        }
        if self.max_updates == 0 {
            return Err(invalid("max_updates must be positive"));
        }
        if !(self.window > 0.0) {
            return Err(invalid("window must be positive"));
        }
        Ok(())
    }

    pub fn query_cap(&self) -> usize {
        self.max_queries_per_update
            .unwrap_or(3 * self.kernel.dim())
    }
}

/// One evaluation made by the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEvent {
    pub source: Source,
    pub theta: Vec<f64>,
    pub y: f64,
    /// Gradient information of the query when it was chosen; `None` for the
    /// initial evaluation.
    pub utility: Option<f64>,
    pub queries_real: usize,
    pub queries_sim: usize,
    /// Updates completed after this event was processed.
    pub update_index: usize,
    /// Incumbent after this event was processed.
    pub incumbent: Vec<f64>,
    /// Confidence of the latest committed update as of this event.
    pub committed_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub index: usize,
    pub queries_real: usize,
    pub queries_sim: usize,
    /// Improvement confidence of the belief the update acted on.
    pub confidence: f64,
    /// The stopping rule fired (as opposed to hitting the query cap).
    pub committed: bool,
    /// The budget ran out before the update could step.
    pub truncated: bool,
    /// Simulator queries made before switching to the real system.
    pub switched_after: Option<usize>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub incumbent: Vec<f64>,
    pub data: Dataset,
    pub updates_done: usize,
    pub queries_real: usize,
    pub queries_sim: usize,
    pub active_source: Source,
    pub per_update_log: Vec<UpdateRecord>,
    pub events: Vec<QueryEvent>,
    /// The run stopped inside an update because the budget ran out.
    pub truncated: bool,
}

impl OptimizerState {
    pub fn new(theta0: Vec<f64>) -> Result<Self> {
        let data = Dataset::new(theta0.len())?;
        Ok(Self {
            incumbent: theta0,
            data,
            updates_done: 0,
            queries_real: 0,
            queries_sim: 0,
            active_source: Source::Real,
            per_update_log: Vec::new(),
            events: Vec::new(),
            truncated: false,
        })
    }

    fn last_committed_confidence(&self) -> Option<f64> {
        self.per_update_log
            .iter()
            .rev()
            .find(|r| r.committed)
            .map(|r| r.confidence)
    }
}

pub fn terminate(state: &OptimizerState, config: &OptimizerConfig) -> bool {
    state.queries_real >= config.budget_real || state.updates_done >= config.max_updates
}

/// Fixed-M GIBO: `config.fixed_m` real queries per update.
pub fn run_gibo(
    evaluator: &mut dyn Evaluator,
    config: &OptimizerConfig,
    theta0: &[f64],
) -> Result<(Vec<f64>, OptimizerState)> {
    run(Variant::Gibo, evaluator, config, theta0)
}

/// HCI-GIBO: real queries until the improvement confidence reaches α.
pub fn run_hci_gibo(
    evaluator: &mut dyn Evaluator,
    config: &OptimizerConfig,
    theta0: &[f64],
) -> Result<(Vec<f64>, OptimizerState)> {
    run(Variant::HciGibo, evaluator, config, theta0)
}

/// S-HCI-GIBO: each update starts on the simulator and moves to the real
/// system once consecutive simulator utilities differ by at most β.
pub fn run_s_hci_gibo(
    evaluator: &mut dyn Evaluator,
    config: &OptimizerConfig,
    theta0: &[f64],
) -> Result<(Vec<f64>, OptimizerState)> {
    run(Variant::SHciGibo, evaluator, config, theta0)
}

pub fn run(
    variant: Variant,
    evaluator: &mut dyn Evaluator,
    config: &OptimizerConfig,
    theta0: &[f64],
) -> Result<(Vec<f64>, OptimizerState)> {
    config.validate()?;
    let kernel = &config.kernel;
    let d = kernel.dim();
    if theta0.len() != d {
        return Err(invalid(format!(
            "theta0 has dimension {}, kernel has {d}",
            theta0.len()
        )));
    }
    let fixed_m = match variant {
        Variant::Gibo => Some(
            config
                .fixed_m
                .ok_or_else(|| Error::Config("gibo requires fixed_m".into()))?,
        ),
        _ => None,
    };
    match variant {
        Variant::SHciGibo if !kernel.is_dual() => {
            return Err(Error::Config("s_hci_gibo requires a dual kernel".into()))
        }
        Variant::SHciGibo if !evaluator.has_sim() => {
            return Err(Error::Config("s_hci_gibo requires a simulator probe".into()))
        }
        Variant::Gibo | Variant::HciGibo if kernel.is_dual() => {
            return Err(Error::Config(format!(
                "{} requires a single-source kernel",
                variant.as_str()
            )))
        }
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let radius = config.window * kernel.mean_lengthscale();
    let cap = config.query_cap();
    let mut state = OptimizerState::new(project(theta0, config.bounds))?;

    if config.evaluate_incumbent_initially {
        let theta = state.incumbent.clone();
        query(&mut state, evaluator, theta, Source::Real, None)?;
    }

    while !terminate(&state, config) {
        let start = state.incumbent.clone();
        let mut record = UpdateRecord {
            index: state.updates_done,
            queries_real: 0,
            queries_sim: 0,
            confidence: 0.0,
            committed: false,
            truncated: false,
            switched_after: None,
            start: start.clone(),
            end: start.clone(),
        };
        state.active_source = if variant == Variant::SHciGibo {
            Source::Sim
        } else {
            Source::Real
        };
        let mut prev_sim_utility: Option<f64> = None;

        let belief = loop {
            let local = state.data.within(&state.incumbent, radius);
            let gi = GradientInformation::new(kernel, &local, &state.incumbent)?;
            let belief = restrict_to_bounds(gi.belief()?, &state.incumbent, config.bounds);
            let confidence = improvement_confidence(&belief, &config.improvement)?;
            record.confidence = confidence;
            let stop = match fixed_m {
                Some(m) => record.queries_real >= m,
                None => confidence >= config.improvement.alpha,
            };
            if stop {
                record.committed = true;
                break belief;
            }
            if fixed_m.is_none() && record.queries_real >= cap {
                break belief;
            }

            let domain = QueryDomain::new(state.incumbent.clone(), config.half_width, config.bounds)?;
            let mut choice = None;
            if state.active_source == Source::Sim {
                let sim = gi.maximize(&domain, Source::Sim, &config.search, &mut rng)?;
                let small_gap = prev_sim_utility
                    .is_some_and(|prev| crate::acquisition::sim_to_real_gap(prev, sim.value).abs() <= config.beta);
                if small_gap || record.queries_sim >= cap {
                    state.active_source = Source::Real;
                    record.switched_after = Some(record.queries_sim);
                } else {
                    prev_sim_utility = Some(sim.value);
                    choice = Some(sim);
                }
            }
            if state.active_source == Source::Real && state.queries_real >= config.budget_real {
                record.truncated = true;
                state.truncated = true;
                state.per_update_log.push(record);
                return Ok((state.incumbent.clone(), state));
            }
            let acq = match choice {
                Some(acq) => acq,
                None => gi.maximize(&domain, Source::Real, &config.search, &mut rng)?,
            };
            match acq.source {
                Source::Real => record.queries_real += 1,
                Source::Sim => record.queries_sim += 1,
            }
            query(&mut state, evaluator, acq.theta, acq.source, Some(acq.value))?;
        };

        state.incumbent = project(
            &update_step(&state.incumbent, &belief, &config.improvement),
            config.bounds,
        );
        record.end = state.incumbent.clone();
        state.updates_done += 1;
        state.per_update_log.push(record);
        let committed_confidence = state.last_committed_confidence();
        if let Some(last) = state.events.last_mut() {
            last.update_index = state.updates_done;
            last.incumbent = state.incumbent.clone();
            last.committed_confidence = committed_confidence;
        }
    }
    Ok((state.incumbent.clone(), state))
}

fn query(
    state: &mut OptimizerState,
    evaluator: &mut dyn Evaluator,
    theta: Vec<f64>,
    source: Source,
    utility: Option<f64>,
) -> Result<()> {
    let y = match source {
        Source::Real => {
            state.queries_real += 1;
            evaluator.eval_real(&theta)
        }
        Source::Sim => {
            state.queries_sim += 1;
            evaluator
                .eval_sim(&theta)
                .ok_or_else(|| Error::Config("simulator probe is unavailable".into()))?
        }
    };
    if !y.is_finite() {
        return Err(invalid(format!("evaluator returned non-finite value {y}")));
    }
    state.data.push(LabeledSample::new(theta.clone(), y, source))?;
    state.events.push(QueryEvent {
        source,
        theta,
        y,
        utility,
        queries_real: state.queries_real,
        queries_sim: state.queries_sim,
        update_index: state.updates_done,
        incumbent: state.incumbent.clone(),
        committed_confidence: state.last_committed_confidence(),
    });
    Ok(())
}

/// Drops the mean components that point out of the box at active bounds, so
/// the step and its confidence follow the projected gradient.
fn restrict_to_bounds(mut belief: GradientBelief, theta: &[f64], bounds: Option<(f64, f64)>) -> GradientBelief {
    if let Some((lo, hi)) = bounds {
        for (g, &t) in belief.mean.iter_mut().zip(theta) {
            if (t <= lo && *g < 0.0) || (t >= hi && *g > 0.0) {
                *g = 0.0;
            }
        }
    }
    belief
}

fn project(theta: &[f64], bounds: Option<(f64, f64)>) -> Vec<f64> {
    match bounds {
        Some((lo, hi)) => theta.iter().map(|t| t.clamp(lo, hi)).collect(),
        None => theta.to_vec(),
    }
}
