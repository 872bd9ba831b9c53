//! Suite execution and result files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use hci_gibo::gp::Source;
use hci_gibo::optimizer::{run as run_optimizer, Evaluator, NoisyEvaluator, QueryEvent, UpdateRecord, Variant};
use hci_gibo::pendulum::PendulumEvaluator;
use hci_gibo::synth::{self, Toy, WithinModelObjective, WithinModelSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, PendulumSettings, PlannedRun, Suite};
use crate::error::HarnessError;

pub const RESULTS_HEADER: &str = "run_id,suite,optimizer,dim,function_seed,run_seed,real_queries,sim_queries,update_index,incumbent_value,solution_accuracy,committed_confidence";

/// One row of `results.csv`, written after every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub run_id: usize,
    pub suite: &'static str,
    pub optimizer: &'static str,
    pub dim: usize,
    pub function_seed: u64,
    pub run_seed: u64,
    pub real_queries: usize,
    pub sim_queries: usize,
    pub update_index: usize,
    /// Noise-free objective at the incumbent; the negated episode cost for
    /// the pendulum.
    pub incumbent_value: f64,
    pub solution_accuracy: Option<f64>,
    pub committed_confidence: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run: PlannedRun,
    pub initial_value: f64,
    pub initial_accuracy: Option<f64>,
    pub rows: Vec<ResultRow>,
    pub updates: Vec<UpdateRecord>,
    pub events: Vec<QueryEvent>,
    pub incumbent: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub config: ExperimentConfig,
    pub runs: Vec<RunOutput>,
}

/// The objective behind one run, shared by every optimizer and seed.
#[derive(Clone)]
pub enum Problem {
    WithinModel(Arc<WithinModelObjective>),
    Toy,
    Pendulum(PendulumSettings),
}

impl Problem {
    /// Noise-free objective value.
    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            Problem::WithinModel(o) => o.f(theta),
            Problem::Toy => synth::toy_f(theta),
            Problem::Pendulum(p) => {
                let ev = PendulumEvaluator::new(p.real, p.sim_params(), p.episode, 0.0, 0)
                    .expect("pendulum settings are validated with the config");
                -ev.cost(theta, Source::Real)
            }
        }
    }

    pub fn accuracy(&self, theta: &[f64]) -> Option<f64> {
        match self {
            Problem::WithinModel(o) => Some(synth::solution_accuracy(o.as_ref(), theta)),
            Problem::Toy => Some(synth::solution_accuracy(&Toy, theta)),
            Problem::Pendulum(_) => None,
        }
    }

    pub fn evaluator(&self, noise_std: f64, seed: u64) -> Result<Box<dyn Evaluator>, HarnessError> {
        Ok(match self {
            Problem::WithinModel(o) => {
                let (f, g) = (o.clone(), o.clone());
                Box::new(NoisyEvaluator::new(move |t| f.f(t), noise_std, seed).with_sim(move |t| g.f_sim(t)))
            }
            Problem::Toy => Box::new(NoisyEvaluator::new(synth::toy_f, noise_std, seed).with_sim(synth::toy_f_sim)),
            Problem::Pendulum(p) => Box::new(
                PendulumEvaluator::new(p.real, p.sim_params(), p.episode, noise_std, seed)
                    .map_err(|e| HarnessError::Runtime(e.to_string()))?,
            ),
        })
    }
}

/// Seed of the evaluation-noise stream. Optimizers sharing a function and
/// run seed see the same noise sequence.
pub fn noise_seed(function_seed: u64, run_seed: u64) -> u64 {
    function_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ run_seed
}

pub fn within_model_objective(cfg: &ExperimentConfig, dim: usize, seed: u64) -> hci_gibo::Result<WithinModelObjective> {
    WithinModelObjective::new(WithinModelSpec::standard(dim, seed, cfg.gap_amplitude)?)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Runtime(format!("cannot start worker pool: {e}")))
}

/// Runs every planned run on `jobs` workers. Failed runs carry an error and
/// no rows.
pub fn execute(cfg: &ExperimentConfig, jobs: usize) -> Result<SuiteOutput, HarnessError> {
    let plan = cfg.plan();
    let pool = pool(jobs)?;
    let problems: BTreeMap<(usize, u64), Result<Problem, String>> = match cfg.suite {
        Suite::WithinModel => {
            let keys: Vec<(usize, u64)> = cfg
                .dims()
                .into_iter()
                .flat_map(|d| cfg.function_seeds().into_iter().map(move |s| (d, s)))
                .collect();
            pool.install(|| {
                keys.par_iter()
                    .map(|&(d, s)| {
                        let o = within_model_objective(cfg, d, s)
                            .map(|o| Problem::WithinModel(Arc::new(o)))
                            .map_err(|e| e.to_string());
                        ((d, s), o)
                    })
                    .collect()
            })
        }
        Suite::Toy1d => [((1, 0), Ok(Problem::Toy))].into(),
        Suite::Pendulum => [((cfg.dims()[0], 0), Ok(Problem::Pendulum(cfg.pendulum.clone())))].into(),
    };
    let runs = pool.install(|| {
        plan.par_iter()
            .map(|run| match &problems[&(run.dim, run.function_seed)] {
                Ok(problem) => execute_run(cfg, run, problem),
                Err(e) => failed(run, e.clone()),
            })
            .collect()
    });
    Ok(SuiteOutput {
        config: cfg.clone(),
        runs,
    })
}

fn failed(run: &PlannedRun, error: String) -> RunOutput {
    RunOutput {
        run: *run,
        initial_value: f64::NAN,
        initial_accuracy: None,
        rows: Vec::new(),
        updates: Vec::new(),
        events: Vec::new(),
        incumbent: Vec::new(),
        error: Some(error),
    }
}

/// Executes one planned run against `problem`.
pub fn execute_run(cfg: &ExperimentConfig, run: &PlannedRun, problem: &Problem) -> RunOutput {
    match try_execute_run(cfg, run, problem) {
        Ok(out) => out,
        Err(e) => failed(run, e.to_string()),
    }
}

fn try_execute_run(cfg: &ExperimentConfig, run: &PlannedRun, problem: &Problem) -> Result<RunOutput, HarnessError> {
    let oracle = match problem {
        Problem::WithinModel(o) if cfg.uses_oracle_lipschitz() => o.lipschitz(),
        _ => 1.0,
    };
    let opt = cfg.optimizer_config(run.optimizer, run.dim, oracle, run.run_seed)?;
    let mut evaluator = problem.evaluator(cfg.noise_std(), noise_seed(run.function_seed, run.run_seed))?;
    let theta0 = cfg.theta0(run.dim);
    let (incumbent, state) =
        run_optimizer(run.optimizer, evaluator.as_mut(), &opt, &theta0).map_err(|e| HarnessError::Runtime(e.to_string()))?;

    let mut cache: Option<(Vec<f64>, f64, Option<f64>)> = None;
    let mut score = |theta: &[f64]| -> (f64, Option<f64>) {
        if let Some((t, v, a)) = &cache {
            if t == theta {
                return (*v, *a);
            }
        }
        let v = problem.value(theta);
        let a = problem.accuracy(theta);
        cache = Some((theta.to_vec(), v, a));
        (v, a)
    };
    let start = project(&theta0, opt.bounds);
    let (initial_value, initial_accuracy) = score(&start);
    let rows = state
        .events
        .iter()
        .map(|e| {
            let (value, accuracy) = score(&e.incumbent);
            ResultRow {
                run_id: run.run_id,
                suite: cfg.suite.as_str(),
                optimizer: run.optimizer.as_str(),
                dim: run.dim,
                function_seed: run.function_seed,
                run_seed: run.run_seed,
                real_queries: e.queries_real,
                sim_queries: e.queries_sim,
                update_index: e.update_index,
                incumbent_value: value,
                solution_accuracy: accuracy,
                committed_confidence: e.committed_confidence,
            }
        })
        .collect();
    Ok(RunOutput {
        run: *run,
        initial_value,
        initial_accuracy,
        rows,
        updates: state.per_update_log,
        events: state.events,
        incumbent,
        error: None,
    })
}

fn project(theta: &[f64], bounds: Option<(f64, f64)>) -> Vec<f64> {
    match bounds {
        Some((lo, hi)) => theta.iter().map(|t| t.clamp(lo, hi)).collect(),
        None => theta.to_vec(),
    }
}

impl RunOutput {
    /// Value of `metric` after `q` real queries, holding the last value
    /// between evaluations.
    pub fn value_at(&self, q: usize, metric: impl Fn(&ResultRow) -> Option<f64>, initial: Option<f64>) -> Option<f64> {
        self.rows
            .iter()
            .take_while(|r| r.real_queries <= q)
            .last()
            .map_or(initial, metric)
    }

    pub fn accuracy_at(&self, q: usize) -> Option<f64> {
        self.value_at(q, |r| r.solution_accuracy, self.initial_accuracy)
    }

    pub fn incumbent_value_at(&self, q: usize) -> Option<f64> {
        self.value_at(q, |r| Some(r.incumbent_value), Some(self.initial_value))
    }

    /// First real-query count at which solution accuracy reaches `level`.
    pub fn queries_to_accuracy(&self, level: f64) -> Option<usize> {
        if self.initial_accuracy.is_some_and(|a| a >= level) {
            return Some(0);
        }
        self.rows
            .iter()
            .find(|r| r.solution_accuracy.is_some_and(|a| a >= level))
            .map(|r| r.real_queries)
    }

    pub fn committed(&self) -> impl Iterator<Item = &UpdateRecord> {
        self.updates.iter().filter(|u| u.committed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub run_id: usize,
    pub error: String,
}

/// Aggregates for one (optimizer, dim) pair over successful runs.
#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub optimizer: &'static str,
    pub dim: usize,
    pub runs: usize,
    /// Grid of real-query counts `0..=budget_real` for the curves below.
    pub real_queries: Vec<usize>,
    pub incumbent_value_mean: Vec<f64>,
    pub incumbent_value_std: Vec<f64>,
    pub solution_accuracy_mean: Option<Vec<f64>>,
    pub solution_accuracy_std: Option<Vec<f64>>,
    pub final_incumbent_value_mean: f64,
    pub final_solution_accuracy_mean: Option<f64>,
    pub updates_mean: f64,
    pub committed_updates_mean: f64,
    /// Mean real queries over committed updates.
    pub real_queries_per_committed_update: Option<f64>,
    pub sim_queries_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub suite: &'static str,
    pub runs_planned: usize,
    pub runs_failed: usize,
    pub failures: Vec<Failure>,
    pub groups: Vec<GroupSummary>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    mean_std(&v).0
}

impl SuiteOutput {
    pub fn succeeded(&self) -> impl Iterator<Item = &RunOutput> {
        self.runs.iter().filter(|r| r.error.is_none())
    }

    pub fn rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.runs.iter().flat_map(|r| r.rows.iter())
    }

    pub fn summary(&self) -> Summary {
        let budget = self.config.budget_real;
        let mut keys: Vec<(Variant, usize)> = self.runs.iter().map(|r| (r.run.optimizer, r.run.dim)).collect();
        keys.sort();
        keys.dedup();
        let groups = keys
            .into_iter()
            .map(|(optimizer, dim)| {
                let runs: Vec<&RunOutput> = self
                    .succeeded()
                    .filter(|r| r.run.optimizer == optimizer && r.run.dim == dim)
                    .collect();
                let curve = |f: &dyn Fn(&RunOutput, usize) -> Option<f64>| -> Option<(Vec<f64>, Vec<f64>)> {
                    let mut means = Vec::with_capacity(budget + 1);
                    let mut stds = Vec::with_capacity(budget + 1);
                    for q in 0..=budget {
                        let v: Option<Vec<f64>> = runs.iter().map(|r| f(r, q)).collect();
                        let (m, s) = mean_std(&v?);
                        means.push(m);
                        stds.push(s);
                    }
                    Some((means, stds))
                };
                let (value_mean, value_std) =
                    curve(&|r, q| r.incumbent_value_at(q)).unwrap_or_default();
                let accuracy = if runs.is_empty() { None } else { curve(&|r, q| r.accuracy_at(q)) };
                let final_value = |r: &&RunOutput| r.rows.last().map_or(r.initial_value, |x| x.incumbent_value);
                let committed: Vec<f64> = runs
                    .iter()
                    .flat_map(|r| r.committed().map(|u| u.queries_real as f64))
                    .collect();
                GroupSummary {
                    optimizer: optimizer.as_str(),
                    dim,
                    runs: runs.len(),
                    real_queries: (0..=budget).collect(),
                    incumbent_value_mean: value_mean,
                    incumbent_value_std: value_std,
                    final_incumbent_value_mean: mean(runs.iter().map(final_value)),
                    final_solution_accuracy_mean: accuracy.as_ref().and_then(|(m, _)| m.last().copied()),
                    solution_accuracy_mean: accuracy.as_ref().map(|(m, _)| m.clone()),
                    solution_accuracy_std: accuracy.map(|(_, s)| s),
                    updates_mean: mean(runs.iter().map(|r| r.updates.iter().filter(|u| !u.truncated).count() as f64)),
                    committed_updates_mean: mean(runs.iter().map(|r| r.committed().count() as f64)),
                    real_queries_per_committed_update: (!committed.is_empty()).then(|| mean_std(&committed).0),
                    sim_queries_mean: mean(
                        runs.iter()
                            .map(|r| r.events.iter().filter(|e| e.source == Source::Sim).count() as f64),
                    ),
                }
            })
            .collect();
        let failures: Vec<Failure> = self
            .runs
            .iter()
            .filter_map(|r| {
                r.error.as_ref().map(|e| Failure {
                    run_id: r.run.run_id,
                    error: e.clone(),
                })
            })
            .collect();
        Summary {
            suite: self.config.suite.as_str(),
            runs_planned: self.runs.len(),
            runs_failed: failures.len(),
            failures,
            groups,
        }
    }

    pub fn results_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut rows: Vec<&ResultRow> = self.rows().collect();
        rows.sort_by_key(|r| r.run_id);
        if rows.is_empty() {
            w.write_record(RESULTS_HEADER.split(','))
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        }
        for row in rows {
            w.serialize(row).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        }
        w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub library: &'static str,
    pub library_version: &'static str,
    pub harness_version: &'static str,
    pub seeds: &'a [u64],
    pub function_seeds: Vec<u64>,
    pub runs: Vec<PlannedRun>,
    pub config: &'a ExperimentConfig,
}

pub fn manifest(cfg: &ExperimentConfig) -> Manifest<'_> {
    Manifest {
        library: "hci-gibo",
        library_version: hci_gibo::VERSION,
        harness_version: env!("CARGO_PKG_VERSION"),
        seeds: &cfg.seeds,
        function_seeds: cfg.function_seeds(),
        runs: cfg.plan(),
        config: cfg,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(format!("cannot write {}", path.display()), e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("summaries serialize to JSON");
    out.push(b'\n');
    out
}

/// Runs the suite and writes `manifest.json`, `results.csv` and
/// `summary.json` into `out_dir`. Fails only if the directory is unusable or
/// every run failed.
pub fn run_suite(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<Summary, HarnessError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::io(format!("cannot create {}", out_dir.display()), e))?;
    write(&out_dir.join("manifest.json"), &to_json(&manifest(cfg)))?;
    let output = execute(cfg, jobs)?;
    write(&out_dir.join("results.csv"), &output.results_csv()?)?;
    let summary = output.summary();
    write(&out_dir.join("summary.json"), &to_json(&summary))?;
    if summary.runs_failed == summary.runs_planned {
        let first = summary.failures.first().map_or("", |f| f.error.as_str());
        return Err(HarnessError::Runtime(format!("all {} runs failed; first error: {first}", summary.runs_planned)));
    }
    Ok(summary)
}
