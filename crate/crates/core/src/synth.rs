//! Benchmark objectives: functions drawn from a GP prior, their biased
//! simulator counterparts, the 1-D toy pair, and solution accuracy.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gp::{cholesky_with_jitter, KernelSpec};
use crate::sobol::sobol;

/// Number of prior draws defining a within-model objective.
pub const ANCHORS: usize = 1000;
/// Extra Sobol points in the brute-force reference set.
pub const REFERENCE_POINTS: usize = 4096;
/// Safety factor on the estimated gradient Lipschitz constant.
pub const LIPSCHITZ_MARGIN: f64 = 1.1;

/// Objective with a known reference range for solution accuracy.
pub trait Objective {
    fn value(&self, theta: &[f64]) -> f64;
    /// Minimum and maximum of the objective over its reference set.
    fn reference_range(&self) -> (f64, f64);
}

/// Objective value affinely rescaled so the reference range maps to `[0, 1]`.
pub fn solution_accuracy(objective: &dyn Objective, theta: &[f64]) -> f64 {
    rescale(objective.value(theta), objective.reference_range())
}

fn rescale(value: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi - lo <= 0.0 {
        return 1.0;
    }
    (value - lo) / (hi - lo)
}

/// Default lengthscale per dimension: `0.1·√d` clipped to `[0.1, 0.5]`.
pub fn default_lengthscale(dim: usize) -> f64 {
    (0.1 * (dim as f64).sqrt()).clamp(0.1, 0.5)
}

/// Everything needed to rebuild a within-model objective exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WithinModelSpec {
    pub dim: usize,
    pub seed: u64,
    pub kernel_f: KernelSpec,
    pub kernel_gap: KernelSpec,
}

impl WithinModelSpec {
    /// Unit outputscale, default lengthscale, and a gap with `gap_amplitude`
    /// times the amplitude of `f`.
    pub fn standard(dim: usize, seed: u64, gap_amplitude: f64) -> Result<Self> {
        let lengthscale = default_lengthscale(dim);
        Ok(Self {
            dim,
            seed,
            kernel_f: KernelSpec::isotropic(dim, 1.0, lengthscale, 0.0)?,
            kernel_gap: KernelSpec {
                outputscale: gap_amplitude * gap_amplitude,
                lengthscales: vec![lengthscale; dim],
                noise_variance: 0.0,
            },
        })
    }
}

/// GP posterior mean through a prior draw at fixed anchors.
#[derive(Debug, Clone)]
struct Interpolant {
    kernel: KernelSpec,
    weights: DVector<f64>,
    values: Vec<f64>,
}

impl Interpolant {
    fn draw(anchors: &[Vec<f64>], kernel: &KernelSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = anchors.len();
        if kernel.outputscale == 0.0 {
            return Ok(Self {
                kernel: kernel.clone(),
                weights: DVector::zeros(n),
                values: vec![0.0; n],
            });
        }
        let gram = DMatrix::from_fn(n, n, |i, j| kernel.eval(&anchors[i], &anchors[j]));
        let (lower, _) = cholesky_with_jitter(&gram)?;
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let weights = lower
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| invalid("singular Cholesky factor"))?;
        let values = (&gram * &weights).iter().copied().collect();
        Ok(Self {
            kernel: kernel.clone(),
            weights,
            values,
        })
    }

    fn value(&self, anchors: &[Vec<f64>], theta: &[f64]) -> f64 {
        anchors
            .iter()
            .zip(self.weights.iter())
            .map(|(a, w)| w * self.kernel.eval(theta, a))
            .sum()
    }

    fn gradient(&self, anchors: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        for (a, w) in anchors.iter().zip(self.weights.iter()) {
            let k = w * self.kernel.eval(theta, a);
            for (j, o) in out.iter_mut().enumerate() {
                let l2 = self.kernel.lengthscales[j].powi(2);
                *o -= k * (theta[j] - a[j]) / l2;
            }
        }
        out
    }

    fn hessian(&self, anchors: &[Vec<f64>], theta: &[f64]) -> DMatrix<f64> {
        let d = theta.len();
        let mut out = DMatrix::zeros(d, d);
        let inv_l2: Vec<f64> = self.kernel.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
        let mut r = vec![0.0; d];
        for (a, w) in anchors.iter().zip(self.weights.iter()) {
            let k = w * self.kernel.eval(theta, a);
            for j in 0..d {
                r[j] = (theta[j] - a[j]) * inv_l2[j];
            }
            for i in 0..d {
                for j in 0..d {
                    out[(i, j)] += k * r[i] * r[j];
                }
                out[(i, i)] -= k * inv_l2[i];
            }
        }
        out
    }
}

/// A function drawn from the GP prior plus an independent additive gap.
///
/// `f` is the noise-free posterior mean through a joint draw at 1000 Sobol
/// anchors and `f_sim = f + f_gap`. The gap draw uses a separate ChaCha
/// stream of the same seed.
#[derive(Debug, Clone)]
pub struct WithinModelObjective {
    spec: WithinModelSpec,
    anchors: Vec<Vec<f64>>,
    f: Interpolant,
    gap: Interpolant,
    range: (f64, f64),
    lipschitz: f64,
}

impl WithinModelObjective {
    pub fn new(spec: WithinModelSpec) -> Result<Self> {
        spec.kernel_f.validate()?;
        if spec.kernel_f.dim() != spec.dim || spec.kernel_gap.lengthscales.len() != spec.dim {
            return Err(invalid("kernel dimensions do not match dim"));
        }
        if !(spec.kernel_gap.outputscale >= 0.0) {
            return Err(invalid("gap outputscale must be nonnegative"));
        }
        let mut anchors = sobol(ANCHORS + REFERENCE_POINTS, spec.dim, None)?;
        let reference = anchors.split_off(ANCHORS);

        let stream = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(s);
            rng
        };
        let f = Interpolant::draw(&anchors, &spec.kernel_f, &mut stream(0))?;
        let gap = Interpolant::draw(&anchors, &spec.kernel_gap, &mut stream(1))?;

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut curvature: f64 = 0.0;
        for (i, theta) in anchors.iter().chain(&reference).enumerate() {
            let v = if i < ANCHORS {
                f.values[i]
            } else {
                f.value(&anchors, theta)
            };
            lo = lo.min(v);
            hi = hi.max(v);
            let eig = SymmetricEigen::new(f.hessian(&anchors, theta)).eigenvalues;
            curvature = eig.iter().fold(curvature, |m, e| m.max(e.abs()));
        }
        Ok(Self {
            spec,
            anchors,
            f,
            gap,
            range: (lo, hi),
            lipschitz: LIPSCHITZ_MARGIN * curvature,
        })
    }

    pub fn spec(&self) -> &WithinModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    /// Values of `f` at the anchors.
    pub fn values_f(&self) -> &[f64] {
        &self.f.values
    }

    pub fn values_gap(&self) -> &[f64] {
        &self.gap.values
    }

    pub fn f(&self, theta: &[f64]) -> f64 {
        self.f.value(&self.anchors, theta)
    }

    pub fn gap(&self, theta: &[f64]) -> f64 {
        if self.spec.kernel_gap.outputscale == 0.0 {
            return 0.0;
        }
        self.gap.value(&self.anchors, theta)
    }

    pub fn f_sim(&self, theta: &[f64]) -> f64 {
        self.f(theta) + self.gap(theta)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.f.gradient(&self.anchors, theta)
    }

    pub fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        self.f.hessian(&self.anchors, theta)
    }

    /// Largest Hessian spectral norm over the reference set, with a safety
    /// margin.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

impl Objective for WithinModelObjective {
    fn value(&self, theta: &[f64]) -> f64 {
        self.f(theta)
    }

    fn reference_range(&self) -> (f64, f64) {
        self.range
    }
}

/// Optimum of the toy objective.
pub const TOY_OPTIMUM: f64 = 0.25;
/// Observation noise variance of the toy problem.
pub const TOY_NOISE_VARIANCE: f64 = 0.01;

/// `sin(2πθ)`.
pub fn toy_f(theta: &[f64]) -> f64 {
    (2.0 * PI * theta[0]).sin()
}

/// `sin(2πθ) + 0.4·cos(2πθ)`.
pub fn toy_f_sim(theta: &[f64]) -> f64 {
    toy_f(theta) + 0.4 * (2.0 * PI * theta[0]).cos()
}

pub fn toy_pair() -> (fn(&[f64]) -> f64, fn(&[f64]) -> f64) {
    (toy_f, toy_f_sim)
}

/// The toy objective on `[0, 1]`, rescaled from `[−1, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Toy;

impl Objective for Toy {
    fn value(&self, theta: &[f64]) -> f64 {
        toy_f(theta)
    }

    fn reference_range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn toy_values() {
        assert_relative_eq!(toy_f(&[0.25]), 1.0, epsilon = 1e-15);
        assert_relative_eq!(toy_f_sim(&[0.0]), 0.4, epsilon = 1e-15);
        assert_relative_eq!(toy_f(&[0.6]), -0.587_785_252_292_473, epsilon = 1e-12);
        assert_relative_eq!(solution_accuracy(&Toy, &[0.6]), 0.2061, epsilon = 1e-4);
        assert_relative_eq!(solution_accuracy(&Toy, &[0.25]), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn lengthscale_schedule() {
        assert_eq!(default_lengthscale(1), 0.1);
        assert_relative_eq!(default_lengthscale(4), 0.2);
        assert_eq!(default_lengthscale(52), 0.5);
    }

    #[test]
    fn constant_objective_has_unit_accuracy() {
        assert_eq!(rescale(3.0, (2.0, 2.0)), 1.0);
    }
}
