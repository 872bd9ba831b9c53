//! Gaussian-process machinery: squared-exponential kernels with first and
//! mixed second derivatives, the simulator/real composite kernel, and exact
//! zeroth-order and gradient posteriors.
//!
//! The prior mean is zero everywhere, so the gradient of the prior mean
//! vanishes as well. Gram matrices are rebuilt for every [`Posterior::fit`];
//! datasets in this regime hold at most a few hundred points.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Diagonal jitter rungs, as multiples of the mean Gram diagonal, tried in
/// order until the Cholesky factorization succeeds.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Squared-exponential kernel `ν² exp(-½ Σ_j (a_j - b_j)² / λ_j²)` with ARD
/// lengthscales and an observation-noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// Signal variance ν².
    pub outputscale: f64,
    /// Per-dimension lengthscales λ_j.
    pub lengthscales: Vec<f64>,
    /// Observation-noise variance σ².
    #[serde(default)]
    pub noise_variance: f64,
}

impl KernelSpec {
    pub fn new(outputscale: f64, lengthscales: Vec<f64>, noise_variance: f64) -> Result<Self> {
        let spec = Self {
            outputscale,
            lengthscales,
            noise_variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same lengthscale in every dimension.
    pub fn isotropic(
        dim: usize,
        outputscale: f64,
        lengthscale: f64,
        noise_variance: f64,
    ) -> Result<Self> {
        Self::new(outputscale, vec![lengthscale; dim], noise_variance)
    }

    pub fn validate(&self) -> Result<()> {
        self.check(false)
    }

    /// The gap kernel of a [`DualKernelSpec`] may carry a zero outputscale,
    /// which models a perfect simulator.
    fn check(&self, allow_zero_outputscale: bool) -> Result<()> {
        let scale_ok = if allow_zero_outputscale {
            self.outputscale >= 0.0
        } else {
            self.outputscale > 0.0
        };
        if !scale_ok || !self.outputscale.is_finite() {
            return Err(invalid(format!(
                "outputscale must be positive and finite, got {}",
                self.outputscale
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(invalid("lengthscales must have at least one entry"));
        }
        if let Some((j, l)) = self
            .lengthscales
            .iter()
            .enumerate()
            .find(|(_, l)| !(**l > 0.0))
        {
            return Err(invalid(format!("lengthscales[{j}] must be positive, got {l}")));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(invalid(format!(
                "noise_variance must be nonnegative, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn mean_lengthscale(&self) -> f64 {
        self.lengthscales.iter().sum::<f64>() / self.lengthscales.len() as f64
    }

    /// Trace of the prior gradient covariance, `Σ_j ν² / λ_j²`.
    pub fn gradient_variance_trace(&self) -> f64 {
        self.lengthscales
            .iter()
            .map(|l| self.outputscale / (l * l))
            .sum()
    }

    fn check_pair(&self, a: &[f64], b: &[f64]) -> Result<()> {
        let d = self.dim();
        if a.len() != d || b.len() != d {
            return Err(invalid(format!(
                "kernel of dimension {d} evaluated on vectors of length {} and {}",
                a.len(),
                b.len()
            )));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.dim());
        let sq: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let r = (x - y) / l;
                r * r
            })
            .sum();
        self.outputscale * (-0.5 * sq).exp()
    }

    /// `out += ∂k(a, b)/∂a`.
    #[inline]
    pub(crate) fn add_grad1(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let k = self.eval(a, b);
        if k == 0.0 {
            return;
        }
        for (((o, x), y), l) in out.iter_mut().zip(a).zip(b).zip(&self.lengthscales) {
            *o -= (x - y) / (l * l) * k;
        }
    }

    /// `out += ∂²k(a, b)/∂a∂b`.
    pub(crate) fn add_hess12(&self, a: &[f64], b: &[f64], out: &mut DMatrix<f64>) {
        let k = self.eval(a, b);
        if k == 0.0 {
            return;
        }
        let r: Vec<f64> = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| (x - y) / (l * l))
            .collect();
        for i in 0..r.len() {
            for j in 0..r.len() {
                let diag = if i == j {
                    1.0 / (self.lengthscales[i] * self.lengthscales[i])
                } else {
                    0.0
                };
                out[(i, j)] += (diag - r[i] * r[j]) * k;
            }
        }
    }
}

/// Kernel value `k(a, b)`.
pub fn se_kernel(a: &[f64], b: &[f64], spec: &KernelSpec) -> Result<f64> {
    spec.check_pair(a, b)?;
    Ok(spec.eval(a, b))
}

/// Gradient of the kernel with respect to its first argument.
pub fn se_kernel_grad1(a: &[f64], b: &[f64], spec: &KernelSpec) -> Result<DVector<f64>> {
    spec.check_pair(a, b)?;
    let mut out = vec![0.0; spec.dim()];
    spec.add_grad1(a, b, &mut out);
    Ok(DVector::from_vec(out))
}

/// Mixed second derivative `∂²k/∂a∂b`, the covariance between the gradient
/// at `a` and the gradient at `b`.
pub fn se_kernel_hess12(a: &[f64], b: &[f64], spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.check_pair(a, b)?;
    let d = spec.dim();
    let mut out = DMatrix::zeros(d, d);
    spec.add_hess12(a, b, &mut out);
    Ok(out)
}

/// Information source of an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Sim,
    Real,
}

impl Source {
    /// The binary indicator: 0 for the simulator, 1 for the real system.
    pub fn flag(self) -> u8 {
        match self {
            Source::Sim => 0,
            Source::Real => 1,
        }
    }

    pub fn from_flag(flag: u8) -> Result<Self> {
        match flag {
            0 => Ok(Source::Sim),
            1 => Ok(Source::Real),
            other => Err(invalid(format!("source flag must be 0 or 1, got {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Sim => "sim",
            Source::Real => "real",
        }
    }
}

impl TryFrom<u8> for Source {
    type Error = Error;

    fn try_from(flag: u8) -> Result<Self> {
        Source::from_flag(flag)
    }
}

/// Composite kernel over `(θ, source)`:
/// `k((θ₁, s₁), (θ₂, s₂)) = K_f(θ₁, θ₂) + s₁·s₂·K_m(θ₁, θ₂)`.
///
/// Noise belongs to the information source. Real observations use
/// `k_f.noise_variance`; simulator observations use `sim_noise_variance`
/// when set and the same value otherwise. `k_m.noise_variance` is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualKernelSpec {
    pub k_f: KernelSpec,
    pub k_m: KernelSpec,
    #[serde(default)]
    pub sim_noise_variance: Option<f64>,
}

impl DualKernelSpec {
    pub fn new(k_f: KernelSpec, k_m: KernelSpec) -> Result<Self> {
        let spec = Self {
            k_f,
            k_m,
            sim_noise_variance: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.k_f.check(false)?;
        self.k_m.check(true)?;
        if self.k_f.dim() != self.k_m.dim() {
            return Err(invalid(format!(
                "k_f has dimension {} but k_m has dimension {}",
                self.k_f.dim(),
                self.k_m.dim()
            )));
        }
        if let Some(v) = self.sim_noise_variance {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("sim_noise_variance must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn noise_variance(&self, source: Source) -> f64 {
        match source {
            Source::Real => self.k_f.noise_variance,
            Source::Sim => self.sim_noise_variance.unwrap_or(self.k_f.noise_variance),
        }
    }
}

/// Composite kernel value between two `(θ, source)` inputs.
pub fn dual_kernel(
    x1: (&[f64], Source),
    x2: (&[f64], Source),
    spec: &DualKernelSpec,
) -> Result<f64> {
    spec.k_f.check_pair(x1.0, x2.0)?;
    Ok(ModelKernel::Dual(spec.clone()).covariance(x1.0, x1.1, x2.0, x2.1))
}

/// The prior used by a model: either one real-system kernel or the
/// simulator/real composite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKernel {
    Single(KernelSpec),
    Dual(DualKernelSpec),
}

impl From<KernelSpec> for ModelKernel {
    fn from(spec: KernelSpec) -> Self {
        ModelKernel::Single(spec)
    }
}

impl From<DualKernelSpec> for ModelKernel {
    fn from(spec: DualKernelSpec) -> Self {
        ModelKernel::Dual(spec)
    }
}

impl ModelKernel {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelKernel::Single(k) => k.validate(),
            ModelKernel::Dual(k) => k.validate(),
        }
    }

    pub fn dim(&self) -> usize {
        self.real_kernel().dim()
    }

    pub fn is_dual(&self) -> bool {
        matches!(self, ModelKernel::Dual(_))
    }

    /// The kernel shared by both sources (`K_f`), or the only kernel.
    pub fn real_kernel(&self) -> &KernelSpec {
        match self {
            ModelKernel::Single(k) => k,
            ModelKernel::Dual(k) => &k.k_f,
        }
    }

    pub fn mean_lengthscale(&self) -> f64 {
        self.real_kernel().mean_lengthscale()
    }

    /// Single-source models treat every observation as real.
    pub fn effective_source(&self, source: Source) -> Source {
        match self {
            ModelKernel::Single(_) => Source::Real,
            ModelKernel::Dual(_) => source,
        }
    }

    pub fn noise_variance(&self, source: Source) -> f64 {
        match self {
            ModelKernel::Single(k) => k.noise_variance,
            ModelKernel::Dual(k) => k.noise_variance(source),
        }
    }

    #[inline]
    pub(crate) fn covariance(&self, a: &[f64], sa: Source, b: &[f64], sb: Source) -> f64 {
        match self {
            ModelKernel::Single(k) => k.eval(a, b),
            ModelKernel::Dual(k) => {
                let base = k.k_f.eval(a, b);
                if sa == Source::Real && sb == Source::Real {
                    base + k.k_m.eval(a, b)
                } else {
                    base
                }
            }
        }
    }

    /// `out += ∂/∂star k((star, real), (x, source))`.
    #[inline]
    pub(crate) fn add_gradient_cross(&self, star: &[f64], x: &[f64], source: Source, out: &mut [f64]) {
        match self {
            ModelKernel::Single(k) => k.add_grad1(star, x, out),
            ModelKernel::Dual(k) => {
                k.k_f.add_grad1(star, x, out);
                if source == Source::Real {
                    k.k_m.add_grad1(star, x, out);
                }
            }
        }
    }

    /// Prior covariance of the gradient at `(star, real)`.
    pub(crate) fn prior_gradient_covariance(&self, star: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        match self {
            ModelKernel::Single(k) => k.add_hess12(star, star, &mut out),
            ModelKernel::Dual(k) => {
                k.k_f.add_hess12(star, star, &mut out);
                k.k_m.add_hess12(star, star, &mut out);
            }
        }
        out
    }
}

/// One evaluation of an information source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub theta: Vec<f64>,
    pub y: f64,
    pub source: Source,
}

impl LabeledSample {
    pub fn new(theta: Vec<f64>, y: f64, source: Source) -> Self {
        Self { theta, y, source }
    }

    pub fn real(theta: Vec<f64>, y: f64) -> Self {
        Self::new(theta, y, Source::Real)
    }

    pub fn sim(theta: Vec<f64>, y: f64) -> Self {
        Self::new(theta, y, Source::Sim)
    }
}

/// Insertion-ordered collection of samples sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dataset dimension must be positive"));
        }
        Ok(Self {
            dim,
            samples: Vec::new(),
        })
    }

    pub fn from_samples(dim: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        let mut data = Self::new(dim)?;
        for s in samples {
            data.push(s)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, sample: LabeledSample) -> Result<()> {
        if sample.theta.len() != self.dim {
            return Err(invalid(format!(
                "sample of dimension {} pushed into dataset of dimension {}",
                sample.theta.len(),
                self.dim
            )));
        }
        if !sample.y.is_finite() || sample.theta.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sample contains non-finite values"));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledSample> {
        self.samples.iter()
    }

    pub fn count(&self, source: Source) -> usize {
        self.samples.iter().filter(|s| s.source == source).count()
    }

    /// Samples whose θ lies within `radius` (Euclidean) of `center`, in
    /// insertion order.
    pub fn within(&self, center: &[f64], radius: f64) -> Dataset {
        let r2 = radius * radius;
        let samples = self
            .samples
            .iter()
            .filter(|s| {
                s.theta
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    <= r2
            })
            .cloned()
            .collect();
        Dataset {
            dim: self.dim,
            samples,
        }
    }
}

/// Gaussian belief over the objective gradient at the incumbent.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GradientBelief {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.covariance
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Positive semidefinite up to `-1e-9 · trace` and symmetric up to
    /// `1e-10` relative.
    pub fn check_psd(&self) -> Result<()> {
        let d = self.dim();
        if self.covariance.nrows() != d || self.covariance.ncols() != d {
            return Err(invalid("gradient covariance must be d×d"));
        }
        let scale = self.covariance.amax().max(f64::MIN_POSITIVE);
        let asym = (&self.covariance - self.covariance.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(invalid(format!("gradient covariance not symmetric ({asym:e})")));
        }
        let slack = 1e-9 * self.trace().abs().max(f64::MIN_POSITIVE);
        let min = self.min_eigenvalue();
        if min < -slack {
            return Err(invalid(format!(
                "gradient covariance not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
        Ok(())
    }
}

/// Cholesky factor of `matrix + jitter·I`, climbing [`JITTER_LADDER`] until
/// the factorization succeeds. Returns the lower factor and the absolute
/// jitter that was added.
pub fn cholesky_with_jitter(matrix: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = matrix.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    let mean_diagonal = matrix.trace() / n as f64;
    for rung in JITTER_LADDER {
        let jitter = rung * mean_diagonal;
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            let lower = chol.unpack();
            if lower.iter().all(|v| v.is_finite()) {
                return Ok((lower, jitter));
            }
        }
    }
    Err(Error::Factorization {
        ladder: JITTER_LADDER.iter().map(|r| r * mean_diagonal).collect(),
        mean_diagonal,
    })
}

/// Exact GP posterior conditioned on a dataset.
#[derive(Debug, Clone)]
pub struct Posterior {
    kernel: ModelKernel,
    inputs: Vec<Vec<f64>>,
    sources: Vec<Source>,
    lower: DMatrix<f64>,
    weights: DVector<f64>,
    jitter: f64,
}

impl Posterior {
    pub fn fit(kernel: &ModelKernel, data: &Dataset) -> Result<Self> {
        if data.dim() != kernel.dim() {
            return Err(invalid(format!(
                "dataset dimension {} does not match kernel dimension {}",
                data.dim(),
                kernel.dim()
            )));
        }
        let n = data.len();
        let inputs: Vec<Vec<f64>> = data.iter().map(|s| s.theta.clone()).collect();
        let sources: Vec<Source> = data
            .iter()
            .map(|s| kernel.effective_source(s.source))
            .collect();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.covariance(&inputs[i], sources[i], &inputs[j], sources[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
            gram[(i, i)] += kernel.noise_variance(sources[i]);
        }
        let (lower, jitter) = cholesky_with_jitter(&gram)?;
        let y = DVector::from_iterator(n, data.iter().map(|s| s.y));
        let weights = if n == 0 {
            y
        } else {
            let z = lower
                .solve_lower_triangular(&y)
                .ok_or_else(|| invalid("singular Cholesky factor"))?;
            lower
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or_else(|| invalid("singular Cholesky factor"))?
        };
        Ok(Self {
            kernel: kernel.clone(),
            inputs,
            sources,
            lower,
            weights,
            jitter,
        })
    }

    pub fn kernel(&self) -> &ModelKernel {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Absolute jitter added to the Gram diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub(crate) fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Prior covariances between `(theta, source)` and every conditioning input.
    pub fn cross_covariance(&self, theta: &[f64], source: Source) -> DVector<f64> {
        let source = self.kernel.effective_source(source);
        DVector::from_iterator(
            self.len(),
            self.inputs
                .iter()
                .zip(&self.sources)
                .map(|(x, s)| self.kernel.covariance(theta, source, x, *s)),
        )
    }

    /// `L⁻¹ v` for the lower Cholesky factor `L`.
    pub(crate) fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.is_empty() {
            return DVector::zeros(0);
        }
        self.lower
            .solve_lower_triangular(v)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// Posterior mean and latent variance at `(theta, source)`.
    pub fn predict(&self, theta: &[f64], source: Source) -> Result<(f64, f64)> {
        self.check_point(theta)?;
        let source = self.kernel.effective_source(source);
        let prior = self.kernel.covariance(theta, source, theta, source);
        if self.is_empty() {
            return Ok((0.0, prior));
        }
        let k = self.cross_covariance(theta, source);
        let mean = k.dot(&self.weights);
        let w = self.whiten(&k);
        Ok((mean, (prior - w.norm_squared()).max(0.0)))
    }

    /// `∇K(star, X̄)`: column `i` is the covariance between the gradient at
    /// `(star, real)` and observation `i`.
    pub fn gradient_cross(&self, star: &[f64]) -> DMatrix<f64> {
        let d = self.kernel.dim();
        let mut g = DMatrix::zeros(d, self.len());
        let mut col = vec![0.0; d];
        for (i, (x, s)) in self.inputs.iter().zip(&self.sources).enumerate() {
            col.iter_mut().for_each(|v| *v = 0.0);
            self.kernel.add_gradient_cross(star, x, *s, &mut col);
            g.set_column(i, &DVector::from_column_slice(&col));
        }
        g
    }

    /// Gradient belief at `(star, real)`.
    pub fn gradient_belief(&self, star: &[f64]) -> Result<GradientBelief> {
        self.check_point(star)?;
        let prior = self.kernel.prior_gradient_covariance(star);
        if self.is_empty() {
            return Ok(GradientBelief {
                mean: DVector::zeros(self.kernel.dim()),
                covariance: prior,
            });
        }
        let g = self.gradient_cross(star);
        let mean = &g * &self.weights;
        // W = L⁻¹ Gᵀ so that G K⁻¹ Gᵀ = Wᵀ W.
        let w = self
            .lower
            .solve_lower_triangular(&g.transpose())
            .expect("Cholesky factor has a positive diagonal");
        let mut covariance = prior - w.transpose() * &w;
        let sym = (&covariance + covariance.transpose()) * 0.5;
        covariance.copy_from(&sym);
        Ok(GradientBelief { mean, covariance })
    }

    fn check_point(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.kernel.dim() {
            return Err(invalid(format!(
                "query of dimension {} for a model of dimension {}",
                theta.len(),
                self.kernel.dim()
            )));
        }
        Ok(())
    }
}

/// Posterior mean and latent variance of the objective at `query`.
pub fn posterior_zeroth(
    data: &Dataset,
    query: (&[f64], Source),
    kernel: &ModelKernel,
) -> Result<(f64, f64)> {
    Posterior::fit(kernel, data)?.predict(query.0, query.1)
}

/// Gradient belief at `(incumbent, real)`.
pub fn posterior_gradient(
    data: &Dataset,
    incumbent: &[f64],
    kernel: &ModelKernel,
) -> Result<GradientBelief> {
    Posterior::fit(kernel, data)?.gradient_belief(incumbent)
}
