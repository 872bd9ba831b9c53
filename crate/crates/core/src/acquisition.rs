//! Gradient-information acquisition.
//!
//! The utility of a candidate `(θ, source)` is the expected drop in the trace
//! of the gradient covariance at `(incumbent, real)` after observing it. The
//! drop does not depend on the observed value, so it is computed before the
//! query is made.
//!
//! [`gi_value`] conditions the model on the hypothetical sample directly.
//! [`GradientInformation`] evaluates the same quantity through a rank-one
//! update of a fixed factorization and is what the query search uses.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gp::{Dataset, GradientBelief, LabeledSample, ModelKernel, Posterior, Source};
use crate::sobol::Sobol;

/// Search region for the next query: a box around the incumbent whose
/// half-width is measured in units of the mean lengthscale, optionally
/// intersected with global bounds `[low, high]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDomain {
    pub center: Vec<f64>,
    pub half_width: f64,
    pub bounds: Option<(f64, f64)>,
}

impl QueryDomain {
    pub fn new(center: Vec<f64>, half_width: f64, bounds: Option<(f64, f64)>) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(invalid(format!("half_width must be positive, got {half_width}")));
        }
        if let Some((lo, hi)) = bounds {
            if !(lo < hi) {
                return Err(invalid(format!("bounds [{lo}, {hi}] are empty")));
            }
        }
        Ok(Self {
            center,
            half_width,
            bounds,
        })
    }

    /// Per-dimension `(low, high)` intervals of the search box.
    pub fn search_box(&self, lengthscale: f64) -> Result<Vec<(f64, f64)>> {
        let w = self.half_width * lengthscale;
        self.center
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let (mut lo, mut hi) = (c - w, c + w);
                if let Some((blo, bhi)) = self.bounds {
                    lo = lo.max(blo);
                    hi = hi.min(bhi);
                }
                if lo > hi {
                    Err(invalid(format!(
                        "search box is empty in dimension {j}: [{lo}, {hi}]"
                    )))
                } else {
                    Ok((lo, hi))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub theta: Vec<f64>,
    pub source: Source,
    /// Expected reduction of the gradient-covariance trace.
    pub value: f64,
}

/// Effort spent by [`optimize_query`].
///
/// Every start is scored once. The remaining `starts · evals_per_start`
/// evaluations are pooled and split evenly across the `refine_top` best
/// starts, each refined by coordinate-wise golden-section search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuerySearch {
    pub starts: usize,
    pub evals_per_start: usize,
    pub refine_top: usize,
}

impl Default for QuerySearch {
    fn default() -> Self {
        Self {
            starts: 64,
            evals_per_start: 40,
            refine_top: 8,
        }
    }
}

impl QuerySearch {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 || self.evals_per_start == 0 || self.refine_top == 0 {
            return Err(invalid("query search sizes must be positive"));
        }
        Ok(())
    }
}

/// Gradient information by direct conditioning:
/// `Tr(Σ′ | D) − Tr(Σ′ | D ∪ candidate)`.
pub fn gi_value(
    data: &Dataset,
    incumbent: &[f64],
    candidate: (&[f64], Source),
    kernel: &ModelKernel,
) -> Result<f64> {
    let before = Posterior::fit(kernel, data)?.gradient_belief(incumbent)?;
    let mut augmented = data.clone();
    let source = kernel.effective_source(candidate.1);
    // The posterior covariance ignores the observed value.
    augmented.push(LabeledSample::new(candidate.0.to_vec(), 0.0, source))?;
    let after = Posterior::fit(kernel, &augmented)?.gradient_belief(incumbent)?;
    Ok(before.trace() - after.trace())
}

/// Fast evaluator of the gradient information around one incumbent.
#[derive(Debug, Clone)]
pub struct GradientInformation {
    posterior: Posterior,
    incumbent: Vec<f64>,
    /// `L⁻¹ ∇K(X̄, star)`, n × d.
    whitened_cross: DMatrix<f64>,
}

impl GradientInformation {
    pub fn new(kernel: &ModelKernel, data: &Dataset, incumbent: &[f64]) -> Result<Self> {
        if incumbent.len() != kernel.dim() {
            return Err(invalid("incumbent dimension does not match the kernel"));
        }
        let posterior = Posterior::fit(kernel, data)?;
        let whitened_cross = if posterior.is_empty() {
            DMatrix::zeros(0, kernel.dim())
        } else {
            posterior
                .lower()
                .solve_lower_triangular(&posterior.gradient_cross(incumbent).transpose())
                .ok_or_else(|| invalid("singular Cholesky factor"))?
        };
        Ok(Self {
            posterior,
            incumbent: incumbent.to_vec(),
            whitened_cross,
        })
    }

    pub fn incumbent(&self) -> &[f64] {
        &self.incumbent
    }

    pub fn value(&self, theta: &[f64], source: Source) -> f64 {
        let kernel = self.posterior.kernel();
        let source = kernel.effective_source(source);
        let d = kernel.dim();
        let mut r = vec![0.0; d];
        kernel.add_gradient_cross(&self.incumbent, theta, source, &mut r);
        let mut s = kernel.covariance(theta, source, theta, source) + kernel.noise_variance(source);
        let mut r = DVector::from_vec(r);
        if !self.posterior.is_empty() {
            let w = self
                .posterior
                .whiten(&self.posterior.cross_covariance(theta, source));
            r -= self.whitened_cross.transpose() * &w;
            s -= w.norm_squared();
        }
        if s <= 0.0 {
            return 0.0;
        }
        r.norm_squared() / s
    }
}

/// Maximizes the gradient information over the search box for one source.
pub fn optimize_query<R: Rng + ?Sized>(
    data: &Dataset,
    incumbent: &[f64],
    domain: &QueryDomain,
    source: Source,
    kernel: &ModelKernel,
    search: &QuerySearch,
    rng: &mut R,
) -> Result<AcquisitionResult> {
    GradientInformation::new(kernel, data, incumbent)?.maximize(domain, source, search, rng)
}

impl GradientInformation {
    /// Gradient belief at the incumbent under the fitted posterior.
    pub fn belief(&self) -> Result<GradientBelief> {
        self.posterior.gradient_belief(&self.incumbent)
    }

    /// Multi-start maximization over the search box.
    ///
    /// Starts come from a digitally shifted Sobol sequence seeded from `rng`;
    /// for `d > 1` the second half of the starts is contracted towards the
    /// incumbent by `1/√d` so that some land near the informative shell around
    /// it. Near-ties go to the earlier start.
    pub fn maximize<R: Rng + ?Sized>(
        &self,
        domain: &QueryDomain,
        source: Source,
        search: &QuerySearch,
        rng: &mut R,
    ) -> Result<AcquisitionResult> {
        search.validate()?;
        let kernel = self.posterior.kernel();
        let d = kernel.dim();
        if domain.center.len() != d {
            return Err(invalid("domain and kernel dimensions differ"));
        }
        let bounds = domain.search_box(kernel.mean_lengthscale())?;
        let source = kernel.effective_source(source);
        let f = |x: &[f64]| self.value(x, source);

        let seed = rng.random::<u64>();
        let contraction = 1.0 / (d as f64).sqrt();
        let mut starts: Vec<(Vec<f64>, f64)> = Sobol::scrambled(d, seed)?
            .take(search.starts)
            .enumerate()
            .map(|(i, u)| {
                let shrink = if d > 1 && 2 * i >= search.starts {
                    contraction
                } else {
                    1.0
                };
                let x: Vec<f64> = u
                    .iter()
                    .zip(&bounds)
                    .zip(&domain.center)
                    .map(|((u, (lo, hi)), c)| {
                        let full = lo + u * (hi - lo);
                        (c + shrink * (full - c)).clamp(*lo, *hi)
                    })
                    .collect();
                let v = f(&x);
                (x, v)
            })
            .collect();

        let mut order: Vec<usize> = (0..starts.len()).collect();
        order.sort_by(|&a, &b| starts[b].1.total_cmp(&starts[a].1).then(a.cmp(&b)));

        let top = search.refine_top.min(starts.len());
        let pooled = search.starts * search.evals_per_start - search.starts;
        let budget = pooled / top;
        for &i in order.iter().take(top) {
            let (x, v) = std::mem::take(&mut starts[i]);
            starts[i] = refine_coordinatewise(&f, x, v, &bounds, budget);
        }

        let peak = starts.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let best = starts
            .iter()
            .position(|s| s.1 >= peak - TIE_TOLERANCE * peak.abs())
            .unwrap_or(0);
        let (theta, value) = starts.swap_remove(best);
        Ok(AcquisitionResult {
            theta,
            source,
            value,
        })
    }
}

/// Relative gap below which refined optima count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Coordinate sweeps of golden-section line searches; the bracket around the
/// current point halves after every sweep.
fn refine_coordinatewise<F: Fn(&[f64]) -> f64>(
    f: &F,
    mut x: Vec<f64>,
    mut value: f64,
    bounds: &[(f64, f64)],
    budget: usize,
) -> (Vec<f64>, f64) {
    let d = x.len();
    let per_line = (budget / (3 * d)).clamp(6, 30);
    let mut widths: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.25 * (hi - lo)).collect();
    let mut used = 0;
    while used + per_line <= budget {
        for j in 0..d {
            if used + per_line > budget {
                break;
            }
            let lo = (x[j] - widths[j]).max(bounds[j].0);
            let hi = (x[j] + widths[j]).min(bounds[j].1);
            if hi - lo <= 0.0 {
                continue;
            }
            let mut probe = x.clone();
            let mut line = |t: f64| {
                probe[j] = t;
                f(&probe)
            };
            let (t, v) = golden_section_max(&mut line, lo, hi, per_line);
            used += per_line;
            if v > value {
                x[j] = t;
                value = v;
            }
        }
        widths.iter_mut().for_each(|w| *w *= 0.5);
    }
    (x, value)
}

/// Golden-section search for a maximum on `[lo, hi]` with `evals`
/// evaluations; returns the best point evaluated.
fn golden_section_max<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64, evals: usize) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut e = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fe = f(e);
    let mut best = if fe > fc { (e, fe) } else { (c, fc) };
    for _ in 2..evals {
        if fc >= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + INV_PHI * (b - a);
            fe = f(e);
            if fe > best.1 {
                best = (e, fe);
            }
        }
    }
    best
}

/// Change in simulator utility between consecutive simulator queries of one
/// descent phase: `next − prev`.
pub fn sim_to_real_gap(prev_sim_utility: f64, next_sim_utility: f64) -> f64 {
    next_sim_utility - prev_sim_utility
}
