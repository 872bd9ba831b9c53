//! High-confidence improvement: the probability that a gradient step improves
//! the objective, the commitment test, and the step itself.
//!
//! For an L-smooth objective and a step `θ + η ν`, improvement is guaranteed
//! whenever `⟨ν/‖ν‖, ∇f⟩ > (L/2) η ‖ν‖`. Under the Gaussian gradient belief
//! the left side is normal, so the probability of the event is a single
//! normal CDF.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gp::GradientBelief;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImprovementConfig {
    /// Lipschitz constant of the gradient.
    pub lipschitz: f64,
    /// Step size η.
    pub step: f64,
    /// Required confidence α.
    pub alpha: f64,
    /// Step along `μ/‖μ‖` instead of `μ`.
    #[serde(default = "default_normalized")]
    pub normalized: bool,
}

fn default_normalized() -> bool {
    true
}

impl ImprovementConfig {
    pub fn new(lipschitz: f64, step: f64, alpha: f64, normalized: bool) -> Result<Self> {
        let cfg = Self {
            lipschitz,
            step,
            alpha,
            normalized,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz > 0.0) || !self.lipschitz.is_finite() {
            return Err(invalid(format!("lipschitz must be positive, got {}", self.lipschitz)));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(invalid(format!("step must be positive, got {}", self.step)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Improvement threshold on the directional derivative for a mean of
    /// norm `mean_norm`.
    pub fn threshold(&self, mean_norm: f64) -> f64 {
        let scale = if self.normalized { 1.0 } else { mean_norm };
        0.5 * self.lipschitz * self.step * scale
    }
}

/// Standard normal CDF.
pub fn gauss_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability that the step proposed by `belief` improves the objective.
///
/// Returns 0 for a zero mean; errors if the covariance is not PSD.
pub fn improvement_confidence(belief: &GradientBelief, cfg: &ImprovementConfig) -> Result<f64> {
    belief.check_psd()?;
    let norm = belief.mean.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let u = &belief.mean / norm;
    let variance = (u.transpose() * &belief.covariance * &u)[(0, 0)].max(0.0);
    let margin = norm - cfg.threshold(norm);
    if variance == 0.0 {
        return Ok(if margin > 0.0 { 1.0 } else { 0.0 });
    }
    Ok(gauss_cdf(margin / variance.sqrt()))
}

/// Whether the belief is confident enough to take a step.
pub fn commit(belief: &GradientBelief, cfg: &ImprovementConfig) -> bool {
    improvement_confidence(belief, cfg).is_ok_and(|p| p >= cfg.alpha)
}

/// Gradient ascent step from `incumbent` along the belief mean.
pub fn update_step(incumbent: &[f64], belief: &GradientBelief, cfg: &ImprovementConfig) -> Vec<f64> {
    let norm = belief.mean.norm();
    if norm == 0.0 || !norm.is_finite() {
        return incumbent.to_vec();
    }
    let scale = if cfg.normalized { cfg.step / norm } else { cfg.step };
    (DVector::from_column_slice(incumbent) + &belief.mean * scale)
        .iter()
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn belief(mean: &[f64], var: f64) -> GradientBelief {
        GradientBelief {
            mean: DVector::from_column_slice(mean),
            covariance: DMatrix::identity(mean.len(), mean.len()) * var,
        }
    }

    fn cfg(l_eta: f64, alpha: f64, normalized: bool) -> ImprovementConfig {
        ImprovementConfig::new(l_eta, 1.0, alpha, normalized).unwrap()
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(gauss_cdf(0.0), 0.5);
        assert_relative_eq!(gauss_cdf(1.8856), 0.97027, epsilon = 1e-4);
        assert_relative_eq!(gauss_cdf(0.7071), 0.76025, epsilon = 1e-4);
        assert_relative_eq!(gauss_cdf(-1.0), 0.158_655_253_931_457_05, epsilon = 1e-15);
        assert_relative_eq!(gauss_cdf(3.0), 0.998_650_101_968_369_9, epsilon = 1e-15);
    }

    #[test]
    fn two_dimensional_reference_pair() {
        let hi = improvement_confidence(&belief(&[0.8, 0.8], 0.09), &cfg(1.0, 0.95, false)).unwrap();
        let lo = improvement_confidence(&belief(&[0.1, 0.1], 0.01), &cfg(1.0, 0.9, false)).unwrap();
        assert_relative_eq!(hi, 0.9703, epsilon = 1e-3);
        assert_relative_eq!(lo, 0.7602, epsilon = 1e-3);
        assert!(commit(&belief(&[0.8, 0.8], 0.09), &cfg(1.0, 0.95, false)));
        assert!(!commit(&belief(&[0.1, 0.1], 0.01), &cfg(1.0, 0.9, false)));
    }

    #[test]
    fn vanishing_covariance_recovers_step_size_condition() {
        let p = improvement_confidence(&belief(&[0.3, -0.4], 0.0), &cfg(1.9, 0.9, false)).unwrap();
        assert_eq!(p, 1.0);
        let p = improvement_confidence(&belief(&[0.3, -0.4], 0.0), &cfg(2.1, 0.9, false)).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn median_commits_at_half() {
        for var in [1e-4, 1.0, 100.0] {
            assert!(commit(&belief(&[1.0, 2.0], var), &cfg(0.5, 0.5, false)));
        }
    }

    #[test]
    fn zero_mean_and_non_psd() {
        assert_eq!(improvement_confidence(&belief(&[0.0, 0.0], 1.0), &cfg(1.0, 0.9, true)).unwrap(), 0.0);
        let bad = belief(&[1.0, 0.0], -1.0);
        assert!(improvement_confidence(&bad, &cfg(1.0, 0.9, true)).is_err());
        assert!(!commit(&bad, &cfg(1.0, 0.9, true)));
    }

    #[test]
    fn steps() {
        let c = ImprovementConfig::new(1.0, 0.2, 0.9, true).unwrap();
        assert_relative_eq!(update_step(&[0.5], &belief(&[1.0], 1.0), &c)[0], 0.7, epsilon = 1e-15);
        let s = update_step(&[0.5, 0.5], &belief(&[3.0, 4.0], 1.0), &c);
        assert_relative_eq!(s[0], 0.62, epsilon = 1e-15);
        assert_relative_eq!(s[1], 0.66, epsilon = 1e-15);
        assert_eq!(update_step(&[0.1, 0.2], &belief(&[0.0, 0.0], 1.0), &c), vec![0.1, 0.2]);
        let raw = ImprovementConfig::new(1.0, 0.2, 0.9, false).unwrap();
        let s = update_step(&[0.0, 0.0], &belief(&[3.0, 4.0], 1.0), &raw);
        assert_relative_eq!(s[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(s[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(ImprovementConfig::new(0.0, 0.2, 0.9, true).is_err());
        assert!(ImprovementConfig::new(1.0, -0.2, 0.9, true).is_err());
        assert!(ImprovementConfig::new(1.0, 0.2, 1.2, true).is_err());
        assert!(ImprovementConfig::new(1.0, 0.2, 0.0, true).is_err());
    }
}
