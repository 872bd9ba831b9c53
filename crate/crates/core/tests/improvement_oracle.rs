use hci_gibo::gp::GradientBelief;
use hci_gibo::improvement::{improvement_confidence, ImprovementConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn monte_carlo(belief: &GradientBelief, cfg: &ImprovementConfig, draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    let norm = belief.mean.norm();
    let u = &belief.mean / norm;
    let scale = if cfg.normalized { 1.0 } else { norm };
    let threshold = 0.5 * cfg.lipschitz * cfg.step * scale;
    let chol = belief.covariance.clone().cholesky().unwrap().l();
    let d = belief.dim();
    let mut hits = 0usize;
    for _ in 0..draws {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let g = &belief.mean + &chol * z;
        if u.dot(&g) > threshold {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

#[test]
fn matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let draws = 100_000;
    for _ in 0..20 {
        let d = rng.random_range(1..=4);
        let mean = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
        let covariance = &a * a.transpose() + DMatrix::identity(d, d) * 0.01;
        let belief = GradientBelief { mean, covariance };
        let cfg = ImprovementConfig::new(rng.random_range(0.5..5.0), rng.random_range(0.05..0.3), 0.9, rng.random_bool(0.5)).unwrap();
        let p = improvement_confidence(&belief, &cfg).unwrap();
        let mc = monte_carlo(&belief, &cfg, draws, &mut rng);
        let se = (p * (1.0 - p) / draws as f64).sqrt().max(1e-6);
        assert!((p - mc).abs() <= 4.0 * se, "closed form {p} vs Monte Carlo {mc}");
    }
}

#[test]
fn larger_steps_lower_confidence() {
    let belief = GradientBelief {
        mean: DVector::from_vec(vec![1.0, 0.5]),
        covariance: DMatrix::identity(2, 2) * 0.2,
    };
    let mut prev = 1.0;
    for step in [0.01, 0.1, 0.5, 1.0, 2.0] {
        let p = improvement_confidence(&belief, &ImprovementConfig::new(1.0, step, 0.9, true).unwrap()).unwrap();
        assert!(p < prev);
        prev = p;
    }
}

#[test]
fn invariant_to_joint_rescaling_of_gradient_and_curvature() {
    let belief = |s: f64| GradientBelief {
        mean: DVector::from_vec(vec![0.4 * s, -0.3 * s]),
        covariance: DMatrix::from_row_slice(2, 2, &[0.05, 0.01, 0.01, 0.08]) * (s * s),
    };
    let a = improvement_confidence(&belief(1.0), &ImprovementConfig::new(2.0, 0.1, 0.9, true).unwrap()).unwrap();
    let b = improvement_confidence(&belief(10.0), &ImprovementConfig::new(20.0, 0.1, 0.9, true).unwrap()).unwrap();
    assert!((a - b).abs() < 1e-12);
}
