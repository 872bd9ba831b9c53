use hci_gibo::gp::{posterior_gradient, posterior_zeroth, Dataset, DualKernelSpec, KernelSpec, LabeledSample, ModelKernel, Source};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_kernel(rng: &mut ChaCha8Rng, d: usize) -> KernelSpec {
    let lengthscales = (0..d).map(|_| rng.random_range(0.3..1.0)).collect();
    KernelSpec::new(rng.random_range(0.5..2.0), lengthscales, rng.random_range(1e-4..1e-2)).unwrap()
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let samples = (0..n)
        .map(|_| {
            let theta = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            LabeledSample::real(theta, rng.random_range(-2.0..2.0))
        })
        .collect();
    Dataset::from_samples(d, samples).unwrap()
}

#[test]
fn gradient_mean_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    for _ in 0..50 {
        let d = rng.random_range(1..=4);
        let n = rng.random_range(1..=12);
        let kernel: ModelKernel = random_kernel(&mut rng, d).into();
        let data = random_data(&mut rng, n, d);
        let star: Vec<f64> = (0..d).map(|_| rng.random_range(-0.8..0.8)).collect();
        let belief = posterior_gradient(&data, &star, &kernel).unwrap();
        for j in 0..d {
            let mut hi = star.clone();
            let mut lo = star.clone();
            hi[j] += h;
            lo[j] -= h;
            let fd = (posterior_zeroth(&data, (&hi, Source::Real), &kernel).unwrap().0
                - posterior_zeroth(&data, (&lo, Source::Real), &kernel).unwrap().0)
                / (2.0 * h);
            let err = (belief.mean[j] - fd).abs();
            assert!(err <= 1e-4 * belief.mean[j].abs().max(1.0), "d={d} n={n} j={j}: {} vs {fd}", belief.mean[j]);
        }
    }
}

#[test]
fn appending_data_never_increases_gradient_uncertainty() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let d = rng.random_range(1..=4);
        let kernel: ModelKernel = random_kernel(&mut rng, d).into();
        let full = random_data(&mut rng, 12, d);
        let star: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut data = Dataset::new(d).unwrap();
        let mut prev = posterior_gradient(&data, &star, &kernel).unwrap().trace();
        for s in full.iter() {
            data.push(s.clone()).unwrap();
            let belief = posterior_gradient(&data, &star, &kernel).unwrap();
            assert!(belief.trace() <= prev + 1e-9);
            assert!(belief.min_eigenvalue() >= -1e-9);
            prev = belief.trace();
        }
    }
}

#[test]
fn perfect_simulator_reduces_to_single_source() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let d = 3;
    let k_f = random_kernel(&mut rng, d);
    let k_m = KernelSpec {
        outputscale: 0.0,
        lengthscales: vec![0.5; d],
        noise_variance: 0.0,
    };
    let dual: ModelKernel = DualKernelSpec::new(k_f.clone(), k_m).unwrap().into();
    let single: ModelKernel = k_f.into();
    let data = random_data(&mut rng, 10, d);
    let mixed = Dataset::from_samples(
        d,
        data.iter()
            .enumerate()
            .map(|(i, s)| {
                let source = if i % 2 == 0 { Source::Sim } else { Source::Real };
                LabeledSample::new(s.theta.clone(), s.y, source)
            })
            .collect(),
    )
    .unwrap();
    let star = [0.1, -0.2, 0.3];
    let a = posterior_gradient(&mixed, &star, &dual).unwrap();
    let b = posterior_gradient(&data, &star, &single).unwrap();
    assert!((a.mean - b.mean).amax() < 1e-10);
    assert!((a.covariance - b.covariance).amax() < 1e-10);
}

#[test]
fn simulator_data_informs_the_real_gradient() {
    let k_f = KernelSpec::isotropic(1, 1.0, 0.3, 1e-4).unwrap();
    let k_m = KernelSpec::isotropic(1, 0.1, 0.3, 0.0).unwrap();
    let kernel: ModelKernel = DualKernelSpec::new(k_f, k_m).unwrap().into();
    let prior = posterior_gradient(&Dataset::new(1).unwrap(), &[0.0], &kernel).unwrap().trace();
    let sim = Dataset::from_samples(1, vec![LabeledSample::sim(vec![0.3], 0.5)]).unwrap();
    let real = Dataset::from_samples(1, vec![LabeledSample::real(vec![0.3], 0.5)]).unwrap();
    let after_sim = posterior_gradient(&sim, &[0.0], &kernel).unwrap().trace();
    let after_real = posterior_gradient(&real, &[0.0], &kernel).unwrap().trace();
    assert!(after_real < after_sim && after_sim < prior);
}
