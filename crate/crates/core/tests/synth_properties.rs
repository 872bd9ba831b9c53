use hci_gibo::synth::{solution_accuracy, Objective, WithinModelObjective, WithinModelSpec};

fn objective(dim: usize, seed: u64, gap: f64) -> WithinModelObjective {
    WithinModelObjective::new(WithinModelSpec::standard(dim, seed, gap).unwrap()).unwrap()
}

fn std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn interpolates_the_prior_draw_at_the_anchors() {
    let o = objective(2, 7, 0.2);
    for (a, v) in o.anchors().iter().zip(o.values_f()).step_by(7) {
        assert!((o.f(a) - v).abs() < 1e-8);
    }
    for (a, v) in o.anchors().iter().zip(o.values_gap()).step_by(7) {
        assert!((o.gap(a) - v).abs() < 1e-8);
    }
}

#[test]
fn zero_gap_gives_an_exact_simulator() {
    let o = objective(2, 3, 0.0);
    for t in [[0.1, 0.9], [0.5, 0.5], [0.33, 0.71]] {
        assert_eq!(o.f_sim(&t), o.f(&t));
    }
}

#[test]
fn seeds_give_different_functions() {
    let a = objective(2, 1, 0.2);
    let b = objective(2, 2, 0.2);
    assert!((a.f(&[0.4, 0.6]) - b.f(&[0.4, 0.6])).abs() > 1e-6);
    let again = objective(2, 1, 0.2);
    assert_eq!(a.values_f(), again.values_f());
}

#[test]
fn gap_amplitude_is_about_a_fifth_of_the_signal() {
    let mut ratio = 0.0;
    for seed in 0..3 {
        let o = objective(2, seed, 0.2);
        ratio += std(o.values_gap()) / std(o.values_f());
    }
    ratio /= 3.0;
    assert!((0.12..=0.30).contains(&ratio), "{ratio}");
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    let o = objective(3, 5, 0.2);
    let theta = [0.41, 0.52, 0.63];
    let h = 1e-5;
    let g = o.gradient(&theta);
    let hess = o.hessian(&theta);
    for j in 0..3 {
        let mut hi = theta;
        let mut lo = theta;
        hi[j] += h;
        lo[j] -= h;
        let fd = (o.f(&hi) - o.f(&lo)) / (2.0 * h);
        assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{} vs {fd}", g[j]);
        let (gh, gl) = (o.gradient(&hi), o.gradient(&lo));
        for i in 0..3 {
            let fd2 = (gh[i] - gl[i]) / (2.0 * h);
            assert!((hess[(i, j)] - fd2).abs() <= 1e-4 * fd2.abs().max(1.0));
        }
    }
    assert!(o.lipschitz() > 0.0);
}

#[test]
fn solution_accuracy_is_an_increasing_affine_map() {
    let o = objective(2, 9, 0.2);
    let (lo, hi) = o.reference_range();
    assert!(lo < hi);
    let points = [[0.1, 0.2], [0.5, 0.5], [0.8, 0.3], [0.95, 0.05]];
    let mut pairs: Vec<(f64, f64)> = points.iter().map(|p| (o.f(p), solution_accuracy(&o, p))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    for (v, sa) in pairs {
        assert!((sa - (v - lo) / (hi - lo)).abs() < 1e-12);
    }
}
