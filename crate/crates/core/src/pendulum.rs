//! Two-axis inverted pendulum on an actuated base, stabilized by a fixed
//! state-feedback gain and disturbed by a rhythmic movement primitive whose
//! weights are the policy parameters. The task is to make the pole tip track
//! a Lissajous curve.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gp::Source;
use crate::optimizer::Evaluator;

/// Per-axis feedback gain on `(angle, angular rate, position, velocity)`.
pub const LQR_GAIN: [f64; 4] = [45.4, 11.9, 3.16, 5.74];
pub const BASES_PER_AXIS: usize = 12;
pub const POLICY_DIM: usize = 2 * BASES_PER_AXIS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    /// Pole mass, kg.
    pub m: f64,
    /// Distance to the center of mass, m.
    pub l: f64,
    /// Friction on the angular rate.
    pub xi: f64,
    pub g: f64,
    /// Base origin `(x₀, y₀)`, m.
    pub origin: (f64, f64),
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m: 0.1593,
            l: 0.463,
            xi: 0.002,
            g: 9.81,
            origin: (0.5, 0.0),
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.l > 0.0 && self.g > 0.0) {
            return Err(invalid("pendulum m, l and g must be positive"));
        }
        if !(self.xi >= 0.0) {
            return Err(invalid("pendulum xi must be nonnegative"));
        }
        Ok(())
    }

    /// Default simulator: `m` and `ξ` scaled by 0.9, `l` by 1.02.
    pub fn perturbed(&self) -> Self {
        Self {
            m: 0.9 * self.m,
            l: 1.02 * self.l,
            xi: 0.9 * self.xi,
            ..*self
        }
    }

    fn damping(&self) -> f64 {
        self.xi / (self.m * self.l * self.l)
    }
}

/// Rhythmic movement primitive with von Mises bases, one set per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmpPolicy {
    /// `[w_x; w_y]`, twelve weights per axis.
    pub weights: Vec<f64>,
    pub amplitude: f64,
    pub width: f64,
    pub period: f64,
}

impl DmpPolicy {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() != POLICY_DIM {
            return Err(invalid(format!(
                "policy needs {POLICY_DIM} weights, got {}",
                weights.len()
            )));
        }
        Ok(Self {
            weights,
            amplitude: 1.0,
            width: 1.0,
            period: 20.0,
        })
    }

    pub fn zero() -> Self {
        Self::new(vec![0.0; POLICY_DIM]).expect("fixed dimension")
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI / self.period
    }

    /// Phase of basis `i`, for centers evenly spaced in time over one period.
    pub fn center(i: usize) -> f64 {
        2.0 * PI * i as f64 / BASES_PER_AXIS as f64
    }
}

/// Extra base acceleration `(a_x, a_y)` at time `t`.
pub fn dmp_accel(policy: &DmpPolicy, t: f64) -> (f64, f64) {
    let phase = policy.omega() * t;
    let mut norm = 0.0;
    let (mut ax, mut ay) = (0.0, 0.0);
    for i in 0..BASES_PER_AXIS {
        let phi = (policy.width * ((phase - DmpPolicy::center(i)).cos() - 1.0)).exp();
        norm += phi;
        ax += phi * policy.weights[i];
        ay += phi * policy.weights[BASES_PER_AXIS + i];
    }
    (policy.amplitude * ax / norm, policy.amplitude * ay / norm)
}

/// `[φ, φ̇, x, ẋ, θ, θ̇, y, ẏ]`.
pub type State = [f64; 8];

fn derivative(s: &State, u: (f64, f64), a: (f64, f64), p: &PendulumParams) -> State {
    let gl = p.g / p.l;
    let c = p.damping();
    [
        s[1],
        gl * s[0].sin() - gl * s[0].cos() * u.0 - c * s[1],
        s[3],
        u.0 + a.0,
        s[5],
        gl * s[4].sin() - gl * s[4].cos() * u.1 - c * s[5],
        s[7],
        u.1 + a.1,
    ]
}

/// One RK4 step with the control `u` and disturbance `a` held over `dt`.
pub fn step_dynamics(state: &State, u: (f64, f64), a: (f64, f64), params: &PendulumParams, dt: f64) -> State {
    let add = |s: &State, k: &State, h: f64| -> State {
        let mut out = *s;
        for (o, k) in out.iter_mut().zip(k) {
            *o += h * k;
        }
        out
    };
    let k1 = derivative(state, u, a, params);
    let k2 = derivative(&add(state, &k1, 0.5 * dt), u, a, params);
    let k3 = derivative(&add(state, &k2, 0.5 * dt), u, a, params);
    let k4 = derivative(&add(state, &k3, dt), u, a, params);
    let mut out = *state;
    for i in 0..8 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Linearization of one axis about the upright equilibrium.
pub fn linearized_axis(params: &PendulumParams) -> (Matrix4<f64>, Vector4<f64>) {
    let gl = params.g / params.l;
    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        gl, -params.damping(), 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, 0.0, 0.0,
    );
    let b = Vector4::new(0.0, -gl, 0.0, 1.0);
    (a, b)
}

/// Largest real part of the closed-loop eigenvalues for `u = sign·F x`.
pub fn closed_loop_abscissa(params: &PendulumParams, sign: f64) -> f64 {
    let (a, b) = linearized_axis(params);
    let f = nalgebra::RowVector4::from_row_slice(&LQR_GAIN) * sign;
    (a + b * f)
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Orientation of the gain that stabilizes the linearized loop: `+1` for
/// `u = F x`, `−1` for `u = −F x`.
pub fn lqr_orientation(params: &PendulumParams) -> Result<f64> {
    [1.0, -1.0]
        .into_iter()
        .find(|&s| closed_loop_abscissa(params, s) < 0.0)
        .ok_or_else(|| Error::Config("neither gain orientation stabilizes the pendulum".into()))
}

/// Reference tip trajectory `(x_d, y_d)`.
pub fn reference(t: f64, period: f64) -> (f64, f64) {
    let w = 2.0 * PI / period;
    (0.2 * (w * t).sin() * (w * t).cos() + 0.5, 0.12 * (w * t).sin())
}

/// Tracking cost of the zero policy with the tip held at the origin,
/// `T·(2/π)·(1.2·0.1 + 0.12)`.
pub fn zero_policy_cost(duration: f64) -> f64 {
    duration * (2.0 / PI) * (1.2 * 0.1 + 0.12)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub duration: f64,
    /// Cost and trajectory sampling interval, s.
    pub sample_dt: f64,
    /// Integration substeps per sample.
    pub substeps: usize,
    /// Substeps the feedback control is held for.
    pub control_hold: usize,
    /// Track the pole tip rather than the base.
    pub track_tip: bool,
    /// Multiplier from policy parameters to DMP weights.
    pub action_scale: f64,
    /// Cost assigned to runs where the pole falls.
    pub penalty: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            duration: 20.0,
            sample_dt: 0.01,
            substeps: 10,
            control_hold: 1,
            track_tip: true,
            action_scale: 0.05,
            penalty: 3.0 * zero_policy_cost(20.0),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.sample_dt > 0.0) {
            return Err(invalid("episode duration and sample_dt must be positive"));
        }
        if self.substeps == 0 || self.control_hold == 0 {
            return Err(invalid("substeps and control_hold must be positive"));
        }
        if !(self.action_scale > 0.0) || !(self.penalty > 0.0) {
            return Err(invalid("action_scale and penalty must be positive"));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration / self.sample_dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub phi: f64,
    pub theta: f64,
    pub x: f64,
    pub y: f64,
    pub x_tip: f64,
    pub y_tip: f64,
    pub x_d: f64,
    pub y_d: f64,
    pub a_x: f64,
    pub a_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub cost: f64,
    pub trajectory: Vec<TrajectoryRow>,
    pub diverged: bool,
}

/// Cost of a sampled trajectory: `Σ (1.2·|x_tip − x_d| + |y_tip − y_d|)·dt`.
pub fn tracking_cost(rows: &[TrajectoryRow], dt: f64) -> f64 {
    rows.iter()
        .map(|r| (1.2 * (r.x_tip - r.x_d).abs() + (r.y_tip - r.y_d).abs()) * dt)
        .sum()
}

/// Simulates one episode from the upright rest state.
pub fn run_episode(policy: &DmpPolicy, params: &PendulumParams, cfg: &EpisodeConfig) -> Result<EpisodeResult> {
    run_episode_from(policy, params, cfg, [0.0; 8])
}

pub fn run_episode_from(
    policy: &DmpPolicy,
    params: &PendulumParams,
    cfg: &EpisodeConfig,
    initial: State,
) -> Result<EpisodeResult> {
    params.validate()?;
    cfg.validate()?;
    let sign = lqr_orientation(params)?;
    let gain = LQR_GAIN.map(|g| sign * g);
    let feedback = |s: &State| -> (f64, f64) {
        let ux = gain[0] * s[0] + gain[1] * s[1] + gain[2] * s[2] + gain[3] * s[3];
        let uy = gain[0] * s[4] + gain[1] * s[5] + gain[2] * s[6] + gain[3] * s[7];
        (ux, uy)
    };
    let mut scaled = policy.clone();
    scaled.amplitude *= cfg.action_scale;

    let n = cfg.samples();
    let h = cfg.sample_dt / cfg.substeps as f64;
    let mut state = initial;
    let mut u = (0.0, 0.0);
    let mut substep = 0usize;
    let mut rows = Vec::with_capacity(n);
    let mut diverged = false;
    for k in 0..n {
        let t = k as f64 * cfg.sample_dt;
        let (ax, ay) = dmp_accel(&scaled, t);
        let (xd, yd) = reference(t, policy.period);
        let (phi, theta) = (state[0], state[4]);
        let (tip_x, tip_y) = if cfg.track_tip {
            (params.l * phi.sin(), params.l * theta.sin())
        } else {
            (0.0, 0.0)
        };
        rows.push(TrajectoryRow {
            t,
            phi,
            theta,
            x: state[2],
            y: state[6],
            x_tip: params.origin.0 + state[2] + tip_x,
            y_tip: params.origin.1 + state[6] + tip_y,
            x_d: xd,
            y_d: yd,
            a_x: ax,
            a_y: ay,
        });
        if !state.iter().all(|v| v.is_finite()) || phi.abs() > PI / 4.0 || theta.abs() > PI / 4.0 {
            diverged = true;
            break;
        }
        for j in 0..cfg.substeps {
            if substep % cfg.control_hold == 0 {
                u = feedback(&state);
            }
            substep += 1;
            let a = dmp_accel(&scaled, t + j as f64 * h);
            state = step_dynamics(&state, (u.0 + a.0, u.1 + a.1), a, params, h);
        }
    }
    let cost = if diverged {
        cfg.penalty
    } else {
        tracking_cost(&rows, cfg.sample_dt).min(cfg.penalty)
    };
    Ok(EpisodeResult {
        cost,
        trajectory: rows,
        diverged,
    })
}

pub const TRAJECTORY_HEADER: &str = "t,phi,theta,x,y,x_tip,y_tip,x_d,y_d,a_x,a_y";

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t, r.phi, r.theta, r.x, r.y, r.x_tip, r.y_tip, r.x_d, r.y_d, r.a_x, r.a_y
        );
    }
    out
}

/// Real and simulated plants behind one evaluator; the objective is the
/// negated episode cost.
#[derive(Debug, Clone)]
pub struct PendulumEvaluator {
    pub real: PendulumParams,
    pub sim: PendulumParams,
    pub episode: EpisodeConfig,
    noise_std: f64,
    real_rng: ChaCha8Rng,
    sim_rng: ChaCha8Rng,
    real_calls: usize,
    sim_calls: usize,
}

impl PendulumEvaluator {
    pub fn new(real: PendulumParams, sim: PendulumParams, episode: EpisodeConfig, noise_std: f64, seed: u64) -> Result<Self> {
        real.validate()?;
        sim.validate()?;
        episode.validate()?;
        lqr_orientation(&real)?;
        lqr_orientation(&sim)?;
        let stream = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        Ok(Self {
            real,
            sim,
            episode,
            noise_std,
            real_rng: stream(0),
            sim_rng: stream(1),
            real_calls: 0,
            sim_calls: 0,
        })
    }

    /// Noise-free episode cost of policy parameters `theta` on one plant.
    pub fn cost(&self, theta: &[f64], source: Source) -> f64 {
        let params = match source {
            Source::Real => &self.real,
            Source::Sim => &self.sim,
        };
        DmpPolicy::new(theta.to_vec())
            .and_then(|p| run_episode(&p, params, &self.episode))
            .map_or(self.episode.penalty, |r| r.cost)
    }

    fn noise(&mut self, source: Source) -> f64 {
        let rng = match source {
            Source::Real => &mut self.real_rng,
            Source::Sim => &mut self.sim_rng,
        };
        let z: f64 = StandardNormal.sample(rng);
        self.noise_std * z
    }
}

impl Evaluator for PendulumEvaluator {
    fn eval_real(&mut self, theta: &[f64]) -> f64 {
        self.real_calls += 1;
        -self.cost(theta, Source::Real) + self.noise(Source::Real)
    }

    fn eval_sim(&mut self, theta: &[f64]) -> Option<f64> {
        self.sim_calls += 1;
        Some(-self.cost(theta, Source::Sim) + self.noise(Source::Sim))
    }

    fn has_sim(&self) -> bool {
        true
    }

    fn queries(&self, source: Source) -> usize {
        match source {
            Source::Real => self.real_calls,
            Source::Sim => self.sim_calls,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_weights_give_constant_accel() {
        let p = DmpPolicy::new(vec![0.7; POLICY_DIM]).unwrap();
        for t in [0.0, 3.3, 19.9] {
            let (ax, ay) = dmp_accel(&p, t);
            assert_relative_eq!(ax, 0.7, epsilon = 1e-14);
            assert_relative_eq!(ay, 0.7, epsilon = 1e-14);
        }
        assert_eq!(dmp_accel(&DmpPolicy::zero(), 4.0), (0.0, 0.0));
    }

    #[test]
    fn single_basis_at_its_peak() {
        let mut w = vec![0.0; POLICY_DIM];
        w[0] = 1.0;
        let p = DmpPolicy::new(w).unwrap();
        let t = DmpPolicy::center(0) / p.omega();
        let (ax, _) = dmp_accel(&p, t);
        let denom: f64 = (0..BASES_PER_AXIS)
            .map(|i| ((DmpPolicy::center(0) - DmpPolicy::center(i)).cos() - 1.0).exp())
            .sum();
        assert_relative_eq!(ax, 1.0 / denom, epsilon = 1e-10);
        assert!(ax > 1.0 / 12.0 && ax < 1.0);
    }

    #[test]
    fn accel_is_periodic() {
        let p = DmpPolicy::new((0..POLICY_DIM).map(|i| (i as f64).sin()).collect()).unwrap();
        for t in [0.3, 7.1, 13.9] {
            let (a, b) = dmp_accel(&p, t);
            let (c, d) = dmp_accel(&p, t + p.period);
            assert!((a - c).abs() < 1e-12 && (b - d).abs() < 1e-12);
        }
    }

    #[test]
    fn upright_rest_is_a_fixed_point() {
        let s = step_dynamics(&[0.0; 8], (0.0, 0.0), (0.0, 0.0), &PendulumParams::default(), 0.001);
        assert_eq!(s, [0.0; 8]);
    }

    #[test]
    fn small_angle_grows_like_cosh() {
        let p = PendulumParams {
            xi: 0.0,
            ..Default::default()
        };
        let phi0 = 1e-4;
        let mut s = [phi0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for _ in 0..100 {
            s = step_dynamics(&s, (0.0, 0.0), (0.0, 0.0), &p, 0.001);
        }
        let expected = phi0 * ((p.g / p.l).sqrt() * 0.1).cosh();
        assert!((s[0] - expected).abs() / expected < 5e-3);
    }

    #[test]
    fn pure_damping_decays() {
        let p = PendulumParams {
            g: 1e-12,
            xi: 0.01,
            ..Default::default()
        };
        let mut s = [0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0];
        for _ in 0..50 {
            let next = step_dynamics(&s, (0.0, 0.0), (0.0, 0.0), &p, 0.01);
            assert!(next[1].abs() < s[1].abs() && next[5].abs() < s[5].abs());
            s = next;
        }
    }

    #[test]
    fn literal_gain_orientation_is_stable() {
        let p = PendulumParams::default();
        assert!(closed_loop_abscissa(&p, 1.0) < 0.0);
        assert!(closed_loop_abscissa(&p, -1.0) > 0.0);
        assert_eq!(lqr_orientation(&p).unwrap(), 1.0);
    }

    #[test]
    fn oracle_trajectory_has_zero_cost() {
        let rows: Vec<TrajectoryRow> = (0..2000)
            .map(|k| {
                let t = k as f64 * 0.01;
                let (x_d, y_d) = reference(t, 20.0);
                TrajectoryRow {
                    t,
                    phi: 0.0,
                    theta: 0.0,
                    x: 0.0,
                    y: 0.0,
                    x_tip: x_d,
                    y_tip: y_d,
                    x_d,
                    y_d,
                    a_x: 0.0,
                    a_y: 0.0,
                }
            })
            .collect();
        assert_eq!(tracking_cost(&rows, 0.01), 0.0);
    }

    #[test]
    fn zero_policy_cost_matches_closed_form() {
        let r = run_episode(&DmpPolicy::zero(), &PendulumParams::default(), &EpisodeConfig::default()).unwrap();
        assert!(!r.diverged);
        assert_eq!(r.trajectory.len(), 2000);
        assert!((r.cost - 3.056).abs() < 0.05, "{}", r.cost);
        assert_relative_eq!(zero_policy_cost(20.0), 3.0558, epsilon = 1e-4);
    }

    #[test]
    fn csv_layout() {
        let r = run_episode(&DmpPolicy::zero(), &PendulumParams::default(), &EpisodeConfig::default()).unwrap();
        let csv = trajectory_csv(&r.trajectory);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
        assert_eq!(lines.count(), 2000);
    }
}
