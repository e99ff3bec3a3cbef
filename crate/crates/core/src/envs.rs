//! Classic-control environments (CartPole, MountainCar, Acrobot) with the
//! dynamics, reset distributions and termination rules of the standard
//! classic-control reference implementations.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::error::{usage, LabError, Result};

pub const MAX_OBS_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CartPole {
    pub gravity: f64,
    pub mass_cart: f64,
    pub mass_pole: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force_mag: f64,
    /// Euler step in seconds.
    pub tau: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
    pub cap: usize,
}

impl Default for CartPole {
    fn default() -> Self {
        CartPole {
            gravity: 9.8,
            mass_cart: 1.0,
            mass_pole: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * 2.0 * PI / 360.0,
            cap: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MountainCar {
    pub min_position: f64,
    pub max_position: f64,
    pub max_speed: f64,
    pub goal_position: f64,
    pub goal_velocity: f64,
    pub force: f64,
    pub gravity: f64,
    pub cap: usize,
}

impl Default for MountainCar {
    fn default() -> Self {
        MountainCar {
            min_position: -1.2,
            max_position: 0.6,
            max_speed: 0.07,
            goal_position: 0.5,
            goal_velocity: 0.0,
            force: 0.001,
            gravity: 0.0025,
            cap: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Acrobot {
    pub link_length_1: f64,
    pub link_mass_1: f64,
    pub link_mass_2: f64,
    pub link_com_1: f64,
    pub link_com_2: f64,
    pub link_moi: f64,
    pub gravity: f64,
    pub max_vel_1: f64,
    pub max_vel_2: f64,
    pub torques: [f64; 3],
    pub dt: f64,
    pub cap: usize,
}

impl Default for Acrobot {
    fn default() -> Self {
        Acrobot {
            link_length_1: 1.0,
            link_mass_1: 1.0,
            link_mass_2: 1.0,
            link_com_1: 0.5,
            link_com_2: 0.5,
            link_moi: 1.0,
            gravity: 9.8,
            max_vel_1: 4.0 * PI,
            max_vel_2: 9.0 * PI,
            torques: [-1.0, 0.0, 1.0],
            dt: 0.2,
            cap: 500,
        }
    }
}

/// One of the three environments together with its physical constants.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvKind {
    CartPole(CartPole),
    MountainCar(MountainCar),
    Acrobot(Acrobot),
}

/// Environment state. `values` is the observation the agent sees; Acrobot
/// additionally keeps its joint angles internally.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousState {
    obs: [f64; MAX_OBS_DIM],
    dim: usize,
    physics: [f64; 4],
    pub done: bool,
    /// Timesteps taken so far in the episode.
    pub steps: usize,
}

impl ContinuousState {
    pub fn values(&self) -> &[f64] {
        &self.obs[..self.dim]
    }

    /// Raw physical state: `(x, x_dot, theta, theta_dot)` for CartPole,
    /// `(position, velocity)` for MountainCar and
    /// `(theta1, theta2, theta1_dot, theta2_dot)` for Acrobot.
    pub fn physics(&self) -> &[f64] {
        match self.dim {
            2 => &self.physics[..2],
            _ => &self.physics[..],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: ContinuousState,
    pub reward: f64,
    /// Goal reached or failure; the state has no successor.
    pub terminated: bool,
    /// Episode cap reached without termination.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

impl EnvKind {
    pub fn cart_pole() -> Self {
        EnvKind::CartPole(CartPole::default())
    }

    pub fn mountain_car() -> Self {
        EnvKind::MountainCar(MountainCar::default())
    }

    pub fn acrobot() -> Self {
        EnvKind::Acrobot(Acrobot::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::CartPole(_) => "cartpole",
            EnvKind::MountainCar(_) => "mountaincar",
            EnvKind::Acrobot(_) => "acrobot",
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvKind::CartPole(_) => 2,
            EnvKind::MountainCar(_) | EnvKind::Acrobot(_) => 3,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvKind::CartPole(_) => 4,
            EnvKind::MountainCar(_) => 2,
            EnvKind::Acrobot(_) => 6,
        }
    }

    pub fn cap(&self) -> usize {
        match self {
            EnvKind::CartPole(e) => e.cap,
            EnvKind::MountainCar(e) => e.cap,
            EnvKind::Acrobot(e) => e.cap,
        }
    }

    /// Whether a lower episode score is better (step-count tasks).
    pub fn minimizes_score(&self) -> bool {
        !matches!(self, EnvKind::CartPole(_))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                usage(format!("{name} must be positive, got {v}"))
            }
        };
        if self.cap() == 0 {
            return usage("episode cap must be at least 1");
        }
        match self {
            EnvKind::CartPole(c) => {
                positive("gravity", c.gravity)?;
                positive("cart mass", c.mass_cart)?;
                positive("pole mass", c.mass_pole)?;
                positive("pole half-length", c.half_length)?;
                positive("force", c.force_mag)?;
                positive("tau", c.tau)?;
                positive("x threshold", c.x_threshold)?;
                positive("theta threshold", c.theta_threshold)
            }
            EnvKind::MountainCar(m) => {
                positive("force", m.force)?;
                positive("gravity", m.gravity)?;
                positive("max speed", m.max_speed)?;
                if m.min_position >= m.max_position {
                    return usage("mountain car position range is empty");
                }
                Ok(())
            }
            EnvKind::Acrobot(a) => {
                positive("link length", a.link_length_1)?;
                positive("link mass 1", a.link_mass_1)?;
                positive("link mass 2", a.link_mass_2)?;
                positive("link inertia", a.link_moi)?;
                positive("gravity", a.gravity)?;
                positive("dt", a.dt)?;
                positive("max velocity 1", a.max_vel_1)?;
                positive("max velocity 2", a.max_vel_2)
            }
        }
    }

    /// Builds a state from raw physics (see [`ContinuousState::physics`]).
    pub fn state_from_physics(&self, physics: &[f64]) -> Result<ContinuousState> {
        let need = match self {
            EnvKind::MountainCar(_) => 2,
            _ => 4,
        };
        if physics.len() != need {
            return usage(format!(
                "{} expects {need} physical components, got {}",
                self.name(),
                physics.len()
            ));
        }
        if physics.iter().any(|v| !v.is_finite()) {
            return usage("state components must be finite");
        }
        let mut p = [0.0; 4];
        p[..need].copy_from_slice(physics);
        Ok(self.make_state(p, false, 0))
    }

    fn make_state(&self, physics: [f64; 4], done: bool, steps: usize) -> ContinuousState {
        let mut obs = [0.0; MAX_OBS_DIM];
        let dim = self.obs_dim();
        match self {
            EnvKind::Acrobot(_) => {
                let [t1, t2, w1, w2] = physics;
                obs = [t1.cos(), t1.sin(), t2.cos(), t2.sin(), w1, w2];
            }
            _ => obs[..dim].copy_from_slice(&physics[..dim]),
        }
        ContinuousState {
            obs,
            dim,
            physics,
            done,
            steps,
        }
    }

    /// Standard randomized start state.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> ContinuousState {
        let mut p = [0.0; 4];
        match self {
            EnvKind::CartPole(_) => {
                for v in &mut p {
                    *v = rng.gen_range(-0.05..0.05);
                }
            }
            EnvKind::MountainCar(_) => {
                p[0] = rng.gen_range(-0.6..-0.4);
            }
            EnvKind::Acrobot(_) => {
                for v in &mut p {
                    *v = rng.gen_range(-0.1..0.1);
                }
            }
        }
        self.make_state(p, false, 0)
    }

    /// Advances one timestep. All three environments are noise-free; the
    /// stream is accepted so stochastic variants can share the signature.
    pub fn step<R: Rng + ?Sized>(&self, s: &ContinuousState, action: usize, _rng: &mut R) -> Result<StepOutcome> {
        if s.done {
            return usage("cannot step a finished episode; call reset");
        }
        if action >= self.n_actions() {
            return usage(format!(
                "action {action} out of range for {} ({} actions)",
                self.name(),
                self.n_actions()
            ));
        }
        if s.dim != self.obs_dim() {
            return usage(format!(
                "state of dimension {} does not belong to {}",
                s.dim,
                self.name()
            ));
        }
        let (physics, reward, terminated) = match self {
            EnvKind::CartPole(c) => cart_pole_step(c, s.physics, action),
            EnvKind::MountainCar(m) => mountain_car_step(m, s.physics, action),
            EnvKind::Acrobot(a) => acrobot_step(a, s.physics, action),
        };
        let steps = s.steps + 1;
        let truncated = !terminated && steps >= self.cap();
        Ok(StepOutcome {
            state: self.make_state(physics, terminated || truncated, steps),
            reward,
            terminated,
            truncated,
        })
    }

    /// Human-readable listing of every compiled-in constant.
    pub fn dump_constants(&self) -> String {
        let body = match self {
            EnvKind::CartPole(c) => toml::to_string(c),
            EnvKind::MountainCar(m) => toml::to_string(m),
            EnvKind::Acrobot(a) => toml::to_string(a),
        };
        format!("[{}]\n{}", self.name(), body.expect("constants serialize"))
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cartpole" => Ok(EnvKind::cart_pole()),
            "mountaincar" => Ok(EnvKind::mountain_car()),
            "acrobot" => Ok(EnvKind::acrobot()),
            other => Err(LabError::Parse(format!("unknown environment '{other}'"))),
        }
    }
}

fn cart_pole_step(c: &CartPole, p: [f64; 4], action: usize) -> ([f64; 4], f64, bool) {
    let [x, x_dot, theta, theta_dot] = p;
    let force = if action == 1 { c.force_mag } else { -c.force_mag };
    let total_mass = c.mass_cart + c.mass_pole;
    let pole_ml = c.mass_pole * c.half_length;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + pole_ml * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc =
        (c.gravity * sin - cos * temp) / (c.half_length * (4.0 / 3.0 - c.mass_pole * cos * cos / total_mass));
    let x_acc = temp - pole_ml * theta_acc * cos / total_mass;

    let x = x + c.tau * x_dot;
    let x_dot = x_dot + c.tau * x_acc;
    let theta = theta + c.tau * theta_dot;
    let theta_dot = theta_dot + c.tau * theta_acc;

    let failed = x < -c.x_threshold || x > c.x_threshold || theta < -c.theta_threshold || theta > c.theta_threshold;
    ([x, x_dot, theta, theta_dot], 1.0, failed)
}

fn mountain_car_step(m: &MountainCar, p: [f64; 4], action: usize) -> ([f64; 4], f64, bool) {
    let [position, velocity, ..] = p;
    let mut velocity = velocity + (action as f64 - 1.0) * m.force + (3.0 * position).cos() * (-m.gravity);
    velocity = velocity.clamp(-m.max_speed, m.max_speed);
    let position = (position + velocity).clamp(m.min_position, m.max_position);
    if position == m.min_position && velocity < 0.0 {
        velocity = 0.0;
    }
    let at_goal = position >= m.goal_position && velocity >= m.goal_velocity;
    ([position, velocity, 0.0, 0.0], -1.0, at_goal)
}

fn acrobot_derivs(a: &Acrobot, s: [f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2) = (a.link_mass_1, a.link_mass_2);
    let l1 = a.link_length_1;
    let (lc1, lc2) = (a.link_com_1, a.link_com_2);
    let (i1, i2) = (a.link_moi, a.link_moi);
    let g = a.gravity;
    let [theta1, theta2, dtheta1, dtheta2] = s;

    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

/// One classical fourth-order Runge-Kutta step of size `h`.
fn rk4(f: impl Fn([f64; 4]) -> [f64; 4], y: [f64; 4], h: f64) -> [f64; 4] {
    let add = |a: [f64; 4], b: [f64; 4], s: f64| std::array::from_fn(|i| a[i] + s * b[i]);
    let k1 = f(y);
    let k2 = f(add(y, k1, h / 2.0));
    let k3 = f(add(y, k2, h / 2.0));
    let k4 = f(add(y, k3, h));
    std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Wraps `x` into `[lo, hi)`.
fn wrap(mut x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    while x > hi {
        x -= span;
    }
    while x < lo {
        x += span;
    }
    x
}

fn acrobot_step(a: &Acrobot, p: [f64; 4], action: usize) -> ([f64; 4], f64, bool) {
    let torque = a.torques[action];
    let ns = rk4(|s| acrobot_derivs(a, s, torque), p, a.dt);
    let ns = [
        wrap(ns[0], -PI, PI),
        wrap(ns[1], -PI, PI),
        ns[2].clamp(-a.max_vel_1, a.max_vel_1),
        ns[3].clamp(-a.max_vel_2, a.max_vel_2),
    ];
    let reached = -ns[0].cos() - (ns[1] + ns[0]).cos() > 1.0;
    (ns, if reached { 0.0 } else { -1.0 }, reached)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn reset_ranges() {
        let mut r = rng();
        for _ in 0..1000 {
            let s = EnvKind::cart_pole().reset(&mut r);
            assert_eq!(s.values().len(), 4);
            assert!(s.values().iter().all(|v| (-0.05..0.05).contains(v)));
            let s = EnvKind::mountain_car().reset(&mut r);
            assert!((-0.6..-0.4).contains(&s.values()[0]));
            assert_eq!(s.values()[1], 0.0);
            let s = EnvKind::acrobot().reset(&mut r);
            assert_eq!(s.values().len(), 6);
            assert!(s.physics().iter().all(|v| (-0.1..0.1).contains(v)));
        }
    }

    #[test]
    fn reset_is_deterministic() {
        for env in [EnvKind::cart_pole(), EnvKind::mountain_car(), EnvKind::acrobot()] {
            let a = env.reset(&mut rng());
            let b = env.reset(&mut rng());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mountain_car_hand_step() {
        let env = EnvKind::mountain_car();
        let s = env.state_from_physics(&[-0.5, 0.0]).unwrap();
        let out = env.step(&s, 1, &mut rng()).unwrap();
        let v = -0.0025 * (-1.5f64).cos();
        assert_eq!(out.state.values(), &[-0.5 + v, v]);
        assert_eq!(out.reward, -1.0);
        assert!(!out.done());
    }

    #[test]
    fn mountain_car_left_wall_and_goal() {
        let env = EnvKind::mountain_car();
        let s = env.state_from_physics(&[-1.19, -0.07]).unwrap();
        let out = env.step(&s, 0, &mut rng()).unwrap();
        assert_eq!(out.state.values(), &[-1.2, 0.0]);
        let s = env.state_from_physics(&[0.49, 0.05]).unwrap();
        let out = env.step(&s, 2, &mut rng()).unwrap();
        assert!(out.terminated && out.done());
    }

    #[test]
    fn cart_pole_terminates_past_angle() {
        let env = EnvKind::cart_pole();
        let thr = 12.0 * 2.0 * PI / 360.0;
        let s = env.state_from_physics(&[0.0, 0.0, thr - 1e-4, 0.5]).unwrap();
        let out = env.step(&s, 1, &mut rng()).unwrap();
        assert!(out.state.physics()[2] > thr);
        assert!(out.terminated);
        assert_eq!(out.reward, 1.0);
        assert!(env.step(&out.state, 0, &mut rng()).is_err());
    }

    #[test]
    fn cart_pole_hand_step() {
        let env = EnvKind::cart_pole();
        let s = env.state_from_physics(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        let out = env.step(&s, 1, &mut rng()).unwrap();
        // temp = 10/1.1, theta_acc = -temp / (0.5 * (4/3 - 0.1/1.1))
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        let p = out.state.physics();
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.02 * x_acc).abs() < 1e-15);
        assert_eq!(p[2], 0.0);
        assert!((p[3] - 0.02 * theta_acc).abs() < 1e-15);
    }

    #[test]
    fn acrobot_rest_is_equilibrium() {
        let env = EnvKind::acrobot();
        let s = env.state_from_physics(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        let out = env.step(&s, 1, &mut rng()).unwrap();
        assert!(
            out.state.physics().iter().all(|v| v.abs() < 1e-12),
            "{:?}",
            out.state.physics()
        );
        assert_eq!(out.state.values()[0], 1.0);
        assert_eq!(out.reward, -1.0);
    }

    #[test]
    fn acrobot_torque_moves_links() {
        let env = EnvKind::acrobot();
        let s = env.state_from_physics(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        let out = env.step(&s, 2, &mut rng()).unwrap();
        // positive torque on the second joint accelerates it positively
        assert!(out.state.physics()[3] > 0.0);
        assert!(out.state.physics()[2] < 0.0);
    }

    #[test]
    fn acrobot_goal_and_bounds() {
        let env = EnvKind::acrobot();
        // both links pointing up
        let s = env.state_from_physics(&[PI - 0.01, 0.0, 0.0, 0.0]).unwrap();
        let out = env.step(&s, 1, &mut rng()).unwrap();
        assert!(out.terminated);
        assert_eq!(out.reward, 0.0);

        let fast = env.state_from_physics(&[0.0, 0.0, 100.0, -100.0]).unwrap();
        let out = env.step(&fast, 1, &mut rng()).unwrap();
        let p = out.state.physics();
        assert!(p[2].abs() <= 4.0 * PI && p[3].abs() <= 9.0 * PI);
        assert!(p[0].abs() <= PI && p[1].abs() <= PI);
    }

    #[test]
    fn episode_caps() {
        let mut r = rng();
        for env in [EnvKind::mountain_car(), EnvKind::acrobot()] {
            let mut s = env.reset(&mut r);
            let mut n = 0;
            while !s.done {
                // idle: neither env reaches its goal without pushing
                let out = env.step(&s, 1, &mut r).unwrap();
                s = out.state;
                n += 1;
            }
            assert_eq!(n, env.cap());
        }
        assert_eq!(EnvKind::cart_pole().cap(), 200);
        assert_eq!(EnvKind::acrobot().cap(), 500);
    }

    #[test]
    fn step_errors() {
        let env = EnvKind::cart_pole();
        let s = env.reset(&mut rng());
        assert!(env.step(&s, 2, &mut rng()).is_err());
        let mc = EnvKind::mountain_car().reset(&mut rng());
        assert!(env.step(&mc, 0, &mut rng()).is_err());
        assert!(env.state_from_physics(&[0.0; 3]).is_err());
        assert!(env.state_from_physics(&[f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn names_and_constants() {
        for name in ["cartpole", "MountainCar", "acrobot", "mountain-car"] {
            let env: EnvKind = name.parse().unwrap();
            env.validate().unwrap();
            assert!(env.dump_constants().contains(env.name()));
            assert!(env.dump_constants().contains("cap = "));
        }
        assert!("lunarlander".parse::<EnvKind>().is_err());
        let bad = CartPole {
            tau: 0.0,
            ..CartPole::default()
        };
        assert!(EnvKind::CartPole(bad).validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn replays_are_identical_and_bounded(seed in 0u64..10_000, actions in proptest::collection::vec(0usize..3, 1..300)) {
                for env in [EnvKind::mountain_car(), EnvKind::acrobot(), EnvKind::cart_pole()] {
                    let run = || {
                        let mut r = ChaCha8Rng::seed_from_u64(seed);
                        let mut s = env.reset(&mut r);
                        let mut trace = vec![s];
                        for &a in &actions {
                            if s.done { break; }
                            s = env.step(&s, a % env.n_actions(), &mut r).unwrap().state;
                            trace.push(s);
                        }
                        trace
                    };
                    let a = run();
                    prop_assert_eq!(&a, &run());
                    for s in &a {
                        prop_assert!(s.values().iter().all(|v| v.is_finite()));
                        prop_assert!(s.steps <= env.cap());
                        match &env {
                            EnvKind::MountainCar(_) => {
                                prop_assert!((-1.2..=0.6).contains(&s.values()[0]));
                                prop_assert!(s.values()[1].abs() <= 0.07);
                            }
                            EnvKind::Acrobot(_) => {
                                prop_assert!(s.values()[4].abs() <= 4.0 * PI);
                                prop_assert!(s.values()[5].abs() <= 9.0 * PI);
                            }
                            EnvKind::CartPole(_) => {
                                // one Euler step past the threshold at most
                                prop_assert!(s.values()[0].abs() <= 2.4 + 0.02 * 5.0);
                            }
                        }
                    }
                }
            }
        }
    }
}
