//! Cart-pole balancing, reimplemented in-house so the benchmark needs no
//! external simulator. Standard parameters: gravity 9.8, cart mass 1.0,
//! pole mass 0.1, half-length 0.5, force ±10 N, Euler integration at 0.02 s,
//! termination at |angle| > 12° or |x| > 2.4, episodes capped at 500 steps,
//! reward +1 per step.

use rand::{Rng, RngCore};

use super::{MdpEnv, Step};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CartPoleEnv {
    gravity: f64,
    cart_mass: f64,
    pole_mass: f64,
    half_length: f64,
    force_mag: f64,
    tau: f64,
    angle_threshold: f64,
    x_threshold: f64,
    max_steps: usize,
    state: [f64; 4],
    steps_done: usize,
}

impl Default for CartPoleEnv {
    fn default() -> Self {
        Self::with_params(9.8, 10.0)
    }
}

impl CartPoleEnv {
    pub fn new() -> Self {
        Self::default()
    }

    /// Variant with configurable gravity and force magnitude, for physics
    /// sanity checks.
    pub fn with_params(gravity: f64, force_mag: f64) -> Self {
        Self {
            gravity,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag,
            tau: 0.02,
            angle_threshold: 12.0f64.to_radians(),
            x_threshold: 2.4,
            max_steps: 500,
            state: [0.0; 4],
            steps_done: 0,
        }
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Places the cart in an exact state; sanity tests drive the dynamics
    /// from known configurations.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps_done = 0;
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    fn integrate(&mut self, force: f64) {
        let [x, x_dot, theta, theta_dot] = self.state;
        let total_mass = self.cart_mass + self.pole_mass;
        let pole_mass_length = self.pole_mass * self.half_length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (self.gravity * sin - cos * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        self.state = [
            x + self.tau * x_dot,
            x_dot + self.tau * x_acc,
            theta + self.tau * theta_dot,
            theta_dot + self.tau * theta_acc,
        ];
    }

    fn fallen(&self) -> bool {
        self.state[0].abs() > self.x_threshold || self.state[2].abs() > self.angle_threshold
    }
}

impl MdpEnv for CartPoleEnv {
    fn state_dim(&self) -> usize {
        4
    }

    fn action_count(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        for v in &mut self.state {
            *v = rng.random_range(-0.05..0.05);
        }
        self.steps_done = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize, _rng: &mut dyn RngCore) -> Result<Step> {
        if action > 1 {
            return Err(Error::Env(format!("cart-pole action {action} not in 0..2")));
        }
        let force = if action == 1 {
            self.force_mag
        } else {
            -self.force_mag
        };
        self.integrate(force);
        self.steps_done += 1;
        let terminal = self.fallen();
        let truncated = !terminal && self.steps_done >= self.max_steps;
        Ok(Step {
            state: self.state.to_vec(),
            reward: 1.0,
            terminal,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn balanced_start_survives_alternating_forces() {
        let mut env = CartPoleEnv::new();
        env.set_state([0.0; 4]);
        let mut rng = substream(0, "cartpole");
        let mut survived = 0;
        for i in 0..10 {
            let step = env.step(i % 2, &mut rng).unwrap();
            if step.terminal {
                break;
            }
            survived += 1;
        }
        assert!(survived > 1);
    }

    #[test]
    fn unforced_pole_falls_from_perturbed_start() {
        let mut env = CartPoleEnv::with_params(9.8, 0.0);
        env.set_state([0.0, 0.0, 0.05, 0.0]);
        let mut rng = substream(0, "cartpole");
        let mut fell = false;
        for _ in 0..500 {
            if env.step(0, &mut rng).unwrap().terminal {
                fell = true;
                break;
            }
        }
        assert!(fell, "gravity must topple an uncontrolled pole");
    }

    #[test]
    fn zero_gravity_zero_force_keeps_angle_constant() {
        let mut env = CartPoleEnv::with_params(0.0, 0.0);
        env.set_state([0.0, 0.0, 0.1, 0.0]);
        let mut rng = substream(0, "cartpole");
        for _ in 0..100 {
            env.step(0, &mut rng).unwrap();
            assert!((env.state()[2] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn episode_truncates_at_cap_without_terminal() {
        let mut env = CartPoleEnv::with_params(0.0, 0.0);
        env.set_state([0.0; 4]);
        let mut rng = substream(0, "cartpole");
        for i in 1..=500 {
            let step = env.step(0, &mut rng).unwrap();
            assert!(!step.terminal);
            assert_eq!(step.truncated, i == 500);
        }
    }
}
