//! 1-D light-dark localization.
//!
//! The agent moves along a line and receives position observations whose
//! noise shrinks near a light region. It must localize there, return to the
//! origin, and declare stop: +100 when |y| <= 1, otherwise -100. Moves are
//! deterministic unit shifts with zero reward.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::pomdp::GenerativePomdp;

pub const ACT_DOWN: usize = 0;
pub const ACT_STOP: usize = 1;
pub const ACT_UP: usize = 2;

/// Position plus a latch set by the stop action; only `y` is observable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdState {
    pub y: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone)]
pub struct LightDark {
    /// Center of the light region.
    pub light_y: f64,
    /// Observation noise: sigma(y) = slope * |y - light_y| + floor.
    pub sigma_slope: f64,
    pub sigma_floor: f64,
    pub gamma: f64,
    pub max_steps: usize,
    pub init_mean: f64,
    pub init_std: f64,
    /// Rejection bounds on the initial position.
    pub truncate: Option<(f64, f64)>,
}

impl LightDark {
    /// Light at 5 with gentler noise growth.
    pub fn ld5() -> Self {
        Self {
            light_y: 5.0,
            sigma_slope: 1.0 / std::f64::consts::SQRT_2,
            sigma_floor: 1e-2,
            gamma: 0.9,
            max_steps: 60,
            init_mean: 2.0,
            init_std: 2.0,
            truncate: None,
        }
    }

    /// Light at 10; noise grows linearly and nearly vanishes in the light.
    pub fn ld10() -> Self {
        Self {
            light_y: 10.0,
            sigma_slope: 1.0,
            sigma_floor: 1e-4,
            gamma: 0.9,
            max_steps: 60,
            init_mean: 2.0,
            init_std: 2.0,
            truncate: Some((-3.0, 12.0)),
        }
    }

    pub fn sigma(&self, y: f64) -> f64 {
        self.sigma_slope * (y - self.light_y).abs() + self.sigma_floor
    }
}

impl GenerativePomdp for LightDark {
    type State = LdState;
    type Observation = f64;

    fn action_count(&self) -> usize {
        3
    }

    fn discount(&self) -> f64 {
        self.gamma
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> LdState {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let y = self.init_mean + self.init_std * z;
            match self.truncate {
                Some((lo, hi)) if y < lo || y > hi => continue,
                _ => return LdState { y, stopped: false },
            }
        }
    }

    fn step(&self, s: &LdState, action: usize, _rng: &mut ChaCha8Rng) -> LdState {
        match action {
            ACT_DOWN => LdState {
                y: s.y - 1.0,
                stopped: s.stopped,
            },
            ACT_STOP => LdState {
                y: s.y,
                stopped: true,
            },
            ACT_UP => LdState {
                y: s.y + 1.0,
                stopped: s.stopped,
            },
            _ => panic!("light-dark action out of range: {action}"),
        }
    }

    fn observe(&self, _action: usize, next: &LdState, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        next.y + self.sigma(next.y) * z
    }

    fn reward(&self, s: &LdState, action: usize, _next: &LdState) -> f64 {
        if action == ACT_STOP {
            if s.y.abs() <= 1.0 {
                100.0
            } else {
                -100.0
            }
        } else {
            0.0
        }
    }

    fn observation_density(&self, obs: &f64, _action: usize, next: &LdState) -> f64 {
        let sigma = self.sigma(next.y);
        let z = (obs - next.y) / sigma;
        (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn observation_log_density(&self, obs: &f64, _action: usize, next: &LdState) -> f64 {
        let sigma = self.sigma(next.y);
        let z = (obs - next.y) / sigma;
        -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    fn is_terminal(&self, s: &LdState) -> bool {
        s.stopped
    }

    fn feature_dim(&self) -> usize {
        1
    }

    fn state_features(&self, s: &LdState, out: &mut Vec<f64>) {
        out.push(s.y);
    }

    fn observation_features(&self, obs: &f64, out: &mut Vec<f64>) {
        out.push(*obs);
    }
}
