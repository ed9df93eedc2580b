//! RockSample(n, k): an n x n grid with k rocks of hidden quality.
//!
//! The agent's position is fully observed; only the rock qualities are
//! uncertain. Sampling a good rock pays +10 and degrades it, sampling a bad
//! rock (or bare ground) pays -10, and exiting past the east edge pays +10
//! and ends the episode. A noisy long-range sensor reads one rock per check;
//! its accuracy decays exponentially with distance.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::pomdp::GenerativePomdp;
use crate::rng;

pub const ACT_NORTH: usize = 0;
pub const ACT_SOUTH: usize = 1;
pub const ACT_EAST: usize = 2;
pub const ACT_WEST: usize = 3;
pub const ACT_SAMPLE: usize = 4;
/// Sense actions are `ACT_SENSE_BASE + rock_index`.
pub const ACT_SENSE_BASE: usize = 5;

/// Agent cell plus one quality bit per rock. `x == n` means exited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RsState {
    pub x: i32,
    pub y: i32,
    pub good: u32,
}

impl RsState {
    pub fn rock_good(&self, j: usize) -> bool {
        self.good >> j & 1 == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsObs {
    /// Non-sense actions observe nothing.
    None,
    Good,
    Bad,
}

#[derive(Debug, Clone)]
pub struct RockSample {
    pub n: i32,
    pub rocks: Vec<(i32, i32)>,
    /// Sensor half-efficiency distance: correct with prob
    /// 0.5 * (1 + exp(-d * ln2 / c)).
    pub sensor_c: f64,
    pub gamma: f64,
    pub max_steps: usize,
}

impl RockSample {
    /// Rock layout drawn without replacement from the grid, fixed by
    /// `layout_seed`; qualities stay random per episode.
    pub fn new(n: usize, k: usize, sensor_c: f64, layout_seed: u64) -> Self {
        assert!(k <= 32, "rock qualities are stored in a u32 bitmask");
        assert!(k <= n * n, "more rocks than grid cells");
        let mut rng = rng::seeded(&[layout_seed, 0x726f_636b_7361_6d70]);
        let mut cells: Vec<(i32, i32)> = (0..n as i32)
            .flat_map(|x| (0..n as i32).map(move |y| (x, y)))
            .collect();
        // Partial Fisher-Yates: the first k entries are the layout.
        for i in 0..k {
            let j = i + rng.gen_range(0..cells.len() - i);
            cells.swap(i, j);
        }
        cells.truncate(k);
        Self {
            n: n as i32,
            rocks: cells,
            sensor_c,
            gamma: 0.95,
            max_steps: 100,
        }
    }

    pub fn rock_count(&self) -> usize {
        self.rocks.len()
    }

    /// Probability the sensor reads rock `j` correctly from `(x, y)`.
    pub fn sense_accuracy(&self, x: i32, y: i32, j: usize) -> f64 {
        let (rx, ry) = self.rocks[j];
        let d = (((x - rx).pow(2) + (y - ry).pow(2)) as f64).sqrt();
        0.5 * (1.0 + (-d * std::f64::consts::LN_2 / self.sensor_c).exp())
    }

    /// |S| = n^2 * 2^k.
    pub fn state_space_size(&self) -> u64 {
        (self.n as u64 * self.n as u64) << self.rock_count()
    }

    fn rock_at(&self, x: i32, y: i32) -> Option<usize> {
        self.rocks.iter().position(|&(rx, ry)| rx == x && ry == y)
    }
}

impl GenerativePomdp for RockSample {
    type State = RsState;
    type Observation = RsObs;

    fn action_count(&self) -> usize {
        ACT_SENSE_BASE + self.rock_count()
    }

    fn discount(&self) -> f64 {
        self.gamma
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> RsState {
        let mut good = 0u32;
        for j in 0..self.rock_count() {
            if rng.gen::<bool>() {
                good |= 1 << j;
            }
        }
        RsState { x: 0, y: 0, good }
    }

    fn step(&self, s: &RsState, action: usize, _rng: &mut ChaCha8Rng) -> RsState {
        let mut next = *s;
        match action {
            ACT_NORTH => next.y = (s.y + 1).min(self.n - 1),
            ACT_SOUTH => next.y = (s.y - 1).max(0),
            // East past the last column exits the map.
            ACT_EAST => next.x = (s.x + 1).min(self.n),
            ACT_WEST => next.x = (s.x - 1).max(0),
            ACT_SAMPLE => {
                if let Some(j) = self.rock_at(s.x, s.y) {
                    next.good &= !(1 << j);
                }
            }
            _ => {
                let j = action - ACT_SENSE_BASE;
                assert!(j < self.rock_count(), "sense action out of range");
            }
        }
        next
    }

    fn observe(&self, action: usize, next: &RsState, rng: &mut ChaCha8Rng) -> RsObs {
        if action < ACT_SENSE_BASE {
            return RsObs::None;
        }
        let j = action - ACT_SENSE_BASE;
        let p = self.sense_accuracy(next.x, next.y, j);
        let truth = next.rock_good(j);
        let correct = rng.gen::<f64>() < p;
        match truth == correct {
            true => RsObs::Good,
            false => RsObs::Bad,
        }
    }

    fn reward(&self, s: &RsState, action: usize, _next: &RsState) -> f64 {
        match action {
            ACT_SAMPLE => match self.rock_at(s.x, s.y) {
                Some(j) if s.rock_good(j) => 10.0,
                _ => -10.0,
            },
            ACT_EAST if s.x == self.n - 1 => 10.0,
            _ => 0.0,
        }
    }

    fn observation_density(&self, obs: &RsObs, action: usize, next: &RsState) -> f64 {
        if action < ACT_SENSE_BASE {
            return if *obs == RsObs::None { 1.0 } else { 0.0 };
        }
        let j = action - ACT_SENSE_BASE;
        let p = self.sense_accuracy(next.x, next.y, j);
        let says_good = match obs {
            RsObs::Good => true,
            RsObs::Bad => false,
            RsObs::None => return 0.0,
        };
        if says_good == next.rock_good(j) {
            p
        } else {
            1.0 - p
        }
    }

    fn is_terminal(&self, s: &RsState) -> bool {
        s.x >= self.n
    }

    fn feature_dim(&self) -> usize {
        self.rock_count()
    }

    fn state_features(&self, s: &RsState, out: &mut Vec<f64>) {
        for j in 0..self.rock_count() {
            out.push(if s.rock_good(j) { 1.0 } else { 0.0 });
        }
    }

    /// Position is fully observed and identical across particles.
    fn appended_dim(&self) -> usize {
        2
    }

    fn appended_features(&self, anchor: &RsState, out: &mut Vec<f64>) {
        out.push(anchor.x as f64);
        out.push(anchor.y as f64);
    }

    fn observation_features(&self, obs: &RsObs, out: &mut Vec<f64>) {
        out.push(match obs {
            RsObs::None => 0.0,
            RsObs::Good => 1.0,
            RsObs::Bad => 2.0,
        });
    }
}
