//! Synthetic populations and day profiles for experiments.
//!
//! Draws are split into a "shape" (caps and a uniform variate per user) and
//! a scale (`omega_f`), so sweeping `omega_f` with a fixed seed rescales the
//! same population instead of drawing a new one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Instance, User};

pub const DEFAULT_A: f64 = 3.0;
pub const DEFAULT_B: f64 = 0.02;
pub const DEFAULT_USERS: usize = 20;
pub const CAP_RANGE: (f64, f64) = (5.0, 50.0);
pub const HORIZON: usize = 24;

/// Range of `omega / omega_f` a population is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OmegaFamily {
    /// `[0.5, 1.5] * omega_f` (the morning event).
    Narrow,
    /// `[0.05, 1.5] * omega_f` (the evening event).
    Wide,
}

impl OmegaFamily {
    pub fn range(self) -> (f64, f64) {
        match self {
            OmegaFamily::Narrow => (0.5, 1.5),
            OmegaFamily::Wide => (0.05, 1.5),
        }
    }

    /// Slot 11 uses the narrow family; every other event slot the wide one.
    pub fn for_slot(slot: usize) -> Self {
        if slot == 11 {
            OmegaFamily::Narrow
        } else {
            OmegaFamily::Wide
        }
    }
}

/// Seed-determined population shape, independent of `omega_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub caps: Vec<f64>,
    pub omega_draws: Vec<f64>,
}

impl Population {
    pub fn draw(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut caps = Vec::with_capacity(n);
        let mut omega_draws = Vec::with_capacity(n);
        for _ in 0..n {
            caps.push(rng.gen_range(CAP_RANGE.0..=CAP_RANGE.1));
            omega_draws.push(rng.gen::<f64>());
        }
        Self { caps, omega_draws }
    }

    pub fn omegas(&self, family: OmegaFamily, omega_f: f64) -> Vec<f64> {
        let (lo, hi) = family.range();
        self.omega_draws.iter().map(|u| omega_f * (lo + (hi - lo) * u)).collect()
    }

    /// Instance whose users shed up to their whole baseline. When the drawn
    /// caps add up to more than `a / 2b`, they are scaled down uniformly so
    /// the reward's parameter condition `a >= 2bL` holds.
    pub fn instance(&self, family: OmegaFamily, omega_f: f64, a: f64, b: f64) -> Instance {
        let limit = a / (2.0 * b);
        let total: f64 = self.caps.iter().sum();
        let scale = if total > limit { limit / total } else { 1.0 };
        self.instance_with_loads(family, omega_f, a, b, &self.caps.iter().map(|c| c * scale).collect::<Vec<_>>())
    }

    /// Instance for an event slot with aggregate baseline `slot_load`, shared
    /// among users in proportion to their drawn caps.
    pub fn instance_for_load(&self, family: OmegaFamily, omega_f: f64, a: f64, b: f64, slot_load: f64) -> Instance {
        let total: f64 = self.caps.iter().sum();
        let loads: Vec<f64> = self.caps.iter().map(|c| slot_load * c / total).collect();
        self.instance_with_loads(family, omega_f, a, b, &loads)
    }

    fn instance_with_loads(&self, family: OmegaFamily, omega_f: f64, a: f64, b: f64, loads: &[f64]) -> Instance {
        let users = self
            .omegas(family, omega_f)
            .into_iter()
            .zip(loads)
            .enumerate()
            .map(|(i, (omega, &load))| User::new(i as u32, omega, load, load))
            .collect();
        Instance::new(users, a, b)
    }
}

/// Convenience: random instance with `n` users from the given family.
pub fn random_instance(n: usize, family: OmegaFamily, omega_f: f64, seed: u64) -> Instance {
    Population::draw(n, seed).instance(family, omega_f, DEFAULT_A, DEFAULT_B)
}

/// Aggregate baseline consumption over a day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    pub loads: Vec<f64>,
    pub dr_events: Vec<usize>,
}

impl DayProfile {
    /// Residential-looking curve with peaks at the event slots. Peak loads
    /// sit at `peak`; the rest of the day stays between 40% and 80% of it.
    pub fn synthesize(seed: u64, dr_events: &[usize], peak: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let loads = (0..HORIZON)
            .map(|t| {
                if dr_events.contains(&t) {
                    return peak;
                }
                let h = t as f64;
                let morning = (-(h - 10.5).powi(2) / 8.0).exp();
                let evening = (-(h - 17.5).powi(2) / 6.0).exp();
                let shape = 0.4 + 0.3 * morning.max(evening) + rng.gen_range(0.0..0.1);
                peak * shape.min(0.8)
            })
            .collect();
        Self { loads, dr_events: dr_events.to_vec() }
    }

    pub fn is_valid(&self) -> bool {
        self.loads.len() == HORIZON && self.loads.iter().all(|&l| l > 0.0)
    }
}
