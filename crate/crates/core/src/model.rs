//! Market primitives: the operator's reward curve, user discomfort, and the
//! event-slot instance the mechanisms run on.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::numeric::exact_sum;

/// Relative slack used when checking `a >= 2bL`, so instances scaled to sit
/// exactly on the boundary are not rejected over rounding.
const PARAM_CONDITION_SLACK: f64 = 1e-12;

/// Concave reward `R(D) = a*D - b*D^2` offered by the operator for an
/// aggregate reduction `D` in `[0, L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub a: f64,
    pub b: f64,
    /// Aggregate baseline consumption of the event slot; the domain bound of `R`.
    pub l: f64,
}

impl RewardParams {
    pub fn new(a: f64, b: f64, l: f64) -> Self {
        Self { a, b, l }
    }

    /// Highest per-unit reward the operator ever offers: `R'(0) = a`.
    pub fn lambda_max(&self) -> f64 {
        self.a
    }

    fn check_domain(&self, d: f64) -> Result<()> {
        if !(0.0..=self.l).contains(&d) {
            return Err(input(format!("reduction {d} outside [0, {}]", self.l)));
        }
        Ok(())
    }

    pub fn total(&self, d: f64) -> Result<f64> {
        self.check_domain(d)?;
        Ok(self.total_unchecked(d))
    }

    pub(crate) fn total_unchecked(&self, d: f64) -> f64 {
        self.a * d - self.b * d * d
    }

    pub fn marginal(&self, d: f64) -> Result<f64> {
        self.check_domain(d)?;
        Ok(self.a - 2.0 * self.b * d)
    }

    /// Reduction the operator wants at per-unit reward `lambda`: the inverse
    /// of the marginal reward, clamped to `[0, L]`.
    pub fn desired_reduction(&self, lambda: f64) -> Result<f64> {
        if self.b == 0.0 {
            return Err(Error::DegenerateDemand);
        }
        if !(0.0..=self.a).contains(&lambda) {
            return Err(input(format!("reward {lambda} outside [0, {}]", self.a)));
        }
        Ok(self.demand_at(lambda))
    }

    /// Unchecked desired reduction; callers guarantee `b > 0`.
    pub(crate) fn demand_at(&self, lambda: f64) -> f64 {
        ((self.a - lambda) / (2.0 * self.b)).clamp(0.0, self.l)
    }

    pub(crate) fn require_curvature(&self) -> Result<()> {
        if self.b > 0.0 {
            Ok(())
        } else {
            Err(Error::DegenerateDemand)
        }
    }
}

/// Free-function form of [`RewardParams::total`].
pub fn reward_total(d: f64, params: &RewardParams) -> Result<f64> {
    params.total(d)
}

pub fn marginal_reward(d: f64, params: &RewardParams) -> Result<f64> {
    params.marginal(d)
}

pub fn desired_reduction(lambda: f64, params: &RewardParams) -> Result<f64> {
    params.desired_reduction(lambda)
}

/// A user's private cost of shedding load.
///
/// Implementations must satisfy `d(0) = 0`, be non-decreasing and convex on
/// `q >= 0`.
pub trait Discomfort {
    fn cost(&self, q: f64) -> f64;

    /// Derivative of [`Discomfort::cost`].
    fn marginal(&self, q: f64) -> f64;

    /// Maximizer of `lambda*q - cost(q)` over `[0, q_max]`, smallest on ties.
    fn best_response(&self, lambda: f64, q_max: f64) -> f64 {
        if q_max <= 0.0 || lambda <= self.marginal(0.0) {
            return 0.0;
        }
        if self.marginal(q_max) <= lambda {
            return q_max;
        }
        crate::numeric::bisect_increasing(0.0, q_max, 1e-12, |q| self.marginal(q) - lambda)
    }
}

/// `d(q) = omega * q^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticDiscomfort {
    pub omega: f64,
}

impl QuadraticDiscomfort {
    pub fn new(omega: f64) -> Self {
        Self { omega }
    }
}

impl Discomfort for QuadraticDiscomfort {
    // q = 0 costs nothing even for an infinitely inelastic user.
    fn cost(&self, q: f64) -> f64 {
        if q == 0.0 {
            return 0.0;
        }
        self.omega * q * q
    }

    fn marginal(&self, q: f64) -> f64 {
        if q == 0.0 {
            return 0.0;
        }
        2.0 * self.omega * q
    }

    fn best_response(&self, lambda: f64, q_max: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        (lambda / (2.0 * self.omega)).clamp(0.0, q_max)
    }
}

/// The discomfort model carried by users and misreporting agents.
pub type DiscomfortModel = QuadraticDiscomfort;

pub fn discomfort(q: f64, model: &impl Discomfort) -> Result<f64> {
    if q < 0.0 || q.is_nan() {
        return Err(input(format!("negative reduction {q}")));
    }
    Ok(model.cost(q))
}

/// Box `[0, q_max]` of admissible reductions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub q_max: f64,
}

impl FeasibleSet {
    pub fn new(q_max: f64) -> Self {
        Self { q_max }
    }

    pub fn contains(&self, q: f64) -> bool {
        (0.0..=self.q_max).contains(&q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: UserId,
    pub discomfort: DiscomfortModel,
    pub feasible: FeasibleSet,
    pub baseline_load: f64,
}

impl User {
    pub fn new(id: u32, omega: f64, q_max: f64, baseline_load: f64) -> Self {
        Self {
            id: UserId(id),
            discomfort: QuadraticDiscomfort::new(omega),
            feasible: FeasibleSet::new(q_max),
            baseline_load,
        }
    }
}

/// One DR event: the users, the operator's reward curve and the slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub users: Vec<User>,
    pub reward: RewardParams,
    pub timeslot: usize,
    pub slot_duration_hours: f64,
}

impl Instance {
    /// Builds an instance whose reward domain bound `L` is the users'
    /// aggregate baseline load.
    pub fn new(users: Vec<User>, a: f64, b: f64) -> Self {
        let l = exact_sum(&users.iter().map(|u| u.baseline_load).collect::<Vec<_>>());
        Self {
            users,
            reward: RewardParams::new(a, b, l),
            timeslot: 0,
            slot_duration_hours: 1.0,
        }
    }

    pub fn with_timeslot(mut self, timeslot: usize) -> Self {
        self.timeslot = timeslot;
        self
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Copy of the instance without user `index`; `L` shrinks accordingly.
    pub fn without(&self, index: usize) -> Instance {
        let mut users = self.users.clone();
        users.remove(index);
        let mut out = Instance::new(users, self.reward.a, self.reward.b);
        out.timeslot = self.timeslot;
        out.slot_duration_hours = self.slot_duration_hours;
        out
    }

    pub fn validate(&self) -> Vec<String> {
        validate_instance(self)
    }

    /// Fails with every violation when the instance is not valid.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInstance(report))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<InstanceFile> {
        InstanceFile::load(path)
    }
}

/// Checks every invariant of the instance and its parts.
///
/// Returns one human-readable line per violation; empty means valid.
pub fn validate_instance(instance: &Instance) -> Vec<String> {
    let mut report = Vec::new();
    let r = &instance.reward;
    if instance.users.is_empty() {
        report.push("instance has no users".to_owned());
    }
    if !(r.a > 0.0) {
        report.push(format!("reward parameter a must be positive (a = {})", r.a));
    }
    if !(r.b >= 0.0) {
        report.push(format!("reward parameter b must be nonnegative (b = {})", r.b));
    }
    if !(r.l > 0.0) {
        report.push(format!("aggregate baseline L must be positive (L = {})", r.l));
    }
    if r.a < 2.0 * r.b * r.l * (1.0 - PARAM_CONDITION_SLACK) {
        report.push(format!(
            "parameter condition a >= 2bL violated: a = {}, 2bL = {}",
            r.a,
            2.0 * r.b * r.l
        ));
    }
    let baseline_sum = exact_sum(&instance.users.iter().map(|u| u.baseline_load).collect::<Vec<_>>());
    if (baseline_sum - r.l).abs() > 1e-9 * r.l.abs().max(1.0) {
        report.push(format!("L = {} differs from aggregate baseline {baseline_sum}", r.l));
    }
    if !(instance.slot_duration_hours > 0.0) {
        report.push(format!("slot duration must be positive ({})", instance.slot_duration_hours));
    }
    let mut seen = std::collections::BTreeSet::new();
    for u in &instance.users {
        if !seen.insert(u.id) {
            report.push(format!("duplicate user id {}", u.id));
        }
        if !(u.discomfort.omega > 0.0) {
            report.push(format!("user {}: omega must be positive (omega = {})", u.id, u.discomfort.omega));
        }
        if !(u.feasible.q_max >= 0.0) {
            report.push(format!("user {}: q_max must be nonnegative (q_max = {})", u.id, u.feasible.q_max));
        }
        if u.feasible.q_max > u.baseline_load {
            report.push(format!(
                "user {}: q_max {} exceeds baseline load {}",
                u.id, u.feasible.q_max, u.baseline_load
            ));
        }
    }
    report
}

/// On-disk instance document.
///
/// ```json
/// { "reward": {"a": 3.0, "b": 0.02}, "slot_duration_hours": 1.0,
///   "users": [{"id": 0, "omega": 0.1, "q_max": 10.0, "baseline_load": 12.0}],
///   "timeslots": 24, "dr_events": [11, 17] }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub reward: RewardSpec,
    #[serde(default = "default_slot_duration")]
    pub slot_duration_hours: f64,
    pub users: Vec<UserSpec>,
    #[serde(default = "default_timeslots")]
    pub timeslots: usize,
    #[serde(default)]
    pub dr_events: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub id: u32,
    pub omega: f64,
    pub q_max: f64,
    pub baseline_load: f64,
}

fn default_slot_duration() -> f64 {
    1.0
}

fn default_timeslots() -> usize {
    24
}

impl InstanceFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| input(format!("malformed instance document: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance documents always serialize")
    }

    /// The instance for the first DR event (slot 0 when none is listed).
    pub fn instance(&self) -> Instance {
        let users = self
            .users
            .iter()
            .map(|u| User::new(u.id, u.omega, u.q_max, u.baseline_load))
            .collect();
        let mut inst = Instance::new(users, self.reward.a, self.reward.b)
            .with_timeslot(self.dr_events.first().copied().unwrap_or(0));
        inst.slot_duration_hours = self.slot_duration_hours;
        inst
    }

    pub fn from_instance(instance: &Instance) -> Self {
        Self {
            reward: RewardSpec { a: instance.reward.a, b: instance.reward.b },
            slot_duration_hours: instance.slot_duration_hours,
            users: instance
                .users
                .iter()
                .map(|u| UserSpec {
                    id: u.id.0,
                    omega: u.discomfort.omega,
                    q_max: u.feasible.q_max,
                    baseline_load: u.baseline_load,
                })
                .collect(),
            timeslots: 24,
            dr_events: vec![instance.timeslot],
        }
    }
}
