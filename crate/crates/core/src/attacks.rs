//! Attack transformations for ACC vehicles.
//!
//! * Type I (`control`): an additive random signal on the commanded acceleration.
//! * Type II (`sensor`): additive false data on the measured gap and relative speed.
//! * Type III (`dos`): the gap and relative-speed measurements arrive `omega` seconds late.
//!
//! The transformations here are deterministic; random draws come from an
//! [`AttackNoise`] stream owned by the simulator, one per vehicle.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::car_following::{clamp_accel, AccelBounds, CfInput};
use crate::error::{Error, Result};

/// Smallest gap a sensor can report (m).
pub const GAP_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    /// Type I: malicious manipulation of the control command.
    Control,
    /// Type II: false data injection on sensor measurements.
    Sensor,
    /// Type III: denial of service delaying sensor measurements.
    Dos,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::None,
        AttackKind::Control,
        AttackKind::Sensor,
        AttackKind::Dos,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Control => "control",
            AttackKind::Sensor => "sensor",
            AttackKind::Dos => "dos",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(AttackKind::None),
            "control" => Ok(AttackKind::Control),
            "sensor" => Ok(AttackKind::Sensor),
            "dos" => Ok(AttackKind::Dos),
            other => Err(Error::Config(format!(
                "attack must be one of none|control|sensor|dos, got '{other}'"
            ))),
        }
    }
}

/// Attack type, its statistical parameters, active window and target share.
///
/// Only the parameters relevant to `kind` are consulted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Standard deviation of the acceleration injection (m/s²).
    pub xi_std: f64,
    /// Standard deviation of the gap injection (m).
    pub lambda1_std: f64,
    /// Standard deviation of the relative-speed injection (m/s).
    pub lambda2_std: f64,
    /// Measurement delay (s).
    pub omega: f64,
    pub active_start: f64,
    /// `None` means active until the end of the run.
    pub active_end: Option<f64>,
    /// Fraction of ACC vehicles attacked.
    pub target_fraction: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec::for_kind(AttackKind::None)
    }
}

impl AttackSpec {
    /// Default parameters for an attack kind: noise std-devs of `sqrt(5)`, a 1 s delay,
    /// half of the ACC fleet targeted. DoS is active from 80 s to 130 s, the others
    /// for the whole run.
    pub fn for_kind(kind: AttackKind) -> Self {
        let (active_start, active_end) = match kind {
            AttackKind::Dos => (80.0, Some(130.0)),
            _ => (0.0, None),
        };
        AttackSpec {
            kind,
            xi_std: 5f64.sqrt(),
            lambda1_std: 5f64.sqrt(),
            lambda2_std: 5f64.sqrt(),
            omega: 1.0,
            active_start,
            active_end,
            target_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("xi_std", self.xi_std),
            ("lambda1_std", self.lambda1_std),
            ("lambda2_std", self.lambda2_std),
            ("omega", self.omega),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {value}")));
            }
        }
        if !(0.0..=1.0).contains(&self.target_fraction) {
            return Err(Error::Config(format!(
                "target_fraction must be in [0,1], got {}",
                self.target_fraction
            )));
        }
        if !self.active_start.is_finite() {
            return Err(Error::Config("active_start must be finite".into()));
        }
        if let Some(end) = self.active_end {
            if !(end >= self.active_start) {
                return Err(Error::Config(format!(
                    "active window must satisfy start <= end, got [{}, {end}]",
                    self.active_start
                )));
            }
        }
        Ok(())
    }

    /// Whether the attack is in effect at simulation time `t`.
    pub fn is_active(&self, t: f64) -> bool {
        self.kind != AttackKind::None
            && t >= self.active_start
            && self.active_end.is_none_or(|end| t <= end)
    }

    /// Whether `[t0, t1]` intersects the active interval.
    pub fn overlaps(&self, t0: f64, t1: f64) -> bool {
        self.kind != AttackKind::None
            && t1 >= self.active_start
            && self.active_end.is_none_or(|end| t0 <= end)
    }
}

/// Type I: add the injected signal and clamp to the physical bounds.
pub fn type1_accel(a_clean: f64, xi: f64, bounds: &AccelBounds) -> f64 {
    clamp_accel(a_clean + xi, bounds)
}

/// Type II: corrupt gap and relative speed; the own-speed channel is untouched.
/// The corrupted gap never drops below [`GAP_FLOOR`].
pub fn type2_measurement(input: &CfInput, l1: f64, l2: f64) -> CfInput {
    CfInput {
        gap: (input.gap + l1).max(GAP_FLOOR),
        speed: input.speed,
        rel_speed: input.rel_speed + l2,
    }
}

/// A stored `(gap, rel_speed)` sensor sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub gap: f64,
    pub rel_speed: f64,
}

/// Fixed-rate history of one vehicle's sensor samples, oldest first.
#[derive(Debug, Clone)]
pub struct MeasurementHistory {
    dt: f64,
    capacity: usize,
    /// Step index of the first element of `samples`.
    first_step: usize,
    samples: VecDeque<Measurement>,
}

impl MeasurementHistory {
    /// A history able to look back `max_delay` seconds at step `dt`.
    pub fn new(dt: f64, max_delay: f64) -> Self {
        let capacity = (max_delay / dt).ceil() as usize + 2;
        MeasurementHistory {
            dt,
            capacity,
            first_step: 0,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends the sample taken at the next step.
    pub fn push(&mut self, sample: Measurement) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
            self.first_step += 1;
        }
        self.samples.push_back(sample);
    }

    /// Step index of the newest sample.
    pub fn latest_step(&self) -> Option<usize> {
        (!self.samples.is_empty()).then(|| self.first_step + self.samples.len() - 1)
    }

    pub fn latest(&self) -> Option<Measurement> {
        self.samples.back().copied()
    }

    pub fn oldest(&self) -> Option<Measurement> {
        self.samples.front().copied()
    }

    fn at_step(&self, step: usize) -> Option<Measurement> {
        step.checked_sub(self.first_step)
            .and_then(|i| self.samples.get(i))
            .copied()
    }
}

/// Type III: the sample recorded at `t - omega`, rounded to the nearest stored step.
/// Before the history reaches back that far, the oldest sample is returned.
pub fn type3_measurement(history: &MeasurementHistory, t: f64, omega: f64) -> Result<Measurement> {
    let latest = history
        .latest_step()
        .ok_or_else(|| Error::State("measurement history is empty".into()))?;
    if omega <= 0.0 {
        return Ok(history.latest().expect("non-empty"));
    }
    let target = ((t - omega) / history.dt).round();
    if target < history.first_step as f64 {
        return Ok(history.oldest().expect("non-empty"));
    }
    let step = (target as usize).min(latest);
    Ok(history.at_step(step).expect("step within stored range"))
}

/// Per-vehicle attack random stream, independent of the initialization stream.
#[derive(Debug, Clone)]
pub struct AttackNoise {
    rng: ChaCha20Rng,
    xi: Normal<f64>,
    lambda1: Normal<f64>,
    lambda2: Normal<f64>,
}

impl AttackNoise {
    /// Stream ids below this offset are reserved for non-attack randomness.
    const STREAM_OFFSET: u64 = 1 << 32;

    pub fn new(spec: &AttackSpec, seed: u64, vehicle_id: usize) -> Result<Self> {
        let normal = |std: f64| {
            Normal::new(0.0, std).map_err(|e| Error::Config(format!("bad attack std-dev {std}: {e}")))
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(Self::STREAM_OFFSET + vehicle_id as u64);
        Ok(AttackNoise {
            rng,
            xi: normal(spec.xi_std)?,
            lambda1: normal(spec.lambda1_std)?,
            lambda2: normal(spec.lambda2_std)?,
        })
    }

    pub fn draw_xi(&mut self) -> f64 {
        self.xi.sample(&mut self.rng)
    }

    pub fn draw_lambdas(&mut self) -> (f64, f64) {
        let l1 = self.lambda1.sample(&mut self.rng);
        let l2 = self.lambda2.sample(&mut self.rng);
        (l1, l2)
    }
}
