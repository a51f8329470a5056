//! Intelligent driver model (IDM) acceleration for a single follower.
//!
//! The model maps the follower's gap `s`, speed `v` and relative speed
//! `dv = v_lead - v` to an acceleration
//!
//! ```text
//! f = alpha * (1 - (v / v_d)^delta - (s_hat / s)^2)
//! s_hat = eta + tau * v - v * dv / (2 * sqrt(alpha * beta))
//! ```
//!
//! Gap sanitization is the caller's job: a non-positive gap is rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six IDM parameters for one driver class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Maximum acceleration (m/s²).
    pub alpha: f64,
    /// Comfortable deceleration (m/s²).
    pub beta: f64,
    /// Acceleration exponent.
    pub delta: f64,
    /// Jam distance (m).
    pub eta: f64,
    /// Time gap (s).
    pub tau: f64,
    /// Desired speed (m/s).
    pub v_d: f64,
}

impl IdmParams {
    /// Commercially available ACC vehicles.
    pub const ACC: IdmParams = IdmParams {
        alpha: 0.6,
        beta: 5.2,
        delta: 15.5,
        eta: 6.3,
        tau: 2.2,
        v_d: 44.1,
    };

    /// Human drivers.
    pub const HUMAN: IdmParams = IdmParams {
        alpha: 1.06,
        beta: 2.0,
        delta: 4.0,
        eta: 3.4,
        tau: 1.26,
        v_d: 30.0,
    };

    pub fn new(alpha: f64, beta: f64, delta: f64, eta: f64, tau: f64, v_d: f64) -> Result<Self> {
        let params = IdmParams {
            alpha,
            beta,
            delta,
            eta,
            tau,
            v_d,
        };
        params.validate()?;
        Ok(params)
    }

    /// Looks up a preset by its config name (`acc` or `human`).
    pub fn preset(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "acc" => Ok(Self::ACC),
            "human" | "hv" => Ok(Self::HUMAN),
            other => Err(Error::Config(format!("unknown IDM preset '{other}'"))),
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.alpha, self.beta, self.delta, self.eta, self.tau, self.v_d]
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["alpha", "beta", "delta", "eta", "tau", "v_d"];
        for (name, value) in names.iter().zip(self.as_array()) {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "IDM parameter {name} must be finite and > 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Physical acceleration limits `[min_accel, max_accel]` applied to every vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelBounds {
    pub min_accel: f64,
    pub max_accel: f64,
}

impl Default for AccelBounds {
    fn default() -> Self {
        AccelBounds {
            min_accel: -8.0,
            max_accel: 3.0,
        }
    }
}

impl AccelBounds {
    pub fn new(min_accel: f64, max_accel: f64) -> Result<Self> {
        let bounds = AccelBounds {
            min_accel,
            max_accel,
        };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_accel < 0.0 && 0.0 < self.max_accel {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "acceleration bounds must satisfy min < 0 < max, got [{}, {}]",
                self.min_accel, self.max_accel
            )))
        }
    }

    pub fn contains(&self, a: f64) -> bool {
        self.min_accel <= a && a <= self.max_accel
    }
}

/// Car-following measurement for one follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfInput {
    /// Gap to the leader (m).
    pub gap: f64,
    /// Own speed (m/s).
    pub speed: f64,
    /// Leader speed minus own speed (m/s).
    pub rel_speed: f64,
}

impl CfInput {
    pub fn new(gap: f64, speed: f64, rel_speed: f64) -> Self {
        CfInput {
            gap,
            speed,
            rel_speed,
        }
    }
}

/// Desired dynamic gap `s_hat(v, dv)`. Negative values are allowed.
pub fn desired_gap(params: &IdmParams, speed: f64, rel_speed: f64) -> f64 {
    params.eta + params.tau * speed
        - speed * rel_speed / (2.0 * (params.alpha * params.beta).sqrt())
}

/// Rounded sum and its exact rounding error.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Rounded product and its exact rounding error.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `(x + x_lo) / d` as a rounded quotient plus a correction term.
fn div_compensated(x: f64, x_lo: f64, d: f64) -> (f64, f64) {
    let q = x / d;
    (q, ((-q).mul_add(d, x) + x_lo) / d)
}

/// Unclamped IDM acceleration.
///
/// Near equilibrium the terms of `1 - (v/v_d)^delta - (s_hat/s)^2` cancel, so each is
/// carried with its rounding error and the result keeps full relative precision
/// there instead of losing a dozen bits.
pub fn idm_accel(params: &IdmParams, input: &CfInput) -> Result<f64> {
    if !(input.gap > 0.0) {
        return Err(Error::Domain(format!(
            "gap must be > 0 for IDM evaluation, got {}",
            input.gap
        )));
    }
    let (v, dv, s) = (input.speed, input.rel_speed, input.gap);

    let (ratio, ratio_lo) = div_compensated(v, 0.0, params.v_d);
    let (free, free_lo) = if ratio == 0.0 {
        (0.0, 0.0)
    } else {
        let head = ratio.powf(params.delta);
        (head, head * params.delta * ratio_lo / ratio)
    };

    // s_hat = eta + tau v - v dv / (2 sqrt(alpha beta))
    let (ab, ab_lo) = two_prod(params.alpha, params.beta);
    let root = ab.sqrt();
    let root_lo = ((-root).mul_add(root, ab) + ab_lo) / (2.0 * root);
    let (m, m_lo) = two_prod(v, dv);
    let q = m / (2.0 * root);
    let q_lo = ((-q).mul_add(2.0 * root, m) + m_lo - q * 2.0 * root_lo) / (2.0 * root);
    let (tv, tv_lo) = two_prod(params.tau, v);
    let (x, e1) = two_sum(params.eta, tv);
    let (s_hat, e2) = two_sum(x, -q);
    let s_hat_lo = e1 + e2 + tv_lo - q_lo;

    let (r, r_lo) = div_compensated(s_hat, s_hat_lo, s);
    let (rr, rr_err) = two_prod(r, r);
    let rr_lo = rr_err + 2.0 * r * r_lo;
    let (t, e3) = two_sum(1.0, -free);
    let (t, e4) = two_sum(t, -rr);
    Ok(params.alpha * (t + (e3 + e4 - free_lo - rr_lo)))
}

/// Clamps an acceleration into the physical bounds.
pub fn clamp_accel(a: f64, bounds: &AccelBounds) -> f64 {
    a.max(bounds.min_accel).min(bounds.max_accel)
}
