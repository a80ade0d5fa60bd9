//! Closed-form results for classical ARQ (constant error probability `p`,
//! no retransmission combining), where optimal policies are age thresholds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::draw_prob_for_weight;
use crate::policy::{Policy, ThresholdPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArqInstance {
    pub p: f64,
    pub c_max: f64,
}

impl ArqInstance {
    pub fn new(p: f64, c_max: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("p = {p} must lie in [0, 1)")));
        }
        if !(c_max > 0.0 && c_max <= 1.0) {
            return Err(Error::InvalidParameter(format!("c_max = {c_max} must lie in (0, 1]")));
        }
        Ok(ArqInstance { p, c_max })
    }
}

/// Optimal budget-constrained ARQ policy: randomize between the thresholds
/// adjacent to the real-valued threshold that spends exactly `C_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RandomizedThreshold {
    pub delta_cmax: f64,
    pub delta1: u32,
    pub delta2: u32,
    /// Long-run weight of threshold `delta1`.
    pub mu_star: f64,
    /// Probability of transmitting at age `delta1`; the age-`delta1` state is
    /// visited once per delivery cycle, so this is `mu_star` converted to a
    /// per-cycle draw.
    pub transmit_prob: f64,
    pub cost: f64,
    pub aoi: f64,
}

impl RandomizedThreshold {
    pub fn policy(&self) -> Policy {
        Policy::Threshold(ThresholdPolicy {
            lower: self.delta1,
            prob_at_lower: self.transmit_prob,
        })
    }
}

/// Real-valued minimizer of the Lagrangian cost over thresholds.
pub fn optimal_real_threshold(p: f64, eta: f64) -> f64 {
    ((2.0 * eta * (1.0 - p) + p).sqrt() - p) / (1.0 - p)
}

/// Floor and ceiling of the real minimizer, each at least 1. The optimal
/// integer threshold for multiplier `eta` is one of the two.
pub fn threshold_candidates(p: f64, eta: f64) -> (u32, u32) {
    let x = optimal_real_threshold(p, eta);
    let lo = x.floor().max(1.0) as u32;
    let hi = x.ceil().max(1.0) as u32;
    (lo, hi)
}

/// Mean delivery-cycle length of threshold `delta`: `delta + p / (1 - p)`.
pub fn cycle_length(p: f64, delta: f64) -> f64 {
    delta + p / (1.0 - p)
}

/// Transmissions per slot: `1 / (delta (1 - p) + p)`.
pub fn cost_of_threshold(p: f64, delta: u32) -> f64 {
    cost_of_real_threshold(p, delta as f64)
}

pub fn cost_of_real_threshold(p: f64, delta: f64) -> f64 {
    1.0 / (delta * (1.0 - p) + p)
}

/// Long-run average age of threshold `delta`.
pub fn aoi_of_threshold(p: f64, delta: u32) -> f64 {
    aoi_of_real_threshold(p, delta as f64)
}

pub fn aoi_of_real_threshold(p: f64, delta: f64) -> f64 {
    let x = delta * (1.0 - p) + p;
    (x * x + p) / (2.0 * (1.0 - p) * x) + 0.5
}

/// Average Lagrangian cost (age plus `eta` per transmission), computed from
/// the stationary age distribution.
pub fn lagrangian_cost(p: f64, delta: u32, eta: f64) -> f64 {
    let d = delta as f64;
    let p1 = 1.0 / cycle_length(p, d);
    p1 * ((d - 1.0) * d / 2.0 + (eta + d) / (1.0 - p) + p / ((1.0 - p) * (1.0 - p)))
}

/// Stationary probability of age `delta_query` under threshold `delta`.
pub fn stationary_probs(p: f64, delta: u32, delta_query: u32) -> f64 {
    let p1 = 1.0 / cycle_length(p, delta as f64);
    if delta_query <= delta {
        p1
    } else {
        p.powi((delta_query - delta) as i32) * p1
    }
}

/// Age cap for threshold `delta` at which the stationary mass beyond the cap,
/// `p^(n_max - delta)` relative to `p_1`, is below `tail`.
pub fn n_max_for_tail(p: f64, delta: u32, tail: f64) -> u32 {
    let extra = if p <= 0.0 {
        1.0
    } else {
        (tail.ln() / p.ln()).ceil().max(1.0)
    };
    (delta + extra as u32 + 1).max(2)
}

/// Threshold pair, mixing weight and resulting performance for budget `c_max`.
pub fn optimal_policy(inst: &ArqInstance) -> RandomizedThreshold {
    let p = inst.p;
    let delta_cmax = ((1.0 / inst.c_max - p) / (1.0 - p)).max(1.0);
    let delta1 = delta_cmax.floor() as u32;
    let delta2 = delta_cmax.ceil() as u32;
    if delta1 == delta2 {
        return RandomizedThreshold {
            delta_cmax,
            delta1,
            delta2,
            mu_star: 1.0,
            transmit_prob: 1.0,
            cost: cost_of_threshold(p, delta1),
            aoi: aoi_of_threshold(p, delta1),
        };
    }
    let (c1, c2) = (cost_of_threshold(p, delta1), cost_of_threshold(p, delta2));
    let mu_star = ((inst.c_max - c2) / (c1 - c2)).clamp(0.0, 1.0);
    let transmit_prob = draw_prob_for_weight(mu_star, cycle_length(p, delta1 as f64), cycle_length(p, delta2 as f64));
    RandomizedThreshold {
        delta_cmax,
        delta1,
        delta2,
        mu_star,
        transmit_prob,
        cost: mu_star * c1 + (1.0 - mu_star) * c2,
        aoi: mu_star * aoi_of_threshold(p, delta1) + (1.0 - mu_star) * aoi_of_threshold(p, delta2),
    }
}
