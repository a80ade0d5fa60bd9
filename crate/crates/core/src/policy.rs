//! Scheduling policies and the runtime that executes them slot by slot.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Action, State, StateSpace};

/// Deterministic stationary decision rule over the truncated state set.
/// Ages above the cap use the row at `n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTable {
    space: StateSpace,
    actions: Vec<Action>,
}

impl ActionTable {
    pub fn from_vec(space: StateSpace, actions: Vec<Action>) -> Result<Self> {
        if actions.len() != space.len() {
            return Err(Error::InvalidParameter(format!(
                "table has {} entries for {} states",
                actions.len(),
                space.len()
            )));
        }
        let trunc = space.truncation();
        for (s, &a) in space.states().zip(&actions) {
            if !trunc.action_admissible(s, a) {
                return Err(Error::InadmissibleAction { state: s, action: a });
            }
        }
        Ok(ActionTable { space, actions })
    }

    /// Builds a table by evaluating `f` on every state.
    pub fn from_fn(space: StateSpace, f: impl Fn(State) -> Action) -> Result<Self> {
        let actions = space.states().map(f).collect();
        Self::from_vec(space, actions)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn get(&self, s: State) -> Option<Action> {
        self.space.index_clamped(s).map(|i| self.actions[i])
    }

    /// States where the two tables disagree.
    pub fn differences(&self, other: &ActionTable) -> Vec<State> {
        self.space
            .states()
            .zip(self.actions.iter().zip(&other.actions))
            .filter(|(_, (a, b))| a != b)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn transmissions(&self) -> usize {
        self.actions.iter().filter(|a| a.transmits()).count()
    }

    /// Smallest age at which an `r = 0` state transmits, when the `r = 0`
    /// column has the form idle-below / transmit-from.
    pub fn threshold(&self) -> Option<u32> {
        let col: Vec<Action> = (1..=self.space.truncation().n_max)
            .map(|d| self.actions[self.space.index(State::new(d, 0)).unwrap()])
            .collect();
        let first = col.iter().position(|a| a.transmits())?;
        if col[first..].iter().all(|a| a.transmits()) {
            Some(first as u32 + 1)
        } else {
            None
        }
    }
}

/// Stationary randomized rule: one action distribution per state, indexed
/// `[Idle, NewUpdate, Retransmit]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedTable {
    space: StateSpace,
    probs: Vec<[f64; 3]>,
}

impl RandomizedTable {
    pub fn new(space: StateSpace, probs: Vec<[f64; 3]>) -> Result<Self> {
        if probs.len() != space.len() {
            return Err(Error::InvalidParameter("distribution count mismatch".into()));
        }
        let trunc = space.truncation();
        for (s, p) in space.states().zip(&probs) {
            let total: f64 = p.iter().sum();
            if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("invalid distribution at {s}")));
            }
            for a in Action::ALL {
                if p[a.index()] > 0.0 && !trunc.action_admissible(s, a) {
                    return Err(Error::InadmissibleAction { state: s, action: a });
                }
            }
        }
        Ok(RandomizedTable { space, probs })
    }

    pub fn from_table(table: &ActionTable) -> Self {
        let probs = table
            .actions
            .iter()
            .map(|a| {
                let mut p = [0.0; 3];
                p[a.index()] = 1.0;
                p
            })
            .collect();
        RandomizedTable {
            space: table.space.clone(),
            probs,
        }
    }

    /// Follows `first` everywhere except `state`, where `first`'s action is
    /// taken with probability `weight` and `second`'s otherwise.
    pub fn single_state_mix(first: &ActionTable, second: &ActionTable, state: State, weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidParameter(format!("weight {weight} outside [0, 1]")));
        }
        let idx = first.space.index(state).ok_or(Error::InadmissibleState(state))?;
        let mut out = Self::from_table(first);
        let mut p = [0.0; 3];
        p[first.actions[idx].index()] += weight;
        p[second.actions[idx].index()] += 1.0 - weight;
        out.probs[idx] = p;
        Ok(out)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn probs(&self) -> &[[f64; 3]] {
        &self.probs
    }

    pub fn get(&self, s: State) -> Option<[f64; 3]> {
        self.space.index_clamped(s).map(|i| self.probs[i])
    }
}

/// ARQ threshold rule: idle below `lower`, send a fresh update above it, and
/// at age exactly `lower` send with probability `prob_at_lower`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    pub lower: u32,
    pub prob_at_lower: f64,
}

impl ThresholdPolicy {
    pub fn deterministic(threshold: u32) -> Self {
        ThresholdPolicy {
            lower: threshold.max(1),
            prob_at_lower: 1.0,
        }
    }

    pub fn randomized(lower: u32, prob_at_lower: f64) -> Result<Self> {
        if lower == 0 || !(0.0..=1.0).contains(&prob_at_lower) {
            return Err(Error::InvalidParameter(format!(
                "threshold {lower} / probability {prob_at_lower}"
            )));
        }
        Ok(ThresholdPolicy { lower, prob_at_lower })
    }

    pub fn transmit_prob(&self, delta: u32) -> f64 {
        use std::cmp::Ordering::*;
        match delta.cmp(&self.lower) {
            Less => 0.0,
            Equal => self.prob_at_lower,
            Greater => 1.0,
        }
    }
}

/// Two stationary policies alternated at the renewal state `(1, 0)`: every
/// time the system is in `(1, 0)` the active policy is redrawn, `first` with
/// probability `draw_prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalMixture {
    pub first: Policy,
    pub second: Policy,
    /// Long-run fraction of slots governed by `first`.
    pub weight: f64,
    pub draw_prob: f64,
}

/// Open-loop baseline: a fresh update every `period` slots, feedback ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicPolicy {
    pub period: u32,
}

impl PeriodicPolicy {
    /// Slot `t` (1-based) transmits iff `t ≡ 1 (mod period)`.
    pub fn transmits_at(&self, t: u64) -> bool {
        (t - 1).is_multiple_of(self.period as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Deterministic(ActionTable),
    Randomized(RandomizedTable),
    Threshold(ThresholdPolicy),
    Mixture(Box<RenewalMixture>),
    Periodic(PeriodicPolicy),
}

impl Policy {
    pub fn mixture(first: Policy, second: Policy, weight: f64, draw_prob: f64) -> Result<Self> {
        if !first.is_stationary() || !second.is_stationary() {
            return Err(Error::InvalidParameter(
                "mixture components must be stationary policies".into(),
            ));
        }
        for w in [weight, draw_prob] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidParameter(format!("mixture weight {w} outside [0, 1]")));
            }
        }
        Ok(Policy::Mixture(Box::new(RenewalMixture {
            first,
            second,
            weight,
            draw_prob,
        })))
    }

    pub fn periodic(period: u32) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidParameter("period must be >= 1".into()));
        }
        Ok(Policy::Periodic(PeriodicPolicy { period }))
    }

    /// Short label used in CSV output.
    pub fn kind(&self) -> &'static str {
        match self {
            Policy::Deterministic(_) => "deterministic",
            Policy::Randomized(_) => "randomized",
            Policy::Threshold(_) => "threshold",
            Policy::Mixture(_) => "mixture",
            Policy::Periodic(_) => "periodic",
        }
    }

    /// Whether the decision depends on the current state only.
    pub fn is_stationary(&self) -> bool {
        matches!(
            self,
            Policy::Deterministic(_) | Policy::Randomized(_) | Policy::Threshold(_)
        )
    }

    /// Action distribution of a stationary policy at `s`.
    pub fn action_probs(&self, s: State) -> Option<[f64; 3]> {
        match self {
            Policy::Deterministic(t) => t.get(s).map(|a| {
                let mut p = [0.0; 3];
                p[a.index()] = 1.0;
                p
            }),
            Policy::Randomized(t) => t.get(s),
            Policy::Threshold(t) => {
                let x = t.transmit_prob(s.delta);
                Some([1.0 - x, x, 0.0])
            }
            Policy::Mixture(_) | Policy::Periodic(_) => None,
        }
    }

    pub fn runner(&self) -> PolicyRunner<'_> {
        PolicyRunner {
            policy: self,
            use_first: true,
        }
    }
}

fn sample(probs: [f64; 3], rng: &mut impl Rng) -> Action {
    // Skip the draw for degenerate rows so deterministic policies consume no
    // randomness.
    if let Some(k) = probs.iter().position(|&p| p == 1.0) {
        return Action::from_index(k);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::from_index(k);
        }
    }
    // rounding: last action with positive mass
    Action::from_index(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
}

/// Per-run execution state of a policy (active mixture component).
#[derive(Debug, Clone)]
pub struct PolicyRunner<'a> {
    policy: &'a Policy,
    use_first: bool,
}

impl PolicyRunner<'_> {
    /// Chooses the action for slot `t` (1-based) in state `s`.
    pub fn decide(&mut self, t: u64, s: State, rng: &mut impl Rng) -> Result<Action> {
        match self.policy {
            Policy::Periodic(p) => Ok(if p.transmits_at(t) {
                Action::NewUpdate
            } else {
                Action::Idle
            }),
            Policy::Mixture(m) => {
                if s == State::INITIAL {
                    self.use_first = rng.random::<f64>() < m.draw_prob;
                }
                let active = if self.use_first { &m.first } else { &m.second };
                let probs = active.action_probs(s).ok_or(Error::InadmissibleState(s))?;
                Ok(sample(probs, rng))
            }
            stationary => {
                let probs = stationary.action_probs(s).ok_or(Error::InadmissibleState(s))?;
                Ok(sample(probs, rng))
            }
        }
    }
}
