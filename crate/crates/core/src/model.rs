//! State/action space, channel error profile and the exact transition law of
//! the age-of-information scheduling problem.
//!
//! A state is the pair `(delta, r)`: the age at the destination and the number
//! of failed attempts of the packet currently held by the source. Every slot
//! the source idles, sends a fresh update, or retransmits the held packet.
//! A successful fresh update resets the age to 1; a successful retransmission
//! after `r` failures resets it to `r + 1`.

use std::fmt;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub delta: u32,
    pub r: u32,
}

impl State {
    pub const INITIAL: State = State { delta: 1, r: 0 };

    pub const fn new(delta: u32, r: u32) -> Self {
        State { delta, r }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.delta, self.r)
    }
}

/// Source decision for one slot. The declaration order is the tie-breaking
/// order used by every argmin in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Idle,
    NewUpdate,
    Retransmit,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Idle, Action::NewUpdate, Action::Retransmit];

    pub const fn index(self) -> usize {
        match self {
            Action::Idle => 0,
            Action::NewUpdate => 1,
            Action::Retransmit => 2,
        }
    }

    pub const fn from_index(i: usize) -> Action {
        match i {
            0 => Action::Idle,
            1 => Action::NewUpdate,
            _ => Action::Retransmit,
        }
    }

    pub const fn transmits(self) -> bool {
        !matches!(self, Action::Idle)
    }

    /// Single-letter code (`i`, `n`, `x`) used in CSV output.
    pub const fn code(self) -> char {
        match self {
            Action::Idle => 'i',
            Action::NewUpdate => 'n',
            Action::Retransmit => 'x',
        }
    }

    pub fn from_code(c: &str) -> Option<Action> {
        match c {
            "i" | "idle" => Some(Action::Idle),
            "n" | "new" => Some(Action::NewUpdate),
            "x" | "retransmit" => Some(Action::Retransmit),
            _ => None,
        }
    }
}

/// Decoding-error profile `g(r) = p0 * lambda^r`, `r = 0..=r_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    p0: f64,
    lambda: f64,
    /// `None` means no limit on retransmissions.
    r_max: Option<u32>,
}

impl ChannelModel {
    /// Builds the model. If `g(r)` underflows to zero for some `r`, `r_max` is
    /// lowered to the first such `r` (success is certain there).
    pub fn new(p0: f64, lambda: f64, r_max: Option<u32>) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::InvalidParameter(format!("p0 = {p0} must lie in (0, 1)")));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must lie in (0, 1]")));
        }
        let mut r_max = r_max;
        if lambda < 1.0 {
            // first r with p0 * lambda^r == 0.0 in f64
            let limit = r_max.unwrap_or(u32::MAX);
            let mut r = 0u32;
            let mut g = p0;
            while r < limit && g > 0.0 {
                r += 1;
                g *= lambda;
            }
            if g == 0.0 {
                r_max = Some(r_max.map_or(r, |m| m.min(r)));
            }
        }
        Ok(ChannelModel { p0, lambda, r_max })
    }

    /// Classical ARQ: constant error probability, no combining.
    pub fn arq(p: f64) -> Result<Self> {
        Self::new(p, 1.0, Some(0))
    }

    pub fn harq(p0: f64, lambda: f64, r_max: u32) -> Result<Self> {
        Self::new(p0, lambda, Some(r_max))
    }

    /// Error-free channel, for tests and degenerate checks (`p0 = 0` is
    /// outside the model proper).
    pub fn perfect() -> Self {
        ChannelModel {
            p0: 0.0,
            lambda: 1.0,
            r_max: Some(0),
        }
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn r_max(&self) -> Option<u32> {
        self.r_max
    }

    pub fn is_arq(&self) -> bool {
        self.r_max == Some(0)
    }

    /// `g(r)`: probability that an attempt after `r` failures is not decoded.
    pub fn error_prob(&self, r: u32) -> Result<f64> {
        if let Some(m) = self.r_max {
            if r > m {
                return Err(Error::InadmissibleQuery { r, r_max: m });
            }
        }
        Ok(self.g(r))
    }

    pub(crate) fn g(&self, r: u32) -> f64 {
        self.p0 * self.lambda.powi(r as i32)
    }

    /// Admissibility in the untruncated state set.
    pub fn is_admissible(&self, s: State) -> bool {
        let cap = self.r_max.map_or(u64::MAX, |m| m as u64 + 1);
        s.delta >= 1 && (s.r as u64) < cap.min(s.delta as u64)
    }

    pub fn action_admissible(&self, s: State, a: Action) -> bool {
        match a {
            Action::Idle | Action::NewUpdate => true,
            Action::Retransmit => s.r >= 1 && self.r_max.is_none_or(|m| s.r < m),
        }
    }

    fn failed_count(&self, s: State, a: Action) -> u32 {
        match a {
            Action::Idle => 0,
            Action::NewUpdate => self.r_max.map_or(1, |m| m.min(1)),
            Action::Retransmit => s.r + 1,
        }
    }
}

/// Finite approximation of the state space: ages are capped at `n_max` and
/// retransmission counts at `r_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub n_max: u32,
    pub r_max: u32,
}

impl Truncation {
    pub fn new(n_max: u32, r_max: u32) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::InvalidParameter(format!("n_max = {n_max} must be >= 2")));
        }
        if r_max >= n_max {
            return Err(Error::InvalidParameter(format!(
                "r_max = {r_max} must be < n_max = {n_max}"
            )));
        }
        Ok(Truncation { n_max, r_max })
    }

    /// Truncation with age cap `n_max` and the model's own retransmission
    /// limit (reduced below `n_max` if needed).
    pub fn for_model(model: &ChannelModel, n_max: u32) -> Result<Self> {
        let r = model.r_max().unwrap_or(u32::MAX).min(n_max.saturating_sub(1));
        Self::new(n_max, r)
    }

    pub fn is_admissible(&self, s: State) -> bool {
        s.delta >= 1 && s.delta <= self.n_max && s.r < s.delta.min(self.r_max + 1)
    }

    pub fn action_admissible(&self, s: State, a: Action) -> bool {
        match a {
            Action::Idle | Action::NewUpdate => true,
            Action::Retransmit => s.r >= 1 && s.r < self.r_max,
        }
    }

    /// Maps an untruncated state onto the table, clamping the age.
    pub fn clamp(&self, s: State) -> State {
        State::new(s.delta.min(self.n_max), s.r.min(self.r_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionEntry {
    pub next: State,
    pub prob: f64,
}

pub type Transitions = ArrayVec<TransitionEntry, 2>;

/// `g(r)` with the `r <= r_max` precondition.
pub fn error_prob(model: &ChannelModel, r: u32) -> Result<f64> {
    model.error_prob(r)
}

/// Successor distribution of `(s, a)` in the truncated chain. Ages beyond
/// `n_max` are clamped to `n_max`.
pub fn transitions(s: State, a: Action, model: &ChannelModel, trunc: &Truncation) -> Result<Transitions> {
    if !trunc.is_admissible(s) {
        return Err(Error::InadmissibleState(s));
    }
    if !trunc.action_admissible(s, a) || !model.action_admissible(s, a) {
        return Err(Error::InadmissibleAction { state: s, action: a });
    }
    let next_age = (s.delta + 1).min(trunc.n_max);
    let mut out = Transitions::new();
    match a {
        Action::Idle => out.push(TransitionEntry {
            next: State::new(next_age, 0),
            prob: 1.0,
        }),
        Action::NewUpdate | Action::Retransmit => {
            let attempts = if a == Action::NewUpdate { 0 } else { s.r };
            let g = model.error_prob(attempts)?;
            let fail_r = model.failed_count(s, a).min(trunc.r_max);
            let success_age = if a == Action::NewUpdate { 1 } else { s.r + 1 };
            if g > 0.0 {
                out.push(TransitionEntry {
                    next: State::new(next_age, fail_r),
                    prob: g,
                });
            }
            if g < 1.0 {
                out.push(TransitionEntry {
                    next: State::new(success_age, 0),
                    prob: 1.0 - g,
                });
            }
        }
    }
    Ok(out)
}

/// Untruncated successor distribution, used by the simulator.
pub fn transitions_untruncated(s: State, a: Action, model: &ChannelModel) -> Result<Transitions> {
    if !model.is_admissible(s) {
        return Err(Error::InadmissibleState(s));
    }
    if !model.action_admissible(s, a) {
        return Err(Error::InadmissibleAction { state: s, action: a });
    }
    let mut out = Transitions::new();
    match a {
        Action::Idle => out.push(TransitionEntry {
            next: State::new(s.delta + 1, 0),
            prob: 1.0,
        }),
        _ => {
            let g = model.g(if a == Action::NewUpdate { 0 } else { s.r });
            let success_age = if a == Action::NewUpdate { 1 } else { s.r + 1 };
            out.push(TransitionEntry {
                next: State::new(s.delta + 1, model.failed_count(s, a)),
                prob: g,
            });
            out.push(TransitionEntry {
                next: State::new(success_age, 0),
                prob: 1.0 - g,
            });
        }
    }
    Ok(out)
}

/// Per-slot Lagrangian cost: age plus `eta` for any transmission.
pub fn stage_cost(s: State, a: Action, eta: f64) -> f64 {
    s.delta as f64 + if a.transmits() { eta } else { 0.0 }
}

/// Dense indexing of the truncated state set, row-major by age then by `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    trunc: Truncation,
    offsets: Vec<usize>,
}

impl StateSpace {
    pub fn new(trunc: Truncation) -> Self {
        let mut offsets = Vec::with_capacity(trunc.n_max as usize + 2);
        offsets.push(0);
        offsets.push(0);
        let mut acc = 0usize;
        for delta in 1..=trunc.n_max {
            acc += delta.min(trunc.r_max + 1) as usize;
            offsets.push(acc);
        }
        StateSpace { trunc, offsets }
    }

    pub fn truncation(&self) -> Truncation {
        self.trunc
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: State) -> Option<usize> {
        if self.trunc.is_admissible(s) {
            Some(self.offsets[s.delta as usize] + s.r as usize)
        } else {
            None
        }
    }

    /// Index of an untruncated state after clamping.
    pub fn index_clamped(&self, s: State) -> Option<usize> {
        self.index(self.trunc.clamp(s))
    }

    pub fn state(&self, idx: usize) -> State {
        // offsets[delta] <= idx < offsets[delta + 1]
        let delta = self.offsets.partition_point(|&o| o <= idx) - 1;
        State::new(delta as u32, (idx - self.offsets[delta]) as u32)
    }

    /// Index range of all states with the given age.
    pub fn age_range(&self, delta: u32) -> std::ops::Range<usize> {
        self.offsets[delta as usize]..self.offsets[delta as usize + 1]
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (1..=self.trunc.n_max).flat_map(move |d| (0..d.min(self.trunc.r_max + 1)).map(move |r| State::new(d, r)))
    }
}

/// All admissible truncated states in row-major `(delta, r)` order.
pub fn enumerate_states(trunc: &Truncation) -> Vec<State> {
    StateSpace::new(*trunc).states().collect()
}

/// Successor row stored by index.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Row {
    pub next: [usize; 2],
    pub prob: [f64; 2],
    pub len: u8,
    /// Whether `next[k]` is a successful delivery (age reset) rather than an
    /// age increment.
    pub reset: [bool; 2],
}

impl Row {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len as usize).map(move |k| (self.next[k], self.prob[k]))
    }
}

/// Model + truncation with every admissible transition row precomputed.
#[derive(Debug, Clone)]
pub struct Cmdp {
    model: ChannelModel,
    space: StateSpace,
    rows: Vec<[Option<Row>; 3]>,
}

impl Cmdp {
    pub fn new(model: ChannelModel, trunc: Truncation) -> Result<Self> {
        if let Some(m) = model.r_max() {
            if trunc.r_max > m {
                return Err(Error::InvalidParameter(format!(
                    "truncation r_max = {} exceeds model r_max = {m}",
                    trunc.r_max
                )));
            }
        }
        let space = StateSpace::new(trunc);
        let mut rows = Vec::with_capacity(space.len());
        for s in space.states() {
            let mut entry: [Option<Row>; 3] = [None; 3];
            for a in Action::ALL {
                if !trunc.action_admissible(s, a) || !model.action_admissible(s, a) {
                    continue;
                }
                let tr = transitions(s, a, &model, &trunc)?;
                let mut row = Row::default();
                let success = State::new(if a == Action::NewUpdate { 1 } else { s.r + 1 }, 0);
                for (k, t) in tr.iter().enumerate() {
                    row.next[k] = space.index(t.next).ok_or(Error::InadmissibleState(t.next))?;
                    row.prob[k] = t.prob;
                    row.reset[k] = a.transmits() && t.next == success;
                }
                row.len = tr.len() as u8;
                entry[a.index()] = Some(row);
            }
            rows.push(entry);
        }
        Ok(Cmdp { model, space, rows })
    }

    pub fn with_n_max(model: ChannelModel, n_max: u32) -> Result<Self> {
        Self::new(model, Truncation::for_model(&model, n_max)?)
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn truncation(&self) -> Truncation {
        self.space.truncation()
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub(crate) fn row(&self, idx: usize, a: Action) -> Option<&Row> {
        self.rows[idx][a.index()].as_ref()
    }

    pub fn admissible(&self, idx: usize, a: Action) -> bool {
        self.rows[idx][a.index()].is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(tr: &Transitions) -> Vec<(State, f64)> {
        let mut v: Vec<_> = tr.iter().map(|t| (t.next, t.prob)).collect();
        v.sort_by_key(|a| a.0);
        v
    }

    #[test]
    fn error_prob_examples() {
        let m = ChannelModel::harq(0.5, 0.5, 9).unwrap();
        assert_eq!(error_prob(&m, 0).unwrap(), 0.5);
        let arq = ChannelModel::new(0.5, 1.0, Some(10)).unwrap();
        assert_eq!(error_prob(&arq, 7).unwrap(), 0.5);
        let m = ChannelModel::harq(0.3, 0.5, 9).unwrap();
        assert!((error_prob(&m, 2).unwrap() - 0.075).abs() < 1e-15);
    }

    #[test]
    fn error_prob_rejects_r_beyond_limit() {
        let m = ChannelModel::harq(0.3, 0.5, 3).unwrap();
        assert_eq!(error_prob(&m, 4), Err(Error::InadmissibleQuery { r: 4, r_max: 3 }));
    }

    #[test]
    fn underflow_caps_r_max() {
        let m = ChannelModel::new(0.5, 1e-100, None).unwrap();
        let cap = m.r_max().unwrap();
        assert_eq!(m.error_prob(cap).unwrap(), 0.0);
        assert!(m.error_prob(cap - 1).unwrap() > 0.0);
    }

    #[test]
    fn model_rejects_bad_parameters() {
        assert!(ChannelModel::new(0.0, 0.5, Some(3)).is_err());
        assert!(ChannelModel::new(1.0, 0.5, Some(3)).is_err());
        assert!(ChannelModel::new(0.5, 0.0, Some(3)).is_err());
        assert!(ChannelModel::new(0.5, 1.5, Some(3)).is_err());
        assert!(Truncation::new(1, 0).is_err());
        assert!(Truncation::new(5, 5).is_err());
    }

    #[test]
    fn retransmit_row() {
        // g(1) = 0.25 with p0 = 0.5, lambda = 0.5
        let m = ChannelModel::harq(0.5, 0.5, 3).unwrap();
        let t = Truncation::new(100, 3).unwrap();
        let tr = transitions(State::new(3, 1), Action::Retransmit, &m, &t).unwrap();
        assert_eq!(probs(&tr), vec![(State::new(2, 0), 0.75), (State::new(4, 2), 0.25)]);
    }

    #[test]
    fn idle_row() {
        let m = ChannelModel::harq(0.3, 0.5, 3).unwrap();
        let t = Truncation::new(100, 3).unwrap();
        let tr = transitions(State::new(5, 0), Action::Idle, &m, &t).unwrap();
        assert_eq!(probs(&tr), vec![(State::new(6, 0), 1.0)]);
    }

    #[test]
    fn clamp_at_age_cap() {
        let m = ChannelModel::harq(0.3, 0.5, 3).unwrap();
        let t = Truncation::new(100, 3).unwrap();
        let tr = transitions(State::new(100, 0), Action::NewUpdate, &m, &t).unwrap();
        let p = probs(&tr);
        assert_eq!(p[0].0, State::new(1, 0));
        assert!((p[0].1 - 0.7).abs() < 1e-15);
        assert_eq!(p[1], (State::new(100, 1), 0.3));
    }

    #[test]
    fn inadmissible_actions() {
        let m = ChannelModel::harq(0.3, 0.5, 3).unwrap();
        let t = Truncation::new(10, 3).unwrap();
        assert!(matches!(
            transitions(State::new(4, 0), Action::Retransmit, &m, &t),
            Err(Error::InadmissibleAction { .. })
        ));
        assert!(matches!(
            transitions(State::new(5, 3), Action::Retransmit, &m, &t),
            Err(Error::InadmissibleAction { .. })
        ));
        assert!(matches!(
            transitions(State::new(2, 2), Action::Idle, &m, &t),
            Err(Error::InadmissibleState(_))
        ));
    }

    #[test]
    fn arq_failure_keeps_r_zero() {
        let m = ChannelModel::arq(0.4).unwrap();
        let t = Truncation::for_model(&m, 10).unwrap();
        let tr = transitions(State::new(3, 0), Action::NewUpdate, &m, &t).unwrap();
        assert!(tr.iter().all(|e| e.next.r == 0));
    }

    #[test]
    fn stage_cost_examples() {
        assert_eq!(stage_cost(State::new(7, 2), Action::Idle, 5.0), 7.0);
        assert_eq!(stage_cost(State::new(1, 0), Action::NewUpdate, 5.0), 6.0);
        assert_eq!(stage_cost(State::new(4, 1), Action::Retransmit, 0.0), 4.0);
    }

    #[test]
    fn enumerate_examples() {
        let m = ChannelModel::harq(0.5, 0.5, 3).unwrap();
        let s = enumerate_states(&Truncation::for_model(&m, 3).unwrap());
        assert_eq!(
            s,
            vec![
                State::new(1, 0),
                State::new(2, 0),
                State::new(2, 1),
                State::new(3, 0),
                State::new(3, 1),
                State::new(3, 2)
            ]
        );
        assert_eq!(
            enumerate_states(&Truncation::new(2, 0).unwrap()),
            vec![State::new(1, 0), State::new(2, 0)]
        );
        assert_eq!(enumerate_states(&Truncation::new(4, 1).unwrap()).len(), 7);
    }

    #[test]
    fn index_roundtrip() {
        let space = StateSpace::new(Truncation::new(40, 6).unwrap());
        for (i, s) in space.states().enumerate() {
            assert_eq!(space.index(s), Some(i));
            assert_eq!(space.state(i), s);
        }
        assert_eq!(space.index(State::new(3, 3)), None);
        assert_eq!(space.index_clamped(State::new(90, 2)), space.index(State::new(40, 2)));
    }
}
