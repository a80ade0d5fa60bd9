//! Average-cost SARSA with Boltzmann exploration. The agent sees only states,
//! its own actions and the resulting age; the error profile stays hidden in
//! the link.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{stage_cost, Action, ChannelModel, State, StateSpace, Truncation};
use crate::policy::ActionTable;
use crate::rvi::argmin_action;
use crate::sim::{advance, replication_rng, SlotRecord};

/// Boltzmann distribution `exp(-Q/tau)` over the unmasked actions, computed
/// relative to the row minimum.
pub fn softmax_probs(q: &[f64; 3], mask: &[bool; 3], tau: f64) -> [f64; 3] {
    let min = (0..3).filter(|&k| mask[k]).map(|k| q[k]).fold(f64::INFINITY, f64::min);
    let mut p = [0.0; 3];
    for k in 0..3 {
        if mask[k] {
            p[k] = (-(q[k] - min) / tau).exp();
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// State-action costs over the truncated states; larger ages share the row
/// of `n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    space: StateSpace,
    q: Vec<[f64; 3]>,
    mask: Vec<[bool; 3]>,
}

impl QTable {
    pub fn new(model: &ChannelModel, trunc: Truncation, no_idle: bool) -> Self {
        let space = StateSpace::new(trunc);
        let mask = space
            .states()
            .map(|s| {
                Action::ALL.map(|a| {
                    !(no_idle && a == Action::Idle) && trunc.action_admissible(s, a) && model.action_admissible(s, a)
                })
            })
            .collect();
        QTable {
            q: vec![[0.0; 3]; space.len()],
            space,
            mask,
        }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    fn idx(&self, s: State) -> usize {
        self.space
            .index_clamped(s)
            .expect("simulated states stay admissible after clamping")
    }

    pub fn get(&self, s: State, a: Action) -> f64 {
        self.q[self.idx(s)][a.index()]
    }

    pub fn row(&self, s: State) -> ([f64; 3], [bool; 3]) {
        let i = self.idx(s);
        (self.q[i], self.mask[i])
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Greedy (zero-temperature) policy.
    pub fn greedy_table(&self) -> ActionTable {
        let actions = self
            .q
            .iter()
            .zip(&self.mask)
            .map(|(q, m)| {
                let masked = [0, 1, 2].map(|k| if m[k] { q[k] } else { f64::INFINITY });
                argmin_action(&masked)
            })
            .collect();
        ActionTable::from_vec(self.space.clone(), actions).expect("mask keeps actions admissible")
    }

    /// Writes `delta,r,q_idle,q_new,q_retx`; masked entries are empty.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["delta", "r", "q_idle", "q_new", "q_retx"])?;
        for (i, s) in self.space.states().enumerate() {
            let cell = |k: usize| {
                if self.mask[i][k] {
                    self.q[i][k].to_string()
                } else {
                    String::new()
                }
            };
            out.write_record([s.delta.to_string(), s.r.to_string(), cell(0), cell(1), cell(2)])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Initial softmax temperature.
    pub tau: f64,
    /// Per-step multiplicative temperature decay (1 keeps it fixed).
    pub tau_decay: f64,
    pub tau_min: f64,
    /// Learning rate `alpha_n = alpha_scale / sqrt(n)`.
    pub alpha_scale: f64,
    /// Initial transmission price.
    pub eta: f64,
    /// Budget the price adapts to; `None` keeps `eta` fixed.
    pub c_max: Option<f64>,
    /// Price step `b` in `eta <- max(0, eta + b / sqrt(n) (cost - C_max))`.
    pub eta_step: f64,
    pub horizon: u64,
    pub seed: u64,
    pub n_max: u32,
    /// Timeline sampling period in steps.
    pub record_every: u64,
    /// Remove Idle from the action set (no budget).
    pub no_idle: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            tau: 1.0,
            tau_decay: 1.0,
            tau_min: 1e-3,
            alpha_scale: 1.0,
            eta: 2.0,
            c_max: None,
            eta_step: 0.5,
            horizon: 10_000,
            seed: 0,
            n_max: 100,
            record_every: 100,
            no_idle: false,
        }
    }
}

impl LearnerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.tau_min > 0.0) || !(self.tau_decay > 0.0 && self.tau_decay <= 1.0) {
            return Err(Error::InvalidParameter(
                "temperatures must be positive, decay in (0, 1]".into(),
            ));
        }
        if !(self.alpha_scale >= 0.0) || !(self.eta >= 0.0) || !(self.eta_step >= 0.0) {
            return Err(Error::InvalidParameter("learning rates and price must be >= 0".into()));
        }
        if let Some(c) = self.c_max {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::InvalidParameter(format!("c_max = {c} must lie in (0, 1]")));
            }
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Source of next states for the agent.
pub trait Link {
    /// Executes `a` in `s` during slot `t` and reports the next state.
    fn step(&mut self, t: u64, s: State, a: Action) -> Result<State>;
}

/// Link driven by the simulator's channel.
pub struct SimLink<R> {
    model: ChannelModel,
    rng: R,
}

impl<R: Rng> SimLink<R> {
    pub fn new(model: ChannelModel, rng: R) -> Self {
        SimLink { model, rng }
    }
}

impl<R: Rng> Link for SimLink<R> {
    fn step(&mut self, t: u64, s: State, a: Action) -> Result<State> {
        advance(&self.model, t, s, a, &mut self.rng).map(|(_, next)| next)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub q: QTable,
    /// Running estimate of the average Lagrangian cost.
    pub gain: f64,
    pub eta: f64,
    pub n: u64,
    /// Running fraction of slots with a transmission.
    pub empirical_cost: f64,
    /// Running average age.
    pub mean_aoi: f64,
    pub tau: f64,
    pub state: State,
    /// Action already drawn for `state` by the previous update.
    pub pending: Option<Action>,
}

impl LearnerState {
    pub fn new(model: &ChannelModel, cfg: &LearnerConfig) -> Result<Self> {
        cfg.validate()?;
        let trunc = Truncation::for_model(model, cfg.n_max)?;
        Ok(LearnerState {
            q: QTable::new(model, trunc, cfg.no_idle),
            gain: 0.0,
            eta: cfg.eta,
            n: 0,
            empirical_cost: 0.0,
            mean_aoi: 0.0,
            tau: cfg.tau,
            state: State::INITIAL,
            pending: None,
        })
    }

    fn sample(&self, s: State, rng: &mut impl Rng) -> Action {
        let (q, mask) = self.q.row(s);
        let p = softmax_probs(&q, &mask, self.tau);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for k in 0..3 {
            acc += p[k];
            if mask[k] && u < acc {
                return Action::from_index(k);
            }
        }
        Action::from_index((0..3).rev().find(|&k| mask[k]).unwrap_or(1))
    }

    /// One slot: act, observe, draw the next action from the same softmax and
    /// apply the temporal-difference, gain and price updates.
    pub fn step(&mut self, link: &mut impl Link, cfg: &LearnerConfig, rng: &mut impl Rng) -> Result<SlotRecord> {
        let s = self.state;
        let a = match self.pending.take() {
            Some(a) => a,
            None => self.sample(s, rng),
        };
        let t = self.n + 1;
        let next = link.step(t, s, a)?;
        let cost = stage_cost(s, a, self.eta);
        let a_next = self.sample(next, rng);

        self.n = t;
        let n = t as f64;
        let alpha = cfg.alpha_scale / n.sqrt();
        let (i, j) = (self.q.idx(s), self.q.idx(next));
        let target = cost - self.gain + self.q.q[j][a_next.index()];
        let cell = &mut self.q.q[i][a.index()];
        *cell += alpha * (target - *cell);
        self.gain += (cost - self.gain) / n;
        self.mean_aoi += (s.delta as f64 - self.mean_aoi) / n;
        self.empirical_cost += (a.transmits() as u8 as f64 - self.empirical_cost) / n;
        if let Some(c_max) = cfg.c_max {
            self.eta = (self.eta + cfg.eta_step / n.sqrt() * (self.empirical_cost - c_max)).max(0.0);
        }
        self.tau = (self.tau * cfg.tau_decay).max(cfg.tau_min);
        self.state = next;
        self.pending = Some(a_next);
        Ok(SlotRecord {
            t,
            state_before: s,
            action: a,
            success: a.transmits().then_some(next.delta <= s.delta),
            state_after: next,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimelinePoint {
    pub n: u64,
    pub mean_aoi: f64,
    pub mean_cost: f64,
    pub eta: f64,
    pub gain: f64,
}

/// Trains on replication stream `stream` of `cfg.seed`.
pub fn train_stream(
    model: &ChannelModel,
    cfg: &LearnerConfig,
    stream: u64,
) -> Result<(LearnerState, Vec<TimelinePoint>)> {
    let mut ls = LearnerState::new(model, cfg)?;
    let mut agent_rng = replication_rng(cfg.seed, 2 * stream);
    let mut link = SimLink::new(*model, replication_rng(cfg.seed, 2 * stream + 1));
    let mut timeline = Vec::with_capacity((cfg.horizon / cfg.record_every) as usize + 1);
    for n in 1..=cfg.horizon {
        ls.step(&mut link, cfg, &mut agent_rng)?;
        if n % cfg.record_every == 0 || n == cfg.horizon {
            timeline.push(TimelinePoint {
                n,
                mean_aoi: ls.mean_aoi,
                mean_cost: ls.empirical_cost,
                eta: ls.eta,
                gain: ls.gain,
            });
        }
    }
    Ok((ls, timeline))
}

pub fn train(model: &ChannelModel, cfg: &LearnerConfig) -> Result<(LearnerState, Vec<TimelinePoint>)> {
    train_stream(model, cfg, 0)
}

/// Mean and variance across replications at one timeline position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n: u64,
    pub mean_aoi: f64,
    pub var_aoi: f64,
    pub mean_cost: f64,
    pub var_cost: f64,
    pub mean_eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub curve: Vec<CurvePoint>,
    pub finals: Vec<LearnerState>,
}

/// Independent training runs in parallel (stream `k` for run `k`).
pub fn train_replications(model: &ChannelModel, cfg: &LearnerConfig, replications: usize) -> Result<TrainingSummary> {
    if replications == 0 {
        return Err(Error::InvalidParameter("replications must be >= 1".into()));
    }
    let runs = (0..replications as u64)
        .into_par_iter()
        .map(|k| train_stream(model, cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let len = runs[0].1.len();
    let reps = replications as f64;
    let stat = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        let mean = v.iter().sum::<f64>() / reps;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (reps - 1.0)
        } else {
            0.0
        };
        (mean, var)
    };
    let curve = (0..len)
        .map(|k| {
            let (mean_aoi, var_aoi) = stat(&mut runs.iter().map(|r| r.1[k].mean_aoi));
            let (mean_cost, var_cost) = stat(&mut runs.iter().map(|r| r.1[k].mean_cost));
            let (mean_eta, _) = stat(&mut runs.iter().map(|r| r.1[k].eta));
            CurvePoint {
                n: runs[0].1[k].n,
                mean_aoi,
                var_aoi,
                mean_cost,
                var_cost,
                mean_eta,
            }
        })
        .collect();
    Ok(TrainingSummary {
        curve,
        finals: runs.into_iter().map(|r| r.0).collect(),
    })
}

/// Writes `n,mean_aoi,mean_cost,eta,gain`.
pub fn write_timeline_csv<W: std::io::Write>(timeline: &[TimelinePoint], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["n", "mean_aoi", "mean_cost", "eta", "gain"])?;
    for p in timeline {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `n,mean_aoi,var_aoi,mean_cost,var_cost,mean_eta`.
pub fn write_curve_csv<W: std::io::Write>(curve: &[CurvePoint], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["n", "mean_aoi", "var_aoi", "mean_cost", "var_cost", "mean_eta"])?;
    for p in curve {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}
