//! Slotted simulation of the source, the link with ACK/NACK feedback and the
//! destination. Ages are not truncated here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Action, ChannelModel, State};
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRecord {
    /// 1-based slot index.
    pub t: u64,
    pub state_before: State,
    pub action: Action,
    /// `None` for idle slots.
    pub success: Option<bool>,
    pub state_after: State,
}

/// Reproducible stream for replication `rep` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// One slot of the link: applies `a` in `s` and returns the delivery outcome
/// and the next state.
pub fn advance(model: &ChannelModel, t: u64, s: State, a: Action, rng: &mut impl Rng) -> Result<(Option<bool>, State)> {
    if !model.action_admissible(s, a) {
        return Err(Error::ProtocolViolation {
            slot: t,
            state: s,
            action: a,
        });
    }
    Ok(match a {
        Action::Idle => (None, State::new(s.delta + 1, 0)),
        Action::NewUpdate | Action::Retransmit => {
            let attempts = if a == Action::NewUpdate { 0 } else { s.r };
            let failed = rng.random::<f64>() < model.g(attempts);
            if failed {
                let r = match a {
                    Action::NewUpdate => model.r_max().map_or(1, |m| m.min(1)),
                    _ => s.r + 1,
                };
                (Some(false), State::new(s.delta + 1, r))
            } else {
                (Some(true), State::new(attempts + 1, 0))
            }
        }
    })
}

/// Time averages of one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSample {
    pub avg_aoi: f64,
    pub avg_cost: f64,
}

/// Runs `policy` for `horizon` slots from `(1, 0)`. The age counted in slot
/// `t` is the age at the start of that slot.
pub fn run_replication(
    policy: &Policy,
    model: &ChannelModel,
    horizon: u64,
    rng: &mut impl Rng,
    mut trace: Option<&mut Vec<SlotRecord>>,
) -> Result<RunSample> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let mut runner = policy.runner();
    let mut s = State::INITIAL;
    let mut aoi_sum = 0u64;
    let mut sent = 0u64;
    for t in 1..=horizon {
        let a = runner.decide(t, s, rng)?;
        let (success, next) = advance(model, t, s, a, rng)?;
        aoi_sum += s.delta as u64;
        sent += a.transmits() as u64;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(SlotRecord {
                t,
                state_before: s,
                action: a,
                success,
                state_after: next,
            });
        }
        s = next;
    }
    Ok(RunSample {
        avg_aoi: aoi_sum as f64 / horizon as f64,
        avg_cost: sent as f64 / horizon as f64,
    })
}

/// Replication statistics. Variances are unbiased sample variances across
/// replications (zero for a single replication).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub horizon: u64,
    pub replications: usize,
    pub mean_aoi: f64,
    pub var_aoi: f64,
    pub mean_cost: f64,
    pub var_cost: f64,
    pub aoi: Vec<f64>,
    pub cost: Vec<f64>,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

impl RunStats {
    pub fn from_samples(horizon: u64, samples: &[RunSample]) -> Self {
        let aoi: Vec<f64> = samples.iter().map(|s| s.avg_aoi).collect();
        let cost: Vec<f64> = samples.iter().map(|s| s.avg_cost).collect();
        let (mean_aoi, var_aoi) = mean_var(&aoi);
        let (mean_cost, var_cost) = mean_var(&cost);
        RunStats {
            horizon,
            replications: samples.len(),
            mean_aoi,
            var_aoi,
            mean_cost,
            var_cost,
            aoi,
            cost,
        }
    }

    pub fn se_aoi(&self) -> f64 {
        (self.var_aoi / self.replications as f64).sqrt()
    }

    pub fn se_cost(&self) -> f64 {
        (self.var_cost / self.replications as f64).sqrt()
    }
}

/// Single replication (stream 0), optionally keeping the slot trace.
pub fn run(
    policy: &Policy,
    model: &ChannelModel,
    horizon: u64,
    seed: u64,
    keep_trace: bool,
) -> Result<(RunStats, Option<Vec<SlotRecord>>)> {
    let mut rng = replication_rng(seed, 0);
    let mut trace = keep_trace.then(Vec::new);
    let sample = run_replication(policy, model, horizon, &mut rng, trace.as_mut())?;
    Ok((RunStats::from_samples(horizon, &[sample]), trace))
}

/// Independent replications in parallel; replication `k` uses stream `k`.
pub fn evaluate_simulated(
    policy: &Policy,
    model: &ChannelModel,
    horizon: u64,
    replications: usize,
    seed: u64,
) -> Result<RunStats> {
    if replications == 0 {
        return Err(Error::InvalidParameter("replications must be >= 1".into()));
    }
    let samples = (0..replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(policy, model, horizon, &mut replication_rng(seed, rep), None))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunStats::from_samples(horizon, &samples))
}

/// Feedback-free baseline: a fresh update every `ceil(1 / c_max)` slots.
pub fn baseline_periodic(c_max: f64) -> Result<Policy> {
    if !(c_max > 0.0 && c_max <= 1.0) {
        return Err(Error::InvalidParameter(format!("c_max = {c_max} must lie in (0, 1]")));
    }
    // guard against 1/c_max landing just above an integer
    let period = (1.0 / c_max - 1e-9).ceil().max(1.0);
    Policy::periodic(period as u32)
}

/// Number of slots where a retransmission directly follows an idle slot.
pub fn retransmits_after_idle(trace: &[SlotRecord]) -> usize {
    trace
        .windows(2)
        .filter(|w| w[0].action == Action::Idle && w[1].action == Action::Retransmit)
        .count()
}

/// Writes `t,delta,r,action,success`; `success` is empty for idle slots.
pub fn write_trace_csv<W: std::io::Write>(trace: &[SlotRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "delta", "r", "action", "success"])?;
    for rec in trace {
        out.write_record([
            rec.t.to_string(),
            rec.state_before.delta.to_string(),
            rec.state_before.r.to_string(),
            rec.action.code().to_string(),
            rec.success.map_or(String::new(), |b| (b as u8).to_string()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Row of the statistics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub policy_id: String,
    pub p0: f64,
    pub lambda: f64,
    /// Empty when retransmissions are unlimited.
    pub r_max: Option<u32>,
    pub c_max: Option<f64>,
    pub mean_aoi: f64,
    pub var_aoi: f64,
    pub mean_cost: f64,
}

impl StatsRow {
    pub fn new(policy_id: impl Into<String>, model: &ChannelModel, c_max: Option<f64>, stats: &RunStats) -> Self {
        StatsRow {
            policy_id: policy_id.into(),
            p0: model.p0(),
            lambda: model.lambda(),
            r_max: model.r_max(),
            c_max,
            mean_aoi: stats.mean_aoi,
            var_aoi: stats.var_aoi,
            mean_cost: stats.mean_cost,
        }
    }
}

/// Writes `policy_id,p0,lambda,r_max,c_max,mean_aoi,var_aoi,mean_cost`.
pub fn write_stats_csv<W: std::io::Write>(rows: &[StatsRow], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record([
        "policy_id",
        "p0",
        "lambda",
        "r_max",
        "c_max",
        "mean_aoi",
        "var_aoi",
        "mean_cost",
    ])?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}
