//! Relative value iteration for the Lagrangian (per-transmission charge `eta`)
//! average-cost problem on the truncated state space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{stage_cost, Action, ChannelModel, Cmdp, State, StateSpace, Truncation};
use crate::policy::ActionTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once the sup-norm change of `h` between sweeps is at most this.
    pub epsilon: f64,
    pub max_iters: usize,
    pub reference_state: State,
    /// Weight `tau` of the aperiodicity transform `tau P + (1 - tau) I`
    /// applied inside the sweeps; `1` gives plain RVI, which can oscillate
    /// forever when the greedy chain is periodic. Gain and greedy policy are
    /// unaffected; `h` is rescaled back before returning.
    pub aperiodicity: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epsilon: 1e-8,
            max_iters: 1_000_000,
            reference_state: State::INITIAL,
            aperiodicity: 0.5,
        }
    }
}

/// Which actions the minimization ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSet {
    /// `{Idle, NewUpdate, Retransmit}`.
    Full,
    /// `{NewUpdate, Retransmit}`: no transmission budget (`C_max = 1`).
    NoIdle,
}

impl ActionSet {
    fn allows(self, a: Action) -> bool {
        !(self == ActionSet::NoIdle && a == Action::Idle)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub space: StateSpace,
    pub eta: f64,
    pub actions: ActionSet,
    /// Differential cost, zero at the reference state.
    pub h: Vec<f64>,
    /// State-action cost; `f64::INFINITY` marks inadmissible pairs.
    pub q: Vec<[f64; 3]>,
    /// Optimal average Lagrangian cost estimate.
    pub gain: f64,
    pub policy: Vec<Action>,
    pub iterations: usize,
    pub residual: f64,
}

impl SolverOutput {
    /// The unsolved starting point (`h = 0`), mainly for residual checks.
    pub fn initial(cmdp: &Cmdp, eta: f64, actions: ActionSet) -> Self {
        let h = vec![0.0; cmdp.len()];
        let q = q_values(cmdp, eta, actions, &h);
        let policy = greedy_policy(&q);
        SolverOutput {
            space: cmdp.space().clone(),
            eta,
            actions,
            h,
            q,
            gain: 0.0,
            policy,
            iterations: 0,
            residual: f64::INFINITY,
        }
    }

    pub fn h_at(&self, s: State) -> Option<f64> {
        self.space.index(s).map(|i| self.h[i])
    }

    pub fn q_at(&self, s: State, a: Action) -> Option<f64> {
        self.space.index(s).map(|i| self.q[i][a.index()])
    }

    pub fn action_at(&self, s: State) -> Option<Action> {
        self.space.index(s).map(|i| self.policy[i])
    }

    pub fn policy_table(&self) -> ActionTable {
        ActionTable::from_vec(self.space.clone(), self.policy.clone())
            .expect("greedy policy is admissible by construction")
    }

    /// Writes one row per state: `delta,r,h,q_idle,q_new,q_retx,action`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["delta", "r", "h", "q_idle", "q_new", "q_retx", "action"])?;
        for (i, s) in self.space.states().enumerate() {
            let fmt_q = |v: f64| {
                if v.is_finite() {
                    format!("{v}")
                } else {
                    String::new()
                }
            };
            out.write_record([
                s.delta.to_string(),
                s.r.to_string(),
                format!("{}", self.h[i]),
                fmt_q(self.q[i][0]),
                fmt_q(self.q[i][1]),
                fmt_q(self.q[i][2]),
                self.policy[i].code().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn q_row(cmdp: &Cmdp, idx: usize, s: State, eta: f64, actions: ActionSet, h: &[f64]) -> [f64; 3] {
    let mut q = [f64::INFINITY; 3];
    for a in Action::ALL {
        if !actions.allows(a) {
            continue;
        }
        if let Some(row) = cmdp.row(idx, a) {
            let expect: f64 = row.iter().map(|(j, p)| p * h[j]).sum();
            q[a.index()] = stage_cost(s, a, eta) + expect;
        }
    }
    q
}

/// `min_a (c(s,a) + tau E h(s')) + (1 - tau) h(s)`.
fn sweep_value(cmdp: &Cmdp, idx: usize, s: State, eta: f64, actions: ActionSet, h: &[f64], tau: f64) -> f64 {
    let mut best = f64::INFINITY;
    for a in Action::ALL {
        if !actions.allows(a) {
            continue;
        }
        if let Some(row) = cmdp.row(idx, a) {
            let expect: f64 = row.iter().map(|(j, p)| p * h[j]).sum();
            best = best.min(stage_cost(s, a, eta) + tau * expect);
        }
    }
    best + (1.0 - tau) * h[idx]
}

fn q_values(cmdp: &Cmdp, eta: f64, actions: ActionSet, h: &[f64]) -> Vec<[f64; 3]> {
    cmdp.space()
        .states()
        .enumerate()
        .map(|(i, s)| q_row(cmdp, i, s, eta, actions, h))
        .collect()
}

fn row_min(q: &[f64; 3]) -> f64 {
    q.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Per-state argmin; exact ties resolve to Idle, then NewUpdate, then
/// Retransmit.
pub fn greedy_policy(q: &[[f64; 3]]) -> Vec<Action> {
    q.iter().map(argmin_action).collect()
}

pub(crate) fn argmin_action(q: &[f64; 3]) -> Action {
    let mut best = 0;
    for k in 1..3 {
        if q[k] < q[best] {
            best = k;
        }
    }
    Action::from_index(best)
}

/// Relative value iteration on a prebuilt chain.
pub fn solve_cmdp(cmdp: &Cmdp, eta: f64, actions: ActionSet, cfg: &SolverConfig) -> Result<SolverOutput> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::InvalidParameter(format!("eta = {eta} must be >= 0")));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be > 0".into()));
    }
    let tau = cfg.aperiodicity;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidParameter(format!("aperiodicity {tau} outside (0, 1]")));
    }
    let space = cmdp.space();
    let reference = space
        .index(cfg.reference_state)
        .ok_or(Error::InadmissibleState(cfg.reference_state))?;
    let states: Vec<State> = space.states().collect();
    let n = states.len();

    let mut h = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 1..=cfg.max_iters {
        for (i, &s) in states.iter().enumerate() {
            v[i] = sweep_value(cmdp, i, s, eta, actions, &h, tau);
        }
        let gain = v[reference];
        residual = 0.0;
        for i in 0..n {
            let next = v[i] - gain;
            residual = f64::max(residual, (next - h[i]).abs());
            h[i] = next;
        }
        if residual <= cfg.epsilon {
            h.iter_mut().for_each(|x| *x *= tau);
            let q = q_values(cmdp, eta, actions, &h);
            let policy = greedy_policy(&q);
            return Ok(SolverOutput {
                space: space.clone(),
                eta,
                actions,
                h,
                q,
                gain,
                policy,
                iterations: iter,
                residual,
            });
        }
    }
    Err(Error::IterationLimit {
        iterations: cfg.max_iters,
        residual,
    })
}

/// Solves the `eta`-relaxed problem with all three actions.
pub fn solve(model: &ChannelModel, trunc: &Truncation, eta: f64, cfg: &SolverConfig) -> Result<SolverOutput> {
    let cmdp = Cmdp::new(*model, *trunc)?;
    solve_cmdp(&cmdp, eta, ActionSet::Full, cfg)
}

/// No-budget mode: `eta = 0` and Idle removed from the action set.
pub fn solve_unconstrained(model: &ChannelModel, trunc: &Truncation, cfg: &SolverConfig) -> Result<SolverOutput> {
    let cmdp = Cmdp::new(*model, *trunc)?;
    solve_cmdp(&cmdp, 0.0, ActionSet::NoIdle, cfg)
}

/// `sup_s |min_a (c(s,a) + E h(s')) - gain - h(s)|` for the stored `h`/`gain`.
pub fn bellman_residual(out: &SolverOutput, cmdp: &Cmdp, eta: f64) -> f64 {
    cmdp.space()
        .states()
        .enumerate()
        .map(|(i, s)| {
            let m = row_min(&q_row(cmdp, i, s, eta, out.actions, &out.h));
            (m - out.gain - out.h[i]).abs()
        })
        .fold(0.0, f64::max)
}
