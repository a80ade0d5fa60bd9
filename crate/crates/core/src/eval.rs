//! Exact long-run evaluation of a policy on the truncated chain.
//!
//! Every successful delivery sends the chain to a state `(k, 0)` with
//! `k <= r_max + 1`, and between deliveries the age only grows (or sits at the
//! cap). So the stationary law is computed without a full linear solve: unit
//! mass injected at each delivery target is pushed forward age by age, which
//! yields a small target-to-target matrix; its stationary vector then weights
//! one last forward pass.

use arrayvec::ArrayVec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Action, ChannelModel, Cmdp, State, StateSpace, Truncation};
use crate::policy::{PeriodicPolicy, Policy, RenewalMixture};

/// Residual bound on `||pi P - pi||_1` accepted from the solver.
pub const STATIONARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EvalResult {
    /// Long-run average age.
    pub avg_aoi: f64,
    /// Long-run fraction of slots with a transmission.
    pub avg_cost: f64,
    pub space: StateSpace,
    pub stationary: Vec<f64>,
}

impl EvalResult {
    pub fn prob(&self, s: State) -> f64 {
        self.space.index(s).map_or(0.0, |i| self.stationary[i])
    }

    /// Mean number of slots between visits to `(1, 0)`.
    pub fn mean_cycle_length(&self) -> f64 {
        1.0 / self.prob(State::INITIAL)
    }

    pub fn lagrangian(&self, eta: f64) -> f64 {
        self.avg_aoi + eta * self.avg_cost
    }
}

type Edges = ArrayVec<(usize, f64), 3>;

struct MixedChain {
    forward: Vec<Edges>,
    reset: Vec<Edges>,
    transmit: Vec<f64>,
}

fn mixed_chain(cmdp: &Cmdp, probs: &[[f64; 3]]) -> Result<MixedChain> {
    let n = cmdp.len();
    let mut forward = Vec::with_capacity(n);
    let mut reset = Vec::with_capacity(n);
    let mut transmit = Vec::with_capacity(n);
    for (i, s) in cmdp.space().states().enumerate() {
        let mut fw = Edges::new();
        let mut rs = Edges::new();
        for a in Action::ALL {
            let w = probs[i][a.index()];
            if w <= 0.0 {
                continue;
            }
            let row = cmdp
                .row(i, a)
                .ok_or(Error::InadmissibleAction { state: s, action: a })?;
            for k in 0..row.len as usize {
                let edge = (row.next[k], w * row.prob[k]);
                if row.reset[k] {
                    rs.push(edge);
                } else {
                    fw.push(edge);
                }
            }
        }
        forward.push(fw);
        reset.push(rs);
        transmit.push(probs[i][1] + probs[i][2]);
    }
    Ok(MixedChain {
        forward,
        reset,
        transmit,
    })
}

/// Linear solve for the mass held at the age cap, where forward moves stay
/// at the cap.
struct CapSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// `(n_max, 0)` is absorbing (never left) under the policy.
    absorbing: bool,
}

impl CapSolver {
    fn new(space: &StateSpace, chain: &MixedChain) -> Result<Self> {
        let range = space.age_range(space.truncation().n_max);
        let base = range.start;
        let m = range.len();
        let absorbing = chain.transmit[base] <= 0.0;
        let mut a = DMatrix::<f64>::identity(m, m);
        for i in range.clone() {
            if absorbing && i == base {
                continue;
            }
            for &(j, w) in &chain.forward[i] {
                // (I - F)^T z = b
                a[(j - base, i - base)] -= w;
            }
        }
        Ok(CapSolver { lu: a.lu(), absorbing })
    }

    fn solve(&self, inflow: &[f64]) -> Result<Vec<f64>> {
        if self.absorbing && inflow.iter().any(|&x| x > 0.0) {
            // any mass at the cap eventually idles into (n_max, 0) unless it
            // is delivered first; delivery is never certain
            return Err(Error::NoStationaryAoi);
        }
        let b = DVector::from_column_slice(inflow);
        let z = self.lu.solve(&b).ok_or(Error::NoStationaryAoi)?;
        if z.iter().any(|x| !x.is_finite() || *x < -1e-9) {
            return Err(Error::NoStationaryAoi);
        }
        if self.absorbing && z[0] > 0.0 {
            return Err(Error::NoStationaryAoi);
        }
        Ok(z.iter().copied().collect())
    }
}

/// Pushes `mass` forward through all ages; returns the delivered mass per
/// state index. `mass` becomes the expected occupancy.
fn propagate(space: &StateSpace, chain: &MixedChain, cap: &CapSolver, mass: &mut [f64]) -> Result<Vec<(usize, f64)>> {
    let n_max = space.truncation().n_max;
    let mut delivered: Vec<(usize, f64)> = Vec::new();
    let push_resets = |i: usize, m: f64, out: &mut Vec<(usize, f64)>| {
        for &(j, w) in &chain.reset[i] {
            out.push((j, m * w));
        }
    };
    for delta in 1..n_max {
        for i in space.age_range(delta) {
            let m = mass[i];
            if m == 0.0 {
                continue;
            }
            for &(j, w) in &chain.forward[i] {
                mass[j] += m * w;
            }
            push_resets(i, m, &mut delivered);
        }
    }
    let range = space.age_range(n_max);
    let z = cap.solve(&mass[range.clone()])?;
    for (k, i) in range.enumerate() {
        mass[i] = z[k];
        if z[k] != 0.0 {
            push_resets(i, z[k], &mut delivered);
        }
    }
    Ok(delivered)
}

/// Stationary distribution of a stationary randomized policy given by its
/// per-state action distributions.
pub fn stationary_distribution(cmdp: &Cmdp, probs: &[[f64; 3]]) -> Result<Vec<f64>> {
    let space = cmdp.space();
    let n = space.len();
    let chain = mixed_chain(cmdp, probs)?;
    let cap = CapSolver::new(space, &chain)?;

    // delivery targets, (1, 0) first
    let mut targets = vec![0usize];
    for edges in &chain.reset {
        for &(j, _) in edges {
            if !targets.contains(&j) {
                targets.push(j);
            }
        }
    }
    let k = targets.len();
    let slot = |j: usize| targets.iter().position(|&t| t == j).unwrap();

    // target-to-target delivery matrix
    let mut m = DMatrix::<f64>::zeros(k, k);
    let mut mass = vec![0.0; n];
    for (a, &t) in targets.iter().enumerate() {
        mass.iter_mut().for_each(|x| *x = 0.0);
        mass[t] = 1.0;
        for (j, w) in propagate(space, &chain, &cap, &mut mass)? {
            m[(a, slot(j))] += w;
        }
    }

    // y M = y with y[0] = 1
    let mut y = vec![1.0; k];
    if k > 1 {
        let mut a = DMatrix::<f64>::zeros(k - 1, k - 1);
        let mut b = DVector::<f64>::zeros(k - 1);
        for j in 1..k {
            b[j - 1] = m[(0, j)];
            for i in 1..k {
                a[(j - 1, i - 1)] = if i == j { 1.0 } else { 0.0 } - m[(i, j)];
            }
        }
        let sol = a.lu().solve(&b).ok_or(Error::NoStationaryAoi)?;
        for j in 1..k {
            y[j] = sol[j - 1].max(0.0);
        }
    }

    mass.iter_mut().for_each(|x| *x = 0.0);
    for (a, &t) in targets.iter().enumerate() {
        mass[t] += y[a];
    }
    propagate(space, &chain, &cap, &mut mass)?;
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::NoStationaryAoi);
    }
    mass.iter_mut().for_each(|x| *x /= total);

    let res = stationary_residual(&chain, &mass);
    if res > STATIONARY_TOL {
        return Err(Error::StationaryResidual(res));
    }
    Ok(mass)
}

fn stationary_residual(chain: &MixedChain, pi: &[f64]) -> f64 {
    let mut next = vec![0.0; pi.len()];
    for (i, &p) in pi.iter().enumerate() {
        for &(j, w) in chain.forward[i].iter().chain(&chain.reset[i]) {
            next[j] += p * w;
        }
    }
    next.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum()
}

fn stationary_result(cmdp: &Cmdp, probs: &[[f64; 3]]) -> Result<EvalResult> {
    let pi = stationary_distribution(cmdp, probs)?;
    let space = cmdp.space();
    let mut aoi = 0.0;
    let mut cost = 0.0;
    for (i, s) in space.states().enumerate() {
        aoi += pi[i] * s.delta as f64;
        cost += pi[i] * (probs[i][1] + probs[i][2]);
    }
    Ok(EvalResult {
        avg_aoi: aoi,
        avg_cost: cost.clamp(0.0, 1.0),
        space: space.clone(),
        stationary: pi,
    })
}

fn policy_probs(cmdp: &Cmdp, policy: &Policy) -> Result<Vec<[f64; 3]>> {
    cmdp.space()
        .states()
        .map(|s| policy.action_probs(s).ok_or(Error::InadmissibleState(s)))
        .collect()
}

fn evaluate_mixture(cmdp: &Cmdp, m: &RenewalMixture) -> Result<EvalResult> {
    let first = evaluate_on(cmdp, &m.first)?;
    let second = evaluate_on(cmdp, &m.second)?;
    // renewal-reward: each cycle runs one component from (1, 0) back to it
    let w1 = m.draw_prob * first.mean_cycle_length();
    let w2 = (1.0 - m.draw_prob) * second.mean_cycle_length();
    let (f1, f2) = (w1 / (w1 + w2), w2 / (w1 + w2));
    let stationary = first
        .stationary
        .iter()
        .zip(&second.stationary)
        .map(|(a, b)| f1 * a + f2 * b)
        .collect();
    Ok(EvalResult {
        avg_aoi: f1 * first.avg_aoi + f2 * second.avg_aoi,
        avg_cost: f1 * first.avg_cost + f2 * second.avg_cost,
        space: first.space,
        stationary,
    })
}

/// Open-loop periodic schedule: deliveries happen only at transmission slots,
/// so the age after a delivery runs `1..=period * G` with `G` geometric.
fn evaluate_periodic(cmdp: &Cmdp, p: &PeriodicPolicy) -> Result<EvalResult> {
    let space = cmdp.space();
    let trunc = space.truncation();
    let g = cmdp.model().g(0);
    let period = p.period as f64;
    let cycle = period / (1.0 - g);
    let mut stationary = vec![0.0; space.len()];
    let mut aoi = 0.0;
    let mut age: u64 = 1;
    loop {
        // age k is reached iff at least ceil(k / period) attempts were needed
        let attempts = age.div_ceil(p.period as u64);
        let mass = g.powi((attempts - 1) as i32) / cycle;
        if mass < 1e-18 && age > p.period as u64 {
            break;
        }
        let failed_before = age > 1 && (age - 1).is_multiple_of(p.period as u64);
        let r = if failed_before { 1.min(trunc.r_max) } else { 0 };
        let s = trunc.clamp(State::new(age.min(u32::MAX as u64) as u32, r));
        let s = if trunc.is_admissible(s) {
            s
        } else {
            State::new(s.delta, 0)
        };
        stationary[space.index(s).unwrap()] += mass;
        aoi += mass * s.delta as f64;
        age += 1;
    }
    Ok(EvalResult {
        avg_aoi: aoi,
        avg_cost: 1.0 / period,
        space: space.clone(),
        stationary,
    })
}

/// Exact evaluation on a prebuilt chain.
pub fn evaluate_on(cmdp: &Cmdp, policy: &Policy) -> Result<EvalResult> {
    match policy {
        Policy::Mixture(m) => evaluate_mixture(cmdp, m),
        Policy::Periodic(p) => evaluate_periodic(cmdp, p),
        stationary => stationary_result(cmdp, &policy_probs(cmdp, stationary)?),
    }
}

/// Long-run average age and transmission cost of `policy` on the truncated
/// chain.
pub fn evaluate_exact(policy: &Policy, model: &ChannelModel, trunc: &Truncation) -> Result<EvalResult> {
    let cmdp = Cmdp::new(*model, *trunc)?;
    evaluate_on(&cmdp, policy)
}

/// Per-renewal draw probability that makes `first` govern a long-run
/// fraction `weight` of the slots, given mean cycle lengths.
pub fn draw_prob_for_weight(weight: f64, cycle_first: f64, cycle_second: f64) -> f64 {
    if weight <= 0.0 {
        return 0.0;
    }
    if weight >= 1.0 {
        return 1.0;
    }
    weight * cycle_second / (weight * cycle_second + (1.0 - weight) * cycle_first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChannelModel;
    use crate::policy::{ActionTable, ThresholdPolicy};

    fn arq(p: f64, n_max: u32) -> Cmdp {
        Cmdp::with_n_max(ChannelModel::arq(p).unwrap(), n_max).unwrap()
    }

    #[test]
    fn threshold_cost_matches_closed_form() {
        let cmdp = arq(0.5, 120);
        let r = evaluate_on(&cmdp, &Policy::Threshold(ThresholdPolicy::deterministic(4))).unwrap();
        assert!((r.avg_cost - 0.4).abs() < 1e-12);
        assert!((r.avg_aoi - 3.2).abs() < 1e-10);
        assert!((r.stationary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_free_every_slot() {
        let cmdp = Cmdp::new(ChannelModel::perfect(), Truncation::new(10, 0).unwrap()).unwrap();
        let r = evaluate_on(&cmdp, &Policy::Threshold(ThresholdPolicy::deterministic(1))).unwrap();
        assert!((r.avg_aoi - 1.0).abs() < 1e-15);
        assert!((r.avg_cost - 1.0).abs() < 1e-15);
    }

    #[test]
    fn always_new_update() {
        let model = ChannelModel::harq(0.3, 0.5, 3).unwrap();
        let cmdp = Cmdp::with_n_max(model, 100).unwrap();
        let table = ActionTable::from_fn(cmdp.space().clone(), |_| Action::NewUpdate).unwrap();
        let r = evaluate_on(&cmdp, &Policy::Deterministic(table)).unwrap();
        assert!((r.avg_aoi - 1.0 / 0.7).abs() < 1e-12);
        assert!((r.avg_cost - 1.0).abs() < 1e-14);
    }

    #[test]
    fn never_transmitting_is_rejected() {
        let cmdp = arq(0.5, 20);
        let table = ActionTable::from_fn(cmdp.space().clone(), |_| Action::Idle).unwrap();
        assert_eq!(
            evaluate_on(&cmdp, &Policy::Deterministic(table)).unwrap_err(),
            Error::NoStationaryAoi
        );
    }

    #[test]
    fn harq_stationary_is_fixed_point_against_dense_solve() {
        // oracle: dense power iteration on the full transition matrix
        let model = ChannelModel::harq(0.6, 0.5, 3).unwrap();
        let cmdp = Cmdp::with_n_max(model, 25).unwrap();
        let table = ActionTable::from_fn(cmdp.space().clone(), |s| match s {
            s if s.r >= 1 && s.r < 3 && s.delta < 12 => Action::Retransmit,
            s if s.delta >= 3 => Action::NewUpdate,
            _ => Action::Idle,
        })
        .unwrap();
        let policy = Policy::Deterministic(table.clone());
        let r = evaluate_on(&cmdp, &policy).unwrap();
        let n = cmdp.len();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..20_000 {
            let mut next = vec![0.0; n];
            for (i, &a) in table.actions().iter().enumerate() {
                for (j, p) in cmdp.row(i, a).unwrap().iter() {
                    next[j] += 0.5 * pi[i] * p;
                }
                next[i] += 0.5 * pi[i];
            }
            pi = next;
        }
        for (a, b) in pi.iter().zip(&r.stationary) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn periodic_baseline() {
        let cmdp = Cmdp::new(ChannelModel::perfect(), Truncation::new(50, 0).unwrap()).unwrap();
        let r = evaluate_on(&cmdp, &Policy::periodic(5).unwrap()).unwrap();
        assert!((r.avg_aoi - 3.0).abs() < 1e-12);
        assert!((r.avg_cost - 0.2).abs() < 1e-15);
        let cmdp = Cmdp::with_n_max(ChannelModel::arq(0.5).unwrap(), 400).unwrap();
        let r = evaluate_on(&cmdp, &Policy::periodic(3).unwrap()).unwrap();
        // (P (1 + p) / (1 - p) + 1) / 2
        assert!((r.avg_aoi - 5.0).abs() < 1e-10);
        assert!((r.stationary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn draw_prob_conversion() {
        assert!((draw_prob_for_weight(0.25, 5.0, 6.0) - 1.5 / 5.25).abs() < 1e-15);
        assert_eq!(draw_prob_for_weight(0.0, 5.0, 6.0), 0.0);
        assert_eq!(draw_prob_for_weight(1.0, 5.0, 6.0), 1.0);
    }
}
