//! Search for the transmission price `eta*` at which the optimal policy of the
//! relaxed problem meets the budget, and assembly of the randomized policy
//! that spends the budget exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{draw_prob_for_weight, evaluate_on, EvalResult};
use crate::model::{ChannelModel, Cmdp, State, Truncation};
use crate::policy::{ActionTable, Policy, RandomizedTable};
use crate::rvi::{solve_cmdp, ActionSet, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EtaSearchConfig {
    pub eta0: f64,
    /// Numerator `a` of the step size `a / (k + 1)`, `k` counting sign changes
    /// of `C_eta - C_max`; `None` uses `max(1, L*_eta0) / C_max^2`.
    pub step_scale: Option<f64>,
    /// Stop once `|C_eta - C_max|` is at most this.
    pub stop_tol: f64,
    /// Offset of the policy pair around `eta*`.
    pub xi: f64,
    pub max_steps: usize,
    /// Replace the `eta* +- xi` pair by adjacent vertices of the cost/age
    /// frontier before mixing.
    pub refine_pair: bool,
}

impl Default for EtaSearchConfig {
    fn default() -> Self {
        EtaSearchConfig {
            eta0: 1.0,
            step_scale: None,
            stop_tol: 1e-9,
            xi: 0.2,
            max_steps: 200,
            refine_pair: true,
        }
    }
}

impl EtaSearchConfig {
    fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) || !(self.stop_tol > 0.0) || !(self.eta0 >= 0.0) {
            return Err(Error::InvalidParameter(
                "search needs xi > 0, stop_tol > 0 and eta0 >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchStep {
    pub step: usize,
    pub eta: f64,
    pub cost: f64,
    pub aoi: f64,
    /// Optimal average Lagrangian cost reported by the solver.
    pub gain: f64,
}

/// How the search ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// A price whose policy spends the budget within `stop_tol`.
    Hit,
    /// Narrow bracket found by the stochastic-approximation iterates.
    Bracket,
    /// Bracket narrowed by bisection after the step budget ran out.
    Bisection,
    /// `C_max = 1`: no price needed.
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSearch {
    pub eta_star: f64,
    /// Largest visited price whose policy overspends.
    pub eta_below: Option<f64>,
    /// Smallest visited price whose policy meets the budget.
    pub eta_above: Option<f64>,
    pub termination: Termination,
    pub steps: Vec<SearchStep>,
}

impl EtaSearch {
    /// Writes `step,eta,cost,aoi,gain`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for s in &self.steps {
            out.serialize(s)?;
        }
        if self.steps.is_empty() {
            out.write_record(["step", "eta", "cost", "aoi", "gain"])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// RVI solution at one price, with its exact evaluation.
#[derive(Debug, Clone)]
pub struct PricePoint {
    pub eta: f64,
    pub table: ActionTable,
    pub gain: f64,
    pub eval: EvalResult,
}

impl PricePoint {
    pub fn cost(&self) -> f64 {
        self.eval.avg_cost
    }

    pub fn aoi(&self) -> f64 {
        self.eval.avg_aoi
    }
}

/// Solves the relaxed problem at `eta` and evaluates the greedy policy.
pub fn price_point(cmdp: &Cmdp, eta: f64, solver: &SolverConfig) -> Result<PricePoint> {
    let out = solve_cmdp(cmdp, eta, ActionSet::Full, solver)?;
    let table = out.policy_table();
    let eval = evaluate_on(cmdp, &Policy::Deterministic(table.clone()))?;
    Ok(PricePoint {
        eta,
        table,
        gain: out.gain,
        eval,
    })
}

fn check_budget(c_max: f64) -> Result<()> {
    if !(c_max > 0.0 && c_max <= 1.0) {
        return Err(Error::InvalidParameter(format!("c_max = {c_max} must lie in (0, 1]")));
    }
    Ok(())
}

/// Stochastic-approximation search `eta <- max(0, eta + a/(k+1) (C_eta - C_max))`
/// on a prebuilt chain. The step index `k` advances only when the sign of
/// `C_eta - C_max` flips (Kesten's rule), since `C_eta` is flat between jumps.
/// Until `C_max` is bracketed every move is at least `xi`, doubling on each
/// use, so a cost just above the budget cannot stall the search.
pub fn search_eta_star_on(cmdp: &Cmdp, c_max: f64, cfg: &EtaSearchConfig, solver: &SolverConfig) -> Result<EtaSearch> {
    check_budget(c_max)?;
    cfg.validate()?;
    let mut steps = Vec::new();
    if c_max >= 1.0 {
        return Ok(EtaSearch {
            eta_star: 0.0,
            eta_below: None,
            eta_above: Some(0.0),
            termination: Termination::Unconstrained,
            steps,
        });
    }
    let mut a = cfg.step_scale;
    let mut kesten = 0usize;
    let mut last_sign = 0.0f64;
    // minimum move before C_max is bracketed, doubled each time it is used
    let mut stride = cfg.xi;
    let mut below: Option<f64> = None;
    let mut above: Option<f64> = None;
    let record = |steps: &mut Vec<SearchStep>, pt: &PricePoint| {
        steps.push(SearchStep {
            step: steps.len(),
            eta: pt.eta,
            cost: pt.cost(),
            aoi: pt.aoi(),
            gain: pt.gain,
        });
    };
    let finish = |eta_star, below, above, termination, steps| EtaSearch {
        eta_star,
        eta_below: below,
        eta_above: above,
        termination,
        steps,
    };

    let mut eta = cfg.eta0;
    for _ in 0..cfg.max_steps {
        let pt = price_point(cmdp, eta, solver)?;
        record(&mut steps, &pt);
        let a = *a.get_or_insert(pt.gain.abs().max(1.0) / (c_max * c_max));
        let diff = pt.cost() - c_max;
        if diff.abs() <= cfg.stop_tol {
            return Ok(finish(eta, below, above, Termination::Hit, steps));
        }
        if diff > 0.0 {
            below = Some(below.map_or(eta, |b| b.max(eta)));
        } else {
            above = Some(above.map_or(eta, |b| b.min(eta)));
        }
        if let (Some(lo), Some(hi)) = (below, above) {
            if hi - lo <= 2.0 * cfg.xi {
                return Ok(finish(0.5 * (lo + hi), below, above, Termination::Bracket, steps));
            }
        }
        if last_sign != 0.0 && diff.signum() != last_sign {
            kesten += 1;
        }
        last_sign = diff.signum();
        let mut delta = a / (kesten as f64 + 1.0) * diff;
        if (below.is_none() || above.is_none()) && delta.abs() < stride {
            delta = stride * diff.signum();
            stride *= 2.0;
        }
        eta = (eta + delta).max(0.0);
    }

    let (Some(mut lo), Some(mut hi)) = (below, above) else {
        return Err(Error::SearchFailure {
            trace: steps.iter().map(|s| (s.eta, s.cost)).collect(),
        });
    };
    while hi - lo > 2.0 * cfg.xi {
        let mid = 0.5 * (lo + hi);
        let pt = price_point(cmdp, mid, solver)?;
        record(&mut steps, &pt);
        let diff = pt.cost() - c_max;
        if diff.abs() <= cfg.stop_tol {
            return Ok(finish(mid, Some(lo), Some(hi), Termination::Hit, steps));
        }
        if diff > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(finish(
        0.5 * (lo + hi),
        Some(lo),
        Some(hi),
        Termination::Bisection,
        steps,
    ))
}

pub fn search_eta_star(
    model: &ChannelModel,
    trunc: &Truncation,
    c_max: f64,
    cfg: &EtaSearchConfig,
    solver: &SolverConfig,
) -> Result<EtaSearch> {
    let cmdp = Cmdp::new(*model, *trunc)?;
    search_eta_star_on(&cmdp, c_max, cfg, solver)
}

/// Long-run weight of the overspending policy: `(C_max - C_high) / (C_low - C_high)`.
pub fn mixture_weight(c_low: f64, c_high: f64, c_max: f64) -> Result<f64> {
    const TOL: f64 = 1e-12;
    if (c_low - c_high).abs() <= TOL {
        return Ok(1.0);
    }
    if c_max < c_high - TOL || c_max > c_low + TOL {
        return Err(Error::Bracketing { c_low, c_high, c_max });
    }
    Ok(((c_max - c_high) / (c_low - c_high)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub eta_star: f64,
    /// Prices at which the two policies were computed.
    pub eta_low: f64,
    pub eta_high: f64,
    /// Overspending side (`C >= C_max`).
    pub policy_low: ActionTable,
    /// Budget-meeting side (`C <= C_max`).
    pub policy_high: ActionTable,
    pub eval_low: EvalResult,
    pub eval_high: EvalResult,
    pub mu: f64,
    pub mixed: Policy,
    /// State randomized by `mixed`, when the pair differs in one recurrent state.
    pub mixed_state: Option<State>,
    pub achieved_cost: f64,
    pub achieved_aoi: f64,
    pub search: EtaSearch,
}

/// Walks toward the pair of frontier vertices adjacent to `C_max`: the price
/// at which the two current policies tie is re-solved, and any strictly
/// better policy found there replaces the endpoint on its side.
fn refine_pair(
    cmdp: &Cmdp,
    c_max: f64,
    mut low: PricePoint,
    mut high: PricePoint,
    solver: &SolverConfig,
    tol: f64,
) -> Result<(PricePoint, PricePoint)> {
    for _ in 0..64 {
        let dc = low.cost() - high.cost();
        if dc <= tol {
            break;
        }
        let eta = (high.aoi() - low.aoi()) / dc;
        if !(eta >= 0.0) || !eta.is_finite() {
            break;
        }
        let pair = low.eval.lagrangian(eta);
        let mid = price_point(cmdp, eta, solver)?;
        if mid.eval.lagrangian(eta) >= pair - 1e-9 * pair.abs().max(1.0) {
            break;
        }
        if (mid.cost() - c_max).abs() <= tol {
            low = mid.clone();
            high = mid;
            break;
        }
        if mid.cost() > c_max {
            low = mid;
        } else {
            high = mid;
        }
    }
    Ok((low, high))
}

/// Probability of following `first` at `state` that makes the single-state
/// randomization spend exactly `c_max`.
fn single_state_weight(
    cmdp: &Cmdp,
    first: &ActionTable,
    second: &ActionTable,
    state: State,
    c_max: f64,
) -> Result<(Policy, EvalResult)> {
    let build = |theta: f64| -> Result<(Policy, EvalResult)> {
        let p = Policy::Randomized(RandomizedTable::single_state_mix(first, second, state, theta)?);
        let e = evaluate_on(cmdp, &p)?;
        Ok((p, e))
    };
    // cost rises with theta: theta = 1 is `first` (overspending)
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = build(0.5)?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        best = build(mid)?;
        let diff = best.1.avg_cost - c_max;
        if diff.abs() <= 1e-13 || hi - lo < 1e-15 {
            break;
        }
        if diff > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

/// Optimal budget-constrained policy on a prebuilt chain.
pub fn solve_constrained_on(
    cmdp: &Cmdp,
    c_max: f64,
    cfg: &EtaSearchConfig,
    solver: &SolverConfig,
) -> Result<ConstrainedSolution> {
    check_budget(c_max)?;
    let search = search_eta_star_on(cmdp, c_max, cfg, solver)?;
    if search.termination == Termination::Unconstrained {
        let out = solve_cmdp(cmdp, 0.0, ActionSet::NoIdle, solver)?;
        let table = out.policy_table();
        let policy = Policy::Deterministic(table.clone());
        let eval = evaluate_on(cmdp, &policy)?;
        return Ok(ConstrainedSolution {
            eta_star: 0.0,
            eta_low: 0.0,
            eta_high: 0.0,
            policy_low: table.clone(),
            policy_high: table,
            achieved_cost: eval.avg_cost,
            achieved_aoi: eval.avg_aoi,
            eval_low: eval.clone(),
            eval_high: eval,
            mu: 1.0,
            mixed: policy,
            mixed_state: None,
            search,
        });
    }

    let eta_star = search.eta_star;
    let tol = cfg.stop_tol;
    let mut xi = cfg.xi;
    let mut pair = None;
    let mut last = (f64::NAN, f64::NAN);
    for _ in 0..4 {
        let low = price_point(cmdp, (eta_star - xi).max(0.0), solver)?;
        let high = price_point(cmdp, eta_star + xi, solver)?;
        last = (low.cost(), high.cost());
        if low.cost() >= c_max - tol && high.cost() <= c_max + tol {
            pair = Some((low, high));
            break;
        }
        xi *= 2.0;
    }
    let Some((low, high)) = pair else {
        return Err(Error::Bracketing {
            c_low: last.0,
            c_high: last.1,
            c_max,
        });
    };
    let (low, high) = if cfg.refine_pair {
        refine_pair(cmdp, c_max, low, high, solver, tol)?
    } else {
        (low, high)
    };

    let mu = mixture_weight(low.cost(), high.cost(), c_max)?;
    let recurrent: Vec<State> = low
        .table
        .differences(&high.table)
        .into_iter()
        .filter(|&s| low.eval.prob(s) > 0.0 || high.eval.prob(s) > 0.0)
        .collect();
    let (mixed, eval, mixed_state) = if (low.cost() - high.cost()).abs() <= tol || recurrent.is_empty() {
        // one side already meets the budget with equality
        let side = if (low.cost() - c_max).abs() <= (high.cost() - c_max).abs() {
            &low
        } else {
            &high
        };
        let p = Policy::Deterministic(side.table.clone());
        (p, side.eval.clone(), None)
    } else if recurrent.len() == 1 {
        let (p, e) = single_state_weight(cmdp, &low.table, &high.table, recurrent[0], c_max)?;
        (p, e, Some(recurrent[0]))
    } else {
        let q = draw_prob_for_weight(mu, low.eval.mean_cycle_length(), high.eval.mean_cycle_length());
        let p = Policy::mixture(
            Policy::Deterministic(low.table.clone()),
            Policy::Deterministic(high.table.clone()),
            mu,
            q,
        )?;
        let e = evaluate_on(cmdp, &p)?;
        (p, e, None)
    };

    Ok(ConstrainedSolution {
        eta_star,
        eta_low: low.eta,
        eta_high: high.eta,
        policy_low: low.table,
        policy_high: high.table,
        eval_low: low.eval,
        eval_high: high.eval,
        mu,
        mixed,
        mixed_state,
        achieved_cost: eval.avg_cost,
        achieved_aoi: eval.avg_aoi,
        search,
    })
}

pub fn solve_constrained(
    model: &ChannelModel,
    trunc: &Truncation,
    c_max: f64,
    cfg: &EtaSearchConfig,
    solver: &SolverConfig,
) -> Result<ConstrainedSolution> {
    let cmdp = Cmdp::new(*model, *trunc)?;
    solve_constrained_on(&cmdp, c_max, cfg, solver)
}
