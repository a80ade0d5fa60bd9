//! Parameter sweeps, learning comparisons and oracle checks used by the CLI.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arq::{self, ArqInstance};
use crate::error::{Error, Result};
use crate::eval::{evaluate_exact, evaluate_on};
use crate::lagrange::{solve_constrained_on, EtaSearchConfig};
use crate::model::{ChannelModel, Cmdp, State, Truncation};
use crate::policy::{Policy, ThresholdPolicy};
use crate::rvi::{bellman_residual, solve_cmdp, ActionSet, SolverConfig};
use crate::sarsa::{train_replications, CurvePoint, LearnerConfig};
use crate::sim::{baseline_periodic, evaluate_simulated};

/// Grid and run settings of an experiment, read from a JSON document.
/// `r_max = 0` selects classical ARQ (error probability `p0`, `lambda`
/// ignored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub p0: Vec<f64>,
    pub lambda: Vec<f64>,
    pub r_max: Vec<u32>,
    pub c_max: Vec<f64>,
    pub n_max: u32,
    pub solver: SolverConfig,
    pub search: EtaSearchConfig,
    pub learner: LearnerConfig,
    pub horizon: u64,
    pub replications: usize,
    pub seed: u64,
    /// Also estimate each policy by simulation.
    pub simulate: bool,
    pub output_dir: Option<PathBuf>,
}

fn c_max_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (1..=n).map(|k| (k as f64 * step * 1e6).round() / 1e6).collect()
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            p0: vec![0.5],
            lambda: vec![0.5],
            r_max: vec![0, 3],
            c_max: c_max_grid(0.05),
            n_max: 200,
            solver: SolverConfig::default(),
            search: EtaSearchConfig::default(),
            learner: LearnerConfig::default(),
            horizon: 10_000,
            replications: 1000,
            seed: 0,
            simulate: true,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub p0: f64,
    pub lambda: f64,
    pub r_max: u32,
    pub c_max: f64,
}

impl GridPoint {
    pub fn protocol(&self) -> &'static str {
        if self.r_max == 0 {
            "arq"
        } else {
            "harq"
        }
    }

    pub fn model(&self) -> Result<ChannelModel> {
        if self.r_max == 0 {
            ChannelModel::arq(self.p0)
        } else {
            ChannelModel::harq(self.p0, self.lambda, self.r_max)
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reduced scale for smoke runs.
    pub fn quick(mut self) -> Self {
        self.horizon = 2000;
        self.replications = 50;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.p0.is_empty() || self.lambda.is_empty() || self.r_max.is_empty() || self.c_max.is_empty() {
            return bad("every grid needs at least one value".into());
        }
        if let Some(p) = self.p0.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return bad(format!("p0 = {p} must lie in (0, 1)"));
        }
        if let Some(l) = self.lambda.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
            return bad(format!("lambda = {l} must lie in (0, 1]"));
        }
        if let Some(c) = self.c_max.iter().find(|&&c| !(c > 0.0 && c <= 1.0)) {
            return bad(format!("c_max = {c} must lie in (0, 1]"));
        }
        if let Some(r) = self.r_max.iter().find(|&&r| r >= self.n_max) {
            return bad(format!("r_max = {r} must be below n_max = {}", self.n_max));
        }
        if self.replications == 0 {
            return bad("replications must be >= 1".into());
        }
        Ok(())
    }

    /// Grid points in `p0, lambda, r_max, c_max` order; ARQ points appear
    /// once per `p0` regardless of `lambda`.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out: Vec<GridPoint> = Vec::new();
        for &p0 in &self.p0 {
            for &lambda in &self.lambda {
                for &r_max in &self.r_max {
                    for &c_max in &self.c_max {
                        let pt = GridPoint {
                            p0,
                            lambda: if r_max == 0 { 1.0 } else { lambda },
                            r_max,
                            c_max,
                        };
                        if !out.contains(&pt) {
                            out.push(pt);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Budget-optimal policy with its exact performance.
#[derive(Debug, Clone)]
pub struct OptimalPoint {
    pub policy: Policy,
    pub eta_star: Option<f64>,
    pub aoi: f64,
    pub cost: f64,
}

/// Closed form for ARQ, price search plus mixing for HARQ.
pub fn optimal_at(pt: &GridPoint, spec: &ExperimentSpec) -> Result<OptimalPoint> {
    if pt.r_max == 0 {
        let rt = arq::optimal_policy(&ArqInstance::new(pt.p0, pt.c_max)?);
        return Ok(OptimalPoint {
            policy: rt.policy(),
            eta_star: None,
            aoi: rt.aoi,
            cost: rt.cost,
        });
    }
    let cmdp = Cmdp::with_n_max(pt.model()?, spec.n_max)?;
    let sol = solve_constrained_on(&cmdp, pt.c_max, &spec.search, &spec.solver)?;
    Ok(OptimalPoint {
        policy: sol.mixed,
        eta_star: Some(sol.eta_star),
        aoi: sol.achieved_aoi,
        cost: sol.achieved_cost,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub p0: f64,
    pub lambda: f64,
    pub r_max: u32,
    pub c_max: f64,
    pub protocol: &'static str,
    /// `optimal` or `baseline`.
    pub policy: &'static str,
    pub eta_star: Option<f64>,
    pub exact_aoi: Option<f64>,
    pub exact_cost: Option<f64>,
    pub mean_aoi: Option<f64>,
    pub var_aoi: Option<f64>,
    pub mean_cost: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    fn new(pt: &GridPoint, policy: &'static str) -> Self {
        SweepRow {
            p0: pt.p0,
            lambda: pt.lambda,
            r_max: pt.r_max,
            c_max: pt.c_max,
            protocol: pt.protocol(),
            policy,
            eta_star: None,
            exact_aoi: None,
            exact_cost: None,
            mean_aoi: None,
            var_aoi: None,
            mean_cost: None,
            error: None,
        }
    }
}

fn sweep_point(pt: &GridPoint, spec: &ExperimentSpec, seed: u64) -> [SweepRow; 2] {
    let mut opt_row = SweepRow::new(pt, "optimal");
    let mut base_row = SweepRow::new(pt, "baseline");
    let fill_sim = |row: &mut SweepRow, policy: &Policy, model: &ChannelModel| -> Result<()> {
        if spec.simulate {
            let st = evaluate_simulated(policy, model, spec.horizon, spec.replications, seed)?;
            row.mean_aoi = Some(st.mean_aoi);
            row.var_aoi = Some(st.var_aoi);
            row.mean_cost = Some(st.mean_cost);
        }
        Ok(())
    };
    let mut optimal = || -> Result<()> {
        let model = pt.model()?;
        let opt = optimal_at(pt, spec)?;
        opt_row.eta_star = opt.eta_star;
        opt_row.exact_aoi = Some(opt.aoi);
        opt_row.exact_cost = Some(opt.cost);
        fill_sim(&mut opt_row, &opt.policy, &model)
    };
    if let Err(e) = optimal() {
        opt_row.error = Some(e.to_string());
    }
    let mut baseline = || -> Result<()> {
        let model = pt.model()?;
        let policy = baseline_periodic(pt.c_max)?;
        let trunc = Truncation::for_model(&model, spec.n_max)?;
        let ev = evaluate_exact(&policy, &model, &trunc)?;
        base_row.exact_aoi = Some(ev.avg_aoi);
        base_row.exact_cost = Some(ev.avg_cost);
        fill_sim(&mut base_row, &policy, &model)
    };
    if let Err(e) = baseline() {
        base_row.error = Some(e.to_string());
    }
    [opt_row, base_row]
}

/// Optimal and baseline rows for every grid point, in grid order. Failures
/// are reported in the `error` column and do not stop the sweep.
pub fn sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let points = spec.points();
    let rows: Vec<[SweepRow; 2]> = points
        .par_iter()
        .enumerate()
        .map(|(k, pt)| sweep_point(pt, spec, spec.seed.wrapping_add(k as u64)))
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_rows_csv<T: Serialize, W: std::io::Write>(rows: &[T], header: &[&str], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub const SWEEP_HEADER: [&str; 13] = [
    "p0",
    "lambda",
    "r_max",
    "c_max",
    "protocol",
    "policy",
    "eta_star",
    "exact_aoi",
    "exact_cost",
    "mean_aoi",
    "var_aoi",
    "mean_cost",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnRow {
    pub p0: f64,
    pub lambda: f64,
    pub r_max: u32,
    pub c_max: f64,
    pub planned_aoi: Option<f64>,
    pub learned_mean_aoi: Option<f64>,
    pub learned_var_aoi: Option<f64>,
    pub learned_mean_cost: Option<f64>,
    /// `learned / planned - 1`.
    pub relative_gap: Option<f64>,
    pub error: Option<String>,
}

pub const LEARN_HEADER: [&str; 10] = [
    "p0",
    "lambda",
    "r_max",
    "c_max",
    "planned_aoi",
    "learned_mean_aoi",
    "learned_var_aoi",
    "learned_mean_cost",
    "relative_gap",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnCurveRow {
    pub p0: f64,
    pub lambda: f64,
    pub r_max: u32,
    pub c_max: f64,
    pub n: u64,
    pub mean_aoi: f64,
    pub var_aoi: f64,
    pub mean_cost: f64,
    pub var_cost: f64,
    pub mean_eta: f64,
}

pub const LEARN_CURVE_HEADER: [&str; 10] = [
    "p0",
    "lambda",
    "r_max",
    "c_max",
    "n",
    "mean_aoi",
    "var_aoi",
    "mean_cost",
    "var_cost",
    "mean_eta",
];

/// Trains SARSA on every grid point (`spec.horizon` steps, `spec.replications`
/// runs) and compares the final running-average age with the planned policy.
pub fn learn(spec: &ExperimentSpec) -> Result<(Vec<LearnRow>, Vec<LearnCurveRow>)> {
    spec.validate()?;
    let points = spec.points();
    let results: Vec<(LearnRow, Vec<LearnCurveRow>)> = points
        .par_iter()
        .enumerate()
        .map(|(k, pt)| {
            let mut row = LearnRow {
                p0: pt.p0,
                lambda: pt.lambda,
                r_max: pt.r_max,
                c_max: pt.c_max,
                planned_aoi: None,
                learned_mean_aoi: None,
                learned_var_aoi: None,
                learned_mean_cost: None,
                relative_gap: None,
                error: None,
            };
            let mut curve = Vec::new();
            let mut go = || -> Result<()> {
                let model = pt.model()?;
                let planned = optimal_at(pt, spec)?.aoi;
                row.planned_aoi = Some(planned);
                let cfg = LearnerConfig {
                    horizon: spec.horizon,
                    seed: spec.seed.wrapping_add(k as u64),
                    n_max: spec.n_max,
                    c_max: (pt.c_max < 1.0).then_some(pt.c_max),
                    no_idle: pt.c_max >= 1.0,
                    ..spec.learner
                };
                let summary = train_replications(&model, &cfg, spec.replications)?;
                if let Some(last) = summary.curve.last() {
                    row.learned_mean_aoi = Some(last.mean_aoi);
                    row.learned_var_aoi = Some(last.var_aoi);
                    row.learned_mean_cost = Some(last.mean_cost);
                    row.relative_gap = Some(last.mean_aoi / planned - 1.0);
                }
                curve = summary
                    .curve
                    .into_iter()
                    .map(|c: CurvePoint| LearnCurveRow {
                        p0: pt.p0,
                        lambda: pt.lambda,
                        r_max: pt.r_max,
                        c_max: pt.c_max,
                        n: c.n,
                        mean_aoi: c.mean_aoi,
                        var_aoi: c.var_aoi,
                        mean_cost: c.mean_cost,
                        var_cost: c.var_cost,
                        mean_eta: c.mean_eta,
                    })
                    .collect();
                Ok(())
            };
            if let Err(e) = go() {
                row.error = Some(e.to_string());
            }
            (row, curve)
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut curves = Vec::new();
    for (r, c) in results {
        rows.push(r);
        curves.extend(c);
    }
    Ok((rows, curves))
}

/// Formula deliberately broken by `verify` to demonstrate a failing report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    ArqCost,
    ArqAoi,
    Candidates,
}

impl std::str::FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arq-cost" => Ok(Perturbation::ArqCost),
            "arq-aoi" => Ok(Perturbation::ArqAoi),
            "candidates" => Ok(Perturbation::Candidates),
            other => Err(Error::InvalidParameter(format!(
                "unknown perturbation {other:?} (arq-cost, arq-aoi, candidates)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VerifyOptions {
    pub quick: bool,
    pub perturb: Option<Perturbation>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// The identity being checked.
    pub identity: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// First violating case.
    pub failure: Option<String>,
}

struct Check {
    name: &'static str,
    identity: &'static str,
    tolerance: f64,
    cases: usize,
    max_error: f64,
    failure: Option<String>,
}

impl Check {
    fn new(name: &'static str, identity: &'static str, tolerance: f64) -> Self {
        Check {
            name,
            identity,
            tolerance,
            cases: 0,
            max_error: 0.0,
            failure: None,
        }
    }

    /// Records a case with error `err` against the check's tolerance.
    fn case(&mut self, err: f64, describe: impl FnOnce() -> String) {
        self.case_within(err, self.tolerance, describe);
    }

    fn case_within(&mut self, err: f64, tol: f64, describe: impl FnOnce() -> String) {
        self.cases += 1;
        let err = if err.is_nan() { f64::INFINITY } else { err };
        self.max_error = self.max_error.max(err);
        if err > tol && self.failure.is_none() {
            self.failure = Some(describe());
        }
    }

    fn fail(&mut self, msg: String) {
        self.cases += 1;
        self.max_error = f64::INFINITY;
        if self.failure.is_none() {
            self.failure = Some(msg);
        }
    }

    fn finish(self) -> CheckOutcome {
        CheckOutcome {
            name: self.name,
            identity: self.identity,
            passed: self.failure.is_none(),
            cases: self.cases,
            max_error: self.max_error,
            tolerance: self.tolerance,
            failure: self.failure,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn check_arq_closed_form(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let mut cost = Check::new("arq-cost", "exact chain cost = 1/(delta(1-p)+p)", 1e-8);
    let mut aoi = Check::new("arq-aoi", "exact chain age = closed-form J^delta", 1e-8);
    let mut stat = Check::new("arq-stationary", "stationary law = closed-form p_delta", 1e-10);
    let ps: Vec<f64> = if opts.quick {
        vec![0.1, 0.5, 0.9]
    } else {
        (1..=9).map(|k| k as f64 / 10.0).collect()
    };
    let deltas = if opts.quick { 1..=12 } else { 1..=50 };
    for &p in &ps {
        let model = ChannelModel::arq(p).expect("grid p is valid");
        for delta in deltas.clone() {
            let n_max = arq::n_max_for_tail(p, delta, 1e-13);
            let trunc = Truncation::new(n_max, 0).expect("n_max >= 2");
            let policy = Policy::Threshold(ThresholdPolicy::deterministic(delta));
            let ev = match evaluate_exact(&policy, &model, &trunc) {
                Ok(ev) => ev,
                Err(e) => {
                    cost.fail(format!("p={p} delta={delta}: {e}"));
                    continue;
                }
            };
            let mut c_formula = arq::cost_of_threshold(p, delta);
            let mut j_formula = arq::aoi_of_threshold(p, delta);
            match opts.perturb {
                Some(Perturbation::ArqCost) => c_formula *= 1.0 + 1e-6,
                Some(Perturbation::ArqAoi) => j_formula *= 1.0 + 1e-6,
                _ => {}
            }
            let e = rel(ev.avg_cost, c_formula);
            cost.case(e, || {
                format!("p={p} delta={delta}: chain {} vs formula {c_formula}", ev.avg_cost)
            });
            let e = rel(ev.avg_aoi, j_formula);
            aoi.case(e, || {
                format!("p={p} delta={delta}: chain {} vs formula {j_formula}", ev.avg_aoi)
            });
            for d in 1..=(delta + 5).min(n_max - 1) {
                let e = (ev.prob(State::new(d, 0)) - arq::stationary_probs(p, delta, d)).abs();
                stat.case(e, || format!("p={p} delta={delta} age={d}: error {e:e}"));
            }
        }
    }
    vec![cost.finish(), aoi.finish(), stat.finish()]
}

fn check_candidates(opts: &VerifyOptions) -> CheckOutcome {
    let mut c = Check::new(
        "threshold-candidates",
        "argmin over 1..1000 of L^delta_eta lies in threshold_candidates",
        0.0,
    );
    let ps: &[f64] = if opts.quick {
        &[0.1, 0.5, 0.9]
    } else {
        &[0.05, 0.1, 0.3, 0.5, 0.7, 0.9]
    };
    let etas: Vec<f64> = if opts.quick {
        vec![0.5, 3.0, 10.0, 50.0]
    } else {
        (1..=100).map(|k| k as f64 * 0.5).collect()
    };
    for &p in ps {
        for &eta in &etas {
            let best = (1..=1000u32)
                .min_by(|&a, &b| {
                    arq::lagrangian_cost(p, a, eta)
                        .partial_cmp(&arq::lagrangian_cost(p, b, eta))
                        .expect("finite costs")
                })
                .expect("non-empty range");
            let (mut lo, mut hi) = arq::threshold_candidates(p, eta);
            if opts.perturb == Some(Perturbation::Candidates) {
                lo += 1;
                hi += 1;
            }
            let err = if best == lo || best == hi { 0.0 } else { 1.0 };
            c.case(err, || format!("p={p} eta={eta}: argmin {best} not in ({lo}, {hi})"));
        }
    }
    c.finish()
}

fn check_rvi_arq(opts: &VerifyOptions) -> CheckOutcome {
    let solver = SolverConfig::default();
    let mut c = Check::new(
        "rvi-vs-arq",
        "RVI policy on ARQ is a threshold among the candidate pair, Bellman residual <= 2 eps",
        2.0 * solver.epsilon,
    );
    let n_max = if opts.quick { 150 } else { 500 };
    let cases: &[(f64, f64)] = if opts.quick {
        &[(0.3, 5.0), (0.5, 10.0)]
    } else {
        &[
            (0.1, 2.0),
            (0.3, 5.0),
            (0.5, 10.0),
            (0.5, 37.5),
            (0.7, 20.0),
            (0.9, 50.0),
        ]
    };
    for &(p, eta) in cases {
        let run = || -> Result<(Option<u32>, f64)> {
            let cmdp = Cmdp::with_n_max(ChannelModel::arq(p)?, n_max)?;
            let out = solve_cmdp(&cmdp, eta, ActionSet::Full, &solver)?;
            Ok((out.policy_table().threshold(), bellman_residual(&out, &cmdp, eta)))
        };
        match run() {
            Ok((threshold, residual)) => {
                let (lo, hi) = arq::threshold_candidates(p, eta);
                if threshold.is_some_and(|t| t == lo || t == hi) {
                    c.case(residual, || format!("p={p} eta={eta}: residual {residual:e}"));
                } else {
                    c.fail(format!("p={p} eta={eta}: threshold {threshold:?} not in ({lo}, {hi})"));
                }
            }
            Err(e) => c.fail(format!("p={p} eta={eta}: {e}")),
        }
    }
    c.finish()
}

fn check_constraint(opts: &VerifyOptions) -> CheckOutcome {
    let mut c = Check::new(
        "constraint-equality",
        "mixed policy spends exactly C_max under exact evaluation",
        1e-6,
    );
    let cases: &[(f64, f64, u32, f64)] = if opts.quick {
        &[(0.3, 0.5, 9, 0.4), (0.5, 0.5, 3, 0.35), (0.5, 1.0, 0, 0.35)]
    } else {
        &[
            (0.3, 0.5, 9, 0.4),
            (0.4, 0.5, 9, 0.2),
            (0.5, 0.5, 3, 0.4),
            (0.5, 0.5, 3, 0.15),
            (0.2, 0.8, 5, 0.25),
            (0.7, 0.3, 2, 0.6),
            (0.5, 1.0, 0, 0.35),
            (0.9, 1.0, 0, 0.1),
        ]
    };
    for &(p0, lambda, r_max, c_max) in cases {
        let run = || -> Result<f64> {
            let model = if r_max == 0 {
                ChannelModel::arq(p0)?
            } else {
                ChannelModel::harq(p0, lambda, r_max)?
            };
            let cmdp = Cmdp::with_n_max(model, 150)?;
            let sol = solve_constrained_on(&cmdp, c_max, &EtaSearchConfig::default(), &SolverConfig::default())?;
            Ok(sol.achieved_cost)
        };
        match run() {
            Ok(cost) => {
                let e = (cost - c_max).abs();
                c.case(e, || {
                    format!("p0={p0} lambda={lambda} r_max={r_max} C_max={c_max}: cost {cost}")
                });
            }
            Err(e) => c.fail(format!("p0={p0} lambda={lambda} r_max={r_max} C_max={c_max}: {e}")),
        }
    }
    c.finish()
}

fn check_simulation(opts: &VerifyOptions) -> CheckOutcome {
    let mut c = Check::new(
        "simulation-agreement",
        "simulated mean age and cost within 3 standard errors of exact evaluation",
        3.0,
    );
    let (horizon, reps) = if opts.quick { (100_000, 16) } else { (1_000_000, 16) };
    let n_max = 150;
    let mut policies: Vec<(String, ChannelModel, Policy)> = Vec::new();
    let arq = ChannelModel::arq(0.5).expect("valid");
    policies.push((
        "threshold".into(),
        arq,
        Policy::Threshold(ThresholdPolicy::deterministic(4)),
    ));
    policies.push(("periodic".into(), arq, Policy::periodic(3).expect("valid")));
    for (label, model, c_max) in [
        ("arq-randomized", arq, 0.35),
        ("harq-mixture", ChannelModel::harq(0.3, 0.5, 9).expect("valid"), 0.4),
    ] {
        match Cmdp::with_n_max(model, n_max)
            .and_then(|cmdp| solve_constrained_on(&cmdp, c_max, &EtaSearchConfig::default(), &SolverConfig::default()))
        {
            Ok(sol) => {
                policies.push((
                    format!("{label}-low"),
                    model,
                    Policy::Deterministic(sol.policy_low.clone()),
                ));
                policies.push((label.to_string(), model, sol.mixed));
            }
            Err(e) => c.fail(format!("{label}: {e}")),
        }
    }
    for (k, (label, model, policy)) in policies.iter().enumerate() {
        let run = || -> Result<(f64, f64, f64, f64)> {
            let cmdp = Cmdp::with_n_max(*model, n_max)?;
            let ex = evaluate_on(&cmdp, policy)?;
            let st = evaluate_simulated(policy, model, horizon, reps, opts.seed.wrapping_add(k as u64))?;
            // finite-horizon averages of deterministic quantities are off by O(1/T)
            let floor = 1.0 / horizon as f64;
            let z_aoi = (st.mean_aoi - ex.avg_aoi).abs() / st.se_aoi().max(floor);
            let z_cost = (st.mean_cost - ex.avg_cost).abs() / st.se_cost().max(floor);
            Ok((z_aoi, z_cost, st.mean_aoi, ex.avg_aoi))
        };
        match run() {
            Ok((za, zc, sim, exact)) => {
                c.case(za, || format!("{label}: age {sim} vs exact {exact} ({za:.2} SE)"));
                c.case(zc, || format!("{label}: cost off by {zc:.2} SE"));
            }
            Err(e) => c.fail(format!("{label}: {e}")),
        }
    }
    c.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub quick: bool,
    pub checks: Vec<CheckOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs the oracle suites.
pub fn verify(opts: &VerifyOptions) -> VerifyReport {
    let mut checks = check_arq_closed_form(opts);
    checks.push(check_candidates(opts));
    checks.push(check_rvi_arq(opts));
    checks.push(check_constraint(opts));
    checks.push(check_simulation(opts));
    VerifyReport {
        quick: opts.quick,
        checks,
    }
}
