use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use aoi_sched::arq::{self, ArqInstance};
use aoi_sched::eval::evaluate_on;
use aoi_sched::experiment::{
    self, ExperimentSpec, GridPoint, Perturbation, VerifyOptions, LEARN_CURVE_HEADER, LEARN_HEADER, SWEEP_HEADER,
};
use aoi_sched::lagrange::solve_constrained_on;
use aoi_sched::policy::ThresholdPolicy;
use aoi_sched::rvi::{solve_cmdp, ActionSet};
use aoi_sched::sarsa::{train, write_timeline_csv, LearnerConfig};
use aoi_sched::sim::{self, baseline_periodic, evaluate_simulated, StatsRow};
use aoi_sched::{Cmdp, Error, Policy, Result};

#[derive(Parser)]
#[command(
    name = "aoi-sched",
    version,
    about = "Age-of-information transmission scheduling over ARQ/HARQ links"
)]
struct Cli {
    /// JSON experiment document; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, global = true, env = "AOI_SCHED_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// First-transmission error probability.
    #[arg(long)]
    p0: Option<f64>,
    /// Error decay per retransmission.
    #[arg(long)]
    lambda: Option<f64>,
    /// Retransmission limit; 0 selects ARQ.
    #[arg(long)]
    rmax: Option<u32>,
    /// Age truncation level.
    #[arg(long)]
    n_max: Option<u32>,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the relaxed problem at a fixed transmission price.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        /// Never idle (no transmission budget).
        #[arg(long)]
        unconstrained: bool,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Closed-form ARQ thresholds and the budget-optimal randomized policy.
    Arq {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        c_max: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Search the price meeting the budget and build the randomized policy.
    SearchEta {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        c_max: Option<f64>,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Simulate a policy.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        c_max: Option<f64>,
        /// `optimal`, `baseline`, `threshold:N` or `periodic:N`.
        #[arg(long, default_value = "optimal")]
        policy: String,
        /// Write the slot trace of replication 0.
        #[arg(long)]
        trace: bool,
    },
    /// Train SARSA on every grid point and compare with the planned policy.
    Learn {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        c_max: Option<f64>,
        #[arg(long)]
        quick: bool,
    },
    /// Optimal and baseline policies over the experiment grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated grid overrides.
        #[arg(long, value_delimiter = ',')]
        p0: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        rmax: Option<Vec<u32>>,
        #[arg(long, value_delimiter = ',')]
        c_max: Option<Vec<f64>>,
        #[arg(long)]
        n_max: Option<u32>,
        /// Exact evaluation only.
        #[arg(long)]
        no_sim: bool,
        #[arg(long)]
        quick: bool,
    },
    /// Run the oracle checks; exit status 1 if any fails.
    Verify {
        #[arg(long)]
        quick: bool,
        /// Deliberately break a formula: arq-cost, arq-aoi or candidates.
        #[arg(long)]
        perturb: Option<Perturbation>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Ctx {
    spec: ExperimentSpec,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn point(&self, m: &ModelArgs, c_max: Option<f64>) -> GridPoint {
        GridPoint {
            p0: m.p0.unwrap_or(self.spec.p0[0]),
            lambda: m.lambda.unwrap_or(self.spec.lambda[0]),
            r_max: m.rmax.unwrap_or(*self.spec.r_max.last().expect("validated")),
            c_max: c_max.unwrap_or(self.spec.c_max[0]),
        }
    }

    fn n_max(&self, m: &ModelArgs) -> u32 {
        m.n_max.unwrap_or(self.spec.n_max)
    }

    fn apply_run(&mut self, run: &RunArgs) {
        if let Some(h) = run.horizon {
            self.spec.horizon = h;
        }
        if let Some(r) = run.replications {
            self.spec.replications = r;
        }
        if let Some(s) = run.seed {
            self.spec.seed = s;
        }
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn parse_policy(name: &str, pt: &GridPoint, spec: &ExperimentSpec) -> Result<(Policy, Option<f64>)> {
    let arg = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| Error::InvalidParameter(format!("bad policy argument {s:?}")))
    };
    match name.split_once(':') {
        None if name == "optimal" => {
            let opt = experiment::optimal_at(pt, spec)?;
            Ok((opt.policy, opt.eta_star))
        }
        None if name == "baseline" => Ok((baseline_periodic(pt.c_max)?, None)),
        Some(("threshold", n)) => Ok((Policy::Threshold(ThresholdPolicy::deterministic(arg(n)?)), None)),
        Some(("periodic", n)) => Ok((Policy::periodic(arg(n)?)?, None)),
        _ => Err(Error::InvalidParameter(format!(
            "unknown policy {name:?} (optimal, baseline, threshold:N, periodic:N)"
        ))),
    }
}

fn run(cli: Cli) -> Result<bool> {
    let spec = match &cli.config {
        Some(p) => ExperimentSpec::from_json(&std::fs::read_to_string(p)?)?,
        None => ExperimentSpec::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut ctx = Ctx { spec, out };

    match cli.cmd {
        Command::Solve {
            model,
            eta,
            unconstrained,
            epsilon,
        } => {
            let pt = ctx.point(&model, None);
            let cmdp = Cmdp::with_n_max(pt.model()?, ctx.n_max(&model))?;
            let mut solver = ctx.spec.solver;
            if let Some(e) = epsilon {
                solver.epsilon = e;
            }
            let (eta, actions) = if unconstrained {
                (0.0, ActionSet::NoIdle)
            } else {
                (eta, ActionSet::Full)
            };
            let sol = solve_cmdp(&cmdp, eta, actions, &solver)?;
            let table = sol.policy_table();
            let ev = evaluate_on(&cmdp, &Policy::Deterministic(table.clone()));
            sol.write_csv(ctx.create("solve_policy.csv")?)?;
            let (aoi, cost) = match &ev {
                Ok(e) => (json!(e.avg_aoi), json!(e.avg_cost)),
                Err(_) => (json!(null), json!(null)),
            };
            print_json(&json!({
                "p0": pt.p0,
                "lambda": pt.lambda,
                "r_max": pt.r_max,
                "n_max": cmdp.truncation().n_max,
                "eta": eta,
                "unconstrained": unconstrained,
                "gain": sol.gain,
                "iterations": sol.iterations,
                "residual": sol.residual,
                "threshold": table.threshold(),
                "transmitting_states": table.transmissions(),
                "avg_aoi": aoi,
                "avg_cost": cost,
                "evaluation_error": ev.err().map(|e| e.to_string()),
                "policy_csv": display(&ctx.path("solve_policy.csv")),
            }));
        }
        Command::Arq { p, c_max, eta } => {
            let mut v = json!({ "p": p });
            if let Some(eta) = eta {
                let (lo, hi) = arq::threshold_candidates(p, eta);
                v["eta"] = json!(eta);
                v["real_threshold"] = json!(arq::optimal_real_threshold(p, eta));
                v["candidates"] = json!([lo, hi]);
            }
            if let Some(c) = c_max {
                v["c_max"] = json!(c);
                v["optimal"] = serde_json::to_value(arq::optimal_policy(&ArqInstance::new(p, c)?))?;
            }
            print_json(&v);
        }
        Command::SearchEta {
            model,
            c_max,
            xi,
            max_steps,
        } => {
            let pt = ctx.point(&model, c_max);
            let cmdp = Cmdp::with_n_max(pt.model()?, ctx.n_max(&model))?;
            let mut cfg = ctx.spec.search;
            if let Some(x) = xi {
                cfg.xi = x;
            }
            if let Some(m) = max_steps {
                cfg.max_steps = m;
            }
            let sol = solve_constrained_on(&cmdp, pt.c_max, &cfg, &ctx.spec.solver)?;
            sol.search.write_csv(ctx.create("search_eta.csv")?)?;
            print_json(&json!({
                "p0": pt.p0,
                "lambda": pt.lambda,
                "r_max": pt.r_max,
                "c_max": pt.c_max,
                "eta_star": sol.eta_star,
                "termination": format!("{:?}", sol.search.termination),
                "steps": sol.search.steps.len(),
                "eta_low": sol.eta_low,
                "eta_high": sol.eta_high,
                "cost_low": sol.eval_low.avg_cost,
                "cost_high": sol.eval_high.avg_cost,
                "aoi_low": sol.eval_low.avg_aoi,
                "aoi_high": sol.eval_high.avg_aoi,
                "mu": sol.mu,
                "policy": sol.mixed.kind(),
                "mixed_state": sol.mixed_state,
                "achieved_cost": sol.achieved_cost,
                "achieved_aoi": sol.achieved_aoi,
                "trace_csv": display(&ctx.path("search_eta.csv")),
            }));
        }
        Command::Simulate {
            model,
            run,
            c_max,
            policy,
            trace,
        } => {
            ctx.apply_run(&run);
            if let Some(n) = model.n_max {
                ctx.spec.n_max = n;
            }
            let pt = ctx.point(&model, c_max);
            let ch = pt.model()?;
            let (pol, eta_star) = parse_policy(&policy, &pt, &ctx.spec)?;
            let stats = evaluate_simulated(&pol, &ch, ctx.spec.horizon, ctx.spec.replications, ctx.spec.seed)?;
            let row = StatsRow::new(policy.clone(), &ch, Some(pt.c_max), &stats);
            sim::write_stats_csv(&[row], ctx.create("simulate.csv")?)?;
            let mut v = json!({
                "policy": policy,
                "kind": pol.kind(),
                "eta_star": eta_star,
                "p0": pt.p0,
                "lambda": pt.lambda,
                "r_max": pt.r_max,
                "c_max": pt.c_max,
                "horizon": stats.horizon,
                "replications": stats.replications,
                "mean_aoi": stats.mean_aoi,
                "var_aoi": stats.var_aoi,
                "se_aoi": stats.se_aoi(),
                "mean_cost": stats.mean_cost,
                "se_cost": stats.se_cost(),
                "stats_csv": display(&ctx.path("simulate.csv")),
            });
            if trace {
                let (_, slots) = sim::run(&pol, &ch, ctx.spec.horizon, ctx.spec.seed, true)?;
                let slots = slots.unwrap_or_default();
                sim::write_trace_csv(&slots, ctx.create("trace.csv")?)?;
                v["retransmits_after_idle"] = json!(sim::retransmits_after_idle(&slots));
                v["trace_csv"] = json!(display(&ctx.path("trace.csv")));
            }
            print_json(&v);
        }
        Command::Learn {
            model,
            run,
            c_max,
            quick,
        } => {
            if quick {
                ctx.spec = ctx.spec.clone().quick();
            }
            ctx.apply_run(&run);
            if let Some(p) = model.p0 {
                ctx.spec.p0 = vec![p];
            }
            if let Some(l) = model.lambda {
                ctx.spec.lambda = vec![l];
            }
            if let Some(r) = model.rmax {
                ctx.spec.r_max = vec![r];
            }
            if let Some(c) = c_max {
                ctx.spec.c_max = vec![c];
            }
            if let Some(n) = model.n_max {
                ctx.spec.learner.n_max = n;
            }
            let (rows, curves) = experiment::learn(&ctx.spec)?;
            experiment::write_rows_csv(&rows, &LEARN_HEADER, ctx.create("learn_summary.csv")?)?;
            experiment::write_rows_csv(&curves, &LEARN_CURVE_HEADER, ctx.create("learn_curve.csv")?)?;
            let points = ctx.spec.points();
            if let [pt] = points.as_slice() {
                let cfg = LearnerConfig {
                    horizon: ctx.spec.horizon,
                    seed: ctx.spec.seed,
                    c_max: (pt.c_max < 1.0).then_some(pt.c_max),
                    no_idle: pt.c_max >= 1.0,
                    ..ctx.spec.learner
                };
                let (state, timeline) = train(&pt.model()?, &cfg)?;
                write_timeline_csv(&timeline, ctx.create("learn_timeline.csv")?)?;
                state.q.write_csv(ctx.create("learn_q.csv")?)?;
            }
            print_json(&json!({
                "rows": rows,
                "summary_csv": display(&ctx.path("learn_summary.csv")),
                "curve_csv": display(&ctx.path("learn_curve.csv")),
            }));
        }
        Command::Sweep {
            run,
            p0,
            lambda,
            rmax,
            c_max,
            n_max,
            no_sim,
            quick,
        } => {
            if quick {
                ctx.spec = ctx.spec.clone().quick();
            }
            ctx.apply_run(&run);
            let s = &mut ctx.spec;
            s.p0 = p0.unwrap_or(std::mem::take(&mut s.p0));
            s.lambda = lambda.unwrap_or(std::mem::take(&mut s.lambda));
            s.r_max = rmax.unwrap_or(std::mem::take(&mut s.r_max));
            s.c_max = c_max.unwrap_or(std::mem::take(&mut s.c_max));
            s.n_max = n_max.unwrap_or(s.n_max);
            s.simulate &= !no_sim;
            let rows = experiment::sweep(&ctx.spec)?;
            experiment::write_rows_csv(&rows, &SWEEP_HEADER, ctx.create("sweep.csv")?)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            print_json(&json!({
                "rows": rows.len(),
                "failed_rows": failed,
                "sweep_csv": display(&ctx.path("sweep.csv")),
            }));
        }
        Command::Verify { quick, perturb, seed } => {
            let report = experiment::verify(&VerifyOptions { quick, perturb, seed });
            print_json(&serde_json::to_value(&report)?);
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
