//! Python bindings: channel models, RVI, exact evaluation, the budget-meeting
//! randomized policy, simulation and SARSA training.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use aoi_sched::arq::{self as arq_rs, ArqInstance};
use aoi_sched::eval::{self, EvalResult};
use aoi_sched::lagrange::{self, EtaSearchConfig};
use aoi_sched::policy::ThresholdPolicy;
use aoi_sched::rvi::{self, ActionSet, SolverConfig, SolverOutput};
use aoi_sched::sarsa::{self, LearnerConfig};
use aoi_sched::sim::{self, RunStats};
use aoi_sched::{Action, Cmdp, Error, State};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_)
        | Error::InadmissibleQuery { .. }
        | Error::InadmissibleState(_)
        | Error::InadmissibleAction { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn action_name(a: Action) -> &'static str {
    match a {
        Action::Idle => "idle",
        Action::NewUpdate => "new",
        Action::Retransmit => "retransmit",
    }
}

type TraceRow = (u64, u32, u32, &'static str, Option<bool>);
type CurveRow = (u64, f64, f64, f64, f64);

/// Error profile `g(r) = p0 * lambda^r`; `r_max = 0` is classical ARQ and
/// `None` allows unlimited retransmissions.
#[pyclass(name = "ChannelModel", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyChannelModel {
    inner: aoi_sched::ChannelModel,
}

#[pymethods]
impl PyChannelModel {
    #[new]
    #[pyo3(signature = (p0, lam = 1.0, r_max = None))]
    fn new(p0: f64, lam: f64, r_max: Option<u32>) -> PyResult<Self> {
        let inner = aoi_sched::ChannelModel::new(p0, lam, r_max).map_err(to_py)?;
        Ok(PyChannelModel { inner })
    }

    #[staticmethod]
    fn arq(p: f64) -> PyResult<Self> {
        Ok(PyChannelModel {
            inner: aoi_sched::ChannelModel::arq(p).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn harq(p0: f64, lam: f64, r_max: u32) -> PyResult<Self> {
        Ok(PyChannelModel {
            inner: aoi_sched::ChannelModel::harq(p0, lam, r_max).map_err(to_py)?,
        })
    }

    #[getter]
    fn p0(&self) -> f64 {
        self.inner.p0()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn r_max(&self) -> Option<u32> {
        self.inner.r_max()
    }

    fn error_prob(&self, r: u32) -> PyResult<f64> {
        self.inner.error_prob(r).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "ChannelModel(p0={}, lam={}, r_max={:?})",
            self.inner.p0(),
            self.inner.lambda(),
            self.inner.r_max()
        )
    }
}

#[pyclass(name = "Policy", frozen, from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: aoi_sched::Policy,
}

#[pymethods]
impl PyPolicy {
    /// Transmit a fresh update once the age reaches `threshold`; at exactly
    /// `threshold` only with probability `prob_at_threshold`.
    #[staticmethod]
    #[pyo3(signature = (threshold, prob_at_threshold = 1.0))]
    fn threshold(threshold: u32, prob_at_threshold: f64) -> PyResult<Self> {
        let t = ThresholdPolicy::randomized(threshold, prob_at_threshold).map_err(to_py)?;
        Ok(PyPolicy {
            inner: aoi_sched::Policy::Threshold(t),
        })
    }

    /// Feedback-free baseline: a fresh update every `period` slots.
    #[staticmethod]
    fn periodic(period: u32) -> PyResult<Self> {
        Ok(PyPolicy {
            inner: aoi_sched::Policy::periodic(period).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn baseline(c_max: f64) -> PyResult<Self> {
        Ok(PyPolicy {
            inner: sim::baseline_periodic(c_max).map_err(to_py)?,
        })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    /// `(p_idle, p_new, p_retransmit)` for stationary policies, else `None`.
    fn action_probs(&self, delta: u32, r: u32) -> Option<(f64, f64, f64)> {
        self.inner
            .action_probs(State::new(delta, r))
            .map(|p| (p[0], p[1], p[2]))
    }

    #[pyo3(signature = (model, n_max = 200))]
    fn evaluate(&self, py: Python<'_>, model: PyChannelModel, n_max: u32) -> PyResult<PyEval> {
        let policy = self.inner.clone();
        py.detach(move || {
            let cmdp = Cmdp::with_n_max(model.inner, n_max)?;
            eval::evaluate_on(&cmdp, &policy)
        })
        .map(|inner| PyEval { inner })
        .map_err(to_py)
    }

    #[pyo3(signature = (model, horizon = 10_000, replications = 100, seed = 0))]
    fn simulate(
        &self,
        py: Python<'_>,
        model: PyChannelModel,
        horizon: u64,
        replications: usize,
        seed: u64,
    ) -> PyResult<PyRunStats> {
        let policy = self.inner.clone();
        py.detach(move || sim::evaluate_simulated(&policy, &model.inner, horizon, replications, seed))
            .map(|inner| PyRunStats { inner })
            .map_err(to_py)
    }

    /// Slot trace `(t, delta, r, action, success)` of one run.
    #[pyo3(signature = (model, horizon, seed = 0))]
    fn trace(&self, py: Python<'_>, model: PyChannelModel, horizon: u64, seed: u64) -> PyResult<Vec<TraceRow>> {
        let policy = self.inner.clone();
        let (_, trace) = py
            .detach(move || sim::run(&policy, &model.inner, horizon, seed, true))
            .map_err(to_py)?;
        Ok(trace
            .unwrap_or_default()
            .into_iter()
            .map(|s| {
                (
                    s.t,
                    s.state_before.delta,
                    s.state_before.r,
                    action_name(s.action),
                    s.success,
                )
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Policy(kind={:?})", self.inner.kind())
    }
}

#[pyclass(name = "EvalResult", frozen)]
struct PyEval {
    inner: EvalResult,
}

#[pymethods]
impl PyEval {
    #[getter]
    fn avg_aoi(&self) -> f64 {
        self.inner.avg_aoi
    }

    #[getter]
    fn avg_cost(&self) -> f64 {
        self.inner.avg_cost
    }

    fn prob(&self, delta: u32, r: u32) -> f64 {
        self.inner.prob(State::new(delta, r))
    }

    fn __repr__(&self) -> String {
        format!(
            "EvalResult(avg_aoi={}, avg_cost={})",
            self.inner.avg_aoi, self.inner.avg_cost
        )
    }
}

#[pyclass(name = "RunStats", frozen)]
struct PyRunStats {
    inner: RunStats,
}

#[pymethods]
impl PyRunStats {
    #[getter]
    fn mean_aoi(&self) -> f64 {
        self.inner.mean_aoi
    }

    #[getter]
    fn var_aoi(&self) -> f64 {
        self.inner.var_aoi
    }

    #[getter]
    fn mean_cost(&self) -> f64 {
        self.inner.mean_cost
    }

    #[getter]
    fn se_aoi(&self) -> f64 {
        self.inner.se_aoi()
    }

    #[getter]
    fn se_cost(&self) -> f64 {
        self.inner.se_cost()
    }

    #[getter]
    fn replications(&self) -> usize {
        self.inner.replications
    }

    fn __repr__(&self) -> String {
        format!(
            "RunStats(mean_aoi={}, mean_cost={}, replications={})",
            self.inner.mean_aoi, self.inner.mean_cost, self.inner.replications
        )
    }
}

#[pyclass(name = "SolverOutput", frozen)]
struct PySolverOutput {
    inner: SolverOutput,
}

#[pymethods]
impl PySolverOutput {
    #[getter]
    fn gain(&self) -> f64 {
        self.inner.gain
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    /// Age at which a fresh update is first sent, if the policy is a threshold.
    #[getter]
    fn threshold(&self) -> Option<u32> {
        self.inner.policy_table().threshold()
    }

    fn action(&self, delta: u32, r: u32) -> Option<&'static str> {
        self.inner.action_at(State::new(delta, r)).map(action_name)
    }

    fn h(&self, delta: u32, r: u32) -> Option<f64> {
        self.inner.h_at(State::new(delta, r))
    }

    fn policy(&self) -> PyPolicy {
        PyPolicy {
            inner: aoi_sched::Policy::Deterministic(self.inner.policy_table()),
        }
    }
}

#[pyclass(name = "ConstrainedSolution", frozen)]
struct PyConstrained {
    inner: lagrange::ConstrainedSolution,
}

#[pymethods]
impl PyConstrained {
    #[getter]
    fn eta_star(&self) -> f64 {
        self.inner.eta_star
    }

    #[getter]
    fn eta_low(&self) -> f64 {
        self.inner.eta_low
    }

    #[getter]
    fn eta_high(&self) -> f64 {
        self.inner.eta_high
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn achieved_cost(&self) -> f64 {
        self.inner.achieved_cost
    }

    #[getter]
    fn achieved_aoi(&self) -> f64 {
        self.inner.achieved_aoi
    }

    #[getter]
    fn termination(&self) -> String {
        format!("{:?}", self.inner.search.termination)
    }

    /// `(step, eta, cost, aoi)` of every search step.
    #[getter]
    fn search_trace(&self) -> Vec<(usize, f64, f64, f64)> {
        self.inner
            .search
            .steps
            .iter()
            .map(|s| (s.step, s.eta, s.cost, s.aoi))
            .collect()
    }

    fn policy(&self) -> PyPolicy {
        PyPolicy {
            inner: self.inner.mixed.clone(),
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "ConstrainedSolution(eta_star={}, achieved_aoi={}, achieved_cost={})",
            self.inner.eta_star, self.inner.achieved_aoi, self.inner.achieved_cost
        )
    }
}

/// Relative value iteration at transmission price `eta`.
#[pyfunction]
#[pyo3(signature = (model, eta, n_max = 200, unconstrained = false, epsilon = 1e-8))]
fn solve(
    py: Python<'_>,
    model: PyChannelModel,
    eta: f64,
    n_max: u32,
    unconstrained: bool,
    epsilon: f64,
) -> PyResult<PySolverOutput> {
    let cfg = SolverConfig {
        epsilon,
        ..SolverConfig::default()
    };
    py.detach(move || {
        let cmdp = Cmdp::with_n_max(model.inner, n_max)?;
        if unconstrained {
            rvi::solve_cmdp(&cmdp, 0.0, ActionSet::NoIdle, &cfg)
        } else {
            rvi::solve_cmdp(&cmdp, eta, ActionSet::Full, &cfg)
        }
    })
    .map(|inner| PySolverOutput { inner })
    .map_err(to_py)
}

/// Randomized policy minimizing the average age subject to
/// `average transmissions <= c_max`.
#[pyfunction]
#[pyo3(signature = (model, c_max, n_max = 200, xi = 0.2, max_steps = 200))]
fn solve_constrained(
    py: Python<'_>,
    model: PyChannelModel,
    c_max: f64,
    n_max: u32,
    xi: f64,
    max_steps: usize,
) -> PyResult<PyConstrained> {
    let cfg = EtaSearchConfig {
        xi,
        max_steps,
        ..EtaSearchConfig::default()
    };
    py.detach(move || {
        let cmdp = Cmdp::with_n_max(model.inner, n_max)?;
        lagrange::solve_constrained_on(&cmdp, c_max, &cfg, &SolverConfig::default())
    })
    .map(|inner| PyConstrained { inner })
    .map_err(to_py)
}

#[pyfunction]
fn arq_threshold_candidates(p: f64, eta: f64) -> (u32, u32) {
    arq_rs::threshold_candidates(p, eta)
}

#[pyfunction]
fn arq_cost(p: f64, delta: u32) -> f64 {
    arq_rs::cost_of_threshold(p, delta)
}

#[pyfunction]
fn arq_aoi(p: f64, delta: u32) -> f64 {
    arq_rs::aoi_of_threshold(p, delta)
}

/// Budget-optimal ARQ policy: dict with `delta1`, `delta2`, `mu_star`,
/// `transmit_prob`, `aoi`, `cost` and the `policy` itself.
#[pyfunction]
fn arq_optimal<'py>(py: Python<'py>, p: f64, c_max: f64) -> PyResult<Bound<'py, PyDict>> {
    let rt = arq_rs::optimal_policy(&ArqInstance::new(p, c_max).map_err(to_py)?);
    let d = PyDict::new(py);
    d.set_item("delta_cmax", rt.delta_cmax)?;
    d.set_item("delta1", rt.delta1)?;
    d.set_item("delta2", rt.delta2)?;
    d.set_item("mu_star", rt.mu_star)?;
    d.set_item("transmit_prob", rt.transmit_prob)?;
    d.set_item("aoi", rt.aoi)?;
    d.set_item("cost", rt.cost)?;
    d.set_item("policy", PyPolicy { inner: rt.policy() })?;
    Ok(d)
}

/// Trains SARSA; returns `(n, mean_aoi, var_aoi, mean_cost, mean_eta)` rows
/// averaged over replications.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (model, c_max = None, horizon = 10_000, replications = 10, seed = 0, eta = 2.0, record_every = 100))]
fn train_sarsa(
    py: Python<'_>,
    model: PyChannelModel,
    c_max: Option<f64>,
    horizon: u64,
    replications: usize,
    seed: u64,
    eta: f64,
    record_every: u64,
) -> PyResult<Vec<CurveRow>> {
    let cfg = LearnerConfig {
        c_max,
        horizon,
        seed,
        eta,
        record_every,
        ..LearnerConfig::default()
    };
    let summary = py
        .detach(move || sarsa::train_replications(&model.inner, &cfg, replications))
        .map_err(to_py)?;
    Ok(summary
        .curve
        .iter()
        .map(|c| (c.n, c.mean_aoi, c.var_aoi, c.mean_cost, c.mean_eta))
        .collect())
}

#[pymodule]
fn aoisched(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChannelModel>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyEval>()?;
    m.add_class::<PyRunStats>()?;
    m.add_class::<PySolverOutput>()?;
    m.add_class::<PyConstrained>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_constrained, m)?)?;
    m.add_function(wrap_pyfunction!(arq_threshold_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(arq_cost, m)?)?;
    m.add_function(wrap_pyfunction!(arq_aoi, m)?)?;
    m.add_function(wrap_pyfunction!(arq_optimal, m)?)?;
    m.add_function(wrap_pyfunction!(train_sarsa, m)?)?;
    Ok(())
}
