//! Python bindings for the `dos_cva` engine.
//!
//! Arrays cross the boundary as nested Python lists; larger artifacts
//! (policies, surfaces, reports) travel as JSON strings.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dos_cva::cva::{cva_time_zero, relative_overestimation};
use dos_cva::experiment::{run_risk_free, ExperimentConfig, Setup};
use dos_cva::market::{sample_defaults, simulate_paths, DefaultParams, MarketParams, PathBatch, TimeGrid};
use dos_cva::nn::TrainSchedule;
use dos_cva::oracle::{bs_european, lattice_bermudan, LatticeSpec};
use dos_cva::policy::{evaluate_stopping, train_risk_free, value_at_zero, DecisionPolicy, PolicyConfig};
use dos_cva::portfolio::{future_value, Payoff, PortfolioSpec};
use dos_cva::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter { .. }
        | Error::NotPositiveSemiDefinite { .. }
        | Error::ShapeMismatch { .. }
        | Error::DateNotOnGrid(_)
        | Error::UnknownPayoff(_)
        | Error::NotReducible(_)
        | Error::Config(_)
        | Error::Json(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Black–Scholes market with dividend-paying assets.
#[pyclass(name = "Market", module = "dos_cva_py")]
struct PyMarket {
    inner: MarketParams,
}

#[pymethods]
impl PyMarket {
    #[new]
    #[pyo3(signature = (spot, rate, dividend_yield, volatility, correlation, horizon))]
    fn new(
        spot: Vec<f64>,
        rate: f64,
        dividend_yield: Vec<f64>,
        volatility: Vec<f64>,
        correlation: Vec<Vec<f64>>,
        horizon: f64,
    ) -> PyResult<Self> {
        let inner = MarketParams {
            s0: spot,
            r: rate,
            q: dividend_yield,
            sigma: volatility,
            rho: correlation,
            horizon,
        };
        inner.validate().map_err(to_py)?;
        Ok(PyMarket { inner })
    }

    /// Two uncorrelated assets at 100, r = 5%, q = 10%, σ = 20%, T = 3.
    #[staticmethod]
    fn paper() -> Self {
        PyMarket {
            inner: MarketParams::paper(),
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("Market({:?})", self.inner)
    }
}

/// A portfolio of contracts with its netting and collateral terms.
#[pyclass(name = "Portfolio", module = "dos_cva_py")]
struct PyPortfolio {
    inner: PortfolioSpec,
}

#[pymethods]
impl PyPortfolio {
    #[staticmethod]
    fn paper_options() -> Self {
        PyPortfolio {
            inner: PortfolioSpec::paper_options(),
        }
    }

    #[staticmethod]
    fn paper_with_future() -> Self {
        PyPortfolio {
            inner: PortfolioSpec::paper_with_future(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: PortfolioSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let inner = PortfolioSpec::new(inner.contracts, inner.netting, inner.collateral).map_err(to_py)?;
        Ok(PyPortfolio { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.contracts.iter().map(|c| c.name.clone()).collect()
    }

    #[getter]
    fn exercise_dates(&self) -> Vec<f64> {
        self.inner.union_dates.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Simulated scenarios, optionally with counterparty default times.
#[pyclass(name = "Paths", module = "dos_cva_py")]
struct PyPaths {
    inner: PathBatch,
}

#[pymethods]
impl PyPaths {
    /// Simulates `n_paths` scenarios on the portfolio's exercise grid.
    #[staticmethod]
    #[pyo3(signature = (market, portfolio, n_paths, seed, monitor_steps = 4))]
    fn simulate(market: &PyMarket, portfolio: &PyPortfolio, n_paths: usize, seed: u64, monitor_steps: usize) -> PyResult<Self> {
        let grid = TimeGrid::new(&portfolio.inner.union_dates, monitor_steps).map_err(to_py)?;
        let inner = simulate_paths(&market.inner, &grid, n_paths, seed).map_err(to_py)?;
        Ok(PyPaths { inner })
    }

    /// A copy with default times drawn for intensity `hbar` and WWR parameter `b`.
    #[pyo3(signature = (market, hbar, b, seed, recovery = 0.0))]
    fn with_defaults(&self, market: &PyMarket, hbar: f64, b: f64, seed: u64, recovery: f64) -> PyResult<Self> {
        let dp = DefaultParams::new(hbar, b, recovery);
        let inner = sample_defaults(&self.inner, &market.inner, &dp, seed).map_err(to_py)?;
        Ok(PyPaths { inner })
    }

    #[getter]
    fn n_paths(&self) -> usize {
        self.inner.n_paths()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.grid.times().to_vec()
    }

    /// Asset prices at grid index `i`, one row per path.
    fn states_at(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        if i >= self.inner.grid.len() {
            return Err(PyValueError::new_err(format!("grid index {i} out of range")));
        }
        Ok(self.inner.states_at(i).outer_iter().map(|r| r.to_vec()).collect())
    }

    /// Fraction of paths still alive at grid index `i`.
    fn survival_fraction(&self, i: usize) -> f64 {
        self.inner.survival_fraction(i)
    }
}

/// A trained exercise policy.
#[pyclass(name = "Policy", module = "dos_cva_py")]
struct PyPolicy {
    inner: DecisionPolicy,
}

#[pymethods]
impl PyPolicy {
    /// Trains the risk-free policy with the given network schedule.
    #[staticmethod]
    #[pyo3(signature = (paths, portfolio, seed, steps = 1500, warm_steps = 600, batch_size = 4096))]
    fn train_risk_free(
        paths: &PyPaths,
        portfolio: &PyPortfolio,
        seed: u64,
        steps: usize,
        warm_steps: usize,
        batch_size: usize,
    ) -> PyResult<Self> {
        let cfg = PolicyConfig {
            schedule: TrainSchedule::new(batch_size, steps),
            warm_schedule: TrainSchedule {
                lr_start: 3e-3,
                ..TrainSchedule::new(batch_size, warm_steps)
            },
            ..PolicyConfig::default()
        };
        let inner = train_risk_free(&paths.inner, &portfolio.inner, &cfg, seed).map_err(to_py)?;
        Ok(PyPolicy { inner })
    }

    /// Per-contract values at time 0 as `(mean, standard error)` pairs,
    /// ignoring default.
    fn values(&self, paths: &PyPaths, portfolio: &PyPortfolio) -> PyResult<Vec<(f64, f64)>> {
        let res = evaluate_stopping(&self.inner, &paths.inner, &portfolio.inner).map_err(to_py)?;
        Ok((0..portfolio.inner.len())
            .map(|j| {
                let e = value_at_zero(&res.cashflows.column(j).to_vec());
                (e.mean, e.se)
            })
            .collect())
    }

    /// Discounted portfolio cash flow of every path.
    fn path_totals(&self, paths: &PyPaths, portfolio: &PyPortfolio) -> PyResult<Vec<f64>> {
        let res = evaluate_stopping(&self.inner, &paths.inner, &portfolio.inner).map_err(to_py)?;
        Ok(res.path_totals())
    }

    fn to_json(&self, portfolio: &PyPortfolio) -> PyResult<String> {
        self.inner.to_json(&portfolio.inner).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str, portfolio: &PyPortfolio) -> PyResult<Self> {
        Ok(PyPolicy {
            inner: DecisionPolicy::from_json(text, &portfolio.inner).map_err(to_py)?,
        })
    }
}

/// Black–Scholes value of a one-factor option given as payoff JSON,
/// e.g. `{"kind": "put", "asset": 0, "strike": 100}`.
#[pyfunction]
fn european_value(market: &PyMarket, payoff_json: &str, maturity: f64) -> PyResult<f64> {
    let payoff: Payoff = serde_json::from_str(payoff_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    bs_european(&payoff, &market.inner, maturity).map_err(to_py)
}

/// Lattice value of a Bermudan option given as payoff JSON.
#[pyfunction]
#[pyo3(signature = (market, payoff_json, exercise_dates, steps_per_year = 300))]
fn bermudan_lattice_value(market: &PyMarket, payoff_json: &str, exercise_dates: Vec<f64>, steps_per_year: usize) -> PyResult<f64> {
    let payoff: Payoff = serde_json::from_str(payoff_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let spec = LatticeSpec {
        steps_per_year,
        payoff,
        exercise_dates,
    };
    lattice_bermudan(&spec, &market.inner).map_err(to_py)
}

/// Closed-form value of the future `2·(80 − x₁)` at time `t`.
#[pyfunction]
fn future_value_at(market: &PyMarket, t: f64, x1: f64) -> f64 {
    future_value(t, x1, &market.inner)
}

/// Paired CVA estimate `(mean, se)` and the relative overestimation helper.
#[pyfunction]
fn cva_estimate(v_free: Vec<f64>, v_risky: Vec<f64>) -> PyResult<(f64, f64)> {
    if v_free.len() != v_risky.len() || v_free.is_empty() {
        return Err(PyValueError::new_err("path totals must be non-empty and of equal length"));
    }
    let e = cva_time_zero(&v_free, &v_risky);
    Ok((e.mean, e.se))
}

#[pyfunction]
fn overestimation(cva: f64, cva_bar: f64) -> f64 {
    relative_overestimation(cva, cva_bar)
}

/// The default experiment configuration as TOML.
#[pyfunction]
fn default_config() -> PyResult<String> {
    ExperimentConfig::paper().to_toml().map_err(to_py)
}

/// Runs the risk-free pipeline for a TOML configuration and returns the
/// per-contract values and total as `(name, mean, se)` rows.
#[pyfunction]
#[pyo3(signature = (config_toml, overrides = Vec::new()))]
fn run_risk_free_values(py: Python<'_>, config_toml: &str, overrides: Vec<String>) -> PyResult<Vec<(String, f64, f64)>> {
    let cfg = ExperimentConfig::from_toml_with_overrides(config_toml, &overrides).map_err(to_py)?;
    py.detach(|| {
        let setup = Setup::new(cfg)?;
        let (train, val) = setup.simulate()?;
        let rf = run_risk_free(&setup, &train, &val, false)?;
        let mut rows: Vec<(String, f64, f64)> = setup
            .portfolio
            .contracts
            .iter()
            .zip(&rf.values)
            .map(|(c, e)| (c.name.clone(), e.mean, e.se))
            .collect();
        rows.push(("total".into(), rf.total.mean, rf.total.se));
        Ok(rows)
    })
    .map_err(to_py)
}

#[pymodule]
fn dos_cva_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarket>()?;
    m.add_class::<PyPortfolio>()?;
    m.add_class::<PyPaths>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(european_value, m)?)?;
    m.add_function(wrap_pyfunction!(bermudan_lattice_value, m)?)?;
    m.add_function(wrap_pyfunction!(future_value_at, m)?)?;
    m.add_function(wrap_pyfunction!(cva_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(overestimation, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_risk_free_values, m)?)?;
    Ok(())
}
