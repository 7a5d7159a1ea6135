//! Phase II: regression of pathwise contract and portfolio values on the
//! cash flows generated by a frozen exercise policy, and the exposure
//! profiles built from them.
//!
//! Each exercise interval `(T_{n−1}, T_n]` gets its own network, fed with the
//! state, the immediate payoffs and the time left to `T_n`. Samples from all
//! monitoring times inside the interval are pooled.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{DefaultParams, PathBatch};
use crate::nn::{fit, Activation, Network, NetworkConfig, TrainSchedule};
use crate::policy::{default_indices, evaluate_stopping, CloseOut, DecisionPolicy, PolicyKind, StoppingResult};
use crate::portfolio::{intrinsic_at, payoffs_at, PortfolioSpec};
use crate::rng::derive_seed;
use crate::stats::{nearest_rank, sorted, Estimate};

/// Architecture and schedules of the regression networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub schedule: TrainSchedule,
    pub warm_schedule: TrainSchedule,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            hidden: vec![30, 30, 30],
            activation: Activation::Tanh,
            schedule: TrainSchedule::new(4096, 1500),
            warm_schedule: TrainSchedule {
                lr_start: 3e-3,
                ..TrainSchedule::new(4096, 600)
            },
        }
    }
}

/// Individual regression (one output per contract) or portfolio regression
/// (one output, alive flags as extra inputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceMode {
    Individual,
    Portfolio,
}

/// Discounted cash flows of a frozen policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CashFlowTargets {
    /// `from_date[n−1][[m, j]]`: cash flow of contract `j`, discounted to 0,
    /// when the policy is followed from `T_n` onward.
    pub from_date: Vec<Array2<f64>>,
    /// Realised stopping along each path.
    pub stopping: StoppingResult,
}

impl CashFlowTargets {
    /// Largest per-contract sample second moment over all dates.
    pub fn max_second_moment(&self) -> f64 {
        self.from_date
            .iter()
            .flat_map(|c| c.axis_iter(Axis(1)).map(|col| col.mapv(|v| v * v).mean().unwrap_or(0.0)).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// Alive flags `A_{t_i}` as 0/1 floats, shape `(n_paths, J)`.
    pub fn alpha_at(&self, batch: &PathBatch, i: usize) -> Array2<f64> {
        let (mp, jn) = self.stopping.stop.dim();
        Array2::from_shape_fn((mp, jn), |(m, j)| f64::from(u8::from(self.stopping.alive_at(batch, m, j, i))))
    }
}

/// Cash flows of `policy` on `batch`, restarted at every exercise date.
///
/// Exercise rules that read only the market state are re-applied from each
/// date for every contract. For the netted policy the decisions depend on
/// which contracts are still alive, so the realised flows of the alive
/// contracts are used and the others are set to zero.
pub fn build_targets(policy: &DecisionPolicy, batch: &PathBatch, p: &PortfolioSpec) -> Result<CashFlowTargets> {
    let stopping = evaluate_stopping(policy, batch, p)?;
    let sched = p.schedule(&batch.grid)?;
    let nd = sched.n_dates();
    let (mp, jn) = (batch.n_paths(), p.len());
    let mut from_date = vec![Array2::zeros((mp, jn)); nd];
    if policy.kind == PolicyKind::RiskyNetted {
        for (n, c) in from_date.iter_mut().enumerate().map(|(k, c)| (k + 1, c)) {
            for m in 0..mp {
                for j in 0..jn {
                    let s = stopping.stop[[m, j]];
                    if s == 0 || s >= n {
                        c[[m, j]] = stopping.cashflows[[m, j]];
                    }
                }
            }
        }
    } else {
        let mut next = Array2::<f64>::zeros((mp, jn));
        for n in (1..=nd).rev() {
            let i = batch.grid.date_index(n);
            let g = payoffs_at(p, batch.time(i), batch.states_at(i));
            let dec = policy.decide(n, &sched, batch.states_at(i), &g, None)?;
            let disc = batch.discount_to_zero(i);
            for m in 0..mp {
                for j in 0..jn {
                    if dec[[m, j]] {
                        next[[m, j]] = disc * g[[m, j]];
                    }
                }
            }
            from_date[n - 1].assign(&next);
        }
    }
    if from_date.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite {
            what: "cash-flow target".into(),
            date: None,
        });
    }
    Ok(CashFlowTargets { from_date, stopping })
}

/// Regression network input `[x, g(x), T_n − t, α]` for rows at one time.
pub(crate) fn regression_inputs(
    p: &PortfolioSpec,
    states: ArrayView2<f64>,
    time_to_date: f64,
    alpha: Option<ArrayView2<f64>>,
) -> Array2<f64> {
    let g = intrinsic_at(p, states);
    let tau = Array2::from_elem((states.nrows(), 1), time_to_date);
    let mut parts = vec![states, g.view(), tau.view()];
    if let Some(a) = alpha {
        parts.push(a);
    }
    ndarray::concatenate(Axis(1), &parts).expect("row counts agree")
}

/// Training data for one interval: inputs, targets and the rows to use.
pub(crate) struct IntervalData {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub rows: Vec<usize>,
}

/// Fits one least-squares network per interval, backwards from the last,
/// each initialised from its successor.
pub(crate) fn fit_interval_nets(
    n_dates: usize,
    n_out: usize,
    cfg: &RegressionConfig,
    seed: u64,
    mut data: impl FnMut(usize) -> Result<IntervalData>,
) -> Result<Vec<Network>> {
    let mut nets: Vec<Option<Network>> = vec![None; n_dates];
    for n in (1..=n_dates).rev() {
        let d = data(n)?;
        let later = nets.get(n).cloned().flatten();
        let mut net = match later {
            Some(net) => net,
            None => {
                let nc = NetworkConfig::regression(d.inputs.ncols(), n_out, &cfg.hidden, cfg.activation);
                Network::new(nc, derive_seed(seed, &format!("init-{n}")))?
            }
        };
        if d.rows.is_empty() {
            nets[n - 1] = Some(net);
            continue;
        }
        let warm = n < n_dates;
        net.fit_input_scaling(d.inputs.view(), &d.rows);
        if !warm {
            net.fit_output_scaling(d.targets.view(), &d.rows);
        }
        let xs = net.standardize(d.inputs.view());
        let schedule = if warm { &cfg.warm_schedule } else { &cfg.schedule };
        let y = &d.targets;
        fit(&mut net, xs.view(), &d.rows, schedule, derive_seed(seed, &format!("batches-{n}")), |idx, out, grad| {
            let b = idx.len() as f64;
            let mut loss = 0.0;
            for (r, &row) in idx.iter().enumerate() {
                for k in 0..n_out {
                    let e = out[[r, k]] - y[[row, k]];
                    loss += e * e / b;
                    grad[[r, k]] = 2.0 * e / b;
                }
            }
            loss
        })
        .map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, date: Some(n) },
            other => other,
        })?;
        nets[n - 1] = Some(net);
    }
    Ok(nets.into_iter().map(|n| n.expect("every interval fitted")).collect())
}

/// Regressed values on every exercise interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSurface {
    pub mode: SurfaceMode,
    /// `nets[n−1]` covers `(T_{n−1}, T_n]`.
    pub nets: Vec<Network>,
    pub n_contracts: usize,
    pub dates: Vec<f64>,
}

impl ValueSurface {
    /// Values at grid time `i` for the given path rows: per contract for an
    /// individual surface, one column for a portfolio surface (which needs
    /// the alive flags of those rows).
    pub fn evaluate(
        &self,
        p: &PortfolioSpec,
        batch: &PathBatch,
        i: usize,
        rows: &[usize],
        alpha: Option<ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        if p.len() != self.n_contracts {
            return Err(Error::ShapeMismatch {
                context: "surface contracts",
                expected: self.n_contracts,
                actual: p.len(),
            });
        }
        let n = batch.grid.interval_of(i);
        if n > self.nets.len() {
            return Err(Error::invalid("grid index", format!("{i} lies beyond the last exercise date")));
        }
        let alpha = match (self.mode, alpha) {
            (SurfaceMode::Portfolio, None) => return Err(Error::MissingPrerequisite("alive flags for a portfolio surface")),
            (SurfaceMode::Individual, _) => None,
            (SurfaceMode::Portfolio, a) => a,
        };
        let states = batch.states_at(i).select(Axis(0), rows);
        let x = regression_inputs(p, states.view(), batch.grid.date(n) - batch.time(i), alpha);
        self.nets[n - 1].forward(x.view())
    }

    /// Close-out inputs at each path's default time from an individual surface.
    pub fn closeout(&self, batch: &PathBatch, p: &PortfolioSpec, dp: &DefaultParams) -> Result<CloseOut> {
        if self.mode != SurfaceMode::Individual {
            return Err(Error::MissingPrerequisite("an individual value surface for close-outs"));
        }
        let (mp, jn) = (batch.n_paths(), p.len());
        let dflt = default_indices(batch);
        let mut dv = Array2::zeros((mp, jn));
        let mut collateral = vec![0.0; mp];
        for i in 1..batch.grid.len() {
            let rows: Vec<usize> = (0..mp).filter(|&m| dflt[m] == i).collect();
            if rows.is_empty() {
                continue;
            }
            let v = self.evaluate(p, batch, i, &rows, None)?;
            let disc = batch.discount_to_zero(i);
            for (r, &m) in rows.iter().enumerate() {
                for j in 0..jn {
                    dv[[m, j]] = disc * v[[r, j]];
                }
                collateral[m] = disc * p.collateral;
            }
        }
        Ok(CloseOut {
            recovery: dp.recovery,
            dv,
            collateral,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn check_targets(targets: &CashFlowTargets, batch: &PathBatch, p: &PortfolioSpec) -> Result<()> {
    let (mp, jn) = targets.stopping.stop.dim();
    if mp != batch.n_paths() || jn != p.len() || targets.from_date.len() != batch.grid.n_dates() {
        return Err(Error::ShapeMismatch {
            context: "cash-flow targets",
            expected: batch.n_paths(),
            actual: mp,
        });
    }
    Ok(())
}

/// Stacks samples from every monitoring time of interval `n`; row `k·M + m`
/// holds path `m` at the `k`-th time.
fn interval_samples(
    p: &PortfolioSpec,
    batch: &PathBatch,
    n: usize,
    alpha: Option<&dyn Fn(usize) -> Array2<f64>>,
    mut target: impl FnMut(usize, usize) -> Vec<f64>,
    keep: impl Fn(usize, usize) -> bool,
    n_out: usize,
) -> IntervalData {
    let mp = batch.n_paths();
    let idx: Vec<usize> = batch.grid.interval_indices(n).collect();
    let t_n = batch.grid.date(n);
    let mut blocks = Vec::with_capacity(idx.len());
    let mut targets = Array2::zeros((idx.len() * mp, n_out));
    let mut rows = Vec::new();
    for (k, &i) in idx.iter().enumerate() {
        let a = alpha.map(|f| f(i));
        blocks.push(regression_inputs(p, batch.states_at(i), t_n - batch.time(i), a.as_ref().map(|a| a.view())));
        for m in 0..mp {
            let r = k * mp + m;
            if keep(m, i) {
                rows.push(r);
                for (c, v) in target(m, i).into_iter().enumerate() {
                    targets[[r, c]] = v;
                }
            }
        }
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    IntervalData {
        inputs: ndarray::concatenate(Axis(0), &views).expect("equal widths"),
        targets,
        rows,
    }
}

/// Individual regression: per-contract values `V_j(t, x)`.
pub fn fit_ir(
    targets: &CashFlowTargets,
    batch: &PathBatch,
    p: &PortfolioSpec,
    cfg: &RegressionConfig,
    seed: u64,
) -> Result<ValueSurface> {
    check_targets(targets, batch, p)?;
    let jn = p.len();
    let nets = fit_interval_nets(batch.grid.n_dates(), jn, cfg, seed, |n| {
        let c = &targets.from_date[n - 1];
        Ok(interval_samples(
            p,
            batch,
            n,
            None,
            |m, i| {
                let d = batch.discount_to_zero(i);
                c.row(m).iter().map(|v| v / d).collect()
            },
            |_, _| true,
            jn,
        ))
    })?;
    Ok(ValueSurface {
        mode: SurfaceMode::Individual,
        nets,
        n_contracts: jn,
        dates: batch.grid.exercise_dates(),
    })
}

/// Portfolio regression: the value of the alive contracts, `h(t, x, α)`.
pub fn fit_pr(
    targets: &CashFlowTargets,
    batch: &PathBatch,
    p: &PortfolioSpec,
    cfg: &RegressionConfig,
    seed: u64,
) -> Result<ValueSurface> {
    check_targets(targets, batch, p)?;
    let alpha = |i: usize| targets.alpha_at(batch, i);
    let nets = fit_interval_nets(batch.grid.n_dates(), 1, cfg, seed, |n| {
        let c = &targets.from_date[n - 1];
        Ok(interval_samples(
            p,
            batch,
            n,
            Some(&alpha),
            |m, i| {
                let d = batch.discount_to_zero(i);
                let s: f64 = (0..p.len())
                    .filter(|&j| targets.stopping.alive_at(batch, m, j, i))
                    .map(|j| c[[m, j]])
                    .sum();
                vec![s / d]
            },
            |_, _| true,
            1,
        ))
    })?;
    Ok(ValueSurface {
        mode: SurfaceMode::Portfolio,
        nets,
        n_contracts: p.len(),
        dates: batch.grid.exercise_dates(),
    })
}

/// How contract values aggregate into an exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposureRule {
    /// `Σ_j (V_j α_j)⁺`
    PerContract,
    /// `(Σ_j V_j α_j)⁺`
    Netted,
}

/// EE and PFE curves, discounted to time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureProfile {
    pub times: Vec<f64>,
    pub ee: Vec<f64>,
    pub ee_se: Vec<f64>,
    pub pfe_low: Vec<f64>,
    pub pfe_high: Vec<f64>,
    pub levels: (f64, f64),
    /// Per-contract EE for individual surfaces, `[time][contract]`.
    pub per_contract: Option<Vec<Vec<f64>>>,
    pub contract_names: Vec<String>,
}

/// EE and PFE at every grid time of `batch` along the stopping in `targets`.
pub fn exposure_profile(
    surface: &ValueSurface,
    batch: &PathBatch,
    p: &PortfolioSpec,
    stopping: &StoppingResult,
    rule: ExposureRule,
    levels: (f64, f64),
) -> Result<ExposureProfile> {
    for l in [levels.0, levels.1] {
        if !(l > 0.0 && l < 1.0) {
            return Err(Error::invalid("PFE level", format!("{l} is outside (0, 1)")));
        }
    }
    if stopping.stop.dim() != (batch.n_paths(), p.len()) {
        return Err(Error::ShapeMismatch {
            context: "stopping result",
            expected: batch.n_paths(),
            actual: stopping.n_paths(),
        });
    }
    let (mp, jn) = (batch.n_paths(), p.len());
    let all: Vec<usize> = (0..mp).collect();
    let mut out = ExposureProfile {
        times: batch.grid.times().to_vec(),
        ee: Vec::new(),
        ee_se: Vec::new(),
        pfe_low: Vec::new(),
        pfe_high: Vec::new(),
        levels,
        per_contract: (surface.mode == SurfaceMode::Individual).then(Vec::new),
        contract_names: p.contracts.iter().map(|c| c.name.clone()).collect(),
    };
    for i in 0..batch.grid.len() {
        let alpha = Array2::from_shape_fn((mp, jn), |(m, j)| f64::from(u8::from(stopping.alive_at(batch, m, j, i))));
        let v = surface.evaluate(p, batch, i, &all, Some(alpha.view()))?;
        let disc = batch.discount_to_zero(i);
        let exposure: Vec<f64> = match surface.mode {
            SurfaceMode::Portfolio => v.column(0).iter().map(|h| disc * h.max(0.0)).collect(),
            SurfaceMode::Individual => (0..mp)
                .map(|m| {
                    let terms = (0..jn).map(|j| v[[m, j]] * alpha[[m, j]]);
                    disc * match rule {
                        ExposureRule::PerContract => terms.map(|x| x.max(0.0)).sum::<f64>(),
                        ExposureRule::Netted => terms.sum::<f64>().max(0.0),
                    }
                })
                .collect(),
        };
        let est = Estimate::from_samples(&exposure);
        let s = sorted(&exposure);
        out.ee.push(est.mean);
        out.ee_se.push(est.se);
        out.pfe_low.push(nearest_rank(&s, levels.0));
        out.pfe_high.push(nearest_rank(&s, levels.1));
        if let Some(pc) = out.per_contract.as_mut() {
            pc.push(
                (0..jn)
                    .map(|j| (0..mp).map(|m| disc * (v[[m, j]] * alpha[[m, j]]).max(0.0)).sum::<f64>() / mp as f64)
                    .collect(),
            );
        }
    }
    Ok(out)
}

impl ExposureProfile {
    /// CSV with columns `time, ee, ee_se, pfe_low, pfe_high` and one
    /// `ee_<contract>` column per contract when available.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        write!(w, "time,ee,ee_se,pfe_low,pfe_high")?;
        if self.per_contract.is_some() {
            for name in &self.contract_names {
                write!(w, ",ee_{name}")?;
            }
        }
        writeln!(w)?;
        for k in 0..self.times.len() {
            write!(
                w,
                "{},{},{},{},{}",
                self.times[k], self.ee[k], self.ee_se[k], self.pfe_low[k], self.pfe_high[k]
            )?;
            if let Some(pc) = &self.per_contract {
                for v in &pc[k] {
                    write!(w, ",{v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate_paths, MarketParams, TimeGrid};
    use crate::portfolio::{ContractSpec, Payoff};

    fn forward_portfolio() -> PortfolioSpec {
        PortfolioSpec::new(
            vec![ContractSpec::new(
                "fwd",
                Payoff::Forward {
                    asset: 0,
                    strike: 80.0,
                    scale: 2.0,
                },
                vec![2.0],
            )],
            false,
            0.0,
        )
        .unwrap()
    }

    fn never_exercise(p: &PortfolioSpec, nd: usize) -> DecisionPolicy {
        DecisionPolicy {
            kind: PolicyKind::RiskFree,
            nets: vec![None; nd],
            payoff_features: true,
            n_contracts: p.len(),
            seed: 0,
        }
    }

    #[test]
    fn terminal_targets_are_payoffs() {
        let p = forward_portfolio();
        let grid = TimeGrid::new(&[2.0], 2).unwrap();
        let batch = simulate_paths(&MarketParams::paper(), &grid, 50, 3).unwrap();
        let t = build_targets(&never_exercise(&p, 1), &batch, &p).unwrap();
        let i = batch.grid.date_index(1);
        for m in 0..50 {
            let g = 2.0 * (80.0 - batch.states[[i, m, 0]]);
            assert!((t.from_date[0][[m, 0]] - (-0.1f64).exp() * g).abs() < 1e-12);
        }
        assert!(t.max_second_moment().is_finite());
    }

    #[test]
    fn exposure_rejects_bad_levels() {
        let p = forward_portfolio();
        let grid = TimeGrid::new(&[2.0], 1).unwrap();
        let batch = simulate_paths(&MarketParams::paper(), &grid, 8, 3).unwrap();
        let t = build_targets(&never_exercise(&p, 1), &batch, &p).unwrap();
        let nc = NetworkConfig::regression(4, 1, &[2], Activation::Tanh);
        let surface = ValueSurface {
            mode: SurfaceMode::Individual,
            nets: vec![Network::zeros(nc)],
            n_contracts: 1,
            dates: vec![2.0],
        };
        for bad in [(0.0, 0.5), (0.5, 1.0)] {
            assert!(exposure_profile(&surface, &batch, &p, &t.stopping, ExposureRule::PerContract, bad).is_err());
        }
        let prof = exposure_profile(&surface, &batch, &p, &t.stopping, ExposureRule::PerContract, (0.025, 0.975)).unwrap();
        assert!(prof.ee.iter().all(|&e| e == 0.0));
        let mut csv = Vec::new();
        prof.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("time,ee,ee_se,pfe_low,pfe_high,ee_fwd\n"));
    }
}
