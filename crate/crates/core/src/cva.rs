//! CVA at time 0, dynamic CVA along the paths and its risk measures, and
//! the EE-integral approximation under independence.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{DefaultParams, PathBatch};
use crate::policy::{default_indices, netted_cashflows, risky_cashflows, CloseOut, StoppingResult};
use crate::portfolio::PortfolioSpec;
use crate::stats::{nearest_rank, paired_difference, sorted, Estimate};
use crate::valuation::{fit_interval_nets, regression_inputs, CashFlowTargets, ExposureProfile, IntervalData, RegressionConfig, SurfaceMode, ValueSurface};

/// `Υ^V − Υ^U` from per-path discounted totals on common paths.
pub fn cva_time_zero(v_free: &[f64], v_risky: &[f64]) -> Estimate {
    paired_difference(v_free, v_risky)
}

/// `(CVA-bar − CVA) / CVA`, taken as 0 when both vanish.
pub fn relative_overestimation(cva: f64, cva_bar: f64) -> f64 {
    if cva == 0.0 && cva_bar == 0.0 {
        0.0
    } else {
        (cva_bar - cva) / cva
    }
}

/// Regressed CVA on the surviving paths at each grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicCvaSample {
    pub times: Vec<f64>,
    /// `values[i]`: CVA at grid time `i` on the paths with `τ^D > t_i`, in
    /// currency at time `t_i`.
    pub values: Vec<Vec<f64>>,
    pub surface: ValueSurface,
}

/// Pathwise CVA under a given exercise strategy.
///
/// `free` holds the risk-free cash flows restarted at each exercise date;
/// `strategy` is the realised exercise of the strategy under study, whose
/// alive flags select the contracts still in the portfolio. The pathwise
/// difference between the risk-free and the default-adjusted cash flows is
/// regressed on the state and the alive flags, on survivors only.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_cva(
    free: &CashFlowTargets,
    strategy: &StoppingResult,
    closeout: &CloseOut,
    batch: &PathBatch,
    p: &PortfolioSpec,
    netted: bool,
    cfg: &RegressionConfig,
    seed: u64,
) -> Result<DynamicCvaSample> {
    let (mp, jn) = (batch.n_paths(), p.len());
    if strategy.stop.dim() != (mp, jn) || free.stopping.stop.dim() != (mp, jn) || closeout.dv.dim() != (mp, jn) {
        return Err(Error::ShapeMismatch {
            context: "dynamic CVA inputs",
            expected: mp,
            actual: strategy.n_paths(),
        });
    }
    let dflt = default_indices(batch);
    // Discounted risky flows per contract, plus the netted close-out per path.
    let (risky, close) = if netted {
        let f = netted_cashflows(strategy, batch, p, closeout)?;
        (f.paid, f.closeout)
    } else {
        (risky_cashflows(strategy, batch, p, closeout)?, vec![0.0; mp])
    };
    let alpha_at = |i: usize| {
        ndarray::Array2::from_shape_fn((mp, jn), |(m, j)| f64::from(u8::from(strategy.alive_at(batch, m, j, i))))
    };
    let nets = fit_interval_nets(batch.grid.n_dates(), 1, cfg, seed, |n| {
        let cv = &free.from_date[n - 1];
        let idx: Vec<usize> = batch.grid.interval_indices(n).collect();
        let t_n = batch.grid.date(n);
        let mut blocks = Vec::with_capacity(idx.len());
        let mut targets = ndarray::Array2::zeros((idx.len() * mp, 1));
        let mut rows = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            let alpha = alpha_at(i);
            blocks.push(regression_inputs(p, batch.states_at(i), t_n - batch.time(i), Some(alpha.view())));
            let disc = batch.discount_to_zero(i);
            for m in (0..mp).filter(|&m| dflt[m] > i) {
                let r = k * mp + m;
                rows.push(r);
                let mut y = 0.0;
                for j in (0..jn).filter(|&j| alpha[[m, j]] > 0.0) {
                    y += cv[[m, j]] - risky[[m, j]];
                }
                targets[[r, 0]] = (y - close[m]) / disc;
            }
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        Ok(IntervalData {
            inputs: ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"),
            targets,
            rows,
        })
    })?;
    let surface = ValueSurface {
        mode: SurfaceMode::Portfolio,
        nets,
        n_contracts: jn,
        dates: batch.grid.exercise_dates(),
    };
    let mut values = Vec::with_capacity(batch.grid.len());
    for i in 0..batch.grid.len() {
        let rows: Vec<usize> = (0..mp).filter(|&m| dflt[m] > i).collect();
        if rows.is_empty() {
            values.push(Vec::new());
            continue;
        }
        let alpha = alpha_at(i).select(ndarray::Axis(0), &rows);
        values.push(surface.evaluate(p, batch, i, &rows, Some(alpha.view()))?.column(0).to_vec());
    }
    Ok(DynamicCvaSample {
        times: batch.grid.times().to_vec(),
        values,
        surface,
    })
}

/// E-CVA, VaR-CVA and ES-CVA curves over the survivors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub level: f64,
    pub times: Vec<f64>,
    pub survivors: Vec<usize>,
    pub expected: Vec<Estimate>,
    pub var: Vec<f64>,
    /// Mean of the closed upper tail `{CVA ≥ VaR}`, with the standard error
    /// of that tail mean.
    pub es: Vec<Estimate>,
    /// Times where the tail holds fewer than one sample per `1 − level`.
    pub flagged: Vec<bool>,
}

/// Risk measures of `sample` at confidence `level`.
pub fn risk_measures(sample: &DynamicCvaSample, level: f64) -> Result<RiskCurve> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level", format!("{level} is outside (0, 1)")));
    }
    let mut out = RiskCurve {
        level,
        times: sample.times.clone(),
        survivors: Vec::new(),
        expected: Vec::new(),
        var: Vec::new(),
        es: Vec::new(),
        flagged: Vec::new(),
    };
    for (k, v) in sample.values.iter().enumerate() {
        out.survivors.push(v.len());
        if v.is_empty() {
            log::warn!("no surviving paths at t = {}", sample.times[k]);
            out.expected.push(Estimate::from_samples(v));
            out.var.push(f64::NAN);
            out.es.push(Estimate::from_samples(v));
            out.flagged.push(true);
            continue;
        }
        let s = sorted(v);
        let var = nearest_rank(&s, level);
        let start = s.partition_point(|&x| x < var);
        let flagged = (s.len() as f64) * (1.0 - level) < 1.0;
        if flagged {
            log::warn!("only {} surviving paths at t = {} for a {level} tail", s.len(), sample.times[k]);
        }
        out.expected.push(Estimate::from_samples(v));
        out.var.push(var);
        out.es.push(Estimate::from_samples(&s[start..]));
        out.flagged.push(flagged);
    }
    Ok(out)
}

/// `(1 − R) Σ_m EE(t_m)·ℚ(τ^D ∈ (t_{m−1}, t_m])` over the profile's grid,
/// with default probabilities from a constant intensity.
pub fn cva_from_ee(profile: &ExposureProfile, dp: &DefaultParams) -> Result<f64> {
    dp.validate()?;
    if dp.b != 0.0 {
        return Err(Error::invalid("b", "the EE approximation assumes exposure independent of default"));
    }
    let t = &profile.times;
    let sum: f64 = (1..t.len())
        .map(|m| profile.ee[m] * ((-dp.hbar * t[m - 1]).exp() - (-dp.hbar * t[m]).exp()))
        .sum();
    Ok((1.0 - dp.recovery) * sum)
}

/// Values and CVA figures for one `(b, h̄)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaCell {
    pub b: f64,
    pub hbar: f64,
    /// `Υ^V[f^V]`, `Υ^U[f^U]`, `Υ^U[f^V]`, `Υ^A[f^A]`, `Υ^A[f^V]`.
    pub v_free: Estimate,
    pub u_risky: Estimate,
    pub u_free: Estimate,
    pub a_risky: Estimate,
    pub a_free: Estimate,
    pub cva: Estimate,
    pub cva_bar: Estimate,
    pub cva_net: Estimate,
    pub cva_bar_net: Estimate,
    pub rel_overestimation: f64,
    pub rel_overestimation_net: f64,
    /// ES/E-CVA curves: no netting (risky, risk-free strategy), then netted.
    pub curves: Vec<(String, RiskCurve)>,
}

/// CVA results over a grid of `(b, h̄)` with run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaReport {
    pub cells: Vec<CvaCell>,
    pub metadata: std::collections::BTreeMap<String, String>,
}

impl CvaReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Portfolio values per cell.
    pub fn write_values_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "b,hbar,v_free,v_free_se,u_risky,u_risky_se,u_free,u_free_se,a_risky,a_risky_se,a_free,a_free_se")?;
        for c in &self.cells {
            write!(w, "{},{}", c.b, c.hbar)?;
            for e in [c.v_free, c.u_risky, c.u_free, c.a_risky, c.a_free] {
                write!(w, ",{},{}", e.mean, e.se)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// CVA, CVA-bar and relative overestimation per cell, without or with netting.
    pub fn write_cva_csv(&self, mut w: impl Write, netted: bool) -> Result<()> {
        writeln!(w, "b,hbar,cva,cva_se,cva_bar,cva_bar_se,rel_overest")?;
        for c in &self.cells {
            let (a, b, r) = if netted {
                (c.cva_net, c.cva_bar_net, c.rel_overestimation_net)
            } else {
                (c.cva, c.cva_bar, c.rel_overestimation)
            };
            writeln!(w, "{},{},{},{},{},{},{}", c.b, c.hbar, a.mean, a.se, b.mean, b.se, r)?;
        }
        Ok(())
    }

    /// Long-format risk curves: one row per cell, curve and grid time.
    pub fn write_curves_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "b,hbar,curve,time,survivors,e_cva,e_cva_se,var_cva,es_cva,es_cva_se,flagged")?;
        for c in &self.cells {
            for (name, rc) in &c.curves {
                for k in 0..rc.times.len() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{},{},{},{}",
                        c.b,
                        c.hbar,
                        name,
                        rc.times[k],
                        rc.survivors[k],
                        rc.expected[k].mean,
                        rc.expected[k].se,
                        rc.var[k],
                        rc.es[k].mean,
                        rc.es[k].se,
                        rc.flagged[k]
                    )?;
                }
            }
        }
        Ok(())
    }
}
