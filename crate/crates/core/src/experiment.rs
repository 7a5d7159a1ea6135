//! Reproducible experiment runs: configuration, seed fan-out, the
//! risk-free and risky pipelines, and artifact export.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cva::{cva_time_zero, dynamic_cva, relative_overestimation, risk_measures, CvaCell, CvaReport};
use crate::error::{Error, Result};
use crate::market::{sample_defaults, simulate_paths, DefaultParams, MarketParams, PathBatch, TimeGrid};
use crate::nn::{Activation, TrainSchedule};
use crate::policy::{
    evaluate_stopping, netted_cashflows, risky_cashflows, train_risk_free, train_risky_netted, train_risky_no_netting,
    value_at_zero, DecisionPolicy, PolicyConfig, StoppingResult,
};
use crate::portfolio::{ContractSpec, PortfolioSpec};
use crate::rng::derive_seed;
use crate::stats::Estimate;
use crate::valuation::{build_targets, exposure_profile, fit_ir, fit_pr, CashFlowTargets, ExposureProfile, ExposureRule, RegressionConfig, ValueSurface};

/// Environment variable naming the root directory for run outputs.
pub const OUTPUT_ROOT_ENV: &str = "DOS_CVA_OUTPUT_ROOT";

/// Market section. Prices in currency units, rates and yields per year
/// (continuous compounding), volatilities per square-root year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub spot: Vec<f64>,
    pub rate_per_year: f64,
    pub dividend_yield_per_year: Vec<f64>,
    pub volatility_per_sqrt_year: Vec<f64>,
    pub correlation: Vec<Vec<f64>>,
    pub horizon_years: f64,
}

impl MarketSection {
    pub fn params(&self) -> MarketParams {
        MarketParams {
            s0: self.spot.clone(),
            r: self.rate_per_year,
            q: self.dividend_yield_per_year.clone(),
            sigma: self.volatility_per_sqrt_year.clone(),
            rho: self.correlation.clone(),
            horizon: self.horizon_years,
        }
    }
}

/// Path counts and time discretisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    /// Paths used to train the exercise policies.
    pub train: usize,
    /// Fresh paths used for valuation and for the regressions.
    pub valuation: usize,
    /// Monitoring points per exercise interval.
    pub monitor_steps: usize,
}

/// Either a named preset or an explicit contract list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSection {
    /// `paper-options` or `paper-with-future`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contracts: Vec<ContractSpec>,
    #[serde(default)]
    pub netting: bool,
    /// Collateral in currency units.
    #[serde(default)]
    pub collateral: f64,
}

impl PortfolioSection {
    pub fn build(&self) -> Result<PortfolioSpec> {
        match (self.preset.as_deref(), self.contracts.is_empty()) {
            (Some("paper-options"), true) => Ok(PortfolioSpec::paper_options()),
            (Some("paper-with-future"), true) => Ok(PortfolioSpec::paper_with_future()),
            (Some(other), true) => Err(Error::Config(vec![format!("portfolio.preset: unknown preset `{other}`")])),
            (Some(_), false) => Err(Error::Config(vec!["portfolio: give either a preset or contracts, not both".into()])),
            (None, _) => PortfolioSpec::new(self.contracts.clone(), self.netting, self.collateral),
        }
    }
}

/// Network architecture and optimiser schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    /// Mini-batches for a network trained from scratch.
    pub steps: usize,
    /// Mini-batches for a network started from a neighbouring one.
    pub warm_steps: usize,
    pub lr_start: f64,
    pub warm_lr_start: f64,
    pub lr_end: f64,
    pub decay_every: usize,
}

impl TrainingSection {
    fn schedules(&self) -> (TrainSchedule, TrainSchedule) {
        let cold = TrainSchedule {
            batch_size: self.batch_size,
            steps: self.steps,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            decay_every: self.decay_every,
        };
        let warm = TrainSchedule {
            steps: self.warm_steps,
            lr_start: self.warm_lr_start,
            ..cold.clone()
        };
        (cold, warm)
    }

    pub fn policy_config(&self) -> PolicyConfig {
        let (schedule, warm_schedule) = self.schedules();
        PolicyConfig {
            hidden: self.hidden.clone(),
            activation: self.activation,
            payoff_features: true,
            schedule,
            warm_schedule,
        }
    }

    pub fn regression_config(&self) -> RegressionConfig {
        let (schedule, warm_schedule) = self.schedules();
        RegressionConfig {
            hidden: self.hidden.clone(),
            activation: self.activation,
            schedule,
            warm_schedule,
        }
    }

    fn check(&self, name: &str, errors: &mut Vec<String>) {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            errors.push(format!("{name}.hidden: needs at least one non-empty layer"));
        }
        if self.batch_size == 0 || self.decay_every == 0 {
            errors.push(format!("{name}: batch_size and decay_every must be positive"));
        }
        for (field, v) in [("lr_start", self.lr_start), ("warm_lr_start", self.warm_lr_start), ("lr_end", self.lr_end)] {
            if !(v > 0.0 && v.is_finite()) {
                errors.push(format!("{name}.{field}: must be positive"));
            }
        }
        if self.lr_end > self.lr_start.min(self.warm_lr_start) {
            errors.push(format!("{name}.lr_end: must not exceed the starting rates"));
        }
    }
}

/// Counterparty credit parameters. Intensities per year; `b` scales the
/// aggregated Brownian motion inside the intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreditSection {
    pub recovery: f64,
    pub hbar_per_year: Vec<f64>,
    pub b: Vec<f64>,
    /// Lower and upper PFE levels, fractions in (0, 1).
    pub pfe_levels: [f64; 2],
    /// Confidence level of VaR/ES-CVA, fraction in (0, 1).
    pub es_level: f64,
    /// Compute dynamic CVA curves for these `(b, h̄)` cells only.
    #[serde(default)]
    pub curve_cells: Vec<[f64; 2]>,
}

/// Full experiment configuration, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory, relative to the output root unless absolute.
    pub output_dir: PathBuf,
    pub market: MarketSection,
    pub paths: PathSection,
    pub portfolio: PortfolioSection,
    /// Decision networks for the risk-free policy.
    pub policy: TrainingSection,
    /// Decision networks for the risky policies, started from the risk-free ones.
    pub risky_policy: TrainingSection,
    /// Value and CVA regressions.
    pub regression: TrainingSection,
    pub credit: CreditSection,
}

impl ExperimentConfig {
    /// The desk-scale setup of the study: 2^17 paths, the nine-contract
    /// netted portfolio and the 3×3 credit grid.
    pub fn paper() -> Self {
        let policy = TrainingSection {
            hidden: vec![30, 30, 30],
            activation: Activation::Tanh,
            batch_size: 4096,
            steps: 1500,
            warm_steps: 600,
            lr_start: 1e-2,
            warm_lr_start: 3e-3,
            lr_end: 1e-6,
            decay_every: 100,
        };
        ExperimentConfig {
            seed: 20240611,
            output_dir: PathBuf::from("paper"),
            market: MarketSection {
                spot: vec![100.0, 100.0],
                rate_per_year: 0.05,
                dividend_yield_per_year: vec![0.1, 0.1],
                volatility_per_sqrt_year: vec![0.2, 0.2],
                correlation: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                horizon_years: 3.0,
            },
            paths: PathSection {
                train: 1 << 17,
                valuation: 1 << 17,
                monitor_steps: 4,
            },
            portfolio: PortfolioSection {
                preset: Some("paper-with-future".into()),
                contracts: Vec::new(),
                netting: true,
                collateral: 35.0,
            },
            risky_policy: TrainingSection {
                warm_steps: 400,
                ..policy.clone()
            },
            regression: policy.clone(),
            policy,
            credit: CreditSection {
                recovery: 0.0,
                hbar_per_year: vec![0.0, 0.1, 0.2],
                b: vec![-0.2, 0.0, 0.2],
                pfe_levels: [0.025, 0.975],
                es_level: 0.975,
                curve_cells: vec![[0.0, 0.1]],
            },
        }
    }

    /// Parses TOML, then applies `key.path=value` overrides (values in TOML syntax).
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let mut errors = Vec::new();
        for o in overrides {
            if let Err(e) = apply_override(&mut table, o) {
                errors.push(e);
            }
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Checks every section and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if let Err(e) = self.market.params().validate() {
            errors.push(format!("market: {e}"));
        }
        match self.portfolio.build() {
            Ok(p) => {
                if let Err(e) = p.validate_against(&self.market.params()) {
                    errors.push(format!("portfolio: {e}"));
                }
            }
            Err(Error::Config(es)) => errors.extend(es.into_iter().map(|e| format!("portfolio: {e}"))),
            Err(e) => errors.push(format!("portfolio: {e}")),
        }
        if self.paths.monitor_steps == 0 {
            errors.push("paths.monitor_steps: must be at least 1".into());
        }
        for (name, t) in [("policy", &self.policy), ("risky_policy", &self.risky_policy), ("regression", &self.regression)] {
            t.check(name, &mut errors);
            for (which, n) in [("train", self.paths.train), ("valuation", self.paths.valuation)] {
                if n < t.batch_size {
                    errors.push(format!("paths.{which}: {n} paths is fewer than {name}.batch_size = {}", t.batch_size));
                }
            }
        }
        let c = &self.credit;
        if !(0.0..1.0).contains(&c.recovery) {
            errors.push("credit.recovery: must lie in [0, 1)".into());
        }
        if c.hbar_per_year.iter().chain(&c.b).any(|v| !v.is_finite()) {
            errors.push("credit: intensities and b must be finite".into());
        }
        for l in c.pfe_levels.iter().chain([&c.es_level]) {
            if !(*l > 0.0 && *l < 1.0) {
                errors.push(format!("credit: level {l} is outside (0, 1)"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Output directory resolved against the output root.
    pub fn resolved_output(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) if self.output_dir.is_relative() => r.join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Short digest of the canonical TOML form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = self.to_toml().unwrap_or_default();
        Sha256::digest(text.as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> std::result::Result<(), String> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| format!("override `{spec}`: expected key=value"))?;
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .map(|mut t| t.remove("v").expect("key present"))
        .or_else(|_| Ok::<_, String>(toml::Value::String(raw.to_string())))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("override `{spec}`: `{part}` is not a section"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Seeds of every random component, all derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub paths_train: u64,
    pub paths_valuation: u64,
    pub defaults_train: u64,
    pub defaults_valuation: u64,
    pub policy_free: u64,
    pub policy_risky: u64,
    pub policy_netted: u64,
    pub regression_ir: u64,
    pub regression_pr: u64,
    pub regression_cva: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        let s = |label: &str| derive_seed(seed, label);
        Seeds {
            paths_train: s("paths-train"),
            paths_valuation: s("paths-valuation"),
            defaults_train: s("defaults-train"),
            defaults_valuation: s("defaults-valuation"),
            policy_free: s("policy-free"),
            policy_risky: s("policy-risky"),
            policy_netted: s("policy-netted"),
            regression_ir: s("regression-ir"),
            regression_pr: s("regression-pr"),
            regression_cva: s("regression-cva"),
        }
    }
}

/// Everything derived from a validated configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub market: MarketParams,
    pub portfolio: PortfolioSpec,
    pub grid: TimeGrid,
    pub seeds: Seeds,
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let market = config.market.params();
        let portfolio = config.portfolio.build()?;
        let grid = TimeGrid::new(&portfolio.union_dates, config.paths.monitor_steps)?;
        let seeds = Seeds::from_master(config.seed);
        Ok(Setup {
            config,
            market,
            portfolio,
            grid,
            seeds,
        })
    }

    pub fn default_params(&self, b: f64, hbar: f64) -> DefaultParams {
        DefaultParams {
            hbar,
            b,
            recovery: self.config.credit.recovery,
            monitor_steps: self.config.paths.monitor_steps,
        }
    }

    /// Training and valuation paths on disjoint seed streams.
    pub fn simulate(&self) -> Result<(PathBatch, PathBatch)> {
        let train = simulate_paths(&self.market, &self.grid, self.config.paths.train, self.seeds.paths_train)?;
        let val = simulate_paths(&self.market, &self.grid, self.config.paths.valuation, self.seeds.paths_valuation)?;
        Ok((train, val))
    }

    /// Both batches with default times for `dp`, on seeds shared by every cell.
    pub fn with_defaults(&self, train: &PathBatch, val: &PathBatch, dp: &DefaultParams) -> Result<(PathBatch, PathBatch)> {
        Ok((
            sample_defaults(train, &self.market, dp, self.seeds.defaults_train)?,
            sample_defaults(val, &self.market, dp, self.seeds.defaults_valuation)?,
        ))
    }
}

/// Risk-free policy, its values and value surfaces.
#[derive(Debug, Clone)]
pub struct RiskFreeRun {
    pub policy: DecisionPolicy,
    /// Per-contract values at time 0 on the valuation paths.
    pub values: Vec<Estimate>,
    pub total: Estimate,
    pub targets: CashFlowTargets,
    pub ir: ValueSurface,
    pub pr: Option<ValueSurface>,
    pub timings: BTreeMap<String, f64>,
}

/// Trains `f^V`, values the portfolio and fits the value surfaces.
pub fn run_risk_free(setup: &Setup, train: &PathBatch, val: &PathBatch, with_pr: bool) -> Result<RiskFreeRun> {
    let mut timings = BTreeMap::new();
    let clock = Instant::now();
    let p = &setup.portfolio;
    let policy = train_risk_free(train, p, &setup.config.policy.policy_config(), setup.seeds.policy_free)?;
    timings.insert("train_risk_free".into(), clock.elapsed().as_secs_f64());
    log::info!("risk-free policy trained in {:.1}s", clock.elapsed().as_secs_f64());
    let targets = build_targets(&policy, val, p)?;
    let values = (0..p.len())
        .map(|j| value_at_zero(&targets.stopping.cashflows.column(j).to_vec()))
        .collect();
    let total = value_at_zero(&targets.stopping.path_totals());
    let rcfg = setup.config.regression.regression_config();
    let t = Instant::now();
    let ir = fit_ir(&targets, val, p, &rcfg, setup.seeds.regression_ir)?;
    timings.insert("fit_ir".into(), t.elapsed().as_secs_f64());
    let pr = if with_pr {
        let t = Instant::now();
        let pr = fit_pr(&targets, val, p, &rcfg, setup.seeds.regression_pr)?;
        timings.insert("fit_pr".into(), t.elapsed().as_secs_f64());
        Some(pr)
    } else {
        None
    };
    Ok(RiskFreeRun {
        policy,
        values,
        total,
        targets,
        ir,
        pr,
        timings,
    })
}

/// EE/PFE profiles of the risk-free run: IR per contract, IR netted and,
/// when fitted, PR.
pub fn exposure_profiles(setup: &Setup, val: &PathBatch, rf: &RiskFreeRun) -> Result<Vec<(String, ExposureProfile)>> {
    let levels = (setup.config.credit.pfe_levels[0], setup.config.credit.pfe_levels[1]);
    let p = &setup.portfolio;
    let s = &rf.targets.stopping;
    let mut out = vec![
        ("ir".to_string(), exposure_profile(&rf.ir, val, p, s, ExposureRule::PerContract, levels)?),
        ("ir_netted".to_string(), exposure_profile(&rf.ir, val, p, s, ExposureRule::Netted, levels)?),
    ];
    if let Some(pr) = &rf.pr {
        out.push(("pr".to_string(), exposure_profile(pr, val, p, s, ExposureRule::Netted, levels)?));
    }
    Ok(out)
}

/// Risky policies trained for one credit cell.
#[derive(Debug, Clone)]
pub struct RiskyPolicies {
    pub b: f64,
    pub hbar: f64,
    pub no_netting: DecisionPolicy,
    pub netted: DecisionPolicy,
}

/// Trains `f^U` and `f^A` for one `(b, h̄)` cell.
pub fn train_risky_cell(setup: &Setup, train: &PathBatch, rf: &RiskFreeRun, b: f64, hbar: f64) -> Result<RiskyPolicies> {
    let dp = setup.default_params(b, hbar);
    let trd = sample_defaults(train, &setup.market, &dp, setup.seeds.defaults_train)?;
    let cfg = setup.config.risky_policy.policy_config();
    let p = &setup.portfolio;
    let clock = Instant::now();
    let no_netting = train_risky_no_netting(&trd, p, &rf.ir, &dp, &rf.policy, &cfg, setup.seeds.policy_risky)?;
    let netted = train_risky_netted(&trd, p, &rf.ir, &dp, &rf.policy, &cfg, setup.seeds.policy_netted)?;
    log::info!("risky policies for b = {b}, hbar = {hbar} trained in {:.1}s", clock.elapsed().as_secs_f64());
    Ok(RiskyPolicies {
        b,
        hbar,
        no_netting,
        netted,
    })
}

/// Per-path discounted totals of the five valuations of one cell.
#[derive(Debug, Clone)]
pub struct CellPaths {
    pub v_free: Vec<f64>,
    pub u_risky: Vec<f64>,
    pub u_free: Vec<f64>,
    pub a_risky: Vec<f64>,
    pub a_free: Vec<f64>,
    pub stop_free: StoppingResult,
    pub stop_risky: StoppingResult,
    pub stop_netted: StoppingResult,
}

/// Values the risky policies of one cell on the valuation paths and, on
/// request, the dynamic CVA curves.
pub fn evaluate_cell(
    setup: &Setup,
    val: &PathBatch,
    rf: &RiskFreeRun,
    pol: &RiskyPolicies,
    with_curves: bool,
) -> Result<(CvaCell, CellPaths)> {
    let p = &setup.portfolio;
    let dp = setup.default_params(pol.b, pol.hbar);
    let vad = sample_defaults(val, &setup.market, &dp, setup.seeds.defaults_valuation)?;
    let closeout = rf.ir.closeout(&vad, p, &dp)?;
    let stop_free = rf.targets.stopping.clone();
    let stop_risky = evaluate_stopping(&pol.no_netting, &vad, p)?;
    let stop_netted = evaluate_stopping(&pol.netted, &vad, p)?;
    let totals = |a: ndarray::Array2<f64>| a.sum_axis(ndarray::Axis(1)).to_vec();
    let paths = CellPaths {
        v_free: stop_free.path_totals(),
        u_risky: totals(risky_cashflows(&stop_risky, &vad, p, &closeout)?),
        u_free: totals(risky_cashflows(&stop_free, &vad, p, &closeout)?),
        a_risky: netted_cashflows(&stop_netted, &vad, p, &closeout)?.path_totals(),
        a_free: netted_cashflows(&stop_free, &vad, p, &closeout)?.path_totals(),
        stop_free,
        stop_risky,
        stop_netted,
    };
    let cva = cva_time_zero(&paths.v_free, &paths.u_risky);
    let cva_bar = cva_time_zero(&paths.v_free, &paths.u_free);
    let cva_net = cva_time_zero(&paths.v_free, &paths.a_risky);
    let cva_bar_net = cva_time_zero(&paths.v_free, &paths.a_free);
    let mut curves = Vec::new();
    if with_curves {
        let rcfg = setup.config.regression.regression_config();
        let level = setup.config.credit.es_level;
        let runs = [
            ("no-netting-risky", &paths.stop_risky, false),
            ("no-netting-risk-free", &paths.stop_free, false),
            ("netted-risky", &paths.stop_netted, true),
            ("netted-risk-free", &paths.stop_free, true),
        ];
        for (k, (name, stop, netted)) in runs.into_iter().enumerate() {
            let t = Instant::now();
            let seed = derive_seed(setup.seeds.regression_cva, &format!("{name}-{k}"));
            let sample = dynamic_cva(&rf.targets, stop, &closeout, &vad, p, netted, &rcfg, seed)?;
            curves.push((name.to_string(), risk_measures(&sample, level)?));
            log::info!("dynamic CVA `{name}` fitted in {:.1}s", t.elapsed().as_secs_f64());
        }
    }
    let cell = CvaCell {
        b: pol.b,
        hbar: pol.hbar,
        v_free: value_at_zero(&paths.v_free),
        u_risky: value_at_zero(&paths.u_risky),
        u_free: value_at_zero(&paths.u_free),
        a_risky: value_at_zero(&paths.a_risky),
        a_free: value_at_zero(&paths.a_free),
        rel_overestimation: relative_overestimation(cva.mean, cva_bar.mean),
        rel_overestimation_net: relative_overestimation(cva_net.mean, cva_bar_net.mean),
        cva,
        cva_bar,
        cva_net,
        cva_bar_net,
        curves,
    };
    Ok((cell, paths))
}

/// Cells of the configured credit grid, `b` outermost.
pub fn credit_cells(cfg: &ExperimentConfig) -> Vec<(f64, f64)> {
    cfg.credit
        .b
        .iter()
        .flat_map(|&b| cfg.credit.hbar_per_year.iter().map(move |&h| (b, h)))
        .collect()
}

fn wants_curves(cfg: &ExperimentConfig, b: f64, hbar: f64) -> bool {
    cfg.credit.curve_cells.iter().any(|c| c[0] == b && c[1] == hbar)
}

/// Trains and values every cell of the credit grid.
pub fn run_risky_grid(setup: &Setup, train: &PathBatch, val: &PathBatch, rf: &RiskFreeRun) -> Result<CvaReport> {
    let mut cells = Vec::new();
    for (b, hbar) in credit_cells(&setup.config) {
        let pol = train_risky_cell(setup, train, rf, b, hbar)?;
        cells.push(evaluate_cell(setup, val, rf, &pol, wants_curves(&setup.config, b, hbar))?.0);
    }
    Ok(CvaReport {
        cells,
        metadata: report_metadata(setup),
    })
}

pub fn report_metadata(setup: &Setup) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("config_hash".into(), setup.config.hash());
    m.insert("seed".into(), setup.config.seed.to_string());
    m.insert("paths_train".into(), setup.config.paths.train.to_string());
    m.insert("paths_valuation".into(), setup.config.paths.valuation.to_string());
    m.insert("recovery".into(), setup.config.credit.recovery.to_string());
    m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    if let Ok(s) = serde_json::to_value(&setup.seeds) {
        if let Some(obj) = s.as_object() {
            for (k, v) in obj {
                m.insert(format!("seed_{k}"), v.to_string());
            }
        }
    }
    m
}

/// Record of a run, enough to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub artifacts: Vec<PathBuf>,
    /// Wall-clock seconds per step.
    pub timings: BTreeMap<String, f64>,
    pub version: String,
}

impl RunManifest {
    pub fn new(setup: &Setup) -> Self {
        RunManifest {
            config_hash: setup.config.hash(),
            config: setup.config.clone(),
            seeds: setup.seeds.clone(),
            artifacts: Vec::new(),
            timings: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    /// Loads the manifest in `dir`, or starts a new one.
    pub fn load_or_new(dir: &Path, setup: &Setup) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            let m: RunManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
            if m.config_hash == setup.config.hash() {
                return Ok(m);
            }
            log::warn!("configuration changed since the last run in {}; starting a new manifest", dir.display());
        }
        Ok(Self::new(setup))
    }

    pub fn record(&mut self, path: PathBuf) {
        if !self.artifacts.contains(&path) {
            self.artifacts.push(path);
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-contract values at time 0 with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub contracts: Vec<String>,
    pub values: Vec<Estimate>,
    pub total: Estimate,
}

impl ValueTable {
    pub fn new(p: &PortfolioSpec, rf: &RiskFreeRun) -> Self {
        ValueTable {
            contracts: p.contracts.iter().map(|c| c.name.clone()).collect(),
            values: rf.values.clone(),
            total: rf.total,
        }
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "contract,value,se")?;
        for (name, e) in self.contracts.iter().zip(&self.values) {
            writeln!(w, "{name},{},{}", e.mean, e.se)?;
        }
        writeln!(w, "total,{},{}", self.total.mean, self.total.se)?;
        Ok(())
    }
}

/// Rebuilds a risk-free run from a saved policy and surfaces.
pub fn restore_risk_free(
    setup: &Setup,
    val: &PathBatch,
    policy: DecisionPolicy,
    ir: ValueSurface,
    pr: Option<ValueSurface>,
) -> Result<RiskFreeRun> {
    let targets = build_targets(&policy, val, &setup.portfolio)?;
    let values = (0..setup.portfolio.len())
        .map(|j| value_at_zero(&targets.stopping.cashflows.column(j).to_vec()))
        .collect();
    let total = value_at_zero(&targets.stopping.path_totals());
    Ok(RiskFreeRun {
        policy,
        values,
        total,
        targets,
        ir,
        pr,
        timings: BTreeMap::new(),
    })
}

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct ArtifactDir {
    pub root: PathBuf,
}

impl ArtifactDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArtifactDir { root: root.into() }
    }

    pub fn paths_file(&self, which: &str) -> PathBuf {
        self.root.join("paths").join(format!("{which}.bin"))
    }

    pub fn risk_free(&self, file: &str) -> PathBuf {
        self.root.join("risk-free").join(file)
    }

    pub fn risky(&self, b: f64, hbar: f64, file: &str) -> PathBuf {
        self.root.join("risky").join(format!("b{b}_hbar{hbar}")).join(file)
    }

    pub fn exposure(&self, file: &str) -> PathBuf {
        self.root.join("exposure").join(file)
    }

    pub fn cva(&self, file: &str) -> PathBuf {
        self.root.join("cva").join(file)
    }

    /// Writes `contents` to `path`, creating parents, and records it.
    pub fn write(&self, manifest: &mut RunManifest, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        manifest.record(path.strip_prefix(&self.root).map(Path::to_path_buf).unwrap_or(path));
        Ok(())
    }

    /// Saved batches if they match the configuration, otherwise fresh ones.
    pub fn load_or_simulate(&self, setup: &Setup, manifest: &mut RunManifest) -> Result<(PathBatch, PathBatch)> {
        let load = |which: &str, seed: u64, n: usize| -> Option<PathBatch> {
            let b = PathBatch::load(self.paths_file(which)).ok()?;
            (b.path_seed == seed && b.n_paths() == n && b.grid == setup.grid).then_some(b)
        };
        let cfg = &setup.config.paths;
        if let (Some(t), Some(v)) = (
            load("train", setup.seeds.paths_train, cfg.train),
            load("valuation", setup.seeds.paths_valuation, cfg.valuation),
        ) {
            return Ok((t, v));
        }
        let (t, v) = setup.simulate()?;
        for (which, b) in [("train", &t), ("valuation", &v)] {
            let path = self.paths_file(which);
            fs::create_dir_all(path.parent().expect("has parent"))?;
            b.save(&path)?;
            manifest.record(path.strip_prefix(&self.root).map(Path::to_path_buf).unwrap_or(path));
        }
        Ok((t, v))
    }

    pub fn save_risk_free(&self, setup: &Setup, rf: &RiskFreeRun, manifest: &mut RunManifest) -> Result<()> {
        let p = &setup.portfolio;
        self.write(manifest, self.risk_free("policy.json"), rf.policy.to_json(p)?)?;
        self.write(manifest, self.risk_free("surface_ir.json"), rf.ir.to_json()?)?;
        if let Some(pr) = &rf.pr {
            self.write(manifest, self.risk_free("surface_pr.json"), pr.to_json()?)?;
        }
        let table = ValueTable::new(p, rf);
        self.write(manifest, self.risk_free("values.json"), serde_json::to_string_pretty(&table)?)?;
        let mut csv = Vec::new();
        table.write_csv(&mut csv)?;
        self.write(manifest, self.risk_free("values.csv"), csv)?;
        manifest.timings.extend(rf.timings.clone());
        Ok(())
    }

    /// Loads the risk-free artifacts; fails if the risk-free step has not run.
    pub fn load_risk_free(&self, setup: &Setup, val: &PathBatch) -> Result<RiskFreeRun> {
        let read = |f: &str| fs::read_to_string(self.risk_free(f));
        let (Ok(policy), Ok(ir)) = (read("policy.json"), read("surface_ir.json")) else {
            return Err(Error::MissingPrerequisite("risk-free policy and value surface (run `train-riskfree` first)"));
        };
        let policy = DecisionPolicy::from_json(&policy, &setup.portfolio)?;
        let ir = ValueSurface::from_json(&ir)?;
        let pr = read("surface_pr.json").ok().map(|s| ValueSurface::from_json(&s)).transpose()?;
        restore_risk_free(setup, val, policy, ir, pr)
    }

    pub fn save_risky(&self, setup: &Setup, pol: &RiskyPolicies, manifest: &mut RunManifest) -> Result<()> {
        let p = &setup.portfolio;
        self.write(manifest, self.risky(pol.b, pol.hbar, "policy_no_netting.json"), pol.no_netting.to_json(p)?)?;
        self.write(manifest, self.risky(pol.b, pol.hbar, "policy_netted.json"), pol.netted.to_json(p)?)
    }

    /// Saved risky policies of a cell, if both exist.
    pub fn load_risky(&self, setup: &Setup, b: f64, hbar: f64) -> Result<Option<RiskyPolicies>> {
        let read = |f: &str| fs::read_to_string(self.risky(b, hbar, f));
        match (read("policy_no_netting.json"), read("policy_netted.json")) {
            (Ok(u), Ok(a)) => Ok(Some(RiskyPolicies {
                b,
                hbar,
                no_netting: DecisionPolicy::from_json(&u, &setup.portfolio)?,
                netted: DecisionPolicy::from_json(&a, &setup.portfolio)?,
            })),
            _ => Ok(None),
        }
    }

    pub fn save_report(&self, report: &CvaReport, manifest: &mut RunManifest) -> Result<()> {
        self.write(manifest, self.cva("report.json"), report.to_json()?)?;
        let mut buf = Vec::new();
        report.write_values_csv(&mut buf)?;
        self.write(manifest, self.cva("values.csv"), buf)?;
        let mut buf = Vec::new();
        report.write_cva_csv(&mut buf, false)?;
        self.write(manifest, self.cva("cva.csv"), buf)?;
        let mut buf = Vec::new();
        report.write_cva_csv(&mut buf, true)?;
        self.write(manifest, self.cva("cva_net.csv"), buf)?;
        let mut buf = Vec::new();
        report.write_curves_csv(&mut buf)?;
        self.write(manifest, self.cva("curves.csv"), buf)
    }
}
