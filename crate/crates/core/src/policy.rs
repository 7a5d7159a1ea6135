//! Phase I: exercise policies learned backwards in time, their stopping
//! times, and the time-0 estimators built on them.
//!
//! One decision network per exercise date maps the market state (augmented
//! with the immediate payoffs and, for the netted problem, the alive flags)
//! to per-contract exercise probabilities. During optimisation the
//! probabilities enter the relaxed objective directly; cash flows are then
//! updated with the rounded decisions.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{DefaultParams, PathBatch};
use crate::nn::{fit, Activation, Network, NetworkConfig, TrainSchedule};
use crate::portfolio::{payoffs_at, PortfolioSpec, Schedule};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::Estimate;
use crate::valuation::ValueSurface;

/// Which valuation problem a policy was trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    RiskFree,
    RiskyNoNetting,
    RiskyNetted,
}

/// Network architecture and training schedules for decision networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Append the immediate payoffs to the state input.
    pub payoff_features: bool,
    /// Schedule for a network trained from scratch.
    pub schedule: TrainSchedule,
    /// Schedule for a network initialised from a neighbouring one.
    pub warm_schedule: TrainSchedule,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: vec![30, 30, 30],
            activation: Activation::Tanh,
            payoff_features: true,
            schedule: TrainSchedule::new(4096, 1500),
            warm_schedule: TrainSchedule {
                lr_start: 3e-3,
                ..TrainSchedule::new(4096, 600)
            },
        }
    }
}

/// Trained decision networks for dates `T_1..T_N`. Dates without a learnable
/// decision (and the last date) carry no network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub kind: PolicyKind,
    pub nets: Vec<Option<Network>>,
    pub payoff_features: bool,
    pub n_contracts: usize,
    pub seed: u64,
}

/// Per-path, per-contract exercise dates and risk-free cash flows.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingResult {
    /// Exercise date index `n ∈ 1..=N`, or 0 when never exercised.
    pub stop: Array2<usize>,
    /// Cash flows discounted to time 0, ignoring default.
    pub cashflows: Array2<f64>,
}

/// Close-out inputs at the default time of each path.
#[derive(Debug, Clone, PartialEq)]
pub struct CloseOut {
    pub recovery: f64,
    /// `D_{0,τ^D}·V_j(τ^D, X_{τ^D})`, zero on paths without default.
    pub dv: Array2<f64>,
    /// Collateral discounted from the default time, zero without default.
    pub collateral: Vec<f64>,
}

impl CloseOut {
    /// Close-out of one contract, `R·V⁺ + V⁻`.
    pub fn single(&self, m: usize, j: usize) -> f64 {
        let v = self.dv[[m, j]];
        self.recovery * v.max(0.0) + v.min(0.0)
    }

    /// Netted close-out of the discounted sum `s`: `R(s−C)⁺ + (s−C)⁻ + C`.
    pub fn netted(&self, m: usize, s: f64) -> f64 {
        netted_closeout(s, self.collateral[m], self.recovery).0
    }
}

/// Netted close-out and its derivative in `s`.
fn netted_closeout(s: f64, c: f64, recovery: f64) -> (f64, f64) {
    if s <= c {
        (s, 1.0)
    } else {
        (c + recovery * (s - c), recovery)
    }
}

/// Default grid index per path, `usize::MAX` for survivors.
pub(crate) fn default_indices(batch: &PathBatch) -> Vec<usize> {
    batch.default_index.iter().map(|d| d.unwrap_or(usize::MAX)).collect()
}

/// Network input `[x, g(T_n, x), α]` with the optional parts.
pub(crate) fn decision_inputs(
    states: ArrayView2<f64>,
    payoffs: &Array2<f64>,
    alpha: Option<&Array2<f64>>,
    payoff_features: bool,
) -> Array2<f64> {
    let mut parts = vec![states];
    if payoff_features {
        parts.push(payoffs.view());
    }
    if let Some(a) = alpha {
        parts.push(a.view());
    }
    ndarray::concatenate(Axis(1), &parts).expect("row counts agree")
}

/// Rounded decisions at `T_n` with the terminal rule, the in-the-money guard
/// and the zero decisions for inactive or expired contracts.
fn decide_with(
    net: Option<&Network>,
    n: usize,
    sched: &Schedule,
    states: ArrayView2<f64>,
    payoffs: &Array2<f64>,
    alpha: Option<&Array2<f64>>,
    payoff_features: bool,
) -> Result<Array2<bool>> {
    let (rows, jn) = payoffs.dim();
    let probs = match net {
        Some(net) if rows > 0 => Some(net.forward(decision_inputs(states, payoffs, alpha, payoff_features).view())?),
        _ => None,
    };
    let mut dec = Array2::from_elem((rows, jn), false);
    for j in 0..jn {
        if !sched.is_active(n, j) || n > sched.maturity[j] {
            continue;
        }
        for m in 0..rows {
            let g = payoffs[[m, j]];
            dec[[m, j]] = if n == sched.maturity[j] {
                sched.terminal_decision(j, g)
            } else {
                probs.as_ref().is_some_and(|p| p[[m, j]] >= 0.5) && g > 0.0
            };
        }
    }
    Ok(dec)
}

/// Alive flags as network input: 1 while unexercised and not yet expired at `T_n`.
fn alpha_input(alive: &Array2<bool>, n: usize, sched: &Schedule) -> Array2<f64> {
    Array2::from_shape_fn(alive.dim(), |(m, j)| f64::from(u8::from(alive[[m, j]] && sched.maturity[j] >= n)))
}

impl DecisionPolicy {
    pub fn n_dates(&self) -> usize {
        self.nets.len()
    }

    /// Rounded exercise decisions at `T_n` for each row of `states`.
    pub fn decide(
        &self,
        n: usize,
        sched: &Schedule,
        states: ArrayView2<f64>,
        payoffs: &Array2<f64>,
        alive: Option<&Array2<bool>>,
    ) -> Result<Array2<bool>> {
        let alpha = match (self.kind, alive) {
            (PolicyKind::RiskyNetted, Some(a)) => Some(alpha_input(a, n, sched)),
            (PolicyKind::RiskyNetted, None) => return Err(Error::MissingPrerequisite("alive flags for a netted policy")),
            _ => None,
        };
        decide_with(self.nets[n - 1].as_ref(), n, sched, states, payoffs, alpha.as_ref(), self.payoff_features)
    }

    /// JSON with a format version and the portfolio it was trained for.
    pub fn to_json(&self, p: &PortfolioSpec) -> Result<String> {
        Ok(serde_json::to_string(&PolicyFile {
            format_version: POLICY_FORMAT_VERSION,
            portfolio_hash: portfolio_hash(p),
            policy: self.clone(),
        })?)
    }

    pub fn from_json(s: &str, p: &PortfolioSpec) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(s)?;
        if file.format_version != POLICY_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported policy format {}", file.format_version)));
        }
        if file.portfolio_hash != portfolio_hash(p) {
            return Err(Error::Format("policy was trained for a different portfolio".into()));
        }
        Ok(file.policy)
    }
}

const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format_version: u32,
    portfolio_hash: String,
    policy: DecisionPolicy,
}

/// Short digest of a portfolio description.
pub fn portfolio_hash(p: &PortfolioSpec) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(serde_json::to_vec(p).expect("portfolio serialises"));
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Payoffs and discounting at every exercise date, computed once per batch.
struct DateCache {
    /// `D_{0,T_n}·g_j(T_n, x)` per date.
    discounted: Vec<Array2<f64>>,
    payoffs: Vec<Array2<f64>>,
}

impl DateCache {
    fn new(batch: &PathBatch, p: &PortfolioSpec) -> Self {
        let nd = batch.grid.n_dates();
        let mut discounted = Vec::with_capacity(nd);
        let mut payoffs = Vec::with_capacity(nd);
        for n in 1..=nd {
            let i = batch.grid.date_index(n);
            let g = payoffs_at(p, batch.time(i), batch.states_at(i));
            discounted.push(&g * batch.discount_to_zero(i));
            payoffs.push(g);
        }
        DateCache { discounted, payoffs }
    }
}

fn check_inputs(batch: &PathBatch, p: &PortfolioSpec) -> Result<Schedule> {
    if batch.n_paths() == 0 {
        return Err(Error::invalid("batch", "no paths"));
    }
    p.schedule(&batch.grid)
}

fn fresh_net(cfg: &PolicyConfig, input_dim: usize, jn: usize, seed: u64, n: usize) -> Result<Network> {
    let nc = NetworkConfig::decision(input_dim, jn, &cfg.hidden, cfg.activation);
    Network::new(nc, derive_seed(seed, &format!("init-{n}")))
}

fn tag_date(e: Error, n: usize) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { what, date: Some(n) },
        other => other,
    }
}

/// Backward recursion shared by the risk-free and the non-netted risky
/// problems. `closeout` switches default handling on.
fn train_state_policy(
    batch: &PathBatch,
    p: &PortfolioSpec,
    cfg: &PolicyConfig,
    seed: u64,
    kind: PolicyKind,
    closeout: Option<&CloseOut>,
    warm: Option<&DecisionPolicy>,
) -> Result<DecisionPolicy> {
    let sched = check_inputs(batch, p)?;
    let (mp, jn, nd) = (batch.n_paths(), p.len(), sched.n_dates());
    let dflt = default_indices(batch);
    let cache = DateCache::new(batch, p);
    let mut nets: Vec<Option<Network>> = vec![None; nd];
    // Cash flow of each contract if it is still alive just after T_n.
    let mut cf = Array2::<f64>::zeros((mp, jn));
    for n in (1..=nd).rev() {
        let e_n = batch.grid.date_index(n);
        let e_prev = batch.grid.date_index(n - 1);
        let states = batch.states_at(e_n);
        let gd = &cache.discounted[n - 1];
        if n < nd && sched.date_learnable(n) {
            let rows: Vec<usize> = (0..mp).filter(|&m| dflt[m] > e_n).collect();
            if !rows.is_empty() {
                let inputs = decision_inputs(states, &cache.payoffs[n - 1], None, cfg.payoff_features);
                let (mut net, schedule) = match (warm.and_then(|w| w.nets[n - 1].clone()), nets.get(n).cloned().flatten()) {
                    (Some(same_date), _) => (same_date, &cfg.warm_schedule),
                    (None, Some(later)) => {
                        let mut net = later;
                        net.fit_input_scaling(inputs.view(), &rows);
                        (net, &cfg.warm_schedule)
                    }
                    (None, None) => {
                        let mut net = fresh_net(cfg, inputs.ncols(), jn, seed, n)?;
                        net.fit_input_scaling(inputs.view(), &rows);
                        (net, &cfg.schedule)
                    }
                };
                let xs = net.standardize(inputs.view());
                let learn: Vec<bool> = (0..jn).map(|j| sched.is_learnable(n, j)).collect();
                let batch_seed = derive_seed(seed, &format!("batches-{n}"));
                fit(&mut net, xs.view(), &rows, schedule, batch_seed, |idx, out, grad| {
                    let b = idx.len() as f64;
                    let mut loss = 0.0;
                    for (r, &m) in idx.iter().enumerate() {
                        for j in (0..jn).filter(|&j| learn[j]) {
                            let (f, g, c) = (out[[r, j]], gd[[m, j]], cf[[m, j]]);
                            loss -= (f * g + (1.0 - f) * c) / b;
                            grad[[r, j]] = -(g - c) / b;
                        }
                    }
                    loss
                })
                .map_err(|e| tag_date(e, n))?;
                nets[n - 1] = Some(net);
            }
        }
        let dec = decide_with(nets[n - 1].as_ref(), n, &sched, states, &cache.payoffs[n - 1], None, cfg.payoff_features)?;
        for m in 0..mp {
            let d = dflt[m];
            for j in 0..jn {
                cf[[m, j]] = if sched.maturity[j] < n {
                    0.0
                } else if d > e_n {
                    if dec[[m, j]] {
                        gd[[m, j]]
                    } else {
                        cf[[m, j]]
                    }
                } else if d > e_prev {
                    closeout.map_or(0.0, |c| c.single(m, j))
                } else {
                    0.0
                };
            }
        }
    }
    Ok(DecisionPolicy {
        kind,
        nets,
        payoff_features: cfg.payoff_features,
        n_contracts: jn,
        seed,
    })
}

/// Learns the risk-free exercise policy `f^V`.
pub fn train_risk_free(batch: &PathBatch, p: &PortfolioSpec, cfg: &PolicyConfig, seed: u64) -> Result<DecisionPolicy> {
    let no_defaults = PathBatch {
        default_index: vec![None; batch.n_paths()],
        ..batch.clone()
    };
    train_state_policy(&no_defaults, p, cfg, seed, PolicyKind::RiskFree, None, None)
}

/// Learns the risky policy `f^U` without netting. Networks start from the
/// risk-free policy `warm`; close-outs use values from the IR `surface`.
pub fn train_risky_no_netting(
    batch: &PathBatch,
    p: &PortfolioSpec,
    surface: &ValueSurface,
    dp: &DefaultParams,
    warm: &DecisionPolicy,
    cfg: &PolicyConfig,
    seed: u64,
) -> Result<DecisionPolicy> {
    check_warm(warm, p)?;
    let closeout = surface.closeout(batch, p, dp)?;
    if batch.default_index.iter().all(Option::is_none) {
        // Without defaults the objective is the risk-free one.
        return Ok(DecisionPolicy {
            kind: PolicyKind::RiskyNoNetting,
            ..warm.clone()
        });
    }
    train_state_policy(batch, p, cfg, seed, PolicyKind::RiskyNoNetting, Some(&closeout), Some(warm))
}

fn check_warm(warm: &DecisionPolicy, p: &PortfolioSpec) -> Result<()> {
    if warm.kind != PolicyKind::RiskFree {
        return Err(Error::MissingPrerequisite("a risk-free policy to start from"));
    }
    if warm.n_contracts != p.len() {
        return Err(Error::ShapeMismatch {
            context: "warm-start policy contracts",
            expected: p.len(),
            actual: warm.n_contracts,
        });
    }
    Ok(())
}

/// Copies a state-only decision net into one that also reads the alive
/// flags, with zero weights on the new inputs.
fn extend_with_alpha(net: &Network, jn: usize) -> Network {
    let mut cfg = net.config.clone();
    let old_in = cfg.input_dim;
    cfg.input_dim += jn;
    let mut out = Network::zeros(cfg);
    {
        let src = net.weights(0);
        let mut dst = out.weights_mut(0);
        for r in 0..old_in {
            dst.row_mut(r).assign(&src.row(r));
        }
    }
    let first_len = old_in * net.config.layer_sizes()[1];
    let new_first_len = (old_in + jn) * net.config.layer_sizes()[1];
    out.params[new_first_len..].copy_from_slice(&net.params[first_len..]);
    out.input_shift = net.input_shift.iter().cloned().chain(std::iter::repeat_n(0.0, jn)).collect();
    out.input_scale = net.input_scale.iter().cloned().chain(std::iter::repeat_n(1.0, jn)).collect();
    out.output_shift = net.output_shift.clone();
    out.output_scale = net.output_scale.clone();
    out
}

/// Outcome of following decisions forward from some date on a set of rows.
struct Rollout {
    /// Discounted payments made before default.
    paid: Array2<f64>,
    /// Contract still alive when the counterparty defaults.
    hit: Array2<bool>,
}

/// Follows netted decisions from date `from` with the given alive flags.
/// Decisions after a path's default are not taken.
#[allow(clippy::too_many_arguments)]
fn rollout(
    nets: &[Option<Network>],
    payoff_features: bool,
    from: usize,
    rows: &[usize],
    mut alive: Array2<bool>,
    batch: &PathBatch,
    sched: &Schedule,
    cache: &DateCache,
    dflt: &[usize],
) -> Result<Rollout> {
    let (nr, jn) = alive.dim();
    let mut paid = Array2::zeros((nr, jn));
    let mut hit = Array2::from_elem((nr, jn), false);
    let mut done = vec![false; nr];
    for k in from..=sched.n_dates() {
        let e_k = batch.grid.date_index(k);
        for (r, &m) in rows.iter().enumerate() {
            if !done[r] && dflt[m] <= e_k {
                for j in 0..jn {
                    hit[[r, j]] = alive[[r, j]] && sched.maturity[j] >= k;
                }
                done[r] = true;
            }
        }
        let open: Vec<usize> = (0..nr).filter(|&r| !done[r]).collect();
        if open.is_empty() {
            break;
        }
        let paths: Vec<usize> = open.iter().map(|&r| rows[r]).collect();
        let states = batch.states_at(e_k).select(Axis(0), &paths);
        let g = cache.payoffs[k - 1].select(Axis(0), &paths);
        let sub_alive = alive.select(Axis(0), &open);
        let alpha = alpha_input(&sub_alive, k, sched);
        let dec = decide_with(nets[k - 1].as_ref(), k, sched, states.view(), &g, Some(&alpha), payoff_features)?;
        for (o, &r) in open.iter().enumerate() {
            for j in 0..jn {
                if alive[[r, j]] && dec[[o, j]] {
                    paid[[r, j]] = cache.discounted[k - 1][[rows[r], j]];
                    alive[[r, j]] = false;
                }
            }
        }
    }
    Ok(Rollout { paid, hit })
}

/// Learns the netted risky policy `f^A`.
///
/// At each date the alive flags are randomised per path, and the
/// continuation is re-rolled through the later networks already trained,
/// assuming the flags stay as drawn until the next date.
pub fn train_risky_netted(
    batch: &PathBatch,
    p: &PortfolioSpec,
    surface: &ValueSurface,
    dp: &DefaultParams,
    warm: &DecisionPolicy,
    cfg: &PolicyConfig,
    seed: u64,
) -> Result<DecisionPolicy> {
    check_warm(warm, p)?;
    let sched = check_inputs(batch, p)?;
    let closeout = surface.closeout(batch, p, dp)?;
    let (mp, jn, nd) = (batch.n_paths(), p.len(), sched.n_dates());
    let extended: Vec<Option<Network>> = warm.nets.iter().map(|n| n.as_ref().map(|n| extend_with_alpha(n, jn))).collect();
    if batch.default_index.iter().all(Option::is_none) {
        return Ok(DecisionPolicy {
            kind: PolicyKind::RiskyNetted,
            nets: extended,
            payoff_features: warm.payoff_features,
            n_contracts: jn,
            seed,
        });
    }
    let dflt = default_indices(batch);
    let cache = DateCache::new(batch, p);
    let mut nets: Vec<Option<Network>> = vec![None; nd];
    let recovery = dp.recovery;
    for n in (1..nd).rev() {
        if !sched.date_learnable(n) {
            continue;
        }
        let e_n = batch.grid.date_index(n);
        let rows: Vec<usize> = (0..mp).filter(|&m| dflt[m] > e_n).collect();
        if rows.is_empty() {
            continue;
        }
        let alpha_seed = derive_seed(seed, &format!("alpha-{n}"));
        let mut alive = Array2::from_elem((rows.len(), jn), false);
        for (r, &m) in rows.iter().enumerate() {
            let mut rng = stream_rng(alpha_seed, m as u64);
            for j in 0..jn {
                let forced = sched.first[j] >= n;
                let coin = rng.random::<bool>();
                alive[[r, j]] = sched.maturity[j] >= n && (forced || coin);
            }
        }
        let roll = rollout(&nets, cfg.payoff_features, n + 1, &rows, alive.clone(), batch, &sched, &cache, &dflt)?;
        // Full-size views indexed by path, as `fit` hands out path indices.
        let mut alpha_full = Array2::<f64>::zeros((mp, jn));
        let mut paid_full = Array2::<f64>::zeros((mp, jn));
        let mut hitdv_full = Array2::<f64>::zeros((mp, jn));
        for (r, &m) in rows.iter().enumerate() {
            for j in 0..jn {
                alpha_full[[m, j]] = f64::from(u8::from(alive[[r, j]]));
                paid_full[[m, j]] = roll.paid[[r, j]];
                if roll.hit[[r, j]] {
                    hitdv_full[[m, j]] = closeout.dv[[m, j]];
                }
            }
        }
        let states = batch.states_at(e_n);
        let inputs = decision_inputs(states, &cache.payoffs[n - 1], Some(&alpha_full), cfg.payoff_features);
        let (mut net, schedule) = match (nets[n].clone(), extended[n - 1].clone()) {
            (Some(later), _) => {
                let mut net = later;
                net.fit_input_scaling(inputs.view(), &rows);
                (net, &cfg.warm_schedule)
            }
            (None, Some(from_warm)) => {
                let mut net = from_warm;
                let fitted = {
                    let mut tmp = net.clone();
                    tmp.fit_input_scaling(inputs.view(), &rows);
                    tmp
                };
                let base = net.input_dim() - jn;
                for c in base..net.input_dim() {
                    net.input_shift[c] = fitted.input_shift[c];
                    net.input_scale[c] = fitted.input_scale[c];
                }
                (net, &cfg.warm_schedule)
            }
            (None, None) => {
                let mut net = fresh_net(cfg, inputs.ncols(), jn, seed, n)?;
                net.fit_input_scaling(inputs.view(), &rows);
                (net, &cfg.schedule)
            }
        };
        let xs = net.standardize(inputs.view());
        let gd = &cache.discounted[n - 1];
        let g = &cache.payoffs[n - 1];
        // Decisions that are not learned at this date stay fixed.
        let fixed: Vec<Option<bool>> = (0..jn)
            .map(|j| {
                if sched.is_learnable(n, j) {
                    None
                } else if sched.is_active(n, j) && sched.maturity[j] == n {
                    Some(true)
                } else {
                    Some(false)
                }
            })
            .collect();
        let coll = &closeout.collateral;
        let batch_seed = derive_seed(seed, &format!("batches-{n}"));
        fit(&mut net, xs.view(), &rows, schedule, batch_seed, |idx, out, grad| {
            let b = idx.len() as f64;
            let mut loss = 0.0;
            for (r, &m) in idx.iter().enumerate() {
                let f = |j: usize| match fixed[j] {
                    None => out[[r, j]],
                    Some(true) => f64::from(u8::from(sched.terminal_decision(j, g[[m, j]]))),
                    Some(false) => 0.0,
                };
                let mut direct = 0.0;
                let mut s = 0.0;
                for j in 0..jn {
                    let a = alpha_full[[m, j]];
                    if a == 0.0 {
                        continue;
                    }
                    let fj = f(j);
                    direct += fj * gd[[m, j]] + (1.0 - fj) * paid_full[[m, j]];
                    s += (1.0 - fj) * hitdv_full[[m, j]];
                }
                let (close, slope) = netted_closeout(s, coll[m], recovery);
                loss -= (direct + close) / b;
                for j in (0..jn).filter(|&j| fixed[j].is_none()) {
                    let a = alpha_full[[m, j]];
                    grad[[r, j]] = -a * (gd[[m, j]] - paid_full[[m, j]] - slope * hitdv_full[[m, j]]) / b;
                }
            }
            loss
        })
        .map_err(|e| tag_date(e, n))?;
        nets[n - 1] = Some(net);
    }
    Ok(DecisionPolicy {
        kind: PolicyKind::RiskyNetted,
        nets,
        payoff_features: cfg.payoff_features,
        n_contracts: jn,
        seed,
    })
}

/// Stopping dates and risk-free cash flows of `policy` on `batch`.
pub fn evaluate_stopping(policy: &DecisionPolicy, batch: &PathBatch, p: &PortfolioSpec) -> Result<StoppingResult> {
    let sched = check_inputs(batch, p)?;
    if policy.n_contracts != p.len() || policy.n_dates() != sched.n_dates() {
        return Err(Error::ShapeMismatch {
            context: "policy layout",
            expected: p.len(),
            actual: policy.n_contracts,
        });
    }
    let (mp, jn) = (batch.n_paths(), p.len());
    let mut stop = Array2::<usize>::zeros((mp, jn));
    let mut cashflows = Array2::<f64>::zeros((mp, jn));
    let mut alive = Array2::from_elem((mp, jn), true);
    for n in 1..=sched.n_dates() {
        let i = batch.grid.date_index(n);
        let g = payoffs_at(p, batch.time(i), batch.states_at(i));
        let dec = policy.decide(n, &sched, batch.states_at(i), &g, Some(&alive))?;
        let disc = batch.discount_to_zero(i);
        for m in 0..mp {
            for j in 0..jn {
                if alive[[m, j]] && dec[[m, j]] {
                    alive[[m, j]] = false;
                    stop[[m, j]] = n;
                    cashflows[[m, j]] = disc * g[[m, j]];
                }
            }
        }
    }
    Ok(StoppingResult { stop, cashflows })
}

impl StoppingResult {
    pub fn n_paths(&self) -> usize {
        self.stop.nrows()
    }

    /// Grid index at which contract `j` leaves the portfolio on path `m`:
    /// its exercise date, or its maturity if never exercised.
    pub fn end_index(&self, batch: &PathBatch, sched: &Schedule, m: usize, j: usize) -> usize {
        let n = self.stop[[m, j]];
        batch.grid.date_index(if n == 0 { sched.maturity[j] } else { n })
    }

    /// `A_t`: contract `j` not exercised strictly before grid time `i`.
    pub fn alive_at(&self, batch: &PathBatch, m: usize, j: usize, i: usize) -> bool {
        let n = self.stop[[m, j]];
        n == 0 || batch.grid.date_index(n) >= i
    }

    /// Summed discounted cash flow per path.
    pub fn path_totals(&self) -> Vec<f64> {
        self.cashflows.sum_axis(Axis(1)).to_vec()
    }
}

/// Per-contract discounted cash flows with default and contract-level close-out.
pub fn risky_cashflows(result: &StoppingResult, batch: &PathBatch, p: &PortfolioSpec, closeout: &CloseOut) -> Result<Array2<f64>> {
    let sched = p.schedule(&batch.grid)?;
    let dflt = default_indices(batch);
    let mut out = result.cashflows.clone();
    for m in 0..result.n_paths() {
        if dflt[m] == usize::MAX {
            continue;
        }
        for j in 0..p.len() {
            if dflt[m] <= result.end_index(batch, &sched, m, j) {
                out[[m, j]] = closeout.single(m, j);
            }
        }
    }
    Ok(out)
}

/// Netted risky cash flows: payments made before default and the netted close-out.
#[derive(Debug, Clone, PartialEq)]
pub struct NettedFlows {
    pub paid: Array2<f64>,
    pub closeout: Vec<f64>,
}

impl NettedFlows {
    pub fn path_totals(&self) -> Vec<f64> {
        self.paid.sum_axis(Axis(1)).iter().zip(&self.closeout).map(|(a, b)| a + b).collect()
    }
}

pub fn netted_cashflows(result: &StoppingResult, batch: &PathBatch, p: &PortfolioSpec, closeout: &CloseOut) -> Result<NettedFlows> {
    let sched = p.schedule(&batch.grid)?;
    let dflt = default_indices(batch);
    let mut paid = result.cashflows.clone();
    let mut close = vec![0.0; result.n_paths()];
    for m in 0..result.n_paths() {
        if dflt[m] == usize::MAX {
            continue;
        }
        let mut s = 0.0;
        for j in 0..p.len() {
            if dflt[m] <= result.end_index(batch, &sched, m, j) {
                paid[[m, j]] = 0.0;
                s += closeout.dv[[m, j]];
            }
        }
        close[m] = closeout.netted(m, s);
    }
    Ok(NettedFlows { paid, closeout: close })
}

/// Mean and standard error of per-path discounted totals.
pub fn value_at_zero(path_totals: &[f64]) -> Estimate {
    Estimate::from_samples(path_totals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate_paths, MarketParams, TimeGrid};
    use crate::portfolio::{ContractSpec, Payoff};

    fn small_batch(dates: &[f64], n_paths: usize, seed: u64) -> PathBatch {
        let grid = TimeGrid::new(dates, 1).unwrap();
        simulate_paths(&MarketParams::paper(), &grid, n_paths, seed).unwrap()
    }

    fn quick_cfg() -> PolicyConfig {
        PolicyConfig {
            hidden: vec![8, 8],
            schedule: TrainSchedule::new(256, 100),
            warm_schedule: TrainSchedule::new(256, 50),
            ..PolicyConfig::default()
        }
    }

    #[test]
    fn european_contract_reduces_to_terminal_rule() {
        let p = PortfolioSpec::new(vec![ContractSpec::new("put", Payoff::Put { asset: 0, strike: 100.0 }, vec![3.0])], false, 0.0).unwrap();
        let batch = small_batch(&[3.0], 2000, 1);
        let pol = train_risk_free(&batch, &p, &quick_cfg(), 1).unwrap();
        let res = evaluate_stopping(&pol, &batch, &p).unwrap();
        let mc: Vec<f64> = (0..2000)
            .map(|m| (-0.15f64).exp() * (100.0 - batch.states[[1, m, 0]]).max(0.0))
            .collect();
        assert_eq!(value_at_zero(&res.path_totals()), Estimate::from_samples(&mc));
    }

    #[test]
    fn zero_payoff_portfolio_is_worthless() {
        let p = PortfolioSpec::new(
            vec![ContractSpec::new("deep-otm", Payoff::Call { asset: 0, strike: 1e9 }, vec![1.0, 2.0, 3.0])],
            false,
            0.0,
        )
        .unwrap();
        let batch = small_batch(&[1.0, 2.0, 3.0], 512, 2);
        let pol = train_risk_free(&batch, &p, &quick_cfg(), 3).unwrap();
        let res = evaluate_stopping(&pol, &batch, &p).unwrap();
        assert_eq!(value_at_zero(&res.path_totals()).mean, 0.0);
        assert!(res.stop.iter().all(|&s| s == 0));
    }

    #[test]
    fn always_exercise_stops_at_first_date() {
        let p = PortfolioSpec::new(
            vec![ContractSpec::new("call", Payoff::Call { asset: 0, strike: 0.0 }, vec![1.0, 2.0, 3.0])],
            false,
            0.0,
        )
        .unwrap();
        let batch = small_batch(&[1.0, 2.0, 3.0], 64, 4);
        let sched = p.schedule(&batch.grid).unwrap();
        let mut net = Network::zeros(NetworkConfig::decision(3, 1, &[2], Activation::Tanh));
        net.bias_mut(1)[0] = 10.0;
        let pol = DecisionPolicy {
            kind: PolicyKind::RiskFree,
            nets: vec![Some(net.clone()), Some(net), None],
            payoff_features: true,
            n_contracts: 1,
            seed: 0,
        };
        let res = evaluate_stopping(&pol, &batch, &p).unwrap();
        assert!(res.stop.iter().all(|&s| s == 1));
        assert!(res.alive_at(&batch, 0, 0, 1));
        assert!(!res.alive_at(&batch, 0, 0, 2));
        assert_eq!(res.end_index(&batch, &sched, 0, 0), 1);
    }

    #[test]
    fn netted_closeout_with_collateral() {
        assert_eq!(netted_closeout(0.0, 35.0, 0.4), (0.0, 1.0));
        assert_eq!(netted_closeout(-10.0, 35.0, 0.4), (-10.0, 1.0));
        assert_eq!(netted_closeout(30.0, 35.0, 0.4), (30.0, 1.0));
        let (v, s) = netted_closeout(45.0, 35.0, 0.4);
        assert!((v - 39.0).abs() < 1e-12 && s == 0.4);
        assert_eq!(netted_closeout(10.0, 0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn alpha_extension_preserves_decisions() {
        let cfg = NetworkConfig::decision(3, 2, &[4, 4], Activation::Tanh);
        let mut net = Network::new(cfg, 9).unwrap();
        net.input_shift = vec![1.0, 2.0, 3.0];
        let ext = extend_with_alpha(&net, 2);
        let a = net.forward_one(&[0.5, -0.3, 0.8]).unwrap();
        let b = ext.forward_one(&[0.5, -0.3, 0.8, 1.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn policy_round_trip_checks_portfolio() {
        let p = PortfolioSpec::paper_options();
        let pol = DecisionPolicy {
            kind: PolicyKind::RiskFree,
            nets: vec![None; 9],
            payoff_features: true,
            n_contracts: 8,
            seed: 1,
        };
        let json = pol.to_json(&p).unwrap();
        assert_eq!(DecisionPolicy::from_json(&json, &p).unwrap(), pol);
        assert!(DecisionPolicy::from_json(&json, &PortfolioSpec::paper_with_future()).is_err());
    }
}
