//! Reference prices independent of the neural pipeline: Black–Scholes for
//! payoffs driven by one lognormal factor, binomial lattices for Bermudan
//! options on one or two assets, and exhaustive dynamic programming on tiny
//! discrete trees.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::market::MarketParams;
use crate::portfolio::{future_value, Payoff, PortfolioSpec};

/// A lognormal factor `S` with `dS/S = (r − q)dt + σ dW` and a vanilla payoff on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneFactor {
    pub s0: f64,
    pub q: f64,
    pub sigma: f64,
    pub strike: f64,
    pub is_call: bool,
}

/// Maps a single-asset or geometric-average option onto its lognormal factor.
///
/// The geometric mean `G = (Π Sᵢ)^{1/d}` is lognormal with
/// `σ_G² = σᵀρσ / d²` and dividend yield `q̄ + (mean σᵢ² − σ_G²)/2`.
pub fn reduce_to_one_factor(payoff: &Payoff, params: &MarketParams) -> Result<OneFactor> {
    let d = params.dim();
    let single = |asset: usize, strike: f64, is_call: bool| {
        if asset >= d {
            return Err(Error::invalid("asset", format!("index {asset} out of range")));
        }
        Ok(OneFactor {
            s0: params.s0[asset],
            q: params.q[asset],
            sigma: params.sigma[asset],
            strike,
            is_call,
        })
    };
    let geometric = |strike: f64, is_call: bool| {
        let df = d as f64;
        let mut var = 0.0;
        for i in 0..d {
            for j in 0..d {
                var += params.rho[i][j] * params.sigma[i] * params.sigma[j];
            }
        }
        let var_g = var / (df * df);
        let mean_var = params.sigma.iter().map(|s| s * s).sum::<f64>() / df;
        let q_bar = params.q.iter().sum::<f64>() / df;
        OneFactor {
            s0: (params.s0.iter().map(|s| s.ln()).sum::<f64>() / df).exp(),
            q: q_bar + 0.5 * (mean_var - var_g),
            sigma: var_g.sqrt(),
            strike,
            is_call,
        }
    };
    match *payoff {
        Payoff::Call { asset, strike } => single(asset, strike, true),
        Payoff::Put { asset, strike } => single(asset, strike, false),
        Payoff::GeoCall { strike } => Ok(geometric(strike, true)),
        Payoff::GeoPut { strike } => Ok(geometric(strike, false)),
        _ => Err(Error::NotReducible("a one-factor oracle")),
    }
}

/// Black–Scholes value at time 0 of a European option maturing at `maturity`.
pub fn bs_european(payoff: &Payoff, params: &MarketParams, maturity: f64) -> Result<f64> {
    if maturity <= 0.0 {
        return Err(Error::invalid("maturity", "must be positive"));
    }
    let f = reduce_to_one_factor(payoff, params)?;
    Ok(black_scholes(&f, params.r, maturity))
}

fn black_scholes(f: &OneFactor, r: f64, t: f64) -> f64 {
    let df = (-r * t).exp();
    let fwd = f.s0 * ((r - f.q) * t).exp();
    let sd = f.sigma * t.sqrt();
    if sd < 1e-14 || f.strike <= 0.0 {
        let intrinsic = if f.is_call { fwd - f.strike } else { f.strike - fwd };
        return df * intrinsic.max(0.0);
    }
    let n = Normal::standard();
    let d1 = ((fwd / f.strike).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    if f.is_call {
        df * (fwd * n.cdf(d1) - f.strike * n.cdf(d2))
    } else {
        df * (f.strike * n.cdf(-d2) - fwd * n.cdf(-d1))
    }
}

/// Layout of a lattice valuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub steps_per_year: usize,
    pub payoff: Payoff,
    pub exercise_dates: Vec<f64>,
}

impl LatticeSpec {
    /// Lattice levels of the exercise dates; each date must fall on a level.
    fn exercise_levels(&self) -> Result<Vec<usize>> {
        if self.steps_per_year == 0 || self.exercise_dates.is_empty() {
            return Err(Error::invalid("lattice", "needs steps and at least one exercise date"));
        }
        self.exercise_dates
            .iter()
            .map(|&t| {
                let k = t * self.steps_per_year as f64;
                if t <= 0.0 || (k - k.round()).abs() > 1e-9 {
                    Err(Error::DateNotOnGrid(t))
                } else {
                    Ok(k.round() as usize)
                }
            })
            .collect()
    }
}

/// Bermudan value at time 0 on a Cox–Ross–Rubinstein tree (one-factor
/// payoffs) or a Boyle–Evnine–Gibbs tree (other payoffs on two assets).
pub fn lattice_bermudan(spec: &LatticeSpec, params: &MarketParams) -> Result<f64> {
    params.validate()?;
    let levels = spec.exercise_levels()?;
    match reduce_to_one_factor(&spec.payoff, params) {
        Ok(f) => Ok(crr(&f, params.r, spec.steps_per_year, &levels)),
        Err(Error::NotReducible(_)) if params.dim() == 2 => beg(spec, params, &levels),
        Err(e) => Err(e),
    }
}

fn crr(f: &OneFactor, r: f64, steps_per_year: usize, levels: &[usize]) -> f64 {
    let n = *levels.iter().max().expect("non-empty");
    let dt = 1.0 / steps_per_year as f64;
    let u = (f.sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let growth = ((r - f.q) * dt).exp();
    let p = if f.sigma > 0.0 { (growth - d) / (u - d) } else { 1.0 };
    let disc = (-r * dt).exp();
    let payoff = |s: f64| {
        if f.is_call {
            (s - f.strike).max(0.0)
        } else {
            (f.strike - s).max(0.0)
        }
    };
    // With zero volatility the tree collapses onto the forward.
    let price = |k: usize, i: usize| {
        if f.sigma > 0.0 {
            f.s0 * u.powi(2 * i as i32 - k as i32)
        } else {
            f.s0 * growth.powi(k as i32)
        }
    };
    let mut v: Vec<f64> = (0..=n).map(|i| payoff(price(n, i))).collect();
    for k in (0..n).rev() {
        let exercisable = levels.contains(&k);
        for i in 0..=k {
            let cont = disc * (p * v[i + 1] + (1.0 - p) * v[i]);
            v[i] = if exercisable { cont.max(payoff(price(k, i))) } else { cont };
        }
    }
    v[0]
}

fn beg(spec: &LatticeSpec, params: &MarketParams, levels: &[usize]) -> Result<f64> {
    let n = *levels.iter().max().expect("non-empty");
    let dt = 1.0 / spec.steps_per_year as f64;
    let (s1, s2) = (params.sigma[0], params.sigma[1]);
    if s1 <= 0.0 || s2 <= 0.0 {
        return Err(Error::invalid("sigma", "the two-asset lattice needs positive volatilities"));
    }
    let rho = params.rho[0][1];
    let nu1 = params.r - params.q[0] - 0.5 * s1 * s1;
    let nu2 = params.r - params.q[1] - 0.5 * s2 * s2;
    let h = dt.sqrt();
    let prob = |d1: f64, d2: f64| 0.25 * (1.0 + d1 * d2 * rho + h * (d1 * nu1 / s1 + d2 * nu2 / s2));
    let (puu, pud, pdu, pdd) = (prob(1.0, 1.0), prob(1.0, -1.0), prob(-1.0, 1.0), prob(-1.0, -1.0));
    if [puu, pud, pdu, pdd].iter().any(|&p| p < 0.0) {
        return Err(Error::invalid("steps_per_year", "too few steps for non-negative branch probabilities"));
    }
    let disc = (-params.r * dt).exp();
    let (u1, u2) = ((s1 * h).exp(), (s2 * h).exp());
    let state = |k: usize, i: usize, j: usize| {
        [
            params.s0[0] * u1.powi(2 * i as i32 - k as i32),
            params.s0[1] * u2.powi(2 * j as i32 - k as i32),
        ]
    };
    let w = n + 1;
    let mut v = vec![0.0; w * w];
    for i in 0..=n {
        for j in 0..=n {
            v[i * w + j] = spec.payoff.intrinsic(&state(n, i, j));
        }
    }
    for k in (0..n).rev() {
        let exercisable = levels.contains(&k);
        for i in 0..=k {
            for j in 0..=k {
                let cont = disc
                    * (puu * v[(i + 1) * w + j + 1] + pud * v[(i + 1) * w + j] + pdu * v[i * w + j + 1] + pdd * v[i * w + j]);
                v[i * w + j] = if exercisable {
                    cont.max(spec.payoff.intrinsic(&state(k, i, j)))
                } else {
                    cont
                };
            }
        }
    }
    Ok(v[0])
}

/// A small discrete Markov chain observed at a few exercise dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyTree {
    /// Exercise dates in years.
    pub dates: Vec<f64>,
    pub rate: f64,
    /// `states[k][s]`: market state of node `s` at date `k`.
    pub states: Vec<Vec<Vec<f64>>>,
    /// Distribution over the nodes of the first date.
    pub initial: Vec<f64>,
    /// `transitions[k][s][s']`: probability of moving from node `s` at date
    /// `k` to node `s'` at date `k + 1`.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl TinyTree {
    pub fn validate(&self) -> Result<()> {
        let nd = self.dates.len();
        if nd == 0 || nd > 3 {
            return Err(Error::invalid("tiny tree", "needs between one and three dates"));
        }
        if self.states.len() != nd || self.transitions.len() + 1 != nd {
            return Err(Error::invalid("tiny tree", "one state set per date and one transition per step"));
        }
        if self.states.iter().any(|s| s.is_empty() || s.len() > 9) {
            return Err(Error::invalid("tiny tree", "each date needs one to nine states"));
        }
        let check = |p: &[f64], n: usize| p.len() == n && p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12;
        if !check(&self.initial, self.states[0].len()) {
            return Err(Error::invalid("tiny tree", "initial probabilities must sum to one"));
        }
        for (k, rows) in self.transitions.iter().enumerate() {
            if rows.len() != self.states[k].len() || !rows.iter().all(|p| check(p, self.states[k + 1].len())) {
                return Err(Error::invalid("tiny tree", format!("transition probabilities at step {k} must sum to one")));
            }
        }
        Ok(())
    }

    fn discount(&self, k: usize) -> f64 {
        (-self.rate * self.dates[k]).exp()
    }

    /// Value at time 0 of the stopping rule `exercise(k, s)`, with payoff
    /// `payoff(k, s)` (the rule is forced at the last date if the payoff is positive).
    pub fn policy_value(&self, payoff: impl Fn(usize, usize) -> f64, exercise: impl Fn(usize, usize) -> bool) -> Result<f64> {
        self.validate()?;
        let last = self.dates.len() - 1;
        let mut v: Vec<f64> = (0..self.states[last].len())
            .map(|s| if payoff(last, s) > 0.0 { self.discount(last) * payoff(last, s) } else { 0.0 })
            .collect();
        for k in (0..last).rev() {
            v = (0..self.states[k].len())
                .map(|s| {
                    if exercise(k, s) {
                        self.discount(k) * payoff(k, s)
                    } else {
                        self.transitions[k][s].iter().zip(&v).map(|(p, x)| p * x).sum()
                    }
                })
                .collect();
        }
        Ok(self.initial.iter().zip(&v).map(|(p, x)| p * x).sum())
    }
}

/// Optimal stopping value at time 0 and the optimal decision at every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingSolution {
    pub value: f64,
    /// `exercise[k][s]`; ties go to continuation.
    pub exercise: Vec<Vec<bool>>,
}

/// Exact backward induction on a tiny tree.
pub fn exhaustive_stopping(tree: &TinyTree, payoff: impl Fn(usize, usize) -> f64) -> Result<StoppingSolution> {
    tree.validate()?;
    let last = tree.dates.len() - 1;
    let mut exercise: Vec<Vec<bool>> = tree.states.iter().map(|s| vec![false; s.len()]).collect();
    let mut v: Vec<f64> = (0..tree.states[last].len())
        .map(|s| {
            let g = payoff(last, s);
            exercise[last][s] = g > 0.0;
            tree.discount(last) * g.max(0.0)
        })
        .collect();
    for k in (0..last).rev() {
        v = (0..tree.states[k].len())
            .map(|s| {
                let stop = tree.discount(k) * payoff(k, s);
                let cont: f64 = tree.transitions[k][s].iter().zip(&v).map(|(p, x)| p * x).sum();
                exercise[k][s] = stop > cont;
                stop.max(cont)
            })
            .collect();
    }
    Ok(StoppingSolution {
        value: tree.initial.iter().zip(&v).map(|(p, x)| p * x).sum(),
        exercise,
    })
}

/// Frozen reference values for the preset portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixtures {
    /// Lattice steps per year for one-factor payoffs.
    pub steps_one_factor: usize,
    /// Lattice steps per year for the two-asset tree.
    pub steps_two_asset: usize,
    /// Contract names and lattice values of the eight options.
    pub lattice: Vec<(String, f64)>,
    /// European values of the one-factor options at the final date.
    pub european: Vec<(String, f64)>,
    /// Value of the future at time 0.
    pub future_t0: f64,
}

/// Computes the reference values for the preset options.
pub fn fixtures(params: &MarketParams, steps_one_factor: usize, steps_two_asset: usize) -> Result<Fixtures> {
    let p = PortfolioSpec::paper_options();
    let mut lattice = Vec::new();
    let mut european = Vec::new();
    for c in &p.contracts {
        let steps_per_year = if reduce_to_one_factor(&c.payoff, params).is_ok() {
            steps_one_factor
        } else {
            steps_two_asset
        };
        let spec = LatticeSpec {
            steps_per_year,
            payoff: c.payoff,
            exercise_dates: c.exercise_dates.clone(),
        };
        lattice.push((c.name.clone(), lattice_bermudan(&spec, params)?));
        if let Ok(v) = bs_european(&c.payoff, params, c.maturity()) {
            european.push((c.name.clone(), v));
        }
    }
    Ok(Fixtures {
        steps_one_factor,
        steps_two_asset,
        lattice,
        european,
        future_t0: future_value(0.0, params.s0[0], params),
    })
}

impl Fixtures {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.lattice.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn european_value(&self, name: &str) -> Option<f64> {
        self.european.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}
