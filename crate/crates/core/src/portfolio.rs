//! Contract descriptions: payoffs, exercise schedules, the portfolio date
//! union, and the netting/collateral set-up.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{MarketParams, TimeGrid};

/// Tolerance used when matching dates given in years.
pub const DATE_TOL: f64 = 1e-9;

/// Closed set of payoff shapes. Strikes are in currency units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payoff {
    /// `(max xᵢ − K)⁺`
    MaxCall { strike: f64 },
    /// `(K − max xᵢ)⁺`
    MaxPut { strike: f64 },
    /// `((Π xᵢ)^{1/d} − K)⁺`
    GeoCall { strike: f64 },
    /// `(K − (Π xᵢ)^{1/d})⁺`
    GeoPut { strike: f64 },
    /// `(mean xᵢ − K)⁺`
    ArithCall { strike: f64 },
    /// `(K − mean xᵢ)⁺`
    ArithPut { strike: f64 },
    /// `(x_asset − K)⁺`
    Call { asset: usize, strike: f64 },
    /// `(K − x_asset)⁺`
    Put { asset: usize, strike: f64 },
    /// `scale·(K − x_asset)`, settled once at maturity whatever its sign.
    Forward { asset: usize, strike: f64, scale: f64 },
}

impl Payoff {
    /// The payoff formula, ignoring the exercise schedule.
    pub fn intrinsic(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let max = || x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let geo = || (x.iter().map(|v| v.ln()).sum::<f64>() / d).exp();
        let mean = || x.iter().sum::<f64>() / d;
        match *self {
            Payoff::MaxCall { strike } => (max() - strike).max(0.0),
            Payoff::MaxPut { strike } => (strike - max()).max(0.0),
            Payoff::GeoCall { strike } => (geo() - strike).max(0.0),
            Payoff::GeoPut { strike } => (strike - geo()).max(0.0),
            Payoff::ArithCall { strike } => (mean() - strike).max(0.0),
            Payoff::ArithPut { strike } => (strike - mean()).max(0.0),
            Payoff::Call { asset, strike } => (x[asset] - strike).max(0.0),
            Payoff::Put { asset, strike } => (strike - x[asset]).max(0.0),
            Payoff::Forward { asset, strike, scale } => scale * (strike - x[asset]),
        }
    }

    /// Forwards must settle at maturity; options are exercised only when in the money.
    pub fn is_obligation(&self) -> bool {
        matches!(self, Payoff::Forward { .. })
    }

    /// Highest asset index the payoff reads, if it reads a single asset.
    fn asset(&self) -> Option<usize> {
        match *self {
            Payoff::Call { asset, .. } | Payoff::Put { asset, .. } | Payoff::Forward { asset, .. } => Some(asset),
            _ => None,
        }
    }

    /// Short kebab-case name of the payoff kind.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Payoff::MaxCall { .. } => "max-call",
            Payoff::MaxPut { .. } => "max-put",
            Payoff::GeoCall { .. } => "geo-call",
            Payoff::GeoPut { .. } => "geo-put",
            Payoff::ArithCall { .. } => "arith-call",
            Payoff::ArithPut { .. } => "arith-put",
            Payoff::Call { .. } => "call",
            Payoff::Put { .. } => "put",
            Payoff::Forward { .. } => "forward",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub name: String,
    pub payoff: Payoff,
    /// Exercise dates in years, sorted, inside `(0, T]`.
    pub exercise_dates: Vec<f64>,
}

impl ContractSpec {
    pub fn new(name: impl Into<String>, payoff: Payoff, exercise_dates: Vec<f64>) -> Self {
        ContractSpec {
            name: name.into(),
            payoff,
            exercise_dates,
        }
    }

    pub fn maturity(&self) -> f64 {
        *self.exercise_dates.last().expect("validated contract has dates")
    }

    pub fn has_date(&self, t: f64) -> bool {
        self.exercise_dates.iter().any(|&e| (e - t).abs() < DATE_TOL)
    }
}

/// Payoff of contract `c` at time `t`, zero after maturity. Forwards pay
/// only at their maturity.
pub fn payoff_eval(c: &ContractSpec, t: f64, x: &[f64]) -> f64 {
    let maturity = c.maturity();
    if t > maturity + DATE_TOL {
        return 0.0;
    }
    if c.payoff.is_obligation() && (t - maturity).abs() >= DATE_TOL {
        return 0.0;
    }
    c.payoff.intrinsic(x)
}

/// Payoffs `g_j(t, x)` for every row of `states`, shape `(n_paths, J)`.
pub fn payoffs_at(p: &PortfolioSpec, t: f64, states: ArrayView2<f64>) -> Array2<f64> {
    let mut g = Array2::zeros((states.nrows(), p.len()));
    for (m, x) in states.outer_iter().enumerate() {
        let x = x.to_vec();
        for (j, c) in p.contracts.iter().enumerate() {
            g[[m, j]] = payoff_eval(c, t, &x);
        }
    }
    g
}

/// Payoff formulas ignoring the schedule, shape `(n_paths, J)`.
pub fn intrinsic_at(p: &PortfolioSpec, states: ArrayView2<f64>) -> Array2<f64> {
    let mut g = Array2::zeros((states.nrows(), p.len()));
    for (m, x) in states.outer_iter().enumerate() {
        let x = x.to_vec();
        for (j, c) in p.contracts.iter().enumerate() {
            g[[m, j]] = c.payoff.intrinsic(&x);
        }
    }
    g
}

/// Closed-form value of `scale·(K − x₁)` paid at `T`:
/// `scale·(K e^{−r(T−t)} − x e^{−q(T−t)})`.
pub fn forward_value(t: f64, x: f64, strike: f64, scale: f64, asset: usize, params: &MarketParams) -> f64 {
    let tau = params.horizon - t;
    scale * (strike * (-params.r * tau).exp() - x * (-params.q[asset] * tau).exp())
}

/// Value of the reference future `2·(80 − x₁)` at `t`.
pub fn future_value(t: f64, x1: f64, params: &MarketParams) -> f64 {
    forward_value(t, x1, 80.0, 2.0, 0, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub contracts: Vec<ContractSpec>,
    /// Whether a netting agreement covers the whole portfolio.
    pub netting: bool,
    /// Collateral posted against the netted close-out (currency).
    pub collateral: f64,
    /// Sorted union of all exercise dates.
    pub union_dates: Vec<f64>,
}

impl PortfolioSpec {
    pub fn new(contracts: Vec<ContractSpec>, netting: bool, collateral: f64) -> Result<Self> {
        let mut errors = Vec::new();
        for c in &contracts {
            if c.exercise_dates.is_empty() {
                errors.push(format!("contract {}: no exercise dates", c.name));
            }
            if c.exercise_dates.windows(2).any(|w| !(w[1] > w[0])) {
                errors.push(format!("contract {}: exercise dates not strictly increasing", c.name));
            }
            if c.payoff.is_obligation() && c.exercise_dates.len() != 1 {
                errors.push(format!("contract {}: a forward settles on exactly one date", c.name));
            }
            if c.exercise_dates.iter().any(|&t| !(t > 0.0)) {
                errors.push(format!("contract {}: exercise dates must be positive", c.name));
            }
        }
        if !(collateral >= 0.0) {
            errors.push("collateral must be non-negative".into());
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let union_dates = union_of(&contracts);
        Ok(PortfolioSpec {
            contracts,
            netting,
            collateral,
            union_dates,
        })
    }

    /// Checks horizon and asset indices against a market.
    pub fn validate_against(&self, params: &MarketParams) -> Result<()> {
        let mut errors = Vec::new();
        for c in &self.contracts {
            if c.maturity() > params.horizon + DATE_TOL {
                errors.push(format!("contract {}: maturity beyond horizon {}", c.name, params.horizon));
            }
            if let Some(a) = c.payoff.asset() {
                if a >= params.dim() {
                    errors.push(format!("contract {}: asset index {a} out of range", c.name));
                }
            }
        }
        if union_of(&self.contracts) != self.union_dates {
            errors.push("union_dates does not match the contract schedules".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }

    /// The eight two-asset options with strike 100, exercisable every four months up to 3 years.
    pub fn paper_options() -> Self {
        let dates: Vec<f64> = (1..=9).map(|n| n as f64 / 3.0).collect();
        let k = 100.0;
        let payoffs = [
            ("max-call", Payoff::MaxCall { strike: k }),
            ("max-put", Payoff::MaxPut { strike: k }),
            ("geo-call", Payoff::GeoCall { strike: k }),
            ("geo-put", Payoff::GeoPut { strike: k }),
            ("arith-call", Payoff::ArithCall { strike: k }),
            ("arith-put", Payoff::ArithPut { strike: k }),
            ("1d-call", Payoff::Call { asset: 0, strike: k }),
            ("1d-put", Payoff::Put { asset: 0, strike: k }),
        ];
        let contracts = payoffs
            .into_iter()
            .map(|(name, p)| ContractSpec::new(name, p, dates.clone()))
            .collect();
        PortfolioSpec::new(contracts, false, 0.0).expect("preset is valid")
    }

    /// The eight options plus the future `2·(80 − x₁)` at `T = 3`, netted with collateral 35.
    pub fn paper_with_future() -> Self {
        let mut contracts = Self::paper_options().contracts;
        contracts.push(ContractSpec::new(
            "future",
            Payoff::Forward {
                asset: 0,
                strike: 80.0,
                scale: 2.0,
            },
            vec![3.0],
        ));
        PortfolioSpec::new(contracts, true, 35.0).expect("preset is valid")
    }

    /// Per-date exercise layout on `grid`, whose exercise dates must equal `union_dates`.
    pub fn schedule(&self, grid: &TimeGrid) -> Result<Schedule> {
        let dates = grid.exercise_dates();
        if dates.len() != self.union_dates.len()
            || dates.iter().zip(&self.union_dates).any(|(a, b)| (a - b).abs() > DATE_TOL)
        {
            if let Some(&bad) = self.union_dates.iter().find(|&&u| !dates.iter().any(|&d| (d - u).abs() < DATE_TOL)) {
                return Err(Error::DateNotOnGrid(bad));
            }
            return Err(Error::invalid("grid", "exercise dates differ from the portfolio date union"));
        }
        let n = dates.len();
        let mut active = vec![vec![false; self.len()]; n];
        let mut maturity = vec![0; self.len()];
        let mut first = vec![0; self.len()];
        for (j, c) in self.contracts.iter().enumerate() {
            for (k, &t) in dates.iter().enumerate() {
                if c.has_date(t) {
                    active[k][j] = true;
                    if first[j] == 0 {
                        first[j] = k + 1;
                    }
                    maturity[j] = k + 1;
                }
            }
        }
        Ok(Schedule {
            active,
            maturity,
            first,
            obligation: self.contracts.iter().map(|c| c.payoff.is_obligation()).collect(),
        })
    }
}

fn union_of(contracts: &[ContractSpec]) -> Vec<f64> {
    let mut all: Vec<f64> = contracts.iter().flat_map(|c| c.exercise_dates.iter().cloned()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup_by(|a, b| (*a - *b).abs() < DATE_TOL);
    all
}

/// Indices of the contracts exercisable at `t`.
pub fn active_contracts(p: &PortfolioSpec, t: f64) -> Result<Vec<usize>> {
    if !p.union_dates.iter().any(|&u| (u - t).abs() < DATE_TOL) {
        if p.is_empty() {
            return Ok(Vec::new());
        }
        return Err(Error::DateNotOnGrid(t));
    }
    Ok(p.contracts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.has_date(t))
        .map(|(j, _)| j)
        .collect())
}

/// Exercise layout of a portfolio on the date indices `1..=N` of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// `active[n-1][j]`: contract `j` may be exercised at `T_n`.
    pub active: Vec<Vec<bool>>,
    /// Date index of each contract's last exercise date.
    pub maturity: Vec<usize>,
    /// Date index of each contract's first exercise date.
    pub first: Vec<usize>,
    pub obligation: Vec<bool>,
}

impl Schedule {
    pub fn n_dates(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, n: usize, j: usize) -> bool {
        self.active[n - 1][j]
    }

    /// Contract `j` needs a learned decision at `T_n`.
    pub fn is_learnable(&self, n: usize, j: usize) -> bool {
        self.is_active(n, j) && n < self.maturity[j]
    }

    /// Any contract needs a learned decision at `T_n`.
    pub fn date_learnable(&self, n: usize) -> bool {
        (0..self.maturity.len()).any(|j| self.is_learnable(n, j))
    }

    /// Hard-coded decision at a contract's maturity.
    pub fn terminal_decision(&self, j: usize, payoff: f64) -> bool {
        self.obligation[j] || payoff > 0.0
    }
}

/// Alive flags of the contracts along one path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExerciseState {
    alpha: Vec<bool>,
}

impl ExerciseState {
    pub fn all_alive(j: usize) -> Self {
        ExerciseState { alpha: vec![true; j] }
    }

    pub fn alpha(&self) -> &[bool] {
        &self.alpha
    }

    pub fn is_alive(&self, j: usize) -> bool {
        self.alpha[j]
    }

    /// Marks contract `j` as exercised; flags never come back.
    pub fn exercise(&mut self, j: usize) {
        self.alpha[j] = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table_payoffs() {
        let p = PortfolioSpec::paper_options();
        let x = [110.0, 95.0];
        assert_eq!(payoff_eval(&p.contracts[0], 1.0, &x), 10.0);
        assert_eq!(payoff_eval(&p.contracts[3], 1.0, &[100.0, 100.0]), 0.0);
        assert_eq!(payoff_eval(&p.contracts[5], 1.0, &x), 0.0);
        assert_eq!(payoff_eval(&p.contracts[7], 1.0, &[90.0, 120.0]), 10.0);
        assert_eq!(payoff_eval(&p.contracts[0], 3.5, &x), 0.0);
    }

    #[test]
    fn future_payoff_and_value() {
        let p = PortfolioSpec::paper_with_future();
        let fut = &p.contracts[8];
        assert_eq!(payoff_eval(fut, 3.0, &[70.0, 1.0]), 20.0);
        assert_eq!(payoff_eval(fut, 2.0, &[70.0, 1.0]), 0.0);
        assert!(payoff_eval(fut, 3.0, &[120.0, 1.0]) < 0.0);
        let m = MarketParams::paper();
        assert_relative_eq!(future_value(3.0, 80.0, &m), 0.0, epsilon = 1e-12);
        assert_relative_eq!(future_value(3.0, 70.0, &m), 20.0, epsilon = 1e-12);
        assert_relative_eq!(future_value(0.0, 100.0, &m), -10.450368, epsilon = 1e-6);
    }

    #[test]
    fn active_sets() {
        let p = PortfolioSpec::paper_with_future();
        assert_eq!(active_contracts(&p, 1.0 / 3.0).unwrap(), (0..8).collect::<Vec<_>>());
        assert_eq!(active_contracts(&p, 3.0).unwrap(), (0..9).collect::<Vec<_>>());
        assert!(matches!(active_contracts(&p, 0.5), Err(Error::DateNotOnGrid(_))));
        let empty = PortfolioSpec::new(vec![], false, 0.0).unwrap();
        assert!(active_contracts(&empty, 1.0).unwrap().is_empty());
    }

    #[test]
    fn schedule_on_grid() {
        let p = PortfolioSpec::paper_with_future();
        let grid = TimeGrid::new(&p.union_dates, 4).unwrap();
        let s = p.schedule(&grid).unwrap();
        assert_eq!(s.maturity[8], 9);
        assert_eq!(s.first[8], 9);
        assert!(!s.is_learnable(9, 0));
        assert!(s.is_learnable(8, 0));
        assert!(!s.is_learnable(8, 8));
        assert!(s.terminal_decision(8, -5.0));
        assert!(!s.terminal_decision(0, 0.0));
    }

    #[test]
    fn unknown_payoff_is_rejected() {
        let bad = r#"{ "kind": "digital", "strike": 1.0 }"#;
        assert!(serde_json::from_str::<Payoff>(bad).is_err());
    }

    #[test]
    fn exercise_state_is_monotone() {
        let mut s = ExerciseState::all_alive(3);
        s.exercise(1);
        assert_eq!(s.alpha(), &[true, false, true]);
    }
}
