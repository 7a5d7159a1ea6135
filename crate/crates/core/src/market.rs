//! Market model: correlated multi-asset GBM, the wrong-way-risk default
//! intensity and first-passage default times.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Constant-coefficient Black–Scholes market with `d` dividend-paying assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Initial prices.
    pub s0: Vec<f64>,
    /// Risk-free short rate, continuously compounded.
    pub r: f64,
    /// Continuous dividend yields.
    pub q: Vec<f64>,
    /// Volatilities.
    pub sigma: Vec<f64>,
    /// Correlation matrix of the driving Brownian motions.
    pub rho: Vec<Vec<f64>>,
    /// Horizon `T` in years.
    pub horizon: f64,
}

impl MarketParams {
    /// Two uncorrelated assets at 100 with `q = 0.1`, `σ = 0.2`, `r = 0.05`, `T = 3`.
    pub fn paper() -> Self {
        MarketParams {
            s0: vec![100.0, 100.0],
            r: 0.05,
            q: vec![0.1, 0.1],
            sigma: vec![0.2, 0.2],
            rho: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            horizon: 3.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.s0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("s0", "at least one asset required"));
        }
        for (name, len) in [("q", self.q.len()), ("sigma", self.sigma.len()), ("rho", self.rho.len())] {
            if len != d {
                return Err(Error::invalid(name, format!("expected {d} entries, got {len}")));
            }
        }
        if self.s0.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("s0", "initial prices must be positive"));
        }
        if self.sigma.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("sigma", "volatilities must be non-negative"));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::invalid("horizon", "T must be positive"));
        }
        for (i, row) in self.rho.iter().enumerate() {
            if row.len() != d {
                return Err(Error::invalid("rho", format!("row {i} has {} entries", row.len())));
            }
            if (row[i] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("rho", "diagonal must be 1"));
            }
            for (j, &v) in row.iter().enumerate() {
                if (v - self.rho[j][i]).abs() > 1e-12 {
                    return Err(Error::invalid("rho", "matrix must be symmetric"));
                }
            }
        }
        cholesky(&self.rho).map(|_| ())
    }

    /// Volatility of the aggregated intensity driver, `(1/d)·(Σσᵢ²)^{1/2}`.
    pub fn sigma_tilde(&self) -> f64 {
        self.sigma.iter().map(|s| s * s).sum::<f64>().sqrt() / self.dim() as f64
    }
}

/// Counterparty default model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultParams {
    /// Credit spread `h̄`.
    pub hbar: f64,
    /// Wrong-way-risk coupling `b`.
    pub b: f64,
    /// Recovery rate in `[0, 1)`.
    pub recovery: f64,
    /// Default-monitoring sub-steps per exercise interval.
    pub monitor_steps: usize,
}

impl DefaultParams {
    pub fn new(hbar: f64, b: f64, recovery: f64) -> Self {
        DefaultParams {
            hbar,
            b,
            recovery,
            monitor_steps: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // R = 1 is accepted as a degenerate full-recovery case.
        if !(0.0..=1.0).contains(&self.recovery) {
            return Err(Error::invalid("recovery", "must lie in [0, 1)"));
        }
        if self.monitor_steps == 0 {
            return Err(Error::invalid("monitor_steps", "must be at least 1"));
        }
        if !self.hbar.is_finite() || !self.b.is_finite() {
            return Err(Error::invalid("hbar/b", "must be finite"));
        }
        Ok(())
    }
}

/// Simulation grid: `0 = t_0 < t_1 < … < t_K` with the exercise dates
/// `T_1 < … < T_N` embedded at known indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    exercise_index: Vec<usize>,
}

impl TimeGrid {
    /// Splits each exercise interval `(T_{n−1}, T_n]` into `monitor_steps`
    /// equal sub-steps (with `T_0 = 0`).
    pub fn new(exercise_dates: &[f64], monitor_steps: usize) -> Result<Self> {
        if exercise_dates.is_empty() {
            return Err(Error::invalid("exercise_dates", "at least one date required"));
        }
        if monitor_steps == 0 {
            return Err(Error::invalid("monitor_steps", "must be at least 1"));
        }
        let mut times = vec![0.0];
        let mut exercise_index = Vec::with_capacity(exercise_dates.len());
        let mut prev = 0.0;
        for &date in exercise_dates {
            if !(date > prev) {
                return Err(Error::invalid("exercise_dates", "must be strictly increasing and positive"));
            }
            let h = (date - prev) / monitor_steps as f64;
            for k in 1..monitor_steps {
                times.push(prev + k as f64 * h);
            }
            times.push(date);
            exercise_index.push(times.len() - 1);
            prev = date;
        }
        Ok(TimeGrid {
            times,
            exercise_index,
        })
    }

    /// Arbitrary grid; `exercise_index` must point into `times`.
    pub fn from_times(times: Vec<f64>, exercise_index: Vec<usize>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::invalid("grid", "must start at 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid", "must be strictly increasing"));
        }
        if exercise_index.is_empty()
            || exercise_index.windows(2).any(|w| w[1] <= w[0])
            || exercise_index[0] == 0
            || *exercise_index.last().unwrap() >= times.len()
        {
            return Err(Error::invalid("exercise_index", "must be increasing indices in 1..len"));
        }
        Ok(TimeGrid {
            times,
            exercise_index,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of exercise dates `N`.
    pub fn n_dates(&self) -> usize {
        self.exercise_index.len()
    }

    /// Grid index of exercise date `T_n`, `n = 1..=N`; `n = 0` maps to `t = 0`.
    pub fn date_index(&self, n: usize) -> usize {
        if n == 0 {
            0
        } else {
            self.exercise_index[n - 1]
        }
    }

    /// Exercise date `T_n` in years (`T_0 = 0`).
    pub fn date(&self, n: usize) -> f64 {
        self.times[self.date_index(n)]
    }

    pub fn exercise_dates(&self) -> Vec<f64> {
        self.exercise_index.iter().map(|&i| self.times[i]).collect()
    }

    /// Exercise interval `n` with `t_i ∈ (T_{n−1}, T_n]`; `t_0 = 0` belongs to interval 1.
    pub fn interval_of(&self, i: usize) -> usize {
        if i == 0 {
            return 1;
        }
        self.exercise_index.iter().position(|&e| e >= i).map(|p| p + 1).unwrap_or(self.n_dates() + 1)
    }

    /// Grid indices lying in interval `n`, i.e. `(T_{n−1}, T_n]` (plus `t = 0` for `n = 1`).
    pub fn interval_indices(&self, n: usize) -> std::ops::RangeInclusive<usize> {
        let start = if n == 1 { 0 } else { self.date_index(n - 1) + 1 };
        start..=self.date_index(n)
    }
}

/// Simulated market scenarios on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub grid: TimeGrid,
    /// Short rate used for discounting along the batch.
    pub rate: f64,
    /// Asset prices, shape `(n_times, n_paths, d)`.
    pub states: Array3<f64>,
    /// Aggregated standard Brownian motion `W̃`, shape `(n_times, n_paths)`.
    pub brownian_tilde: Array2<f64>,
    /// Grid index of the default time, `None` if no default on the grid.
    pub default_index: Vec<Option<usize>>,
    pub path_seed: u64,
    pub default_seed: Option<u64>,
}

impl PathBatch {
    /// Wraps externally generated states (e.g. from a test tree) without a
    /// Brownian driver or defaults.
    pub fn from_states(grid: TimeGrid, rate: f64, states: Array3<f64>, seed: u64) -> Result<Self> {
        let (nt, np, _) = states.dim();
        if nt != grid.len() {
            return Err(Error::ShapeMismatch {
                context: "PathBatch::from_states",
                expected: grid.len(),
                actual: nt,
            });
        }
        Ok(PathBatch {
            grid,
            rate,
            states,
            brownian_tilde: Array2::zeros((nt, np)),
            default_index: vec![None; np],
            path_seed: seed,
            default_seed: None,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.states.dim().1
    }

    pub fn dim(&self) -> usize {
        self.states.dim().2
    }

    /// States of all paths at grid index `i`, shape `(n_paths, d)`.
    pub fn states_at(&self, i: usize) -> ArrayView2<'_, f64> {
        self.states.index_axis(ndarray::Axis(0), i)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.grid.times[i]
    }

    /// `D_{0,t}` for grid index `i`.
    pub fn discount_to_zero(&self, i: usize) -> f64 {
        (-self.rate * self.grid.times[i]).exp()
    }

    /// Default time of path `m` in years, if any.
    pub fn default_time(&self, m: usize) -> Option<f64> {
        self.default_index[m].map(|i| self.grid.times[i])
    }

    /// True if path `m` has not defaulted at or before grid index `i`.
    pub fn survives(&self, m: usize, i: usize) -> bool {
        self.default_index[m].is_none_or(|d| d > i)
    }

    pub fn survival_fraction(&self, i: usize) -> f64 {
        let alive = (0..self.n_paths()).filter(|&m| self.survives(m, i)).count();
        alive as f64 / self.n_paths() as f64
    }

    const MAGIC: &'static [u8; 8] = b"DOSPATH\0";
    const VERSION: u32 = 1;

    /// Versioned little-endian binary dump.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let (nt, np, d) = self.states.dim();
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        for v in [d as u64, self.grid.n_dates() as u64, np as u64, nt as u64, self.path_seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.default_seed.unwrap_or(u64::MAX).to_le_bytes())?;
        w.write_all(&u8::from(self.default_seed.is_some()).to_le_bytes())?;
        w.write_all(&self.rate.to_le_bytes())?;
        for &t in &self.grid.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for &e in &self.grid.exercise_index {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for &x in self.states.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        for &x in self.brownian_tilde.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        for di in &self.default_index {
            w.write_all(&di.map(|i| i as u64).unwrap_or(u64::MAX).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not a path batch dump".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != Self::VERSION {
            return Err(Error::Format(format!("unsupported path batch version {version}")));
        }
        let read_u64 = |r: &mut dyn Read| -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let d = read_u64(&mut r)? as usize;
        let n_dates = read_u64(&mut r)? as usize;
        let np = read_u64(&mut r)? as usize;
        let nt = read_u64(&mut r)? as usize;
        let path_seed = read_u64(&mut r)?;
        let default_seed_raw = read_u64(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let default_seed = (flag[0] == 1).then_some(default_seed_raw);
        let rate = f64::from_bits(read_u64(&mut r)?);
        let mut times = Vec::with_capacity(nt);
        for _ in 0..nt {
            times.push(f64::from_bits(read_u64(&mut r)?));
        }
        let mut exercise_index = Vec::with_capacity(n_dates);
        for _ in 0..n_dates {
            exercise_index.push(read_u64(&mut r)? as usize);
        }
        let grid = TimeGrid::from_times(times, exercise_index)?;
        let mut states = Vec::with_capacity(nt * np * d);
        for _ in 0..nt * np * d {
            states.push(f64::from_bits(read_u64(&mut r)?));
        }
        let mut wt = Vec::with_capacity(nt * np);
        for _ in 0..nt * np {
            wt.push(f64::from_bits(read_u64(&mut r)?));
        }
        let mut default_index = Vec::with_capacity(np);
        for _ in 0..np {
            let v = read_u64(&mut r)?;
            default_index.push((v != u64::MAX).then_some(v as usize));
        }
        Ok(PathBatch {
            grid,
            rate,
            states: Array3::from_shape_vec((nt, np, d), states).map_err(|e| Error::Format(e.to_string()))?,
            brownian_tilde: Array2::from_shape_vec((nt, np), wt).map_err(|e| Error::Format(e.to_string()))?,
            default_index,
            path_seed,
            default_seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Lower Cholesky factor of a symmetric PSD matrix. Zero pivots (singular but
/// PSD matrices) are allowed; negative ones are rejected.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let p = a[i][i] - s;
                if p < -1e-10 {
                    return Err(Error::NotPositiveSemiDefinite { pivot: i, value: p });
                }
                l[i][i] = p.max(0.0).sqrt();
            } else if l[j][j] > 1e-14 {
                l[i][j] = (a[i][j] - s) / l[j][j];
            } else if (a[i][j] - s).abs() > 1e-8 {
                return Err(Error::NotPositiveSemiDefinite { pivot: j, value: 0.0 });
            }
        }
    }
    Ok(l)
}

/// Exact lognormal sampling of the GBM at every grid time.
///
/// Path `m` draws from stream `m` of `seed`, so it does not depend on
/// `n_paths`.
pub fn simulate_paths(params: &MarketParams, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathBatch> {
    params.validate()?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths", "must be at least 1"));
    }
    let d = params.dim();
    let chol = cholesky(&params.rho)?;
    let nt = grid.len();
    let times = grid.times();
    let drift: Vec<f64> = (0..d)
        .map(|i| params.r - params.q[i] - 0.5 * params.sigma[i] * params.sigma[i])
        .collect();
    // Σσ_iσ_jρ_ij: variance rate of Σσ_i W_i.
    let agg_var: f64 = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| params.sigma[i] * params.sigma[j] * params.rho[i][j])
        .sum();
    let agg_scale = if agg_var > 0.0 { 1.0 / agg_var.sqrt() } else { 0.0 };

    let mut states = Array3::<f64>::zeros((nt, n_paths, d));
    let mut wtilde = Array2::<f64>::zeros((nt, n_paths));
    let mut w = vec![0.0; d];
    let mut z = vec![0.0; d];
    for m in 0..n_paths {
        let mut rng = stream_rng(seed, m as u64);
        w.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..d {
            states[[0, m, i]] = params.s0[i];
        }
        for k in 1..nt {
            let dt = times[k] - times[k - 1];
            let sq = dt.sqrt();
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..d {
                let inc: f64 = (0..=i).map(|j| chol[i][j] * z[j]).sum();
                w[i] += sq * inc;
            }
            let t = times[k];
            let mut agg = 0.0;
            for i in 0..d {
                states[[k, m, i]] = params.s0[i] * (drift[i] * t + params.sigma[i] * w[i]).exp();
                agg += params.sigma[i] * w[i];
            }
            wtilde[[k, m]] = agg * agg_scale;
        }
    }
    Ok(PathBatch {
        grid: grid.clone(),
        rate: params.r,
        states,
        brownian_tilde: wtilde,
        default_index: vec![None; n_paths],
        path_seed: seed,
        default_seed: None,
    })
}

/// Default intensity `h̃_t = h̄ + ½σ̃²t²b² + bσ̃W̃_t` on the batch grid,
/// shape `(n_times, n_paths)`. Negative values are kept as they are.
pub fn intensity_path(batch: &PathBatch, params: &MarketParams, dp: &DefaultParams) -> Array2<f64> {
    let st = params.sigma_tilde();
    let mut h = Array2::zeros(batch.brownian_tilde.dim());
    for (i, &t) in batch.grid.times().iter().enumerate() {
        let det = dp.hbar + 0.5 * st * st * t * t * dp.b * dp.b;
        for m in 0..batch.n_paths() {
            h[[i, m]] = det + dp.b * st * batch.brownian_tilde[[i, m]];
        }
    }
    h
}

/// Trapezoidal running integral `∫₀^{t_i} h̃`, shape `(n_times, n_paths)`.
pub fn integrated_intensity(batch: &PathBatch, params: &MarketParams, dp: &DefaultParams) -> Array2<f64> {
    let h = intensity_path(batch, params, dp);
    let times = batch.grid.times();
    let mut lam = Array2::zeros(h.dim());
    for i in 1..times.len() {
        let dt = times[i] - times[i - 1];
        for m in 0..batch.n_paths() {
            lam[[i, m]] = lam[[i - 1, m]] + 0.5 * dt * (h[[i - 1, m]] + h[[i, m]]);
        }
    }
    lam
}

/// First-passage defaults against an `Exp(1)` threshold `E = −ln U`.
pub fn sample_defaults(batch: &PathBatch, params: &MarketParams, dp: &DefaultParams, seed: u64) -> Result<PathBatch> {
    dp.validate()?;
    let lam = integrated_intensity(batch, params, dp);
    let nt = batch.grid.len();
    let default_index = (0..batch.n_paths())
        .map(|m| {
            let mut rng = stream_rng(seed, m as u64);
            // 1 − U lies in (0, 1] so the log stays finite.
            let u: f64 = 1.0 - rng.random::<f64>();
            let threshold = -u.ln();
            (1..nt).find(|&i| lam[[i, m]] >= threshold)
        })
        .collect();
    Ok(PathBatch {
        default_index,
        default_seed: Some(seed),
        ..batch.clone()
    })
}

/// Discount factor `D_{t,u} = e^{−r(u−t)}`.
pub fn discount(r: f64, t: f64, u: f64) -> Result<f64> {
    if t > u {
        return Err(Error::invalid("discount", format!("t = {t} exceeds u = {u}")));
    }
    Ok((-r * (u - t)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn paper_grid(k: usize) -> TimeGrid {
        let dates: Vec<f64> = (1..=9).map(|n| n as f64 / 3.0).collect();
        TimeGrid::new(&dates, k).unwrap()
    }

    #[test]
    fn grid_embeds_exercise_dates() {
        let g = paper_grid(4);
        assert_eq!(g.len(), 37);
        assert_eq!(g.n_dates(), 9);
        assert_eq!(g.date_index(9), 36);
        assert_relative_eq!(g.date(3), 1.0, epsilon = 1e-12);
        assert_eq!(g.interval_of(0), 1);
        assert_eq!(g.interval_of(4), 1);
        assert_eq!(g.interval_of(5), 2);
        assert_eq!(g.interval_indices(1), 0..=4);
        assert_eq!(g.interval_indices(2), 5..=8);
    }

    #[test]
    fn zero_volatility_is_deterministic_forward() {
        let mut p = MarketParams::paper();
        p.sigma = vec![0.0, 0.0];
        let g = paper_grid(1);
        let b = simulate_paths(&p, &g, 5, 1).unwrap();
        for m in 0..5 {
            assert_relative_eq!(b.states[[9, m, 0]], 100.0 * (-0.15f64).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_non_psd_correlation() {
        let mut p = MarketParams::paper();
        p.s0 = vec![100.0; 3];
        p.q = vec![0.1; 3];
        p.sigma = vec![0.2; 3];
        p.rho = vec![vec![1.0, 0.9, -0.9], vec![0.9, 1.0, 0.9], vec![-0.9, 0.9, 1.0]];
        let err = simulate_paths(&p, &paper_grid(1), 2, 0).unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemiDefinite { .. }), "{err}");
    }

    #[test]
    fn path_is_independent_of_batch_size() {
        let p = MarketParams::paper();
        let g = paper_grid(2);
        let small = simulate_paths(&p, &g, 3, 42).unwrap();
        let large = simulate_paths(&p, &g, 50, 42).unwrap();
        for i in 0..g.len() {
            for m in 0..3 {
                assert_eq!(small.states[[i, m, 1]], large.states[[i, m, 1]]);
            }
        }
    }

    #[test]
    fn intensity_edge_cases() {
        let p = MarketParams::paper();
        assert_relative_eq!(p.sigma_tilde(), 0.1 * 2f64.sqrt(), max_relative = 1e-12);
        let b = simulate_paths(&p, &paper_grid(2), 20, 3).unwrap();
        let flat = intensity_path(&b, &p, &DefaultParams::new(0.1, 0.0, 0.0));
        assert!(flat.iter().all(|&h| h == 0.1));
        let wwr = intensity_path(&b, &p, &DefaultParams::new(0.1, 0.5, 0.0));
        assert!(wwr.row(0).iter().all(|&h| h == 0.1));
    }

    #[test]
    fn no_defaults_without_intensity() {
        let p = MarketParams::paper();
        let b = simulate_paths(&p, &paper_grid(4), 500, 3).unwrap();
        let b = sample_defaults(&b, &p, &DefaultParams::new(0.0, 0.0, 0.0), 9).unwrap();
        assert!(b.default_index.iter().all(Option::is_none));
        assert_eq!(b.survival_fraction(36), 1.0);
    }

    #[test]
    fn discount_cases() {
        assert_eq!(discount(0.05, 0.0, 0.0).unwrap(), 1.0);
        assert_relative_eq!(discount(0.05, 0.0, 3.0).unwrap(), 0.860708, epsilon = 1e-6);
        assert_eq!(discount(0.0, 1.0, 2.0).unwrap(), 1.0);
        assert!(discount(0.05, 2.0, 1.0).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let p = MarketParams::paper();
        let b = simulate_paths(&p, &paper_grid(2), 7, 11).unwrap();
        let b = sample_defaults(&b, &p, &DefaultParams::new(0.5, 0.2, 0.0), 5).unwrap();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        let back = PathBatch::read_from(buf.as_slice()).unwrap();
        assert_eq!(b, back);
    }
}
