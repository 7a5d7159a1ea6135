//! The frozen reference values stay reproducible and mutually consistent.

use dos_cva::market::{simulate_paths, MarketParams, TimeGrid};
use dos_cva::oracle::{bs_european, lattice_bermudan, reduce_to_one_factor, Fixtures, LatticeSpec};
use dos_cva::portfolio::{future_value, PortfolioSpec};

fn frozen() -> Fixtures {
    Fixtures::from_json(include_str!("fixtures/oracle.json")).unwrap()
}

#[test]
fn one_factor_fixtures_recompute_exactly() {
    let fx = frozen();
    let params = MarketParams::paper();
    for c in PortfolioSpec::paper_options().contracts {
        if reduce_to_one_factor(&c.payoff, &params).is_err() {
            continue;
        }
        let spec = LatticeSpec {
            steps_per_year: fx.steps_one_factor,
            payoff: c.payoff,
            exercise_dates: c.exercise_dates.clone(),
        };
        let v = lattice_bermudan(&spec, &params).unwrap();
        let stored = fx.value(&c.name).unwrap();
        assert!((v - stored).abs() < 1e-9, "{}: {v} vs frozen {stored}", c.name);
        let euro = bs_european(&c.payoff, &params, c.maturity()).unwrap();
        assert!((euro - fx.european_value(&c.name).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn one_factor_lattice_has_converged() {
    let fx = frozen();
    let params = MarketParams::paper();
    for c in PortfolioSpec::paper_options().contracts {
        if reduce_to_one_factor(&c.payoff, &params).is_err() {
            continue;
        }
        let spec = LatticeSpec {
            steps_per_year: fx.steps_one_factor / 2,
            payoff: c.payoff,
            exercise_dates: c.exercise_dates.clone(),
        };
        let half = lattice_bermudan(&spec, &params).unwrap();
        assert!((half - fx.value(&c.name).unwrap()).abs() < 1e-3, "{}: step halving moved the value to {half}", c.name);
    }
}

#[test]
fn two_asset_fixtures_agree_with_coarser_lattice() {
    let fx = frozen();
    let params = MarketParams::paper();
    for c in PortfolioSpec::paper_options().contracts {
        if reduce_to_one_factor(&c.payoff, &params).is_ok() {
            continue;
        }
        let spec = LatticeSpec {
            steps_per_year: 150,
            payoff: c.payoff,
            exercise_dates: c.exercise_dates.clone(),
        };
        let coarse = lattice_bermudan(&spec, &params).unwrap();
        let stored = fx.value(&c.name).unwrap();
        assert!((coarse - stored).abs() < 0.02, "{}: {coarse} vs frozen {stored}", c.name);
    }
}

#[test]
fn max_call_reference_matches_published_value() {
    assert!((frozen().value("max-call").unwrap() - 13.902).abs() < 5e-3);
}

#[test]
fn future_value_is_frozen() {
    let fx = frozen();
    let v = future_value(0.0, 100.0, &MarketParams::paper());
    assert!((v - fx.future_t0).abs() < 1e-12);
    assert!((v + 10.450368).abs() < 1e-6);
}

#[test]
fn bermudan_values_dominate_european_values() {
    let fx = frozen();
    for (name, euro) in &fx.european {
        let berm = fx.value(name).unwrap();
        assert!(berm >= *euro - 1e-3, "{name}: bermudan {berm} < european {euro}");
    }
}

#[test]
fn monte_carlo_geometric_call_matches_closed_form() {
    let params = MarketParams::paper();
    let grid = TimeGrid::from_times(vec![0.0, 3.0], vec![1]).unwrap();
    let n = 200_000;
    let batch = simulate_paths(&params, &grid, n, 99).unwrap();
    let disc = (-params.r * 3.0).exp();
    let pay: Vec<f64> = batch
        .states_at(1)
        .outer_iter()
        .map(|x| disc * ((x[0] * x[1]).sqrt() - 100.0).max(0.0))
        .collect();
    let mean = pay.iter().sum::<f64>() / n as f64;
    let se = (pay.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0) / n as f64).sqrt();
    let euro = frozen().european_value("geo-call").unwrap();
    assert!((mean - euro).abs() <= 3.0 * se, "MC {mean} ± {se} vs closed form {euro}");
}
