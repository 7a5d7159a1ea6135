"""Smoke test for the dos_cva_py extension.

Build and install first:

    pip install --no-build-isolation -e crates/python

then run `python3 python/smoke_test.py`.
"""

import json
import math

import dos_cva_py as d


def main():
    market = d.Market.paper()
    assert market.dim == 2

    portfolio = d.Portfolio.paper_with_future()
    assert len(portfolio) == 9
    assert len(portfolio.exercise_dates) == 9
    back = d.Portfolio.from_json(portfolio.to_json())
    assert back.names == portfolio.names

    fut = d.future_value_at(market, 0.0, 100.0)
    assert abs(fut + 10.450368) < 1e-6, fut

    put = json.dumps({"kind": "put", "asset": 0, "strike": 100.0})
    euro = d.european_value(market, put, 3.0)
    berm = d.bermudan_lattice_value(market, put, [n / 3 for n in range(1, 10)], 300)
    assert berm >= euro - 1e-9, (berm, euro)
    print(f"1-d put: european {euro:.4f}, bermudan {berm:.4f}")

    paths = d.Paths.simulate(market, portfolio, 4096, seed=7)
    assert paths.n_paths == 4096
    assert len(paths.times) == 37
    spot = paths.states_at(0)
    assert spot[0] == [100.0, 100.0]

    risky = paths.with_defaults(market, hbar=0.1, b=0.0, seed=11)
    surv = risky.survival_fraction(len(risky.times) - 1)
    assert abs(surv - math.exp(-0.3)) < 0.03, surv

    options = d.Portfolio.paper_options()
    opt_paths = d.Paths.simulate(market, options, 4096, seed=3)
    policy = d.Policy.train_risk_free(opt_paths, options, seed=5, steps=60, warm_steps=20, batch_size=512)
    values = policy.values(opt_paths, options)
    assert len(values) == 8
    assert all(v >= 0.0 for v, _ in values)
    restored = d.Policy.from_json(policy.to_json(options), options)
    assert restored.values(opt_paths, options) == values
    totals = policy.path_totals(opt_paths, options)
    mean, se = d.cva_estimate(totals, [0.5 * t for t in totals])
    assert mean > 0.0 and se > 0.0
    print("risk-free values:", ", ".join(f"{v:.2f}" for v, _ in values))

    try:
        d.Market([100.0], 0.05, [0.1], [-0.2], [[1.0]], 3.0)
    except ValueError as e:
        print("invalid market rejected:", e)
    else:
        raise AssertionError("negative volatility accepted")

    assert "seed" in d.default_config()
    print("smoke test passed")


if __name__ == "__main__":
    main()
