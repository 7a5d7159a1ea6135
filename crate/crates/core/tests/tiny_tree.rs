//! Learned exercise policies against exhaustive search on small trees.
//!
//! The training paths enumerate every path of the tree, each repeated in
//! proportion to its probability. The sample mean over that set is the exact
//! tree expectation, so a policy that reproduces the optimal decisions has
//! exactly the exhaustive value.

use dos_cva::market::{PathBatch, TimeGrid};
use dos_cva::nn::{Activation, TrainSchedule};
use dos_cva::oracle::{exhaustive_stopping, TinyTree};
use dos_cva::policy::{evaluate_stopping, train_risk_free, value_at_zero, PolicyConfig};
use dos_cva::portfolio::{ContractSpec, Payoff, PortfolioSpec};
use ndarray::Array3;

/// Denominator shared by every path probability in the test trees.
const RESOLUTION: f64 = 64.0;

fn paths_from_tree(tree: &TinyTree, spot: f64) -> PathBatch {
    let nd = tree.dates.len();
    let mut sequences: Vec<(Vec<usize>, f64)> = tree.initial.iter().enumerate().map(|(s, &p)| (vec![s], p)).collect();
    for k in 0..nd - 1 {
        sequences = sequences
            .into_iter()
            .flat_map(|(seq, p)| {
                let from = *seq.last().unwrap();
                tree.transitions[k][from].iter().enumerate().filter(|(_, &q)| q > 0.0).map(move |(to, &q)| {
                    let mut next = seq.clone();
                    next.push(to);
                    (next, p * q)
                })
            })
            .collect();
    }
    let mut rows = Vec::new();
    for (seq, p) in sequences {
        let copies = p * RESOLUTION;
        assert!((copies - copies.round()).abs() < 1e-9, "probability {p} is not a multiple of 1/{RESOLUTION}");
        for _ in 0..copies.round() as usize {
            rows.push(seq.clone());
        }
    }
    let mut times = vec![0.0];
    times.extend_from_slice(&tree.dates);
    let grid = TimeGrid::from_times(times, (1..=nd).collect()).unwrap();
    let states = Array3::from_shape_fn((nd + 1, rows.len(), 1), |(i, m, _)| {
        if i == 0 {
            spot
        } else {
            tree.states[i - 1][rows[m][i - 1]][0]
        }
    });
    PathBatch::from_states(grid, tree.rate, states, 0).unwrap()
}

fn uniform(n_from: usize, n_to: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / n_to as f64; n_to]; n_from]
}

fn check_tree(tree: TinyTree, payoff: Payoff) {
    let portfolio = PortfolioSpec::new(vec![ContractSpec::new("tree", payoff, tree.dates.clone())], false, 0.0).unwrap();
    let g = |k: usize, s: usize| payoff.intrinsic(&tree.states[k][s]);
    let exact = exhaustive_stopping(&tree, g).unwrap();

    let batch = paths_from_tree(&tree, 100.0);
    let n = batch.n_paths();
    let cfg = PolicyConfig {
        hidden: vec![8, 8],
        activation: Activation::Tanh,
        payoff_features: true,
        schedule: TrainSchedule::new(n, 1500),
        warm_schedule: TrainSchedule::new(n, 1500),
    };
    let policy = train_risk_free(&batch, &portfolio, &cfg, 11).unwrap();
    let result = evaluate_stopping(&policy, &batch, &portfolio).unwrap();
    let learned = value_at_zero(&result.cashflows.column(0).to_vec()).mean;
    assert!((learned - exact.value).abs() < 1e-6, "learned {learned} vs exhaustive {}", exact.value);

    let sched = portfolio.schedule(&batch.grid).unwrap();
    let learned_rule = |k: usize, s: usize| {
        let x = ndarray::arr2(&[[tree.states[k][s][0]]]);
        let pay = ndarray::arr2(&[[g(k, s)]]);
        policy.decide(k + 1, &sched, x.view(), &pay, None).unwrap()[[0, 0]]
    };
    let by_policy = tree.policy_value(g, learned_rule).unwrap();
    assert!((by_policy - exact.value).abs() < 1e-6, "tree value of learned rule {by_policy} vs {}", exact.value);
}

#[test]
fn three_date_put_with_independent_moves() {
    let tree = TinyTree {
        dates: vec![1.0, 2.0, 3.0],
        rate: 0.05,
        states: vec![vec![vec![70.0], vec![90.0], vec![110.0], vec![130.0]]; 3],
        initial: vec![0.25; 4],
        transitions: vec![uniform(4, 4), uniform(4, 4)],
    };
    check_tree(tree, Payoff::Put { asset: 0, strike: 100.0 });
}

#[test]
fn three_date_call_with_persistent_moves() {
    let stay = vec![
        vec![0.5, 0.25, 0.25, 0.0],
        vec![0.25, 0.5, 0.25, 0.0],
        vec![0.0, 0.25, 0.5, 0.25],
        vec![0.0, 0.25, 0.25, 0.5],
    ];
    let tree = TinyTree {
        dates: vec![0.5, 1.0, 1.5],
        rate: 0.02,
        states: vec![
            vec![vec![85.0], vec![100.0], vec![115.0], vec![135.0]],
            vec![vec![80.0], vec![100.0], vec![120.0], vec![140.0]],
            vec![vec![75.0], vec![100.0], vec![125.0], vec![150.0]],
        ],
        initial: vec![0.25; 4],
        transitions: vec![stay.clone(), stay],
    };
    check_tree(tree, Payoff::Call { asset: 0, strike: 100.0 });
}

#[test]
fn two_date_hand_computed_put() {
    let tree = TinyTree {
        dates: vec![1.0, 2.0],
        rate: 0.0,
        states: vec![vec![vec![80.0], vec![120.0]], vec![vec![60.0], vec![100.0], vec![140.0]]],
        initial: vec![0.5, 0.5],
        transitions: vec![vec![vec![0.25, 0.5, 0.25], vec![0.0, 0.5, 0.5]]],
    };
    // Continuing from 80 is worth 0.25·40 = 10 < 20, so the optimal rule
    // exercises at 80 and the value is 0.5·20 + 0.5·0 = 10.
    let exact = exhaustive_stopping(&tree, |k, s| (100.0 - tree.states[k][s][0]).max(0.0)).unwrap();
    assert!((exact.value - 10.0).abs() < 1e-12);
    check_tree(tree, Payoff::Put { asset: 0, strike: 100.0 });
}
