//! Acceptance gate: ten checks covering solver exactness, the structural
//! laws of the closeness quantities, exact desk-scale reproductions of the
//! catalog instances, the split constructions, the delay benchmark, and
//! byte-level reproducibility. Each test prints one PASS line; a failure
//! panics with the measured numbers.

use couplab_core::chain::{FiniteChain, InvariantSolver};
use couplab_core::coupling::{
    split_into_bounded_coupling, split_into_coupling, split_leak, FiniteJointLaw, PairSampler,
};
use couplab_core::diagnostics::{
    big_gamma, closeness_positivity_check, equicontinuity_probe, gamma_table_from_measure,
    mixing_estimate, weak_in_prob_estimate, EquicontinuityThresholds, PositivityThresholds,
    Verdict,
};
use couplab_core::measure::{total_variation, DiscreteMeasure};
use couplab_core::metric::Metric;
use couplab_core::ot::{minimal_distance, reference};
use couplab_core::sdde::{girsanov_diagnostics, integrate_pair, SegmentState, SfdeSpec};
use couplab_core::seeding::derive_seed;
use couplab_core::testbed::{build_example, CoupledFlipRotation, ExampleParams};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

fn random_weights(k: usize, rng: &mut ChaCha8Rng, allow_zero: bool) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..k)
            .map(|_| {
                if allow_zero && rng.gen::<f64>() < 0.3 {
                    0.0
                } else {
                    rng.gen::<f64>() + 1e-3
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 1e-6 {
            return raw.into_iter().map(|v| v / total).collect();
        }
    }
}

fn random_chain(k: usize, rng: &mut ChaCha8Rng) -> FiniteChain {
    let rows: Vec<Vec<f64>> = (0..k).map(|_| random_weights(k, rng, false)).collect();
    FiniteChain::from_matrix(rows).unwrap()
}

#[test]
fn acceptance_01_transport_matches_vertex_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9101);
    for trial in 0..500 {
        let m = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=4);
        let mu = DiscreteMeasure::new((0..m).collect(), random_weights(m, &mut rng, false)).unwrap();
        let nu = DiscreteMeasure::new((0..n).collect(), random_weights(n, &mut rng, false)).unwrap();
        let cost: Vec<f64> = (0..m * n).map(|_| rng.gen::<f64>()).collect();
        let plan = minimal_distance(&mu, &nu, |&x: &usize, &y: &usize| cost[x * n + y]).unwrap();
        let oracle =
            reference::min_cost_by_vertex_enumeration(mu.weights(), nu.weights(), &cost).unwrap();
        assert!(
            (plan.value - oracle).abs() <= 1e-10,
            "trial {trial}: simplex {} vs vertex enumeration {oracle}",
            plan.value
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!("acceptance 01 (transport vs vertex enumeration, 500 cases): PASS in {elapsed:?}");
}

#[test]
fn acceptance_02_discrete_cost_reproduces_total_variation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9202);
    for trial in 0..200 {
        let k = rng.gen_range(2..=6);
        let mu = DiscreteMeasure::new((0..k).collect(), random_weights(k, &mut rng, true)).unwrap();
        let nu = DiscreteMeasure::new((0..k).collect(), random_weights(k, &mut rng, true)).unwrap();
        let plan = minimal_distance(&mu, &nu, |x: &usize, y: &usize| {
            if x == y {
                0.0
            } else {
                1.0
            }
        })
        .unwrap();
        let l1: f64 = (0..k)
            .map(|i| (mu.weight_of(&i) - nu.weight_of(&i)).abs())
            .sum();
        assert!(
            (2.0 * plan.value - l1).abs() <= 1e-10,
            "trial {trial}: twice min cost {} vs l1 gap {l1}",
            2.0 * plan.value
        );
        let tv = total_variation(&mu, &nu);
        assert!(
            (plan.value - tv).abs() <= 1e-10,
            "trial {trial}: min cost {} vs set-supremum form {tv}",
            plan.value
        );
    }
    println!("acceptance 02 (coupling identity for the discrete cost, 200 cases): PASS");
}

#[test]
fn acceptance_03_averaged_closeness_never_decreases() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9303);
    let eps_grid = [0.05, 0.1, 0.3, 0.7, 0.9];
    let mut sizes: Vec<usize> = (0..44).map(|t| 2 + (t % 7)).collect();
    sizes.extend([12, 16, 20, 20, 16, 12]);
    assert_eq!(sizes.len(), 50);
    for (trial, &k) in sizes.iter().enumerate() {
        let chain = random_chain(k, &mut rng);
        let inv = chain.invariant_measure(InvariantSolver::Nullspace).unwrap();
        for &eps in &eps_grid {
            let mut prev = f64::NEG_INFINITY;
            for n in 0..=30 {
                let avg = big_gamma(&chain, &Metric::EuclideanTruncated, &inv.measure, n, eps)
                    .unwrap()
                    .value;
                assert!(
                    avg >= prev - 1e-9,
                    "trial {trial} (k={k}): average dropped {prev} -> {avg} at n={n}, eps={eps}"
                );
                prev = avg;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    println!("acceptance 03 (one-step averaging law, 50 random chains): PASS in {elapsed:?}");
}

#[test]
fn acceptance_04_aperiodic_five_state_chain_converges_end_to_end() {
    let inst = build_example("aperiodic-5", &ExampleParams::default()).unwrap();
    let chain = inst.finite.as_ref().unwrap();
    let inv = chain.invariant_measure(InvariantSolver::Nullspace).unwrap();

    let table = gamma_table_from_measure(
        chain,
        &inst.metric.d,
        &inv.measure,
        &[1, 2, 5, 10, 20, 40, 60],
        &[0.1, 0.3],
    )
    .unwrap();
    let positivity = closeness_positivity_check(&table, &PositivityThresholds::default());
    assert_eq!(
        positivity.verdict,
        Verdict::Supports,
        "{}",
        positivity.summary()
    );

    let weak = weak_in_prob_estimate(
        chain,
        &inst.metric.rho,
        &inv.measure,
        &[10, 20, 40, 60],
        0.1,
        0.01,
    )
    .unwrap();
    assert_eq!(weak.verdict, Verdict::Supports, "{}", weak.summary());
    let far_mass = &weak.series[0].points;
    let at_60 = far_mass
        .iter()
        .find(|&&(n, _)| n == 60.0)
        .expect("horizon 60 present")
        .1;
    assert!(at_60 < 0.01, "far-state mass {at_60} at horizon 60");
    println!("acceptance 04 (five-state positive instance end-to-end): PASS");
}

#[test]
fn acceptance_05_period_two_chain_reproduced_exactly() {
    let inst = build_example("5.2", &ExampleParams::default()).unwrap();
    let chain = inst.finite.as_ref().unwrap();
    let inv = chain.invariant_measure(InvariantSolver::Nullspace).unwrap();

    for n in 0..=12 {
        for &eps in &[0.3, 0.9] {
            let avg = big_gamma(chain, &inst.metric.d, &inv.measure, n, eps)
                .unwrap()
                .value;
            assert!(
                (avg - 0.5).abs() <= 1e-9,
                "averaged closeness {avg} at n={n}, eps={eps}"
            );
        }
    }

    let weak = weak_in_prob_estimate(
        chain,
        &inst.metric.rho,
        &inv.measure,
        &[1, 3, 5, 7],
        0.4,
        0.01,
    )
    .unwrap();
    for &(n, mass) in &weak.series[0].points {
        assert!(
            (mass - 1.0).abs() <= 1e-9,
            "far-state mass {mass} at odd horizon {n}"
        );
    }

    let obs: Vec<f64> = (0..chain.len()).map(|i| chain.point(i)[0]).collect();
    let lags: Vec<usize> = (0..=10).collect();
    let mixing = mixing_estimate(chain, &inv.measure, &obs, &obs, &lags, 1e-9, 0.2).unwrap();
    assert_eq!(mixing.verdict, Verdict::Refutes, "{}", mixing.summary());
    for &(lag, cov) in &mixing.series[0].points {
        let expected = if (lag as i64) % 2 == 0 { 0.25 } else { -0.25 };
        assert!(
            (cov - expected).abs() <= 1e-9,
            "covariance {cov} at lag {lag}"
        );
    }
    println!("acceptance 05 (period-two chain: exact averages, far mass, covariance): PASS");
}

#[test]
fn acceptance_06_climb_and_reset_is_not_law_equicontinuous() {
    let inst = build_example("5.4", &ExampleParams::default()).unwrap();
    let chain = inst.finite.as_ref().unwrap();
    let deep = chain.len() - 1;

    let n_grid: Vec<usize> = (0..=chain.len()).collect();
    let probe = equicontinuity_probe(
        chain,
        &inst.metric.rho,
        deep,
        &[2e-6],
        &n_grid,
        &EquicontinuityThresholds::default(),
    )
    .unwrap();
    assert_eq!(probe.verdict, Verdict::Refutes, "{}", probe.summary());
    let (witness_gap, witness_sup) = *probe.series[0].points.last().unwrap();
    assert!(
        witness_sup >= 0.5 - 1e-9,
        "witness pair at distance {witness_gap} only reaches sup distance {witness_sup}"
    );

    // exact absorption: every law collapses to the floor atom in finitely
    // many steps, so the same laws that refute equicontinuity also reach
    // their limit exactly
    let floor = DiscreteMeasure::dirac(0usize);
    for x in 0..chain.len() {
        let law = chain.n_step_law(x, chain.len()).unwrap().trim_zeros();
        let tv = total_variation(&law, &floor);
        assert!(tv == 0.0, "state {x}: distance to the floor law {tv}");
    }
    println!("acceptance 06 (climb-and-reset refutes equicontinuity, absorbs exactly): PASS");
}

#[test]
fn acceptance_07_coupled_rotation_meets_in_probability() {
    let start = Instant::now();
    let params = ExampleParams::default();
    let pair = CoupledFlipRotation::with_defaults(&params, (0, 1.0), (1, 1.0)).unwrap();
    let metric = Metric::TorusProductFlip;
    let horizon = 10_000;
    let reps = 500;
    let mut mismatched = 0usize;
    let mut close = 0usize;
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(9707, &[rep as u64]));
        let traj = pair.sample_pair(horizon, &mut rng).unwrap();
        let x = traj.x.last().unwrap();
        let y = traj.y.last().unwrap();
        if x[1] != y[1] {
            mismatched += 1;
        }
        if metric.eval(x, y) <= 0.05 {
            close += 1;
        }
    }
    let mismatch_rate = mismatched as f64 / reps as f64;
    let close_rate = close as f64 / reps as f64;
    assert!(
        mismatch_rate <= 0.05,
        "sign mismatch rate {mismatch_rate} at horizon {horizon}"
    );
    assert!(
        close_rate >= 0.9,
        "closeness rate {close_rate} at threshold 0.05"
    );
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "acceptance 07 (coupled rotation: mismatch {mismatch_rate}, close {close_rate}): PASS in {elapsed:?}"
    );
}

#[test]
fn acceptance_08_split_constructions_meet_their_guarantees() {
    let mut rng = ChaCha8Rng::seed_from_u64(9808);
    for trial in 0..200 {
        let m = rng.gen_range(2..=5);
        let n = rng.gen_range(2..=5);
        let p = DiscreteMeasure::new(
            (0..m).collect::<Vec<usize>>(),
            random_weights(m, &mut rng, false),
        )
        .unwrap();
        let q = DiscreteMeasure::new(
            (0..n).collect::<Vec<usize>>(),
            random_weights(n, &mut rng, false),
        )
        .unwrap();
        let mut w: Vec<f64> = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                let tilt = (1.5 * (rng.gen::<f64>() * 2.0 - 1.0)).exp();
                w.push(p.weights()[i] * q.weights()[j] * tilt);
            }
        }
        let total: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= total;
        }
        let xi = FiniteJointLaw::from_weights(&p, &q, w).unwrap();

        // conditioning event: heaviest atoms until they carry half the mass
        let mut order: Vec<usize> = (0..m * n).collect();
        order.sort_by(|&a, &b| xi.weights[b].total_cmp(&xi.weights[a]));
        let mut mask = vec![false; m * n];
        let mut alpha = 0.0;
        for &idx in &order {
            if alpha >= 0.5 {
                break;
            }
            mask[idx] = true;
            alpha += xi.weights[idx];
        }

        let mut gamma = 0.5;
        while split_leak(&xi, gamma) > alpha / 2.0 {
            gamma /= 2.0;
            assert!(gamma > 1e-12, "trial {trial}: no workable density cap");
        }

        let zeta = split_into_coupling(&xi, gamma).unwrap();
        let marginal_err = zeta.marginal_gap_to_refs();
        assert!(
            marginal_err <= 1e-9,
            "trial {trial}: marginal error {marginal_err}"
        );
        let zeta_mass: f64 = zeta
            .weights
            .iter()
            .zip(&mask)
            .filter(|(_, &keep)| keep)
            .map(|(&v, _)| v)
            .sum();
        assert!(
            zeta_mass >= gamma * alpha / 2.0 - 1e-12,
            "trial {trial}: event kept {zeta_mass}, needed {}",
            gamma * alpha / 2.0
        );

        let (bounded, cert) = split_into_bounded_coupling(&xi, gamma, alpha).unwrap();
        let cap = 1.0 / gamma + 1e-9;
        assert!(
            cert.sup_density_row <= cap && cert.sup_density_col <= cap,
            "trial {trial}: densities ({}, {}) above cap {cap}",
            cert.sup_density_row,
            cert.sup_density_col
        );
        let bounded_mass: f64 = bounded
            .weights
            .iter()
            .zip(&mask)
            .filter(|(_, &keep)| keep)
            .map(|(&v, _)| v)
            .sum();
        assert!(
            bounded_mass >= alpha - alpha / 2.0 - 1e-9,
            "trial {trial}: regularized event mass {bounded_mass} lost more than half of {alpha}"
        );
    }
    println!("acceptance 08 (split constructions, 200 random generalized couplings): PASS");
}

#[test]
fn acceptance_09_linear_delay_benchmark_hits_closed_forms() {
    let start = Instant::now();
    let spec = SfdeSpec::linear(1, 0.0, 1.0).unwrap();
    let dt = 1e-3f64;
    let k = (1.0 / dt).round() as usize;
    let f0 = SegmentState::constant(&[1.0], k).unwrap();
    let g0 = SegmentState::constant(&[0.0], k).unwrap();

    for (li, &lambda) in [1.0f64, 5.0, 10.0].iter().enumerate() {
        let t_max = 20.0 / lambda;
        let path = integrate_pair(&spec, &f0, &g0, lambda, t_max, dt, 4242 + li as u64).unwrap();

        // identical noise cancels in the gap, leaving a deterministic
        // geometric decay whose log-slope must match the steering rate
        let pts: Vec<(f64, f64)> = path
            .times
            .iter()
            .enumerate()
            .filter(|&(kk, _)| path.gap(kk) > 0.0)
            .map(|(kk, &t)| (t, path.gap(kk).ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let slope = sxy / sxx;
        assert!(
            (slope + lambda).abs() <= 0.02 * lambda,
            "lambda {lambda}: fitted slope {slope}"
        );

        let control = *path.int_beta_sq.last().unwrap();
        let target = lambda * 0.5;
        assert!(
            (control - target).abs() <= 0.05 * target,
            "lambda {lambda}: control integral {control} vs {target}"
        );

        let summary = girsanov_diagnostics(
            &spec,
            &f0,
            &g0,
            lambda,
            t_max,
            dt,
            200,
            derive_seed(9909, &[li as u64]),
            1e6,
        )
        .unwrap();
        assert_eq!(
            summary.verdict,
            Verdict::Supports,
            "lambda {lambda}: {:?}",
            summary.notes
        );
        assert!(
            (summary.density_mean - 1.0).abs() <= 3.0 * summary.density_half_width,
            "lambda {lambda}: weight mean {} with half width {}",
            summary.density_mean,
            summary.density_half_width
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(180), "took {elapsed:?}");
    println!("acceptance 09 (linear delay benchmark, lambda 1/5/10): PASS in {elapsed:?}");
}

#[test]
fn acceptance_10_repeated_runs_are_byte_identical() {
    let bin = std::path::PathBuf::from(env!("CARGO_BIN_EXE_couplab"));
    let tmp = tempfile::tempdir().unwrap();

    let configs = [
        (
            "mc.toml",
            r#"
version = 1
kind = "conv2"
seed = 1010

[instance]
anchor = "aperiodic-5"

[grids]
horizons = [1, 5, 10, 25]
epsilons = [0.2]

[run]
reps = 50
"#,
        ),
        (
            "sdde.toml",
            r#"
version = 1
kind = "sdde"
seed = 2020

[grids]
lambdas = [2.0]
dts = [0.01]

[run]
reps = 40

[sdde]
system = "linear"
t_max = 2.0

[sdde.params]
rate = 0.0
sigma = 1.0
"#,
        ),
    ];

    for (name, body) in configs {
        let cfg = tmp.path().join(name);
        std::fs::write(&cfg, body).unwrap();
        let mut snapshots: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for tag in ["first", "second"] {
            let out_dir = tmp.path().join(format!("{name}.{tag}"));
            let status = std::process::Command::new(&bin)
                .args([
                    "run",
                    "--config",
                    cfg.to_str().unwrap(),
                    "--out",
                    out_dir.to_str().unwrap(),
                ])
                .output()
                .unwrap();
            assert_eq!(
                status.status.code(),
                Some(0),
                "{name}: {}",
                String::from_utf8_lossy(&status.stderr)
            );
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out_dir)
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read(e.path()).unwrap(),
                    )
                })
                .collect();
            files.sort();
            assert!(
                files.iter().any(|(f, _)| f.ends_with(".csv")),
                "{name}: no CSV artifact written"
            );
            snapshots.push(files);
        }
        assert_eq!(
            snapshots[0], snapshots[1],
            "{name}: repeated run changed an artifact"
        );
    }
    println!("acceptance 10 (byte-identical artifacts on repeat runs): PASS");
}
