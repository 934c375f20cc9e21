//! Covariance decay against an independent spectral oracle: for a
//! reversible chain the lag-n stationary covariance is bounded by
//! lambda*^n times the product of the standard deviations, where
//! lambda* is the second-largest absolute eigenvalue. The chain side
//! comes from the diagnostics pipeline; the eigenvalues come from a
//! dense symmetric solver on the conjugated transition matrix.

use couplab_core::chain::{FiniteChain, InvariantSolver};
use couplab_core::diagnostics::mixing_estimate;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random reversible chain from symmetric positive weights:
/// P(i,j) = w(i,j) / deg(i), invariant law deg(i) / total.
fn reversible_chain(k: usize, rng: &mut ChaCha8Rng) -> (FiniteChain, Vec<f64>) {
    let mut w = vec![vec![0.0f64; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = rng.gen::<f64>() + 0.05;
            w[i][j] = v;
            w[j][i] = v;
        }
    }
    let deg: Vec<f64> = w.iter().map(|row| row.iter().sum()).collect();
    let total: f64 = deg.iter().sum();
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| w[i][j] / deg[i]).collect())
        .collect();
    let pi: Vec<f64> = deg.iter().map(|d| d / total).collect();
    (FiniteChain::from_matrix(rows).unwrap(), pi)
}

/// Second-largest absolute eigenvalue of a reversible transition matrix,
/// computed from the symmetric conjugate D^{1/2} P D^{-1/2}.
fn slem(chain: &FiniteChain, pi: &[f64]) -> f64 {
    let k = chain.len();
    let s = DMatrix::from_fn(k, k, |i, j| {
        chain.prob(i, j) * (pi[i] / pi[j]).sqrt()
    });
    // symmetrize defensively against rounding before the symmetric solver
    let sym = (&s + s.transpose()) * 0.5;
    let mut eigs: Vec<f64> = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&e| e.abs())
        .collect();
    eigs.sort_by(|a, b| b.total_cmp(a));
    assert!((eigs[0] - 1.0).abs() < 1e-8, "top eigenvalue was {}", eigs[0]);
    eigs[1]
}

#[test]
fn covariance_decay_respects_the_spectral_envelope() {
    let mut rng = ChaCha8Rng::seed_from_u64(811);
    for trial in 0..10 {
        let k = 3 + (trial % 5);
        let (chain, pi) = reversible_chain(k, &mut rng);
        let inv = chain.invariant_measure(InvariantSolver::Nullspace).unwrap();
        for (computed, oracle) in inv.measure.weights().iter().zip(&pi) {
            assert!(
                (computed - oracle).abs() < 1e-10,
                "trial {trial}: invariant law disagrees with the weight oracle"
            );
        }

        let f: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let g: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mean = |h: &[f64]| -> f64 { h.iter().zip(&pi).map(|(v, p)| v * p).sum() };
        let sd = |h: &[f64]| -> f64 {
            let m = mean(h);
            h.iter()
                .zip(&pi)
                .map(|(v, p)| p * (v - m) * (v - m))
                .sum::<f64>()
                .sqrt()
        };
        let envelope0 = sd(&f) * sd(&g);
        let rate = slem(&chain, &pi);

        let lags: Vec<usize> = (0..=12).collect();
        let report = mixing_estimate(&chain, &inv.measure, &f, &g, &lags, 1e-12, 2.0).unwrap();
        let points = &report.series[0].points;
        assert_eq!(points.len(), lags.len());
        for &(lag, cov) in points {
            let bound = envelope0 * rate.powf(lag) + 1e-10;
            assert!(
                cov.abs() <= bound,
                "trial {trial}: |cov_{lag}| = {} above spectral bound {bound} (rate {rate})",
                cov.abs()
            );
        }
    }
}

#[test]
fn permutation_chain_saturates_the_envelope() {
    // the two-state flip has rate 1; its covariance must not decay
    let chain = FiniteChain::from_matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let pi = vec![0.5, 0.5];
    assert!((slem(&chain, &pi) - 1.0).abs() < 1e-12);
    let inv = chain.invariant_measure(InvariantSolver::Nullspace).unwrap();
    let f = vec![-1.0, 1.0];
    let report =
        mixing_estimate(&chain, &inv.measure, &f, &f, &[0, 1, 2, 3, 4], 1e-9, 0.5).unwrap();
    for &(lag, cov) in &report.series[0].points {
        let expected = if (lag as usize) % 2 == 0 { 1.0 } else { -1.0 };
        assert!((cov - expected).abs() < 1e-12);
    }
}
