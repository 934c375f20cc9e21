//! Ready-made chain instances with documented expected behavior and
//! machine-checkable assertions.
//!
//! Each instance carries an exact finite realization, a sampler realization,
//! or both, together with the metric its diagnostics should run under.
//! Assertions are cheap, deterministic checks of the documented behavior;
//! the heavier statistical claims live in the diagnostics and the
//! integration suites.

use crate::chain::{FiniteChain, InvariantSolver, SamplerChain};
use crate::coupling::{PairSampler, WeightedPairTrajectory};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::metric::{Metric, MetricPair};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Tunable construction parameters; every field has a documented default.
#[derive(Debug, Clone)]
pub struct ExampleParams {
    /// Finite torus modulus for the doubling map (odd; 2 should generate).
    pub modulus: u64,
    /// Sampler-layer denominator for the doubling map.
    pub denominator: u64,
    /// Length of the vanishing-sequence truncation.
    pub sequence_len: usize,
    /// Number of halving levels in the climb-and-reset chain.
    pub depth: usize,
    /// Upper truncation of the birth-death chain.
    pub truncation: usize,
    /// Finite rotation grid size (odd).
    pub grid: u64,
    /// Finite rotation step (coprime with `grid`).
    pub rotation: u64,
    /// Sampler-layer rotation grid size (odd).
    pub sampler_grid: u64,
    /// Sampler-layer rotation step.
    pub sampler_rotation: u64,
    /// Switching function scale: p(z) = min(1, scale * z^power).
    pub switch_scale: f64,
    /// Switching function exponent.
    pub switch_power: f64,
}

impl Default for ExampleParams {
    fn default() -> Self {
        Self {
            modulus: 509,
            denominator: 3 << 20,
            sequence_len: 100,
            depth: 20,
            truncation: 50,
            grid: 233,
            rotation: 144,
            sampler_grid: 4181,
            sampler_rotation: 2584,
            switch_scale: 1024.0,
            switch_power: 4.0,
        }
    }
}

/// One named, machine-checkable claim about an instance.
pub struct InstanceAssertion {
    pub label: String,
    check: Box<dyn Fn() -> Result<()> + Send + Sync>,
}

impl InstanceAssertion {
    fn new(label: impl Into<String>, check: impl Fn() -> Result<()> + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            check: Box::new(check),
        }
    }

    pub fn run(&self) -> Result<()> {
        (self.check)()
    }
}

impl std::fmt::Debug for InstanceAssertion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InstanceAssertion").field("label", &self.label).finish()
    }
}

/// A catalog instance: chains, metric, and attached assertions.
#[derive(Debug)]
pub struct ExampleInstance {
    pub anchor: &'static str,
    pub name: &'static str,
    pub summary: String,
    pub finite: Option<FiniteChain>,
    pub sampler: Option<SamplerChain>,
    pub metric: MetricPair,
    pub assertions: Vec<InstanceAssertion>,
}

impl ExampleInstance {
    /// Runs every attached assertion, returning each label with its outcome.
    pub fn run_assertions(&self) -> Vec<(String, Result<()>)> {
        self.assertions
            .iter()
            .map(|a| (a.label.clone(), a.run()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CatalogEntry {
    pub anchor: &'static str,
    pub name: &'static str,
    pub summary: &'static str,
}

pub fn catalog() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            anchor: "5.1",
            name: "doubling-torus",
            summary: "deterministic doubling on a torus grid: two invariant laws, \
                      orbit occupation near the frozen point stays at twice the band width",
        },
        CatalogEntry {
            anchor: "5.2",
            name: "two-state-flip",
            summary: "period-2 permutation chain: fair invariant law, averaged occupation \
                      converges while one-step laws oscillate forever",
        },
        CatalogEntry {
            anchor: "5.3",
            name: "vanishing-sequence",
            summary: "deterministic walk along a sequence accumulating only at zero; \
                      time averages concentrate near zero despite unbounded excursions",
        },
        CatalogEntry {
            anchor: "5.4",
            name: "climb-and-reset",
            summary: "every state is absorbed at the floor in finitely many steps, yet \
                      arbitrarily close starts keep law sequences a fixed distance apart",
        },
        CatalogEntry {
            anchor: "5.5",
            name: "outward-drift-walk",
            summary: "birth-death chain with absorbing floor and outward drift: the floor \
                      is the only exact invariant law but interior mass reaches it only on \
                      unobservable timescales; the conditioned descent reaches it fast",
        },
        CatalogEntry {
            anchor: "5.6",
            name: "flip-rotation",
            summary: "rotate-or-flip chain on a product of a torus grid and a sign: \
                      uniform product law invariant and unique; single-start laws \
                      equidistribute slowly through the binomial rotation count",
        },
        CatalogEntry {
            anchor: "5.7",
            name: "coupled-flip-rotation",
            summary: "pair construction over the flip-rotation chain: occasional \
                      mismatches shift the gap by a fixed rotation, and a switching rate \
                      vanishing at zero glues the pair in probability",
        },
        CatalogEntry {
            anchor: "aperiodic-3",
            name: "lazy-cycle-3",
            summary: "3-state doubly stochastic mixture of a cycle and full \
                      randomization: the small exact workhorse for positive diagnostics",
        },
        CatalogEntry {
            anchor: "aperiodic-5",
            name: "lazy-cycle-5",
            summary: "5-state doubly stochastic mixture of a cycle and full \
                      randomization: geometric convergence to the uniform law",
        },
        CatalogEntry {
            anchor: "contraction-16",
            name: "halving-grid-16",
            summary: "halving map with lazy holds on a 16-point grid: laws from nearby \
                      starts contract to the floor together",
        },
    ]
}

pub fn build_example(anchor: &str, params: &ExampleParams) -> Result<ExampleInstance> {
    match anchor {
        "5.1" => build_doubling(params),
        "5.2" => build_flip(),
        "5.3" => build_vanishing_sequence(params),
        "5.4" => build_climb_and_reset(params),
        "5.5" => build_outward_drift(params),
        "5.6" => build_flip_rotation(params),
        "5.7" => build_coupled_flip_rotation(params),
        "aperiodic-3" => build_lazy_cycle_3(),
        "aperiodic-5" => build_lazy_cycle(),
        "contraction-16" => build_halving_grid(),
        other => Err(Error::InvalidInput(format!("unknown instance {other}"))),
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn deterministic_rows(k: usize, target: impl Fn(usize) -> usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut row = vec![0.0; k];
            row[target(i)] = 1.0;
            row
        })
        .collect()
}

fn index_labels(k: usize) -> Vec<String> {
    (0..k).map(|i| i.to_string()).collect()
}

// ---------------------------------------------------------------- doubling

/// Exact doubling map sampler on the grid {k/den}: numerators round-trip
/// through f64 exactly for den < 2^26.
pub fn doubling_sampler(den: u64) -> SamplerChain {
    SamplerChain::new("doubling-torus", 1, move |x, _rng| {
        let k = (x[0] * den as f64).round() as u64 % den;
        vec![((2 * k) % den) as f64 / den as f64]
    })
}

fn build_doubling(params: &ExampleParams) -> Result<ExampleInstance> {
    let q = params.modulus;
    if q < 3 || q % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "doubling modulus {q} must be odd and at least 3"
        )));
    }
    let k = q as usize;
    let points: Vec<Vec<f64>> = (0..k).map(|i| vec![i as f64 / k as f64]).collect();
    let chain = FiniteChain::new(
        index_labels(k),
        points,
        deterministic_rows(k, |i| (2 * i) % k),
    )?;

    let c1 = chain.clone();
    let c2 = chain.clone();
    let c3 = chain.clone();
    let c4 = chain.clone();
    let assertions = vec![
        InstanceAssertion::new("uniform law is exactly invariant", move || {
            let mu = DiscreteMeasure::new((0..c1.len()).collect(), vec![1.0 / c1.len() as f64; c1.len()])?;
            let r = c1.invariance_residual(&mu);
            if r < 1e-12 {
                Ok(())
            } else {
                Err(Error::Model(format!("uniform invariance residual {r}")))
            }
        }),
        InstanceAssertion::new("frozen point mass is invariant", move || {
            let mu = DiscreteMeasure::dirac(0usize);
            let r = c2.invariance_residual(&mu);
            if r < 1e-12 {
                Ok(())
            } else {
                Err(Error::Model(format!("point-mass invariance residual {r}")))
            }
        }),
        InstanceAssertion::new("doubling permutes the grid", move || {
            let k = c3.len();
            let mut seen = vec![false; k];
            for i in 0..k {
                let j = (2 * i) % k;
                if seen[j] {
                    return Err(Error::Model(format!("state {j} has two preimages")));
                }
                seen[j] = true;
            }
            Ok(())
        }),
        InstanceAssertion::new("orbit occupies a small band at twice its width", move || {
            let eps = 0.05;
            let n = 20_000usize;
            let k = c4.len() as f64;
            let mut x = 1usize;
            let mut hits = 0usize;
            for _ in 0..n {
                let u = x as f64 / k;
                if u.min(1.0 - u) <= eps {
                    hits += 1;
                }
                x = (2 * x) % c4.len();
            }
            let freq = hits as f64 / n as f64;
            if (freq - 2.0 * eps).abs() <= 0.03 {
                Ok(())
            } else {
                Err(Error::Model(format!(
                    "band occupation {freq} is not near {}",
                    2.0 * eps
                )))
            }
        }),
    ];

    Ok(ExampleInstance {
        anchor: "5.1",
        name: "doubling-torus",
        summary: format!(
            "deterministic doubling on Z/{q} embedded in the torus; both the uniform law \
             and the frozen point are invariant, and orbits equidistribute, so the \
             time-average mass of an eps-band around the frozen point is about 2*eps \
             rather than any fixed fraction. Sampler layer runs on denominator {}.",
            params.denominator
        ),
        finite: Some(chain),
        sampler: Some(doubling_sampler(params.denominator)),
        metric: MetricPair::same(Metric::Torus1d),
        assertions,
    })
}

/// Couples the frozen-start chain with a uniformly started one under
/// independent dynamics; the closeness occupation stays near twice the band
/// width, far below any eventual-closeness floor.
pub struct FrozenVsOrbitPair {
    pub denominator: u64,
}

impl PairSampler for FrozenVsOrbitPair {
    fn sample_pair(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Result<WeightedPairTrajectory> {
        let den = self.denominator;
        let mut kyy: u64 = rng.gen_range(0..den);
        let mut xs = Vec::with_capacity(horizon + 1);
        let mut ys = Vec::with_capacity(horizon + 1);
        for _ in 0..=horizon {
            xs.push(vec![0.0]);
            ys.push(vec![kyy as f64 / den as f64]);
            kyy = (2 * kyy) % den;
        }
        Ok(WeightedPairTrajectory {
            x: xs,
            y: ys,
            weight_row: 1.0,
            weight_col: 1.0,
        })
    }

    fn describe(&self) -> String {
        format!(
            "frozen start against a uniform start under doubling (denominator {})",
            self.denominator
        )
    }
}

// -------------------------------------------------------------------- flip

fn build_flip() -> Result<ExampleInstance> {
    let chain = FiniteChain::new(
        index_labels(2),
        vec![vec![0.0], vec![1.0]],
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
    )?;

    let c1 = chain.clone();
    let c2 = chain.clone();
    let c3 = chain.clone();
    let assertions = vec![
        InstanceAssertion::new("fair law is the unique invariant law", move || {
            let inv = c1.invariant_measure(InvariantSolver::Nullspace)?;
            if inv.unique != Some(true) {
                return Err(Error::Model("invariant law not flagged unique".into()));
            }
            for &w in inv.measure.weights() {
                if (w - 0.5).abs() > 1e-9 {
                    return Err(Error::Model(format!("invariant weight {w}")));
                }
            }
            Ok(())
        }),
        InstanceAssertion::new("two steps return every state", move || {
            for x in 0..2 {
                let law = c2.n_step_law(x, 2)?;
                if (law.weight_of(&x) - 1.0).abs() > 1e-12 {
                    return Err(Error::Model("period-2 return failed".into()));
                }
            }
            Ok(())
        }),
        InstanceAssertion::new("time-averaged occupation converges to one half", move || {
            let n = 101usize;
            let mut acc = 0.0;
            for t in 0..n {
                acc += c3.n_step_law(0, t)?.weight_of(&0);
            }
            let avg = acc / n as f64;
            if (avg - 0.5).abs() <= 1.0 / n as f64 {
                Ok(())
            } else {
                Err(Error::Model(format!("averaged occupation {avg}")))
            }
        }),
    ];

    Ok(ExampleInstance {
        anchor: "5.2",
        name: "two-state-flip",
        summary: "the two-state permutation chain: the fair law is invariant and unique, \
                  one-step laws oscillate forever (no mixing, no one-step convergence), \
                  while time-averaged occupations converge"
            .into(),
        finite: Some(chain),
        sampler: None,
        metric: MetricPair::same(Metric::EuclideanTruncated),
        assertions,
    })
}

// -------------------------------------------------------- vanishing sequence

fn sequence_value(i: usize) -> f64 {
    // 1-indexed: square root at powers of two, reciprocal elsewhere
    debug_assert!(i >= 1);
    if i.is_power_of_two() {
        (i as f64).sqrt()
    } else {
        1.0 / i as f64
    }
}

fn build_vanishing_sequence(params: &ExampleParams) -> Result<ExampleInstance> {
    let m = params.sequence_len;
    if m < 10 {
        return Err(Error::InvalidInput("sequence length below 10".into()));
    }
    if m.is_power_of_two() {
        return Err(Error::InvalidInput(
            "sequence length must not be a power of two (the tail value would be large)".into(),
        ));
    }
    let points: Vec<Vec<f64>> = (1..=m).map(|i| vec![sequence_value(i)]).collect();
    let chain = FiniteChain::new(
        index_labels(m),
        points,
        deterministic_rows(m, |i| (i + 1).min(m - 1)),
    )?;

    let c1 = chain.clone();
    let assertions = vec![
        InstanceAssertion::new("walk is absorbed at the last index", move || {
            let law = c1.n_step_law(0, c1.len() + 5)?;
            let last = c1.len() - 1;
            if (law.weight_of(&last) - 1.0).abs() < 1e-12 {
                Ok(())
            } else {
                Err(Error::Model("absorption at the tail failed".into()))
            }
        }),
        InstanceAssertion::new("small values dominate the early orbit", move || {
            let horizon = 60usize;
            let good = (1..=horizon).filter(|&i| sequence_value(i) <= 0.1).count();
            let frac = good as f64 / horizon as f64;
            if frac >= 0.8 {
                Ok(())
            } else {
                Err(Error::Model(format!("small-value fraction {frac}")))
            }
        }),
        InstanceAssertion::new("only finitely many values stay above any level", move || {
            let above = (1..=100_000usize)
                .filter(|&i| sequence_value(i) > 0.05)
                .count();
            // reciprocals below 1/20 plus the power-of-two spikes
            if above <= 19 + 17 {
                Ok(())
            } else {
                Err(Error::Model(format!("{above} values above 0.05")))
            }
        }),
    ];

    Ok(ExampleInstance {
        anchor: "5.3",
        name: "vanishing-sequence",
        summary: format!(
            "deterministic march along a_i (square roots at powers of two, reciprocals \
             elsewhere), truncated at {m}: zero is the only accumulation point, so time \
             averages of the position concentrate near zero even though the sequence is \
             unbounded"
        ),
        finite: Some(chain),
        sampler: None,
        metric: MetricPair::same(Metric::EuclideanTruncated),
        assertions,
    })
}

// ---------------------------------------------------------- climb and reset

fn build_climb_and_reset(params: &ExampleParams) -> Result<ExampleInstance> {
    let kdepth = params.depth;
    if kdepth < 2 || kdepth > 40 {
        return Err(Error::InvalidInput("depth outside [2, 40]".into()));
    }
    // states: index 0 -> value 0, index 1 -> value 1, index 1+k -> 2^{-k}
    let mut points = vec![vec![0.0], vec![1.0]];
    let mut labels = vec!["0".to_string(), "1".to_string()];
    for k in 1..=kdepth {
        points.push(vec![0.5f64.powi(k as i32)]);
        labels.push(format!("2^-{k}"));
    }
    let n_states = points.len();
    let target = move |i: usize| -> usize {
        match i {
            0 => 0,         // floor is fixed
            1 => 0,         // top resets to the floor
            2 => 1,         // one halving level below the top climbs to it
            _ => i - 1,     // each level climbs one step
        }
    };
    let chain = FiniteChain::new(labels, points, deterministic_rows(n_states, target))?;

    let c1 = chain.clone();
    let c2 = chain.clone();
    let assertions = vec![
        InstanceAssertion::new("every start is absorbed at the floor", move || {
            for x in 0..c1.len() {
                let law = c1.n_step_law(x, c1.len())?;
                if (law.weight_of(&0) - 1.0).abs() > 1e-12 {
                    return Err(Error::Model(format!("state {x} not absorbed")));
                }
            }
            Ok(())
        }),
        InstanceAssertion::new("close starts keep distant law sequences", move || {
            // the two deepest levels start 2^{-depth} apart but their laws
            // sit at 1 and 1/2 when the deeper one is still mid-climb
            let deep = c2.len() - 1;
            let above = c2.len() - 2;
            let n = deep - 2; // the shallower state reaches value 1 here
            let la = c2.n_step_law(above, n)?;
            let lb = c2.n_step_law(deep, n)?;
            let rho = |i: &usize, j: &usize| {
                (c2.point(*i)[0] - c2.point(*j)[0]).abs().min(1.0)
            };
            let a = la.trim_zeros();
            let b = lb.trim_zeros();
            let d = crate::ot::kr_distance(&a, &b, rho)?;
            if d >= 0.5 - 1e-9 {
                Ok(())
            } else {
                Err(Error::Model(format!("law distance {d} below 1/2")))
            }
        }),
    ];

    Ok(ExampleInstance {
        anchor: "5.4",
        name: "climb-and-reset",
        summary: format!(
            "levels 2^-k climb one halving per step, the top resets to the floor, the \
             floor is fixed (depth {kdepth}): every law reaches the floor exactly in \
             finitely many steps, yet starts 2^-{kdepth} apart keep their law sequences \
             at distance 1/2 or more, so laws from nearby starts are not uniformly close"
        ),
        finite: Some(chain),
        sampler: None,
        metric: MetricPair::same(Metric::EuclideanTruncated),
        assertions,
    })
}

// ----------------------------------------------------------- outward drift

/// Original truncated walk: absorbing floor, downward rate 1/3, upward 2/3,
/// holding at the cap.
pub fn outward_drift_chain(s: usize) -> Result<FiniteChain> {
    let k = s + 1;
    let mut rows = vec![vec![0.0; k]; k];
    rows[0][0] = 1.0;
    for i in 1..s {
        rows[i][i - 1] = 1.0 / 3.0;
        rows[i][i + 1] = 2.0 / 3.0;
    }
    rows[s][s - 1] = 1.0 / 3.0;
    rows[s][s] = 2.0 / 3.0;
    let points = (0..k).map(|i| vec![i as f64]).collect();
    FiniteChain::new(index_labels(k), points, rows)
}

/// Descent chain: the walk reweighted by the floor-hitting function 2^{-i},
/// which flips the drift; at the cap the outward move is folded into a hold.
pub fn conditioned_descent_chain(s: usize) -> Result<FiniteChain> {
    let k = s + 1;
    let mut rows = vec![vec![0.0; k]; k];
    rows[0][0] = 1.0;
    for i in 1..s {
        rows[i][i - 1] = 2.0 / 3.0;
        rows[i][i + 1] = 1.0 / 3.0;
    }
    rows[s][s - 1] = 2.0 / 3.0;
    rows[s][s] = 1.0 / 3.0;
    let points = (0..k).map(|i| vec![i as f64]).collect();
    FiniteChain::new(index_labels(k), points, rows)
}

fn build_outward_drift(params: &ExampleParams) -> Result<ExampleInstance> {
    let s = params.truncation;
    if !(5..=400).contains(&s) {
        return Err(Error::InvalidInput("truncation outside [5, 400]".into()));
    }
    let chain = outward_drift_chain(s)?;

    let c1 = chain.clone();
    let c2 = chain.clone();
    let c3 = chain.clone();
    let assertions = vec![
        InstanceAssertion::new("halving weights balance the jump rates", move || {
            // (1/3) 2^{-(i-1)} + (2/3) 2^{-(i+1)} = 2^{-i} on the interior
            for i in 1..c1.len() - 1 {
                let h = |j: usize| 0.5f64.powi(j as i32);
                let lhs = c1.prob(i, i - 1) * h(i - 1) + c1.prob(i, i + 1) * h(i + 1);
                if (lhs - h(i)).abs() > 1e-15 {
                    return Err(Error::Model(format!("balance fails at {i}")));
                }
            }
            Ok(())
        }),
        InstanceAssertion::new(
            "the floor is exactly invariant yet the cap spoils numerical uniqueness",
            move || {
                let floor = DiscreteMeasure::dirac(0usize);
                let res = c2.invariance_residual(&floor);
                if res > 1e-15 {
                    return Err(Error::Model(format!("floor residual {res}")));
                }
                // mass parked at the cap escapes at rate ~2^-s, far below
                // solver resolution, so a second invariant direction must
                // be reported at this truncation
                let inv = c2.invariant_measure(InvariantSolver::Nullspace)?;
                if inv.unique != Some(false) {
                    return Err(Error::Model(format!(
                        "expected a spurious cap direction, flag was {:?}",
                        inv.unique
                    )));
                }
                if inv.residual > 1e-8 {
                    return Err(Error::Model(format!("solver residual {}", inv.residual)));
                }
                Ok(())
            },
        ),
        InstanceAssertion::new(
            "interior mass avoids the floor over observable horizons while the descent \
             chain reaches it",
            move || {
                let x = 10.min(c3.len() - 2);
                let slow = c3.n_step_law(x, 200)?.weight_of(&0);
                if slow > 0.01 {
                    return Err(Error::Model(format!("floor mass {slow} too large")));
                }
                let h = conditioned_descent_chain(c3.len() - 1)?;
                let fast = h.n_step_law(x, 200)?.weight_of(&0);
                if fast < 0.99 {
                    return Err(Error::Model(format!("descent floor mass {fast} too small")));
                }
                Ok(())
            },
        ),
    ];

    Ok(ExampleInstance {
        anchor: "5.5",
        name: "outward-drift-walk",
        summary: format!(
            "birth-death walk on 0..{s} with absorbing floor, downward rate 1/3, upward \
             2/3, holding at the cap: the floor mass is the only exact invariant law, \
             but interior states reach it only through an exponentially rare excursion \
             and the cap holds a numerically invariant reservoir; reweighting paths by \
             the floor-hitting function 2^(start - end) flips the drift and reaches the \
             floor in linear time, with path weights bounded by 2^start"
        ),
        finite: Some(chain),
        sampler: None,
        metric: MetricPair::same(Metric::EuclideanTruncated),
        assertions,
    })
}

/// Pair sampler for the descent construction: the first component runs the
/// drift-flipped chain from `x0` carrying the path weight 2^(x0 - X_n)
/// against the original walk; the second component sits at the floor.
pub struct ConditionedDescentPair {
    chain: FiniteChain,
    x0: usize,
}

impl ConditionedDescentPair {
    pub fn new(truncation: usize, x0: usize) -> Result<Self> {
        let chain = conditioned_descent_chain(truncation)?;
        if x0 >= chain.len() {
            return Err(Error::UnknownState(format!("start {x0}")));
        }
        Ok(Self { chain, x0 })
    }
}

impl PairSampler for ConditionedDescentPair {
    fn sample_pair(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Result<WeightedPairTrajectory> {
        let idx = self.chain.simulate(self.x0, horizon, rng)?;
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| vec![i as f64]).collect();
        let y = vec![vec![0.0]; horizon + 1];
        let last = *idx.last().unwrap();
        let weight_row = 2f64.powi(self.x0 as i32 - last as i32);
        Ok(WeightedPairTrajectory {
            x,
            y,
            weight_row,
            weight_col: 1.0,
        })
    }

    fn describe(&self) -> String {
        format!(
            "drift-flipped descent from {} against the frozen floor (cap {})",
            self.x0,
            self.chain.len() - 1
        )
    }
}

// ----------------------------------------------------------- flip-rotation

/// Single flip-rotation chain on a grid torus times a sign: each step
/// rotates by r/q or flips the sign, each with probability one half.
pub fn flip_rotation_sampler(q: u64, r: u64) -> SamplerChain {
    SamplerChain::new("flip-rotation", 2, move |x, rng| {
        let k = (x[0] * q as f64).round() as u64 % q;
        let s = x[1];
        if rng.gen::<f64>() < 0.5 {
            vec![((k + r) % q) as f64 / q as f64, s]
        } else {
            vec![k as f64 / q as f64, -s]
        }
    })
}

fn flip_rotation_finite(q: u64, r: u64) -> Result<FiniteChain> {
    if q < 3 || q % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "rotation grid {q} must be odd and at least 3 (even grids make the chain \
             2-periodic through the numerator-sign parity)"
        )));
    }
    if gcd(q, r) != 1 {
        return Err(Error::InvalidInput(format!(
            "rotation step {r} shares a factor with the grid {q}"
        )));
    }
    let qk = q as usize;
    let n = 2 * qk;
    // state index: k for sign +1, q + k for sign -1
    let mut labels = Vec::with_capacity(n);
    let mut points = Vec::with_capacity(n);
    for s in [1.0f64, -1.0] {
        for k in 0..qk {
            labels.push(format!("{k}{}", if s > 0.0 { "+" } else { "-" }));
            points.push(vec![k as f64 / q as f64, s]);
        }
    }
    let mut rows = vec![vec![0.0; n]; n];
    for si in 0..2 {
        for k in 0..qk {
            let i = si * qk + k;
            let rot = si * qk + (k + r as usize) % qk;
            let flip = (1 - si) * qk + k;
            rows[i][rot] = 0.5;
            rows[i][flip] = 0.5;
        }
    }
    FiniteChain::new(labels, points, rows)
}

fn build_flip_rotation(params: &ExampleParams) -> Result<ExampleInstance> {
    let chain = flip_rotation_finite(params.grid, params.rotation)?;

    let c1 = chain.clone();
    let c2 = chain.clone();
    let c3 = chain.clone();
    let assertions = vec![
        InstanceAssertion::new("uniform product law is exactly invariant", move || {
            let n = c1.len();
            let mu = DiscreteMeasure::new((0..n).collect(), vec![1.0 / n as f64; n])?;
            let r = c1.invariance_residual(&mu);
            if r < 1e-12 {
                Ok(())
            } else {
                Err(Error::Model(format!("uniform invariance residual {r}")))
            }
        }),
        InstanceAssertion::new("the invariant law is unique", move || {
            let inv = c2.invariant_measure(InvariantSolver::Nullspace)?;
            if inv.unique == Some(true) {
                Ok(())
            } else {
                Err(Error::Model(format!("uniqueness flag {:?}", inv.unique)))
            }
        }),
        InstanceAssertion::new(
            "one-step laws sit far from uniform, hundred-step laws close in",
            move || {
                let n = c3.len();
                let mu = DiscreteMeasure::new(
                    (0..n).collect(),
                    vec![1.0 / n as f64; n],
                )?;
                let m = Metric::TorusProductFlip;
                let rho = |i: &usize, j: &usize| m.eval(c3.point(*i), c3.point(*j)).min(1.0);
                let early = c3.n_step_law(0, 1)?.trim_zeros();
                let d_early = crate::ot::kr_distance(&early, &mu, rho)?;
                if d_early < 0.08 {
                    return Err(Error::Model(format!("early law already close: {d_early}")));
                }
                let late = c3.n_step_law(0, 100)?.trim_zeros();
                let d_late = crate::ot::kr_distance(&late, &mu, rho)?;
                if d_late > 0.05 {
                    return Err(Error::Model(format!("late law still far: {d_late}")));
                }
                Ok(())
            },
        ),
    ];

    Ok(ExampleInstance {
        anchor: "5.6",
        name: "flip-rotation",
        summary: format!(
            "rotate-by-{}/{} or flip the sign, each with probability 1/2: the uniform \
             product law is invariant and unique; the rotation count is binomial, so \
             single-start laws spread over the grid on a slow, quantified schedule. \
             Sampler layer runs on grid {}.",
            params.rotation, params.grid, params.sampler_grid
        ),
        finite: Some(chain),
        sampler: Some(flip_rotation_sampler(
            params.sampler_grid,
            params.sampler_rotation,
        )),
        metric: MetricPair::same(Metric::TorusProductFlip),
        assertions,
    })
}

// ---------------------------------------------------- coupled flip-rotation

/// Switching function on torus gaps.
pub type SwitchFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The default switching rate: min(1, scale * z^power) on the torus gap.
pub fn power_switch(scale: f64, power: f64) -> SwitchFn {
    Arc::new(move |z: f64| (scale * z.powf(power)).min(1.0))
}

/// Pair construction over the flip-rotation chain. With matching signs and
/// numerator gap z, both components take the same action with probability
/// 1 - p(z) (split evenly between rotate and flip) and opposite actions
/// with probability p(z) (split evenly between the two assignments). With
/// mismatched signs the pair re-merges in one step, assigning flip/rotate
/// by a fair coin. Each component is marginally the flip-rotation chain.
pub struct CoupledFlipRotation {
    pub q: u64,
    pub r: u64,
    p: SwitchFn,
    x0: (u64, f64),
    y0: (u64, f64),
}

impl CoupledFlipRotation {
    pub fn new(q: u64, r: u64, p: SwitchFn, x0: (u64, f64), y0: (u64, f64)) -> Result<Self> {
        if q < 3 {
            return Err(Error::InvalidInput("rotation grid below 3".into()));
        }
        if r == 0 || r >= q {
            return Err(Error::InvalidInput(format!("rotation step {r} outside 1..{q}")));
        }
        if p(0.0).abs() > 0.0 {
            return Err(Error::InvalidInput(
                "switching rate must vanish at gap zero".into(),
            ));
        }
        for &(_, s) in [&x0, &y0] {
            if s != 1.0 && s != -1.0 {
                return Err(Error::InvalidInput(format!("sign {s} is not +-1")));
            }
        }
        Ok(Self { q, r, p, x0, y0 })
    }

    pub fn with_defaults(params: &ExampleParams, x0: (u64, f64), y0: (u64, f64)) -> Result<Self> {
        Self::new(
            params.sampler_grid,
            params.sampler_rotation,
            power_switch(params.switch_scale, params.switch_power),
            x0,
            y0,
        )
    }

    fn torus_gap(&self, kx: u64, ky: u64) -> f64 {
        let d = (kx + self.q - ky) % self.q;
        (d.min(self.q - d)) as f64 / self.q as f64
    }

    fn point(&self, k: u64, s: f64) -> Vec<f64> {
        vec![k as f64 / self.q as f64, s]
    }
}

impl PairSampler for CoupledFlipRotation {
    fn sample_pair(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Result<WeightedPairTrajectory> {
        let (q, r) = (self.q, self.r);
        let (mut kx, mut sx) = self.x0;
        let (mut ky, mut sy) = self.y0;
        let mut xs = Vec::with_capacity(horizon + 1);
        let mut ys = Vec::with_capacity(horizon + 1);
        xs.push(self.point(kx, sx));
        ys.push(self.point(ky, sy));
        for _ in 0..horizon {
            if sx != sy {
                // re-merge: one flips, the other rotates, fair coin
                if rng.gen::<f64>() < 0.5 {
                    sx = -sx;
                    ky = (ky + r) % q;
                } else {
                    sy = -sy;
                    kx = (kx + r) % q;
                }
            } else {
                let pz = (self.p)(self.torus_gap(kx, ky)).clamp(0.0, 1.0);
                let u: f64 = rng.gen();
                if u < 0.5 * (1.0 - pz) {
                    kx = (kx + r) % q;
                    ky = (ky + r) % q;
                } else if u < 1.0 - pz {
                    sx = -sx;
                    sy = -sy;
                } else if u < 1.0 - 0.5 * pz {
                    sx = -sx;
                    ky = (ky + r) % q;
                } else {
                    sy = -sy;
                    kx = (kx + r) % q;
                }
            }
            xs.push(self.point(kx, sx));
            ys.push(self.point(ky, sy));
        }
        Ok(WeightedPairTrajectory {
            x: xs,
            y: ys,
            weight_row: 1.0,
            weight_col: 1.0,
        })
    }

    fn describe(&self) -> String {
        format!(
            "coupled flip-rotation on grid {} with step {} from ({}, {}) and ({}, {})",
            self.q, self.r, self.x0.0, self.x0.1, self.y0.0, self.y0.1
        )
    }
}

fn build_coupled_flip_rotation(params: &ExampleParams) -> Result<ExampleInstance> {
    // validate the default construction eagerly
    CoupledFlipRotation::with_defaults(params, (0, 1.0), (1, 1.0))?;
    let p = params.clone();

    let p1 = p.clone();
    let p2 = p.clone();
    let p3 = p.clone();
    let p4 = p.clone();
    let assertions = vec![
        InstanceAssertion::new("a silent switching rate keeps equal starts glued", move || {
            let pair = CoupledFlipRotation::new(
                p1.sampler_grid,
                p1.sampler_rotation,
                Arc::new(|_| 0.0),
                (7, 1.0),
                (7, 1.0),
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let t = pair.sample_pair(200, &mut rng)?;
            for (a, b) in t.x.iter().zip(&t.y) {
                if a != b {
                    return Err(Error::Model("components separated".into()));
                }
            }
            Ok(())
        }),
        InstanceAssertion::new("each component rotates half the time", move || {
            let pair = CoupledFlipRotation::with_defaults(&p2, (0, 1.0), (100, 1.0))?;
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let t = pair.sample_pair(4000, &mut rng)?;
            for path in [&t.x, &t.y] {
                let mut rotations = 0usize;
                for w in path.windows(2) {
                    if w[0][1] == w[1][1] {
                        rotations += 1;
                    }
                }
                let frac = rotations as f64 / (path.len() - 1) as f64;
                if (frac - 0.5).abs() > 0.05 {
                    return Err(Error::Model(format!("rotation fraction {frac}")));
                }
            }
            Ok(())
        }),
        InstanceAssertion::new("sign mismatches resolve in one step", move || {
            let pair = CoupledFlipRotation::with_defaults(&p3, (0, 1.0), (0, -1.0))?;
            for seed in 0..50 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let t = pair.sample_pair(1, &mut rng)?;
                if t.x[1][1] != t.y[1][1] {
                    return Err(Error::Model("mismatch survived a step".into()));
                }
            }
            Ok(())
        }),
        InstanceAssertion::new(
            "a re-merged gap lands on {z, z+2r, z-2r} with weights {1/2, 1/4, 1/4}",
            move || {
                let q = p4.sampler_grid;
                let r = p4.sampler_rotation;
                // constant positive switching away from zero for fast mismatches
                let pair = CoupledFlipRotation::new(
                    q,
                    r,
                    Arc::new(|z| if z > 0.0 { 0.5 } else { 0.0 }),
                    (50, 1.0),
                    (0, 1.0),
                )?;
                let mut rng = ChaCha8Rng::seed_from_u64(23);
                let t = pair.sample_pair(30_000, &mut rng)?;
                let gap_of = |i: usize| -> u64 {
                    let kx = (t.x[i][0] * q as f64).round() as u64 % q;
                    let ky = (t.y[i][0] * q as f64).round() as u64 % q;
                    (kx + q - ky) % q
                };
                let merged = |i: usize| t.x[i][1] == t.y[i][1];
                let (mut same, mut up, mut down, mut total) = (0u64, 0u64, 0u64, 0u64);
                let mut i = 0usize;
                while i + 1 < t.x.len() {
                    if merged(i) && !merged(i + 1) {
                        let before = gap_of(i);
                        // the mismatch resolves at i + 2
                        if i + 2 >= t.x.len() {
                            break;
                        }
                        let after = gap_of(i + 2);
                        total += 1;
                        if after == before {
                            same += 1;
                        } else if after == (before + 2 * r) % q {
                            up += 1;
                        } else if after == (before + 2 * (q - r)) % q {
                            down += 1;
                        } else {
                            return Err(Error::Model(format!(
                                "gap moved {before} -> {after}, outside the three-point law"
                            )));
                        }
                        i += 2;
                    } else {
                        i += 1;
                    }
                }
                if total < 1000 {
                    return Err(Error::Model(format!("only {total} mismatch events")));
                }
                let (fs, fu, fd) = (
                    same as f64 / total as f64,
                    up as f64 / total as f64,
                    down as f64 / total as f64,
                );
                if (fs - 0.5).abs() > 0.05 || (fu - 0.25).abs() > 0.05 || (fd - 0.25).abs() > 0.05 {
                    return Err(Error::Model(format!("law ({fs}, {fu}, {fd})")));
                }
                Ok(())
            },
        ),
    ];

    Ok(ExampleInstance {
        anchor: "5.7",
        name: "coupled-flip-rotation",
        summary: format!(
            "exact coupling of two flip-rotation chains on grid {}: matched signs move \
             together except with probability p(gap), mismatches re-merge in one step \
             shifting the gap by a rotation, and the default rate p(z) = min(1, {} z^{}) \
             vanishes fast enough at zero that the gap freezes near zero in probability",
            params.sampler_grid, params.switch_scale, params.switch_power
        ),
        finite: None,
        sampler: Some(flip_rotation_sampler(
            params.sampler_grid,
            params.sampler_rotation,
        )),
        metric: MetricPair::same(Metric::TorusProductFlip),
        assertions,
    })
}

// ------------------------------------------------------------- lazy cycle

fn build_lazy_cycle_3() -> Result<ExampleInstance> {
    let k = 3usize;
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| 0.2 + if j == (i + 1) % k { 0.4 } else { 0.0 })
                .collect()
        })
        .collect();
    let points = (0..k).map(|i| vec![i as f64 / 10.0]).collect();
    let chain = FiniteChain::new(index_labels(k), points, rows)?;

    let c1 = chain.clone();
    let c2 = chain.clone();
    let assertions = vec![
        InstanceAssertion::new("uniform law is invariant and unique", move || {
            let inv = c1.invariant_measure(InvariantSolver::Nullspace)?;
            if inv.unique != Some(true) {
                return Err(Error::Model("uniqueness flag missing".into()));
            }
            for &w in inv.measure.weights() {
                if (w - 1.0 / 3.0).abs() > 1e-9 {
                    return Err(Error::Model(format!("invariant weight {w}")));
                }
            }
            Ok(())
        }),
        InstanceAssertion::new("twelve steps land on the invariant law", move || {
            let law = c2.n_step_law(0, 12)?;
            let tv: f64 = law.weights().iter().map(|&w| (w - 1.0 / 3.0).abs()).sum::<f64>() / 2.0;
            if tv < 1e-4 {
                Ok(())
            } else {
                Err(Error::Model(format!("residual oscillation {tv}")))
            }
        }),
    ];

    Ok(ExampleInstance {
        anchor: "aperiodic-3",
        name: "lazy-cycle-3",
        summary: "three states, each row mixing full randomization (weight 3/5) with a \
                  cycle shift (weight 2/5): doubly stochastic, second eigenvalue \
                  modulus 2/5, so exact diagnostics settle within a dozen steps"
            .into(),
        finite: Some(chain),
        sampler: None,
        metric: MetricPair::same(Metric::EuclideanTruncated),
        assertions,
    })
}

fn build_lazy_cycle() -> Result<ExampleInstance> {
    let k = 5usize;
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| 0.1 + if j == (i + 1) % k { 0.5 } else { 0.0 })
                .collect()
        })
        .collect();
    let points = (0..k).map(|i| vec![i as f64 / 10.0]).collect();
    let chain = FiniteChain::new(index_labels(k), points, rows)?;

    let c1 = chain.clone();
    let c2 = chain.clone();
    let assertions = vec![
        InstanceAssertion::new("uniform law is invariant and unique", move || {
            let inv = c1.invariant_measure(InvariantSolver::Nullspace)?;
            if inv.unique != Some(true) {
                return Err(Error::Model("uniqueness flag missing".into()));
            }
            for &w in inv.measure.weights() {
                if (w - 0.2).abs() > 1e-9 {
                    return Err(Error::Model(format!("invariant weight {w}")));
                }
            }
            Ok(())
        }),
        InstanceAssertion::new("laws land on the invariant law geometrically", move || {
            let law = c2.n_step_law(0, 20)?;
            let tv: f64 = law
                .points()
                .iter()
                .zip(law.weights())
                .map(|(_, &w)| (w - 0.2).abs())
                .sum::<f64>()
                / 2.0;
            if tv < 1e-5 {
                Ok(())
            } else {
                Err(Error::Model(format!("residual oscillation {tv}")))
            }
        }),
    ];

    Ok(ExampleInstance {
        anchor: "aperiodic-5",
        name: "lazy-cycle-5",
        summary: "five states, each row mixing a full randomization (weight 1/2) with a \
                  cycle shift (weight 1/2): doubly stochastic, aperiodic, second \
                  eigenvalue modulus 1/2, so everything converges geometrically"
            .into(),
        finite: Some(chain),
        sampler: None,
        metric: MetricPair::same(Metric::EuclideanTruncated),
        assertions,
    })
}

// ---------------------------------------------------------- halving grid

fn build_halving_grid() -> Result<ExampleInstance> {
    let k = 16usize;
    let mut rows = vec![vec![0.0; k]; k];
    for i in 0..k {
        rows[i][i / 2] += 0.7;
        rows[i][i] += 0.3;
    }
    let points = (0..k).map(|i| vec![i as f64 / 16.0]).collect();
    let chain = FiniteChain::new(index_labels(k), points, rows)?;

    let c1 = chain.clone();
    let assertions = vec![InstanceAssertion::new(
        "laws from nearby starts contract to the floor together",
        move || {
            let rho = |i: &usize, j: &usize| {
                (c1.point(*i)[0] - c1.point(*j)[0]).abs().min(1.0)
            };
            let a = c1.n_step_law(1, 8)?.trim_zeros();
            let b = c1.n_step_law(0, 8)?.trim_zeros();
            let d = crate::ot::kr_distance(&a, &b, rho)?;
            if d <= 0.01 {
                Ok(())
            } else {
                Err(Error::Model(format!("laws still {d} apart")))
            }
        },
    )];

    Ok(ExampleInstance {
        anchor: "contraction-16",
        name: "halving-grid-16",
        summary: "index halving with a lazy hold on 16 grid points: all mass funnels to \
                  the floor, and laws from nearby starts stay close at every horizon"
            .into(),
        finite: Some(chain),
        sampler: None,
        metric: MetricPair::same(Metric::EuclideanTruncated),
        assertions,
    })
}
