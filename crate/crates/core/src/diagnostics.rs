//! Convergence diagnostics for finite chains and pair samplers.
//!
//! The exact layer computes closeness probabilities through optimal
//! transport on n-step laws. The Monte-Carlo layer drives pair samplers and
//! reports confidence half-widths; verdicts stay inconclusive whenever the
//! margin sits inside the noise.

use crate::chain::{FiniteChain, SamplerChain};
use crate::coupling::PairSampler;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::metric::Metric;
use crate::ot::max_closeness;
use crate::seeding::derive_seed;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// 95% normal quantile used for every confidence half-width.
pub const Z95: f64 = 1.959963984540054;

/// Epsilon-monotonicity violations above this make a table an error.
const TABLE_TOL: f64 = 1e-9;

/// Invariance residuals above this attach a warning note.
const INVARIANCE_WARN: f64 = 1e-8;

/// Largest number of points a rendered series keeps.
const SERIES_CAP: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Supports,
    Refutes,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Supports => "supports",
            Verdict::Refutes => "refutes",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// One labelled curve; `half_widths` is empty for exact computations.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub half_widths: Vec<f64>,
}

/// Outcome of one hypothesis check: curves, a verdict, and the tolerances
/// the verdict was decided against.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub quantity: String,
    pub series: Vec<Series>,
    pub verdict: Verdict,
    pub tolerances: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl ConvergenceReport {
    /// One row per grid cell: `quantity,series,x,value,half_width`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,series,x,value,half_width\n");
        for s in &self.series {
            for (k, &(x, v)) in s.points.iter().enumerate() {
                let hw = s.half_widths.get(k).map(|h| h.to_string()).unwrap_or_default();
                out.push_str(&format!("{},{},{},{},{}\n", self.quantity, s.label, x, v, hw));
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{}: {}\n", self.quantity, self.verdict);
        for (name, v) in &self.tolerances {
            out.push_str(&format!("  tolerance {name} = {v}\n"));
        }
        for n in &self.notes {
            out.push_str(&format!("  note: {n}\n"));
        }
        for s in &self.series {
            if let (Some(first), Some(last)) = (s.points.first(), s.points.last()) {
                out.push_str(&format!(
                    "  series {}: {} points, first ({}, {}), last ({}, {})\n",
                    s.label,
                    s.points.len(),
                    first.0,
                    first.1,
                    last.0,
                    last.1
                ));
            }
        }
        out
    }
}

fn thin(points: Vec<(f64, f64)>, hws: Vec<f64>) -> (Vec<(f64, f64)>, Vec<f64>) {
    if points.len() <= SERIES_CAP {
        return (points, hws);
    }
    let stride = points.len().div_ceil(SERIES_CAP);
    let last = points.len() - 1;
    let keep: Vec<usize> = (0..points.len())
        .filter(|&i| i % stride == 0 || i == last)
        .collect();
    let p = keep.iter().map(|&i| points[i]).collect();
    let h = if hws.is_empty() {
        hws
    } else {
        keep.iter().map(|&i| hws[i]).collect()
    };
    (p, h)
}

/// Best probability any coupling of the two n-step laws gives the closed
/// event `{d <= eps}`.
pub fn gamma(
    chain: &FiniteChain,
    metric: &Metric,
    x: usize,
    y: usize,
    n: usize,
    eps: f64,
) -> Result<f64> {
    if eps < 0.0 {
        return Err(Error::InvalidInput(format!("eps {eps} < 0")));
    }
    if x == y {
        // the diagonal coupling keeps the components equal at every step
        return Ok(1.0);
    }
    let mu = chain.n_step_law(x, n)?.trim_zeros();
    let nu = chain.n_step_law(y, n)?.trim_zeros();
    let (g, _) = max_closeness(
        &mu,
        &nu,
        |i, j| metric.eval(chain.point(*i), chain.point(*j)),
        eps,
    )?;
    Ok(g)
}

/// Monte-Carlo closeness estimate for sampler chains: optimal transport on
/// empirical n-step laws. Biased at O(sqrt(k/N)) toward independence; the
/// caller flags results from this path as approximate.
pub fn gamma_empirical(
    sampler: &SamplerChain,
    metric: &Metric,
    x0: &[f64],
    y0: &[f64],
    n: usize,
    eps: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples = 0".into()));
    }
    let mut xs = Vec::with_capacity(n_samples);
    let mut ys = Vec::with_capacity(n_samples);
    for r in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, r as u64]));
        xs.push(sampler.simulate(x0, n, &mut rng)?.pop().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, r as u64]));
        ys.push(sampler.simulate(y0, n, &mut rng)?.pop().unwrap());
    }
    let mu = DiscreteMeasure::empirical(&xs)?;
    let nu = DiscreteMeasure::empirical(&ys)?;
    let (g, _) = max_closeness(&mu, &nu, |a, b| metric.eval(a, b), eps)?;
    Ok(g)
}

/// Closeness probabilities on a (pair, horizon, eps) grid with the
/// liminf-over-n and limit-over-eps proxies.
#[derive(Debug, Clone)]
pub struct GammaTable {
    pub pairs: Vec<(usize, usize)>,
    pub pair_weights: Vec<f64>,
    pub horizons: Vec<usize>,
    pub epsilons: Vec<f64>,
    values: Vec<f64>,
}

impl GammaTable {
    pub fn value(&self, pair: usize, horizon: usize, eps: usize) -> f64 {
        self.values[(pair * self.horizons.len() + horizon) * self.epsilons.len() + eps]
    }

    /// Minimum over the tail half of the horizon grid: the liminf proxy.
    pub fn gamma_eps(&self, pair: usize, eps: usize) -> f64 {
        let h = self.horizons.len();
        let start = h / 2;
        (start..h)
            .map(|hi| self.value(pair, hi, eps))
            .fold(f64::INFINITY, f64::min)
    }

    /// Minimum of the liminf proxy over the eps grid: the small-eps proxy.
    pub fn gamma(&self, pair: usize) -> f64 {
        (0..self.epsilons.len())
            .map(|ei| self.gamma_eps(pair, ei))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Computes a closeness table cell by cell. Cells run in parallel; symmetry
/// in the pair is exploited through an unordered-pair cache, and the result
/// layout is deterministic.
pub fn gamma_table(
    chain: &FiniteChain,
    metric: &Metric,
    pairs: &[(usize, usize)],
    pair_weights: Option<&[f64]>,
    horizons: &[usize],
    epsilons: &[f64],
) -> Result<GammaTable> {
    if pairs.is_empty() || horizons.is_empty() || epsilons.is_empty() {
        return Err(Error::InvalidInput("empty table grid".into()));
    }
    let weights = match pair_weights {
        Some(w) => {
            if w.len() != pairs.len() {
                return Err(Error::InvalidInput("pair weight length mismatch".into()));
            }
            w.to_vec()
        }
        None => vec![1.0 / pairs.len() as f64; pairs.len()],
    };
    for &(x, y) in pairs {
        if x >= chain.len() || y >= chain.len() {
            return Err(Error::UnknownState(format!("pair ({x}, {y})")));
        }
    }
    let mut eps_sorted = epsilons.to_vec();
    eps_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if eps_sorted.iter().any(|&e| e < 0.0) {
        return Err(Error::InvalidInput("negative eps in grid".into()));
    }

    // unordered representatives actually needing a solve
    let mut reps: Vec<(usize, usize)> = pairs
        .iter()
        .map(|&(x, y)| if x <= y { (x, y) } else { (y, x) })
        .collect();
    reps.sort_unstable();
    reps.dedup();

    let cells: Vec<((usize, usize), usize)> = reps
        .iter()
        .flat_map(|&p| horizons.iter().map(move |&n| (p, n)))
        .collect();
    let solved: Result<Vec<Vec<f64>>> = cells
        .par_iter()
        .map(|&((x, y), n)| {
            eps_sorted
                .iter()
                .map(|&e| gamma(chain, metric, x, y, n, e))
                .collect()
        })
        .collect();
    let solved = solved?;

    // monotonicity in eps is a theorem for closed events; enforce it
    for (ci, vals) in solved.iter().enumerate() {
        for w in vals.windows(2) {
            if w[1] < w[0] - TABLE_TOL {
                return Err(Error::Solver {
                    msg: format!(
                        "closeness not monotone in eps at pair {:?}, horizon {}",
                        cells[ci].0, cells[ci].1
                    ),
                    residual: w[0] - w[1],
                });
            }
        }
    }

    let rep_index = |x: usize, y: usize| -> usize {
        let key = if x <= y { (x, y) } else { (y, x) };
        reps.binary_search(&key).unwrap()
    };
    let (h, e) = (horizons.len(), eps_sorted.len());
    let mut values = vec![0.0f64; pairs.len() * h * e];
    for (pi, &(x, y)) in pairs.iter().enumerate() {
        let ri = rep_index(x, y);
        for hi in 0..h {
            let cell = &solved[ri * h + hi];
            for ei in 0..e {
                values[(pi * h + hi) * e + ei] = cell[ei].clamp(0.0, 1.0);
            }
        }
    }
    Ok(GammaTable {
        pairs: pairs.to_vec(),
        pair_weights: weights,
        horizons: horizons.to_vec(),
        epsilons: eps_sorted,
        values,
    })
}

/// Table over all support pairs of `mu`, weighted by `mu (x) mu`.
pub fn gamma_table_from_measure(
    chain: &FiniteChain,
    metric: &Metric,
    mu: &DiscreteMeasure<usize>,
    horizons: &[usize],
    epsilons: &[f64],
) -> Result<GammaTable> {
    let mut support: Vec<(usize, f64)> = Vec::new();
    for (s, &w) in mu.points().iter().zip(mu.weights()) {
        if w > 0.0 {
            support.push((*s, w));
        }
    }
    if support.len() * support.len() > 200_000 {
        return Err(Error::Resource(format!(
            "{} support states give too many pairs for an exact table",
            support.len()
        )));
    }
    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    for &(x, wx) in &support {
        for &(y, wy) in &support {
            pairs.push((x, y));
            weights.push(wx * wy);
        }
    }
    gamma_table(chain, metric, &pairs, Some(&weights), horizons, epsilons)
}

/// The population-averaged closeness and the invariance residual of the
/// averaging measure.
#[derive(Debug, Clone, Copy)]
pub struct AveragedCloseness {
    pub value: f64,
    pub invariance_residual: f64,
}

/// Integrates the closeness probability over `mu (x) mu`.
pub fn big_gamma(
    chain: &FiniteChain,
    metric: &Metric,
    mu: &DiscreteMeasure<usize>,
    n: usize,
    eps: f64,
) -> Result<AveragedCloseness> {
    let residual = chain.invariance_residual(mu);
    let support: Vec<(usize, f64)> = mu
        .points()
        .iter()
        .zip(mu.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, &w)| (*s, w))
        .collect();
    let mut reps: Vec<(usize, usize)> = Vec::new();
    for &(x, _) in &support {
        for &(y, _) in &support {
            if x <= y {
                reps.push((x, y));
            }
        }
    }
    reps.sort_unstable();
    reps.dedup();
    if reps.len() > 200_000 {
        return Err(Error::Resource(format!(
            "{} pairs exceed the exact averaging budget",
            reps.len()
        )));
    }
    let solved: Result<Vec<f64>> = reps
        .par_iter()
        .map(|&(x, y)| gamma(chain, metric, x, y, n, eps))
        .collect();
    let solved = solved?;
    let lookup = |x: usize, y: usize| -> f64 {
        let key = if x <= y { (x, y) } else { (y, x) };
        solved[reps.binary_search(&key).unwrap()]
    };
    let mut acc = 0.0;
    for &(x, wx) in &support {
        for &(y, wy) in &support {
            acc += wx * wy * lookup(x, y);
        }
    }
    Ok(AveragedCloseness {
        value: acc.clamp(0.0, 1.0),
        invariance_residual: residual,
    })
}

/// Thresholds for the grid proxy of "closeness stays positive as eps
/// shrinks".
#[derive(Debug, Clone, Copy)]
pub struct PositivityThresholds {
    /// Minimum proxy value a pair must reach.
    pub gamma_min: f64,
    /// Weighted fraction of pairs that must reach it.
    pub mass_fraction: f64,
    /// Failing pairs at or below this are treated as genuine zeros.
    pub zero_ceiling: f64,
}

impl Default for PositivityThresholds {
    fn default() -> Self {
        Self {
            gamma_min: 0.05,
            mass_fraction: 0.999,
            zero_ceiling: 1e-9,
        }
    }
}

/// Checks that the small-eps, large-n closeness proxy stays positive on
/// enough pair mass.
pub fn closeness_positivity_check(
    table: &GammaTable,
    th: &PositivityThresholds,
) -> ConvergenceReport {
    let mut tolerances = vec![
        ("gamma_min".into(), th.gamma_min),
        ("mass_fraction".into(), th.mass_fraction),
    ];
    let mut notes = Vec::new();
    let mut series = Vec::new();

    // per-eps averaged curve over horizons
    let total_w: f64 = table.pair_weights.iter().sum();
    for (ei, &e) in table.epsilons.iter().enumerate() {
        let pts: Vec<(f64, f64)> = table
            .horizons
            .iter()
            .enumerate()
            .map(|(hi, &n)| {
                let avg: f64 = (0..table.pairs.len())
                    .map(|pi| table.pair_weights[pi] * table.value(pi, hi, ei))
                    .sum::<f64>()
                    / total_w;
                (n as f64, avg)
            })
            .collect();
        series.push(Series {
            label: format!("avg_closeness_eps={e}"),
            points: pts,
            half_widths: Vec::new(),
        });
    }

    if table.horizons.len() < 4 {
        notes.push("fewer than 4 horizons: tail proxy undefined".into());
        return ConvergenceReport {
            quantity: "closeness_positivity".into(),
            series,
            verdict: Verdict::Inconclusive,
            tolerances,
            notes,
        };
    }

    let proxies: Vec<f64> = (0..table.pairs.len()).map(|pi| table.gamma(pi)).collect();
    let ok_mass: f64 = proxies
        .iter()
        .zip(&table.pair_weights)
        .filter(|(&g, _)| g >= th.gamma_min)
        .map(|(_, &w)| w)
        .sum();
    let fraction = ok_mass / total_w;
    let worst_failing = proxies
        .iter()
        .filter(|&&g| g < th.gamma_min)
        .cloned()
        .fold(0.0f64, f64::max);
    series.push(Series {
        label: "pair_proxy".into(),
        points: proxies.iter().enumerate().map(|(i, &g)| (i as f64, g)).collect(),
        half_widths: Vec::new(),
    });
    notes.push(format!(
        "passing pair mass fraction {fraction}; tail window starts at horizon index {}",
        table.horizons.len() / 2
    ));
    tolerances.push(("zero_ceiling".into(), th.zero_ceiling));

    let verdict = if fraction >= th.mass_fraction {
        Verdict::Supports
    } else if worst_failing <= th.zero_ceiling {
        notes.push(format!(
            "failing mass {} sits at exact zero closeness",
            1.0 - fraction
        ));
        Verdict::Refutes
    } else {
        Verdict::Inconclusive
    };
    ConvergenceReport {
        quantity: "closeness_positivity".into(),
        series,
        verdict,
        tolerances,
        notes,
    }
}

/// Settings shared by the Monte-Carlo pair checks.
#[derive(Debug, Clone, Copy)]
pub struct McSettings {
    /// Support threshold: occupation level or closeness deficit.
    pub threshold: f64,
    /// Fraction of the horizon treated as the tail window.
    pub tail_fraction: f64,
    /// Minimum effective sample size before verdicts are allowed.
    pub min_ess: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            tail_fraction: 0.5,
            min_ess: 10.0,
        }
    }
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Estimates the running time-average occupation of the closed
/// eps-neighborhood of the diagonal under a pair sampler and compares the
/// tail maximum against a declared floor.
pub fn occupation_check(
    sampler: &dyn PairSampler,
    metric: &Metric,
    eps: f64,
    n_max: usize,
    reps: usize,
    seed: u64,
    settings: &McSettings,
) -> Result<ConvergenceReport> {
    if reps < 2 || n_max == 0 {
        return Err(Error::InvalidInput("need reps >= 2 and n_max >= 1".into()));
    }
    let mut sum = vec![0.0f64; n_max + 1];
    let mut sumsq = vec![0.0f64; n_max + 1];
    let mut w_row = Vec::with_capacity(reps);
    let mut w_col = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
        let traj = sampler.sample_pair(n_max, &mut rng)?;
        if traj.x.len() != n_max + 1 || traj.y.len() != n_max + 1 {
            return Err(Error::Simulation {
                step: traj.x.len(),
                msg: "pair sampler returned a short trajectory".into(),
            });
        }
        let mut hits = 0.0f64;
        for i in 0..=n_max {
            if metric.eval(&traj.x[i], &traj.y[i]) <= eps {
                hits += 1.0;
            }
            let occ = hits / (i as f64 + 1.0);
            sum[i] += occ;
            sumsq[i] += occ * occ;
        }
        w_row.push(traj.weight_row);
        w_col.push(traj.weight_col);
    }
    let n_reps = reps as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n_reps).collect();
    let hw: Vec<f64> = (0..=n_max)
        .map(|i| {
            let var = (sumsq[i] / n_reps - mean[i] * mean[i]).max(0.0);
            Z95 * (var / n_reps).sqrt()
        })
        .collect();

    let tail_start = ((1.0 - settings.tail_fraction) * n_max as f64) as usize;
    let (mut best, mut best_hw) = (f64::NEG_INFINITY, 0.0);
    for i in tail_start..=n_max {
        if mean[i] > best {
            best = mean[i];
            best_hw = hw[i];
        }
    }
    let ess = effective_sample_size(&w_row).min(effective_sample_size(&w_col));

    let mut notes = vec![
        format!("tail window [{tail_start}, {n_max}], limsup proxy {best} +- {best_hw}"),
        format!("effective sample size {ess}"),
        format!("sampler: {}", sampler.describe()),
    ];
    let verdict = if ess < settings.min_ess {
        notes.push("weight degeneracy: verdict withheld".into());
        Verdict::Inconclusive
    } else if best - best_hw >= settings.threshold {
        Verdict::Supports
    } else if best + best_hw < settings.threshold {
        Verdict::Refutes
    } else {
        Verdict::Inconclusive
    };

    let pts: Vec<(f64, f64)> = mean.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect();
    let (pts, hws) = thin(pts, hw);
    Ok(ConvergenceReport {
        quantity: "diagonal_occupation".into(),
        series: vec![Series {
            label: format!("occupation_eps={eps}"),
            points: pts,
            half_widths: hws,
        }],
        verdict,
        tolerances: vec![
            ("occupation_floor".into(), settings.threshold),
            ("min_ess".into(), settings.min_ess),
        ],
        notes,
    })
}

/// Estimates `P(d(X_n, Y_n) <= eps)` over a horizon grid for each eps and
/// demands the final estimate reach `1 - threshold`.
pub fn pair_convergence_check(
    sampler: &dyn PairSampler,
    metric: &Metric,
    eps_list: &[f64],
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    settings: &McSettings,
) -> Result<ConvergenceReport> {
    if reps < 2 || n_grid.is_empty() || eps_list.is_empty() {
        return Err(Error::InvalidInput("need reps >= 2 and nonempty grids".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let horizon = *grid.last().unwrap();
    let mut sum = vec![vec![0.0f64; grid.len()]; eps_list.len()];
    let mut w_row = Vec::with_capacity(reps);
    let mut w_col = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
        let traj = sampler.sample_pair(horizon, &mut rng)?;
        for (gi, &n) in grid.iter().enumerate() {
            let d = metric.eval(&traj.x[n], &traj.y[n]);
            for (ei, &e) in eps_list.iter().enumerate() {
                if d <= e {
                    sum[ei][gi] += 1.0;
                }
            }
        }
        w_row.push(traj.weight_row);
        w_col.push(traj.weight_col);
    }
    let n_reps = reps as f64;
    let ess = effective_sample_size(&w_row).min(effective_sample_size(&w_col));

    let mut series = Vec::new();
    let mut worst_final = f64::INFINITY;
    let mut worst_final_hw = 0.0;
    for (ei, &e) in eps_list.iter().enumerate() {
        let mut pts = Vec::with_capacity(grid.len());
        let mut hws = Vec::with_capacity(grid.len());
        for (gi, &n) in grid.iter().enumerate() {
            let p = sum[ei][gi] / n_reps;
            pts.push((n as f64, p));
            hws.push(Z95 * (p * (1.0 - p) / n_reps).sqrt());
        }
        let (p_last, hw_last) = (pts.last().unwrap().1, *hws.last().unwrap());
        if p_last < worst_final {
            worst_final = p_last;
            worst_final_hw = hw_last;
        }
        series.push(Series {
            label: format!("closeness_eps={e}"),
            points: pts,
            half_widths: hws,
        });
    }

    let target = 1.0 - settings.threshold;
    let mut notes = vec![
        format!("worst final estimate {worst_final} +- {worst_final_hw} against target {target}"),
        format!("effective sample size {ess}"),
        format!("sampler: {}", sampler.describe()),
    ];
    let verdict = if ess < settings.min_ess {
        notes.push("weight degeneracy: verdict withheld".into());
        Verdict::Inconclusive
    } else if worst_final - worst_final_hw >= target {
        Verdict::Supports
    } else if worst_final + worst_final_hw < target {
        Verdict::Refutes
    } else {
        Verdict::Inconclusive
    };
    Ok(ConvergenceReport {
        quantity: "pair_closeness".into(),
        series,
        verdict,
        tolerances: vec![
            ("closeness_deficit".into(), settings.threshold),
            ("min_ess".into(), settings.min_ess),
        ],
        notes,
    })
}

/// Exact per-state transport distances to `mu` and the mass of states still
/// far after each horizon.
pub fn weak_in_prob_estimate(
    chain: &FiniteChain,
    metric: &Metric,
    mu: &DiscreteMeasure<usize>,
    n_grid: &[usize],
    eps: f64,
    mass_tol: f64,
) -> Result<ConvergenceReport> {
    if n_grid.is_empty() || eps <= 0.0 {
        return Err(Error::InvalidInput("need horizons and eps > 0".into()));
    }
    let residual = chain.invariance_residual(mu);
    let rho = |i: &usize, j: &usize| metric.eval(chain.point(*i), chain.point(*j)).min(1.0);
    let mu_t = mu.trim_zeros();

    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();

    let support: Vec<(usize, f64)> = mu
        .points()
        .iter()
        .zip(mu.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, &w)| (*s, w))
        .collect();

    let rows: Result<Vec<(f64, f64)>> = grid
        .par_iter()
        .map(|&n| {
            let mut mass = 0.0;
            let mut avg = 0.0;
            for &(x, wx) in &support {
                let law = chain.n_step_law(x, n)?.trim_zeros();
                let d = crate::ot::kr_distance(&law, &mu_t, rho)?;
                avg += wx * d;
                if d > eps {
                    mass += wx;
                }
            }
            // transport-distance form of the Markov inequality
            if mass > avg / eps + 1e-9 {
                return Err(Error::Solver {
                    msg: format!("far-state mass {mass} breaks its own average bound at n = {n}"),
                    residual: mass - avg / eps,
                });
            }
            Ok((mass, avg))
        })
        .collect();
    let rows = rows?;

    let mass_pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(&rows)
        .map(|(&n, &(m, _))| (n as f64, m))
        .collect();
    let avg_pts: Vec<(f64, f64)> = grid
        .iter()
        .zip(&rows)
        .map(|(&n, &(_, a))| (n as f64, a))
        .collect();

    let tail_start = grid.len() - grid.len().div_ceil(4);
    let tail_max = mass_pts[tail_start..]
        .iter()
        .map(|&(_, m)| m)
        .fold(0.0f64, f64::max);
    let tail_min = mass_pts[tail_start..]
        .iter()
        .map(|&(_, m)| m)
        .fold(f64::INFINITY, f64::min);

    let mut notes = vec![format!(
        "tail window covers horizons {:?} onward; far-state mass range [{tail_min}, {tail_max}]",
        grid[tail_start]
    )];
    if residual > INVARIANCE_WARN {
        notes.push(format!("reference measure invariance residual {residual}"));
    }
    let verdict = if tail_max <= mass_tol {
        Verdict::Supports
    } else if tail_min >= 0.5 {
        Verdict::Refutes
    } else {
        Verdict::Inconclusive
    };
    Ok(ConvergenceReport {
        quantity: "far_state_mass".into(),
        series: vec![
            Series {
                label: format!("mass_beyond_eps={eps}"),
                points: mass_pts,
                half_widths: Vec::new(),
            },
            Series {
                label: "average_distance".into(),
                points: avg_pts,
                half_widths: Vec::new(),
            },
        ],
        verdict,
        tolerances: vec![("mass_tol".into(), mass_tol), ("refute_floor".into(), 0.5)],
        notes,
    })
}

/// Exact stationary covariance of `f` now and `g` after each lag.
pub fn mixing_estimate(
    chain: &FiniteChain,
    mu: &DiscreteMeasure<usize>,
    f: &[f64],
    g: &[f64],
    lags: &[usize],
    decay_tol: f64,
    refute_floor: f64,
) -> Result<ConvergenceReport> {
    let k = chain.len();
    if f.len() != k || g.len() != k {
        return Err(Error::InvalidInput("observable length mismatch".into()));
    }
    if lags.is_empty() {
        return Err(Error::InvalidInput("empty lag grid".into()));
    }
    let mut grid = lags.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let max_lag = *grid.last().unwrap();

    // weight vector over all states (zero off the support of mu)
    let mut w = vec![0.0f64; k];
    for (s, &m) in mu.points().iter().zip(mu.weights()) {
        w[*s] = m;
    }
    let mf: f64 = (0..k).map(|i| w[i] * f[i]).sum();
    let mg: f64 = (0..k).map(|i| w[i] * g[i]).sum();

    let mut gv = g.to_vec();
    let mut pts = Vec::with_capacity(grid.len());
    let mut gi = 0;
    for n in 0..=max_lag {
        if gi < grid.len() && grid[gi] == n {
            let cross: f64 = (0..k).map(|i| w[i] * f[i] * gv[i]).sum();
            pts.push((n as f64, cross - mf * mg));
            gi += 1;
        }
        if n < max_lag {
            let mut next = vec![0.0f64; k];
            for i in 0..k {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += chain.prob(i, j) * gv[j];
                }
                next[i] = acc;
            }
            gv = next;
        }
    }

    let tail_start = grid.len() - grid.len().div_ceil(4);
    let tail_abs: Vec<f64> = pts[tail_start..].iter().map(|&(_, c)| c.abs()).collect();
    let tail_max = tail_abs.iter().cloned().fold(0.0f64, f64::max);
    let tail_min = tail_abs.iter().cloned().fold(f64::INFINITY, f64::min);
    let verdict = if tail_max <= decay_tol {
        Verdict::Supports
    } else if tail_min >= refute_floor {
        Verdict::Refutes
    } else {
        Verdict::Inconclusive
    };
    let residual = chain.invariance_residual(mu);
    let mut notes = vec![format!(
        "tail |covariance| within [{tail_min}, {tail_max}] from lag {}",
        pts[tail_start].0
    )];
    if residual > INVARIANCE_WARN {
        notes.push(format!("reference measure invariance residual {residual}"));
    }
    Ok(ConvergenceReport {
        quantity: "stationary_covariance".into(),
        series: vec![Series {
            label: "covariance".into(),
            points: pts,
            half_widths: Vec::new(),
        }],
        verdict,
        tolerances: vec![
            ("decay_tol".into(), decay_tol),
            ("refute_floor".into(), refute_floor),
        ],
        notes,
    })
}

/// Monte-Carlo covariance decay for sampler chains: trajectories start from
/// a caller-provided draw of the (approximately) stationary law.
pub fn mixing_estimate_mc(
    sampler: &SamplerChain,
    init: &(dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync),
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    lags: &[usize],
    reps: usize,
    seed: u64,
    decay_tol: f64,
) -> Result<ConvergenceReport> {
    if reps < 2 || lags.is_empty() {
        return Err(Error::InvalidInput("need reps >= 2 and lags".into()));
    }
    let mut grid = lags.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let horizon = *grid.last().unwrap();

    let mut f0 = Vec::with_capacity(reps);
    let mut gvals = vec![Vec::with_capacity(reps); grid.len()];
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
        let x0 = init(&mut rng);
        let path = sampler.simulate(&x0, horizon, &mut rng)?;
        f0.push(f(&path[0]));
        for (gix, &n) in grid.iter().enumerate() {
            gvals[gix].push(g(&path[n]));
        }
    }
    let n_reps = reps as f64;
    let mean_f: f64 = f0.iter().sum::<f64>() / n_reps;
    let mut pts = Vec::with_capacity(grid.len());
    let mut hws = Vec::with_capacity(grid.len());
    for (gix, &n) in grid.iter().enumerate() {
        let mean_g: f64 = gvals[gix].iter().sum::<f64>() / n_reps;
        let prods: Vec<f64> = f0
            .iter()
            .zip(&gvals[gix])
            .map(|(&a, &b)| (a - mean_f) * (b - mean_g))
            .collect();
        let cov = prods.iter().sum::<f64>() / n_reps;
        let var = prods.iter().map(|p| (p - cov) * (p - cov)).sum::<f64>() / n_reps;
        pts.push((n as f64, cov));
        hws.push(Z95 * (var / n_reps).sqrt());
    }
    let (last, last_hw) = (pts.last().unwrap().1, *hws.last().unwrap());
    let verdict = if last.abs() + last_hw <= decay_tol {
        Verdict::Supports
    } else if last.abs() - last_hw > decay_tol {
        Verdict::Refutes
    } else {
        Verdict::Inconclusive
    };
    Ok(ConvergenceReport {
        quantity: "stationary_covariance".into(),
        series: vec![Series {
            label: "covariance_mc".into(),
            points: pts,
            half_widths: hws,
        }],
        verdict,
        tolerances: vec![("decay_tol".into(), decay_tol)],
        notes: vec!["Monte-Carlo estimate from sampled trajectories".into()],
    })
}

/// Verifies the one-step averaging inequality for the closeness field and
/// the monotonicity of its population average.
///
/// Both are theorems for exact solves, so a refutation here points at a
/// solver defect rather than at the chain.
pub fn supermartingale_check(
    chain: &FiniteChain,
    metric: &Metric,
    mu: &DiscreteMeasure<usize>,
    n_grid: &[usize],
    eps: f64,
) -> Result<ConvergenceReport> {
    if n_grid.is_empty() {
        return Err(Error::InvalidInput("empty horizon grid".into()));
    }
    let support: Vec<usize> = mu
        .points()
        .iter()
        .zip(mu.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, _)| *s)
        .collect();
    // an invariant measure's support is closed under the dynamics, so all
    // one-step successors of support pairs stay inside the table
    let mut horizons: Vec<usize> = n_grid.to_vec();
    horizons.extend(n_grid.iter().map(|&n| n + 1));
    horizons.sort_unstable();
    horizons.dedup();

    let mut reps: Vec<(usize, usize)> = Vec::new();
    for &x in &support {
        for &y in &support {
            if x <= y {
                reps.push((x, y));
            }
        }
    }
    if reps.len() * horizons.len() > 400_000 {
        return Err(Error::Resource("averaging check grid too large".into()));
    }
    let solved: Result<Vec<f64>> = reps
        .par_iter()
        .flat_map(|&(x, y)| {
            horizons
                .par_iter()
                .map(move |&n| gamma(chain, metric, x, y, n, eps))
        })
        .collect();
    let solved = solved?;
    let lookup = |x: usize, y: usize, n: usize| -> f64 {
        let key = if x <= y { (x, y) } else { (y, x) };
        let ri = reps.binary_search(&key).unwrap();
        let hi = horizons.binary_search(&n).unwrap();
        solved[ri * horizons.len() + hi]
    };

    let mut w = std::collections::HashMap::new();
    for (s, &m) in mu.points().iter().zip(mu.weights()) {
        if m > 0.0 {
            w.insert(*s, m);
        }
    }

    let mut worst = f64::INFINITY;
    let mut step_pts = Vec::new();
    let mut avg_pts = Vec::new();
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    for &n in &grid {
        let mut step_worst = f64::INFINITY;
        for &x in &support {
            for &y in &support {
                if x > y {
                    continue;
                }
                let mut expect = 0.0;
                for &xp in &support {
                    let px = chain.prob(x, xp);
                    if px == 0.0 {
                        continue;
                    }
                    for &yp in &support {
                        let py = chain.prob(y, yp);
                        if py > 0.0 {
                            expect += px * py * lookup(xp, yp, n);
                        }
                    }
                }
                let margin = lookup(x, y, n + 1) - expect;
                step_worst = step_worst.min(margin);
            }
        }
        let avg_n: f64 = support
            .iter()
            .flat_map(|&x| support.iter().map(move |&y| (x, y)))
            .map(|(x, y)| w[&x] * w[&y] * lookup(x, y, n))
            .sum();
        let avg_n1: f64 = support
            .iter()
            .flat_map(|&x| support.iter().map(move |&y| (x, y)))
            .map(|(x, y)| w[&x] * w[&y] * lookup(x, y, n + 1))
            .sum();
        step_worst = step_worst.min(avg_n1 - avg_n);
        worst = worst.min(step_worst);
        step_pts.push((n as f64, step_worst));
        avg_pts.push((n as f64, avg_n));
    }

    let verdict = if worst >= -1e-9 {
        Verdict::Supports
    } else {
        Verdict::Refutes
    };
    Ok(ConvergenceReport {
        quantity: "closeness_averaging".into(),
        series: vec![
            Series {
                label: "worst_margin".into(),
                points: step_pts,
                half_widths: Vec::new(),
            },
            Series {
                label: format!("avg_closeness_eps={eps}"),
                points: avg_pts,
                half_widths: Vec::new(),
            },
        ],
        verdict,
        tolerances: vec![("margin_floor".into(), -1e-9)],
        notes: vec![format!("worst margin {worst}")],
    })
}

/// Thresholds for the equicontinuity probe.
#[derive(Debug, Clone, Copy)]
pub struct EquicontinuityThresholds {
    /// Persisting sup-distance at the tightest radius at or above this
    /// refutes equicontinuity at the probe point.
    pub refute_floor: f64,
    /// Sup-distance at the tightest radius at or below this supports it.
    pub support_ceiling: f64,
}

impl Default for EquicontinuityThresholds {
    fn default() -> Self {
        Self {
            refute_floor: 0.25,
            support_ceiling: 0.1,
        }
    }
}

/// Probes whether n-step laws from nearby starts stay uniformly close: for
/// each radius, takes the farthest state within it and the sup over the
/// horizon grid of the transport distance between the two law sequences.
pub fn equicontinuity_probe(
    chain: &FiniteChain,
    metric: &Metric,
    x0: usize,
    radius_grid: &[f64],
    n_grid: &[usize],
    th: &EquicontinuityThresholds,
) -> Result<ConvergenceReport> {
    if x0 >= chain.len() {
        return Err(Error::UnknownState(format!("state {x0}")));
    }
    if radius_grid.is_empty() || n_grid.is_empty() {
        return Err(Error::InvalidInput("empty probe grid".into()));
    }
    let mut radii = radius_grid.to_vec();
    radii.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let rho = |i: &usize, j: &usize| metric.eval(chain.point(*i), chain.point(*j)).min(1.0);

    let mut pts = Vec::new();
    let mut notes = Vec::new();
    for &r in &radii {
        let mut pick: Option<(usize, f64)> = None;
        for y in 0..chain.len() {
            if y == x0 {
                continue;
            }
            let d = metric.eval(chain.point(x0), chain.point(y));
            if d <= r && pick.map_or(true, |(_, best)| d > best) {
                pick = Some((y, d));
            }
        }
        let Some((y, d)) = pick else { continue };
        let sup: Result<f64> = n_grid
            .par_iter()
            .map(|&n| {
                let a = chain.n_step_law(x0, n)?.trim_zeros();
                let b = chain.n_step_law(y, n)?.trim_zeros();
                crate::ot::kr_distance(&a, &b, rho)
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)));
        pts.push((d, sup?));
    }
    if pts.is_empty() {
        return Err(Error::InvalidInput(
            "no state falls inside any probe radius".into(),
        ));
    }
    let (tight_d, tight_sup) = *pts.last().unwrap();
    notes.push(format!(
        "tightest pair at distance {tight_d} keeps sup distance {tight_sup}"
    ));
    let verdict = if tight_sup >= th.refute_floor {
        Verdict::Refutes
    } else if tight_sup <= th.support_ceiling {
        Verdict::Supports
    } else {
        Verdict::Inconclusive
    };
    Ok(ConvergenceReport {
        quantity: "law_equicontinuity".into(),
        series: vec![Series {
            label: format!("sup_distance_from_{x0}"),
            points: pts,
            half_widths: Vec::new(),
        }],
        verdict,
        tolerances: vec![
            ("refute_floor".into(), th.refute_floor),
            ("support_ceiling".into(), th.support_ceiling),
        ],
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{SynchronousCoupling, WeightedPairTrajectory};
    use crate::measure::total_variation;
    use approx::assert_abs_diff_eq;

    fn flip_chain() -> FiniteChain {
        FiniteChain::from_matrix(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn half_half() -> DiscreteMeasure<usize> {
        DiscreteMeasure::new(vec![0, 1], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn gamma_is_one_on_the_diagonal() {
        let c = flip_chain();
        for n in [0, 1, 7] {
            assert_eq!(gamma(&c, &Metric::EuclideanTruncated, 0, 0, n, 0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn flip_chain_off_diagonal_gamma_vanishes() {
        // the two n-step laws are point masses at opposite states
        let c = flip_chain();
        for n in 0..5 {
            let g = gamma(&c, &Metric::EuclideanTruncated, 0, 1, n, 0.5).unwrap();
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gamma_at_zero_eps_is_one_minus_tv() {
        let c = FiniteChain::from_matrix(vec![
            vec![0.5, 0.3, 0.2],
            vec![0.1, 0.6, 0.3],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        for n in [1usize, 2, 3] {
            let a = c.n_step_law(0, n).unwrap().trim_zeros();
            let b = c.n_step_law(1, n).unwrap().trim_zeros();
            let tv = total_variation(&a, &b);
            let g = gamma(&c, &Metric::EuclideanTruncated, 0, 1, n, 0.0).unwrap();
            assert_abs_diff_eq!(g, 1.0 - tv, epsilon = 1e-9);
        }
    }

    #[test]
    fn gamma_respects_transport_markov_bound() {
        // closeness >= 1 - distance/eps for bounded metrics
        let c = FiniteChain::from_matrix(vec![
            vec![0.2, 0.5, 0.3],
            vec![0.4, 0.2, 0.4],
            vec![0.25, 0.25, 0.5],
        ])
        .unwrap();
        let m = Metric::EuclideanTruncated;
        for n in [1usize, 3] {
            for &eps in &[0.2, 0.5, 1.0] {
                let a = c.n_step_law(0, n).unwrap().trim_zeros();
                let b = c.n_step_law(2, n).unwrap().trim_zeros();
                let kr = crate::ot::kr_distance(&a, &b, |i, j| {
                    m.eval(c.point(*i), c.point(*j)).min(1.0)
                })
                .unwrap();
                let g = gamma(&c, &m, 0, 2, n, eps).unwrap();
                assert!(g >= 1.0 - kr / eps - 1e-9, "g={g} kr={kr} eps={eps}");
            }
        }
    }

    #[test]
    fn identical_rows_average_to_one_after_a_step() {
        let c = FiniteChain::from_matrix(vec![
            vec![0.3, 0.3, 0.4],
            vec![0.3, 0.3, 0.4],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let mu = c
            .invariant_measure(crate::chain::InvariantSolver::Nullspace)
            .unwrap()
            .measure;
        let g = big_gamma(&c, &Metric::EuclideanTruncated, &mu, 1, 0.0).unwrap();
        assert_abs_diff_eq!(g.value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn flip_chain_average_closeness_is_half() {
        let c = flip_chain();
        for n in [0usize, 1, 5] {
            let g = big_gamma(&c, &Metric::EuclideanTruncated, &half_half(), n, 0.5).unwrap();
            assert_abs_diff_eq!(g.value, 0.5, epsilon = 1e-12);
            assert!(g.invariance_residual < 1e-15);
        }
    }

    #[test]
    fn zero_horizon_average_is_the_collision_mass() {
        let c = FiniteChain::from_matrix(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.2, 0.3, 0.5],
            vec![0.1, 0.4, 0.5],
        ])
        .unwrap();
        let mu = DiscreteMeasure::new(vec![0, 1, 2], vec![0.2, 0.3, 0.5]).unwrap();
        let g = big_gamma(&c, &Metric::EuclideanTruncated, &mu, 0, 1e-9).unwrap();
        let collide = 0.2f64 * 0.2 + 0.3 * 0.3 + 0.5 * 0.5;
        assert_abs_diff_eq!(g.value, collide, epsilon = 1e-12);
    }

    #[test]
    fn positivity_check_passes_single_state_chain() {
        let c = FiniteChain::from_matrix(vec![vec![1.0]]).unwrap();
        let t = gamma_table(
            &c,
            &Metric::EuclideanTruncated,
            &[(0, 0)],
            None,
            &[0, 1, 2, 3, 4],
            &[0.0, 0.1],
        )
        .unwrap();
        let r = closeness_positivity_check(&t, &PositivityThresholds::default());
        assert_eq!(r.verdict, Verdict::Supports);
        assert_eq!(t.gamma(0), 1.0);
    }

    #[test]
    fn positivity_check_refutes_flip_chain() {
        let c = flip_chain();
        let mu = half_half();
        let t = gamma_table_from_measure(
            &c,
            &Metric::EuclideanTruncated,
            &mu,
            &[1, 2, 3, 4, 5, 6],
            &[0.1, 0.4],
        )
        .unwrap();
        let r = closeness_positivity_check(&t, &PositivityThresholds::default());
        assert_eq!(r.verdict, Verdict::Refutes);
    }

    #[test]
    fn short_horizon_grid_is_inconclusive() {
        let c = flip_chain();
        let t = gamma_table(
            &c,
            &Metric::EuclideanTruncated,
            &[(0, 1)],
            None,
            &[1, 2],
            &[0.1],
        )
        .unwrap();
        let r = closeness_positivity_check(&t, &PositivityThresholds::default());
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn synchronous_coupling_from_equal_starts_occupies_fully() {
        let c = FiniteChain::from_matrix(vec![
            vec![0.5, 0.25, 0.25],
            vec![0.25, 0.5, 0.25],
            vec![0.25, 0.25, 0.5],
        ])
        .unwrap();
        let s = SynchronousCoupling { chain: &c, x0: 1, y0: 1 };
        let r = occupation_check(
            &s,
            &Metric::EuclideanTruncated,
            0.0,
            200,
            20,
            7,
            &McSettings::default(),
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Supports);
        let last = r.series[0].points.last().unwrap().1;
        assert_abs_diff_eq!(last, 1.0);
    }

    struct ContractionPair;
    impl PairSampler for ContractionPair {
        fn sample_pair(
            &self,
            horizon: usize,
            _rng: &mut ChaCha8Rng,
        ) -> crate::Result<WeightedPairTrajectory> {
            let x: Vec<Vec<f64>> = (0..=horizon).map(|_| vec![0.0]).collect();
            let y: Vec<Vec<f64>> = (0..=horizon)
                .map(|n| vec![0.75 * 0.5f64.powi(n as i32)])
                .collect();
            Ok(WeightedPairTrajectory { x, y, weight_row: 1.0, weight_col: 1.0 })
        }
        fn describe(&self) -> String {
            "deterministic halving pair".into()
        }
    }

    #[test]
    fn deterministic_contraction_converges_for_every_eps() {
        let r = pair_convergence_check(
            &ContractionPair,
            &Metric::EuclideanTruncated,
            &[0.1, 0.01],
            &[1, 5, 10, 20, 40],
            50,
            3,
            &McSettings { threshold: 0.05, ..Default::default() },
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Supports);
    }

    struct DegenerateWeights;
    impl PairSampler for DegenerateWeights {
        fn sample_pair(
            &self,
            horizon: usize,
            rng: &mut ChaCha8Rng,
        ) -> crate::Result<WeightedPairTrajectory> {
            use rand::Rng;
            // heavy-tailed weights: the largest draw dominates the sum, so
            // the effective sample size collapses to about 1
            let w = (60.0 * rng.gen::<f64>()).exp();
            let path: Vec<Vec<f64>> = (0..=horizon).map(|_| vec![0.0]).collect();
            Ok(WeightedPairTrajectory {
                x: path.clone(),
                y: path,
                weight_row: w,
                weight_col: 1.0,
            })
        }
        fn describe(&self) -> String {
            "weight-degenerate pair".into()
        }
    }

    #[test]
    fn weight_collapse_withholds_the_verdict() {
        let r = occupation_check(
            &DegenerateWeights,
            &Metric::EuclideanTruncated,
            0.5,
            50,
            40,
            11,
            &McSettings::default(),
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn far_state_mass_is_zero_beyond_the_diameter() {
        let c = FiniteChain::from_matrix(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let mu = half_half();
        let r = weak_in_prob_estimate(&c, &Metric::EuclideanTruncated, &mu, &[0], 2.0, 0.01)
            .unwrap();
        assert_abs_diff_eq!(r.series[0].points[0].1, 0.0);
    }

    #[test]
    fn flip_chain_keeps_all_mass_far() {
        let c = flip_chain();
        let grid: Vec<usize> = (0..12).collect();
        let r = weak_in_prob_estimate(
            &c,
            &Metric::EuclideanTruncated,
            &half_half(),
            &grid,
            0.4,
            0.01,
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Refutes);
        for &(_, m) in &r.series[0].points {
            assert_abs_diff_eq!(m, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_observable_has_zero_covariance() {
        let c = flip_chain();
        let r = mixing_estimate(
            &c,
            &half_half(),
            &[2.5, 2.5],
            &[1.0, -1.0],
            &(0..8).collect::<Vec<_>>(),
            1e-12,
            0.05,
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Supports);
        for &(_, cv) in &r.series[0].points {
            assert_abs_diff_eq!(cv, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn flip_chain_covariance_oscillates_and_refutes_mixing() {
        let c = flip_chain();
        let ind0 = vec![1.0, 0.0];
        let lags: Vec<usize> = (0..10).collect();
        let r = mixing_estimate(&c, &half_half(), &ind0, &ind0, &lags, 1e-3, 0.05).unwrap();
        assert_eq!(r.verdict, Verdict::Refutes);
        for &(n, cv) in &r.series[0].points {
            let expect = if (n as usize) % 2 == 0 { 0.25 } else { -0.25 };
            assert_abs_diff_eq!(cv, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn averaging_check_holds_on_the_flip_chain() {
        let c = flip_chain();
        let r = supermartingale_check(
            &c,
            &Metric::EuclideanTruncated,
            &half_half(),
            &[0, 1, 2, 3],
            0.5,
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Supports);
    }

    #[test]
    fn huge_eps_makes_all_margins_zero() {
        let c = FiniteChain::from_matrix(vec![
            vec![0.9, 0.1],
            vec![0.3, 0.7],
        ])
        .unwrap();
        let mu = c
            .invariant_measure(crate::chain::InvariantSolver::Nullspace)
            .unwrap()
            .measure;
        let r = supermartingale_check(&c, &Metric::EuclideanTruncated, &mu, &[0, 1, 2], 5.0)
            .unwrap();
        assert_eq!(r.verdict, Verdict::Supports);
        for &(_, m) in &r.series[0].points {
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_chain_laws_are_equicontinuous() {
        let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 / 100.0]).collect();
        let labels: Vec<String> = (0..9).map(|i| i.to_string()).collect();
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|i| (0..9).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let c = FiniteChain::new(labels, pts, rows).unwrap();
        let r = equicontinuity_probe(
            &c,
            &Metric::EuclideanTruncated,
            0,
            &[0.08, 0.04, 0.02, 0.01],
            &[0, 1, 2, 5],
            &EquicontinuityThresholds::default(),
        )
        .unwrap();
        assert_eq!(r.verdict, Verdict::Supports);
    }

    #[test]
    fn report_csv_has_one_row_per_point() {
        let r = ConvergenceReport {
            quantity: "q".into(),
            series: vec![Series {
                label: "s".into(),
                points: vec![(0.0, 1.0), (1.0, 0.5)],
                half_widths: vec![0.1, 0.2],
            }],
            verdict: Verdict::Supports,
            tolerances: vec![("tol".into(), 0.1)],
            notes: vec![],
        };
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("quantity,series,x,value,half_width\n"));
        assert!(r.summary().contains("supports"));
    }
}
