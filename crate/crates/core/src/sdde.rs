//! Euler integration of stochastic delay equations and the drift-steered
//! pair construction whose change of measure is tracked along the path.
//!
//! Both components of a pair share the same Wiener increments; the second
//! receives the extra drift `lambda * (X - Y)`. Writing that drift as the
//! diffusion matrix applied to a control `beta` makes the second path a
//! reweighted copy of the first equation, with log-weight
//! `-sum beta . dW - 1/2 sum |beta|^2 dt` accumulated step by step.

use crate::diagnostics::{ConvergenceReport, Series, Verdict};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

/// Relative cutoff below which singular values are treated as zero when
/// inverting the diffusion matrix.
pub const SINGULAR_VALUE_CUTOFF: f64 = 1e-10;

/// Grid tolerance when checking that `dt` divides the delay and the horizon.
const GRID_TOL: f64 = 1e-9;

/// Path segment over the delay window [-1, 0] on a uniform grid.
///
/// Node 0 holds the value at lag -1 and the last node the current position,
/// so one integration step drops the front node and appends the new point.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentState {
    dt: f64,
    dim: usize,
    values: VecDeque<Vec<f64>>,
}

impl SegmentState {
    /// Builds a segment from `f(s)` sampled at `k + 1` nodes, `s` running
    /// over the grid `-1, -1 + 1/k, ..., 0`.
    pub fn from_fn(k: usize, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("segment needs at least one step".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("segment dimension zero".into()));
        }
        let mut values = VecDeque::with_capacity(k + 1);
        for i in 0..=k {
            let s = i as f64 / k as f64 - 1.0;
            let v = f(s);
            if v.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "segment node at s = {s} has dimension {} instead of {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|a| !a.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "segment node at s = {s} is not finite"
                )));
            }
            values.push_back(v);
        }
        Ok(Self {
            dt: 1.0 / k as f64,
            dim,
            values,
        })
    }

    /// Segment frozen at a single point.
    pub fn constant(point: &[f64], k: usize) -> Result<Self> {
        Self::from_fn(k, point.len(), |_| point.to_vec())
    }

    /// Number of grid steps across the delay window.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Current position, the value at lag 0.
    pub fn head(&self) -> &[f64] {
        self.values.back().expect("segment is nonempty")
    }

    /// Oldest stored value, the value at lag -1.
    pub fn delayed(&self) -> &[f64] {
        self.values.front().expect("segment is nonempty")
    }

    /// Node `i` counting from the lag -1 end.
    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    fn advance(&mut self, new_point: Vec<f64>) {
        self.values.pop_front();
        self.values.push_back(new_point);
    }
}

type DriftFn = Arc<dyn Fn(&SegmentState) -> Vec<f64> + Send + Sync>;
type DiffusionFn = Arc<dyn Fn(&SegmentState) -> DMatrix<f64> + Send + Sync>;

/// A delay equation `dX = F(X_seg) dt + G(X_seg) dW` with declared
/// regularity constants.
///
/// `g_inv_bound` caps the norm of the diffusion inverse; every integration
/// step checks the pseudo-inverse against it, so rank deficiency surfaces
/// as a model error rather than a silent blow-up of the control.
#[derive(Clone)]
pub struct SfdeSpec {
    pub name: String,
    pub dim: usize,
    pub drift_lipschitz: f64,
    pub g_inv_bound: f64,
    drift: DriftFn,
    diffusion: DiffusionFn,
}

impl std::fmt::Debug for SfdeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SfdeSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("drift_lipschitz", &self.drift_lipschitz)
            .field("g_inv_bound", &self.g_inv_bound)
            .finish()
    }
}

impl SfdeSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: impl Fn(&SegmentState) -> Vec<f64> + Send + Sync + 'static,
        diffusion: impl Fn(&SegmentState) -> DMatrix<f64> + Send + Sync + 'static,
        drift_lipschitz: f64,
        g_inv_bound: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("state dimension zero".into()));
        }
        if !(g_inv_bound.is_finite() && g_inv_bound > 0.0) {
            return Err(Error::InvalidInput(format!(
                "diffusion inverse bound {g_inv_bound} must be positive and finite"
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            drift_lipschitz,
            g_inv_bound,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        })
    }

    /// Drift `-rate * x(0)` with constant diffusion `sigma * I`. With
    /// `rate = 0` this is the benchmark whose pair gap obeys a closed form.
    pub fn linear(dim: usize, rate: f64, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidInput(format!("noise level {sigma} must be positive")));
        }
        if !rate.is_finite() {
            return Err(Error::InvalidInput("drift rate is not finite".into()));
        }
        Self::new(
            "linear",
            dim,
            move |seg| seg.head().iter().map(|a| -rate * a).collect(),
            move |_| DMatrix::identity(dim, dim) * sigma,
            rate.abs(),
            1.0 / sigma + 1e-9,
        )
    }

    /// Drift `amp * sin(x(-1))` acting through the delayed value only, unit
    /// diffusion.
    pub fn delayed_sine(dim: usize, amp: f64) -> Result<Self> {
        if !amp.is_finite() {
            return Err(Error::InvalidInput("amplitude is not finite".into()));
        }
        Self::new(
            "delayed-sine",
            dim,
            move |seg| seg.delayed().iter().map(|a| amp * a.sin()).collect(),
            move |_| DMatrix::identity(dim, dim),
            amp.abs(),
            1.0 + 1e-9,
        )
    }

    /// Componentwise `rate * x(0) * (1 - x(-1))` with the diagonal
    /// state-dependent diffusion `base + gain * sin(x(0))`; requires
    /// `base > |gain|` so the diffusion stays invertible.
    pub fn logistic_delay(dim: usize, rate: f64, base: f64, gain: f64) -> Result<Self> {
        if !(rate.is_finite() && base.is_finite() && gain.is_finite()) {
            return Err(Error::InvalidInput("logistic parameters not finite".into()));
        }
        if base - gain.abs() <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "diffusion floor {base} - |{gain}| is not positive"
            )));
        }
        let floor = base - gain.abs();
        Self::new(
            "logistic-delay",
            dim,
            move |seg| {
                seg.head()
                    .iter()
                    .zip(seg.delayed())
                    .map(|(now, del)| rate * now * (1.0 - del))
                    .collect()
            },
            move |seg| {
                DMatrix::from_diagonal(&DVector::from_iterator(
                    dim,
                    seg.head().iter().map(|a| base + gain * a.sin()),
                ))
            },
            rate.abs() * 4.0,
            1.0 / floor + 1e-9,
        )
    }

    /// Builds a named system; unknown keys in `params` are rejected so
    /// config typos fail loudly.
    pub fn by_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |key: &str, default: f64| params.get(key).copied().unwrap_or(default);
        let allow = |allowed: &[&str]| -> Result<()> {
            for key in params.keys() {
                if !allowed.contains(&key.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "system {name} does not take a parameter {key:?}"
                    )));
                }
            }
            Ok(())
        };
        let dim = get("dim", 1.0);
        if dim.fract() != 0.0 || dim < 1.0 || dim > 64.0 {
            return Err(Error::InvalidInput(format!("dim {dim} outside 1..=64")));
        }
        let dim = dim as usize;
        match name {
            "linear" => {
                allow(&["dim", "rate", "sigma"])?;
                Self::linear(dim, get("rate", 1.0), get("sigma", 1.0))
            }
            "delayed-sine" => {
                allow(&["dim", "amp"])?;
                Self::delayed_sine(dim, get("amp", 1.0))
            }
            "logistic-delay" => {
                allow(&["dim", "rate", "base", "gain"])?;
                Self::logistic_delay(dim, get("rate", 1.0), get("base", 1.0), get("gain", 0.5))
            }
            other => Err(Error::InvalidInput(format!("unknown system {other:?}"))),
        }
    }

    pub fn drift(&self, seg: &SegmentState) -> Result<Vec<f64>> {
        let v = (self.drift)(seg);
        if v.len() != self.dim || v.iter().any(|a| !a.is_finite()) {
            return Err(Error::Model(format!(
                "drift of {} returned an invalid vector",
                self.name
            )));
        }
        Ok(v)
    }

    pub fn diffusion(&self, seg: &SegmentState) -> Result<DMatrix<f64>> {
        let g = (self.diffusion)(seg);
        if g.nrows() != self.dim || g.ncols() != self.dim || g.iter().any(|a| !a.is_finite()) {
            return Err(Error::Model(format!(
                "diffusion of {} returned an invalid matrix",
                self.name
            )));
        }
        Ok(g)
    }

    /// Pseudo-inverse of the diffusion with the relative singular-value
    /// cutoff, checked against the declared inverse bound.
    fn diffusion_pinv(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let svd = g.clone().svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        if smax <= 0.0 {
            return Err(Error::Model(format!(
                "diffusion of {} vanished entirely",
                self.name
            )));
        }
        let cutoff = SINGULAR_VALUE_CUTOFF * smax;
        let smallest_kept = svd
            .singular_values
            .iter()
            .cloned()
            .filter(|s| *s > cutoff)
            .fold(f64::INFINITY, f64::min);
        if 1.0 / smallest_kept > self.g_inv_bound {
            return Err(Error::Model(format!(
                "diffusion inverse norm {} of {} exceeds the declared bound {}",
                1.0 / smallest_kept,
                self.name,
                self.g_inv_bound
            )));
        }
        svd.pseudo_inverse(cutoff)
            .map_err(|e| Error::Model(format!("pseudo-inverse of {} failed: {e}", self.name)))
    }
}

/// Running change-of-measure state for the steered component.
#[derive(Debug, Clone, Default)]
pub struct GirsanovTracker {
    /// Accumulated `sum |beta|^2 dt`; nondecreasing.
    pub int_beta_sq: f64,
    /// Accumulated `-sum beta . dW - 1/2 sum |beta|^2 dt`.
    pub log_density: f64,
}

impl GirsanovTracker {
    fn update(&mut self, beta: &DVector<f64>, dw: &DVector<f64>, dt: f64) {
        let sq = beta.norm_squared();
        self.int_beta_sq += sq * dt;
        self.log_density -= beta.dot(dw) + 0.5 * sq * dt;
    }

    pub fn density(&self) -> f64 {
        self.log_density.exp()
    }
}

/// Output of one coupled integration.
#[derive(Debug, Clone)]
pub struct PairPath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Running `sum |beta|^2 dt` after each step; index 0 is 0.
    pub int_beta_sq: Vec<f64>,
    pub tracker: GirsanovTracker,
}

impl PairPath {
    pub fn gap(&self, k: usize) -> f64 {
        self.x[k]
            .iter()
            .zip(&self.y[k])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn gaps(&self) -> Vec<f64> {
        (0..self.times.len()).map(|k| self.gap(k)).collect()
    }

    /// Rows `t, x_1..x_m, y_1..y_m, gap, int_beta_sq`.
    pub fn to_csv(&self) -> String {
        let dim = self.x[0].len();
        let mut out = String::from("t");
        for i in 1..=dim {
            let _ = write!(out, ",x_{i}");
        }
        for i in 1..=dim {
            let _ = write!(out, ",y_{i}");
        }
        out.push_str(",gap,int_beta_sq\n");
        for k in 0..self.times.len() {
            let _ = write!(out, "{}", self.times[k]);
            for a in &self.x[k] {
                let _ = write!(out, ",{a}");
            }
            for a in &self.y[k] {
                let _ = write!(out, ",{a}");
            }
            let _ = writeln!(out, ",{},{}", self.gap(k), self.int_beta_sq[k]);
        }
        out
    }
}

fn check_grid(spec: &SfdeSpec, f: &SegmentState, g: &SegmentState, lambda: f64, t_max: f64, dt: f64) -> Result<usize> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda {lambda} must be >= 0")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt {dt} must be positive")));
    }
    let k = 1.0 / dt;
    if (k - k.round()).abs() > GRID_TOL * k.max(1.0) || k.round() < 1.0 {
        return Err(Error::InvalidInput(format!(
            "dt {dt} does not divide the delay window of length 1"
        )));
    }
    let steps = t_max / dt;
    if !(t_max > 0.0) || (steps - steps.round()).abs() > GRID_TOL * steps.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "horizon {t_max} is not a positive multiple of dt {dt}"
        )));
    }
    let k = k.round() as usize;
    for (label, seg) in [("first", f), ("second", g)] {
        if seg.dim() != spec.dim {
            return Err(Error::InvalidInput(format!(
                "{label} segment dimension {} does not match the system dimension {}",
                seg.dim(),
                spec.dim
            )));
        }
        if seg.steps() != k {
            return Err(Error::InvalidInput(format!(
                "{label} segment has {} steps but dt {dt} needs {k}",
                seg.steps()
            )));
        }
    }
    Ok(steps.round() as usize)
}

/// Integrates both equations with shared noise, accumulating the control
/// needed to absorb the extra drift `lambda (X - Y)` into the noise of the
/// second component. Deterministic given the seed.
pub fn integrate_pair(
    spec: &SfdeSpec,
    f: &SegmentState,
    g: &SegmentState,
    lambda: f64,
    t_max: f64,
    dt: f64,
    seed: u64,
) -> Result<PairPath> {
    let steps = check_grid(spec, f, g, lambda, t_max, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = dt.sqrt();
    let increments: Vec<DVector<f64>> = (0..steps)
        .map(|_| {
            DVector::from_iterator(
                spec.dim,
                (0..spec.dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale),
            )
        })
        .collect();
    integrate_pair_with_increments(spec, f, g, lambda, dt, &increments)
}

/// Deterministic core of [`integrate_pair`]: one Euler step per provided
/// Wiener increment. Exposed so refinement studies can reuse one fine
/// noise path at several resolutions.
pub fn integrate_pair_with_increments(
    spec: &SfdeSpec,
    f: &SegmentState,
    g: &SegmentState,
    lambda: f64,
    dt: f64,
    increments: &[DVector<f64>],
) -> Result<PairPath> {
    let t_max = increments.len() as f64 * dt;
    if increments.is_empty() {
        return Err(Error::InvalidInput("no increments supplied".into()));
    }
    check_grid(spec, f, g, lambda, t_max, dt)?;
    let dim = spec.dim;
    let mut seg_x = f.clone();
    let mut seg_y = g.clone();
    let mut tracker = GirsanovTracker::default();

    let mut times = Vec::with_capacity(increments.len() + 1);
    let mut xs = Vec::with_capacity(increments.len() + 1);
    let mut ys = Vec::with_capacity(increments.len() + 1);
    let mut beta_curve = Vec::with_capacity(increments.len() + 1);
    times.push(0.0);
    xs.push(seg_x.head().to_vec());
    ys.push(seg_y.head().to_vec());
    beta_curve.push(0.0);

    for (step, dw) in increments.iter().enumerate() {
        if dw.len() != dim {
            return Err(Error::InvalidInput(format!(
                "increment {step} has dimension {} instead of {dim}",
                dw.len()
            )));
        }
        let t = step as f64 * dt;
        let fail = |msg: String| Error::Simulation { step, msg };

        let x = DVector::from_column_slice(seg_x.head());
        let y = DVector::from_column_slice(seg_y.head());
        let v = &x - &y;

        let drift_x = DVector::from_vec(spec.drift(&seg_x)?);
        let drift_y = DVector::from_vec(spec.drift(&seg_y)?);
        let gx = spec.diffusion(&seg_x)?;
        let gy = spec.diffusion(&seg_y)?;
        // control solving G(Y) beta = lambda (X - Y), so the steering drift
        // is exactly the diffusion applied to beta
        let beta = if lambda > 0.0 {
            self::pinv_apply(spec, &gy, &(lambda * &v)).map_err(|e| match e {
                Error::Model(msg) => Error::Model(format!("{msg} (at t = {t})")),
                other => other,
            })?
        } else {
            DVector::zeros(dim)
        };
        tracker.update(&beta, dw, dt);

        let x_new = &x + drift_x * dt + &gx * dw;
        let y_new = &y + (drift_y + lambda * &v) * dt + &gy * dw;
        if x_new.iter().any(|a| !a.is_finite()) || y_new.iter().any(|a| !a.is_finite()) {
            return Err(fail(format!("state left the finite range at t = {}", t + dt)));
        }

        seg_x.advance(x_new.iter().cloned().collect());
        seg_y.advance(y_new.iter().cloned().collect());
        times.push(t + dt);
        xs.push(seg_x.head().to_vec());
        ys.push(seg_y.head().to_vec());
        beta_curve.push(tracker.int_beta_sq);
    }

    Ok(PairPath {
        dt,
        times,
        x: xs,
        y: ys,
        int_beta_sq: beta_curve,
        tracker,
    })
}

fn pinv_apply(spec: &SfdeSpec, g: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let pinv = spec.diffusion_pinv(g)?;
    Ok(&pinv * rhs)
}

fn least_squares(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// Fits an exponential decay rate to the pair gap over `window` and turns
/// it into a verdict against `threshold`.
///
/// A gap that reaches exact zero truncates the fit to the pre-zero part
/// and says so in the notes. Supports needs slope at or below `-threshold`
/// with a tight fit; a slope near zero refutes.
pub fn contraction_report(path: &PairPath, window: (f64, f64), threshold: f64) -> Result<ConvergenceReport> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::InvalidInput(format!("threshold {threshold} must be positive")));
    }
    if !(window.0 >= 0.0 && window.1 > window.0) {
        return Err(Error::InvalidInput(format!("bad fit window {window:?}")));
    }
    let mut notes = Vec::new();
    let mut pts = Vec::new();
    let mut truncated = false;
    for (k, &t) in path.times.iter().enumerate() {
        if t < window.0 || t > window.1 {
            continue;
        }
        let gap = path.gap(k);
        if gap == 0.0 {
            truncated = true;
            break;
        }
        pts.push((t, gap.ln()));
    }
    if truncated {
        notes.push(format!(
            "gap reached exact zero inside the window; fitted the {} points before it",
            pts.len()
        ));
    }
    if pts.len() < 3 {
        return Ok(ConvergenceReport {
            quantity: "gap_contraction".into(),
            series: vec![Series {
                label: "log-gap".into(),
                points: pts,
                half_widths: Vec::new(),
            }],
            verdict: Verdict::Inconclusive,
            tolerances: vec![("rate_threshold".into(), threshold)],
            notes: {
                notes.push("fewer than 3 usable gap points in the window".into());
                notes
            },
        });
    }
    let (slope, _, r2) = least_squares(&pts);
    let verdict = if slope <= -threshold && r2 >= 0.9 {
        Verdict::Supports
    } else if slope >= -0.05 * threshold {
        Verdict::Refutes
    } else {
        Verdict::Inconclusive
    };
    notes.push(format!("fitted rate {slope} with r-squared {r2}"));
    Ok(ConvergenceReport {
        quantity: "gap_contraction".into(),
        series: vec![Series {
            label: "log-gap".into(),
            points: pts,
            half_widths: Vec::new(),
        }],
        verdict,
        tolerances: vec![
            ("rate_threshold".into(), threshold),
            ("fitted_rate".into(), slope),
            ("r_squared".into(), r2),
        ],
        notes,
    })
}

/// Runs independent repetitions and fits the decay of the median gap, so
/// noise-dominated single paths do not decide the verdict. Repetitions run
/// in parallel with seeds derived from `seed`.
pub fn contraction_ensemble(
    spec: &SfdeSpec,
    f: &SegmentState,
    g: &SegmentState,
    lambda: f64,
    t_max: f64,
    dt: f64,
    reps: usize,
    seed: u64,
    threshold: f64,
) -> Result<ConvergenceReport> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be positive".into()));
    }
    let curves: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            integrate_pair(spec, f, g, lambda, t_max, dt, derive_seed(seed, &[7, r as u64]))
                .map(|p| p.gaps())
        })
        .collect::<Result<_>>()?;
    let n_times = curves[0].len();
    let mut median = Vec::with_capacity(n_times);
    let mut q90 = Vec::with_capacity(n_times);
    let mut buf = vec![0.0; reps];
    for k in 0..n_times {
        for (r, c) in curves.iter().enumerate() {
            buf[r] = c[k];
        }
        buf.sort_by(|a, b| a.total_cmp(b));
        median.push(buf[reps / 2]);
        q90.push(buf[((reps * 9) / 10).min(reps - 1)]);
    }
    let times: Vec<f64> = (0..n_times).map(|k| k as f64 * dt).collect();
    let window = (t_max * 0.25, t_max);
    let mut pts = Vec::new();
    for k in 0..n_times {
        if times[k] >= window.0 && times[k] <= window.1 && median[k] > 0.0 {
            pts.push((times[k], median[k].ln()));
        }
    }
    let mut notes = vec![format!("median over {reps} repetitions")];
    if pts.len() < 3 {
        notes.push("median gap vanished almost everywhere in the window".into());
    }
    let (verdict, slope, r2) = if pts.len() < 3 {
        (Verdict::Inconclusive, f64::NAN, f64::NAN)
    } else {
        let (slope, _, r2) = least_squares(&pts);
        let v = if slope <= -threshold && r2 >= 0.9 {
            Verdict::Supports
        } else if slope >= -0.05 * threshold {
            Verdict::Refutes
        } else {
            Verdict::Inconclusive
        };
        (v, slope, r2)
    };
    if slope.is_finite() {
        notes.push(format!("fitted rate {slope} with r-squared {r2}"));
    }
    Ok(ConvergenceReport {
        quantity: "gap_contraction".into(),
        series: vec![
            Series {
                label: "median-gap".into(),
                points: times.iter().cloned().zip(median).collect(),
                half_widths: Vec::new(),
            },
            Series {
                label: "q90-gap".into(),
                points: times.iter().cloned().zip(q90).collect(),
                half_widths: Vec::new(),
            },
        ],
        verdict,
        tolerances: vec![
            ("rate_threshold".into(), threshold),
            ("fitted_rate".into(), slope),
        ],
        notes,
    })
}

/// Distribution of the control integral and the mean of the exponential
/// weight across independent repetitions.
#[derive(Debug, Clone)]
pub struct GirsanovSummary {
    pub reps: usize,
    pub divergent_fraction: f64,
    /// 10%, 50%, 90% quantiles of the final control integral.
    pub int_beta_sq_quantiles: (f64, f64, f64),
    pub density_mean: f64,
    pub density_half_width: f64,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

/// Checks the two numerical signatures of an equivalent change of measure:
/// the control integral stays finite (here: below `cap`) for almost all
/// repetitions, and the exponential weight has mean 1 within Monte-Carlo
/// accuracy.
pub fn girsanov_diagnostics(
    spec: &SfdeSpec,
    f: &SegmentState,
    g: &SegmentState,
    lambda: f64,
    t_max: f64,
    dt: f64,
    reps: usize,
    seed: u64,
    cap: f64,
) -> Result<GirsanovSummary> {
    if reps < 30 {
        return Err(Error::InvalidInput(format!(
            "need at least 30 repetitions, got {reps}"
        )));
    }
    if !(cap.is_finite() && cap > 0.0) {
        return Err(Error::InvalidInput(format!("cap {cap} must be positive")));
    }
    let outcomes: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            integrate_pair(spec, f, g, lambda, t_max, dt, derive_seed(seed, &[11, r as u64]))
                .map(|p| (p.tracker.int_beta_sq, p.tracker.density()))
        })
        .collect::<Result<_>>()?;
    let mut integrals: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    integrals.sort_by(|a, b| a.total_cmp(b));
    let quantile = |p: f64| integrals[((reps as f64 * p) as usize).min(reps - 1)];
    let divergent = integrals.iter().filter(|v| **v > cap).count();
    let divergent_fraction = divergent as f64 / reps as f64;

    let mean = outcomes.iter().map(|o| o.1).sum::<f64>() / reps as f64;
    let var = outcomes
        .iter()
        .map(|o| (o.1 - mean) * (o.1 - mean))
        .sum::<f64>()
        / (reps as f64 - 1.0);
    let half_width = crate::diagnostics::Z95 * (var / reps as f64).sqrt();

    let mut notes = Vec::new();
    let verdict = if divergent_fraction > 0.10 {
        notes.push(format!(
            "{divergent} of {reps} repetitions exceeded the control-integral cap {cap}"
        ));
        Verdict::Refutes
    } else if (mean - 1.0).abs() <= 3.0 * half_width.max(1e-12) {
        Verdict::Supports
    } else {
        notes.push(format!(
            "weight mean {mean} sits outside 3 half-widths ({half_width}) of 1"
        ));
        Verdict::Inconclusive
    };
    Ok(GirsanovSummary {
        reps,
        divergent_fraction,
        int_beta_sq_quantiles: (quantile(0.1), quantile(0.5), quantile(0.9)),
        density_mean: mean,
        density_half_width: half_width,
        verdict,
        notes,
    })
}

/// Terminal-gap discretization errors against a shared fine noise path.
///
/// Integrates from constant segments at `x0`, `y0` on resolutions
/// `k_base * 2^l` for `l = 0..levels`, all driven by restrictions of one
/// Wiener path sampled at the finest level; returns `(dt, |gap(T) -
/// gap_fine(T)|)` per level, coarsest first.
pub fn refinement_errors(
    spec: &SfdeSpec,
    x0: &[f64],
    y0: &[f64],
    lambda: f64,
    t_max: f64,
    k_base: usize,
    levels: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if k_base == 0 || levels == 0 {
        return Err(Error::InvalidInput("k_base and levels must be positive".into()));
    }
    if levels > 16 {
        return Err(Error::InvalidInput("more than 16 refinement levels".into()));
    }
    let k_fine = k_base << levels;
    let dt_fine = 1.0 / k_fine as f64;
    let steps_fine = (t_max / dt_fine).round() as usize;
    if ((t_max / dt_fine) - steps_fine as f64).abs() > GRID_TOL || steps_fine == 0 {
        return Err(Error::InvalidInput(format!(
            "horizon {t_max} is not a multiple of the finest step {dt_fine}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = dt_fine.sqrt();
    let fine: Vec<DVector<f64>> = (0..steps_fine)
        .map(|_| {
            DVector::from_iterator(
                spec.dim,
                (0..spec.dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale),
            )
        })
        .collect();

    let run = |k: usize, increments: &[DVector<f64>]| -> Result<f64> {
        let f = SegmentState::constant(x0, k)?;
        let g = SegmentState::constant(y0, k)?;
        let path = integrate_pair_with_increments(spec, &f, &g, lambda, 1.0 / k as f64, increments)?;
        Ok(path.gap(path.times.len() - 1))
    };

    let reference = run(k_fine, &fine)?;
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels {
        let k = k_base << l;
        let block = 1usize << (levels - l);
        let coarse: Vec<DVector<f64>> = fine
            .chunks(block)
            .map(|c| {
                let mut acc = DVector::zeros(spec.dim);
                for dw in c {
                    acc += dw;
                }
                acc
            })
            .collect();
        let gap = run(k, &coarse)?;
        out.push((1.0 / k as f64, (gap - reference).abs()));
    }
    Ok(out)
}
