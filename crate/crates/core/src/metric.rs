//! Metrics, bounded distance-like costs, and the weighted path metric.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Built-in metrics on coordinate vectors.
///
/// Each variant declares the bound returned by [`Metric::bound`]; evaluation
/// never exceeds it. `TorusFlip` reads points as `[u, s]` with `u` on the unit
/// torus and `s` a level in {-1, 1}; the others treat points as plain vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Euclidean distance truncated at 1.
    EuclideanTruncated,
    /// Wraparound distance on [0, 1), first coordinate only.
    Torus1d,
    /// Torus distance on the first coordinate plus level gap on the second.
    TorusProductFlip,
    /// 0 on equal points, 1 otherwise.
    Discrete,
    /// Max coordinate gap truncated at 1; the segment metric for delay states.
    SupNormOnSegment,
}

fn wrap_dist(a: f64, b: f64) -> f64 {
    let z = (a - b).rem_euclid(1.0);
    z.min(1.0 - z)
}

impl Metric {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Metric::EuclideanTruncated => {
                let s: f64 = x
                    .iter()
                    .zip(y.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                s.sqrt().min(1.0)
            }
            Metric::Torus1d => wrap_dist(x[0], y[0]),
            Metric::TorusProductFlip => wrap_dist(x[0], y[0]) + (x[1] - y[1]).abs(),
            Metric::Discrete => {
                if x == y {
                    0.0
                } else {
                    1.0
                }
            }
            Metric::SupNormOnSegment => x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                .min(1.0),
        }
    }

    /// Upper bound on values of [`Metric::eval`].
    pub fn bound(&self) -> f64 {
        match self {
            Metric::EuclideanTruncated | Metric::Discrete | Metric::SupNormOnSegment => 1.0,
            Metric::Torus1d => 0.5,
            // torus part <= 1/2, flip levels differ by at most 2
            Metric::TorusProductFlip => 2.5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::EuclideanTruncated => "euclidean-truncated",
            Metric::Torus1d => "torus-1d",
            Metric::TorusProductFlip => "torus-product-flip",
            Metric::Discrete => "discrete",
            Metric::SupNormOnSegment => "sup-norm-on-segment",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "euclidean-truncated" => Ok(Metric::EuclideanTruncated),
            "torus-1d" => Ok(Metric::Torus1d),
            "torus-product-flip" => Ok(Metric::TorusProductFlip),
            "discrete" => Ok(Metric::Discrete),
            "sup-norm-on-segment" => Ok(Metric::SupNormOnSegment),
            other => Err(Error::InvalidInput(format!("unknown metric {other:?}"))),
        }
    }
}

/// A base metric `rho` bounded by 1 paired with the diagnostic metric `d`.
///
/// `rho` drives transport distances (so values are clamped at 1 even when the
/// chosen variant's declared bound is larger); `d` drives closeness events and
/// may have any declared bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub rho: Metric,
    pub d: Metric,
}

impl MetricPair {
    pub fn new(rho: Metric, d: Metric) -> Self {
        Self { rho, d }
    }

    /// Uses the same metric for both roles.
    pub fn same(m: Metric) -> Self {
        Self { rho: m, d: m }
    }

    pub fn rho(&self, x: &[f64], y: &[f64]) -> f64 {
        self.rho.eval(x, y).min(1.0)
    }

    pub fn d(&self, x: &[f64], y: &[f64]) -> f64 {
        self.d.eval(x, y)
    }

    pub fn d_is_rho(&self) -> bool {
        self.rho == self.d
    }
}

/// A cost in [0, 1] used by the transport layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    /// A metric clamped at 1.
    Base(Metric),
    /// 1 when the metric exceeds `eps`, else 0. The closeness event is the
    /// closed set {d <= eps}.
    Threshold { metric: Metric, eps: f64 },
    /// 1 off the diagonal: transport cost equals total variation.
    Discrete,
}

impl Cost {
    pub fn threshold(metric: Metric, eps: f64) -> Result<Self> {
        if !eps.is_finite() || eps < 0.0 {
            return Err(Error::InvalidInput(format!("threshold eps {eps} < 0")));
        }
        Ok(Cost::Threshold { metric, eps })
    }

    pub fn discrete() -> Self {
        Cost::Discrete
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Cost::Base(m) => m.eval(x, y).min(1.0),
            Cost::Threshold { metric, eps } => {
                if metric.eval(x, y) > *eps {
                    1.0
                } else {
                    0.0
                }
            }
            Cost::Discrete => {
                if x == y {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// Weighted sum `sum_n 2^-(n+1) base(x_n, y_n)` over two equal-length
/// trajectories, with the tail bound left by stopping at the horizon.
///
/// Returns `(value, tail_bound)` where `tail_bound = 2^-N` for N points.
pub fn path_metric(xs: &[Vec<f64>], ys: &[Vec<f64>], base: Metric) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let mut acc = 0.0;
    let mut w = 0.5;
    for (x, y) in xs.iter().zip(ys.iter()) {
        acc += w * base.eval(x, y).min(1.0);
        w *= 0.5;
    }
    // remaining weight of the untraversed tail; each term is at most 1
    Ok((acc, 2.0 * w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn torus_wraps() {
        assert_abs_diff_eq!(Metric::Torus1d.eval(&[0.95], &[0.05]), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(Metric::Torus1d.eval(&[0.25], &[0.75]), 0.5);
    }

    #[test]
    fn flip_metric_adds_level_gap() {
        let x = [0.2, 1.0];
        let y = [0.3, -1.0];
        assert_abs_diff_eq!(
            Metric::TorusProductFlip.eval(&x, &y),
            0.1 + 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn euclidean_truncates() {
        assert_abs_diff_eq!(Metric::EuclideanTruncated.eval(&[0.0], &[3.0]), 1.0);
        assert_abs_diff_eq!(Metric::EuclideanTruncated.eval(&[0.0], &[0.6]), 0.6);
    }

    #[test]
    fn threshold_is_closed_at_eps() {
        let c = Cost::threshold(Metric::EuclideanTruncated, 0.5).unwrap();
        assert_eq!(c.eval(&[0.0], &[0.5]), 0.0);
        assert_eq!(c.eval(&[0.0], &[0.5000001]), 1.0);
    }

    #[test]
    fn path_metric_hand_sum() {
        // base distances 1, 1/2 -> 1/2*1 + 1/4*1/2 = 5/8, tail 1/4
        let xs = vec![vec![0.0], vec![0.0]];
        let ys = vec![vec![1.0], vec![0.5]];
        let (v, tail) = path_metric(&xs, &ys, Metric::EuclideanTruncated).unwrap();
        assert_abs_diff_eq!(v, 0.625);
        assert_abs_diff_eq!(tail, 0.25);
    }

    #[test]
    fn path_metric_rejects_mismatched_lengths() {
        let xs = vec![vec![0.0]];
        let ys = vec![vec![0.0], vec![1.0]];
        assert!(path_metric(&xs, &ys, Metric::Discrete).is_err());
    }

    fn arb_point() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-2.0f64..2.0, 2)
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_vanish_on_diagonal(
            x in arb_point(), y in arb_point(),
            m in prop::sample::select(vec![
                Metric::EuclideanTruncated, Metric::Torus1d,
                Metric::Discrete, Metric::SupNormOnSegment,
            ])
        ) {
            prop_assert!((m.eval(&x, &y) - m.eval(&y, &x)).abs() < 1e-14);
            prop_assert_eq!(m.eval(&x, &x), 0.0);
            prop_assert!(m.eval(&x, &y) <= m.bound() + 1e-14);
        }

        #[test]
        fn triangle_inequality(
            x in arb_point(), y in arb_point(), z in arb_point(),
            m in prop::sample::select(vec![
                Metric::EuclideanTruncated, Metric::Torus1d,
                Metric::Discrete, Metric::SupNormOnSegment,
            ])
        ) {
            prop_assert!(m.eval(&x, &z) <= m.eval(&x, &y) + m.eval(&y, &z) + 1e-12);
        }

        #[test]
        fn path_metric_bounded_by_one(
            n in 1usize..6,
            seed_x in prop::collection::vec(arb_point(), 6),
            seed_y in prop::collection::vec(arb_point(), 6),
        ) {
            let xs = seed_x[..n].to_vec();
            let ys = seed_y[..n].to_vec();
            let (v, tail) = path_metric(&xs, &ys, Metric::EuclideanTruncated).unwrap();
            prop_assert!(v >= 0.0 && v + tail <= 1.0 + 1e-14);
        }
    }
}
