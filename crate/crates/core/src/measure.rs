//! Finitely supported probability measures.

use crate::error::{Error, Result};

/// Weight sums may drift from 1 by at most this much before construction fails.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A probability measure with finite support.
///
/// Points are pairwise distinct: duplicates passed to [`DiscreteMeasure::new`]
/// are merged and their weights added. Weights are nonnegative and sum to 1
/// exactly after an internal renormalization that only absorbs float drift
/// up to [`WEIGHT_SUM_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T> {
    points: Vec<T>,
    weights: Vec<f64>,
}

impl<T: Clone + PartialEq> DiscreteMeasure<T> {
    pub fn new(points: Vec<T>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidInput("empty support".into()));
        }
        let mut ded_points: Vec<T> = Vec::with_capacity(points.len());
        let mut ded_weights: Vec<f64> = Vec::with_capacity(points.len());
        for (p, &w) in points.iter().zip(weights.iter()) {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidInput(format!("weight {w} is not in [0, 1]")));
            }
            match ded_points.iter().position(|q| q == p) {
                Some(i) => ded_weights[i] += w,
                None => {
                    ded_points.push(p.clone());
                    ded_weights.push(w);
                }
            }
        }
        let sum: f64 = ded_weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        for w in ded_weights.iter_mut() {
            *w /= sum;
        }
        Ok(Self {
            points: ded_points,
            weights: ded_weights,
        })
    }

    /// Point mass at `p`.
    pub fn dirac(p: T) -> Self {
        Self {
            points: vec![p],
            weights: vec![1.0],
        }
    }

    /// Empirical distribution of a sample; repeated values merge.
    pub fn empirical(sample: &[T]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::InvalidInput("empty sample".into()));
        }
        let w = 1.0 / sample.len() as f64;
        Self::new(sample.to_vec(), vec![w; sample.len()])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_of(&self, p: &T) -> f64 {
        match self.points.iter().position(|q| q == p) {
            Some(i) => self.weights[i],
            None => 0.0,
        }
    }

    /// Drops zero-weight atoms. The measure keeps at least one atom.
    pub fn trim_zeros(&self) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (p, &w) in self.points.iter().zip(self.weights.iter()) {
            if w > 0.0 {
                points.push(p.clone());
                weights.push(w);
            }
        }
        if points.is_empty() {
            return self.clone();
        }
        Self { points, weights }
    }

    /// Mass of the set {p : pred(p)}.
    pub fn mass_where(&self, mut pred: impl FnMut(&T) -> bool) -> f64 {
        self.points
            .iter()
            .zip(self.weights.iter())
            .filter(|(p, _)| pred(p))
            .map(|(_, &w)| w)
            .sum()
    }

    /// Expectation of `f` under the measure.
    pub fn expect(&self, mut f: impl FnMut(&T) -> f64) -> f64 {
        self.points
            .iter()
            .zip(self.weights.iter())
            .map(|(p, &w)| w * f(p))
            .sum()
    }
}

/// Total variation distance, `sup_A |mu(A) - nu(A)|`, i.e. half the l1 gap
/// over the union support.
pub fn total_variation<T: Clone + PartialEq>(
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
) -> f64 {
    let mut acc = 0.0;
    for (p, &w) in mu.points.iter().zip(mu.weights.iter()) {
        acc += (w - nu.weight_of(p)).abs();
    }
    for (q, &v) in nu.points.iter().zip(nu.weights.iter()) {
        if !mu.points.iter().any(|p| p == q) {
            acc += v;
        }
    }
    0.5 * acc
}
