//! Generalized couplings on finite product supports and the constructions
//! that upgrade or regularize them.
//!
//! A joint law here always lives on `support(P) x support(Q)` for a pair of
//! reference measures and carries the Radon-Nikodym weights of both its
//! marginals against those references. An exact coupling is the special case
//! with both density vectors identically 1.

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;
use crate::ot::{CouplingPlan, MAX_SUPPORT};
use rand_chacha::ChaCha8Rng;

/// Weight sums inside joint laws must close to 1 within this.
const JOINT_SUM_TOL: f64 = 1e-10;

/// Mass found where a reference has none counts as an absolute-continuity
/// violation above this.
const NULL_MASS_TOL: f64 = 1e-15;

/// A joint law on the product of two reference supports, with marginal
/// densities against the references.
#[derive(Debug, Clone)]
pub struct FiniteJointLaw<T> {
    pub row_points: Vec<T>,
    pub col_points: Vec<T>,
    pub ref_row: Vec<f64>,
    pub ref_col: Vec<f64>,
    /// Row-major joint weights.
    pub weights: Vec<f64>,
    /// d(first marginal)/dP per row atom; 0 on reference-null atoms.
    pub density_row: Vec<f64>,
    /// d(second marginal)/dQ per col atom.
    pub density_col: Vec<f64>,
}

/// Membership certificate: L^p norms of both marginal densities against a
/// bound `r`.
#[derive(Debug, Clone, Copy)]
pub struct GeneralizedCouplingCert {
    pub p: f64,
    pub r: f64,
    pub norm_row: f64,
    pub norm_col: f64,
    pub sup_density_row: f64,
    pub sup_density_col: f64,
    pub member: bool,
}

impl<T: Clone + PartialEq> FiniteJointLaw<T> {
    /// Builds a joint law over `support(p) x support(q)` from row-major
    /// weights, checking normalization and absolute continuity of both
    /// marginals.
    pub fn from_weights(
        p: &DiscreteMeasure<T>,
        q: &DiscreteMeasure<T>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let (m, n) = (p.len(), q.len());
        if weights.len() != m * n {
            return Err(Error::InvalidInput(format!(
                "weights have {} entries for a {m} x {n} support",
                weights.len()
            )));
        }
        let mut total = 0.0;
        for &w in &weights {
            if !w.is_finite() || w < -1e-15 {
                return Err(Error::InvalidInput(format!("joint weight {w} is negative")));
            }
            total += w;
        }
        if (total - 1.0).abs() > JOINT_SUM_TOL {
            return Err(Error::InvalidInput(format!("joint weights sum to {total}")));
        }
        let weights: Vec<f64> = weights.iter().map(|&w| w.max(0.0) / total).collect();
        let mut density_row = vec![0.0f64; m];
        let mut density_col = vec![0.0f64; n];
        for i in 0..m {
            let s: f64 = weights[i * n..(i + 1) * n].iter().sum();
            let pi = p.weights()[i];
            if pi <= 0.0 {
                if s > NULL_MASS_TOL {
                    return Err(Error::InvalidInput(format!(
                        "first marginal puts mass {s} on a reference-null atom"
                    )));
                }
            } else {
                density_row[i] = s / pi;
            }
        }
        for j in 0..n {
            let s: f64 = (0..m).map(|i| weights[i * n + j]).sum();
            let qj = q.weights()[j];
            if qj <= 0.0 {
                if s > NULL_MASS_TOL {
                    return Err(Error::InvalidInput(format!(
                        "second marginal puts mass {s} on a reference-null atom"
                    )));
                }
            } else {
                density_col[j] = s / qj;
            }
        }
        Ok(Self {
            row_points: p.points().to_vec(),
            col_points: q.points().to_vec(),
            ref_row: p.weights().to_vec(),
            ref_col: q.weights().to_vec(),
            weights,
            density_row,
            density_col,
        })
    }

    pub fn rows(&self) -> usize {
        self.row_points.len()
    }

    pub fn cols(&self) -> usize {
        self.col_points.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.col_points.len() + j]
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        let n = self.cols();
        (0..self.rows())
            .map(|i| self.weights[i * n..(i + 1) * n].iter().sum())
            .collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let n = self.cols();
        (0..n)
            .map(|j| (0..self.rows()).map(|i| self.weights[i * n + j]).sum())
            .collect()
    }

    /// Worst gap between the marginals and the references; 0 (up to float)
    /// exactly when the law is an exact coupling.
    pub fn marginal_gap_to_refs(&self) -> f64 {
        let rg = self
            .row_marginal()
            .iter()
            .zip(self.ref_row.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let cg = self
            .col_marginal()
            .iter()
            .zip(self.ref_col.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        rg.max(cg)
    }

    /// Probability of `pred(row_point, col_point)` under the joint law.
    pub fn event_probability(&self, mut pred: impl FnMut(&T, &T) -> bool) -> f64 {
        let n = self.cols();
        let mut acc = 0.0;
        for (i, x) in self.row_points.iter().enumerate() {
            for (j, y) in self.col_points.iter().enumerate() {
                let w = self.weights[i * n + j];
                if w > 0.0 && pred(x, y) {
                    acc += w;
                }
            }
        }
        acc
    }

    /// L^p certificate of both marginal densities against the bound `r`.
    pub fn cert(&self, p_exp: f64, r: f64) -> Result<GeneralizedCouplingCert> {
        if !(p_exp >= 1.0) || !p_exp.is_finite() {
            return Err(Error::InvalidInput(format!("L^p exponent {p_exp} < 1")));
        }
        if !(r > 0.0) {
            return Err(Error::InvalidInput(format!("density bound {r} <= 0")));
        }
        let norm = |dens: &[f64], refw: &[f64]| -> f64 {
            dens.iter()
                .zip(refw.iter())
                .map(|(&d, &w)| d.powf(p_exp) * w)
                .sum::<f64>()
                .powf(1.0 / p_exp)
        };
        let norm_row = norm(&self.density_row, &self.ref_row);
        let norm_col = norm(&self.density_col, &self.ref_col);
        let sup_density_row = self.density_row.iter().cloned().fold(0.0f64, f64::max);
        let sup_density_col = self.density_col.iter().cloned().fold(0.0f64, f64::max);
        Ok(GeneralizedCouplingCert {
            p: p_exp,
            r,
            norm_row,
            norm_col,
            sup_density_row,
            sup_density_col,
            member: norm_row <= r + 1e-9 && norm_col <= r + 1e-9,
        })
    }
}

impl<T: Clone + PartialEq> From<&CouplingPlan<T>> for FiniteJointLaw<T> {
    /// Reinterprets a transport plan as a joint law against its own recorded
    /// marginals.
    fn from(plan: &CouplingPlan<T>) -> Self {
        let p = DiscreteMeasure::new(plan.row_points.clone(), plan.row_weights.clone())
            .expect("plan marginals are measures");
        let q = DiscreteMeasure::new(plan.col_points.clone(), plan.col_weights.clone())
            .expect("plan marginals are measures");
        FiniteJointLaw::from_weights(&p, &q, plan.weights.clone())
            .expect("plan weights couple its marginals")
    }
}

/// The product coupling `P (x) Q`: independent components, densities 1.
pub fn independent_coupling<T: Clone + PartialEq>(
    p: &DiscreteMeasure<T>,
    q: &DiscreteMeasure<T>,
) -> Result<FiniteJointLaw<T>> {
    let (m, n) = (p.len(), q.len());
    let mut w = Vec::with_capacity(m * n);
    for &a in p.weights() {
        for &b in q.weights() {
            w.push(a * b);
        }
    }
    FiniteJointLaw::from_weights(p, q, w)
}

/// Splits a generalized coupling into an exact coupling of its references
/// that keeps a `gamma` share of the original law on the set where both
/// densities are at most `1/gamma`, filling the rest with a product of the
/// leftover marginals.
///
/// The output marginals equal the references exactly (up to float), and for
/// any product event A the output gives at least
/// `gamma * (xi(A) - leak)` where `leak` is the mass outside the kept set.
pub fn split_into_coupling<T: Clone + PartialEq>(
    xi: &FiniteJointLaw<T>,
    gamma: f64,
) -> Result<FiniteJointLaw<T>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput(format!("gamma {gamma} outside (0, 1)")));
    }
    let (m, n) = (xi.rows(), xi.cols());
    let cap = 1.0 / gamma + 1e-12;
    let keep_row: Vec<bool> = xi.density_row.iter().map(|&d| d <= cap).collect();
    let keep_col: Vec<bool> = xi.density_col.iter().map(|&d| d <= cap).collect();

    let mut eta = vec![0.0f64; m * n];
    let mut beta = 0.0;
    for i in 0..m {
        if !keep_row[i] {
            continue;
        }
        for j in 0..n {
            if keep_col[j] {
                let v = gamma * xi.weights[i * n + j];
                eta[i * n + j] = v;
                beta += v;
            }
        }
    }
    // residual marginals are nonnegative because eta's marginals are capped
    // by gamma * density <= 1 relative to the references
    let mut res_row = vec![0.0f64; m];
    let mut res_col = vec![0.0f64; n];
    for i in 0..m {
        let s: f64 = eta[i * n..(i + 1) * n].iter().sum();
        res_row[i] = (xi.ref_row[i] - s).max(0.0);
    }
    for j in 0..n {
        let s: f64 = (0..m).map(|i| eta[i * n + j]).sum();
        res_col[j] = (xi.ref_col[j] - s).max(0.0);
    }
    let fill = 1.0 - beta;
    let mut w = eta;
    for i in 0..m {
        for j in 0..n {
            w[i * n + j] += res_row[i] * res_col[j] / fill;
        }
    }
    let p = DiscreteMeasure::new(xi.row_points.clone(), xi.ref_row.clone())?;
    let q = DiscreteMeasure::new(xi.col_points.clone(), xi.ref_col.clone())?;
    FiniteJointLaw::from_weights(&p, &q, w)
}

/// Mass a generalized coupling keeps outside the set where both densities
/// are at most `1/gamma`.
pub fn split_leak<T: Clone + PartialEq>(xi: &FiniteJointLaw<T>, gamma: f64) -> f64 {
    let (m, n) = (xi.rows(), xi.cols());
    let cap = 1.0 / gamma + 1e-12;
    let mut leak = 0.0;
    for i in 0..m {
        for j in 0..n {
            if xi.density_row[i] > cap || xi.density_col[j] > cap {
                leak += xi.weights[i * n + j];
            }
        }
    }
    leak
}

/// Regularizes a generalized coupling into one whose marginal densities are
/// bounded by `1/gamma`, losing at most `alpha/2` of any event's mass.
///
/// Requires the mass outside the kept set to be at most `alpha/2`; when it
/// is not, the error reports the achieved leak and the largest workable
/// `gamma`, if one exists.
pub fn split_into_bounded_coupling<T: Clone + PartialEq>(
    xi: &FiniteJointLaw<T>,
    gamma: f64,
    alpha: f64,
) -> Result<(FiniteJointLaw<T>, GeneralizedCouplingCert)> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput(format!("gamma {gamma} outside (0, 1)")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside (0, 1]")));
    }
    let leak = split_leak(xi, gamma);
    if leak > alpha / 2.0 + 1e-12 {
        let suggestion = largest_admissible_gamma(xi, alpha);
        let hint = match suggestion {
            Some(g) => format!("largest workable gamma is about {g:.6}"),
            None => "no gamma in (0, 1) keeps the leak small enough".into(),
        };
        return Err(Error::Model(format!(
            "density cap 1/gamma = {:.6} leaks mass {leak:.6} > alpha/2 = {:.6}; {hint}",
            1.0 / gamma,
            alpha / 2.0
        )));
    }

    let (m, n) = (xi.rows(), xi.cols());
    let cap = 1.0 / gamma + 1e-12;
    let keep_row: Vec<bool> = xi.density_row.iter().map(|&d| d <= cap).collect();
    let keep_col: Vec<bool> = xi.density_col.iter().map(|&d| d <= cap).collect();
    let mut kept = vec![0.0f64; m * n];
    let mut kept_mass = 0.0;
    for i in 0..m {
        if !keep_row[i] {
            continue;
        }
        for j in 0..n {
            if keep_col[j] {
                let v = xi.weights[i * n + j];
                kept[i * n + j] = v;
                kept_mass += v;
            }
        }
    }
    let beta = gamma * kept_mass;
    // leftover of the inflated references 1/gamma * P resp. Q after the kept part
    let mut res_row = vec![0.0f64; m];
    let mut res_col = vec![0.0f64; n];
    for i in 0..m {
        let s: f64 = kept[i * n..(i + 1) * n].iter().sum();
        res_row[i] = (xi.ref_row[i] / gamma - s).max(0.0);
    }
    for j in 0..n {
        let s: f64 = (0..m).map(|i| kept[i * n + j]).sum();
        res_col[j] = (xi.ref_col[j] / gamma - s).max(0.0);
    }
    let res_mass = (1.0 - beta) / gamma;
    let coeff = (1.0 - kept_mass) / (res_mass * res_mass);
    let mut w = kept;
    if coeff > 0.0 {
        for i in 0..m {
            for j in 0..n {
                w[i * n + j] += coeff * res_row[i] * res_col[j];
            }
        }
    }
    let p = DiscreteMeasure::new(xi.row_points.clone(), xi.ref_row.clone())?;
    let q = DiscreteMeasure::new(xi.col_points.clone(), xi.ref_col.clone())?;
    let law = FiniteJointLaw::from_weights(&p, &q, w)?;
    let cert = law.cert(1.0, 1.0 / gamma)?;
    if !cert.member || cert.sup_density_row > 1.0 / gamma + 1e-9 || cert.sup_density_col > 1.0 / gamma + 1e-9
    {
        return Err(Error::Solver {
            msg: "regularized law exceeded its density bound".into(),
            residual: cert.sup_density_row.max(cert.sup_density_col) - 1.0 / gamma,
        });
    }
    Ok((law, cert))
}

/// Largest `gamma` in (0, 1) whose leak stays within `alpha/2`, by scanning
/// the density level sets.
fn largest_admissible_gamma<T: Clone + PartialEq>(
    xi: &FiniteJointLaw<T>,
    alpha: f64,
) -> Option<f64> {
    let mut levels: Vec<f64> = xi
        .density_row
        .iter()
        .chain(xi.density_col.iter())
        .cloned()
        .filter(|&d| d > 1.0)
        .collect();
    levels.push(1.0);
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    // leak(1/gamma = level) is nonincreasing in the level
    for &lvl in levels.iter() {
        let gamma = (1.0 / lvl).min(1.0 - 1e-9);
        if split_leak(xi, gamma) <= alpha / 2.0 {
            return Some(gamma);
        }
    }
    None
}

/// Outcome of conditioning a joint law on an event and tensoring the
/// complement's marginals back in.
#[derive(Debug, Clone)]
pub struct MixtureOutcome<T> {
    pub law: FiniteJointLaw<T>,
    /// Mass the input gave the conditioning event.
    pub event_mass: f64,
    /// Set when the event had mass 0 or 1 and the law was passed through.
    pub degenerate: bool,
}

/// Keeps the law conditioned on `event` with its original mass and replaces
/// the complement by the product of the complement's own marginals.
///
/// Both marginals are preserved exactly, and the event keeps at least its
/// original probability.
pub fn conditional_mixture<T: Clone + PartialEq>(
    xi: &FiniteJointLaw<T>,
    mut event: impl FnMut(&T, &T) -> bool,
) -> Result<MixtureOutcome<T>> {
    let (m, n) = (xi.rows(), xi.cols());
    let mut in_event = vec![false; m * n];
    let mut mass = 0.0;
    for i in 0..m {
        for j in 0..n {
            if event(&xi.row_points[i], &xi.col_points[j]) {
                in_event[i * n + j] = true;
                mass += xi.weights[i * n + j];
            }
        }
    }
    if mass <= 1e-12 || mass >= 1.0 - 1e-12 {
        return Ok(MixtureOutcome {
            law: xi.clone(),
            event_mass: mass,
            degenerate: true,
        });
    }
    let mut rest_row = vec![0.0f64; m];
    let mut rest_col = vec![0.0f64; n];
    for i in 0..m {
        for j in 0..n {
            if !in_event[i * n + j] {
                let w = xi.weights[i * n + j];
                rest_row[i] += w;
                rest_col[j] += w;
            }
        }
    }
    let rest = 1.0 - mass;
    let mut w = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            let kept = if in_event[i * n + j] {
                xi.weights[i * n + j]
            } else {
                0.0
            };
            w[i * n + j] = kept + rest_row[i] * rest_col[j] / rest;
        }
    }
    let p = DiscreteMeasure::new(xi.row_points.clone(), xi.ref_row.clone())?;
    let q = DiscreteMeasure::new(xi.col_points.clone(), xi.ref_col.clone())?;
    Ok(MixtureOutcome {
        law: FiniteJointLaw::from_weights(&p, &q, w)?,
        event_mass: mass,
        degenerate: false,
    })
}

/// Tensor product of two joint laws on the paired product space: components
/// evolve independently across the pair, densities multiply.
pub fn product_coupling<T: Clone + PartialEq, U: Clone + PartialEq>(
    a: &FiniteJointLaw<T>,
    b: &FiniteJointLaw<U>,
) -> Result<FiniteJointLaw<(T, U)>> {
    let m = a.rows() * b.rows();
    let n = a.cols() * b.cols();
    if m > MAX_SUPPORT || n > MAX_SUPPORT {
        return Err(Error::Resource(format!(
            "product support {m} x {n} exceeds the {MAX_SUPPORT} cap"
        )));
    }
    let mut row_points = Vec::with_capacity(m);
    let mut ref_row = Vec::with_capacity(m);
    for (x, &wx) in a.row_points.iter().zip(a.ref_row.iter()) {
        for (u, &wu) in b.row_points.iter().zip(b.ref_row.iter()) {
            row_points.push((x.clone(), u.clone()));
            ref_row.push(wx * wu);
        }
    }
    let mut col_points = Vec::with_capacity(n);
    let mut ref_col = Vec::with_capacity(n);
    for (y, &wy) in a.col_points.iter().zip(a.ref_col.iter()) {
        for (v, &wv) in b.col_points.iter().zip(b.ref_col.iter()) {
            col_points.push((y.clone(), v.clone()));
            ref_col.push(wy * wv);
        }
    }
    let (an, bn) = (a.cols(), b.cols());
    let mut w = vec![0.0f64; m * n];
    for ia in 0..a.rows() {
        for ib in 0..b.rows() {
            let i = ia * b.rows() + ib;
            for ja in 0..an {
                let wa = a.weights[ia * an + ja];
                if wa == 0.0 {
                    continue;
                }
                for jb in 0..bn {
                    let j = ja * bn + jb;
                    w[i * n + j] = wa * b.weights[ib * bn + jb];
                }
            }
        }
    }
    let p = DiscreteMeasure::new(row_points, ref_row)?;
    let q = DiscreteMeasure::new(col_points, ref_col)?;
    FiniteJointLaw::from_weights(&p, &q, w)
}

/// A pair trajectory drawn from a coupling, with the Radon-Nikodym weights
/// of each component's path law against the uncoupled dynamics, accumulated
/// multiplicatively along the transitions.
#[derive(Debug, Clone)]
pub struct WeightedPairTrajectory {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub weight_row: f64,
    pub weight_col: f64,
}

/// Monte-Carlo access to a coupling of two path laws.
pub trait PairSampler: Sync {
    fn sample_pair(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Result<WeightedPairTrajectory>;
    fn describe(&self) -> String;
}

/// Both components driven by the same uniform draw through the same
/// cumulative-row inversion; from equal starts the components never separate.
pub struct SynchronousCoupling<'a> {
    pub chain: &'a crate::chain::FiniteChain,
    pub x0: usize,
    pub y0: usize,
}

impl crate::chain::FiniteChain {
    fn step_with_uniform(&self, x: usize, u: f64) -> usize {
        let k = self.len();
        let mut cum = 0.0;
        for j in 0..k {
            cum += self.prob(x, j);
            if u < cum {
                return j;
            }
        }
        (0..k).rev().find(|&j| self.prob(x, j) > 0.0).unwrap_or(k - 1)
    }
}

impl PairSampler for SynchronousCoupling<'_> {
    fn sample_pair(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Result<WeightedPairTrajectory> {
        use rand::Rng;
        let mut xs = Vec::with_capacity(horizon + 1);
        let mut ys = Vec::with_capacity(horizon + 1);
        let (mut x, mut y) = (self.x0, self.y0);
        xs.push(self.chain.point(x).to_vec());
        ys.push(self.chain.point(y).to_vec());
        for _ in 0..horizon {
            let u: f64 = rng.gen();
            x = self.chain.step_with_uniform(x, u);
            y = self.chain.step_with_uniform(y, u);
            xs.push(self.chain.point(x).to_vec());
            ys.push(self.chain.point(y).to_vec());
        }
        Ok(WeightedPairTrajectory {
            x: xs,
            y: ys,
            weight_row: 1.0,
            weight_col: 1.0,
        })
    }

    fn describe(&self) -> String {
        format!("synchronous coupling from ({}, {})", self.x0, self.y0)
    }
}

/// Components driven by independent draws.
pub struct IndependentPairCoupling<'a> {
    pub chain: &'a crate::chain::FiniteChain,
    pub x0: usize,
    pub y0: usize,
}

impl PairSampler for IndependentPairCoupling<'_> {
    fn sample_pair(&self, horizon: usize, rng: &mut ChaCha8Rng) -> Result<WeightedPairTrajectory> {
        use rand::Rng;
        let mut xs = Vec::with_capacity(horizon + 1);
        let mut ys = Vec::with_capacity(horizon + 1);
        let (mut x, mut y) = (self.x0, self.y0);
        xs.push(self.chain.point(x).to_vec());
        ys.push(self.chain.point(y).to_vec());
        for _ in 0..horizon {
            let ux: f64 = rng.gen();
            let uy: f64 = rng.gen();
            x = self.chain.step_with_uniform(x, ux);
            y = self.chain.step_with_uniform(y, uy);
            xs.push(self.chain.point(x).to_vec());
            ys.push(self.chain.point(y).to_vec());
        }
        Ok(WeightedPairTrajectory {
            x: xs,
            y: ys,
            weight_row: 1.0,
            weight_col: 1.0,
        })
    }

    fn describe(&self) -> String {
        format!("independent coupling from ({}, {})", self.x0, self.y0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn meas(w: &[f64]) -> DiscreteMeasure<usize> {
        DiscreteMeasure::new((0..w.len()).collect(), w.to_vec()).unwrap()
    }

    #[test]
    fn independent_coupling_has_unit_densities() {
        let p = meas(&[0.25, 0.75]);
        let q = meas(&[0.5, 0.5]);
        let xi = independent_coupling(&p, &q).unwrap();
        assert!(xi.density_row.iter().all(|&d| (d - 1.0).abs() < 1e-12));
        assert!(xi.density_col.iter().all(|&d| (d - 1.0).abs() < 1e-12));
        assert_abs_diff_eq!(xi.weight(0, 1), 0.125);
    }

    #[test]
    fn rejects_mass_on_null_atom() {
        let p = meas(&[1.0, 0.0]);
        let q = meas(&[0.5, 0.5]);
        // put mass on row 1 where p vanishes
        let w = vec![0.25, 0.25, 0.25, 0.25];
        assert!(FiniteJointLaw::from_weights(&p, &q, w).is_err());
    }

    #[test]
    fn split_with_unit_densities_is_a_convex_mixture() {
        // densities 1 everywhere: eta = gamma * xi and the filler is the
        // product of the scaled-down references
        let p = meas(&[0.5, 0.5]);
        let q = meas(&[0.5, 0.5]);
        let xi = FiniteJointLaw::from_weights(&p, &q, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let gamma = 0.5;
        let zeta = split_into_coupling(&xi, gamma).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = gamma * xi.weight(i, j) + (1.0 - gamma) * 0.25;
                assert_abs_diff_eq!(zeta.weight(i, j), expect, epsilon = 1e-12);
            }
        }
        assert!(zeta.marginal_gap_to_refs() < 1e-12);
    }

    #[test]
    fn product_reference_is_a_fixed_point_of_split() {
        let p = meas(&[0.3, 0.7]);
        let q = meas(&[0.6, 0.4]);
        let xi = independent_coupling(&p, &q).unwrap();
        let zeta = split_into_coupling(&xi, 0.37).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(zeta.weight(i, j), xi.weight(i, j), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn bounded_split_respects_cap_and_event_loss() {
        // concentrated generalized coupling: row marginal is a point mass on
        // atom 0 while the reference spreads mass, so densities exceed 1
        let p = meas(&[0.25, 0.75]);
        let q = meas(&[0.5, 0.5]);
        let xi = FiniteJointLaw::from_weights(&p, &q, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(xi.density_row[0], 4.0);
        // cap 1/gamma = 4 keeps everything: leak 0
        let (law, cert) = split_into_bounded_coupling(&xi, 0.25, 0.5).unwrap();
        assert!(cert.sup_density_row <= 4.0 + 1e-9);
        assert!(cert.sup_density_col <= 4.0 + 1e-9);
        assert!(cert.member);
        // diagonal event keeps its mass up to alpha/2
        let before = xi.event_probability(|x, y| x == y);
        let after = law.event_probability(|x, y| x == y);
        assert!(after >= before - 0.25 - 1e-9);
        // weights still a probability
        let total: f64 = law.weights.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn bounded_split_reports_leak_and_suggestion() {
        let p = meas(&[0.1, 0.9]);
        let q = meas(&[0.5, 0.5]);
        // first marginal = delta_0: density 10 on atom 0
        let xi = FiniteJointLaw::from_weights(&p, &q, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let err = split_into_bounded_coupling(&xi, 0.5, 0.4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("leaks mass"), "got {msg}");
        assert!(msg.contains("gamma"), "got {msg}");
    }

    #[test]
    fn mixture_on_two_atoms_keeps_event_mass_exactly() {
        let p = meas(&[0.6, 0.4]);
        let q = meas(&[0.6, 0.4]);
        // diagonal-supported coupling; event = diagonal
        let xi = FiniteJointLaw::from_weights(&p, &q, vec![0.6, 0.0, 0.0, 0.4]).unwrap();
        let out = conditional_mixture(&xi, |x, y| x == y && *x == 0).unwrap();
        assert!(!out.degenerate);
        assert_abs_diff_eq!(out.event_mass, 0.6, epsilon = 1e-12);
        // complement is the single atom (1,1): its product is itself, so the
        // event probability is preserved exactly
        let after = out.law.event_probability(|x, y| x == y && *x == 0);
        assert_abs_diff_eq!(after, 0.6, epsilon = 1e-12);
        assert!(out.law.marginal_gap_to_refs() < 1e-12);
    }

    #[test]
    fn mixture_flags_degenerate_events() {
        let p = meas(&[0.5, 0.5]);
        let q = meas(&[0.5, 0.5]);
        let xi = independent_coupling(&p, &q).unwrap();
        let out = conditional_mixture(&xi, |_, _| true).unwrap();
        assert!(out.degenerate);
        assert_abs_diff_eq!(out.event_mass, 1.0);
    }

    #[test]
    fn product_coupling_multiplies_densities_and_events() {
        let p = meas(&[0.5, 0.5]);
        let q = meas(&[0.5, 0.5]);
        let diag = FiniteJointLaw::from_weights(&p, &q, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let anti = FiniteJointLaw::from_weights(&p, &q, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let prod = product_coupling(&diag, &anti).unwrap();
        // both-close event factorizes
        let both = prod.event_probability(|(x, u), (y, v)| x == y && u == v);
        let g1 = diag.event_probability(|x, y| x == y);
        let g2 = anti.event_probability(|u, v| u == v);
        assert_abs_diff_eq!(both, g1 * g2, epsilon = 1e-12);
        // min-style event contains the both-close event
        let min_event = prod.event_probability(|(x, u), (y, v)| x == y || u == v);
        assert!(min_event >= both - 1e-12);
        let total: f64 = prod.weights.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    fn arb_joint(m: usize, n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(0.05f64..1.0, m),
            prop::collection::vec(0.05f64..1.0, n),
            prop::collection::vec(0.001f64..1.0, m * n),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn split_output_is_exact_coupling((pw, qw, jw) in arb_joint(3, 4), gamma in 0.05f64..0.95) {
            let ps: f64 = pw.iter().sum();
            let qs: f64 = qw.iter().sum();
            let js: f64 = jw.iter().sum();
            let p = meas(&pw.iter().map(|x| x / ps).collect::<Vec<_>>());
            let q = meas(&qw.iter().map(|x| x / qs).collect::<Vec<_>>());
            let xi = FiniteJointLaw::from_weights(&p, &q,
                jw.iter().map(|x| x / js).collect()).unwrap();
            let zeta = split_into_coupling(&xi, gamma).unwrap();
            prop_assert!(zeta.marginal_gap_to_refs() < 1e-10);
            prop_assert!(zeta.weights.iter().all(|&w| w >= 0.0));
            // kept-set guarantee: any event keeps gamma * (xi(A) - leak)
            let leak = split_leak(&xi, gamma);
            let a = |x: &usize, y: &usize| (*x + *y) % 2 == 0;
            prop_assert!(zeta.event_probability(a) >= gamma * (xi.event_probability(a) - leak) - 1e-10);
        }

        #[test]
        fn mixture_preserves_marginals_and_event((pw, qw, jw) in arb_joint(3, 3), t in 0usize..3) {
            let ps: f64 = pw.iter().sum();
            let qs: f64 = qw.iter().sum();
            let js: f64 = jw.iter().sum();
            let p = meas(&pw.iter().map(|x| x / ps).collect::<Vec<_>>());
            let q = meas(&qw.iter().map(|x| x / qs).collect::<Vec<_>>());
            let xi = FiniteJointLaw::from_weights(&p, &q,
                jw.iter().map(|x| x / js).collect()).unwrap();
            let event = |x: &usize, y: &usize| (*x).abs_diff(*y) <= t;
            let out = conditional_mixture(&xi, event).unwrap();
            // the mixture reshuffles mass but keeps xi's own marginals
            for (a, b) in xi.row_marginal().iter().zip(out.law.row_marginal()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            for (a, b) in xi.col_marginal().iter().zip(out.law.col_marginal()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            prop_assert!(out.law.event_probability(event) >= out.event_mass - 1e-10);
        }
    }
}
