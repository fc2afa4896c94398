//! Generators of the variance chain, of the per-regime auxiliary chains and of
//! the joint chain, together with their transition matrices.

mod banded;
mod expm;
mod joint;
mod sparse;

pub use banded::BandedMatrix;
pub use expm::expm;
pub use joint::{
    build_joint_generator, JointGenerator, PoissonWeights, TaylorAction, Uniformized, DENSE_LIMIT, EXPMV_TOL,
};
pub use sparse::SparseMatrix;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::models::{DecoupledCoeffs, ModelSpec};

/// Treatment of interior rows where matching both local moments needs a
/// negative rate (the grid is too coarse for the local drift).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatePolicy {
    /// The negative rate is set to zero; the other is kept.
    Clamp,
    /// The negative rate is set to zero and the other is chosen so the drift
    /// is still matched; the local variance is overstated instead.
    Upwind,
    /// Rates are kept as computed, so both moments stay matched. Transition
    /// matrices may then have negative entries and are not probabilities.
    #[default]
    Signed,
}

/// Birth-death generator: rates to the neighbouring states only.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagGenerator {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    clamped: Vec<usize>,
}

impl TridiagGenerator {
    /// Generator of a single absorbing state (or `n` of them).
    pub fn zero(n: usize) -> Self {
        TridiagGenerator { sub: vec![0.0; n], diag: vec![0.0; n], sup: vec![0.0; n], clamped: Vec::new() }
    }

    /// Locally consistent rates on `points` for drift `mu[i]` and squared
    /// diffusion `sigma2[i]`, with negative interior rates clamped to zero.
    pub fn locally_consistent(points: &[f64], mu: &[f64], sigma2: &[f64]) -> Result<Self> {
        Self::with_policy(points, mu, sigma2, RatePolicy::Clamp)
    }

    /// Interior rows match the first two local moments; boundary rows push
    /// inward at rate `|mu|/delta`. Rows where a moment-matching rate is
    /// negative are handled by `policy` and recorded.
    pub fn with_policy(points: &[f64], mu: &[f64], sigma2: &[f64], policy: RatePolicy) -> Result<Self> {
        let n = points.len();
        if n == 0 || mu.len() != n || sigma2.len() != n {
            return Err(Error::Dimension(format!("{} points, {} drifts, {} variances", n, mu.len(), sigma2.len())));
        }
        let mut g = TridiagGenerator::zero(n);
        if n == 1 {
            return Ok(g);
        }
        let d: Vec<f64> = points.windows(2).map(|w| w[1] - w[0]).collect();
        if d.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Grid("points must be strictly increasing".into()));
        }
        g.sup[0] = mu[0].abs() / d[0];
        g.sub[n - 1] = mu[n - 1].abs() / d[n - 2];
        for i in 1..n - 1 {
            let (dm, dp) = (d[i - 1], d[i]);
            let mut down = (sigma2[i] - dp * mu[i]) / (dm * (dm + dp));
            let mut up = (sigma2[i] + dm * mu[i]) / (dp * (dm + dp));
            if down < 0.0 || up < 0.0 {
                g.clamped.push(i);
                match policy {
                    RatePolicy::Clamp => {
                        down = down.max(0.0);
                        up = up.max(0.0);
                    }
                    RatePolicy::Upwind if down < 0.0 => {
                        down = 0.0;
                        up = mu[i] / dp;
                    }
                    RatePolicy::Upwind => {
                        up = 0.0;
                        down = -mu[i] / dm;
                    }
                    RatePolicy::Signed => {}
                }
            }
            g.sub[i] = down;
            g.sup[i] = up;
        }
        for i in 0..n {
            g.diag[i] = -(g.sub[i] + g.sup[i]);
        }
        if g.sub.iter().chain(&g.sup).any(|v| !v.is_finite()) {
            return Err(Error::numerical("generator", "non-finite rate"));
        }
        if !g.clamped.is_empty() && policy != RatePolicy::Signed {
            log::warn!(
                "{} rows with negative moment-matching rates adjusted ({:?}; first at state {})",
                g.clamped.len(),
                policy,
                g.clamped[0]
            );
        }
        Ok(g)
    }

    /// Whether any off-diagonal rate is negative (only under [`RatePolicy::Signed`]).
    pub fn is_signed(&self) -> bool {
        self.sub.iter().chain(&self.sup).any(|&v| v < 0.0)
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn sup(&self) -> &[f64] {
        &self.sup
    }

    /// Interior states whose moment-matching rates were negative.
    pub fn clamped(&self) -> &[usize] {
        &self.clamped
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if j + 1 == i {
            self.sub[i]
        } else if i + 1 == j {
            self.sup[i]
        } else {
            0.0
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.size()).map(|i| self.sub[i] + self.diag[i] + self.sup[i]).collect()
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |a, &d| a.max(-d))
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.size()).map(|i| self.sub[i].abs() + self.diag[i].abs() + self.sup[i].abs()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.size();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            q[(i, i)] = self.diag[i];
            if i > 0 {
                q[(i, i - 1)] = self.sub[i];
            }
            if i + 1 < n {
                q[(i, i + 1)] = self.sup[i];
            }
        }
        q
    }

    pub fn to_banded(&self) -> BandedMatrix {
        BandedMatrix::from_tridiag(&self.sub, &self.diag, &self.sup)
    }

    /// `y = Q x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.size();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.sup[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// `exp(tQ)` in banded form (see [`transition_matrix`]).
    pub fn transition(&self, t: f64) -> Result<TransitionMatrix> {
        transition_matrix(self, t)
    }
}

/// Variance-chain generator on `vgrid`.
///
/// A two-point grid yields the boundary rows only; a single point yields the
/// zero generator.
pub fn build_variance_generator(model: &ModelSpec, vgrid: &Grid, policy: RatePolicy) -> Result<TridiagGenerator> {
    let p = vgrid.points();
    if let Some(bad) = p.iter().find(|&&y| !model.state_space.contains(y)) {
        return Err(Error::Grid(format!("variance grid point {bad} outside the model state space")));
    }
    let mu: Vec<f64> = p.iter().map(|&y| model.mu_v(y)).collect();
    let s2: Vec<f64> = p.iter().map(|&y| model.sigma_v(y).powi(2)).collect();
    TridiagGenerator::with_policy(p, &mu, &s2, policy)
}

/// One auxiliary-process generator per variance state.
pub fn build_regime_generators(
    dec: &DecoupledCoeffs,
    xgrid: &Grid,
    vgrid: &Grid,
    policy: RatePolicy,
) -> Result<Vec<TridiagGenerator>> {
    let x = xgrid.points();
    vgrid
        .points()
        .par_iter()
        .map(|&v| {
            let mu: Vec<f64> = x.iter().map(|&xi| dec.mu_x(xi, v)).collect();
            let s2 = dec.sigma_x(v).powi(2);
            TridiagGenerator::with_policy(x, &mu, &vec![s2; x.len()], policy)
        })
        .collect()
}

/// Transition matrix stored by rows. Rows sum to one; entries are
/// non-negative unless the matrix comes from a signed generator.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    inner: BandedMatrix,
    signed: bool,
}

/// Entries in `[-NEG_TOL, 0)` are rounding noise and clamped; anything below is an error.
pub const NEG_TOL: f64 = 1e-12;
/// Largest admissible deviation of a row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-10;

impl TransitionMatrix {
    /// Validates and clamps a candidate stochastic matrix.
    pub fn new(inner: BandedMatrix) -> Result<Self> {
        Self::validated(inner, false)
    }

    /// Like [`new`](Self::new) but negative entries are allowed.
    pub fn signed(inner: BandedMatrix) -> Result<Self> {
        Self::validated(inner, true)
    }

    fn validated(mut inner: BandedMatrix, signed: bool) -> Result<Self> {
        for v in inner.values_mut() {
            if !v.is_finite() {
                return Err(Error::numerical("transition matrix", "non-finite entry"));
            }
            if signed {
                continue;
            }
            if *v < -NEG_TOL {
                return Err(Error::numerical("transition matrix", format!("negative entry {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        if let Some((i, s)) = inner.row_sums().into_iter().enumerate().find(|(_, s)| (s - 1.0).abs() > ROW_SUM_TOL) {
            return Err(Error::numerical("transition matrix", format!("row {i} sums to {s}")));
        }
        Ok(TransitionMatrix { inner, signed })
    }

    pub fn from_dense(p: &DMatrix<f64>) -> Result<Self> {
        Self::new(BandedMatrix::from_dense_rows(p.nrows(), &dense_rows(p)))
    }

    pub fn from_dense_signed(p: &DMatrix<f64>) -> Result<Self> {
        Self::signed(BandedMatrix::from_dense_rows(p.nrows(), &dense_rows(p)))
    }

    /// Whether negative entries were allowed.
    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn banded(&self) -> &BandedMatrix {
        &self.inner
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_row_slice(n, n, &self.inner.to_dense_rows())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.inner.row_sums()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.inner.apply(x)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        self.inner.apply_into(x, y)
    }

    pub fn apply2_into(&self, x1: &[f64], x2: &[f64], y1: &mut [f64], y2: &mut [f64]) {
        self.inner.apply2_into(x1, x2, y1, y2)
    }

    pub fn mul(&self, other: &TransitionMatrix) -> Result<TransitionMatrix> {
        Self::validated(self.inner.mul(&other.inner, 0.0), self.signed || other.signed)
    }
}

fn dense_rows(p: &DMatrix<f64>) -> Vec<f64> {
    let n = p.nrows();
    (0..n).flat_map(|i| (0..n).map(move |j| p[(i, j)])).collect()
}

/// Entries below this are dropped while squaring transition matrices.
pub(crate) const BAND_DROP: f64 = 1e-16;
/// Series truncation error at the scaled-down time step.
pub(crate) const SERIES_TOL: f64 = 1e-18;

/// `exp(tQ)` for a birth-death generator.
///
/// Scales `tQ` down until its norm is at most 1/4, sums the exponential
/// series there, then squares back in banded form. For non-negative rates
/// the series is taken in uniformized form so that every term is
/// non-negative.
pub fn transition_matrix(gen: &TridiagGenerator, t: f64) -> Result<TransitionMatrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param("t", format!("must be finite and >= 0, got {t}")));
    }
    let n = gen.size();
    let signed = gen.is_signed();
    let rate = if signed { gen.norm_inf() } else { gen.max_exit_rate() };
    let lam = rate * t;
    if lam == 0.0 {
        return TransitionMatrix::new(BandedMatrix::identity(n));
    }
    let mut s = 0;
    while lam / 2f64.powi(s) > 0.25 {
        s += 1;
    }
    let lam_s = lam / 2f64.powi(s);
    let mut acc = if signed {
        // Plain Taylor series of A = tQ/2^s with |A| <= 1/4.
        let h = t / 2f64.powi(s);
        let a = BandedMatrix::from_tridiag(
            &gen.sub.iter().map(|v| v * h).collect::<Vec<_>>(),
            &gen.diag.iter().map(|v| v * h).collect::<Vec<_>>(),
            &gen.sup.iter().map(|v| v * h).collect::<Vec<_>>(),
        );
        let mut acc = BandedMatrix::identity(n);
        let mut term = BandedMatrix::identity(n);
        let mut bound = 1.0;
        let mut k = 0;
        while bound > SERIES_TOL {
            k += 1;
            term = term.mul(&a, 0.0);
            term.scale(1.0 / k as f64);
            acc = acc.add_scaled(&term, 1.0);
            bound *= lam_s / k as f64;
        }
        acc
    } else {
        // P = I + Q/rate is stochastic and non-negative.
        let diag: Vec<f64> = gen.diag.iter().map(|d| 1.0 + d / rate).collect();
        let sub: Vec<f64> = gen.sub.iter().map(|v| v / rate).collect();
        let sup: Vec<f64> = gen.sup.iter().map(|v| v / rate).collect();
        let p = BandedMatrix::from_tridiag(&sub, &diag, &sup);
        let mut weight = (-lam_s).exp();
        let mut acc = BandedMatrix::identity(n);
        acc.scale(weight);
        let mut power = BandedMatrix::identity(n);
        let mut k = 0;
        while poisson_tail_bound(lam_s, k, weight) > SERIES_TOL {
            k += 1;
            power = power.mul(&p, 0.0);
            weight *= lam_s / k as f64;
            acc = acc.add_scaled(&power, weight);
        }
        acc
    };
    // Rounding in repeated squaring drifts the row sums; the exact matrix has unit row sums.
    acc.normalize_rows();
    for _ in 0..s {
        acc = acc.mul(&acc, BAND_DROP);
        acc.normalize_rows();
    }
    TransitionMatrix::validated(acc, signed)
}

/// Upper bound on the Poisson(`lam`) mass beyond `k`, given the weight at `k`.
pub(crate) fn poisson_tail_bound(lam: f64, k: usize, weight_k: f64) -> f64 {
    let ratio = lam / (k as f64 + 2.0);
    if ratio >= 1.0 {
        return f64::INFINITY;
    }
    weight_k * lam / (k as f64 + 1.0) / (1.0 - ratio)
}

/// `exp(tQ)` by dense Padé scaling and squaring.
pub fn transition_matrix_dense(q: &DMatrix<f64>, t: f64) -> Result<TransitionMatrix> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param("t", format!("must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return TransitionMatrix::new(BandedMatrix::identity(q.nrows()));
    }
    let signed = (0..q.nrows()).any(|i| (0..q.ncols()).any(|j| i != j && q[(i, j)] < 0.0));
    let p = expm(&(q * t))?;
    // Same projection onto unit row sums as the banded path; for signed
    // generators the entries can be large and the drift is above ROW_SUM_TOL.
    let mut b = BandedMatrix::from_dense_rows(p.nrows(), &dense_rows(&p));
    b.normalize_rows();
    if signed {
        TransitionMatrix::signed(b)
    } else {
        TransitionMatrix::new(b)
    }
}
