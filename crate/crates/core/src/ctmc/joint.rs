//! The joint (variance, auxiliary) chain and the action of its exponential.

use nalgebra::DMatrix;

use super::sparse::SparseMatrix;
use super::{
    poisson_tail_bound, transition_matrix_dense, TransitionMatrix, TridiagGenerator, BAND_DROP, NEG_TOL, ROW_SUM_TOL,
    SERIES_TOL,
};
use crate::error::{Error, Result};

/// Largest joint state count for which dense exponentials are formed.
pub const DENSE_LIMIT: usize = 2500;

/// Generator of the joint chain: blocks `q_kj I_N`, plus `G_l` on block `l`.
///
/// States are ordered regime-major: 0-based state `(n, l)` sits at `l*N + n`.
#[derive(Clone, Debug)]
pub struct JointGenerator {
    q: TridiagGenerator,
    gs: Vec<TridiagGenerator>,
    n: usize,
}

pub fn build_joint_generator(q: &TridiagGenerator, gs: &[TridiagGenerator]) -> Result<JointGenerator> {
    JointGenerator::new(q.clone(), gs.to_vec())
}

impl JointGenerator {
    pub fn new(q: TridiagGenerator, gs: Vec<TridiagGenerator>) -> Result<Self> {
        if gs.len() != q.size() {
            return Err(Error::Dimension(format!("{} regime generators for {} variance states", gs.len(), q.size())));
        }
        let n = gs.first().map_or(0, |g| g.size());
        if n == 0 || gs.iter().any(|g| g.size() != n) {
            return Err(Error::Dimension("regime generators must share one non-empty size".into()));
        }
        Ok(JointGenerator { q, gs, n })
    }

    /// Number of variance states `m`.
    pub fn regimes(&self) -> usize {
        self.q.size()
    }

    /// Number of auxiliary states `N`.
    pub fn states_per_regime(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.n * self.q.size()
    }

    pub fn variance_generator(&self) -> &TridiagGenerator {
        &self.q
    }

    pub fn regime_generators(&self) -> &[TridiagGenerator] {
        &self.gs
    }

    /// 0-based flat index of auxiliary state `n` in regime `l`.
    pub fn index(&self, n: usize, l: usize) -> usize {
        l * self.n + n
    }

    /// Inverse of [`index`](Self::index): `(n, l)`.
    pub fn state(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    /// 1-based bijection `psi(x_n, v_l) = (l-1)N + n`.
    pub fn psi(&self, n: usize, l: usize) -> usize {
        (l - 1) * self.n + n
    }

    /// Inverse of [`psi`](Self::psi), 1-based.
    pub fn psi_inv(&self, k: usize) -> (usize, usize) {
        ((k - 1) % self.n + 1, (k - 1) / self.n + 1)
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        let ((ni, li), (nj, lj)) = (self.state(i), self.state(j));
        let mut r = 0.0;
        if ni == nj {
            r += self.q.rate(li, lj);
        }
        if li == lj {
            r += self.gs[li].rate(ni, nj);
        }
        r
    }

    pub fn max_exit_rate(&self) -> f64 {
        let qd = self.q.diag();
        self.gs
            .iter()
            .enumerate()
            .map(|(l, g)| g.diag().iter().map(|d| -(d + qd[l])).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }

    /// Whether any off-diagonal rate is negative.
    pub fn is_signed(&self) -> bool {
        self.q.is_signed() || self.gs.iter().any(|g| g.is_signed())
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let (qs, qd, qp) = (self.q.sub(), self.q.diag(), self.q.sup());
        let mut best: f64 = 0.0;
        for (l, g) in self.gs.iter().enumerate() {
            let vq = qs[l].abs() + qp[l].abs();
            for k in 0..self.n {
                let r = g.sub()[k].abs() + g.sup()[k].abs() + (g.diag()[k] + qd[l]).abs() + vq;
                best = best.max(r);
            }
        }
        best
    }

    /// `y = G x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let u = self.coefficients(1.0, 0.0);
        let mut y = vec![0.0; self.dim()];
        u.apply_into(x, &mut y);
        y
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let qr = self.q.row_sums();
        let mut out = Vec::with_capacity(self.dim());
        for (l, g) in self.gs.iter().enumerate() {
            out.extend(g.row_sums().iter().map(|s| s + qr[l]));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut a = DMatrix::zeros(d, d);
        for l in 0..self.regimes() {
            for n in 0..self.n {
                let i = self.index(n, l);
                a[(i, i)] = self.gs[l].diag()[n] + self.q.diag()[l];
                if n > 0 {
                    a[(i, i - 1)] = self.gs[l].sub()[n];
                }
                if n + 1 < self.n {
                    a[(i, i + 1)] = self.gs[l].sup()[n];
                }
                if l > 0 {
                    a[(i, i - self.n)] = self.q.sub()[l];
                }
                if l + 1 < self.regimes() {
                    a[(i, i + self.n)] = self.q.sup()[l];
                }
            }
        }
        a
    }

    /// Dense `exp(tG)`; only for chains with at most [`DENSE_LIMIT`] states.
    pub fn transition_matrix(&self, t: f64) -> Result<TransitionMatrix> {
        if self.dim() > DENSE_LIMIT {
            return Err(Error::Dimension(format!(
                "{} joint states exceed the dense limit {DENSE_LIMIT}; use the action routine",
                self.dim()
            )));
        }
        transition_matrix_dense(&self.to_dense(), t)
    }

    /// Five-diagonal coefficients of `a*I + b*G`.
    fn coefficients(&self, b: f64, a: f64) -> Uniformized {
        let (m, n) = (self.regimes(), self.n);
        let d = m * n;
        let mut c = Uniformized {
            n,
            rate: 0.0,
            diag: vec![0.0; d],
            left: vec![0.0; d],
            right: vec![0.0; d],
            down: vec![0.0; d],
            up: vec![0.0; d],
        };
        for l in 0..m {
            let g = &self.gs[l];
            for k in 0..n {
                let i = l * n + k;
                c.diag[i] = a + b * (g.diag()[k] + self.q.diag()[l]);
                c.left[i] = if k > 0 { b * g.sub()[k] } else { 0.0 };
                c.right[i] = if k + 1 < n { b * g.sup()[k] } else { 0.0 };
                c.down[i] = if l > 0 { b * self.q.sub()[l] } else { 0.0 };
                c.up[i] = if l + 1 < m { b * self.q.sup()[l] } else { 0.0 };
            }
        }
        c
    }

    /// Uniformized chain `P = I + G/rate` with `rate` the largest exit rate.
    pub fn uniformized(&self) -> Uniformized {
        let rate = self.max_exit_rate();
        let mut u = if rate > 0.0 { self.coefficients(1.0 / rate, 1.0) } else { self.coefficients(0.0, 1.0) };
        u.rate = rate;
        u
    }

    /// `exp(tG) v` without forming any matrix: uniformization (see
    /// [`Uniformized::expmv`]), or [`TaylorAction`] when rates are signed.
    pub fn expmv(&self, t: f64, v: &[f64]) -> Result<Vec<f64>> {
        if self.is_signed() {
            return Ok(TaylorAction::new(self, t)?.apply(v));
        }
        let u = self.uniformized();
        let w = PoissonWeights::new(u.rate * t, EXPMV_TOL)?;
        Ok(u.expmv(&w, v))
    }

    /// Sparse `exp(tG)` by scaling and squaring, for chains too large for
    /// dense exponentials. The series at the scaled-down step is taken in
    /// uniformized form unless rates are signed; entries of magnitude at
    /// most `1e-16` are dropped in each squaring.
    pub fn step_matrix(&self, t: f64) -> Result<SparseMatrix> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::param("t", format!("must be finite and >= 0, got {t}")));
        }
        let d = self.dim();
        let signed = self.is_signed();
        let rate = if signed { self.norm_inf() } else { self.max_exit_rate() };
        let lam = rate * t;
        if lam == 0.0 {
            return Ok(SparseMatrix::identity(d));
        }
        let mut s = 0;
        while lam / 2f64.powi(s) > 0.25 {
            s += 1;
        }
        let lam_s = lam / 2f64.powi(s);
        let mut acc = if signed {
            let a = self.coefficients(t / 2f64.powi(s), 0.0).to_sparse();
            let mut acc = SparseMatrix::identity(d);
            let mut term = SparseMatrix::identity(d);
            let (mut bound, mut k) = (1.0, 0);
            while bound > SERIES_TOL {
                k += 1;
                term = term.mul(&a, 0.0);
                term.scale(1.0 / k as f64);
                acc = acc.add_scaled(&term, 1.0);
                bound *= lam_s / k as f64;
            }
            acc
        } else {
            let p = self.coefficients(1.0 / rate, 1.0).to_sparse();
            let mut weight = (-lam_s).exp();
            let mut acc = SparseMatrix::identity(d);
            acc.scale(weight);
            let mut power = SparseMatrix::identity(d);
            let mut k = 0;
            while poisson_tail_bound(lam_s, k, weight) > SERIES_TOL {
                k += 1;
                power = power.mul(&p, 0.0);
                weight *= lam_s / k as f64;
                acc = acc.add_scaled(&power, weight);
            }
            acc
        };
        acc.normalize_rows();
        for _ in 0..s {
            acc = acc.mul(&acc, BAND_DROP);
            acc.normalize_rows();
        }
        for v in acc.values_mut() {
            if !v.is_finite() {
                return Err(Error::numerical("joint transition matrix", "non-finite entry"));
            }
            if !signed && *v < 0.0 {
                if *v < -NEG_TOL {
                    return Err(Error::numerical("joint transition matrix", format!("negative entry {v}")));
                }
                *v = 0.0;
            }
        }
        if let Some((i, s)) = acc.row_sums().into_iter().enumerate().find(|(_, s)| (s - 1.0).abs() > ROW_SUM_TOL) {
            return Err(Error::numerical("joint transition matrix", format!("row {i} sums to {s}")));
        }
        Ok(acc)
    }
}

/// Action of `exp(tG)` by a truncated Taylor series over substeps with
/// `h |G| <= 1`. Used when `G` has negative rates, where uniformization is
/// not available.
#[derive(Clone, Debug)]
pub struct TaylorAction {
    g: Uniformized,
    h: f64,
    substeps: usize,
}

impl TaylorAction {
    pub fn new(joint: &JointGenerator, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::param("t", format!("must be finite and >= 0, got {t}")));
        }
        let substeps = (joint.norm_inf() * t).ceil().max(1.0) as usize;
        Ok(TaylorAction { g: joint.coefficients(1.0, 0.0), h: t / substeps as f64, substeps })
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let norm = |x: &[f64]| x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let mut acc = v.to_vec();
        let mut term = vec![0.0; v.len()];
        let mut next = vec![0.0; v.len()];
        for _ in 0..self.substeps {
            term.copy_from_slice(&acc);
            for k in 1..=60 {
                self.g.apply_into(&term, &mut next);
                let c = self.h / k as f64;
                next.iter_mut().for_each(|x| *x *= c);
                std::mem::swap(&mut term, &mut next);
                acc.iter_mut().zip(&term).for_each(|(a, t)| *a += t);
                if norm(&term) <= EXPMV_TOL * 1e-2 * norm(&acc) {
                    break;
                }
            }
        }
        acc
    }
}

/// Poisson tail mass dropped by the action routine.
pub const EXPMV_TOL: f64 = 1e-15;

/// Stochastic five-diagonal matrix `I + G/rate` of a joint generator.
#[derive(Clone, Debug)]
pub struct Uniformized {
    n: usize,
    rate: f64,
    diag: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
    down: Vec<f64>,
    up: Vec<f64>,
}

impl Uniformized {
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    fn to_sparse(&self) -> SparseMatrix {
        let d = self.diag.len();
        let n = self.n;
        let rows = (0..d)
            .map(|i| {
                let mut row = Vec::with_capacity(5);
                if i >= n {
                    row.push((i - n, self.down[i]));
                }
                if i > 0 && i % n != 0 {
                    row.push((i - 1, self.left[i]));
                }
                row.push((i, self.diag[i]));
                if i + 1 < d && (i + 1) % n != 0 {
                    row.push((i + 1, self.right[i]));
                }
                if i + n < d {
                    row.push((i + n, self.up[i]));
                }
                row.retain(|&(_, v)| v != 0.0);
                row
            })
            .collect();
        SparseMatrix::from_rows(d, rows)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let d = self.diag.len();
        let n = self.n;
        for i in 0..d {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.left[i] * x[i - 1];
            }
            if i + 1 < d {
                s += self.right[i] * x[i + 1];
            }
            if i >= n {
                s += self.down[i] * x[i - n];
            }
            if i + n < d {
                s += self.up[i] * x[i + n];
            }
            y[i] = s;
        }
    }

    /// `exp(tG) v = sum_k w_k P^k v` with Poisson(`rate*t`) weights `w_k`.
    ///
    /// All terms are non-negative combinations of `v`, so there is no
    /// cancellation; the truncation error is at most the dropped tail mass
    /// times `max |v|`.
    pub fn expmv(&self, w: &PoissonWeights, v: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; v.len()];
        let mut cur = v.to_vec();
        let mut next = vec![0.0; v.len()];
        for k in 0..w.first + w.weights.len() {
            if k > 0 {
                self.apply_into(&cur, &mut next);
                std::mem::swap(&mut cur, &mut next);
            }
            if k >= w.first {
                let wk = w.weights[k - w.first];
                acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += wk * c);
            }
        }
        acc
    }
}

/// Truncated Poisson weights `e^{-lam} lam^k / k!`, `k = first..first+len`.
#[derive(Clone, Debug)]
pub struct PoissonWeights {
    first: usize,
    weights: Vec<f64>,
}

impl PoissonWeights {
    /// Weights whose dropped mass on either side is below `tol`.
    ///
    /// The recursion runs outwards from the mode with unit weight and the
    /// result is normalised, so `e^{-lam}` is never formed.
    pub fn new(lam: f64, tol: f64) -> Result<Self> {
        if !(lam >= 0.0) || !lam.is_finite() {
            return Err(Error::param(
                "t",
                format!("uniformization needs a finite non-negative horizon, got rate*t = {lam}"),
            ));
        }
        if lam == 0.0 {
            return Ok(PoissonWeights { first: 0, weights: vec![1.0] });
        }
        let mode = lam.floor() as usize;
        // Sum of the unnormalised weights is about sqrt(2 pi lam) for large lam.
        let scale = (2.0 * std::f64::consts::PI * lam).sqrt().max(1.0);
        let mut left = Vec::new();
        let mut w = 1.0;
        let mut k = mode;
        while k > 0 {
            let tail = w * lam / (lam - k as f64 + 1.0);
            if tail / scale < tol {
                break;
            }
            w *= k as f64 / lam;
            k -= 1;
            left.push(w);
        }
        let first = k;
        let mut weights: Vec<f64> = left.into_iter().rev().collect();
        weights.push(1.0);
        let (mut w, mut k) = (1.0, mode);
        loop {
            let next = k as f64 + 1.0;
            if next > lam && w * next / (next - lam) / scale < tol {
                break;
            }
            w *= lam / next;
            k += 1;
            weights.push(w);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(PoissonWeights { first, weights })
    }

    /// Index of the first retained weight.
    pub fn first(&self) -> usize {
        self.first
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}
