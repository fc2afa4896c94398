//! Row-banded matrices: each row stores one contiguous run of columns.
//!
//! Transition matrices of birth-death chains over short horizons decay
//! quickly away from the diagonal, so trimming negligible row ends keeps
//! products and matrix-vector work proportional to the effective band.

#[derive(Clone, Debug, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    start: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn identity(n: usize) -> Self {
        BandedMatrix { n, start: (0..n).collect(), offset: (0..=n).collect(), data: vec![1.0; n] }
    }

    /// Tridiagonal matrix from its three diagonals (`sub[0]` and `sup[n-1]` ignored).
    pub fn from_tridiag(sub: &[f64], diag: &[f64], sup: &[f64]) -> Self {
        let n = diag.len();
        let mut b = BandedBuilder::new(n);
        for i in 0..n {
            let lo = i.saturating_sub(1);
            let mut row = Vec::with_capacity(3);
            if i > 0 {
                row.push(sub[i]);
            }
            row.push(diag[i]);
            if i + 1 < n {
                row.push(sup[i]);
            }
            b.push_row(lo, &row);
        }
        b.finish()
    }

    /// Dense row-major input; exact zeros at row ends are trimmed.
    pub fn from_dense_rows(n: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n);
        let mut b = BandedBuilder::new(n);
        for i in 0..n {
            let row = &dense[i * n..(i + 1) * n];
            let (lo, hi) = trim(row, 0.0);
            b.push_row(lo, &row[lo..hi.max(lo)]);
        }
        b.finish()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// `(first column, values)` of row `i`.
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        (self.start[i], &self.data[self.offset[i]..self.offset[i + 1]])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, r) = self.row(i);
        if j < s || j >= s + r.len() {
            0.0
        } else {
            r[j - s]
        }
    }

    pub fn to_dense_rows(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (s, r) = self.row(i);
            out[i * self.n + s..i * self.n + s + r.len()].copy_from_slice(r);
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// `y = A x`.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let (s, r) = self.row(i);
            *yi = dot(r, &x[s..s + r.len()]);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    /// Two right-hand sides in one sweep over the stored entries.
    pub fn apply2_into(&self, x1: &[f64], x2: &[f64], y1: &mut [f64], y2: &mut [f64]) {
        for i in 0..self.n {
            let (s, r) = self.row(i);
            let (a, b) = dot2(r, &x1[s..s + r.len()], &x2[s..s + r.len()]);
            y1[i] = a;
            y2[i] = b;
        }
    }

    /// `A B`, trimming row-end entries with magnitude `<= drop`.
    pub fn mul(&self, other: &BandedMatrix, drop: f64) -> BandedMatrix {
        assert_eq!(self.n, other.n);
        let mut b = BandedBuilder::new(self.n);
        let mut buf: Vec<f64> = Vec::new();
        for i in 0..self.n {
            let (s, r) = self.row(i);
            if r.is_empty() {
                b.push_row(i, &[]);
                continue;
            }
            let mut lo = usize::MAX;
            let mut hi = 0;
            for k in s..s + r.len() {
                let (sk, rk) = other.row(k);
                if !rk.is_empty() {
                    lo = lo.min(sk);
                    hi = hi.max(sk + rk.len());
                }
            }
            if lo >= hi {
                b.push_row(i, &[]);
                continue;
            }
            buf.clear();
            buf.resize(hi - lo, 0.0);
            for (dk, &a) in r.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let (sk, rk) = other.row(s + dk);
                axpy(a, rk, &mut buf[sk - lo..sk - lo + rk.len()]);
            }
            let (tl, th) = trim(&buf, drop);
            b.push_row(lo + tl, &buf[tl..th.max(tl)]);
        }
        b.finish()
    }

    /// Divides each non-empty row by its sum.
    pub(crate) fn normalize_rows(&mut self) {
        for i in 0..self.n {
            let (a, b) = (self.offset[i], self.offset[i + 1]);
            let s: f64 = self.data[a..b].iter().sum();
            if s != 0.0 {
                self.data[a..b].iter_mut().for_each(|v| *v /= s);
            }
        }
    }

    /// `self + w * other` on the union of the row bands.
    pub fn add_scaled(&self, other: &BandedMatrix, w: f64) -> BandedMatrix {
        assert_eq!(self.n, other.n);
        let mut b = BandedBuilder::new(self.n);
        let mut buf = Vec::new();
        for i in 0..self.n {
            let (s1, r1) = self.row(i);
            let (s2, r2) = other.row(i);
            let lo = s1.min(s2);
            let hi = (s1 + r1.len()).max(s2 + r2.len());
            buf.clear();
            buf.resize(hi - lo, 0.0);
            for (d, v) in r1.iter().enumerate() {
                buf[s1 - lo + d] += v;
            }
            axpy(w, r2, &mut buf[s2 - lo..s2 - lo + r2.len()]);
            b.push_row(lo, &buf);
        }
        b.finish()
    }

    pub fn scale(&mut self, w: f64) {
        self.data.iter_mut().for_each(|v| *v *= w);
    }
}

struct BandedBuilder {
    n: usize,
    start: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl BandedBuilder {
    fn new(n: usize) -> Self {
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        BandedBuilder { n, start: Vec::with_capacity(n), offset, data: Vec::new() }
    }

    fn push_row(&mut self, start: usize, row: &[f64]) {
        self.start.push(start);
        self.data.extend_from_slice(row);
        self.offset.push(self.data.len());
    }

    fn finish(self) -> BandedMatrix {
        assert_eq!(self.start.len(), self.n);
        BandedMatrix { n: self.n, start: self.start, offset: self.offset, data: self.data }
    }
}

/// Range `[lo, hi)` left after dropping row-end entries with `|v| <= drop`.
fn trim(row: &[f64], drop: f64) -> (usize, usize) {
    let lo = row.iter().position(|v| v.abs() > drop).unwrap_or(row.len());
    let hi = row.iter().rposition(|v| v.abs() > drop).map_or(lo, |p| p + 1);
    (lo, hi)
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * c + j] * b[4 * c + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..n {
        s += a[j] * b[j];
    }
    s
}

#[inline]
fn dot2(a: &[f64], x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = a.len();
    let mut ax = [0.0f64; 4];
    let mut ay = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        for j in 0..4 {
            let w = a[4 * c + j];
            ax[j] += w * x[4 * c + j];
            ay[j] += w * y[4 * c + j];
        }
    }
    let mut sx = (ax[0] + ax[1]) + (ax[2] + ax[3]);
    let mut sy = (ay[0] + ay[1]) + (ay[2] + ay[3]);
    for j in 4 * chunks..n {
        sx += a[j] * x[j];
        sy += a[j] * y[j];
    }
    (sx, sy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_matches_dense() {
        let a = BandedMatrix::from_tridiag(&[0.0, 1.0, 2.0, 3.0], &[4.0, 5.0, 6.0, 7.0], &[8.0, 9.0, 1.0, 0.0]);
        let p = a.mul(&a, 0.0);
        let d = a.to_dense_rows();
        for i in 0..4 {
            for j in 0..4 {
                let e: f64 = (0..4).map(|k| d[i * 4 + k] * d[k * 4 + j]).sum();
                assert_eq!(p.get(i, j), e);
            }
        }
        let x = [1.0, -2.0, 0.5, 3.0];
        let y = p.apply(&x);
        for (i, yi) in y.iter().enumerate() {
            let e: f64 = (0..4).map(|j| p.get(i, j) * x[j]).sum();
            assert!((yi - e).abs() < 1e-12);
        }
    }

    #[test]
    fn add_scaled_unions_bands() {
        let i = BandedMatrix::identity(3);
        let t = BandedMatrix::from_tridiag(&[0.0, 1.0, 1.0], &[0.0; 3], &[1.0, 1.0, 0.0]);
        let s = i.add_scaled(&t, 2.0);
        assert_eq!(s.get(0, 1), 2.0);
        assert_eq!(s.get(1, 1), 1.0);
        assert_eq!(s.get(2, 1), 2.0);
    }
}
