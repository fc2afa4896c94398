//! Compressed sparse row matrices for one-step transition matrices of the
//! joint chain, where mass spreads over a few regimes and a band of
//! auxiliary states.

use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        SparseMatrix { n, indptr: (0..=n).collect(), indices: (0..n).collect(), data: vec![1.0; n] }
    }

    /// From per-row `(column, value)` lists; columns must be ascending.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), n);
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut data = Vec::with_capacity(nnz);
        for row in rows {
            for (j, v) in row {
                debug_assert!(j < n);
                indices.push(j);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        SparseMatrix { n, indptr, indices, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// `(columns, values)` of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.data[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn scale(&mut self, w: f64) {
        self.data.iter_mut().for_each(|v| *v *= w);
    }

    /// Divides each non-empty row by its sum.
    pub(crate) fn normalize_rows(&mut self) {
        for i in 0..self.n {
            let r = self.indptr[i]..self.indptr[i + 1];
            let s: f64 = self.data[r.clone()].iter().sum();
            if s != 0.0 {
                self.data[r].iter_mut().for_each(|v| *v /= s);
            }
        }
    }

    /// `self + w * other`.
    pub fn add_scaled(&self, other: &SparseMatrix, w: f64) -> SparseMatrix {
        assert_eq!(self.n, other.n);
        let rows = (0..self.n)
            .map(|i| {
                let (ca, va) = self.row(i);
                let (cb, vb) = other.row(i);
                let mut out = Vec::with_capacity(ca.len() + cb.len());
                let (mut p, mut q) = (0, 0);
                while p < ca.len() || q < cb.len() {
                    if q == cb.len() || (p < ca.len() && ca[p] < cb[q]) {
                        out.push((ca[p], va[p]));
                        p += 1;
                    } else if p == ca.len() || cb[q] < ca[p] {
                        out.push((cb[q], w * vb[q]));
                        q += 1;
                    } else {
                        out.push((ca[p], va[p] + w * vb[q]));
                        p += 1;
                        q += 1;
                    }
                }
                out
            })
            .collect();
        SparseMatrix::from_rows(self.n, rows)
    }

    /// `self * other`, dropping entries with magnitude at most `drop`.
    ///
    /// Rows are formed independently (in parallel) with a dense
    /// accumulator, so the result does not depend on the schedule.
    pub fn mul(&self, other: &SparseMatrix, drop: f64) -> SparseMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map_init(
                || (vec![0.0f64; n], vec![false; n], Vec::<usize>::new()),
                |(acc, seen, touched), i| {
                    let (ca, va) = self.row(i);
                    for (&k, &a) in ca.iter().zip(va) {
                        if a == 0.0 {
                            continue;
                        }
                        let (cb, vb) = other.row(k);
                        for (&j, &b) in cb.iter().zip(vb) {
                            if !seen[j] {
                                seen[j] = true;
                                touched.push(j);
                            }
                            acc[j] += a * b;
                        }
                    }
                    touched.sort_unstable();
                    let mut out = Vec::with_capacity(touched.len());
                    for &j in touched.iter() {
                        if acc[j].abs() > drop {
                            out.push((j, acc[j]));
                        }
                        acc[j] = 0.0;
                        seen[j] = false;
                    }
                    touched.clear();
                    out
                },
            )
            .collect();
        SparseMatrix::from_rows(n, rows)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        });
    }

    /// Two products sharing one pass over the matrix.
    pub fn apply2_into(&self, x1: &[f64], x2: &[f64], y1: &mut [f64], y2: &mut [f64]) {
        y1.par_iter_mut().zip(y2.par_iter_mut()).enumerate().for_each(|(i, (a1, a2))| {
            let (c, v) = self.row(i);
            let (mut s1, mut s2) = (0.0, 0.0);
            for (&j, &a) in c.iter().zip(v) {
                s1 += a * x1[j];
                s2 += a * x2[j];
            }
            *a1 = s1;
            *a2 = s2;
        });
    }
}
