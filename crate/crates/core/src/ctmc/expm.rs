//! Dense matrix exponential by scaling and squaring with diagonal Padé
//! approximants of degree 3 to 13.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const THETA: [(usize, f64); 4] =
    [(3, 1.495585217958292e-2), (5, 2.539398330063230e-1), (7, 9.504178996162932e-1), (9, 2.097847961257068e0)];
const THETA_13: f64 = 5.371920351148152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] =
    [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(A)` for a square matrix.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("expm of a {}x{} matrix", n, a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("expm", "non-finite input"));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let nrm = norm1(a);
    if nrm == 0.0 {
        return Ok(eye);
    }
    for (m, theta) in THETA {
        if nrm <= theta {
            return pade_low(a, m, &eye);
        }
    }
    let s = ((nrm / THETA_13).log2().ceil()).max(0.0) as i32;
    let scaled = a * 2f64.powi(-s);
    let mut r = pade13(&scaled, &eye)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn solve(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = &v + &u;
    let q = v - u;
    q.lu().solve(&p).ok_or_else(|| Error::numerical("expm", "singular Padé denominator"))
}

fn pade_low(a: &DMatrix<f64>, m: usize, eye: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b: &[f64] = match m {
        3 => &B3,
        5 => &B5,
        7 => &B7,
        _ => &B9,
    };
    let a2 = a * a;
    let mut powers = vec![eye.clone(), a2.clone()];
    while powers.len() <= m / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u = DMatrix::zeros(a.nrows(), a.nrows());
    let mut v = DMatrix::zeros(a.nrows(), a.nrows());
    for (k, p) in powers.iter().enumerate() {
        u += p * b[2 * k + 1];
        v += p * b[2 * k];
    }
    solve(a * u, v)
}

fn pade13(a: &DMatrix<f64>, eye: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + eye * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + eye * b[0];
    solve(u, v)
}
