//! The 30-day volatility index on the variance chain, and the Heston closed form.

use std::fmt::Write as _;

use crate::ctmc::{transition_matrix, TridiagGenerator};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::models::ModelSpec;

/// Index horizon: 30 calendar days, in years.
pub const TAU: f64 = 30.0 / 365.0;

/// Index level per variance state (annualised volatility, decimal).
#[derive(Clone, Debug, PartialEq)]
pub struct VixTable {
    states: Vec<f64>,
    values: Vec<f64>,
    tau: f64,
    steps: usize,
}

/// Index on the chain with generator `q` over `vgrid`, by the right-endpoint
/// rule with `n` steps:
/// `VIX_k^2 = (dt/tau) sum_{z=1..n} e_k exp(q z dt) H`, `h_j = sigma_S(v_j)^2`.
pub fn vix_ctmc(q: &TridiagGenerator, model: &ModelSpec, vgrid: &Grid, n: usize) -> Result<VixTable> {
    if n == 0 {
        return Err(Error::param("n", "need at least one quadrature step"));
    }
    if q.size() != vgrid.len() {
        return Err(Error::Dimension(format!("generator has {} states, grid {}", q.size(), vgrid.len())));
    }
    let dt = TAU / n as f64;
    let a = transition_matrix(q, dt)?;
    let mut e: Vec<f64> = vgrid.points().iter().map(|&v| model.sigma_s(v).powi(2)).collect();
    let mut s = vec![0.0; e.len()];
    let mut next = vec![0.0; e.len()];
    for _ in 0..n {
        a.apply_into(&e, &mut next);
        std::mem::swap(&mut e, &mut next);
        s.iter_mut().zip(&e).for_each(|(si, ei)| *si += ei);
    }
    let mut values = Vec::with_capacity(s.len());
    for si in s {
        let v2 = si * dt / TAU;
        assert!(v2 >= 0.0 && v2.is_finite(), "squared index must be a non-negative mixture, got {v2}");
        values.push(v2.sqrt());
    }
    Ok(VixTable { states: vgrid.points().to_vec(), values, tau: TAU, steps: n })
}

/// Closed-form Heston index: `sqrt(B + A v)` with
/// `A = (1 - e^{-kappa tau})/(kappa tau)`, `B = theta (kappa tau - 1 + e^{-kappa tau})/(kappa tau)`.
pub fn vix_heston_closed_form(kappa: f64, theta: f64, v: f64) -> f64 {
    let kt = kappa * TAU;
    let e = (-kt).exp();
    let a = (1.0 - e) / kt;
    let b = theta * (kt - 1.0 + e) / kt;
    (b + a * v).sqrt()
}

impl VixTable {
    /// Table from explicit values (e.g. a closed form evaluated on a grid).
    pub fn from_values(states: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if states.len() != values.len() || states.is_empty() {
            return Err(Error::Dimension("states and values must be non-empty and of equal length".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("values", "index values must be finite and >= 0"));
        }
        if states.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("states", "must be strictly increasing"));
        }
        Ok(VixTable { states, values, tau: TAU, steps: 0 })
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Index at an arbitrary variance state. The squared index is interpolated
    /// linearly between grid points (it is affine in the state for affine
    /// drifts) and held flat outside the grid.
    pub fn vix_at(&self, v: f64) -> f64 {
        let s = &self.states;
        let n = s.len();
        if n == 1 || v <= s[0] {
            return self.values[0];
        }
        if v >= s[n - 1] {
            return self.values[n - 1];
        }
        let j = s.partition_point(|&p| p <= v);
        let (i0, i1) = (j - 1, j);
        if v == s[i0] {
            return self.values[i0];
        }
        let w = (v - s[i0]) / (s[i1] - s[i0]);
        let v2 = (1.0 - w) * self.values[i0].powi(2) + w * self.values[i1].powi(2);
        v2.sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("v,vix\n");
        for (s, v) in self.states.iter().zip(&self.values) {
            let _ = writeln!(out, "{s:.16e},{v:.16e}");
        }
        out
    }
}
