//! Fee structures (constant and VIX-linked), the surrender charge, and
//! fair-fee calibration.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::pricer::{price_european_fast, ContractSpec, GridSpec, Lattice};
use crate::volindex::{vix_heston_closed_form, VixTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeeKind {
    Constant,
    Vix2,
    Vix2Capped,
    Vix,
}

/// Where the index level for a variance state comes from.
#[derive(Clone, Debug)]
pub enum VixSource {
    /// No index needed (constant fees).
    None,
    HestonClosedForm {
        kappa: f64,
        theta: f64,
    },
    Table(Arc<VixTable>),
    /// Computed on the pricing variance chain with this many quadrature
    /// steps when the lattice is built.
    Chain {
        steps: usize,
    },
}

#[derive(Clone, Debug)]
pub struct FeeStructure {
    kind: FeeKind,
    base: f64,
    multiplier: f64,
    cap: Option<f64>,
    vix: VixSource,
}

impl FeeStructure {
    pub fn constant(base: f64) -> Result<Self> {
        Self::new(FeeKind::Constant, base, 0.0, None, VixSource::None)
    }

    pub fn new(kind: FeeKind, base: f64, multiplier: f64, cap: Option<f64>, vix: VixSource) -> Result<Self> {
        if !(base >= 0.0 && base.is_finite()) {
            return Err(Error::param("fee.base", format!("must be finite and >= 0, got {base}")));
        }
        if !(multiplier >= 0.0 && multiplier.is_finite()) {
            return Err(Error::param("fee.multiplier", format!("must be finite and >= 0, got {multiplier}")));
        }
        match (kind, cap) {
            (FeeKind::Vix2Capped, Some(k)) if k > 0.0 => {}
            (FeeKind::Vix2Capped, _) => return Err(Error::param("fee.cap", "capped fees need a cap > 0")),
            (_, Some(_)) => return Err(Error::param("fee.cap", "only the capped kind takes a cap")),
            _ => {}
        }
        if kind != FeeKind::Constant && multiplier > 0.0 && matches!(vix, VixSource::None) {
            return Err(Error::param("fee.vix_source", "index-linked fees need an index source"));
        }
        Ok(FeeStructure { kind, base, multiplier, cap, vix })
    }

    pub fn kind(&self) -> FeeKind {
        self.kind
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn vix_source(&self) -> &VixSource {
        &self.vix
    }

    /// Same structure with another base fee.
    pub fn with_base(&self, base: f64) -> Result<Self> {
        Self::new(self.kind, base, self.multiplier, self.cap, self.vix.clone())
    }

    pub fn with_vix_source(&self, vix: VixSource) -> Result<Self> {
        Self::new(self.kind, self.base, self.multiplier, self.cap, vix)
    }

    /// Whether the index must still be computed on the pricing chain.
    pub fn needs_chain_index(&self) -> Option<usize> {
        match self.vix {
            VixSource::Chain { steps } if self.kind != FeeKind::Constant => Some(steps),
            _ => None,
        }
    }

    pub fn vix(&self, y: f64) -> f64 {
        match &self.vix {
            VixSource::None => 0.0,
            VixSource::HestonClosedForm { kappa, theta } => vix_heston_closed_form(*kappa, *theta, y),
            VixSource::Table(t) => t.vix_at(y),
            VixSource::Chain { .. } => panic!("index on the chain not resolved; build a lattice first"),
        }
    }

    /// Fee rate per year in variance state `y`.
    pub fn rate(&self, y: f64) -> f64 {
        if self.multiplier == 0.0 {
            return match self.kind {
                FeeKind::Vix2Capped => self.base.min(self.cap.unwrap_or(f64::INFINITY)),
                _ => self.base,
            };
        }
        match self.kind {
            FeeKind::Constant => self.base,
            FeeKind::Vix2 => self.base + self.multiplier * self.vix(y).powi(2),
            FeeKind::Vix2Capped => (self.base + self.multiplier * self.vix(y).powi(2)).min(self.cap.unwrap()),
            FeeKind::Vix => self.base + self.multiplier * self.vix(y),
        }
    }
}

/// Free-function form of [`FeeStructure::rate`].
pub fn fee_rate(structure: &FeeStructure, y: f64) -> f64 {
    structure.rate(y)
}

/// Surrender benefit factor `g(t)` applied to the fund value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SurrenderCharge {
    /// `g(t) = exp(-k (T - t))`.
    Exponential { k: f64 },
    /// `g = 0`: surrendering pays nothing.
    Forbidden,
}

impl SurrenderCharge {
    pub fn exponential(k: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::param("contract.k", format!("must be finite and >= 0, got {k}")));
        }
        Ok(SurrenderCharge::Exponential { k })
    }

    pub fn factor(&self, t: f64, maturity: f64) -> f64 {
        match self {
            SurrenderCharge::Exponential { k } => (-k * (maturity - t)).exp(),
            SurrenderCharge::Forbidden => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Upper end of the base-fee bracket (the lower end is 0).
    pub c_max: f64,
    /// Price tolerance at the root.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions { c_max: 0.20, tol: 1e-4, max_iter: 60 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub base: f64,
    pub multiplier: f64,
    pub price: f64,
    pub evaluations: usize,
}

/// Solves `price(c) = target` for `c` in `[0, c_max]`, with `price`
/// decreasing in `c`, by bracketed false position.
pub fn solve_fair_base(
    mut price: impl FnMut(f64) -> Result<f64>,
    target: f64,
    multiplier: f64,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    let mut evaluations = 0;
    let mut f = |c: f64| -> Result<f64> {
        evaluations += 1;
        let p = price(c)?;
        if !p.is_finite() {
            return Err(Error::numerical("calibration", format!("non-finite price at base fee {c}")));
        }
        Ok(p - target)
    };
    let (mut a, mut b) = (0.0, opts.c_max);
    let mut fa = f(a)?;
    if fa.abs() <= opts.tol {
        return Ok(Calibration { base: a, multiplier, price: fa + target, evaluations: 1 });
    }
    let mut fb = f(b)?;
    if fb.abs() <= opts.tol {
        return Ok(Calibration { base: b, multiplier, price: fb + target, evaluations: 2 });
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoFairFee {
            multiplier,
            reason: format!("price minus premium is {fa:.6} at base 0 and {fb:.6} at base {}", opts.c_max),
        });
    }
    // Illinois: regula falsi, halving the retained end's value when the
    // same end survives twice.
    let mut side = 0i8;
    for _ in 0..opts.max_iter {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c)?;
        if fc.abs() <= opts.tol || b - a < 1e-14 {
            return Ok(Calibration { base: c, multiplier, price: fc + target, evaluations });
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::numerical("calibration", format!("no convergence in {} iterations", opts.max_iter)))
}

/// Fair base fee for `template` (kind, multiplier, cap and index source) such
/// that the fast European price equals the premium on the given resolution.
pub fn calibrate_fair_fee(
    model: &ModelSpec,
    template: &FeeStructure,
    contract: &ContractSpec,
    grid: &GridSpec,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    // The index does not depend on the base fee; resolve it once.
    let probe = Lattice::build(model, template, contract.f0, grid)?;
    let resolved = probe.decoupled().fee().clone();
    solve_fair_base(
        |c| {
            let fee = resolved.with_base(c)?;
            let lattice = Lattice::build(model, &fee, contract.f0, grid)?;
            price_european_fast(&lattice, contract)
        },
        contract.f0,
        template.multiplier(),
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heston_source() -> VixSource {
        VixSource::HestonClosedForm { kappa: 2.0, theta: 0.04 }
    }

    #[test]
    fn uncapped_vix2_rate() {
        let f = FeeStructure::new(FeeKind::Vix2, 0.0, 0.4345, None, heston_source()).unwrap();
        let y = 0.08702f64.powi(2);
        assert!((100.0 * f.rate(y) - 0.4387).abs() < 5e-5);
    }

    #[test]
    fn capped_rate_binds() {
        let f = FeeStructure::new(FeeKind::Vix2Capped, 0.005415, 0.30, Some(0.02), heston_source()).unwrap();
        assert_eq!(f.rate(0.30434f64.powi(2)), 0.02);
        assert!(f.rate(0.0) < 0.02);
    }

    #[test]
    fn zero_multiplier_is_constant() {
        let f = FeeStructure::new(FeeKind::Vix, 0.0123, 0.0, None, heston_source()).unwrap();
        for y in [0.001, 0.04, 0.3] {
            assert_eq!(f.rate(y), 0.0123);
        }
    }

    #[test]
    fn surrender_factor() {
        let g = SurrenderCharge::exponential(0.002).unwrap();
        assert_eq!(g.factor(10.0, 10.0), 1.0);
        assert!((g.factor(0.0, 10.0) - (-0.02f64).exp()).abs() < 1e-16);
        assert_eq!(SurrenderCharge::Forbidden.factor(3.0, 10.0), 0.0);
    }

    #[test]
    fn root_finder_linear_and_no_root() {
        let opts = CalibrationOptions::default();
        let c = solve_fair_base(|c| Ok(110.0 - 1000.0 * c), 100.0, 0.0, &opts).unwrap();
        assert!((c.base - 0.01).abs() < 1e-7);
        let err = solve_fair_base(|c| Ok(90.0 - c), 100.0, 0.3, &opts).unwrap_err();
        assert!(matches!(err, Error::NoFairFee { .. }));
    }
}
