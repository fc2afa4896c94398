//! Stochastic-volatility models as coefficient bundles, and the decoupling
//! transform that removes the Brownian correlation between fund and variance.
//!
//! The auxiliary drift is always assembled from the generic coefficients
//! (`mu_V`, `sigma_V`, `sigma_S` and derivatives); nothing model-specific is
//! transcribed except the antiderivative `gamma` where a closed form exists.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fees::FeeStructure;

/// User-supplied coefficient functions for models outside the built-in set.
pub trait Coefficients: Send + Sync + fmt::Debug {
    fn mu_v(&self, y: f64) -> f64;
    fn sigma_v(&self, y: f64) -> f64;
    fn sigma_s(&self, y: f64) -> f64;
    fn d_sigma_v(&self, y: f64) -> f64;
    fn d_sigma_s(&self, y: f64) -> f64;
    /// Closed-form antiderivative of `sigma_s / sigma_v`, if known.
    fn gamma(&self, _y: f64) -> Option<f64> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateSpace {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl StateSpace {
    pub fn open(lo: f64, hi: f64) -> Self {
        StateSpace { lo, hi, lo_closed: false, hi_closed: false }
    }

    pub fn real_line() -> Self {
        Self::open(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn contains(&self, y: f64) -> bool {
        let above = if self.lo_closed { y >= self.lo } else { y > self.lo };
        let below = if self.hi_closed { y <= self.hi } else { y < self.hi };
        above && below
    }
}

#[derive(Clone, Debug)]
pub enum Dynamics {
    Heston {
        kappa: f64,
        theta: f64,
        sigma: f64,
    },
    /// `V` is the inverse variance: `sigma_S = 1/sqrt(V)`.
    ThreeHalves {
        kappa: f64,
        theta: f64,
        sigma: f64,
    },
    FourHalves {
        kappa: f64,
        theta: f64,
        sigma: f64,
        a: f64,
        b: f64,
    },
    HullWhite {
        alpha: f64,
        beta: f64,
    },
    Scott {
        kappa: f64,
        theta: f64,
        sigma: f64,
    },
    AlphaHypergeometric {
        a: f64,
        b: f64,
        alpha: f64,
        sigma: f64,
    },
    /// Black-Scholes: a constant volatility with an inert variance state.
    ConstantVol {
        sigma: f64,
    },
    Custom(Arc<dyn Coefficients>),
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub dynamics: Dynamics,
    pub rho: f64,
    pub r: f64,
    pub v0: f64,
    pub s0: f64,
    pub state_space: StateSpace,
    pub params: BTreeMap<String, f64>,
    /// Martingale-measure side conditions that failed (not fatal).
    pub warnings: Vec<String>,
}

fn get(params: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    match params.get(key) {
        Some(v) if v.is_finite() => Ok(*v),
        Some(_) => Err(Error::param(key, "must be finite")),
        None => Err(Error::param(key, "missing")),
    }
}

fn positive(params: &BTreeMap<String, f64>, key: &str) -> Result<f64> {
    let v = get(params, key)?;
    if v <= 0.0 {
        return Err(Error::param(key, format!("must be > 0, got {v}")));
    }
    Ok(v)
}

/// Builds a model from its name and a flat parameter map.
///
/// Every model needs `rho`, `r` and `v0`; `s0` defaults to 100.
pub fn make_model(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    let rho = get(params, "rho")?;
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::param("rho", format!("must lie in [-1, 1], got {rho}")));
    }
    let r = positive(params, "r")?;
    let v0 = get(params, "v0")?;
    let s0 = params.get("s0").copied().unwrap_or(100.0);
    let mut warnings = Vec::new();
    let positive_half_line = StateSpace::open(0.0, f64::INFINITY);

    let (canonical, dynamics, state_space) = match name.to_ascii_lowercase().as_str() {
        "heston" => {
            let kappa = positive(params, "kappa")?;
            let theta = positive(params, "theta")?;
            let sigma = positive(params, "sigma")?;
            ("heston", Dynamics::Heston { kappa, theta, sigma }, positive_half_line)
        }
        "three_halves" | "3/2" | "three-halves" => {
            let kappa = positive(params, "kappa")?;
            let theta = positive(params, "theta")?;
            let sigma = positive(params, "sigma")?;
            if kappa * theta < sigma * sigma / 2.0 {
                return Err(Error::param(
                    "kappa",
                    format!(
                        "3/2 model requires kappa*theta >= sigma^2/2 ({} < {})",
                        kappa * theta,
                        sigma * sigma / 2.0
                    ),
                ));
            }
            if rho > 0.0 {
                warnings.push(format!("3/2: rho = {rho} > 0, no equivalent martingale measure"));
            }
            ("three_halves", Dynamics::ThreeHalves { kappa, theta, sigma }, positive_half_line)
        }
        "four_halves" | "4/2" | "four-halves" => {
            let kappa = positive(params, "kappa")?;
            let theta = positive(params, "theta")?;
            let sigma = positive(params, "sigma")?;
            let a = get(params, "a")?;
            let b = get(params, "b")?;
            if b != 0.0 && kappa * theta < sigma * sigma / 2.0 {
                return Err(Error::param("kappa", "4/2 model with b != 0 requires kappa*theta >= sigma^2/2"));
            }
            if sigma * sigma > 2.0 * kappa * theta + (2.0 * rho * sigma * b).min(0.0) {
                warnings.push("4/2: sigma^2 > 2 kappa theta + min(0, 2 rho sigma b)".to_string());
            }
            ("four_halves", Dynamics::FourHalves { kappa, theta, sigma, a, b }, positive_half_line)
        }
        "hull_white" | "hull-white" => {
            let alpha = positive(params, "alpha")?;
            let beta = positive(params, "beta")?;
            if rho > 0.0 {
                warnings.push(format!("Hull-White: rho = {rho} > 0, no equivalent martingale measure"));
            }
            ("hull_white", Dynamics::HullWhite { alpha, beta }, positive_half_line)
        }
        "scott" => {
            let kappa = get(params, "kappa")?;
            let theta = get(params, "theta")?;
            let sigma = positive(params, "sigma")?;
            if rho > 0.0 {
                warnings.push(format!("Scott: rho = {rho} > 0, no equivalent martingale measure"));
            }
            ("scott", Dynamics::Scott { kappa, theta, sigma }, StateSpace::real_line())
        }
        "alpha_hypergeometric" | "alpha-hypergeometric" => {
            let a = get(params, "a")?;
            let b = positive(params, "b")?;
            let alpha = positive(params, "alpha")?;
            let sigma = positive(params, "sigma")?;
            let ok = alpha >= 2.0 || (rho <= 0.0 && (alpha > 1.0 || (alpha == 1.0 && b >= rho * sigma)));
            if !ok {
                warnings.push("alpha-hypergeometric: martingale condition not met".to_string());
            }
            ("alpha_hypergeometric", Dynamics::AlphaHypergeometric { a, b, alpha, sigma }, StateSpace::real_line())
        }
        "black_scholes" | "constant_vol" | "black-scholes" => {
            let sigma = positive(params, "sigma")?;
            ("black_scholes", Dynamics::ConstantVol { sigma }, StateSpace::real_line())
        }
        _ => return Err(Error::UnknownModel(name.to_string())),
    };

    if !state_space.contains(v0) {
        return Err(Error::param("v0", format!("{v0} outside the state space")));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ModelSpec {
        name: canonical.to_string(),
        dynamics,
        rho,
        r,
        v0,
        s0,
        state_space,
        params: params.clone(),
        warnings,
    })
}

impl ModelSpec {
    pub fn heston(kappa: f64, theta: f64, sigma: f64, rho: f64, r: f64, v0: f64) -> Result<Self> {
        let params = BTreeMap::from([
            ("kappa".to_string(), kappa),
            ("theta".to_string(), theta),
            ("sigma".to_string(), sigma),
            ("rho".to_string(), rho),
            ("r".to_string(), r),
            ("v0".to_string(), v0),
        ]);
        make_model("heston", &params)
    }

    pub fn three_halves(kappa: f64, theta: f64, sigma: f64, rho: f64, r: f64, v0: f64) -> Result<Self> {
        let params = BTreeMap::from([
            ("kappa".to_string(), kappa),
            ("theta".to_string(), theta),
            ("sigma".to_string(), sigma),
            ("rho".to_string(), rho),
            ("r".to_string(), r),
            ("v0".to_string(), v0),
        ]);
        make_model("three_halves", &params)
    }

    pub fn black_scholes(sigma: f64, r: f64) -> Result<Self> {
        let params = BTreeMap::from([
            ("sigma".to_string(), sigma),
            ("rho".to_string(), 0.0),
            ("r".to_string(), r),
            ("v0".to_string(), 0.0),
        ]);
        make_model("black_scholes", &params)
    }

    /// Wraps arbitrary coefficient functions.
    pub fn custom(
        name: &str,
        coeffs: Arc<dyn Coefficients>,
        state_space: StateSpace,
        rho: f64,
        r: f64,
        v0: f64,
    ) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::param("rho", "must lie in [-1, 1]"));
        }
        if !state_space.contains(v0) {
            return Err(Error::param("v0", "outside the state space"));
        }
        Ok(ModelSpec {
            name: name.to_string(),
            dynamics: Dynamics::Custom(coeffs),
            rho,
            r,
            v0,
            s0: 100.0,
            state_space,
            params: BTreeMap::new(),
            warnings: Vec::new(),
        })
    }

    pub fn mu_v(&self, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Heston { kappa, theta, .. }
            | Dynamics::ThreeHalves { kappa, theta, .. }
            | Dynamics::FourHalves { kappa, theta, .. }
            | Dynamics::Scott { kappa, theta, .. } => kappa * (theta - y),
            Dynamics::HullWhite { alpha, .. } => alpha * y,
            Dynamics::AlphaHypergeometric { a, b, alpha, .. } => a - b * (alpha * y).exp(),
            Dynamics::ConstantVol { .. } => 0.0,
            Dynamics::Custom(c) => c.mu_v(y),
        }
    }

    pub fn sigma_v(&self, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Heston { sigma, .. }
            | Dynamics::ThreeHalves { sigma, .. }
            | Dynamics::FourHalves { sigma, .. } => sigma * y.sqrt(),
            Dynamics::HullWhite { beta, .. } => beta * y,
            Dynamics::Scott { sigma, .. } | Dynamics::AlphaHypergeometric { sigma, .. } => *sigma,
            Dynamics::ConstantVol { .. } => 1.0,
            Dynamics::Custom(c) => c.sigma_v(y),
        }
    }

    pub fn sigma_s(&self, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Heston { .. } | Dynamics::HullWhite { .. } => y.sqrt(),
            Dynamics::ThreeHalves { .. } => 1.0 / y.sqrt(),
            Dynamics::FourHalves { a, b, .. } => a * y.sqrt() + b / y.sqrt(),
            Dynamics::Scott { .. } | Dynamics::AlphaHypergeometric { .. } => y.exp(),
            Dynamics::ConstantVol { sigma } => *sigma,
            Dynamics::Custom(c) => c.sigma_s(y),
        }
    }

    pub fn d_sigma_v(&self, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Heston { sigma, .. }
            | Dynamics::ThreeHalves { sigma, .. }
            | Dynamics::FourHalves { sigma, .. } => sigma / (2.0 * y.sqrt()),
            Dynamics::HullWhite { beta, .. } => *beta,
            Dynamics::Scott { .. } | Dynamics::AlphaHypergeometric { .. } | Dynamics::ConstantVol { .. } => 0.0,
            Dynamics::Custom(c) => c.d_sigma_v(y),
        }
    }

    pub fn d_sigma_s(&self, y: f64) -> f64 {
        match &self.dynamics {
            Dynamics::Heston { .. } | Dynamics::HullWhite { .. } => 0.5 / y.sqrt(),
            Dynamics::ThreeHalves { .. } => -0.5 * y.powf(-1.5),
            Dynamics::FourHalves { a, b, .. } => 0.5 * a / y.sqrt() - 0.5 * b * y.powf(-1.5),
            Dynamics::Scott { .. } | Dynamics::AlphaHypergeometric { .. } => y.exp(),
            Dynamics::ConstantVol { .. } => 0.0,
            Dynamics::Custom(c) => c.d_sigma_s(y),
        }
    }

    /// Closed-form antiderivative of `sigma_S / sigma_V`, when registered.
    pub fn gamma_closed_form(&self, y: f64) -> Option<f64> {
        match &self.dynamics {
            Dynamics::Heston { sigma, .. } => Some(y / sigma),
            Dynamics::ThreeHalves { sigma, .. } => Some(y.ln() / sigma),
            Dynamics::FourHalves { sigma, a, b, .. } => Some((a * y + b * y.ln()) / sigma),
            Dynamics::HullWhite { beta, .. } => Some(2.0 * y.sqrt() / beta),
            Dynamics::Scott { sigma, .. } | Dynamics::AlphaHypergeometric { sigma, .. } => Some(y.exp() / sigma),
            Dynamics::ConstantVol { sigma } => Some(sigma * y),
            Dynamics::Custom(c) => c.gamma(y),
        }
    }

    pub fn has_closed_form_gamma(&self) -> bool {
        self.gamma_closed_form(self.v0).is_some()
    }

    /// Heston parameters `(kappa, theta, sigma)`, if this is a Heston model.
    pub fn heston_params(&self) -> Option<(f64, f64, f64)> {
        match self.dynamics {
            Dynamics::Heston { kappa, theta, sigma } => Some((kappa, theta, sigma)),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Gamma {
    ClosedForm,
    Quadrature { anchor: f64 },
}

/// Coefficients of the decoupled auxiliary process `X = ln F - rho*gamma(V)`.
#[derive(Clone, Debug)]
pub struct DecoupledCoeffs {
    model: ModelSpec,
    fee: FeeStructure,
    gamma: Gamma,
}

/// Panels for composite Simpson quadrature of `gamma` (must be even).
const SIMPSON_PANELS: usize = 256;

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut s = f(a) + f(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Decouples `model` under the given fee structure.
///
/// Without a registered closed form, `gamma` is integrated numerically from
/// the anchor `V0`.
pub fn decouple(model: &ModelSpec, fee: &FeeStructure) -> DecoupledCoeffs {
    let gamma = if model.has_closed_form_gamma() { Gamma::ClosedForm } else { Gamma::Quadrature { anchor: model.v0 } };
    DecoupledCoeffs { model: model.clone(), fee: fee.clone(), gamma }
}

impl DecoupledCoeffs {
    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn fee(&self) -> &FeeStructure {
        &self.fee
    }

    pub fn rho(&self) -> f64 {
        self.model.rho
    }

    pub fn gamma(&self, y: f64) -> f64 {
        match self.gamma {
            Gamma::ClosedForm => self.model.gamma_closed_form(y).expect("registered closed form"),
            Gamma::Quadrature { anchor } => {
                if y == anchor {
                    return 0.0;
                }
                let m = &self.model;
                simpson(|u| m.sigma_s(u) / m.sigma_v(u), anchor, y, SIMPSON_PANELS)
            }
        }
    }

    /// `psi = L_v gamma = mu_V sigma_S/sigma_V + (sigma_V sigma_S' - sigma_V' sigma_S)/2`.
    pub fn psi(&self, y: f64) -> f64 {
        let m = &self.model;
        let (sv, ss) = (m.sigma_v(y), m.sigma_s(y));
        m.mu_v(y) * ss / sv + 0.5 * (sv * m.d_sigma_s(y) - m.d_sigma_v(y) * ss)
    }

    pub fn fee_rate(&self, y: f64) -> f64 {
        self.fee.rate(y)
    }

    /// Drift of `X`. Fees here depend on the variance state only, so `x`
    /// does not enter.
    pub fn mu_x(&self, _x: f64, y: f64) -> f64 {
        let m = &self.model;
        let ss = m.sigma_s(y);
        m.r - self.fee_rate(y) - 0.5 * ss * ss - m.rho * self.psi(y)
    }

    pub fn sigma_x(&self, y: f64) -> f64 {
        (1.0 - self.model.rho * self.model.rho).sqrt() * self.model.sigma_s(y)
    }

    /// Fund value represented by the chain state `(x, y)`.
    pub fn fund_value(&self, x: f64, y: f64) -> f64 {
        (x + self.model.rho * self.gamma(y)).exp()
    }

    /// Auxiliary state for fund value `f` at variance `y`.
    pub fn aux_state(&self, f: f64, y: f64) -> f64 {
        f.ln() - self.model.rho * self.gamma(y)
    }
}
