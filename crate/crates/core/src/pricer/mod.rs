//! Valuation of the GMMB contract without surrender (European) and with
//! surrender at the monitoring dates (Bermudan), the early-surrender value,
//! and the optimal surrender surface.
//!
//! Two propagation schemes are available. `Direct` applies the exponential
//! of the joint generator. `Fast` freezes the variance state over each step
//! and alternates per-regime auxiliary propagation with variance mixing.

mod direct;
mod fast;

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ctmc::{build_regime_generators, build_variance_generator, JointGenerator, RatePolicy, TridiagGenerator};
use crate::error::{Error, Result};
use crate::fees::{FeeStructure, SurrenderCharge, VixSource};
use crate::grid::{build_grid, Grid};
use crate::models::{decouple, DecoupledCoeffs, ModelSpec};
use crate::volindex::vix_ctmc;

/// Relative tie tolerance when deciding that surrendering is optimal.
pub const SURRENDER_TIE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Direct,
    Fast,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub f0: f64,
    /// Guaranteed amount paid at maturity if the fund is below it.
    pub guarantee: f64,
    pub maturity: f64,
    /// Number of monitoring steps `M`.
    pub steps: usize,
    pub surrender: SurrenderCharge,
}

impl ContractSpec {
    pub fn new(f0: f64, guarantee: f64, maturity: f64, steps: usize, surrender: SurrenderCharge) -> Result<Self> {
        let c = ContractSpec { f0, guarantee, maturity, steps, surrender };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return Err(Error::param("contract.f0", "must be > 0"));
        }
        if !(self.guarantee >= 0.0 && self.guarantee.is_finite()) {
            return Err(Error::param("contract.guarantee", "must be >= 0"));
        }
        if !(self.maturity >= 0.0 && self.maturity.is_finite()) {
            return Err(Error::param("contract.maturity", "must be >= 0"));
        }
        if self.steps == 0 {
            return Err(Error::param("contract.steps", "need at least one step"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.steps as f64
    }

    /// Surrender factor at monitoring date `z`.
    pub fn surrender_factor(&self, z: usize) -> f64 {
        self.surrender.factor(z as f64 * self.dt(), self.maturity)
    }
}

/// A grid bound, either absolute or a multiple of the grid center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Abs(f64),
    Rel { rel: f64 },
}

impl Bound {
    pub fn resolve(&self, center: f64) -> f64 {
        match *self {
            Bound::Abs(v) => v,
            Bound::Rel { rel } => rel * center,
        }
    }
}

/// Resolution and shape of the two state grids. `m` and `n` count the sinh
/// points before the initial states are inserted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m: usize,
    pub n: usize,
    pub v_lo: Bound,
    pub v_hi: Bound,
    pub alpha_v: f64,
    pub x_lo: Bound,
    pub x_hi: Bound,
    pub alpha_x: f64,
    /// Handling of rows where moment matching needs a negative rate.
    #[serde(default)]
    pub policy: RatePolicy,
}

impl GridSpec {
    /// Heston baseline layout (`m = 50`) with `n` auxiliary points.
    pub fn heston_baseline(n: usize) -> Self {
        GridSpec {
            m: 50,
            n,
            v_lo: Bound::Rel { rel: 0.01 },
            v_hi: Bound::Rel { rel: 7.0 },
            alpha_v: 0.6571,
            x_lo: Bound::Rel { rel: 1e-6 },
            x_hi: Bound::Rel { rel: 1.95 },
            alpha_x: 0.02,
            policy: RatePolicy::default(),
        }
    }

    /// 3/2 layout (`m = 1000`) with `n` auxiliary points.
    pub fn three_halves_baseline(n: usize) -> Self {
        GridSpec {
            m: 1000,
            n,
            v_lo: Bound::Rel { rel: 1.0 / 200.0 },
            v_hi: Bound::Rel { rel: 8.0 },
            alpha_v: 0.5764,
            x_lo: Bound::Rel { rel: -1.0 },
            x_hi: Bound::Rel { rel: 2.0 },
            alpha_x: 0.02,
            policy: RatePolicy::default(),
        }
    }
}

/// Variance grid with `V0` inserted; a single point when `m == 1`.
pub fn variance_grid(model: &ModelSpec, spec: &GridSpec) -> Result<(Grid, usize)> {
    let v0 = model.v0;
    if spec.m == 1 {
        return Ok((Grid::from_points(vec![v0], v0)?, 0));
    }
    build_grid(v0, spec.v_lo.resolve(v0), spec.v_hi.resolve(v0), spec.m, spec.alpha_v)?.insert_point(v0)
}

/// Fully assembled state space: grids, generators and fund values.
#[derive(Clone, Debug)]
pub struct Lattice {
    vgrid: Grid,
    xgrid: Grid,
    v_index: usize,
    x_index: usize,
    dec: DecoupledCoeffs,
    q: TridiagGenerator,
    gs: Vec<TridiagGenerator>,
    fund: Vec<f64>,
}

impl Lattice {
    pub fn build(model: &ModelSpec, fee: &FeeStructure, f0: f64, spec: &GridSpec) -> Result<Self> {
        if spec.n < 3 {
            return Err(Error::param("grid.n", "need at least 3 auxiliary points"));
        }
        let (vgrid, v_index) = variance_grid(model, spec)?;
        let q = build_variance_generator(model, &vgrid, spec.policy)?;
        let fee = match fee.needs_chain_index() {
            Some(steps) => {
                let table = vix_ctmc(&q, model, &vgrid, steps)?;
                fee.with_vix_source(VixSource::Table(table.into()))?
            }
            None => fee.clone(),
        };
        let dec = decouple(model, &fee);
        let x0 = dec.aux_state(f0, model.v0);
        let xgrid = build_grid(x0, spec.x_lo.resolve(x0), spec.x_hi.resolve(x0), spec.n, spec.alpha_x)?;
        let (xgrid, x_index) = xgrid.insert_point(x0)?;
        let gs = build_regime_generators(&dec, &xgrid, &vgrid, spec.policy)?;
        let mut fund = Vec::with_capacity(vgrid.len() * xgrid.len());
        for &v in vgrid.points() {
            let shift = model.rho * dec.gamma(v);
            fund.extend(xgrid.points().iter().map(|&x| (x + shift).exp()));
        }
        Ok(Lattice { vgrid, xgrid, v_index, x_index, dec, q, gs, fund })
    }

    pub fn vgrid(&self) -> &Grid {
        &self.vgrid
    }

    pub fn xgrid(&self) -> &Grid {
        &self.xgrid
    }

    pub fn decoupled(&self) -> &DecoupledCoeffs {
        &self.dec
    }

    pub fn variance_generator(&self) -> &TridiagGenerator {
        &self.q
    }

    pub fn regime_generators(&self) -> &[TridiagGenerator] {
        &self.gs
    }

    pub fn joint(&self) -> Result<JointGenerator> {
        JointGenerator::new(self.q.clone(), self.gs.clone())
    }

    /// Number of variance states.
    pub fn m(&self) -> usize {
        self.vgrid.len()
    }

    /// Number of auxiliary states.
    pub fn n(&self) -> usize {
        self.xgrid.len()
    }

    /// Fund values `f_{nl}`, regime-major.
    pub fn fund_values(&self) -> &[f64] {
        &self.fund
    }

    /// `(x index, v index)` of the initial state.
    pub fn initial_state(&self) -> (usize, usize) {
        (self.x_index, self.v_index)
    }

    pub fn initial_index(&self) -> usize {
        self.v_index * self.n() + self.x_index
    }

    pub fn r(&self) -> f64 {
        self.dec.model().r
    }

    /// Maturity payoff `max(G, f)`.
    pub fn maturity_payoff(&self, guarantee: f64) -> Vec<f64> {
        self.fund.iter().map(|&f| f.max(guarantee)).collect()
    }
}

/// Contract values at time zero on every grid state, plus optional snapshots.
#[derive(Clone, Debug, Default)]
pub struct ValueGrid {
    pub m: usize,
    pub n: usize,
    pub maturity_payoff: Vec<f64>,
    pub european: Option<Vec<f64>>,
    pub bermudan: Option<Vec<f64>>,
    /// `(step z, Bermudan values at t_z)` for the requested steps.
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

/// Critical fund values `f*(t_z, v_l)`; `None` means no grid state qualifies.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrenderSurface {
    pub times: Vec<f64>,
    pub variances: Vec<f64>,
    /// Row-major over `(z, l)`.
    pub f_star: Vec<Option<f64>>,
    /// Number of separate surrender runs along the fund axis per `(z, l)`.
    pub sections: Vec<u32>,
}

impl SurrenderSurface {
    pub fn get(&self, z: usize, l: usize) -> Option<f64> {
        self.f_star[z * self.variances.len() + l]
    }

    /// Rows whose surrender states are not one contiguous run.
    pub fn disconnected_rows(&self) -> usize {
        self.sections.iter().filter(|&&s| s > 1).count()
    }

    /// `(z, l)` pairs where `f*` decreases from `v_{l-1}` to `v_l`.
    pub fn monotonicity_violations(&self) -> Vec<(usize, usize)> {
        let m = self.variances.len();
        let mut out = Vec::new();
        for z in 0..self.times.len() {
            for l in 1..m {
                if let (Some(a), Some(b)) = (self.get(z, l - 1), self.get(z, l)) {
                    if b < a {
                        out.push((z, l));
                    }
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,v,f_star\n");
        for (z, t) in self.times.iter().enumerate() {
            for (l, v) in self.variances.iter().enumerate() {
                match self.get(z, l) {
                    Some(f) => {
                        let _ = writeln!(out, "{t:.16e},{v:.16e},{f:.16e}");
                    }
                    None => {
                        let _ = writeln!(out, "{t:.16e},{v:.16e},never");
                    }
                }
            }
        }
        out
    }
}

pub(crate) struct SurfaceBuilder {
    m: usize,
    n: usize,
    dt: f64,
    rows: Vec<(usize, Vec<Option<f64>>, Vec<u32>)>,
}

impl SurfaceBuilder {
    pub(crate) fn new(m: usize, n: usize, dt: f64) -> Self {
        SurfaceBuilder { m, n, dt, rows: Vec::new() }
    }

    /// Scans the Bermudan values at step `z` with surrender factor `g`.
    pub(crate) fn scan(&mut self, z: usize, values: &[f64], fund: &[f64], g: f64) {
        let mut fs = Vec::with_capacity(self.m);
        let mut sections = Vec::with_capacity(self.m);
        for l in 0..self.m {
            let (b, f) = (&values[l * self.n..(l + 1) * self.n], &fund[l * self.n..(l + 1) * self.n]);
            let mut first = None;
            let mut runs = 0;
            let mut inside = false;
            for k in 0..self.n {
                let stop = b[k] <= g * f[k] * (1.0 + SURRENDER_TIE);
                if stop && !inside {
                    runs += 1;
                    if first.is_none() {
                        first = Some(f[k]);
                    }
                }
                inside = stop;
            }
            fs.push(first);
            sections.push(runs);
        }
        self.rows.push((z, fs, sections));
    }

    pub(crate) fn finish(mut self, variances: &[f64]) -> SurrenderSurface {
        self.rows.sort_by_key(|r| r.0);
        let times = self.rows.iter().map(|r| r.0 as f64 * self.dt).collect();
        let mut f_star = Vec::new();
        let mut sections = Vec::new();
        for (_, fs, s) in self.rows {
            f_star.extend(fs);
            sections.extend(s);
        }
        SurrenderSurface { times, variances: variances.to_vec(), f_star, sections }
    }
}

/// What a backward pass should produce.
#[derive(Clone, Debug, Default)]
pub struct Request {
    pub european: bool,
    pub bermudan: bool,
    pub surface: bool,
    /// Steps at which to keep Bermudan snapshots.
    pub snapshots: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PricingResult {
    pub european: Option<f64>,
    pub bermudan: Option<f64>,
    pub values: ValueGrid,
    pub surface: Option<SurrenderSurface>,
    pub seconds: f64,
}

impl PricingResult {
    pub fn early_surrender(&self) -> Option<f64> {
        Some(self.bermudan? - self.european?)
    }
}

/// One backward pass producing everything in `req`.
pub fn price(lattice: &Lattice, contract: &ContractSpec, mode: Mode, req: &Request) -> Result<PricingResult> {
    contract.validate()?;
    let start = Instant::now();
    let at = lattice.initial_index();
    if contract.maturity == 0.0 {
        let h = contract.f0.max(contract.guarantee);
        let values = ValueGrid {
            m: lattice.m(),
            n: lattice.n(),
            maturity_payoff: lattice.maturity_payoff(contract.guarantee),
            european: req.european.then(|| lattice.maturity_payoff(contract.guarantee)),
            bermudan: req.bermudan.then(|| lattice.maturity_payoff(contract.guarantee)),
            snapshots: Vec::new(),
        };
        return Ok(PricingResult {
            european: req.european.then_some(h),
            bermudan: req.bermudan.then_some(h),
            values,
            surface: req
                .surface
                .then(|| SurfaceBuilder::new(lattice.m(), lattice.n(), 0.0).finish(lattice.vgrid().points())),
            seconds: 0.0,
        });
    }
    let (values, surface) = match mode {
        Mode::Fast => fast::run(lattice, contract, req)?,
        Mode::Direct => direct::run(lattice, contract, req)?,
    };
    for v in values.european.iter().chain(values.bermudan.iter()) {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("pricer", "non-finite contract value"));
        }
    }
    Ok(PricingResult {
        european: values.european.as_ref().map(|v| v[at]),
        bermudan: values.bermudan.as_ref().map(|v| v[at]),
        values,
        surface,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn european_only() -> Request {
    Request { european: true, ..Default::default() }
}

/// European price by the exponential of the joint generator.
pub fn price_european_direct(lattice: &Lattice, contract: &ContractSpec) -> Result<f64> {
    Ok(price(lattice, contract, Mode::Direct, &european_only())?.european.unwrap())
}

/// European price by the frozen-variance scheme.
pub fn price_european_fast(lattice: &Lattice, contract: &ContractSpec) -> Result<f64> {
    Ok(price(lattice, contract, Mode::Fast, &european_only())?.european.unwrap())
}

pub fn price_bermudan(lattice: &Lattice, contract: &ContractSpec, mode: Mode) -> Result<(f64, ValueGrid)> {
    let r = price(lattice, contract, mode, &Request { bermudan: true, ..Default::default() })?;
    Ok((r.bermudan.unwrap(), r.values))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EarlySurrender {
    pub european: f64,
    pub bermudan: f64,
    pub value: f64,
}

/// Bermudan minus European price, both from the same pass.
pub fn early_surrender_value(lattice: &Lattice, contract: &ContractSpec, mode: Mode) -> Result<EarlySurrender> {
    let r = price(lattice, contract, mode, &Request { european: true, bermudan: true, ..Default::default() })?;
    let (european, bermudan) = (r.european.unwrap(), r.bermudan.unwrap());
    let value = bermudan - european;
    if value < -1e-8 {
        return Err(Error::Invariant(format!("negative early-surrender value {value}")));
    }
    Ok(EarlySurrender { european, bermudan, value })
}

pub fn surrender_surface(lattice: &Lattice, contract: &ContractSpec, mode: Mode) -> Result<SurrenderSurface> {
    let r = price(lattice, contract, mode, &Request { bermudan: true, surface: true, ..Default::default() })?;
    Ok(r.surface.unwrap())
}
