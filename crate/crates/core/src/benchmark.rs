//! One-dimensional Black-Scholes counterpart of the engine: Bermudan GMMB on
//! a log-fund chain, its surrender boundary, the closed-form European price,
//! and a binomial reference for the boundary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ctmc::{transition_matrix, RatePolicy, TridiagGenerator};
use crate::error::{Error, Result};
use crate::fees::{solve_fair_base, Calibration, CalibrationOptions};
use crate::grid::{build_grid, Grid};
use crate::pricer::SURRENDER_TIE;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsConfig {
    pub sigma: f64,
    pub r: f64,
    /// Constant fee rate per year.
    pub fee: f64,
    pub f0: f64,
    pub guarantee: f64,
    pub maturity: f64,
    /// Grid points before `ln F0` is inserted.
    pub n: usize,
    pub steps: usize,
    /// Half-width of the grid in units of `sigma * sqrt(T/2)`.
    pub spread: f64,
    pub alpha: f64,
    #[serde(default)]
    pub policy: RatePolicy,
}

impl BsConfig {
    /// Baseline resolution: 5000 points, 500 steps per year, spread 7.2, alpha 5.
    pub fn new(sigma: f64, r: f64, fee: f64, f0: f64, guarantee: f64, maturity: f64) -> Self {
        BsConfig {
            sigma,
            r,
            fee,
            f0,
            guarantee,
            maturity,
            n: 5000,
            steps: (500.0 * maturity).round().max(1.0) as usize,
            spread: 7.2,
            alpha: 5.0,
            policy: RatePolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::param("sigma", "must be > 0"));
        }
        if !(self.f0 > 0.0) || !(self.guarantee >= 0.0) || !(self.maturity > 0.0) {
            return Err(Error::param("contract", "need F0 > 0, G >= 0 and T > 0"));
        }
        if self.steps == 0 || self.n < 3 {
            return Err(Error::param("grid", "need at least one step and three points"));
        }
        if !(self.spread > 0.0) {
            return Err(Error::param("spread", "must be > 0"));
        }
        Ok(())
    }

    fn drift(&self) -> f64 {
        self.r - self.fee - 0.5 * self.sigma * self.sigma
    }

    /// Log-fund grid with `ln F0` inserted, and its index.
    pub fn grid(&self) -> Result<(Grid, usize)> {
        let x0 = self.f0.ln();
        let half = 0.5 * self.maturity;
        let mid = x0 + (self.r - 0.5 * self.sigma * self.sigma) * half;
        let width = self.spread * self.sigma * half.sqrt();
        let (lo, hi) = (mid - width, mid + width);
        if !(lo < x0 && x0 < hi) {
            return Err(Error::Grid(format!("bounds [{lo}, {hi}] do not bracket ln F0 = {x0}")));
        }
        build_grid(x0, lo, hi, self.n, self.alpha)?.insert_point(x0)
    }

    pub fn generator(&self, grid: &Grid) -> Result<TridiagGenerator> {
        let p = grid.points();
        TridiagGenerator::with_policy(
            p,
            &vec![self.drift(); p.len()],
            &vec![self.sigma * self.sigma; p.len()],
            self.policy,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BsResult {
    pub price: f64,
    pub european: f64,
    /// `(t_z, f*)` for `z = 0..M-1`; `None` where no state is in the stopping region.
    pub boundary: Vec<(f64, Option<f64>)>,
}

/// Bermudan GMMB with surrender at full fund value (no charge).
pub fn bs_price_bermudan_1d(cfg: &BsConfig) -> Result<BsResult> {
    cfg.validate()?;
    let (grid, at) = cfg.grid()?;
    let gen = cfg.generator(&grid)?;
    let dt = cfg.maturity / cfg.steps as f64;
    let p = transition_matrix(&gen, dt)?;
    let disc = (-cfg.r * dt).exp();
    let fund: Vec<f64> = grid.points().iter().map(|x| x.exp()).collect();
    let h1: Vec<f64> = fund.iter().map(|f| f.max(cfg.guarantee)).collect();

    let mut eu = h1.clone();
    let mut be = h1;
    let (mut te, mut tb) = (vec![0.0; fund.len()], vec![0.0; fund.len()]);
    let mut boundary = vec![(0.0, None); cfg.steps];
    for z in (0..cfg.steps).rev() {
        p.apply2_into(&eu, &be, &mut te, &mut tb);
        for i in 0..fund.len() {
            eu[i] = disc * te[i];
            be[i] = (disc * tb[i]).max(fund[i]);
        }
        let first = (0..fund.len()).find(|&i| be[i] <= fund[i] * (1.0 + SURRENDER_TIE)).map(|i| fund[i]);
        boundary[z] = (z as f64 * dt, first);
    }
    Ok(BsResult { price: be[at], european: eu[at], boundary })
}

/// Closed-form European GMMB value `e^{-rT} E[max(G, F_T)]` under lognormal fund dynamics.
pub fn bs_gmmb_price(sigma: f64, r: f64, fee: f64, f0: f64, guarantee: f64, maturity: f64) -> f64 {
    let fund = f0 * (-fee * maturity).exp();
    let floor = guarantee * (-r * maturity).exp();
    let s = sigma * maturity.sqrt();
    if guarantee <= 0.0 {
        return fund;
    }
    if s < 1e-12 {
        return fund.max(floor);
    }
    let n = Normal::standard();
    let d1 = ((fund / floor).ln() + 0.5 * s * s) / s;
    fund * n.cdf(d1) + floor * n.cdf(-(d1 - s))
}

/// Fee making the closed-form European value equal to `F0`.
pub fn bs_fair_fee(cfg: &BsConfig, opts: &CalibrationOptions) -> Result<Calibration> {
    let c = *cfg;
    solve_fair_base(|fee| Ok(bs_gmmb_price(c.sigma, c.r, fee, c.f0, c.guarantee, c.maturity)), c.f0, 0.0, opts)
}

/// Cox-Ross-Rubinstein tree for the same Bermudan contract, with `refine`
/// tree steps per monitoring step. Returns the price and, per monitoring
/// date, the lowest node fund value at which surrender is optimal.
pub fn binomial_bermudan(cfg: &BsConfig, refine: usize) -> Result<BsResult> {
    cfg.validate()?;
    if refine == 0 {
        return Err(Error::param("refine", "must be >= 1"));
    }
    let total = cfg.steps * refine;
    let h = cfg.maturity / total as f64;
    let u = (cfg.sigma * h.sqrt()).exp();
    let d = 1.0 / u;
    let p = (((cfg.r - cfg.fee) * h).exp() - d) / (u - d);
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::numerical("binomial", format!("probability {p} outside [0, 1]")));
    }
    let disc = (-cfg.r * h).exp();
    let (pu, pd) = (disc * p, disc * (1.0 - p));
    let fund = |i: usize, j: usize| cfg.f0 * u.powi(2 * j as i32 - i as i32);
    let mut be: Vec<f64> = (0..=total).map(|j| fund(total, j).max(cfg.guarantee)).collect();
    let mut eu = be.clone();
    let mut boundary = vec![(0.0, None); cfg.steps];
    for i in (0..total).rev() {
        for j in 0..=i {
            be[j] = pd * be[j] + pu * be[j + 1];
            eu[j] = pd * eu[j] + pu * eu[j + 1];
        }
        if i % refine == 0 {
            let mut first = None;
            for (j, b) in be.iter_mut().enumerate().take(i + 1) {
                let f = fund(i, j);
                if *b <= f {
                    *b = f;
                    first.get_or_insert(f);
                }
            }
            boundary[i / refine] = (i as f64 * h, first);
        }
    }
    Ok(BsResult { price: be[0], european: eu[0], boundary })
}

/// Largest relative gap between two boundaries, over dates where both exist.
pub fn boundary_max_rel_err(a: &[(f64, Option<f64>)], b: &[(f64, Option<f64>)]) -> Option<f64> {
    a.iter()
        .zip(b)
        .filter_map(|((_, x), (_, y))| Some(((*x)? - (*y)?).abs() / (*y)?))
        .fold(None, |acc, e| Some(acc.map_or(e, |a: f64| a.max(e))))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub sigma: f64,
    pub f0: f64,
    pub fee: f64,
    pub price: f64,
    pub reference: Option<f64>,
    pub boundary_max_rel_err: Option<f64>,
}

impl BenchmarkRow {
    pub fn rel_err(&self) -> Option<f64> {
        self.reference.map(|r| (self.price - r).abs() / r)
    }
}

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
    let mut out = String::from("sigma,f0,fee,price,reference,rel_err,boundary_max_rel_err\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
            r.sigma,
            r.f0,
            r.fee,
            r.price,
            opt(r.reference),
            opt(r.rel_err()),
            opt(r.boundary_max_rel_err)
        );
    }
    out
}
