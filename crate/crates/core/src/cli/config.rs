//! Job configuration file (TOML).

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ctmc::RatePolicy;
use crate::error::{Error, Result};
use crate::fees::{CalibrationOptions, FeeKind, FeeStructure, SurrenderCharge, VixSource};
use crate::models::{make_model, ModelSpec};
use crate::pricer::{Bound, ContractSpec, GridSpec, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    Calibrate,
    Price,
    Surface,
    Benchmark,
    VixTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub job: JobKind,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub model: ModelBlock,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub contract: ContractBlock,
    #[serde(default)]
    pub fee: FeeBlock,
    #[serde(default)]
    pub calibration: CalibrationBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<BenchmarkBlock>,
    #[serde(default)]
    pub vix: VixBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
}

fn default_mode() -> Mode {
    Mode::Fast
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    pub m: usize,
    pub n: usize,
    /// Monitoring steps `M`.
    pub steps: usize,
    pub v_lo: Bound,
    pub v_hi: Bound,
    pub alpha_v: f64,
    pub x_lo: Bound,
    pub x_hi: Bound,
    pub alpha_x: f64,
    pub policy: RatePolicy,
}

impl Default for GridBlock {
    fn default() -> Self {
        let g = GridSpec::heston_baseline(2000);
        GridBlock {
            m: g.m,
            n: g.n,
            steps: 5000,
            v_lo: g.v_lo,
            v_hi: g.v_hi,
            alpha_v: g.alpha_v,
            x_lo: g.x_lo,
            x_hi: g.x_hi,
            alpha_x: g.alpha_x,
            policy: g.policy,
        }
    }
}

impl GridBlock {
    pub fn spec(&self) -> GridSpec {
        GridSpec {
            m: self.m,
            n: self.n,
            v_lo: self.v_lo,
            v_hi: self.v_hi,
            alpha_v: self.alpha_v,
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            alpha_x: self.alpha_x,
            policy: self.policy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContractBlock {
    pub f0: f64,
    pub guarantee: f64,
    pub maturity: f64,
    /// Surrender charge rate `k` in `g(t) = exp(-k (T - t))`; absent means
    /// surrender pays nothing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl Default for ContractBlock {
    fn default() -> Self {
        ContractBlock { f0: 100.0, guarantee: 100.0, maturity: 10.0, k: Some(0.002) }
    }
}

/// A fixed base fee or `"calibrate"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseFee {
    Value(f64),
    Keyword(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VixKind {
    /// Closed form (Heston only).
    ClosedForm,
    /// Computed on the pricing variance chain.
    Chain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeeBlock {
    pub kind: FeeKind,
    pub base: BaseFee,
    pub multipliers: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    pub vix: VixKind,
    pub vix_steps: usize,
}

impl Default for FeeBlock {
    fn default() -> Self {
        FeeBlock {
            kind: FeeKind::Constant,
            base: BaseFee::Value(0.0),
            multipliers: Vec::new(),
            cap: None,
            vix: VixKind::Chain,
            vix_steps: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationBlock {
    /// Auxiliary grid size used while calibrating.
    pub n: usize,
    pub c_max: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CalibrationBlock {
    fn default() -> Self {
        let o = CalibrationOptions::default();
        CalibrationBlock { n: 100, c_max: o.c_max, tol: o.tol, max_iter: o.max_iter }
    }
}

impl CalibrationBlock {
    pub fn options(&self) -> CalibrationOptions {
        CalibrationOptions { c_max: self.c_max, tol: self.tol, max_iter: self.max_iter }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkBlock {
    pub r: f64,
    pub guarantee: f64,
    pub maturity: f64,
    #[serde(default = "default_bench_n")]
    pub n: usize,
    #[serde(default = "default_steps_per_year")]
    pub steps_per_year: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_bench_alpha")]
    pub alpha: f64,
    /// Tree steps per monitoring step for the boundary reference; 0 skips it.
    #[serde(default)]
    pub tree_refine: usize,
    pub cases: Vec<BenchmarkCase>,
}

fn default_bench_n() -> usize {
    5000
}
fn default_steps_per_year() -> f64 {
    500.0
}
fn default_spread() -> f64 {
    7.2
}
fn default_bench_alpha() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkCase {
    pub sigma: f64,
    pub f0: f64,
    /// Fee rate; calibrated from the closed form when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fee: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VixBlock {
    /// Variance states for the index table (the grid block's `m` is used
    /// for pricing).
    pub m: usize,
    pub steps: usize,
    /// Evaluation points; the grid states are written when empty.
    pub points: Vec<f64>,
}

impl Default for VixBlock {
    fn default() -> Self {
        VixBlock { m: 1000, steps: 1000, points: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsBlock {
    pub dir: PathBuf,
}

impl Default for OutputsBlock {
    fn default() -> Self {
        OutputsBlock { dir: PathBuf::from("out") }
    }
}

impl JobConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: JobConfig = toml::from_str(text).map_err(|e| Error::param("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model_spec()?;
        if let BaseFee::Keyword(k) = &self.fee.base {
            if k != "calibrate" {
                return Err(Error::param("fee.base", format!("expected a number or \"calibrate\", got \"{k}\"")));
            }
        }
        if self.fee.multipliers.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::param("fee.multipliers", "must be finite and >= 0"));
        }
        if self.fee.kind == FeeKind::Vix2Capped && self.fee.cap.is_none() {
            return Err(Error::param("fee.cap", "required for the capped kind"));
        }
        if self.fee.vix_steps == 0 {
            return Err(Error::param("fee.vix_steps", "must be >= 1"));
        }
        if self.fee.vix == VixKind::ClosedForm
            && self.fee.kind != FeeKind::Constant
            && self.model_spec()?.heston_params().is_none()
        {
            return Err(Error::param("fee.vix", "the closed-form index needs the heston model"));
        }
        if self.grid.m == 0 {
            return Err(Error::param("grid.m", "must be >= 1"));
        }
        if self.grid.n < 3 {
            return Err(Error::param("grid.n", "must be >= 3"));
        }
        if self.calibration.n < 3 {
            return Err(Error::param("calibration.n", "must be >= 3"));
        }
        if let Some(k) = self.contract.k {
            SurrenderCharge::exponential(k).map_err(|_| Error::param("contract.k", "must be finite and >= 0"))?;
        }
        self.contract_spec()?;
        if self.job == JobKind::Benchmark {
            let b =
                self.benchmark.as_ref().ok_or_else(|| Error::param("benchmark", "required for the benchmark job"))?;
            if b.cases.iter().any(|c| !(c.sigma > 0.0 && c.f0 > 0.0)) {
                return Err(Error::param("benchmark.cases", "need sigma > 0 and f0 > 0"));
            }
            if !(b.steps_per_year > 0.0) || !(b.maturity > 0.0) || b.n < 3 {
                return Err(Error::param("benchmark", "need steps_per_year > 0, maturity > 0 and n >= 3"));
            }
        }
        if self.job == JobKind::VixTable && (self.vix.m == 0 || self.vix.steps == 0) {
            return Err(Error::param("vix", "m and steps must be >= 1"));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        make_model(&self.model.name, &self.model.params)
    }

    pub fn contract_spec(&self) -> Result<ContractSpec> {
        let c = &self.contract;
        let surrender = match c.k {
            Some(k) => SurrenderCharge::exponential(k)?,
            None => SurrenderCharge::Forbidden,
        };
        ContractSpec::new(c.f0, c.guarantee, c.maturity, self.grid.steps, surrender)
    }

    /// Fee structure with multiplier `multiplier` and base `base`.
    pub fn fee_structure(&self, model: &ModelSpec, base: f64, multiplier: f64) -> Result<FeeStructure> {
        let source = match (self.fee.kind, self.fee.vix) {
            (FeeKind::Constant, _) => VixSource::None,
            (_, VixKind::ClosedForm) => {
                let (kappa, theta, _) = model.heston_params().ok_or_else(|| Error::param("fee.vix", "needs heston"))?;
                VixSource::HestonClosedForm { kappa, theta }
            }
            (_, VixKind::Chain) => VixSource::Chain { steps: self.fee.vix_steps },
        };
        let multiplier = if self.fee.kind == FeeKind::Constant { 0.0 } else { multiplier };
        FeeStructure::new(self.fee.kind, base, multiplier, self.fee.cap, source)
    }

    /// `(base, multiplier)` pairs to price; `None` base means calibrate.
    pub fn fee_vectors(&self) -> Vec<(Option<f64>, f64)> {
        let base = match self.fee.base {
            BaseFee::Value(v) => Some(v),
            BaseFee::Keyword(_) => None,
        };
        if self.fee.kind == FeeKind::Constant || self.fee.multipliers.is_empty() {
            vec![(base, 0.0)]
        } else {
            self.fee.multipliers.iter().map(|&m| (base, m)).collect()
        }
    }
}
