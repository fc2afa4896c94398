use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{JobConfig, JobKind};
use crate::benchmark::{
    benchmark_csv, binomial_bermudan, boundary_max_rel_err, bs_fair_fee, bs_price_bermudan_1d, BenchmarkRow, BsConfig,
};
use crate::ctmc::build_variance_generator;
use crate::error::Error;
use crate::fees::{calibrate_fair_fee, Calibration, FeeStructure};
use crate::models::ModelSpec;
use crate::pricer::{price, variance_grid, GridSpec, Lattice, Request};
use crate::volindex::{vix_ctmc, vix_heston_closed_form};

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => super::EXIT_CONFIG,
            Failure::Numerical(_) => super::EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config: {m}"),
            Failure::Numerical(m) => write!(f, "numerical: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Writer { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| Failure::Numerical(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let mut body = serde_json::to_string_pretty(value).expect("artifact serializes");
        body.push('\n');
        self.text(name, &body)
    }
}

/// Runs `cfg` and writes its artifacts plus `timings.json` and `manifest.json`.
pub fn run_job(cfg: &JobConfig) -> Result<RunSummary, Failure> {
    cfg.validate()?;
    let mut out = Writer::new(&cfg.outputs.dir)?;
    let mut timings = Vec::new();
    let start = Instant::now();
    match cfg.job {
        JobKind::Calibrate => calibrate(cfg, &mut out, &mut timings)?,
        JobKind::Price => price_job(cfg, false, &mut out, &mut timings)?,
        JobKind::Surface => price_job(cfg, true, &mut out, &mut timings)?,
        JobKind::Benchmark => benchmark(cfg, &mut out, &mut timings)?,
        JobKind::VixTable => vix_table(cfg, &mut out, &mut timings)?,
    }
    out.json("timings.json", &json!({ "total_seconds": start.elapsed().as_secs_f64(), "items": timings }))?;

    let config_toml = cfg.to_toml();
    let hash = Sha256::digest(config_toml.as_bytes());
    let artifacts: Vec<String> =
        out.written.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "job": cfg.job,
        "config_sha256": hash.iter().fold(String::new(), |mut s, b| { let _ = write!(s, "{b:02x}"); s }),
        "config": cfg,
        "config_toml": config_toml,
        "artifacts": artifacts,
    });
    out.json("manifest.json", &manifest)?;
    Ok(RunSummary { artifacts: out.written })
}

fn timed<T>(timings: &mut Vec<Value>, label: Value, f: impl FnOnce() -> Result<T, Failure>) -> Result<T, Failure> {
    let start = Instant::now();
    let r = f()?;
    timings.push(json!({ "item": label, "seconds": start.elapsed().as_secs_f64() }));
    Ok(r)
}

fn calibration_grid(cfg: &JobConfig) -> GridSpec {
    GridSpec { n: cfg.calibration.n, ..cfg.grid.spec() }
}

fn calibrate_one(cfg: &JobConfig, model: &ModelSpec, multiplier: f64) -> Result<Calibration, Error> {
    let template = cfg.fee_structure(model, 0.0, multiplier)?;
    let contract = cfg.contract_spec()?;
    calibrate_fair_fee(model, &template, &contract, &calibration_grid(cfg), &cfg.calibration.options())
}

fn calibrate(cfg: &JobConfig, out: &mut Writer, timings: &mut Vec<Value>) -> Result<(), Failure> {
    let model = cfg.model_spec()?;
    let mut results = Vec::new();
    for &m in &cfg.fee.multipliers {
        let entry = timed(timings, json!({ "multiplier": m }), || match calibrate_one(cfg, &model, m) {
            Ok(c) => Ok(json!({
                "multiplier": m,
                "base": c.base,
                "price": c.price,
                "evaluations": c.evaluations,
            })),
            // An unattainable premium is a result, not a failure of the run.
            Err(Error::NoFairFee { reason, .. }) => Ok(json!({ "multiplier": m, "base": null, "reason": reason })),
            Err(e) => Err(e.into()),
        })?;
        results.push(entry);
    }
    out.json(
        "fees.json",
        &json!({
            "kind": cfg.fee.kind,
            "cap": cfg.fee.cap,
            "grid_n": cfg.calibration.n,
            "results": results,
        }),
    )
}

fn resolve_fee(
    cfg: &JobConfig,
    model: &ModelSpec,
    base: Option<f64>,
    multiplier: f64,
) -> Result<(FeeStructure, bool), Failure> {
    match base {
        Some(b) => Ok((cfg.fee_structure(model, b, multiplier)?, false)),
        None => {
            let c = calibrate_one(cfg, model, multiplier)?;
            Ok((cfg.fee_structure(model, c.base, multiplier)?, true))
        }
    }
}

fn price_job(cfg: &JobConfig, with_surface: bool, out: &mut Writer, timings: &mut Vec<Value>) -> Result<(), Failure> {
    let model = cfg.model_spec()?;
    let contract = cfg.contract_spec()?;
    let spec = cfg.grid.spec();
    let vectors = cfg.fee_vectors();
    let mut rows = Vec::new();
    for (i, &(base, multiplier)) in vectors.iter().enumerate() {
        let (fee, calibrated) =
            timed(timings, json!({ "calibrate": multiplier }), || resolve_fee(cfg, &model, base, multiplier))?;
        let req = Request { european: true, bermudan: true, surface: with_surface, snapshots: Vec::new() };
        let res = timed(timings, json!({ "price": multiplier }), || {
            let lattice = Lattice::build(&model, &fee, contract.f0, &spec)?;
            Ok(price(&lattice, &contract, cfg.mode, &req)?)
        })?;
        let (european, bermudan) = (res.european.unwrap_or(f64::NAN), res.bermudan.unwrap_or(f64::NAN));
        rows.push(json!({
            "multiplier": multiplier,
            "base": fee.base(),
            "calibrated": calibrated,
            "european": european,
            "bermudan": bermudan,
            "early_surrender": bermudan - european,
        }));
        if let Some(s) = res.surface {
            let name = if vectors.len() == 1 { "surface.csv".to_string() } else { format!("surface_{i}.csv") };
            out.text(&name, &s.to_csv())?;
        }
    }
    out.json(
        "prices.json",
        &json!({ "mode": cfg.mode, "m": spec.m, "n": spec.n, "steps": contract.steps, "results": rows }),
    )
}

fn benchmark(cfg: &JobConfig, out: &mut Writer, timings: &mut Vec<Value>) -> Result<(), Failure> {
    let b = cfg.benchmark.as_ref().ok_or_else(|| Failure::Config("missing [benchmark]".into()))?;
    let mut rows = Vec::new();
    for case in &b.cases {
        let label = json!({ "sigma": case.sigma, "f0": case.f0 });
        let row = timed(timings, label, || {
            let mut bs = BsConfig::new(case.sigma, b.r, case.fee.unwrap_or(0.0), case.f0, b.guarantee, b.maturity);
            bs.n = b.n;
            bs.steps = (b.steps_per_year * b.maturity).round().max(1.0) as usize;
            bs.spread = b.spread;
            bs.alpha = b.alpha;
            bs.policy = cfg.grid.policy;
            if case.fee.is_none() {
                bs.fee = bs_fair_fee(&bs, &cfg.calibration.options())?.base;
            }
            let res = bs_price_bermudan_1d(&bs)?;
            let boundary_err = if b.tree_refine > 0 {
                let tree = binomial_bermudan(&bs, b.tree_refine)?;
                boundary_max_rel_err(&res.boundary, &tree.boundary)
            } else {
                None
            };
            Ok::<_, Failure>(BenchmarkRow {
                sigma: case.sigma,
                f0: case.f0,
                fee: bs.fee,
                price: res.price,
                reference: case.reference,
                boundary_max_rel_err: boundary_err,
            })
        })?;
        rows.push(row);
    }
    out.text("benchmark.csv", &benchmark_csv(&rows))
}

fn vix_table(cfg: &JobConfig, out: &mut Writer, timings: &mut Vec<Value>) -> Result<(), Failure> {
    let model = cfg.model_spec()?;
    let spec = GridSpec { m: cfg.vix.m, ..cfg.grid.spec() };
    let table = timed(timings, json!("vix"), || {
        let (vgrid, _) = variance_grid(&model, &spec)?;
        let q = build_variance_generator(&model, &vgrid, spec.policy)?;
        Ok(vix_ctmc(&q, &model, &vgrid, cfg.vix.steps)?)
    })?;
    let points: Vec<f64> = if cfg.vix.points.is_empty() { table.states().to_vec() } else { cfg.vix.points.clone() };
    let closed = model.heston_params();
    let mut csv = String::from(if closed.is_some() { "v,vix,vix_closed_form\n" } else { "v,vix\n" });
    for v in points {
        let _ = write!(csv, "{v:.16e},{:.16e}", table.vix_at(v));
        if let Some((kappa, theta, _)) = closed {
            let _ = write!(csv, ",{:.16e}", vix_heston_closed_form(kappa, theta, v));
        }
        csv.push('\n');
    }
    out.text("vix.csv", &csv)
}
