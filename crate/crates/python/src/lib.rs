//! Python bindings for `vactmc`.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vactmc::benchmark::{bs_gmmb_price, bs_price_bermudan_1d, BsConfig};
use vactmc::ctmc::{build_variance_generator, RatePolicy};
use vactmc::pricer::variance_grid;
use vactmc::{
    CalibrationOptions, ContractSpec, Error, FeeKind, FeeStructure, GridSpec, Lattice, Mode, ModelSpec, Request,
    SurrenderCharge, VixSource,
};

create_exception!(vactmc_py, NoFairFeeError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::NoFairFee { .. } => NoFairFeeError::new_err(e.to_string()),
        e if e.is_config_error() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "fast" => Ok(Mode::Fast),
        "direct" => Ok(Mode::Direct),
        _ => Err(PyValueError::new_err(format!("mode must be \"fast\" or \"direct\", got \"{mode}\""))),
    }
}

fn parse_policy(policy: &str) -> PyResult<RatePolicy> {
    match policy {
        "clamp" => Ok(RatePolicy::Clamp),
        "upwind" => Ok(RatePolicy::Upwind),
        "signed" => Ok(RatePolicy::Signed),
        _ => Err(PyValueError::new_err(format!("unknown rate policy \"{policy}\""))),
    }
}

fn parse_kind(kind: &str) -> PyResult<FeeKind> {
    match kind {
        "constant" => Ok(FeeKind::Constant),
        "vix2" => Ok(FeeKind::Vix2),
        "vix2_capped" => Ok(FeeKind::Vix2Capped),
        "vix" => Ok(FeeKind::Vix),
        _ => Err(PyValueError::new_err(format!("unknown fee kind \"{kind}\""))),
    }
}

/// Stochastic-volatility model for the fund.
#[pyclass(name = "Model", frozen)]
struct PyModel(ModelSpec);

#[pymethods]
impl PyModel {
    /// Builds a named model (`heston`, `three_halves`, ...) from a parameter dict.
    #[new]
    fn new(name: &str, params: BTreeMap<String, f64>) -> PyResult<Self> {
        vactmc::make_model(name, &params).map(PyModel).map_err(to_py)
    }

    #[staticmethod]
    fn heston(kappa: f64, theta: f64, sigma: f64, rho: f64, r: f64, v0: f64) -> PyResult<Self> {
        ModelSpec::heston(kappa, theta, sigma, rho, r, v0).map(PyModel).map_err(to_py)
    }

    #[staticmethod]
    fn three_halves(kappa: f64, theta: f64, sigma: f64, rho: f64, r: f64, v0: f64) -> PyResult<Self> {
        ModelSpec::three_halves(kappa, theta, sigma, rho, r, v0).map(PyModel).map_err(to_py)
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    #[getter]
    fn r(&self) -> f64 {
        self.0.r
    }

    #[getter]
    fn v0(&self) -> f64 {
        self.0.v0
    }

    /// Side conditions on the parameters that failed (not fatal).
    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }

    fn __repr__(&self) -> String {
        format!("Model({:?}, r={}, v0={})", self.0.name, self.0.r, self.0.v0)
    }
}

/// Fee rate as a function of the index level.
#[pyclass(name = "FeeStructure", frozen)]
struct PyFee(FeeStructure);

#[pymethods]
impl PyFee {
    /// `vix` is `"chain"` (computed on the pricing variance chain with
    /// `vix_steps` quadrature steps) or `"closed_form"` with `kappa`/`theta`.
    #[new]
    #[pyo3(signature = (kind, base, multiplier=0.0, cap=None, vix="chain", vix_steps=1000, kappa=None, theta=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        base: f64,
        multiplier: f64,
        cap: Option<f64>,
        vix: &str,
        vix_steps: usize,
        kappa: Option<f64>,
        theta: Option<f64>,
    ) -> PyResult<Self> {
        let kind = parse_kind(kind)?;
        let source = match (kind, vix) {
            (FeeKind::Constant, _) => VixSource::None,
            (_, "chain") => VixSource::Chain { steps: vix_steps },
            (_, "closed_form") => match (kappa, theta) {
                (Some(kappa), Some(theta)) => VixSource::HestonClosedForm { kappa, theta },
                _ => return Err(PyValueError::new_err("the closed-form index needs kappa and theta")),
            },
            _ => return Err(PyValueError::new_err(format!("vix must be \"chain\" or \"closed_form\", got \"{vix}\""))),
        };
        FeeStructure::new(kind, base, multiplier, cap, source).map(PyFee).map_err(to_py)
    }

    #[staticmethod]
    fn constant(base: f64) -> PyResult<Self> {
        FeeStructure::constant(base).map(PyFee).map_err(to_py)
    }

    #[getter]
    fn base(&self) -> f64 {
        self.0.base()
    }

    #[getter]
    fn multiplier(&self) -> f64 {
        self.0.multiplier()
    }

    fn with_base(&self, base: f64) -> PyResult<Self> {
        self.0.with_base(base).map(PyFee).map_err(to_py)
    }

    /// Fee rate per year in variance state `v`. Chain-based indices are only
    /// resolved inside a lattice, so they are rejected here.
    fn rate(&self, v: f64) -> PyResult<f64> {
        if self.0.needs_chain_index().is_some() {
            return Err(PyValueError::new_err("the chain index is resolved when a lattice is built"));
        }
        Ok(self.0.rate(v))
    }
}

/// Guarantee contract with surrender charge `exp(-k (T - t))`; `k=None`
/// forbids surrender.
#[pyclass(name = "Contract", frozen)]
struct PyContract(ContractSpec);

#[pymethods]
impl PyContract {
    #[new]
    #[pyo3(signature = (f0=100.0, guarantee=100.0, maturity=10.0, steps=5000, k=Some(0.002)))]
    fn new(f0: f64, guarantee: f64, maturity: f64, steps: usize, k: Option<f64>) -> PyResult<Self> {
        let surrender = match k {
            Some(k) => SurrenderCharge::exponential(k).map_err(to_py)?,
            None => SurrenderCharge::Forbidden,
        };
        ContractSpec::new(f0, guarantee, maturity, steps, surrender).map(PyContract).map_err(to_py)
    }

    #[getter]
    fn f0(&self) -> f64 {
        self.0.f0
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps
    }

    #[getter]
    fn maturity(&self) -> f64 {
        self.0.maturity
    }
}

/// Grid layout. Use `heston_baseline` or `three_halves_baseline` and
/// override `m`, `n` or `policy` through keyword arguments.
#[pyclass(name = "GridSpec", frozen)]
struct PyGrid(GridSpec);

impl PyGrid {
    fn tweak(mut spec: GridSpec, m: Option<usize>, policy: Option<&str>) -> PyResult<Self> {
        if let Some(m) = m {
            spec.m = m;
        }
        if let Some(p) = policy {
            spec.policy = parse_policy(p)?;
        }
        Ok(PyGrid(spec))
    }
}

#[pymethods]
impl PyGrid {
    #[staticmethod]
    #[pyo3(signature = (n, m=None, policy=None))]
    fn heston_baseline(n: usize, m: Option<usize>, policy: Option<&str>) -> PyResult<Self> {
        Self::tweak(GridSpec::heston_baseline(n), m, policy)
    }

    #[staticmethod]
    #[pyo3(signature = (n, m=None, policy=None))]
    fn three_halves_baseline(n: usize, m: Option<usize>, policy: Option<&str>) -> PyResult<Self> {
        Self::tweak(GridSpec::three_halves_baseline(n), m, policy)
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }
}

/// Two-layer state lattice with its generators.
#[pyclass(name = "Lattice", frozen)]
struct PyLattice(Lattice);

#[pymethods]
impl PyLattice {
    #[new]
    fn new(py: Python<'_>, model: &PyModel, fee: &PyFee, f0: f64, grid: &PyGrid) -> PyResult<Self> {
        let (model, fee, grid) = (model.0.clone(), fee.0.clone(), grid.0);
        py.detach(|| Lattice::build(&model, &fee, f0, &grid)).map(PyLattice).map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.m(), self.0.n())
    }

    #[getter]
    fn variances(&self) -> Vec<f64> {
        self.0.vgrid().points().to_vec()
    }

    #[getter]
    fn fund_values(&self) -> Vec<f64> {
        self.0.fund_values().to_vec()
    }
}

/// Prices the contract. Returns a dict with `european`, `bermudan`,
/// `early_surrender`, `seconds` and, when requested, `surface`.
#[pyfunction]
#[pyo3(signature = (lattice, contract, mode="fast", european=true, bermudan=true, surface=false))]
fn price<'py>(
    py: Python<'py>,
    lattice: &PyLattice,
    contract: &PyContract,
    mode: &str,
    european: bool,
    bermudan: bool,
    surface: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = parse_mode(mode)?;
    let req = Request { european, bermudan, surface, snapshots: Vec::new() };
    let res = py.detach(|| vactmc::price(&lattice.0, &contract.0, mode, &req)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("european", res.european)?;
    out.set_item("bermudan", res.bermudan)?;
    out.set_item("early_surrender", res.early_surrender())?;
    out.set_item("seconds", res.seconds)?;
    if let Some(s) = res.surface {
        let d = PyDict::new(py);
        let rows: Vec<Vec<Option<f64>>> = s.f_star.chunks(s.variances.len()).map(<[_]>::to_vec).collect();
        d.set_item("times", s.times)?;
        d.set_item("variances", s.variances)?;
        d.set_item("f_star", rows)?;
        out.set_item("surface", d)?;
    }
    Ok(out)
}

/// Base fee that makes the fast European price equal the premium `f0`.
#[pyfunction]
#[pyo3(signature = (model, fee, contract, grid, c_max=0.2, tol=1e-4, max_iter=60))]
#[allow(clippy::too_many_arguments)]
fn calibrate_fair_fee<'py>(
    py: Python<'py>,
    model: &PyModel,
    fee: &PyFee,
    contract: &PyContract,
    grid: &PyGrid,
    c_max: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = CalibrationOptions { c_max, tol, max_iter };
    let cal = py.detach(|| vactmc::calibrate_fair_fee(&model.0, &fee.0, &contract.0, &grid.0, &opts)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("base", cal.base)?;
    out.set_item("multiplier", cal.multiplier)?;
    out.set_item("price", cal.price)?;
    out.set_item("evaluations", cal.evaluations)?;
    Ok(out)
}

/// Index levels (as fractions) on the variance grid of `grid`, computed on the
/// variance chain. Returns `(states, values)`.
#[pyfunction]
#[pyo3(signature = (model, grid, steps=1000))]
fn vix_table(py: Python<'_>, model: &PyModel, grid: &PyGrid, steps: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let table = py
        .detach(|| {
            let (vgrid, _) = variance_grid(&model.0, &grid.0)?;
            let q = build_variance_generator(&model.0, &vgrid, grid.0.policy)?;
            vactmc::vix_ctmc(&q, &model.0, &vgrid, steps)
        })
        .map_err(to_py)?;
    Ok((table.states().to_vec(), table.values().to_vec()))
}

/// Heston index level (as a fraction) in closed form.
#[pyfunction]
fn vix_heston_closed_form(kappa: f64, theta: f64, v: f64) -> f64 {
    vactmc::vix_heston_closed_form(kappa, theta, v)
}

/// European guarantee price under Black-Scholes with a constant fee.
#[pyfunction]
fn bs_european(sigma: f64, r: f64, fee: f64, f0: f64, guarantee: f64, maturity: f64) -> f64 {
    bs_gmmb_price(sigma, r, fee, f0, guarantee, maturity)
}

/// Bermudan guarantee under Black-Scholes on a one-dimensional chain.
/// Returns a dict with `price`, `european` and `boundary` (list of `(t, f*)`).
#[pyfunction]
#[pyo3(signature = (sigma, r, fee, f0=100.0, guarantee=100.0, maturity=10.0, n=None, steps=None))]
#[allow(clippy::too_many_arguments)]
fn bs_bermudan<'py>(
    py: Python<'py>,
    sigma: f64,
    r: f64,
    fee: f64,
    f0: f64,
    guarantee: f64,
    maturity: f64,
    n: Option<usize>,
    steps: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = BsConfig::new(sigma, r, fee, f0, guarantee, maturity);
    if let Some(n) = n {
        cfg.n = n;
    }
    if let Some(steps) = steps {
        cfg.steps = steps;
    }
    let res = py.detach(|| bs_price_bermudan_1d(&cfg)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("price", res.price)?;
    out.set_item("european", res.european)?;
    out.set_item("boundary", res.boundary)?;
    Ok(out)
}

#[pymodule]
fn vactmc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyFee>()?;
    m.add_class::<PyContract>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyLattice>()?;
    m.add_function(wrap_pyfunction!(price, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_fair_fee, m)?)?;
    m.add_function(wrap_pyfunction!(vix_table, m)?)?;
    m.add_function(wrap_pyfunction!(vix_heston_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(bs_european, m)?)?;
    m.add_function(wrap_pyfunction!(bs_bermudan, m)?)?;
    m.add("NoFairFeeError", m.py().get_type::<NoFairFeeError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
