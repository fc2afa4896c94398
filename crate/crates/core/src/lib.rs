//! Variable annuity (GMMB) valuation under stochastic volatility with a
//! two-layer continuous-time Markov chain.
//!
//! The variance process is replaced by a birth-death chain on a sinh grid.
//! The log fund is decoupled from the variance so that, given the variance
//! state, it is a one-dimensional diffusion, and that diffusion is replaced
//! by its own chain in each variance regime. Contract values follow from
//! exponentials of the combined generator, or from a cheaper scheme that
//! freezes the variance over each monitoring step.

// Guards of the form `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod cli;
pub mod ctmc;
pub mod error;
pub mod fees;
pub mod grid;
pub mod models;
pub mod pricer;
pub mod volindex;

pub use error::{Error, Result};
pub use fees::{
    calibrate_fair_fee, fee_rate, Calibration, CalibrationOptions, FeeKind, FeeStructure, SurrenderCharge, VixSource,
};
pub use grid::{build_grid, validate_rate_conditions, Grid};
pub use models::{decouple, make_model, DecoupledCoeffs, ModelSpec};
pub use pricer::{
    early_surrender_value, price, price_bermudan, price_european_direct, price_european_fast, surrender_surface,
    ContractSpec, GridSpec, Lattice, Mode, PricingResult, Request, SurrenderSurface, ValueGrid,
};
pub use volindex::{vix_ctmc, vix_heston_closed_form, VixTable};
