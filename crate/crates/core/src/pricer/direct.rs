//! Direct scheme: exponentials of the joint generator. Dense Padé for small
//! chains; otherwise a sparse one-step transition matrix applied once per
//! monitoring step, using `exp(TG) = exp(dt G)^M` for the European value.

use super::{ContractSpec, Lattice, Request, SurfaceBuilder, SurrenderSurface, ValueGrid};
use crate::ctmc::{SparseMatrix, TransitionMatrix, DENSE_LIMIT};
use crate::error::Result;

enum Step {
    Dense(TransitionMatrix),
    Sparse(SparseMatrix),
}

impl Step {
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Step::Dense(p) => p.apply_into(x, y),
            Step::Sparse(p) => p.apply_into(x, y),
        }
    }

    fn apply2_into(&self, x1: &[f64], x2: &[f64], y1: &mut [f64], y2: &mut [f64]) {
        match self {
            Step::Dense(p) => p.apply2_into(x1, x2, y1, y2),
            Step::Sparse(p) => p.apply2_into(x1, x2, y1, y2),
        }
    }
}

pub(super) fn run(
    lattice: &Lattice,
    contract: &ContractSpec,
    req: &Request,
) -> Result<(ValueGrid, Option<SurrenderSurface>)> {
    let (m, n) = (lattice.m(), lattice.n());
    let r = lattice.r();
    let h1 = lattice.maturity_payoff(contract.guarantee);
    let fund = lattice.fund_values();
    let joint = lattice.joint()?;
    let small = joint.dim() <= DENSE_LIMIT;

    // Small chains: one exponential over the whole horizon.
    let mut european = None;
    if req.european && small {
        let p = joint.transition_matrix(contract.maturity)?;
        let disc = (-r * contract.maturity).exp();
        european = Some(p.apply(&h1).into_iter().map(|v| disc * v).collect::<Vec<_>>());
    }
    let step_eu = req.european && !small;
    let step_be = req.bermudan || req.surface;

    let mut surface = req.surface.then(|| SurfaceBuilder::new(m, n, contract.dt()));
    let mut snapshots = Vec::new();
    let mut eu = step_eu.then(|| h1.clone());
    let mut be = step_be.then(|| h1.clone());
    if step_eu || step_be {
        let dt = contract.dt();
        let p = if small { Step::Dense(joint.transition_matrix(dt)?) } else { Step::Sparse(joint.step_matrix(dt)?) };
        let disc = (-r * dt).exp();
        let mut te = vec![0.0; m * n];
        let mut tb = vec![0.0; m * n];
        for z in (0..contract.steps).rev() {
            match (eu.as_mut(), be.as_mut()) {
                (Some(e), Some(b)) => {
                    p.apply2_into(e, b, &mut te, &mut tb);
                    e.iter_mut().zip(&te).for_each(|(v, t)| *v = disc * t);
                }
                (Some(e), None) => {
                    p.apply_into(e, &mut te);
                    e.iter_mut().zip(&te).for_each(|(v, t)| *v = disc * t);
                }
                (None, Some(b)) => p.apply_into(b, &mut tb),
                (None, None) => {}
            }
            if let Some(b) = be.as_mut() {
                let g = contract.surrender_factor(z);
                b.iter_mut().zip(&tb).zip(fund).for_each(|((v, t), &f)| *v = (disc * t).max(g * f));
                if let Some(s) = surface.as_mut() {
                    s.scan(z, b, fund, g);
                }
                if req.snapshots.contains(&z) {
                    snapshots.push((z, b.clone()));
                }
            }
        }
    }
    if step_eu {
        european = eu;
    }

    let bermudan = if req.bermudan { be } else { None };
    let values = ValueGrid { m, n, maturity_payoff: h1, european, bermudan, snapshots };
    Ok((values, surface.map(|s| s.finish(lattice.vgrid().points()))))
}
