//! Frozen-variance scheme: over each step the auxiliary process moves within
//! its regime, then the variance jumps by one step of the variance chain.

use rayon::prelude::*;

use super::{ContractSpec, Lattice, Request, SurfaceBuilder, SurrenderSurface, ValueGrid};
use crate::ctmc::{transition_matrix, TransitionMatrix};
use crate::error::Result;

pub(super) fn run(
    lattice: &Lattice,
    contract: &ContractSpec,
    req: &Request,
) -> Result<(ValueGrid, Option<SurrenderSurface>)> {
    let (m, n) = (lattice.m(), lattice.n());
    let steps = contract.steps;
    let dt = contract.dt();
    let disc = (-lattice.r() * dt).exp();
    let px: Vec<TransitionMatrix> =
        lattice.regime_generators().par_iter().map(|g| transition_matrix(g, dt)).collect::<Result<_>>()?;
    let pv = transition_matrix(lattice.variance_generator(), dt)?;
    let fund = lattice.fund_values();
    let h1 = lattice.maturity_payoff(contract.guarantee);

    let mut eu = req.european.then(|| h1.clone());
    let mut be = (req.bermudan || req.surface).then(|| h1.clone());
    let mut te = vec![0.0; m * n];
    let mut tb = vec![0.0; m * n];
    let mut surface = req.surface.then(|| SurfaceBuilder::new(m, n, dt));
    let mut snapshots = Vec::new();

    for z in (0..steps).rev() {
        match (eu.as_deref(), be.as_deref()) {
            (Some(e), Some(b)) => {
                te.par_chunks_mut(n)
                    .zip(tb.par_chunks_mut(n))
                    .zip(e.par_chunks(n).zip(b.par_chunks(n)))
                    .zip(px.par_iter())
                    .for_each(|(((ye, yb), (xe, xb)), p)| p.apply2_into(xe, xb, ye, yb));
            }
            (Some(x), None) => propagate(&px, x, &mut te, n),
            (None, Some(x)) => propagate(&px, x, &mut tb, n),
            (None, None) => {}
        }
        if let Some(e) = eu.as_mut() {
            mix(&pv, &te, e, n, disc);
        }
        if let Some(b) = be.as_mut() {
            mix(&pv, &tb, b, n, disc);
            let g = contract.surrender_factor(z);
            b.par_iter_mut().zip(fund.par_iter()).for_each(|(v, &f)| *v = v.max(g * f));
            if let Some(s) = surface.as_mut() {
                s.scan(z, b, fund, g);
            }
            if req.snapshots.contains(&z) {
                snapshots.push((z, b.clone()));
            }
        }
    }
    let values = ValueGrid {
        m,
        n,
        maturity_payoff: h1,
        european: eu,
        bermudan: if req.bermudan { be } else { None },
        snapshots,
    };
    Ok((values, surface.map(|s| s.finish(lattice.vgrid().points()))))
}

fn propagate(px: &[TransitionMatrix], x: &[f64], y: &mut [f64], n: usize) {
    y.par_chunks_mut(n).zip(x.par_chunks(n)).zip(px.par_iter()).for_each(|((y, x), p)| p.apply_into(x, y));
}

/// `out_l = disc * sum_j pv[l][j] t_j` over regime blocks.
fn mix(pv: &TransitionMatrix, t: &[f64], out: &mut [f64], n: usize, disc: f64) {
    let pv = pv.banded();
    out.par_chunks_mut(n).enumerate().for_each(|(l, o)| {
        let (start, row) = pv.row(l);
        o.iter_mut().for_each(|v| *v = 0.0);
        for (k, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let j = start + k;
            let src = &t[j * n..(j + 1) * n];
            o.iter_mut().zip(src).for_each(|(v, s)| *v += w * s);
        }
        o.iter_mut().for_each(|v| *v *= disc);
    });
}
