//! Acceptance suite. Runs without the libtest harness so that each
//! criterion prints exactly one PASS/FAIL line even when all pass.

use std::time::Instant;

use statrs::distribution::{ContinuousCDF, Normal};

use vactmc::benchmark::{bs_price_bermudan_1d, BsConfig};
use vactmc::ctmc::build_variance_generator;
use vactmc::pricer::variance_grid;
use vactmc::*;

const F0: f64 = 100.0;
const T: f64 = 10.0;
const BASE_FEE: f64 = 0.015338;

fn heston() -> ModelSpec {
    ModelSpec::heston(2.0, 0.04, 0.2, -0.75, 0.03, 0.03).unwrap()
}

fn baseline_contract(steps: usize) -> ContractSpec {
    ContractSpec::new(F0, F0, T, steps, SurrenderCharge::exponential(0.002).unwrap()).unwrap()
}

fn constant_lattice(m: usize, n: usize) -> Lattice {
    let spec = GridSpec { m, ..GridSpec::heston_baseline(n) };
    Lattice::build(&heston(), &FeeStructure::constant(BASE_FEE).unwrap(), F0, &spec).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// European and Bermudan values on the full baseline, shared by several criteria.
struct Baseline {
    european: f64,
    bermudan: f64,
}

fn baseline() -> &'static Baseline {
    static CELL: std::sync::OnceLock<Baseline> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let lat = constant_lattice(50, 2000);
        let req = Request { european: true, bermudan: true, ..Default::default() };
        let r = price(&lat, &baseline_contract(5000), Mode::Fast, &req).unwrap();
        Baseline { european: r.european.unwrap(), bermudan: r.bermudan.unwrap() }
    })
}

fn criterion_1() -> Outcome {
    let model = heston();
    let start = Instant::now();
    let spec = GridSpec { m: 1000, ..GridSpec::heston_baseline(10) };
    let (vg, _) = variance_grid(&model, &spec).unwrap();
    let q = build_variance_generator(&model, &vg, spec.policy).unwrap();
    let table = vix_ctmc(&q, &model, &vg, 1000).unwrap();
    let secs = start.elapsed().as_secs_f64();
    // VIX^2 = B + A v in closed form for Heston.
    let tau: f64 = 30.0 / 365.0;
    let a = (1.0 - (-2.0 * tau).exp()) / (2.0 * tau);
    let oracle = |v: f64| (0.04 * (1.0 - a) + a * v).sqrt();
    let mut worst: f64 = 0.0;
    for v in [0.01, 0.02, 0.04, 0.06, 0.09] {
        worst = worst.max((table.vix_at(v) - oracle(v)).abs() / oracle(v));
    }
    let at_theta = (100.0 * table.vix_at(0.04) - 20.0).abs();
    outcome(
        worst <= 2e-4 && at_theta <= 1e-6 && secs <= 10.0,
        format!("max rel err {worst:.2e}, |VIX(0.04) - 20%| = {at_theta:.1e}, {secs:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let model = heston();
    let contract = baseline_contract(5000);
    let spec = GridSpec::heston_baseline(100);
    let mut pass = true;
    let mut parts = Vec::new();
    for (mult, target) in [(0.0, 0.015338), (0.15, 0.010036), (0.30, 0.004741)] {
        let start = Instant::now();
        let fee =
            FeeStructure::new(FeeKind::Vix2, 0.0, mult, None, VixSource::HestonClosedForm { kappa: 2.0, theta: 0.04 })
                .unwrap();
        let cal = calibrate_fair_fee(&model, &fee, &contract, &spec, &CalibrationOptions::default()).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let err = (cal.base - target).abs();
        pass &= err <= 5e-4 && secs <= 60.0;
        parts.push(format!("m={mult}: {:.4}% (err {err:.1e}, {secs:.1} s)", 100.0 * cal.base));
    }
    let eu = baseline().european;
    pass &= (eu - 100.0).abs() <= 5e-3;
    parts.push(format!("European at N=2000 with the tabulated fee {eu:.5}"));
    outcome(pass, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let b = baseline();
    let es = b.bermudan - b.european;
    outcome(
        (b.bermudan - 103.0179).abs() <= 2e-2 && (es - 3.0170).abs() <= 2e-2,
        format!("Bermudan {:.5} (103.0179), ES {es:.5} (3.0170)", b.bermudan),
    )
}

/// Closed-form European GMMB value under lognormal fund dynamics.
fn gmmb_closed_form(sigma: f64, r: f64, c: f64, f0: f64, g: f64, t: f64) -> f64 {
    let n = Normal::standard();
    let s = sigma * t.sqrt();
    let d1 = ((f0 / g).ln() + (r - c + 0.5 * sigma * sigma) * t) / s;
    f0 * (-c * t).exp() * n.cdf(d1) + g * (-r * t).exp() * n.cdf(-(d1 - s))
}

/// Cox-Ross-Rubinstein tree with surrender allowed every `refine` steps.
/// The boundary at each monitoring date is interpolated linearly in the
/// fund value between the last continuation node and the first exercise node.
#[allow(clippy::too_many_arguments)]
fn tree_boundary(sigma: f64, r: f64, c: f64, f0: f64, g: f64, t: f64, dates: usize, refine: usize) -> Vec<Option<f64>> {
    let steps = dates * refine;
    let h = t / steps as f64;
    let u = (sigma * h.sqrt()).exp();
    let p = (((r - c) * h).exp() - 1.0 / u) / (u - 1.0 / u);
    let disc = (-r * h).exp();
    let fund = |i: usize, j: usize| f0 * u.powf(2.0 * j as f64 - i as f64);
    let mut v: Vec<f64> = (0..=steps).map(|j| fund(steps, j).max(g)).collect();
    let mut out = vec![None; dates];
    for i in (0..steps).rev() {
        for j in 0..=i {
            v[j] = disc * (p * v[j + 1] + (1.0 - p) * v[j]);
        }
        if i % refine == 0 {
            let mut first = None;
            for j in 0..=i {
                let f = fund(i, j);
                if v[j] <= f {
                    if first.is_none() && j > 0 {
                        // Gap (value - fund) changes sign between j-1 and j.
                        let (f_lo, gap_lo) = (fund(i, j - 1), v[j - 1] - fund(i, j - 1));
                        let gap_hi = v[j] - f;
                        let w = gap_lo / (gap_lo - gap_hi);
                        first = Some(f_lo + w * (f - f_lo));
                    }
                    v[j] = f;
                }
            }
            out[i / refine] = first;
        }
    }
    out
}

/// Largest relative gap between the chain boundary and the tree boundary,
/// and the number of dates where both exist.
fn boundary_gap(chain: &[(f64, Option<f64>)], tree: &[Option<f64>]) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for ((_, a), b) in chain.iter().zip(tree) {
        if let (Some(a), Some(b)) = (a, b) {
            worst = worst.max((a - b).abs() / b);
            compared += 1;
        }
    }
    (worst, compared)
}

fn criterion_4() -> Outcome {
    let (r, g, t) = (0.03, 100.0, 15.0);
    let start = Instant::now();
    let (sigma, fee) = (0.1, 0.001374);
    let fair = gmmb_closed_form(sigma, r, fee, F0, g, t);
    let cfg = BsConfig::new(sigma, r, fee, F0, g, t);
    let res = bs_price_bermudan_1d(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rel = (res.price - 100.851748).abs() / 100.851748;
    let (worst, compared) = boundary_gap(&res.boundary, &tree_boundary(sigma, r, fee, F0, g, t, cfg.steps, 8));
    let mut pass =
        rel <= 1e-4 && (fair - F0).abs() <= 5e-3 && worst <= 1.1e-2 && compared > cfg.steps / 2 && secs <= 300.0;
    let mut detail = format!(
        "sigma=0.1: price {:.6} (rel err {rel:.2e}), boundary max rel err {worst:.2e} over {compared} dates, \
         closed-form European at the tabulated fee {fair:.4}, {secs:.1} s",
        res.price
    );
    for (sigma, fee) in [(0.2, 0.009094), (0.3, 0.019277), (0.4, 0.029415)] {
        let cfg = BsConfig::new(sigma, r, fee, F0, g, t);
        let res = bs_price_bermudan_1d(&cfg).unwrap();
        let (worst, compared) = boundary_gap(&res.boundary, &tree_boundary(sigma, r, fee, F0, g, t, cfg.steps, 8));
        pass &= worst <= 1.1e-2 && compared > cfg.steps / 2;
        detail.push_str(&format!("; sigma={sigma}: boundary {worst:.2e}"));
    }
    outcome(pass, detail)
}

/// Direct-scheme run on the N=300 grid, shared by criteria 5 and 7.
fn direct_300() -> &'static PricingResult {
    static CELL: std::sync::OnceLock<PricingResult> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let req = Request { european: true, bermudan: true, ..Default::default() };
        price(&constant_lattice(50, 300), &baseline_contract(5000), Mode::Direct, &req).unwrap()
    })
}

fn criterion_5() -> Outcome {
    let lat = constant_lattice(50, 300);
    let c = baseline_contract(5000);
    let req = Request { european: true, bermudan: true, ..Default::default() };
    let fast = price(&lat, &c, Mode::Fast, &req).unwrap();
    let direct = direct_300();
    let rel = |a: Option<f64>, b: Option<f64>| (a.unwrap() - b.unwrap()).abs() / b.unwrap();
    let (re, rb) = (rel(fast.european, direct.european), rel(fast.bermudan, direct.bermudan));
    outcome(
        re <= 1e-4 && rb <= 1e-4,
        format!(
            "European {:.6}/{:.6} (rel {re:.1e}), Bermudan {:.6}/{:.6} (rel {rb:.1e}), direct {:.0} s",
            fast.european.unwrap(),
            direct.european.unwrap(),
            fast.bermudan.unwrap(),
            direct.bermudan.unwrap(),
            direct.seconds
        ),
    )
}

fn criterion_6() -> Outcome {
    // The invariants are checked by the `properties` test target; this
    // line records that the suite exists and spot-checks the cheapest ones.
    let lat = constant_lattice(5, 20);
    let joint = lat.joint().unwrap();
    let row = joint.row_sums().iter().fold(0.0f64, |a, s| a.max(s.abs())) / joint.norm_inf();
    let p = joint.transition_matrix(0.1).unwrap();
    let stoch = p.row_sums().iter().fold(0.0f64, |a, s| a.max((s - 1.0).abs()));
    let c = ContractSpec::new(F0, F0, 0.0, 3, SurrenderCharge::Forbidden).unwrap();
    let zero = price(&lat, &c, Mode::Fast, &Request { european: true, bermudan: true, ..Default::default() }).unwrap();
    let exact = zero.european == Some(F0) && zero.bermudan == Some(F0);
    outcome(
        row <= 1e-10 && stoch <= 1e-10 && exact,
        format!("generator row sums {row:.1e}, transition row sums {stoch:.1e}, T=0 exact {exact}; full suite in tests/properties.rs"),
    )
}

fn criterion_7() -> Outcome {
    let eu_m: Vec<f64> = [25, 50, 100]
        .iter()
        .map(|&m| {
            if m == 50 {
                baseline().european
            } else {
                price_european_fast(&constant_lattice(m, 2000), &baseline_contract(5000)).unwrap()
            }
        })
        .collect();
    let lat = constant_lattice(50, 2000);
    let fast_m: Vec<f64> = [1250, 2500, 5000]
        .iter()
        .map(|&steps| {
            if steps == 5000 {
                baseline().bermudan
            } else {
                price_bermudan(&lat, &baseline_contract(steps), Mode::Fast).unwrap().0
            }
        })
        .collect();
    // Exercise dates are nested only when the one-step operator is exact, so
    // the monotone-in-M check runs on the direct scheme. The frozen-variance
    // step carries an O(dt) bias of its own that decays from above.
    let lat = constant_lattice(50, 300);
    let direct_m: Vec<f64> = [1250, 2500, 5000]
        .iter()
        .map(|&steps| {
            if steps == 5000 {
                direct_300().bermudan.unwrap()
            } else {
                price_bermudan(&lat, &baseline_contract(steps), Mode::Direct).unwrap().0
            }
        })
        .collect();
    let d = |v: &[f64]| ((v[0] - v[1]).abs(), (v[1] - v[2]).abs());
    let (e1, e2) = d(&eu_m);
    let (f1, f2) = d(&fast_m);
    let (b1, b2) = d(&direct_m);
    let nondecreasing = direct_m.windows(2).all(|w| w[1] >= w[0] - 1e-6);
    outcome(
        e2 < e1 && f2 < f1 && b2 < b1 && nondecreasing,
        format!(
            "European m=25,50,100: {:.6} {:.6} {:.6} (diffs {e1:.2e}, {e2:.2e}); \
             fast Bermudan M=1250,2500,5000: {:.6} {:.6} {:.6} (diffs {f1:.2e}, {f2:.2e}); \
             direct Bermudan N=300: {:.6} {:.6} {:.6} (diffs {b1:.2e}, {b2:.2e}, nondecreasing {nondecreasing})",
            eu_m[0], eu_m[1], eu_m[2], fast_m[0], fast_m[1], fast_m[2], direct_m[0], direct_m[1], direct_m[2]
        ),
    )
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 7] = [
        (1, "VIX accuracy", criterion_1),
        (2, "fair-fee round trip", criterion_2),
        (3, "Bermudan baseline", criterion_3),
        (4, "Black-Scholes benchmark", criterion_4),
        (5, "fast vs direct", criterion_5),
        (6, "property suite", criterion_6),
        (7, "convergence trends", criterion_7),
    ];
    let mut failed = 0;
    for (k, name, run) in criteria {
        if !only.is_empty() && !only.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let o = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!o.pass);
        println!(
            "criterion {k} ({name}): {} [{:.1} s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
