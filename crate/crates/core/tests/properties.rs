use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

use vactmc::benchmark::{bs_price_bermudan_1d, BsConfig};
use vactmc::ctmc::{build_variance_generator, transition_matrix, JointGenerator, RatePolicy, TridiagGenerator};
use vactmc::pricer::{variance_grid, Bound};
use vactmc::*;

fn heston() -> impl Strategy<Value = ModelSpec> {
    (0.5..4.0f64, 0.01..0.09f64, 0.1..0.6f64, -0.9..0.5f64, 0.005..0.06f64, 0.01..0.09f64)
        .prop_map(|(k, th, s, rho, r, v0)| ModelSpec::heston(k, th, s, rho, r, v0).unwrap())
}

fn policy() -> impl Strategy<Value = RatePolicy> {
    prop_oneof![Just(RatePolicy::Clamp), Just(RatePolicy::Upwind), Just(RatePolicy::Signed)]
}

fn monotone_policy() -> impl Strategy<Value = RatePolicy> {
    prop_oneof![Just(RatePolicy::Clamp), Just(RatePolicy::Upwind)]
}

fn small_lattice(model: &ModelSpec, fee: f64, m: usize, n: usize, policy: RatePolicy) -> Lattice {
    let spec = GridSpec { m, policy, ..GridSpec::heston_baseline(n) };
    Lattice::build(model, &FeeStructure::constant(fee).unwrap(), 100.0, &spec).unwrap()
}

fn generators(lat: &Lattice) -> Vec<&TridiagGenerator> {
    std::iter::once(lat.variance_generator()).chain(lat.regime_generators()).collect()
}

/// `|q_ii|`-relative size of each row sum.
fn max_row_sum(g: &TridiagGenerator) -> f64 {
    g.row_sums().iter().zip(g.diag()).map(|(s, d)| s.abs() / d.abs().max(1.0)).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::with_cases(64)
    })]

    #[test]
    fn generator_rows_sum_to_zero(model in heston(), m in 3usize..8, n in 3usize..40, p in policy()) {
        let lat = small_lattice(&model, 0.01, m, n, p);
        for g in generators(&lat) {
            prop_assert!(max_row_sum(g) <= 1e-10);
        }
        let joint = lat.joint().unwrap();
        let scale = joint.norm_inf().max(1.0);
        prop_assert!(joint.row_sums().iter().all(|s| s.abs() / scale <= 1e-10));
    }

    #[test]
    fn adjusted_rates_are_nonnegative(model in heston(), m in 3usize..8, n in 3usize..40, p in monotone_policy()) {
        let lat = small_lattice(&model, 0.01, m, n, p);
        for g in generators(&lat) {
            prop_assert!(g.sub().iter().chain(g.sup()).all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn transition_matrices_are_stochastic(model in heston(), m in 3usize..6, n in 3usize..30,
                                          p in monotone_policy(), t in 1e-4..2.0f64) {
        let lat = small_lattice(&model, 0.01, m, n, p);
        for g in generators(&lat) {
            let pm = transition_matrix(g, t).unwrap();
            prop_assert!(pm.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-10));
            let d = pm.to_dense();
            prop_assert!(d.iter().all(|&v| v >= 0.0));
        }
        let joint = lat.joint().unwrap();
        let pm = joint.transition_matrix(t).unwrap();
        prop_assert!(pm.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-10));
        prop_assert!(pm.to_dense().iter().all(|&v| v >= 0.0));
        let sp = joint.step_matrix(t).unwrap();
        prop_assert!(sp.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-10));
        for i in 0..sp.dim() {
            prop_assert!(sp.row(i).1.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn signed_transition_rows_sum_to_one(model in heston(), m in 3usize..6, n in 3usize..30, t in 1e-4..2.0f64) {
        let lat = small_lattice(&model, 0.01, m, n, RatePolicy::Signed);
        for g in generators(&lat) {
            let pm = transition_matrix(g, t).unwrap();
            prop_assert!(pm.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-10));
        }
        let sp = lat.joint().unwrap().step_matrix(t).unwrap();
        prop_assert!(sp.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-10));
    }

    #[test]
    fn interior_rows_match_local_moments(model in heston(), m in 3usize..12, n in 3usize..60, p in policy(), fee in 0.0..0.03f64) {
        let lat = small_lattice(&model, fee, m, n, p);
        let dec = lat.decoupled();
        let v = lat.vgrid().points();
        let x = lat.xgrid().points();
        let check = |g: &TridiagGenerator, pts: &[f64], mu: &dyn Fn(usize) -> f64, s2: &dyn Fn(usize) -> f64| {
            for i in 1..pts.len() - 1 {
                if g.clamped().contains(&i) && p != RatePolicy::Signed {
                    continue;
                }
                let (dm, dp) = (pts[i] - pts[i - 1], pts[i + 1] - pts[i]);
                let (down, up) = (g.sub()[i], g.sup()[i]);
                let scale1 = down.abs() * dm + up.abs() * dp;
                let scale2 = down.abs() * dm * dm + up.abs() * dp * dp;
                let m1 = up * dp - down * dm;
                let m2 = up * dp * dp + down * dm * dm;
                if (m1 - mu(i)).abs() > 1e-10 * scale1.max(1.0) || (m2 - s2(i)).abs() > 1e-10 * scale2.max(1.0) {
                    return false;
                }
            }
            true
        };
        let mu_v = |i: usize| model.mu_v(v[i]);
        let s2_v = |i: usize| model.sigma_v(v[i]).powi(2);
        prop_assert!(check(lat.variance_generator(), v, &mu_v, &s2_v));
        for (l, g) in lat.regime_generators().iter().enumerate() {
            let mu_x = |i: usize| dec.mu_x(x[i], v[l]);
            let s2_x = |_: usize| dec.sigma_x(v[l]).powi(2);
            prop_assert!(check(g, x, &mu_x, &s2_x));
        }
    }

    #[test]
    fn semigroup_on_small_chains(model in heston(), m in 3usize..6, n in 3usize..9, p in policy(),
                                 s in 0.01..1.0f64, t in 0.01..1.0f64) {
        let lat = small_lattice(&model, 0.01, m, n, p);
        prop_assume!(m * lat.n() <= 50);
        // Signed generators on very coarse grids can have exponentials with
        // entries in the hundreds, so the error is measured against the scale
        // of the product. Stochastic matrices keep the absolute 1e-8.
        let norm = |a: &DMatrix<f64>| a.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
        let close = |ps: &DMatrix<f64>, pt: &DMatrix<f64>, pst: &DMatrix<f64>| {
            (ps * pt - pst).abs().max() <= 1e-8 * (norm(ps) * norm(pt)).max(1.0)
        };
        for g in generators(&lat) {
            let ps = transition_matrix(g, s).unwrap().to_dense();
            let pt = transition_matrix(g, t).unwrap().to_dense();
            let pst = transition_matrix(g, s + t).unwrap().to_dense();
            prop_assert!(close(&ps, &pt, &pst));
        }
        let joint = lat.joint().unwrap();
        let ps = joint.transition_matrix(s).unwrap().to_dense();
        let pt = joint.transition_matrix(t).unwrap().to_dense();
        let pst = joint.transition_matrix(s + t).unwrap().to_dense();
        prop_assert!(close(&ps, &pt, &pst));
    }

    #[test]
    fn bermudan_dominates_european_dominates_floor(model in heston(), m in 3usize..6, n in 5usize..25,
                                                   p in monotone_policy(), steps in 2usize..30,
                                                   fee in 0.0..0.03f64, k in 0.0..0.05f64, fast in any::<bool>()) {
        let lat = small_lattice(&model, fee, m, n, p);
        let c = ContractSpec::new(100.0, 100.0, 3.0, steps, SurrenderCharge::exponential(k).unwrap()).unwrap();
        let mode = if fast { Mode::Fast } else { Mode::Direct };
        let r = price(&lat, &c, mode, &Request { european: true, bermudan: true, ..Default::default() }).unwrap();
        let (eu, be) = (r.values.european.unwrap(), r.values.bermudan.unwrap());
        let floor = 100.0 * (-model.r * c.maturity).exp();
        let g0 = c.surrender_factor(0);
        for ((e, b), f) in eu.iter().zip(&be).zip(lat.fund_values()) {
            let tol = 1e-10 * b.abs().max(1.0);
            prop_assert!(*b >= 0.0 && *e >= 0.0);
            prop_assert!(*b >= *e - tol, "bermudan {b} < european {e}");
            prop_assert!(*e >= floor - tol, "european {e} < floor {floor}");
            prop_assert!(*b >= g0 * f - tol);
        }
        let es = early_surrender_value(&lat, &c, mode).unwrap();
        prop_assert!(es.value >= -1e-8);
    }

    #[test]
    fn zero_maturity_is_intrinsic(model in heston(), g in 0.0..200.0f64, fast in any::<bool>()) {
        let lat = small_lattice(&model, 0.01, 3, 10, RatePolicy::Signed);
        let c = ContractSpec::new(100.0, g, 0.0, 7, SurrenderCharge::exponential(0.01).unwrap()).unwrap();
        let mode = if fast { Mode::Fast } else { Mode::Direct };
        let r = price(&lat, &c, mode, &Request { european: true, bermudan: true, ..Default::default() }).unwrap();
        prop_assert_eq!(r.european.unwrap(), 100f64.max(g));
        prop_assert_eq!(r.bermudan.unwrap(), 100f64.max(g));
    }

    #[test]
    fn forbidden_surrender_is_european(model in heston(), m in 3usize..6, n in 5usize..25,
                                       p in monotone_policy(), steps in 1usize..30) {
        let lat = small_lattice(&model, 0.01, m, n, p);
        let c = ContractSpec::new(100.0, 100.0, 2.0, steps, SurrenderCharge::Forbidden).unwrap();
        let req = Request { european: true, bermudan: true, ..Default::default() };
        let r = price(&lat, &c, Mode::Fast, &req).unwrap();
        prop_assert_eq!(r.values.european.as_ref().unwrap(), r.values.bermudan.as_ref().unwrap());
        // Direct European uses one exponential over the horizon, the
        // Bermudan pass one per step; they agree up to rounding.
        let d = price(&lat, &c, Mode::Direct, &req).unwrap();
        let (e, b) = (d.european.unwrap(), d.bermudan.unwrap());
        prop_assert!((e - b).abs() <= 1e-10 * e);
    }

    #[test]
    fn maturity_payoff_is_guarantee_floor(model in heston(), g in 50.0..150.0f64) {
        let lat = small_lattice(&model, 0.01, 3, 12, RatePolicy::Signed);
        let c = ContractSpec::new(100.0, g, 1.0, 4, SurrenderCharge::exponential(0.01).unwrap()).unwrap();
        let r = price(&lat, &c, Mode::Fast, &Request { bermudan: true, ..Default::default() }).unwrap();
        for (h, f) in r.values.maturity_payoff.iter().zip(lat.fund_values()) {
            prop_assert_eq!(*h, f.max(g));
        }
    }

    #[test]
    fn psi_is_a_bijection(m in 1usize..100, n in 1usize..100) {
        prop_assume!(m * n <= 10_000);
        let joint = JointGenerator::new(TridiagGenerator::zero(m), vec![TridiagGenerator::zero(n); m]).unwrap();
        let mut seen = vec![false; m * n];
        for l in 1..=m {
            for i in 1..=n {
                let k = joint.psi(i, l);
                prop_assert!((1..=m * n).contains(&k));
                prop_assert!(!seen[k - 1]);
                seen[k - 1] = true;
                prop_assert_eq!(joint.psi_inv(k), (i, l));
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn grids_are_strictly_increasing_with_exact_ends(c in -1.0..1.0f64, w1 in 0.01..5.0f64, w2 in 0.01..5.0f64,
                                                     count in 3usize..300, alpha in 0.01..10.0f64, extra in 0.0..1.0f64) {
        let (lo, hi) = (c - w1, c + w2);
        let g = build_grid(c, lo, hi, count, alpha).unwrap();
        let p = g.points();
        prop_assert_eq!(p.len(), count);
        prop_assert_eq!(p[0], lo);
        prop_assert_eq!(p[count - 1], hi);
        prop_assert!(p.windows(2).all(|w| w[0] < w[1]));
        let v = lo + extra * (hi - lo);
        let (h, at) = g.insert_point(v).unwrap();
        // Either inserted exactly or snapped onto an existing point.
        prop_assert!(h.points()[at] == v || (h.len() == count && (h.points()[at] - v).abs() <= 1e-14 * v.abs().max(1.0)));
        prop_assert!(h.points().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(p.iter().all(|x| h.points().contains(x)));
        prop_assert!(h.len() == count || h.len() == count + 1);
    }

    #[test]
    fn heston_auxiliary_coefficients(model in heston(), c in 0.0..0.03f64, y in 0.001..0.5f64) {
        let dec = decouple(&model, &FeeStructure::constant(c).unwrap());
        let (kappa, theta, sigma) = model.heston_params().unwrap();
        let rho = model.rho;
        let hand = model.r - rho * kappa * theta / sigma - c + y * (rho * kappa / sigma - 0.5);
        prop_assert!((dec.mu_x(0.0, y) - hand).abs() <= 1e-12);
        prop_assert_eq!(dec.sigma_x(y), (1.0 - rho * rho).sqrt() * model.sigma_s(y));
        prop_assert!(dec.gamma(y * 1.01) > dec.gamma(y));
    }

    #[test]
    fn fee_rates_are_bounded(model in heston(), base in 0.0..0.03f64, mult in 0.0..0.5f64, cap in 0.0..0.05f64, y in 0.0..1.0f64) {
        let (kappa, theta, _) = model.heston_params().unwrap();
        let src = || VixSource::HestonClosedForm { kappa, theta };
        for kind in [FeeKind::Vix2, FeeKind::Vix] {
            let f = FeeStructure::new(kind, base, mult, None, src()).unwrap();
            prop_assert!(f.rate(y) >= 0.0);
            prop_assert!(f.rate(y * 1.1 + 1e-6) >= f.rate(y));
        }
        let f = FeeStructure::new(FeeKind::Vix2Capped, base, mult, Some(cap), src()).unwrap();
        prop_assert!(f.rate(y) >= 0.0 && f.rate(y) <= cap);
        let z = FeeStructure::new(FeeKind::Vix2, base, 0.0, None, src()).unwrap();
        prop_assert_eq!(z.rate(y), base);
    }

    #[test]
    fn surrender_factor_in_unit_interval(k in 0.0..0.2f64, t in 0.0..10.0f64) {
        let g = SurrenderCharge::exponential(k).unwrap();
        let v = g.factor(t, 10.0);
        prop_assert!(v > 0.0 && v <= 1.0);
        prop_assert_eq!(g.factor(10.0, 10.0), 1.0);
    }

    #[test]
    fn heston_vix_table_is_nondecreasing(model in heston(), m in 5usize..60) {
        let spec = GridSpec { m, ..GridSpec::heston_baseline(10) };
        let (vg, _) = variance_grid(&model, &spec).unwrap();
        let q = build_variance_generator(&model, &vg, RatePolicy::Upwind).unwrap();
        let t = vix_ctmc(&q, &model, &vg, 200).unwrap();
        prop_assert!(t.values().windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
        prop_assert!(t.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn one_dimensional_pricer_is_the_single_regime_engine(sigma in 0.05..0.4f64, fee in 0.0..0.02f64) {
        let mut bs = BsConfig::new(sigma, 0.03, fee, 100.0, 100.0, 3.0);
        bs.n = 120;
        bs.steps = 30;
        let one = bs_price_bermudan_1d(&bs).unwrap();
        let (grid, _) = bs.grid().unwrap();
        let model = ModelSpec::black_scholes(sigma, 0.03).unwrap();
        let x0 = 100f64.ln();
        let mid = x0 + (0.03 - 0.5 * sigma * sigma) * 1.5;
        let width = bs.spread * sigma * 1.5f64.sqrt();
        let spec = GridSpec {
            m: 1,
            n: bs.n,
            x_lo: Bound::Abs(mid - width),
            x_hi: Bound::Abs(mid + width),
            alpha_x: bs.alpha,
            ..GridSpec::heston_baseline(bs.n)
        };
        let lat = Lattice::build(&model, &FeeStructure::constant(fee).unwrap(), 100.0, &spec).unwrap();
        prop_assert_eq!(lat.xgrid().points(), grid.points());
        let c = ContractSpec::new(100.0, 100.0, 3.0, bs.steps, SurrenderCharge::exponential(0.0).unwrap()).unwrap();
        let r = price(&lat, &c, Mode::Fast, &Request { european: true, bermudan: true, ..Default::default() }).unwrap();
        prop_assert!((r.bermudan.unwrap() - one.price).abs() <= 1e-10 * one.price);
        prop_assert!((r.european.unwrap() - one.european).abs() <= 1e-10 * one.european);
    }

    #[test]
    fn european_price_decreases_in_fee(model in heston(), c in 0.0..0.05f64) {
        let contract = ContractSpec::new(100.0, 100.0, 5.0, 20, SurrenderCharge::Forbidden).unwrap();
        let lo = price_european_fast(&small_lattice(&model, c, 4, 20, RatePolicy::Signed), &contract).unwrap();
        let hi = price_european_fast(&small_lattice(&model, c + 0.002, 4, 20, RatePolicy::Signed), &contract).unwrap();
        prop_assert!(hi < lo);
    }
}

#[test]
fn calibrated_fee_round_trips() {
    let model = ModelSpec::heston(2.0, 0.04, 0.2, -0.75, 0.03, 0.03).unwrap();
    let contract = ContractSpec::new(100.0, 100.0, 10.0, 200, SurrenderCharge::exponential(0.002).unwrap()).unwrap();
    let spec = GridSpec { m: 10, ..GridSpec::heston_baseline(40) };
    let fee = FeeStructure::new(FeeKind::Vix2, 0.0, 0.15, None, VixSource::Chain { steps: 200 }).unwrap();
    let cal = calibrate_fair_fee(&model, &fee, &contract, &spec, &CalibrationOptions::default()).unwrap();
    assert!((cal.price - 100.0).abs() <= 1e-4);
    let lat = Lattice::build(&model, &fee.with_base(cal.base).unwrap(), 100.0, &spec).unwrap();
    assert!((price_european_fast(&lat, &contract).unwrap() - 100.0).abs() <= 1e-4);
}

/// Three auxiliary points with signed rates: exponentials with entries near
/// 700 and a row-sum drift above the validation tolerance before projection.
#[test]
fn semigroup_on_degenerate_signed_grid() {
    let model =
        ModelSpec::heston(2.007245955756701, 0.03254052684048534, 0.1, -0.8468358814273771, 0.005, 0.01).unwrap();
    let lat = small_lattice(&model, 0.01, 3, 3, RatePolicy::Signed);
    let (s, t) = (0.01, 0.6726114519055091);
    let joint = lat.joint().unwrap();
    let ps = joint.transition_matrix(s).unwrap().to_dense();
    let pt = joint.transition_matrix(t).unwrap().to_dense();
    let pst = joint.transition_matrix(s + t).unwrap().to_dense();
    assert!(pst.row_iter().all(|r| (r.sum() - 1.0).abs() <= 1e-12));
    assert!(pst.abs().max() > 100.0);
    assert!((&ps * &pt - &pst).abs().max() / pst.abs().max() <= 1e-8);
}
