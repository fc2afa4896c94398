"""Smoke test for the vactmc_py extension.

Build and install first:
    maturin develop -m crates/python/Cargo.toml --features extension-module
"""

import math

import vactmc_py as v


def main():
    model = v.Model.heston(kappa=2.0, theta=0.04, sigma=0.2, rho=-0.75, r=0.03, v0=0.03)
    same = v.Model("heston", {"kappa": 2.0, "theta": 0.04, "sigma": 0.2, "rho": -0.75, "r": 0.03, "v0": 0.03})
    assert same.v0 == model.v0 and model.name == "heston"

    grid = v.GridSpec.heston_baseline(60, m=8)
    contract = v.Contract(maturity=2.0, steps=40)
    fee = v.FeeStructure("vix2", base=0.01, multiplier=0.15, vix_steps=100)
    lattice = v.Lattice(model, fee, contract.f0, grid)
    m, n = lattice.shape
    assert m >= 8 and n >= 60

    res = v.price(lattice, contract, surface=True)
    assert res["bermudan"] >= res["european"] > 0.0
    assert math.isclose(res["early_surrender"], res["bermudan"] - res["european"])
    assert len(res["surface"]["f_star"]) == contract.steps
    print(f"european {res['european']:.6f} bermudan {res['bermudan']:.6f}")

    direct = v.price(lattice, contract, mode="direct", bermudan=False)
    assert abs(direct["european"] - res["european"]) < 0.05 * res["european"]

    cal = v.calibrate_fair_fee(model, v.FeeStructure.constant(0.0), contract, grid)
    assert abs(cal["price"] - contract.f0) <= 1e-4
    print(f"fair constant fee {cal['base']:.6f}")

    states, values = v.vix_table(model, v.GridSpec.heston_baseline(10, m=200), steps=200)
    assert len(states) == len(values)
    assert abs(v.vix_heston_closed_form(2.0, 0.04, 0.04) - 0.2) < 1e-12
    assert all(b >= a for a, b in zip(values, values[1:]))
    closed = v.FeeStructure("vix2", 0.01, 0.15, vix="closed_form", kappa=2.0, theta=0.04)
    assert abs(closed.rate(0.04) - (0.01 + 0.15 * 0.04)) < 1e-12

    bs = v.bs_bermudan(0.2, 0.03, 0.01, maturity=2.0, n=300, steps=40)
    assert bs["price"] >= bs["european"]
    assert abs(bs["european"] - v.bs_european(0.2, 0.03, 0.01, 100.0, 100.0, 2.0)) < 1e-2

    for bad in (lambda: v.Model("nonsense", {}), lambda: v.price(lattice, contract, mode="slow")):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")

    try:
        v.calibrate_fair_fee(model, v.FeeStructure.constant(0.0), v.Contract(guarantee=1000.0, maturity=2.0, steps=40), grid)
    except v.NoFairFeeError:
        pass
    else:
        raise AssertionError("expected NoFairFeeError")

    print("python smoke test ok")


if __name__ == "__main__":
    main()
