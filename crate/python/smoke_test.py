"""Smoke test for the `pdesde` Python module.

Build and install first:
    pip install --no-build-isolation ./crates/python
then run `python python/smoke_test.py`.
"""

import math

import pdesde


def main():
    sc = pdesde.Scenario("fig1", nx=100)
    assert sc.nx == 100
    assert abs(sc.delay - 0.5) < 1e-12
    assert abs(sc.nt * sc.dt - sc.horizon) < 1e-9

    res = sc.residuals()
    assert max(res.values()) < 1e-2, res
    g = sc.gamma()
    assert len(g["x"]) == 101
    assert abs(g["alpha"][0][0] + 1.0) < 1e-12

    kuu = sc.kernel("uu")
    assert len(kuu) == 101 and all(v == 0.0 for v in kuu[0][1:])

    inc, cum = pdesde.sample_brownian(3, 100, 0.01)
    assert len(inc) == 100 and len(cum) == 101 and cum[0] == 0.0
    assert (inc, cum) == pdesde.sample_brownian(3, 100, 0.01)

    # scalar A = 1, B = 1: A - BK has its pole at -1
    k = pdesde.stabilizing_gain([[1.0]], [1.0], 0.0, [-1.0])
    assert abs(k[0] - 2.0) < 1e-12, k

    path = sc.simulate(seed=11, poles=[-1.0])
    assert len(path["t"]) == sc.nt + 1
    assert all(math.isfinite(x[0]) for x in path["x"])

    rep = sc.monte_carlo(200, seed=7, poles=[-1.0])
    assert rep["n_paths"] == 200
    late = rep["var_x"][-1]
    assert late < 1.0, late
    assert all(v >= 0.0 for v in rep["var_x"])

    lq = sc.monte_carlo(200, seed=7, controller="lq")
    assert math.isfinite(lq["var_x"][-1])

    cfg = pdesde.Scenario.from_json(sc.to_json())
    assert cfg.nx == 100

    try:
        pdesde.Scenario("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")

    print("smoke test ok: final variance %.4f (feedback), %.4f (lq)" % (late, lq["var_x"][-1]))


if __name__ == "__main__":
    main()
