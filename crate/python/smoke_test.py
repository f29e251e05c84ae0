"""Smoke test for the compiled extension.

Build and run from the repository root:

    cargo build --release -p wavepack-py --features extension-module
    cp target/release/libwavepack_py.so python/wavepack.so
    python3 python/smoke_test.py
"""
import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import wavepack  # noqa: E402


def main():
    print("module", wavepack.__version__)

    ex = wavepack.System.builtin("example2")
    ks = [-2.0, 0.0, 0.5, 3.0]
    lower, upper = ex.omega(ks)
    for k, a, b in zip(ks, lower, upper):
        r = math.sqrt(1.0 + k * k)
        assert abs(a + r) < 1e-12 and abs(b - r) < 1e-12, (k, a, b)

    kg = wavepack.System.builtin("kg")
    assert kg.dim == 3 and kg.has_quadratic
    ok, table, report = kg.audit(math.sqrt(3.0))
    assert ok, table
    nr1 = next(r for r in json.loads(report)["records"] if r["id"] == "NR1")
    assert abs(nr1["value"] - abs(math.sqrt(13.0) - 4.0)) < 1e-8
    omega0, c, nu1, nu2 = kg.nls_coefficients(1.0)
    assert abs(omega0 - math.sqrt(2.0)) < 1e-12, omega0
    assert abs(nu2[1]) < 1e-8

    same = wavepack.System.from_toml(kg.to_toml())
    assert same.omega([1.0]) == kg.omega([1.0])

    slope, _, r2 = wavepack.fit_order([(0.2, 0.04), (0.1, 0.01), (0.05, 0.0025)])
    assert abs(slope - 2.0) < 1e-12 and abs(r2 - 1.0) < 1e-12
    try:
        wavepack.fit_order([(0.1, 1.0)])
    except ValueError:
        pass
    else:
        raise AssertionError("a single pair must be rejected")

    cfg = 'system = "kg"\neps = [0.2, 0.15, 0.1]\nt0 = 0.2\nslow_window = 20.0\nsamples = 4\n'
    first = wavepack.converge(cfg, canonical=True)
    assert first == wavepack.converge(cfg, canonical=True)
    rep = json.loads(first)
    print("kg sweep errors", [p["max_error"] for p in rep["points"]], "slope", rep["slope"])
    assert rep["slope"] is not None and rep["slope"] > 1.3

    try:
        wavepack.converge('system = "kg"\neps = [0.1, 0.2]\n')
    except ValueError as e:
        assert "decreasing" in str(e)
    else:
        raise AssertionError("increasing eps must be rejected")

    res = json.loads(wavepack.residual_sweep('system = "kg"\neps = [0.2, 0.1]\nt0 = 0.2\n'))
    assert len(res["rows"]) == 2
    print("smoke test passed")


if __name__ == "__main__":
    main()
