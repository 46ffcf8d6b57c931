#!/usr/bin/env python3
"""Smoke test for the panelbin_py extension module.

Builds nothing itself: it expects `cargo build --release -p panelbin-py`
to have produced the cdylib, copies it under an importable name, and then
drives the main surfaces end to end on a small simulated panel.

Run from the repository root:

    cargo build --release -p panelbin-py
    python3 python/smoke_test.py
"""

import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def import_extension():
    candidates = [
        ROOT / "target" / "release" / "libpanelbin_py.so",
        ROOT / "target" / "debug" / "libpanelbin_py.so",
        ROOT / "target" / "release" / "libpanelbin_py.dylib",
    ]
    built = next((c for c in candidates if c.exists()), None)
    if built is None:
        sys.exit("build the extension first: cargo build --release -p panelbin-py")
    stage = pathlib.Path(tempfile.mkdtemp(prefix="panelbin_py_"))
    shutil.copy2(built, stage / "panelbin_py.so")
    sys.path.insert(0, str(stage))
    import panelbin_py

    return panelbin_py


def approx(a, b, tol):
    return abs(a - b) <= tol


def main():
    pb = import_extension()

    # rate feasibility pins from the bandwidth window algebra
    r = pb.rates(ell=2, d_v=1, epsilon=0.5)
    assert r["feasible"], r
    assert approx(r["delta_window"][0], 1.0 / 9.0, 1e-12)
    assert approx(r["delta_window"][1], 0.2, 1e-12)
    assert approx(r["epsilon_floor"], 5.0 / 12.0, 1e-12)
    assert not pb.rates(ell=2, d_v=1, epsilon=1.0 / 3.0)["epsilon_ok"]

    # a small logit-design panel, simulated deterministically
    panel = pb.simulate("L1", rep=0, seed=7, n_units=400, n_periods=6)
    assert panel.n_units == 400 and panel.n_periods == 6
    again = pb.simulate("L1", rep=0, seed=7, n_units=400, n_periods=6)
    assert panel.covariate_row(3, 2) == again.covariate_row(3, 2)

    fit = pb.cmle(panel)
    assert fit["converged"]
    # CMLE estimand is (pi / sqrt(3)) * beta0 = 1.8138 for L1
    assert approx(fit["beta"][0], math.pi / math.sqrt(3.0), 0.25), fit["beta"]

    pipe = pb.Pipeline(panel, continuous=["x1"], ell=2, kappa=2.5)
    kappa = pipe.select_kappa([1.5, 2.5, 3.5, 4.5])
    assert kappa in (1.5, 2.5, 3.5, 4.5)
    asf0 = pipe.asf([0.0])
    ape0 = pipe.ape([0.0], 0)
    assert 0.0 < asf0["value"] < 1.0, asf0
    assert ape0["value"] > 0.0, ape0
    assert asf0["period"] == "averaged"
    single = pipe.asf([0.0], t=0)
    assert single["period"] == "0"

    # monotonicity of the ASF in the index
    lo = pipe.asf([-0.8])["value"]
    hi = pipe.asf([0.8])["value"]
    assert lo < hi, (lo, hi)

    # support diagnostics and bounds behave like probabilities
    diag = pipe.support_diagnostic([0.0], 0)
    assert 0.0 <= diag["p_out"] <= 1.0
    bounds = pipe.asf_bounds([0.0], 0)
    assert bounds["lo"] <= bounds["point"] <= bounds["hi"]

    # parametric baseline on the same panel
    base = pb.baseline(panel, continuous=["x1"], x_bar=[0.0], k=0)
    assert 0.0 < base["asf"] < 1.0
    assert base["ape"] > 0.0

    # oracle truth for the same design
    truth = pb.true_effects("L1", [-0.5, 0.0, 0.5])
    assert all(0.0 < a < 1.0 for a in truth["asf"])
    assert truth["asf"][0] < truth["asf"][2]

    # the semiparametric ASF should sit in the neighborhood of the truth
    mid = pb.true_effects("L1", [0.0])["asf"][0]
    assert approx(asf0["value"], mid, 0.08), (asf0["value"], mid)

    # a tiny deterministic bootstrap
    boot = pipe.bootstrap([0.0], kind="asf", n_reps=24, seed=3)
    boot2 = pipe.bootstrap([0.0], kind="asf", n_reps=24, seed=3)
    assert boot["ci"] == boot2["ci"]
    assert boot["ci"][0] <= boot["point"] <= boot["ci"][1]

    # coarsened discrete index components produce cells
    pipe_cells = pb.Pipeline(
        panel,
        continuous=[],
        discrete=[("x1", [1.0 / 3.0, 2.0 / 3.0])],
        ell=2,
        kappa=2.5,
    )
    assert pipe_cells.n_cells == 3
    cell_asf = pipe_cells.asf([0.0], t=0)
    assert 0.0 < cell_asf["value"] < 1.0

    print("panelbin_py smoke test passed")


if __name__ == "__main__":
    main()
