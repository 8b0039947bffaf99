"""Acceptance tests: the thirteen headline checks at their pinned tolerances.

Each suite runs once (module-scoped fixtures) and several tests then read its
summary and delimited artifacts.  Everything here goes through the public
configuration layer, exactly as the command line would drive it.
"""

import csv
import math

import numpy as np
import pytest

from cglblow.io import load_config
from cglblow.model import Parameters, scaling_factor
from cglblow.suites import (
    simulate_suite,
    sweep_suite,
    verify_modulation,
    verify_rhs,
    verify_semigroup,
    verify_spectral,
)

PARAMS = Parameters()


def _cfg(outdir, *overrides):
    return load_config(None, [f'suite.output_dir="{outdir}"', *overrides])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def spectral(tmp_path_factory):
    out = tmp_path_factory.mktemp("spectral")
    return verify_spectral(_cfg(out)), out


@pytest.fixture(scope="module")
def semigroup(tmp_path_factory):
    out = tmp_path_factory.mktemp("semigroup")
    return verify_semigroup(_cfg(out)), out


@pytest.fixture(scope="module")
def rhs(tmp_path_factory):
    out = tmp_path_factory.mktemp("rhs")
    return verify_rhs(_cfg(out)), out


@pytest.fixture(scope="module")
def modulation(tmp_path_factory):
    out = tmp_path_factory.mktemp("modulation")
    return verify_modulation(_cfg(out)), out


@pytest.fixture(scope="module")
def simulate(tmp_path_factory):
    out = tmp_path_factory.mktemp("simulate")
    return simulate_suite(_cfg(out)), out


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    return sweep_suite(_cfg(out)), out


# 1. basis orthogonality


def test_acceptance_hermite_orthogonality(spectral):
    summary, out = spectral
    assert summary["orthogonality_max_rel"] < 1e-8
    assert summary["criteria"]["hermite_orthogonality"]
    rows = _rows(out / "orthogonality.csv")
    assert len(rows) == 3 * 9 * 9  # s in {0, 4, 8}, n, m <= 8
    assert max(float(r["rel"]) for r in rows) < 1e-8


# 2. drift-operator closure under refinement


def test_acceptance_jordan_refinement(spectral):
    summary, out = spectral
    assert summary["criteria"]["jordan_refinement"]
    ratios = _rows(out / "jordan_ratios.csv")
    assert ratios  # low orders are exact and sit below the floor
    for r in ratios:
        assert 3.5 <= float(r["ratio"]) <= 4.5


# 3. kernel eigenaction


def test_acceptance_mehler_eigenaction(semigroup):
    summary, out = semigroup
    assert summary["eigenaction_max_rel"] < 1e-6
    assert summary["neutral_mode_drift"] < 1e-6
    rows = _rows(out / "eigenaction.csv")
    assert {int(r["n"]) for r in rows} == set(range(11))
    assert {float(r["delta_s"]) for r in rows} == {0.5, 1.0, 2.0}


# 4. spectral gap on the remainder


def test_acceptance_gap_slopes(semigroup):
    summary, _ = semigroup
    drift = summary["gap_drift_slopes"]
    ident = summary["gap_identity_slopes"]
    assert len(drift) == 20 and len(ident) == 20
    assert max(drift) <= -1.4
    assert max(ident) <= -0.4


# 5. constraint Jacobian


def test_acceptance_jacobian(modulation):
    summary, out = modulation
    I = scaling_factor(8.0, PARAMS.k)
    assert summary["det_tol"] == pytest.approx(5.0 * I ** (-PARAMS.gamma))
    assert summary["det_rel_dev"] <= summary["det_tol"]
    rows = _rows(out / "jacobian.csv")
    assert len(rows) == 8  # 4 entries, at the working delta and at delta = 0
    for r in rows:
        assert float(r["abs_dev"]) <= float(r["allowed"])
    assert summary["criteria"]["jacobian_fd"]
    assert summary["criteria"]["jacobian_det"]


# 6. constrained in-set run over the full window


def test_acceptance_trapped_run(simulate):
    summary, out = simulate
    assert summary["final_s"] == pytest.approx(18.0)
    assert summary["exited"] is False
    rows = _rows(out / "trace.csv")
    assert all(r["inside"] == "1" for r in rows)
    worst = max(max(abs(float(r["hat4"])), abs(float(r["check0"]))) for r in rows)
    assert worst < 1e-8
    assert summary["criteria"]["constraints_maintained"]


# 7. per-mode ODE residuals


def test_acceptance_mode_ode_residuals(simulate):
    summary, out = simulate
    assert summary["mode_ode_c_max"] < 100.0
    for r in _rows(out / "mode_residuals.csv"):
        assert float(r["c"]) < 100.0
    assert summary["criteria"]["mode_ode_residuals"]


# 8. modulation-parameter smallness


def test_acceptance_modulation_envelopes(simulate):
    summary, out = simulate
    assert summary["bprime_env_constant"] < 100.0
    assert summary["thetaprime_env_constant"] < 100.0
    rows = _rows(out / "trace.csv")
    b = np.array([float(r["b"]) for r in rows])
    th = np.array([float(r["theta"]) for r in rows])
    assert np.all(b >= 0.75 * PARAMS.b0) and np.all(b <= 1.25 * PARAMS.b0)
    assert np.max(np.abs(th - PARAMS.theta0)) <= 0.125
    assert summary["criteria"]["modulation_smallness"]


# 9. approach to the moving profile


def test_acceptance_profile_convergence(simulate):
    summary, out = simulate
    rows = _rows(out / "profile_distance.csv")
    wd = np.array([float(r["wdist"]) for r in rows])
    cut = max(2, len(wd) // 4)
    tail = wd[cut:]
    assert np.all(tail[1:] <= tail[:-1] * (1.0 + 1e-3))
    assert summary["rate_fit"] <= 0.0
    assert summary["criteria"]["profile_convergence"]


# 10. exit census of the seed sweep


def test_acceptance_sweep_exits(sweep):
    summary, out = sweep
    assert summary["cells"] == 81
    assert summary["survivors"] >= 1
    rows = _rows(out / "sweep.csv")
    assert len(rows) == 81
    for r in rows:
        if r["survived"] == "1":
            continue
        assert r["exit_component"].startswith("hat")
        if r["crossing"] == "1":
            assert float(r["outward_rate"]) > 0.0
        if max(abs(float(r[f"dhat{j}"])) for j in range(4)) >= 1.0 - 1e-12:
            assert float(r["exit_s"]) <= 8.0 + 0.1
    for name, flag in summary["criteria"].items():
        assert flag, name
    traces = sorted(out.glob("trace_cell_*.csv"))
    assert len(traces) == 81


# 11. quadratic smallness of the nonlinearity


def test_acceptance_nonlinearity_order(rhs):
    summary, _ = rhs
    slopes = summary["nonlinearity_slopes"]
    assert len(slopes) == 10
    assert min(slopes) >= min(PARAMS.p, 2.0) - 0.05
    assert summary["criteria"]["nonlinearity_order"]


# 12. exactness of the potential term's hat part


def test_acceptance_potential_hat_exact(rhs):
    summary, out = rhs
    assert summary["v_hat_max"] < 1e-12
    for r in _rows(out / "v_structure.csv"):
        for col in ("hat_pointwise", "hat_projection", "hat_remainder"):
            assert float(r[col]) < 1e-12
    assert summary["criteria"]["v_hat_exact"]


# 13. reproducibility of the delimited outputs


def test_acceptance_byte_identical_reruns(tmp_path):
    overrides = (
        "run.nodes=512",
        "run.s_max=8.6",
        "simulate.dhat=[0.0, 0.0, 0.0, 0.0]",
    )
    d1, d2 = tmp_path / "first", tmp_path / "second"
    simulate_suite(_cfg(d1, *overrides))
    simulate_suite(_cfg(d2, *overrides))
    names = sorted(p.name for p in d1.iterdir() if p.suffix == ".csv")
    assert "trace.csv" in names
    for name in names:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name


def test_acceptance_all_verify_criteria(spectral, semigroup, rhs, modulation):
    for summary, _ in (spectral, semigroup, rhs, modulation):
        assert summary["ok"], summary["criteria"]
