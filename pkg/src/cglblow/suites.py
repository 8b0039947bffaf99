"""Verification and simulation suites behind the command-line modes.

Each suite writes data tables, two-column plot data, and a versioned JSON
summary into the configured output directory, then returns the summary
dict.  Summaries pair every measured quantity with a named boolean under
"criteria" so regressions diff cleanly, and echo the configuration they ran
under.  Figures are rendered only when asked (the report mode, or the
figures switch); the data files alone are the contract.
"""

from __future__ import annotations

import dataclasses
import math
import os

import numpy as np

from .io import RunConfig, write_csv, write_json
from .model import GridFunction, Parameters, delta_decompose, scaling_factor
from .rhs import pminus_of, project_term, resonant_V_coeffs, term_N, term_V
from .semigroup import apply_Ls, jordan_closed, measure_spectral_gap, mehler_propagate, random_remainder
from .simulate import (
    DEFAULT_SURVIVOR_DHAT,
    ModulationState,
    RateReport,
    build_mesh,
    extract_rates,
    initial_data_psi,
    modulation_jacobian,
    modulation_residual,
    newton_enforce_constraints,
    refine_survivor,
    run_simulation,
    shooting_sweep,
    w_from_q,
)
from .spectral import hermite_H, norm_Hn_sq, norm_minus, weighted_inner

__all__ = [
    "verify_spectral",
    "verify_semigroup",
    "verify_rhs",
    "verify_modulation",
    "simulate_suite",
    "sweep_suite",
    "report_suite",
    "SUITES",
]

ORTHOGONALITY_TOL = 1e-8
JORDAN_RATIO_BAND = (3.5, 4.5)
EIGENACTION_TOL = 1e-6
GAP_DRIFT_BOUND = -1.4
GAP_IDENTITY_BOUND = -0.4
JACOBIAN_FD_RTOL = 1e-4
CONSTRAINT_BOUND = 1e-8
MODE_ODE_BOUND = 100.0
MODULATION_ENV_BOUND = 100.0
NONLINEARITY_MARGIN = 0.05
V_EXACT_TOL = 1e-12


def _outdir(cfg: RunConfig) -> str:
    os.makedirs(cfg.suite.output_dir, exist_ok=True)
    return cfg.suite.output_dir


def _echo(cfg: RunConfig) -> dict:
    return {
        "params": dataclasses.asdict(cfg.params),
        "run": dataclasses.asdict(cfg.run),
        "simulate": dataclasses.asdict(cfg.simulate),
        "sweep": dataclasses.asdict(cfg.sweep),
        "suite": dataclasses.asdict(cfg.suite),
    }


def _finish(cfg: RunConfig, name: str, summary: dict) -> dict:
    summary["config"] = _echo(cfg)
    summary["ok"] = bool(all(summary["criteria"].values()))
    write_json(os.path.join(_outdir(cfg), f"{name}_summary.json"), summary)
    return summary


def _render_xy(path, xs, ys, xlabel, ylabel, title, logy=False):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.0, 3.5), dpi=120)
    if logy:
        ax.semilogy(xs, np.abs(np.asarray(ys)), "o-", ms=3)
    else:
        ax.plot(xs, ys, "o-", ms=3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# --- spectral -----------------------------------------------------------------


def verify_spectral(cfg: RunConfig) -> dict:
    """Basis orthogonality at several times and second-order closure of the
    drift operator on the basis under mesh refinement."""
    P = cfg.params
    k = P.k
    out = _outdir(cfg)

    rows = []
    worst = 0.0
    for s in (0.0, 4.0, 8.0):
        basis = [lambda y, n=n: hermite_H(n, y, s, k) for n in range(9)]
        for n in range(9):
            for m in range(9):
                val = complex(weighted_inner(basis[n], basis[m], s, k)).real
                expected = norm_Hn_sq(n, s, k) if n == m else 0.0
                rel = abs(val - expected) / norm_Hn_sq(n, s, k)
                worst = max(worst, rel)
                rows.append({"s": s, "n": n, "m": m, "measured": val, "expected": expected, "rel": rel})
    write_csv(os.path.join(out, "orthogonality.csv"), rows, ["s", "n", "m", "measured", "expected", "rel"])

    s_j = 2.0
    meshes = (513, 1025, 2049)
    errs = {}
    jrows = []
    for m in range(9):
        for N in meshes:
            mesh = np.linspace(-4.0, 4.0, N)
            q = GridFunction(mesh, hermite_H(m, mesh, s_j, k))
            num = apply_Ls(q, s_j, k).values
            closed = jordan_closed(m, mesh, s_j, k, variant="with-identity")
            err = float(np.max(np.abs(num - closed)[2:-2]))
            errs[(m, N)] = err
            jrows.append({"m": m, "nodes": N, "err": err})
    write_csv(os.path.join(out, "jordan_table.csv"), jrows, ["m", "nodes", "err"])

    # residuals for m <= 2 vanish identically (polynomial degree below the
    # truncation order of the differences), so ratios are tested only where
    # the errors sit above the roundoff floor
    floor = 1e-10
    ratio_rows = []
    ratios_ok = True
    for m in range(9):
        e = [errs[(m, N)] for N in meshes]
        for lo, hi in ((0, 1), (1, 2)):
            if e[lo] > floor and e[hi] > floor:
                ratio = e[lo] / e[hi]
                good = JORDAN_RATIO_BAND[0] <= ratio <= JORDAN_RATIO_BAND[1]
                ratios_ok = ratios_ok and good
                ratio_rows.append({"m": m, "coarse": meshes[lo], "fine": meshes[hi], "ratio": ratio})
    write_csv(os.path.join(out, "jordan_ratios.csv"), ratio_rows, ["m", "coarse", "fine", "ratio"])

    plot_rows = [{"nodes": N, "err": errs[(8, N)]} for N in meshes]
    write_csv(os.path.join(out, "jordan_refinement.csv"), plot_rows, ["nodes", "err"])
    if cfg.suite.figures:
        _render_xy(
            os.path.join(out, "jordan_refinement.png"),
            [r["nodes"] for r in plot_rows],
            [r["err"] for r in plot_rows],
            "mesh nodes",
            "interior residual (m=8)",
            "drift-operator closure under refinement",
            logy=True,
        )

    summary = {
        "orthogonality_max_rel": worst,
        "jordan_ratio_count": len(ratio_rows),
        "criteria": {
            "hermite_orthogonality": bool(worst < ORTHOGONALITY_TOL),
            "jordan_refinement": bool(ratios_ok and ratio_rows),
        },
    }
    return _finish(cfg, "spectral", summary)


# --- semigroup ----------------------------------------------------------------


def verify_semigroup(cfg: RunConfig) -> dict:
    """Kernel eigenaction on the basis and decay rate on the remainder."""
    P = cfg.params
    k = P.k
    out = _outdir(cfg)
    sigma = 1.0
    out_mesh = np.linspace(-10.0, 10.0, 2049)

    rows = []
    worst = 0.0
    neutral_drift = 0.0
    for ds_ in (0.5, 1.0, 2.0):
        s = sigma + ds_
        for n in range(11):
            prop = mehler_propagate(
                lambda y, n=n: hermite_H(n, y, sigma, k).astype(complex),
                sigma,
                s,
                k,
                variant="with-identity",
                out_mesh=out_mesh,
            )
            target = math.exp(ds_ * (1.0 - n / (2.0 * k))) * hermite_H(n, prop.mesh, s, k)
            rel = float(np.max(np.abs(prop.values - target)) / np.max(np.abs(target)))
            worst = max(worst, rel)
            if n == 2 * k and ds_ == 2.0:
                neutral_drift = rel
            rows.append({"n": n, "delta_s": ds_, "rel_err": rel})
    write_csv(os.path.join(out, "eigenaction.csv"), rows, ["n", "delta_s", "rel_err"])

    rng = np.random.default_rng(cfg.suite.seed)
    taus = sigma + np.linspace(1.0, 5.0, 9)
    slope_rows = []
    drift_ok = True
    ident_ok = True
    fit_rows = []
    for i in range(cfg.suite.samples):
        qm = random_remainder(P, sigma, rng)
        details: dict = {}
        sl_d = measure_spectral_gap(qm, sigma, taus, P, variant="drift-only", details=details)
        sl_i = measure_spectral_gap(qm, sigma, taus, P, variant="with-identity")
        drift_ok = drift_ok and sl_d <= GAP_DRIFT_BOUND
        ident_ok = ident_ok and sl_i <= GAP_IDENTITY_BOUND
        slope_rows.append({"sample": i, "drift_slope": sl_d, "identity_slope": sl_i})
        if i == 0:
            fit_rows = [
                {"delta_tau": d, "lognorm": v}
                for d, v in zip(details["deltas"], details["lognorms"])
            ]
    write_csv(os.path.join(out, "gap_slopes.csv"), slope_rows, ["sample", "drift_slope", "identity_slope"])
    write_csv(os.path.join(out, "gap_fit.csv"), fit_rows, ["delta_tau", "lognorm"])
    if cfg.suite.figures:
        _render_xy(
            os.path.join(out, "gap_fit.png"),
            [r["delta_tau"] for r in fit_rows],
            [r["lognorm"] for r in fit_rows],
            "tau - sigma",
            "log remainder norm",
            "semigroup decay on the remainder (sample 0)",
        )

    summary = {
        "eigenaction_max_rel": worst,
        "neutral_mode_drift": neutral_drift,
        "gap_drift_slopes": [r["drift_slope"] for r in slope_rows],
        "gap_identity_slopes": [r["identity_slope"] for r in slope_rows],
        "criteria": {
            "mehler_eigenaction": bool(worst < EIGENACTION_TOL),
            "neutral_mode": bool(neutral_drift < EIGENACTION_TOL),
            "gap_drift_slope": bool(drift_ok),
            "gap_identity_slope": bool(ident_ok),
        },
    }
    return _finish(cfg, "semigroup", summary)


# --- right-hand side ----------------------------------------------------------


def random_inset_q(params: Parameters, s: float, rng: np.random.Generator, mesh: np.ndarray) -> GridFunction:
    """Random perturbation from the interior of the trapping set at time s.

    Margins are drawn at a fifth of each allowance.  The top modes grow like
    y^Mfloor toward the mesh edge, so full-allowance draws would push
    e_b * (top of the eps window) * q outside the quadratic radius of the
    nonlinearity and the order measurement would pick up the cubic term;
    interior draws keep the whole scaled family inside that radius while
    still exercising every component of the set.
    """
    amp = scaling_factor(s, params.k) ** (-params.gamma)
    vals = np.zeros(mesh.size, dtype=complex)
    for n in range(params.Mfloor + 1):
        ch = rng.uniform(-0.2, 0.2) * amp
        cc = rng.uniform(-0.2, 0.2) * amp
        vals += (ch * (1.0 + 1j * params.delta) + 1j * cc) * hermite_H(n, mesh, s, params.k)
    tail = random_remainder(params, s, rng)
    tail_vals = tail(mesh)
    g = GridFunction(mesh, tail_vals)
    nm = norm_minus(g, s, params)
    if nm > 0:
        vals += (0.2 * params.bigA * amp / nm) * tail_vals
    return GridFunction(mesh, vals)


def verify_rhs(cfg: RunConfig) -> dict:
    """Quadratic smallness of the nonlinear term and exactness of the
    potential term's hat part, with a delta = 0 control."""
    P = cfg.params
    out = _outdir(cfg)
    s = cfg.run.s0
    mesh = build_mesh(P, 2048)
    rng = np.random.default_rng(cfg.suite.seed)
    eps_grid = np.geomspace(1e-4, 1e-2, 9)
    order_floor = min(P.p, 2.0) - NONLINEARITY_MARGIN

    nrows = []
    slope_rows = []
    slopes_ok = True
    plot_rows = []
    for i in range(10):
        q = random_inset_q(P, s, rng, mesh)
        b = float(rng.uniform(0.6, 1.6))
        norms = []
        for eps in eps_grid:
            scaled = GridFunction(mesh, eps * q.values)
            norms.append(float(np.max(np.abs(term_N(scaled, b, P).values))))
            nrows.append({"sample": i, "eps": eps, "norm_N": norms[-1]})
        slope = float(np.polyfit(np.log(eps_grid), np.log(norms), 1)[0])
        slopes_ok = slopes_ok and slope >= order_floor
        slope_rows.append({"sample": i, "b": b, "slope": slope})
        if i == 0:
            plot_rows = [{"eps": e, "norm_N": v} for e, v in zip(eps_grid, norms)]
    write_csv(os.path.join(out, "nonlinearity_table.csv"), nrows, ["sample", "eps", "norm_N"])
    write_csv(os.path.join(out, "nonlinearity_slopes.csv"), slope_rows, ["sample", "b", "slope"])
    write_csv(os.path.join(out, "nonlinearity_order.csv"), plot_rows, ["eps", "norm_N"])

    vrows = []
    v_worst = 0.0
    for delta in (P.delta, 0.0):
        Pd = dataclasses.replace(P, delta=delta)
        rngv = np.random.default_rng(cfg.suite.seed + 1)
        for i in range(5):
            q = random_inset_q(Pd, s, rngv, mesh)
            b = float(rngv.uniform(0.6, 1.6))
            V = term_V(q, b, Pd)
            hat_pointwise = float(np.max(np.abs(delta_decompose(V.values, Pd.delta).hat)))
            hat_proj = max(
                abs(project_term(V, n, s, Pd)[0]) for n in range(Pd.Mfloor + 1)
            )
            hat_minus = float(
                np.max(np.abs(delta_decompose(pminus_of(V, s, Pd).values, Pd.delta).hat))
            )
            v_worst = max(v_worst, hat_pointwise, hat_proj, hat_minus)
            vrows.append(
                {
                    "delta": delta,
                    "sample": i,
                    "hat_pointwise": hat_pointwise,
                    "hat_projection": hat_proj,
                    "hat_remainder": hat_minus,
                }
            )
    write_csv(
        os.path.join(out, "v_structure.csv"),
        vrows,
        ["delta", "sample", "hat_pointwise", "hat_projection", "hat_remainder"],
    )
    if cfg.suite.figures:
        _render_xy(
            os.path.join(out, "nonlinearity_order.png"),
            [r["eps"] for r in plot_rows],
            [r["norm_N"] for r in plot_rows],
            "eps",
            "sup |N(eps q)|",
            "nonlinearity smallness (sample 0)",
            logy=True,
        )

    summary = {
        "nonlinearity_slopes": [r["slope"] for r in slope_rows],
        "v_hat_max": v_worst,
        "criteria": {
            "nonlinearity_order": bool(slopes_ok),
            "v_hat_exact": bool(v_worst < V_EXACT_TOL),
        },
    }
    return _finish(cfg, "rhs", summary)


# --- modulation ---------------------------------------------------------------


def _jacobian_fd(w, b, theta, s, params, h=1e-5):
    def F(bb, tt):
        return np.array(modulation_residual(w, bb, tt, s, params))

    J = np.empty((2, 2))
    J[:, 0] = (F(b + h, theta) - F(b - h, theta)) / (2 * h)
    J[:, 1] = (F(b, theta + h) - F(b, theta - h)) / (2 * h)
    return J


def verify_modulation(cfg: RunConfig) -> dict:
    """Constraint Jacobian against its closed leading form and an FD oracle,
    plus the Newton slide convergence history."""
    P = cfg.params
    out = _outdir(cfg)
    s0 = cfg.run.s0
    mesh = build_mesh(P, cfg.run.nodes)
    rng = np.random.default_rng(cfg.suite.seed)
    I = scaling_factor(s0, P.k)

    jrows = []
    fd_ok = True
    det_ok = True
    det_rel = 0.0
    for delta in (P.delta, 0.0):
        Pd = dataclasses.replace(P, delta=delta)
        dhat = rng.uniform(-1.0, 1.0, size=2 * Pd.k)
        q = initial_data_psi(dhat, s0, Pd, mesh)
        w = w_from_q(q, Pd.b0, Pd.theta0, Pd)
        J = modulation_jacobian(w, Pd.b0, Pd.theta0, s0, Pd)
        Jfd = _jacobian_fd(w, Pd.b0, Pd.theta0, s0, Pd)
        scale = float(np.max(np.abs(Jfd)))
        for i in range(2):
            for j in range(2):
                dev = abs(J[i, j] - Jfd[i, j])
                allowed = JACOBIAN_FD_RTOL * (abs(Jfd[i, j]) + 1e-8 * scale)
                fd_ok = fd_ok and dev <= allowed
                jrows.append(
                    {
                        "delta": delta,
                        "entry": f"{i}{j}",
                        "analytic": J[i, j],
                        "fd": Jfd[i, j],
                        "abs_dev": dev,
                        "allowed": allowed,
                    }
                )
        if delta == P.delta:
            det = float(np.linalg.det(J))
            k = Pd.k
            stated = -(2.0 ** (4 * k)) * math.factorial(2 * k) * I ** (-4.0 * k)
            det_rel = abs(det - stated) / abs(stated)
            det_ok = det_rel <= 5.0 * I ** (-P.gamma)
            diag_closed = -(2.0 ** (2 * k)) * math.factorial(2 * k) * I ** (-4.0 * k)
            summary_det = {
                "det": det,
                "det_leading": stated,
                "det_rel_dev": det_rel,
                "det_tol": 5.0 * I ** (-P.gamma),
                "det_diag_form": diag_closed,
                "det_vs_diag_rel": abs(det - diag_closed) / abs(diag_closed),
            }
    write_csv(
        os.path.join(out, "jacobian.csv"),
        jrows,
        ["delta", "entry", "analytic", "fd", "abs_dev", "allowed"],
    )

    # convergence history of one Newton slide from a displaced state
    eps = 1e-3
    k = P.k
    dhat = rng.uniform(-1.0, 1.0, size=2 * k)
    q = initial_data_psi(dhat, s0, P, mesh)
    qp = GridFunction(mesh, q.values + eps * (1.0 + 1j * P.delta) * hermite_H(2 * k, mesh, s0, k))
    wp = w_from_q(qp, P.b0, P.theta0, P)
    hist: list = []
    st, iters = newton_enforce_constraints(
        wp, ModulationState(b=P.b0, theta=P.theta0, s=s0), s0, P,
        tol=cfg.run.tol_constraint, history=hist,
    )
    nrows = [{"iteration": i, "residual": r} for i, r in enumerate(hist)]
    write_csv(os.path.join(out, "newton_convergence.csv"), nrows, ["iteration", "residual"])
    if cfg.suite.figures:
        _render_xy(
            os.path.join(out, "newton_convergence.png"),
            [r["iteration"] for r in nrows],
            [r["residual"] for r in nrows],
            "iteration",
            "normalized constraint residual",
            "gauge-slide convergence",
            logy=True,
        )

    summary = {
        "newton_iterations": iters,
        "newton_final_residual": hist[-1] if hist else float("nan"),
        "b_shift": st.b - P.b0,
        "criteria": {
            "jacobian_fd": bool(fd_ok),
            "jacobian_det": bool(det_ok),
        },
    }
    summary.update(summary_det)
    return _finish(cfg, "modulation", summary)


# --- simulate -----------------------------------------------------------------

TRACE_FIELDS = [
    "s",
    "b",
    "theta",
    "bprime",
    "thetaprime",
    "ds",
    "hat0",
    "hat1",
    "hat2",
    "hat3",
    "hat4",
    "hat5",
    "hat6",
    "check0",
    "check1",
    "check2",
    "check3",
    "check4",
    "check5",
    "check6",
    "minus_hat_norm",
    "minus_check_norm",
    "minus_hat_margin",
    "minus_check_margin",
    "b_margin",
    "theta_margin",
    "margin_max",
    "inside",
    "worst_component",
    "wdist",
    "wdist_phase",
    "newton_iters",
    "constraint_hat2k",
    "constraint_check0",
    "min_abs_one_plus_ebq",
]


def _trace_fields(params: Parameters) -> list[str]:
    fields = [f for f in TRACE_FIELDS if not (f.startswith("hat") or f.startswith("check"))]
    modes = [f"hat{n}" for n in range(params.Mfloor + 1)]
    modes += [f"check{n}" for n in range(params.Mfloor + 1)]
    head = ["s", "b", "theta", "bprime", "thetaprime", "ds"]
    rest = [f for f in fields if f not in head]
    return head + modes + rest


def mode_ode_constants(trace, params: Parameters) -> list[dict]:
    """Run constants of the per-mode ODE residuals, allowance-normalized.

    Hat modes below 2k are compared against pure exponential growth at rate
    1 - j/2k; check modes against decay at rate -j/2k, with the resonant
    well-coupling terms added for j >= 2k.
    """
    s = trace.column("s")
    if s.size < 6:
        raise ValueError("trace too short for residual fits")
    k = params.k
    allowance = np.array([scaling_factor(si, k) ** (-2.0 * params.gamma) for si in s])
    b_col = trace.column("b")
    rows = []
    for j in range(2 * k):
        vals = trace.column(f"hat{j}")
        dv = np.gradient(vals, s)
        resid = np.abs(dv - (1.0 - j / (2.0 * k)) * vals) / allowance
        rows.append({"kind": "hat", "mode": j, "c": float(np.max(resid[2:-1]))})
    for j in range(params.Mfloor + 1):
        vals = trace.column(f"check{j}")
        dv = np.gradient(vals, s)
        model = -(j / (2.0 * k)) * vals
        if j >= 2 * k:
            coupling = np.zeros_like(vals)
            for i, bi in enumerate(b_col):
                for (m, l), coef in resonant_V_coeffs(params, float(bi)).items():
                    if 2 * k * m + l == j:
                        coupling[i] += coef * trace.records[i][f"check{l}"]
            model = model + coupling
        resid = np.abs(dv - model) / allowance
        rows.append({"kind": "check", "mode": j, "c": float(np.max(resid[2:-1]))})
    return rows


def simulate_suite(cfg: RunConfig) -> dict:
    """Coupled run with constraint, mode-ODE, modulation, and profile checks.

    An empty simulate.dhat picks the packaged surviving seed when the
    parameters are at their defaults (so the out-of-the-box run passes the
    in-set criteria), and the zero seed otherwise.
    """
    P = cfg.params
    out = _outdir(cfg)
    settings = cfg.run
    if cfg.simulate.dhat:
        dhat = np.asarray(cfg.simulate.dhat, dtype=float)
    elif P == Parameters():
        dhat = np.asarray(DEFAULT_SURVIVOR_DHAT)
    else:
        dhat = np.zeros(2 * P.k)
    if cfg.simulate.refine:
        coarse = dataclasses.replace(settings, nodes=min(1024, settings.nodes))
        horizons = list(cfg.simulate.horizons) or None
        dhat = refine_survivor(P, coarse, horizons=horizons, dhat0=dhat)
        if settings.nodes != coarse.nodes:
            stage = [0.6 * settings.s0 + 0.4 * settings.s_max, settings.s_max, settings.s_max]
            dhat = refine_survivor(P, settings, horizons=stage, dhat0=dhat, probe_eps=3e-4)

    trace = run_simulation(P, settings, dhat=dhat)
    fields = _trace_fields(P)
    write_csv(os.path.join(out, "trace.csv"), trace.records, fields)

    s = trace.column("s")
    wd = trace.column("wdist")
    write_csv(
        os.path.join(out, "profile_distance.csv"),
        [{"s": si, "wdist": wi} for si, wi in zip(s, wd)],
        ["s", "wdist"],
    )
    write_csv(
        os.path.join(out, "margins.csv"),
        [{"s": si, "margin_max": m} for si, m in zip(s, trace.column("margin_max"))],
        ["s", "margin_max"],
    )

    in_set = bool((not trace.exited) and all(r["inside"] for r in trace.records))
    reached = bool(s[-1] >= settings.s_max - 1e-9)
    max_constraint = max(
        max(abs(r["constraint_hat2k"]), abs(r["constraint_check0"])) for r in trace.records[1:]
    )

    # a run that leaves the set within the first few steps has no usable
    # window for the residual and rate fits; the fit criteria then fail
    # rather than abort the suite
    fits_possible = s.size >= 8
    if fits_possible:
        ode_rows = mode_ode_constants(trace, P)
        c_max = max(r["c"] for r in ode_rows)
    else:
        ode_rows = []
        c_max = float("inf")
    write_csv(os.path.join(out, "mode_residuals.csv"), ode_rows, ["kind", "mode", "c"])

    allowance2 = np.array([scaling_factor(si, P.k) ** (-2.0 * P.gamma) for si in s])
    bp_env = float(np.max(np.abs(trace.column("bprime")[1:]) / allowance2[1:]))
    tp_env = float(np.max(np.abs(trace.column("thetaprime")[1:]) / allowance2[1:]))
    b_col = trace.column("b")
    th_col = trace.column("theta")
    b_window = bool(np.all((b_col >= 0.75 * P.b0) & (b_col <= 1.25 * P.b0)))
    theta_window = bool(np.max(np.abs(th_col - P.theta0)) <= 0.125)

    if fits_possible:
        rates = extract_rates(trace, P)
        cut = max(2, int(0.25 * s.size))
        monotone = bool(np.all(wd[cut:][1:] <= wd[cut:][:-1] * (1.0 + 1e-3)))
    else:
        rates = RateReport(
            rate_fit=float("nan"),
            b_star=float("nan"),
            b_drift=float("nan"),
            envelope_constant=float("nan"),
            envelope_ok=False,
            theta_final=float(th_col[-1]),
        )
        monotone = False

    summary = {
        "dhat": list(map(float, dhat)),
        "final_s": float(s[-1]),
        "exited": trace.exited,
        "exit_component": trace.exit_component,
        "max_constraint": max_constraint,
        "mode_ode_c_max": c_max if fits_possible else None,
        "bprime_env_constant": bp_env,
        "thetaprime_env_constant": tp_env,
        "b_final": float(b_col[-1]),
        "theta_final": float(th_col[-1]),
        "rate_fit": rates.rate_fit if fits_possible else None,
        "b_star": rates.b_star if fits_possible else None,
        "b_drift": rates.b_drift if fits_possible else None,
        "envelope_constant": rates.envelope_constant if fits_possible else None,
        "criteria": {
            "constraints_maintained": bool(in_set and reached and max_constraint < CONSTRAINT_BOUND),
            "mode_ode_residuals": bool(c_max < MODE_ODE_BOUND),
            "modulation_smallness": bool(
                bp_env < MODULATION_ENV_BOUND
                and tp_env < MODULATION_ENV_BOUND
                and b_window
                and theta_window
            ),
            "profile_convergence": bool(monotone and rates.rate_fit <= 0.0 and rates.envelope_ok),
        },
    }
    if cfg.suite.figures:
        _render_xy(
            os.path.join(out, "profile_distance.png"),
            s,
            wd,
            "s",
            "sup |w - f_b|",
            "distance to the moving profile",
            logy=True,
        )
        _render_xy(
            os.path.join(out, "margins.png"),
            s,
            trace.column("margin_max"),
            "s",
            "worst normalized margin",
            "trapping-set margins",
        )
    return _finish(cfg, "simulate", summary)


# --- sweep --------------------------------------------------------------------


def sweep_suite(cfg: RunConfig) -> dict:
    """Exit census over the seed grid with per-cell trace files.

    Exit structure is judged on set-boundary crossings: every exiting cell
    must leave through an expanding hat mode with an outward derivative.
    Seeds placed on or beyond the set boundary (unit or larger coefficients)
    must exit within the first accepted steps; their hat attribution still
    counts, but an outward rate is only demanded where the trajectory
    actually crossed from inside (beyond the set the gauge slide absorbs
    the perturbation into b-motion and no transversality is claimed).

    The step size is capped below the run default.  Wall seeds sit exactly
    on the hat allowance, so their first recorded state is already across
    that wall; meanwhile the quadratic terms at wall amplitude feed the
    remainder at a finite rate per unit s (up to ~420 at the worst grid
    corners), and the remainder margin divides by the small origin floor of
    the weighted sup norm.  A step of 0.01 lets that one-step remainder
    gain overtake the hat margin inside the single recorded interval and
    steals the exit attribution; 0.001 keeps the one-step gain under half
    an allowance at every grid corner while the hat wall is crossed in the
    same record.
    """
    P = cfg.params
    out = _outdir(cfg)
    settings = dataclasses.replace(
        cfg.run,
        s_max=cfg.run.s0 + cfg.sweep.horizon,
        stop_on_exit=True,
        ds_init=min(cfg.run.ds_init, 0.001),
    )
    results = shooting_sweep(P, settings, pts_per_axis=cfg.sweep.points, box=cfg.sweep.box)

    fields = _trace_fields(P)
    srows = []
    hat_names = {f"hat{j}" for j in range(2 * P.k)}
    exits_hat = True
    exits_outward = True
    boundary_at_s0 = True
    crossings = 0
    survivors = 0
    longest = None
    for i, rec in enumerate(results):
        write_csv(os.path.join(out, f"trace_cell_{i:03d}.csv"), rec["rows"], fields)
        crossing = bool((not rec["survived"]) and rec["rows"] and rec["rows"][0]["inside"])
        row = {f"dhat{j}": rec["dhat"][j] for j in range(2 * P.k)}
        row.update(
            {
                "cell": i,
                "survived": rec["survived"],
                "crossing": crossing,
                "exit_s": rec["exit_s"] if rec["exit_s"] is not None else "",
                "exit_component": rec["exit_component"] or "",
                "exit_sign": rec["exit_sign"],
                "outward_rate": rec["outward_rate"],
                "steps": rec["steps"],
                "final_s": rec["final_s"],
            }
        )
        srows.append(row)
        if rec["survived"]:
            survivors += 1
        else:
            exits_hat = exits_hat and rec["exit_component"] in hat_names
            if crossing:
                crossings += 1
                exits_outward = exits_outward and rec["outward_rate"] > 0.0
            if max(abs(d) for d in rec["dhat"]) >= 1.0 - 1e-12:
                boundary_at_s0 = boundary_at_s0 and rec["exit_s"] <= settings.s0 + 0.1
        if longest is None or rec["final_s"] > longest["final_s"]:
            longest = rec
    sweep_fields = ["cell"] + [f"dhat{j}" for j in range(2 * P.k)] + [
        "survived",
        "crossing",
        "exit_s",
        "exit_component",
        "exit_sign",
        "outward_rate",
        "steps",
        "final_s",
    ]
    write_csv(os.path.join(out, "sweep.csv"), srows, sweep_fields)

    summary = {
        "cells": len(results),
        "survivors": survivors,
        "crossing_exits": crossings,
        "longest_dhat": list(map(float, longest["dhat"])),
        "longest_final_s": float(longest["final_s"]),
        "criteria": {
            "exits_hat_modes": bool(exits_hat),
            "exits_outward": bool(exits_outward and crossings > 0),
            "survivor_exists": bool(survivors >= 1),
            "boundary_exit_at_s0": bool(boundary_at_s0),
        },
    }
    return _finish(cfg, "sweep", summary)


# --- report -------------------------------------------------------------------


def report_suite(cfg: RunConfig) -> dict:
    """Run the four verification suites with figures on and aggregate."""
    cfg = dataclasses.replace(cfg, suite=dataclasses.replace(cfg.suite, figures=True))
    parts = {
        "spectral": verify_spectral(cfg),
        "semigroup": verify_semigroup(cfg),
        "rhs": verify_rhs(cfg),
        "modulation": verify_modulation(cfg),
    }
    criteria = {}
    for name, part in parts.items():
        for key, val in part["criteria"].items():
            criteria[f"{name}:{key}"] = val
    summary = {"criteria": criteria}
    return _finish(cfg, "report", summary)


SUITES = {
    "verify-spectral": verify_spectral,
    "verify-semigroup": verify_semigroup,
    "verify-rhs": verify_rhs,
    "verify-modulation": verify_modulation,
    "simulate": simulate_suite,
    "sweep": sweep_suite,
    "report": report_suite,
}
