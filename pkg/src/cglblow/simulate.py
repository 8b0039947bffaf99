"""Coupled evolution of the perturbation and the gauge parameters.

The simulator advances q under the perturbation equation while sliding the
gauge pair (b, theta) so that two orthogonality constraints hold at every
accepted step:

    hat part of <g, H_{2k}>_s = 0,     check part of <g, H_0>_s = 0,
    g = w (f_b e_b)^{-1} e^{-i theta} - (p - 1 + b y^{2k}),

which is the statement that q (the perturbation in the gauge (b, theta)) has
no hat content on mode 2k and no check content on mode 0.  One step is:

  1. first-order IMEX advance of q: stiff linear parts (drift operator,
     potential, frame-mismatch linear part, profile transport) backward
     Euler; gauge couplings with lagged b', theta' and the quadratic
     remainder explicit;
  2. rebuild w in the old gauge, then Newton-slide (b, theta) until the two
     constraints vanish to tolerance;
  3. re-read q in the new gauge and refresh b', theta' by backward
     differences.

The shrinking-set bookkeeping normalizes every tracked quantity by its
allowance (I^{-gamma} for mode coefficients and the hat remainder,
A I^{-gamma} for the check remainder, fixed windows for b and theta), so a
state is inside the set exactly when all margins are <= 1.
"""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .model import (
    GridFunction,
    Parameters,
    delta_decompose,
    profile_e,
    profile_f,
    scaling_factor,
)
from .rhs import alphas, nonlinearity_proximity, term_B, term_N, term_Rs, term_T
from .spectral import (
    ModeDecomposition,
    hermite_H,
    norm_Hn_sq,
    norm_minus,
    split_modes,
    weighted_inner,
)

__all__ = [
    "DEFAULT_SURVIVOR_DHAT",
    "NewtonError",
    "ModulationState",
    "ShrinkingSetReport",
    "SimulationTrace",
    "RunSettings",
    "build_mesh",
    "initial_data_psi",
    "q_from_w",
    "w_from_q",
    "modulation_residual",
    "modulation_jacobian",
    "newton_enforce_constraints",
    "step_coupled",
    "check_shrinking_set",
    "run_simulation",
    "shooting_sweep",
    "refine_survivor",
    "extract_rates",
    "profile_distance",
]


class NewtonError(RuntimeError):
    """Constraint solve failed to converge within the iteration budget."""


@dataclass(frozen=True)
class ModulationState:
    """Gauge parameters and their current drift estimates."""

    b: float
    theta: float
    bprime: float = 0.0
    thetaprime: float = 0.0
    s: float = 0.0


@dataclass
class ShrinkingSetReport:
    """Normalized margins of the trapping set; inside iff all <= 1."""

    hat_margins: np.ndarray
    check_margins: np.ndarray
    minus_hat_margin: float
    minus_check_margin: float
    b_margin: float
    theta_margin: float
    inside: bool
    worst_component: str
    worst_margin: float
    worst_sign: int


@dataclass
class SimulationTrace:
    """Per-step records of a coupled run."""

    params: Parameters
    records: list[dict] = field(default_factory=list)
    exit_component: str | None = None
    exit_s: float | None = None
    exit_sign: int = 0
    exited: bool = False

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class RunSettings:
    """Numerical knobs of a coupled run."""

    nodes: int = 4096
    Y: float | None = None
    s0: float = 8.0
    s_max: float = 18.0
    ds_init: float = 0.01
    ds_min: float = 1e-5
    tol_constraint: float = 1e-10
    newton_max_iter: int = 25
    stop_on_exit: bool = True
    margin_cap: float = 50.0

    def __post_init__(self):
        if self.nodes < 256:
            raise ValueError("run.nodes must be at least 256")
        if self.Y is not None and self.Y <= 0:
            raise ValueError("run.Y must be positive when given")
        if not self.s_max > self.s0:
            raise ValueError("run.s_max must exceed run.s0")
        if not (self.ds_init > 0 and self.ds_min > 0 and self.ds_min <= self.ds_init):
            raise ValueError("step sizes must satisfy 0 < ds_min <= ds_init")
        if not self.tol_constraint > 0:
            raise ValueError("run.tol_constraint must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("run.newton_max_iter must be at least 1")
        if not self.margin_cap > 0:
            raise ValueError("run.margin_cap must be positive")


# Surviving seed for the default parameter set, found by the staged affine
# shooting refinement (refine_survivor at 1024 nodes over lengthening
# horizons, then polished at 4096).  A run from this seed stays inside the
# trapping set over the whole default window s in [8, 18].  Odd entries are
# exactly zero by parity.
DEFAULT_SURVIVOR_DHAT = (0.002239134938365611, 0.0, 0.1214933913223182, 0.0)


def build_mesh(params: Parameters, nodes: int = 4096, Y: float | None = None) -> np.ndarray:
    """Symmetric uniform mesh; the default half-width scales the well so the
    profile has decayed to its far-field power regime at the edge."""
    if Y is None:
        Y = 8.0 * (params.p - 1.0) ** (1.0 / (2 * params.k)) / params.b0 ** (1.0 / (2 * params.k))
    return np.linspace(-Y, Y, nodes)


# --- gauge maps and initial data ---------------------------------------------


def w_from_q(q: GridFunction, b: float, theta: float, params: Parameters) -> GridFunction:
    """Frame solution w = e^{i theta} f_b (1 + e_b q)."""
    fb = profile_f(b, q.mesh, params)
    eb = profile_e(b, q.mesh, params)
    return GridFunction(q.mesh, np.exp(1j * theta) * fb * (1.0 + eb * q.values))


def q_from_w(w: GridFunction, b: float, theta: float, params: Parameters) -> GridFunction:
    """Perturbation read off from w in the gauge (b, theta)."""
    fb = profile_f(b, w.mesh, params)
    eb = profile_e(b, w.mesh, params)
    vals = w.values * np.exp(-1j * theta) / (fb * eb) - (params.p - 1.0 + b * w.mesh ** (2 * params.k))
    return GridFunction(w.mesh, vals)


def initial_data_psi(dhat, s0: float, params: Parameters, mesh: np.ndarray) -> GridFunction:
    """Unstable-direction seed I^{-gamma}(s0) sum_j dhat_j (1+i delta) H_j.

    dhat has one entry per expanding hat mode (j = 0 .. 2k-1) and must stay
    in the closed box max |dhat_j| <= 2.
    """
    dhat = np.asarray(dhat, dtype=float)
    if dhat.shape != (2 * params.k,):
        raise ValueError(f"dhat must have length {2 * params.k}")
    if np.max(np.abs(dhat)) > 2.0:
        raise ValueError("dhat outside the admissible box max|dhat| <= 2")
    amp = scaling_factor(s0, params.k) ** (-params.gamma)
    vals = np.zeros(mesh.size, dtype=complex)
    for j, dj in enumerate(dhat):
        if dj != 0.0:
            vals += amp * dj * (1.0 + 1j * params.delta) * hermite_H(j, mesh, s0, params.k)
    return GridFunction(mesh, vals)


# --- modulation constraints ---------------------------------------------------


def _gauge_integrand(w: GridFunction, b: float, theta: float, params: Parameters) -> GridFunction:
    fb = profile_f(b, w.mesh, params)
    eb = profile_e(b, w.mesh, params)
    g = w.values * np.exp(-1j * theta) / (fb * eb) - (params.p - 1.0 + b * w.mesh ** (2 * params.k))
    return GridFunction(w.mesh, g)


def modulation_residual(w: GridFunction, b: float, theta: float, s: float, params: Parameters) -> tuple[float, float]:
    """Constraint pair (F1, F2) in raw (unnormalized) form.

    F1 is the hat part of the H_{2k} pairing of the gauge integrand, F2 the
    check part of its H_0 pairing; both vanish exactly when q satisfies the
    orthogonality constraints.
    """
    g = _gauge_integrand(w, b, theta, params)
    k = params.k
    p1 = weighted_inner(g, lambda y: hermite_H(2 * k, y, s, k), s, k)
    p0 = weighted_inner(g, lambda y: hermite_H(0, y, s, k), s, k)
    F1 = delta_decompose(p1, params.delta).hat
    F2 = delta_decompose(p0, params.delta).check
    return float(F1), float(F2)


def modulation_jacobian(w: GridFunction, b: float, theta: float, s: float, params: Parameters) -> np.ndarray:
    """2x2 derivative of (F1, F2) with respect to (b, theta), analytic route.

    d/d theta of the integrand is -i w (f_b e_b)^{-1} e^{-i theta}; d/db is
    ((p+i delta)/(p-1)) y^{2k} w f_b^{-1} e^{-i theta} - y^{2k}.
    """
    k, p, d = params.k, params.p, params.delta
    fb = profile_f(b, w.mesh, params)
    eb = profile_e(b, w.mesh, params)
    core = w.values * np.exp(-1j * theta) / (fb * eb)
    poly = w.mesh ** (2 * k)
    dg_dtheta = GridFunction(w.mesh, -1j * core)
    dg_db = GridFunction(w.mesh, (p + 1j * d) / (p - 1.0) * poly * eb * core - poly)
    H2k = lambda y: hermite_H(2 * k, y, s, k)
    H0 = lambda y: hermite_H(0, y, s, k)
    J = np.empty((2, 2))
    J[0, 0] = delta_decompose(weighted_inner(dg_db, H2k, s, k), d).hat
    J[0, 1] = delta_decompose(weighted_inner(dg_dtheta, H2k, s, k), d).hat
    J[1, 0] = delta_decompose(weighted_inner(dg_db, H0, s, k), d).check
    J[1, 1] = delta_decompose(weighted_inner(dg_dtheta, H0, s, k), d).check
    return J


def newton_enforce_constraints(
    w: GridFunction,
    state: ModulationState,
    s: float,
    params: Parameters,
    tol: float = 1e-10,
    max_iter: int = 25,
    history: list | None = None,
) -> tuple[ModulationState, int]:
    """Slide (b, theta) until both constraints vanish in normalized size.

    The stopping functional is |F1| / ||H_2k||_s^2 + |F2| (both terms are
    then mode coefficients).  Raises NewtonError if the budget runs out or
    the iteration leaves b > 0.  When a history list is supplied the
    normalized residual of every iterate is appended to it.

    Dividing F1 by ||H_2k||_s^2 ~ e^{-2ks(1-1/k)} amplifies quadrature
    roundoff exponentially in s, so at late times the nominal tolerance can
    sit below the reachable floor.  A stalled iterate (no factor-2 progress)
    is therefore accepted once the residual is under a cap that still leaves
    the constraint coefficients far smaller than any margin they feed.
    """
    b, theta = state.b, state.theta
    scale = norm_Hn_sq(2 * params.k, s, params.k)
    stall_cap = max(tol, 2.5e-9)
    prev_err = None
    for it in range(max_iter + 1):
        F1, F2 = modulation_residual(w, b, theta, s, params)
        err = abs(F1) / scale + abs(F2)
        if history is not None:
            history.append(err)
        if err < tol:
            return dataclasses.replace(state, b=b, theta=theta, s=s), it
        if prev_err is not None and err > 0.5 * prev_err and err < stall_cap:
            return dataclasses.replace(state, b=b, theta=theta, s=s), it
        prev_err = err
        if it == max_iter:
            break
        J = modulation_jacobian(w, b, theta, s, params)
        try:
            db, dtheta = np.linalg.solve(J, [-F1, -F2])
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular constraint Jacobian at s={s}") from exc
        b += db
        theta += dtheta
        if not (b > 0.0) or not math.isfinite(b) or not math.isfinite(theta):
            raise NewtonError(f"constraint solve left the chart at s={s}: b={b}")
    raise NewtonError(f"no convergence in {max_iter} iterations at s={s}: err={err:.3e}")


# --- IMEX step ----------------------------------------------------------------


def _banded_implicit(s_new: float, b: float, ds: float, mesh: np.ndarray, params: Parameters):
    """Banded matrix of Id - ds * A with A the stiff linear part.

    Unknowns are interleaved (Re q_0, Im q_0, Re q_1, ...).  A collects the
    drift operator, the real-linear (1+i delta) Re coupling, the potential V,
    the linear part of the frame-mismatch term, and the profile transport
    acting on the first derivative.  The outermost node on each side carries
    a degree-6 polynomial extrapolation constraint (vanishing 7th
    difference) instead of an equation of motion.
    """
    N = mesh.size
    dy = mesh[1] - mesh[0]
    k, p, d = params.k, params.p, params.delta
    I2 = scaling_factor(s_new, k) ** 2
    eb = profile_e(b, mesh, params)
    poly = mesh ** (2 * k)

    lo = np.full(N, 1.0 / dy ** 2 / I2)  # sub/super of I^{-2} D2
    # drift advection -(y/2k) D1
    adv = -mesh / (2.0 * k)
    d1_sub = -adv / (2.0 * dy)
    d1_sup = adv / (2.0 * dy)
    tri_sub = lo + d1_sub
    tri_diag = np.full(N, -2.0 / dy ** 2 / I2)
    tri_sup = lo + d1_sup

    vpot = (p - 1.0) * eb - 1.0
    a1, a2, a3, a4 = alphas(b, params)
    cR = mesh ** (2 * k - 2) * eb * (a3 + a4 * poly * eb) / I2
    cD = -((p + 1j * d) / (p - 1.0)) * 4.0 * k * b * mesh ** (2 * k - 1) * eb / I2

    bw = 14
    ab = np.zeros((2 * bw + 1, 2 * N))

    def add(offset: int, rows: np.ndarray, vals: np.ndarray) -> None:
        # banded storage: ab[bw + row - col, col] with col = row + offset
        ab[bw - offset, rows + offset] += vals

    interior = np.arange(1, N - 1)
    ri = 2 * interior  # Re rows
    ii = 2 * interior + 1  # Im rows

    # identity of the time step
    add(0, ri, np.ones(N - 2))
    add(0, ii, np.ones(N - 2))

    def stiff(offset, rows, vals):
        add(offset, rows, -ds * vals)

    # same-component tridiagonal drift: Re<-Re and Im<-Im
    for rows in (ri, ii):
        stiff(-2, rows, tri_sub[interior])
        stiff(0, rows, tri_diag[interior])
        stiff(+2, rows, tri_sup[interior])

    # (1+i delta) Re q: Re row += Re q ; Im row += delta Re q
    stiff(0, ri, np.ones(N - 2))
    stiff(-1, ii, d * np.ones(N - 2))

    # V: Im row += v (delta Re q - Im q)
    stiff(-1, ii, d * vpot[interior])
    stiff(0, ii, -vpot[interior])

    # frame-mismatch linear part: complex diagonal cR
    stiff(0, ri, cR.real[interior])
    stiff(+1, ri, -cR.imag[interior])
    stiff(-1, ii, cR.imag[interior])
    stiff(0, ii, cR.real[interior])

    # profile transport: complex coefficient cD times D1; in interleaved
    # storage the Im value of node i+-1 sits one column past its Re value
    cre, cim = cD.real[interior], cD.imag[interior]
    w_sub, w_sup = -1.0 / (2.0 * dy), 1.0 / (2.0 * dy)
    stiff(-2, ri, cre * w_sub)
    stiff(+2, ri, cre * w_sup)
    stiff(-1, ri, -cim * w_sub)
    stiff(+3, ri, -cim * w_sup)
    stiff(-3, ii, cim * w_sub)
    stiff(+1, ii, cim * w_sup)
    stiff(-2, ii, cre * w_sub)
    stiff(+2, ii, cre * w_sup)

    # boundary closure: 7th difference of q vanishes at both ends
    binom = np.array([math.comb(7, j) * (-1) ** (j + 1) for j in range(1, 8)], dtype=float)
    for comp in (0, 1):
        row = comp  # left end, node 0
        ab[bw + 0, row] = 1.0
        for j in range(1, 8):
            col = 2 * j + comp
            ab[bw + row - col, col] = -binom[j - 1]
        row = 2 * (N - 1) + comp  # right end
        ab[bw + 0, row] = 1.0
        for j in range(1, 8):
            col = 2 * (N - 1 - j) + comp
            ab[bw + row - col, col] = -binom[j - 1]
    return ab, bw


def step_coupled(
    q: GridFunction,
    state: ModulationState,
    s: float,
    ds: float,
    params: Parameters,
    settings: RunSettings,
) -> tuple[GridFunction, ModulationState, dict]:
    """One IMEX step of q followed by the Newton gauge slide.

    Returns the new perturbation, the updated gauge state (with the same
    lagged drift estimates; the caller refreshes them from history), and an
    info dict (newton iterations, constraint residuals, nonlinearity
    proximity).  Raises NewtonError when the gauge slide fails.
    """
    s_new = s + ds
    b, theta = state.b, state.theta

    expl = term_B(q, b, state.bprime, params).values
    expl = expl + term_T(q, b, state.thetaprime, params).values
    expl = expl + term_N(q, b, params).values
    # frame-mismatch source (q-independent part), evaluated at the new time
    zero = GridFunction(q.mesh, np.zeros_like(q.values))
    expl = expl + term_Rs(zero, b, s_new, params).values

    rhs = np.empty(2 * q.mesh.size)
    vals = q.values + ds * expl
    rhs[0::2] = vals.real
    rhs[1::2] = vals.imag
    rhs[0] = rhs[1] = rhs[-2] = rhs[-1] = 0.0

    ab, bw = _banded_implicit(s_new, b, ds, q.mesh, params)
    sol = solve_banded((bw, bw), ab, rhs)
    q_imex = GridFunction(q.mesh, sol[0::2] + 1j * sol[1::2])

    # the step integrated the gauge-transport terms with the lagged drift
    # rates, so q_imex lives in the gauge slid by one step of those rates;
    # rebuild w there and let the Newton slide supply only the correction
    b_pred = b + ds * state.bprime
    theta_pred = theta + ds * state.thetaprime
    if not b_pred > 0.0:
        raise NewtonError(f"predicted gauge left the chart at s={s_new}: b={b_pred}")
    w_new = w_from_q(q_imex, b_pred, theta_pred, params)
    new_state, iters = newton_enforce_constraints(
        w_new,
        dataclasses.replace(state, b=b_pred, theta=theta_pred),
        s_new,
        params,
        tol=settings.tol_constraint,
        max_iter=settings.newton_max_iter,
    )
    q_new = q_from_w(w_new, new_state.b, new_state.theta, params)
    F1, F2 = modulation_residual(w_new, new_state.b, new_state.theta, s_new, params)
    info = {
        "newton_iters": iters,
        "constraint_hat2k": F1 / norm_Hn_sq(2 * params.k, s_new, params.k),
        "constraint_check0": F2,
        "min_abs_one_plus_ebq": nonlinearity_proximity(q_new, new_state.b, params),
    }
    return q_new, new_state, info


# --- shrinking set ------------------------------------------------------------


def check_shrinking_set(dec: ModeDecomposition, state: ModulationState, s: float, params: Parameters) -> ShrinkingSetReport:
    """Normalized margins of every trapping-set inequality at this step."""
    allowance = scaling_factor(s, params.k) ** (-params.gamma)
    hat_m = np.abs(dec.hat_q) / allowance
    check_m = np.abs(dec.check_q) / allowance
    minus = dec.q_minus
    hat_minus = GridFunction(minus.mesh, minus.values.real + 0j)
    check_minus = GridFunction(minus.mesh, (minus.values.imag - params.delta * minus.values.real) + 0j)
    mh = norm_minus(hat_minus, s, params) / allowance
    mc = norm_minus(check_minus, s, params) / (params.bigA * allowance)
    bm = max(state.b / (2.0 * params.b0), params.b0 / (2.0 * state.b))
    tm = abs(state.theta - params.theta0) / 0.25

    worst = -1.0
    comp = "none"
    sign = 0
    for n in range(hat_m.size):
        if hat_m[n] > worst:
            worst, comp, sign = hat_m[n], f"hat{n}", int(np.sign(dec.hat_q[n]) or 1)
    for n in range(check_m.size):
        if check_m[n] > worst:
            worst, comp, sign = check_m[n], f"check{n}", int(np.sign(dec.check_q[n]) or 1)
    if mh > worst:
        worst, comp, sign = mh, "minus_hat", 1
    if mc > worst:
        worst, comp, sign = mc, "minus_check", 1
    if bm > worst:
        worst, comp, sign = bm, "b", int(np.sign(state.b - params.b0) or 1)
    if tm > worst:
        worst, comp, sign = tm, "theta", int(np.sign(state.theta - params.theta0) or 1)

    inside = bool(
        np.all(hat_m <= 1.0)
        and np.all(check_m <= 1.0)
        and mh <= 1.0
        and mc <= 1.0
        and bm <= 1.0
        and tm <= 1.0
    )
    return ShrinkingSetReport(
        hat_margins=hat_m,
        check_margins=check_m,
        minus_hat_margin=mh,
        minus_check_margin=mc,
        b_margin=bm,
        theta_margin=tm,
        inside=inside,
        worst_component=comp,
        worst_margin=float(worst),
        worst_sign=sign,
    )


def profile_distance(q: GridFunction, state: ModulationState, params: Parameters) -> tuple[float, float]:
    """Sup distances of w to the target profile, raw and phase-corrected."""
    w = w_from_q(q, state.b, state.theta, params)
    fb = profile_f(state.b, q.mesh, params)
    raw = float(np.max(np.abs(w.values - fb)))
    phased = float(np.max(np.abs(w.values - np.exp(1j * state.theta) * fb)))
    return raw, phased


# --- run loop -----------------------------------------------------------------


def _deriv3(xs: list[float], fs: list[float]) -> float:
    """Derivative at the last of up to three (x, f) samples."""
    if len(xs) < 2:
        return 0.0
    if len(xs) == 2:
        return (fs[-1] - fs[-2]) / (xs[-1] - xs[-2])
    x0, x1, x2 = xs[-3], xs[-2], xs[-1]
    f0, f1, f2 = fs[-3], fs[-2], fs[-1]
    return (
        f0 * (x2 - x1) / ((x0 - x1) * (x0 - x2))
        + f1 * (x2 - x0) / ((x1 - x0) * (x1 - x2))
        + f2 * (2.0 * x2 - x0 - x1) / ((x2 - x0) * (x2 - x1))
    )


def run_simulation(
    params: Parameters,
    settings: RunSettings,
    dhat=None,
    mesh: np.ndarray | None = None,
) -> SimulationTrace:
    """Advance from s0 until s_max, exit, or step-size exhaustion.

    The trace records one row per accepted step (including the initial
    state).  With stop_on_exit the run ends at the first step outside the
    trapping set; otherwise it continues while margins stay below the
    safety cap.
    """
    if mesh is None:
        mesh = build_mesh(params, settings.nodes, settings.Y)
    if dhat is None:
        dhat = np.zeros(2 * params.k)
    s = settings.s0
    q = initial_data_psi(dhat, s, params, mesh)
    state = ModulationState(b=params.b0, theta=params.theta0, s=s)
    w0 = w_from_q(q, state.b, state.theta, params)
    state, _ = newton_enforce_constraints(w0, state, s, params, tol=settings.tol_constraint)
    q = q_from_w(w0, state.b, state.theta, params)

    trace = SimulationTrace(params=params)
    s_hist: list[float] = [s]
    b_hist: list[float] = [state.b]
    th_hist: list[float] = [state.theta]

    def record(info: dict, ds_used: float) -> ShrinkingSetReport:
        dec = split_modes(q, s, params)
        rep = check_shrinking_set(dec, state, s, params)
        raw, phased = profile_distance(q, state, params)
        allowance = scaling_factor(s, params.k) ** (-params.gamma)
        row = {
            "s": s,
            "b": state.b,
            "theta": state.theta,
            "bprime": state.bprime,
            "thetaprime": state.thetaprime,
            "ds": ds_used,
            "minus_hat_norm": rep.minus_hat_margin * allowance,
            "minus_check_norm": rep.minus_check_margin * params.bigA * allowance,
            "minus_hat_margin": rep.minus_hat_margin,
            "minus_check_margin": rep.minus_check_margin,
            "b_margin": rep.b_margin,
            "theta_margin": rep.theta_margin,
            "margin_max": rep.worst_margin,
            "inside": int(rep.inside),
            "worst_component": rep.worst_component,
            "wdist": raw,
            "wdist_phase": phased,
            "newton_iters": info.get("newton_iters", 0),
            "constraint_hat2k": info.get("constraint_hat2k", 0.0),
            "constraint_check0": info.get("constraint_check0", 0.0),
            "min_abs_one_plus_ebq": info.get("min_abs_one_plus_ebq", 1.0),
        }
        for n in range(params.Mfloor + 1):
            row[f"hat{n}"] = float(dec.hat_q[n])
            row[f"check{n}"] = float(dec.check_q[n])
        trace.records.append(row)
        return rep

    rep = record({}, 0.0)
    ds = settings.ds_init
    good_streak = 0
    while s < settings.s_max - 1e-12 and not (trace.exited and settings.stop_on_exit):
        ds = min(ds, settings.s_max - s)
        try:
            q_new, state_new, info = step_coupled(q, state, s, ds, params, settings)
        except NewtonError:
            ds *= 0.5
            good_streak = 0
            if ds < settings.ds_min:
                raise
            continue
        s = s + ds
        q = q_new
        s_hist.append(s)
        b_hist.append(state_new.b)
        th_hist.append(state_new.theta)
        state = dataclasses.replace(
            state_new,
            bprime=_deriv3(s_hist[-3:], b_hist[-3:]),
            thetaprime=_deriv3(s_hist[-3:], th_hist[-3:]),
        )
        rep = record(info, ds)
        good_streak += 1
        if good_streak >= 50 and ds < settings.ds_init:
            ds = min(2.0 * ds, settings.ds_init)
            good_streak = 0
        if not rep.inside and not trace.exited:
            trace.exited = True
            trace.exit_component = rep.worst_component
            trace.exit_s = s
            trace.exit_sign = rep.worst_sign
        if rep.worst_margin > settings.margin_cap:
            break
    if not trace.exited and len(trace.records) > 0 and not trace.records[-1]["inside"]:
        trace.exited = True
    return trace


# --- shooting -----------------------------------------------------------------


def _outward_rate(trace: SimulationTrace, component: str) -> float:
    """Outward derivative (sign-aligned) of the exiting component at exit."""
    sdat = trace.column("s")
    if component.startswith("hat") or component.startswith("check"):
        vals = trace.column(component)
    elif component == "b":
        vals = trace.column("b") - trace.params.b0
    elif component == "theta":
        vals = trace.column("theta") - trace.params.theta0
    else:
        vals = trace.column(f"{component}_margin")
    idx = len(sdat) - 1
    if trace.exit_s is not None:
        idx = int(np.argmin(np.abs(sdat - trace.exit_s)))
    lo = max(0, idx - 2)
    if idx == lo:
        idx = min(len(sdat) - 1, lo + 1)
    deriv = _deriv3(list(sdat[lo : idx + 1]), list(vals[lo : idx + 1]))
    sign = np.sign(vals[idx]) or 1.0
    return float(deriv * sign)


def _sweep_cell(args) -> dict:
    params, settings, dhat = args
    dhat = np.asarray(dhat, dtype=float)
    if np.max(np.abs(dhat)) > 1.0:
        # outside the admissible preimage box: exits at s0 by definition,
        # but run three forced steps to measure the outward derivative
        probe = dataclasses.replace(settings, stop_on_exit=False, s_max=settings.s0 + 3 * settings.ds_init)
        trace = run_simulation(params, probe, dhat=dhat)
        rep0 = trace.records[0]
        comp = rep0["worst_component"]
        return {
            "dhat": tuple(dhat),
            "exit_s": settings.s0,
            "exit_component": comp,
            "exit_sign": int(np.sign(rep0.get(comp, 1.0)) or 1),
            "outward_rate": _outward_rate(trace, comp),
            "survived": False,
            "steps": len(trace),
            "final_s": trace.records[-1]["s"],
            "rows": trace.records,
        }
    trace = run_simulation(params, settings, dhat=dhat)
    if trace.exited:
        return {
            "dhat": tuple(dhat),
            "exit_s": trace.exit_s,
            "exit_component": trace.exit_component,
            "exit_sign": trace.exit_sign,
            "outward_rate": _outward_rate(trace, trace.exit_component),
            "survived": False,
            "steps": len(trace),
            "final_s": trace.records[-1]["s"],
            "rows": trace.records,
        }
    return {
        "dhat": tuple(dhat),
        "exit_s": None,
        "exit_component": None,
        "exit_sign": 0,
        "outward_rate": 0.0,
        "survived": True,
        "steps": len(trace),
        "final_s": trace.records[-1]["s"],
        "rows": trace.records,
    }


def shooting_sweep(params: Parameters, settings: RunSettings, pts_per_axis: int = 3, box: float = 2.0) -> list[dict]:
    """Run one cell per grid point of the seed box [-box, box]^{2k}.

    Returns one record per cell with exit component, side, outward rate, and
    survival; cells are ordered lexicographically so reruns are
    reproducible.  The worker count honors CGLBLOW_THREADS.
    """
    axes = [np.linspace(-box, box, pts_per_axis)] * (2 * params.k)
    cells = [c.ravel() for c in np.meshgrid(*axes, indexing="ij")]
    dhats = np.stack(cells, axis=-1)
    jobs = [(params, settings, dh) for dh in dhats]
    threads = int(os.environ.get("CGLBLOW_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_sweep_cell, jobs, chunksize=4))
    else:
        results = [_sweep_cell(j) for j in jobs]
    return results


def refine_survivor(
    params: Parameters,
    settings: RunSettings,
    horizons=None,
    probe_eps: float = 1e-2,
    dhat0=None,
    probe_cap: float = 4.0,
) -> np.ndarray:
    """Seed coefficients whose run stays near the profile the longest.

    The map from the seed dhat to the expanding-mode coefficients at a
    horizon is affine to high accuracy while the state is small, so a few
    probe runs per stage give its matrix by finite differences and one solve
    cancels the measured drift.  Stages use increasing horizons; each stage
    re-linearizes around the current best seed.  All runs of a stage are
    compared at the earliest time any of them reached (runs are cut at
    probe_cap margins to stay in the near-affine regime), and coordinates
    that are zero by symmetry are left out of the solve.
    """
    nny = 2 * params.k
    if horizons is None:
        span = settings.s_max - settings.s0
        horizons = [settings.s0 + f * span for f in (0.25, 0.45, 0.65, 0.85, 1.0)]
    dhat = np.zeros(nny) if dhat0 is None else np.asarray(dhat0, dtype=float).copy()
    eps = probe_eps

    def run_to(dh, horizon):
        probe = dataclasses.replace(
            settings, stop_on_exit=False, s_max=horizon, margin_cap=probe_cap
        )
        return run_simulation(params, probe, dhat=dh)

    def vec_at(trace, s_star):
        s_col = trace.column("s")
        idx = int(np.argmin(np.abs(s_col - s_star)))
        row = trace.records[idx]
        return np.array([row[f"hat{j}"] for j in range(nny)])

    for horizon in horizons:
        center_trace = run_to(dhat, horizon)
        center_end = center_trace.records[-1]["s"]
        active = [
            j
            for j in range(nny)
            if abs(dhat[j]) > 1e-12 or abs(vec_at(center_trace, center_end)[j]) > 1e-10
        ]
        if not active:
            break
        probes = []
        for j in active:
            dh = dhat.copy()
            dh[j] += eps
            probes.append(run_to(dh, horizon))
        s_star = min([center_end] + [t.records[-1]["s"] for t in probes])
        center = vec_at(center_trace, s_star)
        T = np.empty((len(active), len(active)))
        for col, trace in enumerate(probes):
            T[:, col] = (vec_at(trace, s_star) - center)[active] / eps
        try:
            correction = np.linalg.solve(T, center[active])
        except np.linalg.LinAlgError:
            correction, *_ = np.linalg.lstsq(T, center[active], rcond=None)
        for col, j in enumerate(active):
            dhat[j] -= correction[col]
        np.clip(dhat, -2.0, 2.0, out=dhat)
        eps = max(1e-7, min(eps, 10.0 * float(np.max(np.abs(correction))) + 1e-7))
    return dhat


# --- rate extraction ----------------------------------------------------------


@dataclass
class RateReport:
    rate_fit: float
    b_star: float
    b_drift: float
    envelope_constant: float
    envelope_ok: bool
    theta_final: float


def extract_rates(trace: SimulationTrace, params: Parameters, transient_frac: float = 0.25) -> RateReport:
    """Fit the profile-approach rate and estimate the limit coefficient.

    rate_fit is the least-squares slope of log ||w - f_b||_inf against s
    after the transient window.  b_star adds to the final b the integrated
    tail of its drift under the measured envelope |b'| <= c I^{-2 gamma};
    b_drift is the largest |b(s) - b_star| along the run, and envelope_ok
    states whether it is contained in the integrated-drift envelope.
    """
    s = trace.column("s")
    if s.size < 8:
        raise ValueError("trace too short for rate extraction")
    w = trace.column("wdist")
    cut = int(transient_frac * s.size)
    slope, _ = np.polyfit(s[cut:], np.log(np.maximum(w[cut:], 1e-300)), 1)

    b = trace.column("b")
    bp = trace.column("bprime")
    gk = params.gamma * (1.0 - 1.0 / params.k)
    allowance = np.array([scaling_factor(si, params.k) ** (-2.0 * params.gamma) for si in s])
    env_c = float(np.max(np.abs(bp[1:]) / allowance[1:])) if s.size > 1 else 0.0
    tail = bp[-1] / gk if gk > 0 else 0.0
    b_star = float(b[-1] + tail)
    drift = float(np.max(np.abs(b - b_star)))
    # containment: |b(s) - b_star| <= integral_s^end |b'| + |tail| + slack
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (np.abs(bp[1:]) + np.abs(bp[:-1])) * np.diff(s))])
    remaining = cum[-1] - cum
    ok = bool(np.all(np.abs(b - b_star) <= remaining + abs(tail) + 1e-12 + 0.05 * max(drift, 1e-300)))
    return RateReport(
        rate_fit=float(slope),
        b_star=b_star,
        b_drift=drift,
        envelope_constant=env_c,
        envelope_ok=ok,
        theta_final=float(trace.column("theta")[-1]),
    )
