"""Terms of the perturbation equation and their projection formulas.

Writing the frame solution as w = e^{i theta(s)} f_b(s) (1 + e_b(s) q), the
perturbation q solves

    q_s = Ldelta_s q + V(q) + B(q) + T(q) + N(q) + Ds(q') + Rs(q),

with the real-linear potential V, the gauge source/coupling terms B (from b')
and T (from theta'), the quadratic remainder N, the profile-drift transport
Ds, and the frame-mismatch source Rs:

    V(q)  = ((p-1) e_b - 1) ((1+i delta) Re q - q)
    B(q)  = (b'/(p-1)) y^{2k} (1 + i delta + (p+i delta) e_b q)
    T(q)  = -i theta' (p - 1 + b y^{2k} + q)
    N(q)  = (1+i delta) (|1+e_b q|^{p-1}(1+e_b q) - 1 - 2 e_b Re q
             - ((p-1)/2) e_b q - ((p-3)/2) e_b conj(q))
    Ds(q')= -I^{-2} ((p+i delta)/(p-1)) 4 k b y^{2k-1} e_b q'
    Rs(q) = I^{-2} y^{2k-2} (a1 + a2 y^{2k} e_b + e_b (a3 + a4 y^{2k} e_b) q)

with coefficients

    a1 = -(1+i delta) 2k(2k-1) b / (p-1)
    a2 = 4 (1+i delta)(p+i delta) k^2 b^2 / (p-1)^2
    a3 = -(p+i delta) 2k(2k-1) b / (p-1)
    a4 = 4 (p+i delta)(2p-1+i delta) k^2 b^2 / (p-1)^2.

Every projection onto the basis has two independent routes: quadrature
against H_n rho_s, and a closed form.  Both are exposed; tests compare them.
Pointwise, V is i times a real function times the check part of q, so its
hat-projections vanish exactly, including in floating point.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .model import GridFunction, Parameters, delta_decompose, profile_e, scaling_factor
from .semigroup import apply_Ldelta, fd_derivatives
from .spectral import (
    _h_coeffs,
    hermite_h,
    monomial_H_coeffs,
    project_Qn,
    split_modes,
)

__all__ = [
    "alphas",
    "term_V",
    "term_N",
    "term_B",
    "term_T",
    "term_Ds",
    "term_Rs",
    "grad_fd",
    "rhs_total",
    "project_term",
    "coupling_coeff",
    "closed_proj_Ldelta",
    "closed_proj_dsq",
    "closed_proj_T",
    "closed_proj_V",
    "resonant_V_coeffs",
    "pminus_of",
]


def alphas(b: float, params: Parameters) -> tuple[complex, complex, complex, complex]:
    """Coefficients a1..a4 of the frame-mismatch term Rs."""
    p, d, k = params.p, params.delta, params.k
    one = 1.0 + 1j * d
    pod = p + 1j * d
    a1 = -one * 2 * k * (2 * k - 1) * b / (p - 1.0)
    a2 = 4.0 * one * pod * k ** 2 * b ** 2 / (p - 1.0) ** 2
    a3 = -pod * 2 * k * (2 * k - 1) * b / (p - 1.0)
    a4 = 4.0 * pod * (2.0 * p - 1.0 + 1j * d) * k ** 2 * b ** 2 / (p - 1.0) ** 2
    return a1, a2, a3, a4


# --- pointwise terms --------------------------------------------------------


def term_V(q: GridFunction, b: float, params: Parameters) -> GridFunction:
    """Real-linear potential term; purely i * (real) * check(q) pointwise."""
    eb = profile_e(b, q.mesh, params)
    pref = (params.p - 1.0) * eb - 1.0
    vals = pref * ((1.0 + 1j * params.delta) * q.values.real - q.values)
    return GridFunction(q.mesh, vals)


def term_N(q: GridFunction, b: float, params: Parameters) -> GridFunction:
    """Quadratic-and-higher remainder of the nonlinearity."""
    p, d = params.p, params.delta
    x = profile_e(b, q.mesh, params) * q.values
    base = np.abs(1.0 + x) ** (p - 1.0) * (1.0 + x)
    linear = 1.0 + 2.0 * x.real + 0.5 * (p - 1.0) * x + 0.5 * (p - 3.0) * np.conj(x)
    return GridFunction(q.mesh, (1.0 + 1j * d) * (base - linear))


def nonlinearity_proximity(q: GridFunction, b: float, params: Parameters) -> float:
    """min |1 + e_b q|; a value near zero means N left its smooth regime."""
    x = profile_e(b, q.mesh, params) * q.values
    return float(np.min(np.abs(1.0 + x)))


def term_B(q: GridFunction, b: float, bprime: float, params: Parameters) -> GridFunction:
    """Coupling of the profile-coefficient drift b' into the q equation."""
    p, d, k = params.p, params.delta, params.k
    eb = profile_e(b, q.mesh, params)
    poly = q.mesh ** (2 * k)
    vals = bprime / (p - 1.0) * poly * (1.0 + 1j * d + (p + 1j * d) * eb * q.values)
    return GridFunction(q.mesh, vals)


def term_T(q: GridFunction, b: float, thetaprime: float, params: Parameters) -> GridFunction:
    """Coupling of the gauge-phase drift theta' into the q equation."""
    p, k = params.p, params.k
    vals = -1j * thetaprime * (p - 1.0 + b * q.mesh ** (2 * k) + q.values)
    return GridFunction(q.mesh, vals)


def term_Ds(gradq: GridFunction, b: float, s: float, params: Parameters) -> GridFunction:
    """Profile-drift transport term acting on the y-derivative of q."""
    p, d, k = params.p, params.delta, params.k
    I2 = scaling_factor(s, k) ** 2
    eb = profile_e(b, gradq.mesh, params)
    coef = -((p + 1j * d) / (p - 1.0)) * 4.0 * k * b / I2
    vals = coef * gradq.mesh ** (2 * k - 1) * eb * gradq.values
    return GridFunction(gradq.mesh, vals)


def term_Rs(q: GridFunction, b: float, s: float, params: Parameters) -> GridFunction:
    """Frame-mismatch term: an I^{-2} source plus an I^{-2} linear part."""
    k = params.k
    a1, a2, a3, a4 = alphas(b, params)
    I2 = scaling_factor(s, k) ** 2
    eb = profile_e(b, q.mesh, params)
    poly = q.mesh ** (2 * k)
    bracket = a1 + a2 * poly * eb + eb * (a3 + a4 * poly * eb) * q.values
    vals = q.mesh ** (2 * k - 2) * bracket / I2
    return GridFunction(q.mesh, vals)


def grad_fd(q: GridFunction) -> GridFunction:
    """First y-derivative by second-order finite differences."""
    d1, _ = fd_derivatives(q)
    return GridFunction(q.mesh, d1)


def rhs_total(q: GridFunction, state, s: float, params: Parameters, flags: dict | None = None) -> GridFunction:
    """Sum of all terms of the perturbation equation.

    state provides the gauge data (attributes b, bprime, thetaprime); the
    operator part uses finite differences, so the two outermost points on
    each side carry one-sided stencils.  When a dict is passed as flags it
    receives the nonlinearity proximity min |1 + e_b q|.
    """
    b = state.b
    lin = apply_Ldelta(q, s, params)
    total = lin.values.copy()
    total += term_V(q, b, params).values
    total += term_B(q, b, state.bprime, params).values
    total += term_T(q, b, state.thetaprime, params).values
    total += term_N(q, b, params).values
    total += term_Ds(grad_fd(q), b, s, params).values
    total += term_Rs(q, b, s, params).values
    if flags is not None:
        flags["min_abs_one_plus_ebq"] = nonlinearity_proximity(q, b, params)
    return GridFunction(q.mesh, total)


# --- projections: quadrature route ------------------------------------------


def project_term(term: GridFunction, n: int, s: float, params: Parameters) -> tuple[float, float]:
    """Hat/check parts of the n-th mode coefficient of a term, by quadrature."""
    Qn = project_Qn(term, n, s, params.k)
    sp = delta_decompose(Qn, params.delta)
    return sp.hat, sp.check


# --- projections: closed forms ----------------------------------------------


def _coef(arr, n: int) -> float:
    """Entry n of a coefficient array, zero beyond its end."""
    arr = np.asarray(arr, dtype=float)
    return float(arr[n]) if n < arr.size else 0.0


def coupling_coeff(n: int, s: float, k: int) -> float:
    """Two-step ladder coefficient (1 - 1/k)(n+1)(n+2) I^{-2}.

    It multiplies the (n+2)-nd coefficient in the projections of both the
    time derivative and the linear operator; for n+2 beyond the tracked range
    the coefficient in question is the generalized moment of the remainder.
    """
    I2 = scaling_factor(s, k) ** 2
    return (1.0 - 1.0 / k) * (n + 1) * (n + 2) / I2


def closed_proj_Ldelta(hat_all, check_all, n: int, s: float, params: Parameters) -> tuple[float, float]:
    """Closed hat/check projections of Ldelta_s q from mode coefficients.

    hat_all/check_all may extend beyond Mfloor; missing entries count as
    zero.  hat row: (1 - n/2k) hat_n + coupling * hat_{n+2}; check row:
    -(n/2k) check_n + coupling * check_{n+2}.
    """
    k = params.k
    c = coupling_coeff(n, s, k)
    hat = (1.0 - n / (2.0 * k)) * _coef(hat_all, n) + c * _coef(hat_all, n + 2)
    check = -(n / (2.0 * k)) * _coef(check_all, n) + c * _coef(check_all, n + 2)
    return hat, check


def closed_proj_dsq(hat_dot, check_dot, hat_all, check_all, n: int, s: float, params: Parameters) -> tuple[float, float]:
    """Closed projections of the time derivative of q.

    Differentiating the mode coefficients in s is not the same as projecting
    q_s: the drifting basis contributes the same two-step ladder coupling as
    the linear operator.  hat row: d/ds hat_n + coupling * hat_{n+2}; check
    row likewise.
    """
    c = coupling_coeff(n, s, params.k)
    hat = _coef(hat_dot, n) + c * _coef(hat_all, n + 2)
    check = _coef(check_dot, n) + c * _coef(check_all, n + 2)
    return hat, check


def well_H_coeffs(b: float, s: float, params: Parameters) -> np.ndarray:
    """Basis coefficients of the polynomial p - 1 + b y^{2k}."""
    k = params.k
    coeffs = b * monomial_H_coeffs(2 * k, s, k)
    coeffs[0] += params.p - 1.0
    return coeffs


def closed_proj_T(hat_all, check_all, n: int, b: float, thetaprime: float, s: float, params: Parameters) -> tuple[float, float]:
    """Closed hat/check projections of the phase-coupling term T.

    With c_n the basis coefficients of p - 1 + b y^{2k} (real), the rows are
        hat:   theta' (delta * hat_n + check_n)
        check: -theta' (c_n + (1+delta^2) hat_n + delta * check_n).
    """
    d = params.delta
    cn = _coef(well_H_coeffs(b, s, params), n)
    hat = thetaprime * (d * _coef(hat_all, n) + _coef(check_all, n))
    check = -thetaprime * (cn + (1.0 + d ** 2) * _coef(hat_all, n) + d * _coef(check_all, n))
    return hat, check


@lru_cache(maxsize=None)
def _moment_ratio(k: int, j: int, l: int, n: int) -> float:
    """Exact ratio <z^{2kj} h_l h_n> / <h_n h_n> under the base weight.

    Computed once by Gauss-Hermite quadrature, which is exact here because
    the integrand is polynomial.  The ratio is frame-independent; the frame
    enters through powers of I only.
    """
    deg = 2 * k * j + l + n
    nodes = max(deg // 2 + 2, 8)
    x, w = np.polynomial.hermite.hermgauss(nodes)
    z = 2.0 * x
    integrand = z ** (2 * k * j) * hermite_h(l, z) * hermite_h(n, z)
    val = float(np.sum(w * integrand) / math.sqrt(math.pi))
    return val / (2.0 ** n * math.factorial(n))


def _h_product_even_coeffs(l: int, n: int) -> list[int]:
    """Exact integer coefficients of z^{2m} in h_l(z) h_n(z), even parity.

    Returns [c_0, c_1, ...] with h_l h_n = sum_m c_m z^{2m} when l + n is
    even; mixed parity has no even part and yields [].
    """
    if (l + n) % 2 == 1:
        return []

    def full(mdeg: int) -> list[int]:
        arr = [0] * (mdeg + 1)
        for j, c in enumerate(_h_coeffs(mdeg)):
            arr[mdeg - 2 * j] = c
        return arr

    a, bb = full(l), full(n)
    prod = [0] * (l + n + 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j, bj in enumerate(bb):
            if bj:
                prod[i + j] += ai * bj
    return [prod[2 * m] for m in range((l + n) // 2 + 1)]


def closed_proj_V(check_all, n: int, b: float, s: float, params: Parameters, dps: int = 60) -> tuple[float, float]:
    """Closed hat/check projections of the potential term V, exact route.

    The hat part is exactly zero.  For band-limited q with check-part
    coefficients check_all, the check part is an exact finite expression:
    the profile factor 1 - (p-1) e_b = z^{2k}/(z^{2k} + c^{2k}) (in the frame
    variable z = I y, with c^{2k} = (p-1) I^{2k}/b) splits into k partial
    fractions 1/(z^2 + a_j), and the Gaussian-vs-rational base integrals

        T_m(a) = <z^{2m} / (z^2 + a)>,   T_0 = sqrt(pi)/(4 beta) e^{beta^2} erfc(beta)

    (beta = sqrt(a)/2) follow by the moment recurrence
    T_m = mu_{2m-2} - a T_{m-1}.  The recurrence cancels catastrophically in
    double precision once |a| is large, so it runs in high-precision
    arithmetic and only the final projection is rounded back to float.
    """
    import mpmath as mp

    p, k = params.p, params.k
    check_all = np.asarray(check_all, dtype=float)
    if not np.any(check_all):
        return 0.0, 0.0
    with mp.workdps(dps):
        I = mp.exp(mp.mpf(s) / 2 * (1 - mp.mpf(1) / k))
        c2 = ((p - 1) / mp.mpf(b)) ** (mp.mpf(1) / k) * I ** 2
        roots = [c2 * mp.expjpi(mp.mpf(2 * j + 1) / k) for j in range(k)]

        def base_T(a, mmax):
            beta = mp.sqrt(a) / 2
            T = [mp.sqrt(mp.pi) / (4 * beta) * mp.exp(beta ** 2) * mp.erfc(beta)]
            mu = mp.mpf(1)  # mu_0
            for m in range(1, mmax + 1):
                T.append(mu - a * T[-1])
                mu = mu * 2 * (2 * m - 1)  # mu_{2m}
            return T

        total = mp.mpf(0)
        for l, ql in enumerate(check_all):
            if ql == 0.0:
                continue
            coeffs = _h_product_even_coeffs(l, n)
            if not coeffs:
                continue
            mmax = len(coeffs) - 1
            # <h_l h_n> part: plain Gaussian moments
            mu = mp.mpf(1)
            plain = mp.mpf(0)
            for m, cm in enumerate(coeffs):
                plain += cm * mu
                mu = mu * 2 * (2 * m + 1)
            # rational part: + (1/k) sum_j u_j S_j with S_j = <h_l h_n/(z^2 - u_j)>
            rat = mp.mpf(0)
            for u in roots:
                T = base_T(-u, mmax)
                S = mp.fsum(cm * T[m] for m, cm in enumerate(coeffs))
                rat += u * S
            bracket = plain + rat / k
            total += ql * I ** (n - l) * bracket
        total = total / (2 ** n * mp.factorial(n))
        return 0.0, float(mp.re(total))


def resonant_V_coeffs(params: Parameters, b: float) -> dict[tuple[int, int], float]:
    """Frame-independent resonant couplings of V into the check-mode flow.

    For each tracked mode n = 2km + l (m >= 1) the check equation picks up
    the coefficient c[(m, l)] multiplying check_l; these are the only V
    contributions that do not decay in I.  Cached per (p, k, Mfloor, b).
    """
    return _resonant_V_coeffs(params.p, params.k, params.Mfloor, b)


@lru_cache(maxsize=None)
def _resonant_V_coeffs(p: float, k: int, mfloor: int, b: float) -> dict[tuple[int, int], float]:
    out: dict[tuple[int, int], float] = {}
    m = 1
    while 2 * k * m <= mfloor:
        for l in range(0, mfloor - 2 * k * m + 1):
            n = 2 * k * m + l
            out[(m, l)] = -((-b / (p - 1.0)) ** m) * _moment_ratio(k, m, l, n)
        m += 1
    return out


def pminus_of(term: GridFunction, s: float, params: Parameters) -> GridFunction:
    """Orthogonal remainder of a term after removing the tracked modes."""
    return split_modes(term, s, params).q_minus
