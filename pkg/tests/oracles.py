"""Independent oracles used by the tests.

Everything here recomputes package quantities through a different route
than the implementation: exact integer moment arithmetic for weighted
polynomial integrals, and direct substitution of the gauge ansatz into the
similarity-variable evolution equation for the assembled right-hand side.
Nothing in this module imports from cglblow.spectral, cglblow.rhs, or
cglblow.semigroup, so agreement between the two routes is meaningful.
"""

import math

import numpy as np

from cglblow.model import profile_e, profile_f, scaling_factor


def double_factorial(n: int) -> int:
    if n <= 0:
        return 1
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def hermite_coeffs(m: int) -> dict:
    """Integer coefficients {power: coeff} of the m-th weighted-Hermite
    polynomial in the convention with leading coefficient one."""
    out = {}
    for ell in range(m // 2 + 1):
        c = (-1) ** ell * math.factorial(m) // (math.factorial(ell) * math.factorial(m - 2 * ell))
        out[m - 2 * ell] = c
    return out


def weight_moment(n: int) -> int:
    """Exact n-th moment of the Gaussian weight e^{-z^2/4}/sqrt(4 pi)."""
    if n % 2:
        return 0
    return 2 ** (n // 2) * double_factorial(n - 1)


def poly_inner(pa: dict, pb: dict) -> int:
    """Exact weighted inner product of two integer-coefficient polynomials."""
    total = 0
    for i, ci in pa.items():
        for j, cj in pb.items():
            total += ci * cj * weight_moment(i + j)
    return total


def monomial_projection(a: int, n: int, s: float, k: int) -> float:
    """Projection coefficient of y^a onto the n-th scaled basis function,
    computed from exact moments and the scaling factor alone."""
    I = scaling_factor(s, k)
    num = sum(c * weight_moment(a + p) for p, c in hermite_coeffs(n).items())
    return I ** (n - a) * num / (2**n * math.factorial(n))


def product_coeffs(j: int, ell: int) -> dict:
    """Exact linearization h_j h_ell = sum_i i! C(j,i) C(ell,i) 2^i h_{j+ell-2i}
    claimed by the closed projection formulas; returned as {index: coeff}."""
    out = {}
    for i in range(min(j, ell) + 1):
        out[j + ell - 2 * i] = math.factorial(i) * math.comb(j, i) * math.comb(ell, i) * 2**i
    return out


def poly_mult(pa: dict, pb: dict) -> dict:
    out = {}
    for i, ci in pa.items():
        for j, cj in pb.items():
            out[i + j] = out.get(i + j, 0) + ci * cj
    return out


# --- substitution route for the assembled right-hand side ---------------------


def fd_first_second(vals: np.ndarray, mesh: np.ndarray):
    d1 = np.gradient(vals, mesh, edge_order=2)
    d2 = np.gradient(d1, mesh, edge_order=2)
    return d1, d2


def wequation_rhs(w_vals: np.ndarray, mesh: np.ndarray, s: float, params):
    """Right-hand side of the rescaled evolution equation applied to w,
    with finite-difference derivatives."""
    lam = 1.0 + 1j * params.delta
    I = scaling_factor(s, params.k)
    d1, d2 = fd_first_second(w_vals, mesh)
    drift = -mesh * d1 / (2.0 * params.k)
    react = lam * (np.abs(w_vals) ** (params.p - 1.0)) * w_vals
    return I ** (-2.0) * d2 + drift - (lam / (params.p - 1.0)) * w_vals + react


def substitution_dsq(q_vals, mesh, b, theta, bprime, thetaprime, s, params):
    """Implied time derivative of the perturbation, from the gauge ansatz.

    Build w from (q, b, theta), apply the w-equation, then undo the chain
    rule through the explicit b-derivatives of the profile pair.  The result
    is what d/ds q must equal if the term-by-term assembly is correct.
    """
    lam = 1.0 + 1j * params.delta
    fb = profile_f(b, mesh, params)
    eb = profile_e(b, mesh, params)
    phase = np.exp(1j * theta)
    w = phase * fb * (1.0 + eb * q_vals)
    W = wequation_rhs(w, mesh, s, params)
    y2k = mesh ** (2 * params.k)
    dfb = -(lam / (params.p - 1.0)) * y2k * fb * eb
    deb = -y2k * eb**2
    dbpart = phase * (dfb * (1.0 + eb * q_vals) + fb * deb * q_vals)
    return (W - 1j * thetaprime * w - bprime * dbpart) * np.exp(-1j * theta) / (fb * eb)
