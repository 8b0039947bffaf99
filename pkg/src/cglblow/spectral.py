"""Time-dependent Hermite basis, Gaussian quadrature, and mode splitting.

Everything here lives under the drifting Gaussian measure

    rho_s(y) = (I(s)/sqrt(4 pi)) exp(-I(s)^2 y^2 / 4),    I(s) = e^{(s/2)(1-1/k)},

which is the invariant measure of the drift operator at frame time s.  The
adapted polynomial basis is monic and rescaled,

    H_m(y, s) = I^{-m} h_m(I y),
    h_m(z) = sum_l m!/(l!(m-2l)!) (-1)^l z^{m-2l},

so that <H_n, H_m>_s = delta_nm * I^{-2n} 2^n n! and y*H_m = H_{m+1}
+ 2m I^{-2} H_{m-1}.  Two quadrature routes are used and kept distinct:

* analytic integrands go through Gauss-Hermite nodes (exact on polynomials),
* sampled grid functions go through a fine trapezoid rule on the fixed
  z = I(s)*y grid, |z| <= 12, where the weight does not move with s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import ComplexSplit, GridFunction, Parameters, delta_decompose, scaling_factor

__all__ = [
    "MAX_MODE",
    "QuadratureDomainError",
    "Weight",
    "ModeDecomposition",
    "hermite_h",
    "hermite_H",
    "hermite_H_deriv",
    "weight_rho",
    "norm_Hn_sq",
    "weighted_inner",
    "project_Qn",
    "split_modes",
    "reconstruct_modes",
    "norm_s",
    "norm_minus",
    "norm_LM",
    "monomial_H_coeffs",
]

MAX_MODE = 40  # larger Hermite indices are out of scope
Z_MAX = 12.0  # half-width of the fixed quadrature window in z = I*y
N_Z = 2048  # trapezoid nodes on [-Z_MAX, Z_MAX]
GH_NODES = 160  # Gauss-Hermite order for analytic integrands
TAIL_TOL = 1e-9  # acceptable truncated mass of the base weight


class QuadratureDomainError(ValueError):
    """Raised when a grid function does not cover enough of the weight."""


# --- basis polynomials ------------------------------------------------------


@lru_cache(maxsize=None)
def _h_coeffs(m: int) -> tuple[int, ...]:
    """Coefficients c_l of h_m(z) = sum_l c_l z^(m-2l), exact integers."""
    if m < 0 or m > MAX_MODE:
        raise ValueError(f"mode index must be in 0..{MAX_MODE}, got {m}")
    out = []
    for l in range(m // 2 + 1):
        out.append((-1) ** l * math.factorial(m) // (math.factorial(l) * math.factorial(m - 2 * l)))
    return tuple(out)


def hermite_h(m: int, z):
    """Monic Hermite polynomial h_m for the weight exp(-z^2/4)."""
    z = np.asarray(z, dtype=float)
    coeffs = _h_coeffs(m)
    out = np.zeros_like(z)
    for l, c in enumerate(coeffs):
        out = out + c * z ** (m - 2 * l)
    if out.ndim == 0:
        return float(out)
    return out


def hermite_H(m: int, y, s: float, k: int):
    """Frame basis polynomial H_m(y, s) = I^{-m} h_m(I y), evaluated stably."""
    y = np.asarray(y, dtype=float)
    I2 = scaling_factor(s, k) ** 2
    coeffs = _h_coeffs(m)
    out = np.zeros_like(y)
    for l, c in enumerate(coeffs):
        out = out + c * I2 ** (-l) * y ** (m - 2 * l)
    if out.ndim == 0:
        return float(out)
    return out


def hermite_H_deriv(m: int, y, s: float, k: int):
    """d/dy of H_m(y, s); equals m * H_{m-1} plus the lower Jordan tail.

    Differentiating the closed form termwise is exact and avoids chaining
    recurrences: d/dy H_m = sum_l c_l (m-2l) I^{-2l} y^{m-2l-1}.
    """
    y = np.asarray(y, dtype=float)
    I2 = scaling_factor(s, k) ** 2
    coeffs = _h_coeffs(m)
    out = np.zeros_like(y)
    for l, c in enumerate(coeffs):
        power = m - 2 * l
        if power >= 1:
            out = out + c * power * I2 ** (-l) * y ** (power - 1)
    if out.ndim == 0:
        return float(out)
    return out


def weight_rho(y, s: float, k: int):
    """Density of the drifting Gaussian measure rho_s."""
    y = np.asarray(y, dtype=float)
    I = scaling_factor(s, k)
    return I / math.sqrt(4.0 * math.pi) * np.exp(-0.25 * (I * y) ** 2)


def norm_Hn_sq(n: int, s: float, k: int) -> float:
    """Closed form <H_n, H_n>_s = I^{-2n} 2^n n!."""
    I = scaling_factor(s, k)
    return I ** (-2 * n) * 2.0 ** n * math.factorial(n)


@dataclass(frozen=True)
class Weight:
    """The measure rho_s bundled with its frame data."""

    s: float
    k: int

    @property
    def I(self) -> float:
        return scaling_factor(self.s, self.k)

    def rho(self, y):
        return weight_rho(y, self.s, self.k)

    def basis(self, m: int, y):
        return hermite_H(m, y, self.s, self.k)

    def norm_sq(self, n: int) -> float:
        return norm_Hn_sq(n, self.s, self.k)


# --- quadrature -------------------------------------------------------------


@lru_cache(maxsize=8)
def _gauss_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights for integral F -> sum w_i F(z_i) of F against rho-hat.

    rho-hat(z) dz = exp(-z^2/4)/sqrt(4 pi) dz; substituting z = 2x reduces to
    the standard Gauss-Hermite pair with weights normalized by sqrt(pi).
    """
    x, w = np.polynomial.hermite.hermgauss(n)
    return 2.0 * x, w / math.sqrt(math.pi)


@lru_cache(maxsize=8)
def _trapezoid_grid(z_lim: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform z grid with trapezoid weights including the base density."""
    z = np.linspace(-z_lim, z_lim, n)
    dz = z[1] - z[0]
    w = np.full(n, dz)
    w[0] *= 0.5
    w[-1] *= 0.5
    w = w * np.exp(-0.25 * z ** 2) / math.sqrt(4.0 * math.pi)
    return z, w


def _grid_z_window(q: GridFunction, I: float) -> float:
    """Largest symmetric z window the mesh of q can serve."""
    reach = I * min(-q.mesh[0], q.mesh[-1])
    z_lim = min(Z_MAX, reach)
    tail = math.erfc(0.5 * z_lim)  # mass of rho-hat beyond the window
    if tail > TAIL_TOL:
        raise QuadratureDomainError(
            f"mesh covers |z| <= {z_lim:.3f} only; truncated weight mass "
            f"{tail:.2e} exceeds {TAIL_TOL:.0e}"
        )
    return z_lim


def _eval_on_z(f, z: np.ndarray, I: float) -> np.ndarray:
    """Evaluate a grid function or callable of y at the z-grid points."""
    y = z / I
    if isinstance(f, GridFunction):
        return f.sample(y)
    return np.asarray(f(y), dtype=complex)


def weighted_inner(f, g, s: float, k: int, nquad: int = GH_NODES) -> complex:
    """Weighted pairing integral(f * g * rho_s dy), no conjugation.

    f and g may be GridFunctions or callables of y.  Pure callables are
    integrated with Gauss-Hermite nodes (exact for polynomial products);
    anything sampled on a mesh goes through the fixed trapezoid z-grid with
    cubic resampling, and the mesh must cover the weight up to a tail of
    TAIL_TOL.
    """
    I = scaling_factor(s, k)
    grids = [h for h in (f, g) if isinstance(h, GridFunction)]
    if not grids:
        z, w = _gauss_nodes(nquad)
        return complex(np.sum(w * _eval_on_z(f, z, I) * _eval_on_z(g, z, I)))
    z_lim = min(_grid_z_window(h, I) for h in grids)
    z, w = _trapezoid_grid(z_lim, N_Z)
    return complex(np.sum(w * _eval_on_z(f, z, I) * _eval_on_z(g, z, I)))


def project_Qn(q, n: int, s: float, k: int, nquad: int = GH_NODES) -> complex:
    """Mode coefficient Q_n = <q, H_n>_s / <H_n, H_n>_s."""
    Hn = lambda y: hermite_H(n, y, s, k)
    return weighted_inner(q, Hn, s, k, nquad=nquad) / norm_Hn_sq(n, s, k)


# --- mode decomposition -----------------------------------------------------


@dataclass
class ModeDecomposition:
    """q split into tracked modes and the spectral remainder.

    Qn[n] is the complex coefficient of H_n for n <= Mfloor; hat_q/check_q are
    its hat/check parts; q_minus is q minus the tracked span, sampled on the
    mesh of q.
    """

    s: float
    Qn: np.ndarray
    hat_q: np.ndarray
    check_q: np.ndarray
    q_minus: GridFunction


def split_modes(q: GridFunction, s: float, params: Parameters) -> ModeDecomposition:
    """Project q onto H_0..H_Mfloor and peel off the remainder."""
    I = scaling_factor(s, params.k)
    nmodes = params.Mfloor + 1
    z_lim = _grid_z_window(q, I)
    z, w = _trapezoid_grid(z_lim, N_Z)
    qz = _eval_on_z(q, z, I)
    Qn = np.empty(nmodes, dtype=complex)
    for n in range(nmodes):
        Hn_z = hermite_H(n, z / I, s, params.k)
        Qn[n] = np.sum(w * qz * Hn_z) / norm_Hn_sq(n, s, params.k)
    split = delta_decompose(Qn, params.delta)
    tracked = np.zeros_like(q.values)
    for n in range(nmodes):
        tracked = tracked + Qn[n] * hermite_H(n, q.mesh, s, params.k)
    q_minus = GridFunction(q.mesh, q.values - tracked)
    return ModeDecomposition(s=s, Qn=Qn, hat_q=split.hat, check_q=split.check, q_minus=q_minus)


def reconstruct_modes(dec: ModeDecomposition, mesh: np.ndarray, k: int) -> GridFunction:
    """Sum of the tracked modes of a decomposition on a given mesh."""
    vals = np.zeros(mesh.size, dtype=complex)
    for n, c in enumerate(dec.Qn):
        vals = vals + c * hermite_H(n, mesh, dec.s, k)
    return GridFunction(mesh, vals)


# --- norms ------------------------------------------------------------------


def norm_minus(q_minus: GridFunction, s: float, params: Parameters) -> float:
    """Weighted remainder norm sup |q_minus| / (I^{-M} + |y|^M)."""
    I = scaling_factor(s, params.k)
    denom = I ** (-params.M) + np.abs(q_minus.mesh) ** params.M
    return float(np.max(np.abs(q_minus.values) / denom))


def norm_s(q, s: float, params: Parameters) -> float:
    """Full frame norm: sum of |Q_n| over tracked modes plus the remainder.

    Accepts a GridFunction (decomposed internally) or a ready
    ModeDecomposition.
    """
    dec = q if isinstance(q, ModeDecomposition) else split_modes(q, s, params)
    return float(np.sum(np.abs(dec.Qn))) + norm_minus(dec.q_minus, s, params)


def norm_LM(q: GridFunction, params: Parameters) -> float:
    """Polynomially weighted sup norm sup |q| / (1 + |y|^M)."""
    denom = 1.0 + np.abs(q.mesh) ** params.M
    return float(np.max(np.abs(q.values) / denom))


# --- change of basis --------------------------------------------------------


@lru_cache(maxsize=None)
def _monomial_h_table(m: int) -> tuple[int, ...]:
    """Exact integers a_n with z^m = sum_n a_n h_n(z) (a_n = 0 for n > m).

    Built from the recurrence z h_n = h_{n+1} + 2 n h_{n-1}.
    """
    if m < 0 or m > MAX_MODE:
        raise ValueError(f"monomial degree must be in 0..{MAX_MODE}, got {m}")
    coeffs = {0: 1}
    for _ in range(m):
        nxt: dict[int, int] = {}
        for n, a in coeffs.items():
            nxt[n + 1] = nxt.get(n + 1, 0) + a
            if n >= 1:
                nxt[n - 1] = nxt.get(n - 1, 0) + 2 * n * a
        coeffs = nxt
    return tuple(coeffs.get(n, 0) for n in range(m + 1))


def monomial_H_coeffs(m: int, s: float, k: int) -> np.ndarray:
    """Coefficients c_n with y^m = sum_n c_n H_n(y, s).

    Only parities matching m are populated; c_n = a_n * I^{n-m} where a_n is
    the fixed integer table for z^m, so the off-degree entries are small of
    order I^{-(m-n)}.
    """
    table = _monomial_h_table(m)
    I = scaling_factor(s, k)
    return np.array([a * I ** (n - m) for n, a in enumerate(table)], dtype=float)
