"""Model parameters, similarity variables, and blow-up profiles.

The object of study is the focusing complex Ginzburg-Landau equation

    u_t = u_xx + (1 + i*delta) |u|^(p-1) u,      u : R x [0,T) -> C,

near a flat (type-II) blow-up at time T.  Solutions are analysed in the
similarity frame

    w(y, s) = (T - t)^((1+i*delta)/(p-1)) u(x, t),
    y = x / (T - t)^(1/(2k)),     s = -log(T - t),

where the anisotropic scaling exponent 1/(2k) (k >= 2) makes room for the
quartic-well family of stationary profiles

    f_b(y) = (p - 1 + b y^(2k))^(-(1+i*delta)/(p-1)),
    e_b(y) = (p - 1 + b y^(2k))^(-1).

The frame carries the slowly growing factor I(s) = exp((s/2)(1 - 1/k)) that
measures the mismatch between the parabolic scale and the profile scale.

All complex quantities are split into a "hat" and a "check" part adapted to
the phase direction of the nonlinearity:

    z = hat(z) * (1 + i*delta) + i * check(z),
    hat(z) = Re z,   check(z) = Im z - delta * Re z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = [
    "Parameters",
    "Frame",
    "ComplexSplit",
    "GridFunction",
    "DEFAULT_PARAMS",
    "scaling_factor",
    "profile_f",
    "profile_e",
    "similarity_time",
    "physical_time",
    "to_similarity",
    "from_similarity",
    "delta_decompose",
    "delta_recompose",
]


@dataclass(frozen=True)
class Parameters:
    """Model and bookkeeping constants.

    p      : nonlinearity power, p > 1
    delta  : phase parameter of the nonlinearity (beta = 0 throughout)
    k      : half the profile degree; the well is b*y^(2k), k >= 2 integer
    b0     : target value of the profile coefficient b
    theta0 : target value of the gauge phase
    gamma  : smallness exponent; perturbations are measured against I^(-gamma)
    bigA   : slack factor allowed on the check part of the remainder
    """

    p: float = 3.0
    delta: float = 1.0
    k: int = 2
    b0: float = 1.0
    theta0: float = 0.0
    gamma: float = 0.05
    bigA: float = 20.0

    def __post_init__(self) -> None:
        if self.p <= 1:
            raise ValueError(f"need p > 1, got p={self.p}")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError(f"need integer k >= 2, got k={self.k}")
        if self.b0 <= 0:
            raise ValueError(f"need b0 > 0, got b0={self.b0}")
        if self.gamma <= 0:
            raise ValueError(f"need gamma > 0, got gamma={self.gamma}")
        if self.bigA < 1:
            raise ValueError(f"need bigA >= 1, got bigA={self.bigA}")
        if self.gamma >= min(0.5, 1.0 / (2.0 * self.k)):
            raise ValueError("gamma must be small: gamma < min(1/2, 1/(2k))")

    @property
    def M(self) -> float:
        """Degree of the weighted sup norm, M = 2kp/(p-1); exceeds 2k."""
        return 2.0 * self.k * self.p / (self.p - 1.0)

    @property
    def Mfloor(self) -> int:
        """Index of the last tracked spectral mode."""
        return int(math.floor(self.M))

    @property
    def lam(self) -> complex:
        """Shorthand for the complex exponent (1 + i*delta)/(p - 1)."""
        return (1.0 + 1j * self.delta) / (self.p - 1.0)


DEFAULT_PARAMS = Parameters()


@dataclass(frozen=True)
class Frame:
    """A point on the similarity-time axis, s = -log(T - t)."""

    s: float
    T: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.s) or not math.isfinite(self.T):
            raise ValueError("Frame requires finite s and T")

    @property
    def t(self) -> float:
        return self.T - math.exp(-self.s)


@dataclass(frozen=True)
class ComplexSplit:
    """Hat/check components of a complex quantity (scalar or array)."""

    hat: object
    check: object


class GridFunction:
    """Complex-valued function sampled on a strictly increasing 1-d mesh."""

    __slots__ = ("mesh", "values", "_spline_re", "_spline_im")

    def __init__(self, mesh: np.ndarray, values: np.ndarray) -> None:
        mesh = np.asarray(mesh, dtype=float)
        values = np.asarray(values, dtype=complex)
        if mesh.ndim != 1 or mesh.shape != values.shape:
            raise ValueError("mesh and values must be 1-d arrays of equal length")
        if mesh.size < 8:
            raise ValueError("mesh too short")
        if not np.all(np.diff(mesh) > 0):
            raise ValueError("mesh must be strictly increasing")
        self.mesh = mesh
        self.values = values
        self._spline_re = None
        self._spline_im = None

    def __len__(self) -> int:
        return self.mesh.size

    def copy(self) -> "GridFunction":
        return GridFunction(self.mesh, self.values.copy())

    @property
    def spacing(self) -> float:
        return float(self.mesh[1] - self.mesh[0])

    def sample(self, x: np.ndarray) -> np.ndarray:
        """Cubic-spline evaluation at points inside the mesh hull."""
        if self._spline_re is None:
            self._spline_re = CubicSpline(self.mesh, self.values.real)
            self._spline_im = CubicSpline(self.mesh, self.values.imag)
        x = np.asarray(x, dtype=float)
        return self._spline_re(x) + 1j * self._spline_im(x)


# --- similarity frame -------------------------------------------------------


def scaling_factor(s: float, k: int) -> float:
    """Frame mismatch factor I(s) = exp((s/2)(1 - 1/k))."""
    return math.exp(0.5 * s * (1.0 - 1.0 / k))


def profile_well(b: float, y: np.ndarray, params: Parameters):
    """The positive well p - 1 + b y^(2k) underlying both profiles."""
    y = np.asarray(y, dtype=float)
    return params.p - 1.0 + b * y ** (2 * params.k)


def profile_e(b: float, y, params: Parameters = DEFAULT_PARAMS):
    """Real profile e_b(y) = (p - 1 + b y^(2k))^(-1); equals |f_b|^(p-1)."""
    if b <= 0:
        raise ValueError(f"need b > 0, got b={b}")
    return 1.0 / profile_well(b, y, params)


def profile_f(b: float, y, params: Parameters = DEFAULT_PARAMS):
    """Complex profile f_b(y) = (p - 1 + b y^(2k))^(-(1+i delta)/(p-1)).

    The well is real positive, so the principal branch is the natural one:
    f_b = exp(-lam * log(well)) with lam = (1+i delta)/(p-1).
    """
    if b <= 0:
        raise ValueError(f"need b > 0, got b={b}")
    well = profile_well(b, y, params)
    return np.exp(-params.lam * np.log(well))


def similarity_time(t: float, T: float) -> float:
    if t >= T:
        raise ValueError(f"need t < T, got t={t}, T={T}")
    return -math.log(T - t)


def physical_time(s: float, T: float) -> float:
    return T - math.exp(-s)


def to_similarity(
    u: GridFunction,
    t: float,
    T: float,
    params: Parameters = DEFAULT_PARAMS,
    target_mesh: np.ndarray | None = None,
) -> GridFunction:
    """Map u(., t) to the similarity frame w(., s) at s = -log(T - t).

    The similarity mesh is x / (T-t)^(1/2k).  If target_mesh is given the
    result is resampled onto it by cubic interpolation (the target must sit
    inside the image of the source mesh); otherwise the scaled mesh is used
    directly and the map is exact.
    """
    if t >= T:
        raise ValueError(f"need t < T, got t={t}, T={T}")
    tau = T - t
    amp = tau ** params.lam  # complex power of a positive real
    ymesh = u.mesh / tau ** (1.0 / (2 * params.k))
    w = GridFunction(ymesh, amp * u.values)
    if target_mesh is None:
        return w
    target_mesh = np.asarray(target_mesh, dtype=float)
    if target_mesh[0] < ymesh[0] or target_mesh[-1] > ymesh[-1]:
        raise ValueError("target_mesh exceeds the mapped domain")
    return GridFunction(target_mesh, w.sample(target_mesh))


def from_similarity(
    w: GridFunction,
    s: float,
    T: float,
    params: Parameters = DEFAULT_PARAMS,
    target_mesh: np.ndarray | None = None,
) -> GridFunction:
    """Inverse of to_similarity: reconstruct u(., t) at t = T - exp(-s)."""
    tau = math.exp(-s)
    amp = tau ** (-params.lam)
    xmesh = w.mesh * tau ** (1.0 / (2 * params.k))
    u = GridFunction(xmesh, amp * w.values)
    if target_mesh is None:
        return u
    target_mesh = np.asarray(target_mesh, dtype=float)
    if target_mesh[0] < xmesh[0] or target_mesh[-1] > xmesh[-1]:
        raise ValueError("target_mesh exceeds the mapped domain")
    return GridFunction(target_mesh, u.sample(target_mesh))


# --- hat/check splitting ----------------------------------------------------


def delta_decompose(z, delta: float) -> ComplexSplit:
    """Split z = hat*(1+i*delta) + i*check into (hat, check).

    Works on scalars and arrays; hat = Re z, check = Im z - delta*Re z.
    """
    z = np.asarray(z, dtype=complex)
    hat = z.real.copy()
    check = z.imag - delta * z.real
    if hat.ndim == 0:
        return ComplexSplit(float(hat), float(check))
    return ComplexSplit(hat, check)


def delta_recompose(split: ComplexSplit, delta: float):
    """Inverse of delta_decompose."""
    hat = np.asarray(split.hat, dtype=float)
    check = np.asarray(split.check, dtype=float)
    z = hat * (1.0 + 1j * delta) + 1j * check
    if z.ndim == 0:
        return complex(z)
    return z
