"""Drift operators, Mehler kernels, and the spectral gap measurement.

The linear backbone of the frame dynamics is the drift operator

    L0_s q = I^{-2} q'' - (y/2k) q',

together with its shifted version L_s = L0_s + 1 and the real-linear
perturbation Ldelta_s = L0_s + (1+i*delta) Re(.).  On the adapted basis the
operators act through a lower-triangular two-step ladder,

    L_s H_m = (1 - m/2k) H_m + m(m-1)(1-1/k) I^{-2} H_{m-2},

so eigenvalues sit on 1 - m/2k (with identity) or -m/2k (drift only).

The propagator of the drift flow from frame time sigma to s is the Mehler
kernel

    K0_{s,sigma}(y, z) = F(e^{-(s-sigma)/2k} y - z),
    F(xi) = (L/sqrt(4 pi)) exp(-L^2 xi^2 / 4),
    L^2 = I(sigma)^2 / (1 - e^{-(s-sigma)}),

and K_{s,sigma} = e^{s-sigma} K0_{s,sigma} propagates the shifted flow.  On
the orthogonal complement of the first few modes the shifted flow contracts
at the gap rate -M/2k = -p/(p-1); measuring that decay is what
measure_spectral_gap does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import GridFunction, Parameters, scaling_factor
from .spectral import (
    GH_NODES,
    hermite_H,
    norm_minus,
    project_Qn,
)

__all__ = [
    "MehlerKernel",
    "fd_derivatives",
    "apply_L0s",
    "apply_Ls",
    "apply_Ldelta",
    "jordan_closed",
    "mehler_propagate",
    "semigroup_consistency",
    "measure_spectral_gap",
    "random_remainder",
]

KERNEL_N_STD = 14.0  # quadrature window half-width in kernel standard deviations
KERNEL_NODES = 801  # trapezoid nodes across the window


# --- finite-difference application of the drift operators -------------------


def fd_derivatives(q: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    """Second-order first and second y-derivatives on a uniform mesh.

    Interior points use centered stencils; the two boundary points use
    one-sided second-order stencils and should be treated as less accurate.
    """
    h = np.diff(q.mesh)
    if not np.allclose(h, h[0], rtol=1e-12, atol=0.0):
        raise ValueError("finite differences require a uniform mesh")
    dy = float(h[0])
    v = q.values
    d1 = np.empty_like(v)
    d2 = np.empty_like(v)
    d1[1:-1] = (v[2:] - v[:-2]) / (2.0 * dy)
    d2[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dy ** 2
    d1[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * dy)
    d1[-1] = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * dy)
    d2[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / dy ** 2
    d2[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / dy ** 2
    return d1, d2


def apply_L0s(q: GridFunction, s: float, k: int) -> GridFunction:
    """Drift operator I^{-2} q'' - (y/2k) q' by finite differences."""
    d1, d2 = fd_derivatives(q)
    I2 = scaling_factor(s, k) ** 2
    return GridFunction(q.mesh, d2 / I2 - q.mesh / (2.0 * k) * d1)


def apply_Ls(q: GridFunction, s: float, k: int) -> GridFunction:
    """Shifted drift operator L_s = L0_s + identity."""
    out = apply_L0s(q, s, k)
    return GridFunction(q.mesh, out.values + q.values)


def apply_Ldelta(q: GridFunction, s: float, params: Parameters) -> GridFunction:
    """Real-linear operator L0_s + (1 + i*delta) Re(.)."""
    out = apply_L0s(q, s, params.k)
    return GridFunction(q.mesh, out.values + (1.0 + 1j * params.delta) * q.values.real)


def jordan_closed(m: int, y: np.ndarray, s: float, k: int, variant: str = "with-identity") -> np.ndarray:
    """Closed form of the drift ladder action on H_m.

    variant "with-identity" gives L_s H_m, "drift-only" gives L0_s H_m; both
    share the two-step coupling m(m-1)(1-1/k) I^{-2} H_{m-2}.
    """
    if variant not in ("with-identity", "drift-only"):
        raise ValueError(f"unknown variant {variant!r}")
    lead = 1.0 - m / (2.0 * k) if variant == "with-identity" else -m / (2.0 * k)
    out = lead * hermite_H(m, y, s, k)
    if m >= 2:
        I2 = scaling_factor(s, k) ** 2
        out = out + m * (m - 1) * (1.0 - 1.0 / k) / I2 * hermite_H(m - 2, y, s, k)
    return out


# --- Mehler kernel ----------------------------------------------------------


@dataclass(frozen=True)
class MehlerKernel:
    """Propagation kernel of the drift flow from time sigma to time s."""

    sigma: float
    s: float
    k: int

    def __post_init__(self) -> None:
        if self.s <= self.sigma:
            raise ValueError("kernel requires s > sigma")

    @property
    def delta_s(self) -> float:
        return self.s - self.sigma

    @property
    def L2(self) -> float:
        """Squared sharpness L^2 = I(sigma)^2 / (1 - e^{-(s-sigma)})."""
        return scaling_factor(self.sigma, self.k) ** 2 / (-math.expm1(-self.delta_s))

    @property
    def std(self) -> float:
        """Standard deviation sqrt(2/L^2) of the Gaussian bump F."""
        return math.sqrt(2.0 / self.L2)

    def bump(self, xi: np.ndarray) -> np.ndarray:
        """F(xi) = (L / sqrt(4 pi)) exp(-L^2 xi^2 / 4); integrates to one."""
        L2 = self.L2
        return math.sqrt(L2 / (4.0 * math.pi)) * np.exp(-0.25 * L2 * np.asarray(xi) ** 2)

    def K0(self, y, z) -> np.ndarray:
        """Drift-only kernel K0(y, z) = F(e^{-(s-sigma)/2k} y - z)."""
        mu = math.exp(-self.delta_s / (2.0 * self.k))
        return self.bump(mu * np.asarray(y) - np.asarray(z))

    def K(self, y, z) -> np.ndarray:
        """Shifted-flow kernel e^{s-sigma} K0(y, z)."""
        return math.exp(self.delta_s) * self.K0(y, z)


def mehler_propagate(
    q,
    sigma: float,
    s: float,
    k: int,
    variant: str = "drift-only",
    out_mesh: np.ndarray | None = None,
    n_window: int = KERNEL_NODES,
    n_std: float = KERNEL_N_STD,
) -> GridFunction:
    """Apply the Mehler kernel to q by windowed trapezoid quadrature.

    q may be a callable of y (evaluated exactly wherever the window needs it)
    or a GridFunction (cubic resampling; the output mesh is restricted to
    points whose quadrature window fits inside the mesh of q).
    """
    if variant not in ("drift-only", "with-identity"):
        raise ValueError(f"unknown variant {variant!r}")
    ker = MehlerKernel(sigma=sigma, s=s, k=k)
    mu = math.exp(-ker.delta_s / (2.0 * k))
    half_width = n_std * ker.std

    if out_mesh is None:
        if isinstance(q, GridFunction):
            out_mesh = q.mesh
        else:
            raise ValueError("out_mesh is required when q is a callable")
    out_mesh = np.asarray(out_mesh, dtype=float)
    centers = mu * out_mesh

    if isinstance(q, GridFunction):
        ok = (centers - half_width >= q.mesh[0]) & (centers + half_width <= q.mesh[-1])
        if not np.any(ok):
            raise ValueError("no output point has a full quadrature window inside the mesh")
        out_mesh = out_mesh[ok]
        centers = centers[ok]

    offsets = np.linspace(-half_width, half_width, n_window)
    du = offsets[1] - offsets[0]
    wt = ker.bump(offsets) * du
    wt[0] *= 0.5
    wt[-1] *= 0.5

    zpts = centers[:, None] + offsets[None, :]
    if isinstance(q, GridFunction):
        qz = q.sample(zpts.ravel()).reshape(zpts.shape)
    else:
        qz = np.asarray(q(zpts), dtype=complex)
    vals = qz @ wt
    if variant == "with-identity":
        vals = vals * math.exp(ker.delta_s)
    return GridFunction(out_mesh, vals)


def semigroup_consistency(
    q,
    sigma: float,
    s: float,
    k: int,
    ds: float = 1e-3,
    out_mesh: np.ndarray | None = None,
    variant: str = "with-identity",
) -> float:
    """Defect of d/ds (K q) = L_s (K q), sup-normed and relative.

    The s-derivative is a centered difference across ds; the operator is
    applied by finite differences in y.  The comparison window drops the
    outermost mesh points, where one-sided stencils live.
    """
    v_mid = mehler_propagate(q, sigma, s, k, variant=variant, out_mesh=out_mesh)
    mesh = v_mid.mesh
    v_plus = mehler_propagate(q, sigma, s + ds, k, variant=variant, out_mesh=mesh)
    v_minus = mehler_propagate(q, sigma, s - ds, k, variant=variant, out_mesh=mesh)
    common = np.intersect1d(v_plus.mesh, v_minus.mesh)
    common = np.intersect1d(common, mesh)
    vp = v_plus.sample(common)
    vm = v_minus.sample(common)
    vmid = GridFunction(common, v_mid.sample(common))
    dv = (vp - vm) / (2.0 * ds)
    if variant == "with-identity":
        Lv = apply_Ls(vmid, s, k)
    else:
        Lv = apply_L0s(vmid, s, k)
    resid = np.abs(dv - Lv.values)[2:-2]
    scale = max(1.0, float(np.max(np.abs(vmid.values))))
    return float(np.max(resid)) / scale


# --- spectral gap -----------------------------------------------------------


def measure_spectral_gap(
    q_minus,
    sigma: float,
    taus,
    params: Parameters,
    variant: str = "drift-only",
    out_mesh: np.ndarray | None = None,
    details: dict | None = None,
) -> float:
    """Least-squares decay rate of log |K0 q_minus|_tau against tau - sigma.

    q_minus must be orthogonal to H_0..H_Mfloor at time sigma (checked by
    re-projection); taus is an increasing collection of at least six target
    times.  Returns the fitted slope; the expected value is -M/2k for the
    drift-only variant and -M/2k + 1 with the identity shift.
    """
    taus = np.asarray(sorted(taus), dtype=float)
    if taus.size < 6:
        raise ValueError("need at least six propagation times for the fit")
    if taus[0] <= sigma:
        raise ValueError("all taus must exceed sigma")
    if out_mesh is None:
        out_mesh = q_minus.mesh if isinstance(q_minus, GridFunction) else np.linspace(-10.0, 10.0, 2049)

    scale = 1.0
    if isinstance(q_minus, GridFunction):
        scale = max(scale, float(np.max(np.abs(q_minus.values))))
    else:
        scale = max(scale, float(np.max(np.abs(q_minus(out_mesh)))))
    for n in range(params.Mfloor + 1):
        Qn = project_Qn(q_minus, n, sigma, params.k)
        if abs(Qn) > 1e-7 * scale:
            raise ValueError(f"input is not orthogonal to mode {n}: Q_{n} = {Qn:.3e}")

    q_grid = q_minus
    if not isinstance(q_minus, GridFunction):
        # sample the callable once on a mesh wide enough to hold every
        # quadrature window; re-evaluating it under each kernel dominates
        # the runtime otherwise
        widest = MehlerKernel(sigma=sigma, s=float(taus[-1]), k=params.k)
        reach = float(np.max(np.abs(out_mesh))) + KERNEL_N_STD * widest.std + 1.0
        wide = np.linspace(-reach, reach, 4097)
        q_grid = GridFunction(wide, np.asarray(q_minus(wide), dtype=complex))

    lognorms = []
    for tau in taus:
        v = mehler_propagate(q_grid, sigma, tau, params.k, variant=variant, out_mesh=out_mesh)
        lognorms.append(math.log(norm_minus(v, tau, params)))
    deltas = taus - sigma
    slope, intercept = np.polyfit(deltas, lognorms, 1)
    if details is not None:
        details["deltas"] = deltas
        details["lognorms"] = np.asarray(lognorms)
        details["intercept"] = float(intercept)
    return float(slope)


def random_remainder(params: Parameters, sigma: float, rng: np.random.Generator, degree: int = 10):
    """Random smooth function orthogonal to the tracked modes at time sigma.

    Draws a random polynomial times a sub-weight Gaussian in z = I(sigma) y,
    then subtracts its projection onto H_0..H_Mfloor.  Returns a callable of
    y; its weighted remainder norm is finite because the subtracted span has
    degree at most Mfloor <= M.
    """
    I = scaling_factor(sigma, params.k)
    coeffs = rng.standard_normal(degree + 1) + 1j * rng.standard_normal(degree + 1)

    def raw(y):
        z = I * np.asarray(y, dtype=float)
        out = np.zeros_like(z, dtype=complex)
        for c in coeffs[::-1]:
            out = out * z + c
        return out * np.exp(-(z ** 2) / 8.0)

    proj = [project_Qn(raw, n, sigma, params.k, nquad=GH_NODES) for n in range(params.Mfloor + 1)]

    def q_minus(y):
        out = np.asarray(raw(y), dtype=complex).copy()
        for n, c in enumerate(proj):
            out -= c * hermite_H(n, y, sigma, params.k)
        return out

    return q_minus
