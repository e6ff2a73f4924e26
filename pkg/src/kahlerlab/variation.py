"""Families of discs ``{(t, z): |z| < r(t)}`` and plurisubharmonicity of
fiberwise canonical potentials.

The complex Hessian in ``(t, z)`` is assembled from real fourth-order central
differences: with ``p = x_p + i y_p``,
``d_p dbar_q = 1/4 [(d_xp d_xq + d_yp d_yq) + i (d_xp d_yq - d_yp d_xq)]``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bergman import MomentSequence, compute_moments, log_kernel
from .errors import OutsideFiber, StencilOutsideDomain
from .geometry import RadialPotential

FIBER_MARGIN = 0.999
SCAN_FRACTION = 0.95


@dataclass(frozen=True)
class DiscFamily:
    """Discs of radius ``r(t)`` over the parameter disc ``|t| < rho``.

    ``potential_kind`` is ``ke_glued``, ``bergman_log`` or a callable
    ``Phi(t, z)`` taking complex arrays.  For ``bergman_log`` the fiberwise
    weight is ``weight(t)`` (a radial potential on the fiber, or ``None`` for
    the unweighted kernel) raised to ``k - 1``.
    """

    radius: Callable
    potential_kind: str | Callable = "ke_glued"
    pseudoconvex_expected: str = "yes"
    rho: float = 1.0
    k: int = 1
    weight: Callable | None = None
    label: str = ""

    def __post_init__(self):
        if not callable(self.potential_kind) and self.potential_kind not in ("ke_glued", "bergman_log"):
            raise ValueError(f"unknown potential kind {self.potential_kind!r}")
        if self.pseudoconvex_expected not in ("yes", "no", "boundary"):
            raise ValueError("pseudoconvex_expected must be yes, no or boundary")
        if self.rho <= 0 or self.k < 1:
            raise ValueError("rho must be positive and k >= 1")
        # positivity on the closed disc of radius 0.99 rho, checked on a polar sample
        rr, th = np.meshgrid(np.linspace(0, 0.99 * self.rho, 12), np.linspace(0, 2 * np.pi, 16))
        r = np.asarray(self.radius(rr * np.exp(1j * th)), dtype=float)
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            raise ValueError("radius must be finite and positive on the parameter disc")

    def r(self, t):
        return np.asarray(self.radius(np.asarray(t, dtype=complex)), dtype=float)

    def potential(self) -> Callable:
        if callable(self.potential_kind):
            return self.potential_kind
        if self.potential_kind == "ke_glued":
            return lambda t, z: glued_ke_potential(self, t, z)
        cache = FiberCache()
        return lambda t, z: relative_bergman_log(self, self.k, self.weight, t, z, cache=cache)


def radius_profile(name: str, c: float = 1.0) -> Callable:
    """Closed-form radius functions used by the fixtures."""
    if name == "shrinking":
        return lambda t: np.exp(-c * np.abs(t) ** 2)
    if name == "growing":
        return lambda t: np.exp(c * np.abs(t) ** 2)
    if name == "constant":
        return lambda t: c * np.ones_like(np.abs(t))
    raise ValueError(f"unknown radius profile {name!r}")


def glued_ke_potential(family: DiscFamily, t, z):
    """``log(2 r(t)^2 / (r(t)^2 - |z|^2)^2)``: the Poincaré potential of each fiber."""
    t, z = np.broadcast_arrays(np.asarray(t, dtype=complex), np.asarray(z, dtype=complex))
    r = family.r(t)
    if np.any(np.abs(z) >= FIBER_MARGIN * r):
        raise OutsideFiber(f"|z| must stay below {FIBER_MARGIN} r(t)")
    r2 = r * r
    out = np.log(2.0) + 2 * np.log(r) - 2 * np.log(r2 - np.abs(z) ** 2)
    return float(out) if out.ndim == 0 else out


class FiberCache:
    """Moment sequences keyed by the parameter ``t``."""

    def __init__(self):
        self._store: dict = {}

    def get(self, key, build: Callable) -> MomentSequence:
        if key not in self._store:
            self._store[key] = build()
        return self._store[key]

    def __len__(self):
        return len(self._store)


def _fiber_moments(family: DiscFamily, k: int, weight: Callable | None, t: complex,
                   eval_fraction: float) -> MomentSequence:
    r = float(family.r(t))
    s_max = r * r
    psi = None if weight is None or k == 1 else weight(t)
    if psi is None:
        log_density = lambda s, gap: np.zeros_like(np.asarray(s, dtype=float))
        exponent, breaks = 0.0, ()
    else:
        if not isinstance(psi, RadialPotential) or abs(psi.s_max - s_max) > 1e-12 * s_max:
            raise ValueError("fiber weight must be a RadialPotential on the fiber disc")
        log_density = lambda s, gap: -(k - 1) * psi(s, gap)
        exponent, breaks = (k - 1) * psi.pole, psi.breakpoints
    return compute_moments(log_density, s_max, exponent=exponent, breakpoints=breaks,
                           s_eval=eval_fraction * s_max)


def relative_bergman_log(family: DiscFamily, k: int, phi_L_family: Callable | None, t, z,
                         cache: FiberCache | None = None, eval_fraction: float = 0.95):
    """``log K_t(z)`` for the weighted Bergman space of the fiber over ``t``.

    The fiber measure is ``e^(-(k-1) psi_t) dx dy`` with ``psi_t = phi_L_family(t)``.
    """
    cache = FiberCache() if cache is None else cache
    t, z = np.broadcast_arrays(np.asarray(t, dtype=complex), np.asarray(z, dtype=complex))
    out = np.empty(t.shape)
    flat_t, flat_z, flat_out = t.ravel(), z.ravel(), out.reshape(-1)
    for tv in np.unique(flat_t):
        sel = flat_t == tv
        mom = cache.get((complex(tv), k, eval_fraction),
                        lambda: _fiber_moments(family, k, phi_L_family, complex(tv), eval_fraction))
        s = np.abs(flat_z[sel]) ** 2
        if np.any(s > mom.s_eval):
            raise OutsideFiber(f"|z|^2 beyond {eval_fraction} r(t)^2 at t={tv}")
        flat_out[sel] = log_kernel(mom, s)
    return float(out) if out.ndim == 0 else out


# fourth-order central stencils written as symmetric pairs so that constant
# data give exactly zero
def _d1(fp1, fm1, fp2, fm2, h):
    return (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h)


def _d2(f0, fp1, fm1, fp2, fm2, h):
    return (16.0 * (fp1 + fm1) - (fp2 + fm2) - 30.0 * f0) / (12.0 * h * h)


def _real_hessian(Phi: Callable, point: tuple, steps: np.ndarray) -> np.ndarray:
    """4x4 Hessian in ``(Re t, Im t, Re z, Im z)``."""
    x0 = np.array([point[0].real, point[0].imag, point[1].real, point[1].imag])
    offsets, index = [], {}

    def want(a, i, b=None, j=0):
        key = (a, i, b, j)
        if key not in index:
            x = x0.copy()
            x[a] += i * steps[a]
            if b is not None:
                x[b] += j * steps[b]
            index[key] = len(offsets)
            offsets.append(x)
        return index[key]

    base = want(0, 0)
    for a in range(4):
        for i in (1, -1, 2, -2):
            want(a, i)
        for b in range(a + 1, 4):
            for i in (1, -1, 2, -2):
                for j in (1, -1, 2, -2):
                    want(a, i, b, j)
    X = np.array(offsets)
    try:
        vals = np.asarray(Phi(X[:, 0] + 1j * X[:, 1], X[:, 2] + 1j * X[:, 3]), dtype=float)
    except OutsideFiber as exc:
        raise StencilOutsideDomain(f"stencil around {point} leaves the domain: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise StencilOutsideDomain(f"potential not finite on the stencil around {point}")
    v = lambda a, i, b=None, j=0: vals[index[(a, i, b, j)]]
    H = np.zeros((4, 4))
    for a in range(4):
        H[a, a] = _d2(vals[base], v(a, 1), v(a, -1), v(a, 2), v(a, -2), steps[a])
        for b in range(a + 1, 4):
            # d_b of the d_a-derivative, both fourth order
            inner = {j: _d1(v(a, 1, b, j), v(a, -1, b, j), v(a, 2, b, j), v(a, -2, b, j), steps[a])
                     for j in (1, -1, 2, -2)}
            H[a, b] = H[b, a] = _d1(inner[1], inner[-1], inner[2], inner[-2], steps[b])
    return H


def _complex_hessian(H: np.ndarray) -> np.ndarray:
    L = np.zeros((2, 2), dtype=complex)
    for p in range(2):
        for q in range(2):
            xp, yp, xq, yq = 2 * p, 2 * p + 1, 2 * q, 2 * q + 1
            L[p, q] = 0.25 * ((H[xp, xq] + H[yp, yq]) + 1j * (H[xp, yq] - H[yp, xq]))
    return 0.5 * (L + L.conj().T)


def default_step(family: DiscFamily | None, t: complex, z: complex) -> tuple[float, float]:
    """``(h_t, h_z)``; the fiber step keeps the stencil inside the disc."""
    if family is None:
        return 1e-3, 1e-3
    r = float(family.r(t))
    return 1e-3, 1e-3 * min(r - abs(z), 1.0)


def levi_form_fd(Phi: Callable, point: tuple, h=1e-3, full_output: bool = False):
    """Hermitian matrix ``[[Phi_tt', Phi_tz'], [Phi_zt', Phi_zz']]`` at ``(t, z)``.

    ``h`` is a step or a pair ``(h_t, h_z)``.  With ``full_output`` the entrywise
    error estimate ``|L_h - L_2h| / 15`` is returned as well.
    """
    t, z = complex(point[0]), complex(point[1])
    ht, hz = (h, h) if np.isscalar(h) else h
    if ht <= 0 or hz <= 0:
        raise ValueError("steps must be positive")
    steps = np.array([ht, ht, hz, hz], dtype=float)
    L = _complex_hessian(_real_hessian(Phi, (t, z), steps))
    if not full_output:
        return L
    L2 = _complex_hessian(_real_hessian(Phi, (t, z), 2 * steps))
    return L, np.abs(L - L2) / 15.0


@dataclass
class LeviReport:
    records: list = field(default_factory=list)
    tol: float = 1e-6
    family: str = ""

    @property
    def min_eig(self) -> float:
        return min(r["eig_min"] for r in self.records)

    @property
    def argmin(self) -> dict:
        best = min(self.records, key=lambda r: r["eig_min"])
        return {"t": [best["t"].real, best["t"].imag], "z": [best["z"].real, best["z"].imag]}

    @property
    def verdict(self) -> str:
        return "PSH_CONFIRMED" if self.min_eig >= -self.tol else "VIOLATION"

    def t_direction_extremes(self) -> tuple[float, float]:
        """Range of the ``t t'`` entry over the grid."""
        vals = [r["matrix"][0, 0].real for r in self.records]
        return min(vals), max(vals)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_re", "t_im", "z_re", "z_im", "eig_min", "eig_max"])
        for r in self.records:
            w.writerow([f"{x:.17g}" for x in (r["t"].real, r["t"].imag, r["z"].real, r["z"].imag,
                                              r["eig_min"], r["eig_max"])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        out = {"family": self.family, "verdict": self.verdict, "tol": self.tol,
               "min_eig": self.min_eig, "points": len(self.records)}
        if self.verdict == "VIOLATION":
            out["violation_at"] = self.argmin
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class ScanGrid:
    """``t`` on a square of half-width ``t_max``; ``z = f r(t) e^(i theta)`` for
    ``f`` evenly spaced in ``[0, z_fraction]``."""

    n_t: int = 9
    n_z: int = 9
    t_max: float = 0.6
    z_fraction: float = SCAN_FRACTION
    theta: float = 0.0

    def __post_init__(self):
        if self.n_t < 1 or self.n_z < 1:
            raise ValueError("grid sizes must be positive")
        if not 0 < self.z_fraction <= SCAN_FRACTION:
            raise ValueError(f"z_fraction must lie in (0, {SCAN_FRACTION}]")


def psh_scan(family: DiscFamily, grid: ScanGrid = ScanGrid(), tol: float = 1e-6,
             Phi: Callable | None = None) -> LeviReport:
    """Levi-form eigenvalues of the family potential over a ``(t, z)`` grid."""
    if grid.t_max * math.sqrt(2) >= 0.99 * family.rho:
        raise ValueError("t grid leaves the parameter disc")
    Phi = family.potential() if Phi is None else Phi
    report = LeviReport(tol=tol, family=family.label)
    ts = np.linspace(-grid.t_max, grid.t_max, grid.n_t)
    fr = np.linspace(0.0, grid.z_fraction, grid.n_z)
    for a in ts:
        for b in ts:
            t = complex(a, b)
            r = float(family.r(t))
            for f in fr:
                z = f * r * np.exp(1j * grid.theta)
                L = levi_form_fd(Phi, (t, z), default_step(family, t, z))
                eig = np.linalg.eigvalsh(L)
                report.records.append({"t": t, "z": complex(z), "matrix": L,
                                       "eig_min": float(eig[0]), "eig_max": float(eig[-1])})
    return report


def fiber_uniform_bound_check(family: DiscFamily, t_samples: Sequence[complex],
                              points: int = 64) -> dict:
    """``u_t = Phi_t + 2 log(r(t)^2 - |z|^2)`` on each sampled fiber.

    For the glued Poincaré potential ``u_t`` is the constant ``log(2 r(t)^2)``;
    the report gives the per-fiber sup, the per-fiber oscillation and the
    bound over all samples.
    """
    rows = []
    for t in t_samples:
        t = complex(t)
        r = float(family.r(t))
        z = np.linspace(0.0, SCAN_FRACTION, points) * r
        u = glued_ke_potential(family, np.full(points, t), z) + 2 * np.log(r * r - z * z)
        rows.append({"t": t, "sup_abs": float(np.max(np.abs(u))),
                     "oscillation": float(np.ptp(u)), "closed_form": math.log(2 * r * r)})
    return {"fibers": rows,
            "bound": max(r["sup_abs"] for r in rows) if rows else 0.0,
            "max_oscillation": max(r["oscillation"] for r in rows) if rows else 0.0}
