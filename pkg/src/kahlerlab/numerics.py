"""Quadrature on radial domains and grid representations of radial functions.

Everything is written in the variable ``s = |z|**2``.  An area integral of a
radial function over the disc ``{|z|**2 < s_max}`` is ``pi * int_0^s_max f(s) ds``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import BudgetExceeded, NonFinite

MAX_NODES = 2 ** 14


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite Gauss-Legendre layout.

    ``boundary_map`` is ``"none"`` or ``"algebraic"``; the algebraic map
    clusters nodes at ``s_max`` for integrands behaving like
    ``(s_max - s)**alpha`` with ``-1 < alpha < 0``.
    """

    panels: int = 64
    points_per_panel: int = 16
    boundary_map: str = "none"
    alpha: float = 0.0

    def __post_init__(self):
        if self.panels < 1:
            raise ValueError("panels must be >= 1")
        if self.points_per_panel < 2:
            raise ValueError("points_per_panel must be >= 2")
        if self.boundary_map not in ("none", "algebraic"):
            raise ValueError(f"unknown boundary_map {self.boundary_map!r}")
        if self.boundary_map == "algebraic" and not -1.0 < self.alpha:
            raise ValueError("algebraic map needs alpha > -1")

    @property
    def nodes(self) -> int:
        return self.panels * self.points_per_panel

    def refined(self) -> "QuadratureSpec":
        return QuadratureSpec(2 * self.panels, self.points_per_panel,
                              self.boundary_map, self.alpha)


@dataclass(frozen=True)
class RadialGrid:
    nodes: np.ndarray
    values: np.ndarray
    boundary_exponent: float = 0.0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape:
            raise ValueError("nodes and values must be 1-D arrays of equal length")
        if nodes[0] != 0.0:
            raise ValueError("first node must be 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise NonFinite("grid values must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_rule(edges: Sequence[float], order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on consecutive panels given by ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _rule(spec: QuadratureSpec, s_max: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes, weights and gaps ``s_max - s`` (the latter without cancellation)."""
    sigma, w = composite_rule(np.linspace(0.0, 1.0, spec.panels + 1), spec.points_per_panel)
    if spec.boundary_map == "none":
        return s_max * sigma, s_max * w, s_max * (1.0 - sigma)
    # 1 - s/s_max = (1 - sigma)**(1/(1+alpha))
    p = 1.0 / (1.0 + spec.alpha)
    gap = (1.0 - sigma) ** p
    jac = p * (1.0 - sigma) ** (p - 1.0)
    return s_max * (1.0 - gap), s_max * w * jac, s_max * gap


def integrate_disc(f: Callable, spec: QuadratureSpec | None = None, s_max: float = 1.0,
                   rtol: float = 1e-13, atol: float = 0.0, max_nodes: int = MAX_NODES,
                   full_output: bool = False, with_gap: bool = False):
    """Return ``pi * int_0^s_max f(s) ds`` by adaptive panel doubling.

    ``f`` must accept a numpy array of ``s`` values; with ``with_gap`` it is
    called as ``f(s, s_max - s)`` so boundary factors can use the exact gap.  With ``full_output`` the
    result is ``(value, error_estimate, nodes_used)``.
    """
    spec = spec or QuadratureSpec()

    def once(sp):
        s, w, gap = _rule(sp, s_max)
        vals = np.asarray(f(s, gap) if with_gap else f(s), dtype=float)
        if vals.shape != s.shape:
            vals = np.broadcast_to(vals, s.shape)
        if not np.all(np.isfinite(vals)):
            bad = s[~np.isfinite(vals)][0]
            raise NonFinite(f"integrand is not finite at s={bad!r}")
        return np.pi * float(np.dot(w, vals))

    coarse = once(spec)
    while True:
        fine_spec = spec.refined()
        if fine_spec.nodes > max_nodes:
            raise BudgetExceeded(f"no convergence within {max_nodes} nodes")
        fine = once(fine_spec)
        err = abs(fine - coarse)
        if err <= rtol * abs(fine) + atol:
            return (fine, err, fine_spec.nodes) if full_output else fine
        spec, coarse = fine_spec, fine


@dataclass(frozen=True)
class GradedRule:
    """Nodes for ``int_0^s_max`` integrands with a power law at ``s_max``.

    ``gap`` holds ``s_max - s`` computed without cancellation, which matters
    once ``gap`` drops below machine epsilon relative to ``s_max``.
    """

    s: np.ndarray
    gap: np.ndarray
    log_s: np.ndarray
    weights: np.ndarray
    s_max: float
    exponent: float
    breakpoints: tuple = field(default=())


def graded_rule(s_max: float, exponent: float, j_max: int, breakpoints: Sequence[float] = (),
                order: int = 16) -> GradedRule:
    """Quadrature rule for moment integrals ``int s**j m(s) ds`` with
    ``m(s) ~ (s_max - s)**exponent`` and ``0 <= j <= j_max``.

    The lower half ``[0, s_max/2]`` uses uniform panels in ``s``.  The upper
    half is mapped by ``s = s_max - exp(y)``, which turns the boundary power
    law into an exponential in ``y``; panels there have constant width in
    ``y``, matched to the peak width ``~1/sqrt(exponent + 1)`` of high moments.
    Every breakpoint becomes a panel edge.
    """
    if exponent <= -1:
        raise ValueError("exponent must exceed -1 for an integrable weight")
    a1 = exponent + 1.0
    half = 0.5 * s_max
    n_low = int(np.ceil(max(a1, 1.0) / 6.0)) + 1
    low_edges = set(np.linspace(0.0, half, n_low + 1).tolist())

    y_top = np.log(half)
    y_bot = np.log(s_max) - np.log(j_max + 2.0) - 45.0 / a1 - 3.0
    width = min(0.5, 1.2 / np.sqrt(a1))
    n_high = int(np.ceil((y_top - y_bot) / width))
    high_edges = set(np.linspace(y_bot, y_top, n_high + 1).tolist())

    for b in breakpoints:
        if 0.0 < b < half:
            low_edges.add(float(b))
        elif half < b < s_max:
            high_edges.add(float(np.log(s_max - b)))

    s_lo, w_lo = composite_rule(sorted(low_edges), order)
    y, w_y = composite_rule(sorted(high_edges), order)
    gap_hi = np.exp(y)
    s_hi = s_max - gap_hi
    w_hi = w_y * gap_hi

    s = np.concatenate([s_lo, s_hi[::-1]])
    gap = np.concatenate([s_max - s_lo, gap_hi[::-1]])
    w = np.concatenate([w_lo, w_hi[::-1]])
    with np.errstate(divide="ignore"):
        log_s = np.concatenate([np.log(s_lo), (np.log(s_max) + np.log1p(-gap_hi / s_max))[::-1]])
    return GradedRule(s, gap, log_s, w, s_max, exponent, tuple(breakpoints))


def chebyshev_nodes(n: int, hi: float, lo: float = 0.0) -> np.ndarray:
    """Chebyshev-Lobatto points on ``[lo, hi]`` in increasing order."""
    theta = np.linspace(np.pi, 0.0, n)
    x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(theta)
    x[0], x[-1] = lo, hi
    return x


def sup_abs(func: Callable, lo: float, hi: float, n: int = 2048) -> tuple[float, float]:
    """Supremum of ``|func|`` on ``[lo, hi]``: dense sampling, then a bounded
    scalar polish around the best sample.  Returns ``(sup, argmax)``."""
    x = chebyshev_nodes(n, hi, lo)
    v = np.abs(np.asarray(func(x), dtype=float))
    i = int(np.argmax(v))
    best, where = float(v[i]), float(x[i])
    a, b = x[max(i - 1, 0)], x[min(i + 1, n - 1)]
    if b > a:
        res = minimize_scalar(lambda t: -abs(float(np.asarray(func(np.array([t])))[0])),
                              bounds=(a, b), method="bounded",
                              options={"xatol": 1e-13 * max(1.0, abs(b))})
        if -res.fun > best:
            best, where = float(-res.fun), float(res.x)
    return best, where


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares fit ``log y = log C + p log x``; returns ``(C, p, rms)``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([np.ones_like(lx), lx]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    rms = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return float(np.exp(coef[0])), float(coef[1]), rms
