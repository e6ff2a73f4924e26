"""Radial Kähler potentials on discs and Monge-Ampère instances.

Conventions: ``dd^c = (i/2) d dbar``, so a radial potential ``u(s)`` with
``s = |z|**2`` has ``dd^c u = (u' + s u'') dx ^ dy``.  All densities are taken
against Lebesgue measure ``dx dy``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from .errors import MetricDegenerate, NonPositiveMetric, OutOfDomain
from .numerics import chebyshev_nodes

S = sp.Symbol("s", real=True)
MA_TOLERANCE = 1e-10


class RadialFunction:
    """A smooth function of ``s`` with derivative access via ``f(s, nu)``."""

    def __call__(self, s, nu: int = 0):
        raise NotImplementedError

    def __add__(self, other: "RadialFunction") -> "RadialFunction":
        return SumFunction(self, other)

    @property
    def is_zero(self) -> bool:
        return False


class SymbolicFunction(RadialFunction):
    """Closed-form function of ``s`` given as a sympy expression."""

    def __init__(self, expr, label: str | None = None):
        self.expr = sp.sympify(expr)
        self.label = label or str(self.expr)
        self._derivs: dict[int, Callable] = {}

    def __call__(self, s, nu: int = 0):
        if nu not in self._derivs:
            self._derivs[nu] = sp.lambdify(S, sp.diff(self.expr, S, nu), "numpy")
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(np.asarray(self._derivs[nu](s), dtype=float), s.shape).copy()

    @property
    def is_zero(self) -> bool:
        return self.expr == 0

    def __repr__(self):
        return f"SymbolicFunction({self.label})"


class ChebyshevFunction(RadialFunction):
    """Chebyshev interpolant on ``[0, hi]``, continued by its value at ``hi``."""

    def __init__(self, nodes: np.ndarray, values: np.ndarray, chop: float = 1e-16):
        nodes = np.asarray(nodes, dtype=float)
        self.hi = float(nodes[-1])
        series = np.polynomial.Chebyshev.fit(nodes, values, len(nodes) - 1,
                                             domain=[0.0, self.hi])
        coef = series.coef
        scale = max(np.max(np.abs(coef)), 1e-300)
        keep = np.nonzero(np.abs(coef) > chop * scale)[0]
        coef = coef[: (keep[-1] + 1 if keep.size else 1)]
        self.series = np.polynomial.Chebyshev(coef, domain=[0.0, self.hi])
        self._derivs = {0: self.series}
        self.edge_value = float(self.series(self.hi))

    def __call__(self, s, nu: int = 0):
        s = np.asarray(s, dtype=float)
        if nu not in self._derivs:
            self._derivs[nu] = self.series.deriv(nu)
        inside = s <= self.hi
        out = np.where(inside, self._derivs[nu](np.minimum(s, self.hi)), 0.0)
        if nu == 0:
            out = np.where(inside, out, self.edge_value)
        return out

    @property
    def degree(self) -> int:
        return len(self.series.coef) - 1


class SumFunction(RadialFunction):
    def __init__(self, *parts: RadialFunction):
        self.parts = parts

    def __call__(self, s, nu: int = 0):
        return sum(p(s, nu) for p in self.parts)

    @property
    def breakpoints(self) -> tuple:
        return tuple(sorted({b for p in self.parts for b in function_breakpoints(p)}))


def function_breakpoints(f: RadialFunction) -> tuple:
    """Points where ``f`` is only piecewise smooth (quadrature panel edges)."""
    if isinstance(f, ChebyshevFunction):
        return (f.hi,)
    if isinstance(f, SumFunction):
        return f.breakpoints
    return ()


def constant(c: float) -> SymbolicFunction:
    return SymbolicFunction(sp.Float(c) if c != int(c) else sp.Integer(int(c)))


@dataclass(frozen=True)
class RadialPotential:
    """``u(s) = smooth(s) - pole * log(s_max - s)`` on ``[0, s_max)``.

    The logarithmic pole is kept explicit so that values near the boundary can
    be computed from the gap ``s_max - s`` without cancellation.
    """

    smooth: RadialFunction
    pole: float = 0.0
    s_max: float = 1.0
    description: str = ""

    def _gap(self, s, gap):
        s = np.asarray(s, dtype=float)
        g = self.s_max - s if gap is None else np.asarray(gap, dtype=float)
        if self.pole != 0.0 and np.any(g <= 0):
            raise OutOfDomain(f"s must lie in [0, {self.s_max})")
        return s, g

    def __call__(self, s, gap=None):
        return self.derivative(s, 0, gap)

    def derivative(self, s, nu: int = 0, gap=None):
        s, g = self._gap(s, gap)
        out = self.smooth(s, nu)
        if self.pole == 0.0:
            return out
        if nu == 0:
            return out - self.pole * np.log(g)
        return out + self.pole * math.factorial(nu - 1) / g ** nu

    def density(self, s, nu: int = 0, gap=None):
        """``d^nu/ds^nu`` of the Kähler density ``u' + s u''``."""
        s = np.asarray(s, dtype=float)
        if self.pole == 0.0:
            return (nu + 1) * self.derivative(s, nu + 1, gap) + s * self.derivative(s, nu + 2, gap)
        s, g = self._gap(s, gap)
        # the pole part has density pole * s_max / gap**2 exactly
        h = self.smooth
        smooth_part = (nu + 1) * h(s, nu + 1) + s * h(s, nu + 2)
        return smooth_part + self.pole * self.s_max * math.factorial(nu + 1) / g ** (nu + 2)

    def shifted(self, c: float) -> "RadialPotential":
        return self.plus(constant(c), f"{self.description} + {c}")

    def plus(self, w: RadialFunction, description: str | None = None) -> "RadialPotential":
        return RadialPotential(self.smooth + w, self.pole, self.s_max,
                               description or f"{self.description} + {getattr(w, 'label', 'w')}")

    @property
    def breakpoints(self) -> tuple:
        return function_breakpoints(self.smooth)


def kahler_density(phi: RadialPotential, s):
    """Density ``u' + s u''`` of ``dd^c phi`` against ``dx dy``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr >= phi.s_max) or np.any(s_arr < 0):
        raise OutOfDomain(f"s outside [0, {phi.s_max})")
    out = phi.density(s_arr)
    return float(out) if np.ndim(s) == 0 else out


def density_function(phi: RadialPotential) -> Callable:
    """The density of ``dd^c phi`` as a callable ``g(s, nu)``."""
    return lambda s, nu=0: phi.density(s, nu)


def ricci_scalar(g: Callable, s):
    """Scalar curvature ``-(L' + s L'')/g`` with ``L = log g``.

    ``g(s, nu)`` returns the ``nu``-th derivative of the metric density.
    """
    s_arr = np.asarray(s, dtype=float)
    g0, g1, g2 = g(s_arr, 0), g(s_arr, 1), g(s_arr, 2)
    if np.any(g0 <= 0):
        raise NonPositiveMetric("metric density must be positive")
    L1 = g1 / g0
    L2 = g2 / g0 - L1 ** 2
    out = -(L1 + s_arr * L2) / g0
    return float(out) if np.ndim(s) == 0 else out


def symbolic_density(expr) -> Callable:
    """Wrap a closed-form density expression in ``s`` as ``g(s, nu)``."""
    return SymbolicFunction(expr)


def cusp_density() -> SymbolicFunction:
    """Model cusp metric ``2/(s log(s)**2)`` on the punctured unit disc."""
    return SymbolicFunction(2 / (S * sp.log(S) ** 2), "cusp")


@dataclass(frozen=True)
class MAInstance:
    """Data ``(phi_L, Omega, phi_inf)`` of ``dd^c phi_inf = e^(phi_inf - phi_L) Omega``.

    ``log_omega(s, gap)`` is the log-density of ``Omega``; ``omega_exponent``
    is the power of ``(s_max - s)`` governing ``Omega`` at the boundary.
    """

    phi_L: RadialPotential
    phi_inf: RadialPotential
    log_omega: Callable = field(repr=False)
    omega_exponent: float = 0.0
    kind: str = "generic"
    description: str = ""

    @property
    def s_max(self) -> float:
        return self.phi_inf.s_max

    def omega_density(self, s):
        s = np.asarray(s, dtype=float)
        return np.exp(self.log_omega(s, self.s_max - s))

    def residual(self, s):
        s = np.asarray(s, dtype=float)
        return self.phi_inf.density(s) - np.exp(self.phi_inf(s) - self.phi_L(s)) * self.omega_density(s)

    def verification_grid(self, n: int = 512) -> np.ndarray:
        return chebyshev_nodes(n, 0.99 * self.s_max)

    def max_residual(self, n: int = 512) -> float:
        s = self.verification_grid(n)
        scale = np.maximum(self.phi_inf.density(s), 1.0)
        return float(np.max(np.abs(self.residual(s)) / scale))


def poincare_instance(R: float = 1.0) -> MAInstance:
    """Exact Kähler-Einstein instance on the disc of radius ``R``.

    ``phi_inf = log(2 R^2 / (R^2 - s)^2)`` with ``phi_L = phi_inf`` and
    ``Omega`` equal to the Poincaré area form ``2 R^2/(R^2 - s)^2``.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    s_max = R * R
    phi = RadialPotential(constant(math.log(2.0 * s_max)), 2.0, s_max,
                          f"poincare(R={R:g})")
    c = math.log(2.0 * s_max)

    def log_omega(s, gap):
        return c - 2.0 * np.log(gap)

    return MAInstance(phi, phi, log_omega, -2.0, "kahler_einstein", f"poincare(R={R:g})")


def manufacture_instance(w: RadialFunction, base: MAInstance, n_check: int = 512) -> MAInstance:
    """Perturb the exact solution by ``w`` and redefine ``Omega`` so that the
    Monge-Ampère residual vanishes identically."""
    if w.is_zero:
        return base
    phi_inf = base.phi_inf.plus(w)
    phi_L = base.phi_L
    s = chebyshev_nodes(n_check, base.s_max, 0.0)[:-1]
    if np.any(phi_inf.density(s) <= 0):
        raise MetricDegenerate("perturbed density is not positive on the verification grid")

    def log_omega(s, gap):
        return np.log(phi_inf.density(s, gap=gap)) + phi_L(s, gap) - phi_inf(s, gap)

    exponent = (-2.0 if phi_inf.pole > 0 else 0.0) - phi_L.pole + phi_inf.pole
    label = getattr(w, "label", "w")
    return MAInstance(phi_L, phi_inf, log_omega, exponent, "generic",
                      f"{base.description} + {label}")
