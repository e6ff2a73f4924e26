"""Weighted Bergman spaces on radial domains.

For a radial measure the monomials ``z**j`` are orthogonal, so the Bergman
kernel on the diagonal is ``K(s) = sum_j s**j / m_j`` with moments
``m_j = ||z**j||**2``.  Moments span hundreds of orders of magnitude for
large ``k``, so they are stored as logarithms throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import betaln, logsumexp, xlogy

from .errors import ExtremalViolation, IllConditioned, NonIntegrable, OutOfDomain, TailDominates
from .geometry import MAInstance, RadialPotential
from .numerics import composite_rule, graded_rule

EVAL_FRACTION = 0.99
TAIL_RTOL = 1e-15
TAIL_LIMIT = 1e-6
J_CAP = 2 ** 17
CHUNK = 512
WINDOW = 90.0


def log_measure_density(phi: RadialPotential, instance: MAInstance, k: int, s, gap=None):
    """``log`` of the density of ``e^(-k phi) mu_phi`` against ``dx dy``."""
    s = np.asarray(s, dtype=float)
    gap = instance.s_max - s if gap is None else gap
    return -(k - 1) * phi(s, gap) - instance.phi_L(s, gap) + instance.log_omega(s, gap)


def measure_density(phi: RadialPotential, instance: MAInstance, k: int, s):
    """``e^(-(k-1) phi - phi_L) V``: the weighted measure used in ``||.||_{k phi, mu_phi}``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr >= instance.s_max):
        raise OutOfDomain(f"s outside [0, {instance.s_max})")
    out = np.exp(log_measure_density(phi, instance, k, s_arr))
    return float(out) if np.ndim(s) == 0 else out


def boundary_exponent(phi: RadialPotential, instance: MAInstance, k: int) -> float:
    return (k - 1) * phi.pole + instance.phi_L.pole + instance.omega_exponent


@dataclass(frozen=True)
class MomentSequence:
    """Log-moments ``log m_0 .. log m_J`` and the tail bound at ``s_eval``."""

    log_m: np.ndarray
    s_max: float
    s_eval: float
    tail_bound: float = field(default=np.inf)

    @property
    def J(self) -> int:
        return len(self.log_m) - 1

    @property
    def m(self) -> np.ndarray:
        return np.exp(self.log_m)

    def scaled(self, log_factor: float) -> "MomentSequence":
        return MomentSequence(self.log_m + log_factor, self.s_max, self.s_eval, self.tail_bound)


class MomentIntegrator:
    """Computes ``log m_j = log(pi int_0^s_max s^j m(s) ds)`` for any ``j``.

    The log-density is sampled once on a graded rule; each chunk of ``j``
    values only touches the nodes where its integrand is not negligible.
    """

    def __init__(self, log_density: Callable, s_max: float, exponent: float = 0.0,
                 breakpoints: Sequence[float] = (), j_max: int = J_CAP):
        if exponent <= -1:
            raise NonIntegrable(f"weight ~ (s_max - s)^{exponent} is not integrable")
        self.s_max = s_max
        self.exponent = exponent
        self.rule = graded_rule(s_max, exponent, j_max, breakpoints)
        with np.errstate(divide="ignore"):
            logd = np.asarray(log_density(self.rule.s, self.rule.gap), dtype=float)
        if not np.all(np.isfinite(logd) | (logd == -np.inf)):
            raise NonIntegrable("log-density is not finite on the quadrature nodes")
        self.logw = np.log(self.rule.weights) + logd

    def __call__(self, js: np.ndarray) -> np.ndarray:
        js = np.asarray(js, dtype=float)
        out = np.empty(js.shape)
        log_s, logw = self.rule.log_s, self.logw
        for start in range(0, len(js), CHUNK):
            block = js[start:start + CHUNK]
            lo, hi = len(log_s), 0
            for j in (block[0], block[-1]):
                psi = j * log_s + logw
                idx = np.nonzero(psi > psi.max() - WINDOW)[0]
                lo, hi = min(lo, idx[0]), max(hi, idx[-1] + 1)
            L = block[:, None] * log_s[None, lo:hi] + logw[None, lo:hi]
            out[start:start + CHUNK] = _lse(L, axis=1)
        if not np.all(np.isfinite(out)):
            raise NonIntegrable("moment integral is not finite")
        return out + np.log(np.pi)


def _lse(x: np.ndarray, axis=None):
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return out.item() if axis is None else np.squeeze(out, axis)


def _log_terms(log_m: np.ndarray, s: np.ndarray) -> np.ndarray:
    j = np.arange(len(log_m), dtype=float)
    return xlogy(j[None, :], s[:, None]) - log_m[None, :]


def _log_sum(log_m: np.ndarray, s: np.ndarray, stride: int = 64) -> np.ndarray:
    """``log sum_j s^j / m_j`` per entry of ``s``.

    ``j log s - log m_j`` is concave in ``j`` (log-convex moments), so the
    significant terms form one interval, located on a strided subsample.
    """
    out = np.empty(s.shape)
    J = len(log_m) - 1
    coarse_j = np.arange(0, J + 1, stride)
    for i, si in enumerate(s):
        if si == 0.0:
            out[i] = -log_m[0]
            continue
        ls = np.log(si)
        coarse = coarse_j * ls - log_m[coarse_j]
        keep = np.nonzero(coarse > coarse.max() - WINDOW)[0]
        lo = max(coarse_j[keep[0]] - stride, 0)
        hi = min(coarse_j[keep[-1]] + stride, J) + 1
        j = np.arange(lo, hi)
        out[i] = _lse(j * ls - log_m[lo:hi])
    return out


def tail_bound(log_m: np.ndarray, s, log_K: np.ndarray | None = None) -> np.ndarray:
    """Relative bound on ``sum_{j > J} s^j/m_j`` using log-convexity of moments."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if len(log_m) < 2:
        return np.full(s.shape, np.inf)
    J = len(log_m) - 1
    with np.errstate(divide="ignore"):
        log_s = np.log(s)
        log_rho = log_s + log_m[J - 1] - log_m[J]
        log_tJ = J * log_s - log_m[J]
    if log_K is None:
        log_K = _log_sum(log_m, s)
    rho = np.exp(log_rho)
    safe = np.where(rho < 1, 1 - rho, 1.0)
    with np.errstate(over="ignore"):
        rel = np.where(rho < 1, np.exp(log_tJ + log_rho - log_K) / safe, np.inf)
    return np.where(s == 0, 0.0, rel)


def compute_moments(log_density: Callable, s_max: float, J: int | None = None,
                    exponent: float = 0.0, breakpoints: Sequence[float] = (),
                    s_eval: float | None = None, tail_rtol: float = TAIL_RTOL,
                    j_cap: int = J_CAP) -> MomentSequence:
    """Moments of a radial measure given by its log-density ``(s, gap) -> log m``.

    With ``J`` given, exactly ``m_0..m_J`` are returned.  Otherwise ``J`` grows
    until the relative tail at ``s_eval`` (default ``0.99 s_max``) is below
    ``tail_rtol``.
    """
    s_eval = EVAL_FRACTION * s_max if s_eval is None else s_eval
    integ = MomentIntegrator(log_density, s_max, exponent, breakpoints,
                             j_max=J if J is not None else j_cap)
    if J is not None:
        log_m = integ(np.arange(J + 1))
        return MomentSequence(log_m, s_max, s_eval, float(tail_bound(log_m, s_eval)[0]))

    J = _initial_truncation(exponent, s_eval / s_max, tail_rtol, j_cap)
    log_m = integ(np.arange(J + 1))
    while True:
        tb = float(tail_bound(log_m, s_eval)[0])
        if tb <= tail_rtol:
            return MomentSequence(log_m, s_max, s_eval, tb)
        if J >= j_cap:
            raise TailDominates(f"tail {tb:.2e} at s={s_eval} not resolved with J={j_cap}")
        newJ = min(2 * J, j_cap)
        log_m = np.concatenate([log_m, integ(np.arange(J + 1, newJ + 1))])
        J = newJ


def _initial_truncation(exponent: float, x: float, tail_rtol: float, j_cap: int) -> int:
    # terms behave like s^j / B(j+1, a+1); stop where they fall far below the peak
    j = np.arange(j_cap + 1, dtype=float)
    with np.errstate(divide="ignore"):
        logt = j * np.log(x) - betaln(j + 1, max(exponent, 0.0) + 1)
    peak = int(np.argmax(logt))
    below = np.nonzero(logt[peak:] < logt[peak] + np.log(tail_rtol) - 12.0)[0]
    J = peak + (below[0] if below.size else j_cap - peak)
    return int(min(max(J, 32), j_cap))


def log_kernel(moments: MomentSequence, s, check_tail: bool = True, limit: float = TAIL_LIMIT):
    """``log K(s)`` from the truncated monomial sum."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr < 0) or np.any(s_arr >= moments.s_max):
        raise OutOfDomain(f"s outside [0, {moments.s_max})")
    out = _log_sum(moments.log_m, s_arr)
    if check_tail:
        tb = tail_bound(moments.log_m, s_arr, out)
        if np.any(tb > limit):
            bad = s_arr[np.argmax(tb)]
            raise TailDominates(f"tail bound {tb.max():.2e} exceeds {limit:g} of the sum at s={bad}")
    return float(out[0]) if np.ndim(s) == 0 else out


def kernel_eval(moments: MomentSequence, s, check_tail: bool = True):
    """Bergman kernel ``sum_{j<=J} s^j/m_j`` on the diagonal."""
    out = np.exp(log_kernel(moments, s, check_tail))
    return float(out) if np.ndim(s) == 0 else out


@dataclass(frozen=True)
class WeightedSpace:
    """Holomorphic functions on the disc with norm ``int |f|^2 e^(-k phi) d mu_phi``."""

    k: int
    phi: RadialPotential
    instance: MAInstance
    moments: MomentSequence

    @classmethod
    def build(cls, phi: RadialPotential, instance: MAInstance, k: int, J: int | None = None,
              s_eval: float | None = None, tail_rtol: float = TAIL_RTOL) -> "WeightedSpace":
        if k < 1:
            raise ValueError("k must be >= 1")
        breaks = set(phi.breakpoints) | set(instance.phi_L.breakpoints) | set(instance.phi_inf.breakpoints)
        moments = compute_moments(
            lambda s, gap: log_measure_density(phi, instance, k, s, gap),
            instance.s_max, J, boundary_exponent(phi, instance, k), sorted(breaks),
            s_eval=s_eval, tail_rtol=tail_rtol)
        return cls(k, phi, instance, moments)

    @property
    def J(self) -> int:
        return self.moments.J

    def log_kernel(self, s, check_tail: bool = True):
        return log_kernel(self.moments, s, check_tail)

    def log_bergman_function(self, s, check_tail: bool = True):
        return self.log_kernel(s, check_tail) - self.k * self.phi(s)


def bergman_function(space: WeightedSpace, s, check_tail: bool = True):
    """``B(s) = K(s) e^(-k phi(s))``."""
    out = np.exp(space.log_bergman_function(s, check_tail))
    return float(out) if np.ndim(s) == 0 else out


def moments_log_convex(moments: MomentSequence, rtol: float = 1e-12) -> bool:
    lm = moments.log_m
    return bool(np.all(2 * lm[1:-1] <= lm[:-2] + lm[2:] + rtol * np.abs(lm[1:-1]) + 1e-13))


def gram_matrix(J: int, weight: Callable, s_max: float = 1.0, radial_panels: int = 64,
                order: int = 20, angles: int | None = None) -> np.ndarray:
    """``G[i, j] = int z^i conj(z)^j w(x, y) dx dy`` by polar tensor quadrature.

    Radial direction: composite Gauss-Legendre in ``r``; angular direction:
    trapezoid rule, exact for the trigonometric polynomials that appear.
    """
    R = np.sqrt(s_max)
    r, wr = composite_rule(np.linspace(0.0, R, radial_panels + 1), order)
    nth = angles or 4 * (J + 1)
    th = 2 * np.pi * np.arange(nth) / nth
    z = r[:, None] * np.exp(1j * th[None, :])
    w = np.asarray(weight(z.real, z.imag), dtype=float) * (wr * r)[:, None] * (2 * np.pi / nth)
    zf, wf = z.ravel(), w.ravel()
    V = zf[None, :] ** np.arange(J + 1)[:, None]
    return (V * wf[None, :]) @ V.conj().T


def gram_oracle(J: int, weight: Callable, s_max: float = 1.0, cond_limit: float = 1e12,
                **quad) -> Callable:
    """Kernel evaluator ``x -> v(x)^* G^{-1} v(x)`` with ``v = (1, x, .., x^J)``."""
    if J > 64:
        raise ValueError("gram oracle is limited to J <= 64")
    G = gram_matrix(J, weight, s_max, **quad)
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditioned(f"Gram condition number {cond:.3e} exceeds {cond_limit:.0e}")
    fac = cho_factor(G)

    def evaluate(x):
        v = np.asarray(x, dtype=complex) ** np.arange(J + 1)
        # sup |f(x)|^2/||f||^2 over f = sum c_i z^i is v^H G^-1 v by Cauchy-Schwarz
        return float(np.real(np.vdot(v, cho_solve(fac, v))))

    evaluate.gram = G
    evaluate.cond = cond
    return evaluate


def section_ratio(space: WeightedSpace, coeffs: np.ndarray, x: complex) -> float:
    """``|f(x)|^2 e^(-k phi(x)) / (||f||^2 B(x))`` for ``f = sum c_j z^j / sqrt(m_j)``.

    Coefficients are taken in the orthonormal basis ``z^j/sqrt(m_j)``.
    """
    c = np.asarray(coeffs, dtype=complex)
    norm2 = float(np.sum(np.abs(c) ** 2))
    if norm2 == 0.0:
        raise ValueError("the zero section has no extremal ratio")
    s = abs(x) ** 2
    j = np.arange(len(c))
    log_mod = xlogy(j, abs(x)) - 0.5 * space.moments.log_m[: len(c)]
    shift = log_mod.max()
    phase = np.exp(1j * j * np.angle(x)) if x != 0 else (j == 0).astype(complex)
    val = np.sum(c * np.exp(log_mod - shift) * phase)
    log_num = 2 * (np.log(abs(val)) + shift) if val != 0 else -np.inf
    return float(np.exp(log_num - np.log(norm2) - space.log_kernel(s, check_tail=False)))


def extremal_check(space: WeightedSpace, x: complex, trials: int = 1000, seed: int = 20240601,
                   rtol: float = 1e-9) -> dict:
    """Compare random unit sections and the explicit extremal section at ``x``."""
    rng = np.random.default_rng(seed)
    n = space.J + 1
    worst, worst_c = 0.0, None
    for _ in range(trials):
        c = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        r = section_ratio(space, c, x)
        if r > worst:
            worst, worst_c = r, c
    if worst > 1 + rtol:
        raise ExtremalViolation(f"ratio {worst!r} exceeds 1 at x={x}", worst_c)
    # extremal section: coefficients conj(e_j(x)) in the orthonormal basis
    j = np.arange(n)
    log_mod = xlogy(j, abs(x)) - 0.5 * space.moments.log_m
    ext = np.exp(log_mod - log_mod.max()) * (np.exp(-1j * j * np.angle(x)) if x != 0 else 1.0)
    ext_ratio = section_ratio(space, ext, x)
    if abs(ext_ratio - 1) > rtol:
        raise ExtremalViolation(f"extremal section ratio {ext_ratio!r} differs from 1", ext)
    return {"x": complex(x), "trials": trials, "seed": seed,
            "max_random_ratio": worst, "extremal_ratio": ext_ratio, "passed": True}
