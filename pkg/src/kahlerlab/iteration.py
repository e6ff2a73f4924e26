"""The Bergman-kernel iteration ``phi_{k+1} = beta_k(phi_k)`` and its diagnostics.

``beta_k(phi) = (1/k) (log K_{k phi, mu_phi} - log d_k)`` with
``mu_phi = e^(phi - phi_L) Omega``.  Iterates are stored as the exact solution
plus a bounded Chebyshev interpolant sampled on ``[0, 0.99 s_max]``.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .bergman import TAIL_RTOL, WeightedSpace
from .errors import DivergenceDetected, InsufficientData
from .geometry import ChebyshevFunction, MAInstance, RadialPotential
from .numerics import chebyshev_nodes, loglog_slope, sup_abs

GRID_POINTS = 512
GRID_FRACTION = 0.99


@dataclass(frozen=True)
class DkSchedule:
    kind: str = "kahler_einstein"
    n: int = 1
    c_conv: float = math.pi
    custom: Callable | None = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in ("generic", "kahler_einstein", "custom"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "custom" and self.custom is None:
            raise ValueError("custom schedule needs a callable")
        if self.c_conv <= 0:
            raise ValueError("c_conv must be positive")


def d_k(schedule: DkSchedule, k: int) -> float:
    """Normalizing constant of the iteration at step ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    lead = (k / schedule.c_conv) ** schedule.n
    if schedule.kind == "generic":
        return lead
    if schedule.kind == "kahler_einstein":
        return lead * max(0.5, 1.0 - schedule.n / (2.0 * k))
    return float(schedule.custom(k))


def standard_grid(instance: MAInstance, n: int = GRID_POINTS) -> np.ndarray:
    return chebyshev_nodes(n, GRID_FRACTION * instance.s_max)


def difference(phi: RadialPotential, psi: RadialPotential) -> Callable:
    """``phi - psi`` as a function on ``[0, s_max]``; the log poles must agree."""
    if phi.pole != psi.pole:
        raise ValueError("potentials with different boundary poles are not at bounded distance")
    return lambda s: phi.smooth(s) - psi.smooth(s)


def extrema(f: Callable, lo: float, hi: float, n: int = 2048) -> tuple[float, float]:
    """``(inf, sup)`` of ``f`` on ``[lo, hi]`` by dense sampling plus polishing."""
    x = chebyshev_nodes(n, hi, lo)
    v = np.asarray(f(x), dtype=float)
    out = []
    for sign in (1.0, -1.0):
        i = int(np.argmin(sign * v))
        best = float(v[i])
        a, b = x[max(i - 1, 0)], x[min(i + 1, n - 1)]
        if b > a:
            res = minimize_scalar(lambda t: sign * float(np.asarray(f(np.array([t])))[0]),
                                  bounds=(a, b), method="bounded", options={"xatol": 1e-14})
            best = min(best, sign * res.fun) if sign > 0 else max(best, -res.fun)
        out.append(best)
    return out[0], out[1]


def sup_distance(phi: RadialPotential, instance: MAInstance, hi: float | None = None) -> float:
    """``sup |phi - phi_inf|`` over ``[0, 0.99 s_max]``."""
    hi = GRID_FRACTION * instance.s_max if hi is None else hi
    return sup_abs(difference(phi, instance.phi_inf), 0.0, hi)[0]


def beta_values(phi: RadialPotential, k: int, instance: MAInstance, schedule: DkSchedule,
                s: np.ndarray, tail_rtol: float = TAIL_RTOL) -> tuple[np.ndarray, int]:
    """``beta_k(phi)`` evaluated at ``s``; also returns the truncation used."""
    if k < 2:
        raise ValueError("k >= 2 required: at k = 1 the weight exponent k - 1 vanishes")
    space = WeightedSpace.build(phi, instance, k, s_eval=float(np.max(s)), tail_rtol=tail_rtol)
    vals = (space.log_kernel(s) - math.log(d_k(schedule, k))) / k
    return vals, space.J


def beta_k(phi: RadialPotential, k: int, instance: MAInstance, schedule: DkSchedule,
           grid: np.ndarray | None = None, full_output: bool = False):
    """One iteration step; the result is ``phi_inf + interpolant`` on the grid."""
    grid = standard_grid(instance) if grid is None else grid
    vals, J = beta_values(phi, k, instance, schedule, grid)
    offset = vals - instance.phi_inf(grid)
    out = instance.phi_inf.plus(ChebyshevFunction(grid, offset), f"beta_{k}({phi.description})")
    return (out, J) if full_output else out


@lru_cache(maxsize=512)
def fixed_point_defect(instance: MAInstance, k: int, schedule: DkSchedule, n_grid: int = GRID_POINTS) -> float:
    """``eps_k = sup |beta_k(phi_inf) - phi_inf|`` over ``[0, 0.99 s_max]``.

    Measured exactly like the iteration error ``e_k`` (interpolant on the
    standard grid, then a polished continuum sup) so the two are comparable.
    """
    grid = standard_grid(instance, n_grid)
    return sup_distance(beta_k(instance.phi_inf, k, instance, schedule, grid), instance, float(grid[-1]))


@dataclass
class StepRecord:
    k: int
    sup_error: float
    eps_k: float
    truncation_J: int
    seconds: float


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def k(self) -> np.ndarray:
        return np.array([r.k for r in self.records])

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.sup_error for r in self.records])

    @property
    def eps(self) -> np.ndarray:
        return np.array([r.eps_k for r in self.records])

    def recurrence_slack(self) -> np.ndarray:
        """``((k-1)/k) e_k + eps_k - e_{k+1}`` for consecutive records."""
        k, e, eps = self.k, self.errors, self.eps
        return (k[:-1] - 1) / k[:-1] * e[:-1] + eps[:-1] - e[1:]

    def to_csv(self, path=None, timings: bool = False) -> str:
        """CSV of the trace; wall times are left blank unless ``timings`` so
        that identical runs give identical files."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "sup_error", "eps_k", "truncation_J", "seconds"])
        for r in self.records:
            w.writerow([r.k, f"{r.sup_error:.17g}", f"{r.eps_k:.17g}", r.truncation_J,
                        f"{r.seconds:.6f}" if timings else ""])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def manifest(self) -> dict:
        return {"config": self.config, "steps": len(self.records)}


def iterate(phi_start: RadialPotential, instance: MAInstance, schedule: DkSchedule,
            k0: int = 2, k_max: int = 30, grid: np.ndarray | None = None,
            divergence_factor: float = 10.0, callback: Callable | None = None) -> IterationTrace:
    """Run ``phi_{k+1} = beta_k(phi_k)`` from ``phi_{k0} = phi_start`` to ``k_max``."""
    if k0 < 2:
        raise ValueError("k0 must be >= 2 (degenerate first step at k = 1)")
    grid = standard_grid(instance) if grid is None else grid
    trace = IterationTrace(config={
        "instance": instance.description, "start": phi_start.description,
        "schedule": {"kind": schedule.kind, "n": schedule.n, "c_conv": schedule.c_conv},
        "k0": k0, "k_max": k_max, "grid_points": len(grid), "grid_max": float(grid[-1]),
    })
    phi = phi_start
    # the key lemma bounds e_k by e_{k0} + sum of eps_j; far beyond that is divergence
    budget = None
    for k in range(k0, k_max + 1):
        t0 = time.perf_counter()
        e = sup_distance(phi, instance, float(grid[-1]))
        if budget is None:
            budget = e
        elif e > divergence_factor * max(budget, 1e-12) and e > 1e-9:
            raise DivergenceDetected(f"sup error {e:.3e} at k={k} exceeds {divergence_factor}x "
                                     f"the start plus accumulated defects")
        eps = fixed_point_defect(instance, k, schedule, len(grid))
        budget += eps
        nxt, J = beta_k(phi, k, instance, schedule, grid, full_output=True)
        rec = StepRecord(k, e, eps, J, time.perf_counter() - t0)
        trace.records.append(rec)
        if callback is not None:
            callback(rec)
        phi = nxt
    return trace


def lemma_key_check(phi: RadialPotential, k: int, instance: MAInstance, schedule: DkSchedule,
                    grid: np.ndarray | None = None, tol: float = 1e-10) -> dict:
    """Check the two-sided bound on ``beta_k(phi) - phi_inf`` with measured ``eps_k``."""
    grid = standard_grid(instance) if grid is None else grid
    C1, C2 = extrema(difference(phi, instance.phi_inf), 0.0, instance.s_max)
    eps = fixed_point_defect(instance, k, schedule, len(grid))
    vals, _ = beta_values(phi, k, instance, schedule, grid)
    dev = vals - instance.phi_inf(grid)
    f = (k - 1) / k
    lower = float(np.min(dev - (f * C1 - eps)))
    upper = float(np.min(f * C2 + eps - dev))
    return {"k": k, "C1": C1, "C2": C2, "eps_k": eps, "lower_margin": lower,
            "upper_margin": upper, "passed": bool(lower >= -tol and upper >= -tol)}


def rate_fit(trace_or_k, errors: Sequence[float] | None = None, model: str = "inverse_k",
             k_range: tuple | None = None) -> tuple[float, float, float]:
    """Fit ``e_k ~ C k^-alpha`` (``inverse_k``) or ``C log(k) k^-alpha`` (``logk_over_k``).

    Returns ``(C, alpha, rms residual of the log fit)``.
    """
    if isinstance(trace_or_k, IterationTrace):
        k, e = trace_or_k.k, trace_or_k.errors
    else:
        k, e = np.asarray(trace_or_k, float), np.asarray(errors, float)
    mask = e > 1e-12
    if k_range is not None:
        mask &= (k >= k_range[0]) & (k <= k_range[1])
    if model == "logk_over_k":
        mask &= k > 1
    if mask.sum() < 8:
        raise InsufficientData(f"need at least 8 usable points, have {int(mask.sum())}")
    k, e = k[mask], e[mask]
    if model == "inverse_k":
        C, slope, rms = loglog_slope(k, e)
    elif model == "logk_over_k":
        C, slope, rms = loglog_slope(k, e / np.log(k))
    else:
        raise ValueError(f"unknown model {model!r}")
    return C, -slope, rms


def radial_psh_defect(phi: RadialPotential, s: np.ndarray) -> float:
    """Most negative value of ``(s u')'`` on ``s`` (non-negative for psh radial ``u``)."""
    return float(np.min(phi.density(s)))
