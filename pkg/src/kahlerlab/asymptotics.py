"""Laplace approximation with the first correction term, and the check of the
two-term Bergman expansion ``B ~ (k/c)^n (1 + S/(2k))``."""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bergman import WeightedSpace, bergman_function
from .errors import BudgetExceeded, NotCritical, SingularHessian
from .geometry import MAInstance, density_function, ricci_scalar
from .numerics import composite_rule, loglog_slope


@dataclass(frozen=True)
class LaplaceJet:
    """Derivatives of the phase ``f`` (to order 4) and amplitude ``u`` (to order 2)
    at the critical point ``x0``."""

    H: np.ndarray
    T3: np.ndarray
    T4: np.ndarray
    u0: float
    up: np.ndarray
    Hu: np.ndarray
    f0: float = 0.0
    grad: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.H).shape[0]
        conv = {"H": 2, "T3": 3, "T4": 4, "up": 1, "Hu": 2}
        for name, rank in conv.items():
            arr = np.asarray(getattr(self, name), dtype=float).reshape((m,) * rank)
            object.__setattr__(self, name, arr)
        grad = np.zeros(m) if self.grad is None else np.asarray(self.grad, dtype=float)
        object.__setattr__(self, "grad", grad)
        if np.max(np.abs(grad), initial=0.0) > 1e-12:
            raise NotCritical("gradient of f does not vanish at x0")
        for name in ("H", "T3", "T4", "Hu"):
            arr = getattr(self, name)
            for p in itertools.permutations(range(arr.ndim)):
                if not np.allclose(arr, np.transpose(arr, p), atol=1e-10, rtol=0):
                    raise ValueError(f"{name} is not symmetric")
        eig = np.linalg.eigvalsh(self.H)
        if np.max(eig) >= 0:
            raise SingularHessian("Hessian of f must be negative definite at the maximum")

    @property
    def m(self) -> int:
        return self.H.shape[0]


def laplace_l1(jet: LaplaceJet) -> float:
    """First correction coefficient ``L_1 u`` of the Laplace expansion."""
    try:
        F = np.linalg.inv(jet.H)
    except np.linalg.LinAlgError as exc:
        raise SingularHessian(str(exc)) from exc
    t3, t4 = jet.T3, jet.T4
    cubic = (np.einsum("ikl,jrs,ij,kl,rs->", t3, t3, F, F, F) / 4.0
             + np.einsum("ikl,jrs,ij,ks,rl->", t3, t3, F, F, F) / 6.0)
    quartic = np.einsum("ij,kl,ijkl->", F, F, t4) / 4.0
    drift = np.einsum("sq,rp,srq,p->", F, F, t3, jet.up)
    trace = np.trace(jet.Hu @ F)
    return float(0.5 * (jet.u0 * (-cubic + quartic) + drift - trace))


def laplace_expand(jet: LaplaceJet, lam: float, include_l1: bool = True) -> float:
    """``(2 pi/lam)^(m/2) e^(lam f0) det(-H)^(-1/2) (L_0 u + L_1 u / lam)``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    det = np.linalg.det(-jet.H)
    if det <= 0:
        raise SingularHessian("det(-H) must be positive")
    series = jet.u0 + (laplace_l1(jet) / lam if include_l1 else 0.0)
    return float((2 * math.pi / lam) ** (jet.m / 2) * math.exp(lam * jet.f0) / math.sqrt(det) * series)


def laplace_oracle(f: Callable, u: Callable, lam: float, box: Sequence[tuple], panels: int = 8,
                   order: int = 16, rtol: float = 1e-13, max_panels: int = 256,
                   f_max: float | None = None, full_output: bool = False):
    """``int_box u e^(lam f)`` by tensor Gauss-Legendre with panel doubling.

    ``f`` and ``u`` take an array of shape ``(m, N)`` and return shape ``(N,)``.
    """
    m = len(box)
    if m > 3:
        raise ValueError("oracle supports m <= 3")

    def once(p, top=None):
        axes = [composite_rule(np.linspace(a, b, p + 1), order) for a, b in box]
        grids = np.meshgrid(*[x for x, _ in axes], indexing="ij")
        wts = np.ones_like(grids[0])
        for d, (_, w) in enumerate(axes):
            shape = [1] * m
            shape[d] = -1
            wts = wts * w.reshape(shape)
        X = np.stack([g.ravel() for g in grids])
        fv = np.asarray(f(X), dtype=float)
        if top is None:
            top = fv.max() if f_max is None else f_max
        return float(np.sum(wts.ravel() * np.asarray(u(X), dtype=float) * np.exp(lam * (fv - top)))), top

    prev, top = once(panels)
    p = panels
    while True:
        p *= 2
        if p > max_panels:
            raise BudgetExceeded(f"oracle did not converge with {max_panels} panels per axis")
        cur, _ = once(p, top)
        err = abs(cur - prev)
        if err <= rtol * abs(cur) or (cur == 0.0 and prev == 0.0):
            scale = math.exp(lam * top)
            return (cur * scale, err * scale) if full_output else cur * scale
        prev = cur


def _central_weights(deriv: int, accuracy: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the central stencil for ``d^deriv/dx^deriv``."""
    half = (deriv + 1) // 2 + accuracy // 2 - 1
    offsets = np.arange(-half, half + 1, dtype=float)
    A = np.vander(offsets, increasing=True).T
    b = np.zeros(len(offsets))
    b[deriv] = math.factorial(deriv)
    return offsets, np.linalg.solve(A, b)


def _partial(func: Callable, x0: np.ndarray, counts: Sequence[int], h: float) -> float:
    stencils = [_central_weights(c) if c else (np.zeros(1), np.ones(1)) for c in counts]
    pts, wts = [], []
    for combo in itertools.product(*[range(len(o)) for o, _ in stencils]):
        offset = np.array([stencils[d][0][i] for d, i in enumerate(combo)])
        pts.append(x0 + h * offset)
        wts.append(np.prod([stencils[d][1][i] for d, i in enumerate(combo)]))
    vals = np.asarray(func(np.array(pts).T), dtype=float)
    return float(np.dot(wts, vals) / h ** sum(counts))


def _tensor(func, x0, rank, h):
    m = len(x0)
    T = np.zeros((m,) * rank)
    for idx in itertools.combinations_with_replacement(range(m), rank):
        counts = [idx.count(d) for d in range(m)]
        val = _partial(func, x0, counts, h)
        for p in set(itertools.permutations(idx)):
            T[p] = val
    return T


def jet_from_callables(f: Callable, u: Callable, x0, h: float = 1e-2, grad_tol: float = 1e-8) -> LaplaceJet:
    """Finite-difference jet (fourth-order central stencils) at a critical point."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    grad = _tensor(f, x0, 1, h)
    if np.max(np.abs(grad)) > grad_tol:
        raise NotCritical(f"|grad f(x0)| = {np.max(np.abs(grad)):.2e} exceeds {grad_tol:g}")
    f0 = float(np.asarray(f(x0[:, None]))[0])
    u0 = float(np.asarray(u(x0[:, None]))[0])
    return LaplaceJet(H=_tensor(f, x0, 2, h), T3=_tensor(f, x0, 3, h), T4=_tensor(f, x0, 4, h),
                      u0=u0, up=_tensor(u, x0, 1, h), Hu=_tensor(u, x0, 2, h), f0=f0)


def rotate_jet(jet: LaplaceJet, Q: np.ndarray) -> LaplaceJet:
    """Jet of ``f(Q y)``, ``u(Q y)`` for an orthogonal ``Q``."""
    return LaplaceJet(
        H=np.einsum("ij,ia,jb->ab", jet.H, Q, Q),
        T3=np.einsum("ijk,ia,jb,kc->abc", jet.T3, Q, Q, Q),
        T4=np.einsum("ijkl,ia,jb,kc,ld->abcd", jet.T4, Q, Q, Q, Q),
        u0=jet.u0, up=jet.up @ Q, Hu=np.einsum("ij,ia,jb->ab", jet.Hu, Q, Q), f0=jet.f0)


def predicted_bergman(k: int, scalar_curvature, c_conv: float = math.pi, n: int = 1):
    return (k / c_conv) ** n * (1.0 + np.asarray(scalar_curvature) / (2.0 * k))


@dataclass
class ExpansionReport:
    records: list = field(default_factory=list)
    fit_order: float = float("nan")
    fit_constant: float = float("nan")
    c_conv: float = math.pi

    def max_residual_by_k(self) -> tuple[np.ndarray, np.ndarray]:
        ks = sorted({r["k"] for r in self.records})
        return np.array(ks), np.array([max(abs(r["residual"]) for r in self.records if r["k"] == k) for k in ks])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "s", "B_measured", "B_predicted", "residual"])
        for r in self.records:
            w.writerow([r["k"], f"{r['s']:.17g}", f"{r['B_measured']:.17g}",
                        f"{r['B_predicted']:.17g}", f"{r['residual']:.17g}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        ks, res = self.max_residual_by_k()
        return {"fit_order": self.fit_order, "fit_constant": self.fit_constant,
                "c_conv": self.c_conv, "k": ks.tolist(), "max_residual": res.tolist()}


def expansion_check(instance: MAInstance, k_list: Sequence[int], points: Sequence[float],
                    c_conv: float = math.pi) -> ExpansionReport:
    """Measured Bergman function of ``k phi_inf`` against the two-term prediction.

    At the Monge-Ampère solution ``mu_{phi_inf}`` equals ``dd^c phi_inf``, so the
    weighted space of the iteration is the one in the expansion.
    """
    points = np.asarray(points, dtype=float)
    S = ricci_scalar(density_function(instance.phi_inf), points)
    report = ExpansionReport(c_conv=c_conv)
    for k in k_list:
        if k < 2:
            raise ValueError("k values must be >= 2")
        space = WeightedSpace.build(instance.phi_inf, instance, k, s_eval=float(points.max()))
        B = bergman_function(space, points)
        P = predicted_bergman(k, S, c_conv)
        for s, b, p in zip(points, np.atleast_1d(B), np.atleast_1d(P)):
            report.records.append({"k": int(k), "s": float(s), "B_measured": float(b),
                                   "B_predicted": float(p), "residual": float(b - p)})
    ks, res = report.max_residual_by_k()
    if len(ks) >= 2 and np.all(res > 0):
        C, slope, _ = loglog_slope(ks, res)
        report.fit_order, report.fit_constant = -slope, C
    return report


def _one(X):
    return np.ones(X.shape[1])


# phase, amplitude, box, critical point; boxes are wide enough that the
# truncated Gaussian tails stay below double precision for lambda >= 20
LAPLACE_FIXTURES = {
    "quartic_1d": (lambda X: -X[0] ** 2 + X[0] ** 4, _one, [(-0.6, 0.6)], [0.0]),
    "skew_1d": (lambda X: -X[0] ** 2 + 0.3 * X[0] ** 3 - 0.5 * X[0] ** 4,
                lambda X: 1 + X[0] + X[0] ** 2, [(-3.0, 3.0)], [0.0]),
    "coupled_2d": (lambda X: -X[0] ** 2 - 2 * X[1] ** 2 + 0.3 * X[0] ** 2 * X[1]
                   - 0.2 * X[0] ** 4 - 0.1 * X[1] ** 4,
                   lambda X: 1 + 0.5 * X[0] + X[1] ** 2, [(-3.0, 3.0), (-3.0, 3.0)], [0.0, 0.0]),
}


def laplace_convergence(f: Callable, u: Callable, box, x0, lams: Sequence[float] = (20, 40, 80, 160)) -> dict:
    """Relative errors of the expansion with and without ``L_1`` against the
    oracle, and their fitted slopes in ``log lambda``."""
    jet = jet_from_callables(f, u, x0)
    rows = []
    for lam in lams:
        ref = laplace_oracle(f, u, lam, box)
        rows.append({"lambda": float(lam), "oracle": ref,
                     "with_l1": laplace_expand(jet, lam), "without_l1": laplace_expand(jet, lam, False)})
    for r in rows:
        r["err_l1"] = abs(r["oracle"] - r["with_l1"]) / abs(r["oracle"])
        r["err_l0"] = abs(r["oracle"] - r["without_l1"]) / abs(r["oracle"])
    lam = [r["lambda"] for r in rows]
    slope_l1 = -loglog_slope(lam, [r["err_l1"] for r in rows])[1]
    slope_l0 = -loglog_slope(lam, [r["err_l0"] for r in rows])[1]
    return {"rows": rows, "l1": laplace_l1(jet), "slope_l1": slope_l1, "slope_l0": slope_l0}
