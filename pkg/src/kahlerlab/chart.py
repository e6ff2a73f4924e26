"""Bounded-geometry parameters and normal-coordinate chart normalization.

Index convention for a jet of a real potential ``phi`` at the origin:

* ``h[i, j]    = d_i dbar_j phi(0)``
* ``t3[i, j, k]   = d_i dbar_j d_k phi(0)``
* ``t4[i, j, k, l] = d_i dbar_j d_k d_l phi(0)``

A holomorphic change ``z = w + A(w, w) + B(w, w, w)`` with
``A[b, a, c] = -1/2 t3[a, b, c]`` removes ``t3`` and a matching ``B`` removes
``t4``.  Potentials are handled in polarized form ``phi(z, zbar)`` with ``z``
and ``zbar`` independent, which lets mixed derivatives be read off as Taylor
coefficients by Cauchy integrals on a small torus.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NotNormalized


@dataclass(frozen=True)
class BoundedGeometryParams:
    radius: float
    equivalence: float
    derivative_bounds: tuple = field(default_factory=tuple)
    order: int = 5

    def validate(self, for_main_theorem: bool = True) -> "BoundedGeometryParams":
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.equivalence < 1:
            raise ValueError("equivalence constant must be >= 1")
        if any(a <= 0 for a in self.derivative_bounds):
            raise ValueError("derivative bounds must be positive")
        if for_main_theorem and self.order < 5:
            raise ValueError("order must be at least 5")
        return self


@dataclass(frozen=True)
class ChartJet:
    n: int
    h: np.ndarray
    t3: np.ndarray
    t4: np.ndarray

    def __post_init__(self):
        for name, arr, rank in (("h", self.h, 2), ("t3", self.t3, 3), ("t4", self.t4, 4)):
            arr = np.asarray(arr, dtype=complex)
            if arr.shape != (self.n,) * rank:
                raise ValueError(f"{name} must have shape {(self.n,) * rank}")
            object.__setattr__(self, name, arr)
        if not np.allclose(self.h, self.h.conj().T, atol=1e-12):
            raise ValueError("h must be Hermitian")


def _polar_grid(n: int, radius: float, points: int):
    """Torus points for ``n`` holomorphic and ``n`` antiholomorphic slots."""
    theta = 2 * np.pi * np.arange(points) / points
    circle = radius * np.exp(1j * theta)
    grids = np.meshgrid(*([circle] * (2 * n)), indexing="ij")
    return [g.ravel() for g in grids]


def taylor_coefficients(phi: Callable, n: int, radius: float = 0.25, points: int = 16) -> np.ndarray:
    """Coefficients ``c[alpha, beta]`` of ``phi(z, zbar) = sum c z^alpha zbar^beta``.

    ``phi`` takes two lists of ``n`` complex arrays (holomorphic and
    antiholomorphic slots).  Returns an array of shape ``(points,) * 2n``.
    """
    pts = _polar_grid(n, radius, points)
    vals = np.asarray(phi(pts[:n], pts[n:]), dtype=complex).reshape((points,) * (2 * n))
    coef = np.fft.fftn(vals) / points ** (2 * n)
    powers = np.arange(points)
    for axis in range(2 * n):
        shape = [1] * (2 * n)
        shape[axis] = points
        coef = coef / radius ** powers.reshape(shape)
    return coef


def _mixed_derivative(coef: np.ndarray, n: int, holo: tuple, anti: tuple) -> complex:
    alpha, beta = [0] * n, [0] * n
    for i in holo:
        alpha[i] += 1
    for j in anti:
        beta[j] += 1
    fact = np.prod([math.factorial(a) for a in alpha + beta])
    return complex(coef[tuple(alpha + beta)] * fact)


def jet_from_potential(phi: Callable, n: int, radius: float = 0.25, points: int = 16) -> ChartJet:
    coef = taylor_coefficients(phi, n, radius, points)
    rng = range(n)
    h = np.array([[_mixed_derivative(coef, n, (i,), (j,)) for j in rng] for i in rng])
    t3 = np.zeros((n,) * 3, complex)
    t4 = np.zeros((n,) * 4, complex)
    for i, j, k in itertools.product(rng, repeat=3):
        t3[i, j, k] = _mixed_derivative(coef, n, (i, k), (j,))
    for i, j, k, l in itertools.product(rng, repeat=4):
        t4[i, j, k, l] = _mixed_derivative(coef, n, (i, k, l), (j,))
    return ChartJet(n, h, t3, t4)


def prenormalize(jet: ChartJet) -> tuple[np.ndarray, ChartJet]:
    """Linear map ``z = L w`` making ``h`` the identity (Cholesky of ``h``)."""
    C = np.linalg.cholesky(jet.h)
    L = np.linalg.inv(C).T
    Lc = L.conj()
    h = np.einsum("ab,ai,bj->ij", jet.h, L, Lc)
    t3 = np.einsum("abc,ai,bj,ck->ijk", jet.t3, L, Lc, L)
    t4 = np.einsum("abcd,ai,bj,ck,dl->ijkl", jet.t4, L, Lc, L, L)
    return L, ChartJet(jet.n, h, t3, t4)


def normalize_chart(jet: ChartJet, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients ``(A, B)`` of ``z^b = w^b + A[b,i,k] w^i w^k + B[b,i,k,l] w^i w^k w^l``.

    The pulled-back potential has vanishing ``t3`` and ``t4`` at the origin.
    """
    if jet.n not in (1, 2):
        raise ValueError("chart normalization is implemented for n in {1, 2}")
    if np.max(np.abs(jet.h - np.eye(jet.n))) > tol:
        raise NotNormalized("d_i dbar_j phi(0) must equal the identity; use prenormalize first")
    A = -0.5 * np.einsum("ibk->bik", jet.t3)
    # C[b,i,k,l] = 1/3 sum of t3[a,b,.] A[a,.,.] over the three placements
    C = (np.einsum("abk,ail->bikl", jet.t3, A)
         + np.einsum("abi,akl->bikl", jet.t3, A)
         + np.einsum("abl,aik->bikl", jet.t3, A)) / 3.0
    B = -np.einsum("ibkl->bikl", jet.t4) / 6.0 - C
    B = _symmetrize_lower(B)
    return A, B


def _symmetrize_lower(B: np.ndarray) -> np.ndarray:
    perms = list(itertools.permutations((1, 2, 3)))
    return sum(np.transpose(B, (0,) + p) for p in perms) / len(perms)


def compose_potential(phi: Callable, A: np.ndarray, B: np.ndarray, L: np.ndarray | None = None) -> Callable:
    """Polarized pull-back of ``phi`` by ``z = L(w + A ww + B www)``."""
    n = A.shape[0]
    L = np.eye(n) if L is None else L

    def chart(w, coeffA, coeffB, lin):
        w = [np.asarray(x, dtype=complex) for x in w]
        out = []
        for b in range(n):
            v = w[b].copy()
            for i, k in itertools.product(range(n), repeat=2):
                v = v + coeffA[b, i, k] * w[i] * w[k]
            for i, k, l in itertools.product(range(n), repeat=3):
                v = v + coeffB[b, i, k, l] * w[i] * w[k] * w[l]
            out.append(v)
        return [sum(lin[a, b] * out[b] for b in range(n)) for a in range(n)]

    def pulled(w, wbar):
        return phi(chart(w, A, B, L), chart(wbar, A.conj(), B.conj(), L.conj()))

    return pulled


def verify_normal(phi: Callable, A: np.ndarray, B: np.ndarray, L: np.ndarray | None = None) -> dict:
    """Mixed derivatives of the pulled-back potential at the origin."""
    jet = jet_from_potential(compose_potential(phi, A, B, L), A.shape[0])
    return {
        "h_error": float(np.max(np.abs(jet.h - np.eye(jet.n)))),
        "t3_max": float(np.max(np.abs(jet.t3))),
        "t4_max": float(np.max(np.abs(jet.t4))),
    }
