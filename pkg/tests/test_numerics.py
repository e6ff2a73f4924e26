import math

import numpy as np
import pytest

from kahlerlab.errors import BudgetExceeded, NonFinite
from kahlerlab.numerics import (QuadratureSpec, RadialGrid, chebyshev_nodes, composite_rule,
                                graded_rule, integrate_disc, loglog_slope, sup_abs)


def test_unit_disc_area():
    assert integrate_disc(lambda s: np.ones_like(s)) == pytest.approx(math.pi, rel=1e-14)


def test_beta_weight():
    k = 3
    val = integrate_disc(lambda s: (1 - s) ** (2 * k - 2))
    assert val == pytest.approx(math.pi / 5, rel=1e-13)


def test_inverse_sqrt_boundary_with_algebraic_map():
    spec = QuadratureSpec(boundary_map="algebraic", alpha=-0.5)
    val = integrate_disc(lambda s, gap: gap ** -0.5, spec, with_gap=True)
    assert val == pytest.approx(2 * math.pi, rel=1e-13)
    # recomputing 1 - s from s costs digits near the boundary but stays accurate
    val = integrate_disc(lambda s: (1 - s) ** -0.5, spec, rtol=1e-9)
    assert val == pytest.approx(2 * math.pi, rel=1e-9)


def test_linearity():
    f = lambda s: np.exp(s) * (1 - s) ** 4
    g = lambda s: np.cos(3 * s)
    lhs = integrate_disc(lambda s: 2.5 * f(s) - 0.7 * g(s))
    rhs = 2.5 * integrate_disc(f) - 0.7 * integrate_disc(g)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_polynomial_exactness_per_panel():
    spec = QuadratureSpec(panels=1, points_per_panel=8)
    s, w = composite_rule([0.0, 1.0], spec.points_per_panel)
    for deg in range(2 * spec.points_per_panel):
        assert np.dot(w, s ** deg) == pytest.approx(1.0 / (deg + 1), rel=1e-13)


def test_refinement_error_estimate():
    f = lambda s: np.sin(5 * s) / (1 + s)
    val, err, nodes = integrate_disc(f, QuadratureSpec(panels=2, points_per_panel=4), full_output=True)
    finer = integrate_disc(f, QuadratureSpec(panels=64, points_per_panel=16))
    assert abs(val - finer) <= max(err, 1e-15)


def test_nonfinite_and_budget():
    with pytest.raises(NonFinite):
        with np.errstate(divide="ignore", invalid="ignore"):
            integrate_disc(lambda s: 1 / (s - s))
    with pytest.raises(BudgetExceeded):
        integrate_disc(lambda s: np.sin(1 / (1.0001 - s)), max_nodes=2048)


def test_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(panels=0)
    with pytest.raises(ValueError):
        QuadratureSpec(points_per_panel=1)


def test_radial_grid_invariants():
    RadialGrid(np.array([0.0, 0.5]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        RadialGrid(np.array([0.1, 0.5]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        RadialGrid(np.array([0.0, 0.5, 0.4]), np.zeros(3))
    with pytest.raises(NonFinite):
        RadialGrid(np.array([0.0, 0.5]), np.array([1.0, np.nan]))


def test_graded_rule_moments_against_beta():
    # int_0^1 s^j (1-s)^a ds = B(j+1, a+1)
    from scipy.special import betaln
    a = 40.0
    rule = graded_rule(1.0, a, 200)
    for j in (0, 10, 200):
        got = np.log(np.dot(rule.weights, np.exp(j * rule.log_s + a * np.log(rule.gap))))
        assert got == pytest.approx(betaln(j + 1, a + 1), abs=1e-12)


def test_chebyshev_nodes_and_sup():
    x = chebyshev_nodes(17, 2.0, 1.0)
    assert x[0] == 1.0 and x[-1] == 2.0 and np.all(np.diff(x) > 0)
    sup, arg = sup_abs(lambda t: np.sin(7 * t), 0.0, 0.3)
    assert sup == pytest.approx(1.0, abs=1e-12)
    assert arg == pytest.approx(math.pi / 14, abs=1e-6)


def test_loglog_slope_exact():
    k = np.arange(2, 20)
    C, p, rms = loglog_slope(k, 3.0 / k ** 2)
    assert (C, p) == (pytest.approx(3.0), pytest.approx(-2.0))
    assert rms < 1e-12
