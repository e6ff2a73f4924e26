import itertools
import math

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from kahlerlab.asymptotics import (LAPLACE_FIXTURES, ExpansionReport, LaplaceJet, expansion_check,
                                   jet_from_callables, laplace_convergence, laplace_expand,
                                   laplace_l1, laplace_oracle, predicted_bergman, rotate_jet)
from kahlerlab.errors import NotCritical, SingularHessian

one = lambda X: np.ones(X.shape[1])


def jet1(f2=-2.0, f3=0.0, f4=0.0, u0=1.0, u1=0.0, u2=0.0):
    return LaplaceJet(H=[[f2]], T3=[[[f3]]], T4=[[[[f4]]]], u0=u0, up=[u1], Hu=[[u2]])


@pytest.mark.parametrize("jet, expected", [
    (jet1(), 0.0),
    (jet1(u0=0.0, u2=2.0), 0.5),
    (jet1(f4=24.0), 0.75),
    (jet1(f3=6.0), 15 / 16),
])
def test_l1_fixtures(jet, expected):
    assert laplace_l1(jet) == pytest.approx(expected, abs=1e-12)


def test_l1_fixtures_from_finite_differences():
    cases = [(lambda X: -X[0] ** 2, one, 0.0), (lambda X: -X[0] ** 2, lambda X: X[0] ** 2, 0.5),
             (lambda X: -X[0] ** 2 + X[0] ** 4, one, 0.75), (lambda X: -X[0] ** 2 + X[0] ** 3, one, 15 / 16)]
    for f, u, expected in cases:
        assert laplace_l1(jet_from_callables(f, u, [0.0])) == pytest.approx(expected, abs=1e-9)


def test_l1_against_moment_oracles():
    # u = x^2: int x^2 e^{-lam x^2} / sqrt(pi/lam) = 1/(2 lam)
    lam = 37.0
    jet = jet1(u0=0.0, u2=2.0)
    assert laplace_expand(jet, lam) == pytest.approx(math.sqrt(math.pi / lam) / (2 * lam), rel=1e-14)
    # f = -x^2 + x^3: (lam^2/2) <x^6> = 15/(16 lam) with <x^6> = 15/(8 lam^3)
    assert (lam ** 2 / 2) * 15 / (8 * lam ** 3) == pytest.approx(laplace_l1(jet1(f3=6.0)) / lam)


def test_expand_examples():
    assert laplace_expand(jet1(), 10.0) == pytest.approx(math.sqrt(math.pi / 10), rel=1e-14)
    assert laplace_expand(jet1(), 10.0) == pytest.approx(0.560499, abs=1e-6)
    shifted = LaplaceJet(H=[[-2.0]], T3=[[[0.0]]], T4=[[[[0.0]]]], u0=1.0, up=[0.0], Hu=[[0.0]], f0=0.3)
    assert laplace_expand(shifted, 10.0) == pytest.approx(math.exp(3.0) * laplace_expand(jet1(), 10.0))
    jet2 = LaplaceJet(H=np.diag([-2.0, -4.0]), T3=np.zeros((2,) * 3), T4=np.zeros((2,) * 4),
                      u0=1.0, up=np.zeros(2), Hu=np.zeros((2, 2)))
    assert laplace_expand(jet2, 5.0) == pytest.approx((2 * math.pi / 5) / math.sqrt(8), rel=1e-14)
    with pytest.raises(ValueError):
        laplace_expand(jet1(), -1.0)


def test_jet_validation():
    with pytest.raises(SingularHessian):
        jet1(f2=1.0)
    with pytest.raises(NotCritical):
        LaplaceJet(H=[[-2.0]], T3=[[[0.0]]], T4=[[[[0.0]]]], u0=1.0, up=[0.0], Hu=[[0.0]], grad=[1e-6])
    with pytest.raises(NotCritical):
        jet_from_callables(lambda X: -(X[0] - 0.1) ** 2, one, [0.0])
    with pytest.raises(ValueError):
        LaplaceJet(H=[[-2.0, 0.1], [0.0, -2.0]], T3=np.zeros((2,) * 3), T4=np.zeros((2,) * 4),
                   u0=1.0, up=np.zeros(2), Hu=np.zeros((2, 2)))


def test_oracle_examples():
    f = lambda X: -X[0] ** 2
    assert laplace_oracle(f, one, 100.0, [(-1.0, 1.0)]) == pytest.approx(math.sqrt(math.pi) / 10, rel=1e-13)
    assert laplace_oracle(f, lambda X: 0 * X[0], 100.0, [(-1.0, 1.0)]) == 0.0
    lam = 50.0
    g = lambda X: -X[0] ** 2 + X[0] ** 4
    ref = laplace_oracle(g, one, lam, [(-0.6, 0.6)])
    approx = laplace_expand(jet_from_callables(g, one, [0.0]), lam)
    assert abs(ref - approx) / ref <= 30 / lam ** 2
    with pytest.raises(ValueError):
        laplace_oracle(f, one, 1.0, [(-1, 1)] * 4)


def test_jet_from_callables_examples():
    jet = jet_from_callables(lambda X: -X[0] ** 2 + X[0] ** 4, lambda X: X[0] ** 2, [0.0])
    assert jet.H[0, 0] == pytest.approx(-2.0, abs=1e-9)
    assert jet.T4[0, 0, 0, 0] == pytest.approx(24.0, abs=1e-5)
    assert jet.up[0] == pytest.approx(0.0, abs=1e-9)
    assert jet.Hu[0, 0] == pytest.approx(2.0, abs=1e-9)


def test_l1_rotation_invariance():
    f, u, _, x0 = LAPLACE_FIXTURES["coupled_2d"]
    jet = jet_from_callables(f, u, x0)
    for seed in range(3):
        Q = special_ortho_group.rvs(2, random_state=seed)
        assert laplace_l1(rotate_jet(jet, Q)) == pytest.approx(laplace_l1(jet), abs=1e-9)
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3))
    T3 = rng.standard_normal((3,) * 3)
    T4 = rng.standard_normal((3,) * 4)
    sym = lambda T: sum(np.transpose(T, p) for p in itertools.permutations(range(T.ndim)))
    jet3 = LaplaceJet(H=-(A @ A.T + 3 * np.eye(3)), T3=sym(T3), T4=sym(T4), u0=1.3,
                      up=rng.standard_normal(3), Hu=sym(rng.standard_normal((3, 3))))
    Q = special_ortho_group.rvs(3, random_state=11)
    assert laplace_l1(rotate_jet(jet3, Q)) == pytest.approx(laplace_l1(jet3), abs=1e-9)


@pytest.mark.parametrize("name", sorted(LAPLACE_FIXTURES))
def test_consistency_orders(name):
    f, u, box, x0 = LAPLACE_FIXTURES[name]
    res = laplace_convergence(f, u, box, x0)
    assert abs(res["slope_l1"] - 2) <= 0.2
    assert abs(res["slope_l0"] - 1) <= 0.2


def test_predicted_bergman_flat():
    assert predicted_bergman(8, 0.0) == pytest.approx(8 / math.pi)
    assert predicted_bergman(16, 0.0) == pytest.approx(2 * predicted_bergman(8, 0.0))


def test_expansion_exact_on_disc(disc):
    points = [0.0, 0.3, 0.6, 0.9]
    rep = expansion_check(disc, [2, 3, 7, 20, 40], points)
    assert max(abs(r["residual"]) for r in rep.records) <= 1e-9
    text = rep.to_csv()
    assert text.splitlines()[0] == "k,s,B_measured,B_predicted,residual"
    assert len(text.splitlines()) == 1 + 5 * len(points)


def test_expansion_report_summary():
    rep = ExpansionReport(records=[{"k": 2, "s": 0.0, "B_measured": 1.0, "B_predicted": 1.1, "residual": -0.1},
                                   {"k": 4, "s": 0.0, "B_measured": 1.0, "B_predicted": 1.05, "residual": -0.05}])
    ks, res = rep.max_residual_by_k()
    assert list(ks) == [2, 4] and np.allclose(res, [0.1, 0.05])
    assert rep.summary()["k"] == [2, 4]
