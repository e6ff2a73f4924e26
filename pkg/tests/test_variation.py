import math

import numpy as np
import pytest

from kahlerlab.bergman import compute_moments, kernel_eval
from kahlerlab.errors import OutsideFiber, StencilOutsideDomain
from kahlerlab.geometry import RadialPotential, constant
from kahlerlab.variation import (DiscFamily, FiberCache, ScanGrid, default_step,
                                 fiber_uniform_bound_check, glued_ke_potential, levi_form_fd,
                                 psh_scan, radius_profile, relative_bergman_log)

SHRINK = DiscFamily(radius_profile("shrinking"), "ke_glued", "yes", label="shrinking")
GROW = DiscFamily(radius_profile("growing"), "ke_glued", "no", label="growing")
CONST = DiscFamily(radius_profile("constant"), "ke_glued", "boundary", label="constant")


def test_glued_examples():
    assert glued_ke_potential(CONST, 0.3j, 0.0) == pytest.approx(math.log(2))
    # scaling identity Phi(t, z) = Phi_unit(z / r) - 2 log r
    t, z = 0.4 - 0.2j, 0.3 + 0.1j
    r = float(SHRINK.r(t))
    assert glued_ke_potential(SHRINK, t, z) == pytest.approx(glued_ke_potential(CONST, t, z / r) - 2 * math.log(r))
    # r = exp(-|t|^2) at t = 0.5: log 2 - 2 log r = log 2 + 1/2
    assert glued_ke_potential(SHRINK, 0.5, 0.0) == pytest.approx(math.log(2) + 0.5, abs=1e-14)
    with pytest.raises(OutsideFiber):
        glued_ke_potential(CONST, 0.0, 0.9995)


def test_family_validation():
    with pytest.raises(ValueError):
        DiscFamily(lambda t: 1 - np.abs(t) * 2, "ke_glued")
    with pytest.raises(ValueError):
        DiscFamily(radius_profile("constant"), "other")


def test_unweighted_fiber_kernel():
    r = 0.7
    fam = DiscFamily(radius_profile("constant", r), "bergman_log")
    for z in (0.0, 0.3, 0.5j):
        s = abs(z) ** 2
        expected = math.log(r * r / (math.pi * (r * r - s) ** 2))
        assert relative_bergman_log(fam, 1, None, 0.1, z) == pytest.approx(expected, abs=1e-13)


def test_unit_family_reduces_to_single_disc():
    mom = compute_moments(lambda s, gap: np.zeros_like(s), 1.0, s_eval=0.95)
    fam = DiscFamily(radius_profile("constant"), "bergman_log")
    assert relative_bergman_log(fam, 1, None, 0.2, 0.4) == pytest.approx(math.log(kernel_eval(mom, 0.16)), abs=1e-14)


def test_fiber_weight_shift():
    fam = DiscFamily(radius_profile("constant"), "bergman_log")
    k, c = 3, 0.45
    base = lambda t: RadialPotential(constant(0.2), 0.0, 1.0)
    moved = lambda t: RadialPotential(constant(0.2 + c), 0.0, 1.0)
    a = relative_bergman_log(fam, k, base, 0.0, 0.5)
    b = relative_bergman_log(fam, k, moved, 0.0, 0.5)
    assert b - a == pytest.approx((k - 1) * c, abs=1e-12)


def test_fiber_cache_reuse():
    fam = DiscFamily(radius_profile("shrinking"), "bergman_log")
    cache = FiberCache()
    relative_bergman_log(fam, 1, None, np.array([0.1, 0.1, 0.2]), np.array([0.0, 0.3, 0.1]), cache=cache)
    assert len(cache) == 2


def test_levi_quadratic_model():
    L = levi_form_fd(lambda t, z: np.abs(t) ** 2 + np.abs(z) ** 2, (0.1 + 0.2j, 0.3j))
    assert np.allclose(L, np.eye(2), atol=1e-9)
    assert np.allclose(L, L.conj().T)


def test_levi_constant_family():
    t, z = 0.25 - 0.1j, 0.4 + 0.2j
    L = levi_form_fd(CONST.potential(), (t, z), default_step(CONST, t, z))
    assert np.max(np.abs(L[0, :])) <= 1e-9 and np.max(np.abs(L[:, 0])) <= 1e-9
    s = abs(z) ** 2
    assert L[1, 1].real == pytest.approx(2 / (1 - s) ** 2, rel=1e-6)


def test_levi_shrinking_point():
    t, z = 0.3, 0.2
    L, err = levi_form_fd(SHRINK.potential(), (t, z), default_step(SHRINK, t, z), full_output=True)
    assert np.min(np.linalg.eigvalsh(L)) >= -1e-7
    r = math.exp(-t * t)
    assert L[1, 1].real == pytest.approx(2 * r * r / (r * r - z * z) ** 2, rel=1e-6)
    assert np.max(err) < 1e-8


def test_stencil_convergence():
    t, z = 0.2 + 0.1j, 0.3
    h = np.array(default_step(SHRINK, t, z)) * 10
    Phi = SHRINK.potential()
    L1, err = levi_form_fd(Phi, (t, z), tuple(h), full_output=True)
    L2 = levi_form_fd(Phi, (t, z), tuple(h / 2))
    assert np.all(np.abs(L1 - L2) <= 16 * err + 1e-12)


def test_stencil_outside_domain():
    with pytest.raises(StencilOutsideDomain):
        levi_form_fd(CONST.potential(), (0.0, 0.998), 1e-3)


def test_scan_verdicts():
    rep = psh_scan(SHRINK, ScanGrid(5, 5))
    assert rep.verdict == "PSH_CONFIRMED"
    bad = psh_scan(GROW, ScanGrid(5, 5))
    assert bad.verdict == "VIOLATION" and bad.min_eig <= -1e-3
    assert "violation_at" in bad.summary()
    flat = psh_scan(CONST, ScanGrid(5, 5))
    lo, hi = flat.t_direction_extremes()
    assert -1e-9 <= lo <= hi <= 1e-9 and abs(flat.min_eig) <= 1e-9


def test_fiber_density_on_scan():
    rep = psh_scan(SHRINK, ScanGrid(3, 5))
    for rec in rep.records:
        r = float(SHRINK.r(rec["t"]))
        s = abs(rec["z"]) ** 2
        assert rec["matrix"][1, 1].real == pytest.approx(2 * r * r / (r * r - s) ** 2, rel=1e-6)


def test_levi_report_csv_and_json():
    rep = psh_scan(CONST, ScanGrid(2, 2))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "t_re,t_im,z_re,z_im,eig_min,eig_max" and len(lines) == 9
    assert '"verdict": "PSH_CONFIRMED"' in rep.to_json()


def test_fiber_uniform_bound():
    rep = fiber_uniform_bound_check(CONST, [0.0, 0.5j])
    assert all(abs(f["closed_form"] - math.log(2)) < 1e-15 for f in rep["fibers"])
    assert rep["max_oscillation"] <= 1e-10
    ts = [0.8 * np.exp(1j * a) for a in np.linspace(0, 2 * np.pi, 9)] + [0.0, 0.4]
    rep = fiber_uniform_bound_check(SHRINK, ts)
    assert rep["max_oscillation"] <= 1e-10
    assert rep["bound"] == pytest.approx(max(math.log(2), 1.28 - math.log(2)), abs=1e-12)
