"""Scheduled mollifier families and their verification battery.

Moment identities are cross-checked against scipy's adaptive quadrature,
which shares nothing with the fixed Gauss-Legendre rule the package uses.
Expected point values below were frozen from that oracle.
"""

import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from gfcalc.distributions import DiracDelta, HeavisideJump, SmoothDensity
from gfcalc.interval import Interval
from gfcalc.numerics import EpsGrid, batch_integrate, fit_loglog
from gfcalc.smoothfn import Sin, X, bump_deriv_values
from gfcalc.testobjects import (
    CombinedFamily,
    FixedSchedule,
    MAX_MOMENT_ORDER,
    Modulation,
    StaircaseSchedule,
    TestObjectFamily,
    ZeroTestObjectFamily,
    base_family,
    family_from_json,
    is_uniform_set,
    make_mollifier,
    make_uniform_set,
    verify_test_object,
)


# --- mollifier construction ---------------------------------------------------

def test_moments_against_adaptive_quadrature():
    for m in (0, 4, 12, 24):
        psi = make_mollifier(m)
        for k in range(m + 1):
            val, _ = quad(lambda t: t ** k * psi.deriv_values(0, t), -1, 1,
                          limit=200, epsabs=1e-13, epsrel=1e-13)
            want = 1.0 if k == 0 else 0.0
            assert abs(val - want) < 1e-10, (m, k, val)


def test_order_zero_is_the_normalized_bump():
    mass, _ = quad(lambda t: bump_deriv_values(0, t), -1, 1,
                   epsabs=1e-14, epsrel=1e-14)
    psi = make_mollifier(0)
    ts = np.linspace(-0.99, 0.99, 41)
    np.testing.assert_allclose(psi.deriv_values(0, ts),
                               bump_deriv_values(0, ts) / mass,
                               rtol=0, atol=1e-13)


def test_odd_order_adds_no_constraint():
    # the profile is even, so odd moments vanish for free
    ts = np.linspace(-0.98, 0.98, 33)
    for m in (0, 4, 10):
        np.testing.assert_allclose(make_mollifier(m + 1).deriv_values(0, ts),
                                   make_mollifier(m).deriv_values(0, ts),
                                   rtol=0, atol=1e-12)


def test_frozen_peak_values():
    expected = {
        0: (0.828568839869104, 0.593695516732013),
        2: (1.56883877400678, 0.285442722247311),
        4: (2.27787895507007, -0.370024023850874),
        8: (3.65638863826427, -0.102280774297717),
        16: (6.34674348979414, -0.529273626957857),
        24: (8.99786427725888, 0.404844932645752),
    }
    for m, (at0, athalf) in expected.items():
        psi = make_mollifier(m)
        assert psi.deriv_values(0, 0.0) == pytest.approx(at0, abs=1e-12)
        assert psi.deriv_values(0, 0.5) == pytest.approx(athalf, abs=1e-12)


def test_profile_is_even_and_compactly_supported():
    psi = make_mollifier(8)
    ts = np.linspace(0.01, 0.97, 25)
    np.testing.assert_allclose(psi.deriv_values(0, -ts), psi.deriv_values(0, ts),
                               rtol=0, atol=1e-14)
    assert np.all(psi.deriv_values(0, np.array([-1.0, 1.0, -1.5, 2.0])) == 0.0)
    assert np.all(psi.deriv_values(3, np.array([1.0, -1.2])) == 0.0)


def test_mollifier_rejects_bad_orders():
    with pytest.raises(ValueError):
        make_mollifier(-1)
    with pytest.raises(ValueError):
        make_mollifier(MAX_MOMENT_ORDER + 1)
    with pytest.raises(TypeError):
        make_mollifier(2.5)


# --- kernels ------------------------------------------------------------------

def test_unit_mass_is_exact_with_and_without_modulation():
    plain = base_family()
    mod = make_uniform_set(plain, 2, seed=7)[1]
    x = np.array([0.3])
    for fam in (plain, mod):
        for eps in (2.0 ** -4, 2.0 ** -12):
            lo, hi = fam.support_bounds(eps, x)
            mass = batch_integrate(lambda y: fam.kernel(eps, x[:, None], y),
                                   lo, hi)[0]
            assert abs(mass - 1.0) < 1e-13


def test_support_radius_is_eps():
    fam = make_uniform_set(base_family(), 2, seed=3)[1]
    eps = 2.0 ** -5
    x = 0.37
    ys = x + eps * np.array([-1.7, -1.0, 1.0, 1.4])
    assert np.all(fam.kernel(eps, x, ys) == 0.0)
    inside = x + eps * np.linspace(-0.9, 0.9, 11)
    assert np.max(np.abs(fam.kernel(eps, x, inside))) > 1.0


def test_polynomial_reproduction_is_exact_up_to_the_schedule():
    fam = base_family()
    eps = 2.0 ** -6  # schedule gives order 6 here
    assert fam.order_at(eps) == 6
    poly = X ** 6 - 3.0 * X ** 3 + 2.0 * X - 0.25
    xs = np.linspace(-0.8, 0.8, 9)
    got = fam.smooth_pairing(eps, 0, xs, poly)
    np.testing.assert_allclose(got, poly(xs), rtol=0, atol=1e-12)


def test_modulated_reproduction_defect_decays_one_past_generic_order():
    # modulation adds eps * odd(t); with moment order 2 the defect picks up
    # eps^5, not the generic eps^4 (parity eats one more power)
    fam = TestObjectFamily(schedule=FixedSchedule(2),
                           modulation=Modulation.from_seed(11))
    poly = X * X - 0.5 * X
    xs = np.linspace(-0.4, 0.4, 9)
    grid = EpsGrid().values
    errs = [float(np.max(np.abs(fam.smooth_pairing(e, 0, xs, poly) - poly(xs))))
            for e in grid]
    fit = fit_loglog(grid, errs)
    assert fit.floor_hit
    assert fit.slope == pytest.approx(5.0, abs=0.3)


def test_mixed_kernel_derivatives_match_finite_differences():
    fam = make_uniform_set(base_family(), 2, seed=7)[1]
    eps = 2.0 ** -6
    x0, y0, h = 0.31, 0.312, 1e-5
    fd_dx = (fam.kernel(eps, x0 + h, y0) - fam.kernel(eps, x0 - h, y0)) / (2 * h)
    fd_dy = (fam.kernel(eps, x0, y0 + h) - fam.kernel(eps, x0, y0 - h)) / (2 * h)
    assert fd_dx == pytest.approx(fam.kernel_dxdy(eps, 1, 0, x0, y0), rel=1e-4)
    assert fd_dy == pytest.approx(fam.kernel_dxdy(eps, 0, 1, x0, y0), rel=1e-4)


def test_pairing_derivatives_match_finite_differences():
    fam = make_uniform_set(base_family(), 2, seed=7)[1]
    eps = 2.0 ** -6
    xs = np.array([0.001, -0.003, 0.01])
    h = 1e-5
    for dist, rel in ((HeavisideJump(0.0), 1e-3),
                      (SmoothDensity(Sin(X), "sin"), 1e-8)):
        fd = (dist.pair_kernel(fam, eps, 0, xs + h)
              - dist.pair_kernel(fam, eps, 0, xs - h)) / (2 * h)
        an = dist.pair_kernel(fam, eps, 1, xs)
        np.testing.assert_allclose(fd, an, rtol=rel)


def test_delta_pairing_is_the_kernel_slice():
    fam = base_family()
    eps = 2.0 ** -5
    xs = np.linspace(-0.03, 0.03, 7)
    np.testing.assert_array_equal(DiracDelta(0.0).pair_kernel(fam, eps, 0, xs),
                                  fam.kernel_dxdy(eps, 0, 0, xs, 0.0))


def test_delta_net_is_moderate_of_order_minus_one():
    fam = base_family()
    xs = np.linspace(-0.5, 0.5, 33)
    grid = EpsGrid().values
    sups = [float(np.max(np.abs(DiracDelta(0.0).pair_kernel(fam, e, 0, xs))))
            for e in grid]
    fit = fit_loglog(grid, sups)
    assert abs(fit.slope + 1.0) <= 0.1
    assert fit.r2 >= 0.99


# --- schedules, sets, serialization --------------------------------------------

def test_staircase_schedule_caps_at_the_moment_limit():
    s = StaircaseSchedule()
    for k in range(4, 31):
        assert s.order_at(2.0 ** -k) == min(24, k)
    assert StaircaseSchedule(cap=6).order_at(2.0 ** -10) == 6
    assert FixedSchedule(3).order_at(1e-9) == 3


def test_uniform_sets_share_schedule_and_domain():
    fams = make_uniform_set(base_family(), 4, seed=0)
    assert len(fams) == 4
    ok, reasons = is_uniform_set(fams)
    assert ok and reasons == []
    rogue = TestObjectFamily(schedule=FixedSchedule(2))
    ok, reasons = is_uniform_set(fams + [rogue])
    assert not ok
    assert any("schedule" in r for r in reasons)


def test_affine_structure_of_the_set_of_families():
    fams = make_uniform_set(base_family(), 3, seed=5)
    zero = ZeroTestObjectFamily(minuend=fams[1], subtrahend=fams[2])
    assert zero.is_zero
    combined = CombinedFamily(base=fams[0], direction=zero, scale=0.7)
    assert not combined.is_zero
    eps = 2.0 ** -5
    x = np.array([0.1])
    lo, hi = zero.support_bounds(eps, x)
    mass = batch_integrate(lambda y: zero.kernel(eps, x[:, None], y), lo, hi)[0]
    assert abs(mass) < 1e-13
    ys = np.linspace(0.05, 0.15, 5)
    np.testing.assert_allclose(
        combined.kernel(eps, 0.1, ys),
        fams[0].kernel(eps, 0.1, ys) + 0.7 * zero.kernel(eps, 0.1, ys),
        rtol=1e-14)


def test_damped_zero_family_scales_by_eps_power():
    fams = make_uniform_set(base_family(), 3, seed=5)
    z0 = ZeroTestObjectFamily(minuend=fams[1], subtrahend=fams[2], damping=0)
    z2 = ZeroTestObjectFamily(minuend=fams[1], subtrahend=fams[2], damping=2)
    eps = 2.0 ** -6
    ys = np.linspace(0.05, 0.15, 5)
    np.testing.assert_allclose(z2.kernel(eps, 0.1, ys),
                               eps ** 2 * z0.kernel(eps, 0.1, ys), rtol=1e-14)
    with pytest.raises(ValueError):
        ZeroTestObjectFamily(minuend=fams[1], subtrahend=fams[2], damping=-1)


def test_families_on_different_domains_do_not_mix():
    a = base_family()
    b = base_family(domain=Interval(-1.0, 1.0))
    with pytest.raises(ValueError):
        ZeroTestObjectFamily(minuend=a, subtrahend=b)


def test_json_roundtrip_for_every_family_shape():
    fams = make_uniform_set(base_family(), 3, seed=9)
    zero = ZeroTestObjectFamily(minuend=fams[1], subtrahend=fams[2], damping=1)
    combined = CombinedFamily(base=fams[0], direction=zero, scale=-0.3)
    for fam in (fams[0], fams[1], zero, combined):
        again = family_from_json(fam.to_json())
        assert again == fam
    frozen = TestObjectFamily(schedule=FixedSchedule(4), label="f4")
    assert family_from_json(frozen.to_json()) == frozen


# --- verification battery -----------------------------------------------------

def test_base_family_passes_every_condition():
    rep = verify_test_object(base_family())
    assert set(rep.conditions) == {"approximation", "growth", "smooth", "support"}
    assert rep.passed
    for cond in rep.conditions.values():
        assert cond.passed, cond.name


def test_frozen_order_family_fails_smoothing_at_order_three():
    rep = verify_test_object(TestObjectFamily(schedule=FixedSchedule(0)))
    assert not rep.passed
    assert rep.conditions["approximation"].passed
    assert rep.conditions["growth"].passed
    assert rep.conditions["support"].passed
    smooth = rep.conditions["smooth"]
    assert not smooth.passed
    for row in smooth.rows:
        assert row["first_failing_order"] == 3
        assert row["slope"] == pytest.approx(2.0, abs=0.3)


def test_zero_family_passes_the_zero_conditions():
    fams = make_uniform_set(base_family(), 3, seed=5)
    zero = ZeroTestObjectFamily(minuend=fams[1], subtrahend=fams[2])
    rep = verify_test_object(zero)
    assert rep.zero_type
    assert rep.passed


def test_report_serialization_and_csv():
    rep = verify_test_object(base_family(), grid=EpsGrid(count=6))
    d = json.loads(rep.to_json())
    assert d["passed"] is True
    assert len(d["grid"]) == 6
    assert set(d["conditions"]) == {"approximation", "growth", "smooth", "support"}
    rows = rep.csv_rows()
    assert all(len(r) == 3 for r in rows)
    eps_seen = sorted({r[0] for r in rows}, reverse=True)
    assert eps_seen[0] == pytest.approx(2.0 ** -4)
    assert rows[0][0] == max(e for e, _, _ in rows)
    assert all(isinstance(name, str) and math.isfinite(v)
               for _, name, v in rows)


def test_quadrature_resolves_the_highest_scheduled_profile():
    # the fixed rule must not leak error above the exact-zero floor
    psi = make_mollifier(24)
    mass = batch_integrate(lambda t: psi.deriv_values(0, t),
                           np.array([-1.0]), np.array([1.0]))[0]
    assert abs(mass - 1.0) < 1e-13
    mom4 = batch_integrate(lambda t: t ** 4 * psi.deriv_values(0, t),
                           np.array([-1.0]), np.array([1.0]))[0]
    assert abs(mom4) < 1e-13
