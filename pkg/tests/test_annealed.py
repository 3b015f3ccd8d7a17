import math

import numpy as np
import pytest

from stochhom.annealed import (MomentError, MomentTable, bootstrap_ci, dd_moment_check,
                               estimate_moments, fit_decay_exponent, high_moment_flatness,
                               power_law_fit, reduce_table, weighted_sup_moment)
from stochhom.ensemble import EnsembleSpec

CHECKER = EnsembleSpec("checkerboard", lam=0.25, lo=0.25, hi=1.0)
CONSTANT = EnsembleSpec("constant", lam=1.0)


def synthetic_table(radii, values, q=2.0, which="grad", mu=0.0, dim=2):
    radii = np.asarray(radii, float)
    vals = np.tile(np.asarray(values, float), (3, 1))
    t = MomentTable("synthetic", dim, mu, radii, [q], {which: vals})
    return reduce_table(t)


@pytest.fixture(scope="module")
def constant_table():
    return estimate_moments(CONSTANT, 0.5, [3, 4, 6], [1, 2, 4], 50, 1)


@pytest.fixture(scope="module")
def checker_table():
    """Desk-scale d = 2 grid at reduced N, shared by the slower checks."""
    return estimate_moments(CHECKER, 0.01, [4, 8, 16, 32], [1, 2, 4, 8], 50, 2026)


def test_constant_ensemble_has_zero_width_intervals(constant_table):
    for key, ci in constant_table.ci.items():
        m = constant_table.moments[key]
        np.testing.assert_allclose(ci[0], m, rtol=1e-12)
        np.testing.assert_allclose(ci[1], m, rtol=1e-12)


def test_constant_flatness_ratios_are_one(constant_table):
    rep = high_moment_flatness(constant_table, (2, 4), "mixed")
    np.testing.assert_allclose(rep["ratio"], 1.0, rtol=1e-12)


def test_constant_dd_grad_slope():
    t = estimate_moments(CONSTANT, 0.01, [4, 8, 16, 32], [1, 2], 50, 3)
    rep = dd_moment_check(t, rate=None)
    assert abs(rep["grad"]["exponent"] + 1) <= 0.15


def test_too_few_samples():
    with pytest.raises(MomentError):
        estimate_moments(CHECKER, 1.0, [4, 8, 16], [2], 2, 0)


def test_probe_inside_near_field_rejected():
    with pytest.raises(MomentError):
        estimate_moments(CHECKER, 1.0, [2, 4, 8], [2], 50, 0)


def test_exact_power_law_fit():
    r = [4, 8, 16, 32]
    fit = fit_decay_exponent(synthetic_table(r, np.power(r, -2.0)), 2, "grad")
    assert fit.exponent == pytest.approx(-2, abs=1e-12) and fit.r_squared == pytest.approx(1)


def test_exact_deweighting():
    r = np.array([4, 8, 16, 32], float)
    mu = 0.09
    vals = np.exp(-0.3 * r) / r
    fit = fit_decay_exponent(synthetic_table(r, vals, mu=mu), 2, "grad", c_hat=0.3 / math.sqrt(mu))
    assert fit.exponent == pytest.approx(-1, abs=1e-12)
    joint = fit_decay_exponent(synthetic_table(r, vals, mu=mu), 2, "grad", c_hat=None)
    assert joint.exponent == pytest.approx(-1, abs=1e-9) and joint.rate == pytest.approx(1.0)


def test_degenerate_design():
    with pytest.raises(MomentError):
        power_law_fit([5, 5, 5], [1, 2, 3])
    with pytest.raises(MomentError):
        power_law_fit([4, 8], [1, 2])


def test_missing_q_values():
    t = synthetic_table([4, 8, 16], [1, 0.5, 0.25], q=2.0, which="grad")
    with pytest.raises(MomentError):
        dd_moment_check(t)
    with pytest.raises(MomentError):
        high_moment_flatness(t, (2, 8), "grad")
    with pytest.raises(MomentError):
        fit_decay_exponent(t, 4, "grad")


def test_single_radius_flatness_is_undefined():
    vals = np.array([[1.0], [2.0], [3.0]])
    t = reduce_table(MomentTable("x", 2, 0.1, np.array([4.0]), [2.0, 8.0], {"mixed": vals}))
    with pytest.raises(MomentError):
        high_moment_flatness(t, (2, 8), "mixed")


def test_jensen_monotone_in_q(checker_table):
    for which in ("grad", "mixed"):
        ms = [checker_table.moment(which, q) for q in checker_table.q_list]
        assert all(np.all(b >= a) for a, b in zip(ms, ms[1:]))


def test_reduce_table_rejects_decreasing_moments(monkeypatch):
    import stochhom.annealed as annealed
    t = MomentTable("x", 2, 0.1, np.array([4.0, 8.0]), [1.0, 2.0], {"grad": np.ones((5, 2))})
    monkeypatch.setattr(annealed, "empirical_moment", lambda v, q, axis=0: np.full(v.shape[1], 1.0 / q))
    with pytest.raises(MomentError):
        reduce_table(t)


def test_moments_decrease_in_radius(checker_table):
    for which in ("grad", "mixed"):
        assert np.all(np.diff(checker_table.moment(which, 2)) < 0)


def test_exponent_stable_across_moments(checker_table):
    e2 = fit_decay_exponent(checker_table, 2, "grad", None).exponent
    e4 = fit_decay_exponent(checker_table, 4, "grad", None).exponent
    assert abs(e2 - e4) <= 0.2


def test_weighted_sup_constant_ensemble(constant_table):
    rep = weighted_sup_moment(constant_table.samples, 0.5, constant_table.radii, 2)
    for which in ("grad", "mixed"):
        assert set(rep[which]["argmax_radius"]) == {3.0}
        assert rep[which]["variance"] == pytest.approx(0, abs=1e-30)


def test_weighted_sup_stabilizes_as_grid_grows(checker_table):
    rep = weighted_sup_moment(checker_table.samples, 0.5, checker_table.radii, 2, q_list=(2,), subgrid=3)
    assert rep["mixed"]["relative_change"][2.0] < 0.25


def test_weighted_sup_errors():
    with pytest.raises(MomentError):
        weighted_sup_moment({"mixed": np.ones((3, 2))}, 0.0, [4, 8], 2)
    with pytest.raises(MomentError):
        weighted_sup_moment({"mixed": np.ones((3, 0))}, 0.5, [], 2)


def test_reproducible_tables():
    a = estimate_moments(CHECKER, 0.5, [3, 5], [1, 2], 50, 9)
    b = estimate_moments(CHECKER, 0.5, [3, 5], [1, 2], 50, 9)
    for which in ("grad", "mixed"):
        assert np.array_equal(a.samples[which], b.samples[which])
    for key in a.moments:
        assert np.array_equal(a.moments[key], b.moments[key])
        assert np.array_equal(a.ci[key], b.ci[key])


def test_bootstrap_interval_halves_when_n_quadruples():
    small = estimate_moments(CHECKER, 0.5, [3, 4, 6], [2], 50, 31)
    big = estimate_moments(CHECKER, 0.5, [3, 4, 6], [2], 200, 32)
    for which in ("grad", "mixed"):
        w_small = np.diff(small.ci[(which, 2.0)], axis=0)[0]
        w_big = np.diff(big.ci[(which, 2.0)], axis=0)[0]
        ratio = w_big / w_small
        assert np.all(np.abs(ratio - 0.5) <= 0.4 * 0.5), ratio


def test_bootstrap_ci_is_deterministic_and_ordered(rng):
    x = rng.lognormal(size=(100, 3))
    a, b = bootstrap_ci(x, 2, seed=4), bootstrap_ci(x, 2, seed=4)
    assert np.array_equal(a, b) and np.all(a[0] <= a[1])


@pytest.mark.slow
def test_three_dimensional_mixed_slope():
    # nearly massless so exp(-c sqrt(mu) |x|) is ~1 on the grid; box 3 |x|_max
    t = estimate_moments(CHECKER, 1e-4, [6, 8, 10, 12], [1, 2], 50, 4242, dim=3, box_radius=39)
    fit = fit_decay_exponent(t, 1, "mixed", c_hat=0.0)
    assert abs(fit.exponent + 3) <= 0.4, fit.exponent
