import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochhom.ensemble import EnsembleSpec
from stochhom.fluctuations import (FluctuationConfig, FluctuationError, centered, fluctuation_experiment,
                                   mixed_norm, profile, scaled_rhs, strong_fluctuation_experiment,
                                   strong_vs_weak_gap, torus, weak_fluctuation_experiment)

CHECKER = EnsembleSpec("checkerboard", lam=0.25, lo=0.25, hi=1.0)
CONSTANT = EnsembleSpec("constant", lam=1.0)
SMALL = FluctuationConfig(sizes=(8, 16, 32), N=20)


def test_mixed_norm_of_zero():
    assert mixed_norm(np.zeros((7, 7)), 2, 1, 1) == 0


def test_mixed_norm_delta_five_site_pattern():
    f = np.zeros((9, 9))
    f[4, 4] = 1
    # |f| averages to 1/5 on each of the five balls containing the origin
    assert mixed_norm(f, 2, 1, 1) == pytest.approx(math.sqrt(5 * (1 / 5) ** 2), rel=1e-15)
    assert mixed_norm(f, 2, 1, 1, periodic=True) == pytest.approx(math.sqrt(1 / 5), rel=1e-15)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 2.0, 3.0]), st.integers(0, 2),
       st.booleans())
def test_mixed_norm_jensen(seed, q, eps_ball, periodic):
    f = np.random.default_rng(seed).normal(size=(10, 10))
    assert mixed_norm(f, q, q, eps_ball, periodic) <= (np.abs(f) ** q).sum() ** (1 / q) * (1 + 1e-12)


def test_mixed_norm_jensen_100_fields(rng):
    for _ in range(100):
        f = rng.normal(size=(8, 8))
        assert mixed_norm(f, 2, 2, 1) <= np.sqrt((f ** 2).sum()) * (1 + 1e-12)


def test_mixed_norm_rejects_bad_exponents():
    with pytest.raises(FluctuationError):
        mixed_norm(np.ones((3, 3)), 0.5, 1, 1)
    with pytest.raises(FluctuationError):
        mixed_norm(np.ones((3, 3)), 2, 0.5, 1)


@pytest.mark.parametrize("bad", [dict(sizes=(32,)), dict(sizes=(32, 64)), dict(lam=1.0),
                                 dict(dim=3, lam=1.5), dict(lam1=1.0, lam2=1.0),
                                 dict(q=2, r=2), dict(rhs="square"), dict(N=1)])
def test_config_validation(bad):
    with pytest.raises(FluctuationError):
        FluctuationConfig(**bad)


def test_declared_exponent_relations_accepted():
    FluctuationConfig(p=2, q=1.5, r=1.2)
    FluctuationConfig(p=2, q=2, r=1, r_tilde=2, q_tilde=2)


def test_rescaled_rhs_and_profiles():
    lat = torus(2, 16)
    f = scaled_rhs(lat, "bump")
    assert lat.side == 17 and f.max() == pytest.approx(1 / 17 ** 2)
    assert np.all(profile("plane_wave", np.zeros((1, 2))) == 1)
    with pytest.raises(FluctuationError):
        profile("triangle", np.zeros((1, 2)))


def test_centering_identical_samples_is_exact_zero(rng):
    u = rng.normal(size=(5, 5))
    assert np.all(centered(np.stack([u] * 4)) == 0)


def test_constant_ensemble_vanishes():
    res = fluctuation_experiment(SMALL, CONSTANT, 3)
    assert np.all(res.strong == 0) and np.all(res.weak == 0) and res.degenerate
    s = replace(res, mode="strong")
    report = strong_vs_weak_gap(s, replace(res, mode="weak"))
    assert report["degenerate"] and math.isnan(report["gap"])


def test_zero_test_function_gives_zero_weak(monkeypatch):
    import stochhom.fluctuations as fl
    original = fl.profile
    monkeypatch.setattr(fl, "profile", lambda name, y: np.zeros(len(y)) if name == "plane_wave"
                        else original(name, y))
    res = fl.fluctuation_experiment(replace(SMALL, test="plane_wave"), CHECKER, 4)
    assert np.all(res.weak == 0) and np.all(res.strong > 0)


def test_shift_invariance(monkeypatch):
    """Adding one deterministic field to every sample leaves S_n unchanged."""
    import stochhom.fluctuations as fl
    base = fl.fluctuation_experiment(SMALL, CHECKER, 5)
    original = fl._solve_worker

    def shifted(i, spec, lattice, mu_n, f, master_seed, tolerance):
        u = original(i, spec, lattice, mu_n, f, master_seed, tolerance)
        return u + np.cos(np.arange(u.size)).reshape(u.shape)

    monkeypatch.setattr(fl, "_solve_worker", shifted)
    moved = fl.fluctuation_experiment(SMALL, CHECKER, 5)
    np.testing.assert_allclose(moved.strong, base.strong, rtol=1e-10)
    np.testing.assert_allclose(moved.weak, base.weak, rtol=1e-8, atol=1e-14)


def test_identical_result_gap_is_zero():
    s = strong_fluctuation_experiment(SMALL, CHECKER, 6)
    assert strong_vs_weak_gap(s, s)["gap"] == 0
    w = weak_fluctuation_experiment(SMALL, CHECKER, 6)
    assert strong_vs_weak_gap(w, w)["gap"] == 0
    rep = strong_vs_weak_gap(s, w)
    assert rep["gap"] == pytest.approx(w.slope_weak - s.slope_strong)


def test_gap_rejects_mismatched_configs():
    s = strong_fluctuation_experiment(SMALL, CHECKER, 6)
    w = weak_fluctuation_experiment(replace(SMALL, sizes=(8, 16, 64)), CHECKER, 6)
    with pytest.raises(FluctuationError):
        strong_vs_weak_gap(s, w)


def test_statistics_nonnegative_and_reproducible():
    a = fluctuation_experiment(SMALL, CHECKER, 7)
    b = fluctuation_experiment(SMALL, CHECKER, 7)
    assert np.all(a.strong >= 0) and np.all(a.weak >= 0)
    assert np.array_equal(a.strong, b.strong) and np.array_equal(a.weak, b.weak)
    assert a.rows()[0]["side"] == 9


def test_doubling_n_stays_within_bootstrap_interval():
    cfg = FluctuationConfig(sizes=(16, 32, 64), N=100)
    small = fluctuation_experiment(cfg, CHECKER, 8)
    big = fluctuation_experiment(replace(cfg, N=200), CHECKER, 8)
    i = 2
    lo, hi = small.strong_ci[:, i]
    assert lo <= big.strong[i] <= hi
