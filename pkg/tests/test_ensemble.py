import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from stochhom.ensemble import (EnsembleError, EnsembleSpec, covered_fraction, harmonic, mix_seed,
                               sample, void_probability)
from stochhom.lattice import build_lattice


def test_degenerate_checkerboard_is_constant():
    spec = EnsembleSpec("checkerboard", lam=0.5, lo=1.0, hi=1.0)
    f = sample(spec, build_lattice(2, 4), 3)
    assert np.all(f.all_values() == 1.0)


def test_zero_intensity_gives_background():
    spec = EnsembleSpec("poisson_inclusions", lam=0.25, intensity=0.0, background=0.8)
    f = sample(spec, build_lattice(2, 6), 9)
    assert np.all(f.all_values() == 0.8)


def test_constant_kind():
    f = sample(EnsembleSpec("constant", lam=1.0), build_lattice(3, 2), 0)
    assert np.all(f.all_values() == 1.0)


def test_bernoulli_site_mean():
    spec = EnsembleSpec("checkerboard", lam=0.1, lo=0.1, hi=1.0, p_hi=0.5)
    f = sample(spec, build_lattice(2, 50, "periodic"), 123)
    omega = f.site_values.ravel()
    assert omega.size == 101 ** 2 >= 10_000
    mean, var = 0.55, 0.5 * 0.5 * 0.9 ** 2
    assert abs(omega.mean() - mean) <= 3 * math.sqrt(var / omega.size)


def test_edges_are_harmonic_means_of_sites():
    spec = EnsembleSpec("checkerboard", lam=0.25, lo=0.25, hi=1.0)
    lat = build_lattice(2, 3, "periodic")
    f = sample(spec, lat, 5)
    w = f.site_values
    np.testing.assert_allclose(f.forward(0), harmonic(w, np.roll(w, -1, axis=0)))
    np.testing.assert_allclose(f.forward(1), harmonic(w, np.roll(w, -1, axis=1)))


@pytest.mark.parametrize("bad", [dict(lo=0.1), dict(hi=1.2), dict(p_hi=1.5), dict(lam=0.0)])
def test_rejects_out_of_range(bad):
    params = dict(kind="checkerboard", lam=0.25, lo=0.25, hi=1.0, p_hi=0.5) | bad
    with pytest.raises(EnsembleError):
        EnsembleSpec(**params)


def test_poisson_saturation_and_empty():
    lat = build_lattice(2, 10, "periodic")
    full = EnsembleSpec("poisson_inclusions", lam=0.25, intensity=10, inclusion_radius=2)
    assert covered_fraction(full, lat, range(3)) > 0.99
    empty = EnsembleSpec("poisson_inclusions", lam=0.25, intensity=0, inclusion_radius=2)
    assert covered_fraction(empty, lat, range(3)) == 0


def test_covered_fraction_wrong_kind():
    with pytest.raises(EnsembleError):
        covered_fraction(EnsembleSpec("checkerboard"), build_lattice(2, 3), [0])


def test_covered_fraction_matches_void_probability():
    spec = EnsembleSpec("poisson_inclusions", lam=0.25, intensity=0.05, inclusion_radius=2)
    lat = build_lattice(2, 30, "periodic")
    seeds = [mix_seed(77, i) for i in range(40)]
    per = [covered_fraction(spec, lat, [s]) for s in seeds]
    expected = 1 - void_probability(spec, 2)
    assert expected == pytest.approx(1 - math.exp(-0.05 * math.pi * 4))
    assert abs(np.mean(per) - expected) <= 3 * np.std(per, ddof=1) / math.sqrt(len(per))


@given(st.integers(0, 2**63), st.sampled_from(["checkerboard", "poisson_inclusions"]),
       st.sampled_from(["dirichlet", "periodic"]), st.sampled_from([2, 3]))
def test_ellipticity_and_determinism(seed, kind, boundary, dim):
    spec = EnsembleSpec(kind, lam=0.2, lo=0.2, hi=0.9, inclusion_value=0.2, background=1.0,
                        intensity=0.2)
    lat = build_lattice(dim, 4 if dim == 2 else 2, boundary)
    a, b = sample(spec, lat, seed), sample(spec, lat, seed)
    vals = a.all_values()
    assert vals.min() >= 0.2 - 1e-15 and vals.max() <= 1.0
    for fa, fb in zip(a.faces, b.faces):
        assert np.array_equal(fa, fb)


def test_different_seeds_differ(checkerboard):
    lat = build_lattice(2, 5)
    assert not np.array_equal(sample(checkerboard, lat, 1).faces[0], sample(checkerboard, lat, 2).faces[0])


def test_mix_seed_is_deterministic_and_spreads():
    seeds = {mix_seed(1, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert mix_seed(5, 3) == mix_seed(5, 3) != mix_seed(3, 5)


@pytest.mark.parametrize("spec_fixture", ["checkerboard", "poisson"])
def test_stationarity_chi_square(spec_fixture, request):
    spec = request.getfixturevalue(spec_fixture)
    lat = build_lattice(2, 10, "periodic")
    translates = [(2 * j - 9, 2 * j - 9) for j in range(10)]
    counts = {}
    for i in range(100):
        a = sample(spec, lat, mix_seed(2026, i)).forward(0)
        for t, site in enumerate(translates):
            v = round(float(a[lat.array_index(site)]), 12)
            counts.setdefault(v, [0] * len(translates))[t] += 1
    table = np.array(list(counts.values())).T
    table = table[:, table.sum(axis=0) > 0]
    p = stats.chi2_contingency(table).pvalue if table.shape[1] > 1 else 1.0
    assert p > 0.01
