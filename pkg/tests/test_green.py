import math

import numpy as np
import pytest

from stochhom.ensemble import EnsembleSpec, constant_field, sample
from stochhom.green import (GreenProbe, ProbeError, SolveCounter, check_deterministic_bounds,
                            fast_radius, local_avg_gradient, mixed_from_columns,
                            mixed_second_gradient, probe_sample)
from stochhom.lattice import ball, build_lattice, octahedral_images
from stochhom.solver import ProblemSpec, choose_box_radius, green_column

from oracles import ball_sites, dense_operator, grad_sq_at

SPEC = EnsembleSpec("checkerboard", lam=0.25, lo=0.25, hi=1.0)
TIGHT = ProblemSpec(1.0, 1e-12)


def test_constant_column_has_zero_gradient_average():
    lat = build_lattice(2, 8, "periodic")
    assert local_avg_gradient(np.full(lat.shape, 3.0), (4, 0), 1, lat) == 0


def test_probe_inside_near_field_rejected():
    lat = build_lattice(2, 8)
    with pytest.raises(ProbeError):
        local_avg_gradient(lat.zeros(), (2, 0), 1, lat)
    with pytest.raises(ProbeError):
        local_avg_gradient(lat.zeros(), (8, 0), 1, lat)


def test_grad_average_matches_edge_loop():
    lat = build_lattice(2, 10)
    field = constant_field(lat)
    G = np.linalg.solve(dense_operator(field, 1.0), lat.delta((0, 0)).ravel()).reshape(lat.shape)
    pts = ball_sites((6, 0), 1)
    assert len(pts) == 5
    ref = math.sqrt(np.mean([grad_sq_at(lat, G, p) for p in pts]))
    assert local_avg_gradient(G, (6, 0), 1, lat) == pytest.approx(ref, rel=1e-12)


def _mixed_oracle(lat, Ginv, x, y0):
    pos = {p: i for i, p in enumerate(lat.site(i) for i in range(lat.n_sites))}

    def edges(c):
        pts = set(ball_sites(c, 1))
        return [(p, q) for p in sorted(pts) for k in range(lat.dim)
                for q in [tuple(v + (k == j) for j, v in enumerate(p))] if q in pts]

    vals = []
    for a, b in edges(x):
        for c, d in edges(y0):
            g = lambda s, t: Ginv[pos[s], pos[t]]
            vals.append((g(b, d) - g(a, d) - g(b, c) + g(a, c)) ** 2)
    return math.sqrt(np.mean(vals) * lat.dim ** 2)


@pytest.mark.parametrize("x", [(4, 0), (5, 3), (7, 0)])
def test_mixed_matches_dense_double_differencing(x):
    lat = build_lattice(2, 12)
    field = constant_field(lat)
    Ginv = np.linalg.inv(dense_operator(field, 1.0))
    ref = _mixed_oracle(lat, Ginv, x, (0, 0))
    assert mixed_second_gradient(field, 1.0, x, 1, TIGHT) == pytest.approx(ref, rel=1e-8)


def test_mixed_is_symmetric_in_source_and_probe():
    lat = build_lattice(2, 12)
    for s in range(3):
        field = sample(SPEC, lat, s)
        a = mixed_second_gradient(field, 1.0, (5, 2), 1, TIGHT)
        b = mixed_second_gradient(field, 1.0, (0, 0), 1, TIGHT, source_center=(5, 2))
        assert a == pytest.approx(b, rel=1e-6)


def test_mixed_scaling_doubling_distance():
    # mu small enough that the exponential factor at |x| = 16 is close to 1
    lat = build_lattice(2, fast_radius(64))
    field = constant_field(lat)
    spec = ProblemSpec(1e-4, 1e-11)
    m8 = mixed_second_gradient(field, 1e-4, (8, 0), 1, spec)
    m16 = mixed_second_gradient(field, 1e-4, (16, 0), 1, spec)
    assert 3 <= m8 / m16 <= 5


@pytest.mark.parametrize("dim", [2, 3])
def test_mixed_uses_2d_plus_1_columns(dim):
    lat = build_lattice(dim, 8 if dim == 2 else 5)
    counter = SolveCounter()
    mixed_second_gradient(constant_field(lat), 1.0, (3,) + (0,) * (dim - 1), 1, TIGHT, counter)
    assert counter.columns == 2 * dim + 1
    counter = SolveCounter()
    probe_sample(constant_field(lat), 1.0, [(3,) + (0,) * (dim - 1)], TIGHT, counter=counter)
    assert counter.columns == 2 * dim + 1


def _mixed_oracle_shuffled(lat, cols, sources, x, rng):
    """Same double-differenced mean square, with ball sites visited in random order."""
    G = dict(zip(sources, cols))
    xs = ball_sites(x, 1)
    ys = list(G)
    rng.shuffle(xs)
    rng.shuffle(ys)

    def edges(pts):
        s = set(pts)
        return [(p, q) for p in pts for k in range(lat.dim)
                for q in [tuple(v + (k == j) for j, v in enumerate(p))] if q in s]

    ex, ey = edges(xs), edges(ys)
    vals = [(G[d][lat.array_index(b)] - G[d][lat.array_index(a)]
             - G[c][lat.array_index(b)] + G[c][lat.array_index(a)]) ** 2
            for a, b in ex for c, d in ey]
    return math.sqrt(np.mean(vals) * lat.dim ** 2)


def test_ball_enumeration_order_is_irrelevant(rng):
    lat = build_lattice(2, 10)
    field = sample(SPEC, lat, 5)
    sources = ball((0, 0), 1)
    cols = np.stack([green_column(field, 1.0, y, TIGHT) for y in sources])
    a = mixed_from_columns(lat, cols, (5, 1), 1)
    for _ in range(5):
        assert a == pytest.approx(_mixed_oracle_shuffled(lat, cols, sources, (5, 1), rng), rel=1e-12)
    pts = ball_sites((5, 1), 1)
    rng.shuffle(pts)
    G0 = cols[sources.index((0, 0))]
    ref = math.sqrt(np.mean([grad_sq_at(lat, G0, p)
                             for p in pts]))
    assert local_avg_gradient(G0, (5, 1), 1, lat) == pytest.approx(ref, rel=1e-12)


def test_octahedral_invariance_for_identity():
    lat = build_lattice(2, 16)
    G = green_column(constant_field(lat), 1.0, (0, 0), TIGHT)
    vals = [local_avg_gradient(G, x, 1, lat) for x in octahedral_images((5, 2))]
    assert max(vals) - min(vals) <= 1e-8 * max(vals)
    lat3 = build_lattice(3, 8)
    G3 = green_column(constant_field(lat3), 1.0, (0, 0, 0), TIGHT)
    vals = [local_avg_gradient(G3, x, 1, lat3) for x in octahedral_images((4, 1, 0))]
    assert max(vals) - min(vals) <= 1e-8 * max(vals)


POINTS = [(3, 0), (4, 0), (6, 0), (8, 0), (10, 0)]


def test_deterministic_bounds_constant_field_stable():
    lat = build_lattice(2, choose_box_radius(1.0, 10))
    probes = [probe_sample(sample(EnsembleSpec("constant", lam=1.0), lat, s), 1.0, POINTS, TIGHT,
                           annulus_radii=(2, 4, 8)) for s in range(10)]
    rows = check_deterministic_bounds(probes, (2, 4, 8))["samples"]
    C = np.array([r["C_point"] for r in rows])
    assert np.all(np.isfinite(C))
    assert np.max(np.abs(C / np.median(C) - 1)) <= 0.2
    assert all(r["c_point"] > 0 and r["c_annulus"] > 0 for r in rows)


@pytest.mark.parametrize("spec", [SPEC, EnsembleSpec("poisson_inclusions", lam=0.25, intensity=0.1,
                                                     inclusion_value=0.25)])
def test_fitted_rate_positive_at_unit_mass(spec):
    lat = build_lattice(2, choose_box_radius(1.0, 10))
    probes = [probe_sample(sample(spec, lat, s), 1.0, POINTS, TIGHT, annulus_radii=(2, 4, 8))
              for s in range(10)]
    report = check_deterministic_bounds(probes, (2, 4, 8))
    assert report["flagged"] == []
    assert all(r["c_point"] > 0 for r in report["samples"])


def test_negative_values_are_flagged():
    pr = GreenProbe(7, 1.0, 1, [(3, 0), (6, 0), (9, 0)], np.array([1e-2, -1e-3, 1e-5]),
                    np.ones(3), np.ones(3), min_value=-1e-3)
    report = check_deterministic_bounds(pr, ())
    assert report["flagged"] == [7] and math.isnan(report["samples"][0]["C_point"])


def test_probe_point_validation():
    with pytest.raises(ProbeError):
        GreenProbe(0, 1.0, 1, [(2, 0)], np.ones(1), np.ones(1), np.ones(1))
    with pytest.raises(ProbeError):
        GreenProbe(0, 1.0, 1, [(3, 0)], np.ones(1), -np.ones(1), np.ones(1))


def test_fast_radius_rounds_up_to_fast_length():
    import scipy.fft
    for r in (5, 24, 33, 97):
        f = fast_radius(r)
        assert f >= r and scipy.fft.next_fast_len(2 * (f + 1), real=True) == 2 * (f + 1)
