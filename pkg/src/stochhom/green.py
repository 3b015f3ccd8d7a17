"""Green-function probes: local square averages of first and mixed second gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .ensemble import CoefficientField
from .lattice import Lattice, ball, ball_offsets
from .solver import LinearOperator, ProblemSpec, green_columns


class ProbeError(ValueError):
    pass


def fast_radius(radius: int, periodic: bool = False) -> int:
    """Smallest radius >= ``radius`` whose spectral preconditioner transforms are cheap."""
    r = int(radius)
    while True:
        n = 2 * r + 1 if periodic else 2 * (r + 1)
        if scipy.fft.next_fast_len(n, real=True) == n:
            return r
        r += 1


def grad_energy(lattice: Lattice, u: np.ndarray) -> np.ndarray:
    """|grad u|^2 at every site: half the sum of squared differences over all 2d incident edges.

    Works on a single field or a batch with leading axis.
    """
    batch = u.ndim == lattice.dim + 1
    U = u if batch else u[None]
    out = np.zeros_like(U)
    for k in range(lattice.dim):
        ax = k + 1
        if lattice.periodic:
            g = np.roll(U, -1, axis=ax) - U
            out += 0.5 * (g ** 2 + np.roll(g, 1, axis=ax) ** 2)
            continue
        n = U.shape[ax]
        lo = [slice(None)] * U.ndim
        hi = [slice(None)] * U.ndim
        lo[ax], hi[ax] = slice(0, n - 1), slice(1, n)
        g = np.zeros_like(U)
        g[tuple(lo)] = U[tuple(hi)] - U[tuple(lo)]
        last = list(lo)
        last[ax] = slice(n - 1, n)
        g[tuple(last)] = -U[tuple(last)]
        gb = np.zeros_like(U)
        gb[tuple(hi)] = g[tuple(lo)]
        first = list(lo)
        first[ax] = slice(0, 1)
        gb[tuple(first)] = U[tuple(first)]
        out += 0.5 * (g ** 2 + gb ** 2)
    return out if batch else out[0]


def _check_probe(lattice: Lattice, x, L, origin=None):
    x = tuple(int(c) for c in x)
    origin = (0,) * lattice.dim if origin is None else tuple(origin)
    dist = math.dist(x, origin)
    if dist < 3 * L - 1e-12:
        raise ProbeError(f"probe {x} closer than 3L = {3 * L} to {origin}")
    if not lattice.periodic:
        reach = max(abs(c) for c in x) + int(math.floor(L)) + 1
        if reach > lattice.radius:
            raise ProbeError(f"ball B_{L}({x}) plus neighbours leaves the box")
    return x


def ball_mean(lattice: Lattice, density: np.ndarray, x, L: float) -> float:
    """Mean of a site density over the lattice ball B_L(x)."""
    vals = [density[lattice.array_index(p)] for p in ball(x, L)]
    return float(np.mean(vals))


def local_avg_gradient(G: np.ndarray, x, L: float, lattice: Lattice,
                       origin=None) -> float:
    """(grad G)_L(x): root mean square of |grad G| over B_L(x)."""
    x = _check_probe(lattice, x, L, origin)
    return math.sqrt(ball_mean(lattice, grad_energy(lattice, G), x, L))


def y_edges(dim: int, L: float) -> list[tuple[int, int]]:
    """Nearest-neighbour pairs (i, j), i < j, inside B_L(0), indexed into ``ball_offsets``."""
    pts = ball_offsets(dim, L)
    pos = {p: i for i, p in enumerate(pts)}
    out = []
    for i, p in enumerate(pts):
        for k in range(dim):
            q = tuple(c + (1 if j == k else 0) for j, c in enumerate(p))
            if q in pos:
                out.append((i, pos[q]))
    return out


def mixed_from_columns(lattice: Lattice, columns: np.ndarray, x, L: float, origin=None) -> float:
    """(grad grad G)_L(x, y0) from the columns G(., y') for y' in B_L(y0).

    ``columns[i]`` is G(., y_i) for y_i the i-th point of B_L(y0). Mixed
    differences run over pairs of nearest-neighbour edges, one inside B_L(x)
    and one inside B_L(y0); their mean square is multiplied by dim^2 so a unit
    bilinear profile has value 1. The construction is symmetric under swapping
    x and y0 when G is symmetric.
    """
    x = _check_probe(lattice, x, L, origin)
    edges = y_edges(lattice.dim, L)
    D = np.stack([columns[j] - columns[i] for i, j in edges])
    pts = ball(x, L)
    idx = [lattice.array_index(p) for p in pts]
    X = np.stack([D[(slice(None),) + ix] for ix in idx], axis=1)
    diffs = np.stack([X[:, j] - X[:, i] for i, j in edges], axis=1)
    return math.sqrt(float(np.mean(diffs ** 2)) * lattice.dim ** 2)


@dataclass
class SolveCounter:
    columns: int = 0


def mixed_second_gradient(field: CoefficientField, mu: float, x, L: float, spec: ProblemSpec,
                          counter: SolveCounter | None = None, source_center=None) -> float:
    """(grad grad G)_L(x, y0) with y0 = ``source_center`` (origin by default).

    Uses one Green column per site of B_L(y0), i.e. 2d + 1 columns at L = 1.
    """
    lat = field.lattice
    y0 = (0,) * lat.dim if source_center is None else tuple(source_center)
    _check_probe(lat, x, L, y0)
    sources = ball(y0, L)
    cols = green_columns(field, mu, sources, spec)
    if counter is not None:
        counter.columns += len(sources)
    return mixed_from_columns(lat, cols, x, L, y0)


@dataclass
class GreenProbe:
    seed: int | None
    mu: float
    L: int
    points: list
    g_value: np.ndarray
    grad_avg: np.ndarray
    mixed_avg: np.ndarray
    annulus_grad: dict = field(default_factory=dict)
    min_value: float = 0.0

    def __post_init__(self):
        for x in self.points:
            if math.hypot(*x) < 3 * self.L - 1e-12:
                raise ProbeError(f"probe {x} violates |x| >= 3L")
        if np.any(self.grad_avg < 0) or np.any(self.mixed_avg < 0):
            raise ProbeError("square averages must be nonnegative")

    @property
    def radii(self) -> np.ndarray:
        return np.array([math.hypot(*x) for x in self.points])


def annulus_gradient(lattice: Lattice, energy: np.ndarray, R: float) -> float:
    """(R^-d sum_{R < |x| <= 2R} |grad G|^2)^(1/2)."""
    dist = lattice.distance_from_origin()
    mask = (dist > R) & (dist <= 2 * R)
    return math.sqrt(energy[mask].sum() / R ** lattice.dim)


def probe_sample(field: CoefficientField, mu: float, points, spec: ProblemSpec, L: int = 1,
                 annulus_radii=(), counter: SolveCounter | None = None) -> GreenProbe:
    """All probe quantities for one coefficient sample from a single batch of 2d+1 solves."""
    lat = field.lattice
    points = [tuple(int(c) for c in x) for x in points]
    for x in points:
        _check_probe(lat, x, L)
    sources = ball((0,) * lat.dim, L)
    op = LinearOperator(field, mu)
    cols = green_columns(field, mu, sources, spec, op)
    if counter is not None:
        counter.columns += len(sources)
    G = cols[sources.index((0,) * lat.dim)]
    e1 = grad_energy(lat, G)
    g = np.array([G[lat.array_index(x)] for x in points])
    grad = np.array([math.sqrt(ball_mean(lat, e1, x, L)) for x in points])
    mixed = np.array([mixed_from_columns(lat, cols, x, L) for x in points])
    ann = {float(R): annulus_gradient(lat, e1, R) for R in annulus_radii}
    return GreenProbe(field.seed, mu, L, points, g, grad, mixed, ann, float(G.min()))


def _fit_envelope(r, values, shape, mu):
    """Fit log(v / shape) = log C - c sqrt(mu) r, then lift C to the envelope."""
    r = np.asarray(r, float)
    y = np.log(np.asarray(values, float) / shape)
    X = np.column_stack([np.ones_like(r), -math.sqrt(mu) * r])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    c = float(coef[1])
    C = float(np.max(np.asarray(values) / (shape * np.exp(-c * math.sqrt(mu) * r))))
    return C, c


def check_deterministic_bounds(probes, radii, tolerance: float = 1e-10) -> dict:
    """Fit the smallest (C, c) making the pointwise and annulus bounds hold, per sample.

    Pointwise: G(x, 0) <= C exp(-c sqrt(mu)|x|) psi(|x|) with psi = ln(2 + 1/(sqrt(mu)|x|))
    in d = 2 and |x|^(2-d) otherwise. Annulus: averaged |grad G| <= C exp(-c sqrt(mu) R) R^(1-d).
    """
    if isinstance(probes, GreenProbe):
        probes = [probes]
    radii = sorted(float(R) for R in radii)
    rows = []
    for pr in probes:
        d = len(pr.points[0])
        r = pr.radii
        flagged = pr.min_value < -tolerance or bool(np.any(pr.g_value < -tolerance))
        row = {"seed": pr.seed, "mu": pr.mu, "negative": flagged}
        if flagged:
            row.update(C_point=float("nan"), c_point=float("nan"))
        else:
            psi = np.log(2 + 1 / (math.sqrt(pr.mu) * r)) if d == 2 else r ** (2.0 - d)
            row["C_point"], row["c_point"] = _fit_envelope(r, pr.g_value, psi, pr.mu)
        ann = np.array([pr.annulus_grad[R] for R in radii]) if radii else np.array([])
        if len(ann) >= 2 and np.all(ann > 0):
            Rs = np.array(radii)
            row["C_annulus"], row["c_annulus"] = _fit_envelope(Rs, ann, Rs ** (1.0 - d), pr.mu)
        rows.append(row)
    return {"samples": rows, "flagged": [r["seed"] for r in rows if r["negative"]]}
