"""Oscillations under local coefficient changes, the sensitivity kernel, and spectral-gap checks.

The supremum over all admissible local perturbations is replaced by a
finite candidate set (unperturbed, all-lambda, all-one and a few random
patches), so every oscillation computed here is a lower bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .ensemble import CoefficientField, EnsembleKind, EnsembleSpec, edges_from_sites, mix_seed, sample
from .green import _check_probe, ball_mean, grad_energy
from .lattice import Boundary, Lattice, ball, build_lattice
from .parallel import pmap
from .solver import LinearOperator, NonConvergence, ProblemSpec, solve, solve_many, green_column

ELL = 1
NEAR_FAR_THRESHOLD = 6 * ELL


class SensitivityError(ValueError):
    pass


# -- perturbations -----------------------------------------------------------

def ball_edges(lattice: Lattice, z, ell: float = ELL) -> list:
    """Edges with both endpoints in B_ell(z), as (axis, index into faces[axis])."""
    pts = set(ball(z, ell))
    out = []
    for p in sorted(pts):
        for k in range(lattice.dim):
            q = tuple(c + (1 if j == k else 0) for j, c in enumerate(p))
            if q not in pts:
                continue
            if not (lattice.periodic or (lattice.contains(p) and lattice.contains(q))):
                raise SensitivityError(f"ball B_{ell}({z}) leaves the box")
            idx = list(lattice.array_index(q))
            if lattice.periodic:
                idx[k] = (lattice.array_index(p)[k] + 1) % lattice.side
            out.append((k, tuple(idx)))
    return out


@dataclass
class PerturbationSet:
    z: tuple
    radius: int
    edges: list
    candidates: list

    def __post_init__(self):
        if self.radius != ELL:
            raise SensitivityError("perturbation radius is fixed to ell = 1")


def perturbation_set(field_: CoefficientField, z, n_random: int = 6, rng=None,
                     ell: int = ELL) -> PerturbationSet:
    """Standard candidate patches on the edges of B_ell(z)."""
    edges = ball_edges(field_.lattice, z, ell)
    current = np.array([field_.faces[k][idx] for k, idx in edges])
    lam = field_.lam
    cands = [current, np.full(len(edges), lam), np.ones(len(edges))]
    if n_random:
        rng = rng if rng is not None else np.random.default_rng(0)
        cands += [lam + (1 - lam) * rng.random(len(edges)) for _ in range(n_random)]
    return PerturbationSet(tuple(z), ell, edges, cands)


def with_patch(field_: CoefficientField, edges, values) -> CoefficientField:
    out = field_.copy()
    out.site_values = None
    for (k, idx), v in zip(edges, values):
        out.faces[k][idx] = v
    return out.check()


# -- oscillation and kernel ------------------------------------------------------

def _ball_abs_mean(lattice, w, x, ell):
    return float(np.mean([abs(w[lattice.array_index(p)]) for p in ball(x, ell)]))


def candidate_solutions(field_: CoefficientField, mu: float, f: np.ndarray,
                        pert: PerturbationSet, spec: ProblemSpec) -> list:
    sols = []
    for vals in pert.candidates:
        patched = with_patch(field_, pert.edges, vals)
        sols.append(solve(LinearOperator(patched, mu), f, spec))
    return sols


def oscillation(field_: CoefficientField, mu: float, f: np.ndarray, x, pert: PerturbationSet,
                spec: ProblemSpec, u: np.ndarray | None = None, solutions=None) -> float:
    """max over candidates of the B_ell(x)-mean of |u - u~|."""
    lat = field_.lattice
    if u is None:
        u = solve(LinearOperator(field_, mu), f, spec)
    if solutions is None:
        solutions = candidate_solutions(field_, mu, f, pert, spec)
    return max(_ball_abs_mean(lat, u - ut, x, ELL) for ut in solutions)


def functional_oscillation(values) -> float:
    values = np.asarray(values, float)
    return float(values.max() - values.min())


def lp_norm_ball(lattice: Lattice, f: np.ndarray, x, radius: float, p: float) -> float:
    """(sum_{B_radius(x)} |f|^p)^(1/p), lattice sum as the integral."""
    vals = np.array([abs(f[lattice.array_index(y)]) for y in ball(x, radius)])
    return float(np.sum(vals ** p) ** (1.0 / p))


def kernel_K(x, z, mu: float = 0.0, grad_u_ball: float = 0.0, f_norm_ball: float = 0.0,
             green_grad: float = 0.0, sample_ids=None) -> tuple[float, str]:
    """Sensitivity kernel value and branch.

    Far (|x - z| > 6): (grad G)_2(x, z) * (grad u)_1(z); ``green_grad`` and
    ``grad_u_ball`` must be those two averages. Near: ||f||_{L^2(B_2(x))} +
    (grad u)_9(z); ``f_norm_ball`` and ``grad_u_ball`` are those.
    """
    if sample_ids is not None and len(set(sample_ids)) > 1:
        raise SensitivityError(f"kernel inputs come from different samples: {sample_ids}")
    if math.dist(x, z) > NEAR_FAR_THRESHOLD:
        return green_grad * grad_u_ball, "far"
    return f_norm_ball + grad_u_ball, "near"


def decay_kernel(r, mu: float, dim: int, c: float = 1.0) -> np.ndarray:
    """exp(-c sqrt(mu) r) / (1 + r^(d-1))."""
    r = np.asarray(r, float)
    return np.exp(-c * math.sqrt(mu) * r) / (1 + r ** (dim - 1))


@dataclass
class SensitivityRecord:
    sample: int
    x: tuple
    z: tuple
    osc_lower: float
    kernel_value: float
    branch: str

    def __post_init__(self):
        if self.osc_lower < 0:
            raise SensitivityError("oscillation must be nonnegative")

    @property
    def ratio(self) -> float:
        if self.kernel_value == 0:
            return 0.0 if self.osc_lower == 0 else math.inf
        return self.osc_lower / self.kernel_value


def bump(lattice: Lattice, center=None, width: float = 6.0, amplitude: float = 1.0) -> np.ndarray:
    """Smooth compactly supported bump exp(1 - 1/(1 - (|x - c|/width)^2))."""
    c = np.zeros(lattice.dim) if center is None else np.asarray(center, float)
    xs = lattice.coords() - c
    t = np.sqrt((xs ** 2).sum(axis=1)) / width
    out = np.zeros(len(t))
    inside = t < 1
    out[inside] = np.exp(1 - 1 / (1 - t[inside] ** 2))
    return amplitude * out.reshape(lattice.shape)


def sample_records(field_: CoefficientField, mu: float, f: np.ndarray, pairs, spec: ProblemSpec,
                   n_random: int = 6, lambda2: float = 2.0, sample_index: int = 0,
                   rng=None, candidates: str = "standard") -> list:
    """SensitivityRecords for one sample; candidate solves are shared by pairs with the same z."""
    lat = field_.lattice
    op = LinearOperator(field_, mu)
    u = solve(op, f, spec)
    energy_u = grad_energy(lat, u)
    rng = rng if rng is not None else np.random.default_rng(sample_index)
    by_z = {}
    for x, z in pairs:
        by_z.setdefault(tuple(z), []).append(tuple(x))
    records = []
    for z in sorted(by_z):
        if candidates == "unperturbed":
            pert = perturbation_set(field_, z, 0, rng)
            pert.candidates = pert.candidates[:1]
        else:
            pert = perturbation_set(field_, z, n_random, rng)
        sols = candidate_solutions(field_, mu, f, pert, spec)
        Gz = None
        for x in by_z[z]:
            osc = oscillation(field_, mu, f, x, pert, spec, u, sols)
            if math.dist(x, z) > NEAR_FAR_THRESHOLD:
                if Gz is None:
                    Gz = green_column(field_, mu, z, spec)
                gG = math.sqrt(ball_mean(lat, grad_energy(lat, Gz), x, 2 * ELL))
                gu = math.sqrt(ball_mean(lat, energy_u, z, ELL))
                K, branch = kernel_K(x, z, mu, gu, 0.0, gG)
            else:
                gu = math.sqrt(ball_mean(lat, energy_u, z, 9 * ELL))
                fn = lp_norm_ball(lat, f, x, 2 * ELL, lambda2)
                K, branch = kernel_K(x, z, mu, gu, fn, 0.0)
            records.append(SensitivityRecord(sample_index, x, z, osc, K, branch))
    return records


def default_pairs(dim: int = 2) -> list:
    """24 (x, z) pairs: sources z at distance 5 from the origin along the axes, and
    targets x radially outward at |x - z| in {5, 6} (near) and {7, 8, 10, 12} (far).

    Radial alignment keeps grad_z G(x, z) parallel to grad u(z) for a centred bump f.
    """
    pairs = []
    for k in range(2):
        for sign in (1, -1):
            z = [0] * dim
            z[k] = 5 * sign
            for t in (5, 6, 7, 8, 10, 12):
                x = list(z)
                x[k] += t * sign
                pairs.append((tuple(x), tuple(z)))
    return pairs


def _sens_worker(i, spec, lattice, mu, f, pairs, pspec, master_seed, n_random, lambda2, candidates):
    seed = mix_seed(master_seed, i)
    field_ = sample(spec, lattice, seed)
    rng = np.random.default_rng(mix_seed(seed, 1))
    try:
        return sample_records(field_, mu, f, pairs, pspec, n_random, lambda2, i, rng, candidates)
    except NonConvergence as exc:
        exc.sample = i
        raise


def sensitivity_bound_experiment(spec: EnsembleSpec, mu: float, f, pairs, N: int, master_seed: int,
                                 box_radius: int = 20, dim: int = 2, jobs: int = 1,
                                 n_random: int = 6, lambda2: float = 2.0, tolerance: float = 1e-10,
                                 candidates: str = "standard") -> dict:
    """Records for every (sample, pair) and the spread of osc / K across them."""
    lattice = build_lattice(dim, box_radius, Boundary.DIRICHLET)
    if callable(f):
        f = f(lattice)
    branches = {"near" if math.dist(x, z) <= NEAR_FAR_THRESHOLD else "far" for x, z in pairs}
    if branches != {"near", "far"}:
        raise SensitivityError("pairs must span both kernel branches")
    for x, z in pairs:
        for p, margin in ((x, 2 * ELL + 1), (z, 9 * ELL + 1)):
            if max(abs(c) for c in p) + margin > box_radius:
                raise SensitivityError(f"site {p} too close to the box boundary")
    work = partial(_sens_worker, spec=spec, lattice=lattice, mu=mu, f=f, pairs=pairs,
                   pspec=ProblemSpec(mu, tolerance), master_seed=master_seed, n_random=n_random,
                   lambda2=lambda2, candidates=candidates)
    records = [r for batch in pmap(work, range(N), jobs) for r in batch]
    return summarize_records(records)


def summarize_records(records) -> dict:
    ratios = np.array([r.ratio for r in records])
    finite = ratios[np.isfinite(ratios)]
    med = float(np.median(finite)) if finite.size else 0.0
    p99 = float(np.quantile(finite, 0.99)) if finite.size else 0.0
    near = [r for r in records if r.branch == "near"]
    near_threshold = [r for r in records if abs(math.dist(r.x, r.z) - NEAR_FAR_THRESHOLD) <= 1]
    return {"records": records, "n_records": len(records), "median_ratio": med,
            "p99_ratio": p99, "max_ratio": float(finite.max()) if finite.size else 0.0,
            "spread": (p99 / med) if med > 0 else (0.0 if p99 == 0 else math.inf),
            "n_near": len(near), "n_far": len(records) - len(near),
            "n_near_threshold": len(near_threshold)}


# -- spectral gap -----------------------------------------------------------------

ZETA_KINDS = ("site_value", "edge_conductance", "point_value", "ball_average")


def _blocks(shape, width: int = 2 * ELL + 1):
    """Cubic blocks of ``width`` sites tiling an array of ``shape`` (edge blocks may be smaller)."""
    ranges = [range(0, n, width) for n in shape]
    for start in itertools.product(*ranges):
        yield tuple(slice(s, min(s + width, n)) for s, n in zip(start, shape))


class Functional:
    """A scalar observable of the coefficient field, possibly through the solution u."""

    def __init__(self, kind: str, lattice: Lattice, mu: float, f: np.ndarray | None,
                 site=None, radius: float = 2.0, spec: ProblemSpec | None = None):
        if kind not in ZETA_KINDS:
            raise SensitivityError(f"unknown functional {kind!r}")
        self.kind, self.lattice, self.mu, self.f = kind, lattice, mu, f
        self.site = tuple(site) if site is not None else (0,) * lattice.dim
        self.radius = radius
        self.spec = spec or ProblemSpec(mu)
        if kind in ("point_value", "ball_average") and f is None:
            raise SensitivityError("solution functionals need a right-hand side f")
        self.solves = 0

    def _readout(self, lattice):
        if self.kind == "point_value":
            return [lattice.index(self.site)]
        return [lattice.index(p) for p in ball(self.site, self.radius)]

    def __call__(self, field_: CoefficientField) -> float:
        lat = self.lattice
        if self.kind == "site_value":
            if field_.site_values is None:
                raise SensitivityError("site_value needs a site-based (checkerboard) field")
            off = 0 if lat.periodic else 1
            return float(field_.site_values[tuple(c + lat.radius + off for c in self.site)])
        if self.kind == "edge_conductance":
            return float(field_.forward(0)[lat.array_index(self.site)])
        self.solves += 1
        u = solve(LinearOperator(field_, self.mu), self.f, self.spec)
        return float(np.mean(u.ravel()[self._readout(lat)]))

    def many(self, base: CoefficientField, candidates: list) -> list:
        """Values on candidates that differ from ``base`` on a few edges.

        Solution functionals on small boxes use an exact low-rank update of the
        dense inverse of the base operator instead of one solve per candidate.
        """
        if self.kind in ("site_value", "edge_conductance") or self.lattice.n_sites > DENSE_LIMIT:
            return [self(c) for c in candidates]
        G, u = self._dense(base)
        rows = self._readout(self.lattice)
        out = []
        for cand in candidates:
            D, delta = edge_difference(base, cand)
            if not len(delta):
                out.append(float(np.mean(u[rows])))
                continue
            GD = G @ D.T
            small = np.eye(len(delta)) + delta[:, None] * (D @ GD)
            w = np.linalg.solve(small, delta * (D @ u))
            out.append(float(np.mean(u[rows] - GD[rows] @ w)))
        return out

    def _dense(self, base):
        key = id(base)
        if getattr(self, "_cache_key", None) != key:
            A = LinearOperator(base, self.mu).dense()
            G = np.linalg.inv(A)
            self._cache = (G, G @ self.f.ravel())
            self._cache_key = key
        return self._cache


DENSE_LIMIT = 2500


def edge_difference(base: CoefficientField, cand: CoefficientField):
    """Incidence rows and conductance changes of the edges where ``cand`` differs from ``base``."""
    lat = base.lattice
    n, s = lat.n_sites, lat.side
    rows, delta = [], []
    for k in range(lat.dim):
        diff = np.argwhere(cand.faces[k] != base.faces[k])
        for idx in diff:
            idx = tuple(int(i) for i in idx)
            row = np.zeros(n)
            hi = list(idx)
            lo = list(idx)
            lo[k] -= 1
            if lat.periodic:
                lo[k] %= s
            for site, sign in ((hi, 1.0), (lo, -1.0)):
                if 0 <= site[k] < s:
                    row[np.ravel_multi_index(tuple(site), lat.shape)] = sign
            rows.append(row)
            delta.append(cand.faces[k][idx] - base.faces[k][idx])
    return np.array(rows).reshape(len(rows), n), np.array(delta)


def block_candidates(field_: CoefficientField, block, n_random: int, rng) -> list:
    """Perturbed fields agreeing with ``field_`` outside one block.

    Site-based fields resample the block's site values; other fields patch
    the faces whose upper endpoint array index falls in the block.
    """
    lam = field_.lam
    out = []
    if field_.site_values is not None:
        base = field_.site_values
        size = base[block].shape
        patches = [np.full(size, lam), np.ones(size)]
        patches += [lam + (1 - lam) * rng.random(size) for _ in range(n_random)]
        for patch in patches:
            omega = base.copy()
            omega[block] = patch
            out.append(CoefficientField(field_.lattice, edges_from_sites(field_.lattice, omega),
                                        lam, omega, field_.seed))
        return out
    for j in range(2 + n_random):
        new = field_.copy()
        for k in range(field_.lattice.dim):
            sub = new.faces[k][block]
            if j == 0:
                val = np.full(sub.shape, lam)
            elif j == 1:
                val = np.ones(sub.shape)
            else:
                val = lam + (1 - lam) * rng.random(sub.shape)
            new.faces[k][block] = val
        out.append(new)
    return out


def oscillation_sum(field_: CoefficientField, zeta: Functional, n_random: int, rng,
                    rel_cutoff: float = 1e-12) -> tuple[float, float]:
    """(zeta(A), sum over covering blocks of osc^2).

    Blocks are visited by distance from the functional's site; once a full
    distance shell adds less than ``rel_cutoff`` of the running sum the scan stops.
    """
    value = zeta(field_)
    if field_.site_values is not None:
        arr_shape = field_.site_values.shape
    else:
        arr_shape = tuple(max(a.shape[i] for a in field_.faces) for i in range(field_.lattice.dim))
    blocks = list(_blocks(arr_shape))
    off = 0 if (field_.site_values is None or field_.lattice.periodic) else 1
    centre = np.array([c + field_.lattice.radius + off for c in zeta.site], float)

    def dist(b):
        mid = np.array([(s.start + s.stop - 1) / 2 for s in b])
        return float(np.max(np.abs(mid - centre)))

    blocks.sort(key=lambda b: (dist(b), tuple(s.start for s in b)))
    total = 0.0
    shell_d, shell_sum = None, 0.0
    for b in blocks:
        d = dist(b)
        if shell_d is not None and d != shell_d:
            if total > 0 and shell_sum < rel_cutoff * total and zeta.kind in ("point_value", "ball_average"):
                break
            shell_sum = 0.0
        shell_d = d
        vals = [value] + zeta.many(field_, block_candidates(field_, b, n_random, rng))
        osc2 = functional_oscillation(vals) ** 2
        total += osc2
        shell_sum += osc2
    return value, total


def _gap_worker(i, spec, lattice, zeta_kind, zeta_site, mu, f, pspec, master_seed, n_random):
    seed = mix_seed(master_seed, i)
    field_ = sample(spec, lattice, seed)
    zeta = Functional(zeta_kind, lattice, mu, f, zeta_site, spec=pspec)
    rng = np.random.default_rng(mix_seed(seed, 2))
    try:
        return oscillation_sum(field_, zeta, n_random, rng)
    except NonConvergence as exc:
        exc.sample = i
        raise


def variance_stderr(x: np.ndarray) -> float:
    """Standard error of the unbiased sample variance."""
    x = np.asarray(x, float)
    n = len(x)
    c = x - x.mean()
    m2 = np.mean(c ** 2)
    m4 = np.mean(c ** 4)
    return float(math.sqrt(max(m4 - m2 ** 2 * (n - 3) / (n - 1), 0.0) / n))


def spectral_gap_check(zeta: str, spec: EnsembleSpec, mu: float, f, N: int, master_seed: int,
                       box_radius: int = 9, dim: int = 2, site=None, jobs: int = 1,
                       n_random: int = 6, tolerance: float = 1e-10, sample_offset: int = 0) -> dict:
    """var(zeta) against the expected squared block oscillations; their ratio should stay bounded."""
    if spec.kind is EnsembleKind.POISSON and zeta == "site_value":
        raise SensitivityError("site_value is defined for site-based ensembles only")
    lattice = build_lattice(dim, box_radius, Boundary.DIRICHLET)
    if callable(f):
        f = f(lattice)
    work = partial(_gap_worker, spec=spec, lattice=lattice, zeta_kind=zeta, zeta_site=site, mu=mu,
                   f=f, pspec=ProblemSpec(mu, tolerance), master_seed=master_seed, n_random=n_random)
    res = pmap(work, range(sample_offset, sample_offset + N), jobs)
    vals = np.array([r[0] for r in res])
    sums = np.array([r[1] for r in res])
    var = float(np.var(vals, ddof=1)) if N > 1 else 0.0
    mean_sum = float(np.mean(sums))
    ratio = var / mean_sum if mean_sum > 0 else 0.0
    se_var = variance_stderr(vals) if N > 3 else float("nan")
    se_sum = float(np.std(sums, ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    if mean_sum > 0:
        se_ratio = ratio * math.sqrt((se_var / var) ** 2 + (se_sum / mean_sum) ** 2) if var > 0 else se_var / mean_sum
    else:
        se_ratio = 0.0
    return {"zeta": zeta, "N": N, "variance": var, "mean_osc_sum": mean_sum, "ratio": ratio,
            "ratio_stderr": float(se_ratio), "values": vals, "osc_sums": sums}
