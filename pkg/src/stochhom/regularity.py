"""Large-scale Lipschitz quotients and local boundedness of massive solutions.

The Lipschitz estimate is local to B_2R, so each radius R is solved on its own
Dirichlet box just large enough to contain B_2R with a margin; the solution
there is a legitimate solution of the equation in B_2R.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from .ensemble import CoefficientField, EnsembleSpec, mix_seed, sample
from .green import fast_radius
from .lattice import Boundary, Lattice, ball, build_lattice
from .parallel import pmap
from .sensitivity import bump
from .solver import LinearOperator, NonConvergence, ProblemSpec, solve, solve_many

F_FAMILY = ("bump_origin", "bump_probe", "oscillatory")


class RegularityError(ValueError):
    pass


@dataclass
class LipschitzRecord:
    R: int
    x: tuple
    quotient: float
    numerator: float
    denominator: float
    sample: int | None = None
    f_name: str = ""
    probe_class: str = ""


def ball_mask(lattice: Lattice, radius: float) -> np.ndarray:
    return (lattice.distance_from_origin() <= radius + 1e-12).reshape(lattice.shape)


def quotient_from_solution(lattice: Lattice, u: np.ndarray, f: np.ndarray, R: int, x, p: float,
                           mask: np.ndarray | None = None) -> LipschitzRecord:
    """Mean of |u(x + x') - u(x')|/|x| over x' in B_1, divided by
    R^-1 (mean_{B_2R} u^2)^(1/2) + R^-1 (mean_{B_2R} |R^2 f|^p)^(1/p)."""
    d = lattice.dim
    if not p > d:
        raise RegularityError(f"need p > d = {d}, got {p}")
    if R < 2:
        raise RegularityError("need R >= 2")
    x = tuple(int(c) for c in x)
    r = math.hypot(*x)
    if not 2 < r <= R:
        raise RegularityError(f"need 2 < |x| <= R, got |x| = {r:.3f}")
    if not lattice.periodic and 2 * R + 1 > lattice.radius:
        raise RegularityError("box must contain B_2R plus one layer")
    offs = ball((0,) * d, 1)
    num = float(np.mean([abs(u[lattice.array_index(tuple(a + b for a, b in zip(x, o)))]
                              - u[lattice.array_index(o)]) for o in offs])) / r
    mask = ball_mask(lattice, 2 * R) if mask is None else mask
    l2 = math.sqrt(float(np.mean(u[mask] ** 2)))
    lp = float(np.mean(np.abs(R * R * f[mask]) ** p)) ** (1 / p)
    den = (l2 + lp) / R
    return LipschitzRecord(R, x, num / den if den > 0 else 0.0, num, den)


def lipschitz_quotient(field_: CoefficientField, mu: float, f: np.ndarray, R: int, x, p: float,
                       spec: ProblemSpec | None = None) -> LipschitzRecord:
    """Solve with ``f`` on the field's lattice and evaluate the quotient at ``x``."""
    u = solve(LinearOperator(field_, mu), f, spec or ProblemSpec(mu))
    return quotient_from_solution(field_.lattice, u, f, R, x, p)


PROBE_CLASSES = ("quarter", "half", "full")


def probe_points(R: int, dim: int = 2) -> list:
    """Probes on the first axis at |x| = max(R/4, 3), max(R/2, 3), R (one per probe class)."""
    return [(t,) + (0,) * (dim - 1) for t in (max(R // 4, 3), max(R // 2, 3), R)]


def f_family(lattice: Lattice, R: int, probes) -> dict:
    """Right-hand sides scaled with R: a bump at the origin, a bump at each probe, an oscillation."""
    out = {"bump_origin": bump(lattice, width=R / 2)}
    for x in probes:
        out[f"bump_probe_{x[0]}"] = bump(lattice, center=x, width=max(R / 4, 2.0))
    xs = lattice.coords()
    osc = np.cos(2 * np.pi * xs[:, 0] / max(R / 2, 2.0)).reshape(lattice.shape)
    out["oscillatory"] = osc * bump(lattice, width=R)
    return out


def _scan_worker(i, spec, R_list, dim, p, mu_factor, master_seed, tolerance):
    seed = mix_seed(master_seed, i)
    out = []
    for R in R_list:
        lat = build_lattice(dim, fast_radius(2 * R + 4), Boundary.DIRICHLET)
        field_ = sample(spec, lat, mix_seed(seed, R))
        mu = mu_factor / R ** 2
        probes = probe_points(R, dim)
        fam = f_family(lat, R, probes)
        names = list(fam)
        try:
            U = solve_many(LinearOperator(field_, mu), np.stack([fam[k] for k in names]),
                           ProblemSpec(mu, tolerance))
        except NonConvergence as exc:
            exc.sample = i
            raise
        mask = ball_mask(lat, 2 * R)
        for cls, x in zip(PROBE_CLASSES, probes):
            recs = [quotient_from_solution(lat, U[j], fam[k], R, x, p, mask) for j, k in enumerate(names)]
            for rec, k in zip(recs, names):
                rec.f_name = k
            best = max(recs, key=lambda rec: rec.quotient)
            best.sample = i
            best.probe_class = cls
            out.append(best)
    return out


def moment_boundedness_scan(spec: EnsembleSpec, R_list, q_list, N: int, master_seed: int,
                            dim: int = 2, p: float = 4.0, mu_factor: float = 0.25,
                            jobs: int = 1, tolerance: float = 1e-10) -> dict:
    """q-th moments of the quotient per (R, probe class), maximized over the f-family.

    Class "worst" takes the maximum over the three probes of each sample.
    ``growth`` is the moment at the largest R over the moment at the smallest,
    ``spread`` the largest over the smallest moment across R.
    """
    R_list = sorted(int(R) for R in R_list)
    work = partial(_scan_worker, spec=spec, R_list=R_list, dim=dim, p=p, mu_factor=mu_factor,
                   master_seed=master_seed, tolerance=tolerance)
    records = [r for batch in pmap(work, range(N), jobs) for r in batch]
    Y = np.zeros((N, len(R_list), len(PROBE_CLASSES)))
    for rec in records:
        Y[rec.sample, R_list.index(rec.R), PROBE_CLASSES.index(rec.probe_class)] = rec.quotient
    classes = {c: Y[:, :, j] for j, c in enumerate(PROBE_CLASSES)}
    classes["worst"] = Y.max(axis=2)
    moments, growth, spread = {}, {}, {}
    for q in q_list:
        for c, y in classes.items():
            m = np.mean(y ** q, axis=0) ** (1 / q)
            moments[(q, c)] = m
            growth[(q, c)] = float(m[-1] / m[0])
            spread[(q, c)] = float(m.max() / m.min())
    return {"R": R_list, "records": records, "samples": classes, "moments": moments,
            "growth": growth, "spread": spread}


def local_boundedness_check(field_: CoefficientField, mu: float, f: np.ndarray, scale: float,
                            q: float, p: float = math.inf, u: np.ndarray | None = None,
                            spec: ProblemSpec | None = None) -> dict:
    """Empirical constant in sup_{B_s}|u| <= C((mean_{B_2s} u^2)^(1/2) + s^2 (mean_{B_2s} |f|^q)^(1/q)).

    Requires 1/q < 1/p + 2/d. ``u`` may be supplied; otherwise it is solved for.
    """
    lat = field_.lattice
    d = lat.dim
    if not 1 / q < 1 / p + 2 / d:
        raise RegularityError(f"exponents violate 1/q < 1/p + 2/d (q={q}, p={p}, d={d})")
    if u is None:
        u = solve(LinearOperator(field_, mu), f, spec or ProblemSpec(mu))
    dist = lat.distance_from_origin().reshape(lat.shape)
    inner = dist <= scale + 1e-12
    outer = dist <= 2 * scale + 1e-12
    if not lat.periodic and 2 * scale > lat.radius:
        raise RegularityError("box must contain B_2s")
    sup = float(np.max(np.abs(u[inner])))
    l2 = math.sqrt(float(np.mean(u[outer] ** 2)))
    lq = float(np.mean(np.abs(f[outer]) ** q)) ** (1 / q)
    rhs = l2 + scale ** 2 * lq
    return {"sup": sup, "l2": l2, "lq": lq, "constant": sup / rhs if rhs > 0 else 0.0}
