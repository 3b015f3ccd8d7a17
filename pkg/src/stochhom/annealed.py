"""Monte Carlo annealed moments of Green-function gradients and decay-exponent fits."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .ensemble import EnsembleSpec, mix_seed, sample
from .green import fast_radius, probe_sample
from .lattice import Boundary, build_lattice
from .parallel import pmap
from .solver import NonConvergence, ProblemSpec, choose_box_radius

MIN_SAMPLES = 50
N_BOOTSTRAP = 400
QUANTITIES = ("grad", "mixed")


class MomentError(ValueError):
    pass


class Weighting(str, enum.Enum):
    UNIFORM = "uniform"
    INVERSE_VARIANCE = "inverse-variance"


@dataclass
class MomentTable:
    """Empirical q-th moments <Z^q>^(1/q) per probe radius.

    ``samples[quantity]`` keeps the raw per-sample values, shape (N, n_radii),
    so the table can be re-reduced (bootstrap, sup statistics) without solving.
    """

    spec_id: str
    dim: int
    mu: float
    radii: np.ndarray
    q_list: list
    samples: dict
    master_seed: int = 0
    box_radius: int = 0
    moments: dict = field(default_factory=dict)
    ci: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(next(iter(self.samples.values())).shape[0])

    def moment(self, which: str, q: float) -> np.ndarray:
        return self.moments[(which, float(q))]

    def rows(self):
        """(quantity, radius, q, moment, ci_lo, ci_hi, n) in a fixed order."""
        for which in QUANTITIES:
            if which not in self.samples:
                continue
            for i, r in enumerate(self.radii):
                for q in self.q_list:
                    m = self.moments[(which, float(q))][i]
                    lo, hi = self.ci[(which, float(q))][:, i]
                    yield which, float(r), float(q), float(m), float(lo), float(hi), self.n


def empirical_moment(values: np.ndarray, q: float, axis=0) -> np.ndarray:
    return np.mean(np.asarray(values) ** q, axis=axis) ** (1.0 / q)


def bootstrap_ci(values: np.ndarray, q: float, seed: int, n_boot: int = N_BOOTSTRAP,
                 level: float = 0.95) -> np.ndarray:
    """Percentile bootstrap interval for the q-th moment, shape (2, n_radii)."""
    values = np.asarray(values)
    rng = np.random.default_rng(seed)
    N = values.shape[0]
    idx = rng.integers(0, N, size=(n_boot, N))
    boots = np.mean(values[idx] ** q, axis=1) ** (1.0 / q)
    a = (1 - level) / 2
    return np.quantile(boots, [a, 1 - a], axis=0)


def reduce_table(table: MomentTable) -> MomentTable:
    """Fill moments and bootstrap intervals; asserts Jensen monotonicity in q."""
    for w, which in enumerate(QUANTITIES):
        if which not in table.samples:
            continue
        vals = table.samples[which]
        prev = None
        for j, q in enumerate(sorted(table.q_list)):
            m = empirical_moment(vals, q)
            if prev is not None and np.any(m < prev * (1 - 1e-12)):
                raise MomentError("empirical moments decrease in q")
            prev = m
            table.moments[(which, float(q))] = m
            table.ci[(which, float(q))] = bootstrap_ci(vals, q, mix_seed(table.master_seed, 10_000 + 100 * w + j))
    return table


def _probe_worker(i, spec, lattice, mu, points, pspec, master_seed):
    seed = mix_seed(master_seed, i)
    field_ = sample(spec, lattice, seed)
    try:
        pr = probe_sample(field_, mu, points, pspec)
    except NonConvergence as exc:
        exc.sample = i
        raise
    return pr.grad_avg, pr.mixed_avg, pr.g_value


def probe_points(dim: int, radii) -> list:
    return [tuple([int(r)] + [0] * (dim - 1)) for r in radii]


def estimate_moments(spec: EnsembleSpec, mu: float, radii, q_list, N: int, master_seed: int,
                     dim: int = 2, jobs: int = 1, box_radius: int | None = None,
                     tolerance: float = 1e-10) -> MomentTable:
    """Annealed moments of (grad G)_1(x, 0) and (grad grad G)_1(x, 0) along e_1."""
    radii = np.array(sorted(int(r) for r in radii))
    if N < MIN_SAMPLES:
        raise MomentError(f"N = {N} below the minimum of {MIN_SAMPLES} samples")
    if len(radii) == 0 or radii.min() < 3:
        raise MomentError("probe radii must be >= 3L = 3")
    if any(q < 1 for q in q_list):
        raise MomentError("moments need q >= 1")
    if box_radius is None:
        box_radius = fast_radius(choose_box_radius(mu, radii.max()))
    lattice = build_lattice(dim, box_radius, Boundary.DIRICHLET)
    points = probe_points(dim, radii)
    pspec = ProblemSpec(mu, tolerance)
    work = partial(_probe_worker, spec=spec, lattice=lattice, mu=mu, points=points,
                   pspec=pspec, master_seed=master_seed)
    results = pmap(work, range(N), jobs)
    samples = {"grad": np.array([r[0] for r in results]),
               "mixed": np.array([r[1] for r in results]),
               "value": np.array([r[2] for r in results])}
    table = MomentTable(spec.spec_id, dim, mu, radii.astype(float), sorted(float(q) for q in q_list),
                        samples, master_seed, box_radius)
    return reduce_table(table)


@dataclass
class ScalingFit:
    exponent: float
    intercept: float
    r_squared: float
    radii: list
    weighting: Weighting = Weighting.UNIFORM
    rate: float = 0.0
    method: str = "deweighted"

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "intercept": self.intercept, "r_squared": self.r_squared,
                "radii": [float(r) for r in self.radii], "weighting": Weighting(self.weighting).value,
                "rate": self.rate, "method": self.method}


def _weighted_lstsq(X, y, w):
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ coef
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    r2 = 1.0 if ss_tot == 0 else max(0.0, min(1.0, 1 - np.sum(w * resid ** 2) / ss_tot))
    return coef, r2


def _log_weights(m, ci, weighting):
    if Weighting(weighting) is Weighting.UNIFORM or ci is None:
        return np.ones_like(m)
    half = np.maximum((ci[1] - ci[0]) / 2, 1e-300)
    sig = half / (1.96 * m)
    return 1.0 / np.maximum(sig, 1e-12) ** 2


def power_law_fit(radii, values, mu: float = 0.0, rate: float = 0.0, weights=None,
                  weighting=Weighting.UNIFORM) -> ScalingFit:
    """Slope of log(v exp(rate sqrt(mu) r)) against log r."""
    r = np.asarray(radii, float)
    v = np.asarray(values, float)
    if len(r) < 3:
        raise MomentError("a scaling fit needs at least 3 radii")
    if np.ptp(np.log(r)) == 0:
        raise MomentError("degenerate design: all radii equal")
    if np.any(v <= 0):
        raise MomentError("log-log fit needs positive values")
    y = np.log(v) + rate * math.sqrt(mu) * r
    X = np.column_stack([np.ones_like(r), np.log(r)])
    w = np.ones_like(r) if weights is None else np.asarray(weights, float)
    coef, r2 = _weighted_lstsq(X, y, w)
    return ScalingFit(float(coef[1]), float(coef[0]), float(r2), list(r), Weighting(weighting), rate)


def joint_rate_fit(radii, values, mu: float, weights=None, weighting=Weighting.UNIFORM) -> ScalingFit:
    """Fit log v = log C - c sqrt(mu) r + s log r jointly in (C, c, s)."""
    r = np.asarray(radii, float)
    v = np.asarray(values, float)
    if len(r) < 3:
        raise MomentError("a scaling fit needs at least 3 radii")
    if np.ptp(np.log(r)) == 0:
        raise MomentError("degenerate design: all radii equal")
    y = np.log(v)
    X = np.column_stack([np.ones_like(r), -math.sqrt(mu) * r, np.log(r)])
    w = np.ones_like(r) if weights is None else np.asarray(weights, float)
    coef, r2 = _weighted_lstsq(X, y, w)
    return ScalingFit(float(coef[2]), float(coef[0]), float(r2), list(r), Weighting(weighting),
                      float(coef[1]), "joint")


def fit_decay_exponent(table: MomentTable, q: float, which: str, c_hat: float | None = 0.0,
                       weighting=Weighting.UNIFORM) -> ScalingFit:
    """Decay exponent of the q-th moment curve.

    With a numeric ``c_hat`` the curve is deweighted by exp(c_hat sqrt(mu)|x|)
    before the log-log regression; ``c_hat=None`` fits the rate jointly.
    """
    if which not in QUANTITIES:
        raise MomentError(f"unknown quantity {which!r}")
    key = (which, float(q))
    if key not in table.moments:
        raise MomentError(f"table has no q = {q} moments for {which}")
    m = table.moments[key]
    w = _log_weights(m, table.ci.get(key), weighting)
    if c_hat is None:
        return joint_rate_fit(table.radii, m, table.mu, w, weighting)
    if c_hat < 0:
        raise MomentError("c_hat must be >= 0")
    return power_law_fit(table.radii, m, table.mu, c_hat, w, weighting)


def dd_moment_check(table: MomentTable, rate: float | None = None, grad_tol: float = 0.25,
                    mixed_tol: float = 0.35) -> dict:
    """Second moment of grad G should decay like |x|^(1-d), first moment of grad grad G like |x|^-d."""
    for which, q in (("grad", 2.0), ("mixed", 1.0)):
        if (which, q) not in table.moments:
            raise MomentError(f"dd_moment_check needs q = {q:g} for {which}")
    d = table.dim
    out = {}
    for which, q, target, tol in (("grad", 2.0, -(d - 1), grad_tol), ("mixed", 1.0, -d, mixed_tol)):
        fit = fit_decay_exponent(table, q, which, rate)
        out[which] = {"q": q, "target": target, "tolerance": tol, **fit.to_dict(),
                      "C": math.exp(fit.intercept), "pass": abs(fit.exponent - target) <= tol}
    out["pass"] = out["grad"]["pass"] and out["mixed"]["pass"]
    return out


def high_moment_flatness(table: MomentTable, q_pair=(2, 8), which: str = "mixed") -> dict:
    """Ratio <Z^2p>^(1/2p) / <Z^2>^(1/2) per radius; bounded and flat under the reverse Hölder bound."""
    lo, hi = (float(q) for q in q_pair)
    for q in (lo, hi):
        if (which, q) not in table.moments:
            raise MomentError(f"table lacks q = {q:g} for {which}")
    if len(table.radii) < 2:
        raise MomentError("flatness needs at least two radii")
    ratio = table.moments[(which, hi)] / table.moments[(which, lo)]
    return {"which": which, "q_pair": [lo, hi], "radii": [float(r) for r in table.radii],
            "ratio": [float(x) for x in ratio], "max_ratio": float(ratio.max()),
            "growth": float(ratio[-1] / ratio[0])}


def weighted_sup_moment(samples: dict, beta: float, radii, dim: int, q_list=(1, 2),
                        mu: float = 0.0, rate: float = 0.0, subgrid: int | None = None) -> dict:
    """Moments of sup_x |x|^(d - beta) (grad grad G)_1(x, 0) and the grad analogue.

    ``samples`` maps quantity -> (N, n_radii) array on the probe grid ``radii``.
    ``subgrid`` compares against the sup over the first ``subgrid`` radii only.
    """
    if beta <= 0:
        raise MomentError("beta must be > 0")
    r = np.asarray(radii, float)
    if r.size == 0:
        raise MomentError("empty probe grid")
    expw = np.exp(rate * math.sqrt(mu) * r)
    out = {"beta": beta, "radii": [float(x) for x in r]}
    for which, power in (("mixed", dim - beta), ("grad", dim - 1 - beta)):
        if which not in samples:
            continue
        weighted = np.asarray(samples[which]) * r ** power * expw
        sup = weighted.max(axis=1)
        entry = {"argmax_radius": [float(x) for x in r[np.argmax(weighted, axis=1)]],
                 "moments": {float(q): float(empirical_moment(sup, q)) for q in q_list},
                 "variance": float(np.var(sup))}
        if subgrid is not None:
            sub = weighted[:, :subgrid].max(axis=1)
            entry["sub_moments"] = {float(q): float(empirical_moment(sub, q)) for q in q_list}
            entry["relative_change"] = {
                float(q): float(abs(entry["moments"][float(q)] / entry["sub_moments"][float(q)] - 1))
                for q in q_list}
        out[which] = entry
    return out
