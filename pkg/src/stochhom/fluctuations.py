"""Strong and weak fluctuations of rescaled massive solutions on the periodic torus.

Size n uses the torus of side s = 2 (n // 2) + 1 with eps = 1/s, mass
mu_n = mu / s^2 and right-hand side f_n(x) = s^-2 phi(x / s), so the solution
is an O(1) function of the macroscopic variable x / s. Lattice sums are
weighted by s^-d to approximate unit-torus integrals.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import partial

import numpy as np

from .ensemble import EnsembleSpec, mix_seed, sample
from .lattice import Boundary, Lattice, ball_offsets, build_lattice
from .parallel import pmap
from .solver import LinearOperator, NonConvergence, ProblemSpec, solve

PROFILES = ("bump", "plane_wave", "tilted_wave")


class FluctuationError(ValueError):
    pass


def profile(name: str, y: np.ndarray) -> np.ndarray:
    """Smooth 1-periodic-compatible profile of macroscopic coordinates ``y`` (shape (n, d))."""
    if name == "bump":
        t = np.sqrt((y ** 2).sum(axis=1)) / 0.4
        out = np.zeros(len(t))
        inside = t < 1
        out[inside] = np.exp(1 - 1 / (1 - t[inside] ** 2))
        return out
    if name == "plane_wave":
        return np.cos(2 * np.pi * y[:, 0])
    if name == "tilted_wave":
        return np.cos(2 * np.pi * y.sum(axis=1))
    raise FluctuationError(f"unknown profile {name!r}; expected one of {PROFILES}")


@dataclass(frozen=True)
class FluctuationConfig:
    """Sizes, exponents and profiles of a fluctuation run.

    ``q``, ``r`` (strong) and ``r_tilde``, ``q_tilde`` (weak) are optional
    integrability exponents; when given their scaling relations are checked.
    """

    dim: int = 2
    sizes: tuple = (32, 64, 128, 256)
    mu: float = 1.0
    rhs: str = "bump"
    test: str = "bump"
    p: float = 2.0
    theta: float = 1.0
    lam: float = 2.0
    lam1: float = 2.0
    lam2: float = 2.0
    q: float | None = None
    r: float | None = None
    r_tilde: float | None = None
    q_tilde: float | None = None
    N: int = 200
    tolerance: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        self.validate()

    def validate(self):
        d = self.dim
        if d not in (2, 3):
            raise FluctuationError("dim must be 2 or 3")
        if len(self.sizes) < 3 or any(n < 4 for n in self.sizes):
            raise FluctuationError("a scaling fit needs at least three sizes, each >= 4")
        if len(set(n // 2 for n in self.sizes)) != len(self.sizes):
            raise FluctuationError("sizes must give distinct torus sides")
        if not self.mu > 0:
            raise FluctuationError("mu must be > 0")
        if self.p < 1 or self.theta < 1:
            raise FluctuationError("p and theta must be >= 1")
        if not self.lam > d / 2:
            raise FluctuationError(f"lam must exceed d/2 = {d / 2}")
        if not 1 / self.lam1 + 1 / self.lam2 < (d + 2) / d:
            raise FluctuationError("need 1/lam1 + 1/lam2 < (d + 2)/d")
        if (self.q is None) != (self.r is None):
            raise FluctuationError("q and r must be given together")
        if self.q is not None and abs(1 + 1 / self.p - 1 / self.r - 1 / self.q) > 1e-12:
            raise FluctuationError("need 1 + 1/p = 1/r + 1/q")
        if (self.r_tilde is None) != (self.q_tilde is None):
            raise FluctuationError("r_tilde and q_tilde must be given together")
        if self.r_tilde is not None:
            if self.r is None:
                raise FluctuationError("r_tilde needs q and r as well")
            total = 1 / self.r + 1 / self.r_tilde + 1 / self.q + 1 / self.q_tilde
            if abs(total - 2.5) > 1e-12:
                raise FluctuationError("need 1/r + 1/r_tilde + 1/q + 1/q_tilde = 5/2")
        for name in (self.rhs, self.test):
            if name not in PROFILES:
                raise FluctuationError(f"unknown profile {name!r}")
        if self.N < 2:
            raise FluctuationError("N must be >= 2")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sizes"] = list(self.sizes)
        return out


def torus(dim: int, n: int) -> Lattice:
    return build_lattice(dim, n // 2, Boundary.PERIODIC)


def macro_coords(lattice: Lattice) -> np.ndarray:
    return lattice.coords() / lattice.side


def scaled_rhs(lattice: Lattice, name: str) -> np.ndarray:
    return (profile(name, macro_coords(lattice)) / lattice.side ** 2).reshape(lattice.shape)


def mixed_norm(f: np.ndarray, q: float, lam: float, eps_ball: int, periodic: bool = False,
               cell_volume: float = 1.0) -> float:
    """Local-average mixed norm ``(sum_x (mean_{B_eps(x)} |f|^lam)^(q/lam))^(1/q)``.

    Lattice sums are weighted by ``cell_volume``. Off-lattice ball sites count as
    zero unless ``periodic``, in which case the array wraps.
    """
    if not (q >= 1 and lam >= 1) or eps_ball < 0:
        raise FluctuationError(f"invalid exponents q={q}, lambda={lam}, eps_ball={eps_ball}")
    g = np.abs(np.asarray(f, float)) ** lam
    offsets = ball_offsets(g.ndim, eps_ball)
    h = g if periodic else np.pad(g, eps_ball)
    local = np.zeros_like(h)
    for off in offsets:
        local += np.roll(h, tuple(-o for o in off), axis=tuple(range(g.ndim)))
    local /= len(offsets)
    return float((cell_volume * (local ** (q / lam)).sum()) ** (1 / q))


def centered(samples: np.ndarray) -> np.ndarray:
    """Deviation from the sample mean, anchored at the first sample so identical samples give exact zeros."""
    base = samples[0]
    shift = samples - base
    return shift - shift.mean(axis=0)


@dataclass
class FluctuationResult:
    config: FluctuationConfig
    sides: np.ndarray
    eps: np.ndarray
    mu_n: np.ndarray
    strong: np.ndarray
    strong_deflated: np.ndarray
    weak: np.ndarray
    strong_ci: np.ndarray
    weak_ci: np.ndarray
    slope_strong: float
    slope_strong_raw: float
    slope_weak: float
    degenerate: bool
    seeds: dict = field(default_factory=dict)
    mode: str = "both"

    @property
    def slope(self) -> float:
        """Fitted exponent of the statistic selected by ``mode``."""
        if self.mode == "both":
            raise FluctuationError("a combined result has two slopes; select a mode first")
        return self.slope_strong if self.mode == "strong" else self.slope_weak

    def rows(self) -> list[dict]:
        return [{"n": int(n), "side": int(s), "eps": float(e), "mu_n": float(m),
                 "strong": float(a), "strong_deflated": float(b), "strong_ci_lo": float(c[0]),
                 "strong_ci_hi": float(c[1]), "weak": float(w), "weak_ci_lo": float(wc[0]),
                 "weak_ci_hi": float(wc[1])}
                for n, s, e, m, a, b, c, w, wc in zip(self.config.sizes, self.sides, self.eps,
                                                      self.mu_n, self.strong, self.strong_deflated,
                                                      self.strong_ci.T, self.weak, self.weak_ci.T)]

    def fits(self) -> dict:
        gap = strong_vs_weak_gap(replace(self, mode="strong"), replace(self, mode="weak"))
        return {"slope_strong": self.slope_strong, "slope_strong_raw": self.slope_strong_raw,
                "slope_weak": self.slope_weak, "gap": gap["gap"], "degenerate": self.degenerate}


def _solve_worker(i, spec, lattice, mu_n, f, master_seed, tolerance):
    seed = mix_seed(master_seed, i)
    field_ = sample(spec, lattice, seed)
    try:
        return solve(LinearOperator(field_, mu_n), f, ProblemSpec(mu_n, tolerance))
    except NonConvergence as exc:
        exc.sample = i
        raise


def size_seed(master_seed: int, n: int) -> int:
    return mix_seed(master_seed, 1_000_000 + int(n))


def _bias(cfg, theta_p_two):
    return math.sqrt(cfg.N / (cfg.N - 1)) if theta_p_two else 1.0


def _slope(eps, values):
    values = np.asarray(values, float)
    if np.any(values <= 0):
        return float("nan")
    return float(np.polyfit(np.log(eps), np.log(values), 1)[0])


def _bootstrap(per_sample, stat, n_boot=200, seed=0):
    rng = np.random.default_rng(seed)
    n = len(per_sample)
    draws = [stat(per_sample[rng.integers(0, n, n)]) for _ in range(n_boot)]
    return np.quantile(draws, [0.025, 0.975])


def fluctuation_experiment(cfg: FluctuationConfig, spec: EnsembleSpec, master_seed: int,
                           jobs: int = 1) -> FluctuationResult:
    """Strong and weak fluctuation statistics for every size from one set of solves."""
    d, N = cfg.dim, cfg.N
    sides, eps, mu_ns, S, Sd, W, Sci, Wci = [], [], [], [], [], [], [], []
    seeds = {}
    for n in cfg.sizes:
        lat = torus(d, n)
        s = lat.side
        vol = float(s) ** -d
        mu_n = cfg.mu / s ** 2
        f = scaled_rhs(lat, cfg.rhs)
        g = profile(cfg.test, macro_coords(lat)).reshape(lat.shape)
        sseed = size_seed(master_seed, n)
        seeds[int(n)] = sseed
        work = partial(_solve_worker, spec=spec, lattice=lat, mu_n=mu_n, f=f,
                       master_seed=sseed, tolerance=cfg.tolerance)
        U = centered(np.stack(pmap(work, range(N), jobs)))
        strong_i = vol * (np.abs(U.reshape(N, -1)) ** cfg.p).sum(axis=1)
        weak_i = vol * (U.reshape(N, -1) @ g.ravel())
        sb = _bias(cfg, cfg.p == 2 and cfg.theta == 1)
        wb = _bias(cfg, cfg.theta == 2)
        pt = cfg.p * cfg.theta

        def s_stat(x):
            return sb * float(np.mean(x ** cfg.theta) ** (1 / pt))

        def w_stat(x):
            return wb * float(np.mean(np.abs(x) ** cfg.theta) ** (1 / cfg.theta))

        sval = s_stat(strong_i)
        defl = math.sqrt(abs(math.log(mu_n))) + 1 if d == 2 else 1.0
        sides.append(s)
        eps.append(1.0 / s)
        mu_ns.append(mu_n)
        S.append(sval)
        Sd.append(sval / defl)
        W.append(w_stat(weak_i))
        Sci.append(_bootstrap(strong_i, s_stat, seed=sseed % 2**32))
        Wci.append(_bootstrap(weak_i, w_stat, seed=(sseed + 1) % 2**32))
    S, Sd, W = map(np.array, (S, Sd, W))
    degenerate = bool(np.all(S == 0) and np.all(W == 0))
    eps = np.array(eps)
    return FluctuationResult(cfg, np.array(sides), eps, np.array(mu_ns), S, Sd, W,
                             np.array(Sci).T, np.array(Wci).T,
                             float("nan") if degenerate else _slope(eps, Sd),
                             float("nan") if degenerate else _slope(eps, S),
                             float("nan") if degenerate else _slope(eps, W),
                             degenerate, seeds)


def strong_fluctuation_experiment(cfg, spec, master_seed, jobs=1) -> FluctuationResult:
    return replace(fluctuation_experiment(cfg, spec, master_seed, jobs), mode="strong")


def weak_fluctuation_experiment(cfg, spec, master_seed, jobs=1) -> FluctuationResult:
    return replace(fluctuation_experiment(cfg, spec, master_seed, jobs), mode="weak")


def strong_vs_weak_gap(result_s: FluctuationResult, result_w: FluctuationResult) -> dict:
    """Exponent of ``result_w`` minus exponent of ``result_s`` (deflated strong exponent in d = 2).

    Both results must come from the same dimension and sizes. Passing one
    result twice compares a statistic with itself and gives 0.
    """
    a, b = result_s.config, result_w.config
    if (a.dim, a.sizes) != (b.dim, b.sizes):
        raise FluctuationError(f"mismatched configs: d={a.dim} sizes={a.sizes} vs d={b.dim} sizes={b.sizes}")
    degenerate = result_s.degenerate or result_w.degenerate
    gap = float("nan") if degenerate else result_w.slope - result_s.slope
    return {"gap": gap, "slope_strong": result_s.slope, "slope_weak": result_w.slope,
            "degenerate": degenerate}
