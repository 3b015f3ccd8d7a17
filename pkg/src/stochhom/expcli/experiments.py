"""One handler per experiment kind: compute, then describe the results as tables,
fits, plot data and acceptance-band verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .. import annealed, fluctuations, regularity, sensitivity
from ..ensemble import EnsembleKind, mix_seed, sample, void_probability
from ..green import check_deterministic_bounds, fast_radius, probe_sample
from ..lattice import Boundary, build_lattice
from ..parallel import pmap
from ..solver import NonConvergence, ProblemSpec, choose_box_radius
from .config import ExperimentConfig
from .output import PlotData, Table


@dataclass
class Band:
    name: str
    value: float
    lo: float
    hi: float

    @property
    def passed(self) -> bool:
        return bool(self.lo <= self.value <= self.hi)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "lo": self.lo, "hi": self.hi,
                "pass": self.passed}


@dataclass
class Result:
    tables: list = field(default_factory=list)
    plots: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    bands: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)


def sample_seeds(cfg: ExperimentConfig) -> dict:
    """Per-sample child seeds, grouped the way each experiment draws them."""
    m, N = cfg.master_seed, cfg.N
    if cfg.experiment in ("strong_fluct", "weak_fluct"):
        out = {}
        for n in cfg.params["sizes"]:
            s = fluctuations.size_seed(m, n)
            out[f"size_{n}"] = [mix_seed(s, i) for i in range(N)]
        return out
    if cfg.experiment == "spectral_gap":
        return {"samples": [mix_seed(m, i) for i in range(N * cfg.params["batches"])]}
    return {"samples": [mix_seed(m, i) for i in range(N)]}


def _tol_band(name, value, target, tol):
    return Band(name, value, target - tol, target + tol)


# -- annealed moments ------------------------------------------------------------

def run_annealed(cfg: ExperimentConfig) -> Result:
    p = cfg.params
    q_plot = [float(q) for q in p["q_list"]]
    q_all = sorted(set(q_plot) | {1.0, 2.0})
    table = annealed.estimate_moments(cfg.ensemble, p["mu"], p["radii"], q_all, cfg.N,
                                      cfg.master_seed, cfg.dim, cfg.parallelism, p["box_radius"],
                                      cfg.tolerance)
    res = Result()
    res.tables.append(Table("moments", "annealed_moments",
                            ["quantity", "radius", "q", "moment", "ci_lo", "ci_hi", "n"],
                            [list(r) for r in table.rows()], ["quantity", "radius", "q"]))
    rows = []
    for i in range(table.n):
        for j, r in enumerate(table.radii):
            rows.append([i, mix_seed(cfg.master_seed, i), float(r), table.samples["grad"][i, j],
                         table.samples["mixed"][i, j], table.samples["value"][i, j]])
    res.tables.append(Table("samples", "annealed_samples",
                            ["sample", "seed", "radius", "grad", "mixed", "green"], rows,
                            ["sample", "radius"]))
    c_hat = None if p["rate_policy"] == "joint" else p["c_hat"]
    fits = {}
    for which in annealed.QUANTITIES:
        for q in q_all:
            fits[f"{which}_q{q:g}"] = annealed.fit_decay_exponent(table, q, which, c_hat,
                                                                   p["weighting"]).to_dict()
    dd = annealed.dd_moment_check(table, c_hat, cfg.bands.get("grad_exponent_tol", 0.25),
                                  cfg.bands.get("mixed_exponent_tol", 0.35))
    qmax = max(q_all)
    flat = {which: annealed.high_moment_flatness(table, (2, qmax), which)
            for which in annealed.QUANTITIES} if qmax > 2 else {}
    res.fits = {"box_radius": table.box_radius, "fits": fits, "dd_check": dd, "flatness": flat}
    if p["beta"] is not None:
        res.fits["weighted_sup"] = annealed.weighted_sup_moment(
            table.samples, p["beta"], table.radii, cfg.dim, q_all, p["mu"])
    b = cfg.bands
    d = cfg.dim
    if "grad_exponent_tol" in b:
        res.bands.append(_tol_band("dd_grad_exponent", dd["grad"]["exponent"], -(d - 1),
                                   b["grad_exponent_tol"]))
    if "mixed_exponent_tol" in b:
        res.bands.append(_tol_band("dd_mixed_exponent", dd["mixed"]["exponent"], -d,
                                   b["mixed_exponent_tol"]))
    if "q_exponent_tol" in b and 2.0 in q_all:
        for which in annealed.QUANTITIES:
            ref = fits[f"{which}_q2"]["exponent"]
            for q in q_plot:
                if q > 2:
                    res.bands.append(_tol_band(f"{which}_q{q:g}_vs_q2_exponent",
                                               fits[f"{which}_q{q:g}"]["exponent"], ref,
                                               b["q_exponent_tol"]))
    if "flatness_growth_max" in b:
        for which, fl in flat.items():
            res.bands.append(Band(f"{which}_flatness_growth", fl["growth"], 0.0,
                                  b["flatness_growth_max"]))
    for which in annealed.QUANTITIES:
        series = []
        for q in q_plot:
            ci = table.ci[(which, q)]
            series.append((f"q={q:g}", table.radii, table.moments[(which, q)], ci[0], ci[1]))
        res.plots.append(PlotData(f"{which}_moments", "|x|", f"<{which}^q>^(1/q)", series,
                                  title=f"{which} moments, mu={p['mu']:g}"))
    return res


# -- deterministic bounds ------------------------------------------------------------

def _bounds_worker(i, spec, lattice, mu, points, annulus, pspec, master_seed):
    field_ = sample(spec, lattice, mix_seed(master_seed, i))
    try:
        return probe_sample(field_, mu, points, pspec, annulus_radii=annulus)
    except NonConvergence as exc:
        exc.sample = i
        raise


def run_bounds(cfg: ExperimentConfig) -> Result:
    p = cfg.params
    radii = p["radii"]
    reach = max(radii + [2 * r for r in p["annulus_radii"]])
    box = p["box_radius"] or fast_radius(choose_box_radius(p["mu"], reach))
    lattice = build_lattice(cfg.dim, box, Boundary.DIRICHLET)
    points = annealed.probe_points(cfg.dim, radii)
    work = partial(_bounds_worker, spec=cfg.ensemble, lattice=lattice, mu=p["mu"], points=points,
                   annulus=p["annulus_radii"], pspec=ProblemSpec(p["mu"], cfg.tolerance),
                   master_seed=cfg.master_seed)
    probes = pmap(work, range(cfg.N), cfg.parallelism)
    for i, pr in enumerate(probes):
        pr.seed = i
    report = check_deterministic_bounds(probes, p["annulus_radii"], cfg.tolerance)
    res = Result()
    cols = ["sample", "C_point", "c_point", "C_annulus", "c_annulus", "negative"]
    res.tables.append(Table("bounds", "deterministic_bounds", cols,
                            [[r["seed"], r.get("C_point", math.nan), r.get("c_point", math.nan),
                              r.get("C_annulus", math.nan), r.get("c_annulus", math.nan),
                              r["negative"]] for r in report["samples"]], ["sample"]))
    rows = [[i, float(r), pr.g_value[j], pr.grad_avg[j]] for i, pr in enumerate(probes)
            for j, r in enumerate(radii)]
    res.tables.append(Table("profiles", "green_profiles", ["sample", "radius", "green", "grad"],
                            rows, ["sample", "radius"]))
    G = np.array([pr.g_value for pr in probes])
    res.plots.append(PlotData("green_profile", "|x|", "G(x, 0)",
                              [("mean", radii, G.mean(axis=0), G.min(axis=0), G.max(axis=0))],
                              logx=False))
    n_neg = len(report["flagged"])
    res.fits = {"box_radius": box, "flagged": report["flagged"]}
    if "max_negative_samples" in cfg.bands:
        res.bands.append(Band("negative_samples", n_neg, 0, cfg.bands["max_negative_samples"]))
    return res


# -- sensitivity ---------------------------------------------------------------------

def run_sensitivity(cfg: ExperimentConfig) -> Result:
    p = cfg.params
    pairs = ([(tuple(x), tuple(z)) for x, z in p["pairs"]] if p["pairs"]
             else sensitivity.default_pairs(cfg.dim))
    width = p["f_width"]
    summary = sensitivity.sensitivity_bound_experiment(
        cfg.ensemble, p["mu"], partial(sensitivity.bump, width=width), pairs, cfg.N,
        cfg.master_seed, p["box_radius"], cfg.dim, cfg.parallelism, p["n_random"], p["lambda2"],
        cfg.tolerance)
    recs = summary.pop("records")
    d = cfg.dim
    cols = ["sample"] + [f"x{k}" for k in range(d)] + [f"z{k}" for k in range(d)] + \
        ["distance", "branch", "osc", "kernel", "ratio"]
    rows = [[r.sample, *r.x, *r.z, math.dist(r.x, r.z), r.branch, r.osc_lower, r.kernel_value,
             r.ratio] for r in recs]
    res = Result()
    res.tables.append(Table("records", "sensitivity_records", cols, rows,
                            ["sample"] + cols[1:1 + 2 * d]))
    res.fits = summary
    series = []
    for branch in ("near", "far"):
        dists = sorted({round(math.dist(r.x, r.z), 12) for r in recs if r.branch == branch})
        ys, los, his = [], [], []
        for dd in dists:
            vals = np.array([r.ratio for r in recs if r.branch == branch
                             and round(math.dist(r.x, r.z), 12) == dd])
            ys.append(np.median(vals))
            los.append(np.quantile(vals, 0.01))
            his.append(np.quantile(vals, 0.99))
        series.append((branch, dists, ys, los, his))
    res.plots.append(PlotData("ratio_vs_distance", "|x - z|", "osc / K", series, logx=False))
    b = cfg.bands
    if "spread_max" in b:
        res.bands.append(Band("p99_over_median", summary["spread"], 0.0, b["spread_max"]))
    if "min_records" in b:
        res.bands.append(Band("n_records", summary["n_records"], b["min_records"], math.inf))
    return res


# -- spectral gap ----------------------------------------------------------------------

def analytic_gap_ratio(cfg: ExperimentConfig) -> float | None:
    """Exact ratio for single-coefficient functionals with two-valued laws, else None."""
    spec, zeta = cfg.ensemble, cfg.params["zeta"]
    full = 1.0 - spec.lam
    if spec.kind is EnsembleKind.CHECKERBOARD and zeta == "site_value":
        return spec.p_hi * (1 - spec.p_hi) * (spec.hi - spec.lo) ** 2 / full ** 2
    if spec.kind is EnsembleKind.POISSON and zeta == "edge_conductance":
        c = 1.0 - void_probability(spec, cfg.dim)
        return c * (1 - c) * (spec.background - spec.inclusion_value) ** 2 / full ** 2
    if spec.kind is EnsembleKind.CONSTANT and zeta in ("site_value", "edge_conductance"):
        return 0.0
    return None


def run_gap(cfg: ExperimentConfig) -> Result:
    p = cfg.params
    f = partial(sensitivity.bump, width=p["f_width"])
    zeta = p["zeta"]
    needs_f = zeta in ("point_value", "ball_average")
    batches = []
    for b in range(p["batches"]):
        batches.append(sensitivity.spectral_gap_check(
            zeta, cfg.ensemble, p["mu"], f if needs_f else None, cfg.N, cfg.master_seed,
            p["box_radius"], cfg.dim, p["site"], cfg.parallelism, p["n_random"], cfg.tolerance,
            sample_offset=b * cfg.N))
    res = Result()
    rows = []
    for b, out in enumerate(batches):
        for i, (v, s) in enumerate(zip(out["values"], out["osc_sums"])):
            k = b * cfg.N + i
            rows.append([b, k, mix_seed(cfg.master_seed, k), v, s])
    res.tables.append(Table("samples", "spectral_gap_samples",
                            ["batch", "sample", "seed", "value", "osc_sum"], rows, ["sample"]))
    vals = np.concatenate([o["values"] for o in batches])
    sums = np.concatenate([o["osc_sums"] for o in batches])
    pooled_var = float(np.var(vals, ddof=1))
    pooled_sum = float(np.mean(sums))
    pooled = pooled_var / pooled_sum if pooled_sum > 0 else 0.0
    se_var = sensitivity.variance_stderr(vals)
    se_sum = float(np.std(sums, ddof=1) / math.sqrt(len(sums)))
    if pooled_sum > 0 and pooled_var > 0:
        se = pooled * math.sqrt((se_var / pooled_var) ** 2 + (se_sum / pooled_sum) ** 2)
    else:
        se = se_var / pooled_sum if pooled_sum > 0 else 0.0
    exact = analytic_gap_ratio(cfg)
    ratios = [o["ratio"] for o in batches]
    res.fits = {"batches": [{k: v for k, v in o.items() if k not in ("values", "osc_sums")}
                            for o in batches],
                "pooled_ratio": pooled, "pooled_stderr": se, "analytic_ratio": exact}
    res.plots.append(PlotData("batch_ratio", "batch", "var / E[sum osc^2]",
                              [("ratio", list(range(len(batches))), ratios,
                                [o["ratio"] - 2 * o["ratio_stderr"] for o in batches],
                                [o["ratio"] + 2 * o["ratio_stderr"] for o in batches])],
                              logx=False, logy=False))
    b = cfg.bands
    if "batch_ratio_max" in b and len(batches) > 1:
        lo, hi = min(ratios), max(ratios)
        spread = hi / lo if lo > 0 else (1.0 if hi == 0 else math.inf)
        res.bands.append(Band("batch_ratio_spread", spread, 1.0, b["batch_ratio_max"]))
    if "analytic_sigma" in b and exact is not None:
        k = b["analytic_sigma"]
        res.bands.append(Band("analytic_ratio", pooled, exact - k * se, exact + k * se))
    return res


# -- fluctuations ------------------------------------------------------------------------

def run_fluct(cfg: ExperimentConfig) -> Result:
    p = cfg.params
    fc = fluctuations.FluctuationConfig(
        dim=cfg.dim, sizes=tuple(p["sizes"]), mu=p["mu"], rhs=p["rhs"], test=p["test"], p=p["p"],
        theta=p["theta"], lam=p["lam"], lam1=p["lam1"], lam2=p["lam2"], q=p["q"], r=p["r"],
        r_tilde=p["r_tilde"], q_tilde=p["q_tilde"], N=cfg.N, tolerance=cfg.tolerance)
    out = fluctuations.fluctuation_experiment(fc, cfg.ensemble, cfg.master_seed, cfg.parallelism)
    res = Result()
    rows = out.rows()
    cols = list(rows[0])
    res.tables.append(Table("fluctuations", "fluctuations", cols,
                            [[r[c] for c in cols] for r in rows], ["n"]))
    res.fits = out.fits()
    res.flags["degenerate"] = out.degenerate
    strong = out.strong_deflated
    scale = np.where(out.strong > 0, strong / np.where(out.strong > 0, out.strong, 1), 0)
    res.plots.append(PlotData("strong", "eps", "strong fluctuation (deflated)" if cfg.dim == 2
                              else "strong fluctuation",
                              [("strong", out.eps, strong, out.strong_ci[0] * scale,
                                out.strong_ci[1] * scale)]))
    res.plots.append(PlotData("weak", "eps", "weak fluctuation",
                              [("weak", out.eps, out.weak, out.weak_ci[0], out.weak_ci[1])]))
    if not out.degenerate:
        fits = res.fits
        for key, value in (("slope_strong", fits["slope_strong"]), ("slope_weak", fits["slope_weak"]),
                           ("gap", fits["gap"])):
            if key in cfg.bands:
                lo, hi = cfg.bands[key]
                res.bands.append(Band(key, value, lo, hi))
    return res


# -- Lipschitz scan ----------------------------------------------------------------------------

def run_lipschitz(cfg: ExperimentConfig) -> Result:
    p = cfg.params
    scan = regularity.moment_boundedness_scan(cfg.ensemble, p["R_list"], p["q_list"], cfg.N,
                                              cfg.master_seed, cfg.dim, p["p"], p["mu_factor"],
                                              cfg.parallelism, cfg.tolerance)
    res = Result()
    d = cfg.dim
    rows = [[r.sample, r.R, r.probe_class, *r.x, r.f_name, r.quotient, r.numerator, r.denominator]
            for r in scan["records"]]
    res.tables.append(Table("records", "lipschitz_records",
                            ["sample", "R", "probe_class"] + [f"x{k}" for k in range(d)] +
                            ["f_name", "quotient", "numerator", "denominator"], rows,
                            ["sample", "R", "probe_class"]))
    mrows = []
    series = []
    R = np.array(scan["R"], float)
    for (q, cls), m in scan["moments"].items():
        ci = annealed.bootstrap_ci(scan["samples"][cls], q,
                                   mix_seed(cfg.master_seed, 20_000 + int(10 * q)))
        for j, Rj in enumerate(scan["R"]):
            mrows.append([q, cls, Rj, m[j], ci[0, j], ci[1, j]])
        series.append((f"q={q:g} {cls}", R, m, ci[0], ci[1]))
    res.tables.append(Table("moments", "lipschitz_moments",
                            ["q", "probe_class", "R", "moment", "ci_lo", "ci_hi"], mrows,
                            ["q", "probe_class", "R"]))
    res.plots.append(PlotData("quotient_moments", "R", "<Y_R^q>^(1/q)", series, logy=False))
    res.fits = {"growth": {f"q{q:g}_{c}": v for (q, c), v in scan["growth"].items()},
                "spread": {f"q{q:g}_{c}": v for (q, c), v in scan["spread"].items()}}
    if "growth_max" in cfg.bands:
        for (q, cls), g in scan["growth"].items():
            res.bands.append(Band(f"growth_q{q:g}_{cls}", g, 0.0, cfg.bands["growth_max"]))
    return res


HANDLERS = {"annealed_moments": run_annealed, "deterministic_bounds": run_bounds,
            "sensitivity": run_sensitivity, "spectral_gap": run_gap, "strong_fluct": run_fluct,
            "weak_fluct": run_fluct, "lipschitz_scan": run_lipschitz}
