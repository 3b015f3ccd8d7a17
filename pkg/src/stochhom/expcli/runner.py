"""Run an experiment config into a self-describing run directory."""

from __future__ import annotations

import logging
import time
import traceback
from pathlib import Path

from threadpoolctl import threadpool_limits

from .. import __version__
from ..solver import NonConvergence
from .config import ExperimentConfig
from .experiments import HANDLERS, Result, sample_seeds
from .figures import render
from .output import MANIFEST_NAME, write_json, write_table

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_BANDS = 0, 1, 2


def _manifest(cfg: ExperimentConfig, status: str, **extra) -> dict:
    doc = {"manifest_version": 1, "tool": "stochhom", "version": __version__,
           "config": cfg.to_dict(), "seeds": {"master_seed": cfg.master_seed, **sample_seeds(cfg)},
           "status": status, "failures": [], "outputs": []}
    doc.update(extra)
    return doc


def run(cfg: ExperimentConfig, out: str | Path | None = None, figures: bool = True) -> tuple[int, Path]:
    """Execute ``cfg``; returns (exit code, run directory).

    The manifest is written first (status "running") and rewritten at the end
    with wall time, outputs, band verdicts and failures.
    """
    run_dir = Path(out) if out is not None else cfg.output_root() / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    mpath = run_dir / MANIFEST_NAME
    write_json(mpath, _manifest(cfg, "running"))
    t0 = time.perf_counter()
    try:
        with threadpool_limits(limits=1):
            res: Result = HANDLERS[cfg.experiment](cfg)
    except Exception as exc:  # recorded in the manifest, reported by exit code
        failure = {"sample": getattr(exc, "sample", None), "error": f"{type(exc).__name__}: {exc}"}
        if not isinstance(exc, NonConvergence):
            failure["traceback"] = traceback.format_exc()
        log.error("run failed: %s", failure["error"])
        write_json(mpath, _manifest(cfg, "failed", wall_time_s=time.perf_counter() - t0,
                                    failures=[failure]))
        return EXIT_ERROR, run_dir

    outputs = []
    for table in res.tables + [p.table() for p in res.plots]:
        write_table(run_dir, table)
        outputs.append({"file": table.filename, "schema": f"{table.schema}/{table.version}",
                        "keys": table.keys})
    fits = {"manifest": MANIFEST_NAME, "experiment": cfg.experiment, **res.fits,
            "flags": res.flags, "bands": [b.to_dict() for b in res.bands]}
    write_json(run_dir / "fits.json", fits)
    outputs.append({"file": "fits.json", "schema": "fits/1"})
    if figures:
        for plot in res.plots:
            path = render(plot, run_dir / "figures", MANIFEST_NAME)
            outputs.append({"file": str(path.relative_to(run_dir)), "schema": "figure/1"})
    passed = all(b.passed for b in res.bands)
    status = "complete" if passed else "bands_failed"
    write_json(mpath, _manifest(cfg, status, wall_time_s=time.perf_counter() - t0, outputs=outputs,
                                bands=[b.to_dict() for b in res.bands], flags=res.flags))
    for b in res.bands:
        log.info("band %-32s %s value=%.6g in [%.6g, %.6g]", b.name,
                 "pass" if b.passed else "FAIL", b.value, b.lo, b.hi)
    return (EXIT_OK if passed else EXIT_BANDS), run_dir
