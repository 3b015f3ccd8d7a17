"""Statistic-by-statistic comparison of two run directories."""

from __future__ import annotations

import json
import math
from pathlib import Path

from .output import MANIFEST_NAME, SchemaError, read_table


class CompareError(ValueError):
    pass


def _load(path) -> tuple[dict, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("manifest_version") != 1:
        raise CompareError(f"{path} is not a run manifest")
    return doc, path.parent


def _float(s):
    try:
        return float(s)
    except ValueError:
        return None


def _rel(a, b):
    if a == b:
        return 0.0
    if math.isnan(a) or math.isnan(b):
        return math.nan
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def compare_runs(manifest_a, manifest_b) -> dict:
    """Relative differences of every numeric statistic in tables present in both runs.

    Rows are matched on the key columns recorded in the manifest. Where a
    table carries ``ci_lo``/``ci_hi`` columns, each row also reports whether
    the two intervals overlap.
    """
    a, dir_a = _load(manifest_a)
    b, dir_b = _load(manifest_b)
    kind_a, kind_b = a["config"]["experiment"], b["config"]["experiment"]
    if kind_a != kind_b:
        raise CompareError(f"experiment kinds differ: {kind_a} vs {kind_b}")
    outs_b = {o["file"]: o for o in b.get("outputs", [])}
    report = {"experiment": kind_a, "tables": {}, "max_rel_diff": 0.0, "all_ci_overlap": True}
    for o in a.get("outputs", []):
        name = o["file"]
        if not name.endswith(".csv") or name not in outs_b:
            continue
        info_a, cols_a, rows_a = read_table(dir_a / name)
        info_b, cols_b, rows_b = read_table(dir_b / name)
        if (info_a["schema"], info_a["version"]) != (info_b["schema"], info_b["version"]):
            raise SchemaError(f"{name}: schema {info_a['schema']}/{info_a['version']} vs "
                              f"{info_b['schema']}/{info_b['version']}")
        if cols_a != cols_b:
            raise SchemaError(f"{name}: column sets differ")
        keys = o.get("keys") or []
        kidx = [cols_a.index(k) for k in keys]
        index_b = {tuple(r[i] for i in kidx): r for r in rows_b}
        has_ci = "ci_lo" in cols_a and "ci_hi" in cols_a
        entries = []
        for ra in rows_a:
            key = tuple(ra[i] for i in kidx)
            rb = index_b.get(key)
            if rb is None:
                continue
            diffs = {}
            for j, c in enumerate(cols_a):
                if c in keys or c in ("ci_lo", "ci_hi"):
                    continue
                x, y = _float(ra[j]), _float(rb[j])
                if x is not None and y is not None:
                    diffs[c] = _rel(x, y)
            entry = {"key": dict(zip(keys, key)), "rel_diff": diffs}
            if has_ci:
                lo = max(float(ra[cols_a.index("ci_lo")]), float(rb[cols_a.index("ci_lo")]))
                hi = min(float(ra[cols_a.index("ci_hi")]), float(rb[cols_a.index("ci_hi")]))
                entry["ci_overlap"] = lo <= hi
                report["all_ci_overlap"] &= entry["ci_overlap"]
            finite = [v for v in diffs.values() if not math.isnan(v)]
            if finite:
                report["max_rel_diff"] = max(report["max_rel_diff"], max(finite))
            entries.append(entry)
        report["tables"][name] = entries
    return report
