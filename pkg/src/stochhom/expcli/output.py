"""Versioned CSV tables, JSON documents and plot-data files for run directories.

Every CSV starts with a comment line naming its schema and the manifest of
the run that wrote it, followed by a header row. Floats are written in
scientific notation with 17 significant digits, which round-trips 64-bit
values exactly and keeps reruns byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
_HEADER = re.compile(r"^# stochhom-csv schema=(?P<name>[\w.-]+)/(?P<version>\d+) manifest=(?P<manifest>\S+)$")


class SchemaError(ValueError):
    pass


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.16e}"
    return str(value)


@dataclass
class Table:
    """A result table; ``keys`` name the columns identifying a row."""

    name: str
    schema: str
    columns: list
    rows: list
    keys: list = field(default_factory=list)
    version: int = 1

    @property
    def filename(self) -> str:
        return f"{self.name}.csv"


@dataclass
class PlotData:
    """x/y series with confidence bands; one CSV row per point."""

    name: str
    xlabel: str
    ylabel: str
    series: list  # (label, x, y, lo, hi)
    logx: bool = True
    logy: bool = True
    title: str = ""

    def table(self) -> Table:
        rows = []
        for label, x, y, lo, hi in self.series:
            for xi, yi, li, hi_ in zip(x, y, lo, hi):
                rows.append([label, float(xi), float(yi), float(li), float(hi_)])
        return Table(f"plot_{self.name}", "plot", ["series", "x", "y", "ci_lo", "ci_hi"], rows,
                     ["series", "x"])


def write_table(directory: Path, table: Table, manifest: str = MANIFEST_NAME) -> Path:
    buf = io.StringIO()
    buf.write(f"# stochhom-csv schema={table.schema}/{table.version} manifest={manifest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        if len(row) != len(table.columns):
            raise SchemaError(f"row of length {len(row)} in table {table.name} with "
                              f"{len(table.columns)} columns")
        w.writerow([fmt(v) for v in row])
    path = Path(directory) / table.filename
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


def read_table(path) -> tuple[dict, list, list]:
    """(header info, columns, rows as lists of strings)."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    m = _HEADER.match(lines[0])
    if not m:
        raise SchemaError(f"{path}: missing schema line")
    reader = csv.reader(lines[1:])
    columns = next(reader)
    info = {"schema": m["name"], "version": int(m["version"]), "manifest": m["manifest"]}
    return info, columns, list(reader)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path: Path, doc: dict) -> Path:
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Path(path)
