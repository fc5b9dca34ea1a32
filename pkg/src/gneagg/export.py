"""Artifact writers for runs, comparisons and verification reports."""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from ._json import write_json
from .trace import RunTrace

TRACE_TEMPLATE = "trace_{}.csv"
DIAGNOSTICS_FILE = "diagnostics.json"
REFERENCE_FILE = "reference.json"
CONFIG_ECHO_FILE = "config.echo.json"
COMPARE_FILE = "compare.csv"
INSTANCE_FILE = "instance.json"
SCHEDULE_FILE = "schedule.json"
VERIFY_TEMPLATE = "verify_{}.json"


def jsonable(value: Any) -> Any:
    """Converts numpy values and non-finite floats into plain JSON values (NaN and inf become None)."""
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def write_document(path: str | Path, document: Any) -> Path:
    return write_json(path, jsonable(document))


def write_trace(directory: str | Path, trace: RunTrace, name: str | None = None) -> Path:
    """Writes ``trace_<name>.csv``; ``name`` defaults to the algorithm id."""
    return trace.to_csv(Path(directory) / TRACE_TEMPLATE.format(name or trace.algorithm))


def _cell(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def write_compare(path: str | Path, traces: Mapping[str, RunTrace], column: str = "norm_residual") -> Path:
    """One row per iteration k with one ``column`` value per labelled run; shorter runs leave blanks."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    series = {label: trace.column(column) for label, trace in traces.items()}
    length = max((s.size for s in series.values()), default=0)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", *series])
        for k in range(length):
            writer.writerow([k, *(_cell(s[k]) if k < s.size else "" for s in series.values())])
    return target
