"""Iterate state, per-iteration records and trace export."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

CSV_COLUMNS = (
    "k",
    "kkt_residual",
    "norm_residual",
    "consensus_dual",
    "track_sigma",
    "track_y",
    "track_z",
    "err_norm",
    "gamma",
    "partial_sum_gamma_err",
)

NAN = float("nan")


@dataclass
class IterateState:
    """Algorithm state at iteration k, as (N, ·) row arrays.

    ``lam`` has one row per agent, except in the semi-decentralized iteration
    where it is the single shared multiplier of length m. The tracking fields
    are only populated by the partial-information iteration.
    """

    x: np.ndarray
    lam: np.ndarray
    k: int = 0
    sigma: np.ndarray | None = None
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    x_tilde_prev: np.ndarray | None = None

    def copy(self) -> IterateState:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        return IterateState(**{k: v.copy() if isinstance(v, np.ndarray) else v for k, v in values.items()})


@dataclass(frozen=True, eq=False)
class TrackingStep:
    """Intermediate quantities of one partial-information iteration."""

    k: int
    x: np.ndarray
    lam: np.ndarray
    sigma_hat: np.ndarray
    y_hat: np.ndarray
    z_hat: np.ndarray
    x_tilde: np.ndarray
    y_next: np.ndarray
    lam_tilde: np.ndarray
    dual_cap: float | None = None


@dataclass(slots=True)
class TraceRecord:
    """Diagnostics of iteration k, evaluated at the iterate omega^k."""

    k: int
    kkt_residual: float = NAN
    norm_residual: float = NAN
    consensus_dual: float = NAN
    track_sigma: float = NAN
    track_y: float = NAN
    track_z: float = NAN
    err_norm: float = NAN
    gamma: float = NAN
    partial_sum_gamma_err: float = NAN
    fixed_point_residual: float = NAN
    inv_sigma: float = NAN
    inv_y: float = NAN
    inv_z: float = NAN
    step_x: float = NAN
    step_lam: float = NAN
    dual_norm: float = NAN


EXTRA_COLUMNS = tuple(f.name for f in fields(TraceRecord) if f.name not in CSV_COLUMNS)


@dataclass
class RunTrace:
    """Everything a solver run produced.

    Attributes:
        algorithm: "1", "2" or "3".
        records: One record per visited iterate, k = 0, 1, ... in order.
        snapshots: Thinned copies of (x^k, lambda^k), always including k = 0.
        status: "converged" or "max_iter".
        final: State after the last update.
        meta: Run settings and initial norms used by the diagnostics.
    """

    algorithm: str
    records: list[TraceRecord] = field(default_factory=list)
    snapshots: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    status: str = "max_iter"
    final: IterateState | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        """Number of updates applied."""
        if self.final is not None:
            return self.final.k
        return max(len(self.records) - 1, 0)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, path: str | Path, extra: bool = True) -> Path:
        """Writes one row per record; extra diagnostic columns follow the standard ones."""
        return write_records_csv(path, self.records, extra)

    def summary(self) -> dict[str, Any]:
        last = self.records[-1] if self.records else None
        return {
            "algorithm": self.algorithm,
            "status": self.status,
            "iterations": self.iterations,
            "final": None if last is None else {k: _finite(v) for k, v in asdict(last).items()},
            "meta": self.meta,
        }


def _finite(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_records_csv(path: str | Path, records: list[TraceRecord], extra: bool = True) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    columns = CSV_COLUMNS + (EXTRA_COLUMNS if extra else ())
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns)
        writer.writeheader()
        for record in records:
            writer.writerow({c: _cell(getattr(record, c)) for c in columns})
    return target
