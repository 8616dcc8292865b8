"""Epsilon-sweep results: tables, extrapolation and CSV round-tripping."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("epsilon", "value", "extrapolated", "reference", "abs_error", "rel_error")


def fmt(x: float) -> str:
    """17 significant digits, scientific notation (round-trips exactly)."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{float(x):.16e}"


def richardson(epsilons, values, order: int = 1) -> float:
    """Extrapolate ``values(eps)`` to ``eps = 0`` from the two smallest eps.

    Assumes ``value(eps) = L + C eps^order + ...``.
    """
    eps = np.asarray(epsilons, dtype=float)
    vals = np.asarray(values)
    if eps.size == 0:
        return float("nan")
    if eps.size == 1:
        return vals[0]
    idx = np.argsort(eps)
    e1, e2 = eps[idx[1]], eps[idx[0]]
    v1, v2 = vals[idx[1]], vals[idx[0]]
    r = (e1 / e2) ** order
    return (r * v2 - v1) / (r - 1.0)


@dataclass
class ConvergenceRow:
    epsilon: float
    value: float
    reference: float = float("nan")

    @property
    def abs_error(self) -> float:
        return abs(self.value - self.reference)

    @property
    def rel_error(self) -> float:
        ref = abs(self.reference)
        return self.abs_error / ref if ref > 0 else float("nan")


@dataclass
class ConvergenceReport:
    """Rows sorted by descending epsilon plus the order-1 extrapolant."""

    rows: list[ConvergenceRow]
    extrapolated: float = float("nan")
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: -r.epsilon)
        if math.isnan(self.extrapolated) and self.rows:
            self.extrapolated = float(
                richardson([r.epsilon for r in self.rows], [r.value for r in self.rows])
            )

    @classmethod
    def from_values(cls, epsilons, values, reference=float("nan"), **metadata):
        refs = np.broadcast_to(np.asarray(reference, dtype=float), np.shape(epsilons))
        rows = [ConvergenceRow(float(e), float(v), float(r)) for e, v, r in zip(epsilons, values, refs)]
        return cls(rows, metadata=dict(metadata))

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([r.epsilon for r in self.rows])

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])

    @property
    def references(self) -> np.ndarray:
        return np.array([r.reference for r in self.rows])

    @property
    def abs_errors(self) -> np.ndarray:
        return np.array([r.abs_error for r in self.rows])

    @property
    def extrapolated_error(self) -> float:
        """Distance of the extrapolant from the (common) reference value."""
        ref = self.rows[-1].reference if self.rows else float("nan")
        return abs(self.extrapolated - ref)

    def decay_slope(self) -> float:
        """Least-squares slope of log(abs_error) against log(eps)."""
        err = self.abs_errors
        ok = err > 0
        if ok.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.epsilons[ok]), np.log(err[ok]), 1)[0])

    def strictly_decreasing_errors(self) -> bool:
        err = self.abs_errors
        return bool(np.all(np.diff(err) < 0))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [fmt(r.epsilon), fmt(r.value), fmt(self.extrapolated), fmt(r.reference),
                 fmt(r.abs_error), fmt(r.rel_error)]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> ConvergenceReport:
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        reader = csv.DictReader(io.StringIO(text))
        rows, extrapolated = [], float("nan")
        for rec in reader:
            rows.append(
                ConvergenceRow(float(rec["epsilon"]), float(rec["value"]), float(rec["reference"]))
            )
            extrapolated = float(rec["extrapolated"])
        return cls(rows, extrapolated=extrapolated)
