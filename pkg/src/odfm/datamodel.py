"""Multivariate series container, CSV ingestion and preliminary transforms.

The canonical container is an N x T panel: one row per component, one
column per time point, with 1-based time indices in every public API.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TRANSFORM_KINDS = ("none", "diff", "log-diff", "double-log-diff")

_TRANSFORM_ORDER = {"none": 0, "diff": 1, "log-diff": 1, "double-log-diff": 2}


class ParseError(ValueError):
    """Raised when a delimited file cannot be read as a numeric panel."""


class DomainError(ValueError):
    """Raised when a transform is applied outside its domain."""


@dataclass(frozen=True)
class MultiSeries:
    """An N x T panel of real observations.

    Rows are components, columns are time points ordered t = 1..T.
    Instances are immutable; every operation returns a new panel.
    """

    values: np.ndarray
    labels: tuple[str, ...] = ()
    time_origin: str | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-dimensional, got shape {values.shape}")
        n, t = values.shape
        if n < 1 or t < 2:
            raise ValueError(f"need N >= 1 and T >= 2, got N={n}, T={t}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        labels = tuple(self.labels) if self.labels else tuple(f"y{i + 1}" for i in range(n))
        if len(labels) != n:
            raise ValueError(f"got {len(labels)} labels for {n} components")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n_components(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    def column(self, t: int) -> np.ndarray:
        """Observation vector at 1-based time t."""
        if not 1 <= t <= self.n_times:
            raise IndexError(f"time index {t} outside 1..{self.n_times}")
        return self.values[:, t - 1].copy()


@dataclass(frozen=True)
class TransformSpec:
    """Per-component preliminary transform.

    ``diff`` shortens the series by one, ``double-log-diff`` by two; log
    kinds require strictly positive inputs.
    """

    kind: str = "none"

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}; choose from {TRANSFORM_KINDS}")

    @property
    def order(self) -> int:
        return _TRANSFORM_ORDER[self.kind]


def _parse_cell(raw: str, row: int, col: int) -> float:
    text = raw.strip()
    if not text:
        raise ParseError(f"blank cell at row {row}, column {col}")
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"non-numeric cell {raw!r} at row {row}, column {col}") from None


def load_csv(
    path: str | Path,
    delimiter: str = ",",
    header: bool | None = None,
    orientation: str = "columns",
    time_origin: str | None = None,
) -> MultiSeries:
    """Read a rectangular numeric table into a :class:`MultiSeries`.

    Parameters
    ----------
    path : str or Path
        UTF-8 delimited file, numbers in decimal or scientific notation.
    delimiter : str
        Field separator, default comma.
    header : bool or None
        Whether the first row holds labels.  ``None`` auto-detects by
        attempting to parse the first row as numbers.
    orientation : {"columns", "rows"}
        ``"columns"`` means each column is one component (rows are time,
        the usual CSV layout); ``"rows"`` means each row is one component.
    time_origin : str or None
        Optional calendar anchor carried through unchanged.

    Raises
    ------
    ParseError
        On ragged rows, blank cells or non-numeric cells; the message
        names the offending row/column coordinates of the file.
    """
    if orientation not in ("columns", "rows"):
        raise ValueError(f"orientation must be 'columns' or 'rows', got {orientation!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh, delimiter=delimiter) if row]
    if not rows:
        raise ParseError(f"{path} is empty")

    labels: tuple[str, ...] = ()
    first_numeric = True
    try:
        for col, cell in enumerate(rows[0], start=1):
            _parse_cell(cell, 1, col)
    except ParseError:
        first_numeric = False
    if header is None:
        header = not first_numeric
    if header:
        if first_numeric:
            raise ParseError(f"{path}: header requested but first row is numeric")
        labels = tuple(cell.strip() for cell in rows[0])
        rows = rows[1:]
        if not rows:
            raise ParseError(f"{path} holds a header but no data")

    width = len(rows[0])
    data = np.empty((len(rows), width))
    offset = 2 if header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(
                f"ragged row {i + offset}: expected {width} fields, found {len(row)}"
            )
        for j, cell in enumerate(row):
            data[i, j] = _parse_cell(cell, i + offset, j + 1)

    values = data.T if orientation == "columns" else data
    if labels and orientation == "rows":
        # a header row cannot label row-oriented components
        labels = ()
    return MultiSeries(values=values, labels=labels, time_origin=time_origin)


def save_csv(series: MultiSeries, path: str | Path, delimiter: str = ",") -> None:
    """Write the panel with a header row, one column per component."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(series.labels)
        for t in range(series.n_times):
            writer.writerow([repr(float(v)) for v in series.values[:, t]])


def save_sidecar(
    series: MultiSeries,
    path: str | Path,
    transforms: list[TransformSpec] | None = None,
) -> None:
    """Write the JSON sidecar recording labels, transforms and time origin."""
    payload = {
        "labels": list(series.labels),
        "time_origin": series.time_origin,
        "transforms": [s.kind for s in transforms] if transforms else None,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_sidecar(path: str | Path) -> dict:
    """Read a sidecar written by :func:`save_sidecar`."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("transforms"):
        payload["transforms"] = [TransformSpec(kind) for kind in payload["transforms"]]
    return payload


def _transform_one(x: np.ndarray, spec: TransformSpec, label: str) -> np.ndarray:
    if spec.kind == "none":
        return x.copy()
    if spec.kind == "diff":
        return np.diff(x)
    if np.any(x <= 0):
        t_bad = int(np.argmax(x <= 0)) + 1
        raise DomainError(
            f"{spec.kind} needs strictly positive values; component {label!r} "
            f"is {x[t_bad - 1]} at t={t_bad}"
        )
    logs = np.log(x)
    return np.diff(logs) if spec.kind == "log-diff" else np.diff(logs, n=2)


def apply_transform(series: MultiSeries, specs: list[TransformSpec]) -> MultiSeries:
    """Transform each component independently and re-align the panel.

    Mixed orders are allowed: every transformed component is truncated
    from the front so all end at the same calendar date, leaving
    T - max(order) columns.
    """
    if len(specs) != series.n_components:
        raise ValueError(
            f"need one spec per component: got {len(specs)} for N={series.n_components}"
        )
    max_order = max(spec.order for spec in specs)
    t_out = series.n_times - max_order
    if t_out < 2:
        raise ValueError(f"transform of order {max_order} leaves fewer than 2 points")
    out = np.empty((series.n_components, t_out))
    for i, spec in enumerate(specs):
        xi = _transform_one(series.values[i], spec, series.labels[i])
        out[i] = xi[len(xi) - t_out:]
    return MultiSeries(values=out, labels=series.labels, time_origin=series.time_origin)


def center(series: MultiSeries) -> tuple[MultiSeries, np.ndarray]:
    """Remove each component's sample mean; returns (centered panel, means)."""
    means = series.values.mean(axis=1)
    centered = series.values - means[:, None]
    return (
        MultiSeries(values=centered, labels=series.labels, time_origin=series.time_origin),
        means,
    )


def replace_at(series: MultiSeries, t0: int, value: np.ndarray) -> MultiSeries:
    """Replace the column at 1-based time t0, leaving all others bit-identical."""
    if not 1 <= t0 <= series.n_times:
        raise IndexError(f"time index {t0} outside 1..{series.n_times}")
    value = np.asarray(value, dtype=float)
    if value.shape != (series.n_components,):
        raise ValueError(f"replacement must have shape ({series.n_components},)")
    out = series.values.copy()
    out[:, t0 - 1] = value
    return MultiSeries(values=out, labels=series.labels, time_origin=series.time_origin)
