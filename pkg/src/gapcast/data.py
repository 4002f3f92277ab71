"""Dataset loading, lag-window construction and chronological splitting.

The on-disk format is a plain CSV: a ``timestamp`` column (ISO-8601, strictly
increasing, constant step) followed by one column of power values per site,
each in [0, 1].  Empty cells and the literal ``NaN`` mark missing values.
Optional ``mask_<site>`` columns (0/1, 1 = missing) force cells missing on
load.  Lines starting with ``#`` are header comments and are ignored.

Windows stack, for each site, the ``h`` values up to the forecast origin
(oldest to newest), then append the target site's value ``k`` steps ahead as
the last coordinate.  Window values live in logit space; the logit clip is
small enough that observed power values survive a round trip to within
1e-12, which downstream code relies on when it needs power-space views.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .dist import LogitTransform

__all__ = [
    "DataError",
    "SeriesTable",
    "Window",
    "apply_mask_csv",
    "chronological_split",
    "load_csv",
    "load_mask_csv",
    "make_synthetic",
    "make_windows",
    "windows_to_matrices",
    "write_mask_csv",
    "write_series_csv",
]


class DataError(ValueError):
    """Malformed input data; the message names the offending file line."""


@dataclass
class SeriesTable:
    """A uniform hourly (or other constant-step) multi-site series.

    ``values`` is (T, n_sites) float64 with NaN at missing cells; ``masks``
    mirrors it as uint8 (1 = missing).  Timestamps are kept as the original
    strings so files round-trip byte-identically.
    """

    timestamps: list[str]
    columns: list[str]
    values: np.ndarray
    masks: np.ndarray
    step_seconds: float

    @property
    def n_rows(self) -> int:
        return len(self.timestamps)

    def row_index(self) -> dict[str, int]:
        return {ts: i for i, ts in enumerate(self.timestamps)}


def _parse_timestamps(stamps: list[str], lines: list[int]) -> float:
    parsed = []
    for ts, ln in zip(stamps, lines):
        try:
            parsed.append(datetime.fromisoformat(ts))
        except ValueError:
            raise DataError(f"line {ln}: unparseable timestamp {ts!r}") from None
    steps = {
        (b - a).total_seconds() for a, b in zip(parsed, parsed[1:])
    }
    if len(parsed) >= 2:
        if any(s <= 0 for s in steps):
            bad = next(i for i in range(1, len(parsed)) if parsed[i] <= parsed[i - 1])
            raise DataError(f"line {lines[bad]}: timestamps must be strictly increasing")
        if len(steps) > 1:
            raise DataError("timestamp grid is not uniform (multiple step sizes found)")
    return steps.pop() if steps else 3600.0


def _parse_cell(text: str, line_no: int, col: str) -> float:
    text = text.strip()
    if text == "" or text.lower() == "nan":
        return np.nan
    try:
        val = float(text)
    except ValueError:
        raise DataError(f"line {line_no}: unparseable value {text!r} in column {col!r}") from None
    if not (0.0 <= val <= 1.0):
        raise DataError(f"line {line_no}: value {val} in column {col!r} outside [0, 1]")
    return val


def load_csv(path) -> SeriesTable:
    """Read a series CSV, merging any inline ``mask_<site>`` columns."""

    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = []
        line_nos = []
        header = None
        header_line = 0
        for ln, raw in enumerate(csv.reader(fh), start=1):
            if not raw or (raw[0].startswith("#")):
                continue
            if header is None:
                header = [c.strip() for c in raw]
                header_line = ln
                continue
            rows.append(raw)
            line_nos.append(ln)
    if header is None:
        raise DataError(f"{path}: no header row found")
    if not header or header[0] != "timestamp":
        raise DataError(f"line {header_line}: first column must be 'timestamp', got {header[:1]}")
    site_cols = [c for c in header[1:] if not c.startswith("mask_")]
    mask_cols = [c for c in header[1:] if c.startswith("mask_")]
    if not site_cols:
        raise DataError(f"line {header_line}: no site columns")
    for mc in mask_cols:
        if mc[len("mask_"):] not in site_cols:
            raise DataError(f"line {header_line}: mask column {mc!r} has no matching site column")
    if not rows:
        raise DataError(f"{path}: no data rows")

    col_pos = {c: i for i, c in enumerate(header)}
    stamps = []
    values = np.empty((len(rows), len(site_cols)))
    masks = np.zeros((len(rows), len(site_cols)), dtype=np.uint8)
    for r, (raw, ln) in enumerate(zip(rows, line_nos)):
        if len(raw) != len(header):
            raise DataError(f"line {ln}: expected {len(header)} fields, got {len(raw)}")
        stamps.append(raw[0].strip())
        for j, c in enumerate(site_cols):
            values[r, j] = _parse_cell(raw[col_pos[c]], ln, c)
        for mc in mask_cols:
            cell = raw[col_pos[mc]].strip()
            if cell not in ("0", "1"):
                raise DataError(f"line {ln}: mask column {mc!r} must be 0 or 1, got {cell!r}")
            if cell == "1":
                values[r, site_cols.index(mc[len("mask_"):])] = np.nan
    step = _parse_timestamps(stamps, line_nos)
    masks[np.isnan(values)] = 1
    return SeriesTable(
        timestamps=stamps, columns=site_cols, values=values, masks=masks, step_seconds=step
    )


def load_mask_csv(path, columns: list[str]) -> tuple[list[str], np.ndarray]:
    """Read a standalone mask CSV (timestamp + 0/1 per site column)."""

    with open(path, "r", encoding="utf-8", newline="") as fh:
        header = None
        stamps = []
        cells = []
        for ln, raw in enumerate(csv.reader(fh), start=1):
            if not raw or raw[0].startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in raw]
                if header[:1] != ["timestamp"] or header[1:] != list(columns):
                    raise DataError(
                        f"line {ln}: mask header {header} does not match data columns {columns}"
                    )
                continue
            stamps.append(raw[0].strip())
            row = []
            for c, col in zip(raw[1:], header[1:]):
                c = c.strip()
                if c not in ("0", "1"):
                    raise DataError(f"line {ln}: mask value must be 0 or 1, got {c!r} in {col!r}")
                row.append(int(c))
            cells.append(row)
    if header is None or not stamps:
        raise DataError(f"{path}: empty mask file")
    return stamps, np.asarray(cells, dtype=np.uint8)


def apply_mask_csv(table: SeriesTable, path) -> SeriesTable:
    """Return a copy of ``table`` with cells from a mask CSV knocked out."""

    stamps, mask = load_mask_csv(path, table.columns)
    if stamps != table.timestamps:
        raise DataError(f"{path}: mask timestamps do not align with the data file")
    values = table.values.copy()
    values[mask == 1] = np.nan
    masks = (table.masks | mask).astype(np.uint8)
    return SeriesTable(
        timestamps=table.timestamps,
        columns=table.columns,
        values=values,
        masks=masks,
        step_seconds=table.step_seconds,
    )


def write_series_csv(path, table: SeriesTable, comments: list[str] | None = None) -> None:
    """Write a series CSV with empty cells at missing positions."""

    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments or []:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *table.columns])
        for i, ts in enumerate(table.timestamps):
            row = [ts]
            for j in range(len(table.columns)):
                v = table.values[i, j]
                row.append("" if np.isnan(v) else repr(float(v)))
            writer.writerow(row)


def write_mask_csv(path, table: SeriesTable, comments: list[str] | None = None) -> None:
    """Write the 0/1 missingness mask of a table as its own CSV."""

    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments or []:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh)
        writer.writerow(["timestamp", *table.columns])
        for i, ts in enumerate(table.timestamps):
            writer.writerow([ts, *(int(v) for v in table.masks[i])])


def make_synthetic(
    n_rows: int,
    n_sites: int = 1,
    seed: int = 0,
    start: str = "2024-01-01T00:00:00",
    step_seconds: float = 3600.0,
) -> SeriesTable:
    """Generate a correlated multi-site power series for experiments.

    A shared second-order autoregression (coefficients 1.2, -0.32, noise
    scale 0.3) drives every site; each site squashes its own affine view of
    that signal plus idiosyncratic noise through a sigmoid, giving values in
    (0, 1) that are cross-correlated the way nearby sites are.  Fully
    deterministic in the seed.
    """

    if n_rows < 3 or n_sites < 1:
        raise ValueError(f"need n_rows >= 3 and n_sites >= 1, got {n_rows}, {n_sites}")
    rng = np.random.default_rng(seed)
    burn = 100
    e = np.zeros(n_rows + burn)
    eps = rng.standard_normal(n_rows + burn)
    for t in range(2, n_rows + burn):
        e[t] = 1.2 * e[t - 1] - 0.32 * e[t - 2] + 0.3 * eps[t]
    e = e[burn:]
    gains = 1.0 + 0.2 * rng.standard_normal(n_sites)
    offsets = 0.3 * rng.standard_normal(n_sites)
    noise = 0.15 * rng.standard_normal((n_rows, n_sites))
    raw = e[:, None] * gains[None, :] + offsets[None, :] + noise
    values = 1.0 / (1.0 + np.exp(-raw))
    t0 = datetime.fromisoformat(start)
    step = timedelta(seconds=float(step_seconds))
    timestamps = [(t0 + i * step).isoformat() for i in range(n_rows)]
    columns = [f"site{j + 1}" for j in range(n_sites)]
    return SeriesTable(
        timestamps=timestamps,
        columns=columns,
        values=values,
        masks=np.zeros((n_rows, n_sites), dtype=np.uint8),
        step_seconds=float(step_seconds),
    )


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


@dataclass
class Window:
    """One forecasting case: lag features plus the lead-k target, last.

    ``values`` are logit-space with NaN at missing coordinates and ``mask``
    flags them (1 = missing).  ``origin_row`` indexes the forecast origin t
    in the source table; the target lives at row ``origin_row + lead``.
    """

    values: np.ndarray
    mask: np.ndarray
    origin_row: int
    origin_timestamp: str
    lead: int
    h: int
    sites: tuple[str, ...]

    @property
    def width(self) -> int:
        return self.values.shape[0]


def make_windows(
    table: SeriesTable,
    h: int,
    k: int,
    sites: list[str] | None = None,
    transform: LogitTransform | None = None,
) -> list[Window]:
    """Enumerate every window the series supports (T - h - k + 1 of them).

    The first entry of ``sites`` is the target site; every site contributes
    ``h`` lags in oldest-to-newest order, and the target value sits last, so
    a window over ``m`` sites has ``m * h + 1`` coordinates.
    """

    if h < 1 or k < 1:
        raise ValueError(f"h and k must be positive, got h={h}, k={k}")
    sites = list(sites) if sites is not None else list(table.columns)
    if len(set(sites)) != len(sites):
        raise ValueError(f"duplicate site in {sites}")
    missing_cols = [s for s in sites if s not in table.columns]
    if missing_cols:
        raise ValueError(f"unknown site columns {missing_cols}; table has {table.columns}")
    T = table.n_rows
    n = T - h - k + 1
    if n <= 0:
        raise ValueError(f"series of length {T} too short for h={h}, k={k}")
    transform = transform if transform is not None else LogitTransform()
    idx = [table.columns.index(s) for s in sites]
    raw = table.values[:, idx]
    logit = transform.forward(raw)
    windows = []
    for t in range(h - 1, T - k):
        feats = [logit[t - h + 1 : t + 1, j] for j in range(len(sites))]
        vals = np.concatenate(feats + [logit[t + k : t + k + 1, 0]])
        mask = np.isnan(vals).astype(np.uint8)
        windows.append(
            Window(
                values=vals,
                mask=mask,
                origin_row=t,
                origin_timestamp=table.timestamps[t],
                lead=k,
                h=h,
                sites=tuple(sites),
            )
        )
    return windows


def windows_to_matrices(windows: list[Window]) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows into (values, mask) matrices of shape (n, d)."""

    if not windows:
        raise ValueError("no windows to stack")
    Z = np.stack([w.values for w in windows])
    S = np.stack([w.mask for w in windows])
    return Z, S


def chronological_split(
    windows: list[Window], train_fraction: float = 0.8
) -> tuple[list[Window], list[Window]]:
    """Split windows by time: earliest fraction trains, the rest tests.

    The cut sits at the first test window's origin; any nominal train window
    whose target falls beyond the cut is pushed into the test side, so no
    training case peeks past the boundary.  Raises if either side ends up
    empty.
    """

    if not (0.0 < train_fraction < 1.0):
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    ordered = sorted(windows, key=lambda w: w.origin_row)
    n = len(ordered)
    n_train = int(np.floor(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"split leaves an empty side: {n} windows at train_fraction={train_fraction}"
        )
    cut_row = ordered[n_train].origin_row
    train = [w for w in ordered[:n_train] if w.origin_row + w.lead <= cut_row]
    crossed = [w for w in ordered[:n_train] if w.origin_row + w.lead > cut_row]
    test = crossed + ordered[n_train:]
    if not train:
        raise ValueError("split leaves no training windows once boundary cases move to test")
    return train, test
