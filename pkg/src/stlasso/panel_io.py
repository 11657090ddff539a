"""CSV/JSON input and output for panels, regressors, fits, and manifests.

File formats
------------
Panel CSV (long format): columns ``station_id, timestamp, value``, comma
separated, UTF-8, ISO-8601 timestamps on an hourly grid, ``.`` decimal
separator, header row mandatory.  A missing observation is simply an
absent row.  Station metadata CSV: columns ``station_id, name, latitude,
longitude, location_type``.

Regressor CSV: ``station_id, timestamp`` followed by one column per
regressor.  Regressor files must be complete on the panel grid.

Fit JSON: versioned schema (``schema_version`` = 1) holding the estimate
(weights dense, row-major), the objective/likelihood values, convergence
flags, and the penalty used.  All JSON output is written with sorted keys
so identical runs produce identical bytes.

Floats are serialized with ``repr``, which round-trips IEEE doubles
exactly; reading a written file recovers bit-identical values.
"""

from __future__ import annotations

import csv
import json
import platform
from collections import Counter
from dataclasses import dataclass
from importlib import metadata

import numpy as np
import pandas as pd
import scipy

from .errors import DomainError, IngestError
from .model import ModelParams, PenaltyConfig
from .optimize import FitResult

FIT_SCHEMA_VERSION = 1
DEFAULT_START = "2005-01-01T00:00:00"

# period lengths in hours for the named seasonal frequencies
FREQUENCY_PERIODS_HOURS = {
    "daily": 24.0,
    "monthly": 730.5,  # 8766 / 12; calendar months have no fixed period
    "biannual": 4383.0,
    "yearly": 8766.0,
}
DEFAULT_FREQUENCIES = ("daily", "monthly", "biannual", "yearly")

STATION_COLUMNS = ("station_id", "name", "latitude", "longitude", "location_type")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# Fourier design
# ---------------------------------------------------------------------------


def _ordered_frequencies(frequencies) -> list[str]:
    names = list(dict.fromkeys(frequencies))
    for name in names:
        if name not in FREQUENCY_PERIODS_HOURS:
            raise DomainError(
                f"unknown frequency {name!r}; known: {sorted(FREQUENCY_PERIODS_HOURS)}"
            )
    return sorted(names, key=lambda s: FREQUENCY_PERIODS_HOURS[s])


def fourier_column_names(frequencies=DEFAULT_FREQUENCIES) -> list[str]:
    """Column labels, (sin, cos) pairs ordered by decreasing frequency."""
    names = []
    for f in _ordered_frequencies(frequencies):
        names.extend([f"sin_{f}", f"cos_{f}"])
    return names


def fourier_design(T: int, start_timestamp=None, frequencies=DEFAULT_FREQUENCIES) -> np.ndarray:
    """(T, 2*len(frequencies)) array of sin/cos seasonal regressors.

    Phases are anchored at the first panel observation: t counts hours from
    the start of the panel, so column values do not depend on the wall-clock
    value of ``start_timestamp`` (accepted for interface symmetry with the
    readers).  Pairs appear in order of decreasing frequency.
    """
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    ordered = _ordered_frequencies(frequencies)
    t = np.arange(T, dtype=float)
    cols = []
    for name in ordered:
        ang = 2.0 * np.pi * t / FREQUENCY_PERIODS_HOURS[name]
        cols.append(np.sin(ang))
        cols.append(np.cos(ang))
    if not cols:
        return np.zeros((T, 0))
    return np.column_stack(cols)


def fourier_panel_design(T: int, n: int, frequencies=DEFAULT_FREQUENCIES) -> np.ndarray:
    """The (T, n, k) regressor array: identical columns at every station."""
    base = fourier_design(T, frequencies=frequencies)
    return np.repeat(base[:, None, :], n, axis=1)


# ---------------------------------------------------------------------------
# long-format panel CSV
# ---------------------------------------------------------------------------


def _parse_long_csv(path) -> list[tuple[str, pd.Timestamp, float]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path}: empty file")
        expected = ["station_id", "timestamp", "value"]
        if [h.strip() for h in header] != expected:
            raise IngestError(f"{path}: header {header} != {expected}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            sid, ts, val = row
            try:
                stamp = pd.Timestamp(ts)
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: bad timestamp {ts!r}") from exc
            try:
                value = float(val)
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: bad value {val!r}") from exc
            rows.append((sid, stamp, value))
    if not rows:
        raise IngestError(f"{path}: no data rows")
    return rows


def _check_duplicates(rows, path):
    counts = Counter((sid, ts) for sid, ts, _ in rows)
    dups = [key for key, c in counts.items() if c > 1]
    if dups:
        shown = ", ".join(f"({sid}, {ts.isoformat()})" for sid, ts in sorted(dups)[:10])
        more = "" if len(dups) <= 10 else f" (+{len(dups) - 10} more)"
        raise IngestError(f"{path}: duplicate (station, timestamp) pairs: {shown}{more}")


@dataclass(frozen=True)
class IngestResult:
    """Aligned panel values plus the completeness bookkeeping.

    ``values`` is (n, T) on the common hourly grid with NaN at gaps —
    run :func:`impute_backward_forward` before modelling.  ``completeness``
    covers every station found in the file, retained or not.
    """

    values: np.ndarray
    station_ids: list
    timestamps: pd.DatetimeIndex
    completeness: dict
    dropped: list
    stations: pd.DataFrame | None = None

    @property
    def n(self) -> int:
        return len(self.station_ids)

    @property
    def T(self) -> int:
        return len(self.timestamps)


def read_stations_csv(path) -> pd.DataFrame:
    table = pd.read_csv(path, dtype={"station_id": str})
    missing = [c for c in STATION_COLUMNS if c not in table.columns]
    if missing:
        raise IngestError(f"{path}: missing station metadata columns {missing}")
    if table["station_id"].duplicated().any():
        dups = sorted(table.loc[table["station_id"].duplicated(), "station_id"])
        raise IngestError(f"{path}: duplicate station ids {dups}")
    return table


def ingest(panel_csv, stations_csv=None, completeness_threshold: float = 0.90) -> IngestResult:
    """Parse, align on the common hourly grid, and apply the completeness cut.

    Stations observing fewer than ``completeness_threshold`` of the grid
    points are dropped (and reported).  Station order in the output is
    lexicographic for reproducibility.
    """
    if not 0.0 <= completeness_threshold <= 1.0:
        raise DomainError("completeness_threshold must be in [0, 1]")
    rows = _parse_long_csv(panel_csv)
    _check_duplicates(rows, panel_csv)
    stamps = pd.DatetimeIndex([ts for _, ts, _ in rows])
    grid = pd.date_range(stamps.min(), stamps.max(), freq="h")
    by_station: dict = {}
    for sid, ts, val in rows:
        by_station.setdefault(sid, []).append((ts, val))
    completeness = {}
    aligned = {}
    for sid in sorted(by_station):
        obs = by_station[sid]
        idx = grid.get_indexer(pd.DatetimeIndex([ts for ts, _ in obs]))
        off = [obs[j][0] for j in range(len(obs)) if idx[j] < 0]
        if off:
            raise IngestError(
                f"{panel_csv}: station {sid}: timestamps off the hourly grid: "
                + ", ".join(t.isoformat() for t in off[:5])
            )
        series = np.full(len(grid), np.nan)
        series[idx] = [v for _, v in obs]
        aligned[sid] = series
        completeness[sid] = len(obs) / len(grid)
    kept = [sid for sid in sorted(aligned) if completeness[sid] >= completeness_threshold]
    dropped = [sid for sid in sorted(aligned) if sid not in kept]
    if not kept:
        raise IngestError(
            f"{panel_csv}: no station meets completeness {completeness_threshold:.2f}; "
            f"best is {max(completeness.values()):.3f}"
        )
    values = np.stack([aligned[sid] for sid in kept])
    stations = None
    if stations_csv is not None:
        table = read_stations_csv(stations_csv)
        known = set(table["station_id"])
        missing = [sid for sid in kept if sid not in known]
        if missing:
            raise IngestError(f"{stations_csv}: no metadata for stations {missing}")
        stations = (
            table[table["station_id"].isin(kept)]
            .sort_values("station_id")
            .reset_index(drop=True)
        )
    return IngestResult(
        values=values,
        station_ids=kept,
        timestamps=grid,
        completeness=completeness,
        dropped=dropped,
        stations=stations,
    )


def impute_backward_forward(values: np.ndarray) -> np.ndarray:
    """Fill gaps with the next observed value, then the previous one.

    Backward fill runs first, so an interior gap takes the value that
    follows it; trailing gaps (nothing ahead) fall back to forward fill.
    Accepts a 1-D series or an (n, T) panel; rows are filled independently.
    """
    arr = np.asarray(values, dtype=float)
    frame = pd.DataFrame(arr.reshape(1, -1) if arr.ndim == 1 else arr)
    if frame.isna().all(axis=1).any():
        bad = list(np.flatnonzero(frame.isna().all(axis=1).to_numpy()))
        raise IngestError(f"rows {bad} are entirely missing; drop them at ingestion")
    filled = frame.bfill(axis=1).ffill(axis=1).to_numpy()
    return filled[0] if arr.ndim == 1 else filled


def write_panel_csv(path, values, station_ids, timestamps=None, start=DEFAULT_START):
    """Long-format panel CSV; NaN entries are written as absent rows."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != len(station_ids):
        raise DomainError("values must be (n, T) matching station_ids")
    if timestamps is None:
        timestamps = pd.date_range(start, periods=arr.shape[1], freq="h")
    if len(timestamps) != arr.shape[1]:
        raise DomainError("timestamps length must equal the panel length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "timestamp", "value"])
        for i, sid in enumerate(station_ids):
            for t, ts in enumerate(timestamps):
                if np.isnan(arr[i, t]):
                    continue
                writer.writerow([sid, ts.isoformat(), _fmt(arr[i, t])])


def write_regressors_csv(path, x, station_ids, timestamps=None, names=None, start=DEFAULT_START):
    """Regressor CSV: one row per (station, time), one column per regressor."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 3 or arr.shape[1] != len(station_ids):
        raise DomainError("x must be (T, n, k) matching station_ids")
    T, _, k = arr.shape
    if timestamps is None:
        timestamps = pd.date_range(start, periods=T, freq="h")
    if names is None:
        names = [f"x{j}" for j in range(k)]
    if len(names) != k:
        raise DomainError("names length must equal the regressor count")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["station_id", "timestamp", *names])
        for i, sid in enumerate(station_ids):
            for t, ts in enumerate(timestamps):
                writer.writerow([sid, ts.isoformat(), *(_fmt(v) for v in arr[t, i])])


def read_panel_csv(path) -> IngestResult:
    """Alignment without a completeness cut (threshold 0)."""
    return ingest(path, completeness_threshold=0.0)


def read_regressors_csv(path):
    """Read a regressor CSV back into (x, station_ids, timestamps, names).

    Regressor files must be complete: a missing (station, time) row is an
    error because the design matrix has no notion of a gap.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["station_id", "timestamp"]:
            raise IngestError(f"{path}: expected header station_id,timestamp,<names...>")
        names = header[2:]
        k = len(names)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + k:
                raise IngestError(f"{path}:{lineno}: expected {2 + k} fields")
            rows.append((row[0], pd.Timestamp(row[1]), [float(v) for v in row[2:]]))
    if not rows:
        raise IngestError(f"{path}: no data rows")
    _check_duplicates([(sid, ts, 0.0) for sid, ts, _ in rows], path)
    station_ids = sorted({sid for sid, _, _ in rows})
    stamps = pd.DatetimeIndex([ts for _, ts, _ in rows])
    grid = pd.date_range(stamps.min(), stamps.max(), freq="h")
    x = np.full((len(grid), len(station_ids), k), np.nan)
    pos = {sid: i for i, sid in enumerate(station_ids)}
    for sid, ts, vals in rows:
        t = grid.get_indexer(pd.DatetimeIndex([ts]))[0]
        if t < 0:
            raise IngestError(f"{path}: timestamp {ts.isoformat()} off the hourly grid")
        x[t, pos[sid]] = vals
    if np.isnan(x).any():
        raise IngestError(f"{path}: regressor file has gaps on the hourly grid")
    return x, station_ids, grid, names


# ---------------------------------------------------------------------------
# JSON: fit results and manifests
# ---------------------------------------------------------------------------


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def fit_result_to_dict(result: FitResult, pen: PenaltyConfig | None = None) -> dict:
    pen = pen or PenaltyConfig()
    p = result.params
    return {
        "schema_version": FIT_SCHEMA_VERSION,
        "n": p.n,
        "k": p.k,
        "P": p.P,
        "beta": p.beta.tolist(),
        "phi": p.phi.tolist(),
        "w": p.w.tolist(),
        "sigma2": p.sigma2,
        "objective": result.objective,
        "loglik": result.loglik,
        "converged": bool(result.converged),
        "feasible": bool(result.feasible),
        "n_iter": int(result.n_iter),
        "support_size": int(result.support.size),
        "message": result.message,
        "penalty": {
            "lambda1": pen.lambda1,
            "lambda2": pen.lambda2,
            "lambda3": pen.lambda3,
        },
    }


def write_fit_json(path, result: FitResult, pen: PenaltyConfig | None = None):
    _dump_json(path, fit_result_to_dict(result, pen))


_FIT_REQUIRED = (
    "schema_version",
    "n",
    "k",
    "P",
    "beta",
    "phi",
    "w",
    "sigma2",
    "loglik",
    "penalty",
)


def read_fit_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    missing = [key for key in _FIT_REQUIRED if key not in doc]
    if missing:
        raise IngestError(f"{path}: fit JSON missing keys {missing}")
    if doc["schema_version"] != FIT_SCHEMA_VERSION:
        raise IngestError(
            f"{path}: schema_version {doc['schema_version']} unsupported "
            f"(this build reads {FIT_SCHEMA_VERSION})"
        )
    return doc


def params_from_fit_dict(doc: dict) -> ModelParams:
    params = ModelParams(
        beta=np.asarray(doc["beta"], dtype=float),
        phi=np.asarray(doc["phi"], dtype=float),
        w=np.asarray(doc["w"], dtype=float),
        sigma2=float(doc["sigma2"]),
    )
    if params.n != doc["n"] or params.k != doc["k"] or params.P != doc["P"]:
        raise IngestError("fit JSON dimension fields disagree with the arrays")
    return params


_PARAMS_REQUIRED = ("schema_version", "n", "k", "P", "beta", "phi", "w", "sigma2")


def params_to_dict(params: ModelParams) -> dict:
    """Bare parameter-set document (the fit schema minus the fit fields)."""
    return {
        "schema_version": FIT_SCHEMA_VERSION,
        "n": params.n,
        "k": params.k,
        "P": params.P,
        "beta": params.beta.tolist(),
        "phi": params.phi.tolist(),
        "w": params.w.tolist(),
        "sigma2": params.sigma2,
    }


def write_params_json(path, params: ModelParams):
    _dump_json(path, params_to_dict(params))


def read_params_json(path) -> ModelParams:
    """Read any document carrying the parameter fields (fit JSON included)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    missing = [key for key in _PARAMS_REQUIRED if key not in doc]
    if missing:
        raise IngestError(f"{path}: parameter JSON missing keys {missing}")
    return params_from_fit_dict(doc)


def _package_version() -> str:
    try:
        return metadata.version("stlasso")
    except metadata.PackageNotFoundError:  # pragma: no cover - dev checkout
        return "unknown"


def write_manifest(path, command: str, config: dict, seed=None):
    """Reproducibility record: config echo, versions, seed — no timestamps,
    so identical runs write identical manifests."""
    _dump_json(
        path,
        {
            "command": command,
            "config": config,
            "seed": seed,
            "versions": {
                "numpy": np.__version__,
                "pandas": pd.__version__,
                "python": platform.python_version(),
                "scipy": scipy.__version__,
                "stlasso": _package_version(),
            },
        },
    )


def write_rows_csv(path, rows: list, columns=None):
    """Deterministic CSV table: column order fixed, floats via repr."""
    if not rows:
        raise DomainError("refusing to write an empty table")
    if columns is None:
        columns = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])
