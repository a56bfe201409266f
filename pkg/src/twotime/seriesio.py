"""CSV and JSON files for correlation series.

Both formats carry the same columns; floats are written with 17 significant
digits so a file read back reproduces the series exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .estimator import CorrelationSeries

COLUMNS = ("time", "g_real", "g_imag", "g_abs", "stderr_real", "stderr_imag",
           "g_norm_real", "g_norm_imag", "K")


def _fmt(x: float) -> str:
    return "%.17g" % x


def _normalized(series: CorrelationSeries) -> np.ndarray:
    g0 = series.normalization
    if g0 is None or g0 == 0:
        return np.full(series.mean.shape, np.nan + 1j * np.nan)
    return series.mean / g0


def series_columns(series: CorrelationSeries) -> dict:
    gn = _normalized(series)
    return {
        "time": series.times,
        "g_real": series.mean.real,
        "g_imag": series.mean.imag,
        "g_abs": np.abs(series.mean),
        "stderr_real": series.stderr_real,
        "stderr_imag": series.stderr_imag,
        "g_norm_real": gn.real,
        "g_norm_imag": gn.imag,
    }


def write_csv(series: CorrelationSeries, path) -> None:
    cols = series_columns(series)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for i in range(series.times.size):
            row = [_fmt(cols[c][i]) for c in COLUMNS[:-1]] + [str(series.K)]
            fh.write(",".join(row) + "\n")


def write_json(series: CorrelationSeries, path, meta: dict | None = None) -> None:
    cols = {k: [float(x) for x in v] for k, v in series_columns(series).items()}
    g0 = series.normalization
    doc = {
        "columns": list(COLUMNS),
        "K": series.K,
        "normalization": None if g0 is None else [g0.real, g0.imag],
        "data": cols,
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=True) + "\n")


def write_series(series: CorrelationSeries, path, fmt: str = "csv", meta=None) -> None:
    if fmt == "json":
        write_json(series, path, meta)
    else:
        write_csv(series, path)


def read_series(path) -> CorrelationSeries:
    """Load a series written by :func:`write_csv` or :func:`write_json`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        d = {k: np.asarray(v, dtype=float) for k, v in doc["data"].items()}
        K = int(doc["K"])
    else:
        rows = list(csv.DictReader(text.splitlines()))
        if not rows or tuple(rows[0].keys()) != COLUMNS:
            raise ConfigError(f"{path}: header must be {','.join(COLUMNS)}")
        d = {c: np.array([float(r[c]) for r in rows]) for c in COLUMNS[:-1]}
        K = int(rows[0]["K"])
    mean = d["g_real"] + 1j * d["g_imag"]
    norm = d["g_norm_real"] + 1j * d["g_norm_imag"]
    g0 = None
    ok = np.isfinite(norm) & (np.abs(norm) > 0)
    if ok.any():
        i = int(np.argmax(ok))
        g0 = complex(mean[i] / norm[i])
    return CorrelationSeries(d["time"], mean, d["stderr_real"], d["stderr_imag"], K, g0)
