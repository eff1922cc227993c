"""CSV and JSON writers for time series and reports.

Layout is gnuplot-friendly: t first, then value columns.  Floats are written
with repr, which round-trips exactly; reruns with the same inputs produce
byte-identical files.
"""
from __future__ import annotations

import json

import numpy as np


def _cell(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def matrix_labels(prefix: str, rows: int, cols: int) -> list[str]:
    return [f"{prefix}_{i}{j}" for i in range(rows) for j in range(cols)]


def vector_labels(prefix: str, dim: int) -> list[str]:
    return [f"{prefix}_{i}" for i in range(dim)]


def write_csv(path, columns, rows, comment: str | None = None) -> None:
    """Write rows of numbers as CSV with an optional leading comment line."""
    lines = []
    if comment is not None:
        lines.append(f"# {comment}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_cell(x) for x in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def riccati_rows(riccati) -> tuple[list[str], np.ndarray]:
    """Columns and rows for a covariance path CSV."""
    k, n, _ = riccati.P.shape
    cols = ["t"] + matrix_labels("P", n, n)
    rows = np.column_stack([riccati.grid.times, riccati.P.reshape(k, n * n)])
    return cols, rows


def filter_run_rows(run) -> tuple[list[str], np.ndarray]:
    """Columns and rows for a filter run CSV.

    Innovation increments live on intervals; the terminal node's entry is
    NaN.  The covariance path is flattened alongside.
    """
    xhat = run.xhat
    k = xhat.shape[0]
    n = xhat.shape[1]
    m = run.innovations.shape[1]
    cols = (["t"] + vector_labels("xhat", n) + vector_labels("dI", m)
            + matrix_labels("P", n, n))
    innov = np.vstack([run.innovations, np.full((1, m), np.nan)])
    rows = np.column_stack([
        run.model.grid.times, xhat, innov, run.riccati.P.reshape(k, n * n),
    ])
    return cols, rows


def ensemble_rows(ensemble) -> tuple[list[str], np.ndarray]:
    """Long-format ensemble CSV: path id, t, states, observations, logw."""
    n_paths, k, n = ensemble.x.shape
    m = ensemble.m.shape[2]
    cols = (["path", "t"] + vector_labels("x", n) + vector_labels("m", m)
            + ["logw"])
    rows = np.empty((n_paths * k, len(cols)), dtype=object)
    rows[:, 0] = np.repeat(np.arange(n_paths) + ensemble.path_offset, k)
    rows[:, 1] = np.tile(ensemble.model.grid.times, n_paths)
    rows[:, 2:2 + n] = ensemble.x.reshape(n_paths * k, n)
    rows[:, 2 + n:2 + n + m] = ensemble.m.reshape(n_paths * k, m)
    rows[:, -1] = np.repeat(ensemble.log_density, k)
    return cols, rows
