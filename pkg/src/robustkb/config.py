"""Scenario configs: a small JSON schema for grid, model, and uncertainty.

Coefficients may be given as scalars, single matrices/vectors (broadcast over
all intervals), or per-interval arrays of length n_steps.  When a flat list
could be read either way, the single-matrix reading wins.  Parse errors name
the offending JSON path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from numbers import Real

import numpy as np

from .errors import ConfigError, RobustKBError
from .model import (
    ModelSchedule,
    TimeGrid,
    UncertaintyBound,
    ValidatedModel,
    validate_model,
)


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed and validated scenario."""

    grid: TimeGrid
    model: ValidatedModel
    bound: UncertaintyBound


def _require(mapping, key: str, path: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected an object")
    if key not in mapping:
        raise ConfigError(f"{path}.{key}: missing")
    return mapping[key]


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, Real):
        raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
    return float(value)


def _as_positive_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {type(value).__name__}")
    if value < 1:
        raise ConfigError(f"{path}: must be >= 1, got {value}")
    return value


def _single_matrix(value, rows: int, cols: int, path: str) -> np.ndarray | None:
    """One (rows, cols) matrix from a scalar, nested list, or flat list."""
    if isinstance(value, Real) and not isinstance(value, bool):
        if rows == cols == 1:
            return np.array([[float(value)]])
        return None
    if not isinstance(value, list) or not value:
        return None
    if all(isinstance(r, list) for r in value):
        if len(value) != rows or any(len(r) != cols for r in value):
            return None
        try:
            return np.array([[_as_number(x, path) for x in r] for r in value])
        except ConfigError:
            return None
    if all(isinstance(x, Real) and not isinstance(x, bool) for x in value):
        if len(value) == rows * cols:
            return np.array([float(x) for x in value]).reshape(rows, cols)
    return None


def _matrix_schedule(value, n_steps: int, rows: int, cols: int, path: str) -> np.ndarray:
    single = _single_matrix(value, rows, cols, path)
    if single is not None:
        return np.broadcast_to(single, (n_steps, rows, cols)).copy()
    if isinstance(value, list) and len(value) == n_steps:
        out = np.empty((n_steps, rows, cols))
        for k, entry in enumerate(value):
            mat = _single_matrix(entry, rows, cols, f"{path}[{k}]")
            if mat is None:
                raise ConfigError(
                    f"{path}[{k}]: expected a {rows}x{cols} matrix "
                    f"(scalar, nested list, or flat list of {rows * cols})"
                )
            out[k] = mat
        return out
    raise ConfigError(
        f"{path}: expected a {rows}x{cols} matrix or a list of {n_steps} of them"
    )


def _single_vector(value, dim: int, path: str) -> np.ndarray | None:
    if isinstance(value, Real) and not isinstance(value, bool):
        if dim == 1:
            return np.array([float(value)])
        return None
    if isinstance(value, list) and len(value) == dim and all(
        isinstance(x, Real) and not isinstance(x, bool) for x in value
    ):
        return np.array([float(x) for x in value])
    return None


def _vector_schedule(value, n_steps: int, dim: int, path: str) -> np.ndarray:
    single = _single_vector(value, dim, path)
    if single is not None:
        return np.broadcast_to(single, (n_steps, dim)).copy()
    if isinstance(value, list) and len(value) == n_steps:
        out = np.empty((n_steps, dim))
        for k, entry in enumerate(value):
            vec = _single_vector(entry, dim, f"{path}[{k}]")
            if vec is None:
                raise ConfigError(f"{path}[{k}]: expected a vector of length {dim}")
            out[k] = vec
        return out
    raise ConfigError(
        f"{path}: expected a vector of length {dim} or a list of {n_steps} of them"
    )


def scenario_from_dict(raw: dict) -> ScenarioConfig:
    """Build a validated scenario from a parsed JSON object."""
    if not isinstance(raw, dict):
        raise ConfigError("$: expected a JSON object")
    grid_raw = _require(raw, "grid", "$")
    horizon = _as_number(_require(grid_raw, "T", "$.grid"), "$.grid.T")
    if horizon <= 0.0 or not np.isfinite(horizon):
        raise ConfigError(f"$.grid.T: must be finite and positive, got {horizon}")
    n_steps = _as_positive_int(_require(grid_raw, "n_steps", "$.grid"), "$.grid.n_steps")
    grid = TimeGrid(horizon, n_steps)

    model_raw = _require(raw, "model", "$")
    n = _as_positive_int(_require(model_raw, "n", "$.model"), "$.model.n")
    m = _as_positive_int(_require(model_raw, "m", "$.model"), "$.model.m")

    F = _matrix_schedule(_require(model_raw, "F", "$.model"), n_steps, n, n, "$.model.F")
    G = _matrix_schedule(_require(model_raw, "G", "$.model"), n_steps, m, n, "$.model.G")
    Q = _matrix_schedule(_require(model_raw, "Q", "$.model"), n_steps, n, n, "$.model.Q")
    R = _matrix_schedule(_require(model_raw, "R", "$.model"), n_steps, m, m, "$.model.R")
    f = _vector_schedule(_require(model_raw, "f", "$.model"), n_steps, n, "$.model.f")
    g = _vector_schedule(_require(model_raw, "g", "$.model"), n_steps, m, "$.model.g")
    x0 = _single_vector(_require(model_raw, "x0", "$.model"), n, "$.model.x0")
    if x0 is None:
        raise ConfigError(f"$.model.x0: expected a vector of length {n}")

    unc_raw = _require(raw, "uncertainty", "$")
    mu_raw = _require(unc_raw, "mu", "$.uncertainty")
    if isinstance(mu_raw, Real) and not isinstance(mu_raw, bool):
        mu = np.full(n, float(mu_raw))
    else:
        mu = _single_vector(mu_raw, n, "$.uncertainty.mu")
        if mu is None:
            raise ConfigError(
                f"$.uncertainty.mu: expected a number or a vector of length {n}"
            )
    if np.any(mu < 0.0):
        raise ConfigError("$.uncertainty.mu: must be componentwise nonnegative")

    schedule = ModelSchedule(F=F, f=f, G=G, g=g, Q=Q, R=R, x0=x0)
    try:
        model = validate_model(schedule, grid)
    except RobustKBError as exc:
        raise ConfigError(f"$.model: {exc}") from exc
    return ScenarioConfig(grid=grid, model=model, bound=UncertaintyBound(mu))


def load_scenario(path: str) -> ScenarioConfig:
    """Load and validate a scenario JSON file."""
    try:
        with open(path, "rb") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(raw)
