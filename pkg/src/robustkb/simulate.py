"""Euler-Maruyama path simulation under a drift perturbation, with exact
per-path likelihood ratios for change-of-measure reweighting.

Randomness is drawn from one stream per (path, noise source), keyed by
(master_seed, path_index, stream_tag).  Results therefore depend only on the
master seed and absolute path indices, never on chunking or thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, GridMismatch, UnsupportedTilt
from .model import DriftPolicy, ValidatedModel
from .ode import _policy_array

_SIGNAL_TAG = 0
_OBS_TAG = 1
_CHUNK = 2048

# Signal-noise directions with variance below this carry no tilt.
_TILT_EIG_FLOOR = 1e-10


def _path_rng(master_seed: int, path_index: int, tag: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=(int(master_seed), int(path_index), int(tag)))
    return np.random.default_rng(seq)


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated signal and observation paths with their noise increments.

    x has shape (n_paths, n_steps+1, n); m likewise with dimension m and
    m[:, 0] = 0.  dw holds reference-measure signal increments (the tilted
    increments plus theta*dt), dv the observation noise increments.
    log_density is the log likelihood ratio of the simulation tilt on each
    path.
    """

    model: ValidatedModel = field(repr=False)
    policy: DriftPolicy = field(repr=False)
    master_seed: int
    path_offset: int
    x: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)
    dw: np.ndarray = field(repr=False)
    dv: np.ndarray = field(repr=False)
    log_density: np.ndarray = field(repr=False)

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]


def _tilt_factors(theta: np.ndarray, model: ValidatedModel):
    """Cholesky factors of Q on intervals where the tilt is active."""
    active = np.flatnonzero(np.any(theta != 0.0, axis=1))
    if active.size == 0:
        return active, None
    Qa = model.Q[active]
    eigs = np.linalg.eigvalsh(Qa)
    if eigs.min() < _TILT_EIG_FLOOR:
        k = int(active[np.argwhere(eigs.min(axis=1) < _TILT_EIG_FLOOR)[0, 0]])
        raise UnsupportedTilt(
            f"interval {k}: tilt is nonzero but Q is singular there"
        )
    return active, np.linalg.cholesky(Qa)


def _log_density_batch(theta: np.ndarray, dw: np.ndarray,
                       model: ValidatedModel) -> np.ndarray:
    """Log likelihood ratio sum_k theta_k' dw_std_k - 0.5 sum_k |theta_k|^2 dt.

    Increments are standardized by the Cholesky factor of Q per interval;
    theta itself is read as a tilt of the standardized noise, which for
    identity Q coincides with the state-equation drift.  Intervals with zero
    tilt contribute exactly zero whatever Q is.
    """
    dt = model.grid.dt
    active, chol = _tilt_factors(theta, model)
    out = np.zeros(dw.shape[0])
    if active.size == 0:
        return out
    th = theta[active]
    dw_std = np.linalg.solve(chol, dw[:, active, :, None])[..., 0]
    out += np.einsum("kj,bkj->b", th, dw_std)
    out -= 0.5 * dt * float(np.einsum("kj,kj->", th, th))
    return out


def girsanov_log_density(theta, dw: np.ndarray, model: ValidatedModel) -> float:
    """Log likelihood ratio of one tilt on one path of signal increments."""
    th = _policy_array(theta, model, "theta")
    dw = np.asarray(dw, dtype=float)
    if dw.shape != (model.n_steps, model.n):
        raise GridMismatch(
            f"dw: expected shape ({model.n_steps}, {model.n}), got {dw.shape}"
        )
    return float(_log_density_batch(th, dw[None], model)[0])


def _simulate_chunk(model: ValidatedModel, theta: np.ndarray, master_seed: int,
                    j0: int, count: int, path_offset: int,
                    need_density: bool = True):
    """Simulate paths with absolute indices j0..j0+count-1."""
    n, m, k_steps = model.n, model.m, model.n_steps
    dt = model.grid.dt
    sqrt_dt = np.sqrt(dt)

    xi = np.empty((count, k_steps, n))
    eta = np.empty((count, k_steps, m))
    for j in range(count):
        idx = path_offset + j0 + j
        xi[j] = _path_rng(master_seed, idx, _SIGNAL_TAG).standard_normal((k_steps, n))
        eta[j] = _path_rng(master_seed, idx, _OBS_TAG).standard_normal((k_steps, m))
    dw_tilt = np.einsum("kij,bkj->bki", model.Q_sqrt, xi) * sqrt_dt
    dv = np.einsum("kij,bkj->bki", model.R_chol, eta) * sqrt_dt

    x = np.empty((count, k_steps + 1, n))
    obs = np.empty((count, k_steps + 1, m))
    x[:, 0] = model.x0
    obs[:, 0] = 0.0
    Fs, fs, Gs, gs = model.F, model.f, model.G, model.g
    for k in range(k_steps):
        xk = x[:, k]
        x[:, k + 1] = xk + (xk @ Fs[k].T + fs[k] + theta[k]) * dt + dw_tilt[:, k]
        obs[:, k + 1] = obs[:, k] + (xk @ Gs[k].T + gs[k]) * dt + dv[:, k]

    dw = dw_tilt + theta * dt
    logw = _log_density_batch(theta, dw, model) if need_density else np.zeros(count)
    return x, obs, dw, dv, logw


def simulate_paths(model: ValidatedModel, theta, n_paths: int, master_seed: int,
                   path_offset: int = 0, threads: int = 1) -> PathEnsemble:
    """Simulate n_paths signal/observation paths under the drift tilt theta.

    Paths are generated in fixed chunks; path_offset shifts the absolute
    path indices so a large run can be split across calls and still match a
    monolithic run bitwise.
    """
    th = _policy_array(theta, model, "theta")
    policy = theta if isinstance(theta, DriftPolicy) else DriftPolicy(th)
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    n, m, k_steps = model.n, model.m, model.n_steps

    x = np.empty((n_paths, k_steps + 1, n))
    obs = np.empty((n_paths, k_steps + 1, m))
    dw = np.empty((n_paths, k_steps, n))
    dv = np.empty((n_paths, k_steps, m))
    logw = np.empty(n_paths)

    starts = range(0, n_paths, _CHUNK)

    def run(j0: int):
        count = min(_CHUNK, n_paths - j0)
        cx, cm, cdw, cdv, clw = _simulate_chunk(model, th, master_seed, j0,
                                                count, path_offset)
        sl = slice(j0, j0 + count)
        x[sl], obs[sl], dw[sl], dv[sl], logw[sl] = cx, cm, cdw, cdv, clw

    if threads > 1 and n_paths > _CHUNK:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, starts))
    else:
        for j0 in starts:
            run(j0)

    for arr in (x, obs, dw, dv, logw):
        arr.setflags(write=False)
    return PathEnsemble(model=model, policy=policy, master_seed=int(master_seed),
                        path_offset=int(path_offset), x=x, m=obs, dw=dw, dv=dv,
                        log_density=logw)


def reweighted_mean(ensemble: PathEnsemble, payoff, theta) -> float:
    """Mean of a per-path payoff under the measure tilted by theta.

    Paths simulated under the ensemble's own tilt are reweighted by the
    likelihood ratio between the target tilt and the simulation tilt.
    """
    values = np.asarray(payoff, dtype=float)
    if values.shape != (ensemble.n_paths,):
        raise DimensionMismatch(
            f"payoff: expected shape ({ensemble.n_paths},), got {values.shape}"
        )
    th = _policy_array(theta, ensemble.model, "theta")
    target = _log_density_batch(th, ensemble.dw, ensemble.model)
    weights = np.exp(target - ensemble.log_density)
    return float(np.mean(weights * values))
