"""Deterministic ODE machinery: transition matrices, the error-covariance
Riccati equation, closed-form scalar oracles, and exact error statistics.

Every integrator is classical fixed-step RK4 on the model grid.  Schedules
are piecewise constant, so all four stages inside step k use the interval-k
coefficients.  Covariance iterates are symmetrized after each step to stop
asymmetry drift.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateG,
    GridMismatch,
    LostPositivity,
    MissingRiccati,
    OutOfGrid,
)
from .model import DriftPolicy, TimeGrid, ValidatedModel

RICCATI_EIG_FLOOR = -1e-9

GENERATORS = ("state", "closed_loop")


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _riccati_rhs(P, F, S, Q):
    return F @ P + P @ F.T - P @ S @ P + Q


@dataclass(frozen=True)
class RiccatiPath:
    """Error-covariance path P_k on the grid nodes."""

    grid: TimeGrid
    P: np.ndarray
    min_eigenvalue: float

    def at(self, t: float) -> np.ndarray:
        return self.P[self.grid.index_of(t)]

    def prefix(self, n_steps: int) -> "RiccatiPath":
        """Restriction to the first n_steps intervals; values are shared."""
        return RiccatiPath(self.grid.prefix(n_steps), self.P[: n_steps + 1],
                           self.min_eigenvalue)


def solve_riccati(model: ValidatedModel) -> RiccatiPath:
    """Integrate dP = FP + PF' - PSP + Q from P(0) = 0.

    Raises LostPositivity if any node covariance has an eigenvalue below
    -1e-9; the message names the first offending node.
    """
    n, k_steps, dt = model.n, model.n_steps, model.grid.dt
    half, sixth = 0.5 * dt, dt / 6.0
    Fs, Ss, Qs = model.F, model.S, model.Q
    path = np.empty((k_steps + 1, n, n))
    P = np.zeros((n, n))
    path[0] = P
    for k in range(k_steps):
        F, S, Q = Fs[k], Ss[k], Qs[k]
        k1 = _riccati_rhs(P, F, S, Q)
        k2 = _riccati_rhs(P + half * k1, F, S, Q)
        k3 = _riccati_rhs(P + half * k2, F, S, Q)
        k4 = _riccati_rhs(P + dt * k3, F, S, Q)
        P = _sym(P + sixth * (k1 + 2.0 * (k2 + k3) + k4))
        path[k + 1] = P
    eigs = np.linalg.eigvalsh(path)
    min_eig = float(eigs.min())
    if min_eig < RICCATI_EIG_FLOOR:
        node = int(np.argwhere(eigs.min(axis=1) < RICCATI_EIG_FLOOR)[0, 0])
        raise LostPositivity(
            f"covariance at node {node} has eigenvalue {min_eig:.3e}"
        )
    path.setflags(write=False)
    return RiccatiPath(grid=model.grid, P=path, min_eigenvalue=min_eig)


def steady_state_scalar(F: float, G: float, Q: float, R: float) -> float:
    """Stabilizing root of the scalar algebraic Riccati equation.

    Requires G != 0 (DegenerateG), R > 0 and Q >= 0 (ValueError).
    """
    F, G, Q, R = float(F), float(G), float(Q), float(R)
    if G == 0.0:
        raise DegenerateG("steady state needs G != 0")
    if R <= 0.0:
        raise ValueError(f"R must be positive, got {R}")
    if Q < 0.0:
        raise ValueError(f"Q must be nonnegative, got {Q}")
    a = G * G / R
    d = np.sqrt(F * F + a * Q)
    if F >= 0.0:
        return float((F + d) / a)
    # F + d cancels for F < 0; the root product -Q/a does not.
    return float(Q / (d - F))


def riccati_scalar_solution(F: float, G: float, Q: float, R: float, t: float) -> float:
    """Closed-form scalar covariance at time t, started from zero.

    Factoring the quadratic through its roots p+ > 0 >= p- gives
    P(t) = (p+ p-) (1 - e) / (p- - p+ e) with e = exp(-a (p+ - p-) t)
    and a = G^2 / R; whichever root would cancel against F is recovered
    from the root product -Q/a instead.
    """
    F, G, Q, R, t = float(F), float(G), float(Q), float(R), float(t)
    if R <= 0.0:
        raise ValueError(f"R must be positive, got {R}")
    if Q < 0.0:
        raise ValueError(f"Q must be nonnegative, got {Q}")
    if t < 0.0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if Q == 0.0:
        return 0.0
    if G == 0.0:
        # Linear equation dP = 2FP + Q.
        if F == 0.0:
            return Q * t
        return float(Q * np.expm1(2.0 * F * t) / (2.0 * F))
    a = G * G / R
    disc = np.sqrt(F * F + a * Q)
    # F + disc (or F - disc) cancels depending on sign(F); take the safe
    # root directly and its partner from the product -Q/a.
    if F >= 0.0:
        p_plus = (F + disc) / a
        p_minus = -Q / (a * p_plus)
    else:
        p_minus = (F - disc) / a
        p_plus = -Q / (a * p_minus)
    e = np.exp(-a * (p_plus - p_minus) * t)
    return float(-(Q / a) * (1.0 - e) / (p_minus - p_plus * e))


class TransitionCache:
    """Whole-trajectory transition matrices from any start node, memoized.

    generator "state" propagates with F; "closed_loop" propagates with
    F - P G' R^-1 G and needs the covariance path.
    """

    def __init__(self, model: ValidatedModel, generator: str = "state",
                 riccati: RiccatiPath | None = None):
        if generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}, got {generator!r}")
        if generator == "closed_loop":
            if riccati is None:
                raise MissingRiccati("closed_loop transitions need a covariance path")
            if riccati.grid != model.grid:
                raise GridMismatch("covariance path grid differs from model grid")
        self.model = model
        self.generator = generator
        self.riccati = riccati
        self._rows: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def trajectory(self, s_index: int) -> np.ndarray:
        """Matrices mapping node s to every node j >= s; entry [j - s]."""
        if not 0 <= s_index <= self.model.n_steps:
            raise OutOfGrid(f"start node {s_index} outside 0..{self.model.n_steps}")
        with self._lock:
            cached = self._rows.get(s_index)
        if cached is not None:
            return cached
        traj = self._integrate(s_index)
        traj.setflags(write=False)
        with self._lock:
            self._rows.setdefault(s_index, traj)
        return traj

    def matrix(self, s_index: int, t_index: int) -> np.ndarray:
        """Transition matrix from node s to node t, s <= t."""
        if t_index < s_index:
            raise OutOfGrid(f"needs s <= t, got nodes {s_index} > {t_index}")
        if t_index > self.model.n_steps:
            raise OutOfGrid(f"node {t_index} outside 0..{self.model.n_steps}")
        return self.trajectory(s_index)[t_index - s_index]

    def _integrate(self, s: int) -> np.ndarray:
        model = self.model
        n, dt = model.n, model.grid.dt
        half, sixth = 0.5 * dt, dt / 6.0
        steps = model.n_steps - s
        out = np.empty((steps + 1, n, n))
        Phi = np.eye(n)
        out[0] = Phi
        if self.generator == "state":
            Fs = model.F
            for k in range(s, model.n_steps):
                F = Fs[k]
                k1 = F @ Phi
                k2 = F @ (Phi + half * k1)
                k3 = F @ (Phi + half * k2)
                k4 = F @ (Phi + dt * k3)
                Phi = Phi + sixth * (k1 + 2.0 * (k2 + k3) + k4)
                out[k - s + 1] = Phi
        else:
            Fs, Ss, Qs = model.F, model.S, model.Q
            P = self.riccati.P[s].copy()
            for k in range(s, model.n_steps):
                F, S, Q = Fs[k], Ss[k], Qs[k]
                k1p = _riccati_rhs(P, F, S, Q)
                k1f = (F - P @ S) @ Phi
                P2 = P + half * k1p
                k2p = _riccati_rhs(P2, F, S, Q)
                k2f = (F - P2 @ S) @ (Phi + half * k1f)
                P3 = P + half * k2p
                k3p = _riccati_rhs(P3, F, S, Q)
                k3f = (F - P3 @ S) @ (Phi + half * k2f)
                P4 = P + dt * k3p
                k4p = _riccati_rhs(P4, F, S, Q)
                k4f = (F - P4 @ S) @ (Phi + dt * k3f)
                P = _sym(P + sixth * (k1p + 2.0 * (k2p + k3p) + k4p))
                Phi = Phi + sixth * (k1f + 2.0 * (k2f + k3f) + k4f)
                out[k - s + 1] = Phi
        return out


def transition(model: ValidatedModel, s: float, t: float, generator: str = "state",
               riccati: RiccatiPath | None = None,
               cache: TransitionCache | None = None) -> np.ndarray:
    """Transition matrix between grid times s <= t under the chosen generator."""
    s_idx = model.grid.index_of(s, what="s")
    t_idx = model.grid.index_of(t, what="t")
    if cache is None:
        cache = TransitionCache(model, generator, riccati)
    elif cache.generator != generator or cache.model is not model:
        raise ValueError("cache was built for a different model or generator")
    return cache.matrix(s_idx, t_idx)


@dataclass(frozen=True)
class ErrorStats:
    """Exact first and second moments of the filter error path."""

    grid: TimeGrid
    bias: np.ndarray
    Sigma: np.ndarray
    mse: np.ndarray

    def mse_at(self, t: float) -> float:
        return float(self.mse[self.grid.index_of(t)])


def _policy_array(policy, model: ValidatedModel, name: str) -> np.ndarray:
    arr = policy.theta if isinstance(policy, DriftPolicy) else np.asarray(policy, dtype=float)
    if arr.shape != (model.n_steps, model.n):
        raise GridMismatch(
            f"{name}: expected shape ({model.n_steps}, {model.n}), got {arr.shape}"
        )
    return arr


def solve_error_stats(model: ValidatedModel, theta_true, theta_hat,
                      riccati: RiccatiPath) -> ErrorStats:
    """Moments of the error x - xhat when the filter assumes theta_hat but
    paths are generated under theta_true.

    The bias solves db = (F - PG'R^-1G) b + (theta_true - theta_hat);
    the second moment solves dSigma = A Sigma + Sigma A' + Q + PSP.  The
    covariance is integrated jointly so the published identity Sigma = P can
    be checked against solve_riccati output to integrator accuracy.
    """
    th_true = _policy_array(theta_true, model, "theta_true")
    th_hat = _policy_array(theta_hat, model, "theta_hat")
    if riccati.grid != model.grid:
        raise GridMismatch("covariance path grid differs from model grid")
    n, k_steps, dt = model.n, model.n_steps, model.grid.dt
    half, sixth = 0.5 * dt, dt / 6.0
    Fs, Ss, Qs = model.F, model.S, model.Q
    delta = th_true - th_hat

    bias = np.empty((k_steps + 1, n))
    Sig = np.empty((k_steps + 1, n, n))
    P = riccati.P[0].copy()
    Sg = np.zeros((n, n))
    b = np.zeros(n)
    bias[0] = b
    Sig[0] = Sg
    for k in range(k_steps):
        F, S, Q, d = Fs[k], Ss[k], Qs[k], delta[k]

        def rhs(Pc, Sc, bc):
            A = F - Pc @ S
            forcing = Pc @ S @ Pc
            return (_riccati_rhs(Pc, F, S, Q),
                    A @ Sc + Sc @ A.T + Q + forcing,
                    A @ bc + d)

        k1p, k1s, k1b = rhs(P, Sg, b)
        k2p, k2s, k2b = rhs(P + half * k1p, Sg + half * k1s, b + half * k1b)
        k3p, k3s, k3b = rhs(P + half * k2p, Sg + half * k2s, b + half * k2b)
        k4p, k4s, k4b = rhs(P + dt * k3p, Sg + dt * k3s, b + dt * k3b)
        P = _sym(P + sixth * (k1p + 2.0 * (k2p + k3p) + k4p))
        Sg = _sym(Sg + sixth * (k1s + 2.0 * (k2s + k3s) + k4s))
        b = b + sixth * (k1b + 2.0 * (k2b + k3b) + k4b)
        bias[k + 1] = b
        Sig[k + 1] = Sg
    eigs = np.linalg.eigvalsh(Sig)
    min_eig = float(eigs.min())
    if min_eig < RICCATI_EIG_FLOOR:
        node = int(np.argwhere(eigs.min(axis=1) < RICCATI_EIG_FLOOR)[0, 0])
        raise LostPositivity(
            f"error covariance at node {node} has eigenvalue {min_eig:.3e}"
        )
    mse = np.einsum("kii->k", Sig) + np.einsum("ki,ki->k", bias, bias)
    for arr in (bias, Sig, mse):
        arr.setflags(write=False)
    return ErrorStats(grid=model.grid, bias=bias, Sigma=Sig, mse=mse)
