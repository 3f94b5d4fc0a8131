"""Sequential one-pass ensemble Kalman smoother over growing trajectories.

Distributions over whole trajectories are represented by an ensemble of
sampled trajectories. Each horizon step appends a predicted slice to every
member, samples perturbed measurements, and then shifts every member's entire
trajectory by the sample-covariance Kalman gain times that member's own
innovation. Because every past slice is corrected on each new measurement, no
backward sweep is needed: one forward pass yields the smoothed trajectory.

The smoother is generic over the transition and measurement sampling maps; it
never inspects the state beyond its dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateEnsembleError(ValueError):
    """Raised when an operation needs at least two ensemble members."""


class SmootherNumericsError(RuntimeError):
    """Raised when the measurement covariance cannot be inverted.

    Carries an estimate of the condition number at failure so callers can
    retry with a larger jitter.
    """

    def __init__(self, message, cond_estimate=None):
        super().__init__(message)
        self.cond_estimate = cond_estimate


@dataclass
class SmootherConfig:
    n_members: int = 200
    jitter: float = 1e-8   # ridge added to the measurement covariance
    compute_covariances: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_members < 2:
            raise ValueError("n_members must be >= 2")
        if self.jitter < 0.0:
            raise ValueError("jitter must be >= 0")


@dataclass
class EnsembleStats:
    mean: np.ndarray
    covariance: np.ndarray = None


@dataclass
class SmootherDiagnostics:
    innovation_norms: list = field(default_factory=list)
    max_cond_estimate: float = 0.0
    predicted_traces: list = field(default_factory=list)
    updated_traces: list = field(default_factory=list)


class TrajectoryEnsemble:
    """N trajectories over a growing horizon, stored as one flat buffer.

    Each member occupies a contiguous row of the buffer (time-major within
    the row), so the whole-trajectory Kalman shift is a single matrix
    operation on a contiguous view.
    """

    def __init__(self, initial_members, capacity):
        initial = np.asarray(initial_members, dtype=float)
        if initial.ndim != 2:
            raise ValueError("initial members must be an (N, d) array")
        n, d = initial.shape
        if n < 2:
            raise DegenerateEnsembleError("need at least 2 ensemble members")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self._dim = d
        self._buf = np.empty((n, capacity * d))
        self._buf[:, :d] = initial
        self._len = 1

    @property
    def n_members(self):
        return self._buf.shape[0]

    @property
    def state_dim(self):
        return self._dim

    @property
    def length(self):
        return self._len

    @property
    def members(self):
        """(N, length * d) view of the active flattened trajectories."""
        return self._buf[:, : self._len * self._dim]

    def slice(self, t):
        """(N, d) view of the time slice at index t (negative indexes ok)."""
        if t < 0:
            t += self._len
        if not 0 <= t < self._len:
            raise IndexError(f"slice {t} out of range for length {self._len}")
        return self._buf[:, t * self._dim:(t + 1) * self._dim]

    def append(self, block):
        block = np.asarray(block, dtype=float)
        if block.shape != (self.n_members, self._dim):
            raise ValueError(f"expected block of shape "
                             f"({self.n_members}, {self._dim}), got {block.shape}")
        end = (self._len + 1) * self._dim
        if end > self._buf.shape[1]:
            raise ValueError("ensemble capacity exceeded")
        self._buf[:, self._len * self._dim:end] = block
        self._len += 1

    def trajectories(self):
        """(N, length, d) view of the members."""
        return self.members.reshape(self.n_members, self._len, self._dim)


def ensemble_mean(members, time_slice=None):
    """Arithmetic mean over members; optionally of one (start, stop) column
    slice of the flattened trajectories."""
    members = np.asarray(members, dtype=float)
    if time_slice is not None:
        members = members[:, time_slice[0]:time_slice[1]]
    return members.mean(axis=0)


def cross_covariance(a_members, b_members, a_mean=None, b_mean=None):
    """Sample cross-covariance sum_i (a_i - a_mean)(b_i - b_mean)^T / (N-1)."""
    a = np.asarray(a_members, dtype=float)
    b = np.asarray(b_members, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise ValueError("member counts differ")
    n = a.shape[0]
    if n < 2:
        raise DegenerateEnsembleError("covariance needs at least 2 members")
    da = a - (a.mean(axis=0) if a_mean is None else np.asarray(a_mean))
    db = b - (b.mean(axis=0) if b_mean is None else np.asarray(b_mean))
    return da.T @ db / (n - 1)


def predict(ensemble: TrajectoryEnsemble, transition, t=None) -> TrajectoryEnsemble:
    """Append one predicted slice to every member.

    ``transition(last_slice, t)`` must return the (N, d) next slice, drawing
    its own process noise. ``t`` defaults to the index the new slice will
    occupy.
    """
    if t is None:
        t = ensemble.length
    ensemble.append(transition(ensemble.slice(-1), t))
    return ensemble


def update(ensemble: TrajectoryEnsemble, measurement_samples, observed,
           config: SmootherConfig):
    """Kalman-shift every member by its own innovation against ``observed``.

    The gain solves (P_yy + jitter*I) s = innovation per member; no explicit
    inverse is formed. Returns (innovation_norm, cond_estimate).
    """
    y = np.asarray(measurement_samples, dtype=float)
    n = ensemble.n_members
    if y.shape[0] != n:
        raise ValueError("measurement ensemble does not match state ensemble")
    flat = ensemble.members
    y_mean = y.mean(axis=0)
    dy = y - y_mean
    p_yy = dy.T @ dy / (n - 1)
    if config.jitter > 0.0:
        p_yy = p_yy + config.jitter * np.eye(p_yy.shape[0])
    p_xy = (flat - flat.mean(axis=0)).T @ dy / (n - 1)
    innovations = np.asarray(observed, dtype=float)[None, :] - y
    diag = np.abs(np.diagonal(p_yy))
    cond_estimate = float(diag.max() / max(diag.min(), 1e-300))
    try:
        shifts = np.linalg.solve(p_yy, innovations.T)      # (m, N)
    except np.linalg.LinAlgError as exc:
        raise SmootherNumericsError(
            f"measurement covariance singular (diag-ratio estimate "
            f"{cond_estimate:.3e}); consider a larger jitter",
            cond_estimate=cond_estimate) from exc
    flat += (p_xy @ shifts).T
    innovation_norm = float(np.linalg.norm(np.asarray(observed) - y_mean))
    return innovation_norm, cond_estimate


def smooth_horizon(initial_members, horizon: int, transition, measurement,
                   observations, config: SmootherConfig):
    """Run the one-pass smoother over a horizon.

    initial_members : (N, d) samples of the augmented state at the first step
    horizon         : number of additional steps H (>= 1)
    transition      : callable (slice (N,d), t) -> (N,d), noise included
    measurement     : callable (slice (N,d), t) -> (N,m), noise included
    observations    : indexable, observations[t] for t = 0..H; each consumed
                      exactly once
    Returns (ensemble, EnsembleStats, SmootherDiagnostics); the stats mean is
    the flattened smoothed trajectory of length (H+1)*d.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    ens = TrajectoryEnsemble(initial_members, capacity=horizon + 1)
    diag = SmootherDiagnostics()
    for t in range(horizon + 1):
        if t > 0:
            predict(ens, transition, t)
        y_samples = measurement(ens.slice(t), t)
        y_obs = observations[t]
        if config.compute_covariances:
            diag.predicted_traces.append(_trace_of(ens))
        innov, cond = update(ens, y_samples, y_obs, config)
        if config.compute_covariances:
            diag.updated_traces.append(_trace_of(ens))
        diag.innovation_norms.append(innov)
        diag.max_cond_estimate = max(diag.max_cond_estimate, cond)
    mean = ensemble_mean(ens.members)
    cov = None
    if config.compute_covariances:
        cov = cross_covariance(ens.members, ens.members, mean, mean)
    return ens, EnsembleStats(mean=mean, covariance=cov), diag


def _trace_of(ens):
    flat = ens.members
    return float(np.sum((flat - flat.mean(axis=0)) ** 2) / (ens.n_members - 1))
