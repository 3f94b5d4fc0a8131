"""Reference solvers used to validate the ensemble planner.

Three tools live here: the exact (moment-form) realization of the same
one-pass trajectory smoother for linear-Gaussian systems, an exact stacked
least-squares solver for the linear-quadratic tracking problem, and a
gradient-based penalty-method NMPC solver that stands in for a numerical
optimization baseline. None of them share code with the ensemble path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import softplus_barrier, stack_constraints_batch
from .dynamics import CONTROL_DIM, STATE_DIM


@dataclass
class LinearTestSystem:
    """Linear dynamics x+ = A x + B u with quadratic tracking weights.

    Doubles as the source of Gaussian state-space fixtures: the tracking
    problem's estimation counterpart augments the state with the control and
    observes the state block.
    """

    a: np.ndarray            # (n, n)
    b: np.ndarray            # (n, m)
    process_cov: np.ndarray  # (n, n), used by generic smoother fixtures
    meas_cov: np.ndarray     # (p, p)
    state_weight: np.ndarray    # (n, n) tracking weight
    control_weight: np.ndarray  # (m, m) effort weight
    horizon: int

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n, m = self.b.shape
        if self.a.shape != (n, n):
            raise ValueError("A/B dimension mismatch")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass
class GaussianStateSpace:
    """x+ = F x + w, y = C x + v with w ~ N(0, W), v ~ N(0, V)."""

    f: np.ndarray
    c: np.ndarray
    w: np.ndarray
    v: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray


def tracking_statespace(system: LinearTestSystem, x0) -> GaussianStateSpace:
    """Estimation counterpart of the tracking problem: augmented state
    (x, u), control block driven by pure noise with covariance equal to the
    inverse control weight, state block observed with the inverse tracking
    weight as noise."""
    n, m = system.b.shape
    f = np.zeros((n + m, n + m))
    f[:n, :n] = system.a
    f[:n, n:] = system.b
    w = np.zeros((n + m, n + m))
    w[n:, n:] = np.linalg.inv(system.control_weight)
    c = np.zeros((n, n + m))
    c[:, :n] = np.eye(n)
    v = np.linalg.inv(system.state_weight)
    init_mean = np.zeros(n + m)
    init_mean[:n] = np.asarray(x0, dtype=float)
    init_cov = np.zeros((n + m, n + m))
    init_cov[n:, n:] = np.linalg.inv(system.control_weight)
    return GaussianStateSpace(f=f, c=c, w=w, v=v,
                              init_mean=init_mean, init_cov=init_cov)


def exact_sequential_ks(ss: GaussianStateSpace, observations):
    """Exact moment-form run of the one-pass trajectory smoother.

    Maintains the joint Gaussian over the whole trajectory; each step appends
    the predicted marginal and conditions the full joint on the new
    observation. Returns (means (L, n), joint_cov (L*n, L*n)).
    """
    f = np.asarray(ss.f, dtype=float)
    c = np.asarray(ss.c, dtype=float)
    n = f.shape[0]
    obs = [np.atleast_1d(np.asarray(y, dtype=float)) for y in observations]
    length = len(obs)
    if length < 1:
        raise ValueError("need at least one observation")
    mean = np.array(ss.init_mean, dtype=float)
    cov = np.array(ss.init_cov, dtype=float)
    for t, y in enumerate(obs):
        if t > 0:
            old = len(mean)
            new_mean = np.empty(old + n)
            new_mean[:old] = mean
            new_mean[old:] = f @ mean[-n:]
            new_cov = np.empty((old + n, old + n))
            new_cov[:old, :old] = cov
            cross = cov[:, -n:] @ f.T           # cov(traj, new block)
            new_cov[:old, old:] = cross
            new_cov[old:, :old] = cross.T
            new_cov[old:, old:] = f @ cov[-n:, -n:] @ f.T + ss.w
            mean, cov = new_mean, new_cov
        h = np.zeros((c.shape[0], len(mean)))
        h[:, -n:] = c
        innov_cov = h @ cov @ h.T + ss.v
        try:
            chol = np.linalg.cholesky(innov_cov)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "singular innovation covariance in exact smoother") from exc
        # gain = cov @ h.T @ inv(innov_cov), via two triangular solves
        cross = cov @ h.T
        tmp = np.linalg.solve(chol, cross.T)
        gain = np.linalg.solve(chol.T, tmp).T
        mean = mean + gain @ (y - h @ mean)
        cov = cov - gain @ innov_cov @ gain.T
        cov = 0.5 * (cov + cov.T)
    return mean.reshape(length, n), cov


def lq_tracking_solve(system: LinearTestSystem, reference, x0):
    """Exact optimum of the finite-horizon tracking problem.

    Minimizes sum_t (x_t - r_t)' S (x_t - r_t) + u_t' Q u_t subject to
    x_{t+1} = A x_t + B u_t with x_0 fixed, over u_0..u_H, by solving the
    stacked normal equations. Returns (controls (H+1, m), cost).
    """
    a, b = system.a, system.b
    n, m = b.shape
    h = system.horizon
    refs = np.asarray(reference, dtype=float)
    if refs.shape != (h + 1, n):
        raise ValueError(f"reference must be ({h + 1}, {n})")
    x0 = np.asarray(x0, dtype=float)

    # X = d + G U with X stacking x_0..x_H and U stacking u_0..u_H
    powers = [np.eye(n)]
    for _ in range(h):
        powers.append(a @ powers[-1])
    d = np.concatenate([powers[t] @ x0 for t in range(h + 1)])
    g = np.zeros(((h + 1) * n, (h + 1) * m))
    for t in range(1, h + 1):
        for j in range(t):
            g[t * n:(t + 1) * n, j * m:(j + 1) * m] = powers[t - 1 - j] @ b
    r_bar = np.kron(np.eye(h + 1), system.state_weight)
    q_bar = np.kron(np.eye(h + 1), system.control_weight)
    lhs = g.T @ r_bar @ g + q_bar
    rhs = g.T @ r_bar @ (refs.ravel() - d)
    try:
        u = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("tracking problem is rank deficient") from exc
    resid = d + g @ u - refs.ravel()
    cost = float(resid @ r_bar @ resid + u @ q_bar @ u)
    return u.reshape(h + 1, m), cost


@dataclass
class PenaltyConfig:
    outer_iterations: int = 3
    inner_iterations: int = 40
    initial_penalty: float = 10.0
    penalty_growth: float = 10.0
    initial_step: float = 0.5
    fd_step: float = 1e-5
    max_backtracks: int = 30


def penalty_nmpc_solve(vehicle_step, scene, x0, planner_config,
                       penalty: PenaltyConfig = None, u_init=None,
                       references=None):
    """Single-shooting penalty-method solve of the constrained tracking
    problem, with central finite-difference gradients.

    vehicle_step : callable (states (K,4), controls (K,2)) -> (K,4); the
        same planner-side dynamics hook the ensemble planner uses.
    references : optional (H+1, 4) waypoint override, as in plan_step.
    Returns (controls (H+1, 2), cost, wall_time) where cost is the quadratic
    tracking-plus-effort objective of the best iterate (penalty excluded).
    """
    from .planner import build_reference
    from .virtual import predicted_obstacles

    if penalty is None:
        penalty = PenaltyConfig()
    t_start = time.perf_counter()
    h = planner_config.horizon
    dt = planner_config.dt
    noise = planner_config.noise
    if references is None:
        refs = build_reference(scene.road, x0, h, dt, scene.target_speed)
    else:
        refs = np.asarray(references, dtype=float)
    use_barrier = planner_config.barrier is not None
    contexts = None
    if use_barrier:
        contexts = [predicted_obstacles(scene.obstacles, t, dt)
                    for t in range(h + 1)]

    x0_arr = x0.as_array()
    sw = noise.state_weight
    cw = noise.control_weight

    def rollout(u_flat_batch):
        """States (K, H+1, 4) for a batch of flattened control sequences."""
        k = u_flat_batch.shape[0]
        u = u_flat_batch.reshape(k, h + 1, CONTROL_DIM)
        xs = np.empty((k, h + 1, STATE_DIM))
        xs[:, 0] = x0_arr
        for t in range(h):
            xs[:, t + 1] = vehicle_step(xs[:, t], u[:, t])
        return xs, u

    def objective(u_flat_batch, mu):
        xs, u = rollout(u_flat_batch)
        dx = xs - refs[None, :, :]
        cost = np.einsum("kti,ij,ktj->k", dx, sw, dx) + \
            np.einsum("kti,ij,ktj->k", u, cw, u)
        if use_barrier and mu > 0.0:
            pen = np.zeros(len(u_flat_batch))
            for t in range(h + 1):
                g = stack_constraints_batch(
                    xs[:, t], u[:, t], contexts[t], scene.road,
                    planner_config.constraints)
                phi = softplus_barrier(g, planner_config.barrier)
                pen += np.sum(phi ** 2, axis=1)
            cost = cost + mu * pen
        return cost

    def tracking_cost(u_flat):
        return float(objective(u_flat[None, :], 0.0)[0])

    dim = (h + 1) * CONTROL_DIM
    u_flat = (np.zeros(dim) if u_init is None
              else np.asarray(u_init, dtype=float).ravel().copy())
    if u_flat.shape != (dim,):
        raise ValueError("u_init has the wrong shape")

    mu = penalty.initial_penalty
    eye = np.eye(dim)
    for _ in range(penalty.outer_iterations):
        step_size = penalty.initial_step
        for _ in range(penalty.inner_iterations):
            base = float(objective(u_flat[None, :], mu)[0])
            if not np.isfinite(base):
                raise FloatingPointError("penalty objective became non-finite")
            perturbed = np.vstack([u_flat + penalty.fd_step * eye,
                                   u_flat - penalty.fd_step * eye])
            vals = objective(perturbed, mu)
            grad = (vals[:dim] - vals[dim:]) / (2.0 * penalty.fd_step)
            gnorm = np.linalg.norm(grad)
            if gnorm < 1e-12:
                break
            direction = -grad / gnorm
            alpha = step_size
            improved = False
            for _ in range(penalty.max_backtracks):
                cand = u_flat + alpha * direction
                val = float(objective(cand[None, :], mu)[0])
                if val < base - 1e-4 * alpha * gnorm:
                    u_flat = cand
                    step_size = min(alpha * 2.0, 10.0 * penalty.initial_step)
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                break
        mu *= penalty.penalty_growth
    cost = tracking_cost(u_flat)
    return u_flat.reshape(h + 1, CONTROL_DIM), cost, time.perf_counter() - t_start
