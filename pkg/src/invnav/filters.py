"""Kalman-type estimators for the planar car with deterministic odometry.

Three estimators share a propagate/update interface:

* a linear Kalman filter for generic deterministic linear systems, which
  also tracks a linear constraint pair (C_t, alpha) for exactness checks;
* the standard extended filter with additive error on (theta, x);
* the left-invariant filter whose error lives in the body frame and whose
  update is a right multiplication by the exponential of the correction.

Coordinates are angle-first, (theta, x1, x2).  Between measurements the
covariance follows dP/dt = A P + A^T-transposed flow with *no* process
noise; the inputs are held constant over each step so the transition matrix
has a closed form (A^3 = -omega^2 A for the invariant error dynamics,
A^2 = 0 for the additive one).  A fourth-order Runge-Kutta discretization
is kept behind a flag for sensitivity studies.

The invariant error dynamics matrix is

    A = [[0, 0, 0], [0, 0, omega], [u, -omega, 0]]

The signs of the u and omega couplings are pinned by requiring the
body-frame residual R(theta_hat)^T x_hat - b to stay at zero through
updates; the two sign-flipped variants below break that property and exist
so tests can discriminate the conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from .se2 import Rotation2, Se2Element, _sinc_pair, rot2
from .se2 import exp as se2_exp
from .sim import Trajectory

__all__ = [
    "H_POS",
    "SingularInnovation",
    "ErrorConvention",
    "IekfLinearization",
    "StateEstimate",
    "LinearKfState",
    "FilterConfig",
    "EstimateTrace",
    "default_initial_cov",
    "ekf_error_dynamics",
    "iekf_error_dynamics",
    "ekf_propagate",
    "ekf_update",
    "iekf_propagate",
    "iekf_update",
    "linear_kf_propagate",
    "linear_kf_update",
    "linear_kf_step",
    "run_filter",
]

# Measurement matrix: position fixes observe the last two error coordinates.
H_POS = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

_COV_EIG_FLOOR = -1e-10


class SingularInnovation(np.linalg.LinAlgError):
    """Innovation covariance is not invertible."""


class ErrorConvention(Enum):
    LINEAR = "linear"
    LEFT_INVARIANT = "left-invariant"


class IekfLinearization(Enum):
    """Sign conventions of the invariant error dynamics matrix.

    Only CONSISTENT keeps the estimate on the reachable set; the flipped
    variants are retained as regression witnesses.
    """

    CONSISTENT = "consistent"
    FLIPPED_U = "flipped-u"
    FLIPPED_U_SPIN = "flipped-u-spin"


@dataclass
class StateEstimate:
    """Pose mean with a 3x3 covariance in the declared error convention."""

    mean: Se2Element
    cov: np.ndarray
    error_convention: ErrorConvention

    def __post_init__(self) -> None:
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3)


def default_initial_cov(heading_var: float = math.pi / 2) -> np.ndarray:
    """Initial covariance with dispersion on the heading only."""
    return np.diag([heading_var, 0.0, 0.0])


def _repair_cov(P: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp eigenvalues below the floor to zero."""
    P = 0.5 * (P + P.T)
    try:
        np.linalg.cholesky(P - _COV_EIG_FLOOR * np.eye(3))
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(P)
        vals = np.clip(vals, 0.0, None)
        P = (vecs * vals) @ vecs.T
        P = 0.5 * (P + P.T)
    return P


def _gain(P: np.ndarray, noise_cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Kalman gain for the position measurement; raises when S is singular."""
    S = P[1:, 1:] + noise_cov
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    scale = max(abs(S[0, 0]), abs(S[0, 1]), abs(S[1, 0]), abs(S[1, 1]), 1e-300)
    if not math.isfinite(det) or abs(det) <= 1e-14 * scale * scale:
        raise SingularInnovation("innovation covariance is singular")
    s_inv = np.array([[S[1, 1], -S[0, 1]], [-S[1, 0], S[0, 0]]]) / det
    return P[:, 1:] @ s_inv, S


def ekf_error_dynamics(theta_hat: float, u: float) -> np.ndarray:
    """Additive-error dynamics matrix of the extended filter."""
    return np.array(
        [
            [0.0, 0.0, 0.0],
            [-math.sin(theta_hat) * u, 0.0, 0.0],
            [math.cos(theta_hat) * u, 0.0, 0.0],
        ]
    )


def iekf_error_dynamics(
    omega: float, u: float,
    variant: IekfLinearization = IekfLinearization.CONSISTENT,
) -> np.ndarray:
    """Invariant-error dynamics matrix; independent of the estimate."""
    if variant is IekfLinearization.CONSISTENT:
        return np.array([[0.0, 0.0, 0.0], [0.0, 0.0, omega], [u, -omega, 0.0]])
    if variant is IekfLinearization.FLIPPED_U:
        return np.array([[0.0, 0.0, 0.0], [0.0, 0.0, omega], [-u, -omega, 0.0]])
    return np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -omega], [-u, omega, 0.0]])


def _transition_from_dynamics(A: np.ndarray, omega: float, dt: float) -> np.ndarray:
    """exp(A dt) for the filter dynamics above (A^3 = -omega^2 A)."""
    if omega == 0.0:
        return np.eye(3) + dt * A + (0.5 * dt * dt) * (A @ A)
    f1 = math.sin(omega * dt) / omega
    f2 = (1.0 - math.cos(omega * dt)) / (omega * omega)
    return np.eye(3) + f1 * A + f2 * (A @ A)


def _rk4_cov(P: np.ndarray, a_of_s: "callable", dt: float) -> np.ndarray:
    """One RK4 step of dP/ds = A(s) P + P A(s)^T over [0, dt]."""

    def f(s, P):
        A = a_of_s(s)
        return A @ P + P @ A.T

    k1 = f(0.0, P)
    k2 = f(0.5 * dt, P + 0.5 * dt * k1)
    k3 = f(0.5 * dt, P + 0.5 * dt * k2)
    k4 = f(dt, P + dt * k3)
    return P + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _mean_step(theta: float, pos: np.ndarray, omega: float, u: float, dt: float,
               euler: bool) -> tuple[float, np.ndarray]:
    if euler:
        new_pos = pos + rot2(theta) @ np.array([u * dt, 0.0])
        return theta + omega * dt, new_pos
    a, b = _sinc_pair(omega * dt)
    body = np.array([u * dt * a, u * dt * b])
    return theta + omega * dt, pos + rot2(theta) @ body


def ekf_propagate(est: StateEstimate, omega: float, u: float, dt: float, *,
                  method: str = "expm", euler_mean: bool = False,
                  process_noise: np.ndarray | None = None) -> StateEstimate:
    """Propagate the extended filter over one held-input step."""
    if est.error_convention is not ErrorConvention.LINEAR:
        raise ValueError("ekf_propagate needs the additive error convention")
    theta, pos = _mean_step(est.mean.theta, est.mean.pos, omega, u, dt, euler_mean)
    if method == "rk4":
        P = _rk4_cov(est.cov, lambda s: ekf_error_dynamics(est.mean.theta + omega * s, u), dt)
    else:
        A = ekf_error_dynamics(est.mean.theta, u)
        Phi = np.eye(3) + dt * A  # A^2 = 0
        P = Phi @ est.cov @ Phi.T
    if process_noise is not None:
        P = P + process_noise * dt
    P = 0.5 * (P + P.T)
    return StateEstimate(Se2Element(Rotation2(theta), pos), P, ErrorConvention.LINEAR)


def ekf_update(est: StateEstimate, y, noise_cov, *, joseph: bool = False) -> StateEstimate:
    """Measurement update with additive state correction."""
    if est.error_convention is not ErrorConvention.LINEAR:
        raise ValueError("ekf_update needs the additive error convention")
    noise_cov = np.asarray(noise_cov, dtype=float)
    K, _ = _gain(est.cov, noise_cov)
    z = np.asarray(y, dtype=float) - est.mean.pos
    delta = K @ z
    mean = Se2Element(Rotation2(est.mean.theta + delta[0]), est.mean.pos + delta[1:])
    P = _posterior_cov(est.cov, K, noise_cov, joseph)
    return StateEstimate(mean, P, ErrorConvention.LINEAR)


def iekf_propagate(est: StateEstimate, omega: float, u: float, dt: float, *,
                   method: str = "expm", euler_mean: bool = False,
                   process_noise: np.ndarray | None = None,
                   variant: IekfLinearization = IekfLinearization.CONSISTENT) -> StateEstimate:
    """Propagate the invariant filter over one held-input step."""
    if est.error_convention is not ErrorConvention.LEFT_INVARIANT:
        raise ValueError("iekf_propagate needs the left-invariant error convention")
    theta, pos = _mean_step(est.mean.theta, est.mean.pos, omega, u, dt, euler_mean)
    A = iekf_error_dynamics(omega, u, variant)
    if method == "rk4":
        P = _rk4_cov(est.cov, lambda s: A, dt)
    else:
        Phi = _transition_from_dynamics(A, omega, dt)
        P = Phi @ est.cov @ Phi.T
    if process_noise is not None:
        P = P + process_noise * dt
    P = 0.5 * (P + P.T)
    return StateEstimate(Se2Element(Rotation2(theta), pos), P, ErrorConvention.LEFT_INVARIANT)


def iekf_update(est: StateEstimate, y, noise_cov, *, joseph: bool = False) -> StateEstimate:
    """Measurement update applied by right multiplication with exp(K z)."""
    if est.error_convention is not ErrorConvention.LEFT_INVARIANT:
        raise ValueError("iekf_update needs the left-invariant error convention")
    noise_cov = np.asarray(noise_cov, dtype=float)
    K, _ = _gain(est.cov, noise_cov)
    z = rot2(est.mean.theta).T @ (np.asarray(y, dtype=float) - est.mean.pos)
    mean = est.mean.compose(se2_exp(K @ z))
    P = _posterior_cov(est.cov, K, noise_cov, joseph)
    return StateEstimate(mean, P, ErrorConvention.LEFT_INVARIANT)


def _posterior_cov(P: np.ndarray, K: np.ndarray, noise_cov: np.ndarray,
                   joseph: bool) -> np.ndarray:
    ImKH = np.eye(3) - K @ H_POS
    if joseph:
        P = ImKH @ P @ ImKH.T + K @ noise_cov @ K.T
    else:
        P = ImKH @ P
    return _repair_cov(P)


# --------------------------------------------------------------------------
# Linear Kalman filter with a propagated exactness constraint


@dataclass
class LinearKfState:
    """Mean/covariance pair plus an optional constraint pair (C_t, alpha).

    The constraint rows follow dC/dt = -C A, so C x stays equal to alpha
    under the deterministic dynamics; the filter should preserve both
    C x_hat = alpha and C P C^T = 0 when started consistent.
    """

    mean: np.ndarray
    cov: np.ndarray
    constraint: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.constraint is not None:
            C, alpha = self.constraint
            self.constraint = (np.atleast_2d(np.asarray(C, dtype=float)),
                               np.atleast_1d(np.asarray(alpha, dtype=float)))


def linear_kf_propagate(state: LinearKfState, A: np.ndarray, dt: float) -> LinearKfState:
    """Exact zero-process-noise propagation over dt via the matrix exponential."""
    A = np.asarray(A, dtype=float)
    Phi = scipy.linalg.expm(A * dt)
    mean = Phi @ state.mean
    cov = Phi @ state.cov @ Phi.T
    cov = 0.5 * (cov + cov.T)
    constraint = None
    if state.constraint is not None:
        C, alpha = state.constraint
        constraint = (np.linalg.solve(Phi.T, C.T).T, alpha)
    return LinearKfState(mean, cov, constraint)


def linear_kf_update(state: LinearKfState, H: np.ndarray, y, N) -> LinearKfState:
    """Standard measurement update; raises SingularInnovation when needed."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    N = np.atleast_2d(np.asarray(N, dtype=float))
    S = H @ state.cov @ H.T + N
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularInnovation("innovation covariance is singular")
    K = np.linalg.solve(S.T, (state.cov @ H.T).T).T
    mean = state.mean + K @ (y - H @ state.mean)
    cov = (np.eye(len(state.mean)) - K @ H) @ state.cov
    cov = 0.5 * (cov + cov.T)
    return LinearKfState(mean, cov, state.constraint)


def linear_kf_step(state: LinearKfState, A, H, y, N, dt: float) -> LinearKfState:
    """Propagate over dt, then update with the measurement."""
    return linear_kf_update(linear_kf_propagate(state, A, dt), H, y, N)


# --------------------------------------------------------------------------
# Trajectory-driven runs


@dataclass
class FilterConfig:
    joseph: bool = False
    riccati_method: str = "expm"
    euler_mean: bool = False
    process_noise: np.ndarray | None = None
    linearization: IekfLinearization = IekfLinearization.CONSISTENT
    x0_hat: tuple[float, float] = (0.0, 0.0)
    p0: np.ndarray = field(default_factory=default_initial_cov)


@dataclass
class EstimateTrace:
    """Per-step record of a filter run, time-aligned with the trajectory."""

    filter_kind: str
    theta0_hat: float
    trajectory: Trajectory
    times: np.ndarray
    theta_hat: np.ndarray
    x_hat: np.ndarray
    err_theta: np.ndarray
    err_pos: np.ndarray
    manifold_resid: np.ndarray
    cov6: np.ndarray            # columns P11,P12,P13,P22,P23,P33
    gain_norm: np.ndarray
    upd_indices: np.ndarray     # state indices of the update steps
    gains: np.ndarray           # (m, 3, 2), gain used at each update
    innovations: np.ndarray     # (m, 2)

    def update_heading_errors(self) -> np.ndarray:
        """Heading error right after each update (unwrapped)."""
        return self.err_theta[self.upd_indices]

    def final_pos_error(self, tail: int = 1000) -> float:
        tail = min(tail, len(self.err_pos))
        return float(np.median(self.err_pos[-tail:]))

    def radius_error(self) -> np.ndarray:
        """|distance from start| minus odometer arc length, per sample."""
        radius = np.linalg.norm(self.x_hat - self.x_hat[0], axis=1)
        arc = np.concatenate([[0.0], np.cumsum(self.trajectory.u * self.trajectory.dt)])
        return radius - arc

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,theta_hat,x1_hat,x2_hat,err_theta,err_pos,manifold_resid,"
                     "P11,P12,P13,P22,P23,P33,gain_norm\n")
            for i in range(len(self.times)):
                row = [self.times[i], self.theta_hat[i], self.x_hat[i, 0], self.x_hat[i, 1],
                       self.err_theta[i], self.err_pos[i], self.manifold_resid[i],
                       *self.cov6[i], self.gain_norm[i]]
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _cov6(P: np.ndarray) -> tuple[float, float, float, float, float, float]:
    return P[0, 0], P[0, 1], P[0, 2], P[1, 1], P[1, 2], P[2, 2]


def run_filter(filter_kind: str, trajectory: Trajectory, theta0_hat: float,
               config: FilterConfig | None = None) -> EstimateTrace:
    """Drive a filter over a simulated trajectory.

    ``filter_kind`` is "ekf" or "iekf".  The initial position estimate is
    the known starting point and the initial covariance carries heading
    dispersion only, unless overridden through ``config``.
    """
    if filter_kind not in ("ekf", "iekf"):
        raise ValueError(f"unknown filter kind {filter_kind!r}")
    cfg = config or FilterConfig()
    invariant = filter_kind == "iekf"

    n = trajectory.n_steps
    times = trajectory.times
    omega = trajectory.omega
    u = trajectory.u
    dt = trajectory.dt
    N = trajectory.gps_cov
    meas_at = np.zeros(n + 1, dtype=np.int64) - 1
    meas_at[trajectory.meas_indices] = np.arange(len(trajectory.meas_indices))
    n_meas = len(trajectory.meas_indices)

    theta = float(theta0_hat)
    pos = np.array(cfg.x0_hat, dtype=float)
    P = np.asarray(cfg.p0, dtype=float).copy()

    # The position is a sum of ~n small increments against a growing base;
    # compensated accumulation keeps its roundoff near eps*|pos| instead of
    # growing like n^2 * eps * dt, which would drown the late-time error
    # decay being measured.  The heading needs no compensation (its base
    # stays O(1)) and plain rounding is what pins the half-turn fixed point.
    pos_comp = np.zeros(2)

    def add_theta(delta: float) -> None:
        nonlocal theta
        theta = theta + delta

    def add_pos(delta: np.ndarray) -> None:
        nonlocal pos, pos_comp
        y = delta - pos_comp
        t = pos + y
        pos_comp = (t - pos) - y
        pos = t

    theta_hat = np.empty(n + 1)
    x_hat = np.empty((n + 1, 2))
    err_theta = np.empty(n + 1)
    err_pos = np.empty(n + 1)
    manifold_resid = np.empty(n + 1)
    cov6 = np.empty((n + 1, 6))
    gain_norm = np.zeros(n + 1)
    gains = np.zeros((n_meas, 3, 2))
    innovations = np.zeros((n_meas, 2))

    b = trajectory.b
    truth_theta = trajectory.headings
    truth_pos = trajectory.positions

    def record(i: int) -> None:
        theta_hat[i] = theta
        x_hat[i] = pos
        err_theta[i] = theta - truth_theta[i]
        err_pos[i] = math.hypot(pos[0] - truth_pos[i, 0], pos[1] - truth_pos[i, 1])
        c, s = math.cos(theta), math.sin(theta)
        bx = c * pos[0] + s * pos[1] - b[i, 0]
        by = -s * pos[0] + c * pos[1] - b[i, 1]
        manifold_resid[i] = math.hypot(bx, by)
        cov6[i] = _cov6(P)

    record(0)

    rk4 = cfg.riccati_method == "rk4"
    cache_key = None
    Phi = None
    for k in range(n):
        om = float(omega[k])
        sp = float(u[k])

        # mean
        theta_old = theta
        if cfg.euler_mean:
            add_pos(rot2(theta_old) @ np.array([sp * dt, 0.0]))
            add_theta(om * dt)
        else:
            a_c, b_c = _sinc_pair(om * dt)
            body = np.array([sp * dt * a_c, sp * dt * b_c])
            add_pos(rot2(theta_old) @ body)
            add_theta(om * dt)

        # covariance
        if rk4:
            if invariant:
                A = iekf_error_dynamics(om, sp, cfg.linearization)
                P = _rk4_cov(P, lambda s: A, dt)
            else:
                P = _rk4_cov(P, lambda s: ekf_error_dynamics(theta_old + om * s, sp), dt)
        else:
            key = (om, sp) if invariant else (theta_old, sp)
            if key != cache_key:
                if invariant:
                    A = iekf_error_dynamics(om, sp, cfg.linearization)
                    Phi = _transition_from_dynamics(A, om, dt)
                else:
                    Phi = np.eye(3) + dt * ekf_error_dynamics(theta_old, sp)
                cache_key = key
            P = Phi @ P @ Phi.T
        if cfg.process_noise is not None:
            P = P + cfg.process_noise * dt

        j = meas_at[k + 1]
        if j >= 0:
            y = trajectory.meas_values[j]
            K, _ = _gain(P, N)
            if invariant:
                c, s = math.cos(theta), math.sin(theta)
                dy0, dy1 = y[0] - pos[0], y[1] - pos[1]
                z = np.array([c * dy0 + s * dy1, -s * dy0 + c * dy1])
                corr = K @ z
                a_c, b_c = _sinc_pair(corr[0])
                body = np.array([a_c * corr[1] - b_c * corr[2],
                                 b_c * corr[1] + a_c * corr[2]])
                add_pos(rot2(theta) @ body)
                add_theta(corr[0])
            else:
                z = y - pos
                corr = K @ z
                add_theta(corr[0])
                add_pos(corr[1:].copy())
            P = _posterior_cov(P, K, N, cfg.joseph)
            gains[j] = K
            innovations[j] = z
            gain_norm[k + 1] = math.sqrt(float(np.sum(K * K)))

        record(k + 1)

    return EstimateTrace(
        filter_kind=filter_kind,
        theta0_hat=float(theta0_hat),
        trajectory=trajectory,
        times=times,
        theta_hat=theta_hat,
        x_hat=x_hat,
        err_theta=err_theta,
        err_pos=err_pos,
        manifold_resid=manifold_resid,
        cov6=cov6,
        gain_norm=gain_norm,
        upd_indices=trajectory.meas_indices.copy(),
        gains=gains,
        innovations=innovations,
    )
