"""Windowed MAP smoothing of planar poses under four parametrizations.

The trajectory model is group-driven dead reckoning with exponential
increment noise and position fixes:

    chi_{i+1} = chi_i U_i exp(w_i),    y_k = x_{t_k} + v_k

Each parametrization chooses a chart for the Gauss-Newton step (how a
tangent update is applied to a pose) and the matching residual
definitions:

* INVARIANT: update chi <- chi exp(xi); propagation residual
  log(U^-1 chi_i^-1 chi_{i+1}) with constant Jacobians (-Ad(U^-1), I);
  observation residual in the body frame with covariance rotated into
  it.  With isotropic fix covariance the whole information matrix is
  independent of the linearization point.
* LINEAR: plain additive chart on (theta, x) and vector-valued residuals.
* GRISETTI: pose-graph style relative-pose residual in the increment
  frame, additive chart with wrapped angle residuals.
* FORSTER: heading-plus-body-frame-position chart, chi <- (theta + xi_t,
  x + R(theta) xi_x), with the position residual expressed in the older
  body frame.

The GRISETTI and FORSTER rows reconstruct well-known pose-graph and
preintegration conventions adapted to the plane; all Jacobians here are
gated by finite-difference checks rather than trusted from any table.

Solves use dense QR (lstsq) on the stacked whitened system; windows are
small, so correctness and determinism beat sparsity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.linalg

from .se2 import (
    J2,
    Rotation2,
    Se2Element,
    adjoint,
    exp as se2_exp,
    inverse_right_jacobian,
    log as se2_log,
    rot2,
    wrap_angle,
)
from .sim import Trajectory

__all__ = [
    "Parametrization",
    "WindowMismatch",
    "SingularNormalEquations",
    "PriorSpec",
    "ObservationFactor",
    "FactorGraphProblem",
    "FactorBlock",
    "LinearizedSystem",
    "IterationLog",
    "SmootherTrace",
    "boxplus",
    "boxminus",
    "dead_reckon",
    "build_linearization",
    "gn_solve",
    "problem_cost",
    "problem_from_trajectory",
    "sliding_window_run",
]


class Parametrization(Enum):
    INVARIANT = "invariant"
    LINEAR = "linear"
    GRISETTI = "grisetti"
    FORSTER = "forster"


class WindowMismatch(ValueError):
    """Estimate list does not match the problem's state count."""


class SingularNormalEquations(np.linalg.LinAlgError):
    """The stacked system is rank deficient (e.g. no fixes, no prior)."""


@dataclass
class PriorSpec:
    mean: Se2Element
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3)
        _require_pd(self.cov, "prior covariance")


@dataclass
class ObservationFactor:
    state_index: int
    y: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float).reshape(2)
        self.cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        _require_pd(self.cov, "observation covariance")


@dataclass
class FactorGraphProblem:
    """Prior + per-step inputs + position fixes over a window of poses."""

    prior: PriorSpec | None
    inputs: list[Se2Element]
    input_covs: list[np.ndarray]
    observations: list[ObservationFactor] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.inputs) != len(self.input_covs):
            raise WindowMismatch("one covariance per input is required")
        self.input_covs = [np.asarray(q, dtype=float).reshape(3, 3) for q in self.input_covs]
        for q in self.input_covs:
            _require_pd(q, "input covariance")
        for obs in self.observations:
            if not 0 <= obs.state_index < self.n_states:
                raise WindowMismatch("observation index outside the window")

    @property
    def n_states(self) -> int:
        return len(self.inputs) + 1


def _require_pd(mat: np.ndarray, what: str) -> None:
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as err:
        raise ValueError(f"{what} must be positive definite") from err


def _sqrt_info(cov: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    return scipy.linalg.solve_triangular(L, np.eye(len(cov)), lower=True)


# --------------------------------------------------------------------------
# Charts


def boxplus(chi: Se2Element, xi: np.ndarray, param: Parametrization) -> Se2Element:
    xi = np.asarray(xi, dtype=float)
    if param is Parametrization.INVARIANT:
        return chi.compose(se2_exp(xi))
    if param is Parametrization.FORSTER:
        return Se2Element(Rotation2(chi.theta + xi[0]), chi.pos + chi.rot.matrix @ xi[1:])
    return Se2Element(Rotation2(chi.theta + xi[0]), chi.pos + xi[1:])


def boxminus(chi: Se2Element, anchor: Se2Element, param: Parametrization) -> np.ndarray:
    """Chart coordinates of chi around anchor; inverse of boxplus at xi=0."""
    if param is Parametrization.INVARIANT:
        return se2_log(anchor.inverse().compose(chi))
    if param is Parametrization.FORSTER:
        d = rot2(anchor.theta).T @ (chi.pos - anchor.pos)
        return np.array([wrap_angle(chi.theta - anchor.theta), d[0], d[1]])
    dtheta = chi.theta - anchor.theta
    if param is Parametrization.GRISETTI:
        dtheta = wrap_angle(dtheta)
    return np.array([dtheta, chi.pos[0] - anchor.pos[0], chi.pos[1] - anchor.pos[1]])


def dead_reckon(start: Se2Element, inputs: list[Se2Element]) -> list[Se2Element]:
    """Compose the inputs from the start pose; the default initial guess."""
    out = [start]
    for U in inputs:
        out.append(out[-1].compose(U))
    return out


# --------------------------------------------------------------------------
# Linearization


@dataclass
class FactorBlock:
    residual: np.ndarray
    jacobians: dict[int, np.ndarray]
    sqrt_info: np.ndarray
    is_prior: bool = False

    def whitened(self) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        return self.sqrt_info @ self.residual, {
            s: self.sqrt_info @ J for s, J in self.jacobians.items()
        }

    def cost(self) -> float:
        w = self.sqrt_info @ self.residual
        return float(w @ w)


@dataclass
class LinearizedSystem:
    n_states: int
    blocks: list[FactorBlock]

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        rows = sum(len(b.residual) for b in self.blocks)
        A = np.zeros((rows, 3 * self.n_states))
        r = np.zeros(rows)
        at = 0
        for blk in self.blocks:
            wr, wj = blk.whitened()
            m = len(wr)
            r[at: at + m] = wr
            for s, Jw in wj.items():
                A[at: at + m, 3 * s: 3 * s + 3] = Jw
            at += m
        return A, r

    def information(self, include_prior: bool = True) -> np.ndarray:
        dim = 3 * self.n_states
        info = np.zeros((dim, dim))
        for blk in self.blocks:
            if blk.is_prior and not include_prior:
                continue
            _, wj = blk.whitened()
            items = sorted(wj.items())
            for si, Ji in items:
                for sj, Jj in items:
                    info[3 * si: 3 * si + 3, 3 * sj: 3 * sj + 3] += Ji.T @ Jj
        return info

    def cost(self) -> float:
        return sum(blk.cost() for blk in self.blocks)


def _prior_block(prior: PriorSpec, chi0: Se2Element, param: Parametrization,
                 approx_identity: bool) -> FactorBlock:
    p = boxminus(chi0, prior.mean, param)
    if param is Parametrization.INVARIANT:
        Jac = np.eye(3) if approx_identity else inverse_right_jacobian(p)
    elif param is Parametrization.FORSTER:
        Jac = np.zeros((3, 3))
        Jac[0, 0] = 1.0
        Jac[1:, 1:] = rot2(prior.mean.theta).T @ chi0.rot.matrix
    else:
        Jac = np.eye(3)
    return FactorBlock(p, {0: Jac}, _sqrt_info(prior.cov), is_prior=True)


def _propagation_block(i: int, U: Se2Element, Q: np.ndarray,
                       chi_i: Se2Element, chi_n: Se2Element,
                       param: Parametrization) -> FactorBlock:
    if param is Parametrization.INVARIANT:
        r = se2_log(U.inverse().compose(chi_i.inverse()).compose(chi_n))
        Ji = -adjoint(U.inverse())
        Jn = np.eye(3)
        return FactorBlock(r, {i: Ji, i + 1: Jn}, _sqrt_info(Q))

    om, t = U.theta, U.pos
    Ri = chi_i.rot.matrix
    dx = chi_n.pos - chi_i.pos

    if param is Parametrization.LINEAR:
        r = np.empty(3)
        r[0] = chi_n.theta - chi_i.theta - om
        r[1:] = dx - Ri @ t
        Ji = np.zeros((3, 3))
        Ji[0, 0] = -1.0
        Ji[1:, 0] = -(J2 @ (Ri @ t))
        Ji[1:, 1:] = -np.eye(2)
        Jn = np.eye(3)
        return FactorBlock(r, {i: Ji, i + 1: Jn}, _sqrt_info(Q))

    if param is Parametrization.GRISETTI:
        Om = rot2(om)
        r = np.empty(3)
        r[0] = wrap_angle(chi_n.theta - chi_i.theta - om)
        r[1:] = Om.T @ (Ri.T @ dx - t)
        Ji = np.zeros((3, 3))
        Ji[0, 0] = -1.0
        Ji[1:, 0] = -(Om.T @ (J2 @ (Ri.T @ dx)))
        Ji[1:, 1:] = -(Om.T @ Ri.T)
        Jn = np.zeros((3, 3))
        Jn[0, 0] = 1.0
        Jn[1:, 1:] = Om.T @ Ri.T
        return FactorBlock(r, {i: Ji, i + 1: Jn}, _sqrt_info(Q))

    # FORSTER
    Rn = chi_n.rot.matrix
    r = np.empty(3)
    r[0] = chi_n.theta - chi_i.theta - om
    r[1:] = Ri.T @ dx - t
    Ji = np.zeros((3, 3))
    Ji[0, 0] = -1.0
    Ji[1:, 0] = -(J2 @ (Ri.T @ dx))
    Ji[1:, 1:] = -np.eye(2)
    Jn = np.zeros((3, 3))
    Jn[0, 0] = 1.0
    Jn[1:, 1:] = Ri.T @ Rn
    return FactorBlock(r, {i: Ji, i + 1: Jn}, _sqrt_info(Q))


def _observation_block(obs: ObservationFactor, chi: Se2Element,
                       param: Parametrization) -> FactorBlock:
    s = obs.state_index
    R = chi.rot.matrix
    if param is Parametrization.INVARIANT:
        r = R.T @ (obs.y - chi.pos)
        Jac = np.zeros((2, 3))
        Jac[:, 1:] = -np.eye(2)
        cov = R.T @ obs.cov @ R
        return FactorBlock(r, {s: Jac}, _sqrt_info(cov))
    r = obs.y - chi.pos
    Jac = np.zeros((2, 3))
    if param is Parametrization.FORSTER:
        Jac[:, 1:] = -R
    else:
        Jac[:, 1:] = -np.eye(2)
    return FactorBlock(r, {s: Jac}, _sqrt_info(obs.cov))


def build_linearization(problem: FactorGraphProblem, estimates: list[Se2Element],
                        param: Parametrization, *,
                        approx_prior_identity: bool = False) -> LinearizedSystem:
    """Residuals and Jacobians of every factor at the given estimates."""
    if len(estimates) != problem.n_states:
        raise WindowMismatch(
            f"expected {problem.n_states} estimates, got {len(estimates)}")
    blocks: list[FactorBlock] = []
    if problem.prior is not None:
        blocks.append(_prior_block(problem.prior, estimates[0], param, approx_prior_identity))
    for i, (U, Q) in enumerate(zip(problem.inputs, problem.input_covs)):
        blocks.append(_propagation_block(i, U, Q, estimates[i], estimates[i + 1], param))
    for obs in problem.observations:
        blocks.append(_observation_block(obs, estimates[obs.state_index], param))
    return LinearizedSystem(problem.n_states, blocks)


def problem_cost(problem: FactorGraphProblem, estimates: list[Se2Element],
                 param: Parametrization, *, approx_prior_identity: bool = False) -> float:
    return build_linearization(problem, estimates, param,
                               approx_prior_identity=approx_prior_identity).cost()


def finite_difference_jacobian_gap(problem: FactorGraphProblem,
                                   estimates: list[Se2Element],
                                   param: Parametrization, h: float = 1e-7, *,
                                   approx_prior_identity: bool = False) -> float:
    """Worst gap between analytic Jacobian entries and central differences.

    Differences are taken through the parametrization's own chart, so this
    gates both the residual definitions and the update rule.  The invariant
    propagation and observation rows use first-order (estimate-independent)
    Jacobians, exact where the residuals vanish; evaluate there.
    """
    base = build_linearization(problem, estimates, param,
                               approx_prior_identity=approx_prior_identity)
    worst = 0.0
    for s in range(problem.n_states):
        for j in range(3):
            xi = np.zeros(3)
            xi[j] = h
            est_p = list(estimates)
            est_p[s] = boxplus(estimates[s], xi, param)
            est_m = list(estimates)
            est_m[s] = boxplus(estimates[s], -xi, param)
            lin_p = build_linearization(problem, est_p, param,
                                        approx_prior_identity=approx_prior_identity)
            lin_m = build_linearization(problem, est_m, param,
                                        approx_prior_identity=approx_prior_identity)
            for blk, blk_p, blk_m in zip(base.blocks, lin_p.blocks, lin_m.blocks):
                fd_col = (blk_p.residual - blk_m.residual) / (2.0 * h)
                if s in blk.jacobians:
                    gap = np.max(np.abs(blk.jacobians[s][:, j] - fd_col))
                else:
                    gap = np.max(np.abs(fd_col))  # residual must not depend on s
                worst = max(worst, float(gap))
    return worst


# --------------------------------------------------------------------------
# Gauss-Newton


@dataclass
class IterationLog:
    cost: np.ndarray       # cost at iterate k (index 0 is the initial guess)
    step_norm: np.ndarray  # norm of the step taken from iterate k

    def iterations_to_plateau(self, fraction: float = 0.01) -> int:
        """First iterate from which the cost stays within fraction of final."""
        final = self.cost[-1]
        target = final * (1.0 + fraction)
        above = np.nonzero(self.cost > target)[0]
        return int(above[-1]) + 1 if len(above) else 0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iter,cost,step_norm\n")
            for k in range(len(self.cost)):
                step = self.step_norm[k] if k < len(self.step_norm) else math.nan
                fh.write(f"{k},{float(self.cost[k])!r},{float(step)!r}\n")


def _solve_step(lin: LinearizedSystem) -> np.ndarray:
    A, r = lin.stacked()
    xi, _, rank, _ = np.linalg.lstsq(A, -r, rcond=None)
    if rank < 3 * lin.n_states:
        raise SingularNormalEquations(
            f"stacked system has rank {rank} < {3 * lin.n_states}")
    return xi


def gn_solve(problem: FactorGraphProblem, init_estimates: list[Se2Element],
             param: Parametrization, max_iters: int = 25, tol: float = 1e-10, *,
             line_search: bool = False,
             approx_prior_identity: bool = False) -> tuple[list[Se2Element], IterationLog]:
    """Iterate linearize/solve/update until the step norm drops below tol."""
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    est = list(init_estimates)
    costs = [problem_cost(problem, est, param, approx_prior_identity=approx_prior_identity)]
    steps: list[float] = []
    for _ in range(max_iters):
        lin = build_linearization(problem, est, param,
                                  approx_prior_identity=approx_prior_identity)
        xi = _solve_step(lin)
        step_norm = float(np.linalg.norm(xi))
        scale = 1.0
        while True:
            candidate = [boxplus(chi, scale * xi[3 * s: 3 * s + 3], param)
                         for s, chi in enumerate(est)]
            new_cost = problem_cost(problem, candidate, param,
                                    approx_prior_identity=approx_prior_identity)
            if not line_search or new_cost <= costs[-1] or scale < 1e-4:
                break
            scale *= 0.5
        est = candidate
        costs.append(new_cost)
        steps.append(scale * step_norm)
        if steps[-1] < tol:
            break
    return est, IterationLog(np.asarray(costs), np.asarray(steps))


# --------------------------------------------------------------------------
# Problems from simulated trajectories


def problem_from_trajectory(traj: Trajectory, start: int, end: int,
                            prior: PriorSpec | None,
                            input_cov: np.ndarray | None = None) -> FactorGraphProblem:
    """Factor-graph window over trajectory states [start, end].

    ``input_cov`` overrides the per-step increment covariance; by default it
    is built from the scenario's odometry rate variances scaled by dt^2.
    """
    if not 0 <= start < end <= traj.n_steps:
        raise WindowMismatch("window outside the trajectory")
    if input_cov is None:
        q_om, q_x = traj.config.odom_cov
        if q_om <= 0 or q_x <= 0:
            raise ValueError("scenario has no odometry noise; pass input_cov")
        dt2 = traj.dt * traj.dt
        input_cov = np.diag([q_om * dt2, q_x * dt2, q_x * dt2])
    inputs = [traj.odometry_increment(k) for k in range(start, end)]
    covs = [np.asarray(input_cov, dtype=float)] * len(inputs)
    observations = []
    for j, idx in enumerate(traj.meas_indices):
        if start <= idx <= end:
            observations.append(ObservationFactor(int(idx) - start,
                                                  traj.meas_values[j],
                                                  traj.gps_cov))
    return FactorGraphProblem(prior, inputs, covs, observations)


# --------------------------------------------------------------------------
# Sliding-window (fixed-lag) smoothing


@dataclass
class SmootherTrace:
    """Newest-state estimates recorded after each arrival."""

    param: Parametrization
    window_size: int
    indices: np.ndarray
    times: np.ndarray
    theta_hat: np.ndarray
    x_hat: np.ndarray
    err_theta: np.ndarray
    err_pos: np.ndarray
    final_estimates: list[Se2Element]

    def heading_rmse(self) -> float:
        wrapped = np.array([wrap_angle(e) for e in self.err_theta])
        return float(np.sqrt(np.mean(wrapped ** 2)))

    def position_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.err_pos ** 2)))


def _marginalize_first(problem: FactorGraphProblem, estimates: list[Se2Element],
                       param: Parametrization,
                       approx_prior_identity: bool) -> tuple[FactorGraphProblem, list[Se2Element]]:
    """Fold the first state into a new prior on the second (Schur complement).

    The complement is taken in the chart at the current estimate of the kept
    state, and the resulting prior is re-anchored at the shifted mode.
    """
    blocks: list[FactorBlock] = []
    if problem.prior is not None:
        blocks.append(_prior_block(problem.prior, estimates[0], param, approx_prior_identity))
    blocks.append(_propagation_block(0, problem.inputs[0], problem.input_covs[0],
                                     estimates[0], estimates[1], param))
    for obs in problem.observations:
        if obs.state_index == 0:
            blocks.append(_observation_block(obs, estimates[0], param))

    dim = 6
    info = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    for blk in blocks:
        wr, wj = blk.whitened()
        for si, Ji in wj.items():
            rhs[3 * si: 3 * si + 3] -= Ji.T @ wr
            for sj, Jj in wj.items():
                info[3 * si: 3 * si + 3, 3 * sj: 3 * sj + 3] += Ji.T @ Jj
    L00 = info[:3, :3]
    L01 = info[:3, 3:]
    L11 = info[3:, 3:]
    try:
        sol = np.linalg.solve(L00, np.hstack([L01, rhs[:3, None]]))
    except np.linalg.LinAlgError as err:
        raise SingularNormalEquations("marginal block is singular") from err
    info_keep = L11 - L01.T @ sol[:, :3]
    rhs_keep = rhs[3:] - L01.T @ sol[:, 3]
    info_keep = 0.5 * (info_keep + info_keep.T)
    try:
        cov_keep = np.linalg.inv(info_keep)
        delta = np.linalg.solve(info_keep, rhs_keep)
    except np.linalg.LinAlgError as err:
        raise SingularNormalEquations("marginal prior is singular") from err
    cov_keep = 0.5 * (cov_keep + cov_keep.T)
    anchor = boxplus(estimates[1], delta, param)
    new_prior = PriorSpec(anchor, cov_keep)

    new_obs = [ObservationFactor(o.state_index - 1, o.y, o.cov)
               for o in problem.observations if o.state_index >= 1]
    new_problem = FactorGraphProblem(new_prior, problem.inputs[1:],
                                     problem.input_covs[1:], new_obs)
    return new_problem, estimates[1:]


def sliding_window_run(trajectory: Trajectory, window_size: int,
                       param: Parametrization, gn_iters_per_step: int, *,
                       prior: PriorSpec,
                       input_cov: np.ndarray | None = None,
                       tol: float = 1e-10,
                       approx_prior_identity: bool = False) -> SmootherTrace:
    """Fixed-lag smoothing over a whole trajectory.

    Per arrival: append the dead-reckoned state, marginalize the oldest
    state once the window exceeds ``window_size``, then run up to
    ``gn_iters_per_step`` Gauss-Newton iterations.  Records the newest
    state after each arrival.
    """
    if window_size < 2:
        raise ValueError("window_size must be at least 2")
    if input_cov is None:
        q_om, q_x = trajectory.config.odom_cov
        if q_om <= 0 or q_x <= 0:
            raise ValueError("scenario has no odometry noise; pass input_cov")
        dt2 = trajectory.dt * trajectory.dt
        input_cov = np.diag([q_om * dt2, q_x * dt2, q_x * dt2])
    input_cov = np.asarray(input_cov, dtype=float)

    meas_at = {int(idx): j for j, idx in enumerate(trajectory.meas_indices)}

    problem = FactorGraphProblem(prior, [], [], [])
    estimates = [prior.mean]
    first_in_window = 0

    n = trajectory.n_steps
    rec_idx = np.arange(1, n + 1)
    theta_hat = np.empty(n)
    x_hat = np.empty((n, 2))

    for k in range(1, n + 1):
        U = trajectory.odometry_increment(k - 1)
        problem.inputs.append(U)
        problem.input_covs.append(input_cov)
        estimates.append(estimates[-1].compose(U))
        j = meas_at.get(k)
        if j is not None:
            problem.observations.append(
                ObservationFactor(k - first_in_window, trajectory.meas_values[j],
                                  trajectory.gps_cov))
        if problem.n_states > window_size:
            problem, estimates = _marginalize_first(problem, estimates, param,
                                                    approx_prior_identity)
            first_in_window += 1
        if gn_iters_per_step > 0:
            estimates, _ = gn_solve(problem, estimates, param,
                                    max_iters=gn_iters_per_step, tol=tol,
                                    approx_prior_identity=approx_prior_identity)
        theta_hat[k - 1] = estimates[-1].theta
        x_hat[k - 1] = estimates[-1].pos

    err_theta = theta_hat - trajectory.headings[1:]
    err_pos = np.linalg.norm(x_hat - trajectory.positions[1:], axis=1)
    return SmootherTrace(
        param=param,
        window_size=window_size,
        indices=rec_idx,
        times=trajectory.times[1:],
        theta_hat=theta_hat,
        x_hat=x_hat,
        err_theta=err_theta,
        err_pos=err_pos,
        final_estimates=list(estimates),
    )
