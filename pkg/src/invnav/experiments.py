"""Named, reproducible experiments behind the command-line runner.

Each experiment simulates its documented default scenario, runs the
estimators, writes plot-ready CSV artifacts plus a machine-readable
summary, and returns one record per acceptance check.  All thresholds come
from :mod:`invnav.criteria` so the CLI summaries and the test suite share a
single source of truth.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import yaml

from . import criteria
from .analysis import cross_validate_iekf, fit_rate, riccati_a_sequence
from .filters import (
    FilterConfig,
    LinearKfState,
    linear_kf_propagate,
    linear_kf_update,
    run_filter,
)
from .se2 import Rotation2, Se2Element
from .sim import Profile, ScenarioConfig, Trajectory, simulate, transform_trajectory, traveled_distance
from .smoothing import (
    Parametrization,
    PriorSpec,
    build_linearization,
    dead_reckon,
    finite_difference_jacobian_gap,
    gn_solve,
    problem_from_trajectory,
    sliding_window_run,
)

__all__ = [
    "CheckResult",
    "ExperimentResult",
    "UnknownExperiment",
    "EXPERIMENTS",
    "list_experiments",
    "describe_experiment",
    "run_experiment",
]

DEG = math.pi / 180.0


class UnknownExperiment(KeyError):
    pass


@dataclass
class CheckResult:
    name: str
    measured: float
    threshold: float
    op: str  # "<", ">", "in" ...
    passed: bool

    @staticmethod
    def less(name: str, measured: float, threshold: float) -> "CheckResult":
        return CheckResult(name, float(measured), float(threshold), "<",
                           bool(measured < threshold))

    @staticmethod
    def greater(name: str, measured: float, threshold: float) -> "CheckResult":
        return CheckResult(name, float(measured), float(threshold), ">",
                           bool(measured > threshold))

    @staticmethod
    def within(name: str, measured: float, lo: float, hi: float) -> "CheckResult":
        ok = bool(lo <= measured <= hi)
        return CheckResult(f"{name}[{lo},{hi}]", float(measured), float(hi), "in", ok)


@dataclass
class ExperimentResult:
    name: str
    checks: list[CheckResult]
    artifacts: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


@dataclass
class ExperimentSpec:
    """Resolved run request: name, seeds, output dir, size override."""

    name: str
    out_dir: Path
    seeds: list[int]
    steps: int | None = None
    config_overrides: dict = field(default_factory=dict)
    quiet: bool = False


# --------------------------------------------------------------------------
# Scenario builders


def _fig_scenario(duration: float, *, noisy: bool, seed: int = 0,
                  dt: float = 0.01) -> ScenarioConfig:
    return ScenarioConfig(
        dt=dt, duration=duration, meas_period=0.05, theta0=0.0,
        u_profile=Profile.constant(1.0), omega_profile=Profile.constant(0.0),
        gps_cov=1.0, gps_noise_on=noisy, seed=seed,
    )


def _straight_observer_scenario(n_updates: int, seed: int = 0) -> ScenarioConfig:
    dt = 0.05
    return ScenarioConfig(
        dt=dt, duration=n_updates * dt, meas_period=dt, theta0=0.0,
        u_profile=Profile.constant(1.0), omega_profile=Profile.constant(0.0),
        gps_cov=1.0, gps_noise_on=False, seed=seed,
    )


def _batch_scenario(seed: int) -> ScenarioConfig:
    # Line at 7 m/s sampled at 10 Hz, odometry rate noise (0.01 rad^2/s^2,
    # 0.1 m^2/s^2), fixes of variance 0.01 m^2 every five steps.
    return ScenarioConfig(
        dt=0.1, duration=5.0, meas_period=0.5, theta0=0.0,
        u_profile=Profile.constant(7.0), omega_profile=Profile.constant(0.0),
        gps_cov=0.01, odom_cov=(0.01, 0.1), seed=seed,
    )


BATCH_HEADING_OFFSET = -3.0 * math.pi / 4.0
BATCH_PRIOR_COV = np.diag([(3.0 * math.pi / 4.0) ** 2, 0.0025, 0.0025])

WITNESS_HEADING_OFFSET = 9.0 * math.pi / 10.0
WITNESS_POSITION_OFFSET = (0.25, 0.25)
WITNESS_PRIOR_COV = np.diag([(math.pi / 4.0) ** 2, 0.125, 0.125])


def _witness_scenario(seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        dt=0.1, duration=10.0, meas_period=0.5, theta0=0.0,
        u_profile=Profile.constant(0.5),
        omega_profile=Profile.sinusoid(0.3, 8.0),
        gps_cov=1e-5, odom_cov=(0.01, 0.1), seed=seed,
    )


def _batch_prior(traj: Trajectory) -> PriorSpec:
    mean = Se2Element(Rotation2(traj.headings[0] + BATCH_HEADING_OFFSET),
                      traj.positions[0])
    return PriorSpec(mean, BATCH_PRIOR_COV)


def _witness_prior(traj: Trajectory) -> PriorSpec:
    mean = Se2Element(Rotation2(traj.headings[0] + WITNESS_HEADING_OFFSET),
                      traj.positions[0] + np.asarray(WITNESS_POSITION_OFFSET))
    return PriorSpec(mean, WITNESS_PRIOR_COV)


# --------------------------------------------------------------------------
# Individual experiments


def _exp_fig1_manifold(spec: ExperimentSpec) -> ExperimentResult:
    cfg = _fig_scenario(duration=10.0, noisy=True, seed=spec.seeds[0])
    traj = simulate(cfg)
    ekf = run_filter("ekf", traj, 40.0 * DEG)
    iekf = run_filter("iekf", traj, 40.0 * DEG)

    upto = traj.meas_indices[criteria.EKF_MANIFOLD_LEAK_UPDATES - 1]
    checks = [
        CheckResult.less("iekf_manifold_residual_max",
                         float(np.max(iekf.manifold_resid)),
                         criteria.MANIFOLD_RESIDUAL_MAX),
        CheckResult.greater("ekf_manifold_residual_early_max",
                            float(np.max(ekf.manifold_resid[: upto + 1])),
                            criteria.EKF_MANIFOLD_LEAK_MIN),
    ]
    arts = []
    for name, obj in (("truth.csv", traj), ("ekf.csv", ekf), ("iekf.csv", iekf)):
        path = spec.out_dir / name
        obj.to_csv(path)
        arts.append(str(path))
    return ExperimentResult("fig1-manifold", checks, arts)


def _exp_fig2_odometer(spec: ExperimentSpec) -> ExperimentResult:
    cfg = _fig_scenario(duration=5.0, noisy=True, seed=spec.seeds[0])
    traj = simulate(cfg)
    ekf = run_filter("ekf", traj, 40.0 * DEG)
    iekf = run_filter("iekf", traj, 40.0 * DEG)

    iekf_radius = iekf.radius_error()
    ekf_radius = ekf.radius_error()
    upto = traj.meas_indices[min(criteria.ODOMETER_EKF_WITHIN_UPDATES,
                                 len(traj.meas_indices)) - 1]
    checks = [
        CheckResult.less("iekf_odometer_error_max",
                         float(np.max(np.abs(iekf_radius))), criteria.ODOMETER_IEKF_TOL),
        CheckResult.greater("ekf_odometer_error_early_max",
                            float(np.max(np.abs(ekf_radius[: upto + 1]))),
                            criteria.ODOMETER_EKF_MIN),
    ]
    arc = np.concatenate([[0.0], np.cumsum(traj.u * traj.dt)])
    path = spec.out_dir / "odometer.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,arc,iekf_radius,ekf_radius\n")
        for i in range(len(traj.times)):
            fh.write(",".join(repr(float(v)) for v in
                              (traj.times[i], arc[i],
                               arc[i] + iekf_radius[i],
                               arc[i] + ekf_radius[i])) + "\n")
    ekf_poly, odo = traveled_distance(ekf.x_hat, traj.u, traj.dt)
    iekf_poly, _ = traveled_distance(iekf.x_hat, traj.u, traj.dt)
    extra = spec.out_dir / "path_lengths.csv"
    with open(extra, "w", encoding="utf-8") as fh:
        fh.write("quantity,value\n")
        fh.write(f"odometric_integral,{odo!r}\n")
        fh.write(f"ekf_polyline,{ekf_poly!r}\n")
        fh.write(f"iekf_polyline,{iekf_poly!r}\n")
    return ExperimentResult("fig2-odometer", checks, [str(path), str(extra)])


def _exp_fig3_convergence(spec: ExperimentSpec) -> ExperimentResult:
    n_updates = spec.steps or criteria.CONVERGENCE_STEPS
    cfg = _straight_observer_scenario(n_updates, seed=spec.seeds[0])
    traj = simulate(cfg)
    runs = {
        "ekf5": run_filter("ekf", traj, 5.0 * DEG),
        "ekf40": run_filter("ekf", traj, 40.0 * DEG),
        "iekf5": run_filter("iekf", traj, 5.0 * DEG),
        "iekf40": run_filter("iekf", traj, 40.0 * DEG),
    }
    finals = {k: tr.final_pos_error() for k, tr in runs.items()}
    checks = [
        CheckResult.greater("ekf5_final_over_iekf40_final",
                            finals["ekf5"] / max(finals["iekf40"], 1e-300),
                            criteria.CONVERGENCE_MARGIN),
        CheckResult.less("iekf40_final_vs_ekf5_margin",
                         finals["iekf40"],
                         finals["ekf5"] / criteria.CONVERGENCE_MARGIN),
    ]
    idx = np.unique(np.geomspace(1, n_updates, num=min(2000, n_updates)).astype(int))
    path = spec.out_dir / "convergence.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,t,err_ekf5,err_ekf40,err_iekf5,err_iekf40\n")
        for n in idx:
            fh.write(f"{n},{float(runs['ekf5'].times[n])!r},"
                     + ",".join(repr(float(runs[k].err_pos[n]))
                                for k in ("ekf5", "ekf40", "iekf5", "iekf40")) + "\n")
    finals_path = spec.out_dir / "final_errors.csv"
    with open(finals_path, "w", encoding="utf-8") as fh:
        fh.write("run,final_pos_error\n")
        for k, v in finals.items():
            fh.write(f"{k},{v!r}\n")
    return ExperimentResult("fig3-convergence", checks, [str(path), str(finals_path)])


def _thm3_single(args) -> float:
    theta_hat0, omega_profile, noisy, seed, n_steps = args
    cfg = ScenarioConfig(
        dt=0.01, duration=n_steps * 0.01, meas_period=0.05, theta0=0.3,
        u_profile=Profile.constant(1.0), omega_profile=omega_profile,
        gps_cov=1.0, gps_noise_on=noisy, seed=seed,
    )
    traj = simulate(cfg)
    trace = run_filter("iekf", traj, theta_hat0)
    return float(np.max(trace.manifold_resid))


def _exp_thm3_residual(spec: ExperimentSpec) -> ExperimentResult:
    n_steps = spec.steps or criteria.MANIFOLD_STEPS
    rng = np.random.Generator(np.random.Philox(key=np.array([spec.seeds[0], 7], dtype=np.uint64)))
    headings = rng.uniform(-math.pi, math.pi, size=criteria.MANIFOLD_HEADINGS)
    profiles = [Profile.constant(0.3), Profile.sinusoid(0.5, 7.0)]
    jobs = []
    for h in headings:
        for prof in profiles:
            for noisy in (False, True):
                for s in spec.seeds:
                    jobs.append((float(h), prof, noisy, s, n_steps))
    with ThreadPoolExecutor(max_workers=min(8, os.cpu_count() or 1)) as pool:
        residuals = list(pool.map(_thm3_single, jobs))
    worst = max(residuals)

    checks = [CheckResult.less("iekf_manifold_residual_max", worst,
                               criteria.MANIFOLD_RESIDUAL_MAX)]
    checks += _invariance_checks(spec.seeds[0])

    path = spec.out_dir / "residuals.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("theta_hat0,profile,noisy,seed,max_residual\n")
        for (h, prof, noisy, s, _), res in zip(jobs, residuals):
            fh.write(f"{h!r},{prof.kind},{int(noisy)},{s},{res!r}\n")
    return ExperimentResult("thm3-residual", checks, [str(path)])


def _invariance_checks(seed: int) -> list[CheckResult]:
    """Frame-change equivariance of the invariant filter; additive witness."""
    cfg = ScenarioConfig(
        dt=0.01, duration=10.0, meas_period=0.05, theta0=0.2,
        u_profile=Profile.constant(1.0),
        omega_profile=Profile.sinusoid(0.5, 7.0),
        gps_cov=1.0, seed=seed,
    )
    traj = simulate(cfg)
    gamma = Se2Element(Rotation2(1.0), np.array([3.0, -2.0]))
    traj_g = transform_trajectory(traj, gamma)
    theta_hat0 = 40.0 * DEG

    base = run_filter("iekf", traj, theta_hat0)
    moved = run_filter("iekf", traj_g, theta_hat0 + gamma.theta,
                       FilterConfig(x0_hat=tuple(gamma.pos)))
    rotated_means = base.x_hat @ gamma.rot.matrix.T + gamma.pos
    mean_gap = float(np.max(np.linalg.norm(moved.x_hat - rotated_means, axis=1)))
    heading_gap = float(np.max(np.abs(moved.theta_hat - (base.theta_hat + gamma.theta))))
    cov_gap = float(np.max(np.abs(moved.cov6 - base.cov6)))
    gain_gap = float(np.max(np.abs(moved.gains - base.gains)))
    innov_gap = float(np.max(np.abs(moved.innovations - base.innovations)))

    ekf_base = run_filter("ekf", traj, theta_hat0)
    ekf_moved = run_filter("ekf", traj_g, theta_hat0 + gamma.theta,
                           FilterConfig(x0_hat=tuple(gamma.pos)))
    ekf_rot = ekf_base.x_hat @ gamma.rot.matrix.T + gamma.pos
    ekf_gap = float(np.max(np.linalg.norm(ekf_moved.x_hat - ekf_rot, axis=1)))

    tol = criteria.LEFT_INVARIANCE_TOL
    return [
        CheckResult.less("iekf_invariance_mean_gap", max(mean_gap, heading_gap), tol),
        CheckResult.less("iekf_invariance_cov_gain_innov_gap",
                         max(cov_gap, gain_gap, innov_gap), tol),
        CheckResult.greater("ekf_noninvariance_witness", ekf_gap,
                            criteria.EKF_NONINVARIANCE_MIN),
    ]


def _exp_thm4_rates(spec: ExperimentSpec) -> ExperimentResult:
    n_updates = spec.steps or criteria.RATE_FIT_N_RANGE[1]
    cfg = _straight_observer_scenario(n_updates, seed=spec.seeds[0])
    traj = simulate(cfg)
    trace = run_filter("iekf", traj, 40.0 * DEG)

    heading = np.abs(trace.update_heading_errors())
    pos = trace.err_pos[trace.upd_indices]
    values_h = np.concatenate([[np.nan], heading])
    values_p = np.concatenate([[np.nan], pos])
    lo = max(1, min(criteria.RATE_FIT_N_RANGE[0], n_updates // 100))
    hi = min(criteria.RATE_FIT_N_RANGE[1], n_updates)
    fit_h = fit_rate(values_h, (lo, hi))
    fit_p = fit_rate(values_p, (lo, hi))

    ant_updates = min(n_updates, 10_000)
    cfg_ant = _straight_observer_scenario(ant_updates, seed=spec.seeds[0])
    traj_ant = simulate(cfg_ant)
    trace_ant = run_filter("iekf", traj_ant, math.pi)
    ant_gap = float(np.max(np.abs(trace_ant.theta_hat - math.pi)))

    checks = [
        CheckResult.within("heading_error_loglog_slope", fit_h.slope,
                           *criteria.HEADING_SLOPE_RANGE),
        CheckResult.within("position_error_loglog_slope", fit_p.slope,
                           *criteria.POSITION_SLOPE_RANGE),
        CheckResult.less("antipode_heading_drift", ant_gap, criteria.ANTIPODE_TOL),
    ]
    path = spec.out_dir / "rates.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,heading_error,pos_error,heading_scaled_n3\n")
        step = max(1, n_updates // 10_000)
        for n in range(1, n_updates + 1, step):
            fh.write(f"{n},{heading[n-1]!r},{pos[n-1]!r},{heading[n-1] * n**3!r}\n")
    fit_path = spec.out_dir / "rate_fits.csv"
    with open(fit_path, "w", encoding="utf-8") as fh:
        fh.write("quantity,slope,intercept,n_lo,n_hi\n")
        fh.write(f"heading,{fit_h.slope!r},{fit_h.intercept!r},{fit_h.n_lo},{fit_h.n_hi}\n")
        fh.write(f"position,{fit_p.slope!r},{fit_p.intercept!r},{fit_p.n_lo},{fit_p.n_hi}\n")
    return ExperimentResult("thm4-rates", checks, [str(path), str(fit_path)])


def _exp_prop1_linear(spec: ExperimentSpec) -> ExperimentResult:
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    H = np.array([[1.0, 0.0]])
    N = np.array([[0.01]])
    dt = 0.01
    n_steps = spec.steps or 1000
    meas_every = 10

    x_true = np.array([0.7, -0.3])
    alpha = np.array([x_true[0]])
    C = np.array([[1.0, 0.0]])
    state = LinearKfState(np.array([x_true[0], 0.0]), np.diag([0.0, 1.0]), (C, alpha))
    rng = np.random.Generator(np.random.Philox(key=np.array([spec.seeds[0], 3], dtype=np.uint64)))
    Phi = scipy.linalg.expm(A * dt)
    worst_cx = 0.0
    worst_cpc = 0.0
    rows = []
    for k in range(1, n_steps + 1):
        x_true = Phi @ x_true
        state = linear_kf_propagate(state, A, dt)
        if k % meas_every == 0:
            y = H @ x_true + math.sqrt(N[0, 0]) * rng.standard_normal(1)
            state = linear_kf_update(state, H, y, N)
        Ck, al = state.constraint
        cx = float(np.max(np.abs(Ck @ state.mean - al)))
        cpc = float(np.max(np.abs(Ck @ state.cov @ Ck.T)))
        worst_cx = max(worst_cx, cx)
        worst_cpc = max(worst_cpc, cpc)
        rows.append((k * dt, state.mean[0], state.mean[1], cx, cpc))

    checks = [
        CheckResult.less("constraint_mean_drift", worst_cx, criteria.LINEAR_CONSTRAINT_TOL),
        CheckResult.less("constraint_cov_drift", worst_cpc, criteria.LINEAR_CONSTRAINT_TOL),
    ]
    path = spec.out_dir / "prop1.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,xhat1,xhat2,cx_err,cpc\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return ExperimentResult("prop1-linear", checks, [str(path)])


def _exp_appb_crosscheck(spec: ExperimentSpec) -> ExperimentResult:
    dt_meas = 0.05
    cf = riccati_a_sequence(math.pi / 2, 1.0, dt_meas, criteria.RICCATI_N_MAX)
    rel_gap = cf.max_relative_gap()

    n_updates = criteria.CROSSCHECK_N_UPDATES
    cfg = _straight_observer_scenario(n_updates, seed=spec.seeds[0])
    traj = simulate(cfg)
    trace = run_filter("iekf", traj, 40.0 * DEG)
    report = cross_validate_iekf(trace, cf)

    checks = [
        CheckResult.less("riccati_recursive_vs_closed_rel", rel_gap,
                         criteria.RICCATI_REL_TOL),
        CheckResult.less("crosscheck_heading_gap", report.max_heading_gap,
                         criteria.CROSSCHECK_TOL),
        CheckResult.less("crosscheck_gain_row_gap", report.max_gain_gap,
                         criteria.CROSSCHECK_TOL),
        CheckResult.less("crosscheck_innovation_gap", report.max_innovation_gap,
                         criteria.CROSSCHECK_TOL),
    ]
    path = spec.out_dir / "riccati.csv"
    report.to_csv(path)
    return ExperimentResult("appB-crosscheck", checks, [str(path)])


_PARAM_ORDER = [Parametrization.INVARIANT, Parametrization.LINEAR,
                Parametrization.GRISETTI, Parametrization.FORSTER]


def _batch_single(seed: int) -> dict[str, tuple[int, float]]:
    traj = simulate(_batch_scenario(seed))
    prior = _batch_prior(traj)
    problem = problem_from_trajectory(traj, 0, traj.n_steps, prior)
    init = dead_reckon(prior.mean, problem.inputs)
    out = {}
    for param in _PARAM_ORDER:
        _, log = gn_solve(problem, init, param, max_iters=25, tol=1e-12)
        out[param.value] = (log.iterations_to_plateau(criteria.COST_PLATEAU_FRACTION),
                            float(log.cost[-1]))
    return out


def _exp_smoothing_batch(spec: ExperimentSpec) -> ExperimentResult:
    seeds = spec.seeds if len(spec.seeds) >= 2 else list(range(spec.seeds[0],
                                                               spec.seeds[0] + criteria.BATCH_SEEDS))
    with ThreadPoolExecutor(max_workers=min(8, os.cpu_count() or 1)) as pool:
        per_seed = list(pool.map(_batch_single, seeds))

    medians = {}
    for param in _PARAM_ORDER:
        medians[param.value] = float(np.median([d[param.value][0] for d in per_seed]))
    checks = []
    for other in ("linear", "grisetti", "forster"):
        checks.append(CheckResult.less(
            f"median_plateau_iters_invariant_vs_{other}",
            medians["invariant"], medians[other]))

    checks += _jacobian_checks(spec.seeds[0])

    path = spec.out_dir / "plateau_iters.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("seed,param,iters_to_plateau,final_cost\n")
        for s, d in zip(seeds, per_seed):
            for param in _PARAM_ORDER:
                it, cost = d[param.value]
                fh.write(f"{s},{param.value},{it},{cost!r}\n")
    return ExperimentResult("smoothing-batch", checks, [str(path)])


def _jacobian_checks(seed: int) -> list[CheckResult]:
    """Finite-difference gates and estimate-independence of the information."""
    cfg = ScenarioConfig(
        dt=0.1, duration=1.0, meas_period=0.5, theta0=0.4,
        u_profile=Profile.constant(7.0), omega_profile=Profile.constant(0.2),
        gps_cov=0.01, gps_noise_on=False, seed=seed,
    )
    traj = simulate(cfg)
    input_cov = np.diag([1e-4, 1e-3, 1e-3])
    prior_mean = Se2Element(Rotation2(traj.headings[0] + 0.3),
                            traj.positions[0] + np.array([0.1, -0.2]))
    prior = PriorSpec(prior_mean, np.diag([0.5, 0.1, 0.1]))
    problem = problem_from_trajectory(traj, 0, traj.n_steps, prior, input_cov=input_cov)
    truth = [traj.state(i).pose for i in range(traj.n_steps + 1)]

    worst_fd = 0.0
    for param in _PARAM_ORDER:
        worst_fd = max(worst_fd, finite_difference_jacobian_gap(problem, truth, param))

    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 11], dtype=np.uint64)))
    perturbed = [Se2Element(Rotation2(chi.theta + rng.normal(0, 0.5)),
                            chi.pos + rng.normal(0, 1.0, size=2)) for chi in truth]
    info_a = build_linearization(problem, truth, Parametrization.INVARIANT).information(include_prior=False)
    info_b = build_linearization(problem, perturbed, Parametrization.INVARIANT).information(include_prior=False)
    info_gap = float(np.max(np.abs(info_a - info_b)))

    return [
        CheckResult.less("jacobian_fd_gap_all_params", worst_fd, criteria.JACOBIAN_FD_TOL),
        CheckResult.less("invariant_information_estimate_dependence", info_gap,
                         criteria.INFO_INDEPENDENCE_TOL),
    ]


def _witness_single(seed: int) -> dict[str, float]:
    traj = simulate(_witness_scenario(seed))
    prior = _witness_prior(traj)
    out = {}
    for param in _PARAM_ORDER:
        trace = sliding_window_run(traj, 5, param, 1, prior=prior)
        out[param.value] = trace.heading_rmse()
    return out


def _exp_smoothing_window(spec: ExperimentSpec) -> ExperimentResult:
    seeds = spec.seeds if len(spec.seeds) >= 2 else list(range(spec.seeds[0],
                                                               spec.seeds[0] + criteria.WITNESS_SEEDS))
    with ThreadPoolExecutor(max_workers=min(8, os.cpu_count() or 1)) as pool:
        per_seed = list(pool.map(_witness_single, seeds))

    medians = {p.value: float(np.median([d[p.value] for d in per_seed]))
               for p in _PARAM_ORDER}
    checks = []
    for other in ("linear", "grisetti", "forster"):
        checks.append(CheckResult.less(
            f"median_heading_rmse_invariant_vs_{other}",
            medians["invariant"], medians[other]))

    # Window covering the whole problem must match the batch solve.
    traj = simulate(_batch_scenario(spec.seeds[0]).with_overrides(duration=2.0))
    prior = _batch_prior(traj)
    problem = problem_from_trajectory(traj, 0, traj.n_steps, prior)
    init = dead_reckon(prior.mean, problem.inputs)
    batch_est, _ = gn_solve(problem, init, Parametrization.INVARIANT,
                            max_iters=60, tol=1e-13)
    trace = sliding_window_run(traj, traj.n_steps + 1, Parametrization.INVARIANT,
                               60, prior=prior, tol=1e-13)
    gap = 0.0
    for a, b in zip(batch_est, trace.final_estimates):
        gap = max(gap, abs(a.theta - b.theta), float(np.max(np.abs(a.pos - b.pos))))
    checks.append(CheckResult.less("full_window_equals_batch", gap,
                                   criteria.BATCH_WINDOW_EQUIV_TOL))

    path = spec.out_dir / "witness_rmse.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("seed,param,heading_rmse\n")
        for s, d in zip(seeds, per_seed):
            for p in _PARAM_ORDER:
                fh.write(f"{s},{p.value},{d[p.value]!r}\n")
    return ExperimentResult("smoothing-window", checks, [str(path)])


# --------------------------------------------------------------------------
# Registry and runner


EXPERIMENTS = {
    "fig1-manifold": (_exp_fig1_manifold,
                      "Straight line, noisy fixes (r=1, every 0.05 s, dt=0.01, 10 s), "
                      "initial heading guess off by 40 deg: the invariant filter stays on "
                      "the reachable set (residual < 1e-9) while the additive filter "
                      "leaves it within 20 updates."),
    "fig2-odometer": (_exp_fig2_odometer,
                      "Same scenario over 5 s: distance-from-start of the invariant "
                      "estimate equals the odometer arc length to 1e-9; the additive "
                      "filter is off by more than 1e-3 within 50 updates."),
    "fig3-convergence": (_exp_fig3_convergence,
                         "Noise-free straight line, dt = fix period = 0.05 s, 1e6 fixes "
                         "(override with --steps): the additive filter started 5 deg off "
                         "ends more than 10x worse than the invariant filter started "
                         "40 deg off."),
    "thm3-residual": (_exp_thm3_residual,
                      "20 random initial headings x {constant, sinusoidal} turn rate x "
                      "{noise-free, noisy} fixes, 1e4 steps each (one run per seed in "
                      "--seed, default 0): invariant-filter body-frame residual stays "
                      "below 1e-9; plus frame-change equivariance checks (1e-10) with "
                      "an additive-filter witness."),
    "thm4-rates": (_exp_thm4_rates,
                   "Noise-free straight line (u=1, fix period 0.05 s, r=1): log-log "
                   "slopes of heading/position error over fixes 1e3..1e5 are -3/-2 "
                   "within 0.2; a half-turn initial error stays fixed to machine "
                   "precision."),
    "prop1-linear": (_exp_prop1_linear,
                     "Double integrator with known initial position (C=(1,0)): the "
                     "linear filter preserves C x_hat = alpha and C P C^T = 0 to 1e-9 "
                     "over 1e3 steps."),
    "appB-crosscheck": (_exp_appb_crosscheck,
                        "Closed-form post-update variance vs its recursion to n=1e5 "
                        "(rel. 1e-12); full filter vs scalar heading recursion, gain row "
                        "and innovation formulas over 1e3 fixes (1e-9)."),
    "smoothing-batch": (_exp_smoothing_batch,
                        "Line at 7 m/s, 10 Hz odometry with rate noise (0.01, 0.1), "
                        "fixes r=0.01 every 5 steps, initial heading off by -3pi/4: "
                        "the invariant parametrization reaches its cost plateau in "
                        "fewer Gauss-Newton iterations (median over 10 seeds) than "
                        "linear/grisetti/forster; plus finite-difference Jacobian and "
                        "information-matrix independence gates."),
    "smoothing-window": (_exp_smoothing_window,
                         "Sliding window 5, one GN iteration per arrival, fixes "
                         "r=1e-5 every 5 steps, initial heading off by 9pi/10, 100 "
                         "seeds: median heading RMSE of the invariant parametrization "
                         "beats each alternative; window covering the whole problem "
                         "reproduces the batch solve to 1e-8."),
}


def list_experiments() -> list[str]:
    return sorted(EXPERIMENTS)


def describe_experiment(name: str) -> str:
    if name not in EXPERIMENTS:
        raise UnknownExperiment(name)
    return EXPERIMENTS[name][1]


def _write_summaries(out_dir: Path, result: ExperimentResult, spec: ExperimentSpec) -> None:
    flat = out_dir / "summary.txt"
    with open(flat, "w", encoding="utf-8") as fh:
        fh.write(f"experiment={result.name}\n")
        fh.write(f"seeds={','.join(str(s) for s in spec.seeds)}\n")
        for c in result.checks:
            fh.write(f"{c.name}.measured={c.measured!r}\n")
            fh.write(f"{c.name}.threshold={c.threshold!r}\n")
            fh.write(f"{c.name}.op={c.op}\n")
            fh.write(f"{c.name}.pass={'true' if c.passed else 'false'}\n")
        fh.write(f"overall_pass={'true' if result.passed else 'false'}\n")
    tree = out_dir / "checks.yaml"
    payload = {
        "experiment": result.name,
        "seeds": list(spec.seeds),
        "checks": [
            {"name": c.name, "measured": c.measured, "threshold": c.threshold,
             "op": c.op, "pass": c.passed}
            for c in result.checks
        ],
        "artifacts": result.artifacts,
        "overall_pass": result.passed,
    }
    with open(tree, "w", encoding="utf-8") as fh:
        yaml.safe_dump(payload, fh, sort_keys=False)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run one named experiment; writes artifacts and summaries to out_dir."""
    if spec.name not in EXPERIMENTS:
        raise UnknownExperiment(spec.name)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    func, _ = EXPERIMENTS[spec.name]
    result = func(spec)
    _write_summaries(spec.out_dir, result, spec)
    if not spec.quiet:
        for c in result.checks:
            status = "PASS" if c.passed else "FAIL"
            print(f"[{status}] {result.name}:{c.name} measured={c.measured:.6g} "
                  f"{c.op} {c.threshold:.6g}")
        print(f"{result.name}: {'PASS' if result.passed else 'FAIL'}")
    return result
