"""Scenario simulation: ground truth, odometry, position fixes, reference curve.

The car follows unicycle kinematics

    d/dt theta = omega(t),   d/dt x = (cos theta, sin theta) * u(t)

driven by input profiles that are held constant over each integration step.
With the default ``exact`` integrator every step composes the pose with the
group exponential of the held inputs, so the discrete trajectory solves the
held-input system exactly and the body-frame identity

    R(theta)^T x = b          (b the reference curve, same inputs)

holds to machine precision at every sample in the perfect-odometry case.
An ``euler`` integrator is kept behind a flag for parity studies.

The module owns all randomness.  Draws come from counter-based bit
generators keyed on (seed, stream), one stream for odometry noise and one
for position-fix noise, so enabling one noise source never shifts the
other's sequence.  Draw order inside a stream is fixed: per step the
heading component, then the two translation components, then (fix stream)
the two measurement components on measurement steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import yaml

from .se2 import Rotation2, Se2Element, b_matrix, exp, rot2

__all__ = [
    "BadConfig",
    "Profile",
    "ScenarioConfig",
    "CarState",
    "OdometryInput",
    "GpsMeasurement",
    "ReferenceCurve",
    "Trajectory",
    "simulate",
    "traveled_distance",
    "transform_trajectory",
]


class BadConfig(ValueError):
    """Raised for inconsistent scenario parameters."""


@dataclass(frozen=True)
class Profile:
    """Scalar input profile: constant, sinusoid, or piecewise-constant."""

    kind: str = "constant"
    value: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0
    phase: float = 0.0
    offset: float = 0.0
    times: tuple = ()
    values: tuple = ()

    @staticmethod
    def constant(value: float) -> "Profile":
        return Profile(kind="constant", value=float(value))

    @staticmethod
    def sinusoid(amplitude: float, period: float, phase: float = 0.0, offset: float = 0.0) -> "Profile":
        return Profile(kind="sinusoid", amplitude=float(amplitude), period=float(period),
                       phase=float(phase), offset=float(offset))

    @staticmethod
    def piecewise(times: Iterable[float], values: Iterable[float]) -> "Profile":
        times = tuple(float(t) for t in times)
        values = tuple(float(v) for v in values)
        if len(times) != len(values) or not times or times[0] != 0.0:
            raise BadConfig("piecewise profile needs matching lists starting at t=0")
        return Profile(kind="piecewise", times=times, values=values)

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "sinusoid":
            return self.offset + self.amplitude * math.sin(2.0 * math.pi * t / self.period + self.phase)
        if self.kind == "piecewise":
            idx = int(np.searchsorted(self.times, t, side="right")) - 1
            return self.values[max(idx, 0)]
        raise BadConfig(f"unknown profile kind {self.kind!r}")

    @staticmethod
    def from_dict(d) -> "Profile":
        if isinstance(d, (int, float)):
            return Profile.constant(d)
        kind = d.get("kind", "constant")
        if kind == "constant":
            return Profile.constant(d.get("value", 0.0))
        if kind == "sinusoid":
            return Profile.sinusoid(d.get("amplitude", 0.0), d.get("period", 1.0),
                                    d.get("phase", 0.0), d.get("offset", 0.0))
        if kind == "piecewise":
            return Profile.piecewise(d.get("times", ()), d.get("values", ()))
        raise BadConfig(f"unknown profile kind {kind!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative scenario description.

    ``gps_cov`` is the scalar r of an isotropic fix covariance N = r I2.
    ``gps_noise_on`` controls whether fix noise is actually drawn; None
    means "iff gps_cov > 0", while an explicit False yields exact fixes
    with gps_cov kept as the nominal tuning handed to estimators (the
    observer setting).  ``odom_cov`` holds (heading-rate, velocity)
    variances in rate units; per-step increment noise scales with dt^2.
    """

    dt: float = 0.01
    duration: float = 10.0
    meas_period: float = 0.05
    theta0: float = 0.0
    x0: tuple[float, float] = (0.0, 0.0)
    u_profile: Profile = field(default_factory=lambda: Profile.constant(1.0))
    omega_profile: Profile = field(default_factory=lambda: Profile.constant(0.0))
    gps_cov: float = 0.0
    gps_noise_on: bool | None = None
    odom_cov: tuple[float, float] = (0.0, 0.0)
    seed: int = 0
    integrator: str = "exact"

    @staticmethod
    def from_yaml(path) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        return ScenarioConfig.from_dict(raw)

    @staticmethod
    def from_dict(raw: dict) -> "ScenarioConfig":
        kwargs = {}
        for key in ("dt", "duration", "meas_period", "theta0", "gps_cov",
                    "gps_noise_on", "seed", "integrator"):
            if key in raw:
                kwargs[key] = raw[key]
        if "x0" in raw:
            kwargs["x0"] = tuple(raw["x0"])
        if "u_profile" in raw:
            kwargs["u_profile"] = Profile.from_dict(raw["u_profile"])
        if "omega_profile" in raw:
            kwargs["omega_profile"] = Profile.from_dict(raw["omega_profile"])
        if "odom_cov" in raw:
            oc = raw["odom_cov"]
            if isinstance(oc, dict):
                kwargs["odom_cov"] = (float(oc.get("omega", 0.0)), float(oc.get("pos", 0.0)))
            else:
                kwargs["odom_cov"] = (float(oc[0]), float(oc[1]))
        return ScenarioConfig(**kwargs)

    def with_overrides(self, **kwargs) -> "ScenarioConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class CarState:
    heading: float
    position: np.ndarray
    time: float

    @property
    def pose(self) -> Se2Element:
        return Se2Element(Rotation2(self.heading), self.position)


@dataclass(frozen=True)
class OdometryInput:
    omega: float
    u: float
    w_omega: float = 0.0
    w_x: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class GpsMeasurement:
    time: float
    y: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class ReferenceCurve:
    """Body-frame reference curve sampled at every simulation step."""

    times: np.ndarray
    values: np.ndarray  # (n+1, 2)

    def at(self, i: int) -> np.ndarray:
        return self.values[i]


@dataclass
class Trajectory:
    """Time-aligned ground truth, inputs, measurements and reference curve.

    ``headings``/``positions`` have n+1 samples, inputs have n entries (one
    per step, held over [t_k, t_{k+1})).  Measurement times are the integer
    multiples of ``meas_period`` starting at the first period.
    """

    config: ScenarioConfig
    seed: int
    dt: float
    meas_period: float
    times: np.ndarray            # (n+1,)
    headings: np.ndarray         # (n+1,)
    positions: np.ndarray        # (n+1, 2)
    b: np.ndarray                # (n+1, 2)
    omega: np.ndarray            # (n,) true heading rates (held)
    u: np.ndarray                # (n,) true speeds (held)
    odo_theta: np.ndarray        # (n,) measured increment rotations
    odo_pos: np.ndarray          # (n, 2) measured increment translations
    odo_noise: np.ndarray        # (n, 3) realized increment noise draws
    meas_indices: np.ndarray     # (m,) state indices carrying a fix
    meas_values: np.ndarray      # (m, 2)
    gps_cov: np.ndarray          # (2, 2) nominal fix covariance
    gps_noise_on: bool = False   # whether fix noise was actually drawn

    @property
    def n_steps(self) -> int:
        return len(self.omega)

    @property
    def reference(self) -> ReferenceCurve:
        return ReferenceCurve(self.times, self.b)

    def state(self, i: int) -> CarState:
        return CarState(float(self.headings[i]), self.positions[i].copy(), float(self.times[i]))

    def input(self, k: int) -> OdometryInput:
        return OdometryInput(float(self.omega[k]), float(self.u[k]),
                             float(self.odo_noise[k, 0]), tuple(self.odo_noise[k, 1:]))

    def measurement(self, j: int) -> GpsMeasurement:
        return GpsMeasurement(float(self.times[self.meas_indices[j]]),
                              self.meas_values[j].copy(), self.gps_cov.copy())

    def measurements(self) -> list[GpsMeasurement]:
        return [self.measurement(j) for j in range(len(self.meas_indices))]

    def odometry_increment(self, k: int) -> Se2Element:
        return Se2Element(Rotation2(float(self.odo_theta[k])), self.odo_pos[k])

    def meas_flags(self) -> np.ndarray:
        flags = np.zeros(len(self.times), dtype=bool)
        flags[self.meas_indices] = True
        return flags

    def to_csv(self, path) -> None:
        flags = self.meas_flags()
        y = np.full((len(self.times), 2), np.nan)
        y[self.meas_indices] = self.meas_values
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,theta,x1,x2,b1,b2,omega,u,meas_flag,y1,y2\n")
            for i in range(len(self.times)):
                om = self.omega[i] if i < self.n_steps else math.nan
                uu = self.u[i] if i < self.n_steps else math.nan
                row = [self.times[i], self.headings[i], self.positions[i, 0],
                       self.positions[i, 1], self.b[i, 0], self.b[i, 1], om, uu]
                cells = [repr(float(v)) for v in row]
                cells.append(str(int(flags[i])))
                cells += [repr(float(y[i, 0])), repr(float(y[i, 1]))]
                fh.write(",".join(cells) + "\n")


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def simulate(config: ScenarioConfig, seed: int | None = None) -> Trajectory:
    """Simulate a scenario.  Deterministic given (config, seed)."""
    if config.dt <= 0:
        raise BadConfig("dt must be positive")
    if config.duration <= 0:
        raise BadConfig("duration must be positive")
    ratio = config.meas_period / config.dt
    meas_every = int(round(ratio))
    if meas_every < 1 or abs(ratio - meas_every) > 1e-9 * max(1.0, ratio):
        raise BadConfig("meas_period must be a positive integer multiple of dt")
    if config.gps_cov < 0 or min(config.odom_cov) < 0:
        raise BadConfig("covariances must be positive semi-definite")
    if config.integrator not in ("exact", "euler"):
        raise BadConfig(f"unknown integrator {config.integrator!r}")

    if seed is None:
        seed = config.seed
    n = int(round(config.duration / config.dt))
    dt = config.dt

    times = np.arange(n + 1) * dt
    headings = np.empty(n + 1)
    positions = np.empty((n + 1, 2))
    b = np.zeros((n + 1, 2))
    omega = np.empty(n)
    u = np.empty(n)
    odo_theta = np.empty(n)
    odo_pos = np.empty((n, 2))
    odo_noise = np.zeros((n, 3))

    headings[0] = config.theta0
    positions[0] = config.x0

    odom_on = config.odom_cov[0] > 0 or config.odom_cov[1] > 0
    if config.gps_noise_on is None:
        gps_on = config.gps_cov > 0
    else:
        gps_on = bool(config.gps_noise_on) and config.gps_cov > 0
    odom_gen = _rng(seed, 0) if odom_on else None
    gps_gen = _rng(seed, 1) if gps_on else None
    std_w = (math.sqrt(config.odom_cov[0]) * dt, math.sqrt(config.odom_cov[1]) * dt)
    std_v = math.sqrt(config.gps_cov)

    meas_indices = np.arange(meas_every, n + 1, meas_every)
    meas_values = np.empty((len(meas_indices), 2))
    meas_set = set(int(i) for i in meas_indices)
    meas_j = 0

    euler = config.integrator == "euler"

    constant_inputs = (config.omega_profile.kind == "constant"
                       and config.u_profile.kind == "constant")
    if constant_inputs and not odom_on and not euler:
        # Held inputs never change: the whole trajectory has a closed form.
        om = config.omega_profile(0.0)
        sp = config.u_profile(0.0)
        omega[:] = om
        u[:] = sp
        inc = exp(np.array([om * dt, sp * dt, 0.0]))
        odo_theta[:] = inc.theta
        odo_pos[:] = inc.pos
        headings[:] = config.theta0 + om * times
        arc = sp * times
        phi = om * times
        small = np.abs(phi) < 1e-4
        acoef = np.where(small, 1.0 - phi * phi / 6.0, np.sin(np.where(small, 1.0, phi)) / np.where(small, 1.0, phi))
        bcoef = np.where(small, phi / 2.0 - phi ** 3 / 24.0, (1.0 - np.cos(phi)) / np.where(small, 1.0, phi))
        b[:, 0] = acoef * arc
        b[:, 1] = -bcoef * arc
        local = np.stack([acoef * arc, bcoef * arc], axis=1)
        positions[:] = np.asarray(config.x0) + local @ rot2(config.theta0).T
        meas_values[:] = positions[meas_indices]
        if gps_on:
            meas_values += std_v * gps_gen.standard_normal((len(meas_indices), 2))
        return Trajectory(
            config=config, seed=seed, dt=dt, meas_period=config.meas_period,
            times=times, headings=headings, positions=positions, b=b,
            omega=omega, u=u, odo_theta=odo_theta, odo_pos=odo_pos,
            odo_noise=odo_noise, meas_indices=meas_indices,
            meas_values=meas_values, gps_cov=config.gps_cov * np.eye(2),
            gps_noise_on=gps_on,
        )

    for k in range(n):
        t = times[k]
        om = config.omega_profile(t)
        sp = config.u_profile(t)
        omega[k] = om
        u[k] = sp

        if odom_on:
            draws = odom_gen.standard_normal(3)
            w = np.array([draws[0] * std_w[0], draws[1] * std_w[1], draws[2] * std_w[1]])
            odo_noise[k] = w
        else:
            w = None

        th = headings[k]
        if euler:
            inc_theta = om * dt
            inc_pos = np.array([sp * dt, 0.0])
            headings[k + 1] = th + inc_theta
            positions[k + 1] = positions[k] + rot2(th) @ inc_pos
            if w is not None:
                headings[k + 1] += w[0]
                positions[k + 1] += rot2(th) @ w[1:]
            b[k + 1] = b[k] + dt * (-om * (np.array([-b[k, 1], b[k, 0]]))
                                    + np.array([sp, 0.0]))
        else:
            inc = exp(np.array([om * dt, sp * dt, 0.0]))
            inc_theta = inc.theta
            inc_pos = inc.pos
            step = inc if w is None else inc.compose(exp(w))
            headings[k + 1] = th + step.theta
            positions[k + 1] = positions[k] + rot2(th) @ step.pos
            # Reference-curve step: same held inputs, integrated in closed form.
            b[k + 1] = rot2(-om * dt) @ b[k] + b_matrix(-om * dt) @ np.array([sp * dt, 0.0])

        odo_theta[k] = inc_theta
        odo_pos[k] = inc_pos

        if (k + 1) in meas_set:
            y = positions[k + 1].copy()
            if gps_on:
                y = y + std_v * gps_gen.standard_normal(2)
            meas_values[meas_j] = y
            meas_j += 1

    return Trajectory(
        config=config,
        seed=seed,
        dt=dt,
        meas_period=config.meas_period,
        times=times,
        headings=headings,
        positions=positions,
        b=b,
        omega=omega,
        u=u,
        odo_theta=odo_theta,
        odo_pos=odo_pos,
        odo_noise=odo_noise,
        meas_indices=meas_indices,
        meas_values=meas_values,
        gps_cov=config.gps_cov * np.eye(2),
        gps_noise_on=gps_on,
    )


def traveled_distance(positions: np.ndarray, u: np.ndarray | None = None,
                      dt: float | None = None) -> tuple[float, float]:
    """(polyline arc length, odometric integral of u dt).

    The odometric integral uses the trapezoidal rule on the held per-step
    rates, which is exact for the piecewise-constant input model.  When no
    rates are given only the polyline length is meaningful and the second
    entry is nan.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or len(positions) < 2:
        raise ValueError("need at least two position samples")
    seglen = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    polyline = float(seglen.sum())
    if u is None or dt is None:
        return polyline, math.nan
    odometric = float(np.sum(np.asarray(u, dtype=float) * dt))
    return polyline, odometric


def transform_trajectory(traj: Trajectory, gamma: Se2Element) -> Trajectory:
    """Move the whole scenario by a fixed frame change (left group action).

    Ground truth poses are left-multiplied and measurements move as points;
    body-frame quantities (inputs, increments, reference curve) are
    untouched.
    """
    headings = traj.headings + gamma.theta
    positions = traj.positions @ gamma.rot.matrix.T + gamma.pos
    meas_values = traj.meas_values @ gamma.rot.matrix.T + gamma.pos
    return replace(
        traj,
        headings=headings,
        positions=positions,
        meas_values=meas_values,
    )
