"""Closed-form behavior of the invariant filter on the straight-line scenario.

With constant-rate fixes (period dt_meas, isotropic variance r), no process
noise, and straight-line motion, the invariant filter's covariance collapses
to a single scalar a(t): heading variance a, position-coupled entries t*a
and t^2*a, everything else zero.  Between fixes a is constant; each fix at
t_n = n*dt_meas maps it through

    a+ = a - t_n^2 a^2 / (r + t_n^2 a)        (harmonic step: 1/a+ = 1/a + t_n^2/r)

whose accumulated form is the square-pyramidal sum

    1/a(t_n+) = 1/p0 + (dt_meas^2 / r) * n(n+1)(2n+1)/6.

The heading error then obeys the scalar recursion

    e_{n+1} = e_n - alpha_n sin(e_n),   alpha_n = t_n^2 a(t_n) / (t_n^2 a(t_n) + r)

which decays like 1/n^3 for any start away from a half-turn; the half-turn
itself is a fixed point.  This module evaluates those forms and checks a
full filter run against them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .filters import EstimateTrace

__all__ = [
    "NonPositiveSample",
    "ScenarioMismatch",
    "RiccatiClosedForm",
    "HeadingRecursionTrace",
    "RateFit",
    "CrossValidationReport",
    "riccati_a_sequence",
    "alpha_sequence",
    "heading_recursion",
    "fit_rate",
    "cross_validate_iekf",
]


class NonPositiveSample(ValueError):
    """A log-log fit received a non-positive sample."""


class ScenarioMismatch(ValueError):
    """The filter trace was not produced on the straight-line scenario."""


@dataclass
class RiccatiClosedForm:
    """Post-update variance sequence, both recursive and in closed form.

    ``a_recursive[n]`` and ``a_closed[n]`` hold the variance right after the
    n-th fix (index 0 is the prior p0, untouched).
    """

    p0: float
    r: float
    dt_meas: float
    a_recursive: np.ndarray
    a_closed: np.ndarray

    def a_pre_update(self, n: int) -> float:
        """Variance at the n-th fix before it is applied (n >= 1)."""
        if n < 1:
            raise ValueError("fixes are indexed from 1")
        return float(self.a_closed[n - 1])

    @property
    def n_max(self) -> int:
        return len(self.a_closed) - 1

    def max_relative_gap(self) -> float:
        return float(np.max(np.abs(self.a_recursive - self.a_closed) / self.a_closed))


def riccati_a_sequence(p0: float, r: float, delta_t: float, n_max: int) -> RiccatiClosedForm:
    """Evaluate the variance recursion and its closed form up to n_max fixes."""
    if p0 <= 0 or r <= 0 or delta_t <= 0:
        raise ValueError("p0, r and delta_t must be positive")
    a_rec = np.empty(n_max + 1)
    a_cl = np.empty(n_max + 1)
    a_rec[0] = p0
    a_cl[0] = p0

    # Recursion in the harmonic domain with compensated summation: 1/a grows
    # like n^3 and the comparison below is at 1e-12 relative.
    inv_a = 1.0 / p0
    comp = 0.0
    dt2_over_r = delta_t * delta_t / r
    for n in range(1, n_max + 1):
        term = dt2_over_r * float(n) * float(n)
        y = term - comp
        t = inv_a + y
        comp = (t - inv_a) - y
        inv_a = t
        a_rec[n] = 1.0 / inv_a
        # pyramid sum is exact in integers
        a_cl[n] = 1.0 / (1.0 / p0 + dt2_over_r * (n * (n + 1) * (2 * n + 1) / 6.0))
    return RiccatiClosedForm(p0, r, delta_t, a_rec, a_cl)


def alpha_sequence(closed_form: RiccatiClosedForm) -> np.ndarray:
    """Update contraction factors alpha_n in (0, 1); index 0 is unused (0)."""
    n_max = closed_form.n_max
    alphas = np.zeros(n_max + 1)
    dt = closed_form.dt_meas
    r = closed_form.r
    for n in range(1, n_max + 1):
        t2a = (n * dt) ** 2 * closed_form.a_pre_update(n)
        alphas[n] = t2a / (t2a + r)
    return alphas


@dataclass
class HeadingRecursionTrace:
    """Scalar heading-error recursion driven by the alpha sequence."""

    theta0: float
    alphas: np.ndarray
    theta_tilde: np.ndarray  # theta_tilde[n]: error right after the n-th fix

    def scaled_by_n3(self, start: int = 1) -> np.ndarray:
        n = np.arange(len(self.theta_tilde), dtype=float)
        out = np.full_like(self.theta_tilde, np.nan)
        out[start:] = self.theta_tilde[start:] * n[start:] ** 3
        return out


def heading_recursion(theta0_tilde: float, alphas: np.ndarray) -> HeadingRecursionTrace:
    """Iterate e <- e - alpha_n sin(e) from the initial heading error."""
    if abs(theta0_tilde) > math.pi + 1e-12:
        raise ValueError("initial heading error must lie in [-pi, pi]")
    n_max = len(alphas) - 1
    theta = np.empty(n_max + 1)
    theta[0] = theta0_tilde
    e = float(theta0_tilde)
    for n in range(1, n_max + 1):
        e = e - float(alphas[n]) * math.sin(e)
        theta[n] = e
    return HeadingRecursionTrace(float(theta0_tilde), np.asarray(alphas, dtype=float), theta)


@dataclass
class RateFit:
    slope: float
    intercept: float
    n_lo: int
    n_hi: int


def fit_rate(values, n_range: tuple[int, int] | None = None) -> RateFit:
    """Least-squares slope of log(value) against log(n).

    ``values[n]`` is indexed by fix count; index 0 is ignored.  The default
    window keeps the last two decades and discards the transient n < 100.
    """
    values = np.asarray(values, dtype=float)
    n_hi_avail = len(values) - 1
    if n_range is None:
        n_hi = n_hi_avail
        n_lo = max(100, n_hi // 100)
    else:
        n_lo, n_hi = int(n_range[0]), int(n_range[1])
    if not (1 <= n_lo < n_hi <= n_hi_avail):
        raise ValueError("fit window out of range")
    idx = np.arange(n_lo, n_hi + 1)
    v = values[idx]
    if np.any(~np.isfinite(v)) or np.any(v <= 0.0):
        raise NonPositiveSample("log-log fit needs positive finite samples")
    x = np.log(idx.astype(float))
    y = np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    return RateFit(float(slope), float(intercept), n_lo, n_hi)


@dataclass
class CrossValidationReport:
    """Per-fix agreement between a full filter run and the scalar forms."""

    n: np.ndarray
    a_n: np.ndarray                  # pre-update variance at each fix
    alpha_n: np.ndarray
    theta_tilde_filter: np.ndarray   # post-update, from the filter
    theta_tilde_scalar: np.ndarray   # post-update, from the recursion
    max_heading_gap: float
    max_gain_gap: float
    max_innovation_gap: float
    max_position_identity_gap: float

    def to_csv(self, path) -> None:
        scaled = self.theta_tilde_scalar * self.n.astype(float) ** 3
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("n,a_n,alpha_n,theta_tilde,theta_tilde_scaled_n3\n")
            for i in range(len(self.n)):
                row = [self.a_n[i], self.alpha_n[i], self.theta_tilde_filter[i], scaled[i]]
                fh.write(str(int(self.n[i])) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def cross_validate_iekf(trace: EstimateTrace, closed_form: RiccatiClosedForm) -> CrossValidationReport:
    """Check a full filter run against the scalar machinery, fix by fix.

    The trace must come from the straight-line scenario: zero turn rate,
    constant speed, noise-free fixes with isotropic covariance.  Compares
    the post-update heading error with the scalar recursion, the first gain
    row with (0, t a / (t^2 a + r)), the innovation with
    t u (cos e - 1, -sin e), and the position error with the heading error
    through the in-plane rotation identity.
    """
    traj = trace.trajectory
    if np.max(np.abs(traj.omega)) > 1e-12:
        raise ScenarioMismatch("turn rate must be identically zero")
    u = float(traj.u[0])
    if np.max(np.abs(traj.u - u)) > 1e-12:
        raise ScenarioMismatch("speed must be constant")
    N = traj.gps_cov
    if abs(N[0, 0] - N[1, 1]) > 0 or abs(N[0, 1]) > 0:
        raise ScenarioMismatch("fix covariance must be isotropic")
    r = float(N[0, 0])
    if abs(r - closed_form.r) > 1e-15 * max(1.0, r):
        raise ScenarioMismatch("fix variance differs from the closed form's r")
    if traj.gps_noise_on:
        # the scalar recursion models the noise-free observer case
        raise ScenarioMismatch("fixes must be noise-free")
    n_meas = len(trace.upd_indices)
    if closed_form.n_max < n_meas:
        raise ScenarioMismatch("closed form covers fewer fixes than the trace")
    dt_meas = traj.meas_period
    if abs(dt_meas - closed_form.dt_meas) > 1e-15 * max(1.0, dt_meas):
        raise ScenarioMismatch("fix period differs from the closed form's")

    alphas = alpha_sequence(closed_form)
    scalar = heading_recursion(float(trace.err_theta[0]), alphas[: n_meas + 1])

    ns = np.arange(1, n_meas + 1)
    a_pre = closed_form.a_closed[:n_meas]  # a at fix n, pre-update
    theta_filter = trace.update_heading_errors()
    theta_scalar = scalar.theta_tilde[1:]

    max_heading_gap = float(np.max(np.abs(theta_filter - theta_scalar))) if n_meas else 0.0

    max_gain_gap = 0.0
    max_innov_gap = 0.0
    max_pos_gap = 0.0
    for i, n in enumerate(ns):
        t_n = n * dt_meas
        a = a_pre[i]
        expected_row = np.array([0.0, t_n * a / (t_n * t_n * a + r)])
        max_gain_gap = max(max_gain_gap, float(np.max(np.abs(trace.gains[i][0] - expected_row))))
        e_pre = scalar.theta_tilde[i]  # error before this fix
        expected_z = t_n * u * np.array([math.cos(e_pre) - 1.0, -math.sin(e_pre)])
        max_innov_gap = max(max_innov_gap, float(np.max(np.abs(trace.innovations[i] - expected_z))))
        e_post = theta_filter[i]
        expected_pos_err = 2.0 * t_n * abs(u) * abs(math.sin(0.5 * e_post))
        idx = trace.upd_indices[i]
        max_pos_gap = max(max_pos_gap, abs(trace.err_pos[idx] - expected_pos_err))

    return CrossValidationReport(
        n=ns,
        a_n=a_pre.copy(),
        alpha_n=alphas[1: n_meas + 1],
        theta_tilde_filter=theta_filter,
        theta_tilde_scalar=theta_scalar,
        max_heading_gap=max_heading_gap,
        max_gain_gap=max_gain_gap,
        max_innovation_gap=max_innov_gap,
        max_position_identity_gap=max_pos_gap,
    )
