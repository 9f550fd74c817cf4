"""Acceptance thresholds shared by the experiment runner and the test suite.

Every pass/fail gate in the package reads from this module so the CLI
summaries and the tests can never drift apart.
"""

from __future__ import annotations

# Body-frame residual of the invariant filter against the reference curve.
MANIFOLD_RESIDUAL_MAX = 1e-9

# Linear-filter constraint preservation: |C x_hat - alpha| and |C P C^T|.
LINEAR_CONSTRAINT_TOL = 1e-9

# Recursive vs closed-form post-update variance, relative, up to n = 1e5.
RICCATI_REL_TOL = 1e-12
RICCATI_N_MAX = 100_000

# Full filter vs scalar recursion (heading, gain row, innovation).
CROSSCHECK_TOL = 1e-9
CROSSCHECK_N_UPDATES = 1000

# Log-log decay-rate windows, fitted over fixes n in [1e3, 1e5].
HEADING_SLOPE_RANGE = (-3.2, -2.8)
POSITION_SLOPE_RANGE = (-2.2, -1.8)
RATE_FIT_N_RANGE = (1000, 100_000)

# Half-turn initial error must stay put (machine precision).
ANTIPODE_TOL = 1e-15

# Long-run comparison: the extended filter's terminal position error must
# exceed the invariant filter's by at least this factor.
CONVERGENCE_MARGIN = 10.0
CONVERGENCE_STEPS = 1_000_000

# Odometer preservation: |distance from start - odometer arc length|.
ODOMETER_IEKF_TOL = 1e-9
ODOMETER_EKF_MIN = 1e-3
ODOMETER_EKF_WITHIN_UPDATES = 50

# The additive filter's updates leave the reachable set quickly.
EKF_MANIFOLD_LEAK_MIN = 0.01
EKF_MANIFOLD_LEAK_UPDATES = 20

# Frame-change equivariance of the invariant filter, and the additive
# filter's violation margin on the witness scenario.
LEFT_INVARIANCE_TOL = 1e-10
EKF_NONINVARIANCE_MIN = 1e-3

# Smoothing gates.
JACOBIAN_FD_TOL = 1e-6
INFO_INDEPENDENCE_TOL = 1e-12
PRIOR_JACOBIAN_FIXPOINT_TOL = 1e-10
COST_PLATEAU_FRACTION = 0.01
BATCH_SEEDS = 10
WITNESS_SEEDS = 100
BATCH_WINDOW_EQUIV_TOL = 1e-8

# Invariant-filter residual sweep sizes.
MANIFOLD_STEPS = 10_000
MANIFOLD_HEADINGS = 20
