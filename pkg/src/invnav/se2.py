"""Exact operations on the planar rigid-motion group.

A group element is a heading plus a 2D position, with the usual homogeneous
3x3 matrix semantics.  Tangent (Lie-algebra) coordinates are ordered
angle-first throughout the package:

    xi = (theta, x1, x2)

Headings are stored unwrapped; they are canonicalized to (-pi, pi] only at
reporting boundaries (``wrap_angle``) and inside ``log``, which needs the
canonical representative.

All functions are pure and allocate their results; nothing here mutates
shared state, so every operation is safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "J2",
    "SMALL_ANGLE",
    "ANTIPODE_TOL",
    "AntipodalHeading",
    "Rotation2",
    "Se2Element",
    "rot2",
    "wrap_angle",
    "b_matrix",
    "b_matrix_inverse",
    "wedge",
    "exp",
    "log",
    "adjoint",
    "algebra_adjoint",
    "right_jacobian",
    "inverse_right_jacobian",
    "compose",
    "inverse",
    "act",
]

# 90-degree rotation generator; commutes with every planar rotation.
J2 = np.array([[0.0, -1.0], [1.0, 0.0]])

# Below this |theta| the closed forms sin(t)/t etc. switch to their Taylor
# series; the two branches agree to ~1e-16 at the threshold.
SMALL_ANGLE = 1e-4

# |canonical theta| closer than this to pi makes the sign of log ambiguous.
ANTIPODE_TOL = 1e-9


class AntipodalHeading(ValueError):
    """Raised by ``log`` when the heading is a half-turn within tolerance."""


def wrap_angle(theta: float) -> float:
    """Canonical representative of an angle in (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:  # remainder returns [-pi, pi]; fold -pi to +pi
        wrapped += 2.0 * math.pi
    return wrapped


def rot2(theta: float) -> np.ndarray:
    """2x2 rotation matrix of the given angle."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Rotation2:
    """Planar rotation stored as an (unwrapped) angle in radians."""

    theta: float

    @property
    def matrix(self) -> np.ndarray:
        return rot2(self.theta)

    @property
    def canonical(self) -> float:
        return wrap_angle(self.theta)


@dataclass(frozen=True, eq=False)
class Se2Element:
    """Rigid planar motion: rotation part plus a 2-vector position (meters)."""

    rot: Rotation2
    pos: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "pos", np.asarray(self.pos, dtype=float).reshape(2))

    @staticmethod
    def identity() -> "Se2Element":
        return Se2Element(Rotation2(0.0), np.zeros(2))

    @classmethod
    def from_parts(cls, theta: float, pos) -> "Se2Element":
        return cls(Rotation2(float(theta)), pos)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Se2Element":
        theta = math.atan2(m[1, 0], m[0, 0])
        return cls(Rotation2(theta), m[:2, 2])

    @property
    def theta(self) -> float:
        return self.rot.theta

    @property
    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 representation."""
        m = np.eye(3)
        m[:2, :2] = self.rot.matrix
        m[:2, 2] = self.pos
        return m

    def compose(self, other: "Se2Element") -> "Se2Element":
        return Se2Element(
            Rotation2(self.theta + other.theta),
            self.rot.matrix @ other.pos + self.pos,
        )

    def __matmul__(self, other: "Se2Element") -> "Se2Element":
        return self.compose(other)

    def inverse(self) -> "Se2Element":
        rt = rot2(-self.theta)
        return Se2Element(Rotation2(-self.theta), -(rt @ self.pos))

    def act(self, point) -> np.ndarray:
        """Apply the motion to a 2D point: R p + x."""
        return self.rot.matrix @ np.asarray(point, dtype=float) + self.pos


def _sinc_pair(theta: float) -> tuple[float, float]:
    """(sin t / t, (1 - cos t) / t), series-expanded near zero."""
    if abs(theta) < SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = theta / 2.0 - theta * t2 / 24.0 + theta * t2 * t2 / 720.0
        return a, b
    return math.sin(theta) / theta, (1.0 - math.cos(theta)) / theta


def b_matrix(theta: float) -> np.ndarray:
    """Translation block of the exponential.

    B(t) = (1/t) [[sin t, -(1-cos t)], [1-cos t, sin t]], continuously
    extended through t=0 where it equals the identity.
    """
    a, b = _sinc_pair(theta)
    return np.array([[a, -b], [b, a]])


def b_matrix_inverse(theta: float) -> np.ndarray:
    """Inverse of ``b_matrix``; well defined for |canonical theta| <= pi."""
    a, b = _sinc_pair(theta)
    d = a * a + b * b
    return np.array([[a, b], [-b, a]]) / d


def wedge(xi) -> np.ndarray:
    """Map tangent coordinates (theta, x1, x2) to the 3x3 algebra matrix."""
    xi = np.asarray(xi, dtype=float)
    return np.array(
        [
            [0.0, -xi[0], xi[1]],
            [xi[0], 0.0, xi[2]],
            [0.0, 0.0, 0.0],
        ]
    )


def exp(xi) -> Se2Element:
    """Group exponential: rotation by theta, translation B(theta) x."""
    xi = np.asarray(xi, dtype=float)
    theta = float(xi[0])
    return Se2Element(Rotation2(theta), b_matrix(theta) @ xi[1:])


def log(g: Se2Element, *, antipode_tol: float = ANTIPODE_TOL) -> np.ndarray:
    """Tangent coordinates of a group element, angle in (-pi, pi].

    Raises ``AntipodalHeading`` when the canonical heading is within
    ``antipode_tol`` of a half-turn, where the sign of the result is
    ambiguous and the caller must branch.
    """
    theta = wrap_angle(g.theta)
    if abs(abs(theta) - math.pi) < antipode_tol:
        raise AntipodalHeading(f"heading {theta!r} is a half-turn within {antipode_tol}")
    out = np.empty(3)
    out[0] = theta
    out[1:] = b_matrix_inverse(theta) @ g.pos
    return out


def adjoint(g: Se2Element) -> np.ndarray:
    """Matrix of Ad_g on angle-first tangent coordinates.

    Satisfies g exp(u) g^-1 = exp(Ad_g u).
    """
    out = np.zeros((3, 3))
    out[0, 0] = 1.0
    out[1:, 0] = -(J2 @ g.pos)
    out[1:, 1:] = g.rot.matrix
    return out


def algebra_adjoint(xi) -> np.ndarray:
    """Matrix of ad_xi = [xi, .] on angle-first tangent coordinates."""
    xi = np.asarray(xi, dtype=float)
    out = np.zeros((3, 3))
    out[1:, 0] = -(J2 @ xi[1:])
    out[1:, 1:] = xi[0] * J2
    return out


def _jac_coeffs(theta: float) -> tuple[float, float]:
    """((1-cos t)/t^2, (t - sin t)/t^3) with series branches near zero."""
    if abs(theta) < SMALL_ANGLE:
        t2 = theta * theta
        c1 = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c2 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        return c1, c2
    t2 = theta * theta
    return (1.0 - math.cos(theta)) / t2, (theta - math.sin(theta)) / (t2 * theta)


def right_jacobian(xi) -> np.ndarray:
    """Right Jacobian J_r(xi): exp(xi + d) ~ exp(xi) exp(J_r(xi) d).

    Closed form from ad^3 = -theta^2 ad, the planar analogue of the
    Rodrigues summation.
    """
    xi = np.asarray(xi, dtype=float)
    ad = algebra_adjoint(xi)
    c1, c2 = _jac_coeffs(float(xi[0]))
    return np.eye(3) - c1 * ad + c2 * (ad @ ad)


def inverse_right_jacobian(xi) -> np.ndarray:
    """J_r(xi)^-1, i.e. the first-order factor of log(exp(xi) exp(d)).

    log(exp(xi) exp(d)) = xi + J_r(xi)^-1 d + O(|d|^2), and the matrix
    fixes its own argument: J_r(xi)^-1 xi = xi exactly.
    """
    xi = np.asarray(xi, dtype=float)
    theta = float(xi[0])
    if abs(theta) < SMALL_ANGLE:
        t2 = theta * theta
        g = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        g = (1.0 - 0.5 * theta / math.tan(0.5 * theta)) / (theta * theta)
    ad = algebra_adjoint(xi)
    return np.eye(3) + 0.5 * ad + g * (ad @ ad)


def compose(a: Se2Element, b: Se2Element) -> Se2Element:
    return a.compose(b)


def inverse(a: Se2Element) -> Se2Element:
    return a.inverse()


def act(g: Se2Element, point) -> np.ndarray:
    return g.act(point)
