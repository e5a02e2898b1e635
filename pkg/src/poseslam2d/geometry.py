"""SE(2) group operations, exponential/log maps and analytic Jacobians.

Poses are ``Pose2`` values with heading normalized to (-pi, pi]. Tangent
vectors are length-3 arrays ``(dx, dy, dtheta)``. Perturbations are applied on
the right: ``retract(p, xi) = compose(p, exp(xi))``.

The ``*_batch`` functions operate on ``(N, 3)`` arrays of ``(x, y, theta)`` and
are what the optimizer uses in its inner loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SMALL_ANGLE = 1e-7
TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    r = math.remainder(theta, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    out = (theta > np.pi) | (theta <= -np.pi)
    if not out.any():
        return theta
    r = theta - TWO_PI * np.round(theta / TWO_PI)
    r = np.where(r <= -np.pi, r + TWO_PI, r)
    return np.where(r > np.pi, r - TWO_PI, r)


def _stack3(a, b, c):
    out = np.empty((len(a), 3))
    out[:, 0] = a
    out[:, 1] = b
    out[:, 2] = c
    return out


@dataclass(frozen=True, slots=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def identity(cls) -> Pose2:
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> Pose2:
        return cls(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 matrix."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    def inverse(self) -> Pose2:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def compose(self, other: Pose2) -> Pose2:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    __matmul__ = compose

    def between(self, other: Pose2) -> Pose2:
        return between(self, other)

    def transform_point(self, pt) -> tuple[float, float]:
        return transform_point(self, pt)

    def adjoint(self) -> np.ndarray:
        return adjoint(self)

    def retract(self, xi) -> Pose2:
        return self.compose(exp(xi))

    def local(self, other: Pose2) -> np.ndarray:
        """Tangent vector xi with ``self.retract(xi) == other``."""
        return log(between(self, other))

    def translation_norm(self) -> float:
        return math.hypot(self.x, self.y)


SERIES_ANGLE = 1e-2


def _exp_coeffs(theta):
    """Return (sin(t)/t, (1 - cos(t))/t) with series near zero."""
    if abs(theta) < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0
    # 1 - cos(t) = 2 sin^2(t/2) avoids cancellation at small t
    sh = math.sin(0.5 * theta)
    return math.sin(theta) / theta, 2.0 * sh * sh / theta


def exp(xi) -> Pose2:
    dx, dy, dt = float(xi[0]), float(xi[1]), float(xi[2])
    a, b = _exp_coeffs(dt)
    return Pose2(a * dx - b * dy, b * dx + a * dy, dt)


def _half_cot_coeff(theta):
    """(theta/2) * cot(theta/2), the diagonal of V^-1."""
    if abs(theta) < SMALL_ANGLE:
        return 1.0 - theta * theta / 12.0
    h = 0.5 * theta
    return h * math.cos(h) / math.sin(h)


def log(p: Pose2) -> np.ndarray:
    """Inverse of :func:`exp`. At theta == pi the dtheta = +pi branch is returned."""
    t = p.theta
    a = _half_cot_coeff(t)
    h = 0.5 * t
    return np.array([a * p.x + h * p.y, -h * p.x + a * p.y, t])


def compose(a: Pose2, b: Pose2) -> Pose2:
    return a.compose(b)


def inverse(p: Pose2) -> Pose2:
    return p.inverse()


def between(a: Pose2, b: Pose2) -> Pose2:
    """inverse(a) composed with b."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx, dy = b.x - a.x, b.y - a.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, b.theta - a.theta)


def transform_point(p: Pose2, pt) -> tuple[float, float]:
    c, s = math.cos(p.theta), math.sin(p.theta)
    px, py = float(pt[0]), float(pt[1])
    return (c * px - s * py + p.x, s * px + c * py + p.y)


def transform_points(p: Pose2, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    return pts @ p.rotation().T + np.array([p.x, p.y])


def adjoint(p: Pose2) -> np.ndarray:
    """Adjoint map acting on (dx, dy, dtheta): exp(Ad @ xi) = p exp(xi) p^-1."""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([[c, -s, p.y], [s, c, -p.x], [0.0, 0.0, 1.0]])


def right_jacobian_inverse(xi) -> np.ndarray:
    """Inverse right Jacobian of SE(2) at xi."""
    return right_jacobian_inverse_batch(np.asarray(xi, dtype=float).reshape(1, 3))[0]


def between_jacobians(a: Pose2, b: Pose2, z: Pose2 | None = None):
    """Jacobians of ``log(between(z, between(a + xa, b + xb)))`` w.r.t. xa, xb at zero.

    With ``z`` omitted the measurement equals ``between(a, b)``, the error is
    the identity and the result reduces to ``(-Ad(between(b, a)), I)``.
    """
    ja = -adjoint(between(b, a))
    if z is None:
        return ja, np.eye(3)
    jr_inv = right_jacobian_inverse(log(between(z, between(a, b))))
    return jr_inv @ ja, jr_inv


# -- vectorized forms over (N, 3) arrays -----------------------------------


def exp_batch(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    dx, dy, t = xi[:, 0], xi[:, 1], xi[:, 2]
    small = np.abs(t) < SMALL_ANGLE
    ts = np.where(small, 1.0, t)
    t2 = t * t
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(ts) / ts)
    b = np.where(small, t / 2.0 - t * t2 / 24.0, 2.0 * np.sin(0.5 * ts) ** 2 / ts)
    return _stack3(a * dx - b * dy, b * dx + a * dy, wrap_angles(t))


def _half_cot_batch(t):
    small = np.abs(t) < SMALL_ANGLE
    ts = np.where(small, 1.0, t)
    h = 0.5 * ts
    return np.where(small, 1.0 - t * t / 12.0, h * np.cos(h) / np.sin(h))


def _jr_coeffs_batch(t):
    """((1 - cos t)/t^2, (t - sin t)/t^2), each stable near zero."""
    t2 = t * t
    tiny = np.abs(t) < SMALL_ANGLE
    ta = np.where(tiny, 1.0, t)
    a = np.where(tiny, 0.5 - t2 / 24.0, 2.0 * np.sin(0.5 * ta) ** 2 / (ta * ta))
    small = np.abs(t) < SERIES_ANGLE
    tb = np.where(small, 1.0, t)
    series = t * (1.0 / 6.0 - t2 * (1.0 / 120.0 - t2 * (1.0 / 5040.0 - t2 / 362880.0)))
    b = np.where(small, series, (tb - np.sin(tb)) / (tb * tb))
    return a, b


def log_batch(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    x, y, t = p[:, 0], p[:, 1], p[:, 2]
    a = _half_cot_batch(t)
    h = 0.5 * t
    return _stack3(a * x + h * y, -h * x + a * y, t)


def compose_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    return _stack3(a[:, 0] + c * b[:, 0] - s * b[:, 1],
                   a[:, 1] + s * b[:, 0] + c * b[:, 1],
                   wrap_angles(a[:, 2] + b[:, 2]))


def between_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    dx, dy = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    return _stack3(c * dx + s * dy, -s * dx + c * dy, wrap_angles(b[:, 2] - a[:, 2]))


def adjoint_batch(p: np.ndarray) -> np.ndarray:
    n = len(p)
    c, s = np.cos(p[:, 2]), np.sin(p[:, 2])
    ad = np.zeros((n, 3, 3))
    ad[:, 0, 0] = c
    ad[:, 0, 1] = -s
    ad[:, 1, 0] = s
    ad[:, 1, 1] = c
    ad[:, 0, 2] = p[:, 1]
    ad[:, 1, 2] = -p[:, 0]
    ad[:, 2, 2] = 1.0
    return ad


def right_jacobian_inverse_batch(xi: np.ndarray) -> np.ndarray:
    """Closed-form inverse right Jacobians, shape (N, 3, 3).

    Jr = [[A, u], [0, 1]] with A = V(theta)^T, so Jr^-1 = [[A^-1, -A^-1 u], [0, 1]].
    """
    r1, r2, t = xi[:, 0], xi[:, 1], xi[:, 2]
    ca, cb = _jr_coeffs_batch(t)
    u1 = r1 * cb - r2 * ca
    u2 = r1 * ca + r2 * cb
    a = _half_cot_batch(t)
    h = 0.5 * t
    out = np.zeros((len(xi), 3, 3))
    out[:, 0, 0] = a
    out[:, 0, 1] = -h
    out[:, 1, 0] = h
    out[:, 1, 1] = a
    out[:, 0, 2] = -(a * u1 - h * u2)
    out[:, 1, 2] = -(h * u1 + a * u2)
    out[:, 2, 2] = 1.0
    return out
