"""Exact SO(3) and SE_K(3) group operations.

An element of SE_K(3) pairs one rotation matrix with K translation-like
3-vectors that all share that rotation under composition.  For the filter
state the slot convention is fixed: slot 0 is the velocity, slot 1 the
position, slots 2..K-1 are foot contact positions.

Tangent vectors are plain arrays of length 3*(K+1), rotation block first:
``[xi_rot | xi_slot0 | xi_slot1 | ...]``.  All operations are pure
functions over immutable values and safe for unrestricted parallel use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

# Below this rotation angle (rad) closed-form sin/cos ratios are replaced by
# fourth-order Taylor expansions.  The (cos t - 1 + t^2/2)/t^4 kernel of the
# second-order rate integral cancels much earlier, so it gets its own bound;
# both choices keep the branches consistent to ~1e-14 at the crossover.
SMALL_ANGLE = 1e-4
_GAMMA2_SMALL = 2e-2

_EYE3 = np.eye(3)


def hat3(v) -> NDArray[np.float64]:
    """Map a 3-vector to its skew-symmetric matrix, ``hat3(v) @ u == cross(v, u)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee3(m) -> NDArray[np.float64]:
    """Inverse of :func:`hat3`.  Rejects input whose asymmetry exceeds 1e-9."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError("vee3 expects a 3x3 matrix")
    if np.max(np.abs(m + m.T)) > 1e-9:
        raise ValueError("vee3 input is not skew-symmetric")
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(w) -> NDArray[np.float64]:
    """Rotation matrix for a rotation vector ``w`` (Rodrigues closed form)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    wx = hat3(w)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / (theta * theta)
    return _EYE3 + a * wx + b * (wx @ wx)


def so3_log(rot) -> NDArray[np.float64]:
    """Rotation vector of a rotation matrix.

    Goes through a unit quaternion extracted with the largest-pivot rule
    (trace or the largest diagonal entry), which keeps full precision for
    angles all the way up to pi where the antisymmetric part of the matrix
    alone loses the axis.
    """
    m = np.asarray(rot, dtype=float)
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t >= max(m[0, 0], m[1, 1], m[2, 2]):
        r = np.sqrt(1.0 + t)
        s = 0.5 / r
        q = np.array(
            [
                0.5 * r,
                (m[2, 1] - m[1, 2]) * s,
                (m[0, 2] - m[2, 0]) * s,
                (m[1, 0] - m[0, 1]) * s,
            ]
        )
    else:
        i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        r = np.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
        s = 0.5 / r
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) * s
        q[1 + i] = 0.5 * r
        q[1 + j] = (m[j, i] + m[i, j]) * s
        q[1 + k] = (m[k, i] + m[i, k]) * s
    if q[0] < 0.0:
        q = -q
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < SMALL_ANGLE:
        # theta/sin(theta/2) ~ 2 (1 + theta^2/24); theta ~ 2 vec_norm here
        return q[1:] * (2.0 + vec_norm * vec_norm / 3.0)
    theta = 2.0 * np.arctan2(vec_norm, q[0])
    return q[1:] * (theta / vec_norm)


def so3_left_jacobian(w) -> NDArray[np.float64]:
    """Left Jacobian of SO(3): ``J_l(w) = sum_k hat(w)^k / (k+1)!``."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    wx = hat3(w)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = (1.0 - np.cos(theta)) / (theta * theta)
        b = (theta - np.sin(theta)) / (theta * theta * theta)
    return _EYE3 + a * wx + b * (wx @ wx)


def so3_right_jacobian(w) -> NDArray[np.float64]:
    """Right Jacobian, ``J_r(w) = J_l(-w)``."""
    return so3_left_jacobian(-np.asarray(w, dtype=float))


def so3_left_jacobian_inv(w) -> NDArray[np.float64]:
    """Closed-form inverse of the left Jacobian (valid for angles below 2*pi)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    wx = hat3(w)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        c = 1.0 / (theta * theta) - (1.0 + np.cos(theta)) / (
            2.0 * theta * np.sin(theta)
        )
    return _EYE3 - 0.5 * wx + c * (wx @ wx)


def gamma(n: int, w, dt: float) -> NDArray[np.float64]:
    """Rotation-rate integration kernels ``sum_k hat(w)^k dt^(k+n) / (k+n)!``.

    ``gamma(0, w, dt)`` is the incremental rotation ``so3_exp(w*dt)``;
    orders 1 and 2 integrate it once and twice over the step.  At zero
    rate they reduce to ``I*dt^n/n!``.
    """
    if n not in (0, 1, 2):
        raise ValueError("gamma order must be 0, 1 or 2")
    w = np.asarray(w, dtype=float)
    phi = w * dt
    if n == 0:
        return so3_exp(phi)
    if n == 1:
        return dt * so3_left_jacobian(phi)
    theta = np.linalg.norm(phi)
    px = hat3(phi)
    if theta < _GAMMA2_SMALL:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
        c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0
    else:
        c1 = (theta - np.sin(theta)) / theta**3
        c2 = (np.cos(theta) - 1.0 + 0.5 * theta * theta) / theta**4
    return dt * dt * (0.5 * _EYE3 + c1 * px + c2 * (px @ px))


def orthonormalize(rot) -> NDArray[np.float64]:
    """Project a near-rotation matrix back onto SO(3) (polar decomposition)."""
    u, _, vt = np.linalg.svd(np.asarray(rot, dtype=float))
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
    return u @ vt


@dataclass(frozen=True)
class GroupElement:
    """One rotation plus ``k`` translation-like 3-vectors sharing it.

    ``trans`` has shape (k, 3).  Instances are treated as immutable values;
    no operation mutates its arguments.
    """

    rot: NDArray[np.float64]
    trans: NDArray[np.float64]

    def __post_init__(self):
        rot = np.asarray(self.rot, dtype=float)
        trans = np.atleast_2d(np.asarray(self.trans, dtype=float))
        if rot.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if trans.ndim != 2 or trans.shape[1] != 3:
            raise ValueError("translations must have shape (k, 3)")
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "trans", trans)

    @property
    def k(self) -> int:
        return self.trans.shape[0]

    @property
    def dim(self) -> int:
        """Tangent-space dimension, 3*(k+1)."""
        return 3 * (self.k + 1)


def identity(k: int) -> GroupElement:
    return GroupElement(np.eye(3), np.zeros((k, 3)))


def compose(x: GroupElement, y: GroupElement) -> GroupElement:
    """Group product ``(R_x R_y, t_x + R_x t_y)`` applied slot by slot."""
    if x.k != y.k:
        raise ValueError(f"slot count mismatch: {x.k} vs {y.k}")
    return GroupElement(x.rot @ y.rot, x.trans + y.trans @ x.rot.T)


def inverse(x: GroupElement) -> GroupElement:
    rt = x.rot.T
    return GroupElement(rt, -(x.trans @ x.rot))


def group_exp(xi) -> GroupElement:
    """Exponential map: ``(so3_exp(xi_rot), J_l(xi_rot) @ xi_slot)`` per slot."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1 or xi.size % 3 != 0 or xi.size < 6:
        raise ValueError("tangent vector length must be 3*(k+1) with k >= 1")
    k = xi.size // 3 - 1
    w = xi[:3]
    jl = so3_left_jacobian(w)
    return GroupElement(so3_exp(w), xi[3:].reshape(k, 3) @ jl.T)


def group_log(x: GroupElement) -> NDArray[np.float64]:
    """Inverse of :func:`group_exp`.  Requires the rotation angle below pi."""
    w = so3_log(x.rot)
    if np.linalg.norm(w) >= np.pi - 1e-9:
        raise ValueError("group_log undefined: rotation angle at the pi branch")
    jinv = so3_left_jacobian_inv(w)
    return np.concatenate([w, (x.trans @ jinv.T).ravel()])


def adjoint(x: GroupElement) -> NDArray[np.float64]:
    """Adjoint matrix carrying tangent vectors across the element's frame.

    Block form: rotation on the diagonal, ``hat(t_j) @ R`` coupling each
    slot to the rotation block.
    """
    n = x.dim
    ad = np.zeros((n, n))
    ad[:3, :3] = x.rot
    for j in range(x.k):
        r = 3 * (j + 1)
        ad[r : r + 3, :3] = hat3(x.trans[j]) @ x.rot
        ad[r : r + 3, r : r + 3] = x.rot
    return ad


def as_matrix(x: GroupElement) -> NDArray[np.float64]:
    """Homogeneous (3+k)x(3+k) matrix embedding; composition becomes matmul."""
    n = 3 + x.k
    m = np.eye(n)
    m[:3, :3] = x.rot
    m[:3, 3:] = x.trans.T
    return m


def from_matrix(m) -> GroupElement:
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if m.shape != (n, n) or n < 4:
        raise ValueError("expected a square matrix of size 3+k")
    expected = np.eye(n - 3)
    if not np.allclose(m[3:, 3:], expected, atol=1e-9) or np.max(
        np.abs(m[3:, :3])
    ) > 1e-9:
        raise ValueError("matrix is not a valid group embedding")
    return GroupElement(m[:3, :3], m[:3, 3:].T)
