"""Forward/inverse kinematics and measurement covariance of a 3-DOF leg.

Chain convention (matching the common quadruped morphology): a hip-roll
joint about the base x axis at ``hip_offset``, a lateral abduction link of
length ``l_hip`` on the side given by ``side_sign``, then hip-pitch and
knee-pitch joints about the (rolled) y axis.  The zero pose points the leg
straight down; the inverse kinematics always selects the knee-bent-backward
branch (knee angle <= 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


class OutOfWorkspaceError(ValueError):
    """Raised when a foot target cannot be reached by the leg."""


def _rot_x(a: float) -> NDArray[np.float64]:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class LegParams:
    """Geometry of one leg, expressed in the base frame.

    ``hip_offset`` locates the hip-roll axis; ``side_sign`` is +1 for left
    legs and -1 for right legs and orients the abduction link along +/-y.
    """

    hip_offset: NDArray[np.float64]
    l_hip: float
    l_thigh: float
    l_calf: float
    side_sign: int

    def __post_init__(self):
        object.__setattr__(
            self, "hip_offset", np.asarray(self.hip_offset, dtype=float)
        )
        if self.hip_offset.shape != (3,):
            raise ValueError("hip_offset must be a 3-vector")
        if self.l_thigh <= 0.0 or self.l_calf <= 0.0:
            raise ValueError("thigh and calf lengths must be positive")
        if self.side_sign not in (-1, 1):
            raise ValueError("side_sign must be +1 or -1")


@dataclass(frozen=True)
class ImuExtrinsics:
    """Rigid transform from the base frame to the IMU frame."""

    rot_bi: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))
    t_bi: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rot_bi, dtype=float)
        t = np.asarray(self.t_bi, dtype=float)
        if rot.shape != (3, 3) or t.shape != (3,):
            raise ValueError("extrinsics need a 3x3 rotation and a 3-vector")
        if np.linalg.norm(rot.T @ rot - np.eye(3)) > 1e-9:
            raise ValueError("extrinsics rotation is not orthonormal")
        object.__setattr__(self, "rot_bi", rot)
        object.__setattr__(self, "t_bi", t)

    def base_to_imu(self, p_base) -> NDArray[np.float64]:
        return self.rot_bi @ np.asarray(p_base, dtype=float) + self.t_bi

    def imu_to_base(self, p_imu) -> NDArray[np.float64]:
        return self.rot_bi.T @ (np.asarray(p_imu, dtype=float) - self.t_bi)


def _check_cov(name: str, m: NDArray[np.float64]) -> NDArray[np.float64]:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3")
    if np.max(np.abs(m - m.T)) > 1e-12:
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    return m


@dataclass(frozen=True)
class NoiseConfig:
    """Per-sample covariances of the sensor and model noise channels.

    * ``gyro_cov`` (rad^2/s^2) and ``accel_cov`` (m^2/s^4): IMU white noise.
    * ``foot_slip_cov`` (m^2/s^2): velocity noise of a contact foot,
      accommodating slippage.
    * ``encoder_cov`` (rad^2): joint encoder noise of one leg.
    * ``kinematic_cov`` (m^2): forward-kinematics calibration error.
    """

    gyro_cov: NDArray[np.float64]
    accel_cov: NDArray[np.float64]
    foot_slip_cov: NDArray[np.float64]
    encoder_cov: NDArray[np.float64]
    kinematic_cov: NDArray[np.float64]

    def __post_init__(self):
        for name in (
            "gyro_cov",
            "accel_cov",
            "foot_slip_cov",
            "encoder_cov",
            "kinematic_cov",
        ):
            object.__setattr__(self, name, _check_cov(name, getattr(self, name)))

    @classmethod
    def from_stddevs(
        cls,
        gyro_std: float,
        accel_std: float,
        foot_slip_std: float,
        encoder_std: float,
        kinematic_std: float,
    ) -> "NoiseConfig":
        """Build isotropic covariances from per-channel standard deviations."""
        return cls(
            gyro_cov=np.eye(3) * gyro_std**2,
            accel_cov=np.eye(3) * accel_std**2,
            foot_slip_cov=np.eye(3) * foot_slip_std**2,
            encoder_cov=np.eye(3) * encoder_std**2,
            kinematic_cov=np.eye(3) * kinematic_std**2,
        )


def forward_kinematics(q_leg, params: LegParams) -> NDArray[np.float64]:
    """Foot position in the base frame for joint angles (roll, hip, knee)."""
    roll, hip, knee = np.asarray(q_leg, dtype=float)
    s_h, c_h = np.sin(hip), np.cos(hip)
    s_hk, c_hk = np.sin(hip + knee), np.cos(hip + knee)
    # leg vector after the roll joint, in the rolled frame
    x = -params.l_thigh * s_h - params.l_calf * s_hk
    y = params.side_sign * params.l_hip
    z = -params.l_thigh * c_h - params.l_calf * c_hk
    return params.hip_offset + _rot_x(roll) @ np.array([x, y, z])


def leg_jacobian(q_leg, params: LegParams) -> NDArray[np.float64]:
    """Geometric Jacobian d(foot)/d(q) in the base frame (3x3, m/rad)."""
    roll, hip, _ = np.asarray(q_leg, dtype=float)
    rx = _rot_x(roll)
    foot = forward_kinematics(q_leg, params)
    pitch_axis = rx[:, 1]
    hip_origin = params.hip_offset
    pitch_origin = hip_origin + rx @ np.array(
        [0.0, params.side_sign * params.l_hip, 0.0]
    )
    knee_origin = pitch_origin + rx @ np.array(
        [-params.l_thigh * np.sin(hip), 0.0, -params.l_thigh * np.cos(hip)]
    )
    jac = np.empty((3, 3))
    jac[:, 0] = np.cross([1.0, 0.0, 0.0], foot - hip_origin)
    jac[:, 1] = np.cross(pitch_axis, foot - pitch_origin)
    jac[:, 2] = np.cross(pitch_axis, foot - knee_origin)
    return jac


def inverse_kinematics(foot_base, params: LegParams) -> NDArray[np.float64]:
    """Joint angles reaching ``foot_base``, knee-bent-backward branch.

    Raises :class:`OutOfWorkspaceError` when the target lies outside the
    reachable annulus.
    """
    p = np.asarray(foot_base, dtype=float) - params.hip_offset
    d_yz_sq = p[1] * p[1] + p[2] * p[2]
    l_hip_sq = params.l_hip * params.l_hip
    if d_yz_sq < l_hip_sq - 1e-12:
        raise OutOfWorkspaceError(
            "target closer to the roll axis than the abduction link"
        )
    u_y = params.side_sign * params.l_hip
    u_z = -np.sqrt(max(d_yz_sq - l_hip_sq, 0.0))
    roll = np.arctan2(p[2], p[1]) - np.arctan2(u_z, u_y)
    roll = np.arctan2(np.sin(roll), np.cos(roll))

    # planar 2R problem in the rolled x-z plane
    d_sq = p[0] * p[0] + u_z * u_z
    l_t, l_c = params.l_thigh, params.l_calf
    cos_knee = (d_sq - l_t * l_t - l_c * l_c) / (2.0 * l_t * l_c)
    if cos_knee > 1.0 + 1e-9 or cos_knee < -1.0 - 1e-9:
        raise OutOfWorkspaceError(
            f"target at distance {np.sqrt(d_sq):.4f} m outside reach "
            f"[{abs(l_t - l_c):.4f}, {l_t + l_c:.4f}] m"
        )
    knee = -np.arccos(np.clip(cos_knee, -1.0, 1.0))
    hip = np.arctan2(-p[0], -u_z) - np.arctan2(
        l_c * np.sin(knee), l_t + l_c * np.cos(knee)
    )
    hip = np.arctan2(np.sin(hip), np.cos(hip))
    return np.array([roll, hip, knee])


def measurement_covariance(
    q_leg, params: LegParams, extrinsics: ImuExtrinsics, noise: NoiseConfig
) -> NDArray[np.float64]:
    """Covariance of the foot-position measurement in the IMU frame.

    Combines the kinematic calibration error with the encoder noise mapped
    through the leg Jacobian, rotated into the IMU frame.
    """
    jac = leg_jacobian(q_leg, params)
    cov_base = noise.kinematic_cov + jac @ noise.encoder_cov @ jac.T
    cov = extrinsics.rot_bi @ cov_base @ extrinsics.rot_bi.T
    return 0.5 * (cov + cov.T)


def default_leg_layout(
    body_length: float = 0.38,
    body_width: float = 0.22,
    l_hip: float = 0.08,
    l_thigh: float = 0.25,
    l_calf: float = 0.25,
) -> tuple[LegParams, ...]:
    """Leg set for a boxy quadruped: order FL, FR, RL, RR (left = +y)."""
    half_l, half_w = body_length / 2.0, body_width / 2.0
    spots = [
        (half_l, half_w, 1),
        (half_l, -half_w, -1),
        (-half_l, half_w, 1),
        (-half_l, -half_w, -1),
    ]
    return tuple(
        LegParams(
            hip_offset=np.array([x, y, 0.0]),
            l_hip=l_hip,
            l_thigh=l_thigh,
            l_calf=l_calf,
            side_sign=side,
        )
        for x, y, side in spots
    )
