"""Right-invariant EKF for contact-aided inertial odometry.

State: one rotation plus velocity, position and one world-frame contact
point per stance foot, held as a single :class:`~robust_inekf.lie.GroupElement`
(slot 0 velocity, slot 1 position, slots 2+ feet).  The filter covariance is
expressed on the right-invariant error, which makes the error propagation
matrix independent of the state estimate.

The measurement is the forward-kinematics foot position in the IMU frame;
contacts are added and removed as boolean contact flags flip.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from . import lie
from .kinematics import (
    ImuExtrinsics,
    LegParams,
    NoiseConfig,
    forward_kinematics,
    measurement_covariance,
)

logger = logging.getLogger(__name__)

_ROT_DRIFT_TOL = 1e-9


class UnregisteredLegError(KeyError):
    """Measurement update referenced a leg with no contact slot."""


@dataclass(frozen=True)
class ImuSample:
    t: float
    omega: NDArray[np.float64]
    accel: NDArray[np.float64]

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        accel = np.asarray(self.accel, dtype=float)
        if omega.shape != (3,) or accel.shape != (3,):
            raise ValueError("IMU sample needs 3-vector rate and acceleration")
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(accel))):
            raise ValueError("IMU sample contains non-finite values")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "accel", accel)


@dataclass(frozen=True)
class ContactEvent:
    t: float
    leg: int
    in_contact: bool
    q_leg: NDArray[np.float64]

    def __post_init__(self):
        if self.leg not in (0, 1, 2, 3):
            raise ValueError("leg id must be 0..3")
        object.__setattr__(self, "q_leg", np.asarray(self.q_leg, dtype=float))


@dataclass(frozen=True)
class FilterConfig:
    """Everything the filter needs besides the measurements themselves."""

    noise: NoiseConfig
    extrinsics: ImuExtrinsics
    legs: tuple[LegParams, ...]
    gravity: NDArray[np.float64] = field(
        default_factory=lambda: np.array([0.0, 0.0, -9.81])
    )
    new_contact_cov: float = 1e-2
    initial_cov_diag: NDArray[np.float64] = field(
        default_factory=lambda: np.full(9, 1e-6)
    )
    # known constant IMU biases, subtracted from every sample
    gyro_bias: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    accel_bias: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    joseph_update: bool = False
    # replace the exact noise input blocks with the simplified constant gain
    simplified_noise_gain: bool = False
    max_predict_step: float = 0.010
    predict_gap_warn: float = 0.050
    allow_any_gravity: bool = False

    def __post_init__(self):
        g = np.asarray(self.gravity, dtype=float)
        object.__setattr__(self, "gravity", g)
        object.__setattr__(
            self, "gyro_bias", np.asarray(self.gyro_bias, dtype=float)
        )
        object.__setattr__(
            self, "accel_bias", np.asarray(self.accel_bias, dtype=float)
        )
        object.__setattr__(
            self,
            "initial_cov_diag",
            np.asarray(self.initial_cov_diag, dtype=float),
        )
        if not self.allow_any_gravity and not 9.7 <= np.linalg.norm(g) <= 9.9:
            raise ValueError(
                "gravity magnitude outside [9.7, 9.9] m/s^2; "
                "set allow_any_gravity for test scenarios"
            )


@dataclass(frozen=True)
class FilterState:
    """Filter mean, right-invariant error covariance and contact registry.

    ``contacts`` maps leg id to the slot index of its foot inside ``x``;
    the tangent block of slot ``s`` starts at index ``3 * (s + 1)``.
    """

    x: lie.GroupElement
    cov: NDArray[np.float64]
    contacts: dict[int, int]
    t: float = 0.0

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (self.x.dim, self.x.dim):
            raise ValueError(
                f"covariance shape {cov.shape} does not match state dim {self.x.dim}"
            )
        object.__setattr__(self, "cov", cov)
        if self.x.k != 2 + len(self.contacts):
            raise ValueError("slot count inconsistent with contact registry")
        if sorted(self.contacts.values()) != list(range(2, self.x.k)):
            raise ValueError("contact slots must cover 2..k-1 exactly once")

    @property
    def rot(self) -> NDArray[np.float64]:
        return self.x.rot

    @property
    def vel(self) -> NDArray[np.float64]:
        return self.x.trans[0]

    @property
    def pos(self) -> NDArray[np.float64]:
        return self.x.trans[1]

    def foot(self, leg: int) -> NDArray[np.float64]:
        return self.x.trans[self.contacts[leg]]

    @property
    def n_contacts(self) -> int:
        return len(self.contacts)


def initial_state(
    config: FilterConfig,
    rot=None,
    vel=None,
    pos=None,
    t: float = 0.0,
) -> FilterState:
    """Contact-free state with the configured initial covariance."""
    x = lie.GroupElement(
        np.eye(3) if rot is None else rot,
        np.stack(
            [
                np.zeros(3) if vel is None else np.asarray(vel, dtype=float),
                np.zeros(3) if pos is None else np.asarray(pos, dtype=float),
            ]
        ),
    )
    return FilterState(x, np.diag(config.initial_cov_diag), {}, t)


@lru_cache(maxsize=64)
def _transition_cached(dt: float, n_feet: int, gravity: tuple) -> NDArray[np.float64]:
    g = np.asarray(gravity)
    dim = 3 * (n_feet + 3)
    a = np.eye(dim)
    a[3:6, 0:3] = lie.hat3(g * dt)
    a[6:9, 0:3] = lie.hat3(g * dt * dt / 2.0)
    a[6:9, 3:6] = np.eye(3) * dt
    return a


def error_transition_matrix(
    dt: float, n_feet: int, gravity
) -> NDArray[np.float64]:
    """State-independent propagation matrix of the right-invariant error.

    Product of the adjoint of the gravity increment element and the linear
    map of the constant-rotation flow; foot blocks are identity.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    g = np.asarray(gravity, dtype=float)
    return _transition_cached(float(dt), int(n_feet), tuple(g)).copy()


def _noise_gain_g(omega, dt: float, n_feet: int, simplified: bool):
    """Noise input blocks before the adjoint: tangent dim x (6 + 3*n_feet)."""
    dim = 3 * (n_feet + 3)
    g = np.zeros((dim, 6 + 3 * n_feet))
    eye = np.eye(3)
    if simplified:
        g[0:3, 0:3] = eye * dt
        g[3:6, 3:6] = eye * dt
        for i in range(n_feet):
            g[9 + 3 * i : 12 + 3 * i, 6 + 3 * i : 9 + 3 * i] = eye * dt
        return g
    g[0:3, 0:3] = -lie.so3_right_jacobian(np.asarray(omega) * dt) * dt
    g[3:6, 3:6] = eye * dt
    g[6:9, 3:6] = eye * dt * dt / 2.0
    for i in range(n_feet):
        g[9 + 3 * i : 12 + 3 * i, 6 + 3 * i : 9 + 3 * i] = eye * dt
    return g


def noise_input_matrix(
    state: FilterState, imu: ImuSample, dt: float, config: FilterConfig
) -> NDArray[np.float64]:
    """Matrix mapping the stacked (gyro, accel, per-foot slip) noise into
    the right-invariant error; the adjoint of the state times the input
    blocks."""
    omega = imu.omega - config.gyro_bias
    g = _noise_gain_g(omega, dt, state.n_contacts, config.simplified_noise_gain)
    return lie.adjoint(state.x) @ g


@lru_cache(maxsize=16)
def _process_noise_cached(key, n_feet: int):
    gyro, accel, slip = key
    blocks = [np.asarray(gyro), np.asarray(accel)]
    blocks += [np.asarray(slip)] * n_feet
    dim = 6 + 3 * n_feet
    q = np.zeros((dim, dim))
    for i, b in enumerate(blocks):
        q[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = b
    return q


def process_noise(noise: NoiseConfig, n_feet: int) -> NDArray[np.float64]:
    """Block-diagonal covariance of the stacked process noise channels."""
    key = (
        tuple(map(tuple, noise.gyro_cov)),
        tuple(map(tuple, noise.accel_cov)),
        tuple(map(tuple, noise.foot_slip_cov)),
    )
    return _process_noise_cached(key, n_feet).copy()


def _renormalized(rot):
    if np.max(np.abs(rot @ rot.T - np.eye(3))) > _ROT_DRIFT_TOL:
        return lie.orthonormalize(rot)
    return rot


def propagate_mean(
    x: lie.GroupElement, omega, accel, gravity, dt: float
) -> lie.GroupElement:
    """Noise-free discrete motion model.

    Rotation integrates the rate over the step; velocity and position get
    the gravity and the rotated specific force at first and second order in
    ``dt``; contact feet stay where they are.
    """
    rot = x.rot
    rot_acc = rot @ np.asarray(accel, dtype=float)
    grav = np.asarray(gravity, dtype=float)
    trans = x.trans.copy()
    trans[0] = x.trans[0] + grav * dt + rot_acc * dt
    trans[1] = (
        x.trans[1] + x.trans[0] * dt + (grav * 0.5 * dt + rot_acc * 0.5 * dt) * dt
    )
    return lie.GroupElement(rot @ lie.so3_exp(np.asarray(omega) * dt), trans)


def _predict_step(
    state: FilterState, imu: ImuSample, dt: float, config: FilterConfig
) -> FilterState:
    omega = imu.omega - config.gyro_bias
    accel = imu.accel - config.accel_bias

    a = _transition_cached(float(dt), state.n_contacts, tuple(config.gravity))
    b = noise_input_matrix(state, imu, dt, config)
    q = process_noise(config.noise, state.n_contacts)
    cov = a @ state.cov @ a.T + b @ q @ b.T
    cov = 0.5 * (cov + cov.T)

    x = propagate_mean(state.x, omega, accel, config.gravity, dt)
    x = lie.GroupElement(_renormalized(x.rot), x.trans)
    return FilterState(x, cov, state.contacts, state.t + dt)


def predict(
    state: FilterState, imu: ImuSample, dt: float, config: FilterConfig
) -> FilterState:
    """Propagate mean and covariance over ``dt`` with one IMU sample.

    A step longer than the configured gap threshold is split into
    sub-steps of at most ``max_predict_step`` (zero-order hold on the
    sample) and logged as a timing gap.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if dt > config.predict_gap_warn:
        n_sub = int(np.ceil(dt / config.max_predict_step))
        logger.warning(
            "measurement gap of %.3f s at t=%.3f s; predicting in %d sub-steps",
            dt,
            state.t,
            n_sub,
        )
        sub = dt / n_sub
        for _ in range(n_sub):
            state = _predict_step(state, imu, sub, config)
        return state
    return _predict_step(state, imu, dt, config)


def _measurement_model(
    state: FilterState, contacts, config: FilterConfig
):
    """Stacked (H, innovation, rotated measurement covariance) blocks."""
    dim = state.x.dim
    rot, pos = state.rot, state.pos
    n = len(contacts)
    h = np.zeros((3 * n, dim))
    dz = np.empty(3 * n)
    n_hat = np.zeros((3 * n, 3 * n))
    for i, (leg, q_leg) in enumerate(contacts):
        if leg not in state.contacts:
            raise UnregisteredLegError(
                f"leg {leg} has no contact slot in the filter state"
            )
        slot = state.contacts[leg]
        z_meas = config.extrinsics.base_to_imu(
            forward_kinematics(q_leg, config.legs[leg])
        )
        z_pred = rot.T @ (state.foot(leg) - pos)
        r = 3 * i
        dz[r : r + 3] = rot @ (z_meas - z_pred)
        h[r : r + 3, 6:9] = -np.eye(3)
        col = 3 * (slot + 1)
        h[r : r + 3, col : col + 3] = np.eye(3)
        cov = measurement_covariance(
            q_leg, config.legs[leg], config.extrinsics, config.noise
        )
        n_hat[r : r + 3, r : r + 3] = rot @ cov @ rot.T
    return h, dz, n_hat


def _retract(state: FilterState, xi, cov) -> FilterState:
    x = lie.compose(lie.group_exp(xi), state.x)
    x = lie.GroupElement(_renormalized(x.rot), x.trans)
    return FilterState(x, cov, state.contacts, state.t)


def update(
    state: FilterState, contacts, config: FilterConfig
) -> FilterState:
    """Standard Kalman measurement update with stacked contact rows.

    ``contacts`` is a list of ``(leg, q_leg)`` pairs; every referenced leg
    must already be registered.  A numerically singular innovation
    covariance rejects the whole update (logged, state returned unchanged).
    """
    if not contacts:
        return state
    h, dz, n_hat = _measurement_model(state, contacts, config)
    p = state.cov
    pht = p @ h.T
    s = h @ pht + n_hat
    s = 0.5 * (s + s.T)
    if np.linalg.cond(s) > 1e12:
        logger.warning(
            "update at t=%.3f rejected: singular innovation covariance", state.t
        )
        return state
    gain = np.linalg.solve(s, pht.T).T
    xi = gain @ dz
    ikh = np.eye(p.shape[0]) - gain @ h
    if config.joseph_update:
        cov = ikh @ p @ ikh.T + gain @ n_hat @ gain.T
    else:
        cov = ikh @ p
    cov = 0.5 * (cov + cov.T)
    return _retract(state, xi, cov)


def add_contact(
    state: FilterState, leg: int, q_leg, config: FilterConfig
) -> FilterState:
    """Register a new stance foot.

    The foot slot starts at the forward-kinematics position composed with
    the current pose; its covariance block is ``new_contact_cov * I`` with
    zero cross-covariance.
    """
    if leg in state.contacts:
        raise ValueError(f"leg {leg} already registered")
    foot_world = state.pos + state.rot @ config.extrinsics.base_to_imu(
        forward_kinematics(q_leg, config.legs[leg])
    )
    trans = np.vstack([state.x.trans, foot_world])
    contacts = dict(state.contacts)
    contacts[leg] = state.x.k
    dim = state.x.dim
    cov = np.zeros((dim + 3, dim + 3))
    cov[:dim, :dim] = state.cov
    cov[dim:, dim:] = np.eye(3) * config.new_contact_cov
    return FilterState(
        lie.GroupElement(state.rot, trans), cov, contacts, state.t
    )


def remove_contact(state: FilterState, leg: int) -> FilterState:
    """Drop a foot slot and compact the remaining slot indices."""
    if leg not in state.contacts:
        raise ValueError(f"leg {leg} is not registered")
    slot = state.contacts[leg]
    trans = np.delete(state.x.trans, slot, axis=0)
    idx = 3 * (slot + 1)
    cov = np.delete(state.cov, slice(idx, idx + 3), axis=0)
    cov = np.delete(cov, slice(idx, idx + 3), axis=1)
    contacts = {
        l: (s - 1 if s > slot else s)
        for l, s in state.contacts.items()
        if l != leg
    }
    return FilterState(
        lie.GroupElement(state.rot, trans), cov, contacts, state.t
    )
