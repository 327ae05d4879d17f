"""Quadrotor rigid-body model: continuous dynamics, RK4 integration, discrete Jacobians.

Conventions
-----------
State vector (10,): ``[p (3), v (3), q (4)]`` with position and velocity in
the world frame and the attitude quaternion scalar-first ``[qw, qx, qy, qz]``,
rotating body-frame vectors into the world frame.

Control vector (4,): ``[c, wx, wy, wz]`` with ``c`` the mass-normalized
collective thrust (m/s^2, along body z) and ``w`` the body angular rates
(rad/s, body frame).

The continuous model is

    dp/dt = v
    dv/dt = g_W + R(q) [0, 0, c]
    dq/dt = 0.5 * q (x) [0, w]

with ``g_W = [0, 0, -9.81]``. The discrete map is one classical RK4 step
followed by quaternion renormalization; its Jacobians are propagated
analytically through the RK4 stages and the renormalization.

All private ``_``-prefixed helpers operate on raw arrays and broadcast over
leading batch dimensions. The public API operates on the typed containers
and validates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

GRAVITY = 9.81
STATE_DIM = 10
CONTROL_DIM = 4

_POS = slice(0, 3)
_VEL = slice(3, 6)
_QUAT = slice(6, 10)

_GRAVITY_VEC = np.array([0.0, 0.0, -GRAVITY])
_EZ = np.array([0.0, 0.0, 1.0])


def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr!r}")


@dataclass(frozen=True)
class State:
    """Vehicle state: world-frame position/velocity plus body-to-world quaternion."""

    p_WB: np.ndarray
    v_WB: np.ndarray
    q_WB: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_WB", np.asarray(self.p_WB, dtype=float).reshape(3))
        object.__setattr__(self, "v_WB", np.asarray(self.v_WB, dtype=float).reshape(3))
        object.__setattr__(self, "q_WB", np.asarray(self.q_WB, dtype=float).reshape(4))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_WB, self.v_WB, self.q_WB])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "State":
        vec = np.asarray(vec, dtype=float).reshape(STATE_DIM)
        return cls(vec[_POS], vec[_VEL], vec[_QUAT])

    def validate(self, quat_tol: float = 1e-9) -> None:
        _require_finite("state", self.as_vector())
        norm = float(np.linalg.norm(self.q_WB))
        if abs(norm - 1.0) > quat_tol:
            raise ValueError(f"quaternion norm {norm} deviates from 1 by more than {quat_tol}")


@dataclass(frozen=True)
class Control:
    """Mass-normalized collective thrust plus body rates."""

    c: float
    omega_B: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "omega_B", np.asarray(self.omega_B, dtype=float).reshape(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.c], self.omega_B])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "Control":
        vec = np.asarray(vec, dtype=float).reshape(CONTROL_DIM)
        return cls(vec[0], vec[1:])

    def validate(self) -> None:
        _require_finite("control", self.as_vector())


@dataclass(frozen=True)
class ControlLimits:
    """Box limits on the control vector.

    ``omega_min``/``omega_max`` accept scalars (broadcast per axis) or
    length-3 arrays. Thrust cannot be negative: ``c_min >= 0``.
    """

    c_min: float = 1.0
    c_max: float = 25.0
    omega_min: np.ndarray | float = -5.0
    omega_max: np.ndarray | float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "c_min", float(self.c_min))
        object.__setattr__(self, "c_max", float(self.c_max))
        wmin = np.broadcast_to(np.asarray(self.omega_min, dtype=float), (3,)).copy()
        wmax = np.broadcast_to(np.asarray(self.omega_max, dtype=float), (3,)).copy()
        object.__setattr__(self, "omega_min", wmin)
        object.__setattr__(self, "omega_max", wmax)
        if self.c_min < 0.0:
            raise ValueError(f"c_min must be non-negative, got {self.c_min}")
        if not self.c_min < self.c_max:
            raise ValueError(f"need c_min < c_max, got [{self.c_min}, {self.c_max}]")
        if not np.all(wmin < wmax):
            raise ValueError(f"need omega_min < omega_max elementwise, got {wmin}, {wmax}")

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([[self.c_min], self.omega_min])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([[self.c_max], self.omega_max])

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)

    def contains(self, u: np.ndarray, tol: float = 1e-9) -> bool:
        u = np.asarray(u)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


DEFAULT_LIMITS = ControlLimits()


@dataclass
class LinearizedStage:
    """Discrete-time linearization at one shooting stage.

    ``A`` and ``B`` are Jacobians of the discrete step map (RK4 plus
    renormalization); ``defect`` is the shooting continuity residual and
    is filled by the transcription, not by ``linearize_discrete``.
    """

    A: np.ndarray
    B: np.ndarray
    defect: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Vector core (batched over leading dimensions)
# ---------------------------------------------------------------------------


def _quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a (x) b, scalar-first, batched."""
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate([w, v], axis=-1)


def _quat_conjugate(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply R(q) to v: (w^2 - u.u) v + 2 (u.v) u + 2 w (u x v)."""
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.sum(u * v, axis=-1, keepdims=True)
    uu = np.sum(u * u, axis=-1, keepdims=True)
    return (w * w - uu) * v + 2.0 * uv * u + 2.0 * w * np.cross(u, v)


def _skew(v: np.ndarray) -> np.ndarray:
    z = np.zeros_like(v[..., 0])
    return np.stack(
        [
            np.stack([z, -v[..., 2], v[..., 1]], axis=-1),
            np.stack([v[..., 2], z, -v[..., 0]], axis=-1),
            np.stack([-v[..., 1], v[..., 0], z], axis=-1),
        ],
        axis=-2,
    )


def _omega_matrix(w: np.ndarray) -> np.ndarray:
    """4x4 quaternion-rate matrix M(w) with dq/dt = 0.5 M(w) q for body rates w."""
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    z = np.zeros_like(wx)
    rows = [
        [z, -wx, -wy, -wz],
        [wx, z, wz, -wy],
        [wy, -wz, z, wx],
        [wz, wy, -wx, z],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _rate_jacobian(q: np.ndarray) -> np.ndarray:
    """d(M(w) q)/dw, shape (..., 4, 3)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        [-x, -y, -z],
        [w, -z, y],
        [z, w, -x],
        [-y, x, w],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def _rotate_jacobian_q(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """d(R(q) v)/dq for fixed v, shape (..., 3, 4)."""
    w = q[..., :1]
    u = q[..., 1:]
    col_w = 2.0 * (w * v + np.cross(u, v))
    uv = np.sum(u * v, axis=-1, keepdims=True)
    block = (
        -2.0 * v[..., :, None] * u[..., None, :]
        + 2.0 * uv[..., None] * np.eye(3)
        + 2.0 * u[..., :, None] * v[..., None, :]
        - 2.0 * w[..., None] * _skew(v)
    )
    return np.concatenate([col_w[..., :, None], block], axis=-1)


def _deriv(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    q = x[..., _QUAT]
    c = u[..., :1]
    omega = u[..., 1:]
    zeros = np.zeros_like(c)
    thrust_body = np.concatenate([zeros, zeros, c], axis=-1)
    dv = _rotate(q, thrust_body) + _GRAVITY_VEC
    dq = 0.5 * _quat_multiply(q, np.concatenate([zeros, omega], axis=-1))
    return np.concatenate([x[..., _VEL], dv, dq], axis=-1)


def _jac_continuous(x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    batch = x.shape[:-1]
    q = x[..., _QUAT]
    c = u[..., :1]
    omega = u[..., 1:]
    Jx = np.zeros(batch + (STATE_DIM, STATE_DIM))
    Ju = np.zeros(batch + (STATE_DIM, CONTROL_DIM))
    Jx[..., 0:3, 3:6] = np.eye(3)
    zeros = np.zeros_like(c)
    thrust_body = np.concatenate([zeros, zeros, c], axis=-1)
    Jx[..., 3:6, 6:10] = _rotate_jacobian_q(q, thrust_body)
    Jx[..., 6:10, 6:10] = 0.5 * _omega_matrix(omega)
    Ju[..., 3:6, 0] = _rotate(q, np.broadcast_to(_EZ, batch + (3,)))
    Ju[..., 6:10, 1:4] = 0.5 * _rate_jacobian(q)
    return Jx, Ju


def _rk4_raw(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = _deriv(x, u)
    k2 = _deriv(x + 0.5 * dt * k1, u)
    k3 = _deriv(x + 0.5 * dt * k2, u)
    k4 = _deriv(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _project(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=float, copy=True)
    out[..., _QUAT] = _quat_normalize(out[..., _QUAT])
    return out


def _step(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    return _project(_rk4_raw(x, u, dt))


def _step_jacobians(x: np.ndarray, u: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One RK4 step with Jacobians of the renormalized map.

    Returns ``(x_next, A, B)`` where ``A = d(step)/dx`` and ``B = d(step)/du``,
    both of the full discrete map including quaternion renormalization.
    """
    batch = x.shape[:-1]
    eye = np.broadcast_to(np.eye(STATE_DIM), batch + (STATE_DIM, STATE_DIM))

    k1 = _deriv(x, u)
    x2 = x + 0.5 * dt * k1
    k2 = _deriv(x2, u)
    x3 = x + 0.5 * dt * k2
    k3 = _deriv(x3, u)
    x4 = x + dt * k3
    k4 = _deriv(x4, u)

    J1x, J1u = _jac_continuous(x, u)
    J2x, J2u = _jac_continuous(x2, u)
    J3x, J3u = _jac_continuous(x3, u)
    J4x, J4u = _jac_continuous(x4, u)

    dk1x = J1x
    dk2x = J2x @ (eye + 0.5 * dt * dk1x)
    dk3x = J3x @ (eye + 0.5 * dt * dk2x)
    dk4x = J4x @ (eye + dt * dk3x)
    A = eye + (dt / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)

    dk1u = J1u
    dk2u = J2u + J2x @ (0.5 * dt * dk1u)
    dk3u = J3u + J3x @ (0.5 * dt * dk2u)
    dk4u = J4u + J4x @ (dt * dk3u)
    B = (dt / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)

    raw = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    q_raw = raw[..., _QUAT]
    norm = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    q_hat = q_raw / norm
    # d(q/|q|)/dq = (I - q_hat q_hat^T) / |q|
    Jn = (np.eye(4) - q_hat[..., :, None] * q_hat[..., None, :]) / norm[..., None]
    A[..., _QUAT, :] = Jn @ A[..., _QUAT, :]
    B[..., _QUAT, :] = Jn @ B[..., _QUAT, :]

    x_next = np.array(raw, copy=True)
    x_next[..., _QUAT] = q_hat
    return x_next, A, B


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def quat_rotate(q: np.ndarray | Sequence[float], vec: np.ndarray | Sequence[float]) -> np.ndarray:
    """Rotate ``vec`` by the unit quaternion ``q`` (scalar-first)."""
    q = np.asarray(q, dtype=float)
    vec = np.asarray(vec, dtype=float)
    _require_finite("quaternion", q)
    _require_finite("vector", vec)
    if abs(float(np.linalg.norm(q)) - 1.0) > 1e-9:
        raise ValueError(f"quat_rotate requires a unit quaternion, got norm {np.linalg.norm(q)}")
    return _rotate(q, vec)


def dynamics_deriv(x: State, u: Control) -> np.ndarray:
    """Continuous state derivative ``[dp, dv, dq]`` at (x, u)."""
    x.validate()
    u.validate()
    return _deriv(x.as_vector(), u.as_vector())


def integrate_step(x: State, u: Control, dt: float) -> State:
    """One RK4 step of duration ``dt`` followed by quaternion renormalization."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    x.validate()
    u.validate()
    return State.from_vector(_step(x.as_vector(), u.as_vector(), dt))


def linearize_discrete(x: State, u: Control, dt: float) -> LinearizedStage:
    """Analytic Jacobians of the discrete step map at (x, u)."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    x.validate()
    u.validate()
    _, A, B = _step_jacobians(x.as_vector(), u.as_vector(), dt)
    return LinearizedStage(A=A, B=B)


class QuadrotorModel:
    """Discrete-time transition map consumed by the shooting transcription.

    Operates on raw state/control vectors; stateless and safe to share
    across threads.
    """

    state_dim = STATE_DIM
    control_dim = CONTROL_DIM

    def step(self, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
        return _step(x, u, dt)

    def jacobians(self, x: np.ndarray, u: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
        _, A, B = _step_jacobians(x, u, dt)
        return A, B

    def discretize(self, x: np.ndarray, u: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Step and Jacobians in one pass: returns (x_next, A, B)."""
        return _step_jacobians(x, u, dt)

    def project(self, x: np.ndarray) -> np.ndarray:
        return _project(x)


QUADROTOR = QuadrotorModel()


def hover_state(position: Sequence[float] = (0.0, 0.0, 0.0)) -> State:
    return State(np.asarray(position, dtype=float), np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))


def hover_control() -> Control:
    return Control(GRAVITY, np.zeros(3))
