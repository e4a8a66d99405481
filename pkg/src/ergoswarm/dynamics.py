"""Control-affine agent models and fixed-step integration.

Every model has dynamics f(x, u) = g(x) + h(x) u with g the drift, h the
control response, per-channel control bounds, and a projection selecting the
planar search-space coordinates out of the full state.
"""

from __future__ import annotations

import numpy as np

GRAVITY = 9.81


class ModelBlowup(RuntimeError):
    """Raised when integration produces a non-finite state."""


class AgentModel:
    """Base class; subclasses fill in n, m, drift, response, jacobian."""

    n: int
    m: int
    xv_indices: tuple[int, ...] = (0, 1)

    def __init__(self, u_min=None, u_max=None):
        lo, hi = self.default_bounds()
        self.u_min = np.asarray(lo if u_min is None else u_min, dtype=float)
        self.u_max = np.asarray(hi if u_max is None else u_max, dtype=float)
        if self.u_min.shape != (self.m,) or self.u_max.shape != (self.m,):
            raise ValueError(f"control bounds must have shape ({self.m},)")
        if np.any(self.u_min >= self.u_max):
            raise ValueError("every control channel needs min < max")

    def default_bounds(self):
        raise NotImplementedError

    def drift(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def response(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Analytic d f / d x for f = g(x) + h(x) u."""
        raise NotImplementedError

    @property
    def neutral_control(self) -> np.ndarray:
        """Control the default schedule is padded with."""
        return np.zeros(self.m)

    def project(self, x: np.ndarray) -> np.ndarray:
        """Search-space coordinates x_v of a state (or batch of states)."""
        x = np.asarray(x, dtype=float)
        return x[..., list(self.xv_indices)]


def eval_f(model: AgentModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """f(x, u) = g(x) + h(x) u, exact affine composition (no saturation)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"state must have shape ({model.n},), got {x.shape}")
    if u.shape != (model.m,):
        raise ValueError(f"control must have shape ({model.m},), got {u.shape}")
    return model.drift(x) + model.response(x) @ u


def rk4_step(model: AgentModel, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Classical 4th-order Runge-Kutta step with u held constant."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n,) or u.shape != (model.m,):
        raise ValueError("dimension mismatch in rk4_step")
    drift, response = model.drift, model.response
    k1 = drift(x) + response(x) @ u
    x2 = x + 0.5 * dt * k1
    k2 = drift(x2) + response(x2) @ u
    x3 = x + 0.5 * dt * k2
    k3 = drift(x3) + response(x3) @ u
    x4 = x + dt * k3
    k4 = drift(x4) + response(x4) @ u
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise ModelBlowup(f"non-finite state after step from t-local x={x}")
    return out


def linearize(model: AgentModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n,) or u.shape != (model.m,):
        raise ValueError("dimension mismatch in linearize")
    return model.jacobian(x, u)


class SingleIntegrator(AgentModel):
    """Planar velocity-controlled point: x = (p1, p2), u = (v1, v2)."""

    n = 2
    m = 2

    def default_bounds(self):
        return [-1.0, -1.0], [1.0, 1.0]

    def drift(self, x):
        return np.zeros(2)

    def response(self, x):
        return np.eye(2)

    def jacobian(self, x, u):
        return np.zeros((2, 2))


class DoubleIntegrator(AgentModel):
    """Planar force-controlled point: x = (p1, p2, v1, v2), u = accelerations."""

    n = 4
    m = 2
    _A = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )
    _B = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

    def default_bounds(self):
        return [-1.0, -1.0], [1.0, 1.0]

    def drift(self, x):
        return self._A @ x

    def response(self, x):
        return self._B

    def jacobian(self, x, u):
        return self._A


class Quadrotor(AgentModel):
    """12-state quadrotor: position, velocity, ZYX Euler angles, body rates.

    Inputs are total thrust plus roll/pitch/yaw angular accelerations, so the
    rate block integrates the inputs directly.  Small linear drag on velocity
    and body rates keeps the craft stabilizable over a short horizon; set the
    coefficients to zero for the undamped form.  State layout:
    (px, py, pz, vx, vy, vz, roll, pitch, yaw, wx, wy, wz).
    """

    n = 12
    m = 4

    def __init__(
        self,
        mass: float = 1.0,
        drag_v: float = 2.0,
        drag_w: float = 4.0,
        u_min=None,
        u_max=None,
    ):
        self.mass = float(mass)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        self.drag_v = float(drag_v)
        self.drag_w = float(drag_w)
        if self.drag_v < 0 or self.drag_w < 0:
            raise ValueError("drag coefficients must be >= 0")
        super().__init__(u_min=u_min, u_max=u_max)

    def default_bounds(self):
        hover = self.mass * GRAVITY
        return [0.5 * hover, -2.0, -2.0, -2.0], [1.5 * hover, 2.0, 2.0, 2.0]

    @property
    def neutral_control(self) -> np.ndarray:
        return np.array([self.mass * GRAVITY, 0.0, 0.0, 0.0])

    @staticmethod
    def _thrust_axis(roll, pitch, yaw):
        cr, sr = np.cos(roll), np.sin(roll)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cy, sy = np.cos(yaw), np.sin(yaw)
        return np.array([cr * sp * cy + sr * sy, cr * sp * sy - sr * cy, cr * cp])

    @staticmethod
    def _euler_rate_matrix(roll, pitch):
        cr, sr = np.cos(roll), np.sin(roll)
        cp, tp = np.cos(pitch), np.tan(pitch)
        return np.array(
            [
                [1.0, sr * tp, cr * tp],
                [0.0, cr, -sr],
                [0.0, sr / cp, cr / cp],
            ]
        )

    def drift(self, x):
        out = np.zeros(12)
        out[0:3] = x[3:6]
        out[3:6] = -self.drag_v * x[3:6]
        out[5] -= GRAVITY
        out[6:9] = self._euler_rate_matrix(x[6], x[7]) @ x[9:12]
        out[9:12] = -self.drag_w * x[9:12]
        return out

    def response(self, x):
        h = np.zeros((12, 4))
        h[3:6, 0] = self._thrust_axis(x[6], x[7], x[8]) / self.mass
        h[9:12, 1:4] = np.eye(3)
        return h

    def jacobian(self, x, u):
        roll, pitch, yaw = x[6], x[7], x[8]
        wx, wy, wz = x[9], x[10], x[11]
        cr, sr = np.cos(roll), np.sin(roll)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cy, sy = np.cos(yaw), np.sin(yaw)
        tp = sp / cp

        J = np.zeros((12, 12))
        J[0:3, 3:6] = np.eye(3)
        J[3:6, 3:6] = -self.drag_v * np.eye(3)
        J[9:12, 9:12] = -self.drag_w * np.eye(3)

        # thrust acceleration sensitivity to attitude
        scale = u[0] / self.mass
        J[3:6, 6] = scale * np.array([-sr * sp * cy + cr * sy, -sr * sp * sy - cr * cy, -sr * cp])
        J[3:6, 7] = scale * np.array([cr * cp * cy, cr * cp * sy, -cr * sp])
        J[3:6, 8] = scale * np.array([-cr * sp * sy + sr * cy, cr * sp * cy + sr * sy, 0.0])

        # Euler kinematics sensitivity
        sec2 = 1.0 / (cp * cp)
        J[6, 6] = cr * tp * wy - sr * tp * wz
        J[7, 6] = -sr * wy - cr * wz
        J[8, 6] = (cr * wy - sr * wz) / cp
        J[6, 7] = (sr * wy + cr * wz) * sec2
        J[8, 7] = (sr * wy + cr * wz) * tp / cp
        J[6:9, 9:12] = self._euler_rate_matrix(roll, pitch)
        return J


_MODEL_REGISTRY = {
    "single_integrator": SingleIntegrator,
    "double_integrator": DoubleIntegrator,
    "quadrotor": Quadrotor,
}


def make_model(name: str, **kwargs) -> AgentModel:
    try:
        cls = _MODEL_REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown model '{name}', expected one of {sorted(_MODEL_REGISTRY)}"
        ) from None
    return cls(**kwargs)


def model_names() -> list[str]:
    return sorted(_MODEL_REGISTRY)
