"""Bearing-only sensing, per-agent EKF over stationary target positions, and
network-wide belief fusion in information form."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .network import consensus_round

logger = logging.getLogger(__name__)

_DEGENERATE_RANGE = 1e-9
_SPD_JITTER = 1e-12


@dataclass(frozen=True)
class SensorModel:
    """Bearing-only sensor: angle to target plus Gaussian noise, finite range."""

    variance: float
    radius: float

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("sensor variance must be positive")
        if self.radius <= 0:
            raise ValueError("sensor radius must be positive")


@dataclass
class TargetBelief:
    """Gaussian belief over a planar target position."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if not _is_spd(self.cov):
            raise ValueError(f"belief covariance must be SPD, got {self.cov}")


def _is_spd(mat: np.ndarray) -> bool:
    if not np.allclose(mat, mat.T, atol=1e-9):
        return False
    try:
        np.linalg.cholesky(mat)
        return True
    except np.linalg.LinAlgError:
        return False


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def measure(
    sensor: SensorModel,
    agent_pos: np.ndarray,
    target_pos: np.ndarray,
    rng: np.random.Generator | None = None,
) -> float | None:
    """Noisy bearing from agent to target, or None when out of range."""
    agent_pos = np.asarray(agent_pos, dtype=float).reshape(2)
    target_pos = np.asarray(target_pos, dtype=float).reshape(2)
    delta = target_pos - agent_pos
    dist = float(np.hypot(delta[0], delta[1]))
    if dist < _DEGENERATE_RANGE:
        raise ValueError("agent and target positions coincide")
    if dist > sensor.radius:
        return None
    bearing = math.atan2(delta[1], delta[0])
    if rng is not None:
        bearing += float(rng.normal(0.0, math.sqrt(sensor.variance)))
    return wrap_angle(bearing)


def bearing_jacobian(agent_pos: np.ndarray, target_mean: np.ndarray) -> np.ndarray:
    """d(bearing)/d(target position) at the belief mean: shape (2,)."""
    delta = np.asarray(target_mean, dtype=float) - np.asarray(agent_pos, dtype=float)
    d2 = float(delta @ delta)
    return np.array([-delta[1], delta[0]]) / d2


def ekf_update(
    belief: TargetBelief,
    measurement: float,
    agent_pos: np.ndarray,
    sensor: SensorModel,
) -> TargetBelief:
    """Standard EKF correction for one bearing, innovation wrapped to (-pi, pi].

    Stationary targets carry no process model; the update is skipped (and
    logged) when the agent sits on top of the belief mean, where the bearing
    linearization degenerates.
    """
    agent_pos = np.asarray(agent_pos, dtype=float).reshape(2)
    delta = belief.mean - agent_pos
    if float(np.hypot(delta[0], delta[1])) < _DEGENERATE_RANGE:
        logger.warning("EKF update skipped: degenerate geometry at %s", agent_pos)
        return belief

    H = bearing_jacobian(agent_pos, belief.mean)
    predicted = math.atan2(delta[1], delta[0])
    innovation = wrap_angle(measurement - predicted)
    S = float(H @ belief.cov @ H) + sensor.variance
    K = belief.cov @ H / S
    mean = belief.mean + K * innovation
    cov = belief.cov - np.outer(K, K) * S
    cov = 0.5 * (cov + cov.T)
    if not _is_spd(cov):
        cov = cov + _SPD_JITTER * np.eye(2)
        logger.debug("EKF covariance jittered to restore SPD")
    return TargetBelief(mean=mean, cov=cov)


def fuse_beliefs(
    beliefs: list[list[TargetBelief]], P: np.ndarray, rounds: int = 1
) -> list[list[TargetBelief]]:
    """Consensus-average per-target beliefs across agents in information form.

    beliefs[i][k] is agent i's belief over target k.  The information matrix
    and information vector are flattened, pushed through the averaging rounds,
    and converted back; SPD is restored by symmetrization plus jitter when
    the averaged information matrix is near-singular.
    """
    n_agents = len(beliefs)
    if n_agents == 0:
        raise ValueError("no beliefs to fuse")
    n_targets = len(beliefs[0])
    if any(len(row) != n_targets for row in beliefs):
        raise ValueError("every agent must hold one belief per target")

    locals_ = np.empty((n_agents, n_targets * 5))
    for i, row in enumerate(beliefs):
        parts = []
        for belief in row:
            info = np.linalg.inv(belief.cov)
            vec = info @ belief.mean
            parts.extend([info[0, 0], info[0, 1], info[1, 1], vec[0], vec[1]])
        locals_[i] = parts

    for _ in range(max(1, rounds)):
        locals_ = consensus_round(locals_, P)

    fused: list[list[TargetBelief]] = []
    for i in range(n_agents):
        row = []
        for k in range(n_targets):
            a, b, c, v0, v1 = locals_[i, 5 * k : 5 * k + 5]
            info = np.array([[a, b], [b, c]])
            if np.linalg.det(info) < _SPD_JITTER:
                info = info + _SPD_JITTER * np.eye(2)
                logger.warning("fused information matrix jittered (near-singular)")
            cov = np.linalg.inv(info)
            cov = 0.5 * (cov + cov.T)
            mean = cov @ np.array([v0, v1])
            row.append(TargetBelief(mean=mean, cov=cov))
        fused.append(row)
    return fused
