"""Per-agent receding-horizon spectral coverage controller.

Each control step: roll the default schedule forward, accumulate trajectory
coefficients over the memory window plus the predicted horizon, integrate the
costate backward, form the closed-form control correction, pick the
application time with the most negative insertion sensitivity, and line-search
the duration until the metric strictly decreases.  The accepted correction is
spliced into the default schedule over the current sampling interval only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import BasisContext, grad_all
from .dynamics import AgentModel, linearize, rk4_step
from .quadrature import basis_path_integral, scalar_path_integral

_TIME_EPS = 1e-9


# -- objective weights and obstacles -------------------------------------------

def spectral_metric(ck: np.ndarray, phik: np.ndarray, lam: np.ndarray, q: float) -> float:
    """Weighted sum of squared coefficient residuals."""
    ck = np.asarray(ck, dtype=float)
    phik = np.asarray(phik, dtype=float)
    if ck.shape != phik.shape:
        raise ValueError("coefficient vectors must have equal length")
    return float(q * np.sum(lam * (ck - phik) ** 2))


@dataclass(frozen=True)
class SquareObstacle:
    """Axis-aligned square keep-out region in the search space."""

    center: tuple[float, float]
    half_width: float

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts - np.asarray(self.center)
        ad = np.abs(d) - self.half_width
        m = np.maximum(ad, 0.0)
        outside = np.hypot(m[:, 0], m[:, 1])
        inside = np.minimum(np.maximum(ad[:, 0], ad[:, 1]), 0.0)
        return outside + inside

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.signed_distance(points) < 0.0

    def sd_gradient(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts - np.asarray(self.center)
        ad = np.abs(d) - self.half_width
        m = np.maximum(ad, 0.0)
        norm = np.hypot(m[:, 0], m[:, 1])
        grad = np.zeros_like(pts)
        out = norm > 0
        grad[out] = (m[out] / norm[out, None]) * np.sign(d[out])
        ins = ~out
        if np.any(ins):
            axis = np.argmax(ad[ins], axis=1)
            rows = np.nonzero(ins)[0]
            sgn = np.sign(d[rows, axis])
            grad[rows, axis] = np.where(sgn == 0, 1.0, sgn)
        return grad


@dataclass(frozen=True)
class ObstaclePenalty:
    """Smooth quadratic hinges keeping agents off keep-out squares and,
    optionally, inside the search box.

    Both terms hinge on a signed distance (negative inside the forbidden
    region) so the gradient keeps pushing out from anywhere."""

    obstacles: tuple[SquareObstacle, ...] = ()
    weight: float = 100.0
    margin: float = 0.08
    box_lengths: tuple[float, ...] | None = None
    wall_weight: float = 0.0
    wall_margin: float = 0.05

    def _wall_sd(self, pts: np.ndarray) -> np.ndarray:
        L = np.asarray(self.box_lengths)
        return np.minimum(pts, L - pts).min(axis=1)

    def value(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        total = np.zeros(pts.shape[0])
        for obs in self.obstacles:
            gap = np.maximum(0.0, self.margin - obs.signed_distance(pts))
            total += self.weight * gap**2
        if self.box_lengths is not None and self.wall_weight > 0:
            gap = np.maximum(0.0, self.wall_margin - self._wall_sd(pts))
            total += self.wall_weight * gap**2
        return total

    def gradient(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        grad = np.zeros_like(pts)
        for obs in self.obstacles:
            gap = np.maximum(0.0, self.margin - obs.signed_distance(pts))
            grad += (-2.0 * self.weight * gap)[:, None] * obs.sd_gradient(pts)
        if self.box_lengths is not None and self.wall_weight > 0:
            L = np.asarray(self.box_lengths)
            low = pts
            high = L - pts
            sd = np.minimum(low, high).min(axis=1)
            gap = np.maximum(0.0, self.wall_margin - sd)
            active = gap > 0
            if np.any(active):
                stacked = np.concatenate([low, high], axis=1)
                axis = np.argmin(stacked, axis=1)
                sd_grad = np.zeros_like(pts)
                rows = np.arange(pts.shape[0])
                dim = pts.shape[1]
                near_low = axis < dim
                sd_grad[rows[near_low], axis[near_low]] = 1.0
                sd_grad[rows[~near_low], axis[~near_low] - dim] = -1.0
                grad += (-2.0 * self.wall_weight * gap)[:, None] * sd_grad
        return grad

    def any_inside(self, points: np.ndarray) -> bool:
        return any(bool(np.any(obs.contains(points))) for obs in self.obstacles)


# -- controller configuration ---------------------------------------------------

@dataclass(frozen=True)
class ControllerParams:
    horizon: float = 1.0
    dt: float = 0.01
    sample_time: float = 0.1
    memory_window: float = 2.0
    q: float = 1.0
    r_diag: float | tuple[float, ...] = 0.01
    lambda0: float | None = None
    beta: float = 0.5
    gamma: float = 0.1
    j_max: int = 12

    def __post_init__(self):
        if self.horizon <= 0 or self.dt <= 0 or self.sample_time <= 0:
            raise ValueError("horizon, dt and sample_time must be positive")
        for name, num, den in (
            ("horizon", self.horizon, self.dt),
            ("sample_time", self.sample_time, self.dt),
        ):
            steps = num / den
            if abs(steps - round(steps)) > 1e-6:
                raise ValueError(f"{name} must be an integer multiple of dt")
        if self.sample_time > self.horizon + _TIME_EPS:
            raise ValueError("sample_time cannot exceed the horizon")
        if self.memory_window < 0 or self.q <= 0:
            raise ValueError("memory_window must be >= 0 and q > 0")
        if not (0 < self.beta < 1) or self.gamma <= 0 or self.j_max < 0:
            raise ValueError("bad line-search parameters")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def sample_steps(self) -> int:
        return int(round(self.sample_time / self.dt))

    @property
    def lam0(self) -> float:
        return self.lambda0 if self.lambda0 is not None else 10.0 * self.dt

    def r_matrix(self, m: int) -> np.ndarray:
        diag = self.r_diag
        if np.isscalar(diag):
            diag = (float(diag),) * m
        diag = np.asarray(diag, dtype=float)
        if diag.shape != (m,):
            raise ValueError(f"r_diag must be scalar or length {m}")
        if np.any(diag <= 0):
            raise ValueError("R diagonal must be positive")
        return np.diag(diag)


# -- default schedule -----------------------------------------------------------

@dataclass(frozen=True)
class Insertion:
    start: float
    end: float
    u: np.ndarray


class ControlSchedule:
    """Piecewise-constant default control over [t0, t0 + horizon].

    A base grid sampled at dt carries the padded default value; accepted
    insertions override the grid on their exact (possibly sub-dt) interval.
    """

    def __init__(self, t0, horizon, dt, pad, u_grid=None, insertions=None):
        self.t0 = float(t0)
        self.horizon = float(horizon)
        self.dt = float(dt)
        self.pad = np.asarray(pad, dtype=float)
        n_steps = int(round(self.horizon / self.dt))
        if u_grid is None:
            u_grid = np.tile(self.pad, (n_steps, 1))
        self.u_grid = np.asarray(u_grid, dtype=float)
        if self.u_grid.shape[0] != n_steps:
            raise ValueError("u_grid length must tile the horizon at dt")
        self.insertions: list[Insertion] = list(insertions or [])

    @property
    def n_steps(self) -> int:
        return self.u_grid.shape[0]

    @property
    def t_end(self) -> float:
        return self.t0 + self.horizon

    def control_at(self, t: float) -> np.ndarray:
        for ins in reversed(self.insertions):
            if ins.start - _TIME_EPS <= t < ins.end - _TIME_EPS:
                return ins.u
        j = int(math.floor((t - self.t0) / self.dt + 1e-9))
        j = min(max(j, 0), self.n_steps - 1)
        return self.u_grid[j]

    def grid_samples(self) -> np.ndarray:
        """Default control at every grid node (n_steps + 1, m); the terminal
        node repeats the final interval value."""
        return np.vstack([self.u_grid, self.u_grid[-1]])

    def write_insertion(self, u: np.ndarray, start: float, end: float) -> None:
        start = max(start, self.t0)
        end = min(end, self.t_end)
        if end - start <= _TIME_EPS:
            return
        self.insertions.append(Insertion(start=start, end=end, u=np.asarray(u, dtype=float)))

    def shifted(self, delta: float) -> "ControlSchedule":
        """Slide the window forward by delta, padding the tail."""
        k = int(round(delta / self.dt))
        if abs(k * self.dt - delta) > 1e-6 * self.dt:
            raise ValueError("shift must be an integer multiple of dt")
        new_grid = np.vstack([self.u_grid[k:], np.tile(self.pad, (k, 1))])
        new_t0 = self.t0 + delta
        kept = [ins for ins in self.insertions if ins.end > new_t0 + _TIME_EPS]
        return ControlSchedule(
            t0=new_t0, horizon=self.horizon, dt=self.dt, pad=self.pad,
            u_grid=new_grid, insertions=kept,
        )

    def copy(self) -> "ControlSchedule":
        return ControlSchedule(
            t0=self.t0, horizon=self.horizon, dt=self.dt, pad=self.pad,
            u_grid=self.u_grid.copy(), insertions=list(self.insertions),
        )


# -- trajectory memory ------------------------------------------------------------

class ErgodicMemory:
    """Ring buffer of an agent's own sampled states over the memory window.

    One state is stored per sampling interval, so the retained history is
    window / sample_time samples of the full state.
    """

    def __init__(self, window: float, sample_time: float, xv_indices: Sequence[int]):
        if window < 0:
            raise ValueError("memory window must be >= 0")
        self.window = float(window)
        self.sample_time = float(sample_time)
        self.xv_indices = list(xv_indices)
        self.times: list[float] = []
        self.states: list[np.ndarray] = []

    def append(self, t: float, x: np.ndarray) -> None:
        if self.times and t <= self.times[-1] + _TIME_EPS:
            raise ValueError("memory samples must arrive in increasing time order")
        self.times.append(float(t))
        self.states.append(np.asarray(x, dtype=float).copy())
        cutoff = self.times[-1] - self.window - _TIME_EPS
        while self.times[0] < cutoff:
            self.times.pop(0)
            self.states.pop(0)

    @property
    def t_latest(self) -> float:
        return self.times[-1]

    def elapsed(self) -> float:
        return self.times[-1] - self.times[0]

    def size_floats(self) -> int:
        """Stored history beyond the current state, in 64-bit words."""
        if not self.times:
            return 0
        return (len(self.times) - 1) * self.states[0].size

    def window_path(self) -> tuple[np.ndarray, np.ndarray]:
        times = np.asarray(self.times)
        pts = np.asarray(self.states)[:, self.xv_indices]
        return times, pts

    def past_integral(self, ctx: BasisContext) -> np.ndarray:
        """Unnormalized integral of every basis function over the stored path."""
        if len(self.times) < 2:
            return np.zeros(ctx.count)
        times, pts = self.window_path()
        return basis_path_integral(ctx, times, pts)


def accumulate_ck(
    memory: ErgodicMemory,
    pred_times: np.ndarray,
    pred_states: np.ndarray,
    ctx: BasisContext,
) -> np.ndarray:
    """Trajectory coefficients averaged over the stored past plus the
    predicted horizon; the averaging time is the union window length."""
    pred_times = np.asarray(pred_times, dtype=float)
    pred_states = np.asarray(pred_states, dtype=float)
    if pred_times.size == 0 and len(memory.times) < 2:
        raise ValueError("nothing to accumulate: empty buffer and prediction")
    pred_pts = pred_states[:, memory.xv_indices]
    horizon = pred_times[-1] - pred_times[0] if pred_times.size else 0.0
    t_e = memory.elapsed() + horizon
    total = memory.past_integral(ctx)
    if pred_times.size >= 2:
        total = total + basis_path_integral(ctx, pred_times, pred_pts)
    if t_e <= 0:
        raise ValueError("union window has zero length")
    return total / t_e


# -- simulation ---------------------------------------------------------------

def _grid_times(t_a: float, t_b: float, dt: float) -> np.ndarray:
    n = int(round((t_b - t_a) / dt))
    times = t_a + dt * np.arange(n + 1)
    times[-1] = t_b
    return times


def rollout(
    model: AgentModel,
    x0: np.ndarray,
    schedule: ControlSchedule,
    t_a: float,
    t_b: float,
    dt: float,
    insertion: Insertion | None = None,
):
    """Integrate under the schedule (plus an optional override insertion),
    splitting steps exactly at insertion boundaries."""
    times = _grid_times(t_a, t_b, dt)
    edges = [(ins.start, ins.end) for ins in schedule.insertions]
    if insertion is not None:
        edges.append((insertion.start, insertion.end))
    extra = [t for pair in edges for t in pair if t_a < t < t_b]
    if extra:
        times = np.unique(np.concatenate([times, extra]))
        keep = np.concatenate([[True], np.diff(times) > _TIME_EPS])
        times = times[keep]
    states = np.empty((times.size, model.n))
    states[0] = np.asarray(x0, dtype=float)
    for j in range(times.size - 1):
        mid = 0.5 * (times[j] + times[j + 1])
        if insertion is not None and insertion.start - _TIME_EPS <= mid < insertion.end:
            u = insertion.u
        else:
            u = schedule.control_at(mid)
        states[j + 1] = rk4_step(model, states[j], u, times[j + 1] - times[j])
    return times, states


def predict(
    model: AgentModel,
    x0: np.ndarray,
    schedule: ControlSchedule,
    horizon: float,
    dt: float,
):
    """Forward rollout of the default schedule over [t0, t0 + horizon]."""
    return rollout(model, x0, schedule, schedule.t0, schedule.t0 + horizon, dt)


# -- costate and control correction ---------------------------------------------

def _forcing(
    ctx: BasisContext,
    points_v: np.ndarray,
    weights: np.ndarray,
    n_full: int,
    xv_indices: Sequence[int],
    obstacle: ObstaclePenalty | None,
) -> np.ndarray:
    grads = grad_all(ctx, points_v)                     # (P, nk, v)
    force_v = np.einsum("pkv,k->pv", grads, weights)
    if obstacle is not None:
        force_v = force_v + obstacle.gradient(points_v)
    out = np.zeros((points_v.shape[0], n_full))
    out[:, list(xv_indices)] = force_v
    return out


def adjoint(
    times: np.ndarray,
    states: np.ndarray,
    ck: np.ndarray,
    phik: np.ndarray,
    model: AgentModel,
    schedule: ControlSchedule,
    ctx: BasisContext,
    q: float,
    t_e: float,
    n_agents: int = 1,
    obstacle: ObstaclePenalty | None = None,
) -> np.ndarray:
    """Backward costate integration from a zero terminal condition.

    The coefficient-residual forcing enters through the search-space
    components only; the obstacle hinge gradient joins the same forcing term.
    """
    ck = np.asarray(ck, dtype=float)
    phik = np.asarray(phik, dtype=float)
    if ck.shape != (ctx.count,) or phik.shape != (ctx.count,):
        raise ValueError("coefficient lengths do not match the basis context")
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    n_steps = times.size - 1
    dts = np.diff(times)
    if np.any(np.abs(dts - dts[0]) > 1e-9):
        raise ValueError("adjoint expects a uniform sampling grid")
    dt = dts[0]

    weights = 2.0 * (q / (t_e * n_agents)) * ctx.lam * (ck - phik)
    mids = 0.5 * (states[:-1] + states[1:])
    all_states = np.vstack([states, mids])
    force = _forcing(
        ctx, model.project(all_states), weights, model.n, model.xv_indices, obstacle
    )
    f_nodes = force[: times.size]
    f_mids = force[times.size :]

    rho = np.zeros((times.size, model.n))
    for j in range(n_steps - 1, -1, -1):
        u = schedule.control_at(0.5 * (times[j] + times[j + 1]))
        J_end = linearize(model, states[j + 1], u).T
        J_mid = linearize(model, mids[j], u).T
        J_start = linearize(model, states[j], u).T
        h = -dt
        r = rho[j + 1]
        k1 = -f_nodes[j + 1] - J_end @ r
        k2 = -f_mids[j] - J_mid @ (r + 0.5 * h * k1)
        k3 = -f_mids[j] - J_mid @ (r + 0.5 * h * k2)
        k4 = -f_nodes[j] - J_start @ (r + h * k3)
        rho[j] = r + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return rho


def u_star(
    states: np.ndarray,
    rho: np.ndarray,
    model: AgentModel,
    R: np.ndarray,
    schedule: ControlSchedule,
) -> np.ndarray:
    """Pointwise closed-form correction -R^{-1} h(x)^T rho + u_def (unsaturated)."""
    R = np.asarray(R, dtype=float)
    if R.shape != (model.m, model.m) or not np.allclose(R, R.T, atol=1e-12):
        raise ValueError("R must be a symmetric m x m matrix")
    try:
        factor = cho_factor(R)
    except np.linalg.LinAlgError:
        raise ValueError("R must be positive definite") from None
    u_def = schedule.grid_samples()
    out = np.empty((states.shape[0], model.m))
    for j in range(states.shape[0]):
        hx = model.response(states[j])
        out[j] = -cho_solve(factor, hx.T @ rho[j]) + u_def[j]
    return out


def saturate(u: np.ndarray, u_min: np.ndarray, u_max: np.ndarray) -> np.ndarray:
    """Channel-wise clamp onto the actuation box."""
    return np.clip(u, u_min, u_max)


def mode_insertion_gradient(
    rho_t: np.ndarray,
    x_t: np.ndarray,
    model: AgentModel,
    u_new: np.ndarray,
    u_def: np.ndarray,
) -> float:
    """Sensitivity of the metric to an infinitesimal application of u_new:
    the costate against the dynamics difference of the two controls.

    Control-affinity makes the difference exactly h(x) (u_new - u_def); the
    drift cancels analytically, which also avoids losing the tiny difference
    under a large drift term in floating point."""
    delta = np.asarray(u_new, dtype=float) - np.asarray(u_def, dtype=float)
    return float(rho_t @ (model.response(np.asarray(x_t, dtype=float)) @ delta))


def choose_tau(mig: np.ndarray) -> int | None:
    """Grid index of the most negative insertion sensitivity; earliest wins a
    tie; None when no sample is strictly negative."""
    mig = np.asarray(mig, dtype=float)
    if mig.size == 0 or np.min(mig) >= 0:
        return None
    return int(np.argmin(mig))


def line_search_lambda(
    evaluate: Callable[[float], float],
    e0: float,
    mig_tau: float,
    t_remaining: float,
    params: ControllerParams,
) -> tuple[float, float]:
    """Backtracking duration search with a sufficient-decrease acceptance.

    Returns (duration, metric) for the first candidate satisfying
    E(lam) - E(0) <= gamma * lam * mig_tau; (0, e0) when all candidates fail.
    """
    for j in range(params.j_max + 1):
        lam = params.lam0 * params.beta**j
        lam_eff = min(lam, t_remaining)
        if lam_eff <= 0:
            break
        e_lam = evaluate(lam_eff)
        if e_lam - e0 <= params.gamma * lam_eff * mig_tau:
            return lam_eff, e_lam
    return 0.0, e0


# -- full control step -------------------------------------------------------------

@dataclass
class ControllerOutput:
    """Result of one receding-horizon step for one agent."""

    accepted: bool
    tau: float | None
    lam: float
    u_at_tau: np.ndarray | None
    mig: float
    de_pred: float
    de_achieved: float
    e_before: float
    e_after: float
    u_star: np.ndarray
    schedule: ControlSchedule


def control_step(
    model: AgentModel,
    x0: np.ndarray,
    t_i: float,
    schedule: ControlSchedule,
    memory: ErgodicMemory,
    others_integral: np.ndarray,
    phik: np.ndarray,
    ctx: BasisContext,
    params: ControllerParams,
    n_agents: int = 1,
    obstacle: ObstaclePenalty | None = None,
    own_weight: float | None = None,
) -> ControllerOutput:
    """One decentralized control step.

    others_integral carries the consensus-held, unnormalized coefficient
    integrals of the rest of the network (each peer's stored window plus its
    announced default-horizon plan), with this agent's own announced share
    already removed.  The agent re-adds its fresh own contribution (stored
    window plus current prediction) at own_weight (1/N by default), so a
    candidate insertion perturbs exactly its own share of the collective
    statistics.
    """
    if abs(schedule.t0 - t_i) > 1e-6:
        raise ValueError("schedule window is not aligned with the step time")
    if own_weight is None:
        own_weight = 1.0 / n_agents
    others = np.asarray(others_integral, dtype=float)
    times, states = predict(model, x0, schedule, params.horizon, params.dt)
    pts_v = model.project(states)
    t_e = memory.elapsed() + params.horizon
    past_int = memory.past_integral(ctx)
    pred_int = basis_path_integral(ctx, times, pts_v)
    ck = (others + own_weight * (past_int + pred_int)) / t_e

    theta0 = scalar_path_integral(obstacle.value, times, pts_v) if obstacle else 0.0
    e0 = spectral_metric(ck, phik, ctx.lam, params.q) + theta0

    rho = adjoint(
        times, states, ck, phik, model, schedule, ctx,
        params.q, t_e, n_agents, obstacle,
    )
    R = params.r_matrix(model.m)
    u_corr = u_star(states, rho, model, R, schedule)
    u_sat = saturate(u_corr, model.u_min, model.u_max)
    u_def = schedule.grid_samples()

    n_steps = times.size - 1
    mig = np.array(
        [
            mode_insertion_gradient(rho[j], states[j], model, u_sat[j], u_def[j])
            for j in range(n_steps)
        ]
    )
    tau_idx = choose_tau(mig)
    if tau_idx is None:
        return ControllerOutput(
            accepted=False, tau=None, lam=0.0, u_at_tau=None, mig=0.0,
            de_pred=0.0, de_achieved=0.0, e_before=e0, e_after=e0,
            u_star=u_corr, schedule=schedule.copy(),
        )

    tau = float(times[tau_idx])
    u_ins = u_sat[tau_idx]

    def evaluate(lam_eff: float) -> float:
        ins = Insertion(start=tau, end=tau + lam_eff, u=u_ins)
        times2, states2 = rollout(
            model, x0, schedule, t_i, t_i + params.horizon, params.dt, insertion=ins
        )
        pv2 = model.project(states2)
        pred2 = basis_path_integral(ctx, times2, pv2)
        ck2 = (others + own_weight * (past_int + pred2)) / t_e
        theta = scalar_path_integral(obstacle.value, times2, pv2) if obstacle else 0.0
        return spectral_metric(ck2, phik, ctx.lam, params.q) + theta

    lam_len, e_after = line_search_lambda(
        evaluate, e0, float(mig[tau_idx]), t_i + params.horizon - tau, params
    )
    accepted = lam_len > 0
    new_schedule = schedule.copy()
    if accepted:
        new_schedule.write_insertion(u_ins, tau, min(tau + lam_len, t_i + params.sample_time))
    return ControllerOutput(
        accepted=accepted,
        tau=tau if accepted else None,
        lam=lam_len,
        u_at_tau=u_ins if accepted else None,
        mig=float(mig[tau_idx]),
        de_pred=float(mig[tau_idx]) * lam_len,
        de_achieved=e_after - e0,
        e_before=e0,
        e_after=e_after,
        u_star=u_corr,
        schedule=new_schedule,
    )


@dataclass
class CollectiveOutput:
    """Result of one centralized step over the stacked multi-agent system."""

    accepted: bool
    tau: float | None
    lam: float
    mig: float
    de_pred: float
    de_achieved: float
    e_before: float
    e_after: float
    u_star: list[np.ndarray]
    u_at_tau: list[np.ndarray] | None
    schedules: list[ControlSchedule]
    ck: np.ndarray


def stacked_control_step(
    models: Sequence[AgentModel],
    x0s: Sequence[np.ndarray],
    t_i: float,
    schedules: Sequence[ControlSchedule],
    memories: Sequence[ErgodicMemory],
    phik: np.ndarray,
    ctx: BasisContext,
    params: ControllerParams,
    obstacle: ObstaclePenalty | None = None,
) -> CollectiveOutput:
    """Centralized step over the block-diagonal collective system.

    The block structure makes every per-block quantity identical to the
    per-agent computation; the collective choice is the single application
    time minimizing the summed insertion sensitivity, with one duration
    line-searched on the collective metric.
    """
    n_agents = len(models)
    own_weight = 1.0 / n_agents
    others = np.zeros(ctx.count)
    preds = [
        predict(models[i], x0s[i], schedules[i], params.horizon, params.dt)
        for i in range(n_agents)
    ]
    times = preds[0][0]
    t_e = memories[0].elapsed() + params.horizon

    pasts = [memories[i].past_integral(ctx) for i in range(n_agents)]
    fresh_total = np.zeros(ctx.count)
    pts_list = []
    for i in range(n_agents):
        pv = models[i].project(preds[i][1])
        pts_list.append(pv)
        fresh_total = fresh_total + (pasts[i] + basis_path_integral(ctx, times, pv))
    # same float path as the per-agent step at N = 1 (others identically zero)
    ck = (others + own_weight * fresh_total) / t_e

    theta0 = 0.0
    if obstacle is not None:
        theta0 = sum(scalar_path_integral(obstacle.value, times, pv) for pv in pts_list)
    e0 = spectral_metric(ck, phik, ctx.lam, params.q) + theta0

    u_corr_all, u_sat_all, mig_total = [], [], np.zeros(times.size - 1)
    for i in range(n_agents):
        model = models[i]
        states = preds[i][1]
        rho = adjoint(
            times, states, ck, phik, model, schedules[i], ctx,
            params.q, t_e, n_agents, obstacle,
        )
        R = params.r_matrix(model.m)
        u_corr = u_star(states, rho, model, R, schedules[i])
        u_sat = saturate(u_corr, model.u_min, model.u_max)
        u_def = schedules[i].grid_samples()
        u_corr_all.append(u_corr)
        u_sat_all.append(u_sat)
        mig_total += np.array(
            [
                mode_insertion_gradient(rho[j], states[j], model, u_sat[j], u_def[j])
                for j in range(times.size - 1)
            ]
        )

    tau_idx = choose_tau(mig_total)
    if tau_idx is None:
        return CollectiveOutput(
            accepted=False, tau=None, lam=0.0, mig=0.0, de_pred=0.0,
            de_achieved=0.0, e_before=e0, e_after=e0,
            u_star=u_corr_all, u_at_tau=None,
            schedules=[s.copy() for s in schedules], ck=ck,
        )

    tau = float(times[tau_idx])
    u_ins = [u_sat_all[i][tau_idx] for i in range(n_agents)]

    def evaluate(lam_eff: float) -> float:
        fresh2 = np.zeros(ctx.count)
        theta = 0.0
        for i in range(n_agents):
            ins = Insertion(start=tau, end=tau + lam_eff, u=u_ins[i])
            times2, states2 = rollout(
                models[i], x0s[i], schedules[i], t_i, t_i + params.horizon,
                params.dt, insertion=ins,
            )
            pv2 = models[i].project(states2)
            fresh2 = fresh2 + (pasts[i] + basis_path_integral(ctx, times2, pv2))
            if obstacle is not None:
                theta += scalar_path_integral(obstacle.value, times2, pv2)
        ck2 = (others + own_weight * fresh2) / t_e
        return spectral_metric(ck2, phik, ctx.lam, params.q) + theta

    lam_len, e_after = line_search_lambda(
        evaluate, e0, float(mig_total[tau_idx]), t_i + params.horizon - tau, params
    )
    accepted = lam_len > 0
    new_schedules = [s.copy() for s in schedules]
    if accepted:
        for i in range(n_agents):
            new_schedules[i].write_insertion(
                u_ins[i], tau, min(tau + lam_len, t_i + params.sample_time)
            )
    return CollectiveOutput(
        accepted=accepted,
        tau=tau if accepted else None,
        lam=lam_len,
        mig=float(mig_total[tau_idx]),
        de_pred=float(mig_total[tau_idx]) * lam_len,
        de_achieved=e_after - e0,
        e_before=e0,
        e_after=e_after,
        u_star=u_corr_all,
        u_at_tau=u_ins if accepted else None,
        schedules=new_schedules,
        ck=ck,
    )
