"""Run loops: the decentralized main loop, the centralized baseline over the
stacked system, metric evaluation and structured run logs."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..basis import BoxDomain, build_context, eval_all
from ..controller import (
    ControlSchedule,
    ControllerParams,
    ErgodicMemory,
    ObstaclePenalty,
    control_step,
    rollout,
    spectral_metric,
    stacked_control_step,
)
from ..dynamics import ModelBlowup
from ..estimation import SensorModel, TargetBelief, ekf_update, fuse_beliefs, measure
from ..network import complete_uniform, consensus_round
from ..quadrature import basis_path_integral
from ..spatial import (
    SpatialField,
    apply_mask,
    decompose,
    eid,
    gaussian_mixture,
    load_field_csv,
    normalize,
    uniform_field,
)
from .config import ScenarioConfig, build_network_matrix, resolve_config, validate_config

logger = logging.getLogger(__name__)

_EVADER_BUMP_SIGMA = 0.2


class RunAborted(RuntimeError):
    def __init__(self, message: str, step: int, agent: int | None = None):
        super().__init__(message)
        self.step = step
        self.agent = agent


class ConfigInvalid(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class RunLog:
    """Structured per-interval records plus the resolved config snapshot."""

    config: dict
    records: list[dict] = field(default_factory=list)

    def jsonl_text(self) -> str:
        return "".join(
            json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
            for rec in self.records
        )

    def summary_csv_text(self) -> str:
        n_agents = len(self.config["agents"])
        with_rmse = any(rec.get("target_rmse") is not None for rec in self.records)
        cols = ["t", "E_collective"]
        cols += [f"E_agent_{i + 1}" for i in range(n_agents)]
        cols.append("consensus_disagreement")
        if with_rmse:
            cols.append("target_rmse")
        lines = [",".join(cols)]
        for rec in self.records:
            row = [repr(rec["t"]), repr(rec["metric_collective"])]
            row += [repr(agent["metric"]) for agent in rec["agents"]]
            row.append(repr(rec["consensus_disagreement"]))
            if with_rmse:
                row.append(repr(rec["target_rmse"]))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_jsonl(text: str) -> list[dict]:
        return [json.loads(line) for line in text.splitlines() if line.strip()]

    @staticmethod
    def parse_summary_csv(text: str) -> dict[str, list[float]]:
        return parse_csv_table(text)


def parse_csv_table(text: str) -> dict[str, list[float]]:
    """Read a headered numeric CSV back into column lists."""
    lines = [line for line in text.splitlines() if line.strip()]
    header = lines[0].split(",")
    columns: dict[str, list[float]] = {name: [] for name in header}
    for line in lines[1:]:
        for name, cell in zip(header, line.split(",")):
            columns[name].append(float(cell))
    return columns


def _py(value):
    """Convert numpy containers to plain Python for stable JSON output."""
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_py(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_py(v) for v in value]
    if isinstance(value, dict):
        return {k: _py(v) for k, v in value.items()}
    return value


# -- metric evaluation -------------------------------------------------------------

def _clip_path(times, points, a, b):
    times = np.asarray(times, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a = max(a, times[0])
    b = min(b, times[-1])
    if b < a:
        raise ValueError("window does not intersect the trajectory")
    interp_a = np.array([np.interp(a, times, points[:, d]) for d in range(points.shape[1])])
    if b == a:
        return np.array([a]), interp_a[None, :]
    interp_b = np.array([np.interp(b, times, points[:, d]) for d in range(points.shape[1])])
    inside = (times > a) & (times < b)
    ct = np.concatenate([[a], times[inside], [b]])
    cp = np.vstack([interp_a, points[inside], interp_b])
    return ct, cp


def corridor_predicate(rects):
    """Membership test for a union of axis-aligned rectangles."""
    rects = [tuple(r) for r in rects]

    def inside(points):
        ok = np.zeros(points.shape[0], dtype=bool)
        for xmin, ymin, xmax, ymax in rects:
            ok |= (
                (points[:, 0] >= xmin)
                & (points[:, 0] <= xmax)
                & (points[:, 1] >= ymin)
                & (points[:, 1] <= ymax)
            )
        return ok

    return inside


def static_phi_field(cfg: ScenarioConfig) -> SpatialField | None:
    """Materialize the target density for the run-independent phi kinds
    (uniform, mixture, corridor, CSV import), masked by any obstacles.
    Returns None for belief-driven kinds."""
    phi = cfg.phi
    domain = cfg.domain()
    if phi.csv:
        fld = normalize(load_field_csv(phi.csv))
    elif phi.kind == "uniform":
        fld = uniform_field(domain, phi.resolution)
    elif phi.kind == "mixture":
        fld = gaussian_mixture(
            domain, phi.means, phi.covariances, phi.weights, phi.resolution
        )
    elif phi.kind == "corridor":
        fld = apply_mask(
            uniform_field(domain, phi.resolution), corridor_predicate(phi.corridor_rects)
        )
    else:
        return None
    obstacles = cfg.square_obstacles()
    if obstacles:
        def clear(points):
            keep = np.ones(points.shape[0], dtype=bool)
            for obs in obstacles:
                keep &= ~obs.contains(points)
            return keep

        fld = apply_mask(fld, clear)
    return fld


def evaluate_metric(trajectories, phik, ctx, q, window=None) -> float:
    """Weighted squared-residual metric of trajectories against target
    coefficients over a time window (full span when window is None).

    trajectories: sequence of (times, search-space points) pairs; the
    collective coefficients are the per-agent time-averages, averaged.
    """
    if len(trajectories) == 0:
        raise ValueError("need at least one trajectory")
    cks = []
    for times, points in trajectories:
        times = np.asarray(times, dtype=float)
        a, b = window if window is not None else (times[0], times[-1])
        ct, cp = _clip_path(times, points, a, b)
        span = ct[-1] - ct[0]
        if span <= 0:
            cks.append(eval_all(ctx, cp[:1])[0])
        else:
            cks.append(basis_path_integral(ctx, ct, cp) / span)
    collective = np.mean(cks, axis=0)
    return spectral_metric(collective, phik, ctx.lam, q)


# -- runtime ------------------------------------------------------------------------

class _Runtime:
    """Shared state for one run (either mode)."""

    def __init__(self, cfg: ScenarioConfig, centralized: bool):
        self.cfg = cfg
        self.centralized = centralized
        self.domain: BoxDomain = cfg.domain()
        self.ctx = build_context(self.domain, cfg.k_max)
        self.params: ControllerParams = cfg.controller_params()
        self.n_agents = len(cfg.agents)
        self.models = [spec.make() for spec in cfg.agents]
        self.x = [np.asarray(spec.initial_state, dtype=float) for spec in cfg.agents]
        self.obstacles = cfg.square_obstacles()
        self.obstacle = None
        if self.obstacles or cfg.boundary_weight > 0:
            self.obstacle = ObstaclePenalty(
                obstacles=self.obstacles,
                weight=cfg.obstacle_weight,
                margin=cfg.obstacle_margin,
                box_lengths=self.domain.lengths,
                wall_weight=cfg.boundary_weight,
                wall_margin=cfg.boundary_margin,
            )
        self.P = (
            complete_uniform(self.n_agents)
            if centralized
            else build_network_matrix(cfg.network, self.n_agents)
        )
        self.rounds = cfg.network.rounds_per_step
        # weight each agent's own announcement retains after the rounds
        self.self_weight = np.diag(np.linalg.matrix_power(self.P, self.rounds)).copy()
        self.n_steps = int(round(cfg.duration / self.params.sample_time))

        self.memories = [
            ErgodicMemory(
                window=self.params.memory_window,
                sample_time=self.params.sample_time,
                xv_indices=model.xv_indices,
            )
            for model in self.models
        ]
        for mem, x in zip(self.memories, self.x):
            mem.append(0.0, x)
        self.schedules = [
            ControlSchedule(
                t0=0.0,
                horizon=self.params.horizon,
                dt=self.params.dt,
                pad=model.neutral_control,
            )
            for model in self.models
        ]

        # evaluation bookkeeping (harness-side, ground truth)
        self.gt_int = [np.zeros(self.ctx.count) for _ in range(self.n_agents)]
        self.obstacle_hits = [False] * self.n_agents

        self._setup_estimation()
        self.phik = self._initial_phik()
        # bootstrap exchange so the first control step holds peer plans
        self.others = [np.zeros(self.ctx.count)] * self.n_agents
        self.disagreement = 0.0
        self._exchange([self._payload(j, self.schedules[j]) for j in range(self.n_agents)])

        self.executor = (
            ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
        )

    # -- estimation ----------------------------------------------------------

    def _setup_estimation(self):
        est = self.cfg.estimation
        self.sensor = None
        self.targets = None
        self.beliefs = None
        self.adversarial = self.cfg.phi.kind == "adversarial"
        if est is None:
            return
        self.sensor = SensorModel(variance=est.sensor_variance, radius=est.sensor_range)
        center = 0.5 * np.asarray(self.domain.lengths)
        prior = est.initial_cov * np.eye(2)
        if self.adversarial:
            # the pursuer's single "target" is the evader
            self.beliefs = [[TargetBelief(mean=center.copy(), cov=prior.copy())]]
        else:
            self.targets = np.asarray(est.targets, dtype=float)
            self.beliefs = [
                [
                    TargetBelief(mean=center.copy(), cov=prior.copy())
                    for _ in range(self.targets.shape[0])
                ]
                for _ in range(self.n_agents)
            ]
        self.meas_rngs = [
            np.random.default_rng([self.cfg.seed, 1000 + j]) for j in range(self.n_agents)
        ]

    def _measurement_phase(self):
        est = self.cfg.estimation
        if est is None:
            return
        if self.adversarial:
            pursuer_pos = self.models[0].project(self.x[0])
            evader_pos = self.models[1].project(self.x[1])
            try:
                z = measure(self.sensor, pursuer_pos, evader_pos, self.meas_rngs[0])
            except ValueError:
                z = None
            belief = self.beliefs[0][0]
            if z is not None:
                belief = ekf_update(belief, z, pursuer_pos, self.sensor)
            if est.process_noise > 0:
                belief = TargetBelief(
                    mean=belief.mean,
                    cov=belief.cov
                    + est.process_noise * self.params.sample_time * np.eye(2),
                )
            self.beliefs[0][0] = belief
            return
        for j in range(self.n_agents):
            pos = self.models[j].project(self.x[j])
            for k in range(self.targets.shape[0]):
                try:
                    z = measure(self.sensor, pos, self.targets[k], self.meas_rngs[j])
                except ValueError:
                    continue
                if z is None:
                    continue
                self.beliefs[j][k] = ekf_update(self.beliefs[j][k], z, pos, self.sensor)
        self.beliefs = fuse_beliefs(self.beliefs, self.P, rounds=self.rounds)

    def _belief_errors(self):
        if self.beliefs is None or self.adversarial or self.targets is None:
            return None, None
        errs = [
            [float(np.linalg.norm(self.beliefs[j][k].mean - self.targets[k]))
             for k in range(self.targets.shape[0])]
            for j in range(self.n_agents)
        ]
        rmse = float(np.sqrt(np.mean(np.square(errs))))
        return errs, rmse

    # -- target distributions --------------------------------------------------

    def _obstacle_free(self, points: np.ndarray) -> np.ndarray:
        keep = np.ones(points.shape[0], dtype=bool)
        for obs in self.obstacles:
            keep &= ~obs.contains(points)
        return keep

    def _mask_obstacles(self, fld: SpatialField) -> SpatialField:
        if not self.obstacles:
            return fld
        return apply_mask(fld, self._obstacle_free)

    def _static_phi_field(self) -> SpatialField:
        fld = static_phi_field(self.cfg)
        if fld is None:
            raise ValueError(f"phi kind '{self.cfg.phi.kind}' has no static field")
        return fld

    def _eid_phik(self, agent: int, step: int) -> np.ndarray:
        est = self.cfg.estimation
        rng = np.random.default_rng([self.cfg.seed, 2000 + agent, step])
        fld = eid(
            self.beliefs[agent],
            self.sensor,
            self.domain,
            resolution=est.eid_resolution,
            n_samples=est.eid_samples,
            rng=rng,
        )
        return decompose(self._mask_obstacles(fld), self.ctx)

    def _evader_phik(self) -> np.ndarray:
        pursuer = self.models[0].project(self.x[0])
        res = self.cfg.phi.resolution
        blank = uniform_field(self.domain, res)
        centers = blank.cell_centers()
        d2 = np.sum((centers - pursuer) ** 2, axis=1)
        vals = 1.0 - np.exp(-0.5 * d2 / _EVADER_BUMP_SIGMA**2)
        fld = normalize(
            SpatialField(domain=self.domain, values=vals.reshape(blank.resolution))
        )
        return decompose(fld, self.ctx)

    def _initial_phik(self) -> list[np.ndarray]:
        kind = self.cfg.phi.kind
        if kind in ("uniform", "mixture", "corridor"):
            shared = decompose(self._static_phi_field(), self.ctx)
            return [shared.copy() for _ in range(self.n_agents)]
        if kind == "eid":
            return [self._eid_phik(j, 0) for j in range(self.n_agents)]
        if kind == "adversarial":
            return [self._eid_phik(0, 0), self._evader_phik()]
        raise ValueError(f"unknown phi kind '{kind}'")

    def _refresh_phik(self, step: int):
        est = self.cfg.estimation
        kind = self.cfg.phi.kind
        if kind == "eid":
            if step % est.eid_refresh_steps == 0:
                self.phik = [self._eid_phik(j, step) for j in range(self.n_agents)]
            locals_ = np.asarray(self.phik)
            for _ in range(self.rounds):
                locals_ = consensus_round(locals_, self.P)
            self.phik = [locals_[j] for j in range(self.n_agents)]
        elif kind == "adversarial":
            if step % est.eid_refresh_steps == 0:
                self.phik = [self._eid_phik(0, step), self._evader_phik()]

    # -- consensus --------------------------------------------------------------

    def _payload(self, j: int, schedule: ControlSchedule) -> np.ndarray:
        """Agent j's announced statistics: unnormalized coefficient integral
        over its stored window plus its current default-horizon plan."""
        model = self.models[j]
        times, states = rollout(
            model, self.x[j], schedule, schedule.t0,
            schedule.t0 + self.params.horizon, self.params.dt,
        )
        plan = basis_path_integral(self.ctx, times, model.project(states))
        return self.memories[j].past_integral(self.ctx) + plan

    def _exchange(self, payloads: list[np.ndarray]) -> None:
        """One communication phase: announced integrals are averaged over the
        configured rounds; each agent then removes its own residual share so
        the next control step can re-add fresh local data."""
        locals_ = np.asarray(payloads)
        for _ in range(self.rounds):
            locals_ = consensus_round(locals_, self.P)
        t_e = self.memories[0].elapsed() + self.params.horizon
        worst = 0.0
        for a in range(self.n_agents):
            for b in range(a + 1, self.n_agents):
                worst = max(worst, float(np.max(np.abs(locals_[a] - locals_[b]))) / t_e)
        self.disagreement = worst
        self.others = [
            locals_[j] - self.self_weight[j] * payloads[j]
            for j in range(self.n_agents)
        ]

    # -- logging -----------------------------------------------------------------

    def _agent_metric(self, j: int, t: float) -> float:
        if t <= 0:
            ck = eval_all(self.ctx, self.models[j].project(self.x[j])[None, :])[0]
        else:
            ck = self.gt_int[j] / t
        return spectral_metric(ck, self.phik[j], self.ctx.lam, self.params.q)

    def _collective_metric(self, t: float) -> float:
        cks = []
        for j in range(self.n_agents):
            if t <= 0:
                cks.append(eval_all(self.ctx, self.models[j].project(self.x[j])[None, :])[0])
            else:
                cks.append(self.gt_int[j] / t)
        phi = np.mean(self.phik, axis=0)
        return spectral_metric(np.mean(cks, axis=0), phi, self.ctx.lam, self.params.q)

    def _record(self, step: int, t: float, controls, insertions) -> dict:
        errs, rmse = self._belief_errors()
        agents = []
        for j in range(self.n_agents):
            entry = {
                "id": j,
                "state": _py(self.x[j]),
                "control": _py(controls[j]) if controls is not None else None,
                "metric": self._agent_metric(j, t),
                "history_floats": self.memories[j].size_floats(),
                "insertion": _py(insertions[j]) if insertions is not None else None,
            }
            if errs is not None:
                entry["beliefs"] = [
                    {
                        "target": k,
                        "mean": _py(self.beliefs[j][k].mean),
                        "cov": _py(self.beliefs[j][k].cov),
                        "err": errs[j][k],
                    }
                    for k in range(len(errs[j]))
                ]
            agents.append(entry)
        return {
            "step": step,
            "t": t,
            "metric_collective": self._collective_metric(t),
            "consensus_disagreement": self.disagreement,
            "obstacle_hit": any(self.obstacle_hits),
            "target_rmse": rmse,
            "agents": agents,
        }

    # -- application --------------------------------------------------------------

    def _apply(self, j: int, schedule: ControlSchedule, t_i: float, t_next: float, step: int):
        try:
            times, states = rollout(
                self.models[j], self.x[j], schedule, t_i, t_next, self.params.dt
            )
        except ModelBlowup as exc:
            raise RunAborted(str(exc), step=step, agent=j) from exc
        pts = self.models[j].project(states)
        self.gt_int[j] = self.gt_int[j] + basis_path_integral(self.ctx, times, pts)
        if self.obstacles and not self.obstacle_hits[j]:
            for obs in self.obstacles:
                if bool(np.any(obs.contains(pts))):
                    self.obstacle_hits[j] = True
                    break
        self.x[j] = states[-1]

    def close(self):
        if self.executor is not None:
            self.executor.shutdown()


def _insertion_dict(out) -> dict | None:
    if not out.accepted:
        return None
    return {
        "tau": out.tau,
        "lam": out.lam,
        "mig": out.mig,
        "de_pred": out.de_pred,
        "de_achieved": out.de_achieved,
        "e_before": out.e_before,
        "e_after": out.e_after,
    }


def run_decentralized(config: ScenarioConfig) -> RunLog:
    """Full decentralized loop: per-agent control steps, one communication
    phase per sampling interval, apply, advance."""
    cfg = config if config.resolved else resolve_config(config)
    try:
        rt = _Runtime(cfg, centralized=False)
    except ModelBlowup as exc:
        raise RunAborted(str(exc), step=0) from exc
    step = 0
    try:
        records = [rt._record(0, 0.0, None, None)]
        for step in range(rt.n_steps):
            t_i = step * rt.params.sample_time
            t_next = (step + 1) * rt.params.sample_time

            def one(j: int):
                return control_step(
                    rt.models[j],
                    rt.x[j],
                    t_i,
                    rt.schedules[j],
                    rt.memories[j],
                    rt.others[j],
                    rt.phik[j],
                    rt.ctx,
                    rt.params,
                    n_agents=rt.n_agents,
                    obstacle=rt.obstacle,
                    own_weight=rt.self_weight[j],
                )

            if rt.executor is not None:
                outputs = list(rt.executor.map(one, range(rt.n_agents)))
            else:
                outputs = [one(j) for j in range(rt.n_agents)]

            # announce committed plans before moving (peers consume them with
            # one interval of latency, as in a real network)
            rt._exchange(
                [rt._payload(j, outputs[j].schedule) for j in range(rt.n_agents)]
            )

            controls = []
            for j in range(rt.n_agents):
                schedule = outputs[j].schedule
                controls.append(schedule.control_at(t_i).copy())
                rt._apply(j, schedule, t_i, t_next, step)
                rt.memories[j].append(t_next, rt.x[j])
                rt.schedules[j] = schedule.shifted(rt.params.sample_time)

            rt._measurement_phase()
            rt._refresh_phik(step + 1)
            records.append(
                rt._record(step + 1, t_next, controls, [_insertion_dict(o) for o in outputs])
            )
        return RunLog(config=cfg.to_dict(), records=records)
    except ModelBlowup as exc:
        raise RunAborted(str(exc), step=step) from exc
    finally:
        rt.close()


def run_centralized(config: ScenarioConfig) -> RunLog:
    """Centralized baseline: one controller over the stacked block-diagonal
    system, per-agent controls extracted from the stacked correction."""
    cfg = config if config.resolved else resolve_config(config)
    if cfg.mode != "centralized":
        cfg = config_with_mode(cfg, "centralized")
    try:
        rt = _Runtime(cfg, centralized=True)
    except ModelBlowup as exc:
        raise RunAborted(str(exc), step=0) from exc
    step = 0
    try:
        records = [rt._record(0, 0.0, None, None)]
        for step in range(rt.n_steps):
            t_i = step * rt.params.sample_time
            t_next = (step + 1) * rt.params.sample_time
            phi_shared = np.mean(rt.phik, axis=0)
            out = stacked_control_step(
                rt.models,
                rt.x,
                t_i,
                rt.schedules,
                rt.memories,
                phi_shared,
                rt.ctx,
                rt.params,
                obstacle=rt.obstacle,
            )
            controls = []
            for j in range(rt.n_agents):
                schedule = out.schedules[j]
                controls.append(schedule.control_at(t_i).copy())
                rt._apply(j, schedule, t_i, t_next, step)
                rt.memories[j].append(t_next, rt.x[j])
                rt.schedules[j] = schedule.shifted(rt.params.sample_time)

            rt._measurement_phase()
            rt._refresh_phik(step + 1)
            ins = _insertion_dict(out)
            records.append(
                rt._record(step + 1, t_next, controls, [ins] * rt.n_agents)
            )
        return RunLog(config=cfg.to_dict(), records=records)
    except ModelBlowup as exc:
        raise RunAborted(str(exc), step=step) from exc
    finally:
        rt.close()


def config_with_mode(cfg: ScenarioConfig, mode: str) -> ScenarioConfig:
    from .config import config_from_dict

    data = cfg.to_dict()
    data["mode"] = mode
    return config_from_dict(data)


def run_scenario(config: ScenarioConfig) -> RunLog:
    """Resolve, validate and dispatch a run by its mode."""
    cfg = config if config.resolved else resolve_config(config)
    violations = validate_config(cfg)
    if violations:
        raise ConfigInvalid(violations)
    if cfg.mode == "centralized":
        return run_centralized(cfg)
    return run_decentralized(cfg)
