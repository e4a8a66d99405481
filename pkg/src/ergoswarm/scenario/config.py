"""Scenario configuration: schema, file loading, presets, validation and the
resolution step that materializes every default and random draw."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from ..basis import BoxDomain
from ..controller import ControllerParams, SquareObstacle
from ..dynamics import make_model, model_names
from ..network import (
    adjacency_from_edges,
    complete_uniform,
    metropolis_weights,
    ring_adjacency,
    validate as validate_matrix,
)

SCHEMA_VERSION = 1
PRESET_NAMES = ("coverage3", "corridor", "localization", "nash-demo")

PHI_KINDS = ("uniform", "mixture", "corridor", "eid", "adversarial")
NETWORK_KINDS = ("complete", "ring", "edges")
MODES = ("decentralized", "centralized")


class ConfigParseError(Exception):
    """Raised when a config file cannot be read or decoded at all."""


@dataclass
class AgentSpec:
    model: str = "double_integrator"
    initial_state: list[float] | None = None
    u_min: list[float] | None = None
    u_max: list[float] | None = None
    mass: float | None = None

    def make(self):
        kwargs = {}
        if self.u_min is not None:
            kwargs["u_min"] = self.u_min
        if self.u_max is not None:
            kwargs["u_max"] = self.u_max
        if self.mass is not None and self.model == "quadrotor":
            kwargs["mass"] = self.mass
        return make_model(self.model, **kwargs)


@dataclass
class PhiSpec:
    kind: str = "uniform"
    resolution: int = 100
    means: list[list[float]] | None = None
    covariances: list[list[list[float]]] | None = None
    weights: list[float] | None = None
    corridor_rects: list[list[float]] | None = None  # [xmin, ymin, xmax, ymax]
    csv: str | None = None


@dataclass
class NetworkSpec:
    kind: str = "complete"
    edges: list[list[int]] | None = None
    rounds_per_step: int = 1


@dataclass
class EstimationSpec:
    sensor_variance: float = 0.01
    sensor_range: float = 0.36
    n_targets: int = 4
    targets: list[list[float]] | None = None
    eid_samples: int = 100
    eid_resolution: int = 50
    eid_refresh_steps: int = 10
    initial_cov: float = 0.25
    process_noise: float = 0.0


@dataclass
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    name: str = "custom"
    domain_lengths: list[float] = field(default_factory=lambda: [1.0, 1.0])
    k_max: int = 5
    agents: list[AgentSpec] = field(default_factory=list)
    phi: PhiSpec = field(default_factory=PhiSpec)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    controller: dict = field(default_factory=dict)
    obstacles: list[dict] = field(default_factory=list)
    obstacle_weight: float = 100.0
    obstacle_margin: float = 0.08
    boundary_weight: float = 50.0
    boundary_margin: float = 0.05
    estimation: EstimationSpec | None = None
    duration: float = 30.0
    seed: int = 0
    mode: str = "decentralized"
    workers: int = 1
    resolved: bool = False

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def controller_params(self) -> ControllerParams:
        fields = dict(self.controller)
        if "r_diag" in fields and isinstance(fields["r_diag"], list):
            fields["r_diag"] = tuple(fields["r_diag"])
        return ControllerParams(**fields)

    def domain(self) -> BoxDomain:
        return BoxDomain(lengths=tuple(self.domain_lengths))

    def square_obstacles(self) -> tuple[SquareObstacle, ...]:
        return tuple(
            SquareObstacle(center=tuple(o["center"]), half_width=o["half_width"])
            for o in self.obstacles
        )


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Build a config from plain data; raises ValueError on structural junk."""
    if not isinstance(raw, dict):
        raise ValueError("config root must be a table/object")
    known = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    data = copy.deepcopy(raw)
    try:
        agents = [AgentSpec(**a) for a in data.pop("agents", [])]
        phi = PhiSpec(**data.pop("phi", {}))
        network = NetworkSpec(**data.pop("network", {}))
        est = data.pop("estimation", None)
        estimation = EstimationSpec(**est) if est is not None else None
        return ScenarioConfig(
            agents=agents, phi=phi, network=network, estimation=estimation, **data
        )
    except TypeError as exc:
        raise ValueError(f"malformed config: {exc}") from None


def load_config_file(path) -> dict:
    """Read a JSON or TOML config file into plain data."""
    path = Path(path)
    if not path.exists():
        raise ConfigParseError(f"config file not found: {path}")
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text.decode("utf-8"))
        return json.loads(text.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigParseError(f"cannot parse {path.name}: {exc}") from None


# -- network construction -------------------------------------------------------

def build_network_matrix(spec: NetworkSpec, n_agents: int) -> np.ndarray:
    if spec.kind == "complete":
        return complete_uniform(n_agents)
    if spec.kind == "ring":
        return metropolis_weights(ring_adjacency(n_agents))
    if spec.kind == "edges":
        if not spec.edges:
            raise ValueError("network kind 'edges' requires an edge list")
        return metropolis_weights(adjacency_from_edges(n_agents, spec.edges))
    raise ValueError(f"unknown network kind '{spec.kind}'")


# -- resolution ------------------------------------------------------------------

def _initial_state_for(model_name: str, position: np.ndarray) -> list[float]:
    if model_name == "single_integrator":
        return [float(position[0]), float(position[1])]
    if model_name == "double_integrator":
        return [float(position[0]), float(position[1]), 0.0, 0.0]
    if model_name == "quadrotor":
        state = [0.0] * 12
        state[0], state[1] = float(position[0]), float(position[1])
        state[2] = 0.5
        return state
    raise ValueError(f"unknown model '{model_name}'")


def _draw_clear_position(rng, lengths, obstacles, margin, max_tries=200):
    lengths = np.asarray(lengths)
    for _ in range(max_tries):
        pos = rng.uniform(0.08 * lengths, 0.92 * lengths)
        if all(
            float(obs.signed_distance(pos[None, :])[0]) > margin for obs in obstacles
        ):
            return pos
    raise ValueError("could not place a point clear of the obstacles")


def resolve_config(config: ScenarioConfig) -> ScenarioConfig:
    """Materialize defaults and every seed-dependent draw into a snapshot.

    Re-running from the resolved snapshot reproduces the run exactly, so the
    snapshot is what gets written next to the logs.
    """
    out = config_from_dict(config.to_dict())
    out.controller = asdict_controller(out.controller_params())
    obstacles = out.square_obstacles()

    rng_init = np.random.default_rng([out.seed, 1])
    for agent in out.agents:
        if agent.initial_state is None:
            pos = _draw_clear_position(
                rng_init, out.domain_lengths, obstacles, out.obstacle_margin + 0.02
            )
            agent.initial_state = _initial_state_for(agent.model, pos)
        model = agent.make()
        agent.u_min = [float(v) for v in model.u_min]
        agent.u_max = [float(v) for v in model.u_max]

    if out.estimation is not None:
        if out.estimation.targets is None:
            rng_t = np.random.default_rng([out.seed, 2])
            targets = []
            for _ in range(out.estimation.n_targets):
                pos = _draw_clear_position(rng_t, out.domain_lengths, obstacles, 0.02)
                targets.append([float(pos[0]), float(pos[1])])
            out.estimation.targets = targets
        out.estimation.n_targets = len(out.estimation.targets)

    out.resolved = True
    return out


def asdict_controller(params: ControllerParams) -> dict:
    return {
        "horizon": params.horizon,
        "dt": params.dt,
        "sample_time": params.sample_time,
        "memory_window": params.memory_window,
        "q": params.q,
        "r_diag": params.r_diag if np.isscalar(params.r_diag) else list(params.r_diag),
        "lambda0": params.lam0,
        "beta": params.beta,
        "gamma": params.gamma,
        "j_max": params.j_max,
    }


# -- validation ------------------------------------------------------------------

def validate_config(config: ScenarioConfig) -> list[str]:
    """Semantic checks; returns a list of violations (empty = valid)."""
    v: list[str] = []
    if config.schema_version != SCHEMA_VERSION:
        v.append(f"unsupported schema_version {config.schema_version}")
    if len(config.agents) < 1:
        v.append("at least one agent is required")
    if config.duration <= 0:
        v.append("duration must be positive")
    if config.workers < 1:
        v.append("workers must be >= 1")
    if config.mode not in MODES:
        v.append(f"mode must be one of {MODES}")
    if not (0 <= config.seed < 2**64):
        v.append("seed must fit in an unsigned 64-bit integer")
    if config.k_max < 0:
        v.append("k_max must be >= 0")
    try:
        domain = config.domain()
    except ValueError as exc:
        v.append(str(exc))
        domain = None

    try:
        params = config.controller_params()
        steps = config.duration / params.sample_time
        if abs(steps - round(steps)) > 1e-6:
            v.append("duration must be an integer multiple of sample_time")
        if config.estimation is not None and config.estimation.eid_refresh_steps < 1:
            v.append("eid_refresh_steps must be >= 1")
    except (TypeError, ValueError) as exc:
        v.append(f"controller: {exc}")

    for i, agent in enumerate(config.agents):
        if agent.model not in model_names():
            v.append(f"agent {i}: unknown model '{agent.model}'")
            continue
        try:
            model = agent.make()
        except ValueError as exc:
            v.append(f"agent {i}: {exc}")
            continue
        if agent.initial_state is not None:
            state = np.asarray(agent.initial_state, dtype=float)
            if state.shape != (model.n,):
                v.append(
                    f"agent {i}: initial state needs {model.n} entries, got {state.size}"
                )
            elif not np.all(np.isfinite(state)):
                v.append(f"agent {i}: initial state must be finite")

    if config.phi.kind not in PHI_KINDS:
        v.append(f"phi kind must be one of {PHI_KINDS}")
    if config.phi.kind == "mixture":
        if not (config.phi.means and config.phi.covariances and config.phi.weights):
            v.append("mixture phi requires means, covariances and weights")
        elif not (
            len(config.phi.means) == len(config.phi.covariances) == len(config.phi.weights)
        ):
            v.append("mixture phi components must align")
    if config.phi.kind == "corridor" and not config.phi.corridor_rects:
        v.append("corridor phi requires corridor_rects")
    if config.phi.kind in ("eid", "adversarial") and config.estimation is None:
        v.append(f"phi kind '{config.phi.kind}' requires an estimation section")
    if config.phi.kind == "adversarial" and len(config.agents) != 2:
        v.append("adversarial phi requires exactly two agents")
    if config.phi.resolution < 2:
        v.append("phi resolution must be >= 2")

    if config.network.kind not in NETWORK_KINDS:
        v.append(f"network kind must be one of {NETWORK_KINDS}")
    if config.network.rounds_per_step < 1:
        v.append("rounds_per_step must be >= 1")
    elif config.mode == "decentralized" and len(config.agents) >= 1:
        try:
            P = build_network_matrix(config.network, len(config.agents))
            for problem in validate_matrix(P):
                v.append(f"network: {problem}")
        except ValueError as exc:
            v.append(f"network: {exc}")

    for i, obs in enumerate(config.obstacles):
        if "center" not in obs or "half_width" not in obs:
            v.append(f"obstacle {i}: needs center and half_width")
            continue
        if obs["half_width"] <= 0:
            v.append(f"obstacle {i}: half_width must be positive")
        elif domain is not None:
            c = np.asarray(obs["center"], dtype=float)
            if c.shape != (2,) or np.any(c < 0) or np.any(c > np.asarray(domain.lengths)):
                v.append(f"obstacle {i}: center must lie inside the domain")
    if config.obstacle_weight < 0 or config.obstacle_margin < 0:
        v.append("obstacle weight and margin must be >= 0")
    if config.boundary_weight < 0 or config.boundary_margin < 0:
        v.append("boundary weight and margin must be >= 0")

    est = config.estimation
    if est is not None:
        if est.sensor_variance <= 0:
            v.append("sensor_variance must be positive")
        if est.sensor_range <= 0:
            v.append("sensor_range must be positive")
        if est.targets is None and est.n_targets < 1:
            v.append("n_targets must be >= 1")
        if est.eid_samples < 1 or est.eid_resolution < 2:
            v.append("eid_samples must be >= 1 and eid_resolution >= 2")
        if est.initial_cov <= 0:
            v.append("initial_cov must be positive")
        if est.process_noise < 0:
            v.append("process_noise must be >= 0")
        if est.targets is not None and domain is not None:
            for k, tgt in enumerate(est.targets):
                t = np.asarray(tgt, dtype=float)
                if t.shape != (2,) or np.any(t < 0) or np.any(t > np.asarray(domain.lengths)):
                    v.append(f"target {k}: must lie inside the domain")
    return v


# -- presets ----------------------------------------------------------------------

def preset(name: str) -> ScenarioConfig:
    """Documented experiment presets (unresolved; resolve before running)."""
    if name == "coverage3":
        return ScenarioConfig(
            name="coverage3",
            agents=[AgentSpec(model="double_integrator") for _ in range(3)],
            phi=PhiSpec(
                kind="mixture",
                means=[[0.3, 0.7], [0.7, 0.3]],
                covariances=[
                    [[0.01, 0.0], [0.0, 0.01]],
                    [[0.01, 0.0], [0.0, 0.01]],
                ],
                weights=[0.5, 0.5],
            ),
            duration=30.0,
        )
    if name == "corridor":
        return ScenarioConfig(
            name="corridor",
            agents=[AgentSpec(model="double_integrator") for _ in range(3)],
            phi=PhiSpec(
                kind="corridor",
                corridor_rects=[
                    [0.0, 0.0, 0.25, 1.0],
                    [0.0, 0.0, 1.0, 0.25],
                ],
            ),
            duration=30.0,
        )
    if name == "localization":
        return ScenarioConfig(
            name="localization",
            agents=[AgentSpec(model="double_integrator") for _ in range(3)],
            phi=PhiSpec(kind="eid", resolution=40),
            estimation=EstimationSpec(
                sensor_variance=0.01,
                sensor_range=0.36,
                n_targets=4,
                eid_samples=100,
                eid_resolution=40,
                eid_refresh_steps=10,
                initial_cov=0.25,
            ),
            obstacles=[
                {"center": [0.3, 0.7], "half_width": 0.08},
                {"center": [0.72, 0.3], "half_width": 0.08},
            ],
            obstacle_weight=100.0,
            obstacle_margin=0.06,
            duration=20.0,
        )
    if name == "nash-demo":
        return ScenarioConfig(
            name="nash-demo",
            agents=[AgentSpec(model="double_integrator") for _ in range(2)],
            phi=PhiSpec(kind="adversarial", resolution=50),
            estimation=EstimationSpec(
                sensor_variance=0.01,
                sensor_range=1.5,
                n_targets=1,
                eid_samples=100,
                eid_resolution=50,
                eid_refresh_steps=5,
                initial_cov=0.1,
                process_noise=0.02,
            ),
            duration=30.0,
        )
    raise ValueError(f"unknown preset '{name}', expected one of {PRESET_NAMES}")
