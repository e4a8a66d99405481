"""Scenario orchestration: configuration, presets, and the run loops."""

from .config import (
    PRESET_NAMES,
    ConfigParseError,
    ScenarioConfig,
    build_network_matrix,
    config_from_dict,
    load_config_file,
    preset,
    resolve_config,
    validate_config,
)
from .runner import (
    RunAborted,
    RunLog,
    evaluate_metric,
    run_centralized,
    run_decentralized,
    run_scenario,
)

__all__ = [
    "PRESET_NAMES",
    "ConfigParseError",
    "ScenarioConfig",
    "build_network_matrix",
    "config_from_dict",
    "load_config_file",
    "preset",
    "resolve_config",
    "validate_config",
    "RunAborted",
    "RunLog",
    "evaluate_metric",
    "run_centralized",
    "run_decentralized",
    "run_scenario",
]
