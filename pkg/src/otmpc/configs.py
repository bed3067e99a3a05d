"""Benchmark configuration: schema, defaults, overrides, and builders.

A configuration is a nested JSON document with ``environment``, ``controller``
and ``harness`` sections. Defaults depend on the section's ``id`` (the car
task seeds the controller defaults); unknown keys are rejected with the list
of valid ones. ``--set section.key=value`` overrides are applied after the
file, and the resolved document is hashed for replay bookkeeping.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import controllers as ctl
from . import envs
from .errors import ConfigError


@dataclass(frozen=True)
class FieldSpec:
    default: object
    kind: str            # "int" | "float" | "str" | "bool" | "float_or_list" | "float_or_null"
    help: str
    unit: str = ""
    choices: Optional[tuple] = None


ENVIRONMENT_IDS = ("car", "bimodal-toy", "double-integrator")
CONTROLLER_IDS = ("otmpc", "mppi", "cem")

_ENV_COMMON = {
    "id": FieldSpec("car", "str", "environment id", choices=ENVIRONMENT_IDS),
    "w_goal": FieldSpec(0.704, "float", "squared goal-distance weight"),
    "w_obstacle": FieldSpec(479.0, "float", "crash indicator weight"),
    "w_control": FieldSpec(0.08, "float", "squared control-effort weight"),
    "success_radius": FieldSpec(0.3, "float", "goal distance below which an episode succeeds", "m"),
    "inflation_radius": FieldSpec(0.0, "float", "extra collision radius added to obstacles", "m"),
    "dt": FieldSpec(0.1, "float", "integration step", "s"),
    "accel_limit": FieldSpec(2.0, "float", "acceleration bound", "m/s^2"),
}

_ENV_BY_ID = {
    "car": {
        "difficulty": FieldSpec("easy", "str", "obstacle-field preset", choices=("easy", "hard")),
        "num_obstacles": FieldSpec(50, "int", "obstacles to attempt to place"),
        "workspace_halfwidth": FieldSpec(7.0, "float", "square workspace half-width", "m"),
        "min_start_goal_separation": FieldSpec(8.0, "float", "minimum start-goal distance", "m"),
        "start_goal_clearance": FieldSpec(0.8, "float", "obstacle surface clearance from start/goal", "m"),
        "wheelbase": FieldSpec(1.0, "float", "bicycle wheelbase", "m"),
        "steer_limit": FieldSpec(0.6, "float", "steering angle bound", "rad"),
        "v_max": FieldSpec(3.0, "float", "speed ceiling", "m/s"),
    },
    "bimodal-toy": {
        "w_goal": FieldSpec(envs.TOY_WEIGHTS.w_goal, "float", "squared goal-distance weight"),
        "w_obstacle": FieldSpec(envs.TOY_WEIGHTS.w_obstacle, "float", "crash indicator weight"),
        "w_control": FieldSpec(envs.TOY_WEIGHTS.w_control, "float", "squared control-effort weight"),
        "wheelbase": FieldSpec(1.0, "float", "bicycle wheelbase", "m"),
        "steer_limit": FieldSpec(0.6, "float", "steering angle bound", "rad"),
        "v_max": FieldSpec(3.0, "float", "speed ceiling", "m/s"),
    },
    "double-integrator": {
        "w_goal": FieldSpec(1.0, "float", "squared goal-distance weight"),
        "w_obstacle": FieldSpec(250.0, "float", "crash indicator weight"),
        "w_control": FieldSpec(0.05, "float", "squared control-effort weight"),
    },
}

_CTRL_COMMON = {
    "id": FieldSpec("otmpc", "str", "controller id", choices=CONTROLLER_IDS),
    "horizon": FieldSpec(70, "int", "planning horizon (timesteps)"),
    "iterations": FieldSpec(8, "int", "optimizer iterations per MPC cycle"),
    "samples": FieldSpec(200, "int", "proposals/samples per iteration"),
}

_PROPOSAL_FIELDS = {
    "rho": FieldSpec(0.05, "float", "global-exploration mixture rate"),
    "local_sigma": FieldSpec([0.6, 0.2], "float_or_list",
                             "per-step perturbation std, scalar or per control dim", "control units"),
    "temporal_correlation": FieldSpec(0.8, "float", "AR(1) lag-1 correlation of perturbations"),
    "global_kind": FieldSpec("uniform", "str", "global component", choices=("uniform", "gaussian")),
    "global_scale": FieldSpec(1.0, "float", "std of the gaussian global component", "control units"),
}

_CTRL_BY_ID = {
    "otmpc": {
        **_PROPOSAL_FIELDS,
        "beta": FieldSpec(0.460, "float", "inverse temperature of the Gibbs weights"),
        "particles": FieldSpec(20, "int", "candidate control sequences"),
        "epsilon": FieldSpec(0.05, "float", "entropic regularization (see epsilon_scaling)"),
        "epsilon_scaling": FieldSpec("median", "str", "epsilon interpretation",
                                     choices=("absolute", "median", "max")),
        "eta": FieldSpec(0.5, "float", "barycentric step size in (0, 1]"),
        "init_spread": FieldSpec(None, "float_or_null",
                                 "std of the initial ensemble perturbation (null: local_sigma)"),
        "sinkhorn_tolerance": FieldSpec(1e-4, "float", "transport solver L1 marginal tolerance"),
        "sinkhorn_max_iterations": FieldSpec(200, "int", "transport solver iteration cap"),
    },
    "mppi": {
        **_PROPOSAL_FIELDS,
        "rho": FieldSpec(0.0, "float", "global-exploration mixture rate"),
        "horizon": FieldSpec(30, "int", "planning horizon (timesteps)"),
        "samples": FieldSpec(500, "int", "proposals/samples per iteration"),
        "beta": FieldSpec(1.019, "float", "inverse temperature of the Gibbs weights"),
    },
    "cem": {
        "iterations": FieldSpec(5, "int", "optimizer iterations per MPC cycle"),
        "samples": FieldSpec(800, "int", "proposals/samples per iteration"),
        "elite_fraction": FieldSpec(0.1, "float", "fraction of samples kept as elites"),
        "alpha": FieldSpec(0.7, "float", "smoothing toward the elite statistics"),
        "init_std": FieldSpec(0.5, "float", "initial sampling std", "control units"),
        "min_std": FieldSpec(0.02, "float", "sampling std floor", "control units"),
        "temporal_correlation": FieldSpec(0.8, "float", "AR(1) lag-1 correlation of perturbations"),
    },
}

_HARNESS = {
    "num_trials": FieldSpec(100, "int", "Monte Carlo trials"),
    "base_seed": FieldSpec(0, "int", "root seed; trial seeds derive from (base_seed, index)"),
    "step_cap": FieldSpec(200, "int", "episode length limit"),
    "workers": FieldSpec(1, "int", "parallel trial workers"),
    "output_dir": FieldSpec("runs", "str", "artifact directory"),
    "save_trajectories": FieldSpec(False, "bool", "write per-trial trajectory.json dumps"),
    "save_figures": FieldSpec(True, "bool", "render figures next to the data outputs"),
}

SECTIONS = ("environment", "controller", "harness")


def section_fields(section: str, ident: Optional[str] = None) -> dict:
    if section == "environment":
        ident = ident or _ENV_COMMON["id"].default
        if ident not in _ENV_BY_ID:
            raise ConfigError(f"environment.id={ident!r}; valid: {', '.join(ENVIRONMENT_IDS)}")
        return {**_ENV_COMMON, **_ENV_BY_ID[ident]}
    if section == "controller":
        ident = ident or _CTRL_COMMON["id"].default
        if ident not in _CTRL_BY_ID:
            raise ConfigError(f"controller.id={ident!r}; valid: {', '.join(CONTROLLER_IDS)}")
        return {**_CTRL_COMMON, **_CTRL_BY_ID[ident]}
    if section == "harness":
        return dict(_HARNESS)
    raise ConfigError(f"unknown config section {section!r}; valid: {', '.join(SECTIONS)}")


def _coerce(key: str, spec: FieldSpec, value):
    try:
        if spec.kind == "int":
            if isinstance(value, bool) or int(value) != float(value):
                raise ValueError
            value = int(value)
        elif spec.kind == "float":
            value = float(value)
        elif spec.kind == "bool":
            if isinstance(value, str):
                value = {"true": True, "false": False}[value.lower()]
            value = bool(value)
        elif spec.kind == "str":
            value = str(value)
        elif spec.kind == "float_or_list":
            value = [float(v) for v in value] if isinstance(value, (list, tuple)) else float(value)
        elif spec.kind == "float_or_null":
            value = None if value is None else float(value)
    except (TypeError, ValueError, KeyError):
        raise ConfigError(f"{key}={value!r} is not a valid {spec.kind}") from None
    if spec.choices is not None and value not in spec.choices:
        raise ConfigError(f"{key}={value!r}; valid choices: {', '.join(map(str, spec.choices))}")
    return value


def parse_override(text: str):
    """Split a ``section.key=value`` override; values parse as JSON, else string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    dotted, raw = text.split("=", 1)
    parts = dotted.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts[0], parts[1], value


def resolve_config(document: Optional[dict] = None, overrides: Optional[list] = None,
                   seed: Optional[int] = None) -> dict:
    """Merge defaults, a config document, and overrides into a validated dict."""
    document = document or {}
    if not isinstance(document, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(document) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; valid: {', '.join(SECTIONS)}")

    staged = {s: dict(document.get(s, {})) for s in SECTIONS}
    for text in overrides or []:
        section, key, value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}; valid: {', '.join(SECTIONS)}")
        staged[section][key] = value
    if seed is not None:
        staged["harness"]["base_seed"] = seed

    resolved = {}
    problems = []
    for section in SECTIONS:
        ident = staged[section].get("id")
        try:
            fields = section_fields(section, ident)
        except ConfigError as exc:
            problems.append(str(exc))
            fields = section_fields(section)
        out = {}
        for key, spec in fields.items():
            if key in staged[section]:
                try:
                    out[key] = _coerce(f"{section}.{key}", spec, staged[section][key])
                except ConfigError as exc:
                    problems.append(str(exc))
            else:
                out[key] = spec.default
        for key in staged[section]:
            if key not in fields:
                problems.append(
                    f"unknown key {section}.{key}; valid keys: "
                    + ", ".join(sorted(fields)))
        resolved[section] = out
    if problems:
        raise ConfigError("; ".join(problems))
    return resolved


def config_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def schema_help() -> str:
    """Human-readable key listing (units and defaults) for the CLI help text."""
    lines = ["configuration keys (set via the config file or --set section.key=value):"]
    for section in SECTIONS:
        idents = {"environment": ENVIRONMENT_IDS, "controller": CONTROLLER_IDS,
                  "harness": (None,)}[section]
        for ident in idents:
            fields = section_fields(section, ident)
            title = f"[{section}]" if ident is None else f"[{section}] id={ident}"
            lines.append(f"\n{title}")
            for key, spec in sorted(fields.items()):
                unit = f" ({spec.unit})" if spec.unit else ""
                choice = f" choices: {', '.join(map(str, spec.choices))};" if spec.choices else ""
                lines.append(f"  {section}.{key} = {spec.default!r}{unit} --{choice} {spec.help}")
    return "\n".join(lines)


def matched_bimodal_configs(base_seed: int = 0, num_trials: int = 100,
                            step_cap: int = 120):
    """Budget-matched toy configs: 8 x 200 candidate/proposal coupling vs a
    1600-sample importance-sampling mean, sharing every sampler setting."""
    shared_env = {"id": "bimodal-toy"}
    shared_harness = {"num_trials": num_trials, "base_seed": base_seed,
                      "step_cap": step_cap, "save_figures": False}
    sampler = {"rho": 0.05, "local_sigma": [0.8, 0.3], "temporal_correlation": 0.8,
               "global_kind": "uniform"}
    cfg_ot = resolve_config({
        "environment": shared_env,
        "controller": {"id": "otmpc", "horizon": 30, "iterations": 4, "samples": 200,
                       "particles": 8, "beta": 3.0, "eta": 0.5,
                       "epsilon": 0.05, "epsilon_scaling": "median", **sampler},
        "harness": shared_harness,
    })
    cfg_mppi = resolve_config({
        "environment": shared_env,
        "controller": {"id": "mppi", "horizon": 30, "iterations": 4, "samples": 1600,
                       "beta": 3.0, **sampler},
        "harness": shared_harness,
    })
    return cfg_ot, cfg_mppi


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def build_environment(env_cfg: dict, rng: np.random.Generator, seed: Optional[int] = None):
    weights = envs.TaskCostWeights(env_cfg["w_goal"], env_cfg["w_obstacle"], env_cfg["w_control"])
    ident = env_cfg["id"]
    if ident == "car":
        params = envs.BicycleParams(dt=env_cfg["dt"], wheelbase=env_cfg["wheelbase"],
                                    accel_limit=env_cfg["accel_limit"],
                                    steer_limit=env_cfg["steer_limit"], v_max=env_cfg["v_max"])
        half = env_cfg["workspace_halfwidth"]
        field = envs.generate_obstacle_field(
            env_cfg["difficulty"], rng,
            num_obstacles=env_cfg["num_obstacles"],
            bounds=(-half, -half, half, half),
            min_start_goal_separation=env_cfg["min_start_goal_separation"],
            start_goal_clearance=env_cfg["start_goal_clearance"],
            seed=seed)
        return envs.BicycleEnv(field, weights, params,
                               inflation_radius=env_cfg["inflation_radius"],
                               success_radius=env_cfg["success_radius"])
    if ident == "bimodal-toy":
        params = envs.BicycleParams(dt=env_cfg["dt"], wheelbase=env_cfg["wheelbase"],
                                    accel_limit=env_cfg["accel_limit"],
                                    steer_limit=env_cfg["steer_limit"], v_max=env_cfg["v_max"])
        return envs.BicycleEnv(envs.TOY_FIELD, weights, params,
                               inflation_radius=env_cfg["inflation_radius"],
                               success_radius=env_cfg["success_radius"])
    if ident == "double-integrator":
        return envs.DoubleIntegratorEnv(weights=weights, dt=env_cfg["dt"],
                                        accel_limit=env_cfg["accel_limit"],
                                        inflation_radius=env_cfg["inflation_radius"],
                                        success_radius=env_cfg["success_radius"])
    raise ConfigError(f"environment.id={ident!r}; valid: {', '.join(ENVIRONMENT_IDS)}")


def _proposal_config(cfg: dict) -> ctl.ProposalConfig:
    sigma = cfg["local_sigma"]
    return ctl.ProposalConfig(
        rho=cfg["rho"],
        local_sigma=tuple(sigma) if isinstance(sigma, list) else (float(sigma),),
        temporal_correlation=cfg["temporal_correlation"],
        global_kind=cfg["global_kind"],
        global_scale=cfg["global_scale"],
    )


def build_controller(ctrl_cfg: dict, env, rng: np.random.Generator):
    ident = ctrl_cfg["id"]
    if ident == "otmpc":
        cfg = ctl.OtMpcConfig(
            horizon=ctrl_cfg["horizon"], num_particles=ctrl_cfg["particles"],
            num_proposals=ctrl_cfg["samples"], inner_iterations=ctrl_cfg["iterations"],
            beta=ctrl_cfg["beta"], epsilon=ctrl_cfg["epsilon"],
            epsilon_scaling=ctrl_cfg["epsilon_scaling"], eta=ctrl_cfg["eta"],
            init_spread=ctrl_cfg["init_spread"], proposal=_proposal_config(ctrl_cfg),
            sinkhorn_tolerance=ctrl_cfg["sinkhorn_tolerance"],
            sinkhorn_max_iterations=ctrl_cfg["sinkhorn_max_iterations"])
        return ctl.OtMpcController(env, cfg, rng)
    if ident == "mppi":
        cfg = ctl.MppiConfig(horizon=ctrl_cfg["horizon"], num_samples=ctrl_cfg["samples"],
                             iterations=ctrl_cfg["iterations"], beta=ctrl_cfg["beta"],
                             proposal=_proposal_config(ctrl_cfg))
        return ctl.MppiController(env, cfg, rng)
    if ident == "cem":
        cfg = ctl.CemConfig(horizon=ctrl_cfg["horizon"], num_samples=ctrl_cfg["samples"],
                            iterations=ctrl_cfg["iterations"],
                            elite_fraction=ctrl_cfg["elite_fraction"], alpha=ctrl_cfg["alpha"],
                            init_std=ctrl_cfg["init_std"], min_std=ctrl_cfg["min_std"],
                            temporal_correlation=ctrl_cfg["temporal_correlation"])
        return ctl.CemController(env, cfg, rng)
    raise ConfigError(f"controller.id={ident!r}; valid: {', '.join(CONTROLLER_IDS)}")
