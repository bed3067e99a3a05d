"""Seeded Monte Carlo benchmark harness.

Each trial derives its seed from (base_seed, trial_index) through a counter
style seed sequence, builds a fresh environment and controller, and runs one
receding-horizon episode to success, crash, or the step cap. Records are
JSONL, summaries JSON plus an aligned text table, and every aggregate is a
pure function of the record set.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.stats import binomtest

from .configs import build_controller, build_environment, config_hash, resolve_config
from .errors import ConfigError, FieldGenerationError

OUTCOMES = ("success", "crash", "timeout", "generation-error")


@dataclass
class TrialRecord:
    trial_index: int
    seed: int
    outcome: str
    steps_taken: int
    final_goal_distance: float
    wall_time: float
    config_hash: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        return cls(**json.loads(line))

    def replay_fields(self) -> dict:
        # Wall time is host load dependent and excluded from identity checks.
        d = dataclasses.asdict(self)
        d.pop("wall_time")
        return d


@dataclass
class SummaryRow:
    task: str
    controller: str
    num_trials: int
    success_percent: float
    avg_steps_mean: Optional[float]
    avg_steps_std: Optional[float]
    median_final_goal_distance: float
    outcome_counts: dict


@dataclass
class SummaryTable:
    rows: List[SummaryRow]

    def to_json_dict(self) -> dict:
        return {"rows": [dataclasses.asdict(r) for r in self.rows]}

    def to_text(self) -> str:
        header = (f"{'Task':<24}{'Controller':<12}{'Success (%)':>12}"
                  f"{'Avg. Steps':>18}{'Median Goal Dist.':>20}")
        lines = [header, "-" * len(header)]
        for r in self.rows:
            if r.avg_steps_mean is None:
                steps = "---"
            else:
                steps = f"{r.avg_steps_mean:.1f} +/- {r.avg_steps_std:.1f}"
            lines.append(f"{r.task:<24}{r.controller:<12}{r.success_percent:>12.2f}"
                         f"{steps:>18}{r.median_final_goal_distance:>20.3f}")
        return "\n".join(lines)


def trial_seed(base_seed: int, trial_index: int) -> int:
    """Stable per-trial seed; independent of execution order."""
    ss = np.random.SeedSequence([int(base_seed), int(trial_index)])
    return int(ss.generate_state(1, np.uint64)[0])


def run_episode(env, controller, step_cap: int,
                on_diagnostics: Optional[Callable] = None):
    """Drive one episode; returns (outcome, steps, states, actions)."""
    x = env.initial_state()
    states = [x.copy()]
    actions = []
    outcome = "timeout"
    steps = step_cap
    for step in range(1, step_cap + 1):
        action, diag = controller.cycle(x)
        if on_diagnostics is not None:
            on_diagnostics(step, diag)
        x = env.step(x, action)
        states.append(x.copy())
        actions.append(np.asarray(action, dtype=float).copy())
        if bool(env.collided(x)):
            outcome, steps = "crash", step
            break
        if float(env.goal_distance(x)) < env.success_radius:
            outcome, steps = "success", step
            break
    return outcome, steps, np.array(states), np.array(actions)


def run_trial(cfg: dict, trial_index: int, return_trajectory: bool = False,
              on_diagnostics: Optional[Callable] = None):
    """Execute one seeded trial of the configured benchmark.

    Deterministic per (config, trial_index); a field-generation failure is
    recorded as a ``generation-error`` outcome rather than raised.
    """
    chash = config_hash(cfg)
    seed = trial_seed(cfg["harness"]["base_seed"], trial_index)
    t0 = time.perf_counter()
    env_ss, ctrl_ss = np.random.SeedSequence(seed).spawn(2)
    try:
        env = build_environment(cfg["environment"], np.random.default_rng(env_ss), seed=seed)
    except FieldGenerationError:
        record = TrialRecord(trial_index, seed, "generation-error", 0, float("nan"),
                             time.perf_counter() - t0, chash)
        return (record, None) if return_trajectory else record
    controller = build_controller(cfg["controller"], env, np.random.default_rng(ctrl_ss))
    outcome, steps, states, actions = run_episode(env, controller, cfg["harness"]["step_cap"],
                                                  on_diagnostics)
    record = TrialRecord(
        trial_index=trial_index,
        seed=seed,
        outcome=outcome,
        steps_taken=steps,
        final_goal_distance=float(env.goal_distance(states[-1])),
        wall_time=time.perf_counter() - t0,
        config_hash=chash,
    )
    if return_trajectory:
        trajectory = {"states": states.tolist(), "controls": actions.tolist(),
                      "outcome": outcome, "field": env.field.to_json_dict()}
        return record, trajectory
    return record


def _trial_worker(args):
    cfg_json, index, with_traj = args
    return run_trial(json.loads(cfg_json), index, return_trajectory=with_traj)


def run_trials(cfg: dict, workers: Optional[int] = None, with_trajectories: bool = False):
    """Run every configured trial, optionally across processes.

    Results are ordered by trial index, so parallel and serial execution
    produce the same record sequence.
    """
    n = cfg["harness"]["num_trials"]
    workers = cfg["harness"]["workers"] if workers is None else workers
    if workers > 1:
        payload = json.dumps(cfg, sort_keys=True)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_worker, [(payload, i, with_trajectories) for i in range(n)]))
    else:
        results = [run_trial(cfg, i, return_trajectory=with_trajectories) for i in range(n)]
    if with_trajectories:
        return [r for r, _ in results], [t for _, t in results]
    return results


def aggregate_records(records: List[TrialRecord], task: str, controller: str) -> SummaryTable:
    """Fold trial records into the benchmark summary row.

    Average steps are computed over successful trials only and reported absent
    when there is no success; the goal-distance median covers all trials.
    """
    n = len(records)
    outcomes = [r.outcome for r in records]
    counts = {o: outcomes.count(o) for o in OUTCOMES if outcomes.count(o)}
    success_steps = np.array([r.steps_taken for r in records if r.outcome == "success"], dtype=float)
    if success_steps.size:
        mean = float(success_steps.mean())
        std = float(success_steps.std(ddof=1)) if success_steps.size > 1 else 0.0
    else:
        mean = std = None
    distances = np.array([r.final_goal_distance for r in records], dtype=float)
    distances = distances[np.isfinite(distances)]
    row = SummaryRow(
        task=task,
        controller=controller,
        num_trials=n,
        success_percent=100.0 * counts.get("success", 0) / n if n else 0.0,
        avg_steps_mean=mean,
        avg_steps_std=std,
        median_final_goal_distance=float(np.median(distances)) if distances.size else float("nan"),
        outcome_counts=counts,
    )
    return SummaryTable(rows=[row])


def task_label(env_cfg: dict) -> str:
    if env_cfg["id"] == "car":
        return f"car-{env_cfg['difficulty']}"
    return env_cfg["id"]


def write_records(records: List[TrialRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records(path) -> List[TrialRecord]:
    with open(path) as fh:
        return [TrialRecord.from_json(line) for line in fh if line.strip()]


def run_benchmark(cfg: dict, output_dir: Optional[str] = None,
                  workers: Optional[int] = None) -> Tuple[List[TrialRecord], SummaryTable]:
    """Run all trials, aggregate, and persist records + summaries."""
    out = cfg["harness"]["output_dir"] if output_dir is None else output_dir
    os.makedirs(out, exist_ok=True)
    with_traj = cfg["harness"]["save_trajectories"]
    result = run_trials(cfg, workers=workers, with_trajectories=with_traj)
    if with_traj:
        records, trajectories = result
        traj_dir = os.path.join(out, "trajectories")
        os.makedirs(traj_dir, exist_ok=True)
        for r, t in zip(records, trajectories):
            if t is None:
                continue
            with open(os.path.join(traj_dir, f"trial_{r.trial_index:04d}.json"), "w") as fh:
                json.dump(t, fh)
    else:
        records = result
    summary = aggregate_records(records, task_label(cfg["environment"]), cfg["controller"]["id"])
    write_records(records, os.path.join(out, "records.jsonl"))
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump({"config": cfg, "config_hash": config_hash(cfg), **summary.to_json_dict()},
                  fh, indent=2, sort_keys=True)
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(summary.to_text() + "\n")
    return records, summary


def compare_controllers(cfg_a: dict, cfg_b: dict, workers: Optional[int] = None) -> dict:
    """Paired-seed comparison of two controllers on identical environments.

    Both configs must share the environment section and the harness trial
    count, base seed, and step cap, so trial i of each run sees the same
    field. Reports per-pair outcomes, the success-rate difference, and a
    two-sided binomial sign test over discordant pairs.
    """
    if cfg_a["environment"] != cfg_b["environment"]:
        raise ConfigError("paired comparison requires identical environment sections")
    for key in ("num_trials", "base_seed", "step_cap"):
        if cfg_a["harness"][key] != cfg_b["harness"][key]:
            raise ConfigError(f"paired comparison requires identical harness.{key}")

    records_a = run_trials(cfg_a, workers=workers)
    records_b = run_trials(cfg_b, workers=workers)
    pairs = []
    wins_a = wins_b = ties = 0
    for ra, rb in zip(records_a, records_b):
        sa, sb = ra.outcome == "success", rb.outcome == "success"
        if sa and not sb:
            wins_a += 1
        elif sb and not sa:
            wins_b += 1
        else:
            ties += 1
        pairs.append({"trial_index": ra.trial_index, "seed": ra.seed,
                      "outcome_a": ra.outcome, "outcome_b": rb.outcome})
    n = len(pairs)
    success_a = 100.0 * sum(r.outcome == "success" for r in records_a) / n if n else 0.0
    success_b = 100.0 * sum(r.outcome == "success" for r in records_b) / n if n else 0.0
    discordant = wins_a + wins_b
    p_value = float(binomtest(wins_a, discordant, 0.5, alternative="two-sided").pvalue) \
        if discordant else 1.0
    return {
        "controller_a": cfg_a["controller"]["id"],
        "controller_b": cfg_b["controller"]["id"],
        "num_pairs": n,
        "success_percent_a": success_a,
        "success_percent_b": success_b,
        "success_difference": success_a - success_b,
        "wins_a": wins_a,
        "wins_b": wins_b,
        "ties": ties,
        "p_value": p_value,
        "pairs": pairs,
    }
