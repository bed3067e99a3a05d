"""Command-line front end.

Subcommands: ``transport`` (one-off coupling solves), ``episode`` (a single
receding-horizon episode), ``bench`` (the Monte Carlo harness), ``compare``
(paired-seed controller comparison), and ``demo-bimodal`` (side-by-side
transport-coupled vs importance-sampling runs on the symmetric toy).

Exit codes: 0 success, 1 user/config error, 2 numeric non-convergence,
3 internal fault. All randomness flows from one root seed per invocation.
Report paths write figures next to their JSON/JSONL outputs unless figures
are disabled in the harness section.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench, configs, plots
from .controllers import rollout_batch
from .errors import ConfigError, DomainError, SolverFailureError
from .transport import SinkhornConfig, eot_objective, sinkhorn, uniform_simplex


def _load_json(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _resolved(args):
    document = _load_json(args.config) if args.config else {}
    return configs.resolve_config(document, args.set, args.seed)


def _verbose_sink(enabled):
    if not enabled:
        return None

    def sink(step, diag):
        slim = {k: v for k, v in diag.items() if k != "objectives"}
        print(json.dumps({"step": step, **_jsonable(slim)}, sort_keys=True), file=sys.stderr)

    return sink


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_transport(args) -> int:
    problem = _load_json(args.problem)
    if "cost" not in problem:
        raise ConfigError(f"{args.problem}: missing required field 'cost'")
    C = np.asarray(problem["cost"], dtype=float)
    if C.ndim != 2:
        raise ConfigError(f"{args.problem}: field 'cost' must be a 2-D array")
    q = np.asarray(problem["q"], dtype=float) if "q" in problem else uniform_simplex(C.shape[0])
    p = np.asarray(problem["p"], dtype=float) if "p" in problem else uniform_simplex(C.shape[1])
    cfg = SinkhornConfig(epsilon=args.epsilon, tolerance=args.tolerance,
                         max_iterations=args.max_iterations)
    coupling = sinkhorn(C, q, p, cfg)
    objective = eot_objective(C, coupling, args.epsilon)

    out_path = args.out or os.path.join(os.path.dirname(os.path.abspath(args.problem)),
                                        "coupling.json")
    payload = {
        "coupling": coupling.matrix.tolist(),
        "objective": objective,
        "iterations_used": coupling.iterations_used,
        "row_marginal_error": coupling.row_marginal_error,
        "col_marginal_error": coupling.col_marginal_error,
        "converged": coupling.converged,
        "epsilon": args.epsilon,
    }
    with open(out_path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
    print(f"objective          {objective:.12g}")
    print(f"iterations_used    {coupling.iterations_used}")
    print(f"row_marginal_error {coupling.row_marginal_error:.3e}")
    print(f"col_marginal_error {coupling.col_marginal_error:.3e}")
    print(f"converged          {coupling.converged}")
    print(f"coupling written to {out_path}")
    return 0 if coupling.converged else 2


def cmd_episode(args) -> int:
    cfg = _resolved(args)
    out = args.out or cfg["harness"]["output_dir"]
    os.makedirs(out, exist_ok=True)
    record, trajectory = bench.run_trial(cfg, 0, return_trajectory=True,
                                         on_diagnostics=_verbose_sink(args.verbose))
    traj_path = os.path.join(out, "trajectory.json")
    with open(traj_path, "w") as fh:
        json.dump(trajectory, fh, sort_keys=True)
    with open(os.path.join(out, "record.json"), "w") as fh:
        json.dump(json.loads(record.to_json()), fh, sort_keys=True, indent=2)
    if cfg["harness"]["save_figures"] and trajectory is not None:
        plots.save_trajectory_figure(
            trajectory["field"], [(cfg["controller"]["id"], np.asarray(trajectory["states"]))],
            os.path.join(out, "episode.png"),
            title=f"{bench.task_label(cfg['environment'])}: {record.outcome}")
    print(f"outcome {record.outcome} after {record.steps_taken} steps; "
          f"final goal distance {record.final_goal_distance:.3f} m")
    print(f"artifacts written to {out}")
    return 0


def cmd_bench(args) -> int:
    cfg = _resolved(args)
    out = args.out or cfg["harness"]["output_dir"]
    records, summary = bench.run_benchmark(cfg, output_dir=out, workers=args.workers)
    if cfg["harness"]["save_figures"]:
        plots.save_summary_figure(summary.to_json_dict()["rows"],
                                  os.path.join(out, "summary.png"))
    print(summary.to_text())
    print(f"artifacts written to {out}")
    return 0


def cmd_compare(args) -> int:
    cfg_a = configs.resolve_config(_load_json(args.config_a), args.set, args.seed)
    cfg_b = configs.resolve_config(_load_json(args.config_b), args.set, args.seed)
    report = bench.compare_controllers(cfg_a, cfg_b, workers=args.workers)
    out = args.out or cfg_a["harness"]["output_dir"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "comparison.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    if cfg_a["harness"]["save_figures"]:
        rows = [{"task": bench.task_label(cfg_a["environment"]), "controller": report["controller_a"],
                 "success_percent": report["success_percent_a"]},
                {"task": bench.task_label(cfg_b["environment"]), "controller": report["controller_b"],
                 "success_percent": report["success_percent_b"]}]
        plots.save_summary_figure(rows, os.path.join(out, "comparison.png"))
    print(f"{report['controller_a']} success {report['success_percent_a']:.1f}% vs "
          f"{report['controller_b']} {report['success_percent_b']:.1f}% "
          f"({report['num_pairs']} paired seeds)")
    print(f"wins {report['wins_a']}/{report['wins_b']}, ties {report['ties']}, "
          f"sign-test p = {report['p_value']:.3g}")
    print(f"artifacts written to {out}")
    return 0


def _demo_episode(env, controller, step_cap, extract_candidates):
    x = env.initial_state()
    states = [x.copy()]
    actions = []
    cycles = []
    outcome = "timeout"
    for _ in range(step_cap):
        action, _ = controller.cycle(x)
        x = env.step(x, action)
        states.append(x.copy())
        actions.append(np.asarray(action, dtype=float))
        candidates = extract_candidates(controller)
        positions = rollout_batch(env, x, candidates).states[:, :, :2]
        cycles.append(positions.tolist())
        if bool(env.collided(x)):
            outcome = "crash"
            break
        if float(env.goal_distance(x)) < env.success_radius:
            outcome = "success"
            break
    return {"states": np.array(states).tolist(),
            "controls": np.array(actions).tolist(),
            "cycles": cycles, "outcome": outcome}


def cmd_demo_bimodal(args) -> int:
    cfg_ot, cfg_mppi = configs.matched_bimodal_configs(base_seed=args.seed or 0,
                                                       num_trials=1,
                                                       step_cap=args.steps)
    out = args.out or "demo-bimodal"
    os.makedirs(out, exist_ok=True)

    dumps = {}
    for name, cfg in (("otmpc", cfg_ot), ("mppi", cfg_mppi)):
        seed = bench.trial_seed(cfg["harness"]["base_seed"], 0)
        env_ss, ctrl_ss = np.random.SeedSequence(seed).spawn(2)
        env = configs.build_environment(cfg["environment"], np.random.default_rng(env_ss))
        controller = configs.build_controller(cfg["controller"], env, np.random.default_rng(ctrl_ss))
        if name == "otmpc":
            def extract(c):
                n = c.cfg.num_particles
                return c.ensemble.particles.reshape(n, c.cfg.horizon, env.control_dim)
        else:
            def extract(c):
                return c.mean[None]
        dump = _demo_episode(env, controller, cfg["harness"]["step_cap"], extract)
        dumps[name] = dump
        with open(os.path.join(out, f"{name}_trajectory.json"), "w") as fh:
            json.dump(dump, fh, sort_keys=True)
        print(f"{name}: {dump['outcome']} after {len(dump['controls'])} steps")

    field = configs.build_environment(cfg_ot["environment"],
                                      np.random.default_rng(0)).field
    plots.save_trajectory_figure(
        field,
        [(name, np.asarray(d["states"])) for name, d in dumps.items()],
        os.path.join(out, "demo_trajectories.png"),
        title="two-route toy: executed paths")
    plots.save_ensemble_figure(field, dumps["otmpc"]["cycles"],
                               os.path.join(out, "demo_otmpc_candidates.png"),
                               title="candidate rollouts per cycle")
    print(f"artifacts written to {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                     help="override a config key (repeatable)")
    sub.add_argument("--seed", type=int, default=None, help="root seed (overrides harness.base_seed)")
    sub.add_argument("--out", default=None, help="output directory (overrides harness.output_dir)")
    sub.add_argument("--workers", type=int, default=None, help="parallel trial workers")
    sub.add_argument("--verbose", "-v", action="store_true",
                     help="stream per-cycle diagnostics as JSON lines on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otmpc",
        description="Sampling-based control via entropic optimal transport.")
    subs = parser.add_subparsers(dest="command", required=True)

    t = subs.add_parser("transport", help="solve one entropic transport problem from JSON")
    t.add_argument("problem", help="JSON file with 'cost' (N x M) and optional 'q', 'p' marginals")
    t.add_argument("--epsilon", type=float, default=0.05, help="entropic regularization")
    t.add_argument("--tolerance", type=float, default=1e-6, help="L1 row-marginal stop tolerance")
    t.add_argument("--max-iterations", type=int, default=10000, help="iteration cap")
    t.add_argument("--out", default=None, help="coupling output path")
    t.set_defaults(func=cmd_transport)

    e = subs.add_parser("episode", help="run a single receding-horizon episode",
                        formatter_class=argparse.RawDescriptionHelpFormatter,
                        epilog=configs.schema_help())
    _add_common(e)
    e.set_defaults(func=cmd_episode)

    b = subs.add_parser("bench", help="run a seeded Monte Carlo benchmark",
                        formatter_class=argparse.RawDescriptionHelpFormatter,
                        epilog=configs.schema_help())
    _add_common(b)
    b.set_defaults(func=cmd_bench)

    c = subs.add_parser("compare", help="paired-seed comparison of two configs",
                        formatter_class=argparse.RawDescriptionHelpFormatter,
                        epilog=configs.schema_help())
    c.add_argument("--config-a", required=True, help="first JSON config file")
    c.add_argument("--config-b", required=True, help="second JSON config file")
    c.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override applied to both configs (repeatable)")
    c.add_argument("--seed", type=int, default=None, help="base seed for both configs")
    c.add_argument("--out", default=None)
    c.add_argument("--workers", type=int, default=None)
    c.add_argument("--verbose", "-v", action="store_true")
    c.set_defaults(func=cmd_compare)

    d = subs.add_parser("demo-bimodal",
                        help="side-by-side controllers on the symmetric two-route toy")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", default=None)
    d.add_argument("--steps", type=int, default=120, help="episode step cap")
    d.set_defaults(func=cmd_demo_bimodal)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverFailureError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - internal faults
        print(f"internal fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
