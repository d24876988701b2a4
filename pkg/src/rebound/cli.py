"""Command line entry point: ``rebound trace|estimate|plan|eep|regret|experiment``.

Every command exits 0 on success.  Failures exit nonzero and print a single JSON
object ``{"error": <type>, "message": <text>}`` on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dynamics import (
    EnvConfig,
    ParameterError,
    PullHistory,
    ReboundingEnv,
    cumulative_expected_reward,
    load_config,
    reference_config,
)
from .eep import EepConfig, eep_run
from .harness import COLUMNS, fmt_value, load_spec, run_experiment, trace_rows
from .planning import greedy_policy, lookahead_gap_bound, lookahead_policy
from .regret import lookahead_regret
from .sysid import Trajectory, estimate_arm, estimate_arm_multi, simulate_trajectory

EXIT_USAGE = 2
EXIT_FAILURE = 1


def _env(args) -> EnvConfig:
    cfg = load_config(args.config) if args.config else reference_config()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline=""), True


def _emit_json(obj, path):
    fh, close = _open_out(path)
    fh.write(json.dumps(obj, indent=2) + "\n")
    if close:
        fh.close()


def _emit_csv(header, rows, path):
    fh, close = _open_out(path)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if close:
        fh.close()


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(",", " ").split()]


def cmd_trace(args) -> None:
    cfg = _env(args)
    if args.schedule_file:
        schedule = _parse_ints(Path(args.schedule_file).read_text())
    else:
        schedule = _parse_ints(args.schedule)
    rows = [[fmt_value(v) for v in r] for r in trace_rows(cfg, schedule)]
    _emit_csv(COLUMNS["trace"], rows, args.out)


def _read_trajectories(path, spacing: int) -> dict[int, list[Trajectory]]:
    """CSV rows ``arm, index, value`` (optional ``trajectory``), indices 1-based per trajectory."""
    groups: dict[tuple[int, int], list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (int(r["arm"]), int(r.get("trajectory") or 0))
            groups.setdefault(key, []).append((int(r["index"]), float(r["value"])))
    out: dict[int, list[Trajectory]] = {}
    for (arm, _), pts in sorted(groups.items()):
        pts.sort()
        if [i for i, _ in pts] != list(range(1, len(pts) + 1)):
            raise ParameterError(f"arm {arm}: indices must run 1..n+1 without gaps")
        out.setdefault(arm, []).append(Trajectory(arm, spacing, [v for _, v in pts]))
    return out


def _estimate_input(args) -> None:
    base = None
    if args.config:
        base = [a.base_reward for a in load_config(args.config).arms]
    arms_out = []
    for k, trajs in _read_trajectories(args.input, args.interval).items():
        b_hat = base[k] if base and k < len(base) else 0.0
        if len(trajs) > 1:
            t_min = min(len(t.values) for t in trajs) - 1
            est = estimate_arm_multi(trajs, t_min, b_hat, delta=args.delta)
        else:
            est = estimate_arm(trajs[0], b_hat)
        d = est.to_dict()
        d["arm"] = k
        if base is None:
            d["b_hat"] = None
        arms_out.append(d)
    _emit_json({"spacing": args.interval, "arms": arms_out}, args.out)


def cmd_estimate(args) -> None:
    if args.input:
        return _estimate_input(args)
    cfg = _env(args)
    root = np.random.SeedSequence(cfg.seed)
    arms_out = []
    for k, (arm, ss) in enumerate(zip(cfg.arms, root.spawn(cfg.n_arms))):
        rng = np.random.default_rng(ss)
        if args.trajectories > 1:
            trajs = [simulate_trajectory(arm, args.n, args.interval, cfg.sigma_z, rng, k)
                     for _ in range(args.trajectories)]
            est = estimate_arm_multi(trajs, args.n, arm.base_reward,
                                     cfg.noise_std(k, args.interval), args.delta)
        else:
            traj = simulate_trajectory(arm, args.n, args.interval, cfg.sigma_z, rng, k)
            est = estimate_arm(traj, arm.base_reward, cfg.noise_std(k, args.interval))
        d = est.to_dict()
        d["arm"] = k
        arms_out.append(d)
    _emit_json({"n": args.n, "spacing": args.interval, "trajectories": args.trajectories,
                "arms": arms_out}, args.out)


def cmd_plan(args) -> None:
    cfg = _env(args)
    T = args.horizon
    hist = PullHistory(cfg.n_arms, _parse_ints(args.history) if args.history else [])
    if hist.horizon >= T:
        raise ParameterError(f"history already covers {hist.horizon} >= horizon {T} steps")
    if args.mode == "greedy":
        actions, plans = greedy_policy(cfg.arms, T, hist), []
        w = 1
    else:
        w = args.window
        actions, plans = lookahead_policy(cfg.arms, T, w, hist, mode=args.mode, max_nodes=args.max_nodes)
    _emit_json({
        "horizon": T, "window": w, "mode": args.mode, "history": hist.actions,
        "actions": actions,
        "expected_reward": cumulative_expected_reward(cfg.arms, actions, hist),
        "gap_bound": lookahead_gap_bound(cfg.arms, T, w),
        "windows": [{"objective": p.objective, "optimality": p.optimality,
                     "nodes": p.nodes_explored} for p in plans],
    }, args.out)


def cmd_eep(args) -> None:
    cfg = _env(args)
    conf = EepConfig(args.window, args.horizon, args.mode, args.interval, cfg.seed,
                     max_nodes=args.max_nodes)
    run = eep_run(ReboundingEnv(cfg), conf)
    rows = [[t, k, repr(float(r)), ph] for t, (k, r, ph)
            in enumerate(zip(run.actions, run.rewards, run.phases), start=1)]
    _emit_csv(["t", "arm", "reward", "phase"], rows, args.out)
    model = {"model": run.model.to_dict() if run.model else None,
             "exploration_end": run.exploration_end,
             "episodes": run.episode_bounds, "metadata": run.metadata}
    if args.model_out:
        _emit_json(model, args.model_out)
    elif args.out not in (None, "-"):
        _emit_json(model, str(args.out) + ".model.json")


def _read_actions(path) -> list[int]:
    text = Path(path).read_text()
    if path.endswith(".json"):
        data = json.loads(text)
        return [int(k) for k in (data["actions"] if isinstance(data, dict) else data)]
    rows = list(csv.DictReader(text.splitlines()))
    if rows and "arm" in rows[0]:
        return [int(r["arm"]) for r in rows]
    return _parse_ints(text)


def cmd_regret(args) -> None:
    cfg = _env(args)
    actions = _read_actions(args.actions)
    rep = lookahead_regret(actions, cfg.arms, args.window, max_nodes=args.max_nodes)
    rows = [[e.episode, e.start, e.end, repr(e.oracle_value), repr(e.learner_value), repr(e.gap)]
            for e in rep.per_episode]
    _emit_csv(["episode", "start", "end", "oracle", "learner", "gap"], rows, args.out)
    print(json.dumps({"total_regret": rep.total, "episodes": len(rep.per_episode)}), file=sys.stderr)


def cmd_experiment(args) -> None:
    spec = load_spec(args.config)
    if args.out:
        spec.output = args.out
    if args.seed is not None:
        spec.env = spec.env.with_seed(args.seed)
    summary = run_experiment(spec, threads=args.threads)
    print(json.dumps(summary, indent=2, sort_keys=True))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rebound", description="Rebounding bandits toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_help="environment config (JSON or YAML); default: five-arm reference setup"):
        sp.add_argument("--config", help=config_help)
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output path (default: stdout)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes")

    sp = sub.add_parser("trace", help="per-step satiation and reward under a pull schedule")
    common(sp)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--schedule", help="comma separated 0-based arm indices")
    g.add_argument("--schedule-file")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("estimate", help="simulate exploration data and fit every arm")
    common(sp)
    sp.add_argument("--n", type=int, default=100, help="regression pairs per trajectory")
    sp.add_argument("--interval", type=int, default=1, help="pull spacing m")
    sp.add_argument("--trajectories", type=int, default=1,
                    help="number of independent trajectories per arm (>1 uses the multi-trajectory estimator)")
    sp.add_argument("--delta", type=float, default=0.05)
    sp.add_argument("--input", default=None,
                    help="fit logged influences from CSV (arm, index, value[, trajectory]) instead of simulating")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("plan", help="w-lookahead (or greedy) policy under known parameters")
    common(sp)
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--window", type=int, default=1)
    sp.add_argument("--mode", choices=["exact", "heuristic", "greedy"], default="exact")
    sp.add_argument("--history", default=None, help="comma separated 0-based arms already played")
    sp.add_argument("--max-nodes", type=int, default=10 ** 7)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("eep", help="run Explore-Estimate-Plan against the simulator")
    common(sp)
    sp.add_argument("--horizon", type=int, required=True)
    sp.add_argument("--window", type=int, required=True)
    sp.add_argument("--mode", choices=["repeated", "interval"], default="repeated")
    sp.add_argument("--interval", type=int, default=None)
    sp.add_argument("--max-nodes", type=int, default=10 ** 7)
    sp.add_argument("--model-out", default=None)
    sp.set_defaults(func=cmd_eep)

    sp = sub.add_parser("regret", help="w-step lookahead regret of an executed action sequence")
    common(sp)
    sp.add_argument("--actions", required=True, help="CSV with an 'arm' column, JSON list, or plain integers")
    sp.add_argument("--window", type=int, required=True)
    sp.add_argument("--max-nodes", type=int, default=10 ** 7)
    sp.set_defaults(func=cmd_regret)

    sp = sub.add_parser("experiment", help="run an experiment grid from a spec document")
    common(sp, "experiment spec document (JSON or YAML)")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.command == "experiment" and not args.config:
        print(json.dumps({"error": "UsageError", "message": "experiment needs --config"}), file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except (ParameterError, ValueError, LookupError, OSError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
