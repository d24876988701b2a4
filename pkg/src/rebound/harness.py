"""Experiment grids: satiation traces, estimation rates, lookahead comparisons, EEP regret.

Every experiment is a list of cells (grid point x seed).  Cells run in a process
pool, results are written in grid order by a single collector and flushed per cell,
so an interrupted run resumes where it stopped and reruns are byte-identical.
"""
from __future__ import annotations

import csv
import functools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dynamics import (
    EnvConfig,
    ParameterError,
    PullHistory,
    ReboundingEnv,
    cumulative_expected_reward,
    load_document,
    reference_config,
)
from .eep import EepConfig, HorizonTooShortError, eep_run
from .planning import (
    DEFAULT_MAX_NODES,
    PlanRequest,
    PlannerCapExceeded,
    greedy_policy,
    lookahead_gap_bound,
    lookahead_plan,
    lookahead_policy,
)
from .regret import lookahead_regret
from .sysid import DegenerateRatioError, RankDeficiencyError, estimate_arm, simulate_trajectory

SCHEMA_VERSION = 1
KINDS = ("trace", "estimation_rate", "lookahead_compare", "eep_regret")

COLUMNS = {
    "trace": ["t", "arm", "satiation", "reward", "pulled"],
    "estimation_rate": ["n", "seed", "arm", "gamma_hat", "lambda_hat", "err_gamma", "err_lambda", "status"],
    "lookahead_compare": ["T", "w", "objective", "gap_bound", "optimum", "greedy", "status"],
    "eep_regret": ["T", "w", "seed", "exploration_length", "regret", "status"],
}
# Columns identifying a cell; used to skip finished cells on resume.
KEYS = {
    "trace": [],
    "estimation_rate": ["n", "seed"],
    "lookahead_compare": ["T", "w"],
    "eep_regret": ["T", "w", "seed"],
}


def slope_fit(points: Iterable[tuple[float, float]]) -> tuple[float, float, float]:
    """Least-squares line through ``(log x, log y)``; returns ``(slope, intercept, r2)``."""
    pts = list(points)
    if len(pts) < 2:
        raise ParameterError("slope fit needs at least 2 points")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise ParameterError("slope fit needs strictly positive x and y")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0.0:
        raise ParameterError("slope fit needs at least two distinct x values")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


@dataclass
class ExperimentSpec:
    kind: str
    env: EnvConfig
    output: str
    n_grid: list[int] = field(default_factory=list)
    T_grid: list[int] = field(default_factory=list)
    w_list: list[int] = field(default_factory=list)
    seeds: int = 1
    schedule: list[int] | None = None  # explicit pull sequence for traces
    max_nodes: int = DEFAULT_MAX_NODES
    spacing: int = 1  # pull spacing for estimation_rate
    optimum_max_nodes: int = 10 ** 6  # budget for the full-horizon optimum in lookahead_compare

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.seeds < 1:
            raise ParameterError("seeds must be >= 1")
        need = {
            "trace": [],
            "estimation_rate": ["n_grid"],
            "lookahead_compare": ["T_grid", "w_list"],
            "eep_regret": ["T_grid", "w_list"],
        }[self.kind]
        for name in need:
            if not getattr(self, name):
                raise ParameterError(f"{self.kind} needs a nonempty {name}")
        if self.kind == "trace":
            if not self.schedule:
                raise ParameterError("trace needs a nonempty pull schedule")
            PullHistory(self.env.n_arms, self.schedule)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        env = d.get("env", "reference")
        if env == "reference":
            env_cfg = reference_config(int(d.get("seed", 0)))
        else:
            env_cfg = EnvConfig.from_dict(env)
        grid = d.get("grid", {})
        return cls(
            kind=d["kind"],
            env=env_cfg,
            output=d.get("output", f"{d['kind']}.csv"),
            n_grid=[int(v) for v in grid.get("n", [])],
            T_grid=[int(v) for v in grid.get("T", [])],
            w_list=[int(v) for v in grid.get("w", [])],
            seeds=int(d.get("seeds", 1)),
            schedule=d.get("schedule"),
            max_nodes=int(d.get("max_nodes", DEFAULT_MAX_NODES)),
            spacing=int(d.get("spacing", 1)),
            optimum_max_nodes=int(d.get("optimum_max_nodes", 10 ** 6)),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "env": self.env.to_dict(), "output": self.output,
            "grid": {"n": self.n_grid, "T": self.T_grid, "w": self.w_list},
            "seeds": self.seeds, "schedule": self.schedule, "max_nodes": self.max_nodes,
            "spacing": self.spacing, "optimum_max_nodes": self.optimum_max_nodes,
        }

    def cells(self) -> list[dict]:
        base = self.env.seed
        if self.kind == "trace":
            return [{}]
        if self.kind == "estimation_rate":
            return [{"n": n, "seed": base + s} for n in self.n_grid for s in range(self.seeds)]
        if self.kind == "lookahead_compare":
            return [{"T": T, "w": w} for T in self.T_grid for w in self.w_list if w <= T]
        return [{"T": T, "w": w, "seed": base + s}
                for T in self.T_grid for w in self.w_list for s in range(self.seeds)]


def load_spec(path) -> ExperimentSpec:
    return ExperimentSpec.from_dict(load_document(path))


# ---------------------------------------------------------------------------
# Cells
# ---------------------------------------------------------------------------


def trace_rows(config: EnvConfig, schedule: Sequence[int]) -> list[list]:
    """Per step and arm: pre-pull satiation, the reward a pull would yield, and the pull flag."""
    env = ReboundingEnv(config)
    rows = []
    for t, k in enumerate(schedule, start=1):
        s = env.state.satiation.copy()
        for j, arm in enumerate(env.arms):
            rows.append([t, j, float(s[j]), float(arm.base_reward - arm.lam * s[j]), int(j == k)])
        env.step(k)
    return rows


def _trace(spec: ExperimentSpec, cell: dict) -> list[list]:
    return trace_rows(spec.env, spec.schedule)


def _estimation(spec: ExperimentSpec, cell: dict) -> list[list]:
    n, seed = cell["n"], cell["seed"]
    streams = np.random.SeedSequence([seed, n]).spawn(spec.env.n_arms)
    rows = []
    for k, (arm, ss) in enumerate(zip(spec.env.arms, streams)):
        traj = simulate_trajectory(arm, n, spec.spacing, spec.env.sigma_z,
                                   np.random.default_rng(ss), k)
        try:
            est = estimate_arm(traj, arm.base_reward)
        except (RankDeficiencyError, DegenerateRatioError) as exc:
            rows.append([n, seed, k, math.nan, math.nan, math.nan, math.nan,
                         f"failed:{type(exc).__name__}"])
            continue
        rows.append([n, seed, k, est.gamma_hat, est.lambda_hat,
                     abs(est.gamma_hat - arm.gamma), abs(est.lambda_hat - arm.lam), "ok"])
    return rows


def _compare(spec: ExperimentSpec, cell: dict) -> list[list]:
    T, w = cell["T"], cell["w"]
    arms = spec.env.arms
    bound = lookahead_gap_bound(arms, T, w)
    greedy = cumulative_expected_reward(arms, greedy_policy(arms, T))
    try:
        acts, _ = lookahead_policy(arms, T, w, max_nodes=spec.max_nodes)
    except PlannerCapExceeded:
        return [[T, w, math.nan, bound, math.nan, greedy, "cap_exceeded"]]
    value = cumulative_expected_reward(arms, acts)
    opt = _full_horizon_optimum(arms, T, spec.optimum_max_nodes)
    status = "ok" if math.isfinite(opt) else "optimum_cap_exceeded"
    return [[T, w, value, bound, opt, greedy, status]]


@functools.lru_cache(maxsize=64)
def _full_horizon_optimum(arms: tuple, T: int, max_nodes: int) -> float:
    try:
        return lookahead_plan(PlanRequest(arms, PullHistory(len(arms)), 0, T), "exact",
                              max_nodes=max_nodes).objective
    except PlannerCapExceeded:
        return math.nan


def _eep(spec: ExperimentSpec, cell: dict) -> list[list]:
    T, w, seed = cell["T"], cell["w"], cell["seed"]
    try:
        run = eep_run(ReboundingEnv(spec.env.with_seed(seed)),
                      EepConfig(w, T, seed=seed, max_nodes=spec.max_nodes))
        rep = lookahead_regret(run.actions, spec.env.arms, w, max_nodes=spec.max_nodes)
    except PlannerCapExceeded:
        return [[T, w, seed, "", math.nan, "cap_exceeded"]]
    except HorizonTooShortError:
        return [[T, w, seed, "", math.nan, "horizon_too_short"]]
    return [[T, w, seed, run.exploration_end, rep.total, "ok"]]


_RUNNERS = {"trace": _trace, "estimation_rate": _estimation,
            "lookahead_compare": _compare, "eep_regret": _eep}


def run_cell(spec: ExperimentSpec, cell: dict) -> list[list]:
    return _RUNNERS[spec.kind](spec, cell)


def _run_cell_job(args):
    spec_dict, output, cell = args
    spec = ExperimentSpec.from_dict(spec_dict)
    spec.output = output
    return run_cell(spec, cell)


# ---------------------------------------------------------------------------
# Collector
# ---------------------------------------------------------------------------


def fmt_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def _rows_per_cell(spec: ExperimentSpec) -> int:
    if spec.kind == "trace":
        return len(spec.schedule) * spec.env.n_arms
    if spec.kind == "estimation_rate":
        return spec.env.n_arms
    return 1


def _recover(path: Path, spec: ExperimentSpec) -> int:
    """Trim ``path`` to its longest prefix of complete cells; returns that cell count.

    A run killed mid-write can leave a torn last line or a cell with only some of
    its rows; both are dropped so the cell is recomputed.
    """
    if not path.exists() or path.stat().st_size == 0:
        return 0
    text = path.read_text()
    lines = text.split("\n")
    tail_torn = not text.endswith("\n")
    lines = lines[:-1]  # last element is "" or a torn line
    if not lines:
        path.write_text("")
        return 0
    header = next(csv.reader([lines[0]]))
    if header != COLUMNS[spec.kind]:
        raise ParameterError(f"{path} exists with a different header; refusing to append")
    body = lines[1:]
    per = _rows_per_cell(spec)
    cells = spec.cells()
    keys = KEYS[spec.kind]
    done = 0
    while done < len(cells) and (done + 1) * per <= len(body):
        chunk = list(csv.DictReader([lines[0]] + body[done * per:(done + 1) * per]))
        want = tuple(str(cells[done][k]) for k in keys)
        if any(tuple(r[k] for k in keys) != want for r in chunk):
            break
        done += 1
    keep = lines[: 1 + done * per]
    if tail_torn or len(keep) != len(lines):
        path.write_text("\n".join(keep) + "\n")
    return done


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> dict:
    """Run every unfinished cell, append results to ``spec.output``, write the summary.

    Returns the summary dict (also written next to the CSV as ``<output>.summary.json``).
    """
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    cols = COLUMNS[spec.kind]
    todo = spec.cells()[_recover(out, spec):]

    new_file = not out.exists() or out.stat().st_size == 0
    with open(out, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new_file:
            w.writerow(cols)
            fh.flush()
        if threads > 1 and len(todo) > 1:
            jobs = [(spec.to_dict(), spec.output, c) for c in todo]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for rows in pool.map(_run_cell_job, jobs):
                    _write(w, fh, rows)
        else:
            for c in todo:
                _write(w, fh, run_cell(spec, c))

    summary = summarize(spec, read_rows(out))
    Path(str(out) + ".summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _write(writer, fh, rows):
    for r in rows:
        writer.writerow([fmt_value(v) for v in r])
    fh.flush()
    os.fsync(fh.fileno())


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


def _f(v: str) -> float:
    return float(v) if v not in ("", None) else math.nan


def _safe_slope(points) -> dict:
    pts = [(x, y) for x, y in points if x > 0 and y > 0 and math.isfinite(y)]
    try:
        slope, intercept, r2 = slope_fit(pts)
    except ParameterError as exc:
        return {"slope": None, "intercept": None, "r2": None, "error": str(exc)}
    return {"slope": slope, "intercept": intercept, "r2": r2, "points": len(pts)}


def summarize(spec: ExperimentSpec, rows: Sequence[dict]) -> dict:
    summ: dict = {"schema_version": SCHEMA_VERSION, "kind": spec.kind, "spec": spec.to_dict()}
    skipped = [r for r in rows if r.get("status", "ok") not in ("ok", "")]
    summ["skipped_cells"] = [{k: r[k] for k in KEYS[spec.kind] + ["status"]} for r in skipped]

    if spec.kind == "estimation_rate":
        slopes = {}
        for k in range(spec.env.n_arms):
            for name in ("err_gamma", "err_lambda"):
                pts = []
                for n in spec.n_grid:
                    vals = [_f(r[name]) for r in rows
                            if int(r["n"]) == n and int(r["arm"]) == k and r["status"] == "ok"]
                    if vals:
                        pts.append((n, float(np.median(vals))))
                slopes[f"arm{k}_{name}"] = _safe_slope(pts)
        summ["median_error_slopes"] = slopes
    elif spec.kind == "eep_regret":
        slopes, means = {}, {}
        for w in spec.w_list:
            pts = []
            for T in spec.T_grid:
                vals = [_f(r["regret"]) for r in rows
                        if int(r["T"]) == T and int(r["w"]) == w and r["status"] == "ok"]
                if vals:
                    pts.append((T, float(np.mean(vals))))
            means[str(w)] = pts
            slopes[str(w)] = _safe_slope(pts)
        summ["mean_regret"] = means
        summ["regret_slopes"] = slopes
    elif spec.kind == "lookahead_compare":
        summ["note"] = ("optimum is the exact full-horizon plan from the branch-and-bound "
                        "planner where it finishes within max_nodes; otherwise only the "
                        "gap bound is reported")
    return summ

