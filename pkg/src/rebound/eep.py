"""Explore-Estimate-Plan: explore at even spacing, fit the dynamics, then plan in windows."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from .dynamics import ArmParams, ParameterError, ReboundingEnv
from .planning import (
    DEFAULT_BEAM_WIDTH,
    DEFAULT_MAX_NODES,
    PlanRequest,
    PlanResult,
    greedy_step,
    lookahead_plan,
)
from .sysid import (
    ArmEstimate,
    DegenerateRatioError,
    EstimatedModel,
    RankDeficiencyError,
    Trajectory,
    estimate_arm,
)

log = logging.getLogger(__name__)


class HorizonTooShortError(ValueError):
    """Exploration would consume the whole horizon."""


@dataclass
class EepConfig:
    window: int
    horizon: int
    exploration_mode: str = "repeated"  # "repeated" | "interval"
    interval: int | None = None  # pull spacing m for interval mode
    seed: int = 0
    plan_mode: str = "exact"
    max_nodes: int = DEFAULT_MAX_NODES
    beam_width: int = DEFAULT_BEAM_WIDTH

    def __post_init__(self):
        if not 1 <= self.window <= self.horizon:
            raise ParameterError(f"need 1 <= window <= horizon, got {self.window}, {self.horizon}")
        if self.exploration_mode not in ("repeated", "interval"):
            raise ParameterError(f"unknown exploration mode {self.exploration_mode!r}")
        if self.exploration_mode == "interval" and (self.interval is None or self.interval < 1):
            raise ParameterError("interval mode needs a spacing >= 1")

    @property
    def window_within_guarantee(self) -> bool:
        return self.window ** 3 <= self.horizon ** 2


@dataclass
class ExplorationPlan:
    length: int
    actions: list[int]
    estimation_steps: dict[int, list[int]]  # arm -> 1-based times used for estimation
    spacing: dict[int, int]


@dataclass
class EepRun:
    actions: list[int]
    rewards: list[float]
    phases: list[str]
    model: EstimatedModel | None
    exploration_end: int
    episode_bounds: list[tuple[int, int]]
    plans: list[PlanResult] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def floor_two_thirds(T: int) -> int:
    """``floor(T^(2/3))`` in exact integer arithmetic."""
    if T < 0:
        raise ParameterError("T must be non-negative")
    m = int(round(T ** (2.0 / 3.0)))
    target = T * T
    while m > 0 and m ** 3 > target:
        m -= 1
    while (m + 1) ** 3 <= target:
        m += 1
    return m


def exploration_length(T: int, w: int) -> int:
    base = floor_two_thirds(T)
    return base + w - base % w


def explore_schedule(T: int, w: int, K: int, mode: str = "repeated",
                     interval: int | None = None) -> ExplorationPlan:
    """Exploration actions for steps ``1..T_explore`` (arms are 0-based).

    Every arm gets ``T_explore // K`` evenly spaced estimation pulls.  In repeated
    mode these are consecutive; in interval mode arms are grouped ``m`` at a time and
    cycled within their group, so each arm is pulled every ``m`` steps (a trailing
    short group uses its own size as spacing).  Leftover steps cycle ``0, 1, ...``
    and are not used for estimation.
    """
    if K < 1 or w < 1:
        raise ParameterError("K and w must be >= 1")
    length = exploration_length(T, w)
    if length >= T:
        raise HorizonTooShortError(f"exploration needs {length} steps but horizon is {T}")
    per = length // K
    if mode == "repeated":
        groups = [[k] for k in range(K)]
    elif mode == "interval":
        if interval is None or not 1 <= interval <= K:
            raise ParameterError(f"interval must lie in [1, K={K}]")
        groups = [list(range(s, min(s + interval, K))) for s in range(0, K, interval)]
    else:
        raise ParameterError(f"unknown exploration mode {mode!r}")
    actions: list[int] = []
    steps: dict[int, list[int]] = {k: [] for k in range(K)}
    spacing: dict[int, int] = {}
    for grp in groups:
        for k in grp:
            spacing[k] = len(grp)
        for _ in range(per):
            for k in grp:
                actions.append(k)
                steps[k].append(len(actions))
    for i in range(length - len(actions)):
        actions.append(i % K)
    return ExplorationPlan(length, actions, steps, spacing)


def estimate_from_rewards(rewards: Sequence[float], plan: ExplorationPlan, K: int
                          ) -> tuple[EstimatedModel, list[int]]:
    """Fit every arm from its exploration rewards; returns the model and failed arms."""
    ests, failed = [], []
    for k in range(K):
        r = [rewards[t - 1] for t in plan.estimation_steps[k]]
        b_hat = r[0] if r else 0.0
        try:
            traj = Trajectory.from_rewards(k, plan.spacing[k], r)
            est = estimate_arm(traj, b_hat)
        except (RankDeficiencyError, DegenerateRatioError, ParameterError) as exc:
            log.warning("estimation failed for arm %d: %s", k, exc)
            failed.append(k)
            est = ArmEstimate(float("nan"), float("nan"), 0.0, 0.0, b_hat, flags=["failed"])
        ests.append(est)
    return EstimatedModel(ests), failed


def eep_run(env: ReboundingEnv, config: EepConfig) -> EepRun:
    """Run w-lookahead Explore-Estimate-Plan against a live environment."""
    K, T, w = env.n_arms, config.horizon, config.window
    plan = explore_schedule(T, w, K, config.exploration_mode, config.interval)
    actions, rewards, phases = [], [], []
    n_est = sum(len(v) for v in plan.estimation_steps.values())
    for i, k in enumerate(plan.actions):
        rewards.append(env.step(k))
        actions.append(k)
        phases.append("explore" if i < n_est else "explore_fill")

    model, failed = estimate_from_rewards(rewards, plan, K)
    est_arms: list[ArmParams] = model.params()
    meta = {
        "exploration_length": plan.length,
        "estimation_pulls_per_arm": plan.length // K,
        "fill_steps": plan.length - n_est,
        "fill_rule": "cycle arm indices 0,1,... over leftover exploration steps",
        "window_within_guarantee": config.window_within_guarantee,
        "failed_arms": failed,
        "fallback": bool(failed),
    }
    bounds: list[tuple[int, int]] = []
    plans: list[PlanResult] = []
    t = plan.length
    while t < T:
        t_end = min(t + w, T)
        bounds.append((t, t_end))
        if failed:
            acts = []
            for _ in range(t_end - t):
                acts.append(greedy_step(est_arms, env.history))
                rewards.append(env.step(acts[-1]))
        else:
            res = lookahead_plan(PlanRequest(est_arms, env.history.copy(), t, t_end),
                                 config.plan_mode, max_nodes=config.max_nodes,
                                 beam_width=config.beam_width)
            plans.append(res)
            acts = res.actions
            for k in acts:
                rewards.append(env.step(k))
        actions.extend(acts)
        phases.extend(["plan"] * len(acts))
        t = t_end
    return EepRun(actions, rewards, phases, model, plan.length, bounds, plans, meta)
