"""w-step lookahead regret against time-dependent episode competitors.

For a competitor that fixes its episode actions in advance, the conditional
expected reward of each pull equals the deterministic expected reward of the
induced pull sequence.  The best such competitor for an episode is therefore the
exact window plan under the true parameters, started from the learner's own
history, and both sides of the regret are available in closed form.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

from .dynamics import ArmParams, ParameterError, PullHistory, cumulative_expected_reward
from .planning import PlanRequest, PlanResult, lookahead_plan

GAP_TOL = 1e-9


@dataclass
class EpisodeRegret:
    episode: int
    start: int
    end: int
    oracle_value: float
    learner_value: float
    gap: float


@dataclass
class RegretReport:
    per_episode: list[EpisodeRegret]
    window: int
    horizon: int
    oracle_actions: list[list[int]] = field(default_factory=list)

    @property
    def total(self) -> float:
        return math.fsum(e.gap for e in self.per_episode)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "start", "end", "oracle", "learner", "gap"])
            for e in self.per_episode:
                w.writerow([e.episode, e.start, e.end, repr(e.oracle_value),
                            repr(e.learner_value), repr(e.gap)])


def episode_oracle(true_arms: Sequence[ArmParams], history: PullHistory, t_start: int,
                   t_end: int, **limits) -> PlanResult:
    """Best time-dependent episode policy under the true parameters."""
    return lookahead_plan(PlanRequest(true_arms, history, t_start, t_end), "exact", **limits)


def lookahead_regret(actions: Sequence[int], true_arms: Sequence[ArmParams], window: int,
                     **limits) -> RegretReport:
    """Per-episode regret of an executed action sequence (episodes of ``window`` steps)."""
    T = len(actions)
    K = len(true_arms)
    if T == 0:
        raise ParameterError("empty action sequence")
    if not 1 <= window <= T:
        raise ParameterError(f"window must satisfy 1 <= w <= T={T}, got {window}")
    hist = PullHistory(K, actions)  # validates indices
    episodes, oracle_actions = [], []
    for i in range(math.ceil(T / window)):
        start, end = i * window, min((i + 1) * window, T)
        prefix = PullHistory(K, hist.actions[:start])
        oracle = episode_oracle(true_arms, prefix, start, end, **limits)
        learner = cumulative_expected_reward(true_arms, hist.actions[start:end], prefix)
        gap = oracle.objective - learner
        if gap < -GAP_TOL * max(1.0, abs(learner)):
            raise AssertionError(f"episode {i}: learner beats the exact oracle by {-gap}")
        episodes.append(EpisodeRegret(i, start, end, oracle.objective, learner, gap))
        oracle_actions.append(oracle.actions)
    return RegretReport(episodes, window, T, oracle_actions)
