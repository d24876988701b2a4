"""Planning with known (or estimated) deterministic dynamics.

The window planner solves

    max  sum_{t=t_start+1}^{t_end} mu_{pi_t, t}(u_{pi_t, 0:t-1})

over all ``K^(t_end - t_start)`` completions of a pull history.  Exact mode is a
depth-first branch and bound over the per-arm satiation vector; heuristic mode is a
beam search.  Ties between optimal windows are resolved towards the
lexicographically smallest action sequence, which makes ``w = 1`` coincide with
the greedy rule (lowest arm index wins).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._search import bound_tables, branch_and_bound
from .dynamics import ArmParams, ParameterError, PullHistory

TIE_TOL = 1e-12
DEFAULT_MAX_NODES = 10**7
DEFAULT_BEAM_WIDTH = 256


class FeasibilityError(ValueError):
    """An assignment violates the one-pull-per-step or linearization constraints."""


class PlannerCapExceeded(RuntimeError):
    """Exact search needed more nodes than its configured budget."""


@dataclass
class PlanRequest:
    arms: Sequence[ArmParams]
    history: PullHistory
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ParameterError(f"window length must be positive (t_start={self.t_start}, t_end={self.t_end})")
        if self.history.horizon != self.t_start:
            raise ParameterError(
                f"history covers {self.history.horizon} steps but t_start={self.t_start}")
        if self.history.n_arms != len(self.arms):
            raise ParameterError("history and arm list disagree on the number of arms")

    @property
    def window(self) -> int:
        return self.t_end - self.t_start


@dataclass
class PlanResult:
    actions: list[int]
    objective: float
    optimality: str  # "exact" | "heuristic"
    nodes_explored: int = 0
    extra: dict = field(default_factory=dict)


def _tol(x: float) -> float:
    return TIE_TOL * max(1.0, abs(x))


def _arrays(arms: Sequence[ArmParams]):
    g = [a.gamma for a in arms]
    lam = [a.lam for a in arms]
    b = [a.base_reward for a in arms]
    return g, lam, b


# ---------------------------------------------------------------------------
# Greedy
# ---------------------------------------------------------------------------


def greedy_step(arms: Sequence[ArmParams], history: PullHistory, t: int | None = None) -> int:
    """Arm with the highest instantaneous expected reward; lowest index on ties."""
    if t is not None and history.horizon != t - 1:
        raise ParameterError(f"history must be complete through t-1={t - 1}")
    s = history.satiation(arms)
    best_k, best_r = 0, -math.inf
    for k, a in enumerate(arms):
        r = a.base_reward - a.lam * s[k]
        if r > best_r + TIE_TOL:
            best_k, best_r = k, r
    return best_k


def greedy_policy(arms: Sequence[ArmParams], horizon: int,
                  history: PullHistory | None = None) -> list[int]:
    """Greedy actions for the steps after ``history`` up to ``horizon``."""
    hist = history.copy() if history is not None else PullHistory(len(arms))
    out = []
    for _ in range(horizon - hist.horizon):
        k = greedy_step(arms, hist)
        hist.append(k)
        out.append(k)
    return out


# ---------------------------------------------------------------------------
# Window planner
# ---------------------------------------------------------------------------


def _evaluate(s0, actions, g, lam, b) -> float:
    s = list(s0)
    total = 0.0
    K = len(s)
    for k in actions:
        total += b[k] - lam[k] * s[k]
        s[k] += 1.0
        for j in range(K):
            s[j] *= g[j]
    return float(total)


def _beam(s0, w, g, lam, b, width):
    K = len(s0)
    beam = [(0.0, (), tuple(s0))]
    nodes = 0
    for _ in range(w):
        children = []
        for val, acts, s in beam:
            nodes += 1
            for k in range(K):
                r = b[k] - lam[k] * s[k]
                ns = tuple(g[j] * (s[j] + (1.0 if j == k else 0.0)) for j in range(K))
                children.append((val + r, acts + (k,), ns))
        children.sort(key=lambda c: (-c[0], c[1]))
        beam = children[:width]
    val, acts, _ = beam[0]
    return list(acts), val, nodes


def lookahead_plan(request: PlanRequest, mode: str = "exact", *,
                   max_nodes: int = DEFAULT_MAX_NODES,
                   beam_width: int = DEFAULT_BEAM_WIDTH) -> PlanResult:
    """Best actions for steps ``t_start+1..t_end`` given the pull history so far."""
    w = request.window
    g, lam, b = _arrays(request.arms)
    s0 = list(request.history.satiation(request.arms))
    if mode == "heuristic":
        acts, val, nodes = _beam(s0, w, g, lam, b, beam_width)
        return PlanResult(acts, _evaluate(s0, acts, g, lam, b), "heuristic", nodes)
    if mode != "exact":
        raise ParameterError(f"unknown planning mode {mode!r}")
    # A cheap beam run seeds the incumbent so pruning bites from the first branch.
    inc_acts, _, inc_nodes = _beam(s0, w, g, lam, b, 4)
    ga, la, ba = np.array(g), np.array(lam), np.array(b)
    E, L = bound_tables(ga, w)
    found, _, nodes, status = branch_and_bound(
        np.array(s0), ga, la, ba, w, E, L, max_nodes, np.array(inc_acts, dtype=np.int64),
        _evaluate(s0, inc_acts, g, lam, b), TIE_TOL)
    if status:
        raise PlannerCapExceeded(f"exact search exceeded {max_nodes} nodes")
    acts = [int(k) for k in found]
    return PlanResult(acts, _evaluate(s0, acts, g, lam, b), "exact", int(nodes) + inc_nodes)


def lookahead_policy(arms: Sequence[ArmParams], horizon: int, window: int,
                     history: PullHistory | None = None, mode: str = "exact",
                     **limits) -> tuple[list[int], list[PlanResult]]:
    """The w-lookahead policy: re-plan every ``window`` steps until ``horizon``."""
    if window < 1:
        raise ParameterError("window must be >= 1")
    hist = history.copy() if history is not None else PullHistory(len(arms))
    start = hist.horizon
    actions, plans = [], []
    t = start
    while t < horizon:
        t_end = min(t + window, horizon)
        res = lookahead_plan(PlanRequest(arms, hist, t, t_end), mode, **limits)
        hist.extend(res.actions)
        actions.extend(res.actions)
        plans.append(res)
        t = t_end
    return actions, plans


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


def _check_assignment(u: np.ndarray, K: int) -> np.ndarray:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != K:
        raise FeasibilityError(f"assignment must have shape (K={K}, T+1)")
    if not np.all((u == 0) | (u == 1)):
        raise FeasibilityError("assignment must be binary")
    if np.any(u[:, 0] != 0):
        raise FeasibilityError("u[k, 0] must be 0")
    if np.any(u[:, 1:].sum(axis=0) != 1):
        raise FeasibilityError("exactly one arm must be pulled per step")
    return u.astype(float)


def objective_bilinear(arms: Sequence[ArmParams], pulls) -> float:
    """The bilinear objective, evaluated literally from the pull matrix ``u[k, 0..T]``."""
    u = _check_assignment(pulls, len(arms))
    T = u.shape[1] - 1
    total = 0.0
    for k, a in enumerate(arms):
        for t in range(1, T + 1):
            if u[k, t] == 0:
                continue
            sat = sum(a.gamma ** (t - i) * u[k, i] for i in range(t))
            total += u[k, t] * (a.base_reward - a.lam * sat)
    return total


def product_auxiliaries(pulls) -> np.ndarray:
    """``z[k, t, i] = u[k, i] * u[k, t]`` for ``i < t`` (zero elsewhere)."""
    u = np.asarray(pulls, dtype=np.int8)
    z = u[:, :, None] * u[:, None, :]
    return np.tril(z, k=-1).astype(np.int8)


def objective_linearized(arms: Sequence[ArmParams], pulls, z) -> float:
    """Linear objective over ``(u, z)``; the McCormick constraints are checked."""
    u = _check_assignment(pulls, len(arms))
    z = np.asarray(z, dtype=float)
    K, T1 = u.shape
    if z.shape != (K, T1, T1):
        raise FeasibilityError(f"z must have shape {(K, T1, T1)}")
    if not np.all((z == 0) | (z == 1)):
        raise FeasibilityError("z must be binary")
    lower = np.tril(np.ones((T1, T1), dtype=bool), k=-1)  # entries with i < t
    ut = u[:, :, None]
    ui = u[:, None, :]
    ok = (z <= ui) & (z <= ut) & (ui + ut - 1 <= z)
    if not np.all(ok[:, lower]):
        raise FeasibilityError("z violates the linearization constraints")
    total = 0.0
    for k, a in enumerate(arms):
        total += a.base_reward * u[k, 1:].sum()
        for t in range(1, T1):
            for i in range(t):
                if z[k, t, i]:
                    total -= a.lam * a.gamma ** (t - i)
    return total


# ---------------------------------------------------------------------------
# Bounds and Max K-Cut
# ---------------------------------------------------------------------------


def lookahead_gap_bound(arms: Sequence[ArmParams], T: int, w: int) -> float:
    """Upper bound on how far the w-lookahead policy falls short of the optimum."""
    if not 1 <= w <= T:
        raise ParameterError(f"window must satisfy 1 <= w <= T, got w={w}, T={T}")
    g = max(a.gamma for a in arms)
    lam = max(a.lam for a in arms)
    return lam * g * (1.0 - g ** (T - w)) / (1.0 - g) ** 2 * math.ceil(T / w)


def max_kcut_partition(K: int, T: int) -> list[set[int]]:
    """Residue classes ``{t in 1..T : t = k (mod K)}``; part ``k-1`` holds class ``k``."""
    if K < 1 or T < 1:
        raise ParameterError("K and T must be >= 1")
    return [{t for t in range(1, T + 1) if (t - 1) % K == k} for k in range(K)]


def total_edge_weight(T: int, lam: float, gamma: float) -> float:
    return sum(lam * gamma ** (j - i) for j in range(1, T + 1) for i in range(1, j))


def cut_weight(partition: Sequence[set[int]], lam: float, gamma: float) -> float:
    """Total weight ``lam * gamma^|j-i|`` of edges joining different parts."""
    owner = {}
    for p, part in enumerate(partition):
        for t in part:
            if t in owner:
                raise ParameterError(f"vertex {t} appears in two parts")
            owner[t] = p
    verts = sorted(owner)
    total = 0.0
    for a_i, i in enumerate(verts):
        for j in verts[a_i + 1:]:
            if owner[i] != owner[j]:
                total += lam * gamma ** abs(j - i)
    return total


def partition_to_actions(partition: Sequence[set[int]]) -> list[int]:
    T = sum(len(p) for p in partition)
    acts = [0] * T
    for k, part in enumerate(partition):
        for t in part:
            acts[t - 1] = k
    return acts
