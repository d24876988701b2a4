"""Compiled depth-first branch and bound for the window planner."""
from __future__ import annotations

import numpy as np
from numba import njit


def bound_tables(g: np.ndarray, w: int) -> tuple[np.ndarray, np.ndarray]:
    """State-independent pieces of the allocation bound, indexed ``[h, k, c]``.

    For ``c`` pulls of arm ``k`` placed anywhere in ``h`` remaining slots:

    * carried-over satiation costs at least ``s_k * E[h, k, c]`` (pulls as late as
      possible, ``E = sum_{i<c} gamma^(h-1-i)``);
    * mutual satiation among the ``c`` pulls costs at least ``L[h, k, c]``.  Pairs
      ``r`` apart in pull order span at most ``r (h-1)`` slots in total, so by
      convexity of ``gamma^x`` they contribute at least
      ``(c-r) gamma^(r (h-1) / (c-r))``.
    """
    K = len(g)
    E = np.zeros((w + 1, K, w + 1))
    L = np.zeros((w + 1, K, w + 1))
    for h in range(1, w + 1):
        for k in range(K):
            gk = float(g[k])
            acc = 0.0
            for c in range(1, h + 1):
                acc += gk ** (h - c)
                E[h, k, c] = acc
                if c >= 2 and gk > 0.0:
                    L[h, k, c] = sum((c - r) * gk ** (r * (h - 1) / (c - r)) for r in range(1, c))
    return E, L


@njit(cache=True)
def upper_bound(s, h, g, lam, b, E, L, dp, nb, u):
    """Admissible bound on the reward collectable in ``h`` steps from satiation ``s``."""
    K = s.shape[0]
    if h == 0:
        return 0.0
    # Per-step bound: satiation can only decay while an arm is left alone.
    simple = 0.0
    for j in range(h):
        m = -np.inf
        for k in range(K):
            r = b[k] - lam[k] * (g[k] ** j) * s[k]
            if r > m:
                m = r
        simple += m
    if K == 1:
        return simple
    # Allocation bound: best split of the h pulls across arms (max-plus knapsack).
    for c in range(h + 1):
        dp[c] = c * b[0] - lam[0] * (s[0] * E[h, 0, c] + L[h, 0, c])
    for k in range(1, K):
        for c in range(h + 1):
            u[c] = c * b[k] - lam[k] * (s[k] * E[h, k, c] + L[h, k, c])
        for tot in range(h + 1):
            m = -np.inf
            for c in range(tot + 1):
                v = dp[tot - c] + u[c]
                if v > m:
                    m = v
            nb[tot] = m
        for tot in range(h + 1):
            dp[tot] = nb[tot]
    return min(simple, dp[h])


@njit(cache=True)
def _better(v, acts, best_val, best_acts, tol):
    if v > best_val + tol:
        return True
    if abs(v - best_val) > tol:
        return False
    for i in range(acts.shape[0]):
        if acts[i] < best_acts[i]:
            return True
        if acts[i] > best_acts[i]:
            return False
    return False


@njit(cache=True)
def branch_and_bound(s0, g, lam, b, w, E, L, max_nodes, inc_acts, inc_val, rel_tol):
    """Exact window search; returns ``(actions, value, nodes, status)``.

    ``status`` is 0 on success and 1 when ``max_nodes`` was exceeded.  Children are
    expanded best immediate reward first; ties between optima go to the
    lexicographically smallest action sequence.
    """
    K = s0.shape[0]
    S = np.zeros((w + 1, K))
    V = np.zeros(w + 1)
    order = np.zeros((w, K), dtype=np.int64)
    ptr = np.zeros(w, dtype=np.int64)
    acts = np.zeros(w, dtype=np.int64)
    best_acts = inc_acts.copy()
    best_val = inc_val
    dp = np.zeros(w + 1)
    nb = np.zeros(w + 1)
    u = np.zeros(w + 1)
    rew = np.zeros(K)

    S[0, :] = s0
    for k in range(K):
        rew[k] = -(b[k] - lam[k] * s0[k])
    order[0, :] = np.argsort(rew, kind="mergesort")
    nodes = 1
    depth = 0
    while depth >= 0:
        if ptr[depth] == K:
            ptr[depth] = 0
            depth -= 1
            continue
        k = order[depth, ptr[depth]]
        ptr[depth] += 1
        v = V[depth] + b[k] - lam[k] * S[depth, k]
        acts[depth] = k
        h = w - depth - 1
        tol = rel_tol * max(1.0, abs(best_val))
        if h == 0:
            if _better(v, acts, best_val, best_acts, tol):
                best_val = v
                best_acts[:] = acts
            continue
        for j in range(K):
            S[depth + 1, j] = g[j] * S[depth, j]
        S[depth + 1, k] += g[k]
        ub = v + upper_bound(S[depth + 1], h, g, lam, b, E, L, dp, nb, u)
        if ub < best_val - tol:
            continue
        nodes += 1
        if nodes > max_nodes:
            return best_acts, best_val, nodes, 1
        depth += 1
        V[depth] = v
        for j in range(K):
            rew[j] = -(b[j] - lam[j] * S[depth, j])
        order[depth, :] = np.argsort(rew, kind="mergesort")
    return best_acts, best_val, nodes, 0
