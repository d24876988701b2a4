"""Arm parameters, the stochastic satiation simulator, and closed-form expected rewards.

Satiation of arm ``k`` evolves as ``s' = gamma * (s + u) + z`` once the arm has been
pulled for the first time (before that it is identically zero), and pulling the arm
yields ``b - lambda * s``.  Arms are indexed from 0 internally; the CLI and CSV
outputs use the same 0-based indices.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class ParameterError(ValueError):
    """Raised when a parameter lies outside its admissible domain."""


@dataclass(frozen=True)
class ArmParams:
    gamma: float
    lam: float
    base_reward: float

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0) or not math.isfinite(self.gamma):
            raise ParameterError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not (self.lam >= 0.0) or not math.isfinite(self.lam):
            raise ParameterError(f"lambda must be finite and >= 0, got {self.lam}")
        if not math.isfinite(self.base_reward):
            raise ParameterError(f"base reward must be finite, got {self.base_reward}")

    def spaced(self, m: int) -> tuple[float, float, float]:
        """Affine-system coefficients ``(a, d, noise_scale)`` for pulls spaced ``m`` apart.

        ``noise_scale`` multiplies ``sigma_z`` to give the per-observation noise std.
        """
        if m < 1:
            raise ParameterError("pull spacing must be >= 1")
        a = self.gamma ** m
        d = self.lam * a
        if self.gamma == 0.0:
            var = 1.0
        else:
            var = (1.0 - self.gamma ** (2 * m)) / (1.0 - self.gamma ** 2)
        return a, d, self.lam * math.sqrt(var)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "lambda": self.lam, "base_reward": self.base_reward}

    @classmethod
    def from_dict(cls, d: dict) -> "ArmParams":
        return cls(float(d["gamma"]), float(d["lambda"]), float(d["base_reward"]))


@dataclass(frozen=True)
class EnvConfig:
    arms: tuple[ArmParams, ...]
    sigma_z: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(self.arms))
        if len(self.arms) < 1:
            raise ParameterError("need at least one arm")
        if not (self.sigma_z >= 0.0) or not math.isfinite(self.sigma_z):
            raise ParameterError(f"sigma_z must be >= 0, got {self.sigma_z}")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    def noise_std(self, k: int, m: int = 1) -> float:
        """Std of the per-observation noise of arm ``k`` sampled every ``m`` steps."""
        return self.sigma_z * self.arms[k].spaced(m)[2]

    def with_seed(self, seed: int) -> "EnvConfig":
        return EnvConfig(self.arms, self.sigma_z, seed)

    def to_dict(self) -> dict:
        return {
            "arms": [a.to_dict() for a in self.arms],
            "sigma_z": self.sigma_z,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        return cls(
            tuple(ArmParams.from_dict(a) for a in d["arms"]),
            float(d.get("sigma_z", 0.0)),
            int(d.get("seed", 0)),
        )


def load_config(path) -> EnvConfig:
    """Read an :class:`EnvConfig` from a JSON or YAML document."""
    return EnvConfig.from_dict(load_document(path))


def load_document(path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        return yaml.safe_load(text)
    return json.loads(text)


def save_config(config: EnvConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


# Reference setup: five arms with distinct retention/influence/base rewards.
REFERENCE_ARMS = (
    ArmParams(0.5, 1.0, 2.0),
    ArmParams(0.5, 3.0, 3.0),
    ArmParams(0.6, 3.0, 4.0),
    ArmParams(0.7, 2.0, 2.0),
    ArmParams(0.8, 2.0, 10.0),
)
REFERENCE_SIGMA_Z = 0.1


def reference_config(seed: int = 0) -> EnvConfig:
    return EnvConfig(REFERENCE_ARMS, REFERENCE_SIGMA_Z, seed)


# ---------------------------------------------------------------------------
# Pull histories
# ---------------------------------------------------------------------------


@dataclass
class PullHistory:
    """Pull record of ``n_arms`` arms; ``actions[t-1]`` is the arm pulled at time ``t``.

    The binary view ``u[k, t]`` (``t = 0..T``) always has ``u[:, 0] == 0`` and exactly
    one pulled arm per completed step, so the one-pull-per-step constraint holds by
    construction.
    """

    n_arms: int
    actions: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.n_arms < 1:
            raise ParameterError("need at least one arm")
        self.actions = [int(a) for a in self.actions]
        for a in self.actions:
            self._check(a)

    def _check(self, k: int) -> None:
        if not 0 <= k < self.n_arms:
            raise IndexError(f"arm index {k} out of range for {self.n_arms} arms")

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def append(self, k: int) -> None:
        self._check(k)
        self.actions.append(int(k))

    def extend(self, ks: Iterable[int]) -> None:
        for k in ks:
            self.append(k)

    def copy(self) -> "PullHistory":
        return PullHistory(self.n_arms, list(self.actions))

    def binary(self) -> np.ndarray:
        """The ``(K, T+1)`` 0/1 matrix ``u`` with ``u[:, 0] = 0``."""
        u = np.zeros((self.n_arms, self.horizon + 1), dtype=np.int8)
        for t, k in enumerate(self.actions, start=1):
            u[k, t] = 1
        return u

    @classmethod
    def from_binary(cls, u) -> "PullHistory":
        u = np.asarray(u)
        if u.ndim != 2:
            raise ParameterError("pull matrix must be 2-D (arms x time)")
        if np.any(u[:, 0] != 0):
            raise ParameterError("u[k, 0] must be 0 for every arm")
        if not np.all((u == 0) | (u == 1)):
            raise ParameterError("pull matrix must be binary")
        col = u[:, 1:].sum(axis=0)
        if np.any(col != 1):
            bad = int(np.flatnonzero(col != 1)[0]) + 1
            raise ParameterError(f"exactly one arm must be pulled at t={bad}")
        return cls(u.shape[0], [int(np.argmax(u[:, t])) for t in range(1, u.shape[1])])

    def arm_pulls(self, k: int) -> list[int]:
        """The sequence ``u_{k,0:T}`` for one arm."""
        return [0] + [1 if a == k else 0 for a in self.actions]

    def satiation(self, arms: Sequence[ArmParams]) -> np.ndarray:
        """Deterministic satiation of every arm at time ``T+1`` (before the next pull)."""
        s = np.zeros(self.n_arms)
        g = np.array([a.gamma for a in arms])
        for k in self.actions:
            s[k] += 1.0
            s *= g
        return s


# ---------------------------------------------------------------------------
# Closed-form expected satiation / reward
# ---------------------------------------------------------------------------


def satiation_expected(gamma: float, pulls: Sequence[int]) -> float:
    """``sum_{i=1}^{t-1} gamma^(t-i) u_i`` for a pull sequence ``u_0..u_{t-1}``."""
    if not (0.0 <= gamma < 1.0):
        raise ParameterError(f"gamma must lie in [0, 1), got {gamma}")
    s = 0.0
    # Horner form of the geometric sum; u_0 is always zero and contributes nothing.
    for u in pulls[1:]:
        s = gamma * (s + u)
    return s


def expected_reward(arm: ArmParams, pulls: Sequence[int]) -> float:
    return arm.base_reward - arm.lam * satiation_expected(arm.gamma, pulls)


def expected_rewards(arms: Sequence[ArmParams], actions: Sequence[int],
                     history: PullHistory | None = None) -> np.ndarray:
    """Expected reward of each action in ``actions`` played after ``history``."""
    K = len(arms)
    g = np.array([a.gamma for a in arms])
    lam = np.array([a.lam for a in arms])
    b = np.array([a.base_reward for a in arms])
    s = history.satiation(arms) if history is not None else np.zeros(K)
    out = np.empty(len(actions))
    for i, k in enumerate(actions):
        out[i] = b[k] - lam[k] * s[k]
        s[k] += 1.0
        s *= g
    return out


def cumulative_expected_reward(arms: Sequence[ArmParams], actions: Sequence[int],
                               history: PullHistory | None = None) -> float:
    """Expected cumulative reward of ``actions`` (the objective ``G_T`` when no history)."""
    return float(expected_rewards(arms, actions, history).sum())


# ---------------------------------------------------------------------------
# Observable MDP state and the simulator
# ---------------------------------------------------------------------------


@dataclass
class EnvState:
    """Simulator state at time ``time`` (the next pull happens at ``time``).

    ``satiation`` is hidden; learners should only read ``influence`` and
    ``steps_since_pull``.
    """

    time: int
    satiation: np.ndarray
    influence: np.ndarray
    steps_since_pull: np.ndarray

    @classmethod
    def initial(cls, n_arms: int) -> "EnvState":
        return cls(1, np.zeros(n_arms), np.zeros(n_arms), np.zeros(n_arms, dtype=int))

    def copy(self) -> "EnvState":
        return EnvState(self.time, self.satiation.copy(), self.influence.copy(),
                        self.steps_since_pull.copy())

    def observable(self) -> tuple[np.ndarray, np.ndarray]:
        return self.influence.copy(), self.steps_since_pull.copy()


def mdp_reward(state: EnvState, arm_index: int, arms: Sequence[ArmParams]) -> float:
    """Expected reward of pulling ``arm_index`` given the observable state."""
    if not 0 <= arm_index < len(arms):
        raise IndexError(f"arm index {arm_index} out of range")
    arm = arms[arm_index]
    n = int(state.steps_since_pull[arm_index])
    if n == 0:
        return arm.base_reward
    decay = arm.gamma ** n
    return arm.base_reward - decay * float(state.influence[arm_index]) - arm.lam * decay


def advance_observable(state: EnvState, arm_index: int, reward: float,
                       arms: Sequence[ArmParams]) -> None:
    """Apply the observable transition (in place) after pulling ``arm_index``."""
    n = state.steps_since_pull
    n[(n != 0)] += 1
    n[arm_index] = 1
    state.influence[arm_index] = arms[arm_index].base_reward - reward


class ReboundingEnv:
    """Stochastic rebounding-bandit simulator.

    Each arm owns an independent normal stream spawned from the config seed, and one
    draw per arm is consumed at every step, so the noise ``z_{k,t}`` depends only on
    ``(seed, k, t)`` and not on the pull order.  Noise only enters an arm's satiation
    after its first pull.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self.arms = config.arms
        self.n_arms = config.n_arms
        self._gamma = np.array([a.gamma for a in self.arms])
        self._lam = np.array([a.lam for a in self.arms])
        self._b = np.array([a.base_reward for a in self.arms])
        self.reset()

    def reset(self) -> EnvState:
        seqs = np.random.SeedSequence(self.config.seed).spawn(self.n_arms)
        self._rngs = [np.random.default_rng(s) for s in seqs]
        self._started = np.zeros(self.n_arms, dtype=bool)
        self.state = EnvState.initial(self.n_arms)
        self.history = PullHistory(self.n_arms)
        return self.state

    def step(self, arm_index: int) -> float:
        reward, self.state = env_step(self.state, arm_index, self)
        return reward

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        return self.state.observable()

    def _noise(self) -> np.ndarray:
        z = np.array([rng.standard_normal() for rng in self._rngs])
        return self.config.sigma_z * z


def env_step(state: EnvState, arm_index: int, env: ReboundingEnv) -> tuple[float, EnvState]:
    """Pull ``arm_index`` at ``state.time``; returns the realized reward and next state."""
    if not 0 <= arm_index < env.n_arms:
        raise IndexError(f"arm index {arm_index} out of range for {env.n_arms} arms")
    nxt = state.copy()
    s = nxt.satiation
    reward = float(env._b[arm_index] - env._lam[arm_index] * s[arm_index])
    env._started[arm_index] = True
    z = env._noise()
    u = np.zeros(env.n_arms)
    u[arm_index] = 1.0
    s[:] = np.where(env._started, env._gamma * (s + u) + z, 0.0)
    advance_observable(nxt, arm_index, reward, env.arms)
    nxt.time = state.time + 1
    env.history.append(arm_index)
    return reward, nxt


def simulate(config: EnvConfig, actions: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Play a fixed action sequence; returns realized rewards and pre-pull satiation."""
    env = ReboundingEnv(config)
    rewards = np.empty(len(actions))
    sat = np.empty((len(actions), config.n_arms))
    for i, k in enumerate(actions):
        sat[i] = env.state.satiation
        rewards[i] = env.step(int(k))
    return rewards, sat


def state_bound(config: EnvConfig, delta: float, horizon: int) -> float:
    """High-probability bound ``B(delta)`` on ``max_{k,t} |x_{k,t}|``."""
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    if horizon < 1:
        raise ParameterError("horizon must be >= 1")
    g = max(a.gamma for a in config.arms)
    lam = max(a.lam for a in config.arms)
    K = config.n_arms
    mean_part = lam * g / (1.0 - g)
    tail = lam * config.sigma_z * math.sqrt(2.0 * math.log(2.0 * K * horizon / delta) / (1.0 - g * g))
    return mean_part + tail


def write_trajectory_csv(path, rows: Iterable[tuple]) -> None:
    """Write ``(run_id, t, arm, reward)`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "t", "arm", "reward"])
        for r in rows:
            w.writerow(r)
