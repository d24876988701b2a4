"""Identification of the affine satiation-influence dynamics.

Observed influences of one arm pulled every ``m`` steps follow

    x_{j+1} = a x_j + d + noise,    a = gamma^m,  d = lambda gamma^m,

starting from ``x_1 = 0``.  ``ols_affine_fit`` handles a single long trajectory;
``multi_traj_estimate`` handles many short ones.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import ArmParams, ParameterError

GAMMA_CLAMP = 1.0 - 1e-6
DET_RTOL = 1e-12


class RankDeficiencyError(ValueError):
    """The regression design matrix is (numerically) singular."""


class DegenerateRatioError(ValueError):
    """``|a_hat|`` is too close to zero for ``lambda = |d / a|`` to be meaningful."""


class DegenerateDataError(ValueError):
    """A multi-trajectory estimator has a vanishing denominator."""


class SmallSampleWarning(UserWarning):
    pass


@dataclass
class Trajectory:
    arm_index: int
    spacing: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.spacing < 1:
            raise ParameterError("spacing must be >= 1")
        if self.values.ndim != 1 or len(self.values) < 1:
            raise ParameterError("trajectory values must be a non-empty 1-D sequence")
        if self.values[0] != 0.0:
            raise ParameterError("the first observed influence must be 0")

    @classmethod
    def from_rewards(cls, arm_index: int, spacing: int, rewards: Sequence[float]) -> "Trajectory":
        """Influences ``first reward - j-th reward`` from consecutive rewards of one arm."""
        r = np.asarray(rewards, dtype=float)
        return cls(arm_index, spacing, r[0] - r)


@dataclass
class ArmEstimate:
    a_hat: float
    d_hat: float
    gamma_hat: float
    lambda_hat: float
    b_hat: float
    eps_a: float | None = None
    eps_d: float | None = None
    psi: float | None = None
    sigma_hat: float | None = None
    flags: list[str] = field(default_factory=list)

    def params(self) -> ArmParams:
        """Planning-safe parameters (gamma clamped strictly below one)."""
        g = min(max(self.gamma_hat, 0.0), GAMMA_CLAMP)
        return ArmParams(g, self.lambda_hat, self.b_hat)

    def to_dict(self) -> dict:
        return {
            "a_hat": self.a_hat, "d_hat": self.d_hat, "gamma_hat": self.gamma_hat,
            "lambda_hat": self.lambda_hat, "b_hat": self.b_hat, "eps_a": self.eps_a,
            "eps_d": self.eps_d, "psi": self.psi, "sigma_hat": self.sigma_hat,
            "flags": list(self.flags),
        }


@dataclass
class EstimatedModel:
    arms: list[ArmEstimate]

    def params(self) -> list[ArmParams]:
        return [a.params() for a in self.arms]

    def to_dict(self) -> dict:
        return {"arms": [a.to_dict() for a in self.arms]}


def _design(values: np.ndarray):
    x = values[:-1]
    y = values[1:]
    return x, y


def ols_affine_fit(traj: Trajectory) -> tuple[float, float]:
    """Least-squares ``(a, d)`` for ``x_{j+1} = a x_j + d`` along one trajectory."""
    x, y = _design(traj.values)
    n = len(x)
    if n < 2:
        raise RankDeficiencyError(f"need at least 2 regression pairs, got {n}")
    # Centred normal equations; the raw form cancels badly when x barely moves.
    xm, ym = x.mean(), y.mean()
    xc = x - xm
    sxx = float(xc @ xc)
    if sxx <= DET_RTOL * max(float(x @ x), 1e-300):
        raise RankDeficiencyError("covariate column is constant; (a, d) not identifiable")
    a = float(xc @ (y - ym)) / sxx
    d = ym - a * xm
    return float(a), float(d)


def residual_std(traj: Trajectory, a: float, d: float) -> float | None:
    """Noise std estimate from OLS residuals (divisor ``n - 2``)."""
    x, y = _design(traj.values)
    if len(x) <= 2:
        return None
    res = y - a * x - d
    return float(math.sqrt(res @ res / (len(x) - 2)))


def recover_params(a_hat: float, d_hat: float, m: int = 1) -> tuple[float, float]:
    """``gamma = |a|^(1/m)``, ``lambda = |d / a|``."""
    if m < 1:
        raise ParameterError("spacing must be >= 1")
    if abs(a_hat) < 1e-9:
        raise DegenerateRatioError(f"a_hat={a_hat} too close to zero to recover lambda")
    return abs(a_hat) ** (1.0 / m), abs(d_hat / a_hat)


def small_ball_constant(a: float, d: float, sigma_zk: float) -> float:
    """Diagnostic ``psi`` governing the single-trajectory rate (no contract attached)."""
    one_minus = (1.0 - a) ** 2
    first = sigma_zk ** 2 * one_minus / (16.0 * d * d * (1.0 - a * a) + one_minus * sigma_zk ** 2)
    second = sigma_zk ** 2 / (4.0 * (1.0 - a * a))
    return math.sqrt(min(first, second))


def simulate_trajectory(arm: ArmParams, n: int, m: int = 1, sigma_z: float = 0.0,
                        rng: np.random.Generator | None = None, arm_index: int = 0) -> Trajectory:
    """Draw ``n + 1`` influences of one arm pulled every ``m`` steps from a fresh start."""
    if n < 0:
        raise ParameterError("n must be >= 0")
    a, d, scale = arm.spaced(m)
    rng = rng if rng is not None else np.random.default_rng()
    z = sigma_z * scale * rng.standard_normal(n)
    x = np.zeros(n + 1)
    for j in range(n):
        x[j + 1] = a * x[j] + d + z[j]
    return Trajectory(arm_index, m, x)


def _multi_stack(trajs, t_min: int) -> np.ndarray:
    """Stack trajectories (Trajectory objects or rows of a 2-D array) up to ``t_min + 1`` values."""
    if t_min < 1:
        raise ParameterError("t_min must be >= 1")
    if isinstance(trajs, np.ndarray):
        X = np.asarray(trajs, dtype=float)
        if X.ndim != 2:
            raise ParameterError("trajectory array must be 2-D (n, length)")
        if np.any(X[:, 0] != 0.0):
            raise ParameterError("the first observed influence must be 0")
    else:
        for tr in trajs:
            if len(tr.values) < t_min + 1:
                raise ParameterError(f"every trajectory needs at least t_min+1={t_min + 1} values")
        X = np.stack([tr.values[: t_min + 1] for tr in trajs]) if len(trajs) else np.zeros((0, 0))
    if X.shape[0] < 2:
        raise ParameterError("need at least 2 trajectories")
    if X.shape[1] < t_min + 1:
        raise ParameterError(f"every trajectory needs at least t_min+1={t_min + 1} values")
    return X[:, : t_min + 1]


def multi_traj_estimate(trajs: Sequence[Trajectory] | np.ndarray, t_min: int,
                        delta: float = 0.05) -> tuple[float, float]:
    """Estimators from many short trajectories.

    ``d`` is the mean second observation.  ``a`` regresses the last step of
    differenced trajectory pairs through the origin, which
    cancels the offset ``d``.
    """
    X = _multi_stack(trajs, t_min)
    n = X.shape[0]
    if n < 64 * math.log(2.0 / delta):
        warnings.warn(f"n={n} trajectories is below 64 log(2/delta); radii may not hold",
                      SmallSampleWarning, stacklevel=2)
    d_hat = float(X[:, 1].mean())
    # Disjoint pairs keep the differenced trajectories independent.
    half = n // 2
    Y = X[0:2 * half:2] - X[1:2 * half:2]
    num = float(Y[:, t_min - 1] @ Y[:, t_min])
    den = float(Y[:, t_min - 1] @ Y[:, t_min - 1])
    if den == 0.0:
        raise DegenerateDataError("differenced trajectories vanish; a is not identifiable")
    return num / den, d_hat


def confidence_radii(n: int, delta: float, sigma_zk: float, a_hat: float,
                     t_min: int) -> tuple[float, float]:
    """Half-widths ``(eps_a, eps_d)``; ``a_hat`` stands in for the unknown ``a``."""
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    if n < 1:
        raise ParameterError("n must be >= 1")
    geo = sum(a_hat ** (2 * t) for t in range(t_min + 1))
    eps_a = 4.0 * math.sqrt(2.0 * math.log(4.0 / delta) / (n * geo))
    eps_d = math.sqrt(2.0 * sigma_zk ** 2 * math.log(2.0 / delta) / n)
    return eps_a, eps_d


def estimate_arm(traj: Trajectory, b_hat: float = 0.0, sigma_zk: float | None = None
                 ) -> ArmEstimate:
    """OLS fit plus parameter recovery and diagnostics for one arm."""
    a, d = ols_affine_fit(traj)
    flags = []
    if a < 0:
        flags.append("negative_a_hat")
    g, lam = recover_params(a, d, traj.spacing)
    if g > GAMMA_CLAMP:
        flags.append("gamma_clamped")
    sig_hat = residual_std(traj, a, d)
    est = ArmEstimate(a, d, g, lam, b_hat, sigma_hat=sig_hat, flags=flags)
    sig = sigma_zk if sigma_zk is not None else sig_hat
    if sig and abs(a) < 1:
        est.psi = small_ball_constant(a, d, sig)
    return est


def estimate_arm_multi(trajs: Sequence[Trajectory], t_min: int, b_hat: float = 0.0,
                       sigma_zk: float | None = None, delta: float = 0.05) -> ArmEstimate:
    """Multi-trajectory estimate with its confidence radii.

    Without ``sigma_zk`` the noise level is taken from the spread of the second
    observations, which equals ``d`` plus one noise draw.
    """
    a, d = multi_traj_estimate(trajs, t_min, delta)
    m = trajs[0].spacing
    flags = ["negative_a_hat"] if a < 0 else []
    g, lam = recover_params(a, d, m)
    if sigma_zk is None:
        sigma_zk = float(np.std([tr.values[1] for tr in trajs], ddof=1))
    eps_a, eps_d = confidence_radii(len(trajs), delta, sigma_zk, a, t_min)
    return ArmEstimate(a, d, g, lam, b_hat, eps_a=eps_a, eps_d=eps_d,
                       sigma_hat=sigma_zk, flags=flags)
