import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rebound.dynamics import ArmParams, EnvConfig, ParameterError, ReboundingEnv
from rebound.sysid import (
    GAMMA_CLAMP,
    ArmEstimate,
    DegenerateDataError,
    DegenerateRatioError,
    RankDeficiencyError,
    SmallSampleWarning,
    Trajectory,
    confidence_radii,
    estimate_arm,
    estimate_arm_multi,
    multi_traj_estimate,
    ols_affine_fit,
    recover_params,
    residual_std,
    simulate_trajectory,
)


def noiseless(a, d, n):
    x = [0.0]
    for _ in range(n):
        x.append(a * x[-1] + d)
    return x


# --- single trajectory -----------------------------------------------------


def test_ols_noiseless_example():
    a, d = ols_affine_fit(Trajectory(0, 1, [0, 1.6, 2.88, 3.904]))
    assert a == pytest.approx(0.8, abs=1e-12)
    assert d == pytest.approx(1.6, abs=1e-12)


def test_ols_rank_deficient():
    with pytest.raises(RankDeficiencyError):
        ols_affine_fit(Trajectory(0, 1, [0, 0, 0, 0]))
    with pytest.raises(RankDeficiencyError):
        ols_affine_fit(Trajectory(0, 1, [0, 1.6]))  # one pair cannot fit two parameters


def test_trajectory_validation():
    with pytest.raises(ParameterError):
        Trajectory(0, 1, [0.5, 1.0])
    with pytest.raises(ParameterError):
        Trajectory(0, 0, [0.0, 1.0])
    with pytest.raises(ParameterError):
        Trajectory(0, 1, [])


def test_trajectory_from_rewards():
    tr = Trajectory.from_rewards(2, 1, [5.0, 3.4, 2.12])
    np.testing.assert_allclose(tr.values, [0.0, 1.6, 2.88])
    assert tr.arm_index == 2


@settings(max_examples=200)
@given(g=st.floats(0.05, 0.95), lam=st.floats(0.1, 5.0), m=st.integers(1, 4), n=st.integers(3, 40))
def test_ols_exact_on_noiseless_data(g, lam, m, n):
    a, d = g ** m, lam * g ** m
    a_hat, d_hat = ols_affine_fit(Trajectory(0, m, noiseless(a, d, n)))
    assert a_hat == pytest.approx(a, abs=1e-10)
    assert d_hat == pytest.approx(d, abs=1e-10)
    g_hat, lam_hat = recover_params(a_hat, d_hat, m)
    assert g_hat == pytest.approx(g, abs=1e-9)
    # lambda = d / a inherits the error of a_hat amplified by 1 / a
    assert lam_hat == pytest.approx(lam, abs=1e-10 * (1 + lam) / a)


def test_recover_examples():
    assert recover_params(0.8, 1.6, 1) == pytest.approx((0.8, 2.0))
    assert recover_params(0.64, 1.28, 2)[0] == pytest.approx(0.8)
    with pytest.raises(DegenerateRatioError):
        recover_params(0.0, 1.0, 1)
    with pytest.raises(ParameterError):
        recover_params(0.5, 1.0, 0)


@given(a=st.floats(-1.0, 1.0).filter(lambda v: abs(v) >= 1e-9), d=st.floats(-10, 10), m=st.integers(1, 5))
def test_recovered_values_well_defined(a, d, m):
    g, lam = recover_params(a, d, m)
    assert 0.0 <= g <= 1.0
    assert lam >= 0.0


def test_negative_slope_is_flagged_and_gamma_clamped():
    est = estimate_arm(Trajectory(0, 1, [0.0, 1.0, 0.5, 0.9, 0.6]), 3.0)
    assert est.a_hat < 0
    assert "negative_a_hat" in est.flags
    big = ArmEstimate(1.2, 1.0, 1.2, 1.0, 3.0)
    assert big.params().gamma == GAMMA_CLAMP


def test_residual_std_needs_three_pairs():
    tr = Trajectory(0, 1, [0, 1.0, 1.5])
    assert residual_std(tr, 0.5, 1.0) is None
    tr = Trajectory(0, 1, noiseless(0.5, 1.0, 6))
    assert residual_std(tr, 0.5, 1.0) == pytest.approx(0.0, abs=1e-12)


def test_simulated_trajectory_matches_environment():
    # Consecutive pulls of a noiseless environment produce exactly the recursion.
    arm = ArmParams(0.7, 2.5, 4.0)
    env = ReboundingEnv(EnvConfig((arm,), 0.0))
    rewards = [env.step(0) for _ in range(8)]
    from_env = Trajectory.from_rewards(0, 1, rewards).values
    np.testing.assert_allclose(simulate_trajectory(arm, 7).values, from_env, atol=1e-12)


def test_spaced_trajectory_matches_environment():
    arms = (ArmParams(0.7, 2.5, 4.0), ArmParams(0.4, 1.0, 1.0))
    env = ReboundingEnv(EnvConfig(arms, 0.0))
    rewards = [env.step(k) for k in [0, 1] * 6]
    from_env = Trajectory.from_rewards(0, 2, rewards[0::2]).values
    np.testing.assert_allclose(simulate_trajectory(arms[0], 5, m=2).values, from_env, atol=1e-12)


def test_spaced_noise_variance():
    arm = ArmParams(0.6, 2.0, 1.0)
    rng = np.random.default_rng(0)
    z = [simulate_trajectory(arm, 1, 3, 0.1, rng).values[1] - arm.spaced(3)[1] for _ in range(20000)]
    expected = 0.1 * 2.0 * math.sqrt((1 - 0.6 ** 6) / (1 - 0.36))
    assert np.std(z) == pytest.approx(expected, rel=0.03)


def test_estimate_arm_diagnostics():
    tr = simulate_trajectory(ArmParams(0.5, 3.0, 3.0), 500, 1, 0.1, np.random.default_rng(1))
    est = estimate_arm(tr, 3.0, sigma_zk=0.3)
    assert est.sigma_hat == pytest.approx(0.3, rel=0.15)
    assert est.psi is not None and est.psi > 0
    assert est.eps_a is None and est.eps_d is None
    d = est.to_dict()
    assert set(d) >= {"a_hat", "d_hat", "gamma_hat", "lambda_hat", "b_hat", "flags"}


# --- multiple trajectories -------------------------------------------------


def test_multi_noiseless_d_exact_a_degenerate():
    X = np.array([noiseless(0.5, 1.5, 6)] * 10)
    with pytest.raises(DegenerateDataError), pytest.warns(SmallSampleWarning):
        multi_traj_estimate(X, 5)
    X2 = X.copy()
    X2[::2, 4:] += 0.1  # break the degeneracy away from the second column
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallSampleWarning)
        a_hat, d_hat = multi_traj_estimate([Trajectory(0, 1, row) for row in X2], 5)
    assert d_hat == pytest.approx(1.5, abs=1e-15)
    assert a_hat == pytest.approx(1.0)


def test_multi_small_sample_warning():
    rng = np.random.default_rng(0)
    X = np.array([simulate_trajectory(ArmParams(0.5, 3.0, 1.0), 5, 1, 0.1, rng).values for _ in range(20)])
    with pytest.warns(SmallSampleWarning):
        multi_traj_estimate(X, 5, delta=0.05)


def test_multi_input_validation():
    with pytest.raises(ParameterError):
        multi_traj_estimate(np.zeros((1, 6)), 5)
    with pytest.raises(ParameterError):
        multi_traj_estimate(np.zeros((4, 3)), 5)
    with pytest.raises(ParameterError):
        multi_traj_estimate(np.ones((4, 6)), 5)
    with pytest.raises(ParameterError):
        multi_traj_estimate(np.zeros((4, 6)), 0)


def _batch(rng, n, t_min, a, d, sigma):
    z = sigma * rng.standard_normal((n, t_min))
    X = np.zeros((n, t_min + 1))
    for t in range(t_min):
        X[:, t + 1] = a * X[:, t] + d + z[:, t]
    return X


def test_multi_a_radius_coverage():
    # |a_hat - a| <= eps_a in at least 95% of repetitions
    a, d, sigma, t_min, n, delta = 0.5, 1.5, 0.3, 5, 10_000, 0.05
    rng = np.random.default_rng(2024)
    hits = 0
    for _ in range(200):
        a_hat, _ = multi_traj_estimate(_batch(rng, n, t_min, a, d, sigma), t_min, delta)
        eps_a, _ = confidence_radii(n, delta, sigma, a_hat, t_min)
        hits += abs(a_hat - a) <= eps_a
    assert hits >= 190


def test_multi_d_unbiased():
    a, d, sigma, t_min, n = 0.5, 1.5, 0.3, 2, 8
    rng = np.random.default_rng(7)
    reps = 10_000
    est = np.empty(reps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallSampleWarning)
        for r in range(reps):
            est[r] = multi_traj_estimate(_batch(rng, n, t_min, a, d, sigma), t_min)[1]
    se = est.std(ddof=1) / math.sqrt(reps)
    assert abs(est.mean() - d) <= 3 * se


def test_multi_arm_estimate_has_radii():
    rng = np.random.default_rng(3)
    arm = ArmParams(0.5, 3.0, 2.0)
    trajs = [simulate_trajectory(arm, 5, 1, 0.1, rng) for _ in range(400)]
    est = estimate_arm_multi(trajs, 5, 2.0, sigma_zk=0.3)
    assert est.eps_a > 0 and est.eps_d > 0
    assert abs(est.d_hat - 1.5) <= 3 * est.eps_d


# --- radii -----------------------------------------------------------------


def test_radii_reference_values():
    eps_a, eps_d = confidence_radii(10_000, 0.05, 0.3, 0.5, 5)
    # references evaluated with 30-digit arithmetic
    assert eps_d == pytest.approx(0.008148609094443717, rel=1e-12)
    assert eps_a == pytest.approx(0.10256428298367608, rel=1e-12)


@given(n=st.integers(1, 10 ** 6), sig=st.floats(0.01, 3.0), a=st.floats(-0.99, 0.99))
def test_radii_scale_with_sample_size(n, sig, a):
    ea1, ed1 = confidence_radii(n, 0.1, sig, a, 4)
    ea2, ed2 = confidence_radii(2 * n, 0.1, sig, a, 4)
    assert ea2 / ea1 == pytest.approx(1 / math.sqrt(2))
    assert ed2 / ed1 == pytest.approx(1 / math.sqrt(2))


def test_radii_edge_cases():
    assert confidence_radii(100, 0.05, 0.0, 0.5, 3)[1] == 0.0
    for bad in (0.0, 1.0):
        with pytest.raises(ParameterError):
            confidence_radii(100, bad, 0.1, 0.5, 3)
    with pytest.raises(ParameterError):
        confidence_radii(0, 0.05, 0.1, 0.5, 3)


def test_gamma_half_rate_slope():
    # gamma=0.5, lambda=3, sigma_z=0.1: error of a_hat shrinks like n^(-1/2)
    from rebound.harness import slope_fit

    arm = ArmParams(0.5, 3.0, 1.0)
    pts = []
    for n in (100, 1000, 10_000):
        errs = [abs(ols_affine_fit(simulate_trajectory(arm, n, 1, 0.1, np.random.default_rng([s, n])))[0] - 0.5)
                for s in range(30)]
        pts.append((n, float(np.median(errs))))
    slope, _, _ = slope_fit(pts)
    assert -0.65 <= slope <= -0.35
