import csv
import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_best, value
from rebound.dynamics import REFERENCE_ARMS, ArmParams, ParameterError
from rebound.planning import greedy_policy, lookahead_policy
from rebound.regret import lookahead_regret


def test_self_play_has_zero_regret():
    acts, _ = lookahead_policy(REFERENCE_ARMS, 40, 5)
    rep = lookahead_regret(acts, REFERENCE_ARMS, 5)
    assert rep.total == pytest.approx(0.0, abs=1e-9)
    assert len(rep.per_episode) == 8


def test_identical_arms_repeated_pull():
    # w=K identical arms: the oracle rotates, the learner hammers arm 0
    arm = ArmParams(0.5, 1.0, 1.0)
    K = w = 3
    acts = [0] * 6
    rep = lookahead_regret(acts, [arm] * K, w)
    for e in rep.per_episode:
        assert e.oracle_value == pytest.approx(value([arm] * K, rep.oracle_actions[e.episode], acts[:e.start]))
        assert e.learner_value == pytest.approx(value([arm] * K, acts[e.start:e.end], acts[:e.start]))
    # first episode: oracle sees three fresh arms, learner decays 1, 0.5, 0.25
    assert rep.per_episode[0].oracle_value == pytest.approx(3.0)
    assert rep.per_episode[0].learner_value == pytest.approx(1.0 + 0.5 + 0.25)


def test_brute_force_two_arms_window_four():
    arms = [ArmParams(0.6, 2.0, 3.0), ArmParams(0.3, 1.0, 2.0)]
    acts = [0, 1, 1, 0, 0, 0, 1, 0, 1, 1]
    rep = lookahead_regret(acts, arms, 4)
    for e in rep.per_episode:
        best, _ = brute_best(arms, e.end - e.start, acts[:e.start])
        assert e.oracle_value == pytest.approx(best, abs=1e-12)
        assert e.gap == pytest.approx(best - value(arms, acts[e.start:e.end], acts[:e.start]), abs=1e-12)


def test_full_window_is_full_horizon_regret():
    arms = [ArmParams(0.8, 2.0, 4.0), ArmParams(0.4, 3.0, 3.5)]
    acts = greedy_policy(arms, 8)
    rep = lookahead_regret(acts, arms, 8)
    best = max(value(arms, seq) for seq in itertools.product(range(2), repeat=8))
    assert rep.total == pytest.approx(best - value(arms, acts), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(acts=st.lists(st.integers(0, 2), min_size=1, max_size=24), w=st.integers(1, 6))
def test_regret_nonnegative_and_additive(acts, w):
    w = min(w, len(acts))
    arms = [ArmParams(0.5, 1.0, 2.0), ArmParams(0.7, 2.0, 3.0), ArmParams(0.2, 0.5, 1.5)]
    rep = lookahead_regret(acts, arms, w)
    assert all(e.gap >= -1e-9 for e in rep.per_episode)
    assert rep.total == pytest.approx(math.fsum(e.oracle_value - e.learner_value for e in rep.per_episode))
    assert math.fsum(e.learner_value for e in rep.per_episode) == pytest.approx(value(arms, acts))
    assert [e.start for e in rep.per_episode] == list(range(0, len(acts), w))


def test_window_one_is_instantaneous_regret():
    arms = list(REFERENCE_ARMS)
    acts = [4, 4, 4, 0, 1, 2]
    rep = lookahead_regret(acts, arms, 1)
    for e in rep.per_episode:
        prefix = acts[:e.start]
        best = max(value(arms, [k], prefix) for k in range(5))
        assert e.gap == pytest.approx(best - value(arms, [acts[e.start]], prefix), abs=1e-12)


def test_errors():
    with pytest.raises(ParameterError):
        lookahead_regret([], REFERENCE_ARMS, 1)
    with pytest.raises(ParameterError):
        lookahead_regret([0, 1], REFERENCE_ARMS, 3)
    with pytest.raises(IndexError):
        lookahead_regret([0, 7], REFERENCE_ARMS, 1)


def test_csv_export(tmp_path):
    rep = lookahead_regret([0, 1, 2, 3, 4, 4], REFERENCE_ARMS, 4)
    p = tmp_path / "r.csv"
    rep.write_csv(p)
    rows = list(csv.DictReader(open(p)))
    assert [r["episode"] for r in rows] == ["0", "1"]
    assert float(rows[1]["gap"]) == rep.per_episode[1].gap
