import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rebound.dynamics import ArmParams  # noqa: E402


def random_arms(rng: random.Random, K: int, allow_zero=True) -> list[ArmParams]:
    arms = []
    for _ in range(K):
        g = rng.choice([0.0, 0.3, 0.5, 0.9, rng.random() * 0.99]) if allow_zero else 0.05 + rng.random() * 0.9
        lam = rng.choice([0.0, 1.0, rng.random() * 3]) if allow_zero else 0.1 + rng.random() * 3
        b = rng.choice([1.0, 2.0, rng.random() * 5])
        arms.append(ArmParams(g, lam, b))
    return arms


@pytest.fixture
def rng():
    return random.Random(12345)
