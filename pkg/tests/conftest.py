import numpy as np
import pytest

from cdp_lab.environments.classes import realizable_class
from cdp_lab.environments.mdp import make_random_mdp


def small_mdp(seed: int, states: int = 3, actions: int = 2, horizon: int = 3):
    return make_random_mdp(states, actions, horizon, seed)


def small_instance(seed: int, states: int = 3, actions: int = 2, horizon: int = 3, size: int = 16):
    """A random MDP and a realizable class over it; member 0 is Q*"""
    env = small_mdp(seed, states, actions, horizon)
    return env, realizable_class(env, size, 0.3, np.random.default_rng(seed + 1000))


@pytest.fixture
def mdp():
    return small_mdp(7)


@pytest.fixture
def instance():
    return small_instance(7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
