import numpy as np
import pytest
from hypothesis import settings

from bcel.game import build_random_game, example_matrix_game
from bcel.policies import JointPolicy, PolicyClass

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_product_policy(rng, game):
    marginals = [rng.dirichlet(np.ones(a), size=game.num_states) for a in game.action_counts]
    return JointPolicy.product(marginals)


def random_joint_policy(rng, game):
    return JointPolicy(rng.dirichlet(np.ones(game.num_joint_actions), size=game.num_states),
                       game.action_counts)


def rollout_values(game, policy, player, episodes, horizon, rng):
    """Discounted returns of ``episodes`` parallel truncated rollouts from the initial state."""
    s = np.full(episodes, game.initial_state)
    total = np.zeros(episodes)
    disc = 1.0
    pcdf = np.cumsum(policy.table, axis=1)
    tcdf = np.cumsum(game.transition, axis=2)
    for _ in range(horizon):
        a = np.minimum((rng.random(episodes)[:, None] >= pcdf[s]).sum(axis=1), game.num_joint_actions - 1)
        total += disc * game.rewards[player, s, a]
        s = np.minimum((rng.random(episodes)[:, None] >= tcdf[s, a]).sum(axis=1), game.num_states - 1)
        disc *= game.gamma
    return total


@pytest.fixture
def matrix_game():
    return example_matrix_game()


@pytest.fixture
def pure_class(matrix_game):
    return PolicyClass.pure_profiles(matrix_game.action_counts)


@pytest.fixture
def small_game():
    return build_random_game(3, 2, 3, (2, 2), 0.8)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Register one acceptance line; all lines are printed in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
