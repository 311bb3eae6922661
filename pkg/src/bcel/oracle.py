"""Exact planning-side quantities: Bellman operators, evaluation, occupancy, gaps."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .game import MarkovGame
from .policies import (CE, NE, ExtendedClass, JointPolicy, PolicyClass, StrategyModification,
                       apply_modification, check_equilibrium, marginalize, replace_marginal,
                       response_class)
from .validation import PreconditionError


def state_values(f: np.ndarray, policy: JointPolicy) -> np.ndarray:
    """``f(s, pi) = sum_a pi(a|s) f(s, a)``; ``f`` may carry leading batch axes."""
    return (np.asarray(f) * policy.table).sum(axis=-1)


def bellman_apply(game: MarkovGame, player: int, policy: JointPolicy, f) -> np.ndarray:
    """``(T_i^pi f)(s, a) = r_i(s, a) + gamma E_{s'}[f(s', pi)]``; batches over leading axes."""
    v = state_values(f, policy)
    return game.rewards[player] + game.gamma * np.einsum("sat,...t->...sa", game.transition, v)


def state_bellman_apply(game: MarkovGame, player: int, policy: JointPolicy, g) -> np.ndarray:
    """State-value backup ``E_{a~pi}[r_i(s, a) + gamma E_{s'} g(s')]``."""
    q = game.rewards[player] + game.gamma * np.einsum("sat,...t->...sa", game.transition, np.asarray(g))
    return (q * policy.table).sum(axis=-1)


def policy_transition(game: MarkovGame, policy: JointPolicy) -> np.ndarray:
    """Matrix ``M[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')`` on the state-action space."""
    S, A = game.num_states, game.num_joint_actions
    return (game.transition[:, :, :, None] * policy.table[None, None]).reshape(S * A, S * A)


def value_iteration(game, player, policy, tol=1e-10, max_iter=1_000_000) -> np.ndarray:
    """Iterate ``Q <- T_i^pi Q`` from zero until the sup-norm bound on the error is below ``tol``."""
    q = np.zeros((game.num_states, game.num_joint_actions))
    gamma = game.gamma
    for _ in range(max_iter):
        new = bellman_apply(game, player, policy, q)
        step = float(np.max(np.abs(new - q)))
        q = new
        if gamma == 0.0 or step * gamma / (1.0 - gamma) <= tol:
            return q
    raise RuntimeError("value iteration did not converge")


@dataclass(frozen=True)
class Evaluation:
    q: np.ndarray
    value: float


def evaluate_q(game: MarkovGame, player: int, policy: JointPolicy) -> np.ndarray:
    S, A = game.num_states, game.num_joint_actions
    lhs = np.eye(S * A) - game.gamma * policy_transition(game, policy)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            q = scipy.linalg.solve(lhs, game.rewards[player].reshape(-1))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        return value_iteration(game, player, policy)
    return q.reshape(S, A)


def evaluate_policy(game: MarkovGame, player: int, policy: JointPolicy) -> Evaluation:
    """Exact ``Q_i^pi`` by a linear solve, and ``V_i^pi(s0)``."""
    q = evaluate_q(game, player, policy)
    return Evaluation(q, float(q[game.initial_state] @ policy.table[game.initial_state]))


def policy_value(game, player, policy) -> float:
    return evaluate_policy(game, player, policy).value


def state_value_table(game, player, policy) -> np.ndarray:
    """``V_i^pi(s)`` for every state."""
    return state_values(evaluate_q(game, player, policy), policy)


def occupancy(game: MarkovGame, policy: JointPolicy) -> np.ndarray:
    """Normalized discounted occupancy ``d^pi(s, a)`` from the initial state, shape (S, A)."""
    S, A = game.num_states, game.num_joint_actions
    start = np.zeros((S, A))
    start[game.initial_state] = policy.table[game.initial_state]
    lhs = np.eye(S * A) - game.gamma * policy_transition(game, policy)
    d = (1.0 - game.gamma) * scipy.linalg.solve(lhs.T, start.reshape(-1))
    return d.reshape(S, A)


def state_occupancy(game, policy) -> np.ndarray:
    return occupancy(game, policy).sum(axis=1)


@dataclass(frozen=True)
class GapResult:
    """Exact in-class gap and the deviation values that produced it."""

    gap: float
    values: np.ndarray          # V_i^pi(s0) per player
    deviation_values: list      # per player: V_i of each response-class member
    best_deviation: list        # per player: argmax member index (lowest on ties)
    best_player: int


def true_gap(game: MarkovGame, policy_class: PolicyClass, policy: JointPolicy, eq: str) -> GapResult:
    """``Gap^EQ(pi) = max_i max_{pi' in Pi_i^EQ(pi)} V_i^{pi'}(s0) - V_i^pi(s0)``."""
    eq = check_equilibrium(eq)
    m = game.num_players
    values = np.array([policy_value(game, i, policy) for i in range(m)])
    dev_values, best = [], []
    gains = np.empty(m)
    for i in range(m):
        rc = response_class(policy, i, eq, policy_class)
        vals = np.array([policy_value(game, i, p) for p in rc.members])
        dev_values.append(vals)
        best.append(int(np.argmax(vals)))
        gains[i] = vals.max() - values[i]
    return GapResult(float(gains.max()), values, dev_values, best, int(np.argmax(gains)))


class ExactValues:
    """Exact ``V_i^pi(s0)`` for every member of every ``Pi_ext,i``, computed once."""

    def __init__(self, game: MarkovGame, ext: ExtendedClass):
        self.game = game
        self.ext = ext
        self.values = [np.array([policy_value(game, i, p) for p in ext.policies[i]])
                       for i in range(ext.num_players)]

    def gap(self, k: int) -> float:
        """In-class gap of base policy ``k``."""
        gains = []
        for i in range(self.ext.num_players):
            idx = self.ext.response_index[i][k]
            if idx is None:
                raise PreconditionError("NE gap requires a product policy")
            gains.append(self.values[i][idx].max() - self.values[i][self.ext.base_index[i][k]])
        return float(max(gains))

    def base_value(self, player, k) -> float:
        return float(self.values[player][self.ext.base_index[player][k]])


@dataclass(frozen=True)
class BestResponse:
    value: float
    actions: np.ndarray          # NE/CCE: (S,) own action per state; CE: (S, A_i) modification
    policy: JointPolicy


def _induced_mdp(game, player, policy):
    """Reward (S, A_i) and transition (S, A_i, S) faced by ``player`` against ``pi_{-i}``."""
    counts = game.action_counts
    S = game.num_states
    others = marginalize(policy, [j for j in range(game.num_players) if j != player])
    rest = others.reshape((S,) + tuple(n for j, n in enumerate(counts) if j != player))
    rest = np.expand_dims(rest, 1 + player)
    r = game.rewards[player].reshape((S,) + counts)
    P = game.transition.reshape((S,) + counts + (S,))
    axes = tuple(1 + j for j in range(game.num_players) if j != player)
    r_ind = (r * rest).sum(axis=axes)
    P_ind = (P * rest[..., None]).sum(axis=axes)
    return r_ind, P_ind


def unrestricted_best_response(game: MarkovGame, player: int, policy: JointPolicy,
                               eq: str = NE, tol: float = 1e-9) -> BestResponse:
    """Optimal response of ``player`` with no class restriction.

    For NE/CCE this solves the single-agent MDP induced by ``pi_{-i}``. For CE it
    optimizes a deterministic modification ``phi(s, a_i)`` of the recommended action.
    The returned value is the exact value of the greedy solution.
    """
    eq = check_equilibrium(eq)
    gamma = game.gamma
    S = game.num_states
    counts = game.action_counts
    n_i = counts[player]
    stop = tol * (1.0 - gamma) / max(gamma, 1e-300) * 1e-2
    if eq != CE:
        r_ind, P_ind = _induced_mdp(game, player, policy)
        v = np.zeros(S)
        while True:
            q = r_ind + gamma * P_ind @ v
            new = q.max(axis=1)
            step = np.max(np.abs(new - v))
            v = new
            if gamma == 0.0 or step <= stop:
                break
        actions = np.argmax(r_ind + gamma * P_ind @ v, axis=1)
        dev = np.zeros((S, n_i))
        dev[np.arange(S), actions] = 1.0
        response = replace_marginal(policy, player, dev)
        return BestResponse(policy_value(game, player, response), actions, response)

    # CE: W(s) = sum_{a_i} max_b sum_{a_-i} pi(a_i, a_-i | s) [r(s, b, a_-i) + gamma P W]
    T = np.moveaxis(policy.tensor(), 1 + player, -1).reshape(S, -1, n_i)   # (S, A_-i, A_i)
    r = np.moveaxis(game.rewards[player].reshape((S,) + counts), 1 + player, -1).reshape(S, -1, n_i)
    P = np.moveaxis(game.transition.reshape((S,) + counts + (S,)), 1 + player, -2)
    P = P.reshape(S, -1, n_i, S)

    def scores(w):
        cont = r + gamma * P @ w                         # (S, A_-i, b)
        return np.einsum("sra,srb->sab", T, cont)        # (S, recommended a_i, b)

    w = np.zeros(S)
    while True:
        new = scores(w).max(axis=2).sum(axis=1)
        step = np.max(np.abs(new - w))
        w = new
        if gamma == 0.0 or step <= stop:
            break
    mapping = np.argmax(scores(w), axis=2)
    phi = StrategyModification(player, mapping)
    response = apply_modification(policy, player, phi)
    return BestResponse(policy_value(game, player, response), mapping, response)


def payoff_matrix(game: MarkovGame, max_marginals, min_marginals) -> np.ndarray:
    """Player-1 values ``V^{mu, nu}`` over ``Pi_max x Pi_min``."""
    return np.array([[policy_value(game, 0, JointPolicy.product([mu, nu])) for nu in min_marginals]
                     for mu in max_marginals])


def duality_gap_from_matrix(V: np.ndarray, mu: int, nu: int) -> float:
    return float(V[:, nu].max() - V[mu, :].min())


def duality_gap(game: MarkovGame, max_marginals, min_marginals, mu: int, nu: int) -> float:
    """``max_{mu'} V^{mu', nu} - min_{nu'} V^{mu, nu'}`` by enumeration; always >= 0."""
    if game.num_players != 2:
        raise PreconditionError("duality gap is defined for two-player games")
    return duality_gap_from_matrix(payoff_matrix(game, max_marginals, min_marginals), mu, nu)


def q_evaluation_error(game: MarkovGame, player: int, policy: JointPolicy, f) -> tuple:
    """Both sides of ``f(s0, pi) - V_i^pi(s0) = E_{d^pi}[f - T_i^pi f] / (1 - gamma)``."""
    f = np.asarray(f, dtype=float)
    s0 = game.initial_state
    lhs = float(f[s0] @ policy.table[s0]) - policy_value(game, player, policy)
    resid = f - bellman_apply(game, player, policy, f)
    rhs = float(np.sum(occupancy(game, policy) * resid)) / (1.0 - game.gamma)
    return lhs, rhs


def v_evaluation_error(game: MarkovGame, player: int, policy: JointPolicy, g) -> tuple:
    """Both sides of ``g(s0) - V_i^pi(s0) = E_{d^pi, s'}[g(s) - r_i - gamma g(s')] / (1 - gamma)``."""
    g = np.asarray(g, dtype=float)
    lhs = float(g[game.initial_state]) - policy_value(game, player, policy)
    resid = (g[:, None] - game.rewards[player]
             - game.gamma * np.einsum("sat,t->sa", game.transition, g))
    rhs = float(np.sum(occupancy(game, policy) * resid)) / (1.0 - game.gamma)
    return lhs, rhs
