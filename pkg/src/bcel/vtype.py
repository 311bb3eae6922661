"""State-value variant with importance-weighted losses over the joint action."""
from __future__ import annotations

import math

import numpy as np

from .data import DataDistribution, DatasetStatistics, OfflineDataset
from .function_classes import V_KIND, FunctionClass
from .policies import NE, JointPolicy
from .qtype import (BCEL, THEORETICAL_CONSTANTS, VersionSpace, _stats, assemble_report, blockwise_errors,
                    distinct_count,
                    threshold_epsilon_v)
from .validation import PreconditionError


def importance_weights(dist: DataDistribution, policy: JointPolicy) -> np.ndarray:
    """``pi(a|s) / d_A(a|s)`` over the full grid; ``inf`` where undefined."""
    return dist.importance_weights(policy.table)


def weight_bound(dist: DataDistribution, policy: JointPolicy) -> float:
    """``C_A(pi)``."""
    return dist.weight_bound(policy.table)


def weighted_empirical_loss(dataset: OfflineDataset, player: int, g_prime, g, policy: JointPolicy,
                            gamma: float, dist: DataDistribution = None) -> float:
    """``(1/n) sum w(s, a) (g'(s) - r_i - gamma g(s'))^2`` with ``w = pi / d_A``."""
    dist = dist if dist is not None else dataset.distribution
    if dist is None:
        raise PreconditionError("the behavior distribution is required for weighted losses")
    w = importance_weights(dist, policy)[dataset.states, dataset.joint_actions]
    bad = np.flatnonzero(~np.isfinite(w))
    if len(bad):
        t = bad[0]
        raise PreconditionError(
            f"weight undefined at (s={dataset.states[t]}, a={dataset.joint_actions[t]}): "
            "behavior probability is zero")
    g_prime = np.asarray(g_prime, dtype=float)
    g = np.asarray(g, dtype=float)
    resid = g_prime[dataset.states] - dataset.rewards[:, player] - gamma * g[dataset.next_states]
    return float(np.mean(w * resid ** 2))


def weighted_loss_matrix(stats: DatasetStatistics, player: int, tables, targets, weights,
                         gamma: float) -> np.ndarray:
    """``C[k', k]`` equal to the weighted loss of ``tables[k']`` against ``targets[k]`` up to a
    per-column constant."""
    w = np.where(np.isfinite(weights), weights, 0.0)
    N = stats.cell_counts
    W = (w * N).sum(axis=1)                                              # (S,)
    sums = stats.reward_sums[player][None] + gamma * np.einsum("sat,kt->ksa", stats.counts, targets)
    Y = (w[None] * sums).sum(axis=2)                                     # (T, S)
    sq = (tables ** 2) @ W
    return (sq[:, None] - 2.0 * tables @ Y.T) / stats.n


def weighted_bellman_errors(stats, player, function_class: FunctionClass, policy, gamma,
                            dist: DataDistribution) -> np.ndarray:
    """Weighted empirical Bellman error of every candidate in a V class."""
    w = importance_weights(dist, policy)
    tables = function_class.tables
    return blockwise_errors(lambda lo, hi: weighted_loss_matrix(stats, player, tables, tables[lo:hi],
                                                                w, gamma), len(tables))


def threshold_beta_g(n, n_functions, n_policies, delta, v_max, epsilon_f=0.0, weight=1.0,
                     constants=THEORETICAL_CONSTANTS) -> float:
    """``c1 C_A(pi) V_max^2 log(|G| |Pi_ext| / delta) / n + c2 eps_F``."""
    c1, c2 = constants
    first = threshold_epsilon_v(n, n_functions, n_policies, delta, v_max, 0.0, (c1, 0.0))
    return weight * first + c2 * epsilon_f


class VTypeBCEL(BCEL):
    """Equilibrium learner over state-value classes with action importance weighting.

    Takes the same parameters as :class:`BCEL` plus ``behavior``, the known
    behavior distribution (taken from the dataset when omitted). The function
    classes must be of kind "V". A numeric ``threshold`` ``tau`` is scaled per
    policy as ``tau * C_A(pi)``. Policies whose weights are unbounded are not
    evaluated and receive the widest interval ``[0, v_max]``.

    Attributes
    ----------
    weight_bounds_ : ndarray of shape (m, |Pi_ext,i|)
        ``C_A(pi)`` per extended-class member (ragged list when sizes differ).
    thresholds_ : list of ndarray
        ``beta_g`` per player and extended-class member.
    rejected_ : list of ndarray of bool
    """

    def __init__(self, policy_class=None, function_classes=None, *, gamma=0.0, initial_state=0,
                 r_max=1.0, equilibrium=NE, delta=0.1, threshold="theoretical",
                 threshold_constants=THEORETICAL_CONSTANTS, epsilon_f=0.0, product_only=True,
                 behavior=None):
        super().__init__(policy_class, function_classes, gamma=gamma, initial_state=initial_state,
                         r_max=r_max, equilibrium=equilibrium, delta=delta, threshold=threshold,
                         threshold_constants=threshold_constants, epsilon_f=epsilon_f,
                         product_only=product_only)
        self.behavior = behavior

    def _beta(self, n, n_functions, n_policies, weight):
        if isinstance(self.threshold, str):
            if self.threshold != "theoretical":
                raise ValueError("threshold must be 'theoretical' or a number")
            return threshold_beta_g(n, n_functions, n_policies, self.delta, self.v_max,
                                    self.epsilon_f, weight, self.threshold_constants)
        tau = float(self.threshold)
        if tau < 0:
            raise ValueError("threshold must be non-negative")
        return tau * weight

    def fit(self, X, y=None):
        """Build weighted version spaces and select the minimum-gap policy."""
        ds, classes, ext, eligible, eq = self._validate(X, V_KIND)
        dist = self.behavior if self.behavior is not None else ds.distribution
        if not isinstance(dist, DataDistribution):
            raise PreconditionError("the behavior distribution d_A must be known")
        stats = ds.statistics
        n_functions = distinct_count(classes)
        n_policies = ext.size()
        s0 = self.initial_state
        spaces, upper, lower, bounds, betas, rejected = [], [], [], [], [], []
        for i, fc in enumerate(classes):
            row, up, lo, cb, bt, rj = [], [], [], [], [], []
            preds = fc.tables[:, s0]
            for pi in ext.policies[i]:
                c_a = weight_bound(dist, pi)
                cb.append(c_a)
                if not math.isfinite(c_a):
                    row.append(None)
                    up.append(self.v_max)
                    lo.append(0.0)
                    bt.append(math.inf)
                    rj.append(True)
                    continue
                beta = self._beta(ds.n, n_functions, n_policies, c_a)
                errors = weighted_bellman_errors(stats, i, fc, pi, self.gamma, dist)
                vs = VersionSpace(i, beta, np.flatnonzero(errors <= beta), errors, preds, pi)
                row.append(vs)
                up.append(vs.upper)
                lo.append(vs.lower)
                bt.append(beta)
                rj.append(False)
            spaces.append(row)
            upper.append(up)
            lower.append(lo)
            bounds.append(np.array(cb))
            betas.append(np.array(bt))
            rejected.append(np.array(rj))
        self.extended_class_ = ext
        self.version_spaces_ = spaces
        self.weight_bounds_ = bounds
        self.thresholds_ = betas
        self.rejected_ = rejected
        self.threshold_ = betas
        self.n_samples_ = ds.n
        self.report_ = assemble_report(ext, upper, lower, eq, eligible, {"beta_g": betas}, variant="v")
        self.estimated_gaps_ = self.report_.estimated_gaps
        self.selected_index_ = self.report_.selected
        self.selected_policy_ = self.policy_class[self.selected_index_]
        return self


def run_bcel_v(game, policy_class, function_classes, dataset, equilibrium=NE, **params):
    """Fit :class:`VTypeBCEL` with the game's discount, initial state and reward range."""
    est = VTypeBCEL(policy_class, function_classes, gamma=game.gamma,
                    initial_state=game.initial_state, r_max=game.r_max, equilibrium=equilibrium,
                    **params)
    return est.fit(dataset).report_


def corresponding_value_class(q_class: FunctionClass, policies) -> FunctionClass:
    """V class ``{f(., pi') : f in F, pi' in policies}`` induced by a Q class."""
    tables = np.concatenate([(q_class.tables * p.table).sum(axis=-1) for p in policies])
    return FunctionClass(q_class.player, V_KIND, np.clip(tables, 0.0, q_class.v_max), q_class.v_max)
