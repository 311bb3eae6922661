"""Bellman-consistent equilibrium learning with Q-function classes.

Every policy in the extended class gets a version space of candidates whose
empirical Bellman error is below a threshold. The largest and smallest
initial-state predictions over a version space give optimistic and pessimistic
values, and their combination upper-bounds each candidate's equilibrium gap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import DatasetStatistics, OfflineDataset
from .function_classes import FunctionClass, Q_KIND
from .oracle import state_values
from .policies import NE, ExtendedClass, JointPolicy, PolicyClass, check_equilibrium
from .validation import (EmptyVersionSpaceError, PreconditionError, check_probability,
                         check_transitions)

THEORETICAL_CONSTANTS = (80.0, 30.0)


def empirical_loss(dataset: OfflineDataset, player: int, f_prime, f, policy: JointPolicy,
                   gamma: float) -> float:
    """``(1/n) sum (f'(s, a) - r_i - gamma f(s', pi))^2`` over the dataset tuples."""
    f_prime = np.asarray(f_prime, dtype=float)
    nxt = state_values(np.asarray(f, dtype=float), policy)[dataset.next_states]
    resid = f_prime[dataset.states, dataset.joint_actions] - dataset.rewards[:, player] - gamma * nxt
    return float(np.mean(resid ** 2))


def empirical_bellman_error(dataset, player, f, policy, function_class: FunctionClass,
                            gamma: float) -> float:
    """``L_i(f, f) - min_{f' in F_i} L_i(f', f)`` by direct enumeration over ``F_i``."""
    own = empirical_loss(dataset, player, f, f, policy, gamma)
    best = min(empirical_loss(dataset, player, g, f, policy, gamma) for g in function_class.tables)
    return own - best


# entries of the candidate-by-target loss matrix held in memory at once
BLOCK_ENTRIES = 1 << 22


def loss_matrix(stats: DatasetStatistics, player: int, tables: np.ndarray, targets: np.ndarray,
                policy: JointPolicy, gamma: float) -> np.ndarray:
    """``C[k', k] = L_i(tables[k'], targets[k]) - const_k`` from sufficient statistics.

    The constant depends only on the target, so row minima of each column give
    ``min_{f'} L_i(f', f)`` up to the same shift as the diagonal-style entries.
    """
    n = stats.n
    K = tables.shape[0]
    v = state_values(targets, policy)                                  # (T, S)
    target_sums = stats.reward_sums[player][None] + gamma * np.einsum("sat,kt->ksa", stats.counts, v)
    F = tables.reshape(K, -1)
    sq = (F ** 2) @ stats.cell_counts.reshape(-1)
    cross = F @ target_sums.reshape(len(targets), -1).T
    return (sq[:, None] - 2.0 * cross) / n


def bellman_errors(stats: DatasetStatistics, player: int, function_class: FunctionClass,
                   policy: JointPolicy, gamma: float) -> np.ndarray:
    """Empirical Bellman error ``E_i(f, pi; D)`` of every candidate, vectorized."""
    tables = function_class.tables
    return blockwise_errors(lambda lo, hi: loss_matrix(stats, player, tables, tables[lo:hi], policy,
                                                       gamma), len(tables))


def blockwise_errors(block, K: int, budget: int = BLOCK_ENTRIES) -> np.ndarray:
    """``diag(C) - min over rows of C`` with ``C`` built ``block(lo, hi)`` columns at a time."""
    step = max(1, budget // max(K, 1))
    out = np.empty(K)
    for lo in range(0, K, step):
        hi = min(K, lo + step)
        C = block(lo, hi)
        out[lo:hi] = C[np.arange(lo, hi), np.arange(hi - lo)] - C.min(axis=0)
    return out


def bellman_error_of(stats, player, table, function_class, policy, gamma) -> float:
    """``E_i`` of an arbitrary table, with the inner minimum over ``function_class``."""
    table = np.asarray(table, dtype=float)[None]
    own = loss_matrix(stats, player, table, table, policy, gamma)[0, 0]
    others = loss_matrix(stats, player, function_class.tables, table, policy, gamma)[:, 0]
    return float(own - others.min())


def threshold_epsilon_v(n, n_functions, n_policies, delta, v_max, epsilon_f=0.0,
                        constants=THEORETICAL_CONSTANTS) -> float:
    """``c1 V_max^2 log(|F| |Pi_ext| / delta) / n + c2 eps_F``."""
    if int(n) < 1:
        raise ValueError("n must be positive")
    delta = check_probability(delta)
    c1, c2 = constants
    return c1 * v_max ** 2 * math.log(n_functions * n_policies / delta) / n + c2 * epsilon_f


@dataclass(frozen=True)
class VersionSpace:
    """Candidates of ``F_i`` whose empirical Bellman error for ``policy`` is within ``threshold``."""

    player: int
    threshold: float
    members: np.ndarray        # indices into the function class
    errors: np.ndarray         # E_i of every candidate
    predictions: np.ndarray    # f(s0, pi) of every candidate
    policy: Optional[JointPolicy] = field(default=None, repr=False)

    def __len__(self):
        return len(self.members)

    def _check(self):
        if len(self.members) == 0:
            raise EmptyVersionSpaceError(
                f"empty version space for player {self.player} at threshold {self.threshold!r}")

    @property
    def argmax(self) -> int:
        self._check()
        return int(self.members[np.argmax(self.predictions[self.members])])

    @property
    def argmin(self) -> int:
        self._check()
        return int(self.members[np.argmin(self.predictions[self.members])])

    @property
    def upper(self) -> float:
        return float(self.predictions[self.argmax])

    @property
    def lower(self) -> float:
        return float(self.predictions[self.argmin])

    @property
    def width(self) -> float:
        return self.upper - self.lower


def build_version_space(dataset_or_stats, player, policy, function_class, threshold, gamma,
                        initial_state=0) -> VersionSpace:
    stats = _stats(dataset_or_stats)
    errors = bellman_errors(stats, player, function_class, policy, gamma)
    preds = state_values(function_class.tables, policy)[:, initial_state]
    members = np.flatnonzero(errors <= threshold)
    return VersionSpace(player, float(threshold), members, errors, preds, policy)


def optimistic_value(vs: VersionSpace) -> float:
    return vs.upper


def pessimistic_value(vs: VersionSpace) -> float:
    return vs.lower


def _stats(data) -> DatasetStatistics:
    if isinstance(data, DatasetStatistics):
        return data
    if isinstance(data, OfflineDataset):
        return data.statistics
    raise TypeError("expected an OfflineDataset or DatasetStatistics")


def distinct_count(classes) -> int:
    """``|F|`` for the union of the per-player classes (exact duplicates merged)."""
    rows = np.concatenate([fc.tables.reshape(len(fc), -1) for fc in classes])
    return int(np.unique(rows, axis=0).shape[0])


@dataclass
class GapReport:
    """Optimistic/pessimistic values and estimated gaps for every policy in ``Pi``.

    ``upper[i][j]`` and ``lower[i][j]`` index ``Pi_ext,i``. ``estimated_gaps[k]`` is NaN
    for policies outside the selection domain (non-product policies under NE).
    """

    equilibrium: str
    upper: list
    lower: list
    deviation_upper: list          # [k][i] -> array over response members (None if ineligible)
    pessimistic: np.ndarray        # (|Pi|, m)
    estimated_gaps: np.ndarray
    argmax_player: np.ndarray
    argmax_deviation: np.ndarray
    eligible: list
    selected: int
    ties: list
    thresholds: dict
    variant: str = "q"

    def recompute_gap(self, k: int) -> float:
        per_player = [dev.max() - self.pessimistic[k, i]
                      for i, dev in enumerate(self.deviation_upper[k])]
        return float(max(per_player))

    def widths(self, player: int) -> np.ndarray:
        return np.asarray(self.upper[player]) - np.asarray(self.lower[player])


def assemble_report(ext: ExtendedClass, upper, lower, eq, eligible, thresholds, variant="q") -> GapReport:
    """Combine per-(player, policy) intervals into estimated gaps and the argmin selection."""
    pc = ext.policy_class
    m = ext.num_players
    K = len(pc)
    pess = np.full((K, m), np.nan)
    gaps = np.full(K, np.nan)
    arg_p = np.full(K, -1)
    arg_d = np.full(K, -1)
    dev_upper = [None] * K
    for k in eligible:
        devs, gains = [], []
        for i in range(m):
            idx = ext.response_index[i][k]
            du = np.asarray(upper[i])[idx]
            devs.append(du)
            pess[k, i] = lower[i][ext.base_index[i][k]]
            gains.append(du.max() - pess[k, i])
        dev_upper[k] = devs
        gains = np.asarray(gains)
        arg_p[k] = int(np.argmax(gains))
        arg_d[k] = int(np.argmax(devs[arg_p[k]]))
        gaps[k] = gains.max()
    best = min(gaps[k] for k in eligible)
    ties = [k for k in eligible if gaps[k] == best]
    return GapReport(eq, [np.asarray(u) for u in upper], [np.asarray(l) for l in lower], dev_upper,
                     pess, gaps, arg_p, arg_d, list(eligible), ties[0], ties, thresholds, variant)


class BCEL(BaseEstimator):
    """Offline equilibrium learner over a finite policy class using Q-function version spaces.

    Parameters
    ----------
    policy_class : PolicyClass
        Candidate policies ``Pi`` (and strategy modifications for CE).
    function_classes : list of FunctionClass
        One Q-kind class per player.
    gamma : float, default=0.0
    initial_state : int, default=0
    r_max : float, default=1.0
    equilibrium : {"NE", "CE", "CCE"}, default="NE"
    delta : float, default=0.1
        Failure probability entering the theoretical threshold.
    threshold : "theoretical" or float, default="theoretical"
        A float is used verbatim as ``eps_v``.
    threshold_constants : tuple of float, default=(80.0, 30.0)
    epsilon_f : float, default=0.0
        Realizability error fed to the threshold and to the bound diagnostics.
    product_only : bool, default=True
        Under NE, restrict the argmin to product policies of ``Pi``.

    Attributes
    ----------
    extended_class_ : ExtendedClass
    threshold_ : float
    version_spaces_ : list of list of VersionSpace
        ``version_spaces_[i][j]`` for ``Pi_ext,i`` member ``j``.
    report_ : GapReport
    estimated_gaps_ : ndarray of shape (|Pi|,)
    selected_index_ : int
    selected_policy_ : JointPolicy
    """

    def __init__(self, policy_class: PolicyClass = None, function_classes=None, *, gamma=0.0,
                 initial_state=0, r_max=1.0, equilibrium=NE, delta=0.1, threshold="theoretical",
                 threshold_constants=THEORETICAL_CONSTANTS, epsilon_f=0.0, product_only=True):
        self.policy_class = policy_class
        self.function_classes = function_classes
        self.gamma = gamma
        self.initial_state = initial_state
        self.r_max = r_max
        self.equilibrium = equilibrium
        self.delta = delta
        self.threshold = threshold
        self.threshold_constants = threshold_constants
        self.epsilon_f = epsilon_f
        self.product_only = product_only

    @property
    def v_max(self):
        return self.r_max / (1.0 - self.gamma)

    def _validate(self, X, kind):
        if not isinstance(self.policy_class, PolicyClass):
            raise TypeError("policy_class must be a PolicyClass")
        pc = self.policy_class
        classes = list(self.function_classes or [])
        if len(classes) != pc.num_players:
            raise ValueError("one function class per player is required")
        for i, fc in enumerate(classes):
            if fc.player != i or fc.kind != kind:
                raise ValueError(f"function_classes[{i}] must be a {kind}-class for player {i}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        check_probability(self.delta)
        eq = check_equilibrium(self.equilibrium)
        if isinstance(X, OfflineDataset):
            ds = X
        else:
            s, a, r, s2 = check_transitions(X, pc.num_states, pc.action_counts)
            ds = OfflineDataset(s, a, r, s2, pc.action_counts, pc.num_states)
        if ds.action_counts != pc.action_counts or ds.num_states != pc.num_states:
            raise ValueError("dataset shape does not match the policy class")
        ext = ExtendedClass(pc, eq)
        if eq == NE and self.product_only:
            eligible = pc.product_indices()
            if not eligible:
                raise PreconditionError("NE requested but the policy class has no product policy")
        else:
            eligible = [k for k in range(len(pc)) if ext.response_index[0][k] is not None]
        return ds, classes, ext, eligible, eq

    def _threshold(self, n, classes, ext):
        if isinstance(self.threshold, str):
            if self.threshold != "theoretical":
                raise ValueError("threshold must be 'theoretical' or a number")
            return threshold_epsilon_v(n, distinct_count(classes), ext.size(), self.delta,
                                       self.v_max, self.epsilon_f, self.threshold_constants)
        value = float(self.threshold)
        if value < 0:
            raise ValueError("threshold must be non-negative")
        return value

    def fit(self, X, y=None):
        """Build all version spaces from transitions ``X`` and select the minimum-gap policy."""
        ds, classes, ext, eligible, eq = self._validate(X, Q_KIND)
        stats = ds.statistics
        eps = self._threshold(ds.n, classes, ext)
        spaces, upper, lower = [], [], []
        for i, fc in enumerate(classes):
            row = [build_version_space(stats, i, pi, fc, eps, self.gamma, self.initial_state)
                   for pi in ext.policies[i]]
            spaces.append(row)
            upper.append([vs.upper for vs in row])
            lower.append([vs.lower for vs in row])
        self.extended_class_ = ext
        self.threshold_ = eps
        self.version_spaces_ = spaces
        self.n_samples_ = ds.n
        self.report_ = assemble_report(ext, upper, lower, eq, eligible, {"epsilon_v": eps})
        self.estimated_gaps_ = self.report_.estimated_gaps
        self.selected_index_ = self.report_.selected
        self.selected_policy_ = self.policy_class[self.selected_index_]
        return self

    def estimated_gap(self, k: int) -> float:
        check_is_fitted(self, "report_")
        return float(self.report_.estimated_gaps[k])

    def interval(self, player: int, policy_index: int):
        """``(lower, upper)`` for member ``policy_index`` of ``Pi_ext,i``."""
        check_is_fitted(self, "report_")
        return (float(self.report_.lower[player][policy_index]),
                float(self.report_.upper[player][policy_index]))


def run_bcel(game, policy_class, function_classes, dataset, equilibrium=NE, **params) -> GapReport:
    """Fit :class:`BCEL` with the game's discount, initial state and reward range."""
    est = BCEL(policy_class, function_classes, gamma=game.gamma, initial_state=game.initial_state,
               r_max=game.r_max, equilibrium=equilibrium, **params)
    return est.fit(dataset).report_


def estimated_gap(game, policy_class, function_classes, dataset, k, equilibrium=NE, **params):
    """Estimated gap of policy ``k`` and its (player, deviation) decomposition."""
    report = run_bcel(game, policy_class, function_classes, dataset, equilibrium, **params)
    return float(report.estimated_gaps[k]), int(report.argmax_player[k]), int(report.argmax_deviation[k])
