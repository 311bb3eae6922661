"""Bound-side quantities for per-trial auditing of the learner's guarantees."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DataDistribution
from .function_classes import Q_KIND, FunctionClass, coverage_coefficient
from .game import MarkovGame
from .oracle import (ExactValues, occupancy, policy_value, state_values,
                     unrestricted_best_response)
from .policies import NE, ExtendedClass, JointPolicy, PolicyClass, check_equilibrium, response_class
from .qtype import GapReport, VersionSpace

MIXTURE_WEIGHTS = (0.25, 0.5, 0.75)
SANDWICH_TOL = 1e-9


def interval_width(vs: VersionSpace) -> float:
    """``max f(s0, pi) - min f(s0, pi)`` over the version space."""
    return vs.width


def sandwich_holds(report: GapReport, exact: ExactValues, tol=SANDWICH_TOL) -> bool:
    """Whether ``lower <= V_i^pi(s0) <= upper`` for every player and extended-class member."""
    scale = tol * max(1.0, exact.game.v_max)
    return all(np.all(report.lower[i] <= v + scale) and np.all(v <= report.upper[i] + scale)
               for i, v in enumerate(exact.values))


def upper_bound_violations(report: GapReport, exact: ExactValues, tol=SANDWICH_TOL) -> list:
    """Eligible policies whose true gap exceeds the estimated gap."""
    scale = tol * max(1.0, exact.game.v_max)
    return [k for k in report.eligible if exact.gap(k) > report.estimated_gaps[k] + scale]


def probe_distributions(d_pi: np.ndarray, d_data: np.ndarray, weights=MIXTURE_WEIGHTS):
    """Named probe set: ``d^pi``, ``d_D`` and their mixtures."""
    probes = [("d_pi", d_pi), ("d_D", d_data)]
    probes += [(f"mix_{a:g}", a * d_pi + (1.0 - a) * d_data) for a in weights]
    return probes


@dataclass(frozen=True)
class WidthBound:
    """Width bound evaluated on a probe set.

    ``rhs[j] = constant * mismatch[j] + off_support[j]`` with
    ``mismatch[j] = sqrt(C(d_j)) * unit / (1 - gamma)``.
    """

    width: float
    names: tuple
    coverage: np.ndarray
    mismatch: np.ndarray
    off_support: np.ndarray
    unit: float
    constant: float

    @property
    def rhs(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.mismatch == 0, 0.0, self.constant * self.mismatch) + self.off_support

    @property
    def best(self) -> float:
        return float(np.min(self.rhs))

    @property
    def best_probe(self) -> str:
        return self.names[int(np.argmin(self.rhs))]

    def holds(self, slack=1e-9) -> bool:
        return self.width <= self.best + slack

    @property
    def required_constant(self) -> float:
        """Smallest leading constant making the bound hold on every probe."""
        need = 0.0
        for m_j, o_j in zip(self.mismatch, self.off_support):
            excess = self.width - o_j
            if excess <= 1e-12:
                continue
            if m_j > 0 and math.isfinite(m_j):
                need = max(need, excess / m_j)
            elif m_j == 0:
                return math.inf
        return float(need)


def approximation_unit(v_max, n, n_functions, n_policies, delta, epsilon_f=0.0, epsilon_ff=0.0,
                       weight=1.0) -> float:
    """Order-form approximation error with unit constant."""
    return (v_max * math.sqrt(weight * math.log(n_functions * n_policies / delta) / n)
            + math.sqrt(epsilon_f + epsilon_ff))


def _pair_tables(vs: VersionSpace, fc: FunctionClass):
    return fc.tables[vs.argmax], fc.tables[vs.argmin]


def width_bound_q(game: MarkovGame, vs: VersionSpace, fc: FunctionClass, dist: DataDistribution,
                  unit: float, constant: float = 1.0, weights=MIXTURE_WEIGHTS) -> WidthBound:
    """Interval-width bound for a Q-class version space over the probe set."""
    pi = vs.policy
    g = game.gamma
    d_pi = occupancy(game, pi)
    f_max, f_min = _pair_tables(vs, fc)
    diff = f_max - f_min
    backed = np.einsum("sat,t->sa", game.transition, state_values(diff, pi))
    inner = diff - g * backed
    return _assemble(game, vs, fc, dist, d_pi, dist.table, inner, unit, constant, weights)


def width_bound_v(game: MarkovGame, vs: VersionSpace, fc: FunctionClass, dist: DataDistribution,
                  unit: float, constant: float = 1.0, weights=MIXTURE_WEIGHTS,
                  include_reward: bool = True) -> WidthBound:
    """Interval-width bound for a V-class version space with state measures.

    The transition term uses ``E_{a~pi, s'}[r_i(s, a) + g(s')]`` when ``include_reward``
    is true, and ``E[g(s')]`` otherwise.
    """
    pi = vs.policy
    d_pi = occupancy(game, pi).sum(axis=1)
    g_max, g_min = _pair_tables(vs, fc)
    diff = g_max - g_min
    step = np.einsum("sat,t->sa", game.transition, diff)
    if include_reward:
        step = step + game.rewards[vs.player]
    backed = (pi.table * step).sum(axis=1)
    inner = diff - game.gamma * backed
    return _assemble(game, vs, fc, dist, d_pi, dist.state, inner, unit, constant, weights)


def _assemble(game, vs, fc, dist, d_pi, d_data, inner, unit, constant, weights):
    scale = 1.0 / (1.0 - game.gamma)
    names, cov, mis, off = [], [], [], []
    for name, d in probe_distributions(d_pi, np.asarray(d_data), weights):
        c = coverage_coefficient(d, dist, fc, game, vs.policy)
        names.append(name)
        cov.append(c)
        mis.append(scale * math.sqrt(c) * unit if math.isfinite(c) else math.inf)
        off.append(scale * float(np.sum(np.maximum(d_pi - d, 0.0) * inner)))
    return WidthBound(vs.width, tuple(names), np.array(cov), np.array(mis), np.array(off), unit,
                      constant)


def subopt(report: GapReport, ext: ExtendedClass, player: int, k: int, member: int) -> float:
    """``max_{dev} upper(dev) - upper(member)`` over the response class of base policy ``k``."""
    idx = ext.response_index[player][k]
    up = report.upper[player]
    return float(up[idx].max() - up[member])


@dataclass
class BoundBreakdown:
    """Composite-bound terms for every eligible base policy.

    ``adaptive[k, i]`` is ``min_{pi~} (width(pi~) + width(pi_k) + subopt(pi~))`` over the
    response class; ``unilateral[k, i]`` is ``max_{dev} (width(dev) + width(pi_k))``.
    """

    eligible: list
    widths: list
    adaptive: np.ndarray
    adaptive_choice: np.ndarray
    unilateral: np.ndarray
    true_gaps: np.ndarray
    selected: int
    epsilon_f: float
    gamma: float

    def adaptive_term(self, k) -> float:
        return float(self.adaptive[k].max())

    def unilateral_term(self, k) -> float:
        return float(self.unilateral[k].max())

    def rhs(self, k) -> float:
        return (float(self.true_gaps[k]) + 4.0 * math.sqrt(self.epsilon_f) / (1.0 - self.gamma)
                + self.adaptive_term(k))

    @property
    def selected_gap(self) -> float:
        return float(self.true_gaps[self.selected])

    def violations(self, slack=1e-9) -> list:
        return [k for k in self.eligible if self.selected_gap > self.rhs(k) + slack]

    def audit(self, slack=1e-9) -> bool:
        return not self.violations(slack)


def bound_breakdown(report: GapReport, ext: ExtendedClass, exact: ExactValues,
                    epsilon_f: float = 0.0, gamma: float = None) -> BoundBreakdown:
    gamma = exact.game.gamma if gamma is None else gamma
    K, m = len(ext.policy_class), ext.num_players
    widths = [report.widths(i) for i in range(m)]
    adaptive = np.full((K, m), np.nan)
    choice = np.full((K, m), -1)
    unilateral = np.full((K, m), np.nan)
    gaps = np.full(K, np.nan)
    for k in report.eligible:
        gaps[k] = exact.gap(k)
        for i in range(m):
            idx = np.asarray(ext.response_index[i][k])
            own = widths[i][ext.base_index[i][k]]
            up = report.upper[i][idx]
            terms = widths[i][idx] + own + (up.max() - up)
            j = int(np.argmin(terms))
            adaptive[k, i] = terms[j]
            choice[k, i] = idx[j]
            unilateral[k, i] = (widths[i][idx] + own).max()
    return BoundBreakdown(list(report.eligible), widths, adaptive, choice, unilateral, gaps,
                          report.selected, epsilon_f, gamma)


def unilateral_coefficient(game: MarkovGame, policy_class: PolicyClass, classes, dist: DataDistribution,
                           pi_star: JointPolicy, eq: str = NE) -> float:
    """``max_i max_{dev in Pi_i(pi*)} C(d^dev; d_D, F_i, pi*)`` (state measures for V classes)."""
    best = 0.0
    for fc in classes:
        rc = response_class(pi_star, fc.player, eq, policy_class)
        for dev in rc.members:
            d = occupancy(game, dev)
            best = max(best, coverage_coefficient(d, dist, fc, game, pi_star))
    return best


def self_coverage(game, fc: FunctionClass, dist, pi_star) -> float:
    """``C(d^{pi*}; d_D, F_i, pi*)``."""
    return coverage_coefficient(occupancy(game, pi_star), dist, fc, game, pi_star)


def rate_constant(selected_gap, coefficient, n, n_functions, n_policies, delta, v_max, gamma) -> float:
    """Empirical constant ``kappa`` in ``gap <= kappa sqrt(C log(|F||Pi_ext|/delta)/n) v_max/(1-gamma)``."""
    scale = math.sqrt(coefficient * math.log(n_functions * n_policies / delta) / n) * v_max / (1 - gamma)
    if scale == 0:
        return 0.0 if selected_gap == 0 else math.inf
    return float(selected_gap / scale)


def strategy_completeness_gap(game: MarkovGame, policy_class: PolicyClass, policy: JointPolicy,
                              eq: str = NE):
    """Shortfall of the best in-class deviation against the unrestricted best response.

    Returns ``(eps_pi, unrestricted_gap, class_gap)``; ``unrestricted_gap <= class_gap + eps_pi``.
    """
    eq = check_equilibrium(eq)
    eps, free_gap, class_gap = 0.0, 0.0, 0.0
    for i in range(game.num_players):
        base = policy_value(game, i, policy)
        free = unrestricted_best_response(game, i, policy, eq).value
        rc = response_class(policy, i, eq, policy_class)
        inside = max(policy_value(game, i, p) for p in rc.members)
        eps = max(eps, free - inside)
        free_gap = max(free_gap, free - base)
        class_gap = max(class_gap, inside - base)
    return float(eps), float(free_gap), float(class_gap)
