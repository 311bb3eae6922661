"""Two-player zero-sum selection through optimistic/pessimistic payoff tables.

Payoffs are reported from the maximizing player's side in the stored
``[0, v_max]`` range. ``signed`` maps them to ``[-1, 1]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .function_classes import mirrored_class
from .game import MarkovGame
from .oracle import duality_gap_from_matrix, payoff_matrix, true_gap
from .policies import NE, JointPolicy, PolicyClass
from .qtype import BCEL
from .validation import PreconditionError

MIRROR_TOL = 1e-9


@dataclass(frozen=True)
class PayoffIntervalTable:
    """Exact, optimistic and pessimistic payoffs over ``Pi_max x Pi_min``.

    ``upper[mu, nu]`` and ``lower[mu, nu]`` come from the maximizer's version spaces.
    ``upper_from_min`` / ``lower_from_min`` hold the same quantities re-derived from the
    minimizer's spaces (``v_max - lower_2`` and ``v_max - upper_2``).
    """

    exact: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    upper_from_min: np.ndarray
    lower_from_min: np.ndarray
    v_max: float

    @property
    def shape(self):
        return self.exact.shape

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def signed(self, values) -> np.ndarray:
        return 2.0 * np.asarray(values) / self.v_max - 1.0

    def mirror_consistent(self, tol=MIRROR_TOL) -> bool:
        return bool(np.max(np.abs(self.upper - self.upper_from_min)) <= tol
                    and np.max(np.abs(self.lower - self.lower_from_min)) <= tol)

    def sandwich(self, tol=0.0) -> bool:
        return bool(np.all(self.lower <= self.exact + tol) and np.all(self.exact <= self.upper + tol))

    @classmethod
    def degenerate(cls, exact, v_max=1.0) -> "PayoffIntervalTable":
        """Table whose intervals have collapsed onto the exact payoffs."""
        V = np.asarray(exact, dtype=float)
        return cls(V, V, V, V, V, v_max)


def _check_two_player(game: MarkovGame):
    if game.num_players != 2 or not game.zero_sum:
        raise PreconditionError("a two-player zero-sum game is required")


def build_interval_table(game: MarkovGame, max_marginals, min_marginals, function_class,
                         dataset, min_class=None, **params):
    """Fit BCEL (NE) over ``Pi_max x Pi_min`` and collect the maximizer's intervals.

    ``function_class`` is the maximizer's Q class; the minimizer's defaults to its
    mirror ``{v_max - f}``. Returns the table and the fitted estimator.
    """
    _check_two_player(game)
    pc = PolicyClass.from_player_sets([max_marginals, min_marginals])
    f2 = min_class if min_class is not None else mirrored_class(function_class, 1)
    est = BCEL(pc, [function_class, f2], gamma=game.gamma, initial_state=game.initial_state,
               r_max=game.r_max, equilibrium=NE, **params).fit(dataset)
    M, N = len(max_marginals), len(min_marginals)
    rep, ext = est.report_, est.extended_class_
    k = np.arange(M * N)
    up1 = rep.upper[0][np.asarray(ext.base_index[0])[k]].reshape(M, N)
    lo1 = rep.lower[0][np.asarray(ext.base_index[0])[k]].reshape(M, N)
    up2 = rep.upper[1][np.asarray(ext.base_index[1])[k]].reshape(M, N)
    lo2 = rep.lower[1][np.asarray(ext.base_index[1])[k]].reshape(M, N)
    exact = payoff_matrix(game, max_marginals, min_marginals)
    table = PayoffIntervalTable(exact, up1, lo1, game.v_max - lo2, game.v_max - up2, game.v_max)
    return table, est


def objective_J(table: PayoffIntervalTable, mu: int, nu: int) -> float:
    """``max_{mu'} upper[mu', nu] - min_{nu'} lower[mu, nu']``."""
    return float(table.upper[:, nu].max() - table.lower[mu, :].min())


def objective_matrix(table: PayoffIntervalTable) -> np.ndarray:
    return table.upper.max(axis=0)[None, :] - table.lower.min(axis=1)[:, None]


def select_independent(table: PayoffIntervalTable):
    """``(argmax_mu min_nu lower, argmin_nu max_mu upper)``, lowest index on ties."""
    mu = int(np.argmax(table.lower.min(axis=1)))
    nu = int(np.argmin(table.upper.max(axis=0)))
    return mu, nu


def separable_minimum(table: PayoffIntervalTable) -> float:
    """``min_nu max_mu upper - max_mu min_nu lower``, which equals ``min J``."""
    return float(table.upper.max(axis=0).min() - table.lower.min(axis=1).max())


def sum_form_estimate(table: PayoffIntervalTable, mu: int, nu: int) -> float:
    """Sum over both players of (optimistic best deviation - pessimistic own value).

    With mirrored classes this is ``J(mu, nu) + width[mu, nu]``.
    """
    gain_max = table.upper[:, nu].max() - table.lower[mu, nu]
    gain_min = table.upper[mu, nu] - table.lower[mu, :].min()
    return float(gain_max + gain_min)


def sum_form_gap(V: np.ndarray, mu: int, nu: int) -> float:
    """Exact sum of the two players' deviation gains at ``(mu, nu)``."""
    return float((V[:, nu].max() - V[mu, nu]) + (V[mu, nu] - V[mu, :].min()))


def max_form_gap(V: np.ndarray, mu: int, nu: int) -> float:
    """Exact NE gap: the larger of the two deviation gains."""
    return float(max(V[:, nu].max() - V[mu, nu], V[mu, nu] - V[mu, :].min()))


def exact_equilibrium(V: np.ndarray, tol=1e-12):
    """Lowest-index pair with zero duality gap, or the minimum-gap pair if none is exact."""
    gaps = V.max(axis=0)[None, :] - V.min(axis=1)[:, None]
    zero = np.argwhere(gaps <= tol)
    if len(zero):
        mu, nu = zero[0]
    else:
        mu, nu = np.unravel_index(np.argmin(gaps), gaps.shape)
    return int(mu), int(nu), float(gaps[mu, nu])


@dataclass(frozen=True)
class SelectionBound:
    """Terms of the selection bound at the reference pair ``(mu_star, nu_star)``."""

    selected_gap: float
    reference_gap: float
    mu_star: int
    nu_star: int
    mu_tilde: int
    nu_tilde: int
    max_side: float
    min_side: float

    @property
    def rhs(self) -> float:
        return self.reference_gap + self.max_side + self.min_side

    def holds(self, slack=1e-9) -> bool:
        return self.selected_gap <= self.rhs + slack


def selection_bound(table: PayoffIntervalTable, mu_star=None, nu_star=None) -> SelectionBound:
    """``gap(mu_hat, nu_hat) <= gap(mu*, nu*) + min_{mu~} [width + subopt] + min_{nu~} [width + subopt]``."""
    V = table.exact
    if mu_star is None or nu_star is None:
        mu_star, nu_star, _ = exact_equilibrium(V)
    mu_hat, nu_hat = select_independent(table)
    W = table.widths
    col = table.upper[:, nu_star]
    max_terms = W[:, nu_star] + (col.max() - col)
    row = table.lower[mu_star, :]
    min_terms = W[mu_star, :] + (row - row.min())
    mt, nt = int(np.argmin(max_terms)), int(np.argmin(min_terms))
    return SelectionBound(duality_gap_from_matrix(V, mu_hat, nu_hat),
                            duality_gap_from_matrix(V, mu_star, nu_star), mu_star, nu_star, mt, nt,
                            float(max_terms[mt]), float(min_terms[nt]))


def ne_gap_of_pair(game, max_marginals, min_marginals, mu, nu) -> float:
    """Exact NE gap of ``(mu, nu)`` through the general oracle (cross-check route)."""
    pc = PolicyClass.from_player_sets([max_marginals, min_marginals])
    pi = JointPolicy.product([max_marginals[mu], min_marginals[nu]])
    return true_gap(game, pc, pi, NE).gap
