"""Finite tabular multi-player general-sum Markov games.

Joint actions are flattened row-major over the per-player action counts, so a
game with action counts ``(A_1, ..., A_m)`` stores tables of shape
``(S, A_1 * ... * A_m)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .validation import GameFormatError, frozen_array

ROW_MAXIMIZER = "row"
COLUMN_MAXIMIZER = "column"

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MarkovGame:
    """Discounted m-player game ``(S, A, P, r, gamma, s0)``.

    Parameters
    ----------
    action_counts : sequence of int
        Number of actions ``A_i`` for each player.
    transition : ndarray of shape (S, A, S)
        ``transition[s, a, s']`` is ``P(s' | s, a)`` for flattened joint action ``a``.
    rewards : ndarray of shape (m, S, A)
        Deterministic per-player rewards in ``[0, r_max]``.
    gamma : float
        Discount factor in ``[0, 1)``.
    initial_state : int, default=0
    r_max : float, default=1.0
    zero_sum : bool, default=False
        Marks a two-player game stored in shifted form ``r_2 = r_max - r_1``.
    """

    action_counts: tuple
    transition: np.ndarray
    rewards: np.ndarray
    gamma: float
    initial_state: int = 0
    r_max: float = 1.0
    zero_sum: bool = False
    _joint_shape: tuple = field(init=False, repr=False)

    def __post_init__(self):
        counts = tuple(int(a) for a in self.action_counts)
        object.__setattr__(self, "action_counts", counts)
        if not counts or min(counts) < 1:
            raise ValueError("action_counts must be a non-empty list of positive integers")
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.rewards, dtype=float)
        num_joint = int(np.prod(counts))
        if P.ndim != 3 or P.shape[1] != num_joint or P.shape[0] != P.shape[2] or P.shape[0] < 1:
            raise ValueError(f"transition must have shape (S, {num_joint}, S), got {P.shape}")
        S = P.shape[0]
        if R.shape != (len(counts), S, num_joint):
            raise ValueError(
                f"rewards must have shape ({len(counts)}, {S}, {num_joint}), got {R.shape}"
            )
        if not 0.0 <= float(self.gamma) < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not float(self.r_max) > 0 or not np.isfinite(self.r_max):
            raise ValueError("r_max must be a positive finite real")
        if not 0 <= int(self.initial_state) < S:
            raise ValueError(f"initial_state {self.initial_state} out of range for S={S}")
        if np.any(P < 0) or np.any(~np.isfinite(P)):
            raise ValueError("transition probabilities must be finite and non-negative")
        sums = P.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > _ROW_SUM_TOL)
        if bad.size:
            s, a = bad[0]
            raise ValueError(
                f"transition row (s={s}, a={a}) sums to {sums[s, a]!r}, expected 1"
            )
        if np.any(R < 0) or np.any(R > self.r_max) or np.any(~np.isfinite(R)):
            raise ValueError(f"rewards must lie in [0, r_max={self.r_max}]")
        if self.zero_sum:
            if len(counts) != 2:
                raise ValueError("zero_sum games must have exactly two players")
            if np.max(np.abs(R[0] + R[1] - self.r_max)) > 1e-12:
                raise ValueError("zero_sum game must satisfy r_2 = r_max - r_1")
        object.__setattr__(self, "transition", frozen_array(P))
        object.__setattr__(self, "rewards", frozen_array(R))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "initial_state", int(self.initial_state))
        object.__setattr__(self, "zero_sum", bool(self.zero_sum))
        object.__setattr__(self, "_joint_shape", counts)

    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_joint_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    def joint_index(self, actions: Sequence[int]) -> int:
        """Flatten a per-player action profile into a joint action index."""
        actions = tuple(int(a) for a in actions)
        if len(actions) != self.num_players:
            raise ValueError(f"expected {self.num_players} actions, got {len(actions)}")
        for i, (a, n) in enumerate(zip(actions, self.action_counts)):
            if not 0 <= a < n:
                raise ValueError(f"action {a} out of range for player {i} (A_i={n})")
        return int(np.ravel_multi_index(actions, self.action_counts))

    def joint_action(self, index: int) -> tuple:
        return tuple(int(a) for a in np.unravel_index(int(index), self.action_counts))

    def __eq__(self, other):
        if not isinstance(other, MarkovGame):
            return NotImplemented
        return (
            self.action_counts == other.action_counts
            and self.gamma == other.gamma
            and self.initial_state == other.initial_state
            and self.r_max == other.r_max
            and self.zero_sum == other.zero_sum
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.rewards, other.rewards)
        )

    __hash__ = None


def build_matrix_game(payoff, role_convention: str = ROW_MAXIMIZER) -> MarkovGame:
    """Encode a two-player zero-sum matrix game as a single-state game with gamma=0.

    The maximizing player receives ``payoff`` and the other player ``1 - payoff``.
    With the default ``role_convention="row"`` the row player (player 0) maximizes.
    """
    M = np.asarray(payoff, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("payoff must be a non-empty 2-D table")
    if np.any(M < 0) or np.any(M > 1):
        raise ValueError("payoff entries must lie in [0, 1]")
    if role_convention == ROW_MAXIMIZER:
        r1 = M.ravel()
    elif role_convention == COLUMN_MAXIMIZER:
        r1 = 1.0 - M.ravel()
    else:
        raise ValueError(f"unknown role_convention {role_convention!r}")
    rows, cols = M.shape
    rewards = np.stack([r1, 1.0 - r1])[:, None, :]
    transition = np.ones((1, rows * cols, 1))
    return MarkovGame((rows, cols), transition, rewards, gamma=0.0, initial_state=0,
                      r_max=1.0, zero_sum=True)


# The 3x3 example: (a1, b1) is the pure equilibrium under the row-maximizer reading.
EXAMPLE_PAYOFF = ((0.5, 0.75, 0.75), (0.25, 0.0, 0.0), (0.25, 0.0, 0.0))


def example_matrix_game(role_convention: str = ROW_MAXIMIZER) -> MarkovGame:
    return build_matrix_game(EXAMPLE_PAYOFF, role_convention)


def build_random_game(seed, num_players, num_states, action_counts, gamma,
                      initial_state=0) -> MarkovGame:
    """Random game: Dirichlet(1) transition rows, uniform [0, 1] rewards, r_max=1."""
    from .data import make_rng

    if int(num_players) != len(action_counts):
        raise ValueError("len(action_counts) must equal num_players")
    if int(num_states) < 1:
        raise ValueError("num_states must be positive")
    rng = make_rng(seed)
    A = int(np.prod(action_counts))
    S = int(num_states)
    transition = rng.dirichlet(np.ones(S), size=(S, A))
    # renormalize so each row sums to 1 to machine precision
    transition /= transition.sum(axis=2, keepdims=True)
    rewards = rng.uniform(0.0, 1.0, size=(int(num_players), S, A))
    return MarkovGame(tuple(action_counts), transition, rewards, gamma, initial_state, 1.0)


def make_zero_sum(game: MarkovGame) -> MarkovGame:
    """Two-player zero-sum version of ``game``: keeps r_1, sets r_2 = r_max - r_1."""
    if game.num_players != 2:
        raise ValueError("zero-sum wrapper requires two players")
    rewards = np.stack([game.rewards[0], game.r_max - game.rewards[0]])
    return MarkovGame(game.action_counts, game.transition, rewards, game.gamma,
                      game.initial_state, game.r_max, zero_sum=True)


def game_to_dict(game: MarkovGame) -> dict:
    return {
        "format": "bcel-game/1",
        "m": game.num_players,
        "S": game.num_states,
        "action_counts": list(game.action_counts),
        "gamma": game.gamma,
        "s0": game.initial_state,
        "r_max": game.r_max,
        "zero_sum": game.zero_sum,
        "transition": game.transition.reshape(-1).tolist(),
        "rewards": game.rewards.reshape(-1).tolist(),
    }


def serialize_game(game: MarkovGame) -> str:
    """Canonical JSON record; floats use shortest round-trip repr."""
    return json.dumps(game_to_dict(game), sort_keys=True) + "\n"


def _require(record, key, kind, where):
    if key not in record:
        raise GameFormatError(f"missing field {key!r}", where)
    value = record[key]
    if kind is not None and not isinstance(value, kind):
        raise GameFormatError(f"field {key!r} has type {type(value).__name__}", where)
    return value


def game_from_dict(record: dict, where: str = "<record>") -> MarkovGame:
    if not isinstance(record, dict):
        raise GameFormatError("game record must be a JSON object", where)
    m = _require(record, "m", int, where)
    S = _require(record, "S", int, where)
    counts = _require(record, "action_counts", list, where)
    if len(counts) != m:
        raise GameFormatError(f"action_counts has {len(counts)} entries, m={m}", where + ":action_counts")
    A = int(np.prod(counts))
    transition = np.asarray(_require(record, "transition", list, where), dtype=float)
    rewards = np.asarray(_require(record, "rewards", list, where), dtype=float)
    if transition.size != S * A * S:
        raise GameFormatError(f"transition has {transition.size} entries, expected {S * A * S}",
                              where + ":transition")
    if rewards.size != m * S * A:
        raise GameFormatError(f"rewards has {rewards.size} entries, expected {m * S * A}",
                              where + ":rewards")
    try:
        return MarkovGame(
            tuple(counts),
            transition.reshape(S, A, S),
            rewards.reshape(m, S, A),
            gamma=_require(record, "gamma", (int, float), where),
            initial_state=_require(record, "s0", int, where),
            r_max=_require(record, "r_max", (int, float), where),
            zero_sum=bool(record.get("zero_sum", False)),
        )
    except ValueError as exc:
        raise GameFormatError(str(exc), where) from exc


def deserialize_game(text: str, source: str = "<string>") -> MarkovGame:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GameFormatError(exc.msg, f"{source}:{exc.lineno}:{exc.colno}") from exc
    return game_from_dict(record, source)


def save_game(game: MarkovGame, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_game(game))


def load_game(path) -> MarkovGame:
    with open(path) as fh:
        return deserialize_game(fh.read(), str(path))
