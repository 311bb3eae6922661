"""Data distributions, offline datasets, and their sufficient statistics.

Randomness comes from numpy's counter-based Philox generator. A master seed is
expanded with :class:`numpy.random.SeedSequence`; independent trials use
``spawn_seeds(master, k)`` so that per-trial streams never overlap.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .game import MarkovGame
from .validation import FormatError, check_distribution, frozen_array

REWARD_NOISE = (None, "bernoulli")


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(master, count: int) -> list:
    """Disjoint child seed sequences for ``count`` independent streams."""
    root = master if isinstance(master, np.random.SeedSequence) else np.random.SeedSequence(master)
    return root.spawn(count)


class DataDistribution:
    """Distribution ``d_D`` over (state, joint action) with its factorization ``d_S x d_A``.

    ``behavior`` holds ``d_A(a|s)``; rows of states with ``d_S(s) = 0`` are NaN,
    marking the conditional as undefined there.
    """

    def __init__(self, table):
        table = check_distribution(np.atleast_2d(table), name="data distribution")
        self.table = frozen_array(table)
        state = table.sum(axis=1)
        behavior = np.full_like(table, np.nan)
        support = state > 0
        behavior[support] = table[support] / state[support, None]
        self.state = frozen_array(state)
        self.behavior = frozen_array(behavior)

    @property
    def shape(self):
        return self.table.shape

    def importance_weights(self, policy_table: np.ndarray) -> np.ndarray:
        """``pi(a|s) / d_A(a|s)``; ``inf`` where ``pi`` puts mass the behavior cannot explain."""
        pi = np.asarray(policy_table, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = pi / self.behavior
        w[pi == 0] = 0.0
        w[np.isnan(w)] = np.inf
        return w

    def weight_bound(self, policy_table) -> float:
        """``C_A(pi) = max_{s,a} pi(a|s) / d_A(a|s)`` over the full grid."""
        return float(np.max(self.importance_weights(policy_table)))

    def has_full_action_support(self) -> bool:
        return bool(np.all(self.behavior > 0))

    def __eq__(self, other):
        return isinstance(other, DataDistribution) and np.array_equal(self.table, other.table)

    __hash__ = None

    @classmethod
    def uniform(cls, num_states, num_joint_actions):
        return cls(np.full((num_states, num_joint_actions), 1.0 / (num_states * num_joint_actions)))

    @classmethod
    def point_mass(cls, num_states, num_joint_actions, state, action):
        t = np.zeros((num_states, num_joint_actions))
        t[state, action] = 1.0
        return cls(t)


def example_distribution(p1: float, p2: float) -> DataDistribution:
    """Data distribution of the 3x3 example: ``p1`` on (a1,b1), ``p2`` on its cross, ``p3`` elsewhere."""
    p3 = (1.0 - p1 - 4.0 * p2) / 4.0
    if p1 <= 0 or p2 <= 0 or p3 < 0:
        raise ValueError("need p1 > 0, p2 > 0 and p1 + 4 p2 <= 1")
    grid = np.array([[p1, p2, p2], [p2, p3, p3], [p2, p3, p3]])
    return DataDistribution(grid.reshape(1, 9))


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    """``n`` transition tuples ``(s, a, r_1..r_m, s')`` and the distribution that generated them."""

    states: np.ndarray
    joint_actions: np.ndarray
    rewards: np.ndarray          # (n, m)
    next_states: np.ndarray
    action_counts: tuple
    num_states: int
    distribution: Optional[DataDistribution] = None
    seed: Optional[int] = None

    def __post_init__(self):
        n = len(self.states)
        if n < 1:
            raise ValueError("a dataset needs at least one tuple")
        for name in ("states", "joint_actions", "next_states"):
            arr = np.asarray(getattr(self, name), dtype=int)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
            object.__setattr__(self, name, frozen_array(arr, dtype=int))
        r = np.asarray(self.rewards, dtype=float).reshape(n, -1)
        if r.shape[1] != len(self.action_counts):
            raise ValueError("one reward column per player is required")
        object.__setattr__(self, "rewards", frozen_array(r))
        object.__setattr__(self, "action_counts", tuple(int(a) for a in self.action_counts))
        A = int(np.prod(self.action_counts))
        if np.any(self.states >= self.num_states) or np.any(self.next_states >= self.num_states) \
                or np.any(self.states < 0) or np.any(self.next_states < 0):
            raise ValueError("state index out of range")
        if np.any(self.joint_actions < 0) or np.any(self.joint_actions >= A):
            raise ValueError("joint action index out of range")

    def __len__(self):
        return len(self.states)

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    @property
    def num_joint_actions(self) -> int:
        return int(np.prod(self.action_counts))

    def to_array(self) -> np.ndarray:
        """Rows ``[s, a_1..a_m, r_1..r_m, s']``."""
        actions = np.stack(np.unravel_index(self.joint_actions, self.action_counts), axis=1)
        return np.column_stack([self.states, actions, self.rewards, self.next_states]).astype(float)

    @cached_property
    def statistics(self) -> "DatasetStatistics":
        return DatasetStatistics.from_dataset(self)

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        return (self.action_counts == other.action_counts and self.num_states == other.num_states
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.joint_actions, other.joint_actions)
                and np.array_equal(self.rewards, other.rewards)
                and np.array_equal(self.next_states, other.next_states))

    __hash__ = None


@dataclass(frozen=True)
class DatasetStatistics:
    """Sufficient statistics for the squared losses.

    ``counts[s, a, s']`` are transition counts and ``reward_sums[i, s, a]`` the
    summed player-i rewards per cell.
    """

    n: int
    counts: np.ndarray
    reward_sums: np.ndarray

    @classmethod
    def from_dataset(cls, ds: OfflineDataset) -> "DatasetStatistics":
        S, A = ds.num_states, ds.num_joint_actions
        counts = np.zeros((S, A, S))
        np.add.at(counts, (ds.states, ds.joint_actions, ds.next_states), 1.0)
        sums = np.zeros((ds.num_players, S, A))
        for i in range(ds.num_players):
            np.add.at(sums[i], (ds.states, ds.joint_actions), ds.rewards[:, i])
        return cls(ds.n, frozen_array(counts), frozen_array(sums))

    @property
    def cell_counts(self) -> np.ndarray:
        return self.counts.sum(axis=2)


def _sample_rewards(game, states, actions, rng, reward_noise):
    mean = game.rewards[:, states, actions].T          # (n, m)
    if reward_noise is None:
        return mean
    if reward_noise != "bernoulli":
        raise ValueError(f"reward_noise must be one of {REWARD_NOISE}")
    if game.zero_sum:
        r1 = (rng.random(len(states)) < mean[:, 0] / game.r_max) * game.r_max
        return np.column_stack([r1, game.r_max - r1])
    return (rng.random(mean.shape) < mean / game.r_max) * game.r_max


def sample_dataset(game: MarkovGame, dist: DataDistribution, n: int, seed=None,
                   reward_noise: Optional[str] = None) -> OfflineDataset:
    """Draw ``n`` i.i.d. tuples: ``(s, a) ~ d_D``, rewards, ``s' ~ P(.|s, a)``.

    With ``reward_noise="bernoulli"`` each observed reward is ``r_max * Bernoulli(r / r_max)``
    (mean ``r``, range ``[0, r_max]``); zero-sum games keep ``r_2 = r_max - r_1`` per tuple.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    if dist.shape != (game.num_states, game.num_joint_actions):
        raise ValueError("distribution shape does not match the game")
    rng = make_rng(seed)
    flat = rng.choice(dist.table.size, size=n, p=dist.table.reshape(-1))
    states, actions = np.divmod(flat, game.num_joint_actions)
    cdf = np.cumsum(game.transition, axis=2)
    u = rng.random(n)
    nxt = (u[:, None] >= cdf[states, actions]).sum(axis=1)
    nxt = np.minimum(nxt, game.num_states - 1)
    rewards = _sample_rewards(game, states, actions, rng, reward_noise)
    seed_tag = seed if isinstance(seed, (int, np.integer)) else None
    return OfflineDataset(states, actions, rewards, nxt, game.action_counts, game.num_states,
                          dist, seed_tag)


def _apportion(total: int, probs: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding of ``total * probs`` to integers summing to ``total``."""
    raw = total * probs
    base = np.floor(raw + 1e-9).astype(int)
    short = total - base.sum()
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def exhaustive_dataset(game: MarkovGame, dist: DataDistribution, n: int) -> OfflineDataset:
    """Deterministic dataset whose empirical frequencies match ``d_D`` and ``P`` as closely as integers allow.

    Exact whenever ``n * d_D(s, a) * P(s'|s, a)`` are integers.
    """
    cells = _apportion(int(n), dist.table.reshape(-1))
    S, A = game.num_states, game.num_joint_actions
    states, actions, nxt = [], [], []
    for flat, count in enumerate(cells):
        if count == 0:
            continue
        s, a = divmod(flat, A)
        split = _apportion(int(count), game.transition[s, a])
        for s2, c in enumerate(split):
            states += [s] * int(c)
            actions += [a] * int(c)
            nxt += [s2] * int(c)
    states, actions = np.array(states), np.array(actions)
    rewards = game.rewards[:, states, actions].T
    return OfflineDataset(states, actions, rewards, np.array(nxt), game.action_counts, S, dist)


def empirical_distribution(ds: OfflineDataset) -> np.ndarray:
    """Empirical (state, joint action) frequencies, ``counts / n``."""
    counts = np.zeros((ds.num_states, ds.num_joint_actions))
    np.add.at(counts, (ds.states, ds.joint_actions), 1.0)
    return counts / ds.n


def serialize_dataset(ds: OfflineDataset) -> str:
    lines = [
        "# format=bcel-dataset/1",
        "# " + json.dumps({"n": ds.n, "seed": ds.seed, "S": ds.num_states,
                           "action_counts": list(ds.action_counts)}, sort_keys=True),
        "# distribution=" + json.dumps(None if ds.distribution is None
                                       else ds.distribution.table.reshape(-1).tolist()),
    ]
    actions = np.stack(np.unravel_index(ds.joint_actions, ds.action_counts), axis=1)
    for s, acts, r, s2 in zip(ds.states, actions, ds.rewards, ds.next_states):
        lines.append(" ".join([str(int(s)), *map(str, acts.tolist()), *map(repr, r.tolist()), str(int(s2))]))
    return "\n".join(lines) + "\n"


def deserialize_dataset(text: str, source: str = "<string>") -> OfflineDataset:
    lines = text.splitlines()
    if len(lines) < 3 or not lines[0].startswith("# format=bcel-dataset/"):
        raise FormatError("missing dataset header", f"{source}:1")
    try:
        meta = json.loads(lines[1][2:])
        dist_raw = json.loads(lines[2].split("=", 1)[1])
    except (json.JSONDecodeError, IndexError) as exc:
        raise FormatError(f"bad header: {exc}", f"{source}:2") from exc
    counts = tuple(meta["action_counts"])
    m, S = len(counts), int(meta["S"])
    dist = None
    if dist_raw is not None:
        dist = DataDistribution(np.asarray(dist_raw, dtype=float).reshape(S, -1))
    rows = []
    for lineno, line in enumerate(lines[3:], start=4):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 + 2 * m:
            raise FormatError(f"expected {2 + 2 * m} fields, got {len(parts)}", f"{source}:{lineno}")
        try:
            ints = [int(parts[0]), *(int(x) for x in parts[1:m + 1]), int(parts[-1])]
            rewards = [float(x) for x in parts[m + 1:2 * m + 1]]
        except ValueError as exc:
            raise FormatError(str(exc), f"{source}:{lineno}") from exc
        rows.append((ints, rewards))
    if len(rows) != int(meta["n"]):
        raise FormatError(f"header says n={meta['n']} but found {len(rows)} tuples", source)
    states = np.array([r[0][0] for r in rows])
    acts = np.array([r[0][1:m + 1] for r in rows])
    try:
        joint = np.ravel_multi_index(acts.T, counts)
        return OfflineDataset(states, joint, np.array([r[1] for r in rows]),
                              np.array([r[0][-1] for r in rows]), counts, S, dist, meta.get("seed"))
    except ValueError as exc:
        raise FormatError(str(exc), source) from exc


def save_dataset(ds: OfflineDataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_dataset(ds))


def load_dataset(path) -> OfflineDataset:
    with open(path) as fh:
        return deserialize_dataset(fh.read(), str(path))
