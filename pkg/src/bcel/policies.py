"""Joint policies, strategy modifications, response classes and extended classes."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .validation import FormatError, PreconditionError, check_distribution, frozen_array

NE, CE, CCE = "NE", "CE", "CCE"
EQUILIBRIA = (NE, CE, CCE)

DUPLICATE_TOL = 1e-12


def check_equilibrium(eq: str) -> str:
    eq = str(eq).upper()
    if eq not in EQUILIBRIA:
        raise ValueError(f"equilibrium must be one of {EQUILIBRIA}, got {eq!r}")
    return eq


def _outer(marginals):
    S = marginals[0].shape[0]
    out = np.ones((S, 1))
    for mg in marginals:
        out = (out[:, :, None] * mg[:, None, :]).reshape(S, -1)
    return out


@dataclass(frozen=True, eq=False)
class JointPolicy:
    """Stationary Markov joint policy ``pi(a | s)`` over flattened joint actions.

    Product policies additionally carry their per-player marginals.
    """

    table: np.ndarray
    action_counts: tuple
    marginals: Optional[tuple] = None

    def __post_init__(self):
        counts = tuple(int(a) for a in self.action_counts)
        object.__setattr__(self, "action_counts", counts)
        table = np.asarray(self.table, dtype=float)
        if table.ndim != 2 or table.shape[1] != int(np.prod(counts)):
            raise ValueError(f"policy table must have shape (S, {int(np.prod(counts))})")
        check_distribution(table, name="policy table", axis=1)
        object.__setattr__(self, "table", frozen_array(table))
        if self.marginals is not None:
            margs = tuple(frozen_array(mg) for mg in self.marginals)
            if len(margs) != len(counts):
                raise ValueError("one marginal per player is required")
            for mg, n in zip(margs, counts):
                if mg.shape != (table.shape[0], n):
                    raise ValueError("marginal shape mismatch")
            if np.max(np.abs(_outer(margs) - table)) > DUPLICATE_TOL:
                raise ValueError("product policy table differs from the outer product of marginals")
            object.__setattr__(self, "marginals", margs)

    @classmethod
    def product(cls, marginals: Sequence) -> "JointPolicy":
        margs = [check_distribution(np.atleast_2d(mg), name="marginal", axis=1) for mg in marginals]
        counts = tuple(mg.shape[1] for mg in margs)
        return cls(_outer(margs), counts, tuple(margs))

    @classmethod
    def deterministic(cls, actions_per_state: Sequence[Sequence[int]], action_counts) -> "JointPolicy":
        """Pure product policy; ``actions_per_state[s]`` is the action profile at state s."""
        acts = np.atleast_2d(np.asarray(actions_per_state, dtype=int))
        S = acts.shape[0]
        margs = []
        for i, n in enumerate(action_counts):
            mg = np.zeros((S, n))
            mg[np.arange(S), acts[:, i]] = 1.0
            margs.append(mg)
        return cls.product(margs)

    @property
    def num_states(self) -> int:
        return self.table.shape[0]

    @property
    def num_players(self) -> int:
        return len(self.action_counts)

    @property
    def is_product(self) -> bool:
        return self.marginals is not None

    def tensor(self) -> np.ndarray:
        """Table reshaped to ``(S, A_1, ..., A_m)``."""
        return self.table.reshape((self.num_states,) + self.action_counts)

    def same_as(self, other: "JointPolicy", tol: float = DUPLICATE_TOL) -> bool:
        return (self.table.shape == other.table.shape
                and float(np.max(np.abs(self.table - other.table))) <= tol)


def marginalize(policy: JointPolicy, players) -> np.ndarray:
    """Distribution over the joint actions of ``players`` (sorted), shape (S, prod A_j)."""
    players = sorted({int(p) for p in players})
    m = policy.num_players
    if any(not 0 <= p < m for p in players):
        raise ValueError("player index out of range")
    if policy.is_product:
        return _outer([policy.marginals[p] for p in players]) if players else np.ones((policy.num_states, 1))
    drop = tuple(1 + j for j in range(m) if j not in players)
    return policy.tensor().sum(axis=drop).reshape(policy.num_states, -1)


def _others(policy: JointPolicy, player: int) -> np.ndarray:
    rest = [j for j in range(policy.num_players) if j != player]
    return marginalize(policy, rest)


def combine(deviation: np.ndarray, others: np.ndarray, player: int, action_counts) -> np.ndarray:
    """Joint table of ``deviation`` (player's own marginal) times ``others`` (joint over -i)."""
    counts = tuple(action_counts)
    S = deviation.shape[0]
    rest_shape = tuple(n for j, n in enumerate(counts) if j != player)
    rest = others.reshape((S,) + rest_shape)
    rest = np.expand_dims(rest, axis=1 + player)
    own_shape = [S] + [1] * len(counts)
    own_shape[1 + player] = counts[player]
    return (deviation.reshape(own_shape) * rest).reshape(S, -1)


def replace_marginal(policy: JointPolicy, player: int, deviation: np.ndarray) -> JointPolicy:
    """The policy ``deviation x pi_{-i}`` with ``pi_{-i}`` the marginal of the others."""
    deviation = check_distribution(deviation, (policy.num_states, policy.action_counts[player]),
                                   name="deviation marginal", axis=1)
    if policy.is_product:
        margs = list(policy.marginals)
        margs[player] = deviation
        return JointPolicy.product(margs)
    table = combine(deviation, _others(policy, player), player, policy.action_counts)
    return JointPolicy(table, policy.action_counts)


@dataclass(frozen=True, eq=False)
class StrategyModification:
    """Deterministic map ``phi_i(s, a_i) -> a_i'`` for one player."""

    player: int
    mapping: np.ndarray

    def __post_init__(self):
        mp = np.asarray(self.mapping)
        if mp.ndim != 2 or not np.issubdtype(mp.dtype, np.integer):
            raise ValueError("mapping must be an integer table of shape (S, A_i)")
        if np.any(mp < 0) or np.any(mp >= mp.shape[1]):
            raise ValueError("modification outputs out of range")
        object.__setattr__(self, "mapping", frozen_array(mp, dtype=int))

    @classmethod
    def identity(cls, player, num_states, num_actions):
        return cls(player, np.tile(np.arange(num_actions), (num_states, 1)))

    @classmethod
    def constant(cls, player, num_states, num_actions, target):
        return cls(player, np.full((num_states, num_actions), int(target)))


def apply_modification(policy: JointPolicy, player: int, phi) -> JointPolicy:
    """Push-forward of ``policy`` when ``player`` relabels its sampled action through ``phi``."""
    mapping = phi.mapping if isinstance(phi, StrategyModification) else np.asarray(phi, dtype=int)
    counts = policy.action_counts
    S = policy.num_states
    if mapping.shape != (S, counts[player]):
        raise ValueError("modification shape does not match the policy")
    T = np.moveaxis(policy.tensor(), 1 + player, -1)
    out = np.zeros_like(T)
    for s in range(S):
        for a in range(counts[player]):
            out[s, ..., mapping[s, a]] += T[s, ..., a]
    table = np.moveaxis(out, -1, 1 + player).reshape(S, -1)
    if policy.is_product:
        own = np.zeros((S, counts[player]))
        for s in range(S):
            np.add.at(own[s], mapping[s], policy.marginals[player][s])
        margs = list(policy.marginals)
        margs[player] = own
        return JointPolicy(table, counts, tuple(margs))
    return JointPolicy(table, counts)


def _dedup(policies, tol=DUPLICATE_TOL):
    """Unique policies in first-seen order, plus the index map for every input."""
    unique, index = [], []
    stacked = None
    for p in policies:
        pos = -1
        if stacked is not None:
            diffs = np.max(np.abs(stacked - p.table[None]), axis=(1, 2))
            hits = np.flatnonzero(diffs <= tol)
            if hits.size:
                pos = int(hits[0])
        if pos < 0:
            unique.append(p)
            pos = len(unique) - 1
            row = p.table[None]
            stacked = row if stacked is None else np.concatenate([stacked, row])
        index.append(pos)
    return unique, index


class PolicyClass:
    """Finite class ``Pi`` of joint policies plus optional strategy modifications.

    Parameters
    ----------
    policies : sequence of JointPolicy
    modifications : sequence of sequences of StrategyModification, optional
        ``modifications[i]`` is ``Phi_i``; required for CE.
    """

    def __init__(self, policies, modifications=None):
        policies = list(policies)
        if not policies:
            raise ValueError("policy class must be non-empty")
        first = policies[0]
        for p in policies:
            if p.action_counts != first.action_counts or p.num_states != first.num_states:
                raise ValueError("all policies must share the same game shape")
        self.policies = tuple(policies)
        self.action_counts = first.action_counts
        self.num_states = first.num_states
        if modifications is not None:
            modifications = tuple(tuple(mods) for mods in modifications)
            if len(modifications) != len(self.action_counts):
                raise ValueError("one modification list per player is required")
            for i, mods in enumerate(modifications):
                for phi in mods:
                    if phi.mapping.shape != (self.num_states, self.action_counts[i]):
                        raise ValueError(f"modification for player {i} has wrong shape")
        self.modifications = modifications

    def __len__(self):
        return len(self.policies)

    def __getitem__(self, k):
        return self.policies[k]

    @property
    def num_players(self):
        return len(self.action_counts)

    def own_marginals(self, player: int) -> list:
        """``Pi_i``: distinct marginals of ``player`` over the class, first-seen order."""
        unique = []
        for p in self.policies:
            mg = marginalize(p, [player])
            if not any(np.max(np.abs(mg - u)) <= DUPLICATE_TOL for u in unique):
                unique.append(mg)
        return unique

    def product_indices(self) -> list:
        return [k for k, p in enumerate(self.policies) if p.is_product]

    @classmethod
    def pure_profiles(cls, action_counts, num_states=1) -> "PolicyClass":
        """All deterministic state-independent pure product profiles, row-major order."""
        profiles = np.ndindex(*action_counts)
        return cls([JointPolicy.deterministic([prof] * num_states, action_counts)
                    for prof in profiles])

    @classmethod
    def from_player_sets(cls, marginal_sets) -> "PolicyClass":
        """Cartesian product of per-player marginal lists (row-major over players)."""
        import itertools

        return cls([JointPolicy.product(combo) for combo in itertools.product(*marginal_sets)])


@dataclass(frozen=True)
class ResponseClass:
    """Deviation policies of ``player`` against ``base`` under equilibrium ``eq``."""

    player: int
    eq: str
    base: JointPolicy
    members: tuple


def response_class(policy: JointPolicy, player: int, eq: str, policy_class: PolicyClass,
                   own_marginals=None) -> ResponseClass:
    """``Pi_i^EQ(pi)``: NE/CCE swap in each marginal of ``Pi_i``; CE pushes forward via ``Phi_i``.

    Duplicates are kept so that member indices are reproducible.
    """
    eq = check_equilibrium(eq)
    if eq == NE and not policy.is_product:
        raise PreconditionError("NE response classes require a product policy")
    if eq in (NE, CCE):
        margs = own_marginals if own_marginals is not None else policy_class.own_marginals(player)
        members = tuple(replace_marginal(policy, player, mg) for mg in margs)
    else:
        if policy_class.modifications is None:
            raise PreconditionError("CE requires strategy modifications in the policy class")
        members = tuple(apply_modification(policy, player, phi)
                        for phi in policy_class.modifications[player])
    return ResponseClass(player, eq, policy, members)


class ExtendedClass:
    """Per-player extended classes ``Pi_ext,i`` for a policy class and equilibrium.

    Attributes
    ----------
    policies : list of list of JointPolicy
        ``policies[i]`` is ``Pi_ext,i`` with exact duplicates merged.
    base_index : list of list of int
        ``base_index[i][k]`` locates policy ``k`` of ``Pi`` inside ``Pi_ext,i``.
    response_index : list of list of list of int
        ``response_index[i][k]`` lists ``Pi_ext,i`` indices of the response class
        members of policy ``k`` (one entry per member, duplicates retained).
    union : list of JointPolicy
        ``Pi_ext``, the duplicate-free union over players.
    """

    def __init__(self, policy_class: PolicyClass, eq: str):
        self.eq = check_equilibrium(eq)
        self.policy_class = policy_class
        m = policy_class.num_players
        self.policies, self.base_index, self.response_index = [], [], []
        for i in range(m):
            own = policy_class.own_marginals(i) if self.eq in (NE, CCE) else None
            pool = list(policy_class.policies)
            spans = []
            for pi in policy_class.policies:
                if self.eq == NE and not pi.is_product:
                    # NE is only defined for product candidates
                    spans.append(None)
                    continue
                rc = response_class(pi, i, self.eq, policy_class, own_marginals=own)
                spans.append((len(pool), len(rc.members)))
                pool.extend(rc.members)
            unique, index = _dedup(pool)
            self.policies.append(unique)
            self.base_index.append(index[:len(policy_class)])
            self.response_index.append([
                None if span is None else index[span[0]:span[0] + span[1]] for span in spans
            ])
        union, _ = _dedup([p for per in self.policies for p in per])
        self.union = union

    @property
    def num_players(self):
        return len(self.policies)

    def size(self, player=None) -> int:
        return len(self.union) if player is None else len(self.policies[player])

    def response_members(self, player: int, k: int) -> list:
        return [self.policies[player][j] for j in self.response_index[player][k]]


def extended_class(policy_class: PolicyClass, eq: str) -> ExtendedClass:
    return ExtendedClass(policy_class, eq)


def _policy_record(p: JointPolicy) -> dict:
    rec = {"table": p.table.tolist()}
    if p.is_product:
        rec["marginals"] = [mg.tolist() for mg in p.marginals]
    return rec


def policy_class_to_dict(pc: PolicyClass) -> dict:
    return {
        "format": "bcel-policy-class/1",
        "S": pc.num_states,
        "action_counts": list(pc.action_counts),
        "policies": [_policy_record(p) for p in pc.policies],
        "modifications": None if pc.modifications is None else [
            [phi.mapping.tolist() for phi in mods] for mods in pc.modifications
        ],
    }


def serialize_policy_class(pc: PolicyClass) -> str:
    return json.dumps(policy_class_to_dict(pc), sort_keys=True) + "\n"


def deserialize_policy_class(text: str, source: str = "<string>") -> PolicyClass:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, f"{source}:{exc.lineno}:{exc.colno}") from exc
    try:
        counts = tuple(rec["action_counts"])
        policies = []
        for k, p in enumerate(rec["policies"]):
            if p.get("marginals") is not None:
                policies.append(JointPolicy(p["table"], counts, tuple(np.asarray(mg) for mg in p["marginals"])))
            else:
                policies.append(JointPolicy(p["table"], counts))
        mods = rec.get("modifications")
        if mods is not None:
            mods = [[StrategyModification(i, np.asarray(mp, dtype=int)) for mp in per]
                    for i, per in enumerate(mods)]
        return PolicyClass(policies, mods)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(str(exc), source) from exc


def save_policy_class(pc: PolicyClass, path) -> None:
    with open(path, "w") as fh:
        fh.write(serialize_policy_class(pc))


def load_policy_class(path) -> PolicyClass:
    with open(path) as fh:
        return deserialize_policy_class(fh.read(), str(path))
