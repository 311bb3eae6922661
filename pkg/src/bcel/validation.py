"""Input validation helpers shared by the estimators and file readers."""
from __future__ import annotations

import numpy as np

PROB_TOL = 1e-12


class FormatError(ValueError):
    """Malformed on-disk record; ``location`` names the file and field or line."""

    def __init__(self, message, location="<record>"):
        super().__init__(f"{location}: {message}")
        self.location = location
        self.message = message


class GameFormatError(FormatError):
    pass


class PreconditionError(ValueError):
    """An operation was called outside its documented domain."""


class EmptyVersionSpaceError(RuntimeError):
    """A version space had no surviving candidate (threshold misconfigured)."""


def frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def check_distribution(table, shape=None, name="distribution", axis=None, tol=PROB_TOL):
    """Validate a probability table; sums are taken over ``axis`` (all entries if None)."""
    arr = np.asarray(table, dtype=float)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name} must be finite and non-negative")
    sums = arr.sum(axis=axis)
    if np.any(np.abs(sums - 1.0) > tol):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"{name} must sum to 1 (max deviation {worst:.3g})")
    return arr


def check_probability(delta, name="delta"):
    delta = float(delta)
    if not 0.0 < delta < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {delta}")
    return delta


def check_transitions(X, num_states, action_counts):
    """Split a transition array ``[s, a_1..a_m, r_1..r_m, s']`` into typed columns.

    Accepts an :class:`~bcel.data.OfflineDataset` or a 2-D array with
    ``2 + 2m`` columns. Returns ``(states, joint_actions, rewards, next_states)``
    where ``rewards`` has shape (n, m).
    """
    from .data import OfflineDataset

    if isinstance(X, OfflineDataset):
        return X.states, X.joint_actions, X.rewards, X.next_states
    arr = np.asarray(X, dtype=float)
    m = len(action_counts)
    if arr.ndim != 2 or arr.shape[1] != 2 + 2 * m:
        raise ValueError(f"transitions must have shape (n, {2 + 2 * m}), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError("at least one transition is required")
    ints = arr[:, [0, *range(1, m + 1), 1 + 2 * m]]
    if np.any(ints != np.round(ints)):
        raise ValueError("state and action columns must be integers")
    states = arr[:, 0].astype(int)
    actions = arr[:, 1:m + 1].astype(int)
    rewards = arr[:, m + 1:2 * m + 1]
    next_states = arr[:, -1].astype(int)
    if np.any(states < 0) or np.any(states >= num_states) or np.any(next_states < 0) \
            or np.any(next_states >= num_states):
        raise ValueError("state index out of range")
    if np.any(actions < 0) or np.any(actions >= np.asarray(action_counts)):
        raise ValueError("action index out of range")
    joint = np.ravel_multi_index(actions.T, tuple(action_counts))
    return states, joint, rewards, next_states
