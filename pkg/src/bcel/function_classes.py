"""Finite Q- and V-function classes and their approximation diagnostics."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import DataDistribution, make_rng
from .game import MarkovGame
from .oracle import (bellman_apply, evaluate_q, occupancy, state_bellman_apply, state_values)
from .policies import ExtendedClass, JointPolicy
from .validation import FormatError, frozen_array

Q_KIND, V_KIND = "Q", "V"
DEFAULT_CAP = 100_000
# squared Bellman norms at or below this multiple of v_max**2 count as exactly zero
ZERO_TOL = 1e-20


@dataclass(frozen=True, eq=False)
class FunctionClass:
    """Finite class of tables for one player.

    ``tables`` has shape (K, S, A) for kind "Q" and (K, S) for kind "V".
    """

    player: int
    kind: str
    tables: np.ndarray
    v_max: float

    def __post_init__(self):
        if self.kind not in (Q_KIND, V_KIND):
            raise ValueError("kind must be 'Q' or 'V'")
        t = np.asarray(self.tables, dtype=float)
        if t.ndim != (3 if self.kind == Q_KIND else 2) or t.shape[0] < 1:
            raise ValueError(f"{self.kind}-class tables have the wrong shape {t.shape}")
        slack = 1e-9 * max(1.0, self.v_max)
        if np.any(t < -slack) or np.any(t > self.v_max + slack):
            raise ValueError("candidate entries must lie in [0, v_max]")
        object.__setattr__(self, "tables", frozen_array(t))

    def __len__(self):
        return self.tables.shape[0]

    def extended(self, extra) -> "FunctionClass":
        extra = np.asarray(extra, dtype=float).reshape((-1,) + self.tables.shape[1:])
        return FunctionClass(self.player, self.kind, np.concatenate([self.tables, extra]), self.v_max)


def exact_tables(game: MarkovGame, player: int, policies, kind: str = Q_KIND) -> np.ndarray:
    tables = []
    for p in policies:
        q = evaluate_q(game, player, p)
        tables.append(q if kind == Q_KIND else state_values(q, p))
    return np.clip(np.array(tables), 0.0, game.v_max)


def build_tabular_grid_class(game: MarkovGame, player: int, kind: str = Q_KIND,
                             grid_step: float = None, *, mode: str = "grid",
                             extended: ExtendedClass = None, n_perturbations: int = 0,
                             perturbation_scale: float = 0.5, seed=None,
                             cap: int = DEFAULT_CAP) -> FunctionClass:
    """Finite tabular class for ``player``.

    ``mode="grid"`` enumerates every table with entries on ``{0, step, 2 step, ..., v_max}``.
    ``mode="exact"`` uses ``{Q_i^pi : pi in Pi_ext,i}`` (or the V tables), padded with
    ``n_perturbations`` copies in which one random cell of a random member is shifted by
    ``U[-scale, scale] * v_max`` and clipped to ``[0, v_max]``.
    """
    v_max = game.v_max
    cell_shape = (game.num_states, game.num_joint_actions) if kind == Q_KIND else (game.num_states,)
    if mode == "grid":
        if grid_step is None or grid_step <= 0:
            raise ValueError("grid_step must be positive")
        levels = np.arange(0.0, v_max + 1e-12 * v_max, grid_step)
        levels = np.unique(np.append(levels[levels <= v_max], v_max))
        cells = int(np.prod(cell_shape))
        size = float(len(levels)) ** cells
        if size > cap:
            raise ValueError(f"grid class would have {size:.3g} candidates (cap {cap})")
        idx = np.indices((len(levels),) * cells).reshape(cells, -1).T
        tables = levels[idx].reshape((-1,) + cell_shape)
    elif mode == "exact":
        if extended is None:
            raise ValueError("exact mode needs the extended policy class")
        base = exact_tables(game, player, extended.policies[player], kind)
        tables = base
        if n_perturbations:
            rng = make_rng(seed)
            flat = base.reshape(len(base), -1)
            pick = rng.integers(len(base), size=n_perturbations)
            cell = rng.integers(flat.shape[1], size=n_perturbations)
            shift = rng.uniform(-perturbation_scale, perturbation_scale, size=n_perturbations) * v_max
            extra = flat[pick].copy()
            extra[np.arange(n_perturbations), cell] += shift
            tables = np.concatenate([flat, np.clip(extra, 0.0, v_max)]).reshape((-1,) + cell_shape)
        if len(tables) > cap:
            raise ValueError(f"class has {len(tables)} candidates (cap {cap})")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return FunctionClass(player, kind, tables, v_max)


def mirrored_class(fc: FunctionClass, player: int) -> FunctionClass:
    """``{v_max - f : f in F}`` for the opposing player of a shifted zero-sum game."""
    return FunctionClass(player, fc.kind, fc.v_max - fc.tables, fc.v_max)


def bellman_residuals(game, fc: FunctionClass, policy: JointPolicy) -> np.ndarray:
    """``f - T^pi f`` for every candidate; (K, S, A) for Q classes, (K, S) for V classes."""
    if fc.kind == Q_KIND:
        return fc.tables - bellman_apply(game, fc.player, policy, fc.tables)
    return fc.tables - state_bellman_apply(game, fc.player, policy, fc.tables)


def _as_measure(fc, d):
    d = np.asarray(d.table if isinstance(d, DataDistribution) else d, dtype=float)
    if fc.kind == V_KIND and d.ndim == 2:
        d = d.sum(axis=1)
    return d


def squared_norms(residuals: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``||res_k||^2_{2,d}`` for each leading index k."""
    K = residuals.shape[0]
    return (residuals.reshape(K, -1) ** 2) @ d.reshape(-1)


def admissible_distributions(game, ext: ExtendedClass, player, dist: DataDistribution, kind=Q_KIND):
    """Occupancies of every ``pi' in Pi_ext,i`` plus ``d_D`` (state marginals for V classes)."""
    ds = [occupancy(game, p) for p in ext.policies[player]] + [dist.table]
    ds = np.array(ds)
    return ds.sum(axis=2) if kind == V_KIND else ds


def realizability_error(game, ext: ExtendedClass, classes, dist: DataDistribution) -> float:
    """``max_i max_{pi in Pi_ext,i} inf_f sup_{admissible d} ||f - T_i^pi f||^2_{2,d}``."""
    worst = 0.0
    for fc in classes:
        i = fc.player
        D = admissible_distributions(game, ext, i, dist, fc.kind)
        D = D.reshape(len(D), -1)
        for pi in ext.policies[i]:
            res = bellman_residuals(game, fc, pi).reshape(len(fc), -1) ** 2
            worst = max(worst, float((res @ D.T).max(axis=1).min()))
    return worst


def _pairwise_sq(A: np.ndarray, B: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``M[k', k] = sum w (A[k'] - B[k])^2``."""
    aa = (A ** 2) @ w
    bb = (B ** 2) @ w
    return np.maximum(aa[:, None] - 2.0 * (A * w) @ B.T + bb[None, :], 0.0)


def completeness_error(game, ext: ExtendedClass, classes, dist: DataDistribution) -> float:
    """``max_i max_{pi} sup_f inf_{f'} ||f' - T_i^pi f||^2_{2,d_D}``."""
    worst = 0.0
    for fc in classes:
        w = _as_measure(fc, dist).reshape(-1)
        F = fc.tables.reshape(len(fc), -1)
        for pi in ext.policies[fc.player]:
            TF = (F.reshape(fc.tables.shape) - bellman_residuals(game, fc, pi)).reshape(len(fc), -1)
            worst = max(worst, float(_pairwise_sq(F, TF, w).min(axis=0).max()))
    return worst


def coverage_coefficient(d, dist, fc: FunctionClass, game: MarkovGame, policy: JointPolicy) -> float:
    """``max_f ||f - T^pi f||^2_d / ||f - T^pi f||^2_{d_D}`` with ``0/0 = 1`` and ``x/0 = inf``.

    A candidate whose residual vanishes under both measures contributes a ratio of 1.
    """
    res = bellman_residuals(game, fc, policy)
    num = squared_norms(res, _as_measure(fc, d))
    den = squared_norms(res, _as_measure(fc, dist))
    zero = ZERO_TOL * fc.v_max ** 2
    best = 1.0 if np.any((num <= zero) & (den <= zero)) else 0.0
    for a, b in zip(num, den):
        if b <= zero:
            if a > zero:
                return float("inf")
            continue
        best = max(best, a / b)
    return float(best)


def density_ratio(d, dist) -> float:
    d = np.asarray(d.table if isinstance(d, DataDistribution) else d, dtype=float)
    base = np.asarray(dist.table if isinstance(dist, DataDistribution) else dist, dtype=float)
    if d.ndim != base.ndim:
        d = d.reshape(base.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(d > 0, d / base, 0.0)
    return float(np.max(r))


def serialize_function_class(fc: FunctionClass) -> str:
    return json.dumps({"format": "bcel-function-class/1", "player": fc.player, "kind": fc.kind,
                       "count": len(fc), "shape": list(fc.tables.shape[1:]), "v_max": fc.v_max,
                       "tables": fc.tables.reshape(-1).tolist()}, sort_keys=True) + "\n"


def deserialize_function_class(text: str, source="<string>") -> FunctionClass:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, f"{source}:{exc.lineno}:{exc.colno}") from exc
    try:
        tables = np.asarray(rec["tables"], dtype=float).reshape([rec["count"], *rec["shape"]])
        return FunctionClass(int(rec["player"]), rec["kind"], tables, float(rec["v_max"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(str(exc), source) from exc
