"""Seeded Monte-Carlo experiments producing deterministic CSV output.

Every random draw derives from the master seed through
``SeedSequence(seed, spawn_key=(stream, ...))`` so streams never overlap:
stream 0 builds the instance, 1 draws trial datasets, 2 draws calibration
pilots and 3 draws per-trial instances when games are resampled.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import io
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diagnostics as dg
from .data import DataDistribution, example_distribution, make_rng, sample_dataset
from .function_classes import (Q_KIND, V_KIND, build_tabular_grid_class, exact_tables,
                               mirrored_class, serialize_function_class)
from .game import build_random_game, example_matrix_game, load_game, make_zero_sum, serialize_game
from .oracle import ExactValues
from .policies import (CE, NE, ExtendedClass, JointPolicy, PolicyClass, StrategyModification,
                       check_equilibrium, load_policy_class, serialize_policy_class)
from .qtype import BCEL, bellman_error_of, distinct_count
from .validation import EmptyVersionSpaceError, PreconditionError, check_probability
from .vtype import VTypeBCEL, importance_weights, weight_bound, weighted_loss_matrix
from . import zerosum as zs

CSV_VERSION = "bcel-results/1"
AUDIT_VERSION = "bcel-audit/1"
VARIANTS = ("q", "v", "zerosum")
THRESHOLD_MODES = ("theoretical", "calibrated")
INSTANCE, TRIAL, PILOT, RESAMPLE = 0, 1, 2, 3


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment's output."""

    game: str = "builtin:matrix-example"       # builtin:matrix-example | random | <path>
    num_players: int = 2
    num_states: int = 2
    action_counts: tuple = (2, 2)
    gamma: float = 0.5
    zero_sum: bool = False
    resample_game: bool = False
    distribution: str = "example"              # example | uniform | random
    p1: float = 0.6
    p2: float = 0.01
    policy_class: str = "pure"                 # pure | random | <path>
    marginal_counts: tuple = (3, 4)
    class_mode: str = "exact"
    grid_step: Optional[float] = None
    n_perturbations: int = 270
    perturbation_scale: float = 0.5
    equilibrium: str = NE
    variant: str = "q"
    n_grid: tuple = (100, 1000)
    trials: int = 10
    delta: float = 0.1
    threshold_mode: str = "calibrated"
    threshold_constants: tuple = (80.0, 30.0)
    pilot_trials: int = 50
    reward_noise: Optional[str] = "bernoulli"
    epsilon_f: float = 0.0
    width_constant: float = 1.0
    seed: int = 0
    out: str = "results"

    def __post_init__(self):
        self.action_counts = tuple(int(a) for a in self.action_counts)
        self.marginal_counts = tuple(int(a) for a in self.marginal_counts)
        self.n_grid = tuple(int(n) for n in self.n_grid)
        self.threshold_constants = tuple(float(c) for c in self.threshold_constants)
        self.equilibrium = check_equilibrium(self.equilibrium)
        if not self.n_grid or any(n < 1 for n in self.n_grid) or list(self.n_grid) != sorted(set(self.n_grid)):
            raise ValueError("n_grid must be strictly ascending positive integers")
        if int(self.trials) < 1:
            raise ValueError("trials must be at least 1")
        check_probability(self.delta)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.variant == "zerosum" and self.equilibrium != NE:
            raise ValueError("the zero-sum variant uses NE")

    @classmethod
    def from_dict(cls, record: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(record) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**record)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        """Hash of every field that affects results (the output directory excluded)."""
        record = self.to_dict()
        record.pop("out")
        return sha256(json.dumps(record, sort_keys=True))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _seq(config, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(config.seed), spawn_key=tuple(int(k) for k in key))


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class Instance:
    """Game, classes and exact quantities shared by the trials of one experiment."""

    game: object
    policy_class: PolicyClass
    marginal_sets: list
    ext: ExtendedClass
    dist: DataDistribution
    classes: list              # per-player classes used by the configured variant
    exact: ExactValues
    star: int                  # lowest-index minimum-true-gap eligible policy
    eligible: list

    @functools.cached_property
    def digests(self) -> dict:
        return {"game": sha256(serialize_game(self.game)),
                "policy_class": sha256(serialize_policy_class(self.policy_class)),
                "classes": sha256("".join(serialize_function_class(fc) for fc in self.classes))}


def _random_marginals(rng, num_states, num_actions, count):
    sets = []
    for j in range(count):
        if j < 2:
            acts = rng.integers(num_actions, size=num_states)
            mg = np.zeros((num_states, num_actions))
            mg[np.arange(num_states), acts] = 1.0
        else:
            mg = rng.dirichlet(np.ones(num_actions), size=num_states)
        sets.append(mg)
    return sets


def _constant_modifications(policy_class_counts, num_states):
    return [[StrategyModification.identity(i, num_states, a)]
            + [StrategyModification.constant(i, num_states, a, b) for b in range(a)]
            for i, a in enumerate(policy_class_counts)]


def build_instance(config: ExperimentConfig, trial: int = 0) -> Instance:
    seq = _seq(config, RESAMPLE, trial) if config.resample_game else _seq(config, INSTANCE)
    rng = make_rng(seq)
    if config.game == "builtin:matrix-example":
        game = example_matrix_game()
    elif config.game == "random":
        game = build_random_game(rng, config.num_players, config.num_states, config.action_counts,
                                 config.gamma)
    else:
        game = load_game(config.game)
    if config.zero_sum or config.variant == "zerosum":
        if not game.zero_sum:
            game = make_zero_sum(game)
    S, A = game.num_states, game.num_joint_actions
    if config.distribution == "example":
        dist = example_distribution(config.p1, config.p2)
    elif config.distribution == "uniform":
        dist = DataDistribution.uniform(S, A)
    elif config.distribution == "random":
        raw = rng.dirichlet(np.ones(S * A)).reshape(S, A)
        dist = DataDistribution(0.5 * raw + 0.5 / (S * A))
    else:
        raise ValueError(f"unknown distribution {config.distribution!r}")
    if dist.shape != (S, A):
        raise ValueError("distribution does not match the game")

    if config.policy_class == "pure":
        marginal_sets = [[np.eye(a)[[b] * S] for b in range(a)] for a in game.action_counts]
    elif config.policy_class == "random":
        if len(config.marginal_counts) != game.num_players:
            raise ValueError("marginal_counts needs one entry per player")
        marginal_sets = [_random_marginals(rng, S, a, c)
                         for a, c in zip(game.action_counts, config.marginal_counts)]
    else:
        marginal_sets = None
    if marginal_sets is not None:
        pc = PolicyClass.from_player_sets(marginal_sets)
        if config.equilibrium == CE:
            pc = PolicyClass(pc.policies, _constant_modifications(game.action_counts, S))
    else:
        pc = load_policy_class(config.policy_class)
        marginal_sets = [pc.own_marginals(i) for i in range(pc.num_players)]
    ext = ExtendedClass(pc, config.equilibrium)

    kind = V_KIND if config.variant == "v" else Q_KIND
    classes = []
    for i in range(game.num_players):
        if config.variant == "zerosum" and i == 1:
            classes.append(mirrored_class(classes[0], 1))
            continue
        classes.append(build_tabular_grid_class(
            game, i, kind, config.grid_step, mode=config.class_mode, extended=ext,
            n_perturbations=config.n_perturbations, perturbation_scale=config.perturbation_scale,
            seed=np.random.SeedSequence(int(config.seed), spawn_key=(INSTANCE, 100 + i, trial))))
    exact = ExactValues(game, ext)
    eligible = pc.product_indices() if config.equilibrium == NE else list(range(len(pc)))
    gaps = [exact.gap(k) for k in eligible]
    star = eligible[int(np.argmin(gaps))]
    return Instance(game, pc, marginal_sets, ext, dist, classes, exact, star, eligible)


@functools.lru_cache(maxsize=8)
def _cached_instance(config_json: str, trial: int) -> Instance:
    return build_instance(ExperimentConfig.from_dict(json.loads(config_json)), trial)


def instance_for(config: ExperimentConfig, trial: int) -> Instance:
    return _cached_instance(config.to_json(), trial if config.resample_game else 0)


def pilot_statistic(config: ExperimentConfig, inst: Instance, dataset) -> float:
    """Largest empirical Bellman error of the true value functions (per unit weight for V)."""
    worst = 0.0
    stats = dataset.statistics
    g = inst.game.gamma
    for i, fc in enumerate(inst.classes):
        for pi, table in zip(inst.ext.policies[i], exact_tables(inst.game, i, inst.ext.policies[i], fc.kind)):
            if fc.kind == Q_KIND:
                worst = max(worst, bellman_error_of(stats, i, table, fc, pi, g))
                continue
            c_a = weight_bound(inst.dist, pi)
            if not math.isfinite(c_a):
                continue
            w = importance_weights(inst.dist, pi)
            own = weighted_loss_matrix(stats, i, table[None], table[None], w, g)[0, 0]
            best = weighted_loss_matrix(stats, i, fc.tables, table[None], w, g)[:, 0].min()
            worst = max(worst, (own - best) / c_a)
    return float(worst)


def calibrated_threshold(config: ExperimentConfig, inst: Instance, n_index: int, trial: int = 0) -> float:
    """``1 - delta`` quantile of the pilot statistic over independent pilot datasets."""
    n = config.n_grid[n_index]
    tag = trial if config.resample_game else 0
    values = [pilot_statistic(config, inst, sample_dataset(
        inst.game, inst.dist, n, seed=_seq(config, PILOT, tag, p, n_index),
        reward_noise=config.reward_noise)) for p in range(config.pilot_trials)]
    return float(np.quantile(values, 1.0 - config.delta, method="higher"))


@functools.lru_cache(maxsize=64)
def _cached_threshold(config_json: str, n_index: int, trial: int) -> float:
    config = ExperimentConfig.from_dict(json.loads(config_json))
    return calibrated_threshold(config, instance_for(config, trial), n_index, trial)


def threshold_for(config, n_index, trial=0):
    if config.threshold_mode == "theoretical":
        return "theoretical"
    return _cached_threshold(config.to_json(), n_index, trial if config.resample_game else 0)


@dataclass
class TrialOutcome:
    """Result of one (trial, n) run with its audit quantities."""

    trial: int
    n: int
    variant: str
    selected: int
    selected_gap: float
    sandwich: bool
    estimated: np.ndarray
    true_gaps: np.ndarray
    threshold: float
    eligible: list
    upper_violations: int = 0
    bound_ok: bool = True
    bound_slack: float = float("nan")
    adaptive_star: float = float("nan")
    unilateral_star: float = float("nan")
    width_required_constant: float = float("nan")
    width_bound_ok: bool = True
    kappa: float = float("nan")
    extra: dict = field(default_factory=dict)
    breakdown: object = None
    error: str = ""


def _fit(config, inst, dataset, threshold):
    params = dict(gamma=inst.game.gamma, initial_state=inst.game.initial_state, r_max=inst.game.r_max,
                  equilibrium=config.equilibrium, delta=config.delta, threshold=threshold,
                  threshold_constants=config.threshold_constants, epsilon_f=config.epsilon_f)
    if config.variant == "v":
        return VTypeBCEL(inst.policy_class, inst.classes, behavior=inst.dist, **params).fit(dataset)
    return BCEL(inst.policy_class, inst.classes, **params).fit(dataset)


def _width_audit(config, inst, est, dataset):
    """Worst required constant and pass flag of the width bound across all version spaces."""
    n_f = distinct_count(inst.classes)
    n_p = inst.ext.size()
    required, ok = 0.0, True
    for i, row in enumerate(est.version_spaces_):
        fc = inst.classes[i]
        for vs in row:
            if vs is None:
                continue
            if fc.kind == Q_KIND:
                unit = dg.approximation_unit(fc.v_max, dataset.n, n_f, n_p, config.delta,
                                             config.epsilon_f)
                wb = dg.width_bound_q(inst.game, vs, fc, inst.dist, unit, config.width_constant)
            else:
                unit = dg.approximation_unit(fc.v_max, dataset.n, n_f, n_p, config.delta,
                                             config.epsilon_f, weight=weight_bound(inst.dist, vs.policy))
                wb = dg.width_bound_v(inst.game, vs, fc, inst.dist, unit, config.width_constant)
            required = max(required, wb.required_constant)
            ok = ok and wb.holds()
    return required, ok


@functools.lru_cache(maxsize=8)
def _unilateral(config_json: str, trial: int) -> float:
    config = ExperimentConfig.from_dict(json.loads(config_json))
    inst = instance_for(config, trial)
    return dg.unilateral_coefficient(inst.game, inst.policy_class, inst.classes, inst.dist,
                                     inst.policy_class[inst.star], config.equilibrium)


def run_trial(config: ExperimentConfig, trial: int, n_index: int, audit: bool = True) -> TrialOutcome:
    """Draw the trial's dataset, fit the configured variant and evaluate every audit quantity."""
    inst = instance_for(config, trial)
    n = config.n_grid[n_index]
    dataset = sample_dataset(inst.game, inst.dist, n, seed=_seq(config, TRIAL, trial, n_index),
                             reward_noise=config.reward_noise)
    threshold = threshold_for(config, n_index, trial)
    if config.variant == "zerosum":
        return _zerosum_trial(config, inst, dataset, threshold, trial, n)
    est = _fit(config, inst, dataset, threshold)
    report = est.report_
    K = len(inst.policy_class)
    true_gaps = np.full(K, np.nan)
    for k in report.eligible:
        true_gaps[k] = inst.exact.gap(k)
    sandwich = dg.sandwich_holds(report, inst.exact)
    out = TrialOutcome(trial, n, config.variant, report.selected, float(true_gaps[report.selected]),
                       sandwich, report.estimated_gaps, true_gaps,
                       float(np.max(est.threshold_[0])) if config.variant == "v" else float(est.threshold_),
                       list(report.eligible))
    out.upper_violations = len(dg.upper_bound_violations(report, inst.exact))
    bd = dg.bound_breakdown(report, inst.ext, inst.exact, config.epsilon_f)
    out.breakdown = bd
    slack = min(bd.rhs(k) - bd.selected_gap for k in report.eligible)
    out.bound_slack = float(slack)
    out.bound_ok = bd.audit()
    if inst.star in report.eligible:
        out.adaptive_star = bd.adaptive_term(inst.star)
        out.unilateral_star = bd.unilateral_term(inst.star)
    if audit:
        out.width_required_constant, out.width_bound_ok = _width_audit(config, inst, est, dataset)
        coef = _unilateral(config.to_json(), trial if config.resample_game else 0)
        out.extra["unilateral_coefficient"] = coef
        if math.isfinite(coef):
            out.kappa = dg.rate_constant(out.selected_gap, coef, n, distinct_count(inst.classes),
                                         inst.ext.size(), config.delta, inst.game.v_max,
                                         inst.game.gamma)
    return out


def _zerosum_trial(config, inst, dataset, threshold, trial, n):
    max_m, min_m = inst.marginal_sets
    table, est = zs.build_interval_table(
        inst.game, max_m, min_m, inst.classes[0], dataset, min_class=inst.classes[1],
        delta=config.delta, threshold=threshold, threshold_constants=config.threshold_constants,
        epsilon_f=config.epsilon_f)
    M, N = table.shape
    mu, nu = zs.select_independent(table)
    J = zs.objective_matrix(table)
    V = table.exact
    dual = V.max(axis=0)[None, :] - V.min(axis=1)[:, None]
    sandwich = table.sandwich(dg.SANDWICH_TOL * inst.game.v_max)
    bound = zs.selection_bound(table)
    out = TrialOutcome(trial, n, "zerosum", mu * N + nu, float(dual[mu, nu]), sandwich,
                       J.reshape(-1), dual.reshape(-1), float(est.threshold_),
                       list(range(M * N)))
    out.upper_violations = int(np.sum(dual > J + 1e-9))
    out.bound_ok = bound.holds()
    out.bound_slack = bound.rhs - bound.selected_gap
    out.extra.update(mu=mu, nu=nu, mirror=table.mirror_consistent(),
                     separable=zs.separable_minimum(table) == float(J.min()), table=table,
                     bound=bound)
    return out


def _guarded(config_json: str, trial: int, n_index: int, audit: bool) -> TrialOutcome:
    config = ExperimentConfig.from_dict(json.loads(config_json))
    try:
        return run_trial(config, trial, n_index, audit)
    except (EmptyVersionSpaceError, PreconditionError, ValueError, np.linalg.LinAlgError) as exc:
        return TrialOutcome(trial, config.n_grid[n_index], config.variant, -1, float("nan"), False,
                            np.array([]), np.array([]), float("nan"), [], error=f"{type(exc).__name__}: {exc}")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("BCEL_WORKERS", "1")))
    except ValueError:
        return 1


def sweep(config: ExperimentConfig, audit: bool = True) -> list:
    """All (trial, n) outcomes in trial-major, n-minor order, regardless of worker count."""
    jobs = [(t, j) for t in range(config.trials) for j in range(len(config.n_grid))]
    fn = functools.partial(_sweep_job, config.to_json(), audit)
    workers = worker_count()
    if workers == 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _sweep_job(config_json, audit, job):
    t, j = job
    return _guarded(config_json, t, j, audit)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else repr(float(x))
    return str(x)


RESULT_COLUMNS = ["kind", "trial", "n", "policy", "eligible", "selected", "estimated_gap", "true_gap",
                  "adaptive_term", "unilateral_term", "bound_rhs", "sandwich", "threshold",
                  "sandwich_frequency", "median_selected_gap", "failures", "message"]
AUDIT_COLUMNS = ["kind", "trial", "n", "sandwich", "upper_bound_violations", "bound_pass",
                 "bound_slack", "width_bound_pass", "width_required_constant", "kappa",
                 "trials", "sandwich_failure_fraction", "audit_failure_fraction",
                 "binomial_p_value", "kappa_cv", "message"]


def _header(config: ExperimentConfig, version: str) -> str:
    inst = instance_for(config, 0)
    d = inst.digests
    return (f"# format={version} variant={config.variant} eq={config.equilibrium} "
            f"seed={config.seed} config_sha256={config.digest()} "
            f"game_sha256={d['game']} policy_class_sha256={d['policy_class']} "
            f"function_classes_sha256={d['classes']} resample_game={_fmt(config.resample_game)}\n")


def _write(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])
    return buf.getvalue()


def result_rows(config: ExperimentConfig, outcomes) -> list:
    rows = []
    for o in outcomes:
        if o.error:
            rows.append(dict(kind="failure", trial=o.trial, n=o.n, message=o.error))
            continue
        for k in range(len(o.estimated)):
            eligible = k in o.eligible
            row = dict(kind="policy", trial=o.trial, n=o.n, policy=k, eligible=eligible,
                       selected=(k == o.selected), estimated_gap=float(o.estimated[k]),
                       true_gap=float(o.true_gaps[k]), sandwich=o.sandwich, threshold=o.threshold)
            if o.breakdown is not None and eligible:
                row.update(adaptive_term=o.breakdown.adaptive_term(k),
                           unilateral_term=o.breakdown.unilateral_term(k),
                           bound_rhs=o.breakdown.rhs(k))
            rows.append(row)
    for n in config.n_grid:
        done = [o for o in outcomes if o.n == n and not o.error]
        failed = sum(1 for o in outcomes if o.n == n and o.error)
        rows.append(dict(
            kind="summary", n=n, failures=failed,
            sandwich_frequency=float(np.mean([o.sandwich for o in done])) if done else float("nan"),
            median_selected_gap=float(np.median([o.selected_gap for o in done])) if done else float("nan")))
    return rows


def results_csv(config: ExperimentConfig, outcomes=None) -> str:
    outcomes = sweep(config) if outcomes is None else outcomes
    return _header(config, CSV_VERSION) + _write(RESULT_COLUMNS, result_rows(config, outcomes))


def binomial_p_value(failures: int, trials: int, rate: float) -> float:
    """One-sided ``P(X >= failures)`` for ``X ~ Binomial(trials, rate)``."""
    from scipy.stats import binom
    if trials == 0:
        return 1.0
    return float(binom.sf(failures - 1, trials, rate))


@dataclass
class AuditSummary:
    trials: int
    sandwich_failures: int
    audit_failures: int
    p_value: float
    kappa_cv: float
    delta: float

    @property
    def sandwich_failure_fraction(self) -> float:
        return self.sandwich_failures / self.trials if self.trials else float("nan")

    @property
    def passed(self) -> bool:
        """No inequality failure on a sandwich-event trial, and sandwich failures consistent with delta."""
        return self.audit_failures == 0 and self.p_value >= 0.05


def audit_summary(config: ExperimentConfig, outcomes) -> AuditSummary:
    done = [o for o in outcomes if not o.error]
    sw_fail = sum(1 for o in done if not o.sandwich)
    bad = sum(1 for o in done if o.sandwich and (o.upper_violations or not o.bound_ok))
    bad += sum(1 for o in outcomes if o.error)
    kappas = [o.kappa for o in done if o.sandwich and math.isfinite(o.kappa) and o.kappa > 0]
    cv = (statistics.pstdev(kappas) / statistics.mean(kappas)) if len(kappas) > 1 else float("nan")
    return AuditSummary(len(outcomes), sw_fail, bad, binomial_p_value(sw_fail, len(done), config.delta),
                        cv, config.delta)


def audit_csv(config: ExperimentConfig, outcomes=None):
    outcomes = sweep(config) if outcomes is None else outcomes
    rows = []
    for o in outcomes:
        if o.error:
            rows.append(dict(kind="failure", trial=o.trial, n=o.n, message=o.error))
            continue
        rows.append(dict(kind="audit", trial=o.trial, n=o.n, sandwich=o.sandwich,
                         upper_bound_violations=o.upper_violations, bound_pass=o.bound_ok,
                         bound_slack=o.bound_slack, width_bound_pass=o.width_bound_ok,
                         width_required_constant=o.width_required_constant, kappa=o.kappa))
    summary = audit_summary(config, outcomes)
    rows.append(dict(kind="summary", trials=summary.trials,
                     sandwich_failure_fraction=summary.sandwich_failure_fraction,
                     audit_failure_fraction=summary.audit_failures / max(1, summary.trials),
                     binomial_p_value=summary.p_value, kappa_cv=summary.kappa_cv,
                     message="pass" if summary.passed else "fail"))
    return _header(config, AUDIT_VERSION) + _write(AUDIT_COLUMNS, rows), summary
