"""Zero-order policy gradient and SGD with a max-oracle over the dual variable.

Each ZOPG sample perturbs the gain along a random unit direction ``U`` that
shares the gain's sparsity pattern, picks the worst-case multiplier for the
perturbed gain and returns ``(n_K / r) * L(K + rU, lam) * U``. SGDmax averages
``M`` such samples and takes a descent step.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .lfc_model import DiscreteModel
from .risk_lqr import (
    CostSpec,
    GainEvaluation,
    NoiseStats,
    closed_loop_radius,
    lyapunov_evaluate,
    max_oracle,
    mc_evaluate_many,
)
from .topology import StructurePattern, project_onto_pattern

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StructuredGain:
    """Static output-feedback gain whose masked-out entries are exactly zero."""

    values: np.ndarray
    pattern: StructurePattern

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.pattern.shape:
            raise ValueError(f"gain shape {values.shape} does not match pattern {self.pattern.shape}")
        if np.any(values[~self.pattern.mask] != 0.0):
            raise ValueError("gain has nonzero entries outside its sparsity pattern")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, pattern: StructurePattern) -> StructuredGain:
        return cls(np.zeros(pattern.shape), pattern)

    @classmethod
    def projected(cls, values, pattern: StructurePattern) -> StructuredGain:
        return cls(project_onto_pattern(values, pattern), pattern)

    def to_json(self) -> dict:
        m, p = self.values.shape
        return {
            "rows": m,
            "cols": p,
            "mask": self.pattern.mask.astype(int).tolist(),
            "values": self.values.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> StructuredGain:
        pattern = StructurePattern(np.array(obj["mask"], dtype=bool))
        values = np.array(obj["values"], dtype=float)
        if values.shape != (obj["rows"], obj["cols"]):
            raise ValueError("gain JSON 'rows'/'cols' disagree with 'values'")
        return cls(values, pattern)


def sample_structured_direction(pattern: StructurePattern, rng) -> np.ndarray:
    """Uniform direction on the unit Frobenius sphere of the pattern subspace."""
    rng = np.random.default_rng(rng)
    U = np.zeros(pattern.shape)
    U[pattern.mask] = rng.standard_normal(pattern.n_nonzero)
    return U / np.linalg.norm(U)


# -- evaluators ------------------------------------------------------------------


class LyapunovEvaluator:
    """Exact stationary evaluation; seeds are accepted and ignored."""

    def __init__(self, model: DiscreteModel, spec: CostSpec, stats: NoiseStats):
        self.model, self.spec, self.stats = model, spec, stats

    def evaluate(self, Ks, seeds=None) -> list[GainEvaluation]:
        out = []
        for K in Ks:
            try:
                out.append(lyapunov_evaluate(self.model, K, self.spec, self.stats))
            except ValueError:
                rho = closed_loop_radius(self.model, K, self.stats)
                out.append(GainEvaluation(math.inf, math.inf, self.stats.delta_bar, False, rho))
        return out


class MonteCarloEvaluator:
    """Rollout-based evaluation, one seed stream per gain."""

    def __init__(self, model, spec, stats, disturbance, horizon=20_000, burn_in=200, n_rollouts=1):
        self.model, self.spec, self.stats = model, spec, stats
        self.disturbance = disturbance
        self.horizon, self.burn_in, self.n_rollouts = horizon, burn_in, n_rollouts

    def evaluate(self, Ks, seeds) -> list[GainEvaluation]:
        return mc_evaluate_many(
            self.model, Ks, self.spec, self.stats, self.horizon, self.burn_in, self.disturbance, seeds, self.n_rollouts
        )


# -- ZOPG ------------------------------------------------------------------------


class ZOPGEstimate(NamedTuple):
    gradient: np.ndarray
    lagrangian: float
    lam: float
    stable: bool


def zopg_from_evaluation(
    evaluation: GainEvaluation, U: np.ndarray, r: float, n_nonzero: int, spec: CostSpec, stats: NoiseStats
) -> ZOPGEstimate:
    if not evaluation.finite:
        return ZOPGEstimate(np.full_like(U, math.inf), math.inf, math.nan, False)
    lam = max_oracle(evaluation, stats, spec)
    value = evaluation.lagrangian_at(lam)
    return ZOPGEstimate((n_nonzero / r) * value * U, value, lam, True)


def zopg(evaluator, K: StructuredGain, U: np.ndarray, r: float, seed=None) -> ZOPGEstimate:
    """One zero-order gradient sample of the max-oracle Lagrangian at ``K`` along ``U``."""
    if r <= 0:
        raise ValueError("smoothing radius must be > 0")
    perturbed = K.values + r * U
    (evaluation,) = evaluator.evaluate([perturbed], [seed])
    return zopg_from_evaluation(evaluation, U, r, K.pattern.n_nonzero, evaluator.spec, evaluator.stats)


# -- training loop -------------------------------------------------------------


@dataclass(frozen=True)
class Backtrack:
    enabled: bool = True
    shrink: float = 0.5
    max_tries: int = 10


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 1e-4
    r: float = 0.1
    M: int = 100
    J: int = 500
    epsilon: float = 1e-3
    horizon: int = 20_000
    burn_in: int = 200
    n_rollouts: int = 1
    master_seed: int = 0
    evaluator: str = "mc"
    log_evaluator: str | None = None
    backtrack: Backtrack = field(default_factory=Backtrack)
    common_random_numbers: bool = False
    antithetic: bool = False
    snapshot_every: int = 10
    record_wall_time: bool = False

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid training config: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.eta >= 0:
            out.append("eta must be >= 0")
        if not self.r > 0:
            out.append("r must be > 0")
        if self.M < 1:
            out.append("M must be >= 1")
        if self.J < 1:
            out.append("J must be >= 1")
        if not self.horizon > self.burn_in >= 0:
            out.append("need horizon > burn_in >= 0")
        if self.n_rollouts < 1:
            out.append("n_rollouts must be >= 1")
        if self.evaluator not in ("mc", "lyapunov"):
            out.append("evaluator must be 'mc' or 'lyapunov'")
        if self.log_evaluator not in (None, "mc", "lyapunov"):
            out.append("log_evaluator must be 'mc', 'lyapunov' or null")
        if not 0 < self.backtrack.shrink < 1:
            out.append("backtrack.shrink must lie in (0, 1)")
        if self.backtrack.max_tries < 1:
            out.append("backtrack.max_tries must be >= 1")
        if self.snapshot_every < 1:
            out.append("snapshot_every must be >= 1")
        return out


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    r0: float
    rc: float
    lam: float
    grad_norm: float
    spectral_radius: float
    elapsed_s: float
    accepted: bool = True
    tries: int = 1


@dataclass
class TrainLog:
    records: list[IterationRecord] = field(default_factory=list)
    snapshots: list[tuple[int, StructuredGain]] = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("iteration indices must increase")
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records], dtype=float)

    @property
    def r0(self) -> np.ndarray:
        return self.column("r0")


def make_evaluator(model, spec, stats, config: TrainConfig, disturbance=None, kind=None):
    if (kind or config.evaluator) == "lyapunov":
        return LyapunovEvaluator(model, spec, stats)
    if disturbance is None:
        raise ValueError("Monte-Carlo evaluation needs a disturbance model")
    return MonteCarloEvaluator(model, spec, stats, disturbance, config.horizon, config.burn_in, config.n_rollouts)


def _seed(config: TrainConfig, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([config.master_seed, *key])


_LOG_STREAM = 2**31 - 1


def _directions(pattern: StructurePattern, config: TrainConfig, j: int, attempt: int) -> list[np.ndarray]:
    dirs = []
    for s in range(config.M):
        if config.antithetic and s % 2 == 1:
            # mirror of the previous draw; each direction is still uniform on the sphere
            dirs.append(-dirs[-1])
        else:
            dirs.append(sample_structured_direction(pattern, np.random.default_rng(_seed(config, j, attempt, s, 0))))
    return dirs


def sgdmax_train(
    model: DiscreteModel,
    K0: StructuredGain,
    config: TrainConfig,
    spec: CostSpec,
    stats: NoiseStats,
    disturbance=None,
    evaluator=None,
    log_evaluator=None,
    callback=None,
) -> tuple[StructuredGain, TrainLog]:
    """Run ``J`` SGDmax iterations from a stabilizing ``K0``.

    Randomness is keyed on ``(master_seed, iteration, try, sample)`` so a run
    is reproducible no matter how evaluations are batched. A step whose
    perturbed evaluations hit an unstable gain, or whose candidate iterate is
    unstable, is retried with a shrunk step size; after ``max_tries`` the
    iterate is kept.
    """
    if evaluator is None:
        evaluator = make_evaluator(model, spec, stats, config, disturbance)
    if log_evaluator is None:
        if config.log_evaluator in (None, config.evaluator):
            log_evaluator = evaluator
        else:
            log_evaluator = make_evaluator(model, spec, stats, config, disturbance, config.log_evaluator)
    rho0 = closed_loop_radius(model, K0.values, stats)
    if rho0 >= 1.0:
        raise ValueError(f"initial gain is not stabilizing (spectral radius {rho0:.6g})")
    pattern = K0.pattern
    n_k = pattern.n_nonzero
    max_tries = config.backtrack.max_tries if config.backtrack.enabled else 1
    t_start = time.perf_counter()

    def elapsed():
        return time.perf_counter() - t_start if config.record_wall_time else math.nan

    def record(j, K, grad_norm, accepted=True, tries=1):
        (ev,) = log_evaluator.evaluate([K.values], [_seed(config, j, _LOG_STREAM)])
        lam = max_oracle(ev, stats, spec) if ev.finite else math.nan
        return IterationRecord(j, ev.r0, ev.rc, lam, grad_norm, ev.spectral_radius, elapsed(), accepted, tries)

    train_log = TrainLog()
    train_log.append(record(0, K0, math.nan))
    train_log.snapshots.append((0, K0))
    K = K0
    for j in range(config.J):
        eta = config.eta
        grad = None
        accepted = False
        tries = 0
        for attempt in range(max_tries):
            tries = attempt + 1
            if grad is None:
                dirs = _directions(pattern, config, j, attempt)
                seeds = [
                    _seed(config, j, attempt, 0 if config.common_random_numbers else s, 1) for s in range(config.M)
                ]
                evals = evaluator.evaluate([K.values + config.r * U for U in dirs], seeds)
                samples = [zopg_from_evaluation(ev, U, config.r, n_k, spec, stats) for ev, U in zip(evals, dirs)]
                if not all(s.stable for s in samples):
                    log.debug("iteration %d try %d: unstable perturbation", j, attempt)
                    eta *= config.backtrack.shrink
                    continue
                grad = project_onto_pattern(sum(s.gradient for s in samples) / config.M, pattern)
            candidate = StructuredGain.projected(K.values - eta * grad, pattern)
            if closed_loop_radius(model, candidate.values, stats) < 1.0:
                K = candidate
                accepted = True
                break
            eta *= config.backtrack.shrink
        grad_norm = float(np.linalg.norm(grad)) if grad is not None else math.inf
        rec = record(j + 1, K, grad_norm, accepted, tries)
        train_log.append(rec)
        if (j + 1) % config.snapshot_every == 0 or j + 1 == config.J:
            train_log.snapshots.append((j + 1, K))
        if callback is not None:
            callback(rec, K)
        if grad_norm <= config.epsilon:
            log.info("iteration %d: gradient norm %.3g below epsilon", j + 1, grad_norm)
    return K, train_log
