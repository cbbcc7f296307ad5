"""Experiment configuration: a single JSON document, validated up front.

Every violated constraint is collected so a bad file is reported in one pass.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..lfc_model import (
    AreaParams,
    DiscreteModel,
    GaussianDisturbance,
    LoadStep,
    Scenario,
    TraceDisturbance,
    build_discrete_model,
    perturb_parameters,
)
from ..risk_lqr import CostSpec
from ..sgdmax import Backtrack, TrainConfig
from ..topology import InterconnectionGraph, build_structure_pattern
from .simulation import DEFAULT_BAND, staggered_scenario


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid experiment config:\n" + "\n".join(f"  - {p}" for p in self.problems))


_TRAIN_KEYS = {
    "eta", "r", "M", "J", "epsilon", "horizon", "burn_in", "n_rollouts", "seed", "evaluator",
    "log_evaluator", "backtrack", "common_random_numbers", "antithetic", "snapshot_every",
    "record_wall_time", "K0",
}
_TOP_KEYS = {
    "graph", "area_params", "output", "cost", "discretization", "disturbance", "train", "scenario",
    "robustness", "analysis", "physical", "output_dir",
}


@dataclass
class ExperimentConfig:
    graph: InterconnectionGraph
    params: AreaParams
    include_frequency: bool
    spec: CostSpec
    dt: float
    method: str
    disturbance: object
    stats_samples: int
    moments: str
    train: TrainConfig
    K0_path: Path | None
    scenario: Scenario
    fractions: list[float]
    robustness_mode: str
    robustness_draws: int
    area: int
    band: float
    physical: dict | None
    output_dir: Path
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict)

    @property
    def pattern(self):
        return build_structure_pattern(self.graph)

    def emulator(self) -> DiscreteModel:
        return build_discrete_model(self.params, self.graph, self.dt, self.method, self.include_frequency)

    def physical_params(self) -> AreaParams:
        if not self.physical:
            return self.params
        if "area_params" in self.physical:
            return AreaParams(**{**self.params.as_dict(), **self.physical["area_params"]})
        rng = np.random.default_rng(self.physical.get("seed", self.train.master_seed))
        return perturb_parameters(self.params, self.physical["fraction"], self.physical.get("mode", "uniform_scale"), rng)

    def physical_model(self) -> DiscreteModel:
        return build_discrete_model(self.physical_params(), self.graph, self.dt, self.method, self.include_frequency)

    @property
    def gaussian_noise(self) -> GaussianDisturbance | None:
        return self.disturbance if isinstance(self.disturbance, GaussianDisturbance) else None


def _matrix(value, n: int, name: str, problems: list[str]) -> np.ndarray | None:
    """Scalar -> scaled identity, flat list -> diagonal, nested list -> full matrix."""
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        problems.append(f"{name} must be a number, a diagonal list or a square matrix")
        return None
    if arr.ndim == 0:
        return float(arr) * np.eye(n)
    if arr.ndim == 1:
        if arr.size != n:
            problems.append(f"{name} diagonal must have {n} entries, got {arr.size}")
            return None
        return np.diag(arr)
    if arr.shape != (n, n):
        problems.append(f"{name} must be {n}x{n}, got {arr.shape}")
        return None
    return arr


def _vector(value, n: int, name: str, problems: list[str]) -> np.ndarray | None:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        problems.append(f"{name} must have {n} entries")
        return None
    return arr


def _positive(section: dict, key: str, default, problems: list[str], where: str, integer=False, allow_zero=False):
    value = section.get(key, default)
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if ok and integer:
        ok = float(value).is_integer()
    if ok:
        ok = value >= 0 if allow_zero else value > 0
    if not ok:
        bound = ">= 0" if allow_zero else "> 0"
        problems.append(f"{where}.{key} must be {'an integer' if integer else 'a number'} {bound}, got {value!r}")
        return default
    return int(value) if integer else float(value)


def parse_config(raw: dict, base_dir: Path | None = None, seed: int | None = None, output_dir=None) -> ExperimentConfig:
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    problems: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    for key in sorted(set(raw) - _TOP_KEYS):
        problems.append(f"unknown top-level section {key!r}")

    g = raw.get("graph", {})
    graph = None
    n = g.get("n_areas")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        problems.append(f"graph.n_areas must be a positive integer, got {n!r}")
    else:
        edges = g.get("edges")
        try:
            graph = InterconnectionGraph.chain(n) if edges is None else InterconnectionGraph(n, tuple(map(tuple, edges)))
        except (ValueError, TypeError) as exc:
            problems.append(f"graph: {exc}")
    n_areas = graph.n_areas if graph else 1

    params = None
    try:
        params = AreaParams(**raw.get("area_params", {}))
    except (ValueError, TypeError) as exc:
        problems.append(f"area_params: {exc}")

    include_frequency = bool(raw.get("output", {}).get("include_frequency", False))

    c = raw.get("cost", {})
    Q = _matrix(c.get("Q", 1.0), n_areas, "cost.Q", problems)
    R = _matrix(c.get("R", 0.1), n_areas, "cost.R", problems)
    delta = _positive(c, "delta", 0.0, problems, "cost", allow_zero=True)
    Lam = _positive(c, "Lambda", 10.0, problems, "cost", allow_zero=True)
    spec = None
    if Q is not None and R is not None:
        try:
            spec = CostSpec(Q, R, delta, Lam)
        except ValueError as exc:
            problems.append(f"cost: {exc}")

    d = raw.get("discretization", {})
    dt = _positive(d, "dt", 0.01, problems, "discretization")
    method = d.get("method", "euler")
    if method not in ("euler", "exact"):
        problems.append(f"discretization.method must be 'euler' or 'exact', got {method!r}")

    dist_raw = raw.get("disturbance", {"type": "gaussian", "std": 1.0})
    disturbance = None
    kind = dist_raw.get("type", "gaussian")
    stats_samples = _positive(dist_raw, "stats_samples", 100_000, problems, "disturbance", integer=True)
    moments = dist_raw.get("moments", "empirical")
    if moments not in ("empirical", "analytic"):
        problems.append(f"disturbance.moments must be 'empirical' or 'analytic', got {moments!r}")
    elif moments == "analytic" and kind != "gaussian":
        problems.append("disturbance.moments 'analytic' needs a gaussian disturbance")
    if kind == "gaussian":
        mean = _vector(dist_raw.get("mean", 0.0), n_areas, "disturbance.mean", problems)
        if "cov" in dist_raw:
            cov = _matrix(dist_raw["cov"], n_areas, "disturbance.cov", problems)
        else:
            std = _positive(dist_raw, "std", 1.0, problems, "disturbance", allow_zero=True)
            cov = std**2 * np.eye(n_areas)
        if mean is not None and cov is not None:
            try:
                disturbance = GaussianDisturbance(mean, cov)
            except ValueError as exc:
                problems.append(f"disturbance: {exc}")
    elif kind == "trace":
        path = dist_raw.get("path")
        if not path:
            problems.append("disturbance.path is required for trace disturbances")
        else:
            try:
                disturbance = TraceDisturbance.from_csv(base_dir / path)
                if disturbance.dim != n_areas:
                    problems.append(f"trace has {disturbance.dim} columns, expected {n_areas}")
            except (OSError, ValueError) as exc:
                problems.append(f"disturbance trace: {exc}")
    else:
        problems.append(f"disturbance.type must be 'gaussian' or 'trace', got {kind!r}")

    t = dict(raw.get("train", {}))
    for key in sorted(set(t) - _TRAIN_KEYS):
        problems.append(f"unknown train option {key!r}")
    train = None
    bt = t.get("backtrack", {})
    try:
        train = TrainConfig(
            eta=float(t.get("eta", 1e-4)),
            r=float(t.get("r", 0.1)),
            M=int(t.get("M", 100)),
            J=int(t.get("J", 300)),
            epsilon=float(t.get("epsilon", 1e-3)),
            horizon=int(t.get("horizon", 20_000)),
            burn_in=int(t.get("burn_in", 200)),
            n_rollouts=int(t.get("n_rollouts", 1)),
            master_seed=int(seed if seed is not None else t.get("seed", 0)),
            evaluator=t.get("evaluator", "mc"),
            log_evaluator=t.get("log_evaluator"),
            backtrack=Backtrack(
                bool(bt.get("enabled", True)), float(bt.get("shrink", 0.5)), int(bt.get("max_tries", 10))
            ),
            common_random_numbers=bool(t.get("common_random_numbers", False)),
            antithetic=bool(t.get("antithetic", False)),
            snapshot_every=int(t.get("snapshot_every", 10)),
            record_wall_time=bool(t.get("record_wall_time", False)),
        )
    except (ValueError, TypeError) as exc:
        problems.append(f"train: {exc}")
    K0_path = base_dir / t["K0"] if t.get("K0") else None

    s = raw.get("scenario", {})
    scenario = None
    duration = _positive(s, "duration", 20.0, problems, "scenario")
    background = None
    if "background" in s:
        b = s["background"]
        mean = _vector(b.get("mean", 0.0), n_areas, "scenario.background.mean", problems)
        std = _positive(b, "std", 0.0, problems, "scenario.background", allow_zero=True)
        if mean is not None:
            background = GaussianDisturbance(mean, std**2 * np.eye(n_areas))
    try:
        if "steps" in s:
            steps = tuple(LoadStep(*step) for step in s["steps"])
            scenario = Scenario(n_areas, duration, dt, steps, background)
        else:
            rnd = s.get("random", {})
            scenario = staggered_scenario(
                n_areas, duration, dt, float(rnd.get("magnitude", 0.1)), int(rnd.get("seed", 0)), background
            )
    except (ValueError, TypeError) as exc:
        problems.append(f"scenario: {exc}")

    rb = raw.get("robustness", {})
    fractions = rb.get("fractions", [0.1, 0.15, 0.2])
    if not fractions or not all(isinstance(f, (int, float)) and 0 <= f < 1 for f in fractions):
        problems.append("robustness.fractions must be a nonempty list of numbers in [0, 1)")
    mode = rb.get("mode", "uniform_scale")
    if mode not in ("uniform_scale", "random_sign"):
        problems.append(f"robustness.mode must be 'uniform_scale' or 'random_sign', got {mode!r}")
    draws = rb.get("n_draws") or (1 if mode == "uniform_scale" else 100)
    if not isinstance(draws, int) or draws < 1:
        problems.append("robustness.n_draws must be a positive integer")

    an = raw.get("analysis", {})
    area = an.get("area", 3 if n_areas >= 3 else 1)
    if not isinstance(area, int) or not 1 <= area <= n_areas:
        problems.append(f"analysis.area must be an area index in [1, {n_areas}]")
    band = _positive(an, "band", DEFAULT_BAND, problems, "analysis")

    physical = raw.get("physical")
    if physical is not None:
        if "area_params" not in physical and "fraction" not in physical:
            problems.append("physical needs either 'area_params' or 'fraction'")
        elif "fraction" in physical and not 0 <= physical["fraction"] < 1:
            problems.append("physical.fraction must lie in [0, 1)")

    if problems:
        raise ConfigError(problems)
    out = Path(output_dir) if output_dir is not None else base_dir / raw.get("output_dir", "runs")
    return ExperimentConfig(
        graph=graph,
        params=params,
        include_frequency=include_frequency,
        spec=spec,
        dt=dt,
        method=method,
        disturbance=disturbance,
        stats_samples=stats_samples,
        moments=moments,
        train=train,
        K0_path=K0_path,
        scenario=scenario,
        fractions=[float(f) for f in fractions],
        robustness_mode=mode,
        robustness_draws=draws,
        area=area,
        band=band,
        physical=physical,
        output_dir=out,
        base_dir=base_dir,
        raw=raw,
    )


def load_config(path, seed: int | None = None, output_dir=None) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"{path}: not valid JSON ({exc})"]) from exc
    return parse_config(raw, path.parent, seed, output_dir)
