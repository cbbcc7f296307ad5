"""Closed-loop scenario rollouts, settling metrics, emulator-to-physical transfer
and parameter-perturbation robustness sweeps."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ..lfc_model import (
    AreaParams,
    DiscreteModel,
    GaussianDisturbance,
    LoadStep,
    Scenario,
    build_discrete_model,
    perturb_parameters,
)
from ..risk_lqr import (
    OVERFLOW_GUARD,
    CostSpec,
    GainEvaluation,
    closed_loop_radius,
    gaussian_noise_stats,
    lyapunov_evaluate,
)
from ..sgdmax import StructuredGain
from ..topology import FREQ, STATES_PER_AREA, InterconnectionGraph

DEFAULT_BAND = 0.01


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    w: np.ndarray
    divergent: bool = False
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.metadata.get("duration", self.t[-1] if len(self.t) else 0.0))

    def frequency(self, area: int) -> np.ndarray:
        """Frequency deviation of a 1-based area."""
        return self.x[:, STATES_PER_AREA * (area - 1) + FREQ]


def _gain_values(K) -> np.ndarray:
    return K.values if isinstance(K, StructuredGain) else np.asarray(K, dtype=float)


def _hash_array(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr, dtype=float).tobytes()).hexdigest()[:16]


def simulate_closed_loop(model: DiscreteModel, K, scenario: Scenario, rng=None) -> Trajectory:
    """Roll out ``x+ = A_d x + B_ud u + B_wd w`` with ``u = -K C x`` from ``x0 = 0``."""
    Kv = _gain_values(K)
    if Kv.shape != (model.n_inputs, model.n_outputs):
        raise ValueError(f"gain shape {Kv.shape} does not fit the model ({model.n_inputs}, {model.n_outputs})")
    if not math.isclose(scenario.dt, model.dt, rel_tol=1e-9):
        raise ValueError(f"scenario dt {scenario.dt} differs from model dt {model.dt}")
    if scenario.n_areas != model.n_disturbances:
        raise ValueError("scenario and model disagree on the number of areas")
    seed_seq = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    gen = np.random.default_rng(seed_seq)
    steps = scenario.n_steps
    w = scenario.block(0, steps, gen)
    n = model.n_states
    xs = np.zeros((steps, n))
    ys = np.zeros((steps, model.n_outputs))
    us = np.zeros((steps, model.n_inputs))
    x = np.zeros(n)
    divergent = False
    count = steps
    for t in range(steps):
        y = model.C @ x
        u = -(Kv @ y) + 0.0  # avoid signed zeros in the record
        xs[t], ys[t], us[t] = x, y, u
        x = model.A_d @ x + model.B_ud @ u + model.B_wd @ w[t]
        if not np.isfinite(x).all() or np.abs(x).max() > OVERFLOW_GUARD:
            divergent = True
            count = t + 1
            break
    metadata = {
        "seed": list(seed_seq.entropy) if isinstance(seed_seq.entropy, (list, tuple)) else seed_seq.entropy,
        "model_hash": model.fingerprint(),
        "K_hash": _hash_array(Kv),
        "duration": scenario.duration,
    }
    return Trajectory(
        t=np.arange(count) * model.dt,
        x=xs[:count],
        y=ys[:count],
        u=us[:count],
        w=w[:count],
        divergent=divergent,
        metadata=metadata,
    )


def settling_metrics(traj: Trajectory, band: float = DEFAULT_BAND, area: int = 1) -> tuple[float, float]:
    """Peak ``|df|`` and the time after which ``|df|`` stays within ``band``.

    A trajectory that is still outside the band at its last sample reports
    the scenario duration as its settling time.
    """
    if traj.divergent:
        raise ValueError("settling metrics are undefined for a divergent trajectory")
    df = np.abs(traj.frequency(area))
    if df.size == 0:
        return 0.0, 0.0
    peak = float(df.max())
    outside = np.flatnonzero(df > band)
    if outside.size == 0:
        return peak, 0.0
    last = outside[-1]
    if last == df.size - 1:
        return peak, traj.duration
    return peak, float(traj.t[last + 1])


def peak_time(traj: Trajectory, area: int) -> float:
    return float(traj.t[int(np.argmax(np.abs(traj.frequency(area))))])


# -- emulator to physical transfer ----------------------------------------------


@dataclass(frozen=True)
class TransferResult:
    trajectory: Trajectory
    evaluation: GainEvaluation


def evaluate_on(model: DiscreteModel, K, spec: CostSpec, noise: GaussianDisturbance | None) -> GainEvaluation:
    """Exact evaluation on ``model``; instability is reported, not raised."""
    Kv = _gain_values(K)
    if noise is None:
        noise = GaussianDisturbance(np.zeros(model.n_disturbances), np.zeros((model.n_disturbances,) * 2))
    stats = gaussian_noise_stats(model, noise, spec)
    rho = closed_loop_radius(model, Kv, stats)
    if rho >= 1.0:
        return GainEvaluation(math.inf, math.inf, stats.delta_bar, False, rho)
    return lyapunov_evaluate(model, Kv, spec, stats)


def transfer_eval(
    emulator: DiscreteModel,
    physical: DiscreteModel,
    K,
    scenario: Scenario,
    spec: CostSpec,
    noise: GaussianDisturbance | None = None,
    rng=None,
) -> TransferResult:
    """Run a gain designed on the emulator against the physical model."""
    if emulator.C.shape != physical.C.shape or not np.array_equal(emulator.C, physical.C):
        raise ValueError("emulator and physical models must share topology and outputs")
    if emulator.A_d.shape != physical.A_d.shape:
        raise ValueError("emulator and physical models must have the same state dimension")
    if not math.isclose(emulator.dt, physical.dt, rel_tol=1e-12):
        raise ValueError("emulator and physical models must share dt")
    trajectory = simulate_closed_loop(physical, K, scenario, rng)
    return TransferResult(trajectory, evaluate_on(physical, K, spec, noise))


# -- robustness --------------------------------------------------------------


@dataclass(frozen=True)
class DrawOutcome:
    fraction: float
    draw: int
    stable: bool
    spectral_radius: float
    peak: float
    settling_time: float
    r0: float


@dataclass
class RobustnessEntry:
    fraction: float
    mode: str
    n_draws: int
    n_stable: int
    peak_mean: float
    peak_max: float
    settling_mean: float
    settling_max: float
    radius_max: float
    draws: list[DrawOutcome] = field(default_factory=list)

    @property
    def fraction_stable(self) -> float:
        return self.n_stable / self.n_draws


@dataclass
class RobustnessReport:
    area: int
    band: float
    entries: list[RobustnessEntry] = field(default_factory=list)

    def entry(self, fraction: float) -> RobustnessEntry:
        for e in self.entries:
            if math.isclose(e.fraction, fraction, abs_tol=1e-12):
                return e
        raise KeyError(fraction)

    def to_json(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else None

        return {
            "area": self.area,
            "band": self.band,
            "entries": [
                {
                    "fraction": e.fraction,
                    "mode": e.mode,
                    "n_draws": e.n_draws,
                    "n_stable": e.n_stable,
                    "fraction_stable": e.fraction_stable,
                    "peak_mean": num(e.peak_mean),
                    "peak_max": num(e.peak_max),
                    "settling_mean": num(e.settling_mean),
                    "settling_max": num(e.settling_max),
                    "radius_max": num(e.radius_max),
                    "draws": [
                        {
                            "draw": d.draw,
                            "stable": d.stable,
                            "spectral_radius": num(d.spectral_radius),
                            "peak": num(d.peak),
                            "settling_time": num(d.settling_time),
                            "r0": num(d.r0),
                        }
                        for d in e.draws
                    ],
                }
                for e in self.entries
            ],
        }


def robustness_sweep(
    nominal: AreaParams,
    graph: InterconnectionGraph,
    K,
    fractions,
    mode: str,
    n_draws: int,
    scenario: Scenario,
    master_seed: int,
    spec: CostSpec,
    noise: GaussianDisturbance | None = None,
    dt: float = 0.01,
    method: str = "euler",
    include_frequency: bool = False,
    area: int = 1,
    band: float = DEFAULT_BAND,
) -> RobustnessReport:
    """Perturb the nominal parameters, rebuild the physical model and transfer ``K`` onto it."""
    fractions = sorted(float(f) for f in fractions)
    if not fractions:
        raise ValueError("at least one perturbation fraction is required")
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    emulator = build_discrete_model(nominal, graph, dt, method, include_frequency)
    report = RobustnessReport(area=area, band=band)
    for fi, fraction in enumerate(fractions):
        draws = []
        for d in range(n_draws):
            perturb_seed, sim_seed = np.random.SeedSequence([master_seed, fi, d]).spawn(2)
            params = perturb_parameters(nominal, fraction, mode, np.random.default_rng(perturb_seed))
            physical = build_discrete_model(params, graph, dt, method, include_frequency)
            result = transfer_eval(emulator, physical, K, scenario, spec, noise, sim_seed)
            traj = result.trajectory
            stable = result.evaluation.stable and not traj.divergent
            if traj.divergent:
                peak, settle = math.inf, math.inf
            else:
                peak, settle = settling_metrics(traj, band, area)
            draws.append(
                DrawOutcome(fraction, d, stable, result.evaluation.spectral_radius, peak, settle, result.evaluation.r0)
            )
        peaks = np.array([o.peak for o in draws])
        settles = np.array([o.settling_time for o in draws])
        report.entries.append(
            RobustnessEntry(
                fraction=fraction,
                mode=mode,
                n_draws=n_draws,
                n_stable=sum(o.stable for o in draws),
                peak_mean=float(peaks.mean()),
                peak_max=float(peaks.max()),
                settling_mean=float(settles.mean()),
                settling_max=float(settles.max()),
                radius_max=float(max(o.spectral_radius for o in draws)),
                draws=draws,
            )
        )
    return report


def staggered_scenario(
    n_areas: int,
    duration: float = 20.0,
    dt: float = 0.01,
    magnitude: float = 0.1,
    seed: int = 0,
    background: GaussianDisturbance | None = None,
) -> Scenario:
    """One load step per area at a random onset in ``[1, duration - 5)`` seconds."""
    rng = np.random.default_rng(seed)
    onsets = np.round(rng.uniform(1.0, duration - 5.0, size=n_areas), 2)
    steps = tuple(LoadStep(i + 1, float(onsets[i]), magnitude) for i in range(n_areas))
    return Scenario(n_areas, duration, dt, steps, background)
