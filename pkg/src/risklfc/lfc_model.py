"""Multi-area load frequency control model.

Per-area state ordering is ``[df, dPG, dPtie, int_z]``: frequency deviation,
generator output, tie-line inflow and the integral of the area control error
``z = beta * df + dPtie``. Identical areas are coupled through the graph
Laplacian, ``A = I (x) A1 + L (x) A2``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .topology import InterconnectionGraph, build_laplacian, build_output_matrix

_PARAM_FIELDS = ("inertia", "damping", "droop", "gov_turbine_T", "k_tie", "bias")


@dataclass(frozen=True)
class AreaParams:
    """Physical parameters shared by all areas.

    ``bias`` defaults to ``damping + 1/droop``; when it was derived that way,
    ``perturb_parameters`` re-derives it from the perturbed values.
    """

    inertia: float = 10.0
    damping: float = 1.0
    droop: float = 0.05
    gov_turbine_T: float = 0.4
    k_tie: float = 1.0
    bias: float | None = None
    bias_from_rule: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.bias is None:
            if self.droop <= 0:
                raise ValueError(f"droop must be > 0, got {self.droop}")
            object.__setattr__(self, "bias", self.damping + 1.0 / self.droop)
            object.__setattr__(self, "bias_from_rule", True)
        for name in _PARAM_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            # zero tie coupling is allowed: it decouples the areas
            if value < 0 or (value == 0 and name != "k_tie"):
                raise ValueError(f"{name} must be > 0, got {value}")

    def as_dict(self) -> dict:
        out = {name: getattr(self, name) for name in _PARAM_FIELDS}
        if self.bias_from_rule:
            out["bias"] = None
        return out


@dataclass(frozen=True, eq=False)
class ContinuousModel:
    A: np.ndarray
    B_u: np.ndarray
    B_w: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        _check_shapes(self.A, self.B_u, self.B_w, self.C)


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """``x+ = A_d x + B_ud u + B_wd w``, ``y = C x`` with sample time ``dt``."""

    A_d: np.ndarray
    B_ud: np.ndarray
    B_wd: np.ndarray
    C: np.ndarray
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        _check_shapes(self.A_d, self.B_ud, self.B_wd, self.C)

    @property
    def n_states(self) -> int:
        return self.A_d.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B_ud.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def n_disturbances(self) -> int:
        return self.B_wd.shape[1]

    def closed_loop(self, K) -> np.ndarray:
        return self.A_d - self.B_ud @ np.asarray(K) @ self.C

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for arr in (self.A_d, self.B_ud, self.B_wd, self.C):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        h.update(repr(float(self.dt)).encode())
        return h.hexdigest()[:16]


def _check_shapes(A, B_u, B_w, C):
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"state matrix must be square, got {A.shape}")
    if B_u.ndim != 2 or B_u.shape[0] != n:
        raise ValueError(f"control matrix must have {n} rows, got {B_u.shape}")
    if B_w.ndim != 2 or B_w.shape[0] != n:
        raise ValueError(f"disturbance matrix must have {n} rows, got {B_w.shape}")
    if C.ndim != 2 or C.shape[1] != n:
        raise ValueError(f"output matrix must have {n} columns, got {C.shape}")


def build_area_blocks(params: AreaParams):
    """Return ``(A1, A2, Bu, Bw)`` for one area."""
    Ma, D, Rd, T = params.inertia, params.damping, params.droop, params.gov_turbine_T
    A1 = np.array(
        [
            [-D / Ma, 1.0 / Ma, -1.0 / Ma, 0.0],
            [-1.0 / (Rd * T), -1.0 / T, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0],
            [params.bias, 0.0, 1.0, 0.0],
        ]
    )
    A2 = np.zeros((4, 4))
    A2[2, 0] = params.k_tie
    Bu = np.array([[0.0], [1.0 / T], [0.0], [0.0]])
    Bw = np.array([[-1.0 / Ma], [0.0], [0.0], [0.0]])
    return A1, A2, Bu, Bw


def assemble_network(
    params: AreaParams, graph: InterconnectionGraph, include_frequency: bool = False
) -> ContinuousModel:
    A1, A2, Bu, Bw = build_area_blocks(params)
    eye = np.eye(graph.n_areas)
    return ContinuousModel(
        A=np.kron(eye, A1) + np.kron(build_laplacian(graph), A2),
        B_u=np.kron(eye, Bu),
        B_w=np.kron(eye, Bw),
        C=build_output_matrix(graph, include_frequency),
    )


def discretize(model: ContinuousModel, dt: float, method: str = "euler") -> DiscreteModel:
    """Forward-Euler or zero-order-hold discretization.

    The exact method exponentiates the augmented matrix ``[[A, B], [0, 0]] dt``,
    which never needs ``A`` to be invertible.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    n = model.A.shape[0]
    if method == "euler":
        return DiscreteModel(np.eye(n) + dt * model.A, dt * model.B_u, dt * model.B_w, model.C.copy(), dt)
    if method == "exact":
        B = np.hstack([model.B_u, model.B_w])
        aug = np.zeros((n + B.shape[1], n + B.shape[1]))
        aug[:n, :n] = model.A
        aug[:n, n:] = B
        phi = expm(aug * dt)
        m = model.B_u.shape[1]
        return DiscreteModel(phi[:n, :n], phi[:n, n : n + m], phi[:n, n + m :], model.C.copy(), dt)
    raise ValueError(f"unknown discretization method {method!r} (expected 'euler' or 'exact')")


def build_discrete_model(
    params: AreaParams,
    graph: InterconnectionGraph,
    dt: float = 0.01,
    method: str = "euler",
    include_frequency: bool = False,
) -> DiscreteModel:
    return discretize(assemble_network(params, graph, include_frequency), dt, method)


def perturb_parameters(params: AreaParams, fraction: float, mode: str = "uniform_scale", rng=None) -> AreaParams:
    """Scale every parameter by ``1 + fraction`` (or ``1 +/- fraction`` per field)."""
    if not 0 <= fraction < 1:
        raise ValueError(f"fraction must lie in [0, 1), got {fraction}")
    names = [n for n in _PARAM_FIELDS if not (n == "bias" and params.bias_from_rule)]
    if mode == "uniform_scale":
        factors = {n: 1.0 + fraction for n in names}
    elif mode == "random_sign":
        rng = np.random.default_rng(rng)
        signs = rng.choice([-1.0, 1.0], size=len(names))
        factors = {n: 1.0 + s * fraction for n, s in zip(names, signs)}
    else:
        raise ValueError(f"unknown perturbation mode {mode!r}")
    values = {n: getattr(params, n) * factors[n] for n in names}
    if params.bias_from_rule:
        values["bias"] = None
    return AreaParams(**values)


# -- disturbances ----------------------------------------------------------


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class GaussianDisturbance:
    """I.i.d. gaussian load deviations with mean ``mean`` and covariance ``cov``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {mean.size}")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.abs(cov).max()):
            raise ValueError("covariance must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_sqrt", _psd_sqrt(cov))

    @classmethod
    def isotropic(cls, n: int, std: float, mean: float = 0.0) -> GaussianDisturbance:
        return cls(np.full(n, float(mean)), std**2 * np.eye(n))

    @property
    def dim(self) -> int:
        return self.mean.size

    def block(self, start: int, length: int, rng) -> np.ndarray:
        z = rng.standard_normal((length, self.dim))
        return self.mean + z @ self._sqrt.T


@dataclass(frozen=True)
class LoadStep:
    """Load change of ``magnitude`` p.u. in a 1-based ``area`` from ``onset`` until ``offset`` seconds."""

    area: int
    onset: float
    magnitude: float
    offset: float | None = None


@dataclass(frozen=True, eq=False)
class Scenario:
    """Scripted load steps with an optional gaussian background."""

    n_areas: int
    duration: float
    dt: float
    steps: tuple[LoadStep, ...] = ()
    background: GaussianDisturbance | None = None

    def __post_init__(self):
        if not (self.duration > 0 and self.dt > 0):
            raise ValueError("scenario duration and dt must be positive")
        steps = tuple(s if isinstance(s, LoadStep) else LoadStep(*s) for s in self.steps)
        for s in steps:
            if not 1 <= s.area <= self.n_areas:
                raise ValueError(f"load step area {s.area} outside [1, {self.n_areas}]")
            if not 0 <= s.onset < self.duration:
                raise ValueError(f"load step onset {s.onset} outside [0, duration={self.duration})")
            if s.offset is not None and s.offset <= s.onset:
                raise ValueError("load step offset must come after its onset")
        object.__setattr__(self, "steps", steps)
        if self.background is not None and self.background.dim != self.n_areas:
            raise ValueError("background disturbance dimension must equal n_areas")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def dim(self) -> int:
        return self.n_areas

    def block(self, start: int, length: int, rng) -> np.ndarray:
        t = (start + np.arange(length)) * self.dt
        out = np.zeros((length, self.n_areas))
        # half-step slack so onsets on the grid are not lost to rounding
        eps = 1e-9 * self.dt
        for s in self.steps:
            active = t >= s.onset - eps
            if s.offset is not None:
                active &= t < s.offset - eps
            out[active, s.area - 1] += s.magnitude
        if self.background is not None:
            out += self.background.block(start, length, rng)
        return out


class TraceExhaustedError(IndexError):
    pass


@dataclass(frozen=True, eq=False)
class TraceDisturbance:
    """Recorded load deviations, one row per step."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        object.__setattr__(self, "samples", arr)

    @classmethod
    def from_csv(cls, path) -> TraceDisturbance:
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        expected = [f"area_{i}" for i in range(1, len(header) + 1)]
        if [h.strip() for h in header] != expected:
            raise ValueError(f"trace header must be {expected}, got {header}")
        return cls(np.array([[float(v) for v in row] for row in body if row]))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"area_{i}" for i in range(1, self.dim + 1)])
            writer.writerows([[repr(float(v)) for v in row] for row in self.samples])

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    def block(self, start: int, length: int, rng=None) -> np.ndarray:
        if start < 0 or start + length > len(self):
            raise TraceExhaustedError(
                f"trace has {len(self)} rows; requested rows {start}..{start + length - 1}"
            )
        return self.samples[start : start + length]


def sample_disturbance(model, t: int, rng=None) -> np.ndarray:
    """Load-deviation vector at step ``t``."""
    return model.block(t, 1, rng)[0]


def with_params(params: AreaParams, **changes) -> AreaParams:
    if params.bias_from_rule and "bias" not in changes:
        changes["bias"] = None
    return replace(params, **changes)
