"""Average LQR cost, mean-variance risk term and their Lagrangian.

All noise moments live in state coordinates: they describe the mapped
disturbance ``B_wd w`` and are weighted by ``Q_c = C^T Q C``.

Two independent evaluators are provided for a static output feedback gain
``K`` (``u = -K C x``): a Monte-Carlo estimator of the ergodic averages and an
exact stationary solution through the discrete Lyapunov equation.

The closed loop of the LFC network always keeps two marginal modes that no
output feedback can move: the integrated area control error (never measured,
never fed back) and the total tie-line flow (conserved, never excited by load
noise). Stability is therefore judged on the cost-relevant part of the
closed loop: the modes reachable from the noise and visible in ``y``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .lfc_model import DiscreteModel, GaussianDisturbance

OVERFLOW_GUARD = 1e8
_RANK_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Output weight ``Q``, control weight ``R_u``, risk budget ``delta``, dual bound ``Lambda``."""

    Q: np.ndarray
    R_u: np.ndarray
    delta: float = 0.0
    Lambda: float = 1.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R_u, dtype=float))
        for name, M in (("Q", Q), ("R_u", R)):
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be a symmetric square matrix")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R_u must be positive definite")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if not self.Lambda >= 0:
            raise ValueError("Lambda must be >= 0")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R_u", R)


@dataclass(frozen=True, eq=False)
class NoiseStats:
    """Moments of the state-space noise and the shifted risk budget.

    ``M3 = E[d d^T Q_c d]`` and ``m4 = E[(d^T Q_c d - tr(W Q_c))^2]`` with
    ``d = w - w_bar``; ``delta_bar = delta - m4 + 4 tr((W Q_c)^2)``.
    """

    w_bar: np.ndarray
    W: np.ndarray
    M3: np.ndarray
    m4: float
    Q_c: np.ndarray
    delta: float

    @property
    def delta_bar(self) -> float:
        WQ = self.W @ self.Q_c
        return float(self.delta - self.m4 + 4.0 * np.trace(WQ @ WQ))

    def with_delta(self, delta: float) -> NoiseStats:
        return NoiseStats(self.w_bar, self.W, self.M3, self.m4, self.Q_c, float(delta))


@dataclass(frozen=True)
class GainEvaluation:
    r0: float
    rc: float
    delta_bar: float
    stable: bool
    spectral_radius: float

    def lagrangian_at(self, lam: float) -> float:
        if not self.stable:
            return math.inf
        return self.r0 + lam * (self.rc - self.delta_bar)

    @property
    def finite(self) -> bool:
        return self.stable and math.isfinite(self.r0) and math.isfinite(self.rc)


def state_weight(C: np.ndarray, spec: CostSpec) -> np.ndarray:
    """``Q_c = C^T Q C``."""
    return C.T @ spec.Q @ C


def estimate_noise_stats(samples, Q_c, delta: float) -> NoiseStats:
    """Empirical noise moments from an ``(n_samples, n)`` array (population normalization)."""
    w = np.asarray(samples, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    Q_c = np.atleast_2d(np.asarray(Q_c, dtype=float))
    if w.shape[0] < 2:
        raise ValueError("need at least two samples")
    if Q_c.shape != (w.shape[1], w.shape[1]):
        raise ValueError(f"Q_c shape {Q_c.shape} does not match sample dimension {w.shape[1]}")
    w_bar = w.mean(axis=0)
    d = w - w_bar
    W = d.T @ d / len(d)
    quad = np.einsum("ti,ij,tj->t", d, Q_c, d)
    M3 = (d * quad[:, None]).mean(axis=0)
    m4 = float(np.mean((quad - np.trace(W @ Q_c)) ** 2))
    return NoiseStats(w_bar, W, M3, m4, Q_c, float(delta))


def gaussian_noise_stats(model: DiscreteModel, disturbance: GaussianDisturbance, spec: CostSpec) -> NoiseStats:
    """Closed-form moments of ``B_wd w`` for gaussian ``w``: ``M3 = 0``, ``m4 = 2 tr((W Q_c)^2)``."""
    B = model.B_wd
    W = B @ disturbance.cov @ B.T
    Q_c = state_weight(model.C, spec)
    WQ = W @ Q_c
    return NoiseStats(B @ disturbance.mean, W, np.zeros(model.n_states), float(2.0 * np.trace(WQ @ WQ)), Q_c, spec.delta)


def stage_cost(y, u, spec: CostSpec) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(y @ spec.Q @ y + u @ spec.R_u @ u)


def risk_weights(C: np.ndarray, stats: NoiseStats, spec: CostSpec):
    """Quadratic and linear output weights of the reformulated risk term.

    Returns ``(S, g)`` with ``S = 4 Q C W C^T Q`` and ``g = 4 Q C M3`` so the
    per-step risk is ``y^T S y + g^T y``.
    """
    QC = spec.Q @ C
    return 4.0 * QC @ stats.W @ QC.T, 4.0 * QC @ stats.M3


def risk_stage(y, stats: NoiseStats, spec: CostSpec, C) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    S, g = risk_weights(np.atleast_2d(C), stats, spec)
    return float(y @ S @ y + g @ y)


def spectral_radius(A) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {A.shape}")
    if A.size == 0:
        return 0.0
    try:
        return float(np.max(np.abs(np.linalg.eigvals(A))))
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigenvalue computation failed: {exc}") from exc


# -- cost-relevant realization -----------------------------------------------


def _orth(X: np.ndarray, tol: float) -> np.ndarray:
    if X.size == 0:
        return X
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    return U[:, : int(np.sum(s > tol))]


def reachable_basis(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the Krylov subspace ``span[B, AB, A^2 B, ...]``.

    Krylov spaces are shift invariant, so ``A - I`` is used: for sampled
    continuous dynamics it is well scaled where ``A`` itself is close to ``I``.
    """
    n = A.shape[0]
    shifted = A - np.eye(n)
    scale = max(np.linalg.norm(shifted), 1e-300)
    basis = _orth(B, _RANK_TOL * max(np.linalg.norm(B), 1e-300))
    new = basis
    while new.shape[1] and basis.shape[1] < n:
        X = shifted @ new
        for _ in range(2):
            X = X - basis @ (basis.T @ X)
        new = _orth(X, _RANK_TOL * scale)
        basis = np.hstack([basis, new])
    return basis


def relevant_basis(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Orthonormal ``T`` (n x k) spanning the reachable-and-observable part of ``(A, B, C)``.

    ``T^T A T`` carries every mode that the input can excite and the output
    can see; the remaining modes never influence ``y``.
    """
    V = reachable_basis(A, B)
    if V.shape[1] == 0:
        return V
    Ar, Cr = V.T @ A @ V, C @ V
    Z = reachable_basis(Ar.T, Cr.T)
    return V @ Z


def _noise_inputs(model: DiscreteModel, stats: NoiseStats | None) -> np.ndarray:
    if stats is None:
        return model.B_wd
    return np.hstack([model.B_wd, stats.W, stats.w_bar[:, None]])


def closed_loop_radius(model: DiscreteModel, K, stats: NoiseStats | None = None) -> float:
    """Spectral radius of the cost-relevant part of ``A_d - B_ud K C``."""
    A_K = model.closed_loop(K)
    T = relevant_basis(A_K, _noise_inputs(model, stats), model.C)
    return spectral_radius(T.T @ A_K @ T)


# -- evaluators ----------------------------------------------------------------


def _unstable(stats: NoiseStats, radius: float) -> GainEvaluation:
    return GainEvaluation(math.inf, math.inf, stats.delta_bar, False, radius)


def lyapunov_evaluate(model: DiscreteModel, K, spec: CostSpec, stats: NoiseStats) -> GainEvaluation:
    """Exact stationary ``r0`` and ``rc`` from the discrete Lyapunov equation."""
    K = np.asarray(K, dtype=float)
    A_K = model.closed_loop(K)
    T = relevant_basis(A_K, _noise_inputs(model, stats), model.C)
    A_m = T.T @ A_K @ T
    radius = spectral_radius(A_m)
    if radius >= 1.0:
        raise ValueError(f"closed loop is not stable (spectral radius {radius:.6g}); the stationary oracle is undefined")
    C_m = model.C @ T
    k = A_m.shape[0]
    Sigma = solve_discrete_lyapunov(A_m, T.T @ stats.W @ T) if k else np.zeros((0, 0))
    mu = np.linalg.solve(np.eye(k) - A_m, T.T @ stats.w_bar) if k else np.zeros(0)
    y_mean = C_m @ mu
    Y = C_m @ Sigma @ C_m.T + np.outer(y_mean, y_mean)
    S, g = risk_weights(model.C, stats, spec)
    r0 = float(np.trace((spec.Q + K.T @ spec.R_u @ K) @ Y))
    rc = float(np.trace(S @ Y) + g @ y_mean)
    return GainEvaluation(r0, rc, stats.delta_bar, True, radius)


def _seed_sequence(rng) -> np.random.SeedSequence:
    if isinstance(rng, np.random.SeedSequence):
        return rng
    if isinstance(rng, np.random.Generator):
        return rng.bit_generator.seed_seq
    return np.random.SeedSequence(rng)


def rollout_streams(rng, n_rollouts: int) -> list[np.random.Generator]:
    """One independent generator per rollout, derived from a master seed."""
    # same children as ``spawn`` but without advancing the parent's spawn counter,
    # so a seed object can be reused and still yield the same streams
    ss = _seed_sequence(rng)
    return [
        np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=(*ss.spawn_key, i), pool_size=ss.pool_size))
        for i in range(n_rollouts)
    ]


def simulate_costs(
    model: DiscreteModel,
    Ks,
    spec: CostSpec,
    stats: NoiseStats,
    horizon: int,
    burn_in: int,
    disturbance,
    streams: list[list[np.random.Generator]],
    chunk: int = 2000,
):
    """Batched closed-loop rollouts from ``x0 = 0``.

    ``Ks`` has shape (b, m, p) and ``streams[i]`` holds the rollout
    generators of gain ``i``. Returns per-gain ``(r0, rc, diverged)`` arrays,
    averaged over ``t in [burn_in, horizon)`` and over rollouts.
    """
    Ks = np.asarray(Ks, dtype=float)
    b = Ks.shape[0]
    n_roll = len(streams[0])
    A_K = np.repeat(np.stack([model.closed_loop(K) for K in Ks]), n_roll, axis=0)
    KC = np.repeat(Ks @ model.C, n_roll, axis=0)
    flat_streams = [g for per_gain in streams for g in per_gain]
    S, g = risk_weights(model.C, stats, spec)
    Q, R, C = spec.Q, spec.R_u, model.C
    n = model.n_states
    x = np.zeros((b * n_roll, n))
    r0 = np.zeros(b * n_roll)
    rc = np.zeros(b * n_roll)
    diverged = np.zeros(b * n_roll, dtype=bool)
    A_T = np.transpose(A_K, (0, 2, 1))
    for start in range(0, horizon, chunk):
        length = min(chunk, horizon - start)
        w = np.stack([disturbance.block(start, length, s) for s in flat_streams], axis=1)
        noise = w @ model.B_wd.T
        xs = np.empty((length, b * n_roll, n))
        for t in range(length):
            xs[t] = x
            x = np.einsum("bj,bjk->bk", x, A_T) + noise[t]
        lo = max(burn_in - start, 0)
        if lo < length:
            X = xs[lo:]
            y = X @ C.T
            u = -np.einsum("tbj,bkj->tbk", X, KC)
            r0 += np.einsum("tbi,ij,tbj->b", y, Q, y) + np.einsum("tbi,ij,tbj->b", u, R, u)
            rc += np.einsum("tbi,ij,tbj->b", y, S, y) + (y @ g).sum(axis=0)
        bad = ~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > OVERFLOW_GUARD)
        if bad.any():
            diverged |= bad
            x[bad] = 0.0
    count = horizon - burn_in
    r0 = (r0 / count).reshape(b, n_roll)
    rc = (rc / count).reshape(b, n_roll)
    diverged = diverged.reshape(b, n_roll).any(axis=1)
    return r0.mean(axis=1), rc.mean(axis=1), diverged


def mc_evaluate(
    model: DiscreteModel,
    K,
    spec: CostSpec,
    stats: NoiseStats,
    horizon: int = 20_000,
    burn_in: int = 200,
    disturbance=None,
    rng=None,
    n_rollouts: int = 4,
) -> GainEvaluation:
    """Monte-Carlo estimate of the ergodic averages ``r0`` and ``rc``.

    Unstable gains (cost-relevant spectral radius >= 1, or a rollout that
    crosses the overflow guard) report ``stable=False`` with infinite costs.
    """
    return mc_evaluate_many(model, [K], spec, stats, horizon, burn_in, disturbance, [rng], n_rollouts)[0]


def mc_evaluate_many(model, Ks, spec, stats, horizon, burn_in, disturbance, rngs, n_rollouts=1):
    """Evaluate several gains in one batched simulation; ``rngs[i]`` seeds gain ``i``."""
    if not horizon > burn_in >= 0:
        raise ValueError("need horizon > burn_in >= 0")
    if disturbance is None:
        raise ValueError("a disturbance model is required for Monte-Carlo evaluation")
    Ks = [np.asarray(K, dtype=float) for K in Ks]
    radii = [closed_loop_radius(model, K, stats) for K in Ks]
    results: list[GainEvaluation | None] = [None] * len(Ks)
    live = [i for i, rho in enumerate(radii) if rho < 1.0]
    for i, rho in enumerate(radii):
        if rho >= 1.0:
            results[i] = _unstable(stats, rho)
    if live:
        streams = [rollout_streams(rngs[i], n_rollouts) for i in live]
        r0, rc, diverged = simulate_costs(
            model, np.stack([Ks[i] for i in live]), spec, stats, horizon, burn_in, disturbance, streams
        )
        for j, i in enumerate(live):
            if diverged[j]:
                results[i] = _unstable(stats, radii[i])
            else:
                results[i] = GainEvaluation(float(r0[j]), float(rc[j]), stats.delta_bar, True, radii[i])
    return results


def max_oracle(evaluation: GainEvaluation, stats: NoiseStats, spec: CostSpec) -> float:
    """Maximizer of the affine Lagrangian over ``[0, Lambda]``; ties go to 0."""
    if not evaluation.finite:
        raise ValueError("max oracle needs a finite evaluation")
    return 0.0 if evaluation.rc <= stats.delta_bar else float(spec.Lambda)


def mc_risk_original(
    model: DiscreteModel,
    K,
    spec: CostSpec,
    horizon: int,
    burn_in: int,
    disturbance,
    rng=None,
) -> float:
    """Time-averaged conditional variance of the one-step-ahead output cost.

    Estimates ``E[(y+^T Q y+ - E[y+^T Q y+ | x_t])^2]`` along a rollout, with
    the conditional mean taken in closed form from the gaussian moments.
    """
    if not isinstance(disturbance, GaussianDisturbance):
        raise TypeError("the original risk definition is only supported for gaussian disturbances")
    if not horizon > burn_in >= 0:
        raise ValueError("need horizon > burn_in >= 0")
    K = np.asarray(K, dtype=float)
    A_K = model.closed_loop(K)
    Q_c = state_weight(model.C, spec)
    w_bar = model.B_wd @ disturbance.mean
    tr_WQ = float(np.trace(model.B_wd @ disturbance.cov @ model.B_wd.T @ Q_c))
    gen = np.random.default_rng(_seed_sequence(rng))
    x = np.zeros(model.n_states)
    total = 0.0
    chunk = 5000
    for start in range(0, horizon, chunk):
        length = min(chunk, horizon - start)
        noise = disturbance.block(start, length, gen) @ model.B_wd.T
        xs = np.empty((length + 1, model.n_states))
        xs[0] = x
        for t in range(length):
            xs[t + 1] = A_K @ xs[t] + noise[t]
        x = xs[-1]
        if not np.isfinite(x).all() or np.abs(x).max() > OVERFLOW_GUARD:
            return math.inf
        lo = max(burn_in - start, 0)
        if lo < length:
            cur, nxt = xs[lo:-1], xs[lo + 1 :]
            pred = cur @ A_K.T + w_bar
            realized = np.einsum("ti,ij,tj->t", nxt, Q_c, nxt)
            expected = np.einsum("ti,ij,tj->t", pred, Q_c, pred) + tr_WQ
            total += float(np.sum((realized - expected) ** 2))
    return total / (horizon - burn_in)
