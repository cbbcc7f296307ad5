import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risklfc.lfc_model import AreaParams, DiscreteModel, GaussianDisturbance, build_discrete_model
from risklfc.risk_lqr import CostSpec, GainEvaluation, NoiseStats, gaussian_noise_stats
from risklfc.sgdmax import (
    Backtrack,
    IterationRecord,
    LyapunovEvaluator,
    MonteCarloEvaluator,
    StructuredGain,
    TrainConfig,
    TrainLog,
    sample_structured_direction,
    sgdmax_train,
    zopg,
    zopg_from_evaluation,
)
from risklfc.topology import InterconnectionGraph, StructurePattern, build_structure_pattern

FULL2 = StructurePattern(np.ones((2, 2), dtype=bool))


def null_stats(n=2, delta=0.0):
    return NoiseStats(np.zeros(n), np.zeros((n, n)), np.zeros(n), 0.0, np.eye(n), delta)


def inert_model(n=2):
    """A_K = 0 for every gain, so any iterate is stable."""
    z = np.zeros((n, n))
    return DiscreteModel(z, z.copy(), np.eye(n), np.eye(n), 1.0)


class QuadraticEvaluator:
    """Lagrangian ``r0 = 0.5 |K - K*|^2 + c`` with a constant risk value.

    Smoothing over a ball leaves the gradient of a quadratic unchanged, so the
    expected ZOPG estimate is exactly ``K - K*``.
    """

    def __init__(self, target, offset=5.0, rc=0.0, spec=None, stats=None):
        self.target, self.offset, self.rc = np.asarray(target, float), offset, rc
        n = self.target.shape[0]
        self.spec = spec or CostSpec(np.eye(n), np.eye(n), 0.0, 0.0)
        self.stats = stats or null_stats(n)

    def evaluate(self, Ks, seeds=None):
        return [
            GainEvaluation(0.5 * float(np.sum((K - self.target) ** 2)) + self.offset, self.rc,
                           self.stats.delta_bar, True, 0.0)
            for K in Ks
        ]


def lfc2(include_frequency=True, std=1.0):
    graph = InterconnectionGraph.chain(2)
    model = build_discrete_model(AreaParams(), graph, include_frequency=include_frequency)
    spec = CostSpec(np.eye(2), 0.1 * np.eye(2), 0.0, 5.0)
    noise = GaussianDisturbance.isotropic(2, std)
    return graph, model, spec, noise, gaussian_noise_stats(model, noise, spec)


class TestStructuredGain:
    def test_rejects_masked_entries(self):
        pattern = build_structure_pattern(InterconnectionGraph.chain(3))
        values = np.zeros((3, 3))
        values[0, 2] = 1e-300
        with pytest.raises(ValueError):
            StructuredGain(values, pattern)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            StructuredGain(np.zeros((3, 3)), FULL2)

    def test_read_only(self):
        K = StructuredGain.zeros(FULL2)
        with pytest.raises(ValueError):
            K.values[0, 0] = 1.0

    def test_json_roundtrip(self):
        pattern = build_structure_pattern(InterconnectionGraph.chain(3))
        K = StructuredGain.projected(np.random.default_rng(0).standard_normal((3, 3)), pattern)
        obj = K.to_json()
        assert obj["rows"] == 3 and obj["cols"] == 3
        assert obj["mask"] == [[1, 1, 0], [1, 1, 1], [0, 1, 1]]
        back = StructuredGain.from_json(obj)
        np.testing.assert_array_equal(back.values, K.values)
        assert back.pattern == pattern

    def test_json_bad_dims(self):
        obj = StructuredGain.zeros(FULL2).to_json()
        obj["rows"] = 3
        with pytest.raises(ValueError):
            StructuredGain.from_json(obj)


class TestDirections:
    def test_single_entry(self):
        mask = np.zeros((2, 3), dtype=bool)
        mask[1, 2] = True
        U = sample_structured_direction(StructurePattern(mask), np.random.default_rng(0))
        assert abs(U[1, 2]) == 1.0 and np.count_nonzero(U) == 1

    @settings(max_examples=50)
    @given(st.integers(1, 7), st.integers(0, 2**32 - 1))
    def test_unit_norm_on_support(self, n, seed):
        pattern = build_structure_pattern(InterconnectionGraph.chain(n))
        U = sample_structured_direction(pattern, np.random.default_rng(seed))
        assert np.linalg.norm(U) == pytest.approx(1.0, abs=1e-14)
        assert not U[~pattern.mask].any()

    def test_symmetric(self):
        pattern = build_structure_pattern(InterconnectionGraph.chain(3))
        rng = np.random.default_rng(11)
        draws = np.array([sample_structured_direction(pattern, rng) for _ in range(100_000)])
        # each entry has variance 1/n_nonzero; the mean of 1e5 draws is within 5 standard errors of 0
        se = math.sqrt(1 / pattern.n_nonzero / len(draws))
        assert np.abs(draws.mean(axis=0)).max() < 5 * se


class TestZOPG:
    def test_zero_lagrangian(self):
        ev = QuadraticEvaluator(np.zeros((2, 2)), offset=0.0)
        U = np.array([[1.0, 0.0], [0.0, 0.0]])
        est = zopg(ev, StructuredGain.zeros(FULL2), U, 1e-8)
        assert np.abs(est.gradient).max() < 1e-6

    def test_formula(self):
        ev = GainEvaluation(2.0, 0.0, 0.0, True, 0.5)
        U = np.zeros((4, 4))
        U[0, 0] = 1.0
        est = zopg_from_evaluation(ev, U, 0.1, 10, CostSpec(np.eye(4), np.eye(4), 0.0, 1.0), null_stats(4))
        assert est.gradient[0, 0] == pytest.approx(200.0)
        assert est.lam == 0.0 and est.lagrangian == 2.0

    def test_constraint_active(self):
        spec = CostSpec(np.eye(2), np.eye(2), 1.0, 3.0)
        ev = GainEvaluation(2.0, 4.0, 1.0, True, 0.5)
        U = np.eye(2) / math.sqrt(2)
        est = zopg_from_evaluation(ev, U, 0.5, 4, spec, null_stats(2, 1.0))
        assert est.lam == 3.0
        assert est.lagrangian == pytest.approx(2.0 + 3.0 * (4.0 - 1.0))
        np.testing.assert_allclose(est.gradient, (4 / 0.5) * est.lagrangian * U)

    def test_unstable_sentinel(self):
        ev = GainEvaluation(math.inf, math.inf, 0.0, False, 1.5)
        est = zopg_from_evaluation(ev, np.eye(2), 0.1, 4, CostSpec(np.eye(2), np.eye(2)), null_stats())
        assert not est.stable and est.lagrangian == math.inf

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            zopg(QuadraticEvaluator(np.zeros((2, 2))), StructuredGain.zeros(FULL2), np.eye(2), 0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_estimate_is_multiple_of_direction(self, seed):
        graph, model, spec, _, stats = lfc2()
        pattern = build_structure_pattern(graph)
        U = sample_structured_direction(pattern, np.random.default_rng(seed))
        est = zopg(LyapunovEvaluator(model, spec, stats), StructuredGain.zeros(pattern), U, 0.05)
        assert est.stable
        np.testing.assert_allclose(est.gradient, (pattern.n_nonzero / 0.05) * est.lagrangian * U)

    def test_unbiased_on_quadratic(self):
        # independent one-point samples: each coordinate mean within 4 standard errors of the exact gradient
        target = np.array([[0.3, -0.2], [0.1, 0.4]])
        ev = QuadraticEvaluator(target, offset=1.0)
        K = StructuredGain.zeros(FULL2)
        rng = np.random.default_rng(2024)
        samples = np.array(
            [zopg(ev, K, sample_structured_direction(FULL2, rng), 0.2).gradient for _ in range(40_000)]
        )
        mean, se = samples.mean(axis=0), samples.std(axis=0) / math.sqrt(len(samples))
        z = np.abs(mean - (K.values - target)) / se
        assert z.max() < 4.0


class TestTrainConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"r": 0.0}, {"M": 0}, {"J": 0}, {"eta": -1.0}, {"horizon": 10, "burn_in": 10},
            {"n_rollouts": 0}, {"evaluator": "exact"}, {"log_evaluator": "x"},
            {"backtrack": Backtrack(shrink=1.0)}, {"backtrack": Backtrack(max_tries=0)}, {"snapshot_every": 0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_log_monotone(self):
        log = TrainLog()
        log.append(IterationRecord(0, 1, 0, 0, math.nan, 0.5, math.nan))
        with pytest.raises(ValueError):
            log.append(IterationRecord(0, 1, 0, 0, math.nan, 0.5, math.nan))


class TestTraining:
    def test_zero_step_returns_K0(self):
        graph, model, spec, _, stats = lfc2()
        K0 = StructuredGain.projected(0.1 * np.ones((2, 2)), build_structure_pattern(graph))
        K, log = sgdmax_train(model, K0, TrainConfig(eta=0.0, J=1, M=4, evaluator="lyapunov"), spec, stats)
        np.testing.assert_array_equal(K.values, K0.values)
        assert [r.iteration for r in log.records] == [0, 1]

    def test_unstable_K0(self):
        graph, model, spec, _, stats = lfc2()
        K0 = StructuredGain.projected(-50 * np.ones((2, 2)), build_structure_pattern(graph))
        with pytest.raises(ValueError):
            sgdmax_train(model, K0, TrainConfig(J=1, M=2, evaluator="lyapunov"), spec, stats)

    def test_mc_needs_disturbance(self):
        graph, model, spec, _, stats = lfc2()
        with pytest.raises(ValueError):
            sgdmax_train(model, StructuredGain.zeros(build_structure_pattern(graph)), TrainConfig(J=1, M=2), spec, stats)

    def test_converges_on_quadratic(self):
        target = np.array([[0.5, -0.25], [0.75, 0.1]])
        ev = QuadraticEvaluator(target)
        cfg = TrainConfig(eta=0.02, r=0.1, M=20, J=400, antithetic=True, snapshot_every=50)
        K, log = sgdmax_train(inert_model(), StructuredGain.zeros(FULL2), cfg, ev.spec, ev.stats, evaluator=ev)
        np.testing.assert_allclose(K.values, target, atol=0.02)
        assert [j for j, _ in log.snapshots] == list(range(0, 401, 50))

    def test_pattern_lambda_and_determinism(self):
        graph = InterconnectionGraph.chain(3)
        model = build_discrete_model(AreaParams(), graph, include_frequency=True)
        noise = GaussianDisturbance.isotropic(3, 30.0)
        spec = CostSpec(np.eye(3), 0.1 * np.eye(3), 0.0, 2.0)
        stats = gaussian_noise_stats(model, noise, spec)
        pattern = build_structure_pattern(graph)
        cfg = TrainConfig(eta=1e-4, r=0.1, M=6, J=6, horizon=600, burn_in=100, master_seed=3, snapshot_every=2,
                          log_evaluator="lyapunov")
        K_a, log_a = sgdmax_train(model, StructuredGain.zeros(pattern), cfg, spec, stats, noise)
        K_b, log_b = sgdmax_train(model, StructuredGain.zeros(pattern), cfg, spec, stats, noise)
        np.testing.assert_array_equal(K_a.values, K_b.values)
        assert log_a.records == log_b.records
        for _, K in log_a.snapshots:
            assert not K.values[~pattern.mask].any()
        for rec in log_a.records:
            assert rec.lam in (0.0, spec.Lambda)
            assert rec.spectral_radius < 1.0
            assert math.isnan(rec.elapsed_s)
        assert not np.array_equal(K_a.values, 0.0)

    def test_seed_changes_result(self):
        target = np.ones((2, 2))
        ev = QuadraticEvaluator(target)
        runs = [
            sgdmax_train(inert_model(), StructuredGain.zeros(FULL2), TrainConfig(eta=0.01, M=3, J=3, master_seed=s),
                         ev.spec, ev.stats, evaluator=ev)[0].values
            for s in (0, 1)
        ]
        assert not np.array_equal(*runs)

    def test_backtracking_shrinks_step(self):
        # a huge step lands outside the stability region and must be retried
        graph, model, spec, _, stats = lfc2(include_frequency=False)
        K0 = StructuredGain.zeros(build_structure_pattern(graph))
        cfg = TrainConfig(eta=1e3, r=0.01, M=4, J=2, evaluator="lyapunov", backtrack=Backtrack(True, 0.1, 30))
        K, log = sgdmax_train(model, K0, cfg, spec, stats)
        assert log.records[1].tries > 1 and log.records[1].accepted
        assert all(r.spectral_radius < 1 for r in log.records)

    def test_backtracking_exhausted_keeps_iterate(self):
        graph, model, spec, _, stats = lfc2(include_frequency=False)
        K0 = StructuredGain.zeros(build_structure_pattern(graph))
        cfg = TrainConfig(eta=1e6, r=0.01, M=2, J=1, evaluator="lyapunov", backtrack=Backtrack(True, 0.5, 2))
        K, log = sgdmax_train(model, K0, cfg, spec, stats)
        np.testing.assert_array_equal(K.values, K0.values)
        assert not log.records[1].accepted and log.records[1].tries == 2

    def test_callback_and_wall_time(self):
        ev = QuadraticEvaluator(np.zeros((2, 2)))
        seen = []
        cfg = TrainConfig(eta=0.01, M=2, J=3, record_wall_time=True)
        _, log = sgdmax_train(inert_model(), StructuredGain.zeros(FULL2), cfg, ev.spec, ev.stats, evaluator=ev,
                              callback=lambda rec, K: seen.append(rec.iteration))
        assert seen == [1, 2, 3]
        assert all(r.elapsed_s >= 0 for r in log.records)

    def test_mc_evaluator_interface(self):
        graph, model, spec, noise, stats = lfc2()
        ev = MonteCarloEvaluator(model, spec, stats, noise, horizon=500, burn_in=50)
        out = ev.evaluate([np.zeros((2, 2)), -80 * np.ones((2, 2))], [0, 1])
        assert out[0].stable and not out[1].stable
