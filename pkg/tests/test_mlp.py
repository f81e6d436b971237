"""
Tests for the numpy MLP, Adam, training and the ensemble
"""

import math

import numpy as np
import pytest

from config import TrainingConfig
from dataset import NormStats, SampleSet, apply_norm, compute_norm_stats, denormalize_targets, split
from mlp import (
    AdamState,
    Ensemble,
    MlpWeights,
    adam_step,
    confidence_interval,
    evaluate_mse,
    forward,
    grad,
    init_weights,
    predict,
    t_critical,
    train_ensemble,
    train_member,
)
from utils import DataError


IDENTITY_NORM = NormStats(input_mean=0.0, input_std=1.0, target_mean=0.0, target_std=1.0)


def zero_weights(sizes=(125, 128, 64, 1)):
    return MlpWeights(
        weights=[np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
        biases=[np.zeros(o) for o in sizes[1:]],
    )


def constant_member(value, window=4):
    """Network whose output is the constant `value`"""
    weights = zero_weights((window, 3, 2, 1))
    weights.biases[-1][:] = value
    return weights


def synthetic_samples(n, window, seed):
    rng = np.random.default_rng(seed)
    windows = rng.normal(size=(n, window))
    targets = windows[:, -1] * 0.5 + windows[:, -2] * 0.25
    return SampleSet(windows, targets, np.zeros(n, dtype=int), np.arange(n))


class TestForward:
    def test_default_shapes(self):
        weights = init_weights((125, 128, 64, 1), np.random.default_rng(0))
        assert [w.shape for w in weights.weights] == [(128, 125), (64, 128), (1, 64)]
        assert [b.shape for b in weights.biases] == [(128,), (64,), (1,)]
        assert weights.layer_sizes == (125, 128, 64, 1)

    def test_zero_network_outputs_zero(self):
        assert forward(zero_weights(), np.ones(125)) == 0.0

    def test_output_bias_passes_through(self):
        weights = zero_weights()
        weights.biases[-1][0] = 1.5
        assert forward(weights, np.random.default_rng(1).normal(size=125)) == 1.5

    def test_hand_built_relu_network(self):
        weights = MlpWeights(
            weights=[np.eye(2), np.eye(2), np.array([[1.0, 1.0]])],
            biases=[np.zeros(2), np.zeros(2), np.zeros(1)],
        )
        assert forward(weights, np.array([-1.0, 2.0])) == 2.0

    def test_batch_matches_single(self):
        weights = init_weights((6, 5, 3, 1), np.random.default_rng(2))
        x = np.random.default_rng(3).normal(size=(4, 6))
        batch = forward(weights, x)
        assert np.allclose(batch, [forward(weights, row) for row in x], rtol=0, atol=1e-14)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            forward(zero_weights(), np.ones(124))


class TestGrad:
    def test_zero_error_zero_gradient(self):
        weights = init_weights((5, 4, 3, 1), np.random.default_rng(4))
        x = np.random.default_rng(5).normal(size=(6, 5))
        loss, grads = grad(weights, x, forward(weights, x))
        assert loss == 0.0
        assert all(np.all(g == 0) for g in grads.arrays())

    def test_output_bias_gradient(self):
        weights = init_weights((5, 4, 3, 1), np.random.default_rng(6))
        x = np.random.default_rng(7).normal(size=5)
        prediction = forward(weights, x)
        _, grads = grad(weights, x, np.array([prediction - 0.7]))
        assert grads.biases[-1][0] == pytest.approx(2 * 0.7)

    def test_empty_batch_rejected(self):
        weights = init_weights((5, 4, 3, 1), np.random.default_rng(6))
        with pytest.raises(ValueError):
            grad(weights, np.empty((0, 5)), np.empty(0))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        sizes = (6, 5, 4, 1)
        weights = init_weights(sizes, rng)
        for b in weights.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=(8, 6))
        y = rng.normal(size=8)
        _, grads = grad(weights, x, y)

        def relu_pattern(w):
            h, pattern = x, []
            for layer in range(len(w.weights) - 1):
                z = h @ w.weights[layer].T + w.biases[layer]
                pattern.append(z > 0)
                h = np.maximum(z, 0.0)
            return pattern

        def loss_and_pattern(w):
            return np.mean((forward(w, x) - y) ** 2), relu_pattern(w)

        h = 1e-5
        worst = 0.0
        for param, g in zip(weights.arrays(), grads.arrays()):
            for index in np.ndindex(param.shape):
                original = param[index]
                param[index] = original + h
                loss_plus, pattern_plus = loss_and_pattern(weights)
                param[index] = original - h
                loss_minus, pattern_minus = loss_and_pattern(weights)
                param[index] = original
                # a ReLU switched inside the stencil
                if any(np.any(a != b) for a, b in zip(pattern_plus, pattern_minus)):
                    continue
                numeric = (loss_plus - loss_minus) / (2 * h)
                scale = max(abs(numeric), abs(g[index]), 1e-6)
                worst = max(worst, abs(numeric - g[index]) / scale)
        assert worst < 1e-4


class TestAdam:
    def test_zero_gradient_leaves_weights(self):
        weights = init_weights((3, 2, 2, 1), np.random.default_rng(0))
        before = weights.clone()
        state = AdamState.for_weights(weights)
        zeros = MlpWeights(
            weights=[np.zeros_like(w) for w in weights.weights],
            biases=[np.zeros_like(b) for b in weights.biases],
        )
        state, weights = adam_step(state, weights, zeros)
        assert state.t == 1
        assert all(np.array_equal(a, b) for a, b in zip(weights.arrays(), before.arrays()))

    def test_first_step_moves_by_learning_rate(self):
        weights = MlpWeights(weights=[np.array([[0.3]])], biases=[np.array([0.0])])
        grads = MlpWeights(weights=[np.array([[-4.2]])], biases=[np.array([0.0])])
        state = AdamState.for_weights(weights)
        adam_step(state, weights, grads)
        assert weights.weights[0][0, 0] == pytest.approx(0.3 + 1e-3, rel=1e-6)

    def test_minimises_quadratic(self):
        weights = MlpWeights(weights=[np.array([[1.0]])], biases=[np.array([0.0])])
        state = AdamState.for_weights(weights, TrainingConfig(learning_rate=0.01))
        for _ in range(100):
            w = weights.weights[0]
            adam_step(state, weights, MlpWeights(weights=[2 * w], biases=[np.zeros(1)]))
        assert abs(weights.weights[0][0, 0]) < 0.5

    def test_shape_mismatch_rejected(self):
        weights = MlpWeights(weights=[np.array([[1.0]])], biases=[np.array([0.0])])
        grads = MlpWeights(weights=[np.zeros((2, 1))], biases=[np.array([0.0])])
        with pytest.raises(ValueError):
            adam_step(AdamState.for_weights(weights), weights, grads)


class TestTrainMember:
    def test_learns_constant_target(self):
        # idle module: constant losses and a constant sink temperature
        config = TrainingConfig(window=8, hidden_sizes=(16, 8), epochs=20, batch_size=16)
        samples = SampleSet(
            np.full((640, 8), 1500.0), np.full(640, 25.0), np.zeros(640, dtype=int), np.arange(640)
        )
        train, val = split(samples, 0.8, np.random.default_rng(0))
        stats = compute_norm_stats(train)
        result = train_member(apply_norm(train, stats), apply_norm(val, stats), seed=3, config=config)
        assert math.sqrt(result.best_val_mse) < 1e-2

        predicted = denormalize_targets(np.array([forward(result.weights, np.zeros(8))]), stats)
        assert predicted[0] == pytest.approx(25.0, abs=1e-3)

    def test_fits_linear_target(self):
        config = TrainingConfig(window=8, hidden_sizes=(16, 8), epochs=60, batch_size=16)
        train = synthetic_samples(512, 8, 0)
        val = synthetic_samples(128, 8, 1)
        result = train_member(train, val, seed=3, config=config)
        assert result.best_val_mse < 0.1 * np.var(val.targets)

    def test_returns_best_checkpoint(self, tiny_training):
        train = synthetic_samples(256, 8, 2)
        val = synthetic_samples(64, 8, 3)
        result = train_member(train, val, seed=1, config=tiny_training)
        assert len(result.history) == tiny_training.epochs
        assert result.best_val_mse == min(h.val_mse for h in result.history)
        assert result.best_val_mse <= result.history[-1].val_mse
        assert evaluate_mse(result.weights, val) == pytest.approx(result.best_val_mse)

    def test_deterministic(self, tiny_training):
        train = synthetic_samples(128, 8, 2)
        val = synthetic_samples(32, 8, 3)
        a = train_member(train, val, seed=5, config=tiny_training)
        b = train_member(train, val, seed=5, config=tiny_training)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights.arrays(), b.weights.arrays()))

    def test_empty_sets_rejected(self, tiny_training):
        with pytest.raises(DataError):
            train_member(SampleSet.empty(8), synthetic_samples(4, 8, 0), 0, tiny_training)


class TestEnsemble:
    def test_members_distinct_and_reproducible(self, tiny_training):
        train = synthetic_samples(128, 8, 4)
        val = synthetic_samples(32, 8, 5)
        first = train_ensemble(train, val, 10, IDENTITY_NORM, tiny_training)
        second = train_ensemble(train, val, 10, IDENTITY_NORM, tiny_training)
        assert first.member_seeds == [10, 11, 12]
        assert first.digest() == second.digest()
        assert not np.array_equal(first.members[0].weights[0], first.members[1].weights[0])

    def test_parallel_matches_sequential(self, tiny_training):
        train = synthetic_samples(128, 8, 4)
        val = synthetic_samples(32, 8, 5)
        sequential = train_ensemble(train, val, 0, IDENTITY_NORM, tiny_training, n_jobs=1)
        parallel = train_ensemble(train, val, 0, IDENTITY_NORM, tiny_training, n_jobs=2)
        assert sequential.digest() == parallel.digest()

    def test_member_rmse_in_target_units(self, tiny_training):
        norm = NormStats(input_mean=0.0, input_std=1.0, target_mean=25.0, target_std=2.0)
        train = synthetic_samples(128, 8, 4)
        val = synthetic_samples(32, 8, 5)
        ensemble = train_ensemble(train, val, 0, norm, tiny_training)
        member = train_member(train, val, 0, tiny_training)
        assert ensemble.member_val_rmse[0] == pytest.approx(2.0 * math.sqrt(member.best_val_mse))

    def test_save_load_predicts_identically(self, tmp_path, tiny_training):
        norm = NormStats(input_mean=500.0, input_std=300.0, target_mean=24.0, target_std=1.7)
        ensemble = train_ensemble(
            synthetic_samples(64, 8, 6), synthetic_samples(16, 8, 7), 0, norm, tiny_training
        )
        ensemble.metadata = {"note": "fixture"}
        path = tmp_path / "model.json"
        ensemble.save(path)
        loaded = Ensemble.load(path)

        windows = np.random.default_rng(8).uniform(0, 2000, size=(20, 8))
        mean_a, s_a, _ = predict(ensemble, windows)
        mean_b, s_b, _ = predict(loaded, windows)
        assert np.array_equal(mean_a, mean_b) and np.array_equal(s_a, s_b)
        assert loaded.metadata == {"note": "fixture"}
        assert loaded.digest() == ensemble.digest()

    def test_bad_model_file(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"format_version": 1, "members": []}')
        with pytest.raises(DataError):
            Ensemble.load(path)


class TestPredict:
    def test_identical_members_have_zero_spread(self):
        ensemble = Ensemble(
            members=[constant_member(0.5)] * 3, norm=IDENTITY_NORM, member_seeds=[0, 1, 2]
        )
        mean, s, members = predict(ensemble, np.zeros(4))
        assert mean == 0.5 and s == 0.0 and len(members) == 3

    def test_two_member_spread(self):
        ensemble = Ensemble(
            members=[constant_member(21.0), constant_member(23.0)],
            norm=IDENTITY_NORM,
            member_seeds=[0, 1],
        )
        mean, s, _ = predict(ensemble, np.zeros(4))
        assert mean == pytest.approx(22.0)
        assert s == pytest.approx(math.sqrt(2.0))

    def test_spread_matches_two_pass_variance(self):
        rng = np.random.default_rng(9)
        values = rng.normal(22, 1, size=10)
        ensemble = Ensemble(
            members=[constant_member(v) for v in values], norm=IDENTITY_NORM, member_seeds=list(range(10))
        )
        _, s, _ = predict(ensemble, np.zeros(4))
        mean = sum(values) / 10
        naive = math.sqrt(sum((v - mean) ** 2 for v in values) / 9)
        assert s == pytest.approx(naive, abs=1e-12)

    def test_denormalises_output(self):
        norm = NormStats(input_mean=0.0, input_std=1.0, target_mean=20.0, target_std=2.0)
        ensemble = Ensemble(members=[constant_member(1.0)] * 2, norm=norm, member_seeds=[0, 1])
        mean, _, _ = predict(ensemble, np.zeros(4))
        assert mean == pytest.approx(22.0)


class TestConfidenceInterval:
    def test_t_statistic(self):
        assert t_critical(0.99, 9) == pytest.approx(3.2498, abs=1e-4)

    def test_zero_spread(self):
        assert confidence_interval(22.0, 0.0, 10) == (22.0, 22.0)

    def test_half_width(self):
        lo, hi = confidence_interval(22.0, 1.0, 10, 0.99)
        assert hi - 22.0 == pytest.approx(1.0277, abs=1e-4)
        assert 22.0 - lo == pytest.approx(1.0277, abs=1e-4)

    def test_vectorised(self):
        lo, hi = confidence_interval(np.array([20.0, 21.0]), np.array([0.0, 1.0]), 10)
        assert lo[0] == hi[0] == 20.0 and hi[1] > 21.0

    def test_needs_two_members(self):
        with pytest.raises(ValueError):
            confidence_interval(22.0, 1.0, 1)
