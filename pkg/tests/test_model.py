import numpy as np
import pytest

from densketch.model import (AdamState, ConditionalSketchModel, ModelConfig,
                             TrainConfig, backward_and_step, forward,
                             init_model, kl_sketch_loss, load_checkpoint,
                             log_softmax_width, save_checkpoint,
                             softmax_width, train_model)
from densketch.model import _backward, _forward_full, _loss_and_grad, _param_pairs

from oracles import ref_kl_sketch_loss

TINY = ModelConfig(hidden_width=8, hidden_layers=2, residual=True, batch_norm=True)


def tiny_params(seed=0, input_dim=6):
    return init_model(input_dim, 2, 4, TINY, seed=seed)


def perturbed_point(attempt, batch=3, input_dim=6):
    """Random parameters + batch, regenerated until no pre-activation sits
    within 1e-3 of the leaky-ReLU kink (finite differences at h=1e-5 are
    only valid where the loss is locally smooth)."""
    while True:
        params = tiny_params(seed=100 + attempt, input_dim=input_dim)
        rng = np.random.default_rng(200 + attempt)
        for _, arr in _param_pairs(params):
            arr += 0.3 * rng.standard_normal(arr.shape)
        X = rng.standard_normal((batch, input_dim))
        T = np.abs(rng.standard_normal((batch, 8)))
        T[0, :4] = 0.0   # one zero-mass slice
        attempt += 1
        _, caches = _forward_full(params, X, "train")
        if min(np.abs(c["pre"]).min() for c in caches[:-1]) > 1e-3:
            return params, X, T, attempt


def numeric_grads(params, X, T, h=1e-5):
    def loss_at():
        logits, _ = _forward_full(params, X, "train")
        return _loss_and_grad(logits, T, 2, 4, want_grad=False)[0]

    grads = {}
    for name, arr in _param_pairs(params):
        fd = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss_at()
            arr[idx] = orig - h
            down = loss_at()
            arr[idx] = orig
            fd[idx] = (up - down) / (2 * h)
        grads[name] = fd
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


class TestForward:
    def test_zero_weight_network_outputs_biases(self):
        params = tiny_params()
        for _, arr in _param_pairs(params):
            arr[...] = 0.0
        params.out_bias[...] = np.arange(8, dtype=float)
        logits = forward(params, np.ones((2, 6)), "eval")
        np.testing.assert_array_equal(logits, np.tile(np.arange(8.0), (2, 1)))

    def test_eval_mode_is_deterministic(self):
        params = tiny_params(seed=3)
        X = np.random.default_rng(1).standard_normal((4, 6))
        np.testing.assert_array_equal(forward(params, X), forward(params, X))

    def test_input_width_checked(self):
        with pytest.raises(ValueError, match="input dim"):
            forward(tiny_params(), np.ones((1, 5)))

    def test_residual_block_with_zeroed_body_is_identity(self):
        # hidden block 1 skips; zeroing its body makes it a pure pass-through
        cfg = ModelConfig(hidden_width=8, hidden_layers=2, residual=True,
                          batch_norm=True)
        two = init_model(6, 2, 4, cfg, seed=5)
        assert two.blocks[1].residual
        two.blocks[1].weight[...] = 0.0
        two.blocks[1].bias[...] = 0.0

        one = init_model(6, 2, 4,
                         ModelConfig(hidden_width=8, hidden_layers=1,
                                     residual=True, batch_norm=True), seed=5)
        one.blocks[0].weight[...] = two.blocks[0].weight
        one.blocks[0].bias[...] = two.blocks[0].bias
        one.out_weight[...] = two.out_weight
        one.out_bias[...] = two.out_bias

        X = np.random.default_rng(2).standard_normal((3, 6))
        np.testing.assert_allclose(forward(two, X), forward(one, X), atol=1e-12)

    def test_first_block_never_residual(self):
        cfg = ModelConfig(hidden_width=6, hidden_layers=3, residual=True,
                          batch_norm=False)
        params = init_model(6, 1, 4, cfg, seed=0)   # input width == hidden width
        assert [b.residual for b in params.blocks] == [False, True, True]


class TestLoss:
    def test_matching_distributions_give_zero(self):
        target = np.array([0.2, 0.3, 0.5, 0.0,  0.25, 0.25, 0.25, 0.25])
        logits = np.log(np.where(target == 0, 1e-300, target))
        assert kl_sketch_loss(logits, target, 2, 4) == pytest.approx(0.0, abs=1e-9)

    def test_one_hot_versus_uniform_is_ln2(self):
        # W=2: p=[1,0] against uniform softmax([0,0]) per slice
        assert kl_sketch_loss(np.zeros(2), np.array([1.0, 0.0]), 1, 2) == \
            pytest.approx(np.log(2))

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            logits = rng.standard_normal(12) * 3
            target = np.abs(rng.standard_normal(12))
            target[rng.random(12) < 0.3] = 0.0
            got = kl_sketch_loss(logits, target, 3, 4)
            want = ref_kl_sketch_loss(logits.tolist(), target.tolist(), 3, 4)
            assert got == pytest.approx(want, abs=1e-10)

    def test_target_scaling_invariance(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal(8)
        target = np.abs(rng.standard_normal(8))
        base = kl_sketch_loss(logits, target, 2, 4)
        for c in (1e-6, 0.5, 3.0, 1e6):
            assert kl_sketch_loss(logits, c * target, 2, 4) == \
                pytest.approx(base, rel=1e-12)

    def test_zero_mass_slices_excluded_from_mean(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal(8)
        target = np.zeros(8)
        target[4:] = [1.0, 2.0, 0.0, 1.0]
        whole = kl_sketch_loss(logits, target, 2, 4)
        only_slice = kl_sketch_loss(logits[4:], target[4:], 1, 4)
        assert whole == pytest.approx(only_slice, rel=1e-12)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            logits = rng.standard_normal(8) * 5
            target = np.abs(rng.standard_normal(8))
            assert kl_sketch_loss(logits, target, 2, 4) >= 0

    def test_negative_targets_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            kl_sketch_loss(np.zeros(4), np.array([1.0, -1.0, 0.0, 0.0]), 1, 4)

    def test_softmax_slices_sum_to_one(self):
        rng = np.random.default_rng(7)
        logits = rng.standard_normal((10, 12)) * 50   # large logits: stability
        probs = softmax_width(logits, 3, 4)
        np.testing.assert_allclose(probs.reshape(10, 3, 4).sum(axis=2), 1.0,
                                   atol=1e-9)

    def test_log_softmax_is_stable_at_extremes(self):
        logits = np.array([[1e4, -1e4, 0.0, 5.0]])
        out = log_softmax_width(logits, 1, 4)
        assert np.isfinite(out).all()


class TestGradients:
    def test_finite_difference_agreement(self):
        attempt = 0
        for _ in range(5):
            params, X, T, attempt = perturbed_point(attempt)
            logits, caches = _forward_full(params, X, "train")
            _, grad_logits = _loss_and_grad(logits, T, 2, 4, want_grad=True)
            analytic = _backward(params, caches, grad_logits)
            assert max_relative_error(analytic, numeric_grads(params, X, T)) < 1e-4

    def test_gradients_without_bn_or_residual(self):
        cfg = ModelConfig(hidden_width=7, hidden_layers=2, residual=False,
                          batch_norm=False)
        params = init_model(5, 2, 4, cfg, seed=11)
        rng = np.random.default_rng(12)
        X = rng.standard_normal((4, 5))
        T = np.abs(rng.standard_normal((4, 8)))
        logits, caches = _forward_full(params, X, "train")
        _, grad_logits = _loss_and_grad(logits, T, 2, 4, want_grad=True)
        analytic = _backward(params, caches, grad_logits)
        assert max_relative_error(analytic, numeric_grads(params, X, T)) < 1e-4


class TestOptimizer:
    def test_zero_learning_rate_is_a_no_op(self):
        params = tiny_params(seed=8)
        before = {name: arr.copy() for name, arr in _param_pairs(params)}
        state = AdamState(params)
        backward_and_step(params, np.ones((2, 6)), np.ones((2, 8)), 0.0, state)
        for name, arr in _param_pairs(params):
            np.testing.assert_array_equal(arr, before[name])

    def test_memorizes_single_pair(self):
        params = tiny_params(seed=9)
        rng = np.random.default_rng(10)
        X = rng.standard_normal((1, 6))
        T = np.zeros((1, 8))
        T[0, 1] = 1.0
        T[0, 6] = 1.0
        state = AdamState(params)
        for _ in range(500):
            loss = backward_and_step(params, X, T, 0.05, state)
        assert loss < 1e-3

    def test_non_finite_loss_aborts(self):
        params = tiny_params(seed=13)
        params.out_weight[...] = np.inf
        state = AdamState(params)
        snap = params.out_bias.copy()
        with np.errstate(invalid="ignore"), \
                pytest.raises(FloatingPointError, match="non-finite"):
            backward_and_step(params, np.ones((1, 6)), np.ones((1, 8)), 0.1, state)
        np.testing.assert_array_equal(params.out_bias, snap)


class TestTraining:
    def make_dataset(self, n=64, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, 6))
        # learnable rule: sign of the first feature selects the hot bucket
        T = np.zeros((n, 8))
        hot = np.where(X[:, 0] > 0, 0, 2)
        T[np.arange(n), hot] = 1.0
        T[np.arange(n), 4 + hot] = 1.0
        return X, T

    def test_lr_schedule_follows_gamma(self):
        X, T = self.make_dataset()
        params = tiny_params(seed=1)
        cfg = TrainConfig(epochs=3, batch_size=32, learning_rate=0.004,
                          gamma=0.5, seed=0)
        _, history = train_model(X, T, params, cfg)
        assert [row["lr"] for row in history] == [0.004, 0.002, 0.001]
        assert [row["epoch"] for row in history] == [1, 2, 3]

    def test_single_epoch_single_batch_equals_one_manual_step(self):
        X, T = self.make_dataset(n=16, seed=2)
        cfg = TrainConfig(epochs=1, batch_size=16, learning_rate=0.01, seed=5)

        trained = tiny_params(seed=3)
        train_model(X, T, trained, cfg)

        manual = tiny_params(seed=3)
        order = np.random.default_rng(5).permutation(16)
        backward_and_step(manual, X[order], T[order], 0.01, AdamState(manual))

        for (_, a), (_, b) in zip(_param_pairs(trained), _param_pairs(manual)):
            np.testing.assert_array_equal(a, b)

    def test_loss_decreases_on_learnable_mapping(self):
        finals, firsts = [], []
        for seed in range(3):
            X, T = self.make_dataset(n=128, seed=seed)
            params = tiny_params(seed=seed)
            cfg = TrainConfig(epochs=8, batch_size=32, learning_rate=0.01,
                              gamma=0.9, seed=seed)
            _, history = train_model(X, T, params, cfg)
            firsts.append(history[0]["loss"])
            finals.append(history[-1]["loss"])
        assert np.median(finals) < np.median(firsts)

    def test_training_is_deterministic(self):
        X, T = self.make_dataset()
        cfg = TrainConfig(epochs=2, batch_size=16, learning_rate=0.01, seed=7)
        a = tiny_params(seed=4)
        b = tiny_params(seed=4)
        _, ha = train_model(X, T, a, cfg)
        _, hb = train_model(X, T, b, cfg)
        assert ha == hb
        for (_, pa), (_, pb) in zip(_param_pairs(a), _param_pairs(b)):
            np.testing.assert_array_equal(pa, pb)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train_model(np.zeros((0, 6)), np.zeros((0, 8)), tiny_params(),
                        TrainConfig())


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    params = tiny_params(seed=21)
    params.input_layout = [("m/last", 2, 4), ("m/history", 2, 4)]
    rng = np.random.default_rng(22)
    X = rng.standard_normal((8, 6))
    T = np.abs(rng.standard_normal((8, 8)))
    train_model(X, T, params, TrainConfig(epochs=2, batch_size=4, seed=1))

    path = tmp_path / "model.dsk"
    save_checkpoint(params, path, extra_meta={"task": "session"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"task": "session"}
    assert loaded.input_layout == params.input_layout
    for (name, a), (_, b) in zip(_param_pairs(params), _param_pairs(loaded)):
        np.testing.assert_array_equal(a, b, err_msg=name)
    for blk_a, blk_b in zip(params.blocks, loaded.blocks):
        np.testing.assert_array_equal(blk_a.run_mean, blk_b.run_mean)
        np.testing.assert_array_equal(blk_a.run_var, blk_b.run_var)
    Xe = rng.standard_normal((3, 6))
    np.testing.assert_array_equal(forward(params, Xe), forward(loaded, Xe))


def test_estimator_wrapper_fit_predict():
    from sklearn.base import clone
    rng = np.random.default_rng(30)
    X = rng.standard_normal((40, 6))
    Y = np.abs(rng.standard_normal((40, 8)))
    est = ConditionalSketchModel(output_depth=2, output_width=4, hidden_width=8,
                                 hidden_layers=2, epochs=2, batch_size=8,
                                 learning_rate=0.01, seed=0)
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()
    est.fit(X, Y)
    probs = est.predict(X[:5])
    assert probs.shape == (5, 8)
    np.testing.assert_allclose(probs.reshape(5, 2, 4).sum(axis=2), 1.0, atol=1e-9)
    assert len(est.history_) == 2
