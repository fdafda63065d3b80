import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spnsurrogate.errors import LoadError, NumericError, StructuralError, ValidationError
from spnsurrogate.nn import tensor as tn
from spnsurrogate.nn.checkpoint import header_bytes, load_checkpoint, save_checkpoint
from spnsurrogate.nn.optim import AdamState, adam_step
from spnsurrogate.nn.resnet import ResNet1D, ResNetConfig, init_params, param_shapes
from spnsurrogate.nn.tensor import Tensor
from spnsurrogate.nn.train import (TrainConfig, evaluate_loss, gradient_check, read_history, train,
                                   write_history)

TINY = ResNetConfig(F=6, k=3, B=2, p=0.2, d_in=3, d_out=2, T=9)


def naive_conv(x, w, b):
    """Direct same-padded cross-correlation with explicit loops."""
    B, C, T = x.shape
    O, _, k = w.shape
    pad = (k - 1) // 2
    out = np.zeros((B, O, T))
    for n in range(B):
        for o in range(O):
            for t in range(T):
                acc = b[o]
                for c in range(C):
                    for j in range(k):
                        s = t + j - pad
                        if 0 <= s < T:
                            acc += w[o, c, j] * x[n, c, s]
                out[n, o, t] = acc
    return out


class TestConv:
    def test_identity_kernel(self):
        x = np.arange(12.0).reshape(1, 3, 4)
        w = np.eye(3)[:, :, None]
        out, _ = tn.conv1d_forward(x, w, np.zeros(3))
        assert np.array_equal(out, x)

    def test_box_filter_example(self):
        out, _ = tn.conv1d_forward(np.array([[[1.0, 2, 3, 4]]]), np.ones((1, 1, 3)), np.zeros(1))
        assert out.ravel().tolist() == [3.0, 6.0, 9.0, 7.0]

    def test_matches_naive_loops(self, rng):
        x = rng.standard_normal((2, 3, 8))
        w = rng.standard_normal((4, 3, 5))
        b = rng.standard_normal(4)
        out, _ = tn.conv1d_forward(x, w, b)
        assert np.allclose(out, naive_conv(x, w, b), atol=1e-12)

    def test_gradient_finite_difference(self, rng):
        x = rng.standard_normal((2, 2, 6))
        w = rng.standard_normal((3, 2, 3))
        b = rng.standard_normal(3)
        g = rng.standard_normal((2, 3, 6))
        _, cols = tn.conv1d_forward(x, w, b)
        dx, dw, db = tn.conv1d_backward(g, x.shape, w, cols)
        f = lambda xx, ww, bb: float(np.sum(naive_conv(xx, ww, bb) * g))  # noqa: E731
        h = 1e-6
        for arr, grad, fn in ((x, dx, lambda a: f(a, w, b)), (w, dw, lambda a: f(x, a, b)),
                              (b, db, lambda a: f(x, w, a))):
            num = np.zeros_like(arr)
            for i in np.ndindex(arr.shape):
                up, dn = arr.copy(), arr.copy()
                up[i] += h
                dn[i] -= h
                num[i] = (fn(up) - fn(dn)) / (2 * h)
            assert np.allclose(grad, num, atol=1e-6)

    def test_shape_errors(self):
        with pytest.raises(StructuralError):
            tn.conv1d_forward(np.zeros((1, 2, 4)), np.zeros((1, 3, 3)), np.zeros(1))
        with pytest.raises(StructuralError):
            tn.conv1d_forward(np.zeros((1, 1, 4)), np.zeros((1, 1, 2)), np.zeros(1))


class TestOps:
    def test_mse_examples(self):
        assert float(tn.mse_loss(Tensor(np.array([[0.5, 0.5]])), [[0.5, 0.5]]).data) == 0.0
        assert float(tn.mse_loss(Tensor(np.array([[1.0, 0.0]])), [[0.0, 0.0]]).data) == 0.5
        with pytest.raises(StructuralError):
            tn.mse_loss(Tensor(np.zeros((1, 2))), np.zeros((2, 1)))

    def test_mse_gradient(self):
        p = Tensor(np.array([[1.0, 3.0]]), requires_grad=True)
        tn.mse_loss(p, [[0.0, 1.0]]).backward()
        assert p.grad.tolist() == [[1.0, 2.0]]

    def test_sigmoid_stable(self):
        s = tn.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
        assert s.tolist() == [0.0, 0.5, 1.0]

    def test_relu_and_gap_backward(self):
        x = Tensor(np.array([[[-1.0, 2.0, 3.0, -4.0]]]), requires_grad=True)
        y = tn.mean_over_time(tn.relu(x))
        assert y.data.tolist() == [[1.25]]
        y.backward(np.ones((1, 1)))
        assert x.grad.tolist() == [[[0.0, 0.25, 0.25, 0.0]]]

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        (x + x).backward(np.ones(1))
        assert x.grad.tolist() == [2.0]

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with tn.no_grad():
            y = tn.relu(x)
        assert not y.requires_grad

    def test_dropout_expectation(self):
        x = Tensor(np.full((100, 100), 3.0))
        rng = np.random.default_rng(0)
        outs = np.stack([tn.dropout(x, 0.2, rng).data for _ in range(100)])  # 1e6 mask entries
        assert abs(outs.mean() - 3.0) < 0.01
        kept = outs[outs > 0]
        assert np.allclose(kept, 3.0 / 0.8)
        assert abs((outs == 0).mean() - 0.2) < 0.002

    def test_dropout_off(self):
        x = Tensor(np.ones(5))
        assert tn.dropout(x, 0.0, np.random.default_rng(0)) is x
        assert tn.dropout(x, 0.5, None) is x


class TestResNet:
    def test_param_layout(self):
        shapes = param_shapes(ResNetConfig())
        assert shapes["proj.weight"] == (128, 14, 1)
        assert shapes["block3.weight"] == (128, 128, 5)
        assert shapes["head.weight"] == (128, 13)
        assert ResNet1D().num_parameters() == 128 * 14 + 128 + 3 * (128 * 128 * 5 + 128) + 128 * 13 + 13

    def test_zero_weights_give_half(self):
        params = {k: np.zeros(s, np.float32) for k, s in param_shapes(TINY).items()}
        m = ResNet1D(TINY, params)
        out = m.predict(np.random.default_rng(0).standard_normal((4, 9, 3)), "mc", np.random.default_rng(1))
        assert np.all(out == 0.5)

    def test_no_blocks_matches_manual_forward(self, rng):
        cfg = ResNetConfig(F=5, k=3, B=0, p=0.0, d_in=3, d_out=2, T=7)
        m = ResNet1D(cfg, rng=rng, dtype=np.float64)
        P = m.state_dict()
        x = rng.standard_normal((2, 7, 3))
        h = np.maximum(np.einsum("ntc,fc->nft", x, P["proj.weight"][:, :, 0]) + P["proj.bias"][None, :, None], 0)
        z = np.maximum(h.mean(axis=2), 0)
        expect = 1 / (1 + np.exp(-(z @ P["head.weight"] + P["head.bias"])))
        assert np.allclose(m.predict(x), expect, atol=1e-12)

    def test_residual_block_matches_manual(self, rng):
        cfg = ResNetConfig(F=4, k=3, B=1, p=0.0, d_in=2, d_out=3, T=6)
        m = ResNet1D(cfg, rng=rng, dtype=np.float64)
        P = m.state_dict()
        x = rng.standard_normal((3, 6, 2))
        h = np.maximum(naive_conv(x.transpose(0, 2, 1), P["proj.weight"], P["proj.bias"]), 0)
        h = h + np.maximum(naive_conv(h, P["block1.weight"], P["block1.bias"]), 0)
        z = np.maximum(h.mean(axis=2), 0)
        expect = 1 / (1 + np.exp(-(z @ P["head.weight"] + P["head.bias"])))
        assert np.allclose(m.predict(x), expect, atol=1e-12)

    def test_output_shape_and_range(self, rng):
        m = ResNet1D(TINY, rng=rng)
        out = m.predict(rng.standard_normal((5, 9, 3)) * 10, "mc", rng)
        assert out.shape == (5, 2) and np.all((out >= 0) & (out <= 1))

    def test_eval_mode_deterministic(self, rng):
        m = ResNet1D(TINY, rng=rng)
        x = rng.standard_normal((3, 9, 3))
        assert np.array_equal(m.predict(x), m.predict(x))

    def test_mc_mode_varies(self, rng):
        m = ResNet1D(TINY, rng=rng)
        x = rng.standard_normal((3, 9, 3))
        assert not np.array_equal(m.predict(x, "mc", rng), m.predict(x, "mc", rng))

    def test_bad_input(self, rng):
        m = ResNet1D(TINY, rng=rng)
        with pytest.raises(StructuralError):
            m.predict(np.zeros((1, 9, 4)))
        with pytest.raises(ValueError):
            m.forward(np.zeros((1, 9, 3)), "mc")
        with pytest.raises(ValueError):
            m.forward(np.zeros((1, 9, 3)), "sample")

    def test_non_finite_activation(self, rng):
        m = ResNet1D(TINY, rng=rng)
        with pytest.raises(NumericError):
            m.predict(np.full((1, 9, 3), np.nan))

    def test_bad_config(self):
        with pytest.raises(ValidationError):
            ResNetConfig(k=4)
        with pytest.raises(ValidationError):
            ResNetConfig(p=1.0)

    def test_init_is_seeded(self):
        a = init_params(TINY, np.random.default_rng(3))
        b = init_params(TINY, np.random.default_rng(3))
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert all(np.all(a[k] == 0) for k in a if k.endswith("bias"))


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = {"w": np.array([1.0, -2.0, 0.5])}
        adam_step(p, {"w": np.array([0.3, -4.0, 0.0])}, AdamState(lr=0.1))
        assert np.allclose(p["w"], [0.9, -1.9, 0.5], atol=1e-7)

    def test_against_reference_recurrence(self, rng):
        grads = rng.standard_normal((5, 4))
        p = {"w": np.zeros(4)}
        st_ = AdamState(lr=0.01)
        m = v = np.zeros(4)
        ref = np.zeros(4)
        for t, g in enumerate(grads, start=1):
            adam_step(p, {"w": g}, st_)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(p["w"], ref, atol=1e-14)

    def test_missing_grad_is_zero(self):
        p = {"w": np.ones(2)}
        adam_step(p, {}, AdamState())
        assert np.array_equal(p["w"], np.ones(2))


def _toy_data(n, rng, cfg=TINY):
    X = rng.standard_normal((n, cfg.T, cfg.d_in)).astype(np.float32)
    y = rng.uniform(0.2, 0.8, (n, cfg.d_out)).astype(np.float32)
    return X, y


class TestTraining:
    def test_deterministic(self):
        X, y = _toy_data(12, np.random.default_rng(0))
        cfg = TrainConfig(max_epochs=3, seed=5)
        a = train(X, y, X[:4], y[:4], TINY, cfg)
        b = train(X, y, X[:4], y[:4], TINY, cfg)
        assert a.history == b.history
        assert all(np.array_equal(a.model.params[k].data, b.model.params[k].data) for k in a.model.params)

    def test_seed_changes_result(self):
        X, y = _toy_data(12, np.random.default_rng(0))
        a = train(X, y, X[:4], y[:4], TINY, TrainConfig(max_epochs=2, seed=1))
        b = train(X, y, X[:4], y[:4], TINY, TrainConfig(max_epochs=2, seed=2))
        assert a.history != b.history

    def test_overfits_small_set(self):
        cfg = ResNetConfig(F=16, k=3, B=1, p=0.0, d_in=3, d_out=2, T=9)
        X, y = _toy_data(8, np.random.default_rng(0), cfg)
        res = train(X, y, X, y, cfg, TrainConfig(max_epochs=500, patience=500, noise_std=0.0, lr=1e-2, seed=0))
        assert res.history[-1]["train_loss"] < 1e-3

    def test_early_stop_after_patience(self):
        X, y = _toy_data(8, np.random.default_rng(0))
        res = train(X, y, X, y, TINY, TrainConfig(max_epochs=50, patience=4), val_loss_fn=lambda m: 1.0)
        assert len(res.history) == 5 and res.stopped_early and res.best_epoch == 1

    def test_restores_best_weights(self):
        X, y = _toy_data(8, np.random.default_rng(0))
        losses = iter([0.5, 0.1, 0.3, 0.4])
        snaps = []

        def val(m):
            snaps.append(m.state_dict())
            return next(losses)

        res = train(X, y, X, y, TINY, TrainConfig(max_epochs=4, patience=10), val_loss_fn=val)
        assert res.best_epoch == 2
        assert all(np.array_equal(res.model.params[k].data, snaps[1][k]) for k in snaps[1])

    def test_empty_split(self):
        X, y = _toy_data(4, np.random.default_rng(0))
        with pytest.raises(ValidationError):
            train(X[:0], y[:0], X, y, TINY)
        with pytest.raises(ValidationError):
            train(X, y, X[:0], y[:0], TINY)

    def test_divergence_reported(self):
        X, y = _toy_data(4, np.random.default_rng(0))
        with pytest.raises(NumericError):
            train(X, y, X, y, TINY, TrainConfig(max_epochs=2), val_loss_fn=lambda m: float("nan"))

    def test_history_round_trip(self, tmp_path):
        hist = [{"epoch": 1, "train_loss": 0.1, "val_loss": 0.2, "best_so_far": 0.2},
                {"epoch": 2, "train_loss": 1 / 3, "val_loss": 0.25, "best_so_far": 0.2}]
        write_history(tmp_path / "h.csv", hist)
        assert read_history(tmp_path / "h.csv") == hist

    def test_evaluate_loss_oracle(self, rng):
        cfg = ResNetConfig(F=2, k=1, B=0, p=0.0, d_in=1, d_out=1, T=3)
        zero = ResNet1D(cfg, {k: np.zeros(s, np.float32) for k, s in param_shapes(cfg).items()})
        X = rng.standard_normal((4, 3, 1))
        assert evaluate_loss(zero, X, np.zeros((4, 1))) == pytest.approx(0.25)

    def test_bad_train_config(self):
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0)


class TestGradientCheck:
    def test_passes_default(self):
        rep = gradient_check()
        assert rep.passed and rep.max_rel_error < 1e-4

    def test_zero_input_and_weights(self):
        cfg = ResNetConfig(F=3, k=3, B=1, p=0.0, d_in=2, d_out=2, T=5)
        m = ResNet1D(cfg, {k: np.zeros(s) for k, s in param_shapes(cfg).items()}, dtype=np.float64)
        rep = gradient_check(cfg, model=m, x=np.zeros((2, 5, 2)))
        assert rep.passed

    def test_reports_failing_layer(self, monkeypatch):
        orig = tn.linear

        def broken(x, w, b):
            out = orig(x, w, b)
            inner = out._backward

            def backward(g):
                inner(g)
                if w.grad is not None:
                    w.grad *= 2.0
            out._backward = backward
            return out

        monkeypatch.setattr(tn, "linear", broken)
        rep = gradient_check()
        assert not rep.passed and rep.failing == ["head.weight"]
        assert "FAIL" in str(rep)

    def test_requires_no_dropout(self):
        with pytest.raises(ValidationError):
            gradient_check(ResNetConfig(F=2, k=1, B=0, p=0.1, d_in=1, d_out=1, T=2))


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path, rng):
        m = ResNet1D(TINY, rng=rng)
        save_checkpoint(tmp_path / "m.ckpt", m, {"best_epoch": 7})
        back, extra = load_checkpoint(tmp_path / "m.ckpt", TINY)
        assert extra == {"best_epoch": 7}
        for k in m.params:
            assert m.params[k].data.tobytes() == back.params[k].data.tobytes()
        x = rng.standard_normal((2, 9, 3))
        assert np.array_equal(m.predict(x), back.predict(x))

    def test_size_formula(self, tmp_path, rng):
        m = ResNet1D(TINY, rng=rng)
        p = save_checkpoint(tmp_path / "m.ckpt", m, {"a": 1})
        assert p.stat().st_size == 8 + 4 + len(header_bytes(m, {"a": 1})) + 4 * m.num_parameters()

    def test_config_mismatch(self, tmp_path, rng):
        save_checkpoint(tmp_path / "m.ckpt", ResNet1D(TINY, rng=rng))
        other = ResNetConfig(F=6, k=3, B=2, p=0.2, d_in=4, d_out=2, T=9)
        with pytest.raises(LoadError, match="d_in"):
            load_checkpoint(tmp_path / "m.ckpt", other)

    def test_corruption(self, tmp_path, rng):
        p = save_checkpoint(tmp_path / "m.ckpt", ResNet1D(TINY, rng=rng))
        raw = p.read_bytes()
        p.write_bytes(raw[:-1])
        with pytest.raises(LoadError):
            load_checkpoint(p)
        p.write_bytes(b"NOTACKPT" + raw[8:])
        with pytest.raises(LoadError):
            load_checkpoint(p)


@given(st.integers(1, 6), st.integers(0, 3), st.sampled_from([1, 3, 5]))
def test_forward_shape_property(T, B, k):
    cfg = ResNetConfig(F=3, k=k, B=B, p=0.3, d_in=2, d_out=4, T=T)
    rng = np.random.default_rng(T * 31 + B)
    out = ResNet1D(cfg, rng=rng).predict(rng.standard_normal((2, T, 2)), "mc", rng)
    assert out.shape == (2, 4) and np.all((out >= 0) & (out <= 1))
