import math

import numpy as np
import pytest

from cantcn import neuralnet as nn


def oracle_conv(x, w, b, dilation):
    """Direct-summation reference with explicit left zero padding."""
    B, T, Ci = x.shape
    k, _, Co = w.shape
    y = np.zeros((B, T, Co))
    for bi in range(B):
        for t in range(T):
            for o in range(Co):
                acc = b[o]
                for j in range(k):
                    src = t - (k - 1 - j) * dilation
                    if src >= 0:
                        for c in range(Ci):
                            acc += w[j, c, o] * x[bi, src, c]
                y[bi, t, o] = acc
    return y


def tiny_conv(weights, dilation=1, bias=0.0):
    w = np.array(weights, dtype=np.float64).reshape(-1, 1, 1)
    return nn.ConvParams(w=w, b=np.array([bias]), dilation=dilation)


def seq(values):
    return np.array(values, dtype=np.float64).reshape(1, -1, 1)


class TestCausalConv:
    def test_sum_filter_d1(self):
        y = nn.causal_conv1d(seq([1, 2, 3]), tiny_conv([1, 1], dilation=1))
        assert y[0, :, 0].tolist() == [1.0, 3.0, 5.0]

    def test_sum_filter_d2(self):
        y = nn.causal_conv1d(seq([1, 2, 3, 4]), tiny_conv([1, 1], dilation=2))
        assert y[0, :, 0].tolist() == [1.0, 2.0, 4.0, 6.0]

    def test_zero_weights_bias_only(self):
        y = nn.causal_conv1d(seq([5, 6, 7]), tiny_conv([0, 0], bias=2.5))
        assert np.all(y == 2.5)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            B, T = int(rng.integers(1, 4)), int(rng.integers(1, 12))
            Ci, Co = int(rng.integers(1, 5)), int(rng.integers(1, 5))
            k, d = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            p = nn.ConvParams(w=rng.normal(size=(k, Ci, Co)), b=rng.normal(size=Co),
                              dilation=d)
            x = rng.normal(size=(B, T, Ci))
            np.testing.assert_allclose(
                nn.causal_conv1d(x, p), oracle_conv(x, p.w, p.b, d), atol=1e-12
            )

    def test_channel_mismatch(self):
        p = nn.ConvParams(w=np.zeros((2, 3, 4)), b=np.zeros(4))
        with pytest.raises(ValueError, match="channels"):
            nn.causal_conv1d(np.zeros((1, 5, 2)), p)


def zero_block(c_in, c_out, dilation=1, with_downsample=None):
    mk = lambda ci: nn.ConvParams(w=np.zeros((2, ci, c_out)), b=np.zeros(c_out),
                                  dilation=dilation)
    down = None
    if with_downsample is not None:
        down = nn.ConvParams(w=with_downsample, b=np.zeros(c_out), dilation=1)
    return nn.ResidualBlock(conv1=mk(c_in), conv2=mk(c_out), downsample=down)


class TestResidualBlock:
    def test_zero_convs_identity_skip(self):
        rng = np.random.default_rng(1)
        x = rng.random((2, 6, 64))  # nonnegative, so ReLU(x) == x
        y = nn.residual_block_forward(x, zero_block(64, 64))
        np.testing.assert_array_equal(y, x)

    def test_zero_convs_downsample_path(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 5, 3))
        dw = rng.normal(size=(1, 3, 64))
        blk = zero_block(3, 64, with_downsample=dw)
        projected = nn.causal_conv1d(x, blk.downsample)
        np.testing.assert_array_equal(
            nn.residual_block_forward(x, blk), np.maximum(projected, 0.0)
        )

    def test_future_perturbation_leaves_past_unchanged(self):
        rng = np.random.default_rng(3)
        model = nn.init_model(2, seed=9)
        blk = model.blocks[0]
        x = rng.random((1, 10, 2))
        base = nn.residual_block_forward(x, blk)
        x2 = x.copy()
        x2[0, 7, :] += 1.0
        moved = nn.residual_block_forward(x2, blk)
        np.testing.assert_array_equal(moved[:, :7, :], base[:, :7, :])
        assert not np.array_equal(moved[:, 7:, :], base[:, 7:, :])


class TestTcnForward:
    def test_output_shape_equals_input_shape(self):
        model = nn.init_model(3, seed=0)
        x = np.random.default_rng(0).random((2, 20, 3))
        assert nn.tcn_forward(x, model).shape == (2, 20, 3)

    def test_receptive_field_is_15(self):
        model = nn.init_model(1, seed=5)
        assert model.receptive_field == 15
        rng = np.random.default_rng(8)
        x = rng.random((1, 20, 1))
        base = nn.tcn_forward(x, model)[0, 19, :]
        for pos in range(20):
            x2 = x.copy()
            x2[0, pos, 0] += 0.5
            out = nn.tcn_forward(x2, model)[0, 19, :]
            if pos < 5:  # 19 - 14 = 5 is the oldest position inside the field
                np.testing.assert_array_equal(out, base)
            else:
                assert np.any(out != base), f"position {pos} should reach the output"

    def test_zero_model_zero_output(self):
        model = nn.init_model(2, seed=0)
        for p in model.parameters():
            p[...] = 0.0
        x = np.zeros((1, 20, 2))
        np.testing.assert_array_equal(nn.tcn_forward(x, model), x)

    def test_signal_count_mismatch(self):
        model = nn.init_model(3, seed=0)
        with pytest.raises(ValueError, match="channels"):
            nn.tcn_forward(np.zeros((1, 20, 2)), model)


class TestMseLoss:
    def test_zero_for_equal(self):
        x = np.ones((2, 3, 4))
        assert nn.mse_loss(x, x.copy()) == 0.0

    def test_simple_value(self):
        y = np.array([1.0, 1.0]).reshape(1, 2, 1)
        t = np.array([0.0, 2.0]).reshape(1, 2, 1)
        assert nn.mse_loss(y, t) == 1.0

    def test_matches_manual_summation(self):
        rng = np.random.default_rng(13)
        y, t = rng.normal(size=(3, 7, 2)), rng.normal(size=(3, 7, 2))
        manual = sum((a - b) ** 2 for a, b in zip(y.flat, t.flat)) / y.size
        assert abs(nn.mse_loss(y, t) - manual) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            nn.mse_loss(np.zeros((1, 2, 3)), np.zeros((1, 3, 2)))


class TestBackward:
    def test_zero_loss_zero_gradients(self):
        model = nn.init_model(2, seed=21)
        x = np.random.default_rng(0).random((2, 16, 2))
        target = nn.tcn_forward(x, model)
        loss, grads = nn.backward(model, x, target)
        assert loss == 0.0
        assert all(np.all(g == 0.0) for g in grads)

    def test_hand_differentiated_single_conv(self):
        # y = w*x with x=2, w=1, target 0: dL/dw = 2*y*x = 8
        p = nn.ConvParams(w=np.ones((1, 1, 1)), b=np.zeros(1), dilation=1)
        x = np.full((1, 1, 1), 2.0)
        y = nn.causal_conv1d(x, p)
        dy = 2.0 * (y - 0.0) / y.size
        _, dw, db = nn._conv_backward(x, p, dy)
        assert dw[0, 0, 0] == 8.0
        assert db[0] == 4.0

    def test_matches_finite_differences_sampled(self):
        rng = np.random.default_rng(37)
        model = nn.init_model(2, seed=11)
        x = rng.random((2, 20, 2))
        target = rng.random((2, 20, 2))
        _, grads = nn.backward(model, x, target)
        h = 1e-5
        for p, g in zip(model.parameters(), grads):
            flat = p.reshape(-1)
            for i in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                keep = flat[i]
                flat[i] = keep + h
                up = nn.mse_loss(nn.tcn_forward(x, model), target)
                flat[i] = keep - h
                down = nn.mse_loss(nn.tcn_forward(x, model), target)
                flat[i] = keep
                fd = (up - down) / (2 * h)
                a = g.reshape(-1)[i]
                assert abs(a - fd) / max(abs(a), abs(fd), 1e-5) < 1e-4


def scalar_adam_reference(grad_sequence, theta, lr=1e-4, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float Adam recurrence used as the optimizer oracle."""
    m = v = 0.0
    trajectory = []
    for t, g in enumerate(grad_sequence, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        trajectory.append(theta)
    return trajectory


class TestAdam:
    def test_first_step_magnitude(self):
        params = [np.array([0.0])]
        state = nn.AdamState.init(params, lr=1e-4)
        nn.adam_step(params, [np.array([1.0])], state)
        expected = -1e-4 * 1.0 / (1.0 + 1e-8)
        assert abs(params[0][0] - expected) < 1e-18
        assert state.t == 1

    def test_zero_gradient_leaves_params(self):
        params = [np.array([1.5, -2.5])]
        state = nn.AdamState.init(params)
        nn.adam_step(params, [np.zeros(2)], state)
        assert params[0].tolist() == [1.5, -2.5]

    def test_two_steps_match_scalar_reference(self):
        params = [np.array([0.3])]
        state = nn.AdamState.init(params, lr=1e-4)
        grads = [0.7, 0.7]
        for g in grads:
            nn.adam_step(params, [np.array([g])], state)
        ref = scalar_adam_reference(grads, 0.3)[-1]
        assert abs(params[0][0] - ref) < 1e-12

    def test_shape_mismatch(self):
        params = [np.zeros(3)]
        state = nn.AdamState.init(params)
        with pytest.raises(ValueError):
            nn.adam_step(params, [np.zeros(2)], state)


class TestInitModel:
    def test_same_seed_bit_identical(self):
        a = nn.init_model(3, seed=99)
        b = nn.init_model(3, seed=99)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_different_seeds_differ(self):
        a = nn.init_model(3, seed=1)
        b = nn.init_model(3, seed=2)
        assert any(
            not np.array_equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters())
        )

    def test_he_uniform_bounds(self):
        model = nn.init_model(4, seed=123)
        for blk in model.blocks:
            for conv in blk.convs():
                bound = np.sqrt(6.0 / (conv.kernel * conv.c_in))
                assert np.all(np.abs(conv.w) <= bound)
                assert np.all(conv.b == 0.0)
        out = model.output_proj
        assert np.all(np.abs(out.w) <= np.sqrt(6.0 / out.c_in))

    def test_signal_count_validation(self):
        with pytest.raises(ValueError):
            nn.init_model(0, seed=0)
        with pytest.raises(ValueError):
            nn.init_model(9, seed=0)

    def test_downsample_only_when_widths_differ(self):
        model = nn.init_model(3, seed=0)
        assert model.blocks[0].downsample is not None
        assert model.blocks[1].downsample is None
        assert model.blocks[2].downsample is None


class TestSaveLoad:
    def test_round_trip_identical_outputs(self, tmp_path):
        model = nn.init_model(3, seed=17)
        path = tmp_path / "model.bin"
        nn.save_model(model, path)
        again = nn.load_model(path)
        x = np.random.default_rng(3).random((2, 20, 3))
        np.testing.assert_array_equal(nn.tcn_forward(x, model), nn.tcn_forward(x, again))
        for pa, pb in zip(model.parameters(), again.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_truncated_file_rejected(self, tmp_path):
        model = nn.init_model(2, seed=1)
        path = tmp_path / "model.bin"
        nn.save_model(model, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(nn.ModelFormatError, match="truncated"):
            nn.load_model(path)

    def test_version_mismatch_rejected(self, tmp_path):
        model = nn.init_model(2, seed=1)
        path = tmp_path / "model.bin"
        nn.save_model(model, path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(nn.ModelFormatError, match="version"):
            nn.load_model(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        model = nn.init_model(2, seed=1)
        path = tmp_path / "model.bin"
        nn.save_model(model, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(nn.ModelFormatError, match="trailing"):
            nn.load_model(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"not a model at all")
        with pytest.raises(nn.ModelFormatError, match="magic"):
            nn.load_model(path)

    def test_reloaded_model_rejects_wrong_input_width(self, tmp_path):
        model = nn.init_model(3, seed=1)
        path = tmp_path / "model.bin"
        nn.save_model(model, path)
        again = nn.load_model(path)
        with pytest.raises(ValueError, match="channels"):
            nn.tcn_forward(np.zeros((1, 20, 2)), again)
