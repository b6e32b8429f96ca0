import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdfn.tensor_core import (AdamState, ConfigError, LayerSpec, ShapeError, Tensor, adam_step,
                              bce_loss, conv2d, global_avg_pool, grad_check, layer_forward,
                              linear, make_layer, pixelwise_ce, relu, sigmoid, sigmoid_array)
from sdfn.tensor_core import ops


def direct_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for i in range(n):
        for o in range(k):
            for y in range(ho):
                for xx in range(wo):
                    acc = b[o]
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, ci, y * stride + u, xx * stride + v] * w[o, ci, u, v]
                    out[i, o, y, xx] = acc
    return out


def direct_bce(y, p, eps=1e-7):
    total = 0.0
    for yi, pi in zip(np.ravel(y), np.ravel(p)):
        q = min(max(pi, eps), 1 - eps)
        total += yi * math.log(q) + (1 - yi) * math.log(1 - q)
    return -total / np.size(y)


class TestConv2d:
    def test_scalar_product(self):
        out = conv2d(Tensor(np.full((1, 1, 1, 1), 3.0)), Tensor(np.full((1, 1, 1, 1), 2.0)),
                     Tensor(np.zeros(1)))
        assert out.data.reshape(-1).tolist() == [6.0]

    def test_average_kernel_preserves_constant_interior(self):
        x = np.full((1, 1, 6, 6), 0.37)
        w = np.full((1, 1, 3, 3), 1 / 9)
        out = conv2d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), stride=1, pad=1).data
        np.testing.assert_allclose(out[0, 0, 1:-1, 1:-1], 0.37, rtol=0, atol=1e-15)

    def test_matches_direct_loops(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, pad=1).data
        want = direct_conv(x, w, b, 2, 1)
        assert got.shape == (2, 4, 4, 4)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("k,stride,pad", [(1, 1, 0), (1, 2, 0), (3, 1, 0), (5, 2, 2), (7, 2, 3)])
    def test_shapes_and_values(self, k, stride, pad):
        rng = np.random.default_rng(k * 10 + stride)
        x = rng.standard_normal((1, 2, 9, 9))
        w = rng.standard_normal((3, 2, k, k))
        b = np.zeros(3)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
        np.testing.assert_allclose(got, direct_conv(x, w, b, stride, pad), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_nonpositive_extent(self):
        with pytest.raises(ConfigError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, 1, 2, 6, 6))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        lhs = conv2d(Tensor(a * x + b * y), w, stride=1, pad=1).data
        rhs = a * conv2d(Tensor(x), w, stride=1, pad=1).data + b * conv2d(Tensor(y), w, stride=1, pad=1).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestLayers:
    def test_relu(self):
        assert relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]

    def test_concat_channel_sum(self):
        spec = LayerSpec("concat")
        out = layer_forward(spec, Tensor(np.zeros((1, 1024, 1, 1))), Tensor(np.zeros((1, 1024, 1, 1))))
        assert out.shape[1] == 2048

    def test_batch_norm_statistics(self):
        rng = np.random.default_rng(3)
        layer = make_layer(LayerSpec("batch_norm", in_channels=4), rng)
        layer.params["gamma"].data[:] = [0.5, 1.5, 2.0, 3.0]
        layer.params["beta"].data[:] = [-1.0, 0.0, 0.25, 4.0]
        x = rng.normal(2.0, 10.0, size=(8, 4, 5, 5))
        out = layer_forward(layer, Tensor(x), training=True).data
        for c in range(4):
            vals = out[:, c].ravel()
            mean = sum(vals) / vals.size
            var = sum((v - mean) ** 2 for v in vals) / vals.size
            assert abs(mean - layer.params["beta"].data[c]) < 1e-6
            assert abs(var - layer.params["gamma"].data[c] ** 2) < 1e-6

    def test_batch_norm_running_stats_momentum(self):
        rng = np.random.default_rng(4)
        layer = make_layer(LayerSpec("batch_norm", in_channels=2), rng)
        x = rng.standard_normal((4, 2, 3, 3)) + 5.0
        layer_forward(layer, Tensor(x), training=True)
        np.testing.assert_allclose(layer.buffers["running_mean"], 0.1 * x.mean(axis=(0, 2, 3)))
        inference = layer_forward(layer, Tensor(x), training=False).data
        rm, rv = layer.buffers["running_mean"], layer.buffers["running_var"]
        want = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
        np.testing.assert_allclose(inference, want, atol=1e-12)

    def test_batch_norm_empty_batch(self):
        layer = make_layer(LayerSpec("batch_norm", in_channels=2), np.random.default_rng(0))
        with pytest.raises(ShapeError):
            layer_forward(layer, Tensor(np.zeros((0, 2, 3, 3))), training=True)

    def test_arity_checked(self):
        with pytest.raises(ShapeError):
            layer_forward(LayerSpec("relu"), Tensor([1.0]), Tensor([2.0]))

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            LayerSpec("conv2d", in_channels=1, out_channels=0)
        with pytest.raises(ConfigError):
            LayerSpec("dropout")


class TestGlobalAveragePool:
    def test_constant(self):
        assert global_avg_pool(Tensor(np.full((1, 1, 3, 5), 2.5))).data.tolist() == [[2.5]]

    def test_two_by_two(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)
        assert global_avg_pool(Tensor(x)).data[0, 0] == 2.5

    def test_matches_plane_means(self):
        x = np.random.default_rng(5).standard_normal((2, 8, 7, 7))
        got = global_avg_pool(Tensor(x)).data
        for n in range(2):
            for c in range(8):
                assert abs(got[n, c] - sum(x[n, c].ravel()) / 49) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), h=st.integers(1, 6), w=st.integers(1, 6))
    def test_within_plane_range(self, seed, h, w):
        x = np.random.default_rng(seed).standard_normal((1, 3, h, w)) * 100
        got = global_avg_pool(Tensor(x)).data[0]
        assert np.all(got >= x[0].min(axis=(1, 2)) - 1e-12)
        assert np.all(got <= x[0].max(axis=(1, 2)) + 1e-12)


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(Tensor(0.0)).item() == 0.5

    def test_log3(self):
        assert abs(sigmoid(Tensor(math.log(3))).item() - 0.75) < 1e-12

    def test_saturation_stays_positive(self):
        v = sigmoid(Tensor(-40.0)).item()
        assert 0 < v <= 1e-15 and math.isfinite(v)

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(-30, 30), b=st.floats(-30, 30))
    def test_monotone(self, a, b):
        if a == b:
            return
        lo, hi = min(a, b), max(a, b)
        if hi - lo < 1e-9:
            return
        assert sigmoid_array([lo])[0] < sigmoid_array([hi])[0]


class TestLosses:
    def test_half_gives_log2(self):
        y = np.random.default_rng(0).integers(0, 2, 14)
        assert abs(bce_loss(y, Tensor(np.full(14, 0.5))).item() - math.log(2)) < 1e-12

    def test_perfect_prediction(self):
        y = np.array([1.0, 0.0] * 7)
        assert bce_loss(y, Tensor(y)).item() <= -math.log(1 - 1e-7) + 1e-15

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(8)
        y = rng.integers(0, 2, 14).astype(float)
        p = rng.uniform(0, 1, 14)
        assert abs(bce_loss(y, Tensor(p)).item() - direct_bce(y, p)) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss(np.zeros(14), Tensor(np.full(13, 0.5)))

    def test_pixelwise_half(self):
        mask = np.random.default_rng(1).integers(0, 2, (16, 16))
        assert abs(pixelwise_ce(mask, Tensor(np.full((16, 16), 0.5))).item() - math.log(2)) < 1e-12

    def test_pixelwise_perfect(self):
        mask = np.random.default_rng(1).integers(0, 2, (16, 16)).astype(float)
        assert pixelwise_ce(mask, Tensor(mask)).item() <= -math.log(1 - 1e-7) + 1e-15

    def test_pixelwise_matches_direct(self):
        rng = np.random.default_rng(2)
        mask = rng.integers(0, 2, (16, 16)).astype(float)
        p = rng.uniform(0, 1, (16, 16))
        assert abs(pixelwise_ce(mask, Tensor(p)).item() - direct_bce(mask, p)) < 1e-12

    def test_pixelwise_extent_mismatch(self):
        with pytest.raises(ShapeError):
            pixelwise_ce(np.zeros((4, 4)), Tensor(np.full((4, 5), 0.5)))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_nonnegative_and_minimised_at_truth(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, 14).astype(float)
        p = rng.uniform(0, 1, 14)
        loss = bce_loss(y, Tensor(p)).item()
        assert loss >= 0
        if not np.array_equal(p, y):
            assert bce_loss(y, Tensor(y)).item() < loss


class TestBackward:
    def test_linear_scalar(self):
        w = Tensor(1.7, requires_grad=True)
        (w * 3.0).backward()
        assert w.grad.tolist() == [3.0]

    def test_sigmoid_at_zero(self):
        w = Tensor(0.0, requires_grad=True)
        sigmoid(w).backward()
        assert w.grad.tolist() == [0.25]

    def test_accumulates(self):
        w = Tensor(2.0, requires_grad=True)
        (w * 3.0).backward()
        (w * 3.0).backward()
        assert w.grad.tolist() == [6.0]

    def test_non_scalar(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            (w * 2.0).backward()

    def test_empty_tape(self):
        with pytest.raises(RuntimeError):
            Tensor(1.0, requires_grad=True).backward()

    def test_shared_subgraph(self):
        x = Tensor(2.0, requires_grad=True)
        y = Tensor(-4.0, requires_grad=True)
        q = (x + y) * (x + 1.0)
        q.backward()
        assert x.grad.tolist() == [1.0] and y.grad.tolist() == [3.0]

    def test_composite_against_finite_differences(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal((2, 2, 6, 6)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
        b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
        fw = Tensor(rng.standard_normal((14, 3)), requires_grad=True)
        fb = Tensor(rng.standard_normal(14) * 0.1, requires_grad=True)
        y = rng.integers(0, 2, (2, 14)).astype(float)

        def loss(inp):
            h = relu(conv2d(inp, w, b, stride=1, pad=1))
            return bce_loss(y, sigmoid(linear(global_avg_pool(h), fw, fb)))

        assert grad_check(loss, x, h=1e-5, params=[w, b, fw, fb]) < 1e-4


class TestAdam:
    def test_zero_gradient_identity(self):
        p = np.array([1.0, -2.0, 3.0])
        state = AdamState(learning_rate=1e-3)
        for _ in range(5):
            adam_step([p], [np.zeros(3)], state)
        assert p.tolist() == [1.0, -2.0, 3.0]
        assert state.step_count == 5

    def test_first_step_magnitude(self):
        p = np.array([0.5])
        adam_step([p], [np.array([0.3])], AdamState(learning_rate=1e-3, decay=0.0))
        assert abs(abs(p[0] - 0.5) - 1e-3 * 0.3 / (0.3 + 1e-8)) < 1e-15

    def test_matches_reference_recurrence(self):
        lr, decay, b1, b2, eps = 0.05, 1e-2, 0.9, 0.999, 1e-8
        p = np.array([2.0, -1.0])
        state = AdamState(learning_rate=lr, decay=decay)
        ref = [2.0, -1.0]
        m = [0.0, 0.0]
        v = [0.0, 0.0]
        for t in range(1, 11):
            adam_step([p], [2.0 * p.copy()], state)
            rate = lr / (1 + decay * (t - 1))
            for i in range(2):
                g = 2.0 * ref[i]
                m[i] = b1 * m[i] + (1 - b1) * g
                v[i] = b2 * v[i] + (1 - b2) * g * g
                ref[i] -= rate * (m[i] / (1 - b1 ** t)) / (math.sqrt(v[i] / (1 - b2 ** t)) + eps)
        np.testing.assert_allclose(p, ref, rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step([np.zeros(3)], [np.zeros(2)], AdamState())

    def test_nonfinite_gradient(self):
        with pytest.raises(FloatingPointError):
            adam_step([np.zeros(2)], [np.array([1.0, np.nan])], AdamState())


class TestGradCheck:
    def test_linear_layer_is_exact(self):
        rng = np.random.default_rng(0)
        layer = make_layer(LayerSpec("fully_connected", 5, 3), rng)
        x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        proj = rng.standard_normal((4, 3))

        def frag(inp):
            return (layer_forward(layer, inp) * proj).sum()

        assert grad_check(frag, x, params=list(layer.params.values())) < 1e-9

    @pytest.mark.parametrize("spec", [
        LayerSpec("conv2d", 2, 3, kernel=3, stride=2, pad=1),
        LayerSpec("conv2d", 2, 3, kernel=1),
        LayerSpec("batch_norm", in_channels=2),
        LayerSpec("relu"),
        LayerSpec("avg_pool2d", window=2),
        LayerSpec("global_avg_pool"),
        LayerSpec("sigmoid"),
        LayerSpec("upsample2x"),
    ], ids=lambda s: f"{s.kind}-k{s.kernel}")
    def test_isolated_layers(self, spec):
        rng = np.random.default_rng(42)
        layer = make_layer(spec, rng)
        x = Tensor(rng.standard_normal((3, 2, 6, 6)), requires_grad=True)
        out_shape = layer_forward(layer, x, training=True).shape
        proj = rng.standard_normal(out_shape)

        def frag(inp):
            return (layer_forward(layer, inp, training=True) * proj).sum()

        assert grad_check(frag, x, params=list(layer.params.values())) < 1e-6

    def test_concat_layer(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 1, 2, 2)), requires_grad=True)
        proj = rng.standard_normal((2, 4, 2, 2))

        def frag(_):
            return (layer_forward(LayerSpec("concat"), a, b) * proj).sum()

        assert grad_check(frag, None, params=[a, b]) < 1e-6


def test_ops_check_shapes():
    with pytest.raises(ShapeError):
        linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError):
        ops.concat([Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 4, 3)))])
