"""Tensor engine: forward values, loop oracles and gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core import ops, reference
from src.core.errors import AutodiffError, NumericError, ShapeError
from src.core.gradcheck import check_gradients
from src.core.tensor import Parameter, Tensor, no_grad


def leaf(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum_all(ops.mul(out, Tensor(weights)))


class TestTensor:
    def test_data_is_contiguous_float64(self):
        t = Tensor(np.arange(6, dtype=np.int32).reshape(2, 3).T)
        assert t.data.dtype == np.float64
        assert t.data.flags["C_CONTIGUOUS"]

    def test_non_finite_forward_is_rejected(self):
        with pytest.raises(NumericError):
            ops.add(Tensor([np.inf]), Tensor([1.0]))

    def test_backward_needs_scalar_root(self):
        x = leaf(np.ones((2, 2)))
        with pytest.raises(AutodiffError):
            ops.relu(x).backward()

    def test_backward_twice_is_rejected(self):
        x = leaf(np.ones(3))
        loss = ops.sum_all(ops.relu(x))
        loss.backward()
        with pytest.raises(AutodiffError):
            loss.backward()

    def test_backward_without_grad_is_rejected(self):
        with pytest.raises(AutodiffError):
            ops.sum_all(Tensor(np.ones(3))).backward()

    def test_sum_relu_positive_gives_ones(self):
        x = leaf(np.array([0.5, 1.0, 2.0]))
        ops.sum_all(ops.relu(x)).backward()
        np.testing.assert_array_equal(x.grad, np.ones(3))

    def test_shared_node_visited_once(self):
        x = leaf(np.array([2.0]))
        y = ops.mul(x, x)
        loss = ops.sum_all(ops.add(y, y))
        loss.backward()
        np.testing.assert_allclose(x.grad, [8.0])
        assert len(loss.graph_nodes()) == len({id(n) for n in loss.graph_nodes()})

    def test_graph_nodes_topological(self):
        x = leaf(np.ones((1, 2, 2, 1)))
        out = ops.sum_all(ops.sub(x, ops.relu(x)))
        nodes = out.graph_nodes()
        position = {id(n): i for i, n in enumerate(nodes)}
        for n in nodes:
            for p in n._parents:
                assert position[id(p)] < position[id(n)]

    def test_no_grad_records_nothing(self):
        x = leaf(np.ones(3))
        with no_grad():
            y = ops.relu(x)
        assert not y.requires_grad
        assert y._parents == ()

    def test_parameter_mask_zeroes_data(self):
        p = Parameter(np.ones((2, 2)), mask=np.array([[1, 0], [0, 1]]))
        np.testing.assert_array_equal(p.data, np.eye(2))
        assert p.trainable_count() == 2


class TestElementwise:
    def test_relu_values(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_relu_gradient_zero_at_zero(self):
        x = leaf([-1.0, 0.0, 2.0])
        ops.sum_all(ops.relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_sub_self_is_zero(self, rng):
        f = Tensor(rng.normal(size=(1, 3, 3, 2)))
        np.testing.assert_array_equal(ops.sub(f, f).data, 0.0)

    def test_sigmoid_zero(self):
        assert ops.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.add(Tensor(np.ones((1, 2, 2, 1))), Tensor(np.ones((1, 2, 2, 2))))


class TestConcat:
    def test_triple_concat(self, rng):
        f = Tensor(rng.normal(size=(1, 3, 3, 4)))
        out = ops.concat_channels([f, f, f])
        assert out.shape == (1, 3, 3, 12)
        np.testing.assert_array_equal(out.data[..., :4], f.data)

    def test_single_input_identity(self, rng):
        f = Tensor(rng.normal(size=(2, 2, 3, 2)))
        np.testing.assert_array_equal(ops.concat_channels([f]).data, f.data)

    def test_slices_recover_inputs(self, rng):
        a = Tensor(rng.normal(size=(1, 4, 4, 2)))
        b = Tensor(rng.normal(size=(1, 4, 4, 3)))
        out = ops.concat_channels([a, b]).data
        np.testing.assert_array_equal(out[..., :2], a.data)
        np.testing.assert_array_equal(out[..., 2:], b.data)

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            ops.concat_channels([Tensor(np.ones((1, 2, 2, 1))), Tensor(np.ones((1, 3, 2, 1)))])


class TestConv2d:
    def test_masked_center_counts_taps(self):
        mask = np.array([[1, 1, 1], [0, 0, 0], [1, 1, 1]], dtype=float)
        out = ops.conv2d(Tensor(np.ones((1, 3, 3, 1))), Tensor(np.ones((3, 3, 1, 1))), mask=mask)
        assert out.data[0, 1, 1, 0] == 6.0

    def test_one_by_one(self):
        out = ops.conv2d(Tensor([[[[3.0]]]]), Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor([0.5]))
        assert out.data[0, 0, 0, 0] == 6.5

    def test_matches_loop(self, rng):
        x = rng.normal(size=(1, 5, 7, 3))
        w = rng.normal(size=(3, 3, 3, 2))
        b = rng.normal(size=2)
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, reference.conv2d_loop(x, w, b), atol=1e-12, rtol=0)

    def test_random_instances_match_loop(self, rng):
        for _ in range(100):
            h, w = rng.integers(1, 6, size=2)
            cin, cout = rng.integers(1, 4), rng.integers(1, 3)
            k = int(rng.choice([1, 3, 5]))
            x = rng.normal(size=(1, h, w, cin))
            wgt = rng.normal(size=(k, k, cin, cout))
            b = rng.normal(size=cout)
            mask = (rng.random((k, k)) > 0.4).astype(float)
            got = ops.conv2d(Tensor(x), Tensor(wgt), Tensor(b), mask=mask).data
            np.testing.assert_allclose(got, reference.conv2d_loop(x, wgt, b, mask), atol=1e-12, rtol=0)

    def test_masked_values_do_not_matter(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 4, 2)))
        mask = np.array([[1, 1, 1], [0, 0, 0], [1, 1, 1]], dtype=float)
        w1 = rng.normal(size=(3, 3, 2, 2))
        w2 = w1.copy()
        w2[1] = rng.normal(size=(3, 2, 2)) * 100
        a = ops.conv2d(x, Tensor(w1), mask=mask).data
        b = ops.conv2d(x, Tensor(w2), mask=mask).data
        np.testing.assert_array_equal(a, b)

    def test_masked_gradient_exactly_zero(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 4, 2)))
        w = leaf(rng.normal(size=(3, 3, 2, 2)))
        mask = np.array([[1, 1, 1], [0, 0, 0], [1, 1, 1]], dtype=float)
        weighted_sum(ops.conv2d(x, w, mask=mask), rng.normal(size=(1, 4, 4, 2))).backward()
        assert np.all(w.grad[1] == 0.0)
        assert np.any(w.grad[0] != 0.0)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(np.ones((1, 3, 3, 2))), Tensor(np.ones((3, 3, 1, 1))))

    def test_gradients(self, rng):
        x = leaf(rng.normal(size=(2, 4, 5, 2)))
        w = leaf(rng.normal(size=(3, 3, 2, 3)))
        b = leaf(rng.normal(size=3))
        weights = rng.normal(size=(2, 4, 5, 3))
        result = check_gradients(lambda: weighted_sum(ops.conv2d(x, w, b), weights), [x, w, b])
        assert result.passed, result.max_rel_error


class TestConvTranspose:
    def test_doubles_size(self, rng):
        out = ops.conv_transpose2d(Tensor(rng.normal(size=(1, 3, 4, 2))), Tensor(rng.normal(size=(4, 4, 2, 1))))
        assert out.shape == (1, 6, 8, 1)

    def test_gradients(self, rng):
        x = leaf(rng.normal(size=(1, 3, 3, 2)))
        w = leaf(rng.normal(size=(4, 4, 2, 2)))
        b = leaf(rng.normal(size=2))
        weights = rng.normal(size=(1, 6, 6, 2))
        result = check_gradients(lambda: weighted_sum(ops.conv_transpose2d(x, w, b), weights), [x, w, b])
        assert result.passed, result.max_rel_error


class TestMaxPool:
    def test_values(self):
        x = Tensor(np.arange(16, dtype=float).reshape(1, 4, 4, 1))
        np.testing.assert_array_equal(ops.max_pool2d(x).data[0, :, :, 0], [[5, 7], [13, 15]])

    def test_tie_routes_to_first(self):
        x = leaf(np.ones((1, 2, 2, 1)))
        ops.sum_all(ops.max_pool2d(x)).backward()
        np.testing.assert_array_equal(x.grad[0, :, :, 0], [[1, 0], [0, 0]])

    def test_gradients(self, rng):
        x = leaf(rng.permutation(32).reshape(1, 4, 4, 2) * 0.01)
        weights = rng.normal(size=(1, 2, 2, 2))
        assert check_gradients(lambda: weighted_sum(ops.max_pool2d(x), weights), [x]).passed


class TestAdaptivePool:
    def test_quadrants(self):
        x = Tensor(np.arange(1, 17, dtype=float).reshape(1, 4, 4, 1))
        np.testing.assert_array_equal(ops.adaptive_avg_pool(x, 2, 2).data[0, :, :, 0], [[3.5, 5.5], [11.5, 13.5]])

    def test_identity(self, rng):
        x = Tensor(rng.normal(size=(1, 5, 3, 2)))
        np.testing.assert_allclose(ops.adaptive_avg_pool(x, 5, 3).data, x.data, atol=1e-15)

    def test_constant(self):
        x = Tensor(np.full((1, 8, 8, 1), 7.0))
        for oh, ow in [(1, 1), (3, 5), (8, 8), (7, 2)]:
            np.testing.assert_allclose(ops.adaptive_avg_pool(x, oh, ow).data, 7.0, atol=1e-12)

    def test_zero_output_rejected(self):
        with pytest.raises(ShapeError):
            ops.adaptive_avg_pool(Tensor(np.ones((1, 4, 4, 1))), 0, 2)

    @settings(max_examples=50, deadline=None)
    @given(h=st.integers(1, 9), w=st.integers(1, 9), data=st.data())
    def test_partitions_tile_input(self, h, w, data):
        oh = data.draw(st.integers(1, h))
        ow = data.draw(st.integers(1, w))
        x = np.random.default_rng(h * 31 + w).normal(size=(1, h, w, 1))
        pooled = ops.adaptive_avg_pool(Tensor(x), oh, ow).data[0, :, :, 0]
        total = 0.0
        for i in range(oh):
            rows = (i + 1) * h // oh - i * h // oh
            for j in range(ow):
                cols = (j + 1) * w // ow - j * w // ow
                total += pooled[i, j] * rows * cols
        assert total == pytest.approx(x.sum(), abs=1e-10)

    def test_matches_loop(self, rng):
        for _ in range(100):
            h, w = rng.integers(1, 9, size=2)
            x = rng.normal(size=(2, h, w, 2))
            oh, ow = rng.integers(1, h + 1), rng.integers(1, w + 1)
            got = ops.adaptive_avg_pool(Tensor(x), oh, ow).data
            np.testing.assert_allclose(got, reference.adaptive_pool_loop(x, oh, ow), atol=1e-12, rtol=0)

    def test_gradients(self, rng):
        x = leaf(rng.normal(size=(1, 7, 5, 2)))
        weights = rng.normal(size=(1, 3, 2, 2))
        assert check_gradients(lambda: weighted_sum(ops.adaptive_avg_pool(x, 3, 2), weights), [x]).passed


class TestBilinearUpsample:
    def test_hand_values(self):
        x = Tensor(np.array([0.0, 1.0]).reshape(1, 2, 1, 1))
        np.testing.assert_allclose(ops.bilinear_upsample(x, 4, 1).data.reshape(-1), [0.0, 0.25, 0.75, 1.0])

    def test_constant_preserved(self):
        out = ops.bilinear_upsample(Tensor(np.full((1, 3, 2, 1), 4.5)), 7, 9).data
        np.testing.assert_allclose(out, 4.5, atol=1e-12)

    def test_same_size_identity(self, rng):
        x = Tensor(rng.normal(size=(1, 4, 3, 2)))
        np.testing.assert_allclose(ops.bilinear_upsample(x, 4, 3).data, x.data, atol=1e-15)

    def test_monotone_input_stays_monotone(self, rng):
        column = np.sort(rng.normal(size=5)).reshape(1, 5, 1, 1)
        out = ops.bilinear_upsample(Tensor(column), 13, 1).data.reshape(-1)
        assert np.all(np.diff(out) >= -1e-12)

    def test_smaller_output_rejected(self):
        with pytest.raises(ShapeError):
            ops.bilinear_upsample(Tensor(np.ones((1, 4, 4, 1))), 2, 4)

    def test_matches_loop(self, rng):
        for _ in range(100):
            h, w = rng.integers(1, 6, size=2)
            x = rng.normal(size=(1, h, w, 2))
            oh, ow = h + rng.integers(0, 6), w + rng.integers(0, 6)
            got = ops.bilinear_upsample(Tensor(x), oh, ow).data
            np.testing.assert_allclose(got, reference.bilinear_loop(x, oh, ow), atol=1e-12, rtol=0)

    def test_pool_upsample_identity_cancels(self, rng):
        f = leaf(rng.normal(size=(1, 4, 4, 2)))
        rebuilt = ops.bilinear_upsample(ops.adaptive_avg_pool(f, 4, 4), 4, 4)
        ops.sum_all(ops.sub(f, rebuilt)).backward()
        np.testing.assert_allclose(f.grad, 0.0, atol=1e-15)

    def test_gradients(self, rng):
        x = leaf(rng.normal(size=(1, 3, 2, 2)))
        weights = rng.normal(size=(1, 7, 5, 2))
        assert check_gradients(lambda: weighted_sum(ops.bilinear_upsample(x, 7, 5), weights), [x]).passed


class TestHeadOps:
    def test_linear_identity(self, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        out = ops.linear(x, Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_global_avg_pool_constant(self):
        out = ops.global_avg_pool(Tensor(np.full((2, 3, 3, 4), 2.5)))
        np.testing.assert_allclose(out.data, 2.5)

    def test_linear_matches_loop(self, rng):
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        expected = np.array([[sum(x[i, f] * w[f, o] for f in range(4)) + b[o] for o in range(2)] for i in range(3)])
        np.testing.assert_allclose(ops.linear(Tensor(x), Tensor(w), Tensor(b)).data, expected, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            ops.linear(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 1))))

    def test_gradients(self, rng):
        x = leaf(rng.normal(size=(2, 3, 3, 4)))
        w = leaf(rng.normal(size=(4, 2)))
        b = leaf(rng.normal(size=2))
        weights = rng.normal(size=(2, 2))
        result = check_gradients(lambda: weighted_sum(ops.linear(ops.global_avg_pool(x), w, b), weights), [x, w, b])
        assert result.passed


class TestDeterminism:
    def test_replay_is_bit_identical(self, rng):
        x = rng.normal(size=(2, 6, 6, 3))
        w = rng.normal(size=(3, 3, 3, 4))

        def run():
            xt, wt = leaf(x), leaf(w)
            loss = ops.sum_all(ops.relu(ops.conv2d(xt, wt)))
            loss.backward()
            return loss.data.copy(), xt.grad.copy(), wt.grad.copy()

        first, second = run(), run()
        for a, b in zip(first, second):
            assert np.array_equal(a, b)
