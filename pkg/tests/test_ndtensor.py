import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rtnlab import ndtensor as nd
from rtnlab.errors import ArgumentError, DimensionError, NumericError


class TestMatmul:
    def test_identity_left(self):
        out = nd.matmul([[1.0, 0.0], [0.0, 1.0]], [[5.0, 6.0], [7.0, 8.0]])
        assert out.data.tolist() == [[5.0, 6.0], [7.0, 8.0]]

    def test_inner_product(self):
        # hand oracle: 1*3 + 2*4
        assert nd.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            nd.matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    def test_rank_must_be_two(self):
        with pytest.raises(DimensionError):
            nd.matmul(np.zeros(3), np.zeros((3, 1)))

    def test_gradients_both_inputs(self, rng):
        b = rng.normal(size=(4, 2))
        err = nd.check_gradients(lambda a: nd.tensor_sum(nd.tanh(nd.matmul(nd.reshape(a, (3, 4)), b))),
                                 rng.normal(size=12))
        assert err < 1e-6
        a = rng.normal(size=(3, 4))
        err = nd.check_gradients(lambda w: nd.tensor_sum(nd.tanh(nd.matmul(a, nd.reshape(w, (4, 2))))),
                                 rng.normal(size=8))
        assert err < 1e-6


class TestElementwise:
    def test_sigmoid_zero(self):
        assert nd.elementwise(np.array(0.0), "sigmoid").item() == 0.5

    def test_tanh_zero(self):
        assert nd.elementwise(np.array(0.0), "tanh").item() == 0.0

    def test_relu_negative(self):
        assert nd.elementwise(np.array(-2.5), "relu").item() == 0.0

    def test_add_const_and_scale(self):
        x = np.array([1.0, -2.0])
        assert nd.elementwise(x, "add-const", 3.0).data.tolist() == [4.0, 1.0]
        assert nd.elementwise(x, "scale", -2.0).data.tolist() == [-2.0, 4.0]

    def test_unknown_function(self):
        with pytest.raises(ArgumentError):
            nd.elementwise(np.zeros(2), "softplus")

    def test_sigmoid_extreme_inputs_are_finite(self):
        out = nd.sigmoid(np.array([-800.0, 800.0])).data
        assert out.tolist() == [0.0, 1.0]

    @pytest.mark.parametrize("name", ["tanh", "sigmoid", "relu", "add-const", "scale"])
    def test_gradient(self, name, rng):
        point = rng.normal(size=6)
        # keep relu away from its kink
        point = point + 0.1 * np.sign(point)
        c = 0.7 if name in ("add-const", "scale") else None
        err = nd.check_gradients(lambda x: nd.tensor_sum(nd.elementwise(x, name, c) * np.arange(1.0, 7.0)), point)
        assert err < 1e-6


class TestConcat:
    def test_values_in_order(self):
        assert nd.concat([[1.0, 2.0], [3.0]]).data.tolist() == [1.0, 2.0, 3.0]

    def test_empty_part_allowed(self):
        assert nd.concat([np.zeros(0), [5.0]]).data.tolist() == [5.0]

    def test_single_part_identity(self):
        assert nd.concat([[4.0, 7.0]]).data.tolist() == [4.0, 7.0]

    def test_empty_list(self):
        with pytest.raises(ArgumentError):
            nd.concat([])

    def test_gradient_slices_back(self):
        tape = nd.Tape()
        a, b = tape.leaf([1.0, 2.0]), tape.leaf([3.0])
        out = nd.tensor_sum(nd.concat([a, b]) * np.array([10.0, 20.0, 30.0]))
        nd.backward(out, tape)
        assert a.grad.tolist() == [10.0, 20.0]
        assert b.grad.tolist() == [30.0]

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=5), st.integers(0, 2**32 - 1))
    def test_slice_back_identity(self, lengths, seed):
        rng = np.random.default_rng(seed)
        parts = [rng.normal(size=n) for n in lengths]
        joined = nd.concat(parts)
        off = 0
        for p in parts:
            np.testing.assert_array_equal(joined[off:off + len(p)].data, p)
            off += len(p)


class TestBackward:
    def test_product_rule(self):
        tape = nd.Tape()
        x, y = tape.leaf(3.0), tape.leaf(4.0)
        gx, gy = nd.backward(x * y, tape)
        assert (gx.item(), gy.item()) == (4.0, 3.0)

    def test_relu_sum(self):
        tape = nd.Tape()
        v = tape.leaf([-1.0, 2.0])
        nd.backward(nd.tensor_sum(nd.relu(v)), tape)
        assert v.grad.tolist() == [0.0, 1.0]

    def test_non_scalar_root(self):
        tape = nd.Tape()
        v = tape.leaf([1.0, 2.0])
        with pytest.raises(ArgumentError):
            nd.backward(v * 2.0, tape)

    def test_unreached_leaf_gets_zero_gradient(self):
        tape = nd.Tape()
        x, unused = tape.leaf([1.0, 2.0]), tape.leaf(np.ones((2, 3)))
        nd.backward(nd.tensor_sum(x * x), tape)
        assert unused.grad.shape == (2, 3) and not unused.grad.any()

    def test_fan_out_accumulates(self):
        tape = nd.Tape()
        x = tape.leaf(2.0)
        nd.backward(x * x + x, tape)
        assert x.grad.item() == 5.0

    def test_tape_is_topologically_ordered(self):
        tape = nd.Tape()
        x = tape.leaf([0.5, -0.3])
        nd.tensor_sum(nd.tanh(x * x) + nd.sigmoid(x))
        for i, node in enumerate(tape.nodes):
            assert all(p is None or p < i for p in node.parents)

    def test_mixing_tapes_is_refused(self):
        a, b = nd.Tape().leaf(1.0), nd.Tape().leaf(2.0)
        with pytest.raises(ArgumentError):
            nd.add(a, b)

    def test_broadcast_gradient_reduces_to_operand_shape(self):
        tape = nd.Tape()
        m, row = tape.leaf(np.ones((3, 2))), tape.leaf([1.0, 2.0])
        nd.backward(nd.tensor_sum(m * row), tape)
        assert row.grad.tolist() == [3.0, 3.0]
        assert m.grad.tolist() == [[1.0, 2.0]] * 3


class TestCheckGradients:
    def test_sum_of_squares(self, rng):
        assert nd.check_gradients(lambda x: nd.tensor_sum(x * x), rng.normal(size=7), 1e-5) < 1e-6

    def test_constant_function(self):
        assert nd.check_gradients(lambda x: nd.Tensor(3.0), np.ones(4)) == 0.0

    def test_lstm_cell_loss(self, rng):
        from rtnlab.layers import LstmParams, lstm_cell

        p = LstmParams.init(3, 2, rng)
        x = rng.normal(size=3)

        def fn(h0):
            h, c = lstm_cell(x, h0, np.zeros(2), p)
            return nd.tensor_sum(h * np.array([1.0, -2.0]))
        assert nd.check_gradients(fn, rng.normal(size=2)) < 1e-4

    def test_detects_a_wrong_gradient(self):
        def wrong(x):
            # taped path returns x^2, plain path x^2 + x: analytic and numeric disagree
            return nd.tensor_sum(x * x) if x.tape is not None else nd.tensor_sum(x * x + x)
        assert nd.check_gradients(wrong, np.array([1.0, 2.0])) > 0.1

    def test_non_finite_value(self):
        with pytest.raises(NumericError):
            nd.check_gradients(lambda x: nd.tensor_sum(x) * np.inf, np.ones(2))

    def test_step_must_be_positive(self):
        with pytest.raises(ArgumentError):
            nd.check_gradients(lambda x: nd.tensor_sum(x), np.ones(2), step=0.0)

    @given(st.integers(0, 2**32 - 1))
    def test_composed_ops_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        b = rng.normal(size=(4, 2))
        point = rng.normal(size=12)
        point = point + 0.05 * np.sign(point)

        def fn(x):
            m = nd.matmul(nd.reshape(x, (3, 4)), b)
            z = nd.concat([nd.reshape(nd.tanh(m), (-1,)), nd.sigmoid(x)])
            return nd.tensor_sum(nd.scale(nd.add_const(z, 0.3), 1.7) * z) + nd.mean(nd.relu(x) * x)
        assert nd.check_gradients(fn, point) < 1e-4


class TestRowMajor:
    def test_rank3_formula(self):
        shape = (2, 3, 4)
        assert nd.ravel_index((1, 2, 3), shape) == 1 * 12 + 2 * 4 + 3

    def test_agrees_with_numpy_layout(self, rng):
        t = nd.Tensor(rng.normal(size=(2, 3, 4)))
        flat = t.data.reshape(-1)
        for idx in np.ndindex(2, 3, 4):
            assert flat[nd.ravel_index(idx, t.shape)] == t.data[idx]

    def test_out_of_range(self):
        with pytest.raises(DimensionError):
            nd.ravel_index((2, 0), (2, 3))

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=4), st.data())
    def test_round_trip(self, shape, data):
        flat = data.draw(st.integers(0, math.prod(shape) - 1))
        assert nd.ravel_index(nd.unravel_index(flat, shape), shape) == flat
        idx = tuple(data.draw(st.integers(0, n - 1)) for n in shape)
        assert nd.unravel_index(nd.ravel_index(idx, shape), shape) == idx
