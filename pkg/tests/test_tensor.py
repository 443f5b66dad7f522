import math

import numpy as np
import pytest

from geognn import tensor as T
from geognn.errors import NumericalError, ShapeError
from geognn.rng import Rng
from geognn.tensor import Tape, Tensor

from oracles import central_difference, relative_error, segment_sum_reference, softmax_ce_reference


def grad_of(f, *arrays, h=1e-5):
    """Analytic grads of f(tensors...) next to central-difference oracles."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = f(*tensors)
    tape.backward(loss)
    analytic = [t.grad for t in tensors]
    numeric = []
    for i, arr in enumerate(arrays):
        def probe(x, i=i):
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(x)
            return f(*args).item()
        numeric.append(central_difference(probe, np.array(arr, dtype=float), h=h))
    return analytic, numeric


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(a, Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_selection_row(self):
        out = T.matmul(Tensor([[1.0, 0.0]]), Tensor([[2.0], [3.0]]))
        np.testing.assert_array_equal(out.data, [[2.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad_of_sum_vs_closed_form(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        ta = Tensor(a, requires_grad=True)
        with Tape() as tape:
            loss = T.sum_all(T.matmul(ta, Tensor(b)))
        tape.backward(loss)
        np.testing.assert_allclose(ta.grad, np.ones((3, 2)) @ b.T, rtol=1e-12)

    def test_grad_vs_finite_differences(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        analytic, numeric = grad_of(lambda x, y: T.sum_all(T.matmul(x, y)), a, b)
        assert relative_error(analytic[0], numeric[0]) < 1e-4
        assert relative_error(analytic[1], numeric[1]) < 1e-4


class TestElementwise:
    def test_relu(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_exp_zero(self):
        assert T.exp(Tensor([0.0])).data[0] == 1.0

    def test_log_grad_at_two(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as tape:
            loss = T.sum_all(T.log(x))
        tape.backward(loss)
        numeric = central_difference(lambda v: math.log(v[0]), np.array([2.0]))
        assert abs(x.grad[0] - 0.5) < 1e-12
        assert relative_error(x.grad, numeric) < 1e-4

    def test_log_rejects_nonpositive(self):
        with pytest.raises(NumericalError):
            T.log(Tensor([0.0]))

    def test_div_rejects_zero(self):
        with pytest.raises(NumericalError):
            T.div(Tensor([1.0]), Tensor([0.0]))

    def test_exact_shape_rule(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_scalar_broadcast(self):
        out = T.mul(Tensor([[1.0, 2.0]]), 3.0)
        np.testing.assert_array_equal(out.data, [[3.0, 6.0]])

    @pytest.mark.parametrize("op", [T.add, T.sub, T.mul, T.div])
    def test_binary_grads_vs_finite_differences(self, op):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(3, 3))
        b = rng.normal(size=(3, 3)) + 3.0  # keep divisors away from zero
        analytic, numeric = grad_of(lambda x, y: T.sum_all(T.mul(op(x, y), op(x, y))), a, b)
        assert relative_error(analytic[0], numeric[0]) < 1e-4
        assert relative_error(analytic[1], numeric[1]) < 1e-4

    @pytest.mark.parametrize("op", [T.relu, T.exp, T.log])
    def test_unary_grads_vs_finite_differences(self, op):
        rng = np.random.default_rng(3)
        x = rng.uniform(0.5, 2.0, size=(4, 2))
        analytic, numeric = grad_of(lambda t: T.sum_all(T.mul(op(t), op(t))), x)
        assert relative_error(analytic[0], numeric[0]) < 1e-4


class TestSegmentSum:
    def test_hand_example(self):
        out = T.segment_sum(Tensor([[1.0], [2.0], [3.0]]), [0, 0, 1], 2)
        np.testing.assert_array_equal(out.data, [[3.0], [3.0]])

    def test_single_segment_is_column_sum(self):
        v = np.arange(6.0).reshape(3, 2)
        out = T.segment_sum(Tensor(v), [0, 0, 0], 1)
        np.testing.assert_array_equal(out.data, v.sum(axis=0, keepdims=True))

    def test_empty_segment_is_zero(self):
        out = T.segment_sum(Tensor([[1.0], [2.0]]), [0, 1], 3)
        np.testing.assert_array_equal(out.data[2], [0.0])

    def test_id_out_of_range(self):
        with pytest.raises(ShapeError):
            T.segment_sum(Tensor([[1.0]]), [1], 1)

    def test_matches_reference_on_random_input(self):
        rng = np.random.default_rng(4)
        vals = rng.normal(size=(20, 3))
        ids = rng.integers(0, 5, size=20)
        out = T.segment_sum(Tensor(vals), ids, 5)
        np.testing.assert_allclose(out.data, segment_sum_reference(vals, ids, 5), atol=1e-12)

    def test_bit_identical_under_shuffle_within_segment(self):
        rng = np.random.default_rng(5)
        vals = rng.normal(size=(30, 4))
        ids = rng.integers(0, 4, size=30)
        base = T.segment_sum(Tensor(vals), ids, 4).data
        for trial in range(10):
            perm = np.random.default_rng(trial).permutation(30)
            # permuting whole rows keeps each (row, id) pair intact, so every
            # segment sees the same multiset in a different order
            shuffled = T.segment_sum(Tensor(vals[perm]), ids[perm], 4).data
            assert np.array_equal(base, shuffled)

    def test_grad_vs_finite_differences(self):
        rng = np.random.default_rng(6)
        vals = rng.normal(size=(6, 2))
        ids = np.array([0, 1, 0, 2, 2, 1])
        analytic, numeric = grad_of(
            lambda v: T.sum_all(T.mul(T.segment_sum(v, ids, 3), T.segment_sum(v, ids, 3))), vals
        )
        assert relative_error(analytic[0], numeric[0]) < 1e-4


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        logits = np.zeros((2, 30))
        one_hot = np.zeros((2, 30))
        one_hot[:, 7] = 1.0
        loss = T.softmax_cross_entropy(Tensor(logits), Tensor(one_hot))
        assert loss.item() == pytest.approx(math.log(30.0), abs=1e-12)

    def test_monotone_decrease_with_margin(self):
        one_hot = np.zeros((1, 4))
        one_hot[0, 1] = 1.0
        losses = []
        for margin in [0.0, 2.0, 5.0, 10.0, 20.0]:
            logits = np.zeros((1, 4))
            logits[0, 1] = margin
            losses.append(T.softmax_cross_entropy(Tensor(logits), Tensor(one_hot)).item())
        assert all(hi > lo for hi, lo in zip(losses, losses[1:]))
        assert losses[-1] < 1e-6

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(4, 5))
        one_hot = np.eye(5)[rng.integers(0, 5, size=4)]
        loss = T.softmax_cross_entropy(Tensor(logits), Tensor(one_hot))
        assert loss.item() == pytest.approx(softmax_ce_reference(logits, one_hot), abs=1e-12)

    def test_grad_vs_finite_differences(self):
        rng = np.random.default_rng(8)
        logits = rng.normal(size=(3, 6))
        one_hot = np.eye(6)[rng.integers(0, 6, size=3)]
        analytic, numeric = grad_of(
            lambda l: T.softmax_cross_entropy(l, Tensor(one_hot)), logits
        )
        assert relative_error(analytic[0], numeric[0]) < 1e-4

    def test_rejects_bad_targets(self):
        with pytest.raises(ShapeError):
            T.softmax_cross_entropy(Tensor(np.zeros((1, 3))), Tensor([[0.5, 0.2, 0.1]]))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = T.sum_all(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = T.sum_all(T.mul(x, x))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-14)

    def test_rejects_non_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = T.mul(x, x)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_reused_tensor_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            loss = T.sum_all(T.add(T.mul(x, x), x))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [7.0])


class TestPlumbingOps:
    def test_layer_norm_forward(self):
        x = np.array([[1.0, 2.0, 3.0, 4.0]])
        out = T.layer_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        assert out.data.mean() == pytest.approx(0.0, abs=1e-12)
        assert out.data.std() == pytest.approx(1.0, rel=1e-4)

    def test_layer_norm_grad_vs_finite_differences(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(3, 5))
        gain = rng.normal(size=5)
        bias = rng.normal(size=5)
        analytic, numeric = grad_of(
            lambda a, g, b: T.sum_all(T.mul(T.layer_norm(a, g, b), T.layer_norm(a, g, b))),
            x, gain, bias,
        )
        for got, want in zip(analytic, numeric):
            assert relative_error(got, want) < 1e-4

    def test_affine_grad_vs_finite_differences(self):
        rng = np.random.default_rng(10)
        x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        analytic, numeric = grad_of(
            lambda a, c, d: T.sum_all(T.mul(T.affine(a, c, d), T.affine(a, c, d))), x, w, b
        )
        for got, want in zip(analytic, numeric):
            assert relative_error(got, want) < 1e-4

    def test_gather_concat_mean_grads(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 3))
        ids = np.array([0, 2, 2, 1, 3])

        def f(t):
            g = T.gather_rows(t, ids)
            c = T.concat([g, g], axis=1)
            return T.sum_all(T.mul(T.mean_rows(c), T.mean_rows(c)))

        analytic, numeric = grad_of(f, x)
        assert relative_error(analytic[0], numeric[0]) < 1e-4

    def test_dropout_eval_is_identity(self):
        x = Tensor([[1.0, 2.0]])
        assert T.dropout(x, 0.5, None, training=False) is x

    def test_dropout_train_reproducible_and_scaled(self):
        x = Tensor(np.ones((8, 8)))
        a = T.dropout(x, 0.5, Rng(42), training=True)
        b = T.dropout(x, 0.5, Rng(42), training=True)
        np.testing.assert_array_equal(a.data, b.data)
        assert set(np.unique(a.data)) <= {0.0, 2.0}

    def test_dropout_grad_uses_same_mask(self):
        x = Tensor(np.ones((4, 4)), requires_grad=True)
        with Tape() as tape:
            out = T.dropout(x, 0.25, Rng(3), training=True)
            loss = T.sum_all(out)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, out.data)

    def test_bce_with_logits_values(self):
        logits = Tensor(np.zeros((1, 4)))
        bits = Tensor(np.array([[0.0, 1.0, 0.0, 1.0]]))
        assert T.bce_with_logits(logits, bits).item() == pytest.approx(math.log(2.0), abs=1e-12)
        strong = Tensor(np.array([[-10.0, 10.0, -10.0, 10.0]]))
        assert T.bce_with_logits(strong, bits).item() < 0.01

    def test_bce_grad_vs_finite_differences(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(size=(2, 5))
        bits = (rng.uniform(size=(2, 5)) > 0.5).astype(float)
        mask = np.ones((2, 5))
        mask[0, 1] = 0.0
        analytic, numeric = grad_of(lambda l: T.bce_with_logits(l, Tensor(bits), mask), logits)
        assert relative_error(analytic[0], numeric[0]) < 1e-4


class TestDeterminismAndSafety:
    def test_identical_forward_twice(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(5, 4))
        w = rng.normal(size=(4, 4))

        def run():
            return T.relu(T.affine(Tensor(x), Tensor(w), Tensor(np.zeros(4)))).data

        assert np.array_equal(run(), run())

    def test_nan_input_rejected(self):
        with pytest.raises(NumericalError):
            T.add(Tensor([np.nan]), Tensor([1.0]))

    def test_overflow_rejected(self):
        with pytest.raises(NumericalError):
            T.exp(Tensor([1000.0]))

    def test_gradcheck_random_ops_20_instances(self):
        # every differentiable op, 20 random instances, rel err < 1e-4
        rng = np.random.default_rng(14)
        for _ in range(20):
            x = rng.uniform(0.3, 1.5, size=(3, 4))
            w = rng.normal(size=(4, 3))

            def f(t, m):
                a = T.affine(t, m, Tensor(np.zeros(3)))
                b = T.relu(a)
                c = T.exp(T.mul(b, -0.3))
                d = T.log(T.add(c, 1.0))
                return T.sum_all(T.mul(d, d))

            analytic, numeric = grad_of(f, x, w)
            assert relative_error(analytic[0], numeric[0]) < 1e-4
            assert relative_error(analytic[1], numeric[1]) < 1e-4
