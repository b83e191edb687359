import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from resbrnet.autograd import (
    Tape,
    Tensor,
    add,
    backward,
    create,
    elementwise,
    grad_check,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    sum_all,
)
from resbrnet.errors import ContractError, GraphError, ShapeError, SizeError
from resbrnet.functional import softmax_cross_entropy


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


class TestCreate:
    def test_zeros(self):
        np.testing.assert_array_equal(create([2, 2], "zeros").data, [[0, 0], [0, 0]])

    def test_constant(self):
        np.testing.assert_array_equal(create([3], "constant", value=1.5).data, [1.5, 1.5, 1.5])

    def test_he_normal_variance(self):
        x = create([1000], "he_normal", fan_in=50, seed=7).data
        assert abs(x.var(ddof=1) - 0.04) < 0.2 * 0.04

    def test_he_normal_is_seeded(self):
        a = create([4, 4], "he_normal", fan_in=4, seed=3).data
        b = create([4, 4], "he_normal", fan_in=4, seed=3).data
        c = create([4, 4], "he_normal", fan_in=4, seed=4).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_default_dtype_is_float32(self):
        assert create([2], "ones").dtype == np.float32
        assert create([2], "ones", dtype=np.float64).dtype == np.float64

    def test_from_values(self):
        np.testing.assert_array_equal(create([2, 2], "from_values", values=[1, 2, 3, 4]).data, [[1, 2], [3, 4]])

    @pytest.mark.parametrize("shape", [[], [0], [2, -1]])
    def test_bad_shape(self, shape):
        with pytest.raises(ShapeError):
            create(shape, "zeros")

    def test_size_mismatch(self):
        with pytest.raises(SizeError):
            create([2, 2], "from_values", values=[1, 2, 3])


class TestElementwise:
    def test_add(self):
        np.testing.assert_array_equal(elementwise("add", t64([1, 2]), t64([3, 4])).data, [4, 6])

    def test_relu(self):
        np.testing.assert_array_equal(elementwise("relu_fwd", t64([-1, 0, 2])).data, [0, 0, 2])

    def test_mul_against_loop(self):
        a, b = [2.0, 3.0], [4.0, 5.0]
        expected = [a[i] * b[i] for i in range(2)]
        np.testing.assert_array_equal(elementwise("mul", t64(a), t64(b)).data, expected)

    def test_scale(self):
        np.testing.assert_array_equal(elementwise("scale", t64([1, -2]), c=3.0).data, [3, -6])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(t64([1, 2]), t64([1, 2, 3]))

    @settings(max_examples=50, deadline=None)
    @given(
        hnp.arrays(np.float64, 6, elements=st.integers(-1000, 1000).map(float)),
        hnp.arrays(np.float64, 6, elements=st.integers(-1000, 1000).map(float)),
        hnp.arrays(np.float64, 6, elements=st.integers(-1000, 1000).map(float)),
    )
    def test_commutative_and_associative_on_integers(self, a, b, c):
        A, B, C = t64(a), t64(b), t64(c)
        np.testing.assert_array_equal(add(A, B).data, add(B, A).data)
        np.testing.assert_array_equal(mul(A, B).data, mul(B, A).data)
        np.testing.assert_array_equal(add(add(A, B), C).data, add(A, add(B, C)).data)


class TestMatmul:
    def test_identity(self):
        m = t64([[1, 2], [3, 4]])
        np.testing.assert_array_equal(matmul(t64(np.eye(2)), m).data, m.data)

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        ref = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    ref[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(t64(a), t64(b)).data, ref, rtol=1e-12)
        np.testing.assert_array_equal(matmul(t64([[1, 2]]), t64([[3], [4]])).data, [[11]])

    def test_grad_check(self):
        rng = np.random.default_rng(1)
        b = t64(rng.normal(size=(4, 3)))
        assert grad_check(lambda a: sum_all(matmul(a, b)), t64(rng.normal(size=(2, 4)))) < 1e-6

    def test_inner_dim_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


class TestBackward:
    def test_sum(self):
        x = t64([1, 2, 3], grad=True)
        with Tape() as tape:
            loss = sum_all(x)
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [1, 1, 1])

    def test_square(self):
        x = t64([1, 2], grad=True)
        with Tape() as tape:
            loss = sum_all(mul(x, x))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [2, 4])

    def test_fan_out_accumulates(self):
        x = t64([1, 2, 3], grad=True)
        with Tape() as tape:
            loss = sum_all(add(x, x))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [2, 2, 2])

    def test_grad_accumulates_across_calls(self):
        x = t64([1.0], grad=True)
        for _ in range(2):
            with Tape() as tape:
                loss = sum_all(x)
            backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [2.0])

    @settings(max_examples=30, deadline=None)
    @given(hnp.array_shapes(min_dims=1, max_dims=4, max_side=4))
    def test_sum_gives_all_ones(self, shape):
        x = t64(np.random.default_rng(0).normal(size=shape), grad=True)
        with Tape() as tape:
            loss = sum_all(x)
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.ones(shape))

    def test_non_scalar_loss(self):
        x = t64([1, 2], grad=True)
        with Tape() as tape:
            y = add(x, x)
        with pytest.raises(ContractError):
            backward(y, tape)

    def test_loss_not_on_tape(self):
        x = t64([1, 2], grad=True)
        with Tape():
            loss = sum_all(x)
        with pytest.raises(GraphError):
            backward(loss, Tape())

    def test_no_recording_outside_tape(self):
        x = t64([1, 2], grad=True)
        y = sum_all(x)
        assert not y.requires_grad

    def test_replay_is_deterministic(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(3, 2))
        runs = []
        for _ in range(2):
            x = t64(a, grad=True)
            with Tape() as tape:
                loss = mean_all(relu(matmul(x, t64(b))))
            backward(loss, tape)
            runs.append((loss.data.copy(), x.grad.copy()))
        np.testing.assert_array_equal(runs[0][0], runs[1][0])
        np.testing.assert_array_equal(runs[0][1], runs[1][1])


class TestGradCheck:
    def test_relu_positive(self):
        x = t64(np.random.default_rng(0).uniform(0.5, 2.0, size=10))
        assert grad_check(lambda v: sum_all(relu(v)), x) < 1e-7

    def test_softmax_ce_uniform(self):
        x = t64(np.zeros((3, 4)))
        assert grad_check(lambda v: softmax_cross_entropy(v, [0, 1, 3])[0], x) < 1e-6

    def test_reshape(self):
        w = t64(np.random.default_rng(1).normal(size=6))
        x = t64(np.random.default_rng(2).normal(size=(2, 3)))
        assert grad_check(lambda v: sum_all(mul(reshape(v, (6,)), w)), x) < 1e-6

    def test_needs_float64(self):
        with pytest.raises(ContractError):
            grad_check(sum_all, Tensor(np.ones(3, dtype=np.float32)))

    def test_detects_wrong_gradient(self):
        from resbrnet.autograd import make_result

        def bad_square(v):
            return sum_all(make_result(v.data**2, (v,), lambda g: (g * v.data,)))

        assert grad_check(bad_square, t64([1.0, 2.0])) > 0.1

    def test_float32_tolerance(self):
        # tape gradients in 32-bit against float64 central differences
        rng = np.random.default_rng(4)
        a, w = rng.normal(size=(2, 4)), rng.normal(size=(4, 3))
        x32 = Tensor(a.astype(np.float32), requires_grad=True)
        with Tape() as tape:
            loss = sum_all(relu(matmul(x32, Tensor(w.astype(np.float32)))))
        backward(loss, tape)

        def f(v):
            return np.maximum(v @ w, 0).sum()

        eps = 1e-6
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            ap, am = a.copy(), a.copy()
            ap[idx] += eps
            am[idx] -= eps
            num[idx] = (f(ap) - f(am)) / (2 * eps)
        err = np.max(np.abs(x32.grad - num) / np.maximum(1e-12, np.abs(x32.grad) + np.abs(num)))
        assert err < 1e-4


def test_item_requires_single_element():
    assert t64([2.5]).item() == 2.5
    with pytest.raises(ContractError):
        t64([1, 2]).item()
