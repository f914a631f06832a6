import numpy as np
import pytest
from numpy.testing import assert_allclose

from grasp_quality.autodiff import Tensor, concat
from grasp_quality.errors import ContractError, DimensionError
from grasp_quality.gradcheck import grad_check


def leaf(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class TestConstruction:
    def test_integer_data_defaults_to_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_data_keeps_its_dtype(self):
        assert Tensor(np.zeros(3)).dtype == np.float64

    def test_zero_extent_is_rejected(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((0, 3)))

    def test_reshape_to_incompatible_shape(self):
        with pytest.raises(DimensionError):
            leaf(np.zeros(6)).reshape(4, 2)


class TestBackward:
    def test_product_rule(self):
        x = leaf([1.0, 2.0, 3.0])
        (x * x).sum().backward()
        assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_squared_norm_and_plain_sum(self):
        w = leaf([1.0, -2.0, 3.0])
        (w * w).sum().backward()
        assert_allclose(w.grad, [2.0, -4.0, 6.0])
        v = leaf(np.zeros((2, 3)))
        v.sum().backward()
        assert_allclose(v.grad, np.ones((2, 3)))

    def test_reused_node_accumulates(self):
        x = leaf([1.0, -2.0])
        (x * x + x).sum().backward()
        assert_allclose(x.grad, [3.0, -3.0])

    def test_broadcast_gradient_is_summed_back(self):
        a = leaf(np.ones((2, 3)))
        b = leaf([1.0, 2.0, 3.0])
        (a * b).sum().backward()
        assert_allclose(b.grad, [2.0, 2.0, 2.0])
        assert_allclose(a.grad, [[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])

    def test_division_and_constants(self):
        x = leaf([2.0])
        (1.0 - 3.0 / x).sum().backward()
        assert_allclose(x.grad, [0.75])

    def test_grad_accumulates_across_calls(self):
        x = leaf([1.0])
        (x * 2.0).sum().backward()
        (x * 2.0).sum().backward()
        assert_allclose(x.grad, [4.0])
        x.zero_grad()
        assert x.grad is None

    def test_non_scalar_backward_is_a_contract_error(self):
        with pytest.raises(ContractError):
            (leaf([1.0, 2.0]) * 2.0).backward()

    def test_backward_outside_graph(self):
        with pytest.raises(ContractError):
            Tensor(np.ones(1)).sum().backward()

    def test_deep_chain_does_not_recurse(self):
        x = leaf([1.0])
        y = x
        for _ in range(5000):
            y = y + 0.0
        y.sum().backward()
        assert_allclose(x.grad, [1.0])

    def test_detach_cuts_the_graph(self):
        x = leaf([3.0])
        y = (x.detach() * x).sum()
        y.backward()
        assert_allclose(x.grad, [3.0])


class TestShapeOps:
    def test_concat_routes_gradients(self):
        a = leaf(np.ones((2, 1, 2)))
        b = leaf(np.ones((2, 3, 2)))
        out = concat([a, b], axis=1)
        assert out.shape == (2, 4, 2)
        (out * np.arange(4.0).reshape(1, 4, 1)).sum().backward()
        assert_allclose(a.grad, np.zeros((2, 1, 2)))
        assert_allclose(b.grad[0, :, 0], [1.0, 2.0, 3.0])

    def test_concat_extent_mismatch_names_the_axis(self):
        with pytest.raises(DimensionError, match="axis 2"):
            concat([leaf(np.ones((1, 1, 2))), leaf(np.ones((1, 1, 3)))], axis=1)

    def test_column_gradient(self):
        x = leaf([[1.0, 2.0], [3.0, 4.0]])
        x.column(1).sum().backward()
        assert_allclose(x.grad, [[0.0, 1.0], [0.0, 1.0]])


@pytest.mark.parametrize(
    "f",
    [
        lambda x: (x.exp() * x).sum(),
        lambda x: ((x * x + 1.0).log()).mean(),
        lambda x: (x**3).sum(axis=0).sum(),
        lambda x: (x.reshape(-1) / (x.reshape(-1) * x.reshape(-1) + 2.0)).sum(),
    ],
)
def test_elementwise_ops_pass_finite_differences(f, rng):
    point = Tensor(rng.normal(size=(3, 4)), dtype=np.float64)
    assert grad_check(f, point, epsilon=1e-6) < 1e-6
