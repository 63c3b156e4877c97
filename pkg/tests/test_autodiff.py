from __future__ import annotations

from typing import Callable

import numpy as np
import pytest

from src.autodiff.gradcheck import check_gradients
from src.autodiff.ops import (
    add,
    avg_pool3d,
    channel_affine_norm,
    concat_channels,
    conv3d,
    flatten_tokens,
    maxpool3d,
    relu,
    scale,
    softmax_channels,
    sum_all,
    unflatten_tokens,
    upsample_nearest3d,
    weighted_sum,
)
from src.autodiff.tensor import Tape, Tensor, backward
from src.errors import EvenKernel, NonFiniteInput, NotScalarRoot, OddExtent, ShapeMismatch

TOLERANCE = 1e-4


def _tensor(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


def _reduce(rng: np.random.Generator, op: Callable[[], Tensor]) -> Callable[[], Tensor]:
    """Scalar loss: a fixed random weighting of ``op``'s output."""

    weights = rng.standard_normal(op().shape)
    return lambda: weighted_sum(op(), weights)


class TestConv3d:
    @pytest.mark.parametrize("kernel", [1, 3])
    def test_gradients(self, rng: np.random.Generator, kernel: int) -> None:
        x = _tensor(rng, 2, 4, 4, 4)
        weight = _tensor(rng, 3, 2, kernel, kernel, kernel)
        bias = _tensor(rng, 3)
        fn = _reduce(rng, lambda: conv3d(x, weight, bias))
        assert check_gradients(fn, [x, weight, bias]) < TOLERANCE

    def test_identity_kernel(self, rng: np.random.Generator) -> None:
        x = _tensor(rng, 1, 4, 4, 4)
        weight = np.zeros((1, 1, 3, 3, 3))
        weight[0, 0, 1, 1, 1] = 1.0
        out = conv3d(x, Tensor(weight, dtype=np.float64))
        np.testing.assert_allclose(out.data, x.data)

    def test_zero_padding_at_the_border(self) -> None:
        x = Tensor(np.ones((1, 2, 2, 2)), dtype=np.float64)
        out = conv3d(x, Tensor(np.ones((1, 1, 3, 3, 3)), dtype=np.float64))
        # every voxel of a 2^3 grid sees all eight voxels through a 3^3 kernel
        np.testing.assert_allclose(out.data, 8.0)

    def test_even_kernel(self, rng: np.random.Generator) -> None:
        with pytest.raises(EvenKernel):
            conv3d(_tensor(rng, 1, 4, 4, 4), _tensor(rng, 1, 1, 2, 2, 2))

    def test_channel_mismatch(self, rng: np.random.Generator) -> None:
        with pytest.raises(ShapeMismatch):
            conv3d(_tensor(rng, 2, 4, 4, 4), _tensor(rng, 1, 3, 3, 3, 3))


class TestPooling:
    def test_maxpool_gradients(self, rng: np.random.Generator) -> None:
        x = _tensor(rng, 2, 4, 4, 4)
        assert check_gradients(_reduce(rng, lambda: maxpool3d(x)), [x]) < TOLERANCE

    def test_maxpool_tie_goes_to_first_offset(self) -> None:
        x = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True, dtype=np.float64)
        with Tape():
            root = sum_all(maxpool3d(x))
        backward(root)
        expected = np.zeros((1, 2, 2, 2))
        expected[0, 0, 0, 0] = 1.0
        np.testing.assert_array_equal(x.grad, expected)

    def test_avg_pool_gradients(self, rng: np.random.Generator) -> None:
        x = _tensor(rng, 2, 4, 4, 2)
        assert check_gradients(_reduce(rng, lambda: avg_pool3d(x)), [x]) < TOLERANCE

    def test_upsample_gradients(self, rng: np.random.Generator) -> None:
        x = _tensor(rng, 2, 2, 2, 2)
        out = upsample_nearest3d(x)
        assert out.shape == (2, 4, 4, 4)
        assert check_gradients(_reduce(rng, lambda: upsample_nearest3d(x)), [x]) < TOLERANCE

    def test_maxpool_after_upsample_is_identity(self, rng: np.random.Generator) -> None:
        x = _tensor(rng, 3, 2, 4, 2)
        np.testing.assert_array_equal(maxpool3d(upsample_nearest3d(x)).data, x.data)

    @pytest.mark.parametrize("op", [maxpool3d, avg_pool3d])
    def test_odd_extent(self, rng: np.random.Generator, op: Callable[[Tensor], Tensor]) -> None:
        with pytest.raises(OddExtent):
            op(_tensor(rng, 1, 4, 3, 4))


class TestElementwise:
    def test_relu_gradients(self, rng: np.random.Generator) -> None:
        x = _tensor(rng, 2, 3, 3, 3)
        assert check_gradients(_reduce(rng, lambda: relu(x)), [x]) < TOLERANCE

    def test_relu_derivative_at_zero(self) -> None:
        x = Tensor(np.zeros((1, 1, 1, 1)), requires_grad=True, dtype=np.float64)
        with Tape():
            root = sum_all(relu(x))
        backward(root)
        assert x.grad.item() == 0.0

    def test_concat_add_scale_gradients(self, rng: np.random.Generator) -> None:
        a = _tensor(rng, 2, 2, 2, 2)
        b = _tensor(rng, 3, 2, 2, 2)
        c = _tensor(rng, 5, 2, 2, 2)
        fn = _reduce(rng, lambda: scale(add(concat_channels(a, b), c), 0.5))
        assert check_gradients(fn, [a, b, c]) < TOLERANCE

    def test_softmax_gradients_and_normalization(self, rng: np.random.Generator) -> None:
        x = _tensor(rng, 4, 2, 3, 2)
        np.testing.assert_allclose(softmax_channels(x).data.sum(axis=0), 1.0, atol=1e-12)
        assert check_gradients(_reduce(rng, lambda: softmax_channels(x)), [x]) < TOLERANCE

    def test_softmax_rejects_nan(self) -> None:
        data = np.zeros((2, 1, 1, 1))
        data[0] = np.nan
        with pytest.raises(NonFiniteInput):
            softmax_channels(Tensor(data))

    def test_token_reshapes(self, rng: np.random.Generator) -> None:
        x = _tensor(rng, 3, 2, 2, 4)
        tokens = flatten_tokens(x)
        assert tokens.shape == (16, 3)
        np.testing.assert_array_equal(unflatten_tokens(tokens, (2, 2, 4)).data, x.data)
        fn = _reduce(rng, lambda: unflatten_tokens(flatten_tokens(x), (2, 2, 4)))
        assert check_gradients(fn, [x]) < TOLERANCE

    def test_unflatten_wrong_count(self, rng: np.random.Generator) -> None:
        with pytest.raises(ShapeMismatch):
            unflatten_tokens(_tensor(rng, 10, 2), (2, 2, 2))

    def test_channel_affine_norm_gradients(self, rng: np.random.Generator) -> None:
        x = _tensor(rng, 2, 3, 3, 2)
        gamma = _tensor(rng, 2)
        beta = _tensor(rng, 2)
        fn = _reduce(rng, lambda: channel_affine_norm(x, gamma, beta))
        assert check_gradients(fn, [x, gamma, beta]) < 1e-4


class TestTape:
    def test_nothing_recorded_outside_a_tape(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.standard_normal((1, 2, 2, 2)), requires_grad=True)
        out = sum_all(relu(x))
        assert out.tape is None
        with pytest.raises(NotScalarRoot):
            backward(out)

    def test_only_gradient_requiring_ops_are_recorded(self, rng: np.random.Generator) -> None:
        constant = Tensor(rng.standard_normal((1, 2, 2, 2)))
        with Tape() as tape:
            relu(constant)
        assert len(tape) == 0

    def test_non_scalar_root(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.standard_normal((1, 2, 2, 2)), requires_grad=True)
        with Tape():
            out = relu(x)
        with pytest.raises(NotScalarRoot):
            backward(out)

    def test_repeated_backward_accumulates(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.standard_normal((1, 2, 2, 2)), requires_grad=True, dtype=np.float64)
        with Tape():
            root = sum_all(scale(x, 3.0))
        backward(root)
        np.testing.assert_allclose(x.grad, 3.0)
        backward(root)
        np.testing.assert_allclose(x.grad, 6.0)
        x.zero_grad()
        assert x.grad is None

    def test_shared_input_sums_both_paths(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.standard_normal((2, 2, 2, 2)), requires_grad=True, dtype=np.float64)
        with Tape():
            root = sum_all(add(x, scale(x, 2.0)))
        backward(root)
        np.testing.assert_allclose(x.grad, 3.0)

    def test_nested_tapes_record_innermost(self, rng: np.random.Generator) -> None:
        x = Tensor(rng.standard_normal((1, 2, 2, 2)), requires_grad=True)
        with Tape() as outer:
            with Tape() as inner:
                relu(x)
        assert len(inner) == 1
        assert len(outer) == 0
