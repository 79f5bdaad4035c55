import numpy as np
import pytest

from shapespace.errors import EvaluationError
from shapespace.gradcheck import grad_check
from shapespace.layers import ConvSpec, conv2d, mse_loss
from shapespace.tensor import Tensor


def test_sum_is_exact(rng):
    assert grad_check(lambda x: x.sum(), Tensor(rng.normal(size=(4, 5)))) < 1e-10


def test_conv_relu_mse_pipeline(rng):
    k = Tensor(rng.normal(size=(2, 1, 3, 3)))
    target = rng.normal(size=(2, 4, 4))
    f = lambda x: mse_loss(conv2d(x, ConvSpec(k)).relu(), target)
    assert grad_check(f, Tensor(rng.normal(size=(1, 6, 6)))) < 1e-4


def test_detects_wrong_gradient(rng):
    def broken(x):
        # forward x**2 but backward claims 3x
        return Tensor._make(np.sum(x.data ** 2), (x,), lambda g: (g * 3.0 * x.data,))
    assert grad_check(broken, Tensor(rng.normal(size=5) + 3.0)) > 0.1


def test_subset_of_coordinates(rng):
    assert grad_check(lambda x: (x ** 2).sum(), Tensor(rng.normal(size=100)), n_coords=10, rng=rng) < 1e-8


def test_non_finite_value_raises():
    with pytest.raises(EvaluationError):
        grad_check(lambda x: (x * np.inf).sum(), Tensor(np.ones(2)))
