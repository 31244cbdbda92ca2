"""
Tests for the Adam optimizer
"""

import numpy as np
import pytest

from src.core.errors import CheckpointError, TapeError
from src.core.optim import Adam
from src.core.tensor import Tensor


class TestAdam:

    def test_first_step_moves_by_learning_rate(self):
        w = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        optimizer = Adam({"w": w}, learning_rate=0.1)
        w.grad = np.array([0.5, -4.0, 1e-3])
        optimizer.step()
        # bias-corrected first step is lr * sign(g) up to eps
        np.testing.assert_allclose(w.data, [0.9, -1.9, 2.9], atol=1e-5)

    def test_step_zeros_gradients(self):
        w = Tensor([1.0], requires_grad=True)
        optimizer = Adam({"w": w})
        w.grad = np.array([1.0])
        optimizer.step()
        assert w.grad is None
        assert optimizer.state.step == 1

    def test_missing_gradient_raises(self):
        w = Tensor([1.0], requires_grad=True)
        v = Tensor([1.0], requires_grad=True)
        optimizer = Adam({"w": w, "v": v})
        w.grad = np.array([1.0])
        with pytest.raises(TapeError, match="'v'"):
            optimizer.step()
        np.testing.assert_array_equal(w.data, [1.0])

    def test_minimizes_quadratic(self):
        w = Tensor([5.0, -3.0], requires_grad=True)
        optimizer = Adam({"w": w}, learning_rate=0.1)
        for _ in range(1000):
            w.grad = 2.0 * w.data
            optimizer.step()
        np.testing.assert_allclose(w.data, [0.0, 0.0], atol=5e-2)

    def test_load_moments_round_trip(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        optimizer = Adam({"w": w})
        w.grad = np.full((2, 2), 0.5)
        optimizer.step()
        state = optimizer.state

        other = Adam({"w": Tensor(np.ones((2, 2)), requires_grad=True)})
        other.load_moments(state.step, state.first_moment, state.second_moment)
        assert other.state.step == 1
        np.testing.assert_array_equal(other.state.first_moment["w"], state.first_moment["w"])

    def test_load_moments_shape_mismatch(self):
        optimizer = Adam({"w": Tensor(np.ones(3), requires_grad=True)})
        with pytest.raises(CheckpointError):
            optimizer.load_moments(1, {"w": np.zeros(2)}, {"w": np.zeros(2)})

    def test_load_moments_missing_name(self):
        optimizer = Adam({"w": Tensor(np.ones(3), requires_grad=True)})
        with pytest.raises(CheckpointError):
            optimizer.load_moments(1, {}, {})
