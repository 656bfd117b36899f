"""Tests for Adam and gradient accumulation."""

from __future__ import annotations

import numpy as np
import pytest

from crt_restore.autodiff import Tensor
from crt_restore.exceptions import ShapeError
from crt_restore.optim import AdamState, GradientAccumulator, adam_step, zero_grads


def _param(value: float | list[float]) -> dict[str, Tensor]:
    return {"w": Tensor(np.atleast_1d(np.asarray(value, dtype=np.float64)), requires_grad=True)}


class TestAdamStep:
    """Tests for adam_step."""

    def test_zero_gradient_leaves_params(self) -> None:
        """Test a zero gradient changes nothing but the step counter."""
        params = _param([1.0, -2.0])
        state = AdamState.create(params)
        assert adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])
        assert state.t == 1

    def test_first_step_moves_by_lr(self) -> None:
        """Test the bias-corrected first step is about -lr for g = 1."""
        params = _param(0.0)
        state = AdamState.create(params)
        adam_step(params, {"w": np.ones(1)}, state, lr=0.01)
        assert params["w"].data[0] == pytest.approx(-0.01, rel=1e-6)

    def test_constant_gradient_steps_stay_lr(self) -> None:
        """Test later steps with a constant gradient also move by about lr."""
        params = _param(0.0)
        state = AdamState.create(params)
        for _ in range(5):
            adam_step(params, {"w": np.ones(1)}, state, lr=0.01)
        assert params["w"].data[0] == pytest.approx(-0.05, rel=1e-5)
        assert state.t == 5

    def test_non_finite_gradient_skipped(self) -> None:
        """Test a NaN gradient skips the step and leaves the state."""
        params = _param([1.0])
        state = AdamState.create(params)
        assert not adam_step(params, {"w": np.array([np.nan])}, state, lr=0.1)
        assert state.t == 0
        assert state.skipped == 1
        np.testing.assert_array_equal(params["w"].data, [1.0])
        np.testing.assert_array_equal(state.m["w"], [0.0])

    def test_data_replaced_not_mutated(self) -> None:
        """Test arrays captured before the step keep their values."""
        params = _param([1.0])
        before = params["w"].data
        adam_step(params, {"w": np.ones(1)}, AdamState.create(params), lr=0.1)
        np.testing.assert_array_equal(before, [1.0])

    def test_shape_mismatch(self) -> None:
        """Test a misshapen gradient is rejected."""
        params = _param([1.0, 2.0])
        with pytest.raises(ShapeError):
            adam_step(params, {"w": np.ones(3)}, AdamState.create(params), lr=0.1)

    def test_non_positive_lr(self) -> None:
        """Test the learning rate must be positive."""
        params = _param([1.0])
        with pytest.raises(ValueError):
            adam_step(params, {"w": np.ones(1)}, AdamState.create(params), lr=0.0)

    def test_missing_gradient_skips_param(self) -> None:
        """Test parameters without a gradient entry are untouched."""
        params = {**_param([1.0]), "b": Tensor(np.array([5.0]), requires_grad=True)}
        adam_step(params, {"w": np.ones(1)}, AdamState.create(params), lr=0.1)
        np.testing.assert_array_equal(params["b"].data, [5.0])

    def test_defaults(self) -> None:
        """Test the default Adam constants."""
        state = AdamState()
        assert (state.beta1, state.beta2, state.eps) == (0.9, 0.999, 1e-8)


class TestGradientAccumulator:
    """Tests for GradientAccumulator."""

    def test_average_of_micro_batches(self) -> None:
        """Test two collected gradients average and are cleared from the params."""
        params = _param([0.0, 0.0])
        acc = GradientAccumulator(params)
        params["w"].grad = np.array([1.0, 3.0])
        acc.collect()
        assert params["w"].grad is None
        params["w"].grad = np.array([3.0, 5.0])
        acc.collect()
        assert acc.count == 2
        np.testing.assert_allclose(acc.averaged()["w"], [2.0, 4.0])

    def test_missing_grad_counts_as_zero(self) -> None:
        """Test a parameter that got no gradient contributes zeros."""
        params = _param([0.0])
        acc = GradientAccumulator(params)
        acc.collect()
        params["w"].grad = np.array([4.0])
        acc.collect()
        np.testing.assert_allclose(acc.averaged()["w"], [2.0])

    def test_reset(self) -> None:
        """Test reset empties the sums."""
        params = _param([0.0])
        acc = GradientAccumulator(params)
        params["w"].grad = np.array([1.0])
        acc.collect()
        acc.reset()
        assert acc.count == 0
        assert acc.averaged() == {}


def test_zero_grads() -> None:
    """Test zero_grads clears every buffer."""
    params = _param([1.0])
    params["w"].grad = np.array([1.0])
    zero_grads(params.values())
    assert params["w"].grad is None
