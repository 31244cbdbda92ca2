"""
Tests for the tape, the differentiable ops and the finite-difference checker
"""

import numpy as np
import pytest

from src.core import ops
from src.core.errors import LabelError, NonFiniteError, ShapeError, TapeError
from src.core.gradcheck import grad_check, grad_check_params
from src.core.tensor import Tensor, backward, get_tape, no_grad


class TestTape:
    """Recording, replay and the scalar-loss contract"""

    def test_gradient_accumulates_over_reuse(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        loss = (x * x + x).sum()
        backward(loss)
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_backward_clears_tape(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward((x * 3.0).sum())
        assert len(get_tape()) == 0

    def test_second_backward_without_forward_fails(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * 3.0).sum()
        backward(loss)
        with pytest.raises(TapeError):
            backward(loss)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(TapeError):
            backward(x * 2.0)

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        assert len(get_tape()) == 0
        assert not y.requires_grad

    def test_constants_are_not_recorded(self):
        a = Tensor([1.0, 2.0])
        b = a + a
        assert len(get_tape()) == 0
        assert b._ctx is None

    def test_non_finite_output_raises(self):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(NonFiniteError):
            ops.scale(x, float("inf"))


class TestOps:
    """Forward semantics and adjoints of individual ops"""

    def test_broadcast_add_gradient(self):
        x = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.zeros(4), requires_grad=True)
        backward((x + b).sum())
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))

    def test_broadcast_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((3, 4))) + Tensor(np.ones(3))

    def test_matmul_inner_mismatch(self):
        with pytest.raises(ShapeError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_masked_softmax_gives_exact_zero(self):
        x = Tensor(np.array([[1.0, 2.0, 3.0]]))
        mask = np.array([[True, False, True]])
        out = ops.softmax(x, mask).numpy()
        assert out[0, 1] == 0.0
        np.testing.assert_allclose(out.sum(), 1.0)

    def test_fully_masked_row_is_zero(self):
        out = ops.softmax(Tensor(np.ones((1, 3))), np.zeros((1, 3), dtype=bool)).numpy()
        np.testing.assert_array_equal(out, np.zeros((1, 3)))

    def test_masked_max_empty_row_is_zero(self):
        x = Tensor(np.arange(12.0).reshape(2, 3, 2))
        mask = np.array([[True, True, False], [False, False, False]])
        out = ops.masked_max(x, mask, axis=1).numpy()
        np.testing.assert_array_equal(out, [[2.0, 3.0], [0.0, 0.0]])

    def test_cross_entropy_uniform(self):
        loss = ops.cross_entropy(Tensor(np.zeros((3, 10))), np.array([0, 4, 9]))
        assert loss.item() == pytest.approx(np.log(10))

    def test_cross_entropy_weights(self):
        logits = Tensor(np.array([[0.0, 0.0], [5.0, 0.0]]))
        loss = ops.cross_entropy(logits, np.array([0, 0]), weights=np.array([1.0, 0.0]))
        assert loss.item() == pytest.approx(np.log(2))

    def test_cross_entropy_stable_for_large_logits(self):
        loss = ops.cross_entropy(Tensor(np.array([[1e3, -1e3, 0.0]])), np.array([1]))
        assert loss.item() == pytest.approx(2e3)

    def test_cross_entropy_label_out_of_range(self):
        with pytest.raises(LabelError):
            ops.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_embedding_out_of_range(self):
        with pytest.raises(LabelError):
            ops.embedding(Tensor(np.zeros((4, 2))), np.array([[1, 4]]))

    def test_embedding_gradient_scatters(self):
        table = Tensor(np.zeros((4, 2)), requires_grad=True)
        backward(ops.embedding(table, np.array([1, 1, 3])).sum())
        np.testing.assert_array_equal(table.grad[:, 0], [0.0, 2.0, 0.0, 1.0])


class TestGradCheck:
    """Analytic adjoints against central differences"""

    @pytest.mark.parametrize("fn", [
        lambda x: ops.gelu(x),
        lambda x: ops.softmax(x, np.array([[True, True, False, True]] * 3)) * Tensor(np.arange(12.0).reshape(3, 4)),
        lambda x: ops.l2_normalize(x),
        lambda x: ops.reduce_mean(x * x, axis=0),
        lambda x: ops.transpose(x, (1, 0)) * Tensor(np.arange(12.0).reshape(4, 3)),
        lambda x: ops.cross_entropy(x, np.array([0, 3, 1])),
        lambda x: ops.index(x, (np.array([0, 2, 2]), np.array([1, 3, 3]))),
        lambda x: ops.concat([x, x * 2.0], axis=1),
    ])
    def test_unary_ops(self, fn, rng):
        x = Tensor(rng.normal(size=(3, 4)))
        report = grad_check(fn, x)
        assert report.passed, str(report)

    def test_layer_norm_and_matmul_params(self, rng):
        params = {
            "w": Tensor(rng.normal(size=(4, 5)), requires_grad=True),
            "gamma": Tensor(rng.normal(size=5), requires_grad=True),
            "beta": Tensor(rng.normal(size=5), requires_grad=True),
        }
        x = Tensor(rng.normal(size=(3, 4)))

        def loss():
            hidden = ops.layer_norm(ops.matmul(x, params["w"]), params["gamma"], params["beta"])
            return ops.cross_entropy(hidden, np.array([0, 2, 4]))

        report = grad_check_params(loss, params)
        assert report.passed, str(report)
        assert report.checked == 4 * 5 + 5 + 5
