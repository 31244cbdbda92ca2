"""
Tests for the proxy-task losses
"""

import math

import numpy as np
import pytest

from src.core.config import TaskFlags
from src.core.errors import ConfigError, EmptyQueueError, ShapeError
from src.core.gradcheck import grad_check
from src.core.tensor import Tensor, backward
from src.pretrain import objectives
from src.pretrain.objectives import LossBundle, total_loss


class TestInfoNCE:

    def test_two_orthogonal_negatives(self):
        q = Tensor([1.0, 0.0, 0.0], requires_grad=True)
        loss = objectives.info_nce(q, [1.0, 0.0, 0.0], np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), 1.0)
        assert loss.item() == pytest.approx(math.log(1 + 2 / math.e), abs=1e-6)
        assert loss.item() == pytest.approx(0.5514, abs=1e-4)

    def test_single_orthogonal_negative(self):
        loss = objectives.info_nce(Tensor([0.0, 1.0]), [0.0, 1.0], np.array([[1.0, 0.0]]), 1.0)
        assert loss.item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-6)
        assert loss.item() == pytest.approx(0.3133, abs=1e-4)

    @pytest.mark.parametrize("k", [1, 3, 10])
    def test_symmetric_case_is_log_k_plus_one(self, k, rng):
        q = rng.normal(size=4)
        loss = objectives.info_nce(Tensor(q), q, np.tile(q, (k, 1)), 0.5)
        assert loss.item() == pytest.approx(math.log(k + 1), abs=1e-9)

    def test_temperature_sharpens(self):
        q, negatives = Tensor([1.0, 0.0]), np.array([[0.0, 1.0]])
        warm = objectives.info_nce(q, [1.0, 0.0], negatives, 1.0).item()
        cold = objectives.info_nce(q, [1.0, 0.0], negatives, 0.1).item()
        assert cold < warm

    def test_gradient_reaches_query_only(self, rng):
        k_pos = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        q = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        backward(objectives.info_nce(q, k_pos, rng.normal(size=(5, 3)), 0.7))
        assert q.grad is not None and np.abs(q.grad).sum() > 0
        assert k_pos.grad is None

    def test_query_gradient(self, rng):
        k_pos, negatives = rng.normal(size=(3, 4)), rng.normal(size=(6, 4))
        report = grad_check(lambda q: objectives.info_nce(q, k_pos, negatives, 0.7, normalize=True),
                            Tensor(rng.normal(size=(3, 4))))
        assert report.passed, str(report)

    def test_empty_negatives(self):
        with pytest.raises(EmptyQueueError):
            objectives.info_nce(Tensor([1.0, 0.0]), [1.0, 0.0], np.zeros((0, 2)), 1.0)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            objectives.info_nce(Tensor([1.0, 0.0]), [1.0, 0.0], np.zeros((3, 4)), 1.0)

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            objectives.info_nce(Tensor([1.0, 0.0]), [1.0, 0.0], np.ones((1, 2)), 0.0)

    def test_normalize_ignores_scale(self, rng):
        q, k_pos, negatives = rng.normal(size=3), rng.normal(size=3), rng.normal(size=(4, 3))
        a = objectives.info_nce(Tensor(q), k_pos, negatives, 0.5, normalize=True).item()
        b = objectives.info_nce(Tensor(10 * q), 3 * k_pos, 2 * negatives, 0.5, normalize=True).item()
        assert a == pytest.approx(b, abs=1e-9)


class TestReconstructionLosses:

    def test_mlm_uniform_is_log_vocab(self):
        assert objectives.mlm_loss(Tensor(np.zeros((4, 10))), np.array([0, 3, 5, 9])).item() == \
            pytest.approx(math.log(10))

    def test_mlm_nothing_masked(self):
        loss = objectives.mlm_loss(Tensor(np.zeros((0, 10))), np.zeros(0, dtype=np.int64))
        assert loss.item() == 0.0 and not loss.requires_grad

    def test_msom_uniform_is_log_six(self):
        assert objectives.msom_loss(Tensor(np.zeros((2, 6))), np.array([0, 5])).item() == \
            pytest.approx(math.log(6))

    def test_mfom_uniform_is_log_frames(self):
        assert objectives.mfom_loss(Tensor(np.zeros((3, 8))), np.array([7, 0, 2])).item() == \
            pytest.approx(math.log(8))

    def test_msg_counts_real_targets_only(self):
        logits = np.zeros((2, 3, 6))
        # a confident wrong answer at a padded slot must not count
        logits[1, 2, 0] = 50.0
        mask = np.array([[True, True, True], [True, True, False]])
        loss = objectives.msg_loss(Tensor(logits), np.full((2, 3), 4), mask)
        assert loss.item() == pytest.approx(math.log(6))

    def test_msg_shape_mismatch(self):
        with pytest.raises(ShapeError):
            objectives.msg_loss(Tensor(np.zeros((2, 3, 6))), np.zeros((2, 4), int), np.ones((2, 4), bool))

    def test_legacy_vsa_uniform_is_log_two(self):
        loss = objectives.legacy_vsa_loss(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 2))))
        assert loss.item() == pytest.approx(math.log(2))


class TestFrameContrast:

    def test_intra_mfm_pool_is_every_real_frame(self):
        frames = np.zeros((2, 3, 2))
        frames[0, 0], frames[0, 1], frames[1, 0] = [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]
        mask = np.array([[True, True, False], [True, False, False]])
        # masked slot (1, 0) came from frame (1, 0): pool row 2
        projected = Tensor([[-1.0, 0.0]])
        loss = objectives.intra_mfm_loss(projected, frames, mask, (np.array([1]), np.array([0])), 1.0)
        expected = -math.log(math.exp(1) / (math.exp(1) + math.exp(-1) + math.exp(0)))
        assert loss.item() == pytest.approx(expected, abs=1e-9)

    def test_intra_mfm_needs_two_frames(self):
        with pytest.raises(EmptyQueueError):
            objectives.intra_mfm_loss(Tensor([[1.0, 0.0]]), np.ones((1, 2, 2)), np.array([[True, False]]),
                                      (np.array([0]), np.array([0])), 1.0)

    def test_inter_mfm_weights_each_video_equally(self, rng):
        d = 3
        query = rng.normal(size=(2, 4, d))
        keys = rng.normal(size=(2, 4, d))
        mask = np.array([[True, False, False, False], [True, True, True, True]])
        positive = np.array([[0, -1, -1, -1], [3, 2, 1, 0]])
        negatives = rng.normal(size=(5, d))
        loss = objectives.inter_mfm_loss(Tensor(query), keys, mask, positive, negatives, 0.7).item()

        def term(b, i):
            return objectives.info_nce(Tensor(query[b, i]), keys[b, positive[b, i]], negatives, 0.7).item()

        expected = 0.5 * term(0, 0) + 0.5 * np.mean([term(1, i) for i in range(4)])
        assert loss == pytest.approx(expected, abs=1e-9)

    def test_inter_mfm_without_frames(self):
        loss = objectives.inter_mfm_loss(Tensor(np.zeros((1, 2, 2))), np.zeros((1, 2, 2)),
                                         np.zeros((1, 2), bool), np.full((1, 2), -1), np.ones((1, 2)), 1.0)
        assert loss.item() == 0.0


class TestAlignment:

    def test_dual_vsa_directions(self):
        visual, text = Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])
        v2t, t2v = objectives.dual_vsa_loss(visual, text, key_visual_rep=np.array([[0.0, 1.0]]),
                                            key_text_rep=np.array([[1.0, 0.0]]),
                                            text_negatives=np.array([[0.0, 1.0]]),
                                            visual_negatives=np.array([[1.0, 0.0], [1.0, 0.0]]),
                                            temperature=1.0)
        assert v2t.item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-9)
        assert t2v.item() == pytest.approx(math.log(1 + 2 * math.exp(-1)), abs=1e-9)

    def test_in_batch_dual_on_matched_basis(self):
        a = Tensor(np.eye(3))
        forward, reverse = objectives.in_batch_dual_loss(a, Tensor(np.eye(3)), 1.0)
        expected = math.log(1 + 2 / math.e)
        assert forward.item() == pytest.approx(expected)
        assert reverse.item() == pytest.approx(expected)

    def test_in_batch_dual_needs_two_pairs(self):
        with pytest.raises(EmptyQueueError):
            objectives.in_batch_dual_loss(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 2))), 1.0)


class TestTotalLoss:

    def test_sums_enabled_components(self):
        bundle = LossBundle(mlm=Tensor(1.0), msom=Tensor(2.0), vsa_v2t=Tensor(3.0), vsa_t2v=Tensor(4.0),
                            legacy_vsa=Tensor(100.0))
        total = total_loss(bundle, TaskFlags())
        assert total.item() == pytest.approx(10.0)
        assert bundle.values()["legacy_vsa"] == 0.0

    def test_disabled_components_are_cleared(self):
        bundle = LossBundle(mlm=Tensor(1.0), msom=Tensor(2.0))
        assert total_loss(bundle, TaskFlags.preset("M1")).item() == pytest.approx(1.0)
        assert bundle.msom.item() == 0.0
        assert bundle.enabled["msg"] and not bundle.enabled["msom"]

    def test_nothing_enabled(self):
        flags = TaskFlags(**{name: False for name in ("mlm", "msom", "mfom", "msg", "intra_mfm",
                                                      "inter_mfm", "dual_vsa", "legacy_vsa")})
        with pytest.raises(ConfigError):
            total_loss(LossBundle(), flags)

    def test_component_names(self):
        assert LossBundle.components() == ["mlm", "msom", "mfom", "msg", "intra_mfm", "inter_mfm",
                                           "vsa_v2t", "vsa_t2v", "legacy_vsa"]
