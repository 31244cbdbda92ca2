"""
Tests for query-input augmentation
"""

from dataclasses import replace

import numpy as np
import pytest

from src.core.config import TaskFlags
from src.data.records import collate
from src.pretrain.augment import (SEGMENT_PERMUTATIONS, augment_batch, content_positions, derangement_or_identity,
                                  exact_count, mask_frames, mask_tokens, real_length, restore_sentence_order,
                                  select_examples, shuffle_frames, shuffle_sentence_segments, teacher_forcing)

SEEDS = range(1000)


def _sentence(config, content):
    ids = np.full(config.max_tokens, config.pad_id, dtype=np.int64)
    ids[0] = config.cls_id
    ids[1:1 + len(content)] = content
    ids[1 + len(content)] = config.sep_id
    return ids


class TestExactCount:

    @pytest.mark.parametrize("rate, n, expected", [
        (0.15, 100, 15),
        (0.15, 6, 1),
        (0.15, 7, 2),
        (0.15, 0, 0),
        (0.0, 10, 0),
        (1.0, 10, 10),
        (0.5, 3, 2),
    ])
    def test_ceiling(self, rate, n, expected):
        assert exact_count(rate, n) == expected


class TestTokenMasking:

    def test_masks_exact_count_of_content(self, tiny_model):
        ids = _sentence(tiny_model, [5, 6, 7, 8, 9, 10])
        for seed in SEEDS:
            masked, positions, originals = mask_tokens(ids, 0.15, np.random.default_rng(seed), tiny_model)
            assert len(positions) == 1
            assert set(positions) <= set(content_positions(ids, tiny_model))
            assert (masked[positions] == tiny_model.mask_id).all()
            np.testing.assert_array_equal(originals, ids[positions])
            untouched = np.setdiff1d(np.arange(len(ids)), positions)
            np.testing.assert_array_equal(masked[untouched], ids[untouched])

    def test_never_masks_structure(self, tiny_model):
        ids = _sentence(tiny_model, [5, 6])
        masked, positions, _ = mask_tokens(ids, 1.0, np.random.default_rng(0), tiny_model)
        np.testing.assert_array_equal(positions, [1, 2])
        assert masked[0] == tiny_model.cls_id and masked[3] == tiny_model.sep_id
        assert (masked[4:] == tiny_model.pad_id).all()

    def test_real_length(self, tiny_model):
        assert real_length(_sentence(tiny_model, [5, 6, 7]), tiny_model) == 5


class TestSentenceShuffle:

    def test_restore_inverts_shuffle(self, tiny_model):
        ids = _sentence(tiny_model, [5, 6, 7, 8, 9])
        labels = set()
        for seed in SEEDS:
            shuffled, label, lengths = shuffle_sentence_segments(ids, np.random.default_rng(seed), tiny_model)
            assert all(size >= 1 for size in lengths) and sum(lengths) == 5
            assert sorted(shuffled[1:6]) == [5, 6, 7, 8, 9]
            assert shuffled[0] == tiny_model.cls_id and shuffled[6] == tiny_model.sep_id
            np.testing.assert_array_equal(restore_sentence_order(shuffled, label, lengths, tiny_model), ids)
            labels.add(label)
        assert labels == set(range(len(SEGMENT_PERMUTATIONS)))

    def test_identity_label_keeps_order(self, tiny_model):
        ids = _sentence(tiny_model, [5, 6, 7])
        for seed in SEEDS:
            shuffled, label, _ = shuffle_sentence_segments(ids, np.random.default_rng(seed), tiny_model)
            if label == 0:
                np.testing.assert_array_equal(shuffled, ids)

    def test_short_sentence_is_not_shuffled(self, tiny_model):
        ids = _sentence(tiny_model, [5, 6])
        shuffled, label, _ = shuffle_sentence_segments(ids, np.random.default_rng(0), tiny_model)
        assert label is None
        np.testing.assert_array_equal(shuffled, ids)


class TestFrameOps:

    def test_shuffle_permutes_selected_slots(self, rng):
        features = rng.normal(size=(8, 3))
        for seed in SEEDS:
            shuffled, positions, sources = shuffle_frames(features, 7, 0.3, np.random.default_rng(seed))
            assert len(positions) == 3
            assert sorted(sources) == sorted(positions)
            np.testing.assert_array_equal(shuffled[positions], features[sources])
            others = np.setdiff1d(np.arange(8), positions)
            np.testing.assert_array_equal(shuffled[others], features[others])
            assert positions.max() < 7

    def test_shuffle_moves_all_selected_frames_or_none(self, rng):
        features = rng.normal(size=(8, 3))
        outcomes = {}
        for seed in SEEDS:
            _, positions, sources = shuffle_frames(features, 7, 0.3, np.random.default_rng(seed))
            assert int(np.sum(sources == positions)) in (0, 3)
            order = tuple(np.searchsorted(positions, sources).tolist())
            outcomes[order] = outcomes.get(order, 0) + 1
        # identity and the two 3-cycles, each about a third of the draws
        assert len(outcomes) == 3
        assert all(250 <= count <= 420 for count in outcomes.values())

    def test_derangement_or_identity(self):
        assert derangement_or_identity(1, np.random.default_rng(0)).tolist() == [0]
        for seed in range(200):
            order = derangement_or_identity(5, np.random.default_rng(seed))
            assert sorted(order) == list(range(5))
            assert int(np.sum(order == np.arange(5))) in (0, 5)

    def test_single_frame_is_not_shuffled(self, rng):
        features = rng.normal(size=(4, 3))
        shuffled, positions, _ = shuffle_frames(features, 1, 1.0, rng)
        assert len(positions) == 0
        np.testing.assert_array_equal(shuffled, features)

    def test_mask_zeroes_real_frames_only(self, rng):
        features = rng.normal(size=(8, 3)) + 5.0
        for seed in SEEDS:
            masked, positions = mask_frames(features, 6, 0.15, np.random.default_rng(seed))
            assert len(positions) == 1 and positions[0] < 6
            np.testing.assert_array_equal(masked[positions], 0.0)
            assert np.count_nonzero(np.all(masked == 0.0, axis=1)) == 1

    def test_select_examples_exact(self, rng):
        for seed in SEEDS:
            assert select_examples(7, 0.15, np.random.default_rng(seed)).sum() == 2


class TestAugmentBatch:

    @pytest.fixture
    def batch(self, tiny_model, tiny_records):
        return collate(tiny_records[:4], tiny_model)

    def test_pure_function_of_seed_and_step(self, train_config, batch):
        a = augment_batch(batch, train_config, seed=1, step=3)
        b = augment_batch(batch, train_config, seed=1, step=3)
        c = augment_batch(batch, train_config, seed=1, step=4)
        np.testing.assert_array_equal(a.token_ids, b.token_ids)
        np.testing.assert_array_equal(a.frames, b.frames)
        np.testing.assert_array_equal(a.inter_positive, b.inter_positive)
        assert not (np.array_equal(a.token_ids, c.token_ids) and np.array_equal(a.frames, c.frames))

    def test_originals_untouched(self, train_config, batch):
        token_ids, frames = batch.token_ids.copy(), batch.frames.copy()
        aug = augment_batch(batch, train_config, seed=0, step=0)
        np.testing.assert_array_equal(aug.original.token_ids, token_ids)
        np.testing.assert_array_equal(aug.original.frames, frames)

    def test_full_mask_overrides_token_masking(self, tiny_model, train_config, batch):
        config = replace(train_config, msg_rate=1.0, msom_rate=1.0)
        aug = augment_batch(batch, config, seed=0, step=0)
        assert aug.msg_full_mask.all()
        assert not aug.msom_applied.any()
        assert len(aug.mlm_targets) == 0
        for b in range(batch.size):
            content = content_positions(batch.token_ids[b], tiny_model)
            assert (aug.token_ids[b, content] == tiny_model.mask_id).all()

    def test_disabled_tasks_select_nothing(self, train_config, batch):
        config = replace(train_config, tasks=TaskFlags.preset("M1"), msom_rate=1.0)
        aug = augment_batch(batch, config, seed=0, step=0)
        assert not aug.msom_applied.any()

    def test_labels_line_up(self, tiny_model, train_config, batch):
        aug = augment_batch(batch, replace(train_config, msom_rate=0.0), seed=5, step=2)
        rows, cols = aug.mlm_index
        assert (aug.token_ids[rows, cols] == tiny_model.mask_id).all()
        np.testing.assert_array_equal(aug.mlm_targets, batch.token_ids[rows, cols])
        for b in range(batch.size):
            real = batch.frame_mask[b]
            assert (aug.inter_positive[b, real] >= 0).all()
            assert (aug.inter_positive[b, ~real] == -1).all()
            assert aug.inter_positive[b, real].max() < real.sum()

    def test_decoder_targets_are_shifted_inputs(self, tiny_model, batch):
        inputs, targets, mask = teacher_forcing(batch.token_ids, tiny_model)
        for b in range(batch.size):
            length = real_length(batch.token_ids[b], tiny_model)
            assert mask[b].sum() == length - 1
            np.testing.assert_array_equal(inputs[b, :length - 1], batch.token_ids[b, :length - 1])
            np.testing.assert_array_equal(targets[b, :length - 1], batch.token_ids[b, 1:length])
            assert targets[b, length - 2] == tiny_model.sep_id
