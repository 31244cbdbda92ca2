"""
Tests for record files, collation and the synthetic generator
"""

from dataclasses import replace

import numpy as np
import pytest

from src.core.errors import ConfigError, DataFormatError
from src.data.records import NO_LABEL, VideoTextRecord, collate, read_records, write_records
from src.data.synthetic import SyntheticSpec, generate_synthetic


def _record(**overrides):
    values = dict(id="r1", token_ids=[1, 5, 6, 2], frame_features=np.ones((2, 6)), plot=1)
    values.update(overrides)
    return VideoTextRecord(**values)


class TestRecordValidation:

    def test_valid_record(self, tiny_model):
        _record().validate(tiny_model)

    @pytest.mark.parametrize("overrides, message", [
        (dict(token_ids=[5, 6, 2]), "start with"),
        (dict(token_ids=[1, 5, 6]), "end with"),
        (dict(token_ids=[1] + [5] * 8 + [2]), "max_tokens"),
        (dict(token_ids=[1, 99, 2]), "vocabulary"),
        (dict(frame_features=np.ones((5, 6))), "max_frames"),
        (dict(frame_features=np.ones((2, 3))), "frame dim"),
        (dict(frame_features=np.full((2, 6), np.nan)), "non-finite"),
        (dict(abstract_ids=[5, 2]), "abstract"),
        (dict(plot=-2), "negative"),
    ])
    def test_invalid_record(self, tiny_model, overrides, message):
        with pytest.raises(DataFormatError, match=message):
            _record(**overrides).validate(tiny_model)

    def test_error_names_record(self, tiny_model):
        with pytest.raises(DataFormatError, match="'bad-7'"):
            _record(id="bad-7", token_ids=[5, 2]).validate(tiny_model)


class TestCollate:

    def test_padding_and_masks(self, tiny_model):
        batch = collate([_record(), _record(id="r2", token_ids=[1, 7, 2], frame_features=np.ones((3, 6)),
                                            plot=None)], tiny_model)
        assert batch.size == 2
        assert batch.token_ids.shape == (2, tiny_model.max_tokens)
        np.testing.assert_array_equal(batch.text_mask.sum(axis=1), [4, 3])
        np.testing.assert_array_equal(batch.frame_mask.sum(axis=1), [2, 3])
        assert (batch.token_ids[0, 4:] == tiny_model.pad_id).all()
        np.testing.assert_array_equal(batch.frames[0, 2:], 0.0)
        np.testing.assert_array_equal(batch.labels["plot"], [1, NO_LABEL])


class TestRecordFile:

    def test_write_then_read(self, tmp_path, tiny_model, tiny_records):
        path = str(tmp_path / "data.vlrd")
        assert write_records(path, tiny_records, tiny_model.frame_dim) == len(tiny_records)
        loaded = read_records(path, tiny_model)
        assert [r.id for r in loaded] == [r.id for r in tiny_records]
        for original, copy in zip(tiny_records, loaded):
            np.testing.assert_array_equal(copy.token_ids, original.token_ids)
            np.testing.assert_array_equal(copy.frame_features, original.frame_features)
            np.testing.assert_array_equal(copy.abstract_ids, original.abstract_ids)
            np.testing.assert_array_equal(copy.product_image, original.product_image)
            assert (copy.plot, copy.top_cate, copy.leaf_cate) == (original.plot, original.top_cate,
                                                                  original.leaf_cate)

    def test_optional_fields_survive_absence(self, tmp_path, tiny_model):
        path = str(tmp_path / "data.vlrd")
        write_records(path, [_record(plot=None)], tiny_model.frame_dim)
        record, = read_records(path)
        assert record.plot is None and record.abstract_ids is None and record.product_image is None

    def test_not_a_record_file(self, tmp_path):
        path = tmp_path / "junk.vlrd"
        path.write_bytes(b"nothing to see here")
        with pytest.raises(DataFormatError, match="not a record file"):
            read_records(str(path))

    def test_truncated_file(self, tmp_path, tiny_model, tiny_records):
        path = tmp_path / "data.vlrd"
        write_records(str(path), tiny_records, tiny_model.frame_dim)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataFormatError, match="truncated"):
            read_records(str(path))

    def test_frame_dim_mismatch(self, tmp_path, tiny_model, tiny_records):
        path = str(tmp_path / "data.vlrd")
        write_records(path, tiny_records, tiny_model.frame_dim)
        with pytest.raises(DataFormatError, match="frame_dim"):
            read_records(path, tiny_model.__class__(frame_dim=7))


class TestSynthetic:

    def test_records_fit_the_model(self, tiny_model, tiny_records):
        assert len(tiny_records) == 8
        for record in tiny_records:
            record.validate(tiny_model)

    def test_labels_follow_topic(self, tiny_records):
        for i, record in enumerate(tiny_records):
            assert record.plot == i % 2
            assert record.leaf_cate == record.plot
            assert record.top_cate == record.plot // 2

    def test_titles_use_private_words(self, tiny_records):
        words = [set(r.token_ids[1:-1].tolist()) for r in tiny_records]
        for i in range(len(words)):
            for j in range(i + 1, len(words)):
                assert not words[i] & words[j], (i, j)

    def test_frames_identify_record_and_slot(self, tiny_records):
        for record in tiny_records:
            assert len({tuple(np.round(row, 9)) for row in record.frame_features}) == record.num_frames
        means = [r.frame_features.mean(axis=0) for r in tiny_records]
        assert all(not np.allclose(means[i], means[i + 2]) for i in range(len(means) - 2))

    def test_zero_noise_collapses_onto_centroid(self, tiny_spec):
        records = generate_synthetic(replace(tiny_spec, noise=0.0))
        for record in records:
            # records 0 and 1 are the first of topics 0 and 1
            centroid = records[record.plot].frame_features[0]
            assert (record.frame_features == centroid).all()
            np.testing.assert_array_equal(record.product_image, centroid)

    def test_same_topic_frames_are_closer(self):
        records = generate_synthetic(SyntheticSpec())
        means = np.stack([r.frame_features.mean(axis=0) for r in records])
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        cosine = means @ means.T
        topics = np.array([r.plot for r in records])
        same = topics[:, None] == topics[None, :]
        assert cosine[same].min() > cosine[~same].max()

    def test_same_seed_same_records(self, tiny_spec):
        a, b = generate_synthetic(tiny_spec), generate_synthetic(tiny_spec)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.token_ids, y.token_ids)
            np.testing.assert_array_equal(x.frame_features, y.frame_features)

    def test_spec_from_file(self, tmp_path):
        path = tmp_path / "synthetic.ini"
        path.write_text("[synthetic]\nnum_records = 5\nnoise = 0.5\nwith_abstract = no\n", encoding="utf-8")
        spec = SyntheticSpec.from_file(str(path))
        assert (spec.num_records, spec.noise, spec.with_abstract) == (5, 0.5, False)

    def test_spec_unknown_key(self, tmp_path):
        path = tmp_path / "synthetic.ini"
        path.write_text("[synthetic]\nrecords = 5\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="synthetic.records"):
            SyntheticSpec.from_file(str(path))

    def test_spec_invalid_lengths(self):
        with pytest.raises(ConfigError, match="min_tokens"):
            SyntheticSpec(max_tokens=4, min_tokens=3).validate()
