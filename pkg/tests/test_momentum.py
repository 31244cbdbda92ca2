"""
Tests for the momentum-tracked key network and the memory queues
"""

from collections import deque

import numpy as np
import pytest

from src.core.errors import ConfigError, EmptyQueueError, ShapeError
from src.core.tensor import Tensor, get_tape
from src.data.records import collate
from src.model.network import VideoTextTransformer
from src.model.params import ENCODER_PATH_PREFIXES, ModelParams
from src.pretrain.momentum import (QUEUE_NAMES, MemoryQueue, QueryKeyState, check_mirror, init_key, key_forward,
                                   make_queues, momentum_update)


@pytest.fixture
def state(tiny_model):
    return QueryKeyState.create(ModelParams.initialize(tiny_model, seed=1), momentum=0.999)


class TestKeyNetwork:

    def test_key_mirrors_encoder_path_only(self, state):
        assert len(state.key) > 0
        assert all(name.startswith(ENCODER_PATH_PREFIXES) for name in state.key)
        assert not any(t.requires_grad for _, t in state.key.items())
        for name, tensor in state.key.items():
            np.testing.assert_array_equal(tensor.data, state.query[name].data)

    def test_key_is_a_copy(self, state):
        state.query["embeddings.token"].data += 1.0
        assert not np.array_equal(state.key["embeddings.token"].data, state.query["embeddings.token"].data)

    @pytest.mark.parametrize("alpha", [0.0, 0.5, 0.999, 1.0])
    def test_update_recurrence(self, state, alpha, rng):
        for _, tensor in state.query.items():
            tensor.data[...] = rng.normal(size=tensor.shape)
        before = {name: t.data.copy() for name, t in state.key.items()}
        momentum_update(state, alpha)
        for name, tensor in state.key.items():
            expected = alpha * before[name] + (1.0 - alpha) * state.query[name].data
            np.testing.assert_allclose(tensor.data, expected, rtol=0, atol=1e-12)

    def test_alpha_endpoints(self, state, rng):
        for _, tensor in state.query.items():
            tensor.data[...] = rng.normal(size=tensor.shape)
        before = {name: t.data.copy() for name, t in state.key.items()}
        momentum_update(state, 1.0)
        for name, tensor in state.key.items():
            np.testing.assert_array_equal(tensor.data, before[name])
        momentum_update(state, 0.0)
        for name, tensor in state.key.items():
            np.testing.assert_array_equal(tensor.data, state.query[name].data)

    def test_default_alpha_from_state(self, state):
        state.query["encoder.final_ln.shift"].data[...] = 1.0
        momentum_update(state)
        np.testing.assert_allclose(state.key["encoder.final_ln.shift"].data, 0.001, atol=1e-15)

    @pytest.mark.parametrize("alpha", [-0.1, 1.5])
    def test_alpha_out_of_range(self, state, alpha):
        with pytest.raises(ConfigError):
            momentum_update(state, alpha)

    def test_mirror_mismatch(self, state, tiny_model):
        query = ModelParams.initialize(tiny_model)
        key = init_key(query)
        key.add("encoder.extra", Tensor(np.zeros(2)))
        with pytest.raises(ShapeError, match="encoder.extra"):
            check_mirror(query, key)

    def test_key_forward_records_nothing(self, state, tiny_model, tiny_records):
        network = VideoTextTransformer(tiny_model)
        batch = collate(tiny_records[:3], tiny_model)
        outputs = key_forward(network, state.key, batch, normalize=True)
        assert len(get_tape()) == 0
        assert outputs.frames.shape == (3, tiny_model.max_frames, tiny_model.hidden_size)
        np.testing.assert_allclose(np.linalg.norm(outputs.visual_rep, axis=1), 1.0)
        np.testing.assert_allclose(np.linalg.norm(outputs.text_rep, axis=1), 1.0)


class TestMemoryQueue:

    def test_empty_queue_has_no_negatives(self):
        with pytest.raises(EmptyQueueError, match="visual"):
            MemoryQueue(4, 2, "visual").negatives()

    def test_fifo_matches_reference_model(self):
        """Random push sizes against a bounded deque, over many independent cases"""
        rng = np.random.default_rng(0)
        for case in range(1000):
            capacity = int(rng.integers(1, 9))
            queue = MemoryQueue(capacity, 2)
            reference = deque(maxlen=capacity)
            counter = 0
            for _ in range(int(rng.integers(1, 6))):
                size = int(rng.integers(1, 2 * capacity + 2))
                rows = np.stack([np.arange(counter, counter + size), -np.arange(counter, counter + size)], axis=1)
                counter += size
                queue.push(rows.astype(np.float64))
                reference.extend(rows.tolist())
                assert len(queue) == len(reference), case
                np.testing.assert_array_equal(queue.negatives(), np.array(list(reference)))

    def test_negatives_are_a_copy(self):
        queue = MemoryQueue(3, 2)
        queue.push(np.ones((2, 2)))
        queue.negatives()[0, 0] = 99.0
        assert queue.negatives()[0, 0] == 1.0

    def test_push_shape(self):
        with pytest.raises(ShapeError):
            MemoryQueue(3, 2).push(np.ones((2, 3)))

    def test_capacity_must_be_positive(self):
        with pytest.raises(ConfigError):
            MemoryQueue(0, 2)

    def test_state_round_trip(self, rng):
        queue = MemoryQueue(5, 3)
        queue.push(rng.normal(size=(7, 3)))
        restored = MemoryQueue(5, 3)
        restored.load_state(queue.state())
        np.testing.assert_array_equal(restored.negatives(), queue.negatives())
        assert len(restored) == 5

    def test_state_shape_mismatch(self):
        with pytest.raises(ShapeError):
            MemoryQueue(5, 3).load_state(MemoryQueue(4, 3).state())

    def test_make_queues(self):
        queues = make_queues(16, 8)
        assert tuple(queues) == QUEUE_NAMES
        assert all(q.capacity == 16 and q.dim == 8 for q in queues.values())
