"""
Momentum - Key network tracking and the memory queues of detached key embeddings
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..core.errors import ConfigError, EmptyQueueError, ShapeError
from ..core.tensor import no_grad
from ..data.records import Batch
from ..model.network import VideoTextTransformer
from ..model.params import ENCODER_PATH_PREFIXES, ModelParams
from .objectives import normalize_rows

logger = logging.getLogger(__name__)

QUEUE_NAMES = ("frames", "visual", "text")


def init_key(query: ModelParams) -> ModelParams:
    """Untrainable copy of the encoder-path parameters of ``query``"""
    key = query.copy(prefixes=ENCODER_PATH_PREFIXES, requires_grad=False)
    logger.debug(f"Key network initialized with {len(key)} of {len(query)} parameter tensors")
    return key


def check_mirror(query: ModelParams, key: ModelParams) -> None:
    """
    Raises:
        ShapeError: If a key tensor has no same-shaped query counterpart
    """
    for name, tensor in key.items():
        if name not in query:
            raise ShapeError(f"Key parameter '{name}' has no query counterpart")
        if query[name].shape != tensor.shape:
            raise ShapeError(f"Key parameter '{name}' has shape {tensor.shape}, query has {query[name].shape}")


@dataclass
class QueryKeyState:
    """Trainable query parameters and their momentum-tracked key mirror"""
    query: ModelParams
    key: ModelParams
    momentum: float = 0.999

    @classmethod
    def create(cls, query: ModelParams, momentum: float = 0.999) -> "QueryKeyState":
        return cls(query=query, key=init_key(query), momentum=momentum)


def momentum_update(state: QueryKeyState, alpha: Optional[float] = None) -> None:
    """
    theta_k <- alpha * theta_k + (1 - alpha) * theta_q, in place

    Raises:
        ConfigError: If alpha lies outside [0, 1]
    """
    alpha = state.momentum if alpha is None else alpha
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"momentum must lie in [0, 1], got {alpha}")
    check_mirror(state.query, state.key)
    for name, key_tensor in state.key.items():
        key_tensor.data[...] = alpha * key_tensor.data + (1.0 - alpha) * state.query[name].data


@dataclass
class KeyOutputs:
    """Detached encoder outputs of the key network on the original inputs"""
    frames: np.ndarray       # (B, m, d)
    visual_rep: np.ndarray   # (B, d)
    text_rep: np.ndarray     # (B, d)


def key_forward(network: VideoTextTransformer, key: ModelParams, batch: Batch,
                normalize: bool = False) -> KeyOutputs:
    """Encode unaugmented records with the key parameters, recording nothing"""
    with no_grad():
        encoded = network.embed_and_encode(key, batch.token_ids, batch.frames, batch.text_mask, batch.frame_mask)
    frames, visual, text = encoded.frames.numpy().copy(), encoded.visual_rep.numpy().copy(), encoded.text_rep.numpy().copy()
    if normalize:
        frames, visual, text = normalize_rows(frames), normalize_rows(visual), normalize_rows(text)
    return KeyOutputs(frames=frames, visual_rep=visual, text_rep=text)


class MemoryQueue:
    """
    Fixed-capacity FIFO ring buffer of d-vectors

    Args:
        capacity: Maximum number of stored vectors
        dim: Vector width
        name: Label used in log and error messages
    """
    def __init__(self, capacity: int, dim: int, name: str = "queue"):
        if capacity < 1:
            raise ConfigError(f"Queue '{name}' capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.name = name
        self._buffer = np.zeros((self.capacity, self.dim))
        self._cursor = 0
        self._fill = 0

    def __len__(self) -> int:
        return self._fill

    def push(self, vectors: np.ndarray) -> None:
        """Append rows in order, evicting the oldest once full"""
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] != self.dim:
            raise ShapeError(f"Queue '{self.name}' expects (k, {self.dim}) vectors, got {vectors.shape}")
        if len(vectors) >= self.capacity:
            self._buffer[...] = vectors[-self.capacity:]
            self._cursor = 0
            self._fill = self.capacity
            return
        end = self._cursor + len(vectors)
        if end <= self.capacity:
            self._buffer[self._cursor:end] = vectors
        else:
            split = self.capacity - self._cursor
            self._buffer[self._cursor:] = vectors[:split]
            self._buffer[:end - self.capacity] = vectors[split:]
        self._cursor = end % self.capacity
        self._fill = min(self.capacity, self._fill + len(vectors))

    def negatives(self) -> np.ndarray:
        """
        Filled rows, oldest first, as a detached copy

        Raises:
            EmptyQueueError: If nothing has been pushed yet
        """
        if self._fill == 0:
            raise EmptyQueueError(f"Queue '{self.name}' is empty")
        if self._fill < self.capacity:
            return self._buffer[:self._fill].copy()
        return np.concatenate([self._buffer[self._cursor:], self._buffer[:self._cursor]])

    def state(self) -> Dict[str, np.ndarray]:
        return {
            "buffer": self._buffer.copy(),
            "cursor": np.array([float(self._cursor)]),
            "fill": np.array([float(self._fill)]),
        }

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        buffer = np.asarray(state["buffer"], dtype=np.float64)
        if buffer.shape != self._buffer.shape:
            raise ShapeError(f"Queue '{self.name}' state has shape {buffer.shape}, expected {self._buffer.shape}")
        self._buffer = buffer.copy()
        self._cursor = int(state["cursor"][0])
        self._fill = int(state["fill"][0])


def make_queues(capacity: int, dim: int) -> Dict[str, MemoryQueue]:
    """The frame, visual-rep and text-rep queues"""
    return {name: MemoryQueue(capacity, dim, name) for name in QUEUE_NAMES}
