"""
Objectives - Reconstructive and contrastive proxy-task losses

Every loss returns a scalar Tensor. Terms with nothing to score return a
constant zero so the bundle keeps a fixed set of components.
"""

import logging
from dataclasses import dataclass, field, fields
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..core import ops
from ..core.config import TaskFlags
from ..core.errors import ConfigError, EmptyQueueError, ShapeError
from ..core.tensor import Tensor

logger = logging.getLogger(__name__)

# Bundle components fed by each task flag
TASK_COMPONENTS: Dict[str, Tuple[str, ...]] = {
    "mlm": ("mlm",),
    "msom": ("msom",),
    "mfom": ("mfom",),
    "msg": ("msg",),
    "intra_mfm": ("intra_mfm",),
    "inter_mfm": ("inter_mfm",),
    "dual_vsa": ("vsa_v2t", "vsa_t2v"),
    "legacy_vsa": ("legacy_vsa",),
}


def zero() -> Tensor:
    return Tensor(0.0)


def _detached(value) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)


def head_logits(params: Mapping[str, Tensor], head: str, x: Tensor) -> Tensor:
    """Apply the FC head ``heads.<head>`` to (N, d) inputs"""
    return ops.matmul(x, params[f"heads.{head}.weight"]) + params[f"heads.{head}.bias"]


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize rows of a detached array"""
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return x / np.maximum(norms, 1e-12)


def info_nce(q: Tensor, k_pos, negatives, temperature: float,
             weights: Optional[np.ndarray] = None, normalize: bool = False) -> Tensor:
    """
    -log(exp(q.k+/t) / (exp(q.k+/t) + sum_i exp(q.k_i-/t)))

    Gradients reach ``q`` only; positives and negatives are treated as
    constants.

    Args:
        q: Query vector (d,) or rows (N, d)
        k_pos: Positive key per query, same shape as ``q``
        negatives: (K, d) shared negative set
        temperature: Softmax temperature, > 0
        weights: Per-row weights of the sum (default: mean over rows)
        normalize: L2-normalize queries and keys first

    Raises:
        EmptyQueueError: If the negative set is empty
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    negatives = _detached(negatives)
    if negatives.ndim != 2 or negatives.shape[0] == 0:
        raise EmptyQueueError(f"info_nce needs at least one negative, got array of shape {negatives.shape}")
    if q.ndim == 1:
        q = ops.reshape(q, (1, q.shape[0]))
    k_pos = _detached(k_pos).reshape(q.shape)
    if negatives.shape[1] != q.shape[1]:
        raise ShapeError(f"info_nce: queries {q.shape} and negatives {negatives.shape} differ in width")
    if normalize:
        q = ops.l2_normalize(q)
        k_pos = normalize_rows(k_pos)
        negatives = normalize_rows(negatives)
    positive = ops.reduce_sum(q * Tensor(k_pos, copy=False), axis=1, keepdims=True)
    negative = ops.matmul(q, Tensor(negatives.T, copy=False))
    logits = ops.scale(ops.concat([positive, negative], axis=1), 1.0 / temperature)
    return ops.cross_entropy(logits, np.zeros(q.shape[0], dtype=np.int64), weights)


def pooled_info_nce(q: Tensor, pool, targets: np.ndarray, temperature: float,
                    normalize: bool = False) -> Tensor:
    """
    InfoNCE where each query's positive is row ``targets[i]`` of ``pool`` and
    every other pool row is a negative
    """
    pool = _detached(pool)
    if pool.shape[0] < 2:
        raise EmptyQueueError(f"Contrastive pool of {pool.shape[0]} rows leaves no negatives")
    if normalize:
        q = ops.l2_normalize(q)
        pool = normalize_rows(pool)
    logits = ops.scale(ops.matmul(q, Tensor(pool.T, copy=False)), 1.0 / temperature)
    return ops.cross_entropy(logits, targets)


def mlm_loss(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean token cross-entropy over masked positions; 0 when nothing is masked"""
    if len(targets) == 0:
        return zero()
    return ops.cross_entropy(logits, targets)


def msom_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """6-way permutation cross-entropy over MSOM-applied examples"""
    if len(labels) == 0:
        return zero()
    return ops.cross_entropy(logits, labels)


def mfom_loss(logits: Tensor, original_indices: np.ndarray) -> Tensor:
    """m-way original-position cross-entropy over all shuffled frames"""
    if len(original_indices) == 0:
        return zero()
    return ops.cross_entropy(logits, original_indices)


def msg_loss(logits: Tensor, targets: np.ndarray, target_mask: np.ndarray) -> Tensor:
    """
    Teacher-forced generation loss over real target tokens

    Args:
        logits: (B, t, V) decoder logits
        targets: (B, t) next-token ids
        target_mask: (B, t) true at real targets
    """
    batch, length, vocab = logits.shape
    if targets.shape != (batch, length) or target_mask.shape != (batch, length):
        raise ShapeError(f"msg_loss: logits {logits.shape} vs targets {targets.shape} / mask {target_mask.shape}")
    rows = np.flatnonzero(np.asarray(target_mask).reshape(-1))
    if len(rows) == 0:
        return zero()
    flat = ops.index(ops.reshape(logits, (batch * length, vocab)), rows)
    return ops.cross_entropy(flat, np.asarray(targets).reshape(-1)[rows])


def intra_mfm_loss(projected: Tensor, original_frames: np.ndarray, frame_mask: np.ndarray,
                   sources: Tuple[np.ndarray, np.ndarray], temperature: float,
                   normalize: bool = False) -> Tensor:
    """
    Match each masked frame's projected output to its own pre-extracted feature

    The contrastive pool is every real original frame of the batch.

    Args:
        projected: (N_m, D_f) g(F_E) at masked slots
        original_frames: (B, m, D_f) unaugmented features
        frame_mask: (B, m) real frames
        sources: (example, frame) coordinates of each masked slot's source frame

    Raises:
        EmptyQueueError: If the batch holds a single real frame
    """
    rows, cols = sources
    if len(rows) == 0:
        return zero()
    frame_mask = np.asarray(frame_mask, dtype=bool)
    if frame_mask.sum() < 2:
        raise EmptyQueueError("intra-MFM needs at least two real frames in the batch")
    # Position of each real frame inside the flattened pool
    pool_index = np.cumsum(frame_mask.reshape(-1)) - 1
    pool = np.asarray(original_frames)[frame_mask]
    targets = pool_index.reshape(frame_mask.shape)[rows, cols]
    return pooled_info_nce(projected, pool, targets, temperature, normalize)


def inter_mfm_loss(query_frames: Tensor, key_frames: np.ndarray, frame_mask: np.ndarray,
                   positive_index: np.ndarray, negatives, temperature: float,
                   normalize: bool = False) -> Tensor:
    """
    Match each real query frame to a key frame of the same video against queued frames

    Terms are weighted 1/m_real per example, then averaged over examples that
    have frames.

    Args:
        query_frames: (B, m, d) query-network F_E
        key_frames: (B, m, d) key-network F_E on the originals
        frame_mask: (B, m) real frames
        positive_index: (B, m) key frame chosen for each query frame
        negatives: (K, d) frame-queue contents
    """
    frame_mask = np.asarray(frame_mask, dtype=bool)
    rows, cols = np.nonzero(frame_mask)
    if len(rows) == 0:
        return zero()
    counts = frame_mask.sum(axis=1)
    contributing = int(np.sum(counts > 0))
    weights = 1.0 / (counts[rows] * contributing)
    q = ops.index(query_frames, (rows, cols))
    k_pos = np.asarray(key_frames)[rows, positive_index[rows, cols]]
    return info_nce(q, k_pos, negatives, temperature, weights=weights, normalize=normalize)


def dual_vsa_loss(visual_rep: Tensor, text_rep: Tensor, key_visual_rep: np.ndarray, key_text_rep: np.ndarray,
                  text_negatives, visual_negatives, temperature: float,
                  normalize: bool = False) -> Tuple[Tensor, Tensor]:
    """
    Video-to-text and text-to-video InfoNCE over matched pairs only

    Returns:
        (v2t, t2v): R_v against key R_t and the text queue, R_t against key
        R_v and the visual queue
    """
    v2t = info_nce(visual_rep, key_text_rep, text_negatives, temperature, normalize=normalize)
    t2v = info_nce(text_rep, key_visual_rep, visual_negatives, temperature, normalize=normalize)
    return v2t, t2v


def in_batch_dual_loss(a: Tensor, b: Tensor, temperature: float,
                       normalize: bool = False) -> Tuple[Tensor, Tensor]:
    """
    Symmetric InfoNCE with the batch as negative set; row i of ``a`` matches row i of ``b``

    Both sides receive gradients.

    Returns:
        (a-to-b, b-to-a) losses
    """
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"in_batch_dual_loss: shapes {a.shape} and {b.shape} must be equal (N, d)")
    if a.shape[0] < 2:
        raise EmptyQueueError("in_batch_dual_loss needs a batch of at least two pairs")
    if normalize:
        a, b = ops.l2_normalize(a), ops.l2_normalize(b)
    logits = ops.scale(ops.matmul(a, ops.swap_last(b)), 1.0 / temperature)
    targets = np.arange(a.shape[0])
    return ops.cross_entropy(logits, targets), ops.cross_entropy(ops.swap_last(logits), targets)


def legacy_vsa_loss(matched_logits: Tensor, mismatched_logits: Tensor) -> Tensor:
    """Binary match/mismatch cross-entropy over both halves (label 1 = matched)"""
    logits = ops.concat([matched_logits, mismatched_logits], axis=0)
    targets = np.concatenate([np.ones(matched_logits.shape[0], np.int64),
                              np.zeros(mismatched_logits.shape[0], np.int64)])
    return ops.cross_entropy(logits, targets)


@dataclass
class LossBundle:
    """Per-task loss terms of one step and their sum"""
    mlm: Tensor = field(default_factory=zero)
    msom: Tensor = field(default_factory=zero)
    mfom: Tensor = field(default_factory=zero)
    msg: Tensor = field(default_factory=zero)
    intra_mfm: Tensor = field(default_factory=zero)
    inter_mfm: Tensor = field(default_factory=zero)
    vsa_v2t: Tensor = field(default_factory=zero)
    vsa_t2v: Tensor = field(default_factory=zero)
    legacy_vsa: Tensor = field(default_factory=zero)
    total: Tensor = field(default_factory=zero)
    enabled: Dict[str, bool] = field(default_factory=dict)

    @classmethod
    def components(cls) -> List[str]:
        return [f.name for f in fields(cls) if f.name not in ("total", "enabled")]

    def values(self) -> Dict[str, float]:
        """Component values plus the total, as floats"""
        out = {name: getattr(self, name).item() for name in self.components()}
        out["total"] = self.total.item()
        return out


def total_loss(bundle: LossBundle, tasks: TaskFlags) -> Tensor:
    """
    Unweighted sum of the enabled components

    Disabled components are reset to zero on the bundle so they cannot leak
    into the sum or the logs.

    Raises:
        ConfigError: If no task is enabled
    """
    enabled = tasks.enabled()
    if not enabled:
        raise ConfigError("total_loss: every proxy task is disabled")
    bundle.enabled = {task: tasks.is_enabled(task) for task in TASK_COMPONENTS}
    total = None
    for task, components in TASK_COMPONENTS.items():
        for name in components:
            if not tasks.is_enabled(task):
                setattr(bundle, name, zero())
                continue
            term = getattr(bundle, name)
            total = term if total is None else total + term
    bundle.total = total
    return total
