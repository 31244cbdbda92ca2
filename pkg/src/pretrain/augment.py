"""
Augment - Seeded masking and shuffling of query-network inputs

Per example the pipeline runs in a fixed order: sentence segment shuffle,
token masking, full-sentence mask override, frame shuffle, frame zeroing.
Key-network inputs are the untouched originals kept on the batch.
"""

import math
import logging
import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.config import TrainConfig
from ..core.utils import derive_rng
from ..data.records import Batch
from ..model.config import ModelConfig

logger = logging.getLogger(__name__)

# Lexicographic order of S3; index 0 is the identity
SEGMENT_PERMUTATIONS: Tuple[Tuple[int, int, int], ...] = tuple(itertools.permutations(range(3)))

# Sub-stream tags passed to derive_rng
_BATCH_STREAM = 0
_EXAMPLE_STREAM = 1


def exact_count(rate: float, n: int) -> int:
    """
    Number of items a rate selects out of ``n``: ceil(rate * n)

    The product is rounded to 9 decimals first so that binary floating point
    cannot push e.g. 0.15 * 100 above 15.
    """
    if n <= 0 or rate <= 0:
        return 0
    return min(n, math.ceil(round(rate * n, 9)))


def real_length(token_ids: np.ndarray, config: ModelConfig) -> int:
    """Index one past the first [SEP] (the real sentence length)"""
    sep = np.flatnonzero(token_ids == config.sep_id)
    return int(sep[0]) + 1 if len(sep) else int(np.sum(token_ids != config.pad_id))


def content_positions(token_ids: np.ndarray, config: ModelConfig) -> np.ndarray:
    """Positions holding real, non-structural tokens"""
    ids = np.asarray(token_ids)
    structural = (ids == config.cls_id) | (ids == config.sep_id) | (ids == config.pad_id)
    return np.flatnonzero(~structural)


def mask_tokens(token_ids: np.ndarray, rate: float, rng: np.random.Generator,
                config: ModelConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Replace ceil(rate * n_real) content tokens with [MASK]

    Returns:
        (masked ids, sorted label positions, original ids at those positions)
    """
    ids = np.array(token_ids, dtype=np.int64)
    candidates = content_positions(ids, config)
    count = exact_count(rate, len(candidates))
    if count == 0:
        return ids, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    positions = np.sort(rng.choice(candidates, size=count, replace=False))
    originals = ids[positions].copy()
    ids[positions] = config.mask_id
    return ids, positions, originals


def shuffle_sentence_segments(token_ids: np.ndarray, rng: np.random.Generator,
                              config: ModelConfig) -> Tuple[np.ndarray, Optional[int], Tuple[int, int, int]]:
    """
    Split the content span into 3 segments and reorder them

    Returns:
        (shuffled ids, permutation label or None when n_real < 3, segment lengths)
    """
    ids = np.array(token_ids, dtype=np.int64)
    length = real_length(ids, config)
    n_real = length - 2
    if n_real < 3:
        return ids, None, (0, 0, 0)
    cuts = np.sort(rng.choice(np.arange(1, n_real), size=2, replace=False))
    content = ids[1:length - 1]
    segments = [content[:cuts[0]], content[cuts[0]:cuts[1]], content[cuts[1]:]]
    label = int(rng.integers(len(SEGMENT_PERMUTATIONS)))
    order = SEGMENT_PERMUTATIONS[label]
    ids[1:length - 1] = np.concatenate([segments[i] for i in order])
    lengths = tuple(len(s) for s in segments)
    return ids, label, lengths


def restore_sentence_order(token_ids: np.ndarray, label: int, lengths: Sequence[int],
                           config: ModelConfig) -> np.ndarray:
    """Inverse of ``shuffle_sentence_segments`` given its label and segment lengths"""
    ids = np.array(token_ids, dtype=np.int64)
    order = SEGMENT_PERMUTATIONS[label]
    length = real_length(ids, config)
    content = ids[1:length - 1]
    restored = [None, None, None]
    start = 0
    for segment_index in order:
        size = lengths[segment_index]
        restored[segment_index] = content[start:start + size]
        start += size
    ids[1:length - 1] = np.concatenate(restored)
    return ids


def derangement_or_identity(count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Permutation of ``count`` items drawn uniformly from the identity and all
    derangements; other permutations are rejected and redrawn
    """
    identity = np.arange(count)
    while True:
        order = rng.permutation(count)
        fixed = int(np.sum(order == identity))
        if fixed == 0 or fixed == count:
            return order


def shuffle_frames(features: np.ndarray, m_real: int, rate: float,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Permute ceil(rate * m_real) selected frames among the selected slots

    Either every selected frame moves or none does (see ``derangement_or_identity``).

    Returns:
        (shuffled features, sorted shuffled slots, source index of the frame
        now in each shuffled slot)
    """
    shuffled = np.array(features, dtype=np.float64)
    if m_real < 2:
        return shuffled, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    count = exact_count(rate, m_real)
    if count == 0:
        return shuffled, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    positions = np.sort(rng.choice(m_real, size=count, replace=False))
    sources = positions[derangement_or_identity(count, rng)]
    shuffled[positions] = features[sources]
    return shuffled, positions, sources


def mask_frames(features: np.ndarray, m_real: int, rate: float,
                rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Zero ceil(rate * m_real) real frame rows; returns (features, sorted positions)"""
    masked = np.array(features, dtype=np.float64)
    count = exact_count(rate, m_real)
    if count == 0:
        return masked, np.zeros(0, dtype=np.int64)
    positions = np.sort(rng.choice(m_real, size=count, replace=False))
    masked[positions] = 0.0
    return masked, positions


def select_examples(batch_size: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Flag exactly ceil(rate * batch_size) examples"""
    flags = np.zeros(batch_size, dtype=bool)
    count = exact_count(rate, batch_size)
    if count:
        flags[rng.choice(batch_size, size=count, replace=False)] = True
    return flags


def select_full_mask(batch_size: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Examples whose whole sentence is masked for the encoder"""
    return select_examples(batch_size, rate, rng)


@dataclass
class AugmentedExample:
    """Query inputs and reconstruction labels of one example"""
    token_ids: np.ndarray
    mlm_positions: np.ndarray
    mlm_targets: np.ndarray
    msom_applied: bool
    msom_label: int
    msom_segments: Tuple[int, int, int]
    mfom_positions: np.ndarray
    mfom_targets: np.ndarray
    masked_frame_positions: np.ndarray
    msg_full_mask: bool
    frames: np.ndarray
    # Original index of the frame in each slot after shuffling
    frame_source: np.ndarray
    # Key frame paired with each query frame for inter-MFM (-1 at pads)
    inter_positive: np.ndarray


@dataclass
class AugmentedBatch:
    """Stacked AugmentedExamples plus the original batch for the key network"""
    original: Batch
    examples: List[AugmentedExample]
    token_ids: np.ndarray
    frames: np.ndarray
    mlm_index: Tuple[np.ndarray, np.ndarray]
    mlm_targets: np.ndarray
    msom_applied: np.ndarray
    msom_labels: np.ndarray
    mfom_index: Tuple[np.ndarray, np.ndarray]
    mfom_targets: np.ndarray
    masked_frame_index: Tuple[np.ndarray, np.ndarray]
    masked_frame_sources: np.ndarray
    msg_full_mask: np.ndarray
    decoder_input: np.ndarray
    decoder_target: np.ndarray
    decoder_mask: np.ndarray
    inter_positive: np.ndarray
    step: int = 0

    @property
    def text_mask(self) -> np.ndarray:
        return self.original.text_mask

    @property
    def frame_mask(self) -> np.ndarray:
        return self.original.frame_mask

    @property
    def size(self) -> int:
        return self.original.size


def teacher_forcing(token_ids: np.ndarray, config: ModelConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decoder inputs ids[:-1], targets ids[1:] and the target mask, padded to max_tokens"""
    ids = np.asarray(token_ids)
    count, width = ids.shape
    inputs = np.full((count, width), config.pad_id, dtype=np.int64)
    targets = np.full((count, width), config.pad_id, dtype=np.int64)
    mask = np.zeros((count, width), dtype=bool)
    for b in range(count):
        length = real_length(ids[b], config)
        inputs[b, :length - 1] = ids[b, :length - 1]
        targets[b, :length - 1] = ids[b, 1:length]
        mask[b, :length - 1] = True
    return inputs, targets, mask


def _augment_example(token_ids: np.ndarray, features: np.ndarray, m_real: int, msom_selected: bool,
                     full_mask: bool, rng: np.random.Generator, train: TrainConfig) -> AugmentedExample:
    model = train.model
    ids, label, segments = (token_ids.copy(), None, (0, 0, 0))
    if msom_selected:
        ids, label, segments = shuffle_sentence_segments(token_ids, rng, model)
    ids, mlm_positions, mlm_targets = mask_tokens(ids, train.mlm_rate, rng, model)
    if full_mask:
        # Full-sentence masking supersedes token masking and hides any segment order
        ids = np.array(token_ids, dtype=np.int64)
        ids[content_positions(ids, model)] = model.mask_id
        mlm_positions = np.zeros(0, dtype=np.int64)
        mlm_targets = np.zeros(0, dtype=np.int64)
        label, segments = None, (0, 0, 0)

    frames, mfom_positions, mfom_targets = shuffle_frames(features, m_real, train.mfom_rate, rng)
    frames, masked_positions = mask_frames(frames, m_real, train.frame_mask_rate, rng)

    source = np.full(features.shape[0], -1, dtype=np.int64)
    source[:m_real] = np.arange(m_real)
    source[mfom_positions] = mfom_targets
    inter_positive = np.full(features.shape[0], -1, dtype=np.int64)
    if m_real:
        inter_positive[:m_real] = rng.integers(0, m_real, size=m_real)

    return AugmentedExample(
        token_ids=ids,
        mlm_positions=mlm_positions,
        mlm_targets=mlm_targets,
        msom_applied=label is not None,
        msom_label=-1 if label is None else label,
        msom_segments=segments,
        mfom_positions=mfom_positions,
        mfom_targets=mfom_targets,
        masked_frame_positions=masked_positions,
        msg_full_mask=bool(full_mask),
        frames=frames,
        frame_source=source,
        inter_positive=inter_positive,
    )


def _stack_index(per_example: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    rows = [np.full(len(p), b, dtype=np.int64) for b, p in enumerate(per_example)]
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(rows), np.concatenate([np.asarray(p, dtype=np.int64) for p in per_example])


def augment_batch(batch: Batch, config: TrainConfig, seed: int, step: int) -> AugmentedBatch:
    """
    Build query-network inputs and all reconstruction labels for one step

    The result is a pure function of (batch, config, seed, step): batch-level
    selections and every example draw from their own derived generators.

    Args:
        batch: Collated original records
        config: Rates and model dimensions
        seed: Global seed
        step: Training step the batch belongs to
    """
    model = config.model
    size = batch.size
    batch_rng = derive_rng(seed, step, _BATCH_STREAM)
    msom_selected = select_examples(size, config.msom_rate, batch_rng) if config.tasks.msom else np.zeros(size, bool)
    full_mask = select_full_mask(size, config.msg_rate, batch_rng) if config.tasks.msg else np.zeros(size, bool)

    examples = []
    for b in range(size):
        rng = derive_rng(seed, step, _EXAMPLE_STREAM, b)
        m_real = int(batch.frame_mask[b].sum())
        examples.append(_augment_example(batch.token_ids[b], batch.frames[b], m_real,
                                         bool(msom_selected[b]), bool(full_mask[b]), rng, config))

    masked_index = _stack_index([e.masked_frame_positions for e in examples])
    masked_sources = np.array(
        [examples[b].frame_source[slot] for b, slot in zip(*masked_index)], dtype=np.int64
    )
    decoder_input, decoder_target, decoder_mask = teacher_forcing(batch.token_ids, model)
    logger.debug(f"Augmented step {step}: {int(msom_selected.sum())} MSOM, {int(full_mask.sum())} full-mask examples")
    return AugmentedBatch(
        original=batch,
        examples=examples,
        token_ids=np.stack([e.token_ids for e in examples]) if examples else batch.token_ids.copy(),
        frames=np.stack([e.frames for e in examples]) if examples else batch.frames.copy(),
        mlm_index=_stack_index([e.mlm_positions for e in examples]),
        mlm_targets=np.concatenate([e.mlm_targets for e in examples]) if examples else np.zeros(0, np.int64),
        msom_applied=np.array([e.msom_applied for e in examples], dtype=bool),
        msom_labels=np.array([e.msom_label for e in examples], dtype=np.int64),
        mfom_index=_stack_index([e.mfom_positions for e in examples]),
        mfom_targets=np.concatenate([e.mfom_targets for e in examples]) if examples else np.zeros(0, np.int64),
        masked_frame_index=masked_index,
        masked_frame_sources=masked_sources,
        msg_full_mask=np.array([e.msg_full_mask for e in examples], dtype=bool),
        decoder_input=decoder_input,
        decoder_target=decoder_target,
        decoder_mask=decoder_mask,
        inter_positive=np.stack([e.inter_positive for e in examples]) if examples else np.zeros((0, 0), np.int64),
        step=step,
    )
