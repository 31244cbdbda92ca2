"""
Retrieval - Text-to-video and image-to-video retrieval fine-tuning and evaluation

Text mode scores the query title's R_t (title encoded alone) against the
candidate's R_v (frames encoded alone). Image mode replaces the candidate's
first frame with the query product image and scores R_v of that modified
encoding against R_v of the candidate's own encoding.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..core import ops
from ..core.config import DownstreamConfig
from ..core.errors import ConfigError, DataFormatError, NonFiniteError
from ..core.tensor import Tensor, no_grad
from ..core.utils import derive_rng
from ..data.records import Batch, VideoTextRecord, collate
from ..model.network import VideoTextTransformer
from ..model.params import ModelParams
from ..pretrain.objectives import in_batch_dual_loss
from .common import (FinetuneResult, checked_network, encode_batch, encoder_path, finetune_loop,
                     frames_only, text_only)

logger = logging.getLogger(__name__)

MODES = ("text", "image")


def score_pair(query_rep: np.ndarray, candidate_rep: np.ndarray) -> float:
    """
    Cosine similarity of two representations

    A zero vector (e.g. R_t of a [CLS] [SEP]-only title, which pools
    nothing) scores 0 against everything.

    Raises:
        NonFiniteError: If either vector holds NaN or infinity
    """
    a = np.asarray(query_rep, dtype=np.float64)
    b = np.asarray(candidate_rep, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFiniteError("score_pair: non-finite representation")
    norm_a, norm_b = np.linalg.norm(a), np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return float(np.dot(a, b) / (norm_a * norm_b))


@dataclass
class RetrievalCandidateSet:
    """One query and its ranked-against candidates; exactly one is the positive"""
    query: int
    candidates: List[int]
    positive: int

    def validate(self) -> None:
        if not 0 <= self.positive < len(self.candidates):
            raise DataFormatError(f"Candidate set of query {self.query} has no positive "
                                  f"(index {self.positive} of {len(self.candidates)})")
        if self.candidates[self.positive] != self.query:
            raise DataFormatError(f"Candidate set of query {self.query}: positive slot holds {self.candidates[self.positive]}")


def rank_of_positive(scores: Sequence[float], positive: int) -> int:
    """1-based rank of ``positive``; equal scores rank by candidate index"""
    scores = np.asarray(scores, dtype=np.float64)
    target = scores[positive]
    better = np.sum(scores > target)
    tied_before = np.sum(scores[:positive] == target)
    return int(better + tied_before + 1)


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    """
    Fraction of queries whose positive ranks within the top ``k``

    Raises:
        ConfigError: If k < 1
    """
    if k < 1:
        raise ConfigError(f"recall_at_k needs k >= 1, got {k}")
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        return 0.0
    return float(np.mean(ranks <= k))


def _with_first_frame(batch: Batch, images: np.ndarray) -> Batch:
    """Copy of ``batch`` whose frame 0 is ``images`` (one row per example)"""
    frames = batch.frames.copy()
    frames[:, 0] = images
    frame_mask = batch.frame_mask.copy()
    frame_mask[:, 0] = True
    return Batch(batch.ids, batch.token_ids, batch.text_mask, frames, frame_mask, batch.labels)


def _product_images(records: Sequence[VideoTextRecord]) -> np.ndarray:
    missing = [r.id for r in records if r.product_image is None]
    if missing:
        raise DataFormatError(f"Image retrieval needs product images; missing for {missing[:5]}")
    return np.stack([r.product_image for r in records])


def _pair_batch(batch: Batch, images: np.ndarray) -> Batch:
    """All (query image i, candidate j) combinations, row i * B + j"""
    size = batch.size
    candidate = np.tile(np.arange(size), size)
    query = np.repeat(np.arange(size), size)
    expanded = Batch([batch.ids[j] for j in candidate], batch.token_ids[candidate], batch.text_mask[candidate],
                     batch.frames[candidate], batch.frame_mask[candidate])
    return _with_first_frame(expanded, images[query])


def retrieval_loss(network: VideoTextTransformer, params: Mapping[str, Tensor],
                   records: Sequence[VideoTextRecord], mode: str, temperature: float) -> Tensor:
    """Symmetric in-batch contrastive loss of one batch of matched pairs"""
    batch = collate(records, network.config)
    if mode == "text":
        text_rep = encode_batch(network, params, text_only(batch)).text_rep
        visual_rep = encode_batch(network, params, frames_only(batch, network.config)).visual_rep
        t2v, v2t = in_batch_dual_loss(text_rep, visual_rep, temperature, normalize=True)
        return t2v + v2t

    images = _product_images(records)
    size = batch.size
    original = ops.l2_normalize(encode_batch(network, params, batch).visual_rep)
    modified = ops.l2_normalize(encode_batch(network, params, _pair_batch(batch, images)).visual_rep)
    # scores[i, j] = cos(modified(i, j), original(j))
    tiled = ops.index(original, np.tile(np.arange(size), size))
    scores = ops.reshape(ops.reduce_sum(modified * tiled, axis=1), (size, size))
    logits = ops.scale(scores, 1.0 / temperature)
    targets = np.arange(size)
    return ops.cross_entropy(logits, targets) + ops.cross_entropy(ops.swap_last(logits), targets)


def finetune_retrieval(mode: str, records: Sequence[VideoTextRecord], params: ModelParams,
                       config: DownstreamConfig) -> FinetuneResult:
    """
    Fine-tune the encoder path for retrieval with in-batch negatives

    Args:
        mode: "text" or "image"
        records: Matched training pairs
        params: Query-network parameters (updated in place)
        config: Fine-tuning settings
    """
    if mode not in MODES:
        raise ConfigError(f"Unknown retrieval mode '{mode}' (choose from {MODES})")
    network = checked_network(params, records)
    if mode == "image":
        _product_images(records)
    return finetune_loop(
        f"retrieval-{mode}", params, encoder_path(params), records, config,
        lambda chunk: retrieval_loss(network, params, chunk, mode, config.temperature),
        drop_singletons=True,
    )


def build_candidate_sets(count: int, negatives: int, seed: int) -> List[RetrievalCandidateSet]:
    """
    One candidate set per query: the positive plus min(negatives, count - 1)
    distinct other records, in a seeded random order
    """
    if count < 1:
        raise DataFormatError("Retrieval evaluation needs at least one record")
    sets = []
    width = min(negatives, count - 1)
    for query in range(count):
        rng = derive_rng(seed, query)
        others = np.delete(np.arange(count), query)
        chosen = rng.choice(others, size=width, replace=False) if width else np.zeros(0, dtype=np.int64)
        candidates = np.concatenate([chosen, [query]]).astype(np.int64)
        candidates = candidates[rng.permutation(len(candidates))]
        positive = int(np.flatnonzero(candidates == query)[0])
        sets.append(RetrievalCandidateSet(query=query, candidates=candidates.tolist(), positive=positive))
    return sets


@dataclass
class RetrievalReport:
    """Recall at each k, median rank and the raw ranks in query order"""
    recalls: Dict[int, float]
    median_rank: float
    ranks: List[int] = field(default_factory=list)

    def as_metrics(self) -> Dict[str, float]:
        out = {f"R@{k}": v for k, v in self.recalls.items()}
        out["median_rank"] = self.median_rank
        return out


def _text_mode_scores(network, params, records, sets, batch_size) -> List[np.ndarray]:
    query_reps, candidate_reps = [], []
    with no_grad():
        for start in range(0, len(records), batch_size):
            batch = collate(records[start:start + batch_size], network.config)
            query_reps.append(encode_batch(network, params, text_only(batch)).text_rep.numpy().copy())
            candidate_reps.append(
                encode_batch(network, params, frames_only(batch, network.config)).visual_rep.numpy().copy())
    queries = np.concatenate(query_reps)
    candidates = np.concatenate(candidate_reps)
    return [np.array([score_pair(queries[s.query], candidates[c]) for c in s.candidates]) for s in sets]


def _image_mode_scores(network, params, records, candidate_set: RetrievalCandidateSet,
                       originals: np.ndarray) -> np.ndarray:
    with no_grad():
        chosen = [records[c] for c in candidate_set.candidates]
        batch = collate(chosen, network.config)
        images = np.repeat(records[candidate_set.query].product_image[None, :], len(chosen), axis=0)
        modified = encode_batch(network, params, _with_first_frame(batch, images)).visual_rep.numpy()
    return np.array([score_pair(modified[i], originals[c]) for i, c in enumerate(candidate_set.candidates)])


def evaluate_retrieval(mode: str, records: Sequence[VideoTextRecord], params: ModelParams,
                       config: DownstreamConfig, seed: Optional[int] = None) -> RetrievalReport:
    """
    Rank each record's positive among sampled negatives and report recall

    Candidate sets are scored on a thread pool and merged in query order.
    """
    if mode not in MODES:
        raise ConfigError(f"Unknown retrieval mode '{mode}' (choose from {MODES})")
    network = checked_network(params, records)
    sets = build_candidate_sets(len(records), config.negatives, config.seed if seed is None else seed)
    for candidate_set in sets:
        candidate_set.validate()

    if mode == "text":
        scores = _text_mode_scores(network, params, records, sets, config.batch_size)
    else:
        _product_images(records)
        with no_grad():
            originals = np.concatenate([
                encode_batch(network, params, collate(records[s:s + config.batch_size], network.config))
                .visual_rep.numpy().copy()
                for s in range(0, len(records), config.batch_size)
            ])
        with ThreadPoolExecutor(max_workers=config.eval_workers) as pool:
            futures = [pool.submit(_image_mode_scores, network, params, records, s, originals) for s in sets]
            scores = [f.result() for f in tqdm(futures, desc=f"eval retrieval-{mode}",
                                               disable=not config.show_progress)]

    ranks = [rank_of_positive(score, s.positive) for score, s in zip(scores, sets)]
    recalls = {k: recall_at_k(ranks, k) for k in config.recall_ks}
    report = RetrievalReport(recalls=recalls, median_rank=float(np.median(ranks)), ranks=ranks)
    logger.info(f"retrieval-{mode}: " + ", ".join(f"R@{k}={v:.4f}" for k, v in recalls.items())
                + f", median rank {report.median_rank}")
    return report
