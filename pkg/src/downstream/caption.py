"""
Caption - Abstract generation: teacher-forced fine-tuning and beam-search decoding

The encoder reads the unmasked title and frames; the decoder generates the
abstract from [CLS] until [SEP].
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..core.config import DownstreamConfig
from ..core.errors import ConfigError, DataFormatError
from ..core.tensor import Tensor, no_grad
from ..data.records import VideoTextRecord, collate
from ..model.config import ModelConfig
from ..model.network import VideoTextTransformer
from ..model.params import ModelParams
from ..model.vocab import Vocabulary
from ..pretrain.augment import teacher_forcing
from ..pretrain.objectives import msg_loss
from .common import (FINETUNE_HEAD_PREFIX, PRETRAIN_HEAD_PREFIX, FinetuneResult, checked_network,
                     encode_batch, finetune_loop)
from .metrics import text_gen_metrics

logger = logging.getLogger(__name__)


@dataclass
class Hypothesis:
    """Decoder prefix starting with [CLS] and its cumulative log-probability"""
    tokens: Tuple[int, ...]
    log_prob: float = 0.0
    finished: bool = False

    @property
    def generated(self) -> int:
        return len(self.tokens) - 1

    @property
    def score(self) -> float:
        """Log-probability per generated token"""
        return self.log_prob / max(1, self.generated)

    def output(self, sep_id: int) -> List[int]:
        """Generated ids without [CLS] and the closing [SEP]"""
        body = list(self.tokens[1:])
        if body and body[-1] == sep_id:
            body = body[:-1]
        return body


@dataclass
class BeamState:
    """Live hypotheses (best first) and the ones that already emitted [SEP]"""
    width: int
    hypotheses: List[Hypothesis] = field(default_factory=list)
    completed: List[Hypothesis] = field(default_factory=list)

    @property
    def done(self) -> bool:
        return not self.hypotheses or len(self.completed) >= self.width


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _ranked(hypotheses: Sequence[Hypothesis]) -> List[Hypothesis]:
    order = np.argsort([-h.score for h in hypotheses], kind="stable")
    return [hypotheses[i] for i in order]


class CaptionDecoder:
    """
    Decode one record at a time from a fixed encoder context

    Every step re-runs the decoder over the full prefix.

    Args:
        network: Transformer for the parameters' config
        params: Query-network parameters
        max_len: Generated-token limit, capped at max_tokens
    """
    def __init__(self, network: VideoTextTransformer, params: ModelParams, max_len: int):
        if max_len < 1:
            raise ConfigError(f"max caption length must be >= 1, got {max_len}")
        self.network = network
        self.params = params
        self.config: ModelConfig = network.config
        self.max_len = min(max_len, self.config.max_tokens)

    def context(self, record: VideoTextRecord) -> Tuple[np.ndarray, np.ndarray]:
        """Detached cross-attention memory (L, d) and mask (L,) of one record"""
        with no_grad():
            batch = collate([record], self.config)
            encoded = encode_batch(self.network, self.params, batch)
            context, mask = self.network.decoder_context(encoded, batch.text_mask, batch.frame_mask)
            return context.numpy()[0].copy(), np.asarray(mask[0], dtype=bool)

    def next_log_probs(self, prefixes: Sequence[Tuple[int, ...]], context: np.ndarray,
                       mask: np.ndarray) -> np.ndarray:
        """Log-probabilities of the token after each (equal-length) prefix"""
        ids = np.array(prefixes, dtype=np.int64)
        count = len(prefixes)
        with no_grad():
            logits = self.network.decode(self.params, ids, Tensor(np.repeat(context[None], count, axis=0)),
                                         np.repeat(mask[None], count, axis=0))
        return _log_softmax(logits.numpy()[:, -1, :])

    def greedy(self, context: np.ndarray, mask: np.ndarray) -> Hypothesis:
        """Arg-max token at every step"""
        hyp = Hypothesis(tokens=(self.config.cls_id,))
        while hyp.generated < self.max_len:
            log_probs = self.next_log_probs([hyp.tokens], context, mask)[0]
            token = int(np.argmax(log_probs))
            hyp = Hypothesis(hyp.tokens + (token,), hyp.log_prob + float(log_probs[token]),
                             finished=token == self.config.sep_id)
            if hyp.finished:
                break
        return hyp

    def beam(self, context: np.ndarray, mask: np.ndarray, width: int) -> Hypothesis:
        """
        Length-normalized beam search

        The greedy hypothesis joins the final selection, so the result never
        scores below it.

        Raises:
            ConfigError: If width < 1
        """
        if width < 1:
            raise ConfigError(f"beam size must be >= 1, got {width}")
        state = BeamState(width=width, hypotheses=[Hypothesis(tokens=(self.config.cls_id,))])
        while not state.done and state.hypotheses[0].generated < self.max_len:
            log_probs = self.next_log_probs([h.tokens for h in state.hypotheses], context, mask)
            candidates = []
            for hyp, row in zip(state.hypotheses, log_probs):
                for token in np.argsort(-row, kind="stable")[:width]:
                    token = int(token)
                    candidates.append(Hypothesis(hyp.tokens + (token,), hyp.log_prob + float(row[token]),
                                                 finished=token == self.config.sep_id))
            live = []
            for hyp in _ranked(candidates)[:width]:
                (state.completed if hyp.finished else live).append(hyp)
            state.hypotheses = live
        pool = state.completed or state.hypotheses
        return _ranked(list(pool) + [self.greedy(context, mask)])[0]


def greedy_decode(network: VideoTextTransformer, params: ModelParams, record: VideoTextRecord,
                  max_len: int) -> Hypothesis:
    decoder = CaptionDecoder(network, params, max_len)
    return decoder.greedy(*decoder.context(record))


def beam_search(network: VideoTextTransformer, params: ModelParams, record: VideoTextRecord,
                beam: int = 5, max_len: int = 16) -> Hypothesis:
    decoder = CaptionDecoder(network, params, max_len)
    return decoder.beam(*decoder.context(record), beam)


def caption_generate(network: VideoTextTransformer, params: ModelParams, record: VideoTextRecord,
                     beam: int = 5, max_len: int = 16) -> List[int]:
    """
    Generated abstract ids for one record (no [CLS], no closing [SEP])

    Raises:
        ConfigError: If beam < 1
    """
    if beam < 1:
        raise ConfigError(f"beam size must be >= 1, got {beam}")
    return beam_search(network, params, record, beam, max_len).output(network.config.sep_id)


def _abstracts(records: Sequence[VideoTextRecord]) -> None:
    missing = [r.id for r in records if r.abstract_ids is None]
    if missing:
        raise DataFormatError(f"Caption task needs abstracts; missing for {missing[:5]}")


def caption_loss(network: VideoTextTransformer, params: ModelParams, records: Sequence[VideoTextRecord]) -> Tensor:
    """Teacher-forced abstract loss of one batch"""
    config = network.config
    batch = collate(records, config)
    width = config.max_tokens + 1
    abstracts = np.full((len(records), width), config.pad_id, dtype=np.int64)
    for b, record in enumerate(records):
        abstracts[b, :len(record.abstract_ids)] = record.abstract_ids
    inputs, targets, target_mask = teacher_forcing(abstracts, config)
    inputs, targets, target_mask = (inputs[:, :config.max_tokens], targets[:, :config.max_tokens],
                                    target_mask[:, :config.max_tokens])
    encoded = encode_batch(network, params, batch)
    context, context_mask = network.decoder_context(encoded, batch.text_mask, batch.frame_mask)
    logits = network.decode(params, inputs, context, context_mask, prev_mask=target_mask)
    return msg_loss(logits, targets, target_mask)


def finetune_caption(records: Sequence[VideoTextRecord], params: ModelParams,
                     config: DownstreamConfig) -> FinetuneResult:
    """Fine-tune encoder and decoder on abstracts; task heads stay frozen"""
    network = checked_network(params, records)
    _abstracts(records)
    if network.config.decoder_blocks < 1:
        logger.warning("Model has no decoder blocks; only embeddings and the output layer adapt")
    trainable = params.without((PRETRAIN_HEAD_PREFIX, FINETUNE_HEAD_PREFIX))
    return finetune_loop("caption", params, trainable, records, config,
                         lambda chunk: caption_loss(network, params, chunk))


@dataclass
class CaptionReport:
    """Generated ids per record, in record order, and the text metrics"""
    ids: List[str]
    hypotheses: List[List[int]]
    metrics: Dict[str, float]

    def lines(self, vocab: Optional[Vocabulary] = None) -> List[str]:
        """``id<TAB>tokens`` per record; tokens are vocabulary strings when a vocabulary is given"""
        out = []
        for record_id, hyp in zip(self.ids, self.hypotheses):
            tokens = vocab.decode(hyp) if vocab is not None else [str(t) for t in hyp]
            out.append(f"{record_id}\t{' '.join(tokens)}")
        return out


def evaluate_caption(records: Sequence[VideoTextRecord], params: ModelParams,
                     config: DownstreamConfig) -> CaptionReport:
    """
    Beam-decode every record on a thread pool and score against its abstract

    Raises:
        DataFormatError: If a record has no abstract
    """
    network = checked_network(params, records)
    _abstracts(records)
    if config.beam_size < 1:
        raise ConfigError(f"beam size must be >= 1, got {config.beam_size}")
    sep_id = network.config.sep_id

    def generate(record: VideoTextRecord) -> List[int]:
        return caption_generate(network, params, record, config.beam_size, config.max_caption_len)

    with ThreadPoolExecutor(max_workers=config.eval_workers) as pool:
        futures = [pool.submit(generate, record) for record in records]
        hypotheses = [f.result() for f in tqdm(futures, desc="eval caption", disable=not config.show_progress)]
    references = [Hypothesis(tuple(int(t) for t in r.abstract_ids)).output(sep_id) for r in records]
    metrics = text_gen_metrics(hypotheses, references)
    logger.info("caption: " + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return CaptionReport(ids=[r.id for r in records], hypotheses=hypotheses, metrics=metrics)
