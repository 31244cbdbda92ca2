"""
Common - Loading pre-trained weights and the shared fine-tuning loop
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..core.config import DownstreamConfig
from ..core.errors import ConfigError, DataFormatError
from ..core.optim import Adam
from ..core.tensor import Tensor, backward, no_grad
from ..core.utils import derive_rng
from ..data.records import Batch, VideoTextRecord, collate
from ..model.checkpoint import load_checkpoint
from ..model.config import ModelConfig
from ..model.network import EncodedPair, VideoTextTransformer
from ..model.params import ModelParams

logger = logging.getLogger(__name__)

# Pre-training heads; fine-tuning never updates them
PRETRAIN_HEAD_PREFIX = "heads."
# Heads added by fine-tuning (classification)
FINETUNE_HEAD_PREFIX = "finetune."


@dataclass
class FinetuneResult:
    """Fine-tuned parameters and the per-epoch mean training loss"""
    params: ModelParams
    losses: List[float] = field(default_factory=list)
    metrics: Dict[str, float] = field(default_factory=dict)


def load_query_params(path: str, expected: Optional[ModelConfig] = None) -> ModelParams:
    """
    Query-network parameters of a pre-training or fine-tuning checkpoint

    Extra tensors saved by fine-tuning (e.g. classifier heads) are added too.
    """
    ckpt = load_checkpoint(path, expected_config=expected)
    params = ModelParams.initialize(ckpt.model_config, seed=0)
    saved = ckpt.section("query")
    for name, array in saved.items():
        if name not in params:
            params.add(name, Tensor(array, requires_grad=True))
    params.load_state(saved)
    return params


def text_only(batch: Batch) -> Batch:
    """Same titles with every frame slot padded"""
    return Batch(batch.ids, batch.token_ids, batch.text_mask, np.zeros_like(batch.frames),
                 np.zeros_like(batch.frame_mask), batch.labels)


def frames_only(batch: Batch, config: ModelConfig) -> Batch:
    """Same frames with the title reduced to [CLS] [SEP]"""
    token_ids = np.full_like(batch.token_ids, config.pad_id)
    token_ids[:, 0] = config.cls_id
    token_ids[:, 1] = config.sep_id
    text_mask = np.zeros_like(batch.text_mask)
    text_mask[:, :2] = True
    return Batch(batch.ids, token_ids, text_mask, batch.frames, batch.frame_mask, batch.labels)


def encode_batch(network: VideoTextTransformer, params: Mapping[str, Tensor], batch: Batch) -> EncodedPair:
    return network.embed_and_encode(params, batch.token_ids, batch.frames, batch.text_mask, batch.frame_mask)


def iter_batches(records: Sequence[VideoTextRecord], batch_size: int, seed: int, epoch: int,
                 drop_singletons: bool = False) -> Iterator[List[VideoTextRecord]]:
    """Seeded shuffled batches of one epoch"""
    order = derive_rng(seed, epoch).permutation(len(records))
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start:start + batch_size]]
        if drop_singletons and len(chunk) < 2:
            continue
        yield chunk


def finetune_loop(name: str, params: ModelParams, trainable: Mapping[str, Tensor],
                  records: Sequence[VideoTextRecord], config: DownstreamConfig,
                  loss_fn: Callable[[List[VideoTextRecord]], Tensor],
                  drop_singletons: bool = False) -> FinetuneResult:
    """
    Generic epoch loop: per batch, loss, backward, Adam

    Args:
        name: Task name for logs and the progress bar
        params: Full parameter set (returned in the result)
        trainable: Subset updated by the optimizer
        records: Training records
        config: Epochs, batch size, learning rate and seed
        loss_fn: Scalar loss of one batch of records
        drop_singletons: Skip batches of one record (in-batch contrastive losses)
    """
    if not records:
        raise DataFormatError(f"{name}: no training records")
    optimizer = Adam(trainable, learning_rate=config.learning_rate)
    result = FinetuneResult(params=params)
    for epoch in tqdm(range(config.epochs), desc=name, disable=not config.show_progress):
        epoch_losses = []
        for chunk in iter_batches(records, config.batch_size, config.seed, epoch, drop_singletons):
            loss = loss_fn(chunk)
            backward(loss)
            for tensor in trainable.values():
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
            optimizer.step()
            epoch_losses.append(loss.item())
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        result.losses.append(mean_loss)
        logger.debug(f"{name} epoch {epoch}: loss={mean_loss:.6f}")
    logger.info(f"{name}: fine-tuned {config.epochs} epochs, final loss {result.losses[-1]:.6f}")
    return result


def encoder_path(params: ModelParams) -> Dict[str, Tensor]:
    """Embedder and encoder tensors"""
    return params.select(("embeddings.", "encoder."))


def cls_embeddings(network: VideoTextTransformer, params: Mapping[str, Tensor],
                   records: Sequence[VideoTextRecord], batch_size: int = 32) -> np.ndarray:
    """[CLS] outputs of the full (title + frames) encoding, in record order"""
    rows = []
    with no_grad():
        for start in range(0, len(records), batch_size):
            batch = collate(records[start:start + batch_size], network.config)
            rows.append(encode_batch(network, params, batch).cls.numpy().copy())
    return np.concatenate(rows) if rows else np.zeros((0, network.config.hidden_size))


def checked_network(params: ModelParams, records: Sequence[VideoTextRecord]) -> VideoTextTransformer:
    """Network for the config ``params`` carry, after validating ``records`` against it"""
    config = params.config
    if config is None:
        raise ConfigError("Parameters carry no model config")
    for record in records:
        record.validate(config)
    return VideoTextTransformer(config)
