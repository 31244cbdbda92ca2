"""
Classify - [CLS]-head classification for plot and product categories
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..core import ops
from ..core.config import DownstreamConfig
from ..core.errors import ConfigError, DataFormatError, LabelError
from ..core.tensor import Tensor, no_grad
from ..core.utils import derive_rng
from ..data.records import VideoTextRecord, collate
from ..model.network import VideoTextTransformer
from ..model.params import ModelParams
from .common import (FINETUNE_HEAD_PREFIX, FinetuneResult, checked_network, encode_batch, encoder_path,
                     finetune_loop)

logger = logging.getLogger(__name__)

TASKS = ("plot", "product")


@dataclass
class ClassHeadSpec:
    """
    Which label fields get a head, with their class counts

    The product task always carries both the top and the leaf category head.
    """
    task: str
    class_counts: Dict[str, int]

    @property
    def heads(self) -> Tuple[str, ...]:
        return ("plot",) if self.task == "plot" else ("top_cate", "leaf_cate")

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"Unknown classification task '{self.task}' (choose from {TASKS})")
        for head in self.heads:
            if self.class_counts.get(head, 0) < 2:
                raise ConfigError(f"Head '{head}' needs at least 2 classes, got {self.class_counts.get(head, 0)}")

    @classmethod
    def for_records(cls, task: str, records: Sequence[VideoTextRecord],
                    config: DownstreamConfig) -> "ClassHeadSpec":
        """
        Class counts from the config, or max label + 1 where the config says 0

        Raises:
            DataFormatError: If a record lacks a label the task needs
        """
        if task not in TASKS:
            raise ConfigError(f"Unknown classification task '{task}' (choose from {TASKS})")
        configured = {"plot": config.plot_classes, "top_cate": config.top_classes,
                      "leaf_cate": config.leaf_classes}
        heads = ("plot",) if task == "plot" else ("top_cate", "leaf_cate")
        counts = {}
        for head in heads:
            labels = _labels(records, head)
            counts[head] = configured[head] or int(labels.max()) + 1
        spec = cls(task=task, class_counts=counts)
        spec.validate()
        return spec

    @classmethod
    def from_params(cls, task: str, params: ModelParams) -> "ClassHeadSpec":
        """Class counts read off the fine-tuned head biases"""
        if task not in TASKS:
            raise ConfigError(f"Unknown classification task '{task}' (choose from {TASKS})")
        counts = {}
        for head in (("plot",) if task == "plot" else ("top_cate", "leaf_cate")):
            name = f"{FINETUNE_HEAD_PREFIX}{head}.bias"
            if name not in params:
                raise ConfigError(f"Parameters have no classification head '{head}'; fine-tune first")
            counts[head] = int(params[name].shape[0])
        spec = cls(task=task, class_counts=counts)
        spec.validate()
        return spec


def _labels(records: Sequence[VideoTextRecord], head: str) -> np.ndarray:
    missing = [r.id for r in records if r.label(head) is None]
    if missing:
        raise DataFormatError(f"Records without a '{head}' label: {missing[:5]}")
    if not records:
        raise DataFormatError(f"No records to read '{head}' labels from")
    return np.array([r.label(head) for r in records], dtype=np.int64)


def _check_labels(records: Sequence[VideoTextRecord], spec: ClassHeadSpec) -> None:
    for head in spec.heads:
        labels = _labels(records, head)
        count = spec.class_counts[head]
        if labels.max() >= count:
            raise LabelError(f"Head '{head}': label {int(labels.max())} >= class count {count}")


def add_heads(params: ModelParams, spec: ClassHeadSpec, seed: int = 0) -> None:
    """Register ``finetune.<head>.weight/bias`` unless already present with the right shape"""
    config = params.config
    for i, head in enumerate(spec.heads):
        count = spec.class_counts[head]
        weight_name = f"{FINETUNE_HEAD_PREFIX}{head}.weight"
        if weight_name in params and params[weight_name].shape == (config.hidden_size, count):
            continue
        rng = derive_rng(seed, i)
        params.add(weight_name, Tensor(rng.normal(0.0, config.init_std, size=(config.hidden_size, count)),
                                       requires_grad=True))
        params.add(f"{FINETUNE_HEAD_PREFIX}{head}.bias", Tensor(np.zeros(count), requires_grad=True))
        logger.debug(f"Added classification head '{head}' with {count} classes")


def _head_logits(params: ModelParams, head: str, cls_out: Tensor) -> Tensor:
    prefix = f"{FINETUNE_HEAD_PREFIX}{head}"
    return ops.matmul(cls_out, params[f"{prefix}.weight"]) + params[f"{prefix}.bias"]


def classify_loss(network: VideoTextTransformer, params: ModelParams, records: Sequence[VideoTextRecord],
                  spec: ClassHeadSpec) -> Tensor:
    """Sum of the per-head cross-entropies on the [CLS] output"""
    batch = collate(records, network.config)
    cls_out = encode_batch(network, params, batch).cls
    total = None
    for head in spec.heads:
        term = ops.cross_entropy(_head_logits(params, head, cls_out), batch.labels[head])
        total = term if total is None else total + term
    return total


def finetune_classify(spec: ClassHeadSpec, records: Sequence[VideoTextRecord], params: ModelParams,
                      config: DownstreamConfig) -> FinetuneResult:
    """
    Train the encoder path and the [CLS] heads jointly

    Args:
        spec: Heads and class counts
        records: Labelled training records
        params: Query-network parameters; heads are added if missing
        config: Fine-tuning settings

    Raises:
        LabelError: If a label is not below its head's class count
    """
    spec.validate()
    network = checked_network(params, records)
    _check_labels(records, spec)
    add_heads(params, spec, config.seed)
    trainable = dict(encoder_path(params))
    trainable.update(params.select((FINETUNE_HEAD_PREFIX,)))
    return finetune_loop(f"classify-{spec.task}", params, trainable, records, config,
                         lambda chunk: classify_loss(network, params, chunk, spec))


def predict(network: VideoTextTransformer, params: ModelParams, records: Sequence[VideoTextRecord],
            spec: ClassHeadSpec, batch_size: int) -> Dict[str, np.ndarray]:
    """Argmax class per head, in record order"""
    predictions: Dict[str, List[np.ndarray]] = {head: [] for head in spec.heads}
    with no_grad():
        for start in range(0, len(records), batch_size):
            batch = collate(records[start:start + batch_size], network.config)
            cls_out = encode_batch(network, params, batch).cls
            for head in spec.heads:
                predictions[head].append(np.argmax(_head_logits(params, head, cls_out).numpy(), axis=1))
    return {head: np.concatenate(rows) for head, rows in predictions.items()}


def evaluate_classify(spec: ClassHeadSpec, records: Sequence[VideoTextRecord], params: ModelParams,
                      config: DownstreamConfig) -> Dict[str, float]:
    """
    Top-1 accuracy per head

    Returns:
        ``{"accuracy.<head>": value}``; the product task always has two entries
    """
    spec.validate()
    network = checked_network(params, records)
    _check_labels(records, spec)
    for head in spec.heads:
        if f"{FINETUNE_HEAD_PREFIX}{head}.weight" not in params:
            raise ConfigError(f"Parameters have no classification head '{head}'; fine-tune first")
    predictions = predict(network, params, records, spec, config.batch_size)
    metrics = {}
    for head in spec.heads:
        metrics[f"accuracy.{head}"] = float(np.mean(predictions[head] == _labels(records, head)))
    logger.info(f"classify-{spec.task}: " + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return metrics
