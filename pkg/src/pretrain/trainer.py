"""
Trainer - Pre-training step, epoch loop, checkpointing and resume
"""

import os
import math
import time
import logging
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..core import ops
from ..core.config import Config, TrainConfig, save_config
from ..core.errors import DataFormatError, NonFiniteError, TrainingDivergedError
from ..core.optim import Adam
from ..core.tensor import backward, get_tape
from ..core.utils import MetricsLog, derive_rng, format_duration
from ..data.records import VideoTextRecord, collate, read_records
from ..model.checkpoint import load_checkpoint, save_checkpoint
from ..model.network import VideoTextTransformer
from ..model.params import ModelParams, TASK_PARAM_PREFIXES
from .augment import AugmentedBatch, augment_batch, exact_count
from .momentum import KeyOutputs, QueryKeyState, key_forward, make_queues, momentum_update
from . import objectives
from .objectives import LossBundle, total_loss

logger = logging.getLogger(__name__)

PHASES = ("augment", "query_forward", "key_forward", "losses", "backward",
          "optimizer_step", "momentum_update", "queue_push")

METRIC_COLUMNS = ["step", "epoch"] + LossBundle.components() + ["total"]

# Stream tags for derive_rng outside augmentation
_EPOCH_STREAM = 101
_SUBSET_STREAM = 102


class Trainer:
    """
    Owns the query/key parameters, optimizer and memory queues of a pre-training run

    Args:
        config: Training settings
        params: Initial query parameters (default: freshly initialized from the seed)
    """
    def __init__(self, config: TrainConfig, params: Optional[ModelParams] = None):
        config.validate()
        self.config = config
        self.network = VideoTextTransformer(config.model)
        query = params if params is not None else ModelParams.initialize(config.model, seed=config.seed)
        self.state = QueryKeyState.create(query, momentum=config.momentum)
        self.optimizer = Adam(self._trainable(), learning_rate=config.learning_rate,
                              betas=(config.beta1, config.beta2), eps=config.adam_eps)
        self.queues = make_queues(config.queue_capacity, config.model.hidden_size)
        self.step = 0
        self.stop_flag = threading.Event()
        self.on_stop_callback: Optional[Callable] = None
        self._phase_callbacks: List[Callable[[str, int], None]] = []
        logger.info(f"Trainer ready: tasks={','.join(config.tasks.enabled())}, "
                    f"{self.optimizer.state.learning_rate} lr, {len(self.optimizer.params)} trainable tensors")

    @property
    def params(self) -> ModelParams:
        return self.state.query

    @property
    def key(self) -> ModelParams:
        return self.state.key

    def _disabled_prefixes(self) -> tuple:
        prefixes = []
        for task, task_prefixes in TASK_PARAM_PREFIXES.items():
            if not self.config.tasks.is_enabled(task):
                prefixes.extend(task_prefixes)
        return tuple(prefixes)

    def _trainable(self) -> Dict:
        """Query parameters reached by at least one enabled task"""
        return self.params.without(self._disabled_prefixes())

    def add_phase_callback(self, callback: Callable[[str, int], None]) -> None:
        """
        Register a function called as ``callback(phase, step)`` after each step phase

        Args:
            callback: Receives one of PHASES and the step index
        """
        self._phase_callbacks.append(callback)

    def set_on_stop_callback(self, callback: Callable) -> None:
        """
        Set a callback function to be called when a run stops early

        Args:
            callback: Function to call when training stops
        """
        self.on_stop_callback = callback

    def stop(self) -> None:
        """Ask a running ``run_pretraining`` loop to stop after the current step"""
        self.stop_flag.set()

    def _phase(self, name: str) -> None:
        for callback in self._phase_callbacks:
            callback(name, self.step)

    def _queues_ready(self) -> bool:
        """True once every queue an enabled contrastive task reads holds min_negatives rows"""
        needed = []
        if self.config.tasks.inter_mfm:
            needed.append("frames")
        if self.config.tasks.dual_vsa:
            needed.extend(["visual", "text"])
        return all(len(self.queues[name]) >= self.config.min_negatives for name in needed)

    def prepare(self, records: Sequence[VideoTextRecord], step: int) -> AugmentedBatch:
        """Collate and augment the batch for ``step`` (safe to run on another thread)"""
        return augment_batch(collate(records, self.config.model), self.config, self.config.seed, step)

    def _compute(self, task: str, fn: Callable):
        try:
            return fn()
        except NonFiniteError as e:
            raise TrainingDivergedError(task, float("nan")) from e

    def _losses(self, aug: AugmentedBatch, encoded, decoder_logits, keys: KeyOutputs,
                legacy) -> LossBundle:
        cfg = self.config
        params = self.params
        tasks = cfg.tasks
        normalize = cfg.normalize_embeddings
        tau = cfg.temperature
        bundle = LossBundle()

        if tasks.mlm:
            def mlm():
                rows, cols = aug.mlm_index
                if len(rows) == 0:
                    return objectives.zero()
                hidden = ops.index(encoded.text, (rows, cols))
                return objectives.mlm_loss(objectives.head_logits(params, "mlm", hidden), aug.mlm_targets)
            bundle.mlm = self._compute("mlm", mlm)
        if tasks.msom:
            def msom():
                applied = np.flatnonzero(aug.msom_applied)
                if len(applied) == 0:
                    return objectives.zero()
                cls = ops.index(encoded.cls, applied)
                return objectives.msom_loss(objectives.head_logits(params, "msom", cls), aug.msom_labels[applied])
            bundle.msom = self._compute("msom", msom)
        if tasks.mfom:
            def mfom():
                rows, cols = aug.mfom_index
                if len(rows) == 0:
                    return objectives.zero()
                hidden = ops.index(encoded.frames, (rows, cols))
                return objectives.mfom_loss(objectives.head_logits(params, "mfom", hidden), aug.mfom_targets)
            bundle.mfom = self._compute("mfom", mfom)
        if tasks.msg:
            bundle.msg = self._compute(
                "msg", lambda: objectives.msg_loss(decoder_logits, aug.decoder_target, aug.decoder_mask))
        if tasks.intra_mfm:
            def intra():
                rows, cols = aug.masked_frame_index
                if len(rows) == 0:
                    return objectives.zero()
                projected = objectives.head_logits(params, "intra_mfm", ops.index(encoded.frames, (rows, cols)))
                return objectives.intra_mfm_loss(projected, aug.original.frames, aug.frame_mask,
                                                 (rows, aug.masked_frame_sources), tau, normalize)
            bundle.intra_mfm = self._compute("intra_mfm", intra)

        ready = self._queues_ready()
        if tasks.inter_mfm and ready:
            bundle.inter_mfm = self._compute("inter_mfm", lambda: objectives.inter_mfm_loss(
                encoded.frames, keys.frames, aug.frame_mask, aug.inter_positive,
                self.queues["frames"].negatives(), tau, normalize))
        if tasks.dual_vsa and ready:
            bundle.vsa_v2t, bundle.vsa_t2v = self._compute("dual_vsa", lambda: objectives.dual_vsa_loss(
                encoded.visual_rep, encoded.text_rep, keys.visual_rep, keys.text_rep,
                self.queues["text"].negatives(), self.queues["visual"].negatives(), tau, normalize))
        if tasks.legacy_vsa:
            matched, mismatched = legacy
            bundle.legacy_vsa = self._compute("legacy_vsa", lambda: objectives.legacy_vsa_loss(
                objectives.head_logits(params, "vsa", matched), objectives.head_logits(params, "vsa", mismatched)))

        total_loss(bundle, tasks)
        for name, value in bundle.values().items():
            if not math.isfinite(value):
                raise TrainingDivergedError(name, value)
        return bundle

    def forward(self, aug: AugmentedBatch) -> Tuple[LossBundle, KeyOutputs]:
        """
        Query forward, key forward and every enabled loss term, without updating anything

        Raises:
            TrainingDivergedError: Naming the task whose loss became non-finite, or
                "encoder" / "key" when the query or key encoder itself produced NaN
        """
        cfg = self.config
        params = self.params
        encoded = self._compute("encoder", lambda: self.network.embed_and_encode(
            params, aug.token_ids, aug.frames, aug.text_mask, aug.frame_mask))
        decoder_logits = None
        if cfg.tasks.msg:
            context, context_mask = self.network.decoder_context(encoded, aug.text_mask, aug.frame_mask)
            decoder_logits = self._compute("msg", lambda: self.network.decode(
                params, aug.decoder_input, context, context_mask, prev_mask=aug.decoder_mask))
        legacy = None
        if cfg.tasks.legacy_vsa:
            # Text of example i paired with the frames of example i + 1
            shifted = np.roll(np.arange(aug.size), -1)
            mismatched = self._compute("encoder", lambda: self.network.embed_and_encode(
                params, aug.token_ids, aug.frames[shifted], aug.text_mask, aug.frame_mask[shifted]))
            legacy = (encoded.cls, mismatched.cls)
        self._phase("query_forward")

        keys = self._compute("key", lambda: key_forward(self.network, self.key, aug.original,
                                                        normalize=cfg.normalize_embeddings))
        self._phase("key_forward")

        bundle = self._losses(aug, encoded, decoder_logits, keys, legacy)
        self._phase("losses")
        return bundle, keys

    def pretrain_step(self, batch: AugmentedBatch) -> LossBundle:
        """
        One optimization step: augment, query forward, key forward, losses,
        backward, Adam, momentum update, queue pushes

        Args:
            batch: Output of ``prepare`` for the current step

        Returns:
            LossBundle of this step

        Raises:
            TrainingDivergedError: Naming the task whose loss became non-finite
        """
        cfg = self.config
        self._phase("augment")
        try:
            bundle, keys = self.forward(batch)
            if bundle.total.requires_grad:
                backward(bundle.total)
                self._fill_idle_heads()
                self._phase("backward")
                self.optimizer.step()
            else:
                logger.debug(f"Step {self.step}: no differentiable loss term, skipping the update")
                self._phase("backward")
        except Exception:
            self.optimizer.zero_grad()
            raise
        finally:
            # Drop whatever graph a failed step left recorded
            get_tape().clear()
        self._phase("optimizer_step")

        momentum_update(self.state, cfg.momentum)
        self._phase("momentum_update")

        self._push_keys(keys, batch.frame_mask)
        self._phase("queue_push")

        self.step += 1
        return bundle

    def _push_keys(self, keys: KeyOutputs, frame_mask: np.ndarray) -> None:
        if self.config.tasks.inter_mfm:
            self.queues["frames"].push(keys.frames[frame_mask])
        if self.config.tasks.dual_vsa:
            self.queues["visual"].push(keys.visual_rep)
            self.queues["text"].push(keys.text_rep)

    def warm_queues(self, records: Sequence[VideoTextRecord]) -> None:
        """
        Fill the memory queues with key-network encodings of ``records``

        The first step then carries every contrastive term instead of waiting
        for the queues to fill. Each queue keeps its newest ``queue_capacity``
        rows.
        """
        cfg = self.config
        for start in range(0, len(records), cfg.batch_size):
            batch = collate(records[start:start + cfg.batch_size], cfg.model)
            keys = self._compute("key", lambda: key_forward(self.network, self.key, batch,
                                                            normalize=cfg.normalize_embeddings))
            self._push_keys(keys, batch.frame_mask)
        logger.info("Warmed queues: " + ", ".join(f"{name}={len(q)}" for name, q in self.queues.items()))

    def _fill_idle_heads(self) -> None:
        """Zero gradients for task-exclusive tensors with no loss term this step"""
        exclusive = tuple(p for prefixes in TASK_PARAM_PREFIXES.values() for p in prefixes)
        for name, tensor in self.optimizer.params.items():
            if tensor.grad is None and name.startswith(exclusive):
                tensor.grad = np.zeros_like(tensor.data)

    def checkpoint_sections(self, include_queues: bool) -> Dict[str, Dict[str, np.ndarray]]:
        sections = {
            "query": self.params.state(),
            "key": self.key.state(),
            "optim.first": self.optimizer.state.first_moment,
            "optim.second": self.optimizer.state.second_moment,
        }
        if include_queues:
            for name, queue in self.queues.items():
                sections[f"queue.{name}"] = queue.state()
        return sections

    def save(self, path: str, include_queues: Optional[bool] = None) -> None:
        """Write parameters, key mirror, optimizer moments and optionally queues"""
        include = self.config.checkpoint_queues if include_queues is None else include_queues
        meta = {"step": self.step, "optimizer_step": self.optimizer.state.step, "seed": self.config.seed,
                "tasks": self.config.tasks.enabled(), "queues": include}
        save_checkpoint(path, self.config.model, self.checkpoint_sections(include), meta)

    def load(self, path: str) -> None:
        """
        Restore a checkpoint written by ``save`` into this trainer

        Raises:
            CheckpointError: On format problems or a different model config
        """
        ckpt = load_checkpoint(path, expected_config=self.config.model)
        self.params.load_state(ckpt.section("query"))
        self.key.load_state(ckpt.section("key"))
        self.optimizer.load_moments(ckpt.meta.get("optimizer_step", 0),
                                    ckpt.section("optim.first"), ckpt.section("optim.second"))
        for name, queue in self.queues.items():
            if f"queue.{name}" in ckpt.sections:
                queue.load_state(ckpt.sections[f"queue.{name}"])
        self.step = int(ckpt.meta.get("step", 0))
        logger.info(f"Resumed from {path} at step {self.step}")


@dataclass
class PretrainResult:
    """Where a run left its artifacts and what it logged"""
    checkpoint: str
    metrics: str
    steps: int
    losses: List[Dict[str, float]] = field(default_factory=list)


def subsample(records: Sequence[VideoTextRecord], fraction: float, seed: int) -> List[VideoTextRecord]:
    """Seeded subset of ceil(fraction * N) records, original order kept"""
    if fraction >= 1.0 or not records:
        return list(records)
    count = max(1, exact_count(fraction, len(records)))
    chosen = np.sort(derive_rng(seed, _SUBSET_STREAM).choice(len(records), size=count, replace=False))
    return [records[i] for i in chosen]


def epoch_order(count: int, seed: int, epoch: int) -> np.ndarray:
    return derive_rng(seed, _EPOCH_STREAM, epoch).permutation(count)


def run_pretraining(config: Config, out_dir: Optional[str] = None, resume: Optional[str] = None,
                    records: Optional[Sequence[VideoTextRecord]] = None,
                    trainer: Optional[Trainer] = None) -> PretrainResult:
    """
    Run the epoch loop, writing a metrics log and checkpoints under ``out_dir``

    Args:
        config: Full configuration (data path, training settings)
        out_dir: Output directory (default: ``config.paths.out_dir``)
        resume: Checkpoint to continue from
        records: Records to use instead of reading ``config.paths.data``
        trainer: Pre-built trainer (e.g. with phase callbacks attached)

    Returns:
        PretrainResult

    Raises:
        DataFormatError: If the data set is empty
    """
    train = config.train
    out_dir = out_dir or config.paths.out_dir
    if records is None:
        if not os.path.exists(config.paths.data):
            raise DataFormatError(f"Data file {config.paths.data} does not exist")
        records = read_records(config.paths.data, train.model)
    else:
        for record in records:
            record.validate(train.model)
    records = subsample(records, train.data_fraction, train.seed)
    if not records:
        raise DataFormatError(f"No records to train on (data: {config.paths.data})")

    trainer = trainer or Trainer(train)
    if resume:
        trainer.load(resume)
    if train.warm_queues and not any(len(queue) for queue in trainer.queues.values()):
        trainer.warm_queues(records)
    os.makedirs(out_dir, exist_ok=True)
    save_config(config, os.path.join(out_dir, "config.ini"))

    steps_per_epoch = math.ceil(len(records) / train.batch_size)
    total_steps = train.max_steps or train.epochs * steps_per_epoch
    logger.info(f"Pre-training on {len(records)} records: {steps_per_epoch} steps/epoch, {total_steps} steps total")

    def batch_records(step: int) -> List[VideoTextRecord]:
        epoch, index = divmod(step, steps_per_epoch)
        order = epoch_order(len(records), train.seed, epoch)
        return [records[i] for i in order[index * train.batch_size:(index + 1) * train.batch_size]]

    metrics_path = os.path.join(out_dir, "metrics.tsv")
    losses: List[Dict[str, float]] = []
    start = time.time()
    executor = ThreadPoolExecutor(max_workers=1) if train.prefetch else None
    pending: Optional[Future] = None
    try:
        with MetricsLog(metrics_path, METRIC_COLUMNS, append=bool(resume)) as metrics:
            progress = tqdm(range(trainer.step, total_steps), desc="pretrain", disable=not train.show_progress,
                            initial=trainer.step, total=total_steps)
            for step in progress:
                if executor is not None:
                    batch = pending.result() if pending is not None else trainer.prepare(batch_records(step), step)
                    pending = executor.submit(trainer.prepare, batch_records(step + 1), step + 1) \
                        if step + 1 < total_steps else None
                else:
                    batch = trainer.prepare(batch_records(step), step)

                bundle = trainer.pretrain_step(batch)
                values = bundle.values()
                losses.append(values)
                metrics.write([step, step // steps_per_epoch] + [values[c] for c in METRIC_COLUMNS[2:]])
                progress.set_postfix(loss=f"{values['total']:.4f}")
                if step % train.log_every == 0:
                    logger.info(f"step {step}: total={values['total']:.6f}")
                if train.checkpoint_every and trainer.step % train.checkpoint_every == 0:
                    trainer.save(os.path.join(out_dir, f"checkpoint_step{trainer.step:06d}.vlck"))
                if trainer.stop_flag.is_set():
                    logger.info(f"Stop requested, ending pre-training at step {trainer.step}")
                    if trainer.on_stop_callback:
                        trainer.on_stop_callback()
                    break
            progress.close()
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    final_path = os.path.join(out_dir, "final.vlck")
    trainer.save(final_path)
    logger.info(f"Pre-training finished after {trainer.step} steps in {format_duration(time.time() - start)}")
    return PretrainResult(checkpoint=final_path, metrics=metrics_path, steps=trainer.step, losses=losses)
