"""
Params - Named parameter tensors of the query (and key) network
"""

import logging
from collections import OrderedDict
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from ..core.errors import CheckpointError, ShapeError
from ..core.tensor import Tensor
from .config import ModelConfig

logger = logging.getLogger(__name__)

# Parameters mirrored by the key network: embedders and encoder stack
ENCODER_PATH_PREFIXES = ("embeddings.", "encoder.")

# Parameters that only one proxy task reads
TASK_PARAM_PREFIXES: Dict[str, Tuple[str, ...]] = {
    "mlm": ("heads.mlm.",),
    "msom": ("heads.msom.",),
    "mfom": ("heads.mfom.",),
    "msg": ("decoder.",),
    "intra_mfm": ("heads.intra_mfm.",),
    "legacy_vsa": ("heads.vsa.",),
}

MSOM_CLASSES = 6


def _parameter_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...], str]]:
    """(name, shape, init kind) for every parameter, in a stable order"""
    d, V = config.hidden_size, config.vocab_size
    ff = d * config.ffn_multiplier
    spec: List[Tuple[str, Tuple[int, ...], str]] = []

    def layer_norm(prefix):
        spec.extend([(f"{prefix}.scale", (d,), "ones"), (f"{prefix}.shift", (d,), "zeros")])

    def linear(prefix, fan_in, fan_out):
        spec.extend([(f"{prefix}.weight", (fan_in, fan_out), "normal"), (f"{prefix}.bias", (fan_out,), "zeros")])

    def attention(prefix):
        for part in ("query", "key", "value", "out"):
            linear(f"{prefix}.{part}", d, d)

    def feed_forward(prefix):
        linear(f"{prefix}.in", d, ff)
        linear(f"{prefix}.out", ff, d)

    spec.append(("embeddings.token", (V, d), "normal"))
    spec.append(("embeddings.text_position", (config.max_tokens, d), "normal"))
    spec.append(("embeddings.frame_position", (config.max_frames, d), "normal"))
    linear("embeddings.frame_proj", config.frame_dim, d)
    layer_norm("embeddings.text_ln")
    layer_norm("embeddings.frame_ln")

    for i in range(config.encoder_blocks):
        layer_norm(f"encoder.{i}.attn_ln")
        attention(f"encoder.{i}.attn")
        layer_norm(f"encoder.{i}.ffn_ln")
        feed_forward(f"encoder.{i}.ffn")
    layer_norm("encoder.final_ln")

    layer_norm("decoder.embed_ln")
    for i in range(config.decoder_blocks):
        layer_norm(f"decoder.{i}.self_ln")
        attention(f"decoder.{i}.self_attn")
        layer_norm(f"decoder.{i}.cross_ln")
        attention(f"decoder.{i}.cross_attn")
        layer_norm(f"decoder.{i}.ffn_ln")
        feed_forward(f"decoder.{i}.ffn")
    layer_norm("decoder.final_ln")
    if not config.tie_output_embeddings:
        spec.append(("decoder.output.weight", (d, V), "normal"))
    spec.append(("decoder.output.bias", (V,), "zeros"))

    linear("heads.mlm", d, V)
    linear("heads.msom", d, MSOM_CLASSES)
    linear("heads.mfom", d, config.max_frames)
    linear("heads.intra_mfm", d, config.frame_dim)
    linear("heads.vsa", d, 2)
    return spec


class ModelParams:
    """
    Ordered mapping of parameter name to Tensor

    The name listing is stable for a given ModelConfig, which is what
    checkpoints rely on.
    """
    def __init__(self, tensors: Optional["OrderedDict[str, Tensor]"] = None, config: Optional[ModelConfig] = None):
        self._tensors: "OrderedDict[str, Tensor]" = tensors if tensors is not None else OrderedDict()
        self.config = config

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "ModelParams":
        """
        Create freshly initialized, trainable parameters

        Args:
            config: Architecture settings
            seed: Seed of the initializer
        """
        config.validate()
        rng = np.random.default_rng(seed)
        tensors = OrderedDict()
        for name, shape, kind in _parameter_shapes(config):
            if kind == "normal":
                data = rng.normal(0.0, config.init_std, size=shape)
            elif kind == "ones":
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name, copy=False)
        params = cls(tensors, config)
        logger.info(f"Initialized {len(tensors)} parameter tensors ({params.count():,} values) with seed {seed}")
        return params

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> List[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def count(self) -> int:
        return int(sum(t.size for t in self._tensors.values()))

    def select(self, prefixes: Iterable[str]) -> Dict[str, Tensor]:
        """Tensors whose name starts with any of ``prefixes`` (shared, not copied)"""
        prefixes = tuple(prefixes)
        return OrderedDict((n, t) for n, t in self._tensors.items() if n.startswith(prefixes))

    def without(self, prefixes: Iterable[str]) -> Dict[str, Tensor]:
        prefixes = tuple(prefixes)
        return OrderedDict((n, t) for n, t in self._tensors.items() if not n.startswith(prefixes))

    def copy(self, prefixes: Optional[Iterable[str]] = None, requires_grad: Optional[bool] = None) -> "ModelParams":
        """
        Deep copy of all (or a prefix-selected subset of) tensors

        Args:
            prefixes: Keep only names with these prefixes
            requires_grad: Override the flag on the copies
        """
        source = self._tensors if prefixes is None else self.select(prefixes)
        return ModelParams(OrderedDict(
            (n, Tensor(t.data, requires_grad=t.requires_grad if requires_grad is None else requires_grad, name=n))
            for n, t in source.items()
        ), self.config)

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.grad = None

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, t.data) for n, t in self._tensors.items())

    def load_state(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """
        Overwrite tensor values in place

        Raises:
            CheckpointError: On missing/unexpected names (strict) or shape mismatch
        """
        if strict:
            missing = [n for n in self._tensors if n not in arrays]
            unexpected = [n for n in arrays if n not in self._tensors]
            if missing or unexpected:
                raise CheckpointError(f"Parameter names differ: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, array in arrays.items():
            if name not in self._tensors:
                continue
            target = self._tensors[name]
            if array.shape != target.shape:
                raise CheckpointError(f"Parameter '{name}' has shape {array.shape}, expected {target.shape}")
            target.data[...] = array

    def add(self, name: str, tensor: Tensor) -> None:
        """Register an extra tensor, e.g. a fine-tuning head"""
        if name in self._tensors and self._tensors[name].shape != tensor.shape:
            raise ShapeError(f"Parameter '{name}' already exists with shape {self._tensors[name].shape}")
        tensor.name = name
        self._tensors[name] = tensor
