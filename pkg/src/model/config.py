"""
Model Config - Dimensions and special-token ids of the transformer
"""

from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional

from ..core.errors import ConfigError


@dataclass
class ModelConfig:
    """
    Architecture settings; the defaults are the desk-scale model

    Full-scale values are available from ``ModelConfig.full_scale()``.
    """
    hidden_size: int = 64
    encoder_blocks: int = 2
    decoder_blocks: int = 1
    heads: int = 4
    max_tokens: int = 16
    max_frames: int = 8
    vocab_size: int = 128
    frame_dim: int = 32
    ffn_multiplier: int = 4
    pad_id: int = 0
    cls_id: int = 1
    sep_id: int = 2
    mask_id: int = 3
    tie_output_embeddings: bool = True
    # Decoder cross-attends [W_E, F_E] instead of F_E only
    cross_attend_text: bool = False
    init_std: float = 0.02

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        return cls(hidden_size=768, encoder_blocks=12, decoder_blocks=2, heads=12,
                   max_tokens=128, max_frames=32, vocab_size=30000, frame_dim=1536)

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.heads

    @property
    def special_ids(self) -> tuple:
        return (self.pad_id, self.cls_id, self.sep_id, self.mask_id)

    def validate(self) -> None:
        """
        Check structural constraints

        Raises:
            ConfigError: Naming the first offending field
        """
        for name in ("hidden_size", "encoder_blocks", "heads", "max_tokens", "max_frames",
                     "frame_dim", "ffn_multiplier"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {getattr(self, name)}")
        if self.decoder_blocks < 0:
            raise ConfigError(f"model.decoder_blocks must be >= 0, got {self.decoder_blocks}")
        if self.hidden_size % self.heads:
            raise ConfigError(f"model.hidden_size ({self.hidden_size}) must be divisible by model.heads ({self.heads})")
        if self.vocab_size < 4:
            raise ConfigError(f"model.vocab_size must be >= 4, got {self.vocab_size}")
        if len(set(self.special_ids)) != 4:
            raise ConfigError(f"model special token ids must be distinct, got {self.special_ids}")
        for name in ("pad_id", "cls_id", "sep_id", "mask_id"):
            if not 0 <= getattr(self, name) < self.vocab_size:
                raise ConfigError(f"model.{name} must lie in [0, {self.vocab_size})")
        if self.init_std <= 0:
            raise ConfigError(f"model.init_std must be > 0, got {self.init_std}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown model config fields: {sorted(unknown)}")
        return cls(**values)

    def first_difference(self, other: "ModelConfig") -> Optional[str]:
        """Name of the first field whose value differs from ``other``"""
        for f in fields(self):
            if getattr(self, f.name) != getattr(other, f.name):
                return f.name
        return None
