"""
Vocabulary - Optional token list mapping ids to printable tokens
"""

import logging
from dataclasses import replace
from typing import Dict, Iterable, List, Optional

from ..core.errors import ConfigError
from .config import ModelConfig

logger = logging.getLogger(__name__)

SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]")


class Vocabulary:
    """
    One-token-per-line vocabulary; the line number is the token id

    Args:
        tokens: Tokens in id order; must contain the four special tokens
    """
    def __init__(self, tokens: Iterable[str]):
        self.tokens: List[str] = list(tokens)
        self.index: Dict[str, int] = {}
        for i, token in enumerate(self.tokens):
            if token in self.index:
                raise ConfigError(f"Vocabulary token {token!r} appears twice (ids {self.index[token]} and {i})")
            self.index[token] = i
        missing = [t for t in SPECIAL_TOKENS if t not in self.index]
        if missing:
            raise ConfigError(f"Vocabulary is missing special tokens {missing}")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.strip()]
        vocab = cls(tokens)
        logger.info(f"Loaded vocabulary of {len(vocab)} tokens from {path}")
        return vocab

    @classmethod
    def numeric(cls, config: ModelConfig) -> "Vocabulary":
        """Placeholder vocabulary: every id prints as itself, special ids as their names"""
        tokens = [str(i) for i in range(config.vocab_size)]
        for token, i in zip(SPECIAL_TOKENS, config.special_ids):
            tokens[i] = token
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def apply_to(self, config: ModelConfig) -> ModelConfig:
        """Copy of ``config`` with this vocabulary's size and special ids"""
        return replace(
            config,
            vocab_size=len(self),
            pad_id=self.index["[PAD]"],
            cls_id=self.index["[CLS]"],
            sep_id=self.index["[SEP]"],
            mask_id=self.index["[MASK]"],
        )

    def encode(self, tokens: Iterable[str]) -> List[int]:
        try:
            return [self.index[t] for t in tokens]
        except KeyError as e:
            raise ConfigError(f"Token {e.args[0]!r} is not in the vocabulary") from e

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> List[str]:
        out = []
        for i in ids:
            token = self.tokens[int(i)]
            if skip_special and token in SPECIAL_TOKENS:
                continue
            out.append(token)
        return out


def load_vocabulary(path: Optional[str], config: ModelConfig) -> Vocabulary:
    """Vocabulary file if given, otherwise the numeric placeholder for ``config``"""
    if path:
        return Vocabulary.load(path)
    return Vocabulary.numeric(config)
