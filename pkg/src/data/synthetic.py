"""
Synthetic - Topic-structured video-text records for desk-scale experiments

Every record belongs to a topic and owns a few words of that topic's
vocabulary block. Its title keeps those words in one fixed order, and its
frames sit around the topic centroid at an offset computed from the same
words, so titles, frames and labels are predictable from each other.
"""

import math
import logging
import configparser
from dataclasses import dataclass, fields
from typing import List, Optional

import numpy as np

from ..core.errors import ConfigError
from .records import VideoTextRecord, write_records

logger = logging.getLogger(__name__)

# Special ids used by generated data; content tokens start after them
PAD_ID, CLS_ID, SEP_ID, MASK_ID = 0, 1, 2, 3
FIRST_CONTENT_ID = 4

# Per-slot frame code and per-frame jitter, relative to the record latent
SLOT_SCALE = 0.5
JITTER = 0.1


@dataclass
class SyntheticSpec:
    """Shape and difficulty of a generated data set"""
    vocab_size: int = 128
    num_records: int = 32
    topics: int = 4
    # Spread of frames and product images around the topic centroid
    noise: float = 0.1
    # Chance that a title or abstract word is replaced by any content token
    token_noise: float = 0.1
    seed: int = 0
    max_tokens: int = 16
    min_tokens: int = 4
    max_frames: int = 8
    min_frames: int = 2
    frame_dim: int = 32
    with_abstract: bool = True
    with_product_image: bool = True

    def validate(self) -> None:
        content = self.vocab_size - FIRST_CONTENT_ID
        if self.num_records < 1:
            raise ConfigError(f"synthetic.num_records must be >= 1, got {self.num_records}")
        if self.topics < 1 or content < self.topics:
            raise ConfigError(f"synthetic.topics={self.topics} needs at least that many content tokens, have {content}")
        if self.noise < 0 or not 0 <= self.token_noise <= 1:
            raise ConfigError("synthetic.noise must be >= 0 and synthetic.token_noise in [0, 1]")
        if not 1 <= self.min_tokens <= self.max_tokens - 2:
            raise ConfigError(f"synthetic.min_tokens must lie in [1, max_tokens - 2], got {self.min_tokens}")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ConfigError(f"synthetic.min_frames must lie in [1, max_frames], got {self.min_frames}")
        if self.frame_dim < 1:
            raise ConfigError(f"synthetic.frame_dim must be >= 1, got {self.frame_dim}")

    @classmethod
    def from_file(cls, path: str) -> "SyntheticSpec":
        """Read the ``[synthetic]`` section of an INI file"""
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"Cannot read synthetic data spec {path}")
        if not parser.has_section("synthetic"):
            raise ConfigError(f"{path} has no [synthetic] section")
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in parser.items("synthetic"):
            if key not in known:
                raise ConfigError(f"{path}: unknown key synthetic.{key}")
            kind = known[key].type
            try:
                if kind in (bool, "bool"):
                    values[key] = parser.getboolean("synthetic", key)
                elif kind in (float, "float"):
                    values[key] = float(raw)
                else:
                    values[key] = int(raw)
            except ValueError as e:
                raise ConfigError(f"{path}: synthetic.{key}: {e}") from e
        spec = cls(**values)
        spec.validate()
        return spec


def _lexicon(block: np.ndarray, slot: int, per_topic: int) -> np.ndarray:
    """Slice of the topic block owned by the ``slot``-th record of the topic (shared once the block runs out)"""
    if len(block) >= per_topic:
        return np.array_split(block, per_topic)[slot]
    return block[[slot % len(block)]]


def _with_strays(rng: np.random.Generator, words: np.ndarray, content: np.ndarray,
                 token_noise: float) -> np.ndarray:
    stray = rng.choice(content, size=len(words))
    return np.where(rng.random(len(words)) < token_noise, stray, words)


def _ordered_draw(rng: np.random.Generator, lexicon: np.ndarray, count: int) -> np.ndarray:
    """``count`` lexicon words in one fixed random order; repeats only when the lexicon is too small"""
    if len(lexicon) >= count:
        return rng.permutation(lexicon)[:count]
    return rng.choice(lexicon, size=count)


def generate_synthetic(spec: SyntheticSpec, path: Optional[str] = None) -> List[VideoTextRecord]:
    """
    Generate records from ``spec`` and optionally write them to ``path``

    Record ``i`` belongs to topic ``i % topics`` and owns a private lexicon
    inside the topic's vocabulary block. Its title is a fixed ordering of
    lexicon words and its latent is the scaled sum of those words' feature
    vectors. Frame ``j`` is ``centroid + noise * (latent + SLOT_SCALE * slot_j
    + JITTER * eps)``, so frames identify the record and their slot while
    ``noise = 0`` collapses every frame onto the topic centroid.

    Labels are derived from the topic: plot = leaf_cate = topic,
    top_cate = topic // 2.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centroids = rng.normal(0.0, 1.0, size=(spec.topics, spec.frame_dim))
    word_features = rng.normal(0.0, 1.0, size=(spec.vocab_size, spec.frame_dim))
    slot_codes = rng.normal(0.0, 1.0, size=(spec.max_frames, spec.frame_dim))
    content = np.arange(FIRST_CONTENT_ID, spec.vocab_size)
    blocks = np.array_split(content, spec.topics)
    per_topic = math.ceil(spec.num_records / spec.topics)

    records = []
    for i in range(spec.num_records):
        topic = i % spec.topics
        lexicon = _lexicon(blocks[topic], i // spec.topics, per_topic)
        text_len = int(rng.integers(spec.min_tokens, spec.max_tokens - 2, endpoint=True))
        words = _with_strays(rng, _ordered_draw(rng, lexicon, text_len), content, spec.token_noise)
        token_ids = np.concatenate([[CLS_ID], words, [SEP_ID]])
        latent = word_features[words].sum(axis=0) / math.sqrt(len(words))

        m_real = int(rng.integers(spec.min_frames, spec.max_frames, endpoint=True))
        deviation = latent + SLOT_SCALE * slot_codes[:m_real] + JITTER * rng.normal(size=(m_real, spec.frame_dim))
        frames = centroids[topic] + spec.noise * deviation

        image = None
        if spec.with_product_image:
            image = centroids[topic] + spec.noise * (latent + JITTER * rng.normal(size=spec.frame_dim))
        abstract = None
        if spec.with_abstract:
            abstract_len = int(rng.integers(spec.min_tokens, spec.max_tokens - 1, endpoint=True))
            summary = _with_strays(rng, np.resize(lexicon, abstract_len), content, spec.token_noise)
            abstract = np.concatenate([[CLS_ID], summary, [SEP_ID]])
        records.append(VideoTextRecord(
            id=f"syn-{i:06d}",
            token_ids=token_ids,
            frame_features=frames,
            plot=topic,
            top_cate=topic // 2,
            leaf_cate=topic,
            product_image=image,
            abstract_ids=abstract,
        ))
    logger.info(f"Generated {len(records)} synthetic records over {spec.topics} topics (seed {spec.seed})")
    if path:
        write_records(path, records, spec.frame_dim)
    return records
