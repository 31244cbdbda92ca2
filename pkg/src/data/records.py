"""
Records - Video-text record type, binary record files and batch collation

File layout (little-endian):
    b"VLRD" | u32 header length | JSON header | (u32 length | record payload)*

The JSON header carries the frame feature dimension and the record count.
"""

import os
import json
import struct
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ..core.errors import DataFormatError
from ..model.config import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"VLRD"
NO_LABEL = -1
_NO_ABSTRACT = 0xFFFFFFFF
LABEL_FIELDS = ("plot", "top_cate", "leaf_cate")


@dataclass
class VideoTextRecord:
    """One video-text pair: title tokens plus per-frame features"""
    id: str
    token_ids: np.ndarray
    frame_features: np.ndarray
    plot: Optional[int] = None
    top_cate: Optional[int] = None
    leaf_cate: Optional[int] = None
    product_image: Optional[np.ndarray] = None
    abstract_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.frame_features = np.asarray(self.frame_features, dtype=np.float64)
        if self.frame_features.ndim == 1 and self.frame_features.size == 0:
            self.frame_features = self.frame_features.reshape(0, 0)
        if self.product_image is not None:
            self.product_image = np.asarray(self.product_image, dtype=np.float64)
        if self.abstract_ids is not None:
            self.abstract_ids = np.asarray(self.abstract_ids, dtype=np.int64)

    @property
    def num_frames(self) -> int:
        return int(self.frame_features.shape[0])

    def label(self, name: str) -> Optional[int]:
        return getattr(self, name)

    def validate(self, config: ModelConfig) -> None:
        """
        Check the record against the model dimensions

        Raises:
            DataFormatError: Naming the record and the violated constraint
        """
        ids = self.token_ids
        if ids.ndim != 1 or len(ids) < 2:
            raise DataFormatError(f"Record '{self.id}': token_ids needs at least [CLS] and [SEP]")
        if ids[0] != config.cls_id or ids[-1] != config.sep_id:
            raise DataFormatError(f"Record '{self.id}': token_ids must start with [CLS] and end with [SEP]")
        if len(ids) > config.max_tokens:
            raise DataFormatError(f"Record '{self.id}': {len(ids)} tokens exceed max_tokens={config.max_tokens}")
        if ids.min() < 0 or ids.max() >= config.vocab_size:
            raise DataFormatError(f"Record '{self.id}': token id outside vocabulary of {config.vocab_size}")
        if self.frame_features.ndim != 2:
            raise DataFormatError(f"Record '{self.id}': frame_features must be 2-D, got {self.frame_features.shape}")
        if self.num_frames > config.max_frames:
            raise DataFormatError(f"Record '{self.id}': {self.num_frames} frames exceed max_frames={config.max_frames}")
        if self.num_frames and self.frame_features.shape[1] != config.frame_dim:
            raise DataFormatError(
                f"Record '{self.id}': frame dim {self.frame_features.shape[1]} != model frame_dim {config.frame_dim}"
            )
        if not np.all(np.isfinite(self.frame_features)):
            raise DataFormatError(f"Record '{self.id}': non-finite frame features")
        if self.product_image is not None and self.product_image.shape != (config.frame_dim,):
            raise DataFormatError(f"Record '{self.id}': product image has shape {self.product_image.shape}")
        if self.abstract_ids is not None:
            abstract = self.abstract_ids
            if len(abstract) < 2 or abstract[0] != config.cls_id or abstract[-1] != config.sep_id:
                raise DataFormatError(f"Record '{self.id}': abstract must start with [CLS] and end with [SEP]")
            if len(abstract) > config.max_tokens + 1:
                raise DataFormatError(f"Record '{self.id}': abstract longer than max_tokens + 1")
            if abstract.min() < 0 or abstract.max() >= config.vocab_size:
                raise DataFormatError(f"Record '{self.id}': abstract id outside vocabulary")
        for name in LABEL_FIELDS:
            value = self.label(name)
            if value is not None and value < 0:
                raise DataFormatError(f"Record '{self.id}': label {name}={value} is negative")


@dataclass
class Batch:
    """Padded arrays for a list of records (text to max_tokens, frames to max_frames)"""
    ids: List[str]
    token_ids: np.ndarray        # (B, n) int
    text_mask: np.ndarray        # (B, n) bool
    frames: np.ndarray           # (B, m, D_f)
    frame_mask: np.ndarray       # (B, m) bool
    labels: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.ids)


def collate(records: Sequence[VideoTextRecord], config: ModelConfig) -> Batch:
    """Pad records into fixed-width arrays"""
    count = len(records)
    token_ids = np.full((count, config.max_tokens), config.pad_id, dtype=np.int64)
    text_mask = np.zeros((count, config.max_tokens), dtype=bool)
    frames = np.zeros((count, config.max_frames, config.frame_dim))
    frame_mask = np.zeros((count, config.max_frames), dtype=bool)
    for b, record in enumerate(records):
        n = len(record.token_ids)
        token_ids[b, :n] = record.token_ids
        text_mask[b, :n] = True
        m = record.num_frames
        if m:
            frames[b, :m] = record.frame_features
            frame_mask[b, :m] = True
    labels = {
        name: np.array([NO_LABEL if r.label(name) is None else r.label(name) for r in records], dtype=np.int64)
        for name in LABEL_FIELDS
    }
    return Batch([r.id for r in records], token_ids, text_mask, frames, frame_mask, labels)


def _encode_record(record: VideoTextRecord, frame_dim: int) -> bytes:
    parts = []
    raw_id = record.id.encode("utf-8")
    parts.append(struct.pack("<H", len(raw_id)) + raw_id)
    parts.append(struct.pack("<I", len(record.token_ids)) + record.token_ids.astype("<i4").tobytes())
    features = record.frame_features.reshape(record.num_frames, frame_dim) if record.num_frames else np.zeros((0, frame_dim))
    parts.append(struct.pack("<I", len(features)) + features.astype("<f8").tobytes())
    parts.append(struct.pack("<3i", *[NO_LABEL if record.label(n) is None else record.label(n) for n in LABEL_FIELDS]))
    if record.product_image is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + record.product_image.astype("<f8").tobytes())
    if record.abstract_ids is None:
        parts.append(struct.pack("<I", _NO_ABSTRACT))
    else:
        parts.append(struct.pack("<I", len(record.abstract_ids)) + record.abstract_ids.astype("<i4").tobytes())
    return b"".join(parts)


class _Reader:
    """Cursor over one record payload"""
    def __init__(self, payload: bytes, where: str):
        self.payload = payload
        self.pos = 0
        self.where = where

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.payload):
            raise DataFormatError(f"{self.where}: record payload truncated")
        chunk = self.payload[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        item = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(item * count), dtype=dtype)


def _decode_record(payload: bytes, frame_dim: int, where: str) -> VideoTextRecord:
    reader = _Reader(payload, where)
    id_len, = reader.unpack("<H")
    record_id = reader.take(id_len).decode("utf-8")
    n_tokens, = reader.unpack("<I")
    token_ids = reader.array("<i4", n_tokens).astype(np.int64)
    m_real, = reader.unpack("<I")
    frames = reader.array("<f8", m_real * frame_dim).astype(np.float64).reshape(m_real, frame_dim)
    labels = reader.unpack("<3i")
    has_image, = reader.unpack("<B")
    image = reader.array("<f8", frame_dim).astype(np.float64) if has_image else None
    abstract_len, = reader.unpack("<I")
    abstract = None if abstract_len == _NO_ABSTRACT else reader.array("<i4", abstract_len).astype(np.int64)
    if reader.pos != len(payload):
        raise DataFormatError(f"{where}: {len(payload) - reader.pos} trailing bytes in record '{record_id}'")
    plot, top_cate, leaf_cate = [None if v == NO_LABEL else int(v) for v in labels]
    return VideoTextRecord(record_id, token_ids, frames, plot, top_cate, leaf_cate, image, abstract)


def write_records(path: str, records: Iterable[VideoTextRecord], frame_dim: int) -> int:
    """
    Write records to a binary record file

    Args:
        path: Output file
        records: Records to write; all frames must have ``frame_dim`` columns
        frame_dim: Feature dimension stored in the header

    Returns:
        Number of records written
    """
    payloads = [_encode_record(r, frame_dim) for r in records]
    header = json.dumps({"format": "vidlang-records", "version": 1, "frame_dim": int(frame_dim),
                         "count": len(payloads)}, sort_keys=True).encode("utf-8")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", len(header)) + header)
        for payload in payloads:
            f.write(struct.pack("<I", len(payload)))
            f.write(payload)
    logger.info(f"Wrote {len(payloads)} records to {path}")
    return len(payloads)


def read_records(path: str, config: Optional[ModelConfig] = None) -> List[VideoTextRecord]:
    """
    Read every record of a record file

    Args:
        path: Record file
        config: If given, each record is validated against it

    Raises:
        DataFormatError: On a malformed file or invalid record
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC or len(blob) < 8:
        raise DataFormatError(f"{path} is not a record file")
    header_len, = struct.unpack_from("<I", blob, 4)
    try:
        header = json.loads(blob[8:8 + header_len].decode("utf-8"))
    except ValueError as e:
        raise DataFormatError(f"{path}: unreadable header: {e}") from e
    frame_dim = int(header["frame_dim"])
    if config is not None and frame_dim != config.frame_dim:
        raise DataFormatError(f"{path}: frame_dim {frame_dim} does not match model frame_dim {config.frame_dim}")

    records = []
    pos = 8 + header_len
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise DataFormatError(f"{path}: truncated length prefix at byte {pos}")
        size, = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + size > len(blob):
            raise DataFormatError(f"{path}: record {len(records)} truncated")
        record = _decode_record(blob[pos:pos + size], frame_dim, f"{path}#{len(records)}")
        if config is not None:
            record.validate(config)
        records.append(record)
        pos += size
    if len(records) != header["count"]:
        raise DataFormatError(f"{path}: header announces {header['count']} records, found {len(records)}")
    logger.info(f"Read {len(records)} records from {path}")
    return records
