"""
Checkpoint - Versioned binary container for parameters, optimizer moments and queues

Layout (little-endian):
    b"VLCK" | u32 version | u32 header length | JSON header | float64 payload | sha256 digest

The header lists every entry as (name, shape, offset) together with the
ModelConfig and free-form metadata; the trailing digest covers all bytes
before it and guards against truncation and corruption.
"""

import os
import json
import struct
import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional

import numpy as np

from ..core.errors import CheckpointError
from .config import ModelConfig

logger = logging.getLogger(__name__)

MAGIC = b"VLCK"
FORMAT_VERSION = 1
_DIGEST_SIZE = 32


@dataclass
class Checkpoint:
    """Decoded checkpoint contents, grouped by section ("query", "key", "optim.first", ...)"""
    model_config: ModelConfig
    sections: Dict[str, "OrderedDict[str, np.ndarray]"] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)

    def section(self, name: str) -> "OrderedDict[str, np.ndarray]":
        if name not in self.sections:
            raise CheckpointError(f"Checkpoint has no '{name}' section (available: {sorted(self.sections)})")
        return self.sections[name]


def save_checkpoint(path: str, model_config: ModelConfig,
                    sections: Mapping[str, Mapping[str, np.ndarray]],
                    meta: Optional[Mapping[str, Any]] = None) -> None:
    """
    Write a checkpoint file

    Args:
        path: Destination file
        model_config: Architecture the arrays belong to
        sections: Section name -> (entry name -> array)
        meta: JSON-serializable extras (step counter, rng seeds, ...)
    """
    entries = []
    chunks = []
    offset = 0
    for section, arrays in sections.items():
        for name, array in arrays.items():
            data = np.ascontiguousarray(array, dtype="<f8")
            entries.append({"name": f"{section}/{name}", "shape": list(data.shape), "offset": offset})
            chunk = data.tobytes()
            chunks.append(chunk)
            offset += len(chunk)

    header = json.dumps(
        {"model_config": model_config.to_dict(), "meta": dict(meta or {}), "entries": entries,
         "payload_bytes": offset},
        sort_keys=True,
    ).encode("utf-8")
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(header)) + header + b"".join(chunks)
    digest = hashlib.sha256(body).digest()

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(body)
        f.write(digest)
    os.replace(tmp_path, path)
    logger.info(f"Checkpoint saved to {path} ({len(entries)} arrays, {offset:,} payload bytes)")


def load_checkpoint(path: str, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    """
    Read and verify a checkpoint file

    Args:
        path: Checkpoint file
        expected_config: If given, the stored ModelConfig must equal it

    Returns:
        Checkpoint

    Raises:
        CheckpointError: On truncation, digest or version mismatch, or a
            config that differs from ``expected_config`` (naming the field)
    """
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    if len(blob) < len(MAGIC) + 8 + _DIGEST_SIZE or blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic or truncated)")
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"Checkpoint {path} failed its integrity check (truncated or corrupted)")

    version, header_len = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Checkpoint {path} has format version {version}, expected {FORMAT_VERSION}")
    header_start = 12
    try:
        header = json.loads(body[header_start:header_start + header_len].decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"Checkpoint {path} has an unreadable header: {e}") from e
    payload = body[header_start + header_len:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"Checkpoint {path} payload is {len(payload)} bytes, header says {header['payload_bytes']}")

    config = ModelConfig.from_dict(header["model_config"])
    if expected_config is not None:
        differing = config.first_difference(expected_config)
        if differing is not None:
            raise CheckpointError(
                f"Checkpoint {path} was written for a different model: field '{differing}' is "
                f"{getattr(config, differing)!r}, expected {getattr(expected_config, differing)!r}"
            )

    sections: Dict[str, "OrderedDict[str, np.ndarray]"] = {}
    for entry in header["entries"]:
        section, _, name = entry["name"].partition("/")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"]).reshape(shape)
        sections.setdefault(section, OrderedDict())[name] = array.astype(np.float64)
    logger.info(f"Checkpoint loaded from {path} (sections: {', '.join(sections) or 'none'})")
    return Checkpoint(model_config=config, sections=sections, meta=header["meta"])
