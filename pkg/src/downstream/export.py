"""
Export - [CLS] embeddings of every record as a tab-separated file
"""

import logging
import os
from typing import Sequence

from ..core.utils import format_float
from ..data.records import VideoTextRecord
from ..model.params import ModelParams
from .common import checked_network, cls_embeddings

logger = logging.getLogger(__name__)


def export_embeddings(records: Sequence[VideoTextRecord], params: ModelParams, out_path: str,
                      batch_size: int = 32) -> int:
    """
    Write one ``id<TAB>v_1<TAB>...<TAB>v_d`` line per record, in record order

    Args:
        records: Records to embed
        params: Pre-trained or fine-tuned query parameters
        out_path: Destination file
        batch_size: Records per forward pass

    Returns:
        Number of rows written
    """
    network = checked_network(params, records)
    vectors = cls_embeddings(network, params, records, batch_size)
    directory = os.path.dirname(out_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        for record, vector in zip(records, vectors):
            f.write(record.id + "\t" + "\t".join(format_float(v) for v in vector) + "\n")
    logger.info(f"Exported {len(records)} embeddings of width {vectors.shape[1]} to {out_path}")
    return len(records)
