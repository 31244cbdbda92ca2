"""
Data module - video-text record files, batch collation and synthetic data
"""

from .records import Batch, VideoTextRecord, collate, read_records, write_records
from .synthetic import SyntheticSpec, generate_synthetic
