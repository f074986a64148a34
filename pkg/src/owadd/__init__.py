"""Unsupervised drift detection and novel-class recognition for tabular streams."""

from .detector import ChunkVerdict, DetectorConfig, OwaddDetector, run_detector
from .streamgen import DataChunk, GroundTruth, StreamConfig, generate_stream

__all__ = [
    "ChunkVerdict",
    "DataChunk",
    "DetectorConfig",
    "GroundTruth",
    "OwaddDetector",
    "StreamConfig",
    "generate_stream",
    "run_detector",
]

__version__ = "0.1.0"
