"""Detector implementations: ground-truth oracle with configurable noise,
and a classical shape-based reference detector for rendered frames."""

from spawnwatch.detect.noise import (
    DetectionResult,
    DetectorError,
    DetectorNoise,
    oracle_detect,
    uniform_confusion,
)
from spawnwatch.detect.reference import ReferenceParams, reference_detect

__all__ = [
    "DetectionResult",
    "DetectorError",
    "DetectorNoise",
    "ReferenceParams",
    "oracle_detect",
    "reference_detect",
    "uniform_confusion",
]
