"""Classical reference detector for rendered frames.

Binarize, extract connected components, then classify each blob: surface
components by distance-transform lobe count plus elongation, sub-surface
components by edge sharpness (only crisp blobs count as in-focus).
Stateless and deterministic; tuned for the simulator's blob morphology,
not for real imagery.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.feature import peak_local_max
from skimage.measure import regionprops

from spawnwatch.detect.noise import DetectionResult, DetectorError
from spawnwatch.model import BoundingBox, Detection, OperationalMode, StageLabel


@dataclass(frozen=True)
class ReferenceParams:
    """Tunables for the classical detector."""

    threshold: float = 120.0
    min_area_px: int = 12
    lobe_nms_factor: float = 0.6
    elongation_damaged: float = 2.0
    elongation_pinch: float = 1.12
    pinch_separation_factor: float = 1.2
    focus_gradient_threshold: float = 40.0

    def __post_init__(self) -> None:
        if not (0.0 < self.threshold < 255.0):
            raise ValueError(f"degenerate threshold: {self.threshold}")
        if self.min_area_px < 1:
            raise ValueError("min_area_px must be >= 1")


def _count_lobes(mask: np.ndarray, nms_factor: float) -> tuple[int, float, float]:
    """Lobe count via distance-transform peaks with NMS.

    Returns (n_peaks, estimated lobe radius, max peak separation).
    """
    padded = np.pad(mask, 1)
    dist = ndimage.distance_transform_edt(padded)
    r_est = float(dist.max())
    min_dist = max(1, int(round(nms_factor * r_est)))
    peaks = peak_local_max(
        dist, min_distance=min_dist, threshold_abs=0.5 * r_est, exclude_border=False
    )
    if len(peaks) < 2:
        return len(peaks), r_est, 0.0
    diffs = peaks[:, None, :] - peaks[None, :, :]
    max_sep = float(np.sqrt((diffs**2).sum(axis=2)).max())
    return len(peaks), r_est, max_sep


def _classify_surface(region, params: ReferenceParams) -> StageLabel:
    minor = region.axis_minor_length
    elongation = region.axis_major_length / minor if minor > 0 else np.inf
    if elongation >= params.elongation_damaged:
        return StageLabel.DAMAGED
    n, r_est, sep = _count_lobes(region.image, params.lobe_nms_factor)
    if n <= 1:
        if elongation >= params.elongation_pinch:
            return StageLabel.FIRST_CLEAVAGE
        return StageLabel.EGG
    if n == 2:
        if sep <= params.pinch_separation_factor * r_est:
            return StageLabel.FIRST_CLEAVAGE
        return StageLabel.TWO_CELL
    if n <= 8:
        return StageLabel.FOUR_EIGHT_CELL
    return StageLabel.ADVANCED


def _edge_sharpness(image: np.ndarray, region) -> float:
    """Mean gradient magnitude on the component boundary."""
    y0, x0, y1, x1 = region.bbox
    py0, px0 = max(0, y0 - 2), max(0, x0 - 2)
    py1, px1 = min(image.shape[0], y1 + 2), min(image.shape[1], x1 + 2)
    patch = image[py0:py1, px0:px1].astype(float)
    gy, gx = np.gradient(patch)
    grad = np.hypot(gx, gy)
    mask = np.zeros(patch.shape, dtype=bool)
    mask[y0 - py0 : y1 - py0, x0 - px0 : x1 - px0] = region.image
    boundary = mask & ~ndimage.binary_erosion(mask)
    if not boundary.any():
        return 0.0
    return float(grad[boundary].mean())


def reference_detect(
    image: np.ndarray,
    mode: OperationalMode,
    params: ReferenceParams | None = None,
) -> DetectionResult:
    """Detect spawn blobs in a grayscale raster.

    Confidence is the component's solidity. frame_id is not recoverable
    from pixels and is reported as -1; callers track frame identity.
    """
    params = params or ReferenceParams()
    if image.ndim != 2:
        raise DetectorError(f"expected a 2-D grayscale image, got shape {image.shape}")
    if image.size == 0:
        raise DetectorError("empty image")
    start = time.perf_counter()

    height, width = image.shape
    binary = image >= params.threshold
    labeled, _ = ndimage.label(binary, structure=np.ones((3, 3), dtype=bool))
    detections: list[Detection] = []
    for region in regionprops(labeled):
        if region.area < params.min_area_px:
            continue
        y0, x0, y1, x1 = region.bbox
        box = BoundingBox(
            x_min=x0 / width,
            y_min=y0 / height,
            x_max=min(x1 / width, 1.0),
            y_max=min(y1 / height, 1.0),
        )
        if mode == OperationalMode.SURFACE:
            label = _classify_surface(region, params)
        else:
            if _edge_sharpness(image, region) < params.focus_gradient_threshold:
                continue
            label = StageLabel.CORAL
        confidence = float(np.clip(region.solidity, 0.0, 1.0))
        detections.append(Detection(box=box, label=label, confidence=confidence))

    return DetectionResult(
        frame_id=-1,
        detections=tuple(detections),
        inference_time=time.perf_counter() - start,
    )
