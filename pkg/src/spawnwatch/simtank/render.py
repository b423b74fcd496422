"""Deterministic grayscale rasterizer for frame ground truth.

Each stage renders as a distinctive blob layout that exactly fills its
truth box, so detector-side bounding boxes line up with the truth:

    egg                one disc
    first cleavage     two heavily overlapped discs (pinched blob)
    two-cell           two near-tangent discs
    four-to-eight      2x2 or 2x3 disc cluster
    advanced           ring of 12 small discs
    damaged            elongated ellipse (axis ratio >= 2.5)
    coral (in focus)   smooth sharp-edged oval
    out-of-focus       oval blurred by its defocus amount

Shape proportions are recovered from the pixel rectangle, so label
fidelity is best on frames whose pixel aspect matches the normalized
aspect (square frames by default).
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage

from spawnwatch.model import BoundingBox, StageLabel
from spawnwatch.simtank.tank import Distractor, FrameTruth

log = logging.getLogger(__name__)

BACKGROUND = 40.0
FOREGROUND = 200.0

# Disc spacing (in radii) for "touching" cluster members: close enough to
# stay 4-connected after rasterization, far enough to keep distinct
# distance-transform lobes.
_TOUCH = 1.9
# First-cleavage disc spacing (in radii): a heavy overlap, read as a pinch.
_PINCH = 0.45
_ADVANCED_DISCS = 12
# Ring geometry so 12 discs at _TOUCH-ish spacing fill the box exactly.
_ADVANCED_RADIUS_DIV = 8.955


def _paint_disc(canvas: np.ndarray, cx: float, cy: float, r: float, value: float) -> None:
    h, w = canvas.shape
    x0, x1 = max(0, int(cx - r - 1)), min(w, int(cx + r + 2))
    y0, y1 = max(0, int(cy - r - 1)), min(h, int(cy + r + 2))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.ogrid[y0:y1, x0:x1]
    mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    region = canvas[y0:y1, x0:x1]
    region[mask] = np.maximum(region[mask], value)


def _paint_ellipse(canvas: np.ndarray, cx: float, cy: float, a: float, b: float, value: float) -> None:
    h, w = canvas.shape
    x0, x1 = max(0, int(cx - a - 1)), min(w, int(cx + a + 2))
    y0, y1 = max(0, int(cy - b - 1)), min(h, int(cy + b + 2))
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.ogrid[y0:y1, x0:x1]
    mask = ((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 <= 1.0
    region = canvas[y0:y1, x0:x1]
    region[mask] = np.maximum(region[mask], value)


def _paint_stage_blob(canvas: np.ndarray, label: StageLabel, rect: tuple[float, float, float, float]) -> None:
    px0, py0, px1, py1 = rect
    pw, ph = px1 - px0, py1 - py0
    cx, cy = (px0 + px1) / 2.0, (py0 + py1) / 2.0

    if label == StageLabel.EGG:
        _paint_disc(canvas, cx, cy, min(pw, ph) / 2.0, FOREGROUND)
    elif label == StageLabel.FIRST_CLEAVAGE:
        r = ph / 2.0
        d = max(pw - 2.0 * r, 0.0)
        _paint_disc(canvas, cx - d / 2.0, cy, r, FOREGROUND)
        _paint_disc(canvas, cx + d / 2.0, cy, r, FOREGROUND)
    elif label == StageLabel.TWO_CELL:
        r = ph / 2.0
        d = max(pw - 2.0 * r, 0.0)
        _paint_disc(canvas, cx - d / 2.0, cy, r, FOREGROUND)
        _paint_disc(canvas, cx + d / 2.0, cy, r, FOREGROUND)
    elif label == StageLabel.FOUR_EIGHT_CELL:
        if pw / max(ph, 1.0) < 1.2:
            r = pw / (2.0 + _TOUCH)
            s = _TOUCH * r
            for dx in (-s / 2.0, s / 2.0):
                for dy in (-s / 2.0, s / 2.0):
                    _paint_disc(canvas, cx + dx, cy + dy, r, FOREGROUND)
        else:
            r = pw / (2.0 + 2.0 * _TOUCH)
            s = _TOUCH * r
            for dx in (-s, 0.0, s):
                for dy in (-s / 2.0, s / 2.0):
                    _paint_disc(canvas, cx + dx, cy + dy, r, FOREGROUND)
    elif label == StageLabel.ADVANCED:
        size = min(pw, ph)
        r = size / _ADVANCED_RADIUS_DIV
        ring = size / 2.0 - r
        for k in range(_ADVANCED_DISCS):
            theta = 2.0 * np.pi * k / _ADVANCED_DISCS
            _paint_disc(canvas, cx + ring * np.cos(theta), cy + ring * np.sin(theta), r, FOREGROUND)
    else:
        # damaged (elongated) and coral (smooth oval) are plain ellipses
        _paint_ellipse(canvas, cx, cy, pw / 2.0, ph / 2.0, FOREGROUND)


def _paint_distractor(canvas: np.ndarray, d: Distractor, rect: tuple[float, float, float, float]) -> None:
    px0, py0, px1, py1 = rect
    pw, ph = px1 - px0, py1 - py0
    pad = int(3 * d.blur_px) + 2
    patch = np.zeros((int(ph) + 2 * pad, int(pw) + 2 * pad))
    _paint_ellipse(patch, patch.shape[1] / 2.0, patch.shape[0] / 2.0, pw / 2.0, ph / 2.0, FOREGROUND)
    patch = ndimage.gaussian_filter(patch, sigma=d.blur_px)
    h, w = canvas.shape
    y0 = int(py0) - pad
    x0 = int(px0) - pad
    sy0, sx0 = max(0, -y0), max(0, -x0)
    ty0, tx0 = max(0, y0), max(0, x0)
    ty1 = min(h, y0 + patch.shape[0])
    tx1 = min(w, x0 + patch.shape[1])
    if ty0 >= ty1 or tx0 >= tx1:
        return
    sub = patch[sy0 : sy0 + (ty1 - ty0), sx0 : sx0 + (tx1 - tx0)]
    region = canvas[ty0:ty1, tx0:tx1]
    np.maximum(region, sub, out=region)


def _pixel_rect(box: BoundingBox, width: int, height: int) -> tuple[tuple[float, float, float, float], bool]:
    px0, py0 = box.x_min * width, box.y_min * height
    px1, py1 = box.x_max * width, box.y_max * height
    clipped = px0 < 0 or py0 < 0 or px1 > width or py1 > height
    return (
        (max(px0, 0.0), max(py0, 0.0), min(px1, float(width)), min(py1, float(height))),
        clipped,
    )


def render_frame(
    truth: FrameTruth,
    width: int,
    height: int,
    noise_sigma: float = 6.0,
    seed: int = 0,
) -> np.ndarray:
    """Render a frame's ground truth to a grayscale uint8 raster.

    Deterministic given (truth, seed): only the additive pixel noise is
    random and its generator is derived from (seed, frame_id).
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"frame dimensions must be positive, got {width}x{height}")
    blobs = np.zeros((height, width))
    for gt in truth.boxes:
        rect, clipped = _pixel_rect(gt.box, width, height)
        if clipped:
            log.warning("frame %d: box %s clipped to image", truth.frame_id, gt.box.as_tuple())
        _paint_stage_blob(blobs, gt.label, rect)
    for d in truth.distractors:
        rect, _ = _pixel_rect(d.box, width, height)
        _paint_distractor(blobs, d, rect)

    img = np.maximum(np.full((height, width), BACKGROUND), blobs)
    if noise_sigma > 0:
        rng = np.random.default_rng([seed, truth.frame_id])
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def write_pgm(image: np.ndarray, path) -> None:
    """Write a grayscale uint8 image as a binary portable graymap (P5)."""
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("expected a 2-D uint8 image")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 portable graymap written by write_pgm."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) < 4:
        raise ValueError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[3][: w * h], dtype=np.uint8).reshape(h, w)
