"""Raster, mask, morphology and connected-component primitives.

Conventions used across the package:

* raster image: ``np.uint8`` array, shape ``(H, W)`` for grayscale or
  ``(H, W, 3)`` for RGB, row-major.
* binary mask: ``np.bool_`` array, shape ``(H, W)``; True = foreground.
* plane stack: float array, shape ``(planes, H, W)``, every sample in [0, 1].
* structuring elements are fully-set squares given by their odd side length.
* bounding boxes are half-open ``(x0, y0, x1, y1)`` tuples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import (
    ChannelMismatchError,
    DimensionMismatchError,
    InvalidElementError,
)

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Sobel per-axis maximum for 8-bit input: 4 * 255.
_SOBEL_MAX = 1020.0 * np.sqrt(2.0)


@dataclass(frozen=True)
class Component:
    """One 8-connected foreground component of a binary mask."""

    label: int
    area: int
    bbox: tuple[int, int, int, int]  # (x0, y0, x1, y1), half-open
    centroid: tuple[float, float]  # (cx, cy)

    @property
    def width(self) -> int:
        return self.bbox[2] - self.bbox[0]

    @property
    def height(self) -> int:
        return self.bbox[3] - self.bbox[1]


def ensure_rgb(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ChannelMismatchError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


def ensure_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim != 2:
        raise ChannelMismatchError(f"expected a single-channel (H, W) image, got shape {img.shape}")
    return img


def ensure_mask(mask: np.ndarray) -> np.ndarray:
    if mask.ndim != 2:
        raise DimensionMismatchError(f"expected an (H, W) mask, got shape {mask.shape}")
    return mask.astype(bool, copy=False)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Convert an RGB image to 8-bit luma (0.299 R + 0.587 G + 0.114 B).

    Rounding is half-up; results are clamped to [0, 255].
    """
    ensure_rgb(img)
    r, g, b = (img[..., c].astype(np.float64) for c in range(3))
    luma = GRAY_WEIGHTS[0] * r + GRAY_WEIGHTS[1] * g + GRAY_WEIGHTS[2] * b
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


def gradient_magnitude(gray: np.ndarray) -> np.ndarray:
    """Normalized 3x3 Sobel magnitude of a grayscale image.

    Borders are replicate-sampled; the output is scaled by the theoretical
    per-pixel maximum (1020 * sqrt(2)) so every value lies in [0, 1].
    """
    ensure_gray(gray)
    p = np.pad(gray.astype(np.float64), 1, mode="edge")
    gx = (
        (p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2])
    )
    gy = (
        (p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
        - (p[:-2, :-2] + 2.0 * p[:-2, 1:-1] + p[:-2, 2:])
    )
    return np.clip(np.hypot(gx, gy) / _SOBEL_MAX, 0.0, 1.0)


def _check_side(side: int) -> None:
    if not isinstance(side, (int, np.integer)) or side < 1 or side % 2 == 0:
        raise InvalidElementError(f"structuring element side must be an odd integer >= 1, got {side!r}")


def erode(mask: np.ndarray, side: int) -> np.ndarray:
    """Minkowski erosion by a fully-set square; out-of-bounds counts as background."""
    _check_side(side)
    mask = ensure_mask(mask)
    return ndimage.minimum_filter(mask, size=side, mode="constant", cval=False)


def dilate(mask: np.ndarray, side: int) -> np.ndarray:
    """Minkowski dilation by a fully-set square; out-of-bounds pixels are ignored."""
    _check_side(side)
    mask = ensure_mask(mask)
    return ndimage.maximum_filter(mask, size=side, mode="constant", cval=False)


def opening(mask: np.ndarray, side: int) -> np.ndarray:
    """Erosion followed by dilation."""
    return dilate(erode(mask, side), side)


def closing(mask: np.ndarray, side: int) -> np.ndarray:
    """Dilation followed by erosion."""
    return erode(dilate(mask, side), side)


_STRUCTURE_8 = np.ones((3, 3), dtype=bool)
_STRUCTURE_4 = ndimage.generate_binary_structure(2, 1)


def _label(mask: np.ndarray, connectivity: int) -> tuple[np.ndarray, int]:
    if connectivity == 8:
        structure = _STRUCTURE_8
    elif connectivity == 4:
        structure = _STRUCTURE_4
    else:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    return ndimage.label(mask, structure=structure)


def remove_small(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Clear every 8-connected component whose area is below ``min_area``."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    mask = ensure_mask(mask)
    if min_area <= 1 or not mask.any():
        return mask.copy()
    labels, n = _label(mask, 8)
    if n == 0:
        return mask.copy()
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Component]:
    """Label foreground components with exact areas, bboxes and centroids.

    Components are returned in ascending (y0, x0) order of their bounding
    boxes (ties broken by first pixel in raster order) and relabeled 1..n.
    """
    mask = ensure_mask(mask)
    labels, n = _label(mask, connectivity)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    raw = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        region = labels[sl] == lab
        ys, xs = np.nonzero(region)
        y_off, x_off = sl[0].start, sl[1].start
        ys = ys + y_off
        xs = xs + x_off
        bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        centroid = (float(xs.mean()), float(ys.mean()))
        first_flat = int(ys[0]) * mask.shape[1] + int(xs[0])
        raw.append((bbox[1], bbox[0], first_flat, bbox, int(areas[lab]), centroid))
    raw.sort(key=lambda t: t[:3])
    return [
        Component(label=i, area=area, bbox=bbox, centroid=centroid)
        for i, (_, _, _, bbox, area, centroid) in enumerate(raw, start=1)
    ]


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """Dice overlap 2|a & b| / (|a| + |b|); two empty masks count as 1.0."""
    a = ensure_mask(a)
    b = ensure_mask(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


# --- PNG I/O ----------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """Read a PNG (or any PIL-readable file) as uint8 gray or RGB."""
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        if im.mode != "RGB":
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.uint8)


def write_image(path, img: np.ndarray) -> None:
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image data, got {img.dtype}")
    Image.fromarray(img).save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """Read a mask PNG; any nonzero sample is foreground."""
    with Image.open(path) as im:
        if im.mode not in ("1", "L"):
            im = im.convert("L")
        return np.asarray(im) > 0


def write_mask(path, mask: np.ndarray) -> None:
    mask = ensure_mask(mask)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")
