"""Segmentation backends plus localization, cropping and classifier input.

A segmentation backend maps an image to a per-pixel foreground score plane
in [0, 1]. Three are provided: ``oracle`` (stored ground-truth masks),
``colordist`` (classical color-distance baseline) and ``external``
(precomputed mask PNGs keyed by image_id). The trained network the backends
stand in for is out of scope.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from PIL import Image

from . import imaging
from .errors import (
    InvalidBboxError,
    MissingGroundTruthError,
    ShapeMismatchError,
)

CROP_SIDE = 299
CROP_MARGIN = 10


class SegmentationBackend(Protocol):
    name: str

    def scores(self, image: np.ndarray, image_id: str | None = None) -> np.ndarray:
        """Per-pixel foreground scores in [0, 1], same height/width as input."""
        ...


class OracleBackend:
    """Ground-truth passthrough for pipeline testing."""

    name = "oracle"

    def __init__(self, masks=None, mask_dir=None):
        self._masks = dict(masks) if masks else {}
        self._mask_dir = mask_dir

    def scores(self, image: np.ndarray, image_id: str | None = None) -> np.ndarray:
        if image_id in self._masks:
            return self._masks[image_id].astype(np.float64)
        if self._mask_dir is not None and image_id is not None:
            path = os.path.join(self._mask_dir, f"{image_id}_mask.png")
            if os.path.exists(path):
                return imaging.read_mask(path).astype(np.float64)
        raise MissingGroundTruthError(f"no stored ground-truth mask for {image_id!r}")


def colordist_scores(image: np.ndarray) -> np.ndarray:
    """Distance-to-background scores, normalized to [0, 1].

    The background color is the per-channel median of the 10 px border ring;
    a zero-variance image yields all-zero scores.
    """
    imaging.ensure_rgb(image)
    h, w = image.shape[:2]
    b = min(10, max(1, min(h, w) // 2))
    ring = np.zeros((h, w), dtype=bool)
    ring[:b], ring[-b:], ring[:, :b], ring[:, -b:] = True, True, True, True
    bg = np.median(image[ring].reshape(-1, 3), axis=0)
    dist = np.sqrt(((image.astype(np.float64) - bg) ** 2).sum(axis=2))
    peak = dist.max()
    if peak <= 0.0:
        return np.zeros((h, w), dtype=np.float64)
    return dist / peak


class ColordistBackend:
    name = "colordist"

    def scores(self, image: np.ndarray, image_id: str | None = None) -> np.ndarray:
        return colordist_scores(image)


class ExternalBackend:
    """Reads precomputed mask/score PNGs from a directory keyed by image_id."""

    name = "external"

    def __init__(self, directory):
        self._dir = directory

    def scores(self, image: np.ndarray, image_id: str | None = None) -> np.ndarray:
        if image_id is None:
            raise MissingGroundTruthError("external backend needs an image_id")
        path = os.path.join(self._dir, f"{image_id}.png")
        if not os.path.exists(path):
            raise MissingGroundTruthError(f"no prediction file {path}")
        with Image.open(path) as im:
            plane = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        return plane


def make_backend(name: str, masks=None, mask_dir=None, directory=None) -> SegmentationBackend:
    if name == "oracle":
        return OracleBackend(masks=masks, mask_dir=mask_dir)
    if name == "colordist":
        return ColordistBackend()
    if name == "external":
        if directory is None:
            raise ValueError("external backend needs a directory")
        return ExternalBackend(directory)
    raise ValueError(f"unknown backend {name!r}")


def otsu_threshold(scores: np.ndarray, bins: int = 256) -> float:
    """Otsu's between-class-variance threshold over a score plane in [0, 1]."""
    hist, edges = np.histogram(np.clip(scores, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    total = hist.sum()
    if total == 0:
        return 0.5
    p = hist.astype(np.float64) / total
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(p)
    w1 = 1.0 - w0
    mu = np.cumsum(p * centers)
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_total * w0 - mu) ** 2 / (w0 * w1)
    between[~np.isfinite(between)] = -1.0
    k = int(np.argmax(between))
    return float(edges[k + 1])


def localize(
    scores: np.ndarray,
    threshold: float = 0.5,
    min_area: int = 100,
    noise_se: int = 3,
    dilate_se: int = 15,
) -> list[imaging.Component]:
    """Post-process a score plane into localized components.

    Chain: threshold, remove objects below ``min_area``, binary opening and
    closing with ``noise_se``, dilation with ``dilate_se`` (to absorb cutoffs
    and drop shadows), then connected components.
    """
    mask = np.asarray(scores) >= threshold
    mask = imaging.remove_small(mask, min_area)
    mask = imaging.opening(mask, noise_se)
    mask = imaging.closing(mask, noise_se)
    mask = imaging.dilate(mask, dilate_se)
    return imaging.connected_components(mask)


def crop_center(
    image: np.ndarray,
    bbox: tuple[int, int, int, int],
    out_side: int = CROP_SIDE,
    margin: int = CROP_MARGIN,
    scale: float = 1.0,
) -> np.ndarray:
    """Center the bbox contents on an ``out_side`` square canvas.

    The crop is scaled by ``scale`` and then uniformly downscaled if its
    longest side exceeds ``out_side - 2 * margin``. The canvas is filled with
    the per-channel median of a 5 px ring just outside the bbox (clipped to
    the image, falling back to the crop itself at full-image bboxes).
    """
    imaging.ensure_rgb(image)
    h, w = image.shape[:2]
    x0, y0, x1, y1 = bbox
    x0c, y0c = max(0, x0), max(0, y0)
    x1c, y1c = min(w, x1), min(h, y1)
    if x1c <= x0c or y1c <= y0c:
        raise InvalidBboxError(f"bbox {bbox} is empty or outside the {w}x{h} image")

    ring = np.zeros((h, w), dtype=bool)
    rx0, ry0 = max(0, x0c - 5), max(0, y0c - 5)
    rx1, ry1 = min(w, x1c + 5), min(h, y1c + 5)
    ring[ry0:ry1, rx0:rx1] = True
    ring[y0c:y1c, x0c:x1c] = False
    source = image[ring] if ring.any() else image[y0c:y1c, x0c:x1c].reshape(-1, 3)
    fill = np.median(source.reshape(-1, 3), axis=0)

    crop = image[y0c:y1c, x0c:x1c]
    ch, cw = crop.shape[:2]
    budget = out_side - 2 * margin
    factor = scale
    if max(ch, cw) * factor > budget:
        factor = budget / max(ch, cw)
    if factor != 1.0:
        nw = max(1, round(cw * factor))
        nh = max(1, round(ch * factor))
        crop = np.asarray(
            Image.fromarray(crop).resize((nw, nh), resample=Image.BILINEAR), dtype=np.uint8
        )
        ch, cw = crop.shape[:2]

    canvas = np.tile(np.clip(np.floor(fill + 0.5), 0, 255).astype(np.uint8), (out_side, out_side, 1))
    px = (out_side - cw) // 2
    py = (out_side - ch) // 2
    canvas[py : py + ch, px : px + cw] = crop
    return canvas


def to_classifier_input(crop: np.ndarray, out_side: int = CROP_SIDE) -> np.ndarray:
    """Build the 5-plane float stack (R, G, B, gray, gradient), all in [0, 1]."""
    if crop.ndim != 3 or crop.shape != (out_side, out_side, 3):
        raise ShapeMismatchError(
            f"expected a {out_side}x{out_side}x3 crop, got shape {crop.shape}"
        )
    gray = imaging.to_grayscale(crop)
    planes = [
        crop[..., 0].astype(np.float64) / 255.0,
        crop[..., 1].astype(np.float64) / 255.0,
        crop[..., 2].astype(np.float64) / 255.0,
        gray.astype(np.float64) / 255.0,
        imaging.gradient_magnitude(gray),
    ]
    return np.stack(planes, axis=0)


@dataclass(frozen=True)
class Detection:
    component: imaging.Component
    crop: np.ndarray
    input: np.ndarray  # (5, out_side, out_side)


def detect_pills(
    image: np.ndarray,
    backend: SegmentationBackend,
    image_id: str | None = None,
    threshold: float | str = 0.5,
    min_area: int = 100,
    noise_se: int = 3,
    dilate_se: int = 15,
    out_side: int = CROP_SIDE,
) -> list[Detection]:
    """Run one image through segmentation, localization and crop building.

    ``threshold="otsu"`` picks the binarization threshold from the score
    histogram (the colordist baseline wants this).
    """
    scores = backend.scores(image, image_id)
    if scores.shape != image.shape[:2]:
        raise ShapeMismatchError(
            f"backend returned {scores.shape} scores for a {image.shape[:2]} image"
        )
    thr = otsu_threshold(scores) if threshold == "otsu" else float(threshold)
    detections = []
    for comp in localize(scores, threshold=thr, min_area=min_area, noise_se=noise_se, dilate_se=dilate_se):
        crop = crop_center(image, comp.bbox, out_side=out_side)
        detections.append(Detection(component=comp, crop=crop, input=to_classifier_input(crop, out_side)))
    return detections
