"""Synthetic scene and crop generation with exact ground-truth masks.

Every generator is a pure function of (spec, inputs, seed): per-scene seeds
are derived from the run seed and the scene index, so output is identical
for any worker count or scheduling order.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from . import imaging
from .dataset import ImageRecord, Manifest
from .errors import (
    DimensionMismatchError,
    EmptyResultError,
    InvalidAugmentError,
    MissingSideError,
    NoForegroundError,
    PlacementFailedError,
)

REFERENCE_BG = (118, 118, 118)


@dataclass(frozen=True)
class PillCutout:
    """A pill extracted from a reference image, cropped to its mask bbox."""

    pixels: np.ndarray  # uint8 (h, w, 3)
    mask: np.ndarray  # bool (h, w)
    source_image_id: str = ""
    class_id: int = -1


@dataclass(frozen=True)
class Placement:
    class_id: int
    bbox: tuple[int, int, int, int]
    rotation: float
    scale: float


@dataclass(frozen=True)
class SceneSpec:
    canvas: tuple[int, int] = (400, 400)  # (width, height)
    pills_per_scene: tuple[int, int] = (1, 3)
    scale_range: tuple[float, float] = (0.7, 1.3)
    shadow_offset: tuple[int, int] = (0, 25)
    shadow_sigma: float = 3.0
    shadow_opacity: float = 0.4
    blur_sigma: tuple[float, float] = (0.0, 1.5)
    perspective_jitter: float = 0.08
    allow_overlap: bool = False
    # minimum pixel gap kept between placed pill masks; keeps components
    # countable after the 15 px localization dilation
    min_separation: int = 24
    seed: int = 0

    def __post_init__(self):
        for name in ("pills_per_scene", "scale_range", "shadow_offset", "blur_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is degenerate: {(lo, hi)}")
        if not (0 <= self.shadow_offset[0] and self.shadow_offset[1] <= 25):
            raise ValueError(f"shadow_offset must stay within [0, 25], got {self.shadow_offset}")
        if self.canvas[0] < 1 or self.canvas[1] < 1:
            raise ValueError("canvas must be at least 1x1")
        if not 0.0 <= self.shadow_opacity <= 1.0:
            raise ValueError("shadow_opacity must be in [0, 1]")
        if self.perspective_jitter < 0:
            raise ValueError("perspective_jitter must be >= 0")


@dataclass(frozen=True)
class SceneOutput:
    image: np.ndarray  # uint8 (H, W, 3)
    gt_mask: np.ndarray  # bool (H, W)
    placements: list[Placement]


@dataclass(frozen=True)
class AugmentSpec:
    rotation: float = 0.0
    flip: str = "none"  # none | h | v
    smooth_sigma: float = 0.0
    sharpen_amount: float = 0.0
    jpeg_quality: int | None = None
    contrast: float = 1.0
    brightness: float = 0.0


# --- cutout extraction -------------------------------------------------------

def extract_cutout(
    reference: np.ndarray,
    bg_color: tuple[int, int, int] = REFERENCE_BG,
    tolerance: int = 8,
    source_image_id: str = "",
    class_id: int = -1,
) -> PillCutout:
    """Segment a pill from a fixed-color reference background.

    Background pixels are those within ``tolerance`` of ``bg_color`` in every
    channel; the foreground is cleaned with a 3x3 opening and closing and only
    the largest component is kept, cropped to its bounding box.
    """
    imaging.ensure_rgb(reference)
    diff = np.abs(reference.astype(np.int16) - np.asarray(bg_color, dtype=np.int16))
    fg = diff.max(axis=2) > tolerance
    fg = imaging.closing(imaging.opening(fg, 3), 3)
    labels, n = ndimage.label(fg, structure=np.ones((3, 3), bool))
    if n == 0:
        raise NoForegroundError("no foreground left after background removal and cleanup")
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    areas[0] = 0
    mask = labels == int(np.argmax(areas))
    ys, xs = np.nonzero(mask)
    x0, y0, x1, y1 = int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1
    return PillCutout(
        pixels=reference[y0:y1, x0:x1].copy(),
        mask=mask[y0:y1, x0:x1],
        source_image_id=source_image_id,
        class_id=class_id,
    )


# --- geometry helpers --------------------------------------------------------

def _resize_f(plane: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    im = Image.fromarray(plane.astype(np.float32), mode="F")
    return np.asarray(im.resize(size, resample=Image.BILINEAR), dtype=np.float64)


def _rotate_f(plane: np.ndarray, angle: float) -> np.ndarray:
    im = Image.fromarray(plane.astype(np.float32), mode="F")
    return np.asarray(im.rotate(angle, resample=Image.BILINEAR, expand=True), dtype=np.float64)


def _transform_cutout(cut: PillCutout, rotation: float, scale: float):
    """Scale then rotate a cutout; returns (float pixels, float alpha)."""
    h, w = cut.mask.shape
    nw, nh = max(1, round(w * scale)), max(1, round(h * scale))
    alpha = cut.mask.astype(np.float64)
    planes = [cut.pixels[..., c].astype(np.float64) * alpha for c in range(3)]
    planes = [_resize_f(p, (nw, nh)) for p in planes]
    alpha = _resize_f(alpha, (nw, nh))
    if rotation % 360.0 != 0.0:
        planes = [_rotate_f(p, rotation) for p in planes]
        alpha = _rotate_f(alpha, rotation)
    alpha = np.clip(alpha, 0.0, 1.0)
    pix = np.stack(planes, axis=-1)
    safe = np.maximum(alpha, 1e-6)[..., None]
    pix = np.clip(pix / safe, 0.0, 255.0)
    return pix, alpha


def _paste_add(dst: np.ndarray, src: np.ndarray, x: int, y: int) -> None:
    """Add src into dst at (x, y), clipping at the borders."""
    h, w = src.shape[:2]
    dh, dw = dst.shape[:2]
    x0, y0 = max(0, x), max(0, y)
    x1, y1 = min(dw, x + w), min(dh, y + h)
    if x1 <= x0 or y1 <= y0:
        return
    dst[y0:y1, x0:x1] += src[y0 - y : y1 - y, x0 - x : x1 - x]


def _homography(src_pts, dst_pts) -> np.ndarray:
    a, b = [], []
    for (x, y), (u, v) in zip(src_pts, dst_pts):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        b.append(u)
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.append(v)
    h = np.linalg.solve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _random_homography(width: int, height: int, jitter: float, rng) -> np.ndarray:
    corners = [(0.0, 0.0), (width - 1.0, 0.0), (width - 1.0, height - 1.0), (0.0, height - 1.0)]
    jittered = [
        (x + rng.uniform(-jitter * width, jitter * width), y + rng.uniform(-jitter * height, jitter * height))
        for x, y in corners
    ]
    return _homography(corners, jittered)


def _sample_bilinear(plane: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = sx - x0
    wy = sy - y0
    top = plane[y0, x0] * (1 - wx) + plane[y0, x1] * wx
    bot = plane[y1, x0] * (1 - wx) + plane[y1, x1] * wx
    return top * (1 - wy) + bot * wy


def _warp_coords(width: int, height: int, hm: np.ndarray):
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    denom = hm[2, 0] * xs + hm[2, 1] * ys + hm[2, 2]
    sx = (hm[0, 0] * xs + hm[0, 1] * ys + hm[0, 2]) / denom
    sy = (hm[1, 0] * xs + hm[1, 1] * ys + hm[1, 2]) / denom
    return sx, sy


def _warp_image(img: np.ndarray, hm: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    sx, sy = _warp_coords(w, h, hm)
    if img.ndim == 2:
        return _sample_bilinear(img, sx, sy)
    return np.stack([_sample_bilinear(img[..., c], sx, sy) for c in range(img.shape[2])], axis=-1)


def _warp_mask(mask: np.ndarray, hm: np.ndarray) -> np.ndarray:
    return _warp_image(mask.astype(np.float64), hm) >= 0.5


# --- scene composition -------------------------------------------------------

def compose_scene(spec: SceneSpec, cutouts, background: np.ndarray, rng=None) -> SceneOutput:
    """Compose one synthetic scene and its exact ground-truth mask.

    Pills are drop-shadowed, alpha-blended onto a random window of the
    background, the whole canvas is perspective-warped, and the image (never
    the mask) is gaussian-blurred. Shadows are never part of the ground truth.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    cutouts = list(cutouts)
    if not cutouts:
        raise ValueError("cutout pool is empty")
    cw, ch = spec.canvas
    imaging.ensure_rgb(background)
    bh, bw = background.shape[:2]
    if bw < cw or bh < ch:
        raise DimensionMismatchError(f"background {bw}x{bh} smaller than canvas {cw}x{ch}")
    wx = int(rng.integers(0, bw - cw + 1))
    wy = int(rng.integers(0, bh - ch + 1))
    canvas = background[wy : wy + ch, wx : wx + cw].astype(np.float64).copy()

    n_pills = int(rng.integers(spec.pills_per_scene[0], spec.pills_per_scene[1] + 1))
    margin = max(0, spec.min_separation // 2)
    occupied = np.zeros((ch, cw), dtype=bool)
    pill_masks: list[np.ndarray] = []
    placed_meta: list[tuple[int, float, float]] = []

    for _ in range(n_pills):
        cut = cutouts[int(rng.integers(len(cutouts)))]
        rotation = float(rng.uniform(0.0, 360.0))
        scale = float(rng.uniform(*spec.scale_range))
        pix, alpha = _transform_cutout(cut, rotation, scale)
        mask = alpha >= 0.5
        th, tw = mask.shape
        if tw > cw or th > ch:
            raise PlacementFailedError(f"transformed pill {tw}x{th} exceeds canvas {cw}x{ch}")
        blocked = mask if spec.allow_overlap or margin == 0 else imaging.dilate(mask, 2 * margin + 1)
        px = py = 0
        for attempt in range(100):
            px = int(rng.integers(0, cw - tw + 1))
            py = int(rng.integers(0, ch - th + 1))
            if spec.allow_overlap:
                break
            if not np.logical_and(occupied[py : py + th, px : px + tw], blocked).any():
                break
        else:
            raise PlacementFailedError("could not place pill without overlap in 100 attempts")

        if spec.shadow_opacity > 0.0:
            offset = float(rng.uniform(spec.shadow_offset[0], spec.shadow_offset[1]))
            angle = float(rng.uniform(0.0, 2.0 * np.pi))
            dx = int(round(offset * np.cos(angle)))
            dy = int(round(offset * np.sin(angle)))
            shadow = np.zeros((ch, cw), dtype=np.float64)
            _paste_add(shadow, alpha, px + dx, py + dy)
            if spec.shadow_sigma > 0.0:
                shadow = ndimage.gaussian_filter(shadow, spec.shadow_sigma)
            np.clip(shadow, 0.0, 1.0, out=shadow)
            canvas *= 1.0 - spec.shadow_opacity * shadow[..., None]

        region = canvas[py : py + th, px : px + tw]
        region[:] = region * (1.0 - alpha[..., None]) + pix * alpha[..., None]

        full = np.zeros((ch, cw), dtype=bool)
        full[py : py + th, px : px + tw] = mask
        pill_masks.append(full)
        if not spec.allow_overlap:
            occupied[py : py + th, px : px + tw] |= blocked
        placed_meta.append((cut.class_id, rotation, scale))

    if spec.perspective_jitter > 0.0:
        hm = _random_homography(cw, ch, spec.perspective_jitter, rng)
        canvas = _warp_image(canvas, hm)
        pill_masks = [_warp_mask(m, hm) for m in pill_masks]

    blur = float(rng.uniform(spec.blur_sigma[0], spec.blur_sigma[1]))
    if blur > 1e-9:
        for c in range(3):
            canvas[..., c] = ndimage.gaussian_filter(canvas[..., c], blur)

    gt = np.zeros((ch, cw), dtype=bool)
    placements = []
    for (class_id, rotation, scale), mask in zip(placed_meta, pill_masks):
        gt |= mask
        ys, xs = np.nonzero(mask)
        if ys.size:
            bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        else:
            bbox = (0, 0, 0, 0)
        placements.append(Placement(class_id=class_id, bbox=bbox, rotation=rotation, scale=scale))

    image = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)
    return SceneOutput(image=image, gt_mask=gt, placements=placements)


# --- augmentation ------------------------------------------------------------

def augment(img: np.ndarray, a: AugmentSpec, seed: int | None = None) -> np.ndarray:
    """Apply flip, rotation, smoothing, sharpening, contrast/brightness, jpeg.

    An identity spec returns the image unchanged. ``seed`` is accepted for
    call-shape uniformity with the generators; all spec fields are concrete
    so no randomness is consumed.
    """
    if a.jpeg_quality is not None and not 1 <= a.jpeg_quality <= 100:
        raise InvalidAugmentError(f"jpeg_quality must be in 1..100, got {a.jpeg_quality}")
    if a.flip not in ("none", "h", "v"):
        raise InvalidAugmentError(f"flip must be none|h|v, got {a.flip!r}")
    imaging.ensure_rgb(img)
    out = img.copy()

    if a.flip == "h":
        out = out[:, ::-1].copy()
    elif a.flip == "v":
        out = out[::-1].copy()

    rot = a.rotation % 360.0
    if rot != 0.0:
        if rot % 90.0 == 0.0:
            out = np.ascontiguousarray(np.rot90(out, k=int(rot // 90)))
        else:
            fill = tuple(int(v) for v in np.median(_border_ring(out, 2).reshape(-1, 3), axis=0))
            im = Image.fromarray(out).rotate(rot, resample=Image.BILINEAR, expand=True, fillcolor=fill)
            out = np.asarray(im, dtype=np.uint8)

    if a.smooth_sigma > 0.0:
        f = out.astype(np.float64)
        for c in range(3):
            f[..., c] = ndimage.gaussian_filter(f[..., c], a.smooth_sigma)
        out = np.clip(np.floor(f + 0.5), 0, 255).astype(np.uint8)

    if a.sharpen_amount > 0.0:
        f = out.astype(np.float64)
        low = np.stack([ndimage.gaussian_filter(f[..., c], 1.0) for c in range(3)], axis=-1)
        f = f + a.sharpen_amount * (f - low)
        out = np.clip(np.floor(f + 0.5), 0, 255).astype(np.uint8)

    if a.contrast != 1.0 or a.brightness != 0.0:
        f = out.astype(np.float64) * a.contrast + a.brightness
        out = np.clip(np.floor(f + 0.5), 0, 255).astype(np.uint8)

    if a.jpeg_quality is not None:
        import io

        buf = io.BytesIO()
        Image.fromarray(out).save(buf, format="JPEG", quality=a.jpeg_quality)
        buf.seek(0)
        with Image.open(buf) as im:
            out = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return out


def _border_ring(img: np.ndarray, width: int) -> np.ndarray:
    h, w = img.shape[:2]
    ring = np.zeros((h, w), dtype=bool)
    ring[:width], ring[-width:], ring[:, :width], ring[:, -width:] = True, True, True, True
    return img[ring]


# --- procedural backgrounds ---------------------------------------------------

def make_texture_background(width: int, height: int, rng) -> np.ndarray:
    """Seeded desk-like texture: muted base color, smooth noise, optional grain."""
    base = rng.uniform((60.0, 52.0, 44.0), (170.0, 150.0, 130.0))
    img = np.tile(base, (height, width, 1))
    noise = rng.normal(0.0, 1.0, size=(height, width))
    noise = ndimage.gaussian_filter(noise, float(rng.uniform(6.0, 18.0)))
    peak = np.abs(noise).max()
    if peak > 0:
        noise *= float(rng.uniform(8.0, 22.0)) / peak
    img += noise[..., None]
    kind = int(rng.integers(0, 3))
    if kind == 1:  # wood-like grain
        period = float(rng.uniform(12.0, 40.0))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        stripes = 6.0 * np.sin(2.0 * np.pi * np.arange(width) / period + phase)
        img += stripes[None, :, None]
    elif kind == 2:  # fabric-like weave
        period = float(rng.uniform(6.0, 16.0))
        gy = 4.0 * np.sin(2.0 * np.pi * np.arange(height) / period)
        gx = 4.0 * np.sin(2.0 * np.pi * np.arange(width) / period)
        img += gy[:, None, None] + gx[None, :, None]
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


# --- dataset generators --------------------------------------------------------

def _scene_seed(run_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((run_seed, index))


def cutouts_from_manifest(manifest: Manifest, image_loader=imaging.read_image) -> list[PillCutout]:
    refs = [r for r in manifest.records if r.kind == "reference"]
    if not refs:
        raise ValueError("manifest contains no reference records")
    pool = []
    for r in sorted(refs, key=lambda r: r.image_id):
        img = image_loader(r.path)
        pool.append(extract_cutout(img, source_image_id=r.image_id, class_id=r.class_id))
    return pool


def generate_detection_set(
    manifest: Manifest,
    spec: SceneSpec,
    n_scenes: int,
    out_dir,
    seed: int | None = None,
    backgrounds: list[np.ndarray] | None = None,
    workers: int = 1,
    cutouts: list[PillCutout] | None = None,
) -> Manifest:
    """Write ``n_scenes`` scene/mask pairs plus a placement manifest.

    Per-scene seeds are mixed from (run seed, scene index); procedural
    backgrounds are generated when none are supplied.
    """
    run_seed = spec.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    pool = cutouts if cutouts is not None else cutouts_from_manifest(manifest)
    cw, ch = spec.canvas

    def build(index: int) -> list[ImageRecord]:
        rng = np.random.default_rng(_scene_seed(run_seed, index))
        if backgrounds:
            bg = backgrounds[int(rng.integers(len(backgrounds)))]
        else:
            bg = make_texture_background(cw + 40, ch + 40, rng)
        scene = compose_scene(spec, pool, bg, rng=rng)
        stem = f"scene_{index:06d}"
        img_path = os.path.join(out_dir, f"{stem}.png")
        imaging.write_image(img_path, scene.image)
        imaging.write_mask(os.path.join(out_dir, f"{stem}_mask.png"), scene.gt_mask)
        return [
            ImageRecord(
                image_id=f"{stem}_p{j}",
                path=img_path,
                class_id=p.class_id,
                kind="synthetic",
                side="unknown",
                split="unassigned",
                rotation=p.rotation,
                scale=p.scale,
                bbox=p.bbox,
            )
            for j, p in enumerate(scene.placements)
        ]

    indices = list(range(n_scenes))
    if workers > 1 and n_scenes > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_ex:
            per_scene = list(pool_ex.map(build, indices))
    else:
        per_scene = [build(i) for i in indices]
    records = [rec for recs in per_scene for rec in recs]
    return Manifest(classes=list(manifest.classes), records=records, seed=run_seed)


# --- largest empty rectangle ---------------------------------------------------

def largest_empty_rectangle(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Maximum-area axis-aligned rectangle free of foreground pixels.

    Uses the histogram-stack sweep; among equal areas the bbox with the
    smallest (y0, x0, y1, x1) tuple wins. A fully set mask has no answer.
    """
    mask = imaging.ensure_mask(mask)
    h, w = mask.shape
    heights = np.zeros(w, dtype=np.int64)
    best_area = 0
    best = None
    for row in range(h):
        heights = np.where(mask[row], 0, heights + 1)
        stack: list[int] = []
        for i in range(w + 1):
            cur = heights[i] if i < w else 0
            while stack and heights[stack[-1]] >= cur:
                top = stack.pop()
                rect_h = int(heights[top])
                if rect_h == 0:
                    continue
                left = stack[-1] + 1 if stack else 0
                area = rect_h * (i - left)
                bbox_key = (row - rect_h + 1, left, row + 1, i)
                if area > best_area or (area == best_area and best is not None and bbox_key < best):
                    best_area = area
                    best = bbox_key
            stack.append(i)
    if best is None:
        raise EmptyResultError("mask is fully set; no empty rectangle exists")
    y0, x0, y1, x1 = best
    return (x0, y0, x1, y1)


# --- front/back pair generation -------------------------------------------------

def consumer_backgrounds(
    manifest: Manifest,
    size: int = 299,
    image_loader=imaging.read_image,
) -> list[np.ndarray]:
    """Background patches cut from the largest empty rectangle of held-out
    consumer images (mask read from ``<stem>_mask.png`` when present,
    otherwise estimated with the color-distance segmenter)."""
    from .detect import colordist_scores, otsu_threshold

    patches = []
    for r in sorted(manifest.records, key=lambda r: r.image_id):
        if r.kind != "consumer" or r.split != "test":
            continue
        img = image_loader(r.path)
        stem, _ = os.path.splitext(r.path)
        mask_path = stem + "_mask.png"
        if os.path.exists(mask_path):
            mask = imaging.read_mask(mask_path)
        else:
            scores = colordist_scores(img)
            mask = scores >= otsu_threshold(scores)
            mask = imaging.closing(imaging.opening(mask, 3), 3)
        try:
            x0, y0, x1, y1 = largest_empty_rectangle(mask)
        except EmptyResultError:
            continue
        if x1 - x0 < 8 or y1 - y0 < 8:
            continue
        patch = img[y0:y1, x0:x1]
        patches.append(_resize_rgb(patch, (size, size)))
    return patches


def _resize_rgb(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    im = Image.fromarray(img).resize(size, resample=Image.BILINEAR)
    return np.asarray(im, dtype=np.uint8)


def generate_frontback_set(
    manifest: Manifest,
    n_pairs: int,
    out_dir,
    seed: int = 0,
    backgrounds: list[np.ndarray] | None = None,
    image_loader=imaging.read_image,
) -> Manifest:
    """Write n_pairs front/back 299x299 crop pairs sharing a pair_id each.

    Backgrounds come from the largest empty rectangle of held-out consumer
    images unless supplied; each crop gets a random rotation, perspective
    jitter, blur and contrast variation.
    """
    os.makedirs(out_dir, exist_ok=True)
    by_class: dict[int, dict[str, ImageRecord]] = {}
    for r in manifest.records:
        if r.kind == "reference" and r.side in ("front", "back"):
            by_class.setdefault(r.class_id, {})[r.side] = r
    eligible = sorted(cid for cid, sides in by_class.items() if "front" in sides and "back" in sides)
    if len(eligible) < n_pairs:
        lacking = sorted(set(by_class) - set(eligible))
        detail = f"class {lacking[0]} lacks a side" if lacking else "not enough classes"
        raise MissingSideError(
            f"need {n_pairs} classes with both sides, only {len(eligible)} available ({detail})"
        )
    rng_pick = np.random.default_rng(np.random.SeedSequence((seed, 0xFB)))
    chosen = sorted(int(c) for c in rng_pick.choice(eligible, size=n_pairs, replace=False))

    if backgrounds is None:
        backgrounds = consumer_backgrounds(manifest, image_loader=image_loader)
    if not backgrounds:
        raise ValueError("no background patches available; supply backgrounds or held-out consumer images")

    side_size = 299
    records = []
    for pair_index, class_id in enumerate(chosen):
        pair_id = f"fb_{pair_index:06d}"
        for side_index, side in enumerate(("front", "back")):
            rec = by_class[class_id][side]
            rng = np.random.default_rng(np.random.SeedSequence((seed, pair_index, side_index)))
            cut = extract_cutout(image_loader(rec.path), source_image_id=rec.image_id, class_id=class_id)
            canvas = backgrounds[int(rng.integers(len(backgrounds)))].astype(np.float64).copy()

            long_side = max(cut.mask.shape)
            target = float(rng.uniform(0.45, 0.65)) * side_size
            scale = target / long_side
            rotation = float(rng.uniform(0.0, 360.0))
            pix, alpha = _transform_cutout(cut, rotation, scale)
            th, tw = alpha.shape
            px = (side_size - tw) // 2 + int(rng.integers(-10, 11))
            py = (side_size - th) // 2 + int(rng.integers(-10, 11))
            px = int(np.clip(px, 0, side_size - tw))
            py = int(np.clip(py, 0, side_size - th))
            region = canvas[py : py + th, px : px + tw]
            region[:] = region * (1.0 - alpha[..., None]) + pix * alpha[..., None]

            hm = _random_homography(side_size, side_size, 0.06, rng)
            canvas = _warp_image(canvas, hm)
            blur = float(rng.uniform(0.0, 1.0))
            if blur > 1e-9:
                for c in range(3):
                    canvas[..., c] = ndimage.gaussian_filter(canvas[..., c], blur)
            contrast = float(rng.uniform(0.85, 1.15))
            offset = float(rng.uniform(-10.0, 10.0))
            canvas = canvas * contrast + offset

            img = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)
            image_id = f"{pair_id}_{side}"
            path = os.path.join(out_dir, f"{image_id}.png")
            imaging.write_image(path, img)
            records.append(
                ImageRecord(
                    image_id=image_id,
                    path=path,
                    class_id=class_id,
                    kind="synthetic",
                    side=side,
                    split="test",
                    pair_id=pair_id,
                )
            )
    return Manifest(classes=list(manifest.classes), records=records, seed=seed)
