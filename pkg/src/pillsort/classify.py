"""Per-class probability production, ingestion, fusion and ranking.

The baseline classifier is a nearest-reference feature model (HSV histogram,
size, aspect, Hu moments, mean color) standing in for a trained CNN at desk
scale; externally trained networks feed the same evaluation machinery through
prediction CSV files (header ``image_id,p_0,...,p_{N-1}``).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import imaging
from .detect import colordist_scores, otsu_threshold
from .errors import (
    EmptyEnsembleError,
    InvalidKError,
    MissingClassError,
    NotADistributionError,
    ShapeMismatchError,
)

HSV_BINS = (8, 8, 4)
INDEX_VERSION = 1


# --- feature extraction -------------------------------------------------------

def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB (uint8) to HSV, all channels scaled to [0, 1]."""
    f = rgb.astype(np.float64) / 255.0
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    maxc = f.max(axis=-1)
    minc = f.min(axis=-1)
    delta = maxc - minc
    h = np.zeros_like(maxc)
    nz = delta > 0
    rmax = nz & (maxc == r)
    gmax = nz & ~rmax & (maxc == g)
    bmax = nz & ~rmax & ~gmax
    h[rmax] = ((g - b)[rmax] / delta[rmax]) % 6.0
    h[gmax] = (b - r)[gmax] / delta[gmax] + 2.0
    h[bmax] = (r - g)[bmax] / delta[bmax] + 4.0
    h /= 6.0
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    return np.stack([h, s, maxc], axis=-1)


def _hu_moments(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    m00 = float(ys.size)
    if m00 == 0:
        return np.zeros(7)
    xc, yc = xs.mean(), ys.mean()
    x = xs - xc
    y = ys - yc

    def mu(p, q):
        return float(np.sum(x**p * y**q))

    def eta(p, q):
        return mu(p, q) / m00 ** (1.0 + (p + q) / 2.0)

    n20, n02, n11 = eta(2, 0), eta(0, 2), eta(1, 1)
    n30, n03, n21, n12 = eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2)
    h1 = n20 + n02
    h2 = (n20 - n02) ** 2 + 4.0 * n11**2
    h3 = (n30 - 3.0 * n12) ** 2 + (3.0 * n21 - n03) ** 2
    h4 = (n30 + n12) ** 2 + (n21 + n03) ** 2
    h5 = (n30 - 3.0 * n12) * (n30 + n12) * ((n30 + n12) ** 2 - 3.0 * (n21 + n03) ** 2) + (
        3.0 * n21 - n03
    ) * (n21 + n03) * (3.0 * (n30 + n12) ** 2 - (n21 + n03) ** 2)
    h6 = (n20 - n02) * ((n30 + n12) ** 2 - (n21 + n03) ** 2) + 4.0 * n11 * (n30 + n12) * (n21 + n03)
    h7 = (3.0 * n21 - n03) * (n30 + n12) * ((n30 + n12) ** 2 - 3.0 * (n21 + n03) ** 2) - (
        n30 - 3.0 * n12
    ) * (n21 + n03) * (3.0 * (n30 + n12) ** 2 - (n21 + n03) ** 2)
    hu = np.array([h1, h2, h3, h4, h5, h6, h7])
    # log-compress: spans ~40 decades otherwise
    return -np.sign(hu) * np.log10(np.abs(hu) + 1e-30)


def recover_pill_mask(crop: np.ndarray) -> np.ndarray:
    """Estimate the pill mask inside a centered crop (fill color = background)."""
    scores = colordist_scores(crop)
    mask = scores >= otsu_threshold(scores)
    mask = imaging.closing(imaging.opening(mask, 3), 3)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), bool))
    if n == 0:
        return np.ones(crop.shape[:2], dtype=bool)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    areas[0] = 0
    return labels == int(np.argmax(areas))


def extract_features(crop: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Feature vector for one crop: HSV histogram over mask pixels, mask area
    fraction, bbox aspect ratio, 7 Hu moments, mean RGB inside the mask."""
    imaging.ensure_rgb(crop)
    if mask is None:
        mask = recover_pill_mask(crop)
    if mask.shape != crop.shape[:2]:
        raise ShapeMismatchError(f"mask {mask.shape} does not match crop {crop.shape[:2]}")
    if not mask.any():
        mask = np.ones(crop.shape[:2], dtype=bool)

    hsv = _rgb_to_hsv(crop[mask])
    hist, _ = np.histogramdd(
        np.clip(hsv, 0.0, 1.0 - 1e-9), bins=HSV_BINS, range=((0, 1), (0, 1), (0, 1))
    )
    hist = hist.ravel() / hsv.shape[0]

    area_frac = mask.sum() / mask.size
    ys, xs = np.nonzero(mask)
    width = xs.max() - xs.min() + 1
    height = ys.max() - ys.min() + 1
    aspect = width / height
    mean_rgb = crop[mask].mean(axis=0) / 255.0
    return np.concatenate([hist, [area_frac, aspect], _hu_moments(mask), mean_rgb])


FEATURE_DIM = int(np.prod(HSV_BINS)) + 2 + 7 + 3


# --- reference feature index ----------------------------------------------------

@dataclass
class ReferenceFeatureIndex:
    class_count: int
    class_ids: np.ndarray  # (n_entries,) int
    features: np.ndarray  # (n_entries, FEATURE_DIM) raw (unnormalized)
    mean: np.ndarray
    std: np.ndarray
    source_ids: list[str]

    def normalized(self) -> np.ndarray:
        return (self.features - self.mean) / self.std


def build_index(entries, class_count: int) -> ReferenceFeatureIndex:
    """Extract features for (class_id, crop[, source_id]) entries and store
    per-dimension z-normalization statistics."""
    class_ids, feats, source_ids = [], [], []
    for i, entry in enumerate(entries):
        class_id, crop = entry[0], entry[1]
        source_id = entry[2] if len(entry) > 2 else f"entry_{i}"
        class_ids.append(int(class_id))
        feats.append(extract_features(crop))
        source_ids.append(source_id)
    present = set(class_ids)
    missing = [c for c in range(class_count) if c not in present]
    if missing:
        raise MissingClassError(f"classes with zero reference crops: {missing[:10]}")
    features = np.asarray(feats, dtype=np.float64)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return ReferenceFeatureIndex(
        class_count=class_count,
        class_ids=np.asarray(class_ids, dtype=np.int64),
        features=features,
        mean=mean,
        std=std,
        source_ids=source_ids,
    )


def cutout_to_crop(cutout, out_side: int = 299, margin: int = 10) -> np.ndarray:
    """Center a cutout on a square canvas the way detection crops are built.

    The fill color is the median of the cutout's non-mask pixels (reference
    gray for NLM-style images)."""
    from PIL import Image

    pix, mask = cutout.pixels, cutout.mask
    outside = pix[~mask]
    fill = np.median(outside.reshape(-1, 3), axis=0) if outside.size else np.array([118.0] * 3)
    h, w = mask.shape
    budget = out_side - 2 * margin
    factor = 1.0
    if max(h, w) > budget:
        factor = budget / max(h, w)
        nw, nh = max(1, round(w * factor)), max(1, round(h * factor))
        pix = np.asarray(Image.fromarray(pix).resize((nw, nh), resample=Image.BILINEAR), dtype=np.uint8)
        h, w = nh, nw
    canvas = np.tile(np.clip(np.floor(fill + 0.5), 0, 255).astype(np.uint8), (out_side, out_side, 1))
    px, py = (out_side - w) // 2, (out_side - h) // 2
    canvas[py : py + h, px : px + w] = pix
    return canvas


def build_index_from_manifest(manifest, image_loader=imaging.read_image) -> ReferenceFeatureIndex:
    """Build the index from a manifest's reference records."""
    from .synthgen import extract_cutout

    entries = []
    for r in sorted(manifest.by_kind("reference"), key=lambda r: r.image_id):
        cut = extract_cutout(image_loader(r.path), source_image_id=r.image_id, class_id=r.class_id)
        entries.append((r.class_id, cutout_to_crop(cut), r.image_id))
    return build_index(entries, manifest.class_count)


def save_index(index: ReferenceFeatureIndex, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["pillsort-index", str(INDEX_VERSION)])
    writer.writerow(["class_count", str(index.class_count)])
    writer.writerow(["feature_dim", str(index.features.shape[1])])
    writer.writerow(["MEAN"] + [repr(v) for v in index.mean])
    writer.writerow(["STD"] + [repr(v) for v in index.std])
    for cid, sid, row in zip(index.class_ids, index.source_ids, index.features):
        writer.writerow(["ENTRY", str(int(cid)), sid] + [repr(v) for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def load_index(path) -> ReferenceFeatureIndex:
    with open(path, "r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "pillsort-index":
        raise ValueError(f"{path} is not a pillsort index file")
    if int(rows[0][1]) != INDEX_VERSION:
        raise ValueError(f"unsupported index version {rows[0][1]}")
    class_count = int(rows[1][1])
    mean = np.array([float(v) for v in rows[3][1:]])
    std = np.array([float(v) for v in rows[4][1:]])
    class_ids, source_ids, feats = [], [], []
    for row in rows[5:]:
        if not row or row[0] != "ENTRY":
            continue
        class_ids.append(int(row[1]))
        source_ids.append(row[2])
        feats.append([float(v) for v in row[3:]])
    return ReferenceFeatureIndex(
        class_count=class_count,
        class_ids=np.asarray(class_ids, dtype=np.int64),
        features=np.asarray(feats, dtype=np.float64),
        mean=mean,
        std=std,
        source_ids=source_ids,
    )


# --- prediction ------------------------------------------------------------------

def stack_to_rgb(stack: np.ndarray) -> np.ndarray:
    if stack.ndim != 3 or stack.shape[0] < 3:
        raise ShapeMismatchError(f"expected a (planes, H, W) stack, got {stack.shape}")
    rgb = np.clip(np.floor(stack[:3] * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(rgb.transpose(1, 2, 0))


def predict_baseline(index: ReferenceFeatureIndex, stack: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Softmax over negated per-class minimum feature distances.

    d_c = min over class-c reference entries of the z-normalized Euclidean
    distance; p_c = exp(-d_c / T) / sum_j exp(-d_j / T).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    query = (extract_features(stack_to_rgb(stack)) - index.mean) / index.std
    diffs = index.normalized() - query
    dists = np.sqrt((diffs**2).sum(axis=1))
    per_class = np.full(index.class_count, np.inf)
    np.minimum.at(per_class, index.class_ids, dists)
    shifted = -(per_class - per_class.min()) / temperature
    weights = np.exp(shifted)
    return weights / weights.sum()


@dataclass
class PredictionSet:
    rows: dict[str, np.ndarray]
    class_count: int

    def image_ids(self) -> list[str]:
        return sorted(self.rows)

    def row(self, image_id: str) -> np.ndarray:
        return self.rows[image_id]


def check_prob_vector(values: np.ndarray, class_count: int, where: str = "") -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (class_count,):
        raise ShapeMismatchError(f"{where}: expected {class_count} probabilities, got {values.shape}")
    if (values < 0).any():
        raise NotADistributionError(f"{where}: negative probability")
    total = float(values.sum())
    if abs(total - 1.0) > 1e-3:
        raise NotADistributionError(f"{where}: probabilities sum to {total:.6f}")
    if total != 1.0 and total > 0:
        values = values / total
    return values


def load_predictions(path, class_count: int) -> PredictionSet:
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != class_count + 1:
            got = 0 if header is None else len(header) - 1
            raise ShapeMismatchError(f"{path}: header has {got} probability columns, expected {class_count}")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != class_count + 1:
                raise ShapeMismatchError(f"{path}:{lineno}: row has {len(row) - 1} values, expected {class_count}")
            values = np.array([float(v) for v in row[1:]])
            rows[row[0]] = check_prob_vector(values, class_count, where=f"{path}:{lineno}")
    return PredictionSet(rows=rows, class_count=class_count)


def save_predictions(pset: PredictionSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id"] + [f"p_{i}" for i in range(pset.class_count)])
        for image_id in pset.image_ids():
            writer.writerow([image_id] + [repr(float(v)) for v in pset.rows[image_id]])


# --- fusion and ranking ------------------------------------------------------------

def ensemble(vectors) -> np.ndarray:
    """Element-wise arithmetic mean of probability vectors."""
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vectors:
        raise EmptyEnsembleError("cannot ensemble zero probability vectors")
    length = vectors[0].shape
    for v in vectors[1:]:
        if v.shape != length:
            raise ShapeMismatchError(f"ensemble inputs differ in length: {length} vs {v.shape}")
    return np.mean(vectors, axis=0)


def combine_sides(front: np.ndarray, back: np.ndarray) -> np.ndarray:
    """Average the front and back probability vectors of one pill."""
    front = np.asarray(front, dtype=np.float64)
    back = np.asarray(back, dtype=np.float64)
    if front.shape != back.shape:
        raise ShapeMismatchError(f"side vectors differ in length: {front.shape} vs {back.shape}")
    return (front + back) / 2.0


def top_k(p: np.ndarray, k: int) -> list[int]:
    """Class ids sorted by probability descending, ties by ascending class id."""
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    if not 1 <= k <= n:
        raise InvalidKError(f"k must be in 1..{n}, got {k}")
    order = np.lexsort((np.arange(n), -p))
    return [int(i) for i in order[:k]]
