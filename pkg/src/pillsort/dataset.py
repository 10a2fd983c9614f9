"""Dataset catalog: NDC class grouping, holdout splits and fold planning.

The on-disk manifest is a UTF-8 CSV with header
``image_id,path,class_id,ndc,kind,side,split,fold`` plus optional trailing
columns (``rotation,scale,bbox,pair_id``) used by synthetic manifests.
Display names are not persisted; they default to the NDC on load.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    InvalidFoldCountError,
    InvalidNdcError,
    InvalidSplitError,
    UnknownImageError,
)

_NDC_RE = re.compile(r"^\d{5}-\d{4}-\d{2}$")

KINDS = ("reference", "consumer", "synthetic")
SIDES = ("front", "back", "both", "unknown")
SPLITS = ("train", "test", "unassigned")


@dataclass(frozen=True)
class PillClass:
    class_id: int
    ndc: str
    display_name: str = ""


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: str
    class_id: int
    kind: str = "consumer"
    side: str = "unknown"
    split: str = "unassigned"
    fold: int | None = None
    # synthetic-manifest extras
    rotation: float | None = None
    scale: float | None = None
    bbox: tuple[int, int, int, int] | None = None
    pair_id: str | None = None


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict[str, int]  # image_id -> fold index 0..k-1


@dataclass
class Manifest:
    classes: list[PillClass] = field(default_factory=list)
    records: list[ImageRecord] = field(default_factory=list)
    seed: int | None = None

    @property
    def class_count(self) -> int:
        return len(self.classes)

    def class_for_ndc(self, ndc: str) -> PillClass:
        for c in self.classes:
            if c.ndc == ndc:
                return c
        raise KeyError(ndc)

    def record(self, image_id: str) -> ImageRecord:
        for r in self.records:
            if r.image_id == image_id:
                return r
        raise UnknownImageError(f"manifest has no image_id {image_id!r}")

    def by_kind(self, kind: str) -> list[ImageRecord]:
        return [r for r in self.records if r.kind == kind]

    def validate(self) -> None:
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})[0]
            raise InvalidSplitError(f"duplicate image_id {dup!r} in manifest")
        expected = list(range(len(self.classes)))
        if [c.class_id for c in self.classes] != expected:
            raise InvalidNdcError("class_ids must be contiguous 0..N-1 in NDC order")
        if len({c.ndc for c in self.classes}) != len(self.classes):
            raise InvalidNdcError("duplicate NDC among classes")
        for r in self.records:
            if not 0 <= r.class_id < len(self.classes):
                raise UnknownImageError(f"record {r.image_id!r} references unknown class {r.class_id}")
            if r.kind not in KINDS or r.side not in SIDES or r.split not in SPLITS:
                raise InvalidSplitError(f"record {r.image_id!r} has invalid kind/side/split")
            if r.split == "test" and r.fold is not None:
                raise InvalidSplitError(f"test record {r.image_id!r} carries a fold")
            if r.side == "both" and r.kind != "consumer":
                raise InvalidSplitError(f"side=both is only valid for consumer images ({r.image_id!r})")

    def apply_folds(self, plan: FoldPlan) -> "Manifest":
        records = [
            replace(r, fold=plan.assignment.get(r.image_id, r.fold)) for r in self.records
        ]
        return Manifest(classes=list(self.classes), records=records, seed=self.seed)


def validate_ndc(ndc: str) -> str:
    if not _NDC_RE.match(ndc):
        raise InvalidNdcError(f"malformed NDC {ndc!r}; expected NNNNN-NNNN-NN")
    return ndc


def group_by_ndc(labels: list[tuple[str, str]]) -> list[PillClass]:
    """Build one class per distinct NDC, class_ids assigned in ascending NDC order."""
    for _, ndc in labels:
        validate_ndc(ndc)
    unique = sorted({ndc for _, ndc in labels})
    return [PillClass(class_id=i, ndc=ndc, display_name=ndc) for i, ndc in enumerate(unique)]


def split_holdout(manifest: Manifest, fraction: float, seed: int) -> Manifest:
    """Stratified per-class holdout over consumer records.

    For each class the consumer records are shuffled under the run seed and
    round(fraction * n) of them are marked test; everything else is train.
    Reference and synthetic records always stay in the training split.
    """
    if not 0.0 <= fraction < 1.0:
        raise InvalidSplitError(f"fraction must be in [0, 1), got {fraction}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    test_ids: set[str] = set()
    for c in manifest.classes:
        pool = sorted(
            (r.image_id for r in manifest.records if r.kind == "consumer" and r.class_id == c.class_id)
        )
        if not pool:
            continue
        rng.shuffle(pool)
        n_test = int(round(fraction * len(pool)))
        test_ids.update(pool[:n_test])
    records = []
    for r in manifest.records:
        if r.kind == "consumer":
            split = "test" if r.image_id in test_ids else "train"
            records.append(replace(r, split=split, fold=None if split == "test" else r.fold))
        else:
            records.append(replace(r, split="train"))
    return Manifest(classes=list(manifest.classes), records=records, seed=seed)


def split_by_list(manifest: Manifest, test_ids) -> Manifest:
    """Reproduce an externally supplied test list exactly."""
    wanted = list(test_ids)
    known = {r.image_id: r for r in manifest.records}
    for image_id in wanted:
        if image_id not in known:
            raise UnknownImageError(f"test list names unknown image_id {image_id!r}")
        if known[image_id].kind != "consumer":
            raise InvalidSplitError(
                f"test list names non-consumer image {image_id!r}; only consumer images may be held out"
            )
    chosen = set(wanted)
    records = []
    for r in manifest.records:
        if r.image_id in chosen:
            records.append(replace(r, split="test", fold=None))
        elif r.kind == "consumer":
            records.append(replace(r, split="train"))
        else:
            records.append(replace(r, split="train"))
    return Manifest(classes=list(manifest.classes), records=records, seed=manifest.seed)


def read_test_list(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def make_folds(manifest: Manifest, k: int, seed: int) -> FoldPlan:
    """Deal consumer training records round-robin into k folds, per class.

    Records of each class are seeded-shuffled first, so with 4 images per
    class and k=4 every fold's validation slice holds exactly one image of
    each class. Reference and synthetic records are never assigned.
    """
    if k < 2:
        raise InvalidFoldCountError(f"fold count must be >= 2, got {k}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    assignment: dict[str, int] = {}
    for c in manifest.classes:
        pool = sorted(
            r.image_id
            for r in manifest.records
            if r.kind == "consumer" and r.split == "train" and r.class_id == c.class_id
        )
        if not pool:
            continue
        rng.shuffle(pool)
        for i, image_id in enumerate(pool):
            assignment[image_id] = i % k
    return FoldPlan(k=k, assignment=assignment)


# --- CSV serialization -------------------------------------------------------

_CORE_COLUMNS = ["image_id", "path", "class_id", "ndc", "kind", "side", "split", "fold"]
_EXTRA_COLUMNS = ["rotation", "scale", "bbox", "pair_id"]


def _format_bbox(bbox: tuple[int, int, int, int]) -> str:
    return ":".join(str(v) for v in bbox)


def _parse_bbox(text: str) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = (int(v) for v in text.split(":"))
    return (x0, y0, x1, y1)


def manifest_to_csv(manifest: Manifest) -> str:
    """Serialize a manifest deterministically (records sorted by image_id)."""
    has_extras = any(
        r.rotation is not None or r.scale is not None or r.bbox is not None or r.pair_id is not None
        for r in manifest.records
    )
    columns = _CORE_COLUMNS + (_EXTRA_COLUMNS if has_extras else [])
    ndc_of = {c.class_id: c.ndc for c in manifest.classes}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in sorted(manifest.records, key=lambda r: r.image_id):
        row = [
            r.image_id,
            r.path,
            str(r.class_id),
            ndc_of[r.class_id],
            r.kind,
            r.side,
            r.split,
            "" if r.fold is None else str(r.fold),
        ]
        if has_extras:
            row += [
                "" if r.rotation is None else repr(float(r.rotation)),
                "" if r.scale is None else repr(float(r.scale)),
                "" if r.bbox is None else _format_bbox(r.bbox),
                "" if r.pair_id is None else r.pair_id,
            ]
        writer.writerow(row)
    return buf.getvalue()


def save_manifest(manifest: Manifest, path) -> None:
    text = manifest_to_csv(manifest)
    header = "" if manifest.seed is None else f"# seed={manifest.seed}\n"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + text)


def load_manifest(path) -> Manifest:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        seed = None
        if first.startswith("# seed="):
            seed = int(first.strip().split("=", 1)[1])
            first = fh.readline()
        reader = csv.reader([first.rstrip("\n")] + fh.read().splitlines())
        rows = list(reader)
    header = rows[0]
    idx = {name: i for i, name in enumerate(header)}
    for col in _CORE_COLUMNS:
        if col not in idx:
            raise InvalidSplitError(f"manifest is missing column {col!r}")
    ndcs: dict[int, str] = {}
    records = []
    for row in rows[1:]:
        if not row:
            continue
        get = lambda col: row[idx[col]] if col in idx and idx[col] < len(row) else ""
        class_id = int(get("class_id"))
        ndcs[class_id] = get("ndc")
        fold_text = get("fold")
        records.append(
            ImageRecord(
                image_id=get("image_id"),
                path=get("path"),
                class_id=class_id,
                kind=get("kind"),
                side=get("side"),
                split=get("split"),
                fold=None if fold_text == "" else int(fold_text),
                rotation=None if get("rotation") == "" else float(get("rotation")),
                scale=None if get("scale") == "" else float(get("scale")),
                bbox=None if get("bbox") == "" else _parse_bbox(get("bbox")),
                pair_id=None if get("pair_id") == "" else get("pair_id"),
            )
        )
    classes = [
        PillClass(class_id=i, ndc=ndcs[i], display_name=ndcs[i]) for i in sorted(ndcs)
    ]
    manifest = Manifest(classes=classes, records=records, seed=seed)
    manifest.validate()
    return manifest
