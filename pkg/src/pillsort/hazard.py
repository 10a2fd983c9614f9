"""Class-level hazard catalog and the hazardous/non-hazardous gate.

The catalog file is a CSV of ``ndc_or_class_id,flag`` rows with flag H or N.
Classes absent from the file default to non-hazardous (the realistic prior:
roughly one pill in ten needs hazardous-waste handling).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import Manifest
from .errors import (
    ConflictingFlagError,
    InvalidThresholdError,
    ShapeMismatchError,
    UnknownClassError,
)


@dataclass
class HazardCatalog:
    flags: np.ndarray  # bool per class_id, True = hazardous
    defaulted: int = 0  # classes that fell back to non-hazardous

    @property
    def hazardous_count(self) -> int:
        return int(self.flags.sum())

    def is_hazardous(self, class_id: int) -> bool:
        return bool(self.flags[class_id])


@dataclass(frozen=True)
class HazardResult:
    score: float
    label: str  # hazardous | non-hazardous
    mode: str  # top1 | mass
    threshold: float


def catalog_from_flags(flags) -> HazardCatalog:
    flags = np.asarray(flags, dtype=bool)
    return HazardCatalog(flags=flags, defaulted=0)


def load_catalog(path, manifest: Manifest) -> HazardCatalog:
    """Read H/N flags keyed by NDC or class_id; unlisted classes default to N."""
    by_ndc = {c.ndc: c.class_id for c in manifest.classes}
    n = manifest.class_count
    seen: dict[int, bool] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            key, flag = row[0].strip(), row[1].strip().upper()
            if flag not in ("H", "N"):
                raise ConflictingFlagError(f"{path}:{lineno}: flag must be H or N, got {flag!r}")
            if key.isdigit() and "-" not in key:
                class_id = int(key)
                if not 0 <= class_id < n:
                    raise UnknownClassError(f"{path}:{lineno}: class_id {class_id} out of range")
            else:
                if key not in by_ndc:
                    raise UnknownClassError(f"{path}:{lineno}: unknown NDC {key!r}")
                class_id = by_ndc[key]
            hazardous = flag == "H"
            if class_id in seen and seen[class_id] != hazardous:
                raise ConflictingFlagError(f"{path}:{lineno}: class {class_id} flagged both H and N")
            seen[class_id] = hazardous
    flags = np.zeros(n, dtype=bool)
    for class_id, hazardous in seen.items():
        flags[class_id] = hazardous
    return HazardCatalog(flags=flags, defaulted=n - len(seen))


def hazard_score(p: np.ndarray, catalog: HazardCatalog) -> float:
    """Total probability mass on hazardous classes."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != catalog.flags.shape:
        raise ShapeMismatchError(f"probability length {p.shape} vs catalog {catalog.flags.shape}")
    return float(p[catalog.flags].sum())


def decide(p: np.ndarray, catalog: HazardCatalog, mode: str = "top1", threshold: float = 0.5) -> HazardResult:
    """Gate one prediction.

    mode=top1 takes the flag of the argmax class; mode=mass compares the
    hazardous probability mass against the threshold (ties count hazardous).
    """
    if mode not in ("top1", "mass"):
        raise ValueError(f"mode must be top1 or mass, got {mode!r}")
    if not 0.0 <= threshold <= 1.0:
        raise InvalidThresholdError(f"threshold must be in [0, 1], got {threshold}")
    score = hazard_score(p, catalog)
    if mode == "top1":
        from .classify import top_k

        hazardous = catalog.is_hazardous(top_k(p, 1)[0])
    else:
        hazardous = score >= threshold
    return HazardResult(
        score=score,
        label="hazardous" if hazardous else "non-hazardous",
        mode=mode,
        threshold=threshold,
    )
