from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from ..autodiff import Tensor
from ..shapes import ShapeLabel, Subtype
from .preprocess import MASK_THRESHOLD, binarize_mask, preprocess
from .rasters import PathLike, RasterError, read_raster

MANIFEST_COLUMNS = ("id", "image", "mask", "shape", "subtype")
REQUIRED_COLUMNS = ("id", "image", "mask")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class SamplePair:
    """Preprocessed ROI image and its binary ground-truth mask, both ``[1, R, R]``."""

    id: str
    image: Tensor
    mask: Tensor
    shape_label: Optional[ShapeLabel] = None
    subtype_label: Optional[Subtype] = None

    def __post_init__(self):
        if self.image.shape != self.mask.shape or self.image.ndim != 3 or self.image.shape[0] != 1:
            raise ValueError(
                f"sample {self.id}: image {self.image.shape} and mask {self.mask.shape} "
                "must both be [1, R, R]")
        if not np.all((self.mask.data == 0.0) | (self.mask.data == 1.0)):
            raise ValueError(f"sample {self.id}: mask is not binary")
        if self.image.data.min() < 0.0 or self.image.data.max() > 1.0:
            raise ValueError(f"sample {self.id}: image values outside [0, 1]")

    @property
    def resolution(self) -> int:
        return self.image.shape[-1]


def load_dataset(manifest_path: PathLike, resolution: int = 64,
                 threshold: float = MASK_THRESHOLD) -> list[SamplePair]:
    """Read a CSV manifest (header ``id,image,mask[,shape][,subtype]``).

    Relative paths resolve against the manifest's directory. Errors name the
    offending line.
    """
    path = Path(manifest_path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        header = [h.strip().lower() for h in header]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        unknown = [c for c in header if c not in MANIFEST_COLUMNS]
        if missing or unknown:
            raise ManifestError(
                f"{path}:1: bad header {header}; required {list(REQUIRED_COLUMNS)}, "
                f"optional ['shape', 'subtype']")
        col = {name: i for i, name in enumerate(header)}
        samples: list[SamplePair] = []
        seen: dict[str, int] = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ManifestError(
                    f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            rec = {name: row[i].strip() for name, i in col.items()}
            sid = rec["id"]
            if not sid:
                raise ManifestError(f"{path}:{line}: empty id")
            if sid in seen:
                raise ManifestError(f"{path}:{line}: duplicate id {sid!r} (first on line {seen[sid]})")
            seen[sid] = line
            try:
                shape = ShapeLabel.parse(rec["shape"]) if rec.get("shape") else None
                subtype = Subtype.parse(rec["subtype"]) if rec.get("subtype") else None
            except ValueError as exc:
                raise ManifestError(f"{path}:{line}: {exc}") from None
            img_path = base / rec["image"]
            mask_path = base / rec["mask"]
            for kind, p in (("image", img_path), ("mask", mask_path)):
                if not p.is_file():
                    raise ManifestError(f"{path}:{line}: row {sid!r} references missing {kind} file {p}")
            try:
                image = preprocess(read_raster(img_path), resolution)
                mask = binarize_mask(read_raster(mask_path), resolution, threshold)
            except RasterError as exc:
                raise ManifestError(f"{path}:{line}: row {sid!r}: {exc}") from None
            samples.append(SamplePair(sid, image, mask, shape, subtype))
    return samples


def write_manifest(path: PathLike, rows: Iterable[dict]) -> None:
    """Write manifest rows (dicts keyed by :data:`MANIFEST_COLUMNS`)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([r.get(c, "") or "" for c in MANIFEST_COLUMNS])
