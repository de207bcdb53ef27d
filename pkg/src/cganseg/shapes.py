"""Shape labels, shape classification and the subtype-by-shape contingency table.

The integer codes of :class:`ShapeLabel` are defined here once; every other
module imports them from this file.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor
from .nets import Weights, shape_cnn_forward


class ShapeLabel(IntEnum):
    IRREGULAR = 0
    LOBULAR = 1
    OVAL = 2
    ROUND = 3

    @property
    def title(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, text: str | int) -> "ShapeLabel":
        if isinstance(text, (int, np.integer)):
            return cls(int(text))
        key = str(text).strip()
        if key.isdigit():
            return cls(int(key))
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown shape label {text!r}") from None


class Subtype(Enum):
    LUMINAL_A = "LuminalA"
    LUMINAL_B = "LuminalB"
    HER2 = "Her2"
    BASAL_LIKE = "BasalLike"

    @classmethod
    def parse(cls, text: str) -> "Subtype":
        key = "".join(ch for ch in str(text) if ch.isalnum()).lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown molecular subtype {text!r}")


SHAPES: tuple[ShapeLabel, ...] = tuple(ShapeLabel)
SUBTYPES: tuple[Subtype, ...] = tuple(Subtype)


def classify_shapes(weights: Weights, masks: Sequence[Tensor]) -> list[ShapeLabel]:
    """Most probable shape per mask; ties resolve to the lowest code."""
    if not masks:
        return []
    for m in masks:
        vals = np.unique(m.data)
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise ValueError("classify_shapes expects binary masks")
    batch = Tensor(np.stack([m.data.reshape((1,) + m.shape[-2:]) for m in masks]))
    probs = shape_cnn_forward(weights, batch).data
    return [ShapeLabel(int(i)) for i in np.argmax(probs, axis=1)]  # argmax keeps the first max


@dataclass(frozen=True)
class ContingencyTable:
    """Counts with rows in :data:`SUBTYPES` order and columns in :data:`SHAPES` order."""

    counts: np.ndarray

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_text(self) -> str:
        header = ["Subtype"] + [s.title for s in SHAPES] + ["Total"]
        rows = [[st.value] + [str(int(c)) for c in row] + [str(int(row.sum()))]
                for st, row in zip(SUBTYPES, self.counts)]
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = []
        for r in [header] + rows:
            cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
            lines.append("  ".join(cells))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subtype"] + [s.name.lower() for s in SHAPES] + ["total"])
        for st, row in zip(SUBTYPES, self.counts):
            w.writerow([st.value] + [int(c) for c in row] + [int(row.sum())])
        return buf.getvalue()


def contingency(pairs: Iterable[tuple[Subtype, ShapeLabel]]) -> ContingencyTable:
    counts = np.zeros((len(SUBTYPES), len(SHAPES)), dtype=np.int64)
    row_of = {s: i for i, s in enumerate(SUBTYPES)}
    n = 0
    for subtype, shape in pairs:
        counts[row_of[Subtype(subtype)], int(ShapeLabel(shape))] += 1
        n += 1
    if n == 0:
        raise ValueError("contingency needs at least one (subtype, shape) pair")
    return ContingencyTable(counts)


def shape_accuracy(predicted: Sequence[ShapeLabel],
                   truth: Sequence[ShapeLabel]) -> tuple[float, np.ndarray]:
    """Fraction correct and the 4x4 confusion matrix (rows truth, columns predicted)."""
    if len(predicted) != len(truth):
        raise ValueError(f"length mismatch: {len(predicted)} predictions, {len(truth)} labels")
    if not truth:
        raise ValueError("shape_accuracy needs at least one label")
    confusion = np.zeros((len(SHAPES), len(SHAPES)), dtype=np.int64)
    np.add.at(confusion, (np.asarray(truth, dtype=int), np.asarray(predicted, dtype=int)), 1)
    return float(np.trace(confusion)) / float(confusion.sum()), confusion
