"""Pixel confusion counts, the five segmentation scores, and morphological cleanup."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor

METRIC_NAMES = ("accuracy", "dice", "jaccard", "sensitivity", "specificity")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class SegMetrics:
    accuracy: float
    dice: float
    jaccard: float
    sensitivity: float
    specificity: float
    # names of scores whose ratio was 0/0 and was reported as 1.0
    vacuous: frozenset[str] = field(default_factory=frozenset)

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, n) for n in METRIC_NAMES)


def _as_bool(mask, name: str) -> np.ndarray:
    arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} is not binary")
    return arr.astype(bool)


def confusion(pred, truth) -> ConfusionCounts:
    p = _as_bool(pred, "pred")
    t = _as_bool(truth, "truth")
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, p.size - tp - fp - fn, fn)


def metrics(c: ConfusionCounts) -> SegMetrics:
    if c.total == 0:
        raise ValueError("cannot score an empty comparison")
    vacuous = set()

    def ratio(name: str, num: int, den: int) -> float:
        if den == 0:
            vacuous.add(name)
            return 1.0
        return num / den

    acc = (c.tp + c.tn) / c.total
    dice = ratio("dice", 2 * c.tp, 2 * c.tp + c.fp + c.fn)
    jac = ratio("jaccard", c.tp, c.tp + c.fp + c.fn)
    sens = ratio("sensitivity", c.tp, c.tp + c.fn)
    spec = ratio("specificity", c.tn, c.tn + c.fp)
    return SegMetrics(acc, dice, jac, sens, spec, frozenset(vacuous))


def evaluate_set(pairs: Sequence[tuple[object, object]]) -> SegMetrics:
    """Micro-average: pool the confusion counts of every pair, then score once."""
    if not pairs:
        raise ValueError("evaluate_set needs at least one (pred, truth) pair")
    total = ConfusionCounts(0, 0, 0, 0)
    for pred, truth in pairs:
        total = total + confusion(pred, truth)
    return metrics(total)


def macro_average(scores: Iterable[SegMetrics]) -> SegMetrics:
    scores = list(scores)
    if not scores:
        raise ValueError("macro_average needs at least one score")
    means = [float(np.mean([getattr(s, n) for s in scores])) for n in METRIC_NAMES]
    return SegMetrics(*means)


# -- morphology --------------------------------------------------------------

def _window_reduce(mask: np.ndarray, radius: int, reducer, fill: bool) -> np.ndarray:
    padded = np.pad(mask, radius, constant_values=fill)
    side = 2 * radius + 1
    win = np.lib.stride_tricks.sliding_window_view(padded, (side, side))
    return reducer(win, axis=(-2, -1))


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square-element erosion; pixels outside the image count as background."""
    return _window_reduce(mask.astype(bool), radius, np.all, False)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    return _window_reduce(mask.astype(bool), radius, np.any, False)


def morpho_clean(mask, radius: int = 1):
    """Morphological opening with a ``(2r+1) x (2r+1)`` square.

    Accepts a 2-d array or a tensor whose last two axes are spatial; returns
    the same kind of object with values in {0, 1}.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    is_tensor = isinstance(mask, Tensor)
    arr = _as_bool(mask, "mask")
    flat = arr.reshape((-1,) + arr.shape[-2:])
    out = np.stack([dilate(erode(m, radius), radius) for m in flat]).reshape(arr.shape)
    out = out.astype(np.float64)
    return Tensor(out) if is_tensor else out
