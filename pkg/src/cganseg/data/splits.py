"""Seeded train/validation/test partitioning and stratified k-fold assignment."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Hashable, Optional, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15
    seed: int = 0
    stratify_by: Optional[str] = None  # SamplePair attribute name, e.g. "shape_label"

    def __post_init__(self):
        fr = self.fractions
        if any(not 0.0 <= f <= 1.0 for f in fr):
            raise SplitError(f"split fractions must lie in [0, 1], got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must sum to 1, got {sum(fr)!r}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.val, self.test)


def _apportion(size: int, fractions: Sequence[float], deficit: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of ``size`` items; leftover seats favour the
    buckets furthest behind their running target (``deficit``), then lower index."""
    ideal = size * np.asarray(fractions)
    alloc = np.floor(ideal + 1e-12).astype(np.int64)
    left = size - int(alloc.sum())
    if left > 0:
        remainder = ideal - alloc
        order = sorted(range(len(fractions)),
                       key=lambda b: (-round(remainder[b], 12), -round(deficit[b], 12), b))
        for b in order[:left]:
            alloc[b] += 1
    return alloc


def split(samples: Sequence[T], spec: SplitSpec,
          key: Optional[Callable[[T], Hashable]] = None) -> tuple[list[T], list[T], list[T]]:
    """Partition ``samples`` into (train, val, test).

    With stratification every stratum is apportioned separately, so each bucket
    receives its stratum's share to within one sample.
    """
    if key is None and spec.stratify_by is not None:
        attr = spec.stratify_by
        key = lambda s: getattr(s, attr)  # noqa: E731
    rng = np.random.default_rng(spec.seed)
    strata: dict[Hashable, list[int]] = defaultdict(list)
    for i, s in enumerate(samples):
        strata[key(s) if key else None].append(i)
    if key is not None and any(k is None for k in strata):
        raise SplitError(f"some samples carry no {spec.stratify_by or 'stratum'} label")

    buckets: tuple[list[int], list[int], list[int]] = ([], [], [])
    assigned = np.zeros(3)
    seen = 0
    for stratum in sorted(strata, key=_sort_key):
        idx = np.array(strata[stratum])
        idx = idx[rng.permutation(len(idx))]
        seen += len(idx)
        deficit = seen * np.asarray(spec.fractions) - assigned
        alloc = _apportion(len(idx), spec.fractions, deficit)
        start = 0
        for b, count in enumerate(alloc):
            buckets[b].extend(idx[start:start + count].tolist())
            start += count
        assigned += alloc
    return tuple([samples[i] for i in sorted(b)] for b in buckets)  # type: ignore[return-value]


def _sort_key(stratum) -> tuple:
    return (stratum is None, str(type(stratum)), stratum if stratum is not None else 0)


def stratified_folds(labels: Sequence[Hashable], folds: int, seed: int) -> list[np.ndarray]:
    """Indices of each held-out fold; classes are dealt round-robin so every fold
    holds ``count // folds`` or one more of each class."""
    if folds < 2:
        raise SplitError(f"need at least 2 folds, got {folds}")
    n = len(labels)
    if n < folds:
        raise SplitError(f"{n} samples cannot fill {folds} folds")
    by_class: dict[Hashable, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        by_class[lab].append(i)
    if len(by_class) > 1:
        short = {k: len(v) for k, v in by_class.items() if len(v) < folds}
        if short:
            raise SplitError(
                f"stratification impossible: classes {sorted(map(str, short))} have fewer "
                f"than {folds} samples, so some fold would lack them")
    rng = np.random.default_rng(seed)
    members: list[list[int]] = [[] for _ in range(folds)]
    cursor = 0
    for lab in sorted(by_class, key=_sort_key):
        idx = np.array(by_class[lab])
        idx = idx[rng.permutation(len(idx))]
        for i in idx:
            members[cursor % folds].append(int(i))
            cursor += 1
    return [np.array(sorted(m), dtype=np.int64) for m in members]
