"""Synthetic stand-in data: mass-like filled shapes on textured background.

Shapes are star-shaped regions ``r <= radius(theta)`` around a jittered centre,
sized like a tight ROI crop (roughly a third of the frame) and always inside it:

* round      -- constant radius
* oval       -- rotated ellipse, axis ratio 0.50-0.65
* lobular    -- 3-5 smooth cosine lobes
* irregular  -- jagged star polygon with 10-16 alternating spikes
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from ..shapes import ShapeLabel
from .manifest import SamplePair
from .preprocess import binarize_mask, preprocess
from .rasters import Raster


@dataclass(frozen=True)
class SynthRecord:
    id: str
    image: Raster
    mask: Raster
    shape_label: ShapeLabel


def _radius_fn(label: ShapeLabel, res: int, rng: np.random.Generator):
    phase = rng.uniform(0.0, 2 * np.pi)
    if label is ShapeLabel.ROUND:
        r0 = rng.uniform(0.30, 0.40) * res
        return lambda t: np.full_like(t, r0)
    if label is ShapeLabel.OVAL:
        a = rng.uniform(0.38, 0.45) * res
        b = a * rng.uniform(0.50, 0.65)
        return lambda t: a * b / np.sqrt((b * np.cos(t - phase)) ** 2 + (a * np.sin(t - phase)) ** 2)
    if label is ShapeLabel.LOBULAR:
        r0 = rng.uniform(0.30, 0.35) * res
        lobes = int(rng.integers(3, 6))
        amp = rng.uniform(0.15, 0.24)
        return lambda t: r0 * (1.0 + amp * np.cos(lobes * (t - phase)))
    r0 = rng.uniform(0.30, 0.34) * res
    n = int(rng.integers(10, 17))
    angles = np.sort((np.arange(n) + rng.uniform(-0.3, 0.3, n)) * (2 * np.pi / n))
    swing = rng.uniform(0.28, 0.40, n) * np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    radii = r0 * (1.0 + swing)
    ang = np.concatenate([angles - 2 * np.pi, angles, angles + 2 * np.pi])
    rad = np.tile(radii, 3)
    return lambda t: np.interp(np.mod(t - phase, 2 * np.pi), ang, rad)


def render_mask(label: ShapeLabel, res: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``[res, res]`` mask of one shape, sampled at pixel centres."""
    radius = _radius_fn(label, res, rng)
    cx, cy = res / 2 + rng.uniform(-0.03, 0.03, size=2) * res
    yy, xx = np.mgrid[0:res, 0:res] + 0.5
    dx, dy = xx - cx, yy - cy
    return np.hypot(dx, dy) <= radius(np.arctan2(dy, dx))


def render_image(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    res = mask.shape[0]
    tex = gaussian_filter(rng.normal(size=mask.shape), sigma=max(res / 32, 1.0), mode="reflect")
    tex /= tex.std() + 1e-12
    tissue = 0.30 + 0.08 * tex
    mass = gaussian_filter(mask.astype(np.float64), sigma=max(res / 64, 0.5), mode="reflect")
    img = tissue + rng.uniform(0.30, 0.40) * mass + 0.03 * rng.normal(size=mask.shape)
    return np.clip(img, 0.0, 1.0)


def synth_records(count: int, seed: int, resolution: int = 64) -> list[SynthRecord]:
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    if resolution < 8:
        raise ValueError(f"resolution must be at least 8, got {resolution}")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        label = ShapeLabel(i % len(ShapeLabel))
        mask = render_mask(label, resolution, rng)
        image = render_image(mask, rng)
        records.append(SynthRecord(
            id=f"synth_{i:04d}",
            image=Raster.from_unit(image),
            mask=Raster((mask * 255).astype(np.uint8), 255),
            shape_label=label,
        ))
    return records


def synth_generate(count: int, seed: int, resolution: int = 64) -> list[SamplePair]:
    """Labelled sample pairs, balanced over the four shapes (label = index mod 4)."""
    return [
        SamplePair(r.id, preprocess(r.image, resolution), binarize_mask(r.mask, resolution),
                   shape_label=r.shape_label)
        for r in synth_records(count, seed, resolution)
    ]
