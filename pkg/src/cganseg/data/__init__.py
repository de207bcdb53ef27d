"""Raster I/O, preprocessing, manifests, splits and synthetic data."""

from .manifest import ManifestError, SamplePair, load_dataset, write_manifest
from .preprocess import binarize_mask, gaussian_smooth, preprocess, resize_bilinear
from .rasters import Raster, RasterError, read_raster, write_raster
from .splits import SplitError, SplitSpec, split, stratified_folds
from .synth import synth_generate, synth_records

__all__ = [
    "ManifestError", "Raster", "RasterError", "SamplePair", "SplitError", "SplitSpec",
    "binarize_mask", "gaussian_smooth", "load_dataset", "preprocess", "read_raster",
    "resize_bilinear", "split", "stratified_folds", "synth_generate", "synth_records",
    "write_manifest", "write_raster",
]
