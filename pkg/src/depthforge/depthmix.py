"""Geometry-aware mixing of two samples.

A pixel is copied from sample ``i`` when it is closer to the camera than the
pixel of sample ``j`` at the same location, so pasted content only ever
occludes things behind it.  Closeness is compared on disparity (inverse
depth), with a small slack so co-planar structures such as road and sky do
not flicker between the sources.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, TypeVar

import numpy as np

from depthforge.errors import DomainError, ShapeError
from depthforge.types import DisparityMap, ImageRaster, ProbMap, SegMap, _frozen, require_same_shape

DEFAULT_EPSILON = 0.03

R = TypeVar("R", ImageRaster, DisparityMap, SegMap, ProbMap, np.ndarray)


@dataclass(frozen=True)
class MixConfig:
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if not (self.epsilon >= 0 and np.isfinite(self.epsilon)):
            raise DomainError(f"epsilon must be finite and >= 0, got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class MixMask:
    """Binary mask; 1 selects sample ``i``."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.all((arr == 0) | (arr == 1)):
                raise DomainError("mask values must be 0 or 1")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def fraction(self) -> float:
        return float(self.data.mean()) if self.data.size else 0.0

    def complement(self) -> "MixMask":
        return MixMask(1 - self.data)


def depthmix_mask(disp_i: DisparityMap, disp_j: DisparityMap,
                  cfg: MixConfig | float = DEFAULT_EPSILON) -> MixMask:
    """1 where ``disp_i > disp_j - epsilon``, else 0."""
    eps = cfg.epsilon if isinstance(cfg, MixConfig) else MixConfig(cfg).epsilon
    require_same_shape(disp_i, disp_j)
    return MixMask((disp_i.data > disp_j.data - eps).view(np.uint8))


def mix_rasters(mask: MixMask, a_i: R, a_j: R) -> R:
    """Per-pixel selection ``mask * a_i + (1 - mask) * a_j``.

    Works on any raster kind (channel-wise for RGB).  Label maps are selected,
    never blended, so no new class index can appear.
    """
    if type(a_i) is not type(a_j):
        raise ShapeError(f"cannot mix {type(a_i).__name__} with {type(a_j).__name__}")
    raw_i = a_i.data if hasattr(a_i, "data") else np.asarray(a_i)
    raw_j = a_j.data if hasattr(a_j, "data") else np.asarray(a_j)
    if raw_i.shape != raw_j.shape:
        raise ShapeError(f"raster shapes differ: {raw_i.shape} vs {raw_j.shape}")
    if raw_i.shape[:2] != mask.shape:
        raise ShapeError(f"mask {mask.shape} does not match raster {raw_i.shape[:2]}")
    sel = mask.data.view(bool)
    if raw_i.ndim == 3:
        sel = sel[:, :, None]
    out = np.where(sel, raw_i, raw_j)

    if isinstance(a_i, SegMap):
        if (a_i.num_classes, a_i.ignore_index) != (a_j.num_classes, a_j.ignore_index):
            raise ShapeError("label maps disagree on num_classes/ignore_index")
        return SegMap(out, a_i.num_classes, a_i.ignore_index)
    if isinstance(a_i, (ImageRaster, DisparityMap, ProbMap)):
        return type(a_i)(out)
    return out


@dataclass(frozen=True)
class MixSample:
    """One side of a mix.  ``prob`` is required for pseudo-labeled samples;
    labeled samples are treated as fully confident."""

    image: ImageRaster
    disparity: DisparityMap
    label: SegMap
    prob: Optional[ProbMap] = None
    labeled: bool = True
    image_id: str = ""

    def confidence(self) -> ProbMap:
        if self.labeled:
            return ProbMap.ones(self.label.height, self.label.width)
        if self.prob is None:
            raise DomainError(f"pseudo-labeled sample {self.image_id!r} needs a confidence map")
        return self.prob


@dataclass(frozen=True)
class MixedSample:
    image: ImageRaster
    label: SegMap
    prob: ProbMap
    disparity: DisparityMap
    mask: MixMask


def mix_pair(sample_i: MixSample, sample_j: MixSample,
             cfg: MixConfig | float = DEFAULT_EPSILON) -> MixedSample:
    prob_i, prob_j = sample_i.confidence(), sample_j.confidence()
    require_same_shape(
        sample_i.image, sample_i.disparity, sample_i.label, prob_i,
        sample_j.image, sample_j.disparity, sample_j.label, prob_j,
    )
    mask = depthmix_mask(sample_i.disparity, sample_j.disparity, cfg)
    return MixedSample(
        image=mix_rasters(mask, sample_i.image, sample_j.image),
        label=mix_rasters(mask, sample_i.label, sample_j.label),
        prob=mix_rasters(mask, prob_i, prob_j),
        disparity=mix_rasters(mask, sample_i.disparity, sample_j.disparity),
        mask=mask,
    )
