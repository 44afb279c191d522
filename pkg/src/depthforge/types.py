"""Immutable raster and vector containers.

Every raster stores its pixels as a read-only numpy array in row-major
(height, width[, channels]) order.  Construction validates the invariants;
after that the objects are never mutated, so they can be shared freely
between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from depthforge.errors import DomainError, ShapeError

DEFAULT_IGNORE_INDEX = 255


def _frozen(arr: np.ndarray) -> np.ndarray:
    # read-only contiguous arrays are already safe to share; anything else is copied
    if arr.flags.writeable or not arr.flags.c_contiguous:
        arr = np.array(arr, order="C", copy=True)
        arr.flags.writeable = False
    return arr


class _Raster:
    data: np.ndarray

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def _check_2d(self) -> None:
        if self.data.ndim < 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ShapeError(f"{type(self).__name__} needs height, width >= 1, got {self.data.shape}")


@dataclass(frozen=True, eq=False)
class ImageRaster(_Raster):
    """8-bit image, shape (H, W) for grayscale or (H, W, 3) for RGB."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise DomainError("image samples must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ShapeError(f"image must be (H, W) or (H, W, 3), got {arr.shape}")
        object.__setattr__(self, "data", _frozen(arr))
        self._check_2d()

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3


@dataclass(frozen=True, eq=False)
class DisparityMap(_Raster):
    """Inverse depth (relative scale).  Larger values are closer to the camera."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"disparity must be 2-D, got {arr.shape}")
        if not np.all(np.isfinite(arr)) or (arr.size and arr.min() < 0):
            raise DomainError("disparity values must be finite and >= 0")
        object.__setattr__(self, "data", _frozen(arr))
        self._check_2d()


@dataclass(frozen=True, eq=False)
class SegMap(_Raster):
    """Per-pixel class index; ``ignore_index`` marks unlabeled pixels."""

    data: np.ndarray
    num_classes: int
    ignore_index: int = DEFAULT_IGNORE_INDEX

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ShapeError(f"label map must be 2-D, got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.array_equal(arr, np.round(arr)):
                raise DomainError("label map must hold integer class indices")
        arr = arr.astype(np.int64)
        if self.num_classes < 1:
            raise DomainError("num_classes must be >= 1")
        if 0 <= self.ignore_index < self.num_classes:
            raise DomainError(f"ignore_index {self.ignore_index} collides with a class index")
        valid = arr != self.ignore_index
        if np.any(valid & ((arr < 0) | (arr >= self.num_classes))):
            bad = int(arr[valid & ((arr < 0) | (arr >= self.num_classes))][0])
            raise DomainError(f"class index {bad} outside [0, {self.num_classes})")
        object.__setattr__(self, "data", _frozen(arr))
        self._check_2d()

    def with_data(self, data: np.ndarray) -> "SegMap":
        return SegMap(data, self.num_classes, self.ignore_index)


@dataclass(frozen=True, eq=False)
class ProbMap(_Raster):
    """Confidence of the most likely class at each pixel, in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"probability map must be 2-D, got {arr.shape}")
        if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1):
            raise DomainError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(arr))
        self._check_2d()

    @classmethod
    def ones(cls, height: int, width: int) -> "ProbMap":
        return cls(np.ones((height, width)))


@dataclass(frozen=True, eq=False)
class FeatureEmbedding:
    image_id: str
    vector: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise DomainError(f"embedding {self.image_id!r} has non-finite values")
        object.__setattr__(self, "vector", _frozen(vec))


def require_same_shape(*rasters) -> tuple[int, int]:
    shapes = {r.shape if isinstance(r, _Raster) else tuple(np.shape(r)[:2]) for r in rasters}
    if len(shapes) != 1:
        raise ShapeError(f"raster dimensions differ: {sorted(shapes)}")
    return shapes.pop()
