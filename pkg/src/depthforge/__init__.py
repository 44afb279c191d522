"""Depth-guided data-pipeline tooling for semantic segmentation.

DepthMix compositing, pseudo-label quality weighting, automatic data
selection for annotation, and geometry-matched cross-domain pair planning,
all as deterministic, file-driven operations.
"""

__version__ = "0.1.0"

from depthforge.errors import (  # noqa: E402
    DepthForgeError,
    DomainError,
    FormatError,
    ManifestError,
    PlanningError,
    SelectionError,
    ShapeError,
)
from depthforge.types import (  # noqa: E402
    DisparityMap,
    FeatureEmbedding,
    ImageRaster,
    ProbMap,
    SegMap,
)

__all__ = [
    "__version__",
    "DepthForgeError",
    "DomainError",
    "FormatError",
    "ManifestError",
    "PlanningError",
    "SelectionError",
    "ShapeError",
    "DisparityMap",
    "FeatureEmbedding",
    "ImageRaster",
    "ProbMap",
    "SegMap",
]
