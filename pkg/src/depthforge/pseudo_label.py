"""Mean-teacher arithmetic, pseudo-labels, quality weights and loss terms.

Nothing here runs a network: predictions arrive as per-pixel class score
tensors of shape (C, H, W) and every function is plain arithmetic on them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from depthforge.errors import DomainError, ShapeError
from depthforge.types import DEFAULT_IGNORE_INDEX, ProbMap, SegMap, _frozen

DEFAULT_ALPHA = 0.99
DEFAULT_TAU = 0.968
DEFAULT_LAMBDA_F = 1e-2


@dataclass(frozen=True, eq=False)
class ClassLogitMap:
    """Per-pixel class scores, shape (C, H, W).

    ``normalized`` declares the scores to already be softmax probabilities.
    """

    data: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"class scores must be (C, H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("class scores must be finite")
        if self.normalized:
            if arr.min() < 0 or np.max(np.abs(arr.sum(axis=0) - 1.0)) > 1e-5:
                raise DomainError("normalized scores must be non-negative and sum to 1 per pixel")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def num_classes(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.data.shape[1]), int(self.data.shape[2])

    def probabilities(self) -> np.ndarray:
        if self.normalized:
            return self.data
        z = self.data - self.data.max(axis=0, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=0, keepdims=True)


@dataclass(frozen=True)
class QualityWeight:
    value: float
    tau: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise DomainError(f"quality weight must lie in [0, 1], got {self.value}")


@dataclass(frozen=True)
class LossConfig:
    lambda_f: float = DEFAULT_LAMBDA_F
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if not 0.0 < self.tau < 1.0:
            raise DomainError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.lambda_f >= 0:
            raise DomainError(f"lambda_F must be >= 0, got {self.lambda_f}")


def ema_update(teacher, student, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """``alpha * teacher + (1 - alpha) * student``, elementwise."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    t = np.asarray(teacher, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    if t.shape != s.shape:
        raise ShapeError(f"teacher {t.shape} and student {s.shape} differ in shape")
    out = alpha * t + (1.0 - alpha) * s
    # rounding must not push the result outside the convex hull
    return np.clip(out, np.minimum(t, s), np.maximum(t, s))


def argmax_label(scores: ClassLogitMap, ignore_index: int = DEFAULT_IGNORE_INDEX) -> tuple[SegMap, ProbMap]:
    """Pseudo-label and its confidence.  Ties go to the lowest class index."""
    probs = scores.probabilities()
    label = np.argmax(scores.data, axis=0)
    conf = np.clip(probs.max(axis=0), 0.0, 1.0)
    return SegMap(label, scores.num_classes, ignore_index), ProbMap(conf)


def one_hot(seg: SegMap) -> ClassLogitMap:
    """Normalized one-hot scores; ignored pixels become uniform."""
    c = seg.num_classes
    out = np.zeros((c,) + seg.shape)
    valid = seg.data != seg.ignore_index
    rows, cols = np.nonzero(valid)
    out[seg.data[valid], rows, cols] = 1.0
    out[:, ~valid] = 1.0 / c
    return ClassLogitMap(out, normalized=True)


def quality_weight(prob_mixed: ProbMap, tau: float = DEFAULT_TAU) -> QualityWeight:
    """Fraction of pixels whose confidence strictly exceeds ``tau``."""
    data = prob_mixed.data
    return QualityWeight(float(np.count_nonzero(data > tau)) / data.size, tau)


def cross_entropy(pred: ClassLogitMap, target: SegMap,
                  ignore_index: int | None = None) -> float:
    """Mean of ``-ln p[target]`` over non-ignored pixels.

    If every pixel is ignored the loss is 0 and a ``RuntimeWarning`` is issued.
    """
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and label {target.shape} differ in size")
    if pred.num_classes != target.num_classes:
        raise ShapeError(f"prediction has {pred.num_classes} classes, label map {target.num_classes}")
    ignore = target.ignore_index if ignore_index is None else ignore_index
    probs = pred.probabilities()
    valid = target.data != ignore
    n = int(np.count_nonzero(valid))
    if n == 0:
        warnings.warn("cross_entropy: every pixel is ignored; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    rows, cols = np.nonzero(valid)
    p = probs[target.data[valid], rows, cols]
    with np.errstate(divide="ignore"):
        return float(-np.log(p).sum() / n)


def feature_distance(f, f_ref) -> float:
    """Euclidean distance between two feature vectors (any shape, flattened)."""
    a = np.asarray(f, dtype=np.float64).reshape(-1)
    b = np.asarray(f_ref, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"feature lengths differ: {a.size} vs {b.size}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


OBJECTIVES = ("dx", "mtl", "ssda", "pretrain")

# accepted input names per objective; q_* are quality weights, the rest losses
_INPUTS = {
    "dx": ("ce_labeled", "ce_mixed", "q_mixed"),
    "mtl": ("ce_labeled", "ce_mixed", "q_mixed", "external_sde"),
    "ssda": ("ce_trg", "ce_src", "ce_cdm", "q_cdm", "ce_tdm", "q_tdm", "external_sde"),
    "pretrain": ("feat_dist", "external_sde"),
}


@dataclass(frozen=True)
class LossReport:
    """Weighted contributions per named term; ``total`` is their plain sum."""

    objective: str
    terms: Mapping[str, float] = field(default_factory=dict)
    weights: Mapping[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return math.fsum(self.terms.values())

    def to_json(self) -> dict:
        return {
            "objective": self.objective,
            "terms": dict(sorted(self.terms.items())),
            "weights": dict(sorted(self.weights.items())),
            "total": self.total,
        }


def aggregate_losses(terms: Mapping[str, float], cfg: LossConfig = LossConfig(),
                     objective: str = "ssda") -> LossReport:
    """Combine scalar losses into one of the training objectives.

    * ``dx``: ce_labeled + q_mixed * ce_mixed
    * ``mtl``: external_sde + the ``dx`` objective
    * ``ssda``: ce_trg + ce_src + q_cdm * ce_cdm + q_tdm * ce_tdm + external_sde
    * ``pretrain``: external_sde + lambda_F * feat_dist

    Absent terms contribute nothing; a missing quality weight defaults to 1.
    ``external_sde`` is the depth loss computed elsewhere.
    """
    if objective not in OBJECTIVES:
        raise DomainError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    allowed = _INPUTS[objective]
    unknown = sorted(set(terms) - set(allowed))
    if unknown:
        raise DomainError(f"terms {unknown} are not part of the {objective!r} objective")
    vals: dict[str, float] = {}
    for name, value in terms.items():
        if value is None:
            continue
        value = float(value)
        if not math.isfinite(value):
            raise DomainError(f"{name} must be finite, got {value}")
        if value < 0:
            raise DomainError(f"{name} must be >= 0, got {value}")
        if name.startswith("q_") and value > 1:
            raise DomainError(f"{name} is a quality weight and must be <= 1, got {value}")
        vals[name] = value

    out: dict[str, float] = {}
    weights: dict[str, float] = {}

    def add(name: str, src: str, weight: float = 1.0) -> None:
        if src in vals:
            out[name] = weight * vals[src]
            weights[name] = weight

    if objective in ("dx", "mtl"):
        add("dx_labeled", "ce_labeled")
        add("dx_mixed", "ce_mixed", vals.get("q_mixed", 1.0))
    if objective == "ssda":
        add("ce_trg", "ce_trg")
        add("ce_src", "ce_src")
        add("cdm", "ce_cdm", vals.get("q_cdm", 1.0))
        add("tdm", "ce_tdm", vals.get("q_tdm", 1.0))
    if objective == "pretrain":
        add("feat_dist", "feat_dist", cfg.lambda_f)
    add("external_sde", "external_sde")
    return LossReport(objective, out, weights)
