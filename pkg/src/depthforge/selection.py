"""Automatic selection of images for annotation.

Images are chosen greedily in scheduled steps.  The first step is pure
farthest-point sampling in depth-feature space; later steps add a weighted
uncertainty bonus, where uncertainty is the log-disparity disagreement
between a depth student trained on the current selection and the
self-supervised depth teacher.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from depthforge.errors import DepthForgeError, DomainError, FormatError, SelectionError, ShapeError
from depthforge.io import dump_json, load_json, read_disparity, read_tensor
from depthforge.manifest import DatasetManifest
from depthforge.provenance import make_rng
from depthforge.types import DisparityMap, FeatureEmbedding, SegMap, require_same_shape

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (25, 50, 100, 200, 372, 744)
DEFAULT_LAMBDA_E = 1000.0
POOL_GRID = (4, 8)  # rows x cols of the pooled feature map


@dataclass(frozen=True)
class SelectionConfig:
    schedule: tuple[int, ...] = DEFAULT_SCHEDULE
    lambda_e: float = DEFAULT_LAMBDA_E
    seed: int = 0

    def __post_init__(self) -> None:
        sched = tuple(int(n) for n in self.schedule)
        if not sched:
            raise DomainError("schedule must not be empty")
        if sched[0] < 1 or any(b <= a for a, b in zip(sched, sched[1:])):
            raise DomainError(f"schedule must be positive and strictly increasing, got {sched}")
        if not self.lambda_e >= 0:
            raise DomainError(f"lambda_E must be >= 0, got {self.lambda_e}")
        object.__setattr__(self, "schedule", sched)

    @property
    def budget(self) -> int:
        return self.schedule[-1]


@dataclass(frozen=True)
class SelectionState:
    """Partition of the dataset into selected (ordered) and remaining ids.

    ``step`` counts completed schedule steps.
    """

    ids: tuple[str, ...]
    selected: tuple[str, ...] = ()
    step: int = 0
    uncertainty: Mapping[str, float] | None = field(default=None, compare=False)

    @classmethod
    def initial(cls, ids) -> "SelectionState":
        ids = tuple(sorted(ids))
        if len(set(ids)) != len(ids):
            raise SelectionError("image ids must be unique")
        return cls(ids)

    @property
    def remaining(self) -> tuple[str, ...]:
        chosen = set(self.selected)
        return tuple(i for i in self.ids if i not in chosen)


# -- features ------------------------------------------------------------------

def _cell_edges(n: int, k: int) -> list[int]:
    return [(i * n) // k for i in range(k + 1)]


def pool_features(raw, grid: tuple[int, int] = POOL_GRID) -> np.ndarray:
    """Average-pool a (channels, H, W) map onto a ``grid`` of near-equal cells."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"feature map must be (channels, H, W), got {arr.shape}")
    rows, cols = grid
    _, h, w = arr.shape
    if h < rows or w < cols:
        raise ShapeError(f"feature map {h}x{w} is smaller than the {rows}x{cols} pooling grid")
    re, ce = _cell_edges(h, rows), _cell_edges(w, cols)
    out = np.empty((arr.shape[0], rows, cols))
    for r in range(rows):
        for c in range(cols):
            out[:, r, c] = arr[:, re[r]:re[r + 1], ce[c]:ce[c + 1]].mean(axis=(1, 2))
    return out


@dataclass(frozen=True)
class FeatureStats:
    """Per-channel mean and standard deviation over a dataset."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, pooled: np.ndarray) -> "FeatureStats":
        """``pooled`` has shape (N, channels, rows, cols)."""
        if pooled.shape[0] == 0:
            raise SelectionError("cannot compute feature statistics of an empty dataset")
        return cls(pooled.mean(axis=(0, 2, 3)), pooled.std(axis=(0, 2, 3)))

    def apply(self, pooled: np.ndarray) -> np.ndarray:
        # zero-variance channels carry no information; map them to 0
        scale = np.maximum(np.abs(self.mean), 1.0) * 1e-12
        degenerate = self.std <= scale
        std = np.where(degenerate, 1.0, self.std)
        out = (pooled - self.mean[:, None, None]) / std[:, None, None]
        out[:, degenerate] = 0.0
        return out


def preprocess_features(raws: Sequence, grid: tuple[int, int] = POOL_GRID) -> np.ndarray:
    """Pool every map, z-score each channel over the dataset, flatten.

    Returns an (N, channels * rows * cols) array in input order.
    """
    if len(raws) == 0:
        raise SelectionError("cannot preprocess an empty dataset")
    pooled = np.stack([pool_features(r, grid) for r in raws])
    normed = FeatureStats.fit(pooled).apply(pooled)
    return normed.reshape(len(raws), -1)


def load_embeddings(manifest: DatasetManifest, ids: Sequence[str]) -> list[FeatureEmbedding]:
    raws = [read_tensor(manifest.path(i, "feature")) for i in ids]
    shapes = {r.shape for r in raws}
    if len(shapes) > 1:
        raise ShapeError(f"feature maps disagree in shape: {sorted(shapes)}")
    vectors = preprocess_features(raws)
    return [FeatureEmbedding(i, v) for i, v in zip(ids, vectors)]


# -- scores ----------------------------------------------------------------------

def uncertainty_score(student_disp: DisparityMap, teacher_disp: DisparityMap) -> float:
    """Mean per-pixel |ln(1 + teacher) - ln(1 + student)|."""
    require_same_shape(student_disp, teacher_disp)
    return float(np.mean(np.abs(np.log1p(teacher_disp.data) - np.log1p(student_disp.data))))


def _as_vector(e) -> np.ndarray:
    return e.vector if isinstance(e, FeatureEmbedding) else np.asarray(e, dtype=np.float64).reshape(-1)


def diversity_distance(candidate, selected: Sequence) -> float:
    """L2 distance from ``candidate`` to its nearest neighbour in ``selected``."""
    if len(selected) == 0:
        raise SelectionError("diversity distance needs at least one selected embedding")
    x = _as_vector(candidate)
    pts = np.stack([_as_vector(s) for s in selected])
    if pts.shape[1] != x.shape[0]:
        raise ShapeError("embedding lengths differ")
    return float(np.sqrt(((pts - x) ** 2).sum(axis=1)).min())


# -- greedy selection --------------------------------------------------------------

def _matrix(state: SelectionState, embeddings) -> np.ndarray:
    if isinstance(embeddings, Mapping):
        lookup = {k: _as_vector(v) for k, v in embeddings.items()}
    else:
        lookup = {e.image_id: e.vector for e in embeddings}
    missing = [i for i in state.ids if i not in lookup]
    if missing:
        raise SelectionError(f"no embedding for {missing[:3]}")
    mat = np.stack([lookup[i] for i in state.ids])
    if not np.all(np.isfinite(mat)):
        raise DomainError("embeddings must be finite")
    return mat


def _distances(mat: np.ndarray, row: int) -> np.ndarray:
    return np.sqrt(((mat - mat[row]) ** 2).sum(axis=1))


def select_step(state: SelectionState, embeddings, cfg: SelectionConfig,
                uncertainties: Mapping[str, float] | None = None) -> SelectionState:
    """Run one scheduled step of greedy selection and return the new state.

    Step 1 maximises the distance to the nearest selected image; later steps
    maximise that distance plus ``lambda_e`` times the image's uncertainty,
    which must then be supplied for every remaining id.  The very first pick
    is uniform at random from ``cfg.seed``.  Ties go to the lowest id.
    """
    if state.step >= len(cfg.schedule):
        raise SelectionError(f"schedule already finished after {state.step} steps")
    target = cfg.schedule[state.step]
    n = len(state.ids)
    if target > n:
        raise SelectionError(f"schedule asks for {target} images but the dataset has {n}")

    mat = _matrix(state, embeddings)
    index = {i: k for k, i in enumerate(state.ids)}
    chosen = np.zeros(n, dtype=bool)
    order = [index[i] for i in state.selected]
    chosen[order] = True

    bonus = np.zeros(n)
    if state.step >= 1:
        if uncertainties is None:
            raise SelectionError(f"step {state.step + 1} needs uncertainty scores")
        missing = [i for k, i in enumerate(state.ids) if not chosen[k] and i not in uncertainties]
        if missing:
            raise SelectionError(f"no uncertainty score for {missing[:3]}")
        for k, i in enumerate(state.ids):
            if not chosen[k]:
                bonus[k] = cfg.lambda_e * float(uncertainties[i])

    if not order:
        first = int(make_rng(cfg.seed).integers(n))
        order.append(first)
        chosen[first] = True

    mind = np.full(n, np.inf)
    for k in order:
        mind = np.minimum(mind, _distances(mat, k))

    while len(order) < target:
        score = np.where(chosen, -np.inf, mind + bonus)
        pick = int(np.argmax(score))
        order.append(pick)
        chosen[pick] = True
        mind = np.minimum(mind, _distances(mat, pick))

    return SelectionState(
        state.ids,
        tuple(state.ids[k] for k in order),
        state.step + 1,
        dict(uncertainties) if uncertainties is not None else None,
    )


# -- uncertainty providers -------------------------------------------------------

UncertaintyProvider = Callable[[int, SelectionState], Mapping[str, float]]


class ScoreFileProvider:
    """Reads ``step{t}.json`` (or a step-independent ``scores.json``) mapping id -> score."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        self.used: list[Path] = []

    def __call__(self, step: int, state: SelectionState) -> dict[str, float]:
        for name in (f"step{step}.json", "scores.json"):
            path = self.directory / name
            if path.is_file():
                doc = load_json(path)
                scores = doc.get("scores", doc) if isinstance(doc, dict) else None
                if not isinstance(scores, dict):
                    raise FormatError(f"{path}: expected an object of id -> score")
                self.used.append(path)
                return {str(k): float(v) for k, v in scores.items()}
        raise FormatError(f"{self.directory}: no step{step}.json or scores.json")


class DisparityPairProvider:
    """Scores each remaining image from a student disparity map.

    Student maps are looked up as ``<dir>/step{t}/<id>.png`` and then
    ``<dir>/<id>.png``; the teacher map is the manifest's disparity.
    """

    def __init__(self, directory: str | os.PathLike, manifest: DatasetManifest):
        self.directory = Path(directory)
        self.manifest = manifest
        self.used: list[Path] = []

    def _student_path(self, step: int, image_id: str) -> Path:
        stepped = self.directory / f"step{step}" / f"{image_id}.png"
        return stepped if stepped.is_file() else self.directory / f"{image_id}.png"

    def __call__(self, step: int, state: SelectionState) -> dict[str, float]:
        scores = {}
        for image_id in state.remaining:
            path = self._student_path(step, image_id)
            student = read_disparity(path)
            teacher = read_disparity(self.manifest.path(image_id, "disparity"))
            scores[image_id] = uncertainty_score(student, teacher)
            self.used.append(path)
        return scores


def provider_for(directory: str | os.PathLike, manifest: DatasetManifest) -> UncertaintyProvider:
    directory = Path(directory)
    if any(directory.glob("step*.json")) or (directory / "scores.json").is_file():
        return ScoreFileProvider(directory)
    return DisparityPairProvider(directory, manifest)


def run_selection(manifest: DatasetManifest, cfg: SelectionConfig,
                  uncertainty_provider: UncertaintyProvider | None = None,
                  out_dir: str | os.PathLike | None = None,
                  ids: Sequence[str] | None = None,
                  meta: Mapping | None = None) -> tuple[SelectionState, list[dict]]:
    """Run every scheduled step over ``ids`` (default: the whole manifest).

    After each step the selection so far is written to
    ``out_dir/selected_step{t}.json``.  If the provider fails, the files
    already written stay in place and ``SelectionError`` is raised.
    """
    ids = sorted(ids) if ids is not None else manifest.ids()
    if cfg.budget > len(ids):
        raise SelectionError(f"budget {cfg.budget} exceeds dataset size {len(ids)}")
    embeddings = load_embeddings(manifest, ids)
    state = SelectionState.initial(ids)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)

    docs = []
    for t in range(1, len(cfg.schedule) + 1):
        scores = None
        if t >= 2:
            if uncertainty_provider is None:
                raise SelectionError(f"step {t} needs uncertainty scores but no provider was given")
            try:
                scores = uncertainty_provider(t, state)
            except DepthForgeError as exc:
                raise SelectionError(f"uncertainty provider failed at step {t}: {exc}") from exc
            except OSError as exc:
                raise SelectionError(f"uncertainty provider failed at step {t}: {exc}") from exc
        state = select_step(state, embeddings, cfg, scores)
        log.info("step %d: %d selected", t, len(state.selected))
        doc = {
            **(meta or {}),
            "step": t,
            "schedule": list(cfg.schedule),
            "lambda_e": cfg.lambda_e,
            "seed": cfg.seed,
            "count": len(state.selected),
            "selected": list(state.selected),
        }
        docs.append(doc)
        if out_dir is not None:
            dump_json(doc, Path(out_dir) / f"selected_step{t}.json")
    return state, docs


# -- statistics ---------------------------------------------------------------------

def class_frequency_report(selected: Sequence[SegMap], full: Sequence[SegMap],
                           num_classes: int | None = None) -> list[dict]:
    """Per class: selected pixel count / full-dataset pixel count.

    Classes that never occur in the full set get ``ratio: None``.
    """
    maps = list(selected) + list(full)
    if num_classes is None:
        if not maps:
            raise DomainError("num_classes is required when no maps are given")
        num_classes = maps[0].num_classes
    if any(m.num_classes != num_classes for m in maps):
        raise ShapeError("label maps disagree on num_classes")

    def counts(group: Sequence[SegMap]) -> np.ndarray:
        total = np.zeros(num_classes, dtype=np.int64)
        for m in group:
            valid = m.data[m.data != m.ignore_index]
            total += np.bincount(valid, minlength=num_classes)[:num_classes]
        return total

    sel, tot = counts(selected), counts(full)
    return [
        {
            "class": c,
            "selected_pixels": int(sel[c]),
            "total_pixels": int(tot[c]),
            "ratio": float(sel[c] / tot[c]) if tot[c] else None,
        }
        for c in range(num_classes)
    ]
