"""Procedural street-like scenes for fixtures and end-to-end runs.

A scene is a background whose disparity ramps from a far horizon (top row)
to the near ground (bottom row), plus rectangles and ellipses of constant
disparity.  Nearer objects are painted over farther ones.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from depthforge.errors import DomainError
from depthforge.io import dump_json, write_disparity, write_image, write_segmap, write_tensor
from depthforge.provenance import make_rng
from depthforge.types import DEFAULT_IGNORE_INDEX, DisparityMap, ImageRaster, SegMap

SHAPES = ("rectangle", "ellipse")


@dataclass(frozen=True)
class SceneObject:
    shape: str
    class_index: int
    disparity: float
    # bounding box, [x0, x1) x [y0, y1)
    x0: int
    y0: int
    x1: int
    y1: int


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    num_classes: int
    objects: tuple[SceneObject, ...] = ()
    background_class: int = 0
    far_disparity: float = 0.05
    near_disparity: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise DomainError("scene needs width, height >= 1")
        if not 0 <= self.background_class < self.num_classes:
            raise DomainError("background class outside [0, num_classes)")
        if self.far_disparity < 0 or self.near_disparity < 0:
            raise DomainError("background disparities must be >= 0")
        for o in self.objects:
            if o.shape not in SHAPES:
                raise DomainError(f"unknown shape {o.shape!r}")
            if not o.disparity > 0:
                raise DomainError("object disparities must be positive")
            if not 0 <= o.class_index < self.num_classes:
                raise DomainError(f"object class {o.class_index} outside [0, {self.num_classes})")

    @classmethod
    def from_json(cls, doc: dict) -> "SceneSpec":
        doc = dict(doc)
        objs = tuple(SceneObject(**o) for o in doc.pop("objects", ()))
        return cls(objects=objs, **doc)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Scene:
    image: ImageRaster
    disparity: DisparityMap
    label: SegMap


def class_colors(num_classes: int) -> np.ndarray:
    return make_rng(1234).integers(30, 226, size=(max(num_classes, 1), 3))


def _footprint(o: SceneObject, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    if o.shape == "rectangle":
        return (xs >= o.x0) & (xs < o.x1) & (ys >= o.y0) & (ys < o.y1)
    cx, cy = (o.x0 + o.x1 - 1) / 2.0, (o.y0 + o.y1 - 1) / 2.0
    rx, ry = max((o.x1 - o.x0) / 2.0, 0.5), max((o.y1 - o.y0) / 2.0, 0.5)
    return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0


def generate_scene(spec: SceneSpec, ignore_index: int = DEFAULT_IGNORE_INDEX) -> Scene:
    h, w = spec.height, spec.width
    rng = make_rng(spec.seed)
    rows = np.linspace(0.0, 1.0, h) if h > 1 else np.ones(1)
    ramp = spec.far_disparity + (spec.near_disparity - spec.far_disparity) * rows
    disp = np.repeat(ramp[:, None], w, axis=1)
    label = np.full((h, w), spec.background_class, dtype=np.int64)

    colors = class_colors(spec.num_classes)
    noise = rng.integers(-6, 7, size=(h, w, 3))
    image = colors[spec.background_class][None, None, :] + noise

    jitter = rng.integers(-24, 25, size=(len(spec.objects), 3))
    # stable sort: among equal disparities the later object wins
    order = sorted(range(len(spec.objects)), key=lambda k: spec.objects[k].disparity)
    for k in order:
        o = spec.objects[k]
        fp = _footprint(o, h, w)
        disp[fp] = o.disparity
        label[fp] = o.class_index
        image[fp] = colors[o.class_index] + jitter[k]

    return Scene(
        ImageRaster(np.clip(image, 0, 255).astype(np.uint8)),
        DisparityMap(disp),
        SegMap(label, spec.num_classes, ignore_index),
    )


def random_scene_spec(rng: np.random.Generator, width: int, height: int, num_classes: int,
                      domain: str = "target", max_objects: int = 4, seed: int = 0) -> SceneSpec:
    """Random layout; the source domain gets a wider spread of camera geometry."""
    if domain == "target":
        far, near = rng.uniform(0.03, 0.06), rng.uniform(0.45, 0.55)
    else:
        far, near = rng.uniform(0.0, 0.3), rng.uniform(0.2, 1.5)
    objects = []
    for _ in range(int(rng.integers(0, max_objects + 1))):
        x0, y0 = int(rng.integers(0, width)), int(rng.integers(0, height))
        ow, oh = int(rng.integers(2, max(3, width // 2))), int(rng.integers(2, max(3, height // 2)))
        objects.append(SceneObject(
            shape=SHAPES[int(rng.integers(2))],
            class_index=int(rng.integers(1, num_classes)) if num_classes > 1 else 0,
            disparity=round(float(rng.uniform(0.1, 2.0)), 3),
            x0=x0, y0=y0, x1=min(width, x0 + ow), y1=min(height, y0 + oh),
        ))
    return SceneSpec(width, height, num_classes, tuple(objects), 0,
                     round(float(far), 3), round(float(near), 3), seed)


@dataclass(frozen=True)
class DatasetSpec:
    """Layout of a synthetic dataset written by :func:`generate_dataset`."""

    num_source: int = 10
    num_target: int = 20
    num_labeled_target: int = 6
    width: int = 64
    height: int = 32
    num_classes: int = 5
    max_objects: int = 4
    seed: int = 0
    ignore_index: int = DEFAULT_IGNORE_INDEX

    @classmethod
    def from_json(cls, doc: dict) -> "DatasetSpec":
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def synthetic_prediction(label: SegMap, rng: np.random.Generator, sharpness: float = 4.0) -> np.ndarray:
    """Softmax class scores (C, H, W) that mostly agree with ``label``."""
    c = label.num_classes
    logits = rng.normal(0.0, 1.0, size=(c,) + label.shape)
    valid = label.data != label.ignore_index
    rows, cols = np.nonzero(valid)
    logits[label.data[valid], rows, cols] += sharpness
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    return (e / e.sum(axis=0, keepdims=True)).astype(np.float32)


def generate_dataset(spec: DatasetSpec, out_dir: str | os.PathLike) -> dict:
    """Write images, disparities, labels, predictions, features and
    student disparities under ``out_dir`` and return the manifest document.

    Every entry keeps its ground-truth label path (unlabeled ones included,
    for statistics).  ``uncertainty/<id>.png`` holds a noisy student
    disparity for the selection step.
    """
    out = Path(out_dir)
    for sub in ("img", "disp", "label", "pred", "prob", "feature", "uncertainty"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    entries = []
    jobs = [("source", f"src_{k:04d}", k) for k in range(spec.num_source)]
    jobs += [("target", f"trg_{k:04d}", k) for k in range(spec.num_target)]
    for n, (domain, image_id, k) in enumerate(jobs):
        rng = make_rng(spec.seed, n)
        scene_spec = random_scene_spec(rng, spec.width, spec.height, spec.num_classes,
                                       domain, spec.max_objects, seed=int(rng.integers(2**31)))
        scene = generate_scene(scene_spec, spec.ignore_index)
        disp = np.rint(scene.disparity.data * 1000.0) / 1000.0

        write_image(scene.image, out / "img" / f"{image_id}.png")
        write_disparity(DisparityMap(disp), out / "disp" / f"{image_id}.png")
        write_segmap(scene.label, out / "label" / f"{image_id}.png")
        pred = synthetic_prediction(scene.label, rng)
        write_tensor(pred, out / "pred" / f"{image_id}.dft1")
        write_tensor(pred.max(axis=0), out / "prob" / f"{image_id}.dft1")
        onehot = (scene.label.data[None] == np.arange(spec.num_classes)[:, None, None])
        feature = np.concatenate([disp[None], onehot.astype(np.float64)])
        write_tensor(feature, out / "feature" / f"{image_id}.dft1")
        sigma = rng.uniform(0.0, 0.3)
        student = np.clip(disp * (1.0 + sigma * rng.normal(size=disp.shape)), 0.0, None)
        write_disparity(DisparityMap(student), out / "uncertainty" / f"{image_id}.png")

        labeled = domain == "source" or k < spec.num_labeled_target
        entries.append({
            "id": image_id,
            "domain": domain,
            "labeled": labeled,
            "image": f"img/{image_id}.png",
            "disparity": f"disp/{image_id}.png",
            "label": f"label/{image_id}.png",
            "pred": f"pred/{image_id}.dft1",
            "prob": f"prob/{image_id}.dft1",
            "feature": f"feature/{image_id}.dft1",
        })

    doc = {"num_classes": spec.num_classes, "ignore_index": spec.ignore_index,
           "seed": spec.seed, "entries": entries}
    dump_json(doc, out / "manifest.json")
    return doc
