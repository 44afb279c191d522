"""File-driven operations behind the CLI: load samples, mix, write, score."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from depthforge.depthmix import MixConfig, MixSample, MixedSample, mix_pair
from depthforge.errors import DepthForgeError, FormatError, ShapeError
from depthforge.geo_match import MixPlan
from depthforge.io import (
    dump_json, read_disparity, read_image, read_segmap, read_tensor,
    write_disparity, write_image, write_segmap, write_tensor,
)
from depthforge.manifest import DatasetManifest, ManifestEntry
from depthforge.pseudo_label import (
    ClassLogitMap, LossConfig, aggregate_losses, argmax_label, cross_entropy, quality_weight,
)
from depthforge.types import ProbMap, SegMap

# loss-plan role -> (ce input name, quality weight input name)
ROLE_TERMS = {
    "clean_src": ("ce_src", None),
    "clean_trg": ("ce_trg", None),
    "CDM": ("ce_cdm", "q_cdm"),
    "TDM": ("ce_tdm", "q_tdm"),
}


@dataclass(frozen=True)
class LoadedSample:
    sample: MixSample
    pred: Optional[np.ndarray]  # (C, H, W) class probabilities


def load_entry(entry: ManifestEntry, root: Path, num_classes: int, ignore_index: int) -> LoadedSample:
    """Read one entry; unlabeled entries get a pseudo-label from their prediction."""
    image = read_image(root / entry.image)
    disparity = read_disparity(root / entry.disparity)
    pred = read_tensor(root / entry.pred).astype(np.float64) if entry.pred else None
    if pred is not None and pred.shape != (num_classes,) + disparity.shape:
        raise ShapeError(f"entry {entry.image_id!r}: prediction shape {pred.shape} does not match")

    prob = None
    if entry.labeled:
        label = read_segmap(root / entry.label, num_classes, ignore_index)
    else:
        if pred is None:
            raise FormatError(f"entry {entry.image_id!r}: unlabeled entries need a 'pred' tensor")
        label, prob = argmax_label(ClassLogitMap(pred, normalized=True), ignore_index)
        if entry.prob:
            prob = ProbMap(np.clip(read_tensor(root / entry.prob), 0.0, 1.0))
    return LoadedSample(MixSample(image, disparity, label, prob, entry.labeled, entry.image_id), pred)


def load_sample(manifest: DatasetManifest, image_id: str) -> LoadedSample:
    return load_entry(manifest[image_id], manifest.root, manifest.num_classes, manifest.ignore_index)


def write_mixed(mixed: MixedSample, out_dir: str | os.PathLike, pred: Optional[np.ndarray] = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image(mixed.image, out / "image.png")
    write_segmap(mixed.label, out / "label.png")
    write_tensor(mixed.prob.data, out / "prob.dft1")
    write_disparity(mixed.disparity, out / "disparity.png")
    write_segmap(SegMap(mixed.mask.data, 2, 255), out / "mask.png")
    if pred is not None:
        write_tensor(pred, out / "pred.dft1")


def mix_loaded(a: LoadedSample, b: LoadedSample, cfg: MixConfig, tau: float):
    mixed = mix_pair(a.sample, b.sample, cfg)
    pred = None
    if a.pred is not None and b.pred is not None:
        sel = mixed.mask.data.view(bool)[None]
        pred = np.where(sel, a.pred, b.pred)
    q = quality_weight(mixed.prob, tau)
    stats = {
        "mask_fraction": mixed.mask.fraction,
        "mask_pixels": int(mixed.mask.data.sum()),
        "pixels": int(mixed.mask.data.size),
        "quality_weight": q.value,
        "tau": tau,
    }
    return mixed, pred, stats


def execute_plans(plans: Sequence[MixPlan], manifest: DatasetManifest, out_dir: str | os.PathLike,
                  tau: float, threads: int = 1) -> tuple[list[dict], list[dict]]:
    """Mix every TDM/CDM plan into ``out_dir/mix_<n>/`` and build a loss plan.

    Returns the annotated plans and the loss-plan items (one per plan whose
    samples carry predictions).  Output order follows plan order whatever
    the thread count.
    """
    out = Path(out_dir)

    def run(n_plan):
        n, plan = n_plan
        doc = plan.to_json()
        if plan.kind in ("TDM", "CDM"):
            a, b = load_sample(manifest, plan.sample_i), load_sample(manifest, plan.sample_j)
            mixed, pred, stats = mix_loaded(a, b, MixConfig(plan.epsilon), tau)
            sub = out / f"mix_{n:04d}"
            write_mixed(mixed, sub, pred)
            doc.update(stats)
            doc["quality_weight"] = stats["quality_weight"]
            doc["output"] = sub.name
            item = None
            if pred is not None:
                item = {"role": plan.kind, "batch": plan.batch, "pred": f"{sub.name}/pred.dft1",
                        "label": f"{sub.name}/label.png", "quality_weight": stats["quality_weight"]}
            return doc, item
        entry = manifest[plan.sample_i]
        if entry.pred is None or entry.label is None or not entry.labeled:
            return doc, None
        return doc, {"role": plan.kind, "batch": plan.batch,
                     "pred": os.path.relpath(manifest.root / entry.pred, out),
                     "label": os.path.relpath(manifest.root / entry.label, out)}

    jobs = list(enumerate(plans))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    docs = [d for d, _ in results]
    items = [i for _, i in results if i is not None]
    return docs, items


def evaluate_loss_plan(doc: dict, base: str | os.PathLike, cfg: LossConfig = LossConfig()) -> dict:
    """Compute cross-entropies for a loss plan and aggregate them per batch.

    ``doc`` holds ``num_classes``, ``ignore_index``, ``items`` (role, batch,
    pred, label, optional quality_weight) and optionally ``external_sde``.
    A document with ``terms`` instead is aggregated directly.
    """
    base = Path(base)
    if "terms" in doc:
        report = aggregate_losses(doc["terms"], cfg, doc.get("objective", "ssda"))
        return {"reports": [report.to_json()], "mean_total": report.total}

    try:
        num_classes = int(doc["num_classes"])
        ignore = int(doc.get("ignore_index", 255))
        items = doc["items"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"loss plan is missing a field: {exc}") from exc

    batches: dict[int, dict[str, float]] = {}
    for n, item in enumerate(items):
        role = item.get("role")
        if role not in ROLE_TERMS:
            raise FormatError(f"loss plan item #{n}: unknown role {role!r}")
        pred = ClassLogitMap(read_tensor(base / item["pred"]), normalized=True)
        label = read_segmap(base / item["label"], num_classes, ignore)
        ce_name, q_name = ROLE_TERMS[role]
        terms = batches.setdefault(int(item.get("batch", 0)), {})
        if ce_name in terms:
            raise FormatError(f"loss plan item #{n}: duplicate {role} in batch {item.get('batch', 0)}")
        terms[ce_name] = cross_entropy(pred, label)
        if q_name is not None:
            terms[q_name] = float(item.get("quality_weight", 1.0))

    reports = []
    for b in sorted(batches):
        terms = dict(batches[b])
        if doc.get("external_sde") is not None:
            terms["external_sde"] = float(doc["external_sde"])
        rep = aggregate_losses(terms, cfg, "ssda").to_json()
        rep["batch"] = b
        reports.append(rep)
    mean_total = float(np.mean([r["total"] for r in reports])) if reports else 0.0
    return {"reports": reports, "mean_total": mean_total}


def safe_write_json(doc: dict, path: str | os.PathLike) -> None:
    try:
        dump_json(doc, path)
    except OSError as exc:
        raise DepthForgeError(f"{path}: cannot write ({exc})") from exc
