"""Geometry matching between domains and the SSDA batch planner.

Cross-domain mixes look implausible when the two cameras see the world from
different heights or angles.  Source candidates are therefore scored by how
much their log-disparity differs from an anchor target image (ignoring the
sky band at the top and the ego-vehicle hood at the bottom), and the closest
one is paired with the target.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from depthforge.depthmix import DEFAULT_EPSILON
from depthforge.errors import DomainError, PlanningError, SelectionError
from depthforge.io import read_disparity
from depthforge.manifest import DatasetManifest
from depthforge.types import DisparityMap, require_same_shape

DEFAULT_TOP_MARGIN = 80
DEFAULT_BOTTOM_MARGIN = 100
DEFAULT_NUM_CANDIDATES = 5
REFERENCE_HEIGHT = 512

PLAN_KINDS = ("clean_src", "clean_trg", "TDM", "CDM")


@dataclass(frozen=True)
class GeoMatchConfig:
    """Margins are given for ``reference_height``-tall images.

    With ``scale_margins`` they are rescaled proportionally (rounded) for
    other heights; otherwise they are applied as absolute pixel counts.
    """

    top_margin: int = DEFAULT_TOP_MARGIN
    bottom_margin: int = DEFAULT_BOTTOM_MARGIN
    num_candidates: int = DEFAULT_NUM_CANDIDATES
    seed: int = 0
    scale_margins: bool = True
    reference_height: int = REFERENCE_HEIGHT

    def __post_init__(self) -> None:
        if self.top_margin < 0 or self.bottom_margin < 0:
            raise DomainError("margins must be >= 0")
        if self.num_candidates < 1:
            raise DomainError(f"num_candidates must be >= 1, got {self.num_candidates}")
        if self.reference_height < 1:
            raise DomainError("reference_height must be >= 1")

    def margins_for(self, height: int) -> tuple[int, int]:
        if self.scale_margins and height != self.reference_height:
            f = height / self.reference_height
            top, bottom = int(round(self.top_margin * f)), int(round(self.bottom_margin * f))
        else:
            top, bottom = self.top_margin, self.bottom_margin
        if top + bottom >= height:
            raise DomainError(f"margins {top}+{bottom} leave no rows of a {height}-tall image")
        return top, bottom


def geometric_difference(disp_i: DisparityMap, disp_j: DisparityMap,
                         cfg: GeoMatchConfig = GeoMatchConfig()) -> float:
    """Mean |ln(1 + disp_i) - ln(1 + disp_j)| over the rows between the margins."""
    h, _ = require_same_shape(disp_i, disp_j)
    top, bottom = cfg.margins_for(h)
    a = disp_i.data[top:h - bottom]
    b = disp_j.data[top:h - bottom]
    return float(np.mean(np.abs(np.log1p(a) - np.log1p(b))))


def score_candidates(target_disp: DisparityMap, candidates: Sequence[tuple[str, DisparityMap]],
                     cfg: GeoMatchConfig = GeoMatchConfig(), threads: int = 1) -> list[tuple[str, float]]:
    """Geometric difference of every candidate to the target, in input order."""
    def one(item):
        return item[0], geometric_difference(target_disp, item[1], cfg)

    if threads > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, candidates))
    return [one(c) for c in candidates]


def match_geometry(target_disp: DisparityMap, candidates: Sequence[tuple[str, DisparityMap]],
                   cfg: GeoMatchConfig = GeoMatchConfig(), threads: int = 1) -> str:
    """Id of the candidate closest in geometry to the target; ties to the lowest id."""
    if not candidates:
        raise SelectionError("match_geometry needs at least one candidate")
    scored = score_candidates(target_disp, candidates, cfg, threads)
    return min(scored, key=lambda s: (s[1], s[0]))[0]


@dataclass
class MixPlan:
    """One planned training sample.

    For mixes, ``sample_i`` is pasted over ``sample_j``; CDM pastes the
    source image over the target.
    """

    kind: str
    sample_i: str
    sample_j: Optional[str] = None
    epsilon: Optional[float] = None
    quality_weight: Optional[float] = None
    geometric_difference: Optional[float] = None
    candidates: Optional[list] = None
    target_labeled: Optional[bool] = None
    batch: int = 0
    seed: int = 0

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_json(cls, doc: dict) -> "MixPlan":
        kind = doc.get("kind")
        if kind not in PLAN_KINDS:
            raise PlanningError(f"unknown plan kind {kind!r}")
        fields = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in doc.items() if k in fields})


DisparityLoader = Callable[[str], DisparityMap]


def plan_ssda_batch(manifest: DatasetManifest, cfg: GeoMatchConfig, rng: np.random.Generator,
                    load_disparity: DisparityLoader, batch: int = 0,
                    epsilon: float = DEFAULT_EPSILON, threads: int = 1) -> list[MixPlan]:
    """Plans for one batch: clean source, clean target, TDM, CDM (in that order).

    Draw order from ``rng`` is fixed: clean source, clean target, the two TDM
    samples, the CDM target, then the CDM source candidates.
    """
    src = manifest.ids(domain="source", labeled=True)
    trg_all = manifest.ids(domain="target")
    trg_lab = manifest.ids(domain="target", labeled=True)
    if not src:
        raise PlanningError("manifest has no labeled source entries")
    if not trg_all:
        raise PlanningError("manifest has no target entries")
    if not trg_lab:
        raise PlanningError("manifest has no labeled target entries")

    def pick(pool: list[str]) -> str:
        return pool[int(rng.integers(len(pool)))]

    plans = [
        MixPlan("clean_src", pick(src), batch=batch, seed=cfg.seed),
        MixPlan("clean_trg", pick(trg_lab), batch=batch, seed=cfg.seed),
    ]

    # TDM: a labeled target pasted over another target image (labeled or not)
    tdm_i = pick(trg_lab)
    others = [t for t in trg_all if t != tdm_i] or [tdm_i]
    tdm_j = pick(others)
    plans.append(MixPlan("TDM", tdm_i, tdm_j, epsilon=epsilon, batch=batch, seed=cfg.seed))

    # CDM: target anchor first, then the geometry-matched source among random candidates
    anchor = pick(trg_all)
    k = min(cfg.num_candidates, len(src))
    cand_ids = [src[int(c)] for c in rng.choice(len(src), size=k, replace=False)]
    scored = score_candidates(
        load_disparity(anchor), [(c, load_disparity(c)) for c in cand_ids], cfg, threads
    )
    winner, g = min(scored, key=lambda s: (s[1], s[0]))
    plans.append(MixPlan(
        "CDM", winner, anchor, epsilon=epsilon, geometric_difference=g,
        candidates=[[c, d] for c, d in scored], target_labeled=manifest[anchor].labeled,
        batch=batch, seed=cfg.seed,
    ))
    return plans


def validate_plans(plans: Sequence[MixPlan], manifest: DatasetManifest) -> None:
    """Check domain rules: CDM crosses domains, TDM stays in the target domain."""
    for n, p in enumerate(plans):
        dom_i = manifest[p.sample_i].domain
        dom_j = manifest[p.sample_j].domain if p.sample_j is not None else None
        if p.kind == "CDM" and {dom_i, dom_j} != {"source", "target"}:
            raise PlanningError(f"plan #{n}: CDM must pair a source with a target image")
        if p.kind == "TDM" and (dom_i, dom_j) != ("target", "target"):
            raise PlanningError(f"plan #{n}: TDM must pair two target images")
        if p.kind == "clean_src" and (dom_i != "source" or dom_j is not None):
            raise PlanningError(f"plan #{n}: clean_src must be a single source image")
        if p.kind == "clean_trg" and (dom_i != "target" or dom_j is not None):
            raise PlanningError(f"plan #{n}: clean_trg must be a single target image")


def plan_ssda(manifest: DatasetManifest, cfg: GeoMatchConfig, num_batches: int,
              load_disparity: DisparityLoader, epsilon: float = DEFAULT_EPSILON,
              threads: int = 1) -> list[MixPlan]:
    rng = np.random.default_rng(cfg.seed)
    plans: list[MixPlan] = []
    for b in range(num_batches):
        plans.extend(plan_ssda_batch(manifest, cfg, rng, load_disparity, b, epsilon, threads))
    validate_plans(plans, manifest)
    return plans


def cached_disparity_loader(manifest: DatasetManifest) -> DisparityLoader:
    @lru_cache(maxsize=None)
    def load(image_id: str) -> DisparityMap:
        return read_disparity(manifest.path(image_id, "disparity"))

    return load
