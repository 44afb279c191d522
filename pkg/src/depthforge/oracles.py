"""Slow scalar reference implementations.

These are deliberately written with plain Python loops over nested lists
and share no code with the vectorized modules, so a bug in one cannot
validate itself through the other.  They refuse large inputs.
"""

from __future__ import annotations

import math
import random

from depthforge.errors import DomainError

MAX_SIDE = 64
MAX_ITEMS = 200


def _grid(x) -> list[list]:
    if hasattr(x, "data"):
        x = x.data
    if hasattr(x, "tolist"):
        x = x.tolist()
    return [list(row) for row in x]


def _guard_raster(*grids) -> None:
    for g in grids:
        if len(g) > MAX_SIDE or (g and len(g[0]) > MAX_SIDE):
            raise DomainError(f"oracle refuses rasters larger than {MAX_SIDE}x{MAX_SIDE}")


def oracle_depthmix(disp_i, disp_j, epsilon: float) -> list[list[int]]:
    a, b = _grid(disp_i), _grid(disp_j)
    _guard_raster(a, b)
    out = []
    for r in range(len(a)):
        row = []
        for c in range(len(a[r])):
            row.append(1 if a[r][c] > b[r][c] - epsilon else 0)
        out.append(row)
    return out


def oracle_mix(mask, a_i, a_j) -> list:
    m, a, b = _grid(mask), _grid(a_i), _grid(a_j)
    _guard_raster(m, a, b)
    out = []
    for r in range(len(m)):
        row = []
        for c in range(len(m[r])):
            if isinstance(a[r][c], list):
                row.append([m[r][c] * x + (1 - m[r][c]) * y for x, y in zip(a[r][c], b[r][c])])
            else:
                row.append(a[r][c] if m[r][c] == 1 else b[r][c])
        out.append(row)
    return out


def oracle_mix_pair(sample_i: dict, sample_j: dict, epsilon: float) -> dict:
    """Compose the depth mask and then mix every raster of two samples.

    Each sample is a dict with ``image``, ``disparity``, ``label`` and either
    ``labeled: True`` or a ``prob`` grid.
    """
    mask = oracle_depthmix(sample_i["disparity"], sample_j["disparity"], epsilon)

    def conf(s):
        if s.get("labeled", True):
            d = _grid(s["disparity"])
            return [[1.0] * len(d[0]) for _ in d]
        return _grid(s["prob"])

    return {
        "mask": mask,
        "image": oracle_mix(mask, sample_i["image"], sample_j["image"]),
        "label": oracle_mix(mask, sample_i["label"], sample_j["label"]),
        "prob": oracle_mix(mask, conf(sample_i), conf(sample_j)),
        "disparity": oracle_mix(mask, sample_i["disparity"], sample_j["disparity"]),
    }


def oracle_classmix_mask(label, rng: random.Random, ignore_index: int = 255) -> list[list[int]]:
    """Mask covering a random half of the classes present in ``label``.

    Only a contrast baseline for documentation figures; it ignores geometry.
    """
    g = _grid(label)
    _guard_raster(g)
    present = sorted({v for row in g for v in row if v != ignore_index})
    chosen = set(rng.sample(present, (len(present) + 1) // 2)) if present else set()
    return [[1 if v in chosen else 0 for v in row] for row in g]


def _l2(u, v) -> float:
    s = 0.0
    for x, y in zip(u, v):
        s += (x - y) * (x - y)
    return math.sqrt(s)


def oracle_fps(vectors: dict, first: str, schedule, uncertainties: dict | None = None,
               lambda_e: float = 0.0) -> list[str]:
    """Brute-force greedy selection.

    Every pick rescans all remaining ids and recomputes the minimum distance
    to the whole selected set.  ``uncertainties[t]`` holds the scores used in
    step ``t`` (1-based, needed from step 2 on).  Ties go to the lowest id.
    """
    if len(vectors) > MAX_ITEMS:
        raise DomainError(f"oracle refuses more than {MAX_ITEMS} items")
    ids = sorted(vectors)
    vec = {i: [float(x) for x in vectors[i]] for i in ids}
    cache: dict[tuple[str, str], float] = {}

    def dist(a: str, b: str) -> float:
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            cache[key] = _l2(vec[key[0]], vec[key[1]])
        return cache[key]

    selected = [first]
    for step, target in enumerate(schedule, start=1):
        while len(selected) < target:
            best, best_score = None, None
            for cand in ids:
                if cand in selected:
                    continue
                d = min(dist(cand, s) for s in selected)
                score = d if step == 1 else d + lambda_e * uncertainties[step][cand]
                if best_score is None or score > best_score:
                    best, best_score = cand, score
            selected.append(best)
    return selected


def oracle_pool(raw, rows: int, cols: int) -> list:
    """Mean of each near-equal cell, cells bounded at floor(k * n / parts)."""
    chans = raw.tolist() if hasattr(raw, "tolist") else raw
    out = []
    for ch in chans:
        h, w = len(ch), len(ch[0])
        grid = []
        for r in range(rows):
            r0, r1 = r * h // rows, (r + 1) * h // rows
            line = []
            for c in range(cols):
                c0, c1 = c * w // cols, (c + 1) * w // cols
                total, n = 0.0, 0
                for y in range(r0, r1):
                    for x in range(c0, c1):
                        total += ch[y][x]
                        n += 1
                line.append(total / n)
            grid.append(line)
        out.append(grid)
    return out


def oracle_log_l1(disp_i, disp_j, top: int = 0, bottom: int = 0) -> float:
    """Mean |ln(1+a) - ln(1+b)| over rows [top, H - bottom)."""
    a, b = _grid(disp_i), _grid(disp_j)
    if len(a) * len(a[0]) > 512 * 1024:
        raise DomainError("oracle refuses rasters above 512x1024")
    total, n = 0.0, 0
    for r in range(top, len(a) - bottom):
        for c in range(len(a[r])):
            total += abs(math.log(1.0 + a[r][c]) - math.log(1.0 + b[r][c]))
            n += 1
    return total / n


def oracle_match(target, candidates, top: int, bottom: int) -> str:
    best, best_g = None, None
    for cid, disp in sorted(candidates, key=lambda c: c[0]):
        g = oracle_log_l1(target, disp, top, bottom)
        if best_g is None or g < best_g:
            best, best_g = cid, g
    return best


def oracle_argmax(scores) -> tuple[list[list[int]], list[list[float]]]:
    """Scores are (C, H, W); confidence is the max of the per-pixel softmax."""
    s = scores.tolist() if hasattr(scores, "tolist") else scores
    c_n, h, w = len(s), len(s[0]), len(s[0][0])
    labels, probs = [], []
    for r in range(h):
        lrow, prow = [], []
        for c in range(w):
            vals = [s[k][r][c] for k in range(c_n)]
            best = 0
            for k in range(1, c_n):
                if vals[k] > vals[best]:
                    best = k
            m = max(vals)
            z = sum(math.exp(v - m) for v in vals)
            lrow.append(best)
            prow.append(math.exp(vals[best] - m) / z)
        labels.append(lrow)
        probs.append(prow)
    return labels, probs


def oracle_cross_entropy(probs, target, ignore_index: int = 255) -> float:
    """``probs`` is (C, H, W) already normalized; ``target`` is (H, W)."""
    p = probs.tolist() if hasattr(probs, "tolist") else probs
    t = _grid(target)
    total, n = 0.0, 0
    for r in range(len(t)):
        for c in range(len(t[r])):
            if t[r][c] == ignore_index:
                continue
            total += -math.log(p[t[r][c]][r][c])
            n += 1
    return total / n if n else 0.0


def oracle_quality_weight(prob, tau: float) -> float:
    g = _grid(prob)
    above = 0
    count = 0
    for row in g:
        for v in row:
            count += 1
            if v > tau:
                above += 1
    return above / count


def oracle_losses(objective: str, **t) -> float:
    """Hand-written objective formulas; absent terms are zero, absent weights one."""
    g = lambda k: t.get(k, 0.0)  # noqa: E731
    q = lambda k: t.get(k, 1.0)  # noqa: E731
    if objective == "dx":
        return g("ce_labeled") + q("q_mixed") * g("ce_mixed")
    if objective == "mtl":
        return g("external_sde") + g("ce_labeled") + q("q_mixed") * g("ce_mixed")
    if objective == "ssda":
        return (g("ce_trg") + g("ce_src") + q("q_cdm") * g("ce_cdm")
                + q("q_tdm") * g("ce_tdm") + g("external_sde"))
    if objective == "pretrain":
        return g("external_sde") + t.get("lambda_f", 0.01) * g("feat_dist")
    raise DomainError(f"unknown objective {objective!r}")


def oracle_ema(teacher, student, alpha: float, steps: int) -> list[float]:
    """Closed form of ``steps`` updates against a constant student."""
    a_k = alpha ** steps
    return [t * a_k + s * (1 - a_k) for t, s in zip(teacher, student)]
