"""Dataset manifests: the JSON index of images and their side rasters.

Schema (paths are relative to the manifest's directory)::

    {
      "num_classes": 19,
      "ignore_index": 255,              # optional, default 255
      "entries": [
        {
          "id": "aachen_000000",         # unique, non-empty
          "domain": "target",            # "source" | "target"
          "labeled": true,
          "image": "img/aachen_000000.png",
          "disparity": "disp/aachen_000000.png",
          "label": "label/aachen_000000.png",   # required when labeled
          "prob": "prob/aachen_000000.dft1",    # optional, (H, W) confidence
          "pred": "pred/aachen_000000.dft1",    # optional, (C, H, W) class scores
          "feature": "feat/aachen_000000.dft1"  # optional, (channels, h, w)
        }
      ]
    }

Unknown keys are ignored.  An unlabeled entry may still carry ``label``
(held-out ground truth, used only by the statistics report).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from depthforge.errors import DepthForgeError, ManifestError
from depthforge.io import load_json, read_segmap
from depthforge.types import DEFAULT_IGNORE_INDEX

DOMAINS = ("source", "target")
FILE_KEYS = ("image", "disparity", "label", "prob", "pred", "feature")
REQUIRED_KEYS = ("image", "disparity")


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    domain: str
    labeled: bool
    image: str
    disparity: str
    label: str | None = None
    prob: str | None = None
    pred: str | None = None
    feature: str | None = None

    def to_json(self) -> dict:
        out = {"id": self.image_id, "domain": self.domain, "labeled": self.labeled}
        for key in FILE_KEYS:
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    num_classes: int
    ignore_index: int = DEFAULT_IGNORE_INDEX
    root: Path = Path(".")

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {e.image_id: e for e in self.entries})

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, image_id: str) -> ManifestEntry:
        try:
            return self._index[image_id]
        except KeyError:
            raise ManifestError(f"unknown image id {image_id!r}") from None

    def __contains__(self, image_id: object) -> bool:
        return image_id in self._index

    def ids(self, domain: str | None = None, labeled: bool | None = None) -> list[str]:
        """Matching ids in sorted order."""
        return sorted(
            e.image_id for e in self.entries
            if (domain is None or e.domain == domain) and (labeled is None or e.labeled == labeled)
        )

    def path(self, image_id: str, key: str) -> Path:
        rel = getattr(self[image_id], key)
        if rel is None:
            raise ManifestError(f"entry {image_id!r} has no {key!r} file")
        return self.root / rel

    def to_json(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "ignore_index": self.ignore_index,
            "entries": [e.to_json() for e in self.entries],
        }


def parse_manifest(doc: object, root: str | os.PathLike = ".", check_files: bool = True,
                   validate_labels: bool = False) -> DatasetManifest:
    """Validate a decoded manifest document.

    ``check_files`` requires every referenced path to exist under ``root``;
    ``validate_labels`` additionally decodes each label map and checks its
    class indices.
    """
    root = Path(root)
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    num_classes = doc.get("num_classes")
    if not isinstance(num_classes, int) or isinstance(num_classes, bool) or num_classes < 1:
        raise ManifestError(f"num_classes must be a positive integer, got {num_classes!r}")
    ignore_index = doc.get("ignore_index", DEFAULT_IGNORE_INDEX)
    if not isinstance(ignore_index, int) or isinstance(ignore_index, bool):
        raise ManifestError(f"ignore_index must be an integer, got {ignore_index!r}")
    if 0 <= ignore_index < num_classes:
        raise ManifestError(f"ignore_index {ignore_index} is a valid class index (num_classes={num_classes})")
    raw_entries = doc.get("entries")
    if not isinstance(raw_entries, list):
        raise ManifestError("manifest needs an 'entries' list")

    entries = []
    seen: set[str] = set()
    for pos, raw in enumerate(raw_entries):
        entry = parse_entry(raw, pos)
        if entry.image_id in seen:
            raise ManifestError(f"entry {entry.image_id!r}: duplicate id")
        seen.add(entry.image_id)
        entries.append(entry)

    manifest = DatasetManifest(tuple(entries), num_classes, ignore_index, root)
    if check_files:
        _check_files(manifest)
    if validate_labels:
        for entry in manifest.entries:
            if entry.label is None:
                continue
            try:
                read_segmap(root / entry.label, num_classes, ignore_index)
            except DepthForgeError as exc:
                raise ManifestError(f"entry {entry.image_id!r}: invalid label map: {exc}") from exc
    return manifest


def parse_entry(raw: object, pos: int) -> ManifestEntry:
    if not isinstance(raw, dict):
        raise ManifestError(f"entry #{pos}: must be an object")
    image_id = raw.get("id")
    if not isinstance(image_id, str) or not image_id:
        raise ManifestError(f"entry #{pos}: 'id' must be a non-empty string")
    where = f"entry {image_id!r}"
    domain = raw.get("domain")
    if domain not in DOMAINS:
        raise ManifestError(f"{where}: domain must be one of {DOMAINS}, got {domain!r}")
    labeled = raw.get("labeled")
    if not isinstance(labeled, bool):
        raise ManifestError(f"{where}: 'labeled' must be true or false")
    files = {}
    for key in FILE_KEYS:
        value = raw.get(key)
        if value is None:
            if key in REQUIRED_KEYS or (key == "label" and labeled):
                raise ManifestError(f"{where}: missing {key!r} path")
            continue
        if not isinstance(value, str) or not value:
            raise ManifestError(f"{where}: {key!r} must be a path string")
        files[key] = value
    return ManifestEntry(image_id, domain, labeled, **files)


def _check_files(manifest: DatasetManifest) -> None:
    checked: set[Path] = set()
    for entry in manifest.entries:
        for key in FILE_KEYS:
            rel = getattr(entry, key)
            if rel is None:
                continue
            path = manifest.root / rel
            if path in checked:
                continue
            if not path.is_file():
                raise ManifestError(f"entry {entry.image_id!r}: {key} file not found: {path}")
            checked.add(path)


def load_manifest(path: str | os.PathLike, check_files: bool = True,
                  validate_labels: bool = False) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"{path}: manifest not found")
    try:
        doc = load_json(path)
    except DepthForgeError as exc:
        raise ManifestError(str(exc)) from exc
    return parse_manifest(doc, path.parent, check_files, validate_labels)


def subset(manifest: DatasetManifest, ids: Iterable[str]) -> DatasetManifest:
    keep = set(ids)
    return DatasetManifest(
        tuple(e for e in manifest.entries if e.image_id in keep),
        manifest.num_classes, manifest.ignore_index, manifest.root,
    )
