"""Seed plumbing and provenance blocks attached to every emitted JSON."""

from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Iterable

import numpy as np

from depthforge import __version__


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed``; extra integers select an independent sub-stream."""
    return np.random.default_rng([int(seed), *map(int, stream)] if stream else int(seed))


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _key(path: Path, root: Path | None) -> str:
    if root is not None:
        try:
            return path.resolve().relative_to(root.resolve()).as_posix()
        except ValueError:
            pass
    return path.name


def input_hashes(paths: Iterable[str | os.PathLike], root: str | os.PathLike | None = None) -> dict[str, str]:
    """sha256 per input, keyed by path relative to ``root`` (else the file name).

    Keys never contain absolute paths, so two runs in different directories
    produce identical provenance.
    """
    root_path = Path(root) if root is not None else None
    return {_key(Path(p), root_path): sha256_file(p) for p in paths}


def provenance(seed: int | None, inputs: Iterable[str | os.PathLike] = (),
               root: str | os.PathLike | None = None) -> dict:
    return {
        "tool_version": __version__,
        "seed": seed,
        "input_hashes": input_hashes(inputs, root),
    }
