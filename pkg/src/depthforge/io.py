"""Readers and writers for every on-disk format the toolkit touches.

* disparity: 16-bit grayscale PNG plus a ``<name>.json`` sidecar holding
  ``{"scale": s}``; decoded value = raw / s
* label maps: 8-bit palette PNG, one class index per pixel
* images: 8-bit grayscale or RGB PNG
* tensors: "DFT1" binary (magic, u32 rank, u32 dims, float32 payload, all
  little-endian, row-major)
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from depthforge.errors import FormatError
from depthforge.types import DEFAULT_IGNORE_INDEX, DisparityMap, ImageRaster, SegMap

DEFAULT_DISPARITY_SCALE = 1000.0
DFT1_MAGIC = b"DFT1"
_U16_MAX = 65535


def sidecar_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json") if path.suffix != ".png" else path.with_suffix(".json")


# -- disparity ---------------------------------------------------------------

def read_disparity(path: str | os.PathLike) -> DisparityMap:
    path = Path(path)
    raw = _read_png_u16(path)
    side = sidecar_path(path)
    if not side.is_file():
        raise FormatError(f"{path}: missing scale sidecar {side.name}")
    try:
        scale = float(json.loads(side.read_text(encoding="utf-8"))["scale"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{side}: malformed scale sidecar") from exc
    if not scale > 0:
        raise FormatError(f"{side}: scale must be positive")
    return DisparityMap(raw.astype(np.float64) / scale)


def write_disparity(disp: DisparityMap | np.ndarray, path: str | os.PathLike,
                    scale: float = DEFAULT_DISPARITY_SCALE) -> None:
    """Quantize to ``round(value * scale)``; values must fit in 16 bits."""
    data = disp.data if isinstance(disp, DisparityMap) else DisparityMap(disp).data
    raw = np.rint(data * scale)
    if raw.size and raw.max() > _U16_MAX:
        raise FormatError(f"disparity {data.max():g} overflows 16 bits at scale {scale:g}")
    path = Path(path)
    Image.fromarray(raw.astype(np.uint16)).save(path, format="PNG")
    sidecar_path(path).write_text(json.dumps({"scale": scale}) + "\n", encoding="utf-8")


def _read_png_u16(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FormatError(f"{path}: no such file")
    with Image.open(path) as im:
        if im.format != "PNG":
            raise FormatError(f"{path}: not a PNG file")
        # Pillow decodes 16-bit grayscale PNG as I;16 (or I on older builds);
        # 8-bit and multi-channel images come back as L/P/RGB/RGBA
        if im.mode not in ("I;16", "I;16B", "I"):
            raise FormatError(f"{path}: expected 16-bit single-channel PNG, got mode {im.mode}")
        arr = np.array(im)
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a single channel")
    return arr.astype(np.uint16)


# -- label maps and images ---------------------------------------------------

def _palette() -> list[int]:
    rng = np.random.default_rng(0)
    pal = rng.integers(0, 256, size=(256, 3), dtype=np.uint8)
    pal[255] = 0
    return pal.reshape(-1).tolist()


def write_segmap(seg: SegMap, path: str | os.PathLike) -> None:
    if seg.data.max(initial=0) > 255 or seg.data.min(initial=0) < 0:
        raise FormatError("label values must fit in 8 bits")
    im = Image.fromarray(seg.data.astype(np.uint8), mode="P")
    im.putpalette(_palette())
    im.save(Path(path), format="PNG")


def read_segmap(path: str | os.PathLike, num_classes: int,
                ignore_index: int = DEFAULT_IGNORE_INDEX) -> SegMap:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such file")
    with Image.open(path) as im:
        if im.mode not in ("P", "L"):
            raise FormatError(f"{path}: expected 8-bit indexed label PNG, got mode {im.mode}")
        arr = np.array(im)
    return SegMap(arr, num_classes, ignore_index)


def write_image(img: ImageRaster, path: str | os.PathLike) -> None:
    Image.fromarray(img.data).save(Path(path), format="PNG")


def read_image(path: str | os.PathLike) -> ImageRaster:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such file")
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return ImageRaster(np.array(im))


# -- DFT1 tensors --------------------------------------------------------------

def write_tensor(tensor: Any, path: str | os.PathLike) -> None:
    arr = np.asarray(tensor, dtype="<f4")
    header = DFT1_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    """Return the payload as a float32 array of the stored shape."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: no such file")
    return decode_tensor(path.read_bytes(), str(path))


def decode_tensor(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    if buf[:4] != DFT1_MAGIC:
        raise FormatError(f"{name}: bad magic {buf[:4]!r}")
    if len(buf) < 8:
        raise FormatError(f"{name}: truncated header")
    (rank,) = struct.unpack_from("<I", buf, 4)
    end = 8 + 4 * rank
    if len(buf) < end:
        raise FormatError(f"{name}: truncated header")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != end + 4 * count:
        raise FormatError(f"{name}: payload is {len(buf) - end} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=end).reshape(dims).astype(np.float32)


# -- JSON ----------------------------------------------------------------------

def dump_json(obj: Any, path: str | os.PathLike) -> None:
    """Canonical JSON (sorted keys, fixed indent) so equal content gives equal bytes."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_json(path: str | os.PathLike) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no such file") from exc
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not valid UTF-8 JSON ({exc})") from exc
