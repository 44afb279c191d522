import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from depthforge.errors import DomainError, FormatError, ManifestError, ShapeError
from depthforge.io import (
    decode_tensor, read_disparity, read_image, read_segmap, read_tensor,
    write_disparity, write_image, write_segmap, write_tensor,
)
from depthforge.manifest import load_manifest, parse_manifest
from depthforge.types import DisparityMap, ImageRaster, ProbMap, SegMap


def test_raster_invariants():
    with pytest.raises(DomainError):
        DisparityMap(np.array([[0.1, -1.0]]))
    with pytest.raises(DomainError):
        DisparityMap(np.array([[np.inf]]))
    with pytest.raises(DomainError):
        ProbMap(np.array([[1.2]]))
    with pytest.raises(DomainError):
        SegMap(np.array([[0, 3]]), num_classes=3)
    with pytest.raises(ShapeError):
        ImageRaster(np.zeros((2, 2, 4), np.uint8))
    with pytest.raises(ShapeError):
        DisparityMap(np.zeros((0, 3)))
    seg = SegMap(np.array([[0, 2, 255]]), num_classes=3)
    assert seg.shape == (1, 3)


def test_rasters_are_read_only():
    src = np.ones((2, 2))
    d = DisparityMap(src)
    src[0, 0] = 5.0
    assert d.data[0, 0] == 1.0
    with pytest.raises(ValueError):
        d.data[0, 0] = 3.0


# -- disparity PNG -------------------------------------------------------------------

def test_disparity_all_zero(tmp_path):
    p = tmp_path / "d.png"
    Image.fromarray(np.zeros((4, 5), np.uint16)).save(p)
    (tmp_path / "d.json").write_text(json.dumps({"scale": 1000}))
    assert np.array_equal(read_disparity(p).data, np.zeros((4, 5)))


def test_disparity_decode_rule(tmp_path):
    p = tmp_path / "d.png"
    Image.fromarray(np.full((2, 2), 30, np.uint16)).save(p)
    (tmp_path / "d.json").write_text(json.dumps({"scale": 1000}))
    assert read_disparity(p).data[0, 0] == pytest.approx(0.03, abs=0)


def test_disparity_rejects_8bit_and_rgb(tmp_path):
    for name, arr in [("g8.png", np.zeros((3, 3), np.uint8)), ("rgb.png", np.zeros((3, 3, 3), np.uint8))]:
        p = tmp_path / name
        Image.fromarray(arr).save(p)
        p.with_suffix(".json").write_text('{"scale": 1000}')
        with pytest.raises(FormatError):
            read_disparity(p)


def test_disparity_missing_sidecar(tmp_path):
    p = tmp_path / "d.png"
    Image.fromarray(np.zeros((2, 2), np.uint16)).save(p)
    with pytest.raises(FormatError, match="sidecar"):
        read_disparity(p)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 20), w=st.integers(1, 20), seed=st.integers(0, 2**32 - 1),
       scale=st.sampled_from([1.0, 256.0, 1000.0]))
def test_disparity_png_round_trip_is_byte_identical(tmp_path_factory, h, w, seed, scale):
    d = tmp_path_factory.mktemp("rt")
    raw = np.random.default_rng(seed).integers(0, 65536, size=(h, w)).astype(np.uint16)
    first = d / "a.png"
    Image.fromarray(raw).save(first)
    first.with_suffix(".json").write_text(json.dumps({"scale": scale}) + "\n")

    second = d / "b.png"
    write_disparity(read_disparity(first), second, scale=scale)
    again = d / "c.png"
    write_disparity(read_disparity(second), again, scale=scale)

    assert np.array_equal(np.array(Image.open(second)), raw)
    assert second.read_bytes() == again.read_bytes()
    assert second.with_suffix(".json").read_bytes() == first.with_suffix(".json").read_bytes()


def test_disparity_grid_values_round_trip(tmp_path, rng):
    values = rng.integers(0, 3000, size=(6, 7)) / 1000.0
    write_disparity(DisparityMap(values), tmp_path / "x.png")
    assert np.array_equal(read_disparity(tmp_path / "x.png").data, values)


def test_disparity_overflow(tmp_path):
    with pytest.raises(FormatError):
        write_disparity(DisparityMap(np.full((1, 1), 70.0)), tmp_path / "x.png")


# -- label maps and images ---------------------------------------------------------------

def test_segmap_round_trip(tmp_path, rng):
    arr = rng.integers(0, 19, size=(8, 9))
    arr[0, 0] = 255
    write_segmap(SegMap(arr, 19), tmp_path / "s.png")
    assert Image.open(tmp_path / "s.png").mode == "P"
    back = read_segmap(tmp_path / "s.png", 19)
    assert np.array_equal(back.data, arr)


def test_segmap_read_validates_classes(tmp_path):
    write_segmap(SegMap(np.array([[0, 7]]), 19), tmp_path / "s.png")
    with pytest.raises(DomainError):
        read_segmap(tmp_path / "s.png", num_classes=5)


def test_image_round_trip(tmp_path, rng):
    for shape in [(5, 6), (5, 6, 3)]:
        img = ImageRaster(rng.integers(0, 256, size=shape).astype(np.uint8))
        write_image(img, tmp_path / "i.png")
        assert np.array_equal(read_image(tmp_path / "i.png").data, img.data)


# -- DFT1 tensors ------------------------------------------------------------------------

def test_empty_rank1_tensor_is_12_bytes(tmp_path):
    write_tensor(np.zeros(0), tmp_path / "e.dft1")
    data = (tmp_path / "e.dft1").read_bytes()
    assert len(data) == 12
    assert data == b"DFT1" + struct.pack("<II", 1, 0)
    assert read_tensor(tmp_path / "e.dft1").shape == (0,)


@settings(max_examples=50, deadline=None)
@given(shape=st.lists(st.integers(0, 6), min_size=0, max_size=4), seed=st.integers(0, 2**32 - 1))
def test_tensor_round_trip_bit_exact(tmp_path_factory, shape, seed):
    d = tmp_path_factory.mktemp("t")
    arr = np.random.default_rng(seed).normal(size=shape).astype(np.float32)
    write_tensor(arr, d / "t.dft1")
    back = read_tensor(d / "t.dft1")
    assert back.shape == tuple(shape)
    assert back.tobytes() == arr.tobytes()


def test_tensor_4x8_round_trip(tmp_path, rng):
    arr = rng.normal(size=(4, 8)).astype(np.float32)
    write_tensor(arr, tmp_path / "t.dft1")
    assert read_tensor(tmp_path / "t.dft1").tobytes() == arr.tobytes()


def test_tensor_layout_is_little_endian_row_major(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_tensor(arr, tmp_path / "t.dft1")
    data = (tmp_path / "t.dft1").read_bytes()
    assert data[:16] == b"DFT1" + struct.pack("<III", 2, 2, 3)
    assert struct.unpack("<6f", data[16:]) == (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)


def test_tensor_errors(tmp_path):
    with pytest.raises(FormatError, match="magic"):
        decode_tensor(b"DFT2" + struct.pack("<II", 1, 0))
    with pytest.raises(FormatError):
        decode_tensor(b"DFT1" + struct.pack("<II", 1, 3) + b"\0" * 8)
    with pytest.raises(FormatError):
        decode_tensor(b"DFT1" + struct.pack("<I", 2) + b"\0" * 4)
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "missing.dft1")


def test_pooled_feature_shape_accepted(tmp_path, rng):
    from depthforge.selection import pool_features

    feat = rng.normal(size=(16, 4, 8)).astype(np.float32)
    write_tensor(feat, tmp_path / "f.dft1")
    pooled = pool_features(read_tensor(tmp_path / "f.dft1"))
    assert pooled.shape == (16, 4, 8)
    assert np.allclose(pooled, feat)


# -- manifests ---------------------------------------------------------------------------

def _files(tmp_path):
    write_image(ImageRaster(np.zeros((2, 2), np.uint8)), tmp_path / "i.png")
    write_disparity(DisparityMap(np.zeros((2, 2))), tmp_path / "d.png")
    write_segmap(SegMap(np.zeros((2, 2), int), 3), tmp_path / "l.png")


def _entry(i, domain="target", labeled=True, **kw):
    e = {"id": i, "domain": domain, "labeled": labeled, "image": "i.png", "disparity": "d.png"}
    if labeled:
        e["label"] = "l.png"
    e.update(kw)
    return e


def test_empty_manifest(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"num_classes": 19, "entries": []}))
    m = load_manifest(tmp_path / "m.json")
    assert len(m) == 0
    assert m.ignore_index == 255


def test_manifest_counts_preserved(tmp_path):
    _files(tmp_path)
    entries = [_entry(f"c{k:04d}") for k in range(2975)]
    entries += [_entry(f"g{k:05d}", domain="source") for k in range(24966)]
    (tmp_path / "m.json").write_text(json.dumps({"num_classes": 19, "entries": entries}))
    m = load_manifest(tmp_path / "m.json")
    assert len(m.ids(domain="target")) == 2975
    assert len(m.ids(domain="source")) == 24966


def test_manifest_missing_file_names_entry(tmp_path):
    _files(tmp_path)
    doc = {"num_classes": 3, "entries": [_entry("a"), _entry("b", disparity="nope.png")]}
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match="'b'"):
        load_manifest(tmp_path / "m.json")


def test_manifest_missing_path(tmp_path):
    with pytest.raises(ManifestError, match="m.json"):
        load_manifest(tmp_path / "m.json")


def test_manifest_duplicate_id(tmp_path):
    _files(tmp_path)
    with pytest.raises(ManifestError, match="duplicate"):
        parse_manifest({"num_classes": 3, "entries": [_entry("a"), _entry("a")]}, tmp_path)


def test_manifest_invalid_class_index_names_entry(tmp_path):
    _files(tmp_path)
    write_segmap(SegMap(np.array([[0, 9]]), 19), tmp_path / "bad.png")
    doc = {"num_classes": 3, "entries": [_entry("ok"), _entry("broken", label="bad.png")]}
    with pytest.raises(ManifestError, match="'broken'"):
        parse_manifest(doc, tmp_path, validate_labels=True)


def test_manifest_not_json(tmp_path):
    (tmp_path / "m.json").write_bytes(b"\xff\xfe{")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "m.json")


# Mutation fuzz: each mutation breaks exactly one listed invariant; untouched
# documents must always load.
MUTATIONS = {
    "dup_id": lambda d: d["entries"].append(dict(d["entries"][0])),
    "bad_domain": lambda d: d["entries"][0].update(domain="synthetic"),
    "labeled_without_label": lambda d: d["entries"][0].update(labeled=True, label=None),
    "empty_id": lambda d: d["entries"][0].update(id=""),
    "missing_image": lambda d: d["entries"][0].pop("image"),
    "missing_file": lambda d: d["entries"][0].update(image="ghost.png"),
    "labeled_not_bool": lambda d: d["entries"][0].update(labeled="yes"),
    "num_classes_zero": lambda d: d.update(num_classes=0),
    "ignore_collides": lambda d: d.update(ignore_index=1),
    "entries_not_list": lambda d: d.update(entries={}),
}


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 6), labeled=st.lists(st.booleans(), min_size=6, max_size=6),
       mutation=st.sampled_from([None, *MUTATIONS]))
def test_manifest_validation_mutation_fuzz(tmp_path_factory, n, labeled, mutation):
    d = tmp_path_factory.mktemp("mf")
    _files(d)
    doc = {"num_classes": 3, "entries": [
        _entry(f"e{k}", labeled=labeled[k], domain="source" if k % 2 else "target") for k in range(n)
    ]}
    if mutation is None:
        assert len(parse_manifest(doc, d)) == n
    else:
        MUTATIONS[mutation](doc)
        with pytest.raises(ManifestError):
            parse_manifest(doc, d)
