import itertools
import os
import struct
import tempfile

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from geoensemble.errors import DataError, DimensionError, RasterFormatError
from geoensemble.geogrid import GlobalGrid
from geoensemble.gridio import (
    ImageManifest,
    downsample,
    downsample_mode,
    downsample_nearest,
    encode_raster,
    label_images,
    read_header,
    read_manifest,
    read_raster,
    read_scores,
    write_manifest,
    write_raster,
    write_scores,
)
from geoensemble.oracle import oracle_mode_downsample


def test_read_2x2_u8(tmp_path):
    path = tmp_path / "a.grv"
    path.write_bytes(b"GRV1" + struct.pack("<II", 2, 2) + b"\x01\0\0\0" + bytes([1, 2, 3, 4]))
    arr = read_raster(path)
    assert arr.dtype == np.uint8
    assert arr.tolist() == [[1, 2], [3, 4]]


def test_header_layout():
    raw = encode_raster(np.array([[1.5]], dtype=np.float32))
    assert raw[:4] == b"GRV1"
    assert struct.unpack("<II", raw[4:12]) == (1, 1)
    assert raw[12:16] == b"\0\0\0\0"
    assert raw[16:] == struct.pack("<f", 1.5)
    raw = encode_raster(np.array([[258]], dtype=np.uint16))
    assert raw[12] == 2 and raw[16:] == b"\x02\x01"


@pytest.mark.parametrize("dtype", [np.float32, np.uint8, np.uint16])
def test_round_trip(tmp_path, rng, dtype):
    arr = (rng.random((7, 13)) * 200).astype(dtype)
    path = tmp_path / "r.grv"
    write_raster(path, arr)
    back = read_raster(path)
    assert back.dtype == np.dtype(dtype) and np.array_equal(back, arr)
    assert np.array_equal(read_raster(path, mmap=True), arr)
    assert encode_raster(back) == path.read_bytes()


@given(hnp.arrays(st.sampled_from([np.uint8, np.dtype("<u2"), np.dtype("<f4")]),
                  hnp.array_shapes(min_dims=2, max_dims=2, max_side=9)))
def test_bytes_round_trip(arr):
    raw = encode_raster(arr)
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "x.grv")
        with open(p, "wb") as fh:
            fh.write(raw)
        assert encode_raster(read_raster(p)) == raw


def test_format_errors(tmp_path):
    good = encode_raster(np.zeros((3, 4), dtype=np.uint16))
    cases = {
        "magic": (b"GRV2" + good[4:], 0),
        "dtype": (good[:12] + b"\x07" + good[13:], 12),
        "reserved": (good[:13] + b"\x01" + good[14:], 13),
        "truncated": (good[:-3], len(good) - 3),
        "trailing": (good + b"\0", len(good)),
        "short header": (good[:10], 10),
    }
    for name, (raw, offset) in cases.items():
        path = tmp_path / f"{name}.grv"
        path.write_bytes(raw)
        with pytest.raises(RasterFormatError) as info:
            read_raster(path)
        assert info.value.offset == offset, name
        assert f"byte offset {offset}" in str(info.value)


def test_unsupported_dtype_rejected():
    with pytest.raises(TypeError):
        encode_raster(np.zeros((2, 2), dtype=np.float64))


def test_read_header(tmp_path):
    path = tmp_path / "h.grv"
    write_raster(path, np.zeros((5, 10), dtype=np.uint8))
    h = read_header(path)
    assert (h.height, h.width, h.dtype_name) == (5, 10, "u8")


# -- downsampling --------------------------------------------------------------


def test_mode_constant_field():
    out = downsample_mode(np.full((4, 4), 7, dtype=np.uint8), (2, 2))
    assert out.tolist() == [[7, 7], [7, 7]]


def test_mode_clear_winner_and_tie():
    assert downsample_mode(np.array([[1, 1], [2, 3]], dtype=np.uint8), (1, 1))[0, 0] == 1
    assert downsample_mode(np.array([[2, 3], [3, 2]], dtype=np.uint8), (1, 1))[0, 0] == 2


def test_mode_exhaustive_2x2_blocks():
    blocks = np.array(list(itertools.product(range(4), repeat=4)), dtype=np.uint8)
    src = blocks.reshape(-1, 2, 2).transpose(1, 0, 2).reshape(2, -1)  # blocks side by side
    got = downsample_mode(src, (1, len(blocks)))
    want = oracle_mode_downsample(src, 2, 2)
    assert np.array_equal(got, want)
    # the {2,2,3,3} block in every arrangement resolves to 2
    for k, b in enumerate(blocks):
        if sorted(b.tolist()) == [2, 2, 3, 3]:
            assert got[0, k] == 2


@given(hnp.arrays(np.uint8, (6, 12), elements=st.integers(0, 5)), st.sampled_from([(1, 1), (2, 3), (3, 6), (6, 12)]))
def test_mode_matches_oracle(src, target):
    ky, kx = 6 // target[0], 12 // target[1]
    assert np.array_equal(downsample_mode(src, target), oracle_mode_downsample(src, ky, kx))


@given(hnp.arrays(np.uint8, (4, 8), elements=st.integers(0, 6)), st.permutations(range(20)))
def test_mode_invariant_under_increasing_relabel(src, perm):
    new = np.array(sorted(perm[:7]), dtype=np.uint8)  # strictly increasing map 0..6 -> new
    a = new[downsample_mode(src, (2, 2))]
    b = downsample_mode(new[src], (2, 2))
    assert np.array_equal(a, b)
    assert set(np.unique(b)) <= set(np.unique(new[src]))


def test_mode_strips_agree(rng):
    src = rng.integers(0, 5, size=(40, 80)).astype(np.uint16)
    assert np.array_equal(downsample_mode(src, (10, 20), strip_rows=3), downsample_mode(src, (10, 20)))


def test_non_integer_ratio():
    with pytest.raises(DimensionError):
        downsample_mode(np.zeros((5, 5), dtype=np.uint8), (2, 2))
    with pytest.raises(DimensionError):
        downsample(np.zeros((5, 5), dtype=np.uint8), GlobalGrid(2, 5), "nearest")


def test_nearest_picks_south_east_of_center():
    src = np.arange(16, dtype=np.uint8).reshape(4, 4)
    # centers of the 2x2 blocks sit on shared corners; south/east pixel wins
    assert downsample_nearest(src, (2, 2)).tolist() == [[5, 7], [13, 15]]
    src3 = np.arange(9, dtype=np.uint8).reshape(3, 3)
    assert downsample_nearest(src3, (1, 1)).tolist() == [[4]]


# -- manifests, scores, labeling --------------------------------------------------


def test_manifest_round_trip(tmp_path):
    m = ImageManifest(("a", "b"), np.array([1.5, -2.0]), np.array([3.25, 179.0]))
    path = tmp_path / "m.csv"
    write_manifest(path, m)
    assert path.read_text().splitlines()[0] == "image_id,lat,lon"
    back = read_manifest(path)
    assert back.image_ids == m.image_ids and np.array_equal(back.lats, m.lats)


def test_manifest_duplicate_ids(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("image_id,lat,lon\na,1,2\na,3,4\n")
    with pytest.raises(DataError):
        read_manifest(path)


def test_manifest_bad_number(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("image_id,lat,lon\na,north,2\n")
    with pytest.raises(RasterFormatError):
        read_manifest(path)


def test_scores(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("image_id,id,prob\na,3,0.5\na,7,0.25\nb,1,1.0\n")
    scores = read_scores(path)
    assert scores["a"].ids.tolist() == [3, 7] and scores["a"].probs.tolist() == [0.5, 0.25]
    out = tmp_path / "s2.csv"
    write_scores(out, scores)
    assert out.read_text() == path.read_text()


@pytest.mark.parametrize("body, error", [
    ("a,1,-0.5\n", RasterFormatError),
    ("a,1,0.5\na,1,0.2\n", DataError),
    ("a,1,0\na,2,0\n", DataError),
    ("a,x,0.5\n", RasterFormatError),
])
def test_bad_scores(tmp_path, body, error):
    path = tmp_path / "s.csv"
    path.write_text("image_id,id,prob\n" + body)
    with pytest.raises(error):
        read_scores(path)


def test_missing_columns(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("image,id,prob\n")
    with pytest.raises(RasterFormatError):
        read_scores(path)


def test_label_images():
    labels = np.arange(180 * 360, dtype=np.uint16).reshape(180, 360) % 60000
    grid = GlobalGrid(180, 360)
    c = grid.index_to_center(10, 20)
    m = ImageManifest(("center", "edge", "bad"), np.array([c.lat, 10.0, 95.0]), np.array([c.lon, 20.0, 0.0]))
    values, errors = label_images(m, labels)
    assert values[0] == labels[10, 20]
    assert values[1] == labels[80, 200]  # shared corner -> south/east pixel
    assert values[2] == -1
    assert [e[0] for e in errors] == ["bad"]


def test_label_images_uniform():
    m = ImageManifest(tuple("abc"), np.array([0.0, 45.0, -89.0]), np.array([0.0, 100.0, -179.0]))
    values, errors = label_images(m, np.full((3, 6), 4, dtype=np.uint8))
    assert values.tolist() == [4, 4, 4] and errors == []
