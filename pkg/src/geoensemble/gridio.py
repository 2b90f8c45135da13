"""GRV1 raster files, CSV manifests / score tables, and label-grid downsampling.

GRV1 layout (all little-endian)::

    offset  size  field
    0       4     magic  b"GRV1"
    4       4     height (u32)
    8       4     width  (u32)
    12      1     dtype  (0 = float32, 1 = uint8, 2 = uint16)
    13      3     reserved, zero
    16      ...   payload, row-major, row 0 northmost

The payload is exactly height * width * itemsize bytes.
"""

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, RasterFormatError
from .geogrid import GlobalGrid, latlon_to_index_arrays

MAGIC = b"GRV1"
HEADER = struct.Struct("<4sIIB3s")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<u2")}
DTYPE_NAMES = {0: "f32", 1: "u8", 2: "u16"}
_CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1, np.dtype("<u2"): 2}


@dataclass(frozen=True)
class RasterHeader:
    height: int
    width: int
    dtype_code: int

    @property
    def dtype(self):
        return DTYPES[self.dtype_code]

    @property
    def dtype_name(self):
        return DTYPE_NAMES[self.dtype_code]

    @property
    def payload_size(self):
        return self.height * self.width * self.dtype.itemsize


def _parse_header(raw, path=None):
    if len(raw) < HEADER.size:
        raise RasterFormatError(
            f"truncated header ({len(raw)} of {HEADER.size} bytes)", offset=len(raw), path=path
        )
    magic, height, width, code, reserved = HEADER.unpack(raw[: HEADER.size])
    if magic != MAGIC:
        raise RasterFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0, path=path)
    if code not in DTYPES:
        raise RasterFormatError(f"unknown dtype code {code}", offset=12, path=path)
    if reserved != b"\0\0\0":
        raise RasterFormatError("reserved header bytes are not zero", offset=13, path=path)
    if height == 0 or width == 0:
        raise RasterFormatError(f"empty raster {height}x{width}", offset=4, path=path)
    return RasterHeader(height, width, code)


def read_header(path):
    path = Path(path)
    with open(path, "rb") as fh:
        header = _parse_header(fh.read(HEADER.size), path)
    size = path.stat().st_size - HEADER.size
    _check_payload(header, size, path)
    return header


def _check_payload(header, size, path):
    expected = header.payload_size
    if size < expected:
        raise RasterFormatError(
            f"truncated payload: expected {expected} bytes, found {size}",
            offset=HEADER.size + size,
            path=path,
        )
    if size > expected:
        raise RasterFormatError(
            f"{size - expected} trailing bytes after payload",
            offset=HEADER.size + expected,
            path=path,
        )


def read_raster(path, mmap=False):
    """Load a GRV1 raster as a read-only (height, width) array.

    With ``mmap=True`` the payload is memory-mapped instead of read.
    """
    header = read_header(path)
    if mmap:
        arr = np.memmap(path, dtype=header.dtype, mode="r", offset=HEADER.size,
                        shape=(header.height, header.width))
    else:
        arr = np.fromfile(path, dtype=header.dtype, offset=HEADER.size)
        arr = arr.reshape(header.height, header.width)
        arr.setflags(write=False)
    return arr


def encode_raster(arr):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise DimensionError(f"raster must be 2-D, got shape {arr.shape}")
    code = _CODES.get(arr.dtype.newbyteorder("<"))
    if code is None:
        raise TypeError(f"unsupported raster dtype {arr.dtype}; use float32, uint8 or uint16")
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    return HEADER.pack(MAGIC, arr.shape[0], arr.shape[1], code, b"\0\0\0") + payload


def write_raster(path, arr):
    Path(path).write_bytes(encode_raster(arr))


# -- CSV files -------------------------------------------------------------


def _open_csv(path, required):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        fh.close()
        raise RasterFormatError("empty CSV file, header row required", path=path)
    missing = [c for c in required if c not in reader.fieldnames]
    if missing:
        fh.close()
        raise RasterFormatError(f"missing CSV column(s) {missing}", path=path)
    return fh, reader


def _number(text, cast, path, line, column):
    try:
        return cast(text)
    except (TypeError, ValueError):
        raise RasterFormatError(f"line {line}: bad {column} value {text!r}", path=path) from None


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def fmt(x):
    """Shortest round-tripping text for a float, empty for missing values."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


@dataclass(frozen=True, eq=False)
class ImageManifest:
    """Images with their ground-truth coordinates.

    Coordinates are stored as read; out-of-range values are reported by
    :func:`label_images` rather than rejected here.
    """

    image_ids: tuple
    lats: np.ndarray
    lons: np.ndarray

    def __post_init__(self):
        if not len(self.image_ids) == len(self.lats) == len(self.lons):
            raise DimensionError("manifest columns differ in length")
        seen = set()
        for image_id in self.image_ids:
            if image_id in seen:
                raise DataError(f"duplicate image_id {image_id!r} in manifest")
            seen.add(image_id)

    def __len__(self):
        return len(self.image_ids)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return ImageManifest(
            tuple(self.image_ids[i] for i in indices), self.lats[indices], self.lons[indices]
        )

    def valid_mask(self):
        return (
            np.isfinite(self.lats) & np.isfinite(self.lons)
            & (self.lats >= -90.0) & (self.lats <= 90.0)
        )


def read_manifest(path):
    fh, reader = _open_csv(path, ("image_id", "lat", "lon"))
    ids, lats, lons = [], [], []
    with fh:
        for line, row in enumerate(reader, start=2):
            ids.append(row["image_id"])
            lats.append(_number(row["lat"], float, path, line, "lat"))
            lons.append(_number(row["lon"], float, path, line, "lon"))
    return ImageManifest(tuple(ids), np.array(lats, dtype=np.float64),
                         np.array(lons, dtype=np.float64))


def write_manifest(path, manifest):
    write_csv(path, ("image_id", "lat", "lon"),
              ((i, fmt(a), fmt(b)) for i, a, b in zip(manifest.image_ids, manifest.lats, manifest.lons)))


@dataclass(frozen=True, eq=False)
class ScoreVector:
    """One predictor's scores for one image, keyed by class or cell id."""

    ids: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if ids.shape != probs.shape or ids.ndim != 1:
            raise DimensionError("score ids and probabilities must be matching 1-D arrays")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise DataError("probabilities must be finite and >= 0")
        if len(np.unique(ids)) != len(ids):
            raise DataError("duplicate id in score vector")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "probs", probs)


def read_scores(path):
    """Read ``image_id,id,prob`` rows into a dict of ScoreVectors."""
    fh, reader = _open_csv(path, ("image_id", "id", "prob"))
    grouped = {}
    with fh:
        for line, row in enumerate(reader, start=2):
            ids, probs = grouped.setdefault(row["image_id"], ([], [], ))
            ids.append(_number(row["id"], int, path, line, "id"))
            prob = _number(row["prob"], float, path, line, "prob")
            if not (math.isfinite(prob) and prob >= 0):
                raise RasterFormatError(f"line {line}: probability {prob} must be >= 0", path=path)
            probs.append(prob)
    out = {}
    for image_id, (ids, probs) in grouped.items():
        if len(set(ids)) != len(ids):
            raise DataError(f"{path}: image {image_id!r} has duplicate ids")
        if not sum(probs) > 0:
            raise DataError(f"{path}: image {image_id!r} has no positive probability")
        out[image_id] = ScoreVector(np.array(ids), np.array(probs))
    return out


def write_scores(path, scores):
    rows = []
    for image_id, sv in scores.items():
        rows.extend((image_id, int(i), fmt(p)) for i, p in zip(sv.ids, sv.probs))
    write_csv(path, ("image_id", "id", "prob"), rows)


# -- downsampling -----------------------------------------------------------


def _block_factors(shape, target):
    th, tw = target.shape if isinstance(target, GlobalGrid) else target
    h, w = shape
    if h % th or w % tw:
        raise DimensionError(f"source {h}x{w} is not an integer multiple of target {th}x{tw}")
    return th, tw, h // th, w // tw


def downsample_mode(src, target, strip_rows=64):
    """Majority label of each block; ties go to the smallest label."""
    src = np.asarray(src)
    if src.dtype.kind not in "ui":
        raise TypeError("mode downsampling needs an integer label grid")
    th, tw, ky, kx = _block_factors(src.shape, target)
    out = np.empty((th, tw), dtype=src.dtype)
    for r0 in range(0, th, strip_rows):
        r1 = min(th, r0 + strip_rows)
        block = np.asarray(src[r0 * ky:r1 * ky]).reshape(r1 - r0, ky, tw, kx)
        best_count = np.zeros((r1 - r0, tw), dtype=np.int64)
        best = np.zeros((r1 - r0, tw), dtype=src.dtype)
        for v in np.unique(block):
            count = (block == v).sum(axis=(1, 3))
            win = count > best_count
            best[win] = v
            best_count[win] = count[win]
        out[r0:r1] = best
    return out


def downsample_nearest(src, target):
    """Source pixel owning each target pixel center (south/east on ties)."""
    src = np.asarray(src)
    th, tw, ky, kx = _block_factors(src.shape, target)
    return np.ascontiguousarray(src[ky // 2::ky, kx // 2::kx][:th, :tw])


DOWNSAMPLERS = {"mode": downsample_mode, "nearest": downsample_nearest}


def downsample(src, target, kernel="mode"):
    try:
        fn = DOWNSAMPLERS[kernel]
    except KeyError:
        raise ValueError(f"unknown downsampling kernel {kernel!r}") from None
    return fn(src, target)


def label_images(manifest, labels):
    """Label of the pixel under each image's ground truth.

    Returns ``(values, errors)``; images with invalid coordinates get -1 and an
    ``(image_id, message)`` entry in ``errors``.
    """
    labels = np.asarray(labels)
    grid = GlobalGrid(*labels.shape)
    values = np.full(len(manifest), -1, dtype=np.int64)
    ok = manifest.valid_mask()
    errors = [
        (manifest.image_ids[i], f"invalid coordinates ({manifest.lats[i]}, {manifest.lons[i]})")
        for i in np.flatnonzero(~ok)
    ]
    rows, cols = latlon_to_index_arrays(grid, manifest.lats[ok], manifest.lons[ok])
    values[ok] = labels[rows, cols]
    return values, errors
