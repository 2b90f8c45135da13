"""Class masks on the common grid.

A mask set is a label grid (uint8 or uint16) whose value ``k`` marks class
index ``k``; the largest value of the dtype is reserved for "no class".
Population-density buckets, merged land-cover classes and rasterized
prediction cells all end up in this form.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CellConflictError, DataError, DimensionError, RasterFormatError
from .geogrid import EARTH_RADIUS_KM, GlobalGrid, area_from_row_counts, normalize_lon
from .gridio import fmt, read_raster, write_csv, write_raster

NODATA_U8 = 255
NODATA_U16 = 65535


def nodata_label(dtype):
    return int(np.iinfo(dtype).max)


def label_dtype(n_classes):
    if n_classes < NODATA_U8:
        return np.dtype(np.uint8)
    if n_classes < NODATA_U16:
        return np.dtype(np.uint16)
    raise DataError(f"{n_classes} classes do not fit a uint16 label grid")


# -- population density buckets --------------------------------------------


@dataclass(frozen=True)
class BucketSpec:
    n_buckets: int
    edges: tuple  # n_buckets + 1 ascending log10(density) values
    nodata_value: float | None = None

    def __post_init__(self):
        if self.n_buckets < 2:
            raise ValueError("need at least 2 buckets")
        edges = tuple(float(e) for e in self.edges)
        if len(edges) != self.n_buckets + 1:
            raise ValueError(f"expected {self.n_buckets + 1} edges, got {len(edges)}")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"bucket edges must be strictly ascending: {edges}")
        object.__setattr__(self, "edges", edges)

    def nodata_mask(self, density):
        return _nodata_mask(density, self.nodata_value)


def _nodata_mask(density, nodata_value):
    density = np.asarray(density)
    mask = np.isnan(density)
    if nodata_value is not None:
        mask |= density == nodata_value
    return mask


def build_buckets(density, n=4, nodata=None):
    """Equal-width buckets in log10 density over all inhabited valid pixels."""
    density = np.asarray(density, dtype=np.float64)
    valid = ~_nodata_mask(density, nodata)
    if np.any(density[valid] < 0):
        raise DataError("negative density outside the nodata sentinel")
    inhabited = density[valid & (density > 0)]
    if inhabited.size == 0:
        raise DataError("no valid pixel with positive density; bucket range is empty")
    lo, hi = np.log10(inhabited.min()), np.log10(inhabited.max())
    if not hi > lo:
        raise DataError(f"all inhabited pixels share density {inhabited.min()}; cannot bucket")
    width = (hi - lo) / n
    edges = [lo + k * width for k in range(n)] + [hi]
    return BucketSpec(n, tuple(edges), nodata)


def apply_buckets(density, spec):
    """Bucket index per pixel.

    Buckets are ``[e_k, e_{k+1})`` with the last one closed on both sides, so a
    density exactly on an interior edge goes to the upper bucket. Uninhabited
    land (density 0) is bucket 0 and nodata pixels get the nodata label.
    """
    density = np.asarray(density, dtype=np.float64)
    nodata = spec.nodata_mask(density)
    out = np.zeros(density.shape, dtype=np.uint8)
    pos = ~nodata & (density > 0)
    idx = np.searchsorted(np.asarray(spec.edges), np.log10(density[pos]), side="right") - 1
    out[pos] = np.clip(idx, 0, spec.n_buckets - 1)
    out[nodata] = NODATA_U8
    return out


def write_buckets_csv(path, spec):
    write_csv(path, ("bucket", "lower_log10", "upper_log10"),
              ((k, fmt(spec.edges[k]), fmt(spec.edges[k + 1])) for k in range(spec.n_buckets)))


# -- land cover merging -----------------------------------------------------

# ESA CCI land cover legend (level 1 and level 2 codes).
ESA_CCI_CODES = (
    10, 11, 12, 20, 30, 40, 50, 60, 61, 62, 70, 71, 72, 80, 81, 82, 90, 100,
    110, 120, 121, 122, 130, 140, 150, 151, 152, 153, 160, 170, 180, 190,
    200, 201, 202, 210, 220,
)
ESA_NODATA = 0

MERGED_CLASS_NAMES = (
    "cropland", "broadleaf_tree", "other_tree", "short_vegetation",
    "flooded_vegetation", "urban", "bare_water_ice",
)
# (first, last) level-1 code range per merged class
_MERGE_RANGES = ((10, 40), (50, 60), (70, 100), (110, 150), (160, 180), (190, 190), (200, 220))


@dataclass(frozen=True)
class MergeMap:
    mapping: dict
    nodata_codes: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        mapping = {int(k): int(v) for k, v in self.mapping.items()}
        if not mapping:
            raise ValueError("empty merge map")
        targets = set(mapping.values())
        if min(targets) < 0:
            raise ValueError("merged class indices must be >= 0")
        missing = set(range(max(targets) + 1)) - targets
        if missing:
            raise ValueError(f"merged classes {sorted(missing)} have no source code")
        object.__setattr__(self, "mapping", mapping)
        object.__setattr__(self, "nodata_codes", frozenset(int(c) for c in self.nodata_codes))

    @property
    def n_classes(self):
        return max(self.mapping.values()) + 1


def default_merge_map():
    mapping = {}
    for code in ESA_CCI_CODES:
        level1 = code - code % 10
        for cls, (first, last) in enumerate(_MERGE_RANGES):
            if first <= level1 <= last:
                mapping[code] = cls
    return MergeMap(mapping, frozenset({ESA_NODATA}))


def read_merge_csv(path, nodata_codes=(ESA_NODATA,)):
    mapping = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"src_code", "dst_class"} <= set(reader.fieldnames):
            raise RasterFormatError("merge CSV needs columns src_code,dst_class", path=path)
        for line, row in enumerate(reader, start=2):
            try:
                src, dst = int(row["src_code"]), int(row["dst_class"])
            except ValueError:
                raise RasterFormatError(f"line {line}: non-integer code", path=path) from None
            if src in mapping:
                raise RasterFormatError(f"line {line}: code {src} mapped twice", path=path)
            mapping[src] = dst
    return MergeMap(mapping, frozenset(nodata_codes))


def apply_merge(labels, merge):
    labels = np.asarray(labels)
    if labels.dtype.kind not in "ui":
        raise TypeError("land cover codes must be an integer grid")
    present = np.unique(labels)
    lut = np.full(int(present.max()) + 1, -1, dtype=np.int64)
    for code, cls in merge.mapping.items():
        if code < lut.size:
            lut[code] = cls
    for code in merge.nodata_codes:
        if code < lut.size:
            lut[code] = NODATA_U8
    unmapped = [int(c) for c in present if lut[c] < 0]
    if unmapped:
        raise DataError(f"land cover code(s) {unmapped} have no merge mapping")
    return lut.astype(np.uint8)[labels]


# -- mask sets ----------------------------------------------------------------


def class_areas(labels, grid, n_classes):
    """Exactly rounded spherical area of each class index."""
    labels = np.asarray(labels)
    row_area = grid.areas.areas
    rows, classes, counts = [], [], []
    for r in range(labels.shape[0]):
        cnt = np.bincount(labels[r], minlength=n_classes)[:n_classes]
        nz = np.flatnonzero(cnt)
        rows.append(np.full(nz.size, r))
        classes.append(nz)
        counts.append(cnt[nz])
    rows, classes, counts = (np.concatenate(a) for a in (rows, classes, counts))
    order = np.argsort(classes, kind="stable")
    rows, classes, counts = rows[order], classes[order], counts[order]
    bounds = np.searchsorted(classes, np.arange(n_classes + 1))
    out = np.zeros(n_classes)
    for c in range(n_classes):
        a, b = bounds[c], bounds[c + 1]
        if b > a:
            out[c] = area_from_row_counts(counts[a:b], row_area[rows[a:b]])
    return out


@dataclass(frozen=True, eq=False)
class ClassMaskSet:
    """Label grid plus the external id and spherical area of every class."""

    grid: GlobalGrid
    labels: np.ndarray
    class_ids: np.ndarray
    class_areas: np.ndarray

    @classmethod
    def from_labels(cls, labels, grid=None, class_ids=None, n_classes=None):
        labels = np.asarray(labels)
        if labels.dtype not in (np.uint8, np.uint16):
            raise TypeError(f"label grid must be uint8 or uint16, got {labels.dtype}")
        grid = grid or GlobalGrid(*labels.shape)
        if labels.shape != grid.shape:
            raise DimensionError(f"labels {labels.shape} do not match grid {grid.shape}")
        nodata = nodata_label(labels.dtype)
        if n_classes is None:
            n_classes = len(class_ids) if class_ids is not None else _max_label(labels, nodata) + 1
        if class_ids is None:
            class_ids = np.arange(n_classes)
        class_ids = np.asarray(class_ids, dtype=np.int64)
        if len(class_ids) != n_classes or len(np.unique(class_ids)) != n_classes:
            raise DataError("class ids must be unique, one per class")
        if _max_label(labels, nodata) >= n_classes:
            raise DataError(f"label grid uses labels beyond the {n_classes} declared classes")
        labels = labels.view()
        labels.setflags(write=False)
        return cls(grid, labels, class_ids, class_areas(labels, grid, n_classes))

    @property
    def class_count(self):
        return len(self.class_ids)

    @property
    def nodata(self):
        return nodata_label(self.labels.dtype)

    @property
    def nodata_area(self):
        return self.grid.areas.total - float(np.sum(self.class_areas))

    @property
    def empty_classes(self):
        """Class indices with zero area; these cannot carry a score."""
        return np.flatnonzero(self.class_areas == 0)

    def index_of(self, class_id):
        hits = np.flatnonzero(self.class_ids == class_id)
        if hits.size == 0:
            raise KeyError(f"unknown class id {class_id}")
        return int(hits[0])

    def indices_of(self, class_ids):
        """Vectorised class-id -> index lookup; unknown ids map to -1."""
        order = np.argsort(self.class_ids)
        sorted_ids = self.class_ids[order]
        class_ids = np.asarray(class_ids, dtype=np.int64)
        pos = np.clip(np.searchsorted(sorted_ids, class_ids), 0, len(sorted_ids) - 1)
        found = sorted_ids[pos] == class_ids
        return np.where(found, order[pos], -1)


def _max_label(labels, nodata):
    present = np.unique(labels)
    present = present[present != nodata]
    return int(present.max()) if present.size else -1


def mask_area(masks, class_index):
    if not 0 <= class_index < masks.class_count:
        raise IndexError(f"class {class_index} out of range [0, {masks.class_count})")
    return float(masks.class_areas[class_index])


def write_classes_csv(path, masks):
    pixels = np.bincount(masks.labels.ravel(), minlength=masks.class_count)[: masks.class_count]
    write_csv(path, ("class_index", "class_id", "pixels", "area_km2"),
              ((k, int(masks.class_ids[k]), int(pixels[k]), fmt(masks.class_areas[k]))
               for k in range(masks.class_count)))


def read_class_ids(path):
    ids = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "class_id" not in reader.fieldnames:
            raise RasterFormatError("classes CSV needs a class_id column", path=path)
        for line, row in enumerate(reader, start=2):
            if int(row["class_index"]) != len(ids):
                raise RasterFormatError(f"line {line}: class_index out of sequence", path=path)
            ids.append(int(row["class_id"]))
    return np.array(ids, dtype=np.int64)


def mask_paths(prefix):
    prefix = Path(prefix)
    return prefix.with_name(prefix.name + ".grv"), prefix.with_name(prefix.name + ".classes.csv")


def save_mask_set(prefix, masks):
    grv, classes = mask_paths(prefix)
    write_raster(grv, masks.labels)
    write_classes_csv(classes, masks)


def load_mask_set(prefix, earth_radius=None, mmap=False):
    grv, classes = mask_paths(prefix)
    labels = read_raster(grv, mmap=mmap)
    grid = GlobalGrid(*labels.shape, earth_radius or EARTH_RADIUS_KM)
    return ClassMaskSet.from_labels(labels, grid, class_ids=read_class_ids(classes))


# -- cell rasterization -------------------------------------------------------


@dataclass(frozen=True)
class CellRect:
    cell_id: int
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not -90.0 <= self.lat_min < self.lat_max <= 90.0:
            raise DataError(f"cell {self.cell_id}: bad latitude span [{self.lat_min}, {self.lat_max}]")
        if not (-180.0 <= self.lon_min <= 180.0 and -180.0 <= self.lon_max <= 180.0):
            raise DataError(f"cell {self.cell_id}: longitude outside [-180, 180]")
        if self.lon_min == self.lon_max:
            raise DataError(f"cell {self.cell_id}: zero longitude span")


@dataclass(frozen=True, eq=False)
class CellPolygon:
    cell_id: int
    vertices: np.ndarray  # (n, 2) columns lon, lat

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(v) > 1 and np.array_equal(v[0], v[-1]):
            v = v[:-1]
        if len(v) < 3:
            raise DataError(f"cell {self.cell_id}: polygon needs at least 3 vertices")
        object.__setattr__(self, "vertices", v)


def _rect_pixels(rect, grid):
    lat_c, lon_c = grid.row_centers(), grid.col_centers()
    rows = np.flatnonzero((lat_c > rect.lat_min) & (lat_c <= rect.lat_max))
    lon_min, lon_max = normalize_lon(rect.lon_min), rect.lon_max
    if rect.lon_min < rect.lon_max:
        cols = np.flatnonzero((lon_c >= rect.lon_min) & (lon_c < rect.lon_max))
    else:  # crosses the antimeridian
        cols = np.flatnonzero((lon_c >= lon_min) | (lon_c < lon_max))
    return rows, cols


def points_in_polygon(px, py, vertices):
    """Even-odd containment of points (px, py) in a lon/lat polygon."""
    inside = np.zeros(np.broadcast(px, py).shape, dtype=bool)
    x, y = vertices[:, 0], vertices[:, 1]
    for k in range(len(vertices)):
        x1, y1, x2, y2 = x[k - 1], y[k - 1], x[k], y[k]
        if y1 == y2:
            continue
        crosses = (y1 > py) != (y2 > py)
        x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < x_at)
    return inside


def _polygon_pixels(poly, grid):
    lat_c, lon_c = grid.row_centers(), grid.col_centers()
    lon, lat = poly.vertices[:, 0], poly.vertices[:, 1]
    rows = np.flatnonzero((lat_c >= lat.min()) & (lat_c <= lat.max()))
    cols = np.flatnonzero((lon_c >= lon.min()) & (lon_c <= lon.max()))
    if rows.size == 0 or cols.size == 0:
        return rows, cols, np.zeros((rows.size, cols.size), dtype=bool)
    inside = points_in_polygon(lon_c[cols][None, :], lat_c[rows][:, None], poly.vertices)
    return rows, cols, inside


def rasterize_cells(cells, grid):
    """Label every pixel whose center lies in a cell; others get nodata.

    Rectangles own their north and west edges (``lat_min < lat <= lat_max``,
    ``lon_min <= lon < lon_max``), matching the south/east ownership of grid
    pixels. Class index ``k`` corresponds to ``cells[k]``.
    """
    cells = list(cells)
    ids = np.array([c.cell_id for c in cells], dtype=np.int64)
    if len(np.unique(ids)) != len(ids):
        raise DataError("duplicate cell ids")
    dtype = label_dtype(len(cells))
    nodata = nodata_label(dtype)
    labels = np.full(grid.shape, nodata, dtype=dtype)
    for k, cell in enumerate(cells):
        if isinstance(cell, CellRect):
            rows, cols = _rect_pixels(cell, grid)
            inside = np.ones((rows.size, cols.size), dtype=bool)
        else:
            rows, cols, inside = _polygon_pixels(cell, grid)
        if rows.size == 0 or cols.size == 0:
            continue
        block = labels[np.ix_(rows, cols)]
        clash = inside & (block != nodata)
        if clash.any():
            i, j = np.argwhere(clash)[0]
            raise CellConflictError(int(rows[i]), int(cols[j]), int(ids[block[i, j]]), int(cell.cell_id))
        block[inside] = k
        labels[np.ix_(rows, cols)] = block
    return ClassMaskSet.from_labels(labels, grid, class_ids=ids)


def read_cells_csv(path):
    cells = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = ("cell_id", "lat_min", "lat_max", "lon_min", "lon_max")
        if reader.fieldnames is None or not set(need) <= set(reader.fieldnames):
            raise RasterFormatError(f"cells CSV needs columns {','.join(need)}", path=path)
        for line, row in enumerate(reader, start=2):
            try:
                cells.append(CellRect(int(row["cell_id"]), float(row["lat_min"]), float(row["lat_max"]),
                                      float(row["lon_min"]), float(row["lon_max"])))
            except ValueError as exc:
                if isinstance(exc, DataError):
                    raise
                raise RasterFormatError(f"line {line}: {exc}", path=path) from None
    return cells


def read_polygons(path):
    """Parse ``cell_id;lon lat,lon lat,...`` lines."""
    cells = []
    with open(path, encoding="utf-8") as fh:
        for line, text in enumerate(fh, start=1):
            text = text.strip()
            if not text or text.startswith("#"):
                continue
            try:
                cell_id, coords = text.split(";", 1)
                verts = [tuple(float(v) for v in pair.split()) for pair in coords.split(",")]
                if any(len(v) != 2 for v in verts):
                    raise ValueError("vertex must be 'lon lat'")
                cells.append(CellPolygon(int(cell_id), np.array(verts)))
            except ValueError as exc:
                if isinstance(exc, DataError):
                    raise
                raise RasterFormatError(f"line {line}: {exc}", path=path) from None
    return cells
