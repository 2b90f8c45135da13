"""Per-image probability fields in factorized form.

A predictor's map is ``P_f(q) = p_j / area(m_j)`` for the class ``j`` under
pixel ``q``; an ensemble is the pixelwise product of such maps. Instead of
materialising 58M floats per image, each factor keeps the shared label grid
and a small per-class value table, and pixels are evaluated on the fly as a
product of table lookups taken in factor order.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, ResourceError, ZeroAreaError
from .attribmask import nodata_label

DENSIFY_MAX_BYTES = 2 << 30


@dataclass(frozen=True, eq=False)
class Factor:
    """Shared label grid plus a value per label (nodata maps to 0)."""

    labels: np.ndarray
    table: np.ndarray
    name: str = ""

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.dtype not in (np.uint8, np.uint16):
            raise TypeError("factor labels must be a 2-D uint8 or uint16 grid")
        table = np.asarray(self.table, dtype=np.float64)
        size = nodata_label(labels.dtype) + 1
        if table.shape != (size,):
            raise DimensionError(f"value table for {labels.dtype} labels must have {size} entries")
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise DataError("value table entries must be finite and >= 0")
        if table[-1] != 0:
            raise DataError("nodata label must map to 0")
        table.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "table", table)

    @property
    def shape(self):
        return self.labels.shape

    def scaled(self, c):
        return Factor(self.labels, self.table * c, self.name)


@dataclass(frozen=True, eq=False)
class FactorizedMap:
    shape: tuple
    factors: tuple = ()

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        factors = tuple(self.factors)
        for f in factors:
            if f.shape != shape:
                raise DimensionError(f"factor {f.name or '?'} has shape {f.shape}, map is {shape}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "factors", factors)

    def evaluate(self, row, col):
        value = 1.0
        for f in self.factors:
            value *= f.table[f.labels[row, col]]
        return float(value)

    def kernel_args(self):
        return tuple((np.asarray(f.labels), f.table) for f in self.factors)


def _table_for(masks):
    return np.zeros(nodata_label(masks.labels.dtype) + 1)


def assemble(scores, masks, name=""):
    """Single-factor map with value p_j / area(m_j) on class j."""
    idx = masks.indices_of(scores.ids)
    unknown = scores.ids[idx < 0]
    if unknown.size:
        raise DataError(f"score ids {unknown[:10].tolist()} are not classes of this mask set")
    probs = scores.probs
    areas = masks.class_areas[idx]
    bad = (probs > 0) & (areas == 0)
    if bad.any():
        raise ZeroAreaError(int(scores.ids[np.argmax(bad)]))
    table = _table_for(masks)
    table[idx] = np.divide(probs, areas, out=np.zeros_like(probs), where=probs > 0)
    return FactorizedMap(masks.labels.shape, (Factor(masks.labels, table, name),))


def product(maps):
    """Concatenate factor lists; evaluation becomes the pixelwise product."""
    maps = list(maps)
    if not maps:
        raise ValueError("product of an empty list needs an explicit shape")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise DimensionError(f"cannot multiply maps of shapes {shape} and {m.shape}")
    return FactorizedMap(shape, tuple(f for m in maps for f in m.factors))


def urban_prior(masks, top_classes, name="urban_prior"):
    """Indicator factor: 1 on the listed classes (by class id), 0 elsewhere."""
    top_classes = list(top_classes)
    if not top_classes:
        raise ValueError("urban prior needs at least one class")
    idx = masks.indices_of(top_classes)
    if np.any(idx < 0):
        raise DataError(f"unknown classes {[c for c, i in zip(top_classes, idx) if i < 0]}")
    table = _table_for(masks)
    table[idx] = 1.0
    return FactorizedMap(masks.labels.shape, (Factor(masks.labels, table, name),))


def uniform_factor(shape, value=1.0):
    table = np.zeros(256)
    table[0] = value
    return FactorizedMap(shape, (Factor(np.zeros(shape, dtype=np.uint8), table, "uniform"),))


def densify(fmap, max_bytes=DENSIFY_MAX_BYTES):
    """Explicit per-pixel products, multiplied in factor order."""
    h, w = fmap.shape
    need = h * w * 8 * (2 if fmap.factors else 1)
    if need > max_bytes:
        raise ResourceError(f"densifying {h}x{w} needs {need} bytes, budget is {max_bytes}")
    out = np.ones((h, w))
    for f in fmap.factors:
        out *= f.table[f.labels]
    return out
