"""Recall-vs-area evaluation, GCD top-1 and bucket-balanced resampling.

For one image the minimal containing area is the total area of all pixels
whose ensembled value is >= the value at the ground-truth pixel. A single
pass over the grid counts such pixels per row (exact integers); the area is
then the exactly rounded dot product with the per-row pixel areas, so the
result does not depend on traversal order.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from numba import literal_unroll, njit

from .errors import BalanceError, JoinError, NoPredictionError
from .geogrid import (
    EARTH_RADIUS_KM,
    GeoPoint,
    area_from_row_counts,
    haversine,
    latlon_to_index,
    spherical_cap_area,
)
from .gridio import fmt, write_csv

GCD_THRESHOLDS_KM = (1.0, 25.0, 200.0, 750.0, 2500.0)


@njit(nogil=True, cache=True)
def _scan(factors, width, gt_row, gt_col, counts):
    pstar = 1.0
    for f in literal_unroll(factors):
        pstar *= f[1][f[0][gt_row, gt_col]]
    best = -1.0
    best_row = 0
    best_col = 0
    for i in range(counts.shape[0]):
        n = 0
        for j in range(width):
            v = 1.0
            for f in literal_unroll(factors):
                v *= f[1][f[0][i, j]]
            if v >= pstar:
                n += 1
            if v > best:
                best = v
                best_row = i
                best_col = j
        counts[i] = n
    return pstar, best, best_row, best_col


@dataclass(frozen=True)
class ScanResult:
    p_star: float
    row_counts: np.ndarray
    best_value: float
    best_pixel: tuple


def scan(fmap, gt_row, gt_col):
    """One streaming pass: value at the ground truth, per-row counts of
    pixels >= that value, and the first (row-major) maximum."""
    h, w = fmap.shape
    counts = np.empty(h, dtype=np.int64)
    if not fmap.factors:
        counts[:] = w
        return ScanResult(1.0, counts, 1.0, (0, 0))
    p, best, br, bc = _scan(fmap.kernel_args(), w, gt_row, gt_col, counts)
    return ScanResult(float(p), counts, float(best), (int(br), int(bc)))


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    min_area: float
    p_star: float
    top1: GeoPoint | None
    gcd_error: float

    @property
    def found_at_full_budget(self):
        """True when the ground truth scored 0 and the whole grid was needed."""
        return self.p_star == 0.0


def _record(image_id, res, gt, grid):
    min_area = area_from_row_counts(res.row_counts, grid.areas.areas)
    if res.best_value > 0:
        top1 = grid.index_to_center(*res.best_pixel)
        err = float(haversine(gt.lat, gt.lon, top1.lat, top1.lon, grid.earth_radius))
    else:
        top1, err = None, math.nan
    return EvalRecord(image_id, min_area, res.p_star, top1, err)


def min_containing_area(fmap, gt, areas, image_id=""):
    """Evaluate one image: smallest accumulated area holding the ground truth.

    Pixels tied with the ground-truth value count towards the area. The top-1
    fields are filled from the same pass (None / NaN for an all-zero map).
    """
    grid = areas.grid
    if fmap.shape != grid.shape:
        raise ValueError(f"map {fmap.shape} and area grid {grid.shape} differ")
    res = scan(fmap, *latlon_to_index(grid, gt))
    return _record(image_id, res, gt, grid)


def gcd_top1(fmap, gt, grid):
    """Center of the highest-valued pixel and its great-circle error in km."""
    res = scan(fmap, 0, 0)
    if res.best_value <= 0:
        raise NoPredictionError("map is zero everywhere; no top-1 location")
    top1 = grid.index_to_center(*res.best_pixel)
    return top1, float(haversine(gt.lat, gt.lon, top1.lat, top1.lon, grid.earth_radius))


# -- curves and tables -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class RvACurve:
    areas: np.ndarray
    recall: np.ndarray

    def rows(self):
        return list(zip(self.areas.tolist(), self.recall.tolist()))


def _min_areas(records):
    return np.array([r.min_area if isinstance(r, EvalRecord) else r for r in records], dtype=np.float64)


def recall_at(min_areas, thresholds):
    """Fraction of images with min_area <= each threshold."""
    a = np.sort(np.asarray(min_areas, dtype=np.float64))
    hits = np.searchsorted(a, np.asarray(thresholds, dtype=np.float64), side="right")
    return hits / len(a)


def rva_curve(records, thresholds="auto", total_area=None):
    """Recall as a function of area budget.

    ``"auto"`` evaluates at every distinct min_area, which is the exact
    empirical CDF. When ``total_area`` is given the curve is extended to that
    budget, where recall is 1 by construction.
    """
    a = _min_areas(records)
    if a.size == 0:
        raise ValueError("rva_curve needs at least one record")
    if isinstance(thresholds, str):
        if thresholds != "auto":
            raise ValueError(f"unknown threshold mode {thresholds!r}")
        t = np.unique(a)
    else:
        t = np.sort(np.asarray(thresholds, dtype=np.float64))
    if total_area is not None and (t.size == 0 or t[-1] < total_area):
        t = np.append(t, total_area)
    return RvACurve(t, recall_at(a, t))


def gcd_recall(errors, thresholds=GCD_THRESHOLDS_KM):
    """Fraction of errors <= each threshold; NaN (no prediction) never counts."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("gcd_recall needs at least one error")
    return np.array([np.count_nonzero(e <= t) / e.size for t in thresholds])


def cap_areas(radius=EARTH_RADIUS_KM, thresholds=GCD_THRESHOLDS_KM):
    return [spherical_cap_area(t, radius) for t in thresholds]


TABLE_HEADER = (
    ("model", "subset", "n_images")
    + tuple(f"rva_cap{t:g}km" for t in GCD_THRESHOLDS_KM)
    + tuple(f"gcd_{t:g}km" for t in GCD_THRESHOLDS_KM)
)


def threshold_row(model, subset, records, radius=EARTH_RADIUS_KM):
    """Recall at the spherical-cap areas of the GCD radii, then GCD top-1 recall."""
    rva = recall_at(_min_areas(records), cap_areas(radius))
    gcd = gcd_recall([r.gcd_error for r in records])
    return (model, subset, len(records)) + tuple(rva.tolist()) + tuple(gcd.tolist())


# -- bucket breakdowns -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class CurveDelta:
    areas: np.ndarray
    recall: np.ndarray
    baseline: np.ndarray

    @property
    def delta(self):
        return self.recall - self.baseline


def compare_curves(records, baseline, total_area=None):
    """Recall of ``records`` minus ``baseline`` on the union of their budgets."""
    a, b = _join(records, baseline)
    t = np.unique(np.concatenate([a, b]))
    if total_area is not None and t[-1] < total_area:
        t = np.append(t, total_area)
    return CurveDelta(t, recall_at(a, t), recall_at(b, t))


def _join(records, baseline):
    ids_a = [r.image_id for r in records]
    by_id = {r.image_id: r for r in baseline}
    if len(by_id) != len(ids_a) or set(ids_a) != set(by_id):
        missing = sorted(set(ids_a) ^ set(by_id))
        raise JoinError(f"record sets differ in images, e.g. {missing[:5]}")
    return _min_areas(records), _min_areas([by_id[i] for i in ids_a])


@dataclass(frozen=True, eq=False)
class BucketBreakdown:
    curve: RvACurve
    delta: CurveDelta | None


def per_bucket_breakdown(records, bucket_labels, baseline=None, total_area=None):
    """One curve per bucket, plus deltas against ``baseline`` when given.

    ``bucket_labels`` maps image_id -> bucket.
    """
    try:
        buckets = [int(bucket_labels[r.image_id]) for r in records]
    except KeyError as exc:
        raise JoinError(f"no bucket for image {exc.args[0]!r}") from None
    base_by_id = None
    if baseline is not None:
        base_by_id = {r.image_id: r for r in baseline}
        _join(records, baseline)
    out = {}
    for b in sorted(set(buckets)):
        sel = [r for r, k in zip(records, buckets) if k == b]
        delta = None
        if base_by_id is not None:
            delta = compare_curves(sel, [base_by_id[r.image_id] for r in sel], total_area)
        out[b] = BucketBreakdown(rva_curve(sel, "auto", total_area), delta)
    return out


# -- deterministic resampling ----------------------------------------------

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Counter-based 64-bit generator (Steele, Lea & Flood's SplitMix64).

    Output k (k = 1, 2, ...) is mix(seed + k * 0x9E3779B97F4A7C15 mod 2**64)
    where mix is the murmur3-style finaliser with constants 0xBF58476D1CE4E5B9
    and 0x94D049BB133111EB and shifts 30, 27, 31.
    """

    GAMMA = 0x9E3779B97F4A7C15

    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next_u64(self):
        self.state = (self.state + self.GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, n):
        """Uniform integer in [0, n) by rejection of the biased tail."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n


def rebalance_indices(bucket_labels, seed, n_buckets=None):
    """Manifest indices of an equal-count sample from every bucket.

    Images with a negative label belong to no bucket and are dropped. Buckets
    are visited in ascending order; within each, a partial Fisher-Yates shuffle
    driven by one SplitMix64 stream picks n_min members, which are then
    emitted in manifest order.
    """
    labels = np.asarray(bucket_labels, dtype=np.int64)
    if n_buckets is None:
        n_buckets = int(labels.max()) + 1 if labels.size else 0
    if n_buckets < 1:
        raise BalanceError([0])
    if np.any(labels >= n_buckets):
        raise ValueError(f"bucket label beyond the {n_buckets} declared buckets")
    members = [np.flatnonzero(labels == b).tolist() for b in range(n_buckets)]
    empty = [b for b, m in enumerate(members) if not m]
    if empty:
        raise BalanceError(empty)
    n_min = min(len(m) for m in members)
    rng = SplitMix64(seed)
    out = []
    for pool in members:
        pool = list(pool)
        for i in range(n_min):
            j = i + rng.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        out.extend(sorted(pool[:n_min]))
    return np.array(out, dtype=np.int64)


def rebalance(manifest, bucket_labels, seed, n_buckets=None):
    return manifest.subset(rebalance_indices(bucket_labels, seed, n_buckets))


# -- CSV output ------------------------------------------------------------

EVAL_HEADER = ("image_id", "min_area_km2", "p_star", "top1_lat", "top1_lon", "gcd_km", "bucket")


def write_eval_csv(path, records, buckets=None):
    rows = []
    for k, r in enumerate(records):
        lat = r.top1.lat if r.top1 else None
        lon = r.top1.lon if r.top1 else None
        b = "" if buckets is None or buckets[k] < 0 else int(buckets[k])
        rows.append((r.image_id, fmt(r.min_area), fmt(r.p_star), fmt(lat), fmt(lon), fmt(r.gcd_error), b))
    write_csv(path, EVAL_HEADER, rows)


def read_eval_csv(path):
    records, buckets = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            top1 = GeoPoint(float(row["top1_lat"]), float(row["top1_lon"])) if row["top1_lat"] else None
            gcd = float(row["gcd_km"]) if row["gcd_km"] else math.nan
            records.append(EvalRecord(row["image_id"], float(row["min_area_km2"]), float(row["p_star"]), top1, gcd))
            buckets.append(int(row["bucket"]) if row.get("bucket") else -1)
    return records, np.array(buckets, dtype=np.int64)


def write_curve_csv(path, curve):
    write_csv(path, ("area_km2", "recall"), ((fmt(a), fmt(r)) for a, r in curve.rows()))


def write_delta_csv(path, delta):
    write_csv(path, ("area_km2", "recall", "baseline_recall", "delta"),
              ((fmt(a), fmt(r), fmt(b), fmt(d)) for a, r, b, d in
               zip(delta.areas, delta.recall, delta.baseline, delta.delta)))
