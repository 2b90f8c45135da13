"""Slow reference implementations for auditing the fast paths.

Everything here is written pixel by pixel with plain Python loops or the
most literal numpy expression, and refuses grids above ``MAX_PIXELS``.
Nothing in this module calls the fast evaluator or the factorized maps.
"""

import math
from collections import Counter

import numpy as np

from .errors import ResourceError, ZeroAreaError
from .geogrid import haversine

MAX_PIXELS = 10 ** 6


def _guard(shape):
    n = int(np.prod(shape))
    if n > MAX_PIXELS:
        raise ResourceError(f"oracle refuses {shape} ({n} pixels > {MAX_PIXELS})")


def _pixel_areas(areas):
    return areas.dense()


def _gt_pixel(grid, gt):
    # independent restatement of the ownership rule
    row = min(int(math.floor((90.0 - gt.lat) * grid.height / 180.0)), grid.height - 1)
    col = int(math.floor((gt.lon + 180.0) * grid.width / 360.0)) % grid.width
    return row, col


def oracle_min_area(dense, gt, areas):
    """Sort pixels by value (descending), take whole tie groups, stop once the
    group holding the ground-truth pixel is in; return the accumulated area."""
    dense = np.asarray(dense, dtype=np.float64)
    _guard(dense.shape)
    pix = _pixel_areas(areas)
    r, c = _gt_pixel(areas.grid, gt)
    target = dense[r, c]
    values = dense.ravel().tolist()
    pa = pix.ravel().tolist()
    order = sorted(range(len(values)), key=lambda k: -values[k])
    taken = []
    k = 0
    while k < len(order):
        group_value = values[order[k]]
        while k < len(order) and values[order[k]] == group_value:
            taken.append(pa[order[k]])
            k += 1
        if group_value == target:
            break
    return math.fsum(taken)


def oracle_argmax(dense):
    """First maximum in row-major order, by exhaustive scan."""
    dense = np.asarray(dense)
    _guard(dense.shape)
    best, where = None, None
    for i in range(dense.shape[0]):
        for j in range(dense.shape[1]):
            if best is None or dense[i, j] > best:
                best, where = dense[i, j], (i, j)
    return where, float(best)


def oracle_dense_ensemble(score_sets, mask_sets):
    """Materialise every P_f = sum_j p_j * m_j / area(m_j) and multiply them."""
    if len(score_sets) != len(mask_sets):
        raise ValueError("one score vector per mask set")
    if not mask_sets:
        raise ValueError("need at least one predictor")
    shape = mask_sets[0].labels.shape
    _guard(shape)
    pix = _pixel_areas(mask_sets[0].grid.areas)
    out = np.ones(shape)
    for scores, masks in zip(score_sets, mask_sets):
        p_f = np.zeros(shape)
        for cid, p in zip(scores.ids.tolist(), scores.probs.tolist()):
            k = int(np.flatnonzero(masks.class_ids == cid)[0])
            m = (masks.labels == k).astype(np.float64)
            area = math.fsum(pix[m == 1].tolist())
            if area == 0:
                if p > 0:
                    raise ZeroAreaError(cid)
                continue
            p_f += p * m / area
        out *= p_f
    return out


def oracle_mode_downsample(src, factor_y, factor_x):
    src = np.asarray(src)
    _guard(src.shape)
    h, w = src.shape[0] // factor_y, src.shape[1] // factor_x
    out = np.empty((h, w), dtype=src.dtype)
    for i in range(h):
        for j in range(w):
            block = src[i * factor_y:(i + 1) * factor_y, j * factor_x:(j + 1) * factor_x]
            counts = Counter(block.ravel().tolist())
            top = max(counts.values())
            out[i, j] = min(v for v, n in counts.items() if n == top)
    return out


def oracle_evaluate(dense, gt, areas):
    """(min_area, p_star, top1 pixel or None, gcd_km) computed from a dense map."""
    grid = areas.grid
    r, c = _gt_pixel(grid, gt)
    (i, j), best = oracle_argmax(dense)
    min_area = oracle_min_area(dense, gt, areas)
    if best <= 0:
        return min_area, float(dense[r, c]), None, math.nan
    lat = 90.0 - (i + 0.5) * (180.0 / grid.height)
    lon = -180.0 + (j + 0.5) * (360.0 / grid.width)
    return min_area, float(dense[r, c]), (i, j), float(haversine(gt.lat, gt.lon, lat, lon, grid.earth_radius))
