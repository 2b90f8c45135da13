import sys
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import settings

from geoensemble.attribmask import NODATA_U8, ClassMaskSet
from geoensemble.geogrid import GeoPoint, GlobalGrid
from geoensemble.gridio import ScoreVector

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@dataclass
class Instance:
    grid: GlobalGrid
    masks: list
    scores: list
    gt: GeoPoint


def random_instance(rng, max_h=90, max_w=180, max_factors=4):
    """Random toy ensemble with ties, empty classes and zero scores."""
    h = int(rng.integers(1, max_h + 1))
    w = int(rng.integers(1, max_w + 1))
    grid = GlobalGrid(h, w)
    masks, scores = [], []
    for _ in range(int(rng.integers(1, max_factors + 1))):
        n_classes = int(rng.integers(1, 9))
        labels = rng.integers(0, n_classes, size=(h, w)).astype(np.uint8)
        sparsity = rng.choice([0.0, 0.0, 0.2, 0.7])
        labels[rng.random((h, w)) < sparsity] = NODATA_U8
        m = ClassMaskSet.from_labels(labels, grid, n_classes=n_classes)
        if rng.random() < 0.4:
            probs = rng.choice([0.0, 0.25, 0.5], size=n_classes)
        else:
            probs = rng.random(n_classes) * (rng.random(n_classes) > 0.2)
        probs[m.class_areas == 0] = 0.0
        if probs.sum() == 0:
            nonempty = np.flatnonzero(m.class_areas > 0)
            if nonempty.size:
                probs[nonempty[0]] = 1.0
        keep = rng.random(n_classes) < 0.9
        keep[np.argmax(probs)] = True
        masks.append(m)
        scores.append(ScoreVector(np.flatnonzero(keep), probs[keep]))
    if rng.random() < 0.5:
        r, c = int(rng.integers(0, h)), int(rng.integers(0, w))
        gt = grid.index_to_center(r, c)
    else:
        gt = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
    return Instance(grid, masks, scores, gt)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_grid():
    return GlobalGrid(6, 12)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
