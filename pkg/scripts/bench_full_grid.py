"""Time single-image evaluation on the full 5400x10800 grid.

    python3 scripts/bench_full_grid.py [--factors 3] [--runs 7]

Builds random label grids (one uint16 cell layer with 3000 classes, the rest
uint8), warms the kernel up once, then reports min/median/max wall time of
``min_containing_area`` over several ground-truth points.
"""

import argparse
import statistics
import time

import numpy as np

from geoensemble.ensemble import Factor, FactorizedMap, densify
from geoensemble.evalrva import min_containing_area
from geoensemble.geogrid import GeoPoint, GlobalGrid


def random_map(grid, n_factors, rng):
    specs = [(3000, np.uint16), (4, np.uint8), (7, np.uint8), (12, np.uint8)]
    factors = []
    for n, dtype in (specs * n_factors)[:n_factors]:
        table = np.zeros(np.iinfo(dtype).max + 1)
        table[:n] = rng.random(n)
        factors.append(Factor(rng.integers(0, n, size=grid.shape, dtype=dtype), table))
    return FactorizedMap(grid.shape, tuple(factors))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--height", type=int, default=5400)
    parser.add_argument("--width", type=int, default=10800)
    parser.add_argument("--factors", type=int, default=3)
    parser.add_argument("--runs", type=int, default=7)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--dense", action="store_true", help="also time densify (needs ~470 MB)")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    grid = GlobalGrid(args.height, args.width)
    fmap = random_map(grid, args.factors, rng)
    min_containing_area(fmap, GeoPoint(0, 0), grid.areas)  # warm-up
    times = []
    for _ in range(args.runs):
        gt = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
        t0 = time.perf_counter()
        min_containing_area(fmap, gt, grid.areas)
        times.append(1000 * (time.perf_counter() - t0))
    print(f"{args.height}x{args.width}, {args.factors} factors, {args.runs} runs: "
          f"min {min(times):.1f} ms, median {statistics.median(times):.1f} ms, max {max(times):.1f} ms")
    if args.dense:
        t0 = time.perf_counter()
        densify(fmap)
        print(f"densify: {1000 * (time.perf_counter() - t0):.1f} ms")


if __name__ == "__main__":
    main()
