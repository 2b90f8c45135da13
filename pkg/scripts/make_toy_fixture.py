"""Generate the toy end-to-end fixture under tests/fixtures/toy.

Inputs: a 60x120 population-density raster, a 120x240 land-cover code
raster, two rectangle partitions standing in for two base geolocation
models, 20 images, and per-image score files for every member. Outputs: the
CLI's prepare/eval products for both base models, with the second compared
against the first and a bucket-rebalanced subset.

    python3 scripts/make_toy_fixture.py [--out tests/fixtures/toy]

Everything is derived from a fixed seed, so rerunning reproduces every byte.
"""

import argparse
from pathlib import Path

import numpy as np

from geoensemble import attribmask, gridio
from geoensemble.cli import main as cli_main
from geoensemble.geogrid import GlobalGrid, latlon_to_index_arrays

SEED = 20240917
GRID = (30, 60)
N_IMAGES = 20
PER_BUCKET = (8, 5, 4, 3)  # images drawn from LS buckets 0..3
MODELS = {"gA": (30, 60), "gB": (45, 45)}  # cell size (deg lat, deg lon)


def _density(rng):
    # smooth log-density field with a few nodata holes
    y, x = np.mgrid[0:60, 0:120]
    field = 1.5 + 1.2 * np.sin(x / 9.0) * np.cos(y / 7.0) + 0.4 * rng.standard_normal((60, 120))
    density = (10.0 ** field).astype(np.float32)
    density[rng.random((60, 120)) < 0.03] = np.nan
    return density


def _landcover(rng):
    blocks = rng.choice(attribmask.ESA_CCI_CODES, size=(12, 24))
    codes = np.kron(blocks, np.ones((10, 10), dtype=np.int64)).astype(np.uint8)
    codes[rng.random(codes.shape) < 0.01] = attribmask.ESA_NODATA
    return codes


def _cells(step_lat, step_lon):
    return [attribmask.CellRect(100 * k + 7, lat, lat + step_lat, lon, lon + step_lon)
            for k, (lat, lon) in enumerate((a, b) for a in range(-90, 90, step_lat)
                                           for b in range(-180, 180, step_lon))]


def _pick_images(rng, density, grid):
    spec = attribmask.build_buckets(density, 4)
    ls = gridio.downsample(attribmask.apply_buckets(density, spec), grid, "mode")
    lats, lons = [], []
    for bucket, n in enumerate(PER_BUCKET):
        rows, cols = np.nonzero(ls == bucket)
        for k in rng.choice(len(rows), size=n, replace=False):
            # a point strictly inside the pixel so its bucket is unambiguous
            lats.append(round(90.0 - (rows[k] + rng.uniform(0.1, 0.9)) * grid.dlat, 6))
            lons.append(round(-180.0 + (cols[k] + rng.uniform(0.1, 0.9)) * grid.dlon, 6))
    order = rng.permutation(N_IMAGES)
    ids = tuple(f"img{k:02d}" for k in range(N_IMAGES))
    return gridio.ImageManifest(ids, np.array(lats)[order], np.array(lons)[order])


def _peaked_scores(rng, n, hit, sharpness):
    p = rng.dirichlet(np.full(n, 0.5))
    if hit is not None:
        p[hit] += sharpness
    p[rng.random(n) < 0.2] = 0.0
    if p.sum() == 0:
        p[0] = 1.0
    return np.round(p / p.sum(), 6)


def _scores_file(path, manifest, class_ids, truth, rng, sharpness, drop=()):
    scores = {}
    for k, image_id in enumerate(manifest.image_ids):
        if image_id in drop:
            continue
        p = _peaked_scores(rng, len(class_ids), truth[k], sharpness)
        keep = p > 0
        scores[image_id] = gridio.ScoreVector(np.asarray(class_ids)[keep], p[keep])
    gridio.write_scores(path, scores)


def make_inputs(out):
    rng = np.random.default_rng(SEED)
    grid = GlobalGrid(*GRID)
    inputs = Path(out) / "inputs"
    inputs.mkdir(parents=True, exist_ok=True)
    density = _density(rng)
    gridio.write_raster(inputs / "density.grv", density)
    gridio.write_raster(inputs / "landcover.grv", _landcover(rng))
    manifest = _pick_images(rng, density, grid)
    gridio.write_manifest(inputs / "manifest.csv", manifest)

    for name, (slat, slon) in MODELS.items():
        cells = _cells(slat, slon)
        gridio.write_csv(inputs / f"{name}.cells.csv", ("cell_id", "lat_min", "lat_max", "lon_min", "lon_max"),
                         [(c.cell_id, c.lat_min, c.lat_max, c.lon_min, c.lon_max) for c in cells])
        masks = attribmask.rasterize_cells(cells, grid)
        truth, _ = gridio.label_images(manifest, masks.labels)
        truth = [int(masks.class_ids[t]) if t >= 0 else None for t in truth]
        ids = masks.class_ids.tolist()
        truth_idx = [ids.index(t) if t is not None else None for t in truth]
        _scores_file(inputs / f"{name}.scores.csv", manifest, ids, truth_idx, rng,
                     sharpness=2.0 if name == "gA" else 0.7)

    for attr, n in (("ls", 4), ("lc", 7)):
        # attribute models know the truth only loosely; one image lacks LC scores
        drop = ("img13",) if attr == "lc" else ()
        _scores_file(inputs / f"{attr}.scores.csv", manifest, list(range(n)), [None] * N_IMAGES, rng, 0.0, drop)
    return inputs


def run_pipeline(inputs, out):
    inputs, out = Path(inputs), Path(out)
    grid_flags = ["--height", str(GRID[0]), "--width", str(GRID[1])]

    def cli(*argv):
        code = cli_main(list(argv))
        if code != 0:
            raise RuntimeError(f"geoensemble {' '.join(argv)} exited {code}")

    cli("prepare", *grid_flags, "--density", str(inputs / "density.grv"),
        "--landcover", str(inputs / "landcover.grv"), "--out", str(out / "masks"))
    for name in MODELS:
        cli("rasterize-cells", *grid_flags, "--cells", str(inputs / f"{name}.cells.csv"),
            "--out", str(out / "masks" / name))
    for name in MODELS:
        argv = ["eval", *grid_flags, "--manifest", str(inputs / "manifest.csv"),
                "--member", name, str(out / "masks" / name), str(inputs / f"{name}.scores.csv"),
                "--member", "ls", str(out / "masks" / "ls"), str(inputs / "ls.scores.csv"),
                "--member", "lc", str(out / "masks" / "lc"), str(inputs / "lc.scores.csv"),
                "--balanced", "--seed", "7", "--workers", "1", "--name", name, "--out", str(out / name)]
        if name != "gA":
            argv += ["--compare", str(out / "gA" / "eval.csv")]
        cli(*argv)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "toy")
    args = parser.parse_args()
    inputs = make_inputs(args.out)
    run_pipeline(inputs, Path(args.out) / "expected")
    print(f"toy fixture written to {args.out}")


if __name__ == "__main__":
    main()
