"""Command-line entry point: ``geoensemble <command> ...``.

Exit codes: 0 success, 1 usage, 2 file format, 3 data consistency.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import attribmask, ensemble, evalrva, gridio
from .errors import DataError, DimensionError, GeoEnsembleError, RasterFormatError, ResourceError
from .geogrid import EARTH_RADIUS_KM, GeoPoint, GlobalGrid

log = logging.getLogger("geoensemble")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_DATA = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- prepare ---------------------------------------------------------------


def _to_grid(labels, grid, kernel):
    if labels.shape == grid.shape:
        return labels
    return gridio.downsample(labels, grid, kernel)


def cmd_prepare(args):
    grid = _grid(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    done = False
    if args.density:
        density = gridio.read_raster(args.density, mmap=True)
        spec = attribmask.build_buckets(density, args.buckets, args.nodata)
        labels = _to_grid(attribmask.apply_buckets(density, spec), grid, args.kernel)
        masks = attribmask.ClassMaskSet.from_labels(labels, grid, n_classes=spec.n_buckets)
        attribmask.save_mask_set(out / "ls", masks)
        attribmask.write_buckets_csv(out / "ls.buckets.csv", spec)
        _report("ls", masks)
        done = True
    if args.landcover:
        codes = gridio.read_raster(args.landcover, mmap=True)
        merge = attribmask.read_merge_csv(args.merge) if args.merge else attribmask.default_merge_map()
        labels = _to_grid(attribmask.apply_merge(codes, merge), grid, args.kernel)
        masks = attribmask.ClassMaskSet.from_labels(labels, grid, n_classes=merge.n_classes)
        attribmask.save_mask_set(out / "lc", masks)
        _report("lc", masks)
        done = True
    if args.cells or args.polygons:
        masks = attribmask.rasterize_cells(_read_cells(args), grid)
        attribmask.save_mask_set(out / "cells", masks)
        _report("cells", masks)
        done = True
    if not done:
        raise UsageError("prepare needs at least one of --density, --landcover, --cells, --polygons")
    return EXIT_OK


def _read_cells(args):
    cells = []
    if args.cells:
        cells += attribmask.read_cells_csv(args.cells)
    if args.polygons:
        cells += attribmask.read_polygons(args.polygons)
    return cells


def _report(name, masks):
    empty = masks.empty_classes
    print(f"{name}: {masks.class_count} classes on {masks.grid.height}x{masks.grid.width}"
          + (f", empty classes {masks.class_ids[empty].tolist()}" if empty.size else ""))


# -- eval ------------------------------------------------------------------


@dataclass
class Member:
    name: str
    masks: attribmask.ClassMaskSet
    scores: dict | None  # None for constant factors
    constant: ensemble.FactorizedMap | None = None

    def factor(self, image_id):
        if self.constant is not None:
            return self.constant
        return ensemble.assemble(self.scores[image_id], self.masks, self.name)


def _load_members(args, grid):
    if not args.member:
        raise UsageError("at least one --member NAME MASKS SCORES is required")
    members = []
    for name, prefix, scores in args.member:
        masks = attribmask.load_mask_set(prefix, grid.earth_radius, mmap=True)
        if masks.grid.shape != grid.shape:
            raise DimensionError(f"member {name}: masks are {masks.grid.shape}, grid is {grid.shape}")
        if getattr(args, "urban_prior", False) and name == args.urban_member:
            classes = args.urban_classes or masks.class_ids[-2:].tolist()
            members.append(Member(name, masks, None, ensemble.urban_prior(masks, classes)))
        else:
            members.append(Member(name, masks, gridio.read_scores(scores)))
    if getattr(args, "urban_prior", False) and args.urban_member not in {m.name for m in members}:
        raise UsageError(f"--urban-prior needs a member named {args.urban_member!r}")
    return members


def _image_map(members, image_id, shape):
    return ensemble.product([m.factor(image_id) for m in members]) if members else \
        ensemble.FactorizedMap(shape)


def _bucket_labels(args, manifest, grid):
    prefix = args.bucket_masks
    if prefix is None:
        named = [p for n, p, _ in args.member if n == args.urban_member]
        prefix = named[0] if named else None
    if prefix is None:
        return None, 0
    masks = attribmask.load_mask_set(prefix, grid.earth_radius, mmap=True)
    values, _ = gridio.label_images(manifest, masks.labels)
    values[values == masks.nodata] = -1
    return values, masks.class_count


def cmd_eval(args):
    grid = _grid(args)
    areas = grid.areas
    manifest = gridio.read_manifest(args.manifest)
    members = _load_members(args, grid)
    buckets, n_buckets = _bucket_labels(args, manifest, grid)

    skipped, jobs = [], []
    valid = manifest.valid_mask()
    for k, image_id in enumerate(manifest.image_ids):
        if not valid[k]:
            skipped.append((image_id, "invalid coordinates"))
            continue
        missing = [m.name for m in members if m.scores is not None and image_id not in m.scores]
        if missing:
            skipped.append((image_id, "missing scores: " + " ".join(missing)))
            continue
        jobs.append(k)

    def work(k):
        image_id = manifest.image_ids[k]
        gt = GeoPoint(manifest.lats[k], manifest.lons[k])
        try:
            fmap = _image_map(members, image_id, grid.shape)
        except DataError as exc:
            return k, None, str(exc)
        return k, evalrva.min_containing_area(fmap, gt, areas, image_id), None

    with ThreadPoolExecutor(max_workers=args.workers or os.cpu_count() or 1) as pool:
        results = list(pool.map(work, jobs))

    records, rec_idx = [], []
    for k, rec, err in results:
        if rec is None:
            skipped.append((manifest.image_ids[k], err))
        else:
            records.append(rec)
            rec_idx.append(k)
    for image_id, reason in skipped:
        log.warning("skipped %s: %s", image_id, reason)
    if not records:
        raise DataError("no image could be evaluated")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec_buckets = buckets[rec_idx] if buckets is not None else None
    gridio.write_csv(out / "skipped.csv", ("image_id", "reason"), sorted(skipped, key=_manifest_order(manifest)))
    evalrva.write_eval_csv(out / "eval.csv", records, rec_buckets)

    baseline = None
    if args.compare:
        baseline, _ = evalrva.read_eval_csv(args.compare)
        baseline = {r.image_id: r for r in baseline}

    subsets = [("all", records, rec_buckets)]
    if args.balanced:
        if rec_buckets is None:
            raise UsageError("--balanced needs bucket masks (--bucket-masks or an 'ls' member)")
        sel = evalrva.rebalance_indices(rec_buckets, args.seed, n_buckets)
        bal = [records[i] for i in sel]
        gridio.write_manifest(out / "balanced_manifest.csv", manifest.subset(np.array(rec_idx)[sel]))
        evalrva.write_eval_csv(out / "eval_balanced.csv", bal, rec_buckets[sel])
        subsets.append(("balanced", bal, rec_buckets[sel]))

    table = []
    for subset, recs, bks in subsets:
        evalrva.write_curve_csv(out / f"curve_{subset}.csv", evalrva.rva_curve(recs, "auto", areas.total))
        base = _baseline_for(baseline, recs) if baseline is not None else None
        if base is not None:
            evalrva.write_delta_csv(out / f"delta_{subset}.csv", evalrva.compare_curves(recs, base, areas.total))
        if bks is not None:
            labelled = [(r, b) for r, b in zip(recs, bks) if b >= 0]
            bucket_of = {r.image_id: int(b) for r, b in labelled}
            parts = evalrva.per_bucket_breakdown(
                [r for r, _ in labelled], bucket_of,
                _baseline_for(baseline, [r for r, _ in labelled]) if baseline is not None else None,
                areas.total)
            for b, part in parts.items():
                evalrva.write_curve_csv(out / f"curve_{subset}_bucket{b}.csv", part.curve)
                if part.delta is not None:
                    evalrva.write_delta_csv(out / f"delta_{subset}_bucket{b}.csv", part.delta)
        table.append(evalrva.threshold_row(args.name, subset, recs, grid.earth_radius))
    gridio.write_csv(out / "table.csv", evalrva.TABLE_HEADER,
                     [row[:3] + tuple(gridio.fmt(v) for v in row[3:]) for row in table])
    print(f"evaluated {len(records)} images, skipped {len(skipped)}; outputs in {out}")
    return EXIT_OK


def _manifest_order(manifest):
    pos = {image_id: k for k, image_id in enumerate(manifest.image_ids)}
    return lambda item: pos[item[0]]


def _baseline_for(baseline, records):
    try:
        return [baseline[r.image_id] for r in records]
    except KeyError as exc:
        raise DataError(f"--compare file has no record for image {exc.args[0]!r}") from None


# -- small commands --------------------------------------------------------


def cmd_info(args):
    header = gridio.read_header(args.path)
    print(f"height={header.height} width={header.width} dtype={header.dtype_name}")
    arr = gridio.read_raster(args.path, mmap=True)
    if header.dtype_code == 0:
        a = np.asarray(arr, dtype=np.float64)
        finite = a[np.isfinite(a)]
        print(f"nan={int(np.isnan(a).sum())} finite={finite.size}")
        if finite.size:
            print(f"min={finite.min()!r} max={finite.max()!r} mean={finite.mean()!r}")
            counts, edges = np.histogram(finite, bins=10)
            for n, lo, hi in zip(counts, edges, edges[1:]):
                print(f"  [{lo:.6g}, {hi:.6g}): {n}")
        return EXIT_OK
    grid = GlobalGrid(header.height, header.width, args.radius)
    nodata = attribmask.nodata_label(header.dtype)
    present = np.unique(arr)
    n_classes = int(present[present != nodata].max()) + 1 if np.any(present != nodata) else 0
    pixels = np.bincount(np.asarray(arr).ravel(), minlength=nodata + 1)
    km2 = attribmask.class_areas(arr, grid, nodata + 1)
    print("label,pixels,area_km2")
    for v in range(n_classes):
        print(f"{v},{pixels[v]},{km2[v]!r}")
    if pixels[nodata]:
        print(f"nodata({nodata}),{pixels[nodata]},{km2[nodata]!r}")
    return EXIT_OK


def cmd_rebalance(args):
    manifest = gridio.read_manifest(args.manifest)
    masks = attribmask.load_mask_set(args.bucket_masks, args.radius, mmap=True)
    values, errors = gridio.label_images(manifest, masks.labels)
    values[values == masks.nodata] = -1
    for image_id, msg in errors:
        log.warning("skipped %s: %s", image_id, msg)
    sel = evalrva.rebalance_indices(values, args.seed, masks.class_count)
    gridio.write_manifest(args.out, manifest.subset(sel))
    counts = np.bincount(values[sel], minlength=masks.class_count)
    print(f"selected {len(sel)} images; per bucket {counts.tolist()}")
    return EXIT_OK


def cmd_rasterize_cells(args):
    if not (args.cells or args.polygons):
        raise UsageError("rasterize-cells needs --cells or --polygons")
    masks = attribmask.rasterize_cells(_read_cells(args), _grid(args))
    attribmask.save_mask_set(args.out, masks)
    _report(Path(args.out).name, masks)
    return EXIT_OK


def cmd_downsample(args):
    src = gridio.read_raster(args.input, mmap=True)
    gridio.write_raster(args.out, gridio.downsample(src, (args.height, args.width), args.kernel))
    return EXIT_OK


def cmd_densify(args):
    grid = _grid(args)
    members = _load_members(args, grid)
    missing = [m.name for m in members if m.scores is not None and args.image_id not in m.scores]
    if missing:
        raise DataError(f"image {args.image_id!r} has no scores for {missing}")
    dense = ensemble.densify(_image_map(members, args.image_id, grid.shape))
    gridio.write_raster(args.out, dense.astype(np.float32))
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def _grid(args):
    return GlobalGrid(args.height, args.width, args.radius)


def _grid_args(p):
    p.add_argument("--height", type=int, default=5400, help="grid rows (latitude)")
    p.add_argument("--width", type=int, default=10800, help="grid columns (longitude)")
    p.add_argument("--radius", type=float, default=EARTH_RADIUS_KM, help="sphere radius in km")


def _member_args(p):
    p.add_argument("--member", nargs=3, action="append", metavar=("NAME", "MASKS", "SCORES"),
                   help="ensemble member: mask prefix (from prepare) and its score CSV; repeatable")
    p.add_argument("--urban-prior", action="store_true",
                   help="replace the member named by --urban-member with a constant indicator")
    p.add_argument("--urban-member", default="ls")
    p.add_argument("--urban-classes", type=int, nargs="+", help="class ids kept by the urban prior")


def build_parser():
    parser = _Parser(prog="geoensemble", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of option defaults; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="build LS/LC/cell mask sets on the common grid")
    _grid_args(p)
    p.add_argument("--density", help="GRV1 float32 population density raster")
    p.add_argument("--buckets", type=int, default=4)
    p.add_argument("--nodata", type=float, default=None, help="density nodata sentinel (NaN always is)")
    p.add_argument("--landcover", help="GRV1 uint8/uint16 land cover code raster")
    p.add_argument("--merge", help="merge.csv (src_code,dst_class); default merges to 7 classes")
    p.add_argument("--cells", help="cells.csv rectangles")
    p.add_argument("--polygons", help="polygon file, one 'cell_id;lon lat,...' per line")
    p.add_argument("--kernel", choices=sorted(gridio.DOWNSAMPLERS), default="mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("eval", help="evaluate ensembles: per-image records, RvA curves, tables")
    _grid_args(p)
    _member_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--bucket-masks", help="mask prefix used to bucket images (default: the ls member)")
    p.add_argument("--balanced", action="store_true", help="also report the bucket-rebalanced subset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--name", default="model", help="model label in table.csv")
    p.add_argument("--compare", help="baseline eval.csv for recall deltas")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("info", help="describe a GRV1 raster")
    p.add_argument("path")
    p.add_argument("--radius", type=float, default=EARTH_RADIUS_KM)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("rebalance", help="equal-count sample of a manifest per bucket")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bucket-masks", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=EARTH_RADIUS_KM)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rebalance)

    p = sub.add_parser("rasterize-cells", help="rasterize cell rectangles/polygons to a mask set")
    _grid_args(p)
    p.add_argument("--cells")
    p.add_argument("--polygons")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_rasterize_cells)

    p = sub.add_parser("downsample", help="reduce a label raster by an integer factor")
    p.add_argument("--input", required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--kernel", choices=sorted(gridio.DOWNSAMPLERS), default="mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("densify", help="write one image's ensembled map as a float32 raster")
    _grid_args(p)
    _member_args(p)
    p.add_argument("--image-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_densify)
    return parser, sub


def parse_args(argv=None):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        subparser = sub.choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config key(s) {unknown}")
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"geoensemble: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"geoensemble: missing input: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except RasterFormatError as exc:
        print(f"geoensemble: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (DataError, DimensionError, ResourceError, GeoEnsembleError) as exc:
        print(f"geoensemble: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
