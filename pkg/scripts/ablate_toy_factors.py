"""Ablation on the toy fixture: base model alone, +LS, +LC, +both, urban prior.

    python3 scripts/ablate_toy_factors.py [--model gA] [--out /tmp/ablation]

Runs ``geoensemble eval`` for each member combination against the shipped
toy masks and prints the resulting table.csv rows side by side.
"""

import argparse
import csv
import tempfile
from pathlib import Path

from geoensemble.cli import main as cli_main

TOY = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "toy"

VARIANTS = {
    "base": [],
    "+ls": ["ls"],
    "+lc": ["lc"],
    "+ls+lc": ["ls", "lc"],
    "urban": ["ls", "--urban-prior"],
}


def run(model, variant, extra, out):
    masks, inputs = TOY / "expected" / "masks", TOY / "inputs"
    argv = ["eval", "--height", "30", "--width", "60", "--manifest", str(inputs / "manifest.csv"),
            "--member", model, str(masks / model), str(inputs / f"{model}.scores.csv"),
            "--bucket-masks", str(masks / "ls"), "--name", f"{model}{variant}", "--out", str(out)]
    for item in extra:
        if item.startswith("--"):
            argv.append(item)
        else:
            argv += ["--member", item, str(masks / item), str(inputs / f"{item}.scores.csv")]
    if cli_main(argv) != 0:
        raise SystemExit(f"eval failed for {variant}")
    with open(out / "table.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", default="gA", choices=["gA", "gB"])
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()
    out = args.out or Path(tempfile.mkdtemp(prefix="ablation-"))
    rows = []
    for variant, extra in VARIANTS.items():
        rows += run(args.model, variant, extra, out / variant.strip("+").replace("+", "_"))
    cols = ["model", "n_images"] + [c for c in rows[0] if c.startswith("rva_")]
    print(",".join(cols))
    for row in rows:
        print(",".join(row[c] if c in ("model", "n_images") else f"{float(row[c]):.3f}" for c in cols))
    print(f"outputs in {out}")


if __name__ == "__main__":
    main()
