"""Seed sweeps for the delayed cases, one CSV per case.

    python scripts/sweep_seeds.py --cases statedelay bothdelay --seeds 1-10
"""
import argparse
import logging
from dataclasses import replace

from it2mpc import bench


def seed_range(text):
    lo, _, hi = text.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--cases", nargs="+", default=["statedelay", "bothdelay"], choices=bench.CASES)
    ap.add_argument("--seeds", type=seed_range, default=seed_range("1-10"))
    ap.add_argument("--out", default="out/sweeps")
    ap.add_argument("--rpi-samples", type=int, default=500)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    cfg = bench.load_config(args.config or bench.bundled_config())
    for case in args.cases:
        rows, summary = bench.sweep(replace(cfg, case=case), args.seeds, args.out,
                                    rpi_samples=args.rpi_samples)
        print(f"== {case}")
        print(bench.format_table(rows, summary))


if __name__ == "__main__":
    main()
