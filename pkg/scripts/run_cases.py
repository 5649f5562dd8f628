"""Run the four CSTR cases once each and print a summary table.

    python scripts/run_cases.py --seed 1 --out out/cases
"""
import argparse
import logging
from dataclasses import replace

from it2mpc import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--out", default="out/cases")
    ap.add_argument("--rpi-samples", type=int, default=2000)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    cfg = bench.load_config(args.config or bench.bundled_config())
    if args.steps:
        cfg = replace(cfg, steps=args.steps)
    print(f"{'case':>13} {'conv':>6} {'peak|u|':>9} {'infeas':>7} {'cert':>6} {'run[s]':>8}")
    for case in bench.CASES:
        res = bench.run_case(replace(cfg, case=case), args.out, args.seed,
                             rpi_samples=args.rpi_samples)
        t = res.traj
        cert = all(r.ok for r in res.reports) if res.reports else "-"
        print(f"{case:>13} {str(t.convergence_step()):>6} {t.peak_input:9.4f} "
              f"{t.infeasible_steps:7d} {str(cert):>6} {res.elapsed:8.1f}")


if __name__ == "__main__":
    main()
