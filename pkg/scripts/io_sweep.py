"""Simulated I/O of every accumulation variant over a sweep of meander sizes.

    python scripts/io_sweep.py --sides 512,1024,2048 --out sweep.csv
"""
import argparse
import csv
import sys

from emflow.blockio import DeviceConfig
from emflow.runner import BENCH_FIELDS, VARIANTS, run_variant
from emflow.separator import predicted_io_overhead
from emflow.terrain import MeanderParams, gen_meander


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sides", default="512,1024,2048")
    ap.add_argument("--algos", default=",".join(VARIANTS))
    ap.add_argument("--mem", type=int, default=2**20)
    ap.add_argument("--block", type=int, default=2**12)
    ap.add_argument("--out", type=argparse.FileType("w"), default=sys.stdout)
    args = ap.parse_args()

    cfg = DeviceConfig(block_size=args.block, memory=args.mem)
    w = csv.DictWriter(args.out, fieldnames=BENCH_FIELDS + ["io_per_cell"], lineterminator="\n")
    w.writeheader()
    for side in (int(s) for s in args.sides.split(",")):
        fd = gen_meander(MeanderParams(side)).flowdir
        for algo in args.algos.split(","):
            m = run_variant(algo, fd, cfg)
            w.writerow({**m.row(), "io_per_cell": round(m.stats.io_volume / m.n, 4)})
            args.out.flush()
    print(f"predicted overhead factor at M={args.mem}, B={args.block}: "
          f"{predicted_io_overhead(args.mem, args.block):.3f}", file=sys.stderr)


if __name__ == "__main__":
    main()
