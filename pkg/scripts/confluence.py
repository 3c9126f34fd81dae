"""First-far-cell statistics per square size on the synthetic terrains."""
import argparse

from emflow.grid import GridDims
from emflow.terrain import (MeanderParams, estimate_confluence, gen_meander, gen_random_drainage,
                            uniform_flow)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=int, default=256)
    ap.add_argument("--sizes", default="4,8,16,32")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--sample", type=int, help="squares sampled per size")
    args = ap.parse_args()

    dims = GridDims(args.side, args.side)
    sizes = [int(d) for d in args.sizes.split(",")]
    terrains = [("sheet", uniform_flow(dims)), ("meander", gen_meander(MeanderParams(args.side)).flowdir)]
    terrains += [(f"drainage/{s}", gen_random_drainage(dims, s)) for s in range(args.seeds)]
    print("terrain,d,max,p50,p99,squares")
    for name, fd in terrains:
        for row in estimate_confluence(fd, sizes, args.sample).rows():
            print(f"{name},{row['d']},{row['max']},{row['p50']:g},{row['p99']:g},{row['squares']}")


if __name__ == "__main__":
    main()
