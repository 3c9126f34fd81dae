"""Watershed and separator flooding against priority-flood, with separator I/O and substitute sizes."""
import argparse
import time

import numpy as np

from emflow.blockio import BlockDevice, DeviceConfig
from emflow.flooding import brute_force_flood, separator_flooding, substitute_graph, watershed_flooding
from emflow.grid import GridDims
from emflow.storage import put_grid
from emflow.terrain import gen_random_elevation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sides", default="128,256,512")
    ap.add_argument("--mem", type=int, default=2**20)
    ap.add_argument("--block", type=int, default=2**12)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = DeviceConfig(block_size=args.block, memory=args.mem)
    print("side,route,equal,seconds,reads,writes")
    for side in (int(s) for s in args.sides.split(",")):
        elev = gen_random_elevation(GridDims(side, side), args.seed, smooth=2.0)
        want = brute_force_flood(elev)
        t = time.perf_counter()
        ws = watershed_flooding(elev)
        print(f"{side},watershed,{ws == want},{time.perf_counter() - t:.2f},,")
        t = time.perf_counter()
        res = separator_flooding(put_grid(BlockDevice(cfg), elev))
        same = np.array_equal(res.grid.data, want.data, equal_nan=True)
        print(f"{side},separator,{same},{time.perf_counter() - t:.2f},"
              f"{res.stats.block_reads},{res.stats.block_writes}")

    print("\nz,edges,edges_per_z")
    for z in (9, 17, 33, 65, 129):
        e = substitute_graph(gen_random_elevation(GridDims(z, z), z).data).n_edges
        print(f"{z},{e},{e / z:.2f}")


if __name__ == "__main__":
    main()
