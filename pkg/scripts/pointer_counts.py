"""Pointer records pushed by the cache-oblivious algorithm, per cell, for several base sizes."""
import argparse

from emflow.blockio import BlockDevice, DeviceConfig
from emflow.grid import GridDims
from emflow.oblivious import cache_oblivious_accumulation
from emflow.storage import put_grid
from emflow.terrain import MeanderParams, gen_meander, gen_random_directions, gen_random_drainage


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=int, default=257)
    ap.add_argument("--bases", default="2,3,5,9,17,33")
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    dims = GridDims(args.side, args.side)
    terrains = [("meander", gen_meander(MeanderParams(args.side)).flowdir)]
    for s in range(args.seeds):
        terrains.append((f"drainage/{s}", gen_random_drainage(dims, s)))
        terrains.append((f"directions/{s}", gen_random_directions(dims, s)))
    print("terrain,base,pointers,per_cell")
    for name, fd in terrains:
        for base in (int(b) for b in args.bases.split(",")):
            gf = put_grid(BlockDevice(DeviceConfig(4096, 2**20)), fd)
            p = cache_oblivious_accumulation(gf, base_side=base).info["pointers"]
            print(f"{name},{base},{p},{p / dims.n:.4f}")


if __name__ == "__main__":
    main()
