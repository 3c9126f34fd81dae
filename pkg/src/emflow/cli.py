"""``emflow`` command line: generate terrains, convert layouts, run and verify algorithms.

Exit codes: 0 success, 1 verification mismatch, 2 usage error, 3 data error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import re
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .blockio import BlockDevice, DeviceConfig, IoStats
from .flooding import brute_force_flood, separator_flooding, watershed_flooding
from .grid import (FlowDirGrid, GridDims, GridError, GridKind, Layout,
                   read_grid, write_grid)
from .naive import NonTerminating, brute_force_accumulation
from .runner import BENCH_FIELDS, VARIANTS, run_variant
from .separator import PhaseTwoOverflow, TooSmallMemory
from .storage import get_grid, new_grid_file, put_grid
from .terrain import (InfeasibleParams, MeanderParams, OutOfBounds, estimate_confluence,
                      gen_meander, gen_random_directions, gen_random_drainage,
                      gen_random_elevation, uniform_flow)
from .zorder import ConversionStrategy, convert_layout

log = logging.getLogger("emflow")

OK, MISMATCH, USAGE, DATA = 0, 1, 2, 3

_SUFFIX = {"": 0, "K": 10, "M": 20, "G": 30, "T": 40}


class UsageError(Exception):
    pass


def parse_size(text: str) -> int:
    """Bytes, ``2^k``, or a binary suffix: 4096, 4K, 4KiB, 1M, 2^20."""
    t = text.strip()
    m = re.fullmatch(r"2\^(\d+)", t)
    if m:
        return 1 << int(m.group(1))
    m = re.fullmatch(r"(\d+)\s*([KMGT]?)(?:i?B)?", t, re.IGNORECASE)
    if not m:
        raise argparse.ArgumentTypeError(f"not a size: {text!r}")
    return int(m.group(1)) << _SUFFIX[m.group(2).upper()]


def parse_sweep(text: str, factor: int = 4) -> list[int]:
    """``2^18..2^22`` (multiplying by ``factor``) or a comma list of sizes."""
    if ".." in text:
        lo, hi = (parse_size(p) for p in text.split("..", 1))
        if lo < 1 or hi < lo:
            raise argparse.ArgumentTypeError(f"empty sweep {text!r}")
        out = []
        while lo <= hi:
            out.append(lo)
            lo *= factor
        return out
    return [parse_size(p) for p in text.split(",") if p.strip()]


def default_seed() -> int:
    return int(os.environ.get("EMG_SEED", "0"))


def square_dims(n: int) -> GridDims:
    """Square-ish dimensions with exactly n cells (rows a power of two when n is)."""
    r = math.isqrt(n)
    if r * r == n:
        return GridDims(r, r)
    rows = 1 << (n.bit_length() - 1) // 2 if n & (n - 1) == 0 else r
    while n % rows:
        rows -= 1
    return GridDims(rows, n // rows)


# ------------------------------------------------------------------ manifests


@dataclass
class RunManifest:
    command: str
    argv: list
    parameters: dict
    inputs: list
    outputs: list
    seed: Optional[int]
    stats: Optional[dict]
    wall_time: float
    extra: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _stats_dict(stats: Optional[IoStats]) -> Optional[dict]:
    if stats is None:
        return None
    return {"block_reads": stats.block_reads, "block_writes": stats.block_writes,
            "block_size": stats.block_size, "ios": stats.ios, "io_volume": stats.io_volume}


def _params(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "argv")}


def _save_manifest(args, out: Path, inputs, outputs, seed, stats, wall, **extra) -> None:
    m = RunManifest(args.command, list(args.argv), _params(args), [str(p) for p in inputs],
                    [str(p) for p in outputs], seed, _stats_dict(stats), round(wall, 6), extra)
    m.write(manifest_path(out))


def _emit_csv(rows: list[dict], fields: list[str], path: Optional[Path]) -> None:
    if path is None:
        w = csv.DictWriter(sys.stdout, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerows(rows)


def _read(path: Path, kind: GridKind):
    g = read_grid(path)
    if g.kind != kind:
        raise UsageError(f"{path} holds a {g.kind.name} grid, expected {kind.name}")
    return g


def _config(args) -> DeviceConfig:
    try:
        return DeviceConfig(block_size=args.block, memory=args.mem)
    except ValueError as e:
        raise UsageError(str(e))


def _device(args, workdir: str) -> BlockDevice:
    """Counting device in memory with --simulate, otherwise a file-backed one."""
    path = None if args.simulate else Path(workdir) / "device.bin"
    return BlockDevice(_config(args), path)


# ------------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    dims = GridDims(args.rows or args.n, args.cols or args.n)
    t0 = time.perf_counter()
    outputs = [args.out]
    extra = {}
    if args.kind == "meander":
        if dims.height != dims.width:
            raise UsageError("meander terrains are square; use --n")
        t = gen_meander(MeanderParams(dims.height, args.c1, args.c2))
        grid = t.flowdir
        extra = {"river_length": t.river_length, "mouth": list(t.mouth)}
        if args.elev_out:
            write_grid(t.elevation.with_layout(Layout[args.layout]), args.elev_out)
            outputs.append(args.elev_out)
    elif args.kind == "drainage":
        grid = gen_random_drainage(dims, seed, nodata_fraction=args.nodata)
    elif args.kind == "directions":
        grid = gen_random_directions(dims, seed, args.nodata)
    elif args.kind == "uniform":
        grid = uniform_flow(dims, args.direction)
    else:
        grid = gen_random_elevation(dims, seed, args.nodata, smooth=args.smooth,
                                    levels=args.levels)
    write_grid(grid.with_layout(Layout[args.layout]), args.out)
    _save_manifest(args, args.out, [], outputs, seed, None, time.perf_counter() - t0, **extra)
    return OK


_STRATEGIES = {"zscan": ConversionStrategy.Z_ORDER_SCAN,
               "rowscan": ConversionStrategy.ROW_BY_ROW_SCAN,
               "sort": ConversionStrategy.MERGE_SORT}


def cmd_convert(args) -> int:
    grid = read_grid(args.inp, normalize=False)
    target = Layout.Z_ORDER if grid.layout == Layout.ROW_MAJOR else Layout.ROW_MAJOR
    with tempfile.TemporaryDirectory() as wd:
        dev = _device(args, wd)
        src = put_grid(dev, grid)
        dst = new_grid_file(dev, grid.dims, grid.kind, target, tables=src.tables)
        t0 = time.perf_counter()
        stats = convert_layout(src, dst, _STRATEGIES[args.strategy])
        wall = time.perf_counter() - t0
        write_grid(get_grid(dst), args.out)
    shown = stats if args.simulate else None
    row = {"strategy": args.strategy, "to": target.name.lower(), "N": grid.dims.n,
           "M": args.mem, "B": args.block, "reads": shown and stats.block_reads,
           "writes": shown and stats.block_writes, "wall_s": round(wall, 4)}
    _emit_csv([row], list(row), args.csv)
    _save_manifest(args, args.out, [args.inp], [args.out], None, shown, wall)
    return OK


def cmd_accumulate(args) -> int:
    fd = _read(args.inp, GridKind.FLOWDIR)
    with tempfile.TemporaryDirectory() as wd:
        path = None if args.simulate else Path(wd) / "device.bin"
        m = run_variant(args.algo, fd, _config(args), path, base_side=args.base)
    write_grid(m.acc, args.out)
    _emit_csv([m.row(args.simulate)], BENCH_FIELDS, args.csv)
    _save_manifest(args, args.out, [args.inp], [args.out], None,
                   m.stats if args.simulate else None, m.wall,
                   info={k: v for k, v in m.info.items() if isinstance(v, (int, float, str))})
    return OK


def cmd_flood(args) -> int:
    elev = _read(args.inp, GridKind.ELEVATION)
    stats = None
    if args.algo == "watershed":
        t0 = time.perf_counter()
        flooded = watershed_flooding(elev.with_layout(Layout.ROW_MAJOR), order=args.order)
        wall = time.perf_counter() - t0
    else:
        with tempfile.TemporaryDirectory() as wd:
            dev = _device(args, wd)
            gf = put_grid(dev, elev.with_layout(Layout.ROW_MAJOR))
            t0 = time.perf_counter()
            res = separator_flooding(gf, z=args.z)
            wall = time.perf_counter() - t0
            flooded = res.grid
            stats = res.stats if args.simulate else None
    write_grid(flooded.with_layout(elev.layout), args.out)
    row = {"algorithm": args.algo, "N": elev.dims.n, "M": args.mem, "B": args.block,
           "reads": stats.block_reads if stats else "", "writes": stats.block_writes if stats else "",
           "wall_s": round(wall, 4)}
    _emit_csv([row], list(row), args.csv)
    _save_manifest(args, args.out, [args.inp], [args.out], None, stats, wall)
    return OK


def cmd_confluence(args) -> int:
    fd = _read(args.inp, GridKind.FLOWDIR)
    seed = args.seed if args.seed is not None else default_seed()
    t0 = time.perf_counter()
    rep = estimate_confluence(fd.with_layout(Layout.ROW_MAJOR), args.d, args.sample, seed)
    rows = rep.rows()
    _emit_csv(rows, ["d", "max", "p50", "p99", "squares"], args.out)
    if args.out:
        _save_manifest(args, args.out, [args.inp], [args.out], seed, None,
                       time.perf_counter() - t0, gamma=rep.gamma)
    return OK


def cmd_verify(args) -> int:
    if args.flowdir and args.acc:
        fd = _read(args.flowdir, GridKind.FLOWDIR).with_layout(Layout.ROW_MAJOR)
        acc = _read(args.acc, GridKind.FLOWACC)
        if acc.dims != fd.dims:
            print(f"shape mismatch: {fd.dims} vs {acc.dims}")
            return MISMATCH
        want = brute_force_accumulation(fd).data
        bad = int(np.count_nonzero(want != acc.data))
    elif args.elev and args.flooded:
        elev = _read(args.elev, GridKind.ELEVATION).with_layout(Layout.ROW_MAJOR)
        got = _read(args.flooded, GridKind.ELEVATION)
        if got.dims != elev.dims:
            print(f"shape mismatch: {elev.dims} vs {got.dims}")
            return MISMATCH
        want = brute_force_flood(elev).data
        bad = int(np.count_nonzero(~((want == got.data) | (np.isnan(want) & np.isnan(got.data)))))
    else:
        raise UsageError("give --flowdir with --acc, or --elev with --flooded")
    print(f"mismatched cells: {bad}")
    return OK if bad == 0 else MISMATCH


def _bench_terrain(kind: str, n: int, seed: int) -> FlowDirGrid:
    dims = square_dims(n)
    if kind == "meander":
        if dims.height != dims.width:
            raise UsageError(f"meander terrains need a square cell count, got {n}")
        return gen_meander(MeanderParams(dims.height)).flowdir
    if kind == "drainage":
        return gen_random_drainage(dims, seed)
    if kind == "uniform":
        return uniform_flow(dims)
    return gen_random_directions(dims, seed)


def cmd_bench(args) -> int:
    seed = args.seed if args.seed is not None else default_seed()
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    unknown = [a for a in algos if a not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown algorithms: {', '.join(unknown)}")
    sizes = parse_sweep(args.n, args.factor)
    rows = []
    t0 = time.perf_counter()
    for n in sizes:
        fd = _bench_terrain(args.terrain, n, seed)
        want = brute_force_accumulation(fd).data if args.check else None
        for a in algos:
            with tempfile.TemporaryDirectory() as wd:
                path = None if args.simulate else Path(wd) / "device.bin"
                m = run_variant(a, fd, _config(args), path, base_side=args.base)
            if want is not None and not np.array_equal(m.acc.data, want):
                print(f"{a} disagrees with the oracle at N={n}", file=sys.stderr)
                return MISMATCH
            rows.append(m.row(args.simulate))
            log.info("%s N=%d done in %.2fs", a, n, m.wall)
    _emit_csv(rows, BENCH_FIELDS, args.out)
    if args.out:
        _save_manifest(args, args.out, [], [args.out], seed, None, time.perf_counter() - t0)
    return OK


# --------------------------------------------------------------------- parser


def _device_flags(p, simulate_default=False):
    p.add_argument("--mem", type=parse_size, default=1 << 20, help="cache size M (bytes)")
    p.add_argument("--block", type=parse_size, default=1 << 12, help="block size B (bytes)")
    p.add_argument("--simulate", action="store_true", default=simulate_default,
                   help="count block transfers on the simulated device")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="emflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic grid")
    p.add_argument("--kind", required=True,
                   choices=["meander", "drainage", "directions", "uniform", "elevation"])
    p.add_argument("--n", type=parse_size, default=256, help="side length")
    p.add_argument("--rows", type=parse_size)
    p.add_argument("--cols", type=parse_size)
    p.add_argument("--seed", type=int)
    p.add_argument("--nodata", type=float, default=0.0, help="NoData fraction")
    p.add_argument("--c1", type=float, default=0.125)
    p.add_argument("--c2", type=float, default=1.0)
    p.add_argument("--direction", type=int, default=1)
    p.add_argument("--smooth", type=float, default=1.0)
    p.add_argument("--levels", type=int)
    p.add_argument("--layout", choices=["ROW_MAJOR", "Z_ORDER"], default="ROW_MAJOR",
                   type=lambda s: {"row": "ROW_MAJOR", "z": "Z_ORDER"}.get(s, s))
    p.add_argument("--elev-out", type=Path, help="meander: also write the elevation grid")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("convert", help="convert between row-major and Z-order layouts")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--strategy", choices=list(_STRATEGIES), default="zscan")
    p.add_argument("--csv", type=Path)
    _device_flags(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("accumulate", help="run a flow accumulation algorithm")
    p.add_argument("--algo", choices=list(VARIANTS), required=True)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--base", type=int, default=17, help="base subgrid side (oblivious)")
    p.add_argument("--csv", type=Path, help="append the stats row here instead of stdout")
    _device_flags(p)
    p.set_defaults(func=cmd_accumulate)

    p = sub.add_parser("flood", help="fill depressions")
    p.add_argument("--algo", choices=["watershed", "separator"], default="watershed")
    p.add_argument("--order", choices=["row", "z"], default="row")
    p.add_argument("--z", type=int, help="subgrid side (separator)")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--csv", type=Path)
    _device_flags(p)
    p.set_defaults(func=cmd_flood)

    p = sub.add_parser("confluence", help="first-far-cell counts per square size")
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--d", type=lambda s: [int(x) for x in s.split(",")], default=[4, 8, 16, 32])
    p.add_argument("--sample", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_confluence)

    p = sub.add_parser("verify", help="diff an output against the brute-force oracle")
    p.add_argument("--flowdir", type=Path)
    p.add_argument("--acc", type=Path)
    p.add_argument("--elev", type=Path)
    p.add_argument("--flooded", type=Path)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="sweep N and algorithms on the simulated device")
    p.add_argument("--algos", default="naive-row,naive-z,sep-aware,tfp")
    p.add_argument("--terrain", choices=["meander", "drainage", "directions", "uniform"],
                   default="meander")
    p.add_argument("--n", default="2^18..2^22", help="cell counts: 2^18..2^22 or a list")
    p.add_argument("--factor", type=int, default=4, help="step between sweep sizes")
    p.add_argument("--base", type=int, default=17)
    p.add_argument("--seed", type=int)
    p.add_argument("--check", action="store_true", help="compare with the oracle")
    p.add_argument("--out", type=Path)
    _device_flags(p, simulate_default=True)
    p.add_argument("--wall", dest="simulate", action="store_false",
                   help="file-backed device, report wall time only")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return USAGE if e.code else OK
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, TooSmallMemory, argparse.ArgumentTypeError) as e:
        print(f"emflow: {e}", file=sys.stderr)
        return USAGE
    except (GridError, NonTerminating, InfeasibleParams, OutOfBounds, PhaseTwoOverflow,
            OSError) as e:
        print(f"emflow: {type(e).__name__}: {e}", file=sys.stderr)
        return DATA


if __name__ == "__main__":
    sys.exit(main())
