"""Named accumulation variants, each fed its input file in the layout it expects."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .blockio import BlockDevice, DeviceConfig, IoStats
from .grid import FlowAccGrid, FlowDirGrid, Layout, normalize_directions
from .naive import TraversalOrder, naive_accumulation
from .oblivious import cache_oblivious_accumulation
from .separator import cache_aware_accumulation, cache_aware_accumulation_z
from .storage import put_grid
from .tfp import tfp_accumulation


@dataclass(frozen=True)
class Variant:
    name: str
    layout: Layout
    run: Callable


def _naive(order):
    return lambda fd, **kw: naive_accumulation(fd, order)


def _oblivious(fd, base_side=17, **kw):
    return cache_oblivious_accumulation(fd, base_side=base_side)


VARIANTS = {v.name: v for v in [
    Variant("naive-row", Layout.ROW_MAJOR, _naive(TraversalOrder.ROW_BY_ROW)),
    Variant("naive-z", Layout.Z_ORDER, _naive(TraversalOrder.Z_ORDER)),
    Variant("sep-aware", Layout.ROW_MAJOR, lambda fd, **kw: cache_aware_accumulation(fd)),
    Variant("sep-aware-z", Layout.Z_ORDER, lambda fd, **kw: cache_aware_accumulation_z(fd)),
    Variant("sep-oblivious", Layout.ROW_MAJOR, _oblivious),
    Variant("sep-oblivious-z", Layout.Z_ORDER, _oblivious),
    Variant("tfp", Layout.ROW_MAJOR, lambda fd, **kw: tfp_accumulation(fd)),
]}


@dataclass
class Measurement:
    algorithm: str
    layout: Layout
    n: int
    config: DeviceConfig
    stats: IoStats
    wall: float
    acc: FlowAccGrid
    info: dict = field(default_factory=dict)

    @property
    def volume_factor(self) -> float:
        """I/O volume over the 9 bytes per cell of reading directions and writing flow."""
        return self.stats.io_volume / (9 * self.n)

    def row(self, simulated: bool = True) -> dict:
        row = {"algorithm": self.algorithm, "layout": self.layout.name.lower(), "N": self.n,
               "M": self.config.memory, "B": self.config.block_size,
               "reads": "", "writes": "", "ios": "", "volume": "", "volume_factor": "",
               "wall_s": round(self.wall, 4)}
        if simulated:
            row.update(reads=self.stats.block_reads, writes=self.stats.block_writes,
                       ios=self.stats.ios, volume=self.stats.io_volume,
                       volume_factor=round(self.volume_factor, 6))
        return row


BENCH_FIELDS = ["algorithm", "layout", "N", "M", "B", "reads", "writes", "ios", "volume",
                "volume_factor", "wall_s"]


def run_variant(name: str, fd: FlowDirGrid, config: DeviceConfig,
                path: Optional[str | Path] = None, base_side: int = 17) -> Measurement:
    """Place ``fd`` on a fresh device in the variant's layout and accumulate."""
    try:
        v = VARIANTS[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(VARIANTS)}")
    dev = BlockDevice(config, path)
    gf = put_grid(dev, normalize_directions(fd).with_layout(v.layout))
    t0 = time.perf_counter()
    res = v.run(gf, base_side=base_side)
    wall = time.perf_counter() - t0
    return Measurement(name, v.layout, fd.dims.n, config, res.stats, wall, res.grid, res.info)
