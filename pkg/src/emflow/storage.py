"""Grids stored as files on a ``BlockDevice``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .blockio import BlockDevice
from .grid import GridDims, GridKind, Layout, _Grid, grid_from_payload, grid_type, payload_bytes
from .zorder import SegmentTables, build_segment_tables


@dataclass
class GridFile:
    device: BlockDevice
    offset: int
    dims: GridDims
    kind: GridKind
    layout: Layout
    tables: Optional[SegmentTables] = None

    def __post_init__(self):
        if self.tables is None:
            self.tables = build_segment_tables(self.dims)

    @property
    def cell_size(self) -> int:
        return np.dtype(grid_type(self.kind).dtype).itemsize

    @property
    def nbytes(self) -> int:
        return self.dims.n * self.cell_size

    @property
    def is_z(self) -> bool:
        return self.layout == Layout.Z_ORDER


def put_grid(dev: BlockDevice, grid: _Grid, name: Optional[str] = None) -> GridFile:
    """Place ``grid`` on the device as an existing input file (no I/O counted)."""
    payload = payload_bytes(grid)
    off = dev.allocate(len(payload), name)
    dev.load(off, payload)
    return GridFile(dev, off, grid.dims, grid.kind, grid.layout)


def new_grid_file(dev: BlockDevice, dims: GridDims, kind: GridKind, layout: Layout,
                  name: Optional[str] = None, tables: Optional[SegmentTables] = None) -> GridFile:
    gf = GridFile(dev, 0, dims, GridKind(kind), Layout(layout), tables)
    gf.offset = dev.allocate(gf.nbytes, name)
    return gf


def get_grid(gf: GridFile) -> _Grid:
    """Current content of the file as a grid (no I/O counted)."""
    raw = gf.device.peek(gf.offset, gf.nbytes).tobytes()
    return grid_from_payload(gf.kind, gf.layout, gf.dims, raw)
