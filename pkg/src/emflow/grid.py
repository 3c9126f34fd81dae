"""Grid geometry, D8 flow directions, and the ``.emg`` grid file codec.

Directions use the power-of-two D8 byte convention::

    32  64  128
    16   x    1
     8   4    2

with ``0`` for a sink and ``255`` for a NoData cell.  Grids are held in memory
as 2-D numpy arrays in (row, col) order; ``layout`` only records how the grid
is (or will be) laid out in a file.
"""
from __future__ import annotations

import enum
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numba
import numpy as np

log = logging.getLogger(__name__)

SINK = 0
NODATA = 255

# neighbour scan order E, SE, S, SW, W, NW, N, NE
DIR_CODES = np.array([1, 2, 4, 8, 16, 32, 64, 128], dtype=np.uint8)
DR = np.array([0, 1, 1, 1, 0, -1, -1, -1], dtype=np.int64)
DC = np.array([1, 1, 0, -1, -1, -1, 0, 1], dtype=np.int64)

# byte -> neighbour index 0..7, 8 for sink, 9 for nodata, -1 for malformed
CODE_INDEX = np.full(256, -1, dtype=np.int64)
CODE_INDEX[DIR_CODES] = np.arange(8)
CODE_INDEX[SINK] = 8
CODE_INDEX[NODATA] = 9

MAX_U64 = (1 << 64) - 1


class GridError(Exception):
    """Base class for grid data errors."""


class MalformedDirection(GridError):
    pass


class CycleError(GridError):
    def __init__(self, cell: "CellRef"):
        super().__init__(f"flow directions contain a cycle through cell {tuple(cell)}")
        self.cell = cell


class BadMagic(GridError):
    pass


class BadHeader(GridError):
    pass


class TruncatedPayload(GridError):
    pass


class Direction(enum.IntEnum):
    E = 1
    SE = 2
    S = 4
    SW = 8
    W = 16
    NW = 32
    N = 64
    NE = 128
    SINK = 0
    NODATA = 255

    @property
    def offset(self) -> Optional[tuple[int, int]]:
        k = CODE_INDEX[int(self)]
        if k >= 8:
            return None
        return int(DR[k]), int(DC[k])


NEIGHBOUR_DIRECTIONS = tuple(Direction(int(c)) for c in DIR_CODES)


class Layout(enum.IntEnum):
    ROW_MAJOR = 0
    Z_ORDER = 1


class GridKind(enum.IntEnum):
    FLOWDIR = 1
    FLOWACC = 2
    ELEVATION = 3


class CellRef(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class GridDims:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.height}x{self.width}")
        if self.height * self.width > MAX_U64:
            raise ValueError("cell count does not fit in 64 bits")

    @property
    def n(self) -> int:
        return self.height * self.width

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def contains(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width


def decode_direction(byte: int) -> Direction:
    if not 0 <= byte <= 255 or CODE_INDEX[byte] < 0:
        raise MalformedDirection(f"invalid direction byte {byte}")
    return Direction(byte)


def encode_direction(d: Direction) -> int:
    return int(d)


def out_neighbor(dims: GridDims, c: CellRef, d: Direction) -> Optional[CellRef]:
    """Neighbour of ``c`` in direction ``d``; None for a sink or off-grid step."""
    if d == Direction.NODATA:
        raise ValueError("NoData cells have no out-neighbour")
    off = d.offset
    if off is None:
        return None
    r, col = c[0] + off[0], c[1] + off[1]
    if not dims.contains(r, col):
        return None
    return CellRef(r, col)


# --------------------------------------------------------------------------- grids


@dataclass(eq=False)
class _Grid:
    dims: GridDims
    data: np.ndarray
    layout: Layout = Layout.ROW_MAJOR

    dtype = np.uint8
    kind = GridKind.FLOWDIR

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=self.dtype)
        if self.data.shape != self.dims.shape:
            raise ValueError(f"data shape {self.data.shape} does not match {self.dims}")
        self.layout = Layout(self.layout)

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return (self.dims == other.dims and self.layout == other.layout
                and np.array_equal(self.data, other.data, equal_nan=self.dtype == np.float32))

    def __getitem__(self, cell):
        return self.data[cell[0], cell[1]]

    @property
    def cell_size(self) -> int:
        return np.dtype(self.dtype).itemsize

    def with_layout(self, layout: Layout):
        return type(self)(self.dims, self.data.copy(), Layout(layout))


@dataclass(eq=False)
class FlowDirGrid(_Grid):
    normalized: int = field(default=0, compare=False)

    dtype = np.uint8
    kind = GridKind.FLOWDIR

    @classmethod
    def from_array(cls, a, layout=Layout.ROW_MAJOR) -> "FlowDirGrid":
        a = np.asarray(a, dtype=np.uint8)
        return cls(GridDims(*a.shape), a, layout)

    @property
    def nodata_mask(self) -> np.ndarray:
        return self.data == NODATA


@dataclass(eq=False)
class FlowAccGrid(_Grid):
    dtype = np.uint64
    kind = GridKind.FLOWACC


@dataclass(eq=False)
class ElevationGrid(_Grid):
    dtype = np.float32
    kind = GridKind.ELEVATION

    @classmethod
    def from_array(cls, a, layout=Layout.ROW_MAJOR) -> "ElevationGrid":
        a = np.asarray(a, dtype=np.float32)
        return cls(GridDims(*a.shape), a, layout)

    @property
    def nodata_mask(self) -> np.ndarray:
        return np.isnan(self.data)


_GRID_TYPES = {GridKind.FLOWDIR: FlowDirGrid, GridKind.FLOWACC: FlowAccGrid,
               GridKind.ELEVATION: ElevationGrid}


def grid_type(kind: GridKind):
    return _GRID_TYPES[GridKind(kind)]


# ------------------------------------------------------------------ neighbourhoods


def in_neighbors(fd: FlowDirGrid, c: CellRef) -> list[CellRef]:
    h, w = fd.dims.shape
    r0, c0 = c
    if fd.data[r0, c0] == NODATA:
        return []
    found = []
    for k in range(8):
        r, col = r0 + DR[k], c0 + DC[k]
        if not (0 <= r < h and 0 <= col < w):
            continue
        j = CODE_INDEX[fd.data[r, col]]
        if j < 8 and r + DR[j] == r0 and col + DC[j] == c0:
            found.append(CellRef(int(r), int(col)))
    return found


@numba.njit(cache=True)
def _normalize(d, code_index, dr, dc):
    h, w = d.shape
    out = d.copy()
    changed = 0
    for r in range(h):
        for c in range(w):
            k = code_index[d[r, c]]
            if k < 0:
                return out, -1 - (r * w + c)
            if k >= 8:
                continue
            rr, cc = r + dr[k], c + dc[k]
            if rr < 0 or rr >= h or cc < 0 or cc >= w or d[rr, cc] == 255:
                out[r, c] = 0
                changed += 1
    return out, changed


def normalize_directions(fd: FlowDirGrid) -> FlowDirGrid:
    """Turn off-grid and into-NoData directions into sinks.

    Raises MalformedDirection on bytes outside the codec.  The returned grid
    records the number of rewritten cells in ``normalized``.
    """
    out, changed = _normalize(fd.data, CODE_INDEX, DR, DC)
    if changed < 0:
        idx = -1 - changed
        r, c = divmod(idx, fd.dims.width)
        raise MalformedDirection(f"invalid direction byte {fd.data[r, c]} at {(r, c)}")
    if changed:
        log.info("normalized %d off-grid or into-NoData directions to sinks", changed)
    return FlowDirGrid(fd.dims, out, fd.layout, normalized=int(changed))


@numba.njit(cache=True)
def _find_cycle(d, code_index, dr, dc):
    # 0 = unvisited, 1 = on the current path, 2 = done
    h, w = d.shape
    state = np.zeros(h * w, dtype=np.uint8)
    for start in range(h * w):
        if state[start] != 0:
            continue
        i = start
        while True:
            if state[i] == 1:
                return i
            if state[i] == 2:
                break
            state[i] = 1
            r, c = i // w, i % w
            k = code_index[d[r, c]]
            if k < 0 or k >= 8:
                break
            rr, cc = r + dr[k], c + dc[k]
            if rr < 0 or rr >= h or cc < 0 or cc >= w or d[rr, cc] == 255:
                break
            i = rr * w + cc
        # retire the path
        i = start
        while state[i] == 1:
            state[i] = 2
            r, c = i // w, i % w
            k = code_index[d[r, c]]
            if k < 0 or k >= 8:
                break
            rr, cc = r + dr[k], c + dc[k]
            if rr < 0 or rr >= h or cc < 0 or cc >= w:
                break
            i = rr * w + cc
    return -1


def validate_acyclic(fd: FlowDirGrid) -> None:
    """Raise CycleError if following out-neighbours can loop forever."""
    i = _find_cycle(fd.data, CODE_INDEX, DR, DC)
    if i >= 0:
        raise CycleError(CellRef(*divmod(int(i), fd.dims.width)))


@numba.njit(cache=True)
def out_index_array(d, code_index, dr, dc):
    """Row-major index of every cell's out-neighbour, -1 where there is none."""
    h, w = d.shape
    out = np.full(h * w, -1, dtype=np.int64)
    for r in range(h):
        for c in range(w):
            k = code_index[d[r, c]]
            if k < 0 or k >= 8:
                continue
            rr, cc = r + dr[k], c + dc[k]
            if 0 <= rr < h and 0 <= cc < w and d[rr, cc] != 255:
                out[r * w + c] = rr * w + cc
    return out


def out_indices(fd: FlowDirGrid) -> np.ndarray:
    return out_index_array(fd.data, CODE_INDEX, DR, DC)


# ---------------------------------------------------------------------- file codec

MAGIC = b"EMG1"
_HEADER = struct.Struct("<4sBB2xQQ8x")
HEADER_SIZE = _HEADER.size


def pack_header(kind: GridKind, layout: Layout, dims: GridDims) -> bytes:
    return _HEADER.pack(MAGIC, int(kind), int(layout), dims.height, dims.width)


def unpack_header(raw: bytes) -> tuple[GridKind, Layout, GridDims]:
    if len(raw) < HEADER_SIZE:
        raise BadHeader("file shorter than the 32-byte header")
    magic, kind, layout, h, w = _HEADER.unpack(raw[:HEADER_SIZE])
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if kind not in (1, 2, 3) or layout not in (0, 1) or h < 1 or w < 1:
        raise BadHeader(f"bad header fields kind={kind} layout={layout} dims={h}x{w}")
    return GridKind(kind), Layout(layout), GridDims(h, w)


def payload_bytes(grid: _Grid) -> bytes:
    """Cells in file order, little-endian."""
    from .zorder import zorder_permutation

    flat = grid.data.reshape(-1)
    if grid.layout == Layout.Z_ORDER:
        flat = flat[zorder_permutation(grid.dims)]
    return flat.astype(np.dtype(grid.dtype).newbyteorder("<"), copy=False).tobytes()


def grid_from_payload(kind: GridKind, layout: Layout, dims: GridDims, payload) -> _Grid:
    from .zorder import zorder_permutation

    cls = grid_type(kind)
    flat = np.frombuffer(payload, dtype=np.dtype(cls.dtype).newbyteorder("<"),
                         count=dims.n).astype(cls.dtype)
    if layout == Layout.Z_ORDER:
        a = np.empty(dims.n, dtype=cls.dtype)
        a[zorder_permutation(dims)] = flat
        flat = a
    return cls(dims, flat.reshape(dims.shape), layout)


def write_grid(grid: _Grid, path) -> None:
    with open(path, "wb") as f:
        f.write(pack_header(grid.kind, grid.layout, grid.dims))
        f.write(payload_bytes(grid))


def read_grid(path, normalize: bool = True) -> _Grid:
    raw = Path(path).read_bytes()
    kind, layout, dims = unpack_header(raw)
    size = dims.n * np.dtype(grid_type(kind).dtype).itemsize
    if len(raw) < HEADER_SIZE + size:
        raise TruncatedPayload(f"expected {size} payload bytes, found {len(raw) - HEADER_SIZE}")
    grid = grid_from_payload(kind, layout, dims, raw[HEADER_SIZE:HEADER_SIZE + size])
    if kind == GridKind.FLOWDIR and normalize:
        grid = normalize_directions(grid)
    return grid
