"""Z-order (Morton) layout of grids that need not be square or power-of-two.

A grid of h x w cells sits in the top-left corner of a 2^m x 2^m matrix.  The
Z-order traversal of that matrix splits into alternating runs of in-grid and
out-of-grid cells; a Z-order *file* stores only the in-grid runs.  The
segment tables map between file offsets and positions in the full traversal.

Bit layout of a Z index: row bits on odd positions, column bits on even
positions, so the row bit is the more significant one of each pair.
"""
from __future__ import annotations

import enum
import sys
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .blockio import IoStats, get_i64, set_i64, touch_range
from .grid import CellRef, Direction, GridDims, Layout

X_MASK = 0x5555555555555555
Y_MASK = X_MASK << 1


def _spread8(v: int) -> int:
    out = 0
    for i in range(8):
        out |= ((v >> i) & 1) << (2 * i)
    return out


# byte -> 16-bit dilated value; z byte -> its 4 column bits and 4 row bits
SPREAD8 = np.array([_spread8(v) for v in range(256)], dtype=np.int64)
COMPACT_X8 = np.array([sum(((v >> (2 * i)) & 1) << i for i in range(4)) for v in range(256)],
                      dtype=np.int64)
COMPACT_Y8 = np.array([sum(((v >> (2 * i + 1)) & 1) << i for i in range(4)) for v in range(256)],
                      dtype=np.int64)


def dilate(v: int) -> int:
    """Spread the bits of ``v`` onto even bit positions."""
    out, shift = 0, 0
    while v:
        out |= int(SPREAD8[v & 0xFF]) << shift
        v >>= 8
        shift += 16
    return out


def interleave(y: int, x: int, m: int) -> int:
    if y >> m or x >> m:
        raise ValueError(f"coordinates ({y}, {x}) do not fit in {m} bits")
    return (dilate(y) << 1) | dilate(x)


def deinterleave(z: int, m: int) -> tuple[int, int]:
    if z >> (2 * m):
        raise ValueError(f"Z index {z} out of range for m={m}")
    y = x = 0
    shift = 0
    while z:
        b = z & 0xFF
        x |= int(COMPACT_X8[b]) << shift
        y |= int(COMPACT_Y8[b]) << shift
        z >>= 8
        shift += 4
    return y, x


def levels(dims: GridDims) -> int:
    return max((dims.height - 1).bit_length(), (dims.width - 1).bit_length())


# compiled and vectorised variants (magic-number bit spreading)

@numba.njit(cache=True, inline="always")
def _part1by1(v):
    v &= 0xFFFFFFFF
    v = (v | (v << 16)) & 0x0000FFFF0000FFFF
    v = (v | (v << 8)) & 0x00FF00FF00FF00FF
    v = (v | (v << 4)) & 0x0F0F0F0F0F0F0F0F
    v = (v | (v << 2)) & 0x3333333333333333
    v = (v | (v << 1)) & 0x5555555555555555
    return v


@numba.njit(cache=True, inline="always")
def _compact1by1(v):
    v &= 0x5555555555555555
    v = (v | (v >> 1)) & 0x3333333333333333
    v = (v | (v >> 2)) & 0x0F0F0F0F0F0F0F0F
    v = (v | (v >> 4)) & 0x00FF00FF00FF00FF
    v = (v | (v >> 8)) & 0x0000FFFF0000FFFF
    v = (v | (v >> 16)) & 0x00000000FFFFFFFF
    return v


@numba.njit(cache=True)
def nb_interleave(y, x):
    return (_part1by1(y) << 1) | _part1by1(x)


@numba.njit(cache=True)
def nb_deinterleave(z):
    return _compact1by1(z >> 1), _compact1by1(z)


@numba.njit(cache=True)
def _deinterleave_array(z):
    n = len(z)
    r = np.empty(n, dtype=np.int64)
    c = np.empty(n, dtype=np.int64)
    for i in range(n):
        r[i] = _compact1by1(z[i] >> 1)
        c[i] = _compact1by1(z[i])
    return r, c


# ------------------------------------------------------------------ segment tables


@dataclass(frozen=True)
class SegmentTables:
    """Runs D_1..D_t of in-grid cells in the Z-order traversal of G'.

    ``F[i]`` is the file offset of run i, ``Z[i]`` its position in the full
    traversal and ``D[i]`` its length (all 0-indexed).
    """
    dims: GridDims
    m: int
    F: np.ndarray
    Z: np.ndarray
    D: np.ndarray

    @property
    def t(self) -> int:
        return len(self.F)

    @property
    def gaps(self) -> np.ndarray:
        """Lengths of the out-of-grid runs N_1..N_t (the last may be 0)."""
        ends = self.Z + self.D
        nxt = np.append(self.Z[1:], 4 ** self.m)
        return nxt - ends


def build_segment_tables(dims: GridDims) -> SegmentTables:
    """Walk quadrants of G' recursively, never enumerating cells one by one."""
    h, w = dims.height, dims.width
    m = levels(dims)
    runs: list[list] = []  # [inside, length]

    def emit(inside: bool, length: int):
        if runs and runs[-1][0] == inside:
            runs[-1][1] += length
        else:
            runs.append([inside, length])

    def visit(r0: int, c0: int, size: int):
        if r0 >= h or c0 >= w:
            emit(False, size * size)
        elif r0 + size <= h and c0 + size <= w:
            emit(True, size * size)
        else:
            half = size // 2
            visit(r0, c0, half)
            visit(r0, c0 + half, half)
            visit(r0 + half, c0, half)
            visit(r0 + half, c0 + half, half)

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * m + 100))
    try:
        visit(0, 0, 1 << m)
    finally:
        sys.setrecursionlimit(limit)

    F, Z, D = [], [], []
    f = z = 0
    for inside, length in runs:
        if inside:
            F.append(f)
            Z.append(z)
            D.append(length)
            f += length
        z += length
    as64 = lambda a: np.array(a, dtype=np.int64)
    return SegmentTables(dims, m, as64(F), as64(Z), as64(D))


def file_offset_to_rowcol(t: SegmentTables, p: int) -> CellRef:
    if not 0 <= p < t.dims.n:
        raise IndexError(f"file offset {p} outside grid of {t.dims.n} cells")
    i = int(np.searchsorted(t.F, p, side="right")) - 1
    return CellRef(*deinterleave(int(t.Z[i]) + p - int(t.F[i]), t.m))


def _z_to_file(t: SegmentTables, z: int) -> Optional[int]:
    i = int(np.searchsorted(t.Z, z, side="right")) - 1
    if i < 0 or z >= t.Z[i] + t.D[i]:
        return None
    return int(t.F[i]) + z - int(t.Z[i])


def rowcol_to_file_offset(t: SegmentTables, c: CellRef) -> int:
    if not t.dims.contains(*c):
        raise IndexError(f"cell {tuple(c)} outside grid {t.dims}")
    return _z_to_file(t, interleave(c[0], c[1], t.m))


def z_neighbor_offset(t: SegmentTables, p: int, d: Direction) -> Optional[int]:
    """File offset of the neighbour of offset ``p`` in direction ``d``.

    Works on the dilated row/column parts of the Z index directly: adding one
    to the column part is ``((z | Y_MASK) + 1) & X_MASK``.  Bounds are checked
    by comparing dilated values, which preserves order.
    """
    if not 0 <= p < t.dims.n:
        raise IndexError(f"file offset {p} outside grid of {t.dims.n} cells")
    off = Direction(d).offset
    if off is None:
        return None
    dy, dx = off
    i = int(np.searchsorted(t.F, p, side="right")) - 1
    z = int(t.Z[i]) + p - int(t.F[i])
    xs, ys = z & X_MASK, z & Y_MASK
    if dx == 1:
        xs = ((z | Y_MASK) + 1) & X_MASK
        if xs >= dilate(t.dims.width):
            return None
    elif dx == -1:
        if xs == 0:
            return None
        xs = (xs - 1) & X_MASK
    if dy == 1:
        ys = ((z | X_MASK) + 1) & Y_MASK
        if ys >= dilate(t.dims.height) << 1:
            return None
    elif dy == -1:
        if ys == 0:
            return None
        ys = (ys - 1) & Y_MASK
    return _z_to_file(t, ys | xs)


def zorder_indices(dims: GridDims, t: Optional[SegmentTables] = None) -> np.ndarray:
    """Z index in G' of every file offset of the Z-order file."""
    t = t or build_segment_tables(dims)
    return np.repeat(t.Z - t.F, t.D) + np.arange(dims.n, dtype=np.int64)


def zorder_permutation(dims: GridDims, t: Optional[SegmentTables] = None) -> np.ndarray:
    """Row-major cell index stored at each offset of the Z-order file."""
    r, c = _deinterleave_array(zorder_indices(dims, t))
    return r * dims.width + c


# compiled offset translation, used by the algorithms


@numba.njit(cache=True)
def nb_z_to_file(z, Zt, Ft, Dt):
    i = np.searchsorted(Zt, z, side="right") - 1
    if i < 0 or z >= Zt[i] + Dt[i]:
        return -1
    return Ft[i] + z - Zt[i]


@numba.njit(cache=True)
def nb_cell_pos(r, c, w, zlayout, Zt, Ft, Dt):
    """File position (in cells) of cell (r, c)."""
    if zlayout:
        return nb_z_to_file(nb_interleave(r, c), Zt, Ft, Dt)
    return r * w + c


@numba.njit(cache=True)
def nb_file_to_rc(p, Zt, Ft):
    i = np.searchsorted(Ft, p, side="right") - 1
    return nb_deinterleave(Zt[i] + p - Ft[i])


# ---------------------------------------------------------------- conversion


class ConversionStrategy(enum.Enum):
    Z_ORDER_SCAN = "zscan"
    ROW_BY_ROW_SCAN = "rowscan"
    MERGE_SORT = "mergesort"


class ConversionDirection(enum.Enum):
    ROW_TO_Z = "row-to-z"
    Z_TO_ROW = "z-to-row"


@numba.njit(cache=True)
def _copy_cell(sdv, soff, ddv, doff, s):
    touch_range(sdv, soff, s, False)
    touch_range(ddv, doff, s, True)
    for k in range(s):
        ddv[0][doff + k] = sdv[0][soff + k]


@numba.njit(cache=True)
def _zscan_convert(sdv, src, ddv, dst, w, s, Zt, Ft, Dt, to_z):
    p = 0
    for i in range(len(Ft)):
        for k in range(Dt[i]):
            r, c = nb_deinterleave(Zt[i] + k)
            q = r * w + c
            if to_z:
                _copy_cell(sdv, src + q * s, ddv, dst + p * s, s)
            else:
                _copy_cell(sdv, src + p * s, ddv, dst + q * s, s)
            p += 1


@numba.njit(cache=True)
def _rowscan_convert(sdv, src, ddv, dst, h, w, s, Zt, Ft, Dt, to_z):
    for r in range(h):
        for c in range(w):
            q = r * w + c
            p = nb_z_to_file(nb_interleave(r, c), Zt, Ft, Dt)
            if to_z:
                _copy_cell(sdv, src + q * s, ddv, dst + p * s, s)
            else:
                _copy_cell(sdv, src + p * s, ddv, dst + q * s, s)


@numba.njit(cache=True)
def _make_records(sdv, src, ddv, rec, h, w, s, Zt, Ft, Dt, to_z):
    # record = (target offset, cell bytes packed into one word)
    n = h * w
    for p in range(n):
        if to_z:
            r, c = p // w, p % w
            key = nb_z_to_file(nb_interleave(r, c), Zt, Ft, Dt)
        else:
            r, c = nb_file_to_rc(p, Zt, Ft)
            key = r * w + c
        touch_range(sdv, src + p * s, s, False)
        v = 0
        for k in range(s):
            v |= np.int64(sdv[0][src + p * s + k]) << (8 * k)
        set_i64(ddv, rec + 16 * p, key)
        set_i64(ddv, rec + 16 * p + 8, v)


@numba.njit(cache=True)
def _write_sorted(rdv, rec, ddv, dst, n, s):
    for p in range(n):
        v = get_i64(rdv, rec + 16 * p + 8)
        touch_range(ddv, dst + p * s, s, True)
        for k in range(s):
            ddv[0][dst + p * s + k] = (v >> (8 * k)) & 0xFF


def convert_layout(src, dst, strategy: ConversionStrategy,
                   direction: Optional[ConversionDirection] = None) -> IoStats:
    """Copy grid file ``src`` into ``dst`` in the other layout.

    ``src`` and ``dst`` are ``GridFile``s, on the same device or on two
    devices.  Returns the I/O spent on both devices, flushes included.
    """
    from .extsort import external_sort

    if src.dims != dst.dims or src.kind != dst.kind:
        raise ValueError("source and destination grids differ in shape or kind")
    to_z = src.layout == Layout.ROW_MAJOR
    if dst.layout == src.layout:
        raise ValueError("source and destination already share a layout")
    expected = ConversionDirection.ROW_TO_Z if to_z else ConversionDirection.Z_TO_ROW
    if direction is not None and direction != expected:
        raise ValueError(f"direction {direction} does not match the file layouts")
    strategy = ConversionStrategy(strategy)
    devices = [src.device] if src.device is dst.device else [src.device, dst.device]
    before = [d.stats for d in devices]
    t = src.tables
    h, w, s = src.dims.height, src.dims.width, src.cell_size
    sdv, ddv = src.device.state(), dst.device.state()
    if strategy is ConversionStrategy.Z_ORDER_SCAN:
        _zscan_convert(sdv, src.offset, ddv, dst.offset, w, s, t.Z, t.F, t.D, to_z)
    elif strategy is ConversionStrategy.ROW_BY_ROW_SCAN:
        _rowscan_convert(sdv, src.offset, ddv, dst.offset, h, w, s, t.Z, t.F, t.D, to_z)
    else:
        if s > 8:
            raise ValueError("merge-sort conversion packs a cell into one 8-byte word")
        n = src.dims.n
        rec = dst.device.allocate(16 * n)
        ddv = dst.device.state()
        _make_records(src.device.state(), src.offset, ddv, rec, h, w, s, t.Z, t.F, t.D, to_z)
        out = external_sort(dst.device, rec, n, words=2, key=0)
        ddv = dst.device.state()
        _write_sorted(ddv, out, ddv, dst.offset, n, s)
    total = IoStats(block_size=devices[0].config.block_size)
    for d, b in zip(devices, before):
        total = total + (d.flush() - b)
    return total
