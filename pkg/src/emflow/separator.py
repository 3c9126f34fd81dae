"""Separator-based flow accumulation for memories of M bytes in blocks of B bytes.

The grid is cut into subgrids that fit in memory.  Phase 1 accumulates each
subgrid's interior onto its boundary cells and records, per boundary cell,
the first boundary cell downstream.  Phase 2 finishes accumulation on the
boundary cells alone, in memory.  Phase 3 pushes the final boundary values
back into each interior and writes the output.

Two subgrid schemes are supported: z x z subgrids that share their boundary
rows and columns (row-major files), and disjoint power-of-two subgrids that
are each contiguous in a Z-order file.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numba
import numpy as np

from .blockio import BSIZE, get_u8, get_u64, set_i64, set_u64
from .grid import CODE_INDEX, DC, DR, GridDims, GridKind, Layout
from .naive import RunResult
from .storage import GridFile, new_grid_file
from .zorder import interleave, nb_cell_pos


class TooSmallMemory(ValueError):
    pass


class PhaseTwoOverflow(MemoryError):
    pass


class DomainError(ValueError):
    pass


SHARED, DISJOINT = 0, 1
DEFAULT_PHASE_TWO_BUDGET = 1 << 30


# ------------------------------------------------------------------ calculators


def _aware_cost(z: int, B: int) -> int:
    return z * -(-8 * z // B) + z * -(-z // B) + 8 * -(-8 * z // B)


def exact_subgrid_size(memory: int, block_size: int) -> int:
    """Largest z with z*ceil(8z/B) + z*ceil(z/B) + 8*ceil(8z/B) <= M/B (integer search)."""
    if memory < 2 * block_size:
        raise TooSmallMemory(f"M={memory} is less than two blocks of {block_size}")
    budget = memory // block_size
    if _aware_cost(3, block_size) > budget:
        raise TooSmallMemory(f"no z >= 3 fits in M={memory}, B={block_size}")
    lo, hi = 3, 6
    while _aware_cost(hi, block_size) <= budget:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _aware_cost(mid, block_size) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def closed_form_subgrid_size(memory: int, block_size: int) -> float:
    """The sufficient bound (sqrt(1 + 8M/B^2) - 1) * B / 9 on z."""
    return (math.sqrt(1 + 8 * memory / block_size ** 2) - 1) * block_size / 9


def choose_subgrid_size(memory: int, block_size: int) -> int:
    """Subgrid side for the cache-aware algorithm.

    The floor of the closed-form sufficient bound, capped by the exact
    inequality so the blocks of one subgrid always fit.
    """
    z = min(int(closed_form_subgrid_size(memory, block_size)),
            exact_subgrid_size(memory, block_size))
    if z < 3:
        raise TooSmallMemory(f"no z >= 3 fits in M={memory}, B={block_size}")
    return z


def _band_blocks(rows: np.ndarray, c0: np.ndarray, c1: np.ndarray, w: int, s: int,
                 B: int) -> np.ndarray:
    """Distinct blocks touched by rows x [c0, c1] of a row-major file, per column band."""
    sb = (rows[:, None] * w + c0[None, :]) * s // B
    eb = ((rows[:, None] * w + c1[None, :] + 1) * s - 1) // B
    total = (eb - sb + 1).sum(axis=0)
    if len(rows) > 1:
        total -= np.maximum(0, eb[:-1] - sb[1:] + 1).sum(axis=0)
    return total


def subgrid_footprint(dims: GridDims, z: int, block_size: int) -> int:
    """Most blocks one subgrid of a row-major grid keeps busy.

    Counts the directions and flow values of the subgrid at their real
    alignment, plus the separator records it reads and writes.
    """
    sep = SeparatorSet(dims, z)
    w, B = dims.width, block_size
    bands = np.array(_bands(sep.cols), dtype=np.int64)
    c0, c1 = bands[:, 0], bands[:, 1]
    row_rec = 2 * 2 * (-(-8 * (c1 - c0 + 1) // B) + 1)
    worst = 0
    for r0, r1 in _bands(sep.rows):
        rows = np.arange(r0, r1 + 1, dtype=np.int64)
        col_rec = 2 * (-(-8 * max(r1 - r0 - 1, 0) * len(sep.cols) // B) + 1)
        busy = (_band_blocks(rows, c0, c1, w, 1, B) + _band_blocks(rows, c0, c1, w, 8, B)
                + row_rec + col_rec)
        worst = max(worst, int(busy.max()))
    return worst


def fit_subgrid_size(dims: GridDims, memory: int, block_size: int) -> int:
    """Largest z <= choose_subgrid_size whose real footprint fits in M/B blocks.

    Row segments of a subgrid rarely start on a block boundary, so a subgrid
    can need up to one block more per row than the sizing inequality assumes.
    """
    budget = memory // block_size
    z = choose_subgrid_size(memory, block_size)
    z = min(z, max(3, max(dims.shape)))
    if subgrid_footprint(dims, z, block_size) <= budget:
        return z
    lo, hi = 3, z
    if subgrid_footprint(dims, lo, block_size) > budget:
        raise TooSmallMemory(f"no z >= 3 fits in M={memory}, B={block_size} for {dims}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if subgrid_footprint(dims, mid, block_size) <= budget:
            lo = mid
        else:
            hi = mid
    return lo


def _z_cost(y: int, B: int) -> int:
    return -(-y * y // B) + -(-8 * y * y // B) + 2 * -(-32 * y // B) + 4


def choose_subgrid_size_z(memory: int, block_size: int) -> int:
    """Largest power of two y whose FlowDir and FlowAcc subgrids plus boundary records fit."""
    budget = memory // block_size
    if _z_cost(2, block_size) > budget:
        raise TooSmallMemory(f"no power-of-two subgrid fits in M={memory}, B={block_size}")
    y = 2
    while _z_cost(2 * y, block_size) <= budget:
        y *= 2
    return y


def predicted_io_overhead(memory: int, block_size: int) -> float:
    """I/O volume of the cache-aware algorithm relative to input plus output size."""
    if block_size <= 0 or memory <= 0:
        raise DomainError(f"formula needs positive M and B (M={memory}, B={block_size})")
    return 10 / 9 + 4 / (math.sqrt(8 * memory / block_size ** 2 + 1) - 1)


# ----------------------------------------------------------------- separator sets


def _separator_lines(extent: int, step: int) -> np.ndarray:
    lines = list(range(0, extent, step))
    if lines[-1] != extent - 1:
        lines.append(extent - 1)
    return np.array(lines, dtype=np.int64)


def _ranks(extent: int, lines: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    member = np.zeros(extent, dtype=np.bool_)
    member[lines] = True
    rank = np.empty(extent, dtype=np.int64)
    rank[member] = np.arange(member.sum())
    rank[~member] = np.arange((~member).sum())
    return member, rank


@dataclass
class SeparatorSet:
    """Boundary cells of z x z subgrids sharing boundaries (step z - 1).

    Enumeration: the rows made entirely of separator cells come first, row by
    row; then the remaining separator cells, also row by row, so the column
    separators of one band of subgrids are contiguous.
    """
    dims: GridDims
    z: int

    def __post_init__(self):
        if self.z < 3:
            raise ValueError("shared-boundary subgrids need z >= 3")
        h, w = self.dims.shape
        self.rows = _separator_lines(h, self.z - 1)
        self.cols = _separator_lines(w, self.z - 1)
        self.is_row, self.row_rank = _ranks(h, self.rows)
        self.is_col, self.col_rank = _ranks(w, self.cols)

    @property
    def size(self) -> int:
        h, w = self.dims.shape
        nr, nc = len(self.rows), len(self.cols)
        return nr * w + nc * (h - nr)

    def index(self, r: int, c: int) -> int:
        return int(_sidx_shared(r, c, self.dims.width, self.dims.height, len(self.rows),
                                self.is_row, self.row_rank, self.is_col, self.col_rank))

    def cells(self) -> np.ndarray:
        """Row-major cell indices in enumeration order."""
        h, w = self.dims.shape
        full = (self.rows[:, None] * w + np.arange(w)[None, :]).reshape(-1)
        free = np.flatnonzero(~self.is_row)
        part = (free[:, None] * w + self.cols[None, :]).reshape(-1)
        return np.concatenate([full, part])

    def index_array(self, cells: np.ndarray) -> np.ndarray:
        w = self.dims.width
        return np.array([self.index(int(c) // w, int(c) % w) for c in cells], dtype=np.int64)

    def subgrids(self) -> Iterator[tuple[int, int, int, int]]:
        """(r0, r1, c0, c1), inclusive bounds, row band by row band."""
        rb = _bands(self.rows)
        cb = _bands(self.cols)
        for r0, r1 in rb:
            for c0, c1 in cb:
                yield r0, r1, c0, c1

    def boundary_runs(self, r0: int, r1: int, c0: int, c1: int):
        """Contiguous enumeration runs covering a subgrid's boundary.

        Yields ((row, None), start, count, 1) for boundary rows spanning c0..c1
        and ((None, col), start, count, stride) for boundary columns spanning
        r0+1..r1-1, whose entries are ``stride`` apart.
        """
        for r in sorted({r0, r1}):
            yield (r, None), self.index(r, c0), c1 - c0 + 1, 1
        if r1 - r0 > 1:
            for c in sorted({c0, c1}):
                yield (None, c), self.index(r0 + 1, c), r1 - r0 - 1, len(self.cols)


def _bands(lines: np.ndarray) -> list[tuple[int, int]]:
    if len(lines) == 1:
        return [(int(lines[0]), int(lines[0]))]
    return [(int(a), int(b)) for a, b in zip(lines[:-1], lines[1:])]


@dataclass
class DisjointSeparatorSet:
    """Boundary rings of disjoint y x y subgrids aligned to the Z-order recursion."""
    dims: GridDims
    y: int

    def __post_init__(self):
        if self.y < 1 or self.y & (self.y - 1):
            raise ValueError("disjoint subgrids need a power-of-two side")
        h, w = self.dims.shape
        y = self.y
        self.ny, self.nx = -(-h // y), -(-w // y)
        order = sorted(((interleave(i, j, 32), i, j) for i in range(self.ny)
                        for j in range(self.nx)))
        self.order = np.array([(i, j) for _, i, j in order], dtype=np.int64).reshape(-1, 2)
        self.base = np.zeros((self.ny, self.nx), dtype=np.int64)
        total = 0
        for i, j in self.order:
            self.base[i, j] = total
            qh, qw = min(y, h - i * y), min(y, w - j * y)
            total += _ring_size(qh, qw)
        self.size = total

    def index(self, r: int, c: int) -> int:
        return int(_sidx_disjoint(r, c, self.dims.height, self.dims.width, self.y, self.base))

    def subgrids(self) -> Iterator[tuple[int, int, int, int]]:
        h, w = self.dims.shape
        y = self.y
        for i, j in self.order:
            yield i * y, min(h, (i + 1) * y) - 1, j * y, min(w, (j + 1) * y) - 1

    def cells(self) -> np.ndarray:
        w = self.dims.width
        out = np.empty(self.size, dtype=np.int64)
        for r0, r1, c0, c1 in self.subgrids():
            for r in range(r0, r1 + 1):
                for c in range(c0, c1 + 1):
                    s = self.index(r, c)
                    if s >= 0:
                        out[s] = r * w + c
        return out


def _ring_size(qh: int, qw: int) -> int:
    if qh <= 2 or qw <= 2:
        return qh * qw
    return 2 * qw + 2 * (qh - 2)


# ------------------------------------------------------------ compiled helpers


@numba.njit(cache=True)
def _sidx_shared(r, c, w, h, nrows, is_row, row_rank, is_col, col_rank):
    if is_row[r]:
        return row_rank[r] * w + c
    if is_col[c]:
        return nrows * w + row_rank[r] * (col_rank[w - 1] + 1) + col_rank[c]
    return -1


@numba.njit(cache=True)
def _ring_rank(i, j, qh, qw):
    if qh <= 2 or qw <= 2:
        return i * qw + j
    if i == 0:
        return j
    if i == qh - 1:
        return qw + 2 * (qh - 2) + j
    if j == 0:
        return qw + 2 * (i - 1)
    if j == qw - 1:
        return qw + 2 * (i - 1) + 1
    return -1


@numba.njit(cache=True)
def _sidx_disjoint(r, c, h, w, y, base):
    i, j = r // y, c // y
    qh = min(y, h - i * y)
    qw = min(y, w - j * y)
    k = _ring_rank(r - i * y, c - j * y, qh, qw)
    if k < 0:
        return -1
    return base[i, j] + k


@numba.njit(cache=True)
def _sidx(mode, r, c, h, w, nrows, is_row, row_rank, is_col, col_rank, y, base):
    if mode == 0:
        return _sidx_shared(r, c, w, h, nrows, is_row, row_rank, is_col, col_rank)
    return _sidx_disjoint(r, c, h, w, y, base)


@numba.njit(cache=True)
def _load_subgrid(dv, fd_off, r0, c0, qh, qw, w, zl, Zt, Ft, Dt, h, code_index, dr, dc,
                  codes, out, bnd):
    """Read a subgrid's directions; out = local index, -1 for none, -2 for leaving Q."""
    for i in range(qh):
        for j in range(qw):
            codes[i * qw + j] = get_u8(dv, fd_off + nb_cell_pos(r0 + i, c0 + j, w, zl, Zt, Ft, Dt))
    for i in range(qh):
        for j in range(qw):
            p = i * qw + j
            bnd[p] = i == 0 or j == 0 or i == qh - 1 or j == qw - 1
            k = code_index[codes[p]]
            if k >= 8:
                out[p] = -1
                continue
            ii, jj = i + dr[k], j + dc[k]
            if 0 <= ii < qh and 0 <= jj < qw:
                out[p] = ii * qw + jj
            elif 0 <= r0 + ii < h and 0 <= c0 + jj < w:
                out[p] = -2
            else:
                out[p] = -1


@numba.njit(cache=True)
def _accumulate_interior(out, bnd, acc, n, pending, marked):
    """Naive accumulation restricted to interior cells; boundary cells act as sinks.

    Returns the number of steps, or -1 if the local flow field has a cycle.
    """
    for p in range(n):
        pending[p] = 0
        marked[p] = 0
    for p in range(n):
        q = out[p]
        if not bnd[p] and q >= 0 and not bnd[q]:
            pending[q] += 1
    steps = 0
    for s in range(n):
        if bnd[s] or marked[s] or pending[s]:
            continue
        p = s
        while True:
            marked[p] = 1
            q = out[p]
            if q < 0:
                break
            acc[q] += acc[p]
            steps += 1
            if steps > n:
                return -1
            if bnd[q]:
                break
            pending[q] -= 1
            if pending[q] > 0:
                break
            p = q
    for p in range(n):
        if not bnd[p] and not marked[p]:
            return -1
    return steps


@numba.njit(cache=True)
def _first_boundary(out, bnd, p, n):
    """First boundary cell reached from interior cell p, or -1."""
    steps = 0
    while p >= 0 and not bnd[p]:
        p = out[p]
        steps += 1
        if steps > n:
            return -1
    return p


@numba.njit(cache=True)
def _phase_one(dv, fd_off, sacc, snb, subs, mode, h, w, zl, Zt, Ft, Dt,
               nrows, is_row, row_rank, is_col, col_rank, y, base, code_index, dr, dc, cap):
    codes = np.empty(cap, dtype=np.uint8)
    out = np.empty(cap, dtype=np.int64)
    bnd = np.empty(cap, dtype=np.bool_)
    acc = np.empty(cap, dtype=np.uint64)
    pending = np.empty(cap, dtype=np.int64)
    marked = np.empty(cap, dtype=np.uint8)
    for t in range(subs.shape[0]):
        r0, r1, c0, c1 = subs[t, 0], subs[t, 1], subs[t, 2], subs[t, 3]
        qh, qw = r1 - r0 + 1, c1 - c0 + 1
        n = qh * qw
        _load_subgrid(dv, fd_off, r0, c0, qh, qw, w, zl, Zt, Ft, Dt, h, code_index, dr, dc,
                      codes, out, bnd)
        for p in range(n):
            acc[p] = 0 if (bnd[p] or codes[p] == 255) else 1
        if _accumulate_interior(out, bnd, acc, n, pending, marked) < 0:
            return -1
        for i in range(qh):
            for j in range(qw):
                p = i * qw + j
                if not bnd[p]:
                    continue
                r, c = r0 + i, c0 + j
                s = _sidx(mode, r, c, h, w, nrows, is_row, row_rank, is_col, col_rank, y, base)
                if codes[p] == 255:
                    # destinations are written for every S cell, so snb needs no prefill
                    set_i64(dv, snb + 8 * s, -1)
                    continue
                own = mode == 1 or ((i > 0 or r0 == 0) and (j > 0 or c0 == 0))
                add = acc[p] + (1 if own else 0)
                if add:
                    set_u64(dv, sacc + 8 * s, get_u64(dv, sacc + 8 * s) + add)
                q = out[p]
                nb = np.int64(-1)
                if q >= 0:
                    d = q if bnd[q] else _first_boundary(out, bnd, q, n)
                    if d >= 0:
                        nb = _sidx(mode, r0 + d // qw, c0 + d % qw, h, w, nrows, is_row,
                                   row_rank, is_col, col_rank, y, base)
                elif q == -2:
                    if mode == 0:
                        continue  # the subgrid that holds the out-neighbour writes it
                    k = code_index[codes[p]]
                    nb = _sidx(mode, r + dr[k], c + dc[k], h, w, nrows, is_row, row_rank,
                               is_col, col_rank, y, base)
                set_i64(dv, snb + 8 * s, nb)
    return 0


@numba.njit(cache=True)
def _phase_two(acc, nb):
    """Naive accumulation over the separator forest given by local destinations."""
    m = len(acc)
    pending = np.zeros(m, dtype=np.int64)
    for s in range(m):
        if nb[s] >= 0:
            pending[nb[s]] += 1
    marked = np.zeros(m, dtype=np.uint8)
    steps = 0
    for s0 in range(m):
        if marked[s0] or pending[s0]:
            continue
        s = s0
        while True:
            marked[s] = 1
            t = nb[s]
            if t < 0:
                break
            acc[t] += acc[s]
            steps += 1
            pending[t] -= 1
            if pending[t] > 0:
                break
            s = t
    for s in range(m):
        if not marked[s]:
            return -1
    return steps


@numba.njit(cache=True)
def _phase_three(dv, fd_off, acc_off, sacc, subs, mode, h, w, zl, Zt, Ft, Dt,
                 nrows, is_row, row_rank, is_col, col_rank, y, base, code_index, dr, dc, cap):
    codes = np.empty(cap, dtype=np.uint8)
    out = np.empty(cap, dtype=np.int64)
    bnd = np.empty(cap, dtype=np.bool_)
    acc = np.empty(cap, dtype=np.uint64)
    pending = np.empty(cap, dtype=np.int64)
    marked = np.empty(cap, dtype=np.uint8)
    bval = np.empty(cap, dtype=np.uint64)
    for t in range(subs.shape[0]):
        r0, r1, c0, c1 = subs[t, 0], subs[t, 1], subs[t, 2], subs[t, 3]
        qh, qw = r1 - r0 + 1, c1 - c0 + 1
        n = qh * qw
        _load_subgrid(dv, fd_off, r0, c0, qh, qw, w, zl, Zt, Ft, Dt, h, code_index, dr, dc,
                      codes, out, bnd)
        for p in range(n):
            acc[p] = 0 if (bnd[p] or codes[p] == 255) else 1
        for p in range(n):
            if bnd[p] and codes[p] != 255:
                s = _sidx(mode, r0 + p // qw, c0 + p % qw, h, w, nrows, is_row, row_rank,
                          is_col, col_rank, y, base)
                v = get_u64(dv, sacc + 8 * s)
                q = out[p]
                if q >= 0 and not bnd[q]:
                    acc[q] += v
                bval[p] = v
        if _accumulate_interior(out, bnd, acc, n, pending, marked) < 0:
            return -1
        for p in range(n):
            if bnd[p]:
                acc[p] = bval[p] if codes[p] != 255 else 0
        # Write each row's leading block first and the rest afterwards, so the
        # partly written blocks shared with the next subgrid are the freshest.
        bs = dv[1][BSIZE]
        for rest in range(2):
            for i in range(qh):
                head = np.int64(-1)
                for j in range(qw):
                    p = i * qw + j
                    if bnd[p] and mode == 0 and not ((i > 0 or r0 == 0) and (j > 0 or c0 == 0)):
                        continue
                    off = acc_off + 8 * nb_cell_pos(r0 + i, c0 + j, w, zl, Zt, Ft, Dt)
                    if head < 0:
                        head = off // bs
                    if (off // bs == head) != (rest == 0):
                        continue
                    set_u64(dv, off, acc[p])
    return 0


# -------------------------------------------------------------------- drivers


def _run(fd: GridFile, mode: int, sep, phase_two_budget: int, keep: bool) -> RunResult:
    dev = fd.device
    h, w = fd.dims.shape
    t = fd.tables
    m = sep.size
    if 16 * m > phase_two_budget:
        raise PhaseTwoOverflow(f"{m} separator cells need {16 * m} bytes, budget "
                               f"{phase_two_budget}")
    before = dev.stats
    out = new_grid_file(dev, fd.dims, GridKind.FLOWACC, fd.layout, tables=t)
    sacc = dev.allocate(8 * m)
    snb = dev.allocate(8 * m)
    subs = np.array(list(sep.subgrids()), dtype=np.int64).reshape(-1, 4)
    cap = int(((subs[:, 1] - subs[:, 0] + 1) * (subs[:, 3] - subs[:, 2] + 1)).max())
    if mode == 0:
        tabs = (len(sep.rows), sep.is_row, sep.row_rank, sep.is_col, sep.col_rank,
                1, np.zeros((1, 1), dtype=np.int64))
    else:
        empty_b = np.zeros(1, dtype=np.bool_)
        empty_i = np.zeros(1, dtype=np.int64)
        tabs = (0, empty_b, empty_i, empty_b, empty_i, sep.y, sep.base)
    common = (subs, mode, h, w, fd.is_z, t.Z, t.F, t.D) + tabs + (CODE_INDEX, DR, DC, cap)
    if _phase_one(dev.state(), fd.offset, sacc, snb, *common) < 0:
        raise RuntimeError("flow directions contain a cycle")
    info = {"separator_cells": m}
    if keep:
        info["phase_one"] = np.frombuffer(dev.peek(sacc, 8 * m).tobytes(), dtype=np.uint64).copy()
    acc = np.frombuffer(dev.read_bytes(sacc, 8 * m), dtype=np.uint64).copy()
    nb = np.frombuffer(dev.read_bytes(snb, 8 * m), dtype=np.int64).copy()
    if keep:
        info["destinations"] = nb.copy()
    if _phase_two(acc, nb) < 0:
        raise RuntimeError("separator destinations contain a cycle")
    dev.write_bytes(sacc, acc.tobytes())
    if _phase_three(dev.state(), fd.offset, out.offset, sacc, *common) < 0:
        raise RuntimeError("flow directions contain a cycle")
    stats = dev.flush() - before
    return RunResult(out, stats, info)


def cache_aware_accumulation(fd: GridFile, memory: Optional[int] = None,
                             block_size: Optional[int] = None, z: Optional[int] = None,
                             phase_two_budget: int = DEFAULT_PHASE_TWO_BUDGET,
                             keep_intermediate: bool = False) -> RunResult:
    """Three-phase accumulation over z x z subgrids with shared boundaries.

    ``z`` defaults to ``choose_subgrid_size`` of the device's (or the given)
    M and B, lowered for row-major files until one subgrid's blocks at their
    real alignment fit in memory.  The output file uses the input's layout.
    """
    cfg = fd.device.config
    if z is None:
        m, b = memory or cfg.memory, block_size or cfg.block_size
        z = fit_subgrid_size(fd.dims, m, b) if not fd.is_z else choose_subgrid_size(m, b)
    if z < 3:
        raise TooSmallMemory("shared-boundary subgrids need z >= 3")
    res = _run(fd, SHARED, SeparatorSet(fd.dims, z), phase_two_budget, keep_intermediate)
    res.info["z"] = z
    return res


def cache_aware_accumulation_z(fd: GridFile, memory: Optional[int] = None,
                               block_size: Optional[int] = None, y: Optional[int] = None,
                               phase_two_budget: int = DEFAULT_PHASE_TWO_BUDGET,
                               keep_intermediate: bool = False) -> RunResult:
    """Variant for Z-order files: disjoint power-of-two subgrids visited in Z-order."""
    if fd.layout != Layout.Z_ORDER:
        raise ValueError("the disjoint-subgrid variant needs a Z-order file")
    cfg = fd.device.config
    if y is None:
        y = choose_subgrid_size_z(memory or cfg.memory, block_size or cfg.block_size)
    res = _run(fd, DISJOINT, DisjointSeparatorSet(fd.dims, y), phase_two_budget,
               keep_intermediate)
    res.info["y"] = y
    return res
