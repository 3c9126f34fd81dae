"""The linear-time, I/O-naive flow accumulation algorithm and a brute-force oracle.

Flow values are 8-byte unsigned integers; while the algorithm runs, the most
significant bit of a cell's value is its marking bit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numba
import numpy as np

from .blockio import IoStats, get_u8, get_u64, set_u64
from .grid import CODE_INDEX, DC, DR, FlowAccGrid, FlowDirGrid, GridKind, Layout, out_indices
from .storage import GridFile, get_grid, new_grid_file
from .zorder import nb_cell_pos, nb_deinterleave

MARK = np.uint64(1 << 63)
VALUE = np.uint64((1 << 63) - 1)


class NonTerminating(RuntimeError):
    """The inner loop ran longer than any acyclic input allows."""


class TraversalOrder(enum.Enum):
    ROW_BY_ROW = "row"
    Z_ORDER = "z"


@dataclass
class RunResult:
    output: GridFile
    stats: IoStats
    info: dict = field(default_factory=dict)

    @property
    def grid(self):
        return get_grid(self.output)


@numba.njit(cache=True)
def _init_acc(dv, fd_off, acc_off, n):
    for p in range(n):
        v = np.uint64(0) if get_u8(dv, fd_off + p) == 255 else np.uint64(1)
        set_u64(dv, acc_off + 8 * p, v)


@numba.njit(cache=True)
def _clear_marks(dv, acc_off, n):
    for p in range(n):
        v = get_u64(dv, acc_off + 8 * p)
        if v & MARK:
            set_u64(dv, acc_off + 8 * p, v & VALUE)


@numba.njit(cache=True)
def _follow(dv, fd_off, acc_off, r, c, h, w, zl, Zt, Ft, Dt, code_index, dr, dc, budget):
    """Lines 4-8 of the naive algorithm, starting at cell (r, c)."""
    steps = 0
    pd = nb_cell_pos(r, c, w, zl, Zt, Ft, Dt)
    while True:
        # all in-neighbours of d marked?
        for k in range(8):
            rn, cn = r + dr[k], c + dc[k]
            if rn < 0 or rn >= h or cn < 0 or cn >= w:
                continue
            pn = nb_cell_pos(rn, cn, w, zl, Zt, Ft, Dt)
            kn = code_index[get_u8(dv, fd_off + pn)]
            if kn < 8 and rn + dr[kn] == r and cn + dc[kn] == c:
                if not get_u64(dv, acc_off + 8 * pn) & MARK:
                    return steps
        # d has an out-neighbour?
        k = code_index[get_u8(dv, fd_off + pd)]
        if k >= 8:
            return steps
        ro, co = r + dr[k], c + dc[k]
        if ro < 0 or ro >= h or co < 0 or co >= w:
            return steps
        po = nb_cell_pos(ro, co, w, zl, Zt, Ft, Dt)
        v = get_u64(dv, acc_off + 8 * pd)
        set_u64(dv, acc_off + 8 * pd, v | MARK)
        vo = get_u64(dv, acc_off + 8 * po)
        set_u64(dv, acc_off + 8 * po, vo + (v & VALUE))
        r, c, pd = ro, co, po
        steps += 1
        if steps > budget:
            return -1


@numba.njit(cache=True)
def _visit(dv, fd_off, acc_off, r, c, h, w, zl, Zt, Ft, Dt, code_index, dr, dc, budget):
    p = nb_cell_pos(r, c, w, zl, Zt, Ft, Dt)
    if get_u8(dv, fd_off + p) == 255:
        return 0
    if get_u64(dv, acc_off + 8 * p) & MARK:
        return 0
    return _follow(dv, fd_off, acc_off, r, c, h, w, zl, Zt, Ft, Dt, code_index, dr, dc, budget)


@numba.njit(cache=True)
def _naive_kernel(dv, fd_off, acc_off, h, w, zl, zorder, Zt, Ft, Dt, code_index, dr, dc):
    n = h * w
    _init_acc(dv, fd_off, acc_off, n)
    budget = 4 * n
    total = 0
    if zorder:
        for i in range(len(Ft)):
            for k in range(Dt[i]):
                r, c = nb_deinterleave(Zt[i] + k)
                s = _visit(dv, fd_off, acc_off, r, c, h, w, zl, Zt, Ft, Dt, code_index, dr, dc,
                           budget)
                if s < 0:
                    return -1
                total += s
    else:
        for r in range(h):
            for c in range(w):
                s = _visit(dv, fd_off, acc_off, r, c, h, w, zl, Zt, Ft, Dt, code_index, dr, dc,
                           budget)
                if s < 0:
                    return -1
                total += s
    if total > budget:
        return -1
    _clear_marks(dv, acc_off, n)
    return total


def naive_accumulation(fd: GridFile, order: TraversalOrder = TraversalOrder.ROW_BY_ROW) -> RunResult:
    """Run the naive algorithm on a flow-direction file; output uses the same layout.

    The directions must be normalized and acyclic.
    """
    order = TraversalOrder(order)
    dev = fd.device
    acc = new_grid_file(dev, fd.dims, GridKind.FLOWACC, fd.layout, tables=fd.tables)
    before = dev.stats
    t = fd.tables
    steps = _naive_kernel(dev.state(), fd.offset, acc.offset, fd.dims.height, fd.dims.width,
                          fd.is_z, order is TraversalOrder.Z_ORDER, t.Z, t.F, t.D,
                          CODE_INDEX, DR, DC)
    if steps < 0:
        raise NonTerminating("inner loop exceeded 4N steps; the directions contain a cycle")
    stats = dev.flush() - before
    return RunResult(acc, stats, {"inner_steps": int(steps)})


# ------------------------------------------------------------------------- oracle


@numba.njit(cache=True)
def _walk_all(out, lanes=8):
    # Several walks advance in lockstep so their pointer chases overlap in the memory system.
    n = len(out)
    acc = np.zeros(n, dtype=np.uint64)
    cur = np.full(lanes, -1, dtype=np.int64)
    start = min(lanes, n)
    cur[:start] = np.arange(start)
    active = start
    while active:
        for k in range(lanes):
            v = cur[k]
            if v < 0:
                continue
            acc[v] += 1
            v = out[v]
            if v < 0:
                if start < n:
                    v = start
                    start += 1
                else:
                    active -= 1
            cur[k] = v
    return acc


def brute_force_accumulation(fd: FlowDirGrid) -> FlowAccGrid:
    """Walk every cell's downstream path, counting each visited cell."""
    acc = _walk_all(out_indices(fd))
    acc[fd.data.reshape(-1) == 255] = 0
    return FlowAccGrid(fd.dims, acc.reshape(fd.dims.shape), Layout.ROW_MAJOR)


def conservation_residual(fd: FlowDirGrid, acc: np.ndarray) -> np.ndarray:
    """value(c) - 1 - sum of in-neighbour values, per data cell (0 everywhere if consistent)."""
    out = out_indices(fd)
    a = np.asarray(acc, dtype=np.int64).reshape(-1)
    inflow = np.zeros_like(a)
    src = np.nonzero(out >= 0)[0]
    np.add.at(inflow, out[src], a[src])
    res = a - 1 - inflow
    res[fd.data.reshape(-1) == 255] = 0
    return res.reshape(fd.dims.shape)
