"""Time-forward processing baseline and its I/O-volume accounting.

Cells are streamed in topological order.  Flow sent from a cell to its
out-neighbour waits in a priority queue keyed by the receiver's topological
number until the receiver comes up in the stream.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numba
import numpy as np

from ._heap import heap_pop, heap_push
from .blockio import get_i64, get_u8, set_i64, set_u64
from .extsort import external_sort
from .grid import CODE_INDEX, DC, DR, CycleError, FlowDirGrid, GridKind, Layout, out_indices
from .naive import RunResult
from .storage import GridFile, new_grid_file


# -------------------------------------------------------------- topo numbers


@numba.njit(cache=True)
def _peel(out, valid):
    n = len(out)
    indeg = np.zeros(n, dtype=np.int64)
    for p in range(n):
        if out[p] >= 0:
            indeg[out[p]] += 1
    keys = np.empty(n + 1, dtype=np.int64)
    vals = np.empty(n + 1, dtype=np.int64)
    size = 0
    for p in range(n):
        if valid[p] and indeg[p] == 0:
            size = heap_push(keys, vals, size, p, p)
    topo = np.full(n, -1, dtype=np.int64)
    nxt = 0
    while size > 0:
        p, _, size = heap_pop(keys, vals, size)
        topo[p] = nxt
        nxt += 1
        q = out[p]
        if q >= 0:
            indeg[q] -= 1
            if indeg[q] == 0:
                size = heap_push(keys, vals, size, q, q)
    return topo, nxt


@dataclass
class TopoNumbering:
    numbers: np.ndarray   # row-major shape; -1 on NoData

    @property
    def count(self) -> int:
        return int((self.numbers >= 0).sum())

    def is_valid_for(self, fd: FlowDirGrid) -> bool:
        out = out_indices(fd)
        t = self.numbers.reshape(-1)
        src = np.flatnonzero(out >= 0)
        data = t[t >= 0]
        bijective = np.array_equal(np.sort(data), np.arange(len(data)))
        return bool(bijective and np.all(t[src] < t[out[src]]))


def topological_numbering(fd: FlowDirGrid) -> TopoNumbering:
    """Peel cells of in-degree zero, smallest row-major index first."""
    out = out_indices(fd)
    valid = fd.data.reshape(-1) != 255
    topo, count = _peel(out, valid)
    if count != int(valid.sum()):
        stuck = int(np.flatnonzero(valid & (topo < 0))[0])
        raise CycleError(divmod(stuck, fd.dims.width))
    return TopoNumbering(topo.reshape(fd.dims.shape))


# ------------------------------------------------------------------ pipeline


@numba.njit(cache=True)
def _window_scan(dv, fd_off, topo_off, rec_off, h, w, code_index, dr, dc):
    """Stream rows of directions and topo numbers, three topo rows resident."""
    rows = np.empty((3, w), dtype=np.int64)
    for c in range(w):
        rows[0, c] = get_i64(dv, topo_off + 8 * c)
    m = 0
    for r in range(h):
        if r + 1 < h:
            for c in range(w):
                rows[(r + 1) % 3, c] = get_i64(dv, topo_off + 8 * ((r + 1) * w + c))
        for c in range(w):
            code = get_u8(dv, fd_off + r * w + c)
            if code == 255:
                continue
            k = code_index[code]
            to = np.int64(-1)
            if k < 8:
                rr, cc = r + dr[k], c + dc[k]
                if 0 <= rr < h and 0 <= cc < w:
                    to = rows[rr % 3, cc]
            base = rec_off + 24 * m
            set_i64(dv, base, rows[r % 3, c])
            set_i64(dv, base + 8, to)
            set_i64(dv, base + 16, r * w + c)
            m += 1
    return m


@numba.njit(cache=True)
def _process(dv, rec_off, m, out_off, spill_off, disk_queue, check):
    """Scan records in topo order; emit (location, total) pairs."""
    keys = np.empty(m + 1, dtype=np.int64)
    vals = np.empty(m + 1, dtype=np.int64)
    size = 0
    spilled = 0
    received = np.zeros(m if check else 1, dtype=np.int64)
    for i in range(m):
        base = rec_off + 24 * i
        t = get_i64(dv, base)
        to = get_i64(dv, base + 8)
        loc = get_i64(dv, base + 16)
        total = np.int64(1)
        while size > 0 and keys[0] == t:
            k, v, size = heap_pop(keys, vals, size)
            if disk_queue:
                # v is the entry's spill slot; read it back
                get_i64(dv, spill_off + 16 * v)
                v = get_i64(dv, spill_off + 16 * v + 8)
            total += v
            if check:
                received[i] += 1
        if size > 0 and keys[0] < t:
            return -1, received
        set_i64(dv, out_off + 16 * i, loc)
        set_i64(dv, out_off + 16 * i + 8, total)
        if to >= 0:
            if disk_queue:
                set_i64(dv, spill_off + 16 * spilled, to)
                set_i64(dv, spill_off + 16 * spilled + 8, total)
                size = heap_push(keys, vals, size, to, spilled)
                spilled += 1
            else:
                size = heap_push(keys, vals, size, to, total)
    return size, received


@numba.njit(cache=True)
def _write_grid(dv, pairs_off, m, acc_off, n):
    j = 0
    nxt = get_i64(dv, pairs_off) if m > 0 else n
    for p in range(n):
        v = np.uint64(0)
        if p == nxt:
            v = np.uint64(get_i64(dv, pairs_off + 16 * j + 8))
            j += 1
            nxt = get_i64(dv, pairs_off + 16 * j) if j < m else n
        set_u64(dv, acc_off + 8 * p, v)


def tfp_accumulation(fd: GridFile, topo: Optional[TopoNumbering] = None,
                     disk_queue: bool = False, check_queue: bool = False) -> RunResult:
    """Accumulate a row-major grid by time-forward processing.

    The topological numbers are an extra input file (computed here if not
    given; their construction is not charged).  With ``disk_queue`` every
    queued entry is written to and read back from the device once.
    """
    if fd.layout != Layout.ROW_MAJOR:
        raise ValueError("time-forward processing reads row-major files")
    dev = fd.device
    h, w = fd.dims.shape
    if topo is None:
        from .storage import get_grid
        topo = topological_numbering(get_grid(fd))
    topo_off = dev.allocate(8 * fd.dims.n)
    dev.load(topo_off, topo.numbers.astype(np.int64).reshape(-1))
    before = dev.stats
    m_max = topo.count
    rec = dev.allocate(24 * max(m_max, 1))
    m = _window_scan(dev.state(), fd.offset, topo_off, rec, h, w, CODE_INDEX, DR, DC)
    srt = external_sort(dev, rec, m, 3, key=0)
    pairs = dev.allocate(16 * max(m, 1))
    spill = dev.allocate(16 * max(m, 1)) if disk_queue else 0
    left, received = _process(dev.state(), srt, m, pairs, spill, disk_queue, check_queue)
    if left != 0:
        raise CycleError((-1, -1)) if left < 0 else RuntimeError("queue not drained")
    by_loc = external_sort(dev, pairs, m, 2, key=0)
    out = new_grid_file(dev, fd.dims, GridKind.FLOWACC, Layout.ROW_MAJOR)
    _write_grid(dev.state(), by_loc, m, out.offset, fd.dims.n)
    stats = dev.flush() - before
    info = {"records": m}
    if check_queue:
        srt_loc = np.frombuffer(dev.peek(srt, 24 * m).tobytes(), dtype=np.int64).reshape(-1, 3)[:, 2]
        info["received"] = dict(zip(srt_loc.tolist(), received.tolist()))
    return RunResult(out, stats, info)


# ------------------------------------------------------------ I/O accounting


@dataclass(frozen=True)
class TfpScenario:
    name: str
    block_size: int
    data_fraction: Fraction
    sort_passes: int
    queue_on_disk: bool


class Scenario(enum.Enum):
    OPTIMISTIC = TfpScenario("optimistic", 1 << 14, Fraction(1, 3), 2, False)
    PESSIMISTIC = TfpScenario("pessimistic", 1 << 16, Fraction(1), 3, True)


@dataclass(frozen=True)
class TfpVolume:
    components: tuple          # (label, bytes per grid cell)
    input_output: int = 9      # 1 byte direction in, 8 bytes accumulation out

    @property
    def bytes_per_cell(self) -> Fraction:
        return sum((v for _, v in self.components), Fraction(0))

    @property
    def factor(self) -> Fraction:
        return self.bytes_per_cell / self.input_output


def predicted_tfp_io_volume(scenario: TfpScenario | Scenario) -> TfpVolume:
    """Bytes moved per grid cell, term by term.

    Records are 24 bytes (location, topo, out-topo); output pairs 16 bytes;
    queue entries 16 bytes.  The record sort's first pass is fed by the scan,
    so it only writes; the output sort's last pass writes 8 bytes for every
    grid cell, data or not.
    """
    s = scenario.value if isinstance(scenario, Scenario) else scenario
    f = Fraction(s.data_fraction)
    p = s.sort_passes
    parts = [("scan directions + 3x3 topo window", Fraction(9)),
             ("record sort, first pass write", 24 * f)]
    if p > 1:
        parts.append(("record sort, later passes", (p - 1) * 48 * f))
    parts.append(("read sorted records", 24 * f))
    if s.queue_on_disk:
        parts.append(("priority queue to disk and back", 32 * f))
    parts.append(("write (location, total) pairs", 16 * f))
    if p > 1:
        parts.append(("output sort, early passes", (p - 1) * 32 * f))
    parts.append(("output sort, last pass read", 16 * f))
    parts.append(("output sort, last pass write grid", Fraction(8)))
    return TfpVolume(tuple(parts))
