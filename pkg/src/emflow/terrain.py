"""Synthetic terrains and the first-far-cell (confluence) estimator."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numba
import numpy as np
from scipy import ndimage

from .grid import (DC, DIR_CODES, DR, CellRef, ElevationGrid, FlowDirGrid, GridDims,
                   Layout, normalize_directions, out_indices)

_CODE_OF = {(int(dr), int(dc)): int(code) for dr, dc, code in zip(DR, DC, DIR_CODES)}


class InfeasibleParams(ValueError):
    pass


class OutOfBounds(ValueError):
    pass


# ---------------------------------------------------------------------- meander


@dataclass(frozen=True)
class MeanderParams:
    """A river of ``meanders`` vertical runs pairs in an n x n grid.

    The meander count is round(c1 * n) and the amplitude round(c2 * n) rows.
    """
    n: int
    c1: float = 0.125
    c2: float = 1.0

    @property
    def meanders(self) -> int:
        return max(1, round(self.c1 * self.n))

    @property
    def amplitude(self) -> int:
        return round(self.c2 * self.n)


@dataclass
class MeanderTerrain:
    flowdir: FlowDirGrid
    elevation: ElevationGrid
    river: np.ndarray          # (k, 2) river cells from source to mouth
    mouth: CellRef

    @property
    def river_length(self) -> int:
        return len(self.river)


def _river_path(n: int, m: int, a: int) -> list[tuple[int, int]]:
    spacing = (n - 1) // (2 * m)
    cols = [n - 1 - k * spacing for k in range(2 * m)]
    path: list[tuple[int, int]] = []
    r = a - 1
    for k, c in enumerate(cols):
        if path:
            # connector along the current row from the previous run's column
            prev_c = path[-1][1]
            path.extend((r, cc) for cc in range(prev_c - 1, c, -1))
        target = 0 if k % 2 == 0 else a - 1
        step = -1 if target < r else 1
        path.extend((rr, c) for rr in range(r, target + step, step))
        r = target
    # to column 0 along the bottom of the band, then up to the mouth at (0, 0)
    path.extend((r, cc) for cc in range(path[-1][1] - 1, -1, -1))
    path.extend((rr, 0) for rr in range(r - 1, -1, -1))
    return path


def gen_meander(p: MeanderParams) -> MeanderTerrain:
    """A serpentine river from the right edge to the top-left corner; hillslopes drain to it.

    Off-river cells step diagonally or straight toward their nearest river
    cell (chessboard distance), so every path shortens that distance by one.
    """
    n, m, a = p.n, p.meanders, p.amplitude
    if n < 5:
        raise InfeasibleParams("grid side must be at least 5")
    if not 2 <= a <= n:
        raise InfeasibleParams(f"amplitude {a} must lie in [2, {n}]")
    if (n - 1) // (2 * m) < 2:
        raise InfeasibleParams(f"{m} meanders do not fit in {n} columns")
    path = _river_path(n, m, a)
    k = len(path)
    river = np.zeros((n, n), dtype=bool)
    d = np.zeros((n, n), dtype=np.uint8)
    e = np.zeros((n, n), dtype=np.float32)
    rows = np.array([r for r, _ in path])
    cols = np.array([c for _, c in path])
    river[rows, cols] = True
    if river.sum() != k:
        raise InfeasibleParams("river path intersects itself")
    for i in range(k - 1):
        (r0, c0), (r1, c1) = path[i], path[i + 1]
        d[r0, c0] = _CODE_OF[(r1 - r0, c1 - c0)]
    e[rows, cols] = np.arange(k - 1, -1, -1, dtype=np.float32)
    dist, (ir, ic) = ndimage.distance_transform_cdt(~river, metric="chessboard",
                                                     return_indices=True)
    rr, cc = np.indices((n, n))
    sr, sc = np.sign(ir - rr), np.sign(ic - cc)
    land = ~river
    for (dr, dc), code in _CODE_OF.items():
        d[land & (sr == dr) & (sc == dc)] = code
    e[land] = k + dist[land].astype(np.float32)
    dims = GridDims(n, n)
    fd = FlowDirGrid(dims, d, Layout.ROW_MAJOR)
    return MeanderTerrain(fd, ElevationGrid(dims, e, Layout.ROW_MAJOR),
                          np.array(path, dtype=np.int64), CellRef(*path[-1]))


# ------------------------------------------------------------- random drainage


@numba.njit(cache=True)
def _bfs_tree(d, r0, c0, h, w, orr, occ, perms, pick, dr, dc, codes):
    """Leaf basin: BFS from the outlet, each new cell pointing back at its discoverer."""
    seen = np.zeros((h, w), dtype=np.bool_)
    seen[orr - r0, occ - c0] = True
    qr = np.empty(h * w, dtype=np.int64)
    qc = np.empty(h * w, dtype=np.int64)
    qr[0], qc[0] = orr, occ
    head, tail = 0, 1
    while head < tail:
        r, c = qr[head], qc[head]
        perm = perms[pick[head % len(pick)]]
        head += 1
        for t in range(8):
            k = perm[t]
            rr, cc = r + dr[k], c + dc[k]
            if r0 <= rr < r0 + h and c0 <= cc < c0 + w and not seen[rr - r0, cc - c0]:
                seen[rr - r0, cc - c0] = True
                d[rr, cc] = codes[(k + 4) % 8]
                qr[tail], qc[tail] = rr, cc
                tail += 1


def _basin(d, r0, c0, h, w, outlet, rng, leaf):
    if h * w <= leaf * leaf or (h < 2 and w < 2):
        perms = np.array([rng.permutation(8) for _ in range(4)], dtype=np.int64)
        pick = rng.integers(0, 4, size=h * w)
        _bfs_tree(d, r0, c0, h, w, outlet[0], outlet[1], perms, pick, DR, DC, DIR_CODES)
        return
    sr = r0 + int(rng.integers(max(1, h // 3), max(2, h - h // 3))) if h >= 2 else r0 + h
    sc = c0 + int(rng.integers(max(1, w // 3), max(2, w - w // 3))) if w >= 2 else c0 + w
    quads = {}
    for i, (a, b) in enumerate(((r0, sr), (sr, r0 + h))):
        for j, (cl, cr) in enumerate(((c0, sc), (sc, c0 + w))):
            if b > a and cr > cl:
                quads[(i, j)] = (a, cl, b - a, cr - cl)
    orr, occ = outlet
    root = next(key for key, (a, cl, qh, qw) in quads.items()
                if a <= orr < a + qh and cl <= occ < cl + qw)
    outlets = {root: outlet}
    frontier = [root]
    order = [root]
    while frontier:
        cur = frontier.pop(int(rng.integers(len(frontier))))
        nbrs = [(cur[0] ^ 1, cur[1]), (cur[0], cur[1] ^ 1)]
        for nb in rng.permutation(len(nbrs)):
            key = nbrs[nb]
            if key in quads and key not in outlets:
                outlets[key] = _crossing(d, quads[key], quads[cur], key, cur, rng)
                frontier.append(key)
                order.append(key)
    for key in order:
        a, cl, qh, qw = quads[key]
        _basin(d, a, cl, qh, qw, outlets[key], rng, leaf)


def _crossing(d, child, parent, ck, pk, rng):
    """Pick a cell on the child's edge facing the parent and point it across."""
    a, cl, qh, qw = child
    if ck[0] == pk[0]:  # side by side
        r = a + int(rng.integers(qh))
        c, step = (cl + qw - 1, 1) if pk[1] > ck[1] else (cl, -1)
        d[r, c] = _CODE_OF[(0, step)]
    else:
        c = cl + int(rng.integers(qw))
        r, step = (a + qh - 1, 1) if pk[0] > ck[0] else (a, -1)
        d[r, c] = _CODE_OF[(step, 0)]
    return (r, c)


def gen_random_drainage(dims: GridDims, seed: int, outlets: Optional[int] = None,
                        leaf: int = 4, nodata_fraction: float = 0.0) -> FlowDirGrid:
    """Nested basins: quadrants drain into a neighbouring quadrant, leaves are BFS trees.

    One to four top-level basins each end in a sink on the grid edge.  An
    optional blob-shaped NoData mask covers about ``nodata_fraction`` of the cells.
    """
    rng = np.random.default_rng(seed)
    h, w = dims.shape
    d = np.zeros((h, w), dtype=np.uint8)
    k = int(outlets if outlets is not None else rng.integers(1, 5))
    k = max(1, min(k, h * w))
    parts = [(0, 0, h, w)]
    while len(parts) < k:
        parts.sort(key=lambda t: -t[2] * t[3])
        r0, c0, ph, pw = parts[0]
        if ph < 2 and pw < 2:
            break
        parts.pop(0)
        if ph >= pw:
            cut = int(rng.integers(1, ph))
            parts += [(r0, c0, cut, pw), (r0 + cut, c0, ph - cut, pw)]
        else:
            cut = int(rng.integers(1, pw))
            parts += [(r0, c0, ph, cut), (r0, c0 + cut, ph, pw - cut)]
    for r0, c0, ph, pw in parts:
        edge = [(r, c) for r in range(r0, r0 + ph) for c in (c0, c0 + pw - 1)
                if r in (0, h - 1) or c in (0, w - 1)]
        edge += [(r, c) for c in range(c0, c0 + pw) for r in (r0, r0 + ph - 1)
                 if r in (0, h - 1) or c in (0, w - 1)]
        outlet = edge[int(rng.integers(len(edge)))]
        d[outlet] = 0
        _basin(d, r0, c0, ph, pw, outlet, rng, leaf)
    if nodata_fraction > 0:
        d[_blob_mask((h, w), nodata_fraction, rng)] = 255
    return normalize_directions(FlowDirGrid(dims, d, Layout.ROW_MAJOR))


def _blob_mask(shape, fraction: float, rng: np.random.Generator) -> np.ndarray:
    noise = ndimage.gaussian_filter(rng.random(shape), sigma=max(1.0, min(shape) / 16))
    return noise < np.quantile(noise, fraction)


def gen_random_elevation(dims: GridDims, seed: int, nodata_fraction: float = 0.0,
                         smooth: float = 1.0, levels: Optional[int] = None) -> ElevationGrid:
    """Smoothed noise; ``levels`` quantizes heights to create flats and ties."""
    rng = np.random.default_rng(seed)
    e = rng.random(dims.shape)
    if smooth > 0:
        e = ndimage.gaussian_filter(e, sigma=smooth)
    e = (e - e.min()) / max(np.ptp(e), 1e-12) * 100
    if levels:
        e = np.round(e * levels / 100)
    e = e.astype(np.float32)
    if nodata_fraction > 0:
        e[_blob_mask(dims.shape, nodata_fraction, rng)] = np.nan
    return ElevationGrid(dims, e, Layout.ROW_MAJOR)


def gen_random_directions(dims: GridDims, seed: int, nodata_fraction: float = 0.0) -> FlowDirGrid:
    """Steepest descent on white noise: many short paths and sinks."""
    from .flooding import steepest_descent_directions
    e = gen_random_elevation(dims, seed, nodata_fraction, smooth=0)
    return normalize_directions(steepest_descent_directions(e))


def uniform_flow(dims: GridDims, direction: int = 1) -> FlowDirGrid:
    """Every cell points the same way (E by default); normalized at the edge."""
    d = np.full(dims.shape, direction, dtype=np.uint8)
    return normalize_directions(FlowDirGrid(dims, d, Layout.ROW_MAJOR))


# ----------------------------------------------------------------- confluence


@numba.njit(cache=True)
def _first_far(out, w, r0, c0, d):
    R0, C0 = r0 - d, c0 - d
    side = 3 * d
    memo = np.full(side * side, -2, dtype=np.int64)
    stack = np.empty(side * side, dtype=np.int64)
    for i in range(d):
        for j in range(d):
            top = 0
            p = (r0 + i) * w + (c0 + j)
            res = -1
            while True:
                r, c = p // w, p % w
                lr, lc = r - R0, c - C0
                m = memo[lr * side + lc]
                if m != -2:
                    res = m
                    break
                if lr == 0 or lc == 0 or lr == side - 1 or lc == side - 1:
                    res = p
                    memo[lr * side + lc] = p
                    break
                stack[top] = lr * side + lc
                top += 1
                q = out[p]
                if q < 0:
                    res = -1
                    break
                p = q
            for k in range(top):
                memo[stack[k]] = res
    found = np.zeros(side * side, dtype=np.bool_)
    for i in range(d):
        for j in range(d):
            m = memo[(d + i) * side + d + j]
            if m >= 0:
                found[((m // w) - R0) * side + (m % w) - C0] = True
    return np.flatnonzero(found)


def _check_window(dims: GridDims, r0: int, c0: int, d: int) -> None:
    if d < 1 or r0 - d < 0 or c0 - d < 0 or r0 + 2 * d > dims.height or c0 + 2 * d > dims.width:
        raise OutOfBounds(f"3d x 3d window around ({r0}, {c0}) with d={d} leaves the grid")


def first_far_cells(fd: FlowDirGrid, top_left: tuple[int, int], d: int,
                    out: Optional[np.ndarray] = None) -> set[CellRef]:
    """Cells on the ring of the centred 3d x 3d square first reached from the d x d square.

    A path that ends at a sink strictly inside the larger square contributes
    nothing; a path whose first ring cell is a sink contributes that cell.
    """
    r0, c0 = top_left
    _check_window(fd.dims, r0, c0, d)
    if out is None:
        out = out_indices(fd)
    side = 3 * d
    loc = _first_far(out, fd.dims.width, r0, c0, d)
    return {CellRef(int(r0 - d + x // side), int(c0 - d + x % side)) for x in loc}


def first_far_cells_bfs(fd: FlowDirGrid, top_left: tuple[int, int], d: int) -> set[CellRef]:
    """Same set by forward reachability restricted to the square's interior."""
    r0, c0 = top_left
    _check_window(fd.dims, r0, c0, d)
    out = out_indices(fd)
    w = fd.dims.width
    R0, R1, C0, C1 = r0 - d, r0 + 2 * d - 1, c0 - d, c0 + 2 * d - 1
    on_ring = lambda r, c: r in (R0, R1) or c in (C0, C1)
    reach = {(r0 + i) * w + c0 + j for i in range(d) for j in range(d)}
    frontier = list(reach)
    while frontier:
        p = frontier.pop()
        r, c = divmod(p, w)
        if on_ring(r, c) or out[p] < 0:
            continue
        q = int(out[p])
        if q not in reach:
            reach.add(q)
            frontier.append(q)
    return {CellRef(*divmod(p, w)) for p in reach if on_ring(*divmod(p, w))}


@dataclass
class ConfluenceReport:
    counts: dict = field(default_factory=dict)   # d -> array of per-square counts

    def max(self, d: int) -> int:
        return int(self.counts[d].max()) if len(self.counts[d]) else 0

    def percentile(self, d: int, q: float) -> float:
        return float(np.percentile(self.counts[d], q)) if len(self.counts[d]) else 0.0

    def histogram(self, d: int) -> np.ndarray:
        return np.bincount(self.counts[d].astype(np.int64))

    @property
    def gamma(self) -> int:
        return max((self.max(d) for d in self.counts), default=0)

    def rows(self) -> list[dict]:
        return [{"d": d, "max": self.max(d), "p50": self.percentile(d, 50),
                 "p99": self.percentile(d, 99), "squares": len(self.counts[d])}
                for d in sorted(self.counts)]


def estimate_confluence(fd: FlowDirGrid, sizes: Iterable[int] = (4, 8, 16, 32),
                        sample: Optional[int] = None, seed: int = 0) -> ConfluenceReport:
    """First-far-cell counts over aligned d x d squares whose 3d x 3d window fits."""
    out = out_indices(fd)
    h, w = fd.dims.shape
    rng = np.random.default_rng(seed)
    report = ConfluenceReport()
    for d in sizes:
        squares = [(r, c) for r in range(d, h - 2 * d + 1, d) for c in range(d, w - 2 * d + 1, d)]
        if sample is not None and len(squares) > sample:
            pick = rng.choice(len(squares), size=sample, replace=False)
            squares = [squares[i] for i in sorted(pick)]
        report.counts[d] = np.array([len(_first_far(out, w, r, c, d)) for r, c in squares],
                                    dtype=np.int64)
    return report
