"""Flooding: raise every cell to the height of its lowest path off the terrain.

The height of a path is the elevation of its highest cell.  A cell may leave
the terrain from the outer grid boundary or next to a NoData (NaN) cell; both
are modelled as an edge to a virtual Outside vertex weighted by the cell's
own elevation.

Three routes compute the same output: a priority flood over the whole grid,
the watershed-graph route (descent labels, lowest passes, minimax heights),
and the separator route that contracts each subgrid to a boundary-only
substitute graph.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from ._heap import heap_pop, heap_push
from .grid import (DC, DIR_CODES, DR, ElevationGrid, FlowDirGrid, GridKind, Layout,
                   out_indices)
from .naive import RunResult
from .separator import SeparatorSet, TooSmallMemory
from .storage import GridFile, new_grid_file
from .zorder import zorder_permutation

OUTSIDE = -1


class Unreachable(RuntimeError):
    pass


# -------------------------------------------------------------------- descent


@numba.njit(cache=True)
def _steepest(e, dr, dc, codes):
    h, w = e.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for r in range(h):
        for c in range(w):
            v = e[r, c]
            if np.isnan(v):
                out[r, c] = 255
                continue
            best = v
            bk = -1
            for k in range(8):
                rr, cc = r + dr[k], c + dc[k]
                if 0 <= rr < h and 0 <= cc < w:
                    x = e[rr, cc]
                    if x < best:
                        best = x
                        bk = k
            out[r, c] = codes[bk] if bk >= 0 else 0
    return out


def steepest_descent_directions(elev: ElevationGrid) -> FlowDirGrid:
    """Point each cell at its lowest strictly lower neighbour (first in E..NE order on ties)."""
    return FlowDirGrid(elev.dims, _steepest(elev.data, DR, DC, DIR_CODES), Layout.ROW_MAJOR)


# ----------------------------------------------------------------- watersheds


@numba.njit(cache=True)
def _label(out, order):
    n = len(out)
    lab = np.full(n, -2, dtype=np.int64)
    path = np.empty(n, dtype=np.int64)
    for s in order:
        if lab[s] != -2:
            continue
        k = 0
        v = s
        while lab[v] == -2 and out[v] >= 0:
            path[k] = v
            k += 1
            v = out[v]
        root = lab[v] if lab[v] != -2 else v
        lab[v] = root
        for i in range(k):
            lab[path[i]] = root
    return lab


def watershed_decompose(fd: FlowDirGrid, order: str = "row") -> np.ndarray:
    """Row-major index of the sink each cell drains to (-1 for NoData)."""
    out = out_indices(fd)
    if order == "z":
        seq = zorder_permutation(fd.dims)
    elif order == "row":
        seq = np.arange(fd.dims.n, dtype=np.int64)
    else:
        raise ValueError(f"unknown traversal order {order!r}")
    lab = _label(out, seq)
    lab[fd.data.reshape(-1) == 255] = -1
    return lab.reshape(fd.dims.shape)


@dataclass
class WatershedGraph:
    sinks: np.ndarray      # row-major cell index of each node's sink
    u: np.ndarray          # edge endpoints as node ids; node len(sinks) is Outside
    v: np.ndarray
    elevation: np.ndarray

    @property
    def outside(self) -> int:
        return len(self.sinks)

    @property
    def n_nodes(self) -> int:
        return len(self.sinks) + 1

    def edge_dict(self) -> dict:
        return {(int(a), int(b)): float(x) for a, b, x in zip(self.u, self.v, self.elevation)}


def _terrain_edge(e: np.ndarray) -> np.ndarray:
    """Cells that can drain straight off the terrain: grid edge or next to NaN."""
    valid = ~np.isnan(e)
    padded = np.pad(~valid, 1, constant_values=True)
    h, w = e.shape
    near = np.zeros_like(valid)
    for dr, dc in zip(DR, DC):
        near |= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return valid & near


def build_watershed_graph(labels: np.ndarray, elev: ElevationGrid) -> WatershedGraph:
    """One scan over all 8-neighbour pairs, keeping the lowest pass per watershed pair."""
    e = elev.data
    lab = np.asarray(labels)
    sinks = np.unique(lab[lab >= 0])
    node = np.full(lab.shape, -1, dtype=np.int64)
    node[lab >= 0] = np.searchsorted(sinks, lab[lab >= 0])
    outside = len(sinks)
    h, w = e.shape
    us, vs, ws = [], [], []
    for dr, dc in ((0, 1), (1, 1), (1, 0), (1, -1)):
        r0, r1 = 0, h - dr
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = node[r0:r1, c0:c1]
        b = node[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        keep = (a >= 0) & (b >= 0) & (a != b)
        us.append(a[keep])
        vs.append(b[keep])
        ws.append(np.maximum(e[r0:r1, c0:c1][keep], e[r0 + dr:r1 + dr, c0 + dc:c1 + dc][keep]))
    edge = _terrain_edge(e)
    us.append(node[edge])
    vs.append(np.full(int(edge.sum()), outside, dtype=np.int64))
    ws.append(e[edge])
    u = np.concatenate(us)
    v = np.concatenate(vs)
    wt = np.concatenate(ws).astype(np.float64)
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    if len(lo):
        key = lo * (outside + 1) + hi
        uniq, inv = np.unique(key, return_inverse=True)
        best = np.full(len(uniq), np.inf)
        np.minimum.at(best, inv, wt)
        lo, hi = uniq // (outside + 1), uniq % (outside + 1)
    else:
        best = wt
    return WatershedGraph(sinks, lo.astype(np.int64), hi.astype(np.int64), best)


def minimax_from(n_nodes: int, u, v, wt, source: int) -> np.ndarray:
    """Lowest-path height from ``source`` to every node (edge weights, best-first)."""
    adj: list[list] = [[] for _ in range(n_nodes)]
    for a, b, x in zip(u, v, wt):
        adj[int(a)].append((float(x), int(b)))
        adj[int(b)].append((float(x), int(a)))
    height = np.full(n_nodes, np.inf)
    height[source] = -np.inf
    done = np.zeros(n_nodes, dtype=bool)
    pq = [(-math.inf, source)]
    while pq:
        hgt, a = heapq.heappop(pq)
        if done[a]:
            continue
        done[a] = True
        for x, b in adj[a]:
            cand = max(hgt, x)
            if cand < height[b]:
                height[b] = cand
                heapq.heappush(pq, (cand, b))
    return height


def flood_heights(W: WatershedGraph) -> np.ndarray:
    """Minimax height from each node to Outside; indexed by node id."""
    height = minimax_from(W.n_nodes, W.u, W.v, W.elevation, W.outside)
    if np.isinf(height[:W.outside]).any():
        bad = int(W.sinks[np.isinf(height[:W.outside])][0])
        raise Unreachable(f"watershed of sink {bad} has no path to the outside")
    return height[:W.outside]


def apply_flooding(elev: ElevationGrid, labels: np.ndarray, W: WatershedGraph,
                   heights: np.ndarray) -> ElevationGrid:
    e = elev.data
    lab = np.asarray(labels)
    out = e.copy()
    valid = lab >= 0
    node = np.searchsorted(W.sinks, lab[valid])
    out[valid] = np.maximum(e[valid], heights[node].astype(np.float32))
    return ElevationGrid(elev.dims, out, Layout.ROW_MAJOR)


def watershed_flooding(elev: ElevationGrid, order: str = "row") -> ElevationGrid:
    fd = steepest_descent_directions(elev)
    labels = watershed_decompose(fd, order)
    W = build_watershed_graph(labels, elev)
    return apply_flooding(elev, labels, W, flood_heights(W))


# ----------------------------------------------------------------- brute force


@numba.njit(cache=True)
def _priority_flood(e, edge, dr, dc):
    h, w = e.shape
    n = h * w
    lab = np.full(n, np.inf, dtype=np.float64)
    done = np.zeros(n, dtype=np.uint8)
    keys = np.empty(8 * n + 1, dtype=np.float64)
    vals = np.empty(8 * n + 1, dtype=np.int64)
    size = 0
    for r in range(h):
        for c in range(w):
            if edge[r, c]:
                lab[r * w + c] = e[r, c]
                size = heap_push(keys, vals, size, np.float64(e[r, c]), r * w + c)
    while size > 0:
        k, i, size = heap_pop(keys, vals, size)
        if done[i]:
            continue
        done[i] = 1
        r, c = i // w, i % w
        for j in range(8):
            rr, cc = r + dr[j], c + dc[j]
            if rr < 0 or rr >= h or cc < 0 or cc >= w:
                continue
            x = e[rr, cc]
            if np.isnan(x):
                continue
            q = rr * w + cc
            cand = max(k, np.float64(x))
            if cand < lab[q]:
                lab[q] = cand
                size = heap_push(keys, vals, size, cand, q)
    return lab


def brute_force_flood(elev: ElevationGrid) -> ElevationGrid:
    """Best-first expansion from the terrain edge over the 8-neighbour graph."""
    e = elev.data
    lab = _priority_flood(e, _terrain_edge(e), DR, DC).reshape(e.shape)
    out = np.where(np.isnan(e), np.float32(np.nan), lab.astype(np.float32))
    return ElevationGrid(elev.dims, out, Layout.ROW_MAJOR)


@numba.njit(cache=True)
def _drains(f, edge, dr, dc):
    # reverse search: from the edge cells climb to neighbours that are not lower
    h, w = f.shape
    ok = np.zeros((h, w), dtype=np.uint8)
    stack = np.empty(h * w, dtype=np.int64)
    top = 0
    for r in range(h):
        for c in range(w):
            if edge[r, c]:
                ok[r, c] = 1
                stack[top] = r * w + c
                top += 1
    while top > 0:
        top -= 1
        i = stack[top]
        r, c = i // w, i % w
        for j in range(8):
            rr, cc = r + dr[j], c + dc[j]
            if 0 <= rr < h and 0 <= cc < w and not ok[rr, cc]:
                if not np.isnan(f[rr, cc]) and f[rr, cc] >= f[r, c]:
                    ok[rr, cc] = 1
                    stack[top] = rr * w + cc
                    top += 1
    return ok


def has_descending_paths(flooded: ElevationGrid) -> bool:
    """True if every data cell has a non-ascending path off the terrain."""
    f = flooded.data
    ok = _drains(f, _terrain_edge(f), DR, DC)
    return bool(ok[~np.isnan(f)].all())


# ----------------------------------------------------------- substitute graphs


@dataclass
class SubstituteGraph:
    """Boundary-only graph of a subgrid; vertex ids are local row-major indices, -1 is Outside."""
    shape: tuple[int, int]
    vertices: np.ndarray
    edges: dict

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def _boundary_mask(h: int, w: int) -> np.ndarray:
    m = np.zeros((h, w), dtype=bool)
    m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
    return m


def substitute_graph(q: np.ndarray, outside: Optional[np.ndarray] = None) -> SubstituteGraph:
    """Contract a subgrid onto its boundary cells, keeping boundary-pair lowest paths.

    ``q`` holds the subgrid's elevations (NaN = NoData); ``outside`` optionally
    flags cells that border the terrain edge beyond the subgrid.  Interior
    cells are contracted along their lowest paths to the boundary, deepest
    first; an edge (x, u) becomes (x, v) at max(e(x,u), e(u,v)) and only the
    lowest of parallel edges is kept.
    """
    q = np.asarray(q, dtype=np.float32)
    h, w = q.shape
    valid = ~np.isnan(q)
    edge_out = _terrain_edge_local(q) if outside is None else (_terrain_edge_local(q) | (outside & valid))
    keep = _boundary_mask(h, w) & valid
    n = h * w
    OUT = n
    adj: list[dict] = [dict() for _ in range(n + 1)]
    elev = q.reshape(-1).astype(np.float64)

    def link(a, b, x):
        if x < adj[a].get(b, math.inf):
            adj[a][b] = x
            adj[b][a] = x

    for r in range(h):
        for c in range(w):
            if not valid[r, c]:
                continue
            a = r * w + c
            for dr, dc in ((0, 1), (1, 1), (1, 0), (1, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and valid[rr, cc]:
                    link(a, rr * w + cc, max(elev[a], elev[rr * w + cc]))
            if edge_out[r, c]:
                link(a, OUT, elev[a])

    # lowest paths from interior cells to the kept vertices
    label = np.full(n + 1, math.inf)
    parent = np.full(n + 1, -1, dtype=np.int64)
    pq = []
    for a in np.flatnonzero(keep.reshape(-1)):
        label[a] = elev[a]
        pq.append((elev[a], int(a)))
    if adj[OUT]:
        label[OUT] = -math.inf
        pq.append((-math.inf, OUT))
    heapq.heapify(pq)
    is_kept = np.append(keep.reshape(-1), True)
    done = np.zeros(n + 1, dtype=bool)
    discovered = []
    while pq:
        hgt, a = heapq.heappop(pq)
        if done[a]:
            continue
        done[a] = True
        if not is_kept[a]:
            discovered.append(a)
        for b, x in adj[a].items():
            if is_kept[b] or done[b]:
                continue
            cand = max(hgt, x)
            if cand < label[b]:
                label[b] = cand
                parent[b] = a
                heapq.heappush(pq, (cand, b))

    for u in reversed(discovered):
        v = int(parent[u])
        up = adj[u].pop(v)
        del adj[v][u]
        for x, e_xu in adj[u].items():
            del adj[x][u]
            link(x, v, max(e_xu, up))
        adj[u] = {}

    verts = np.flatnonzero(keep.reshape(-1))
    edges = {}
    for a in list(verts) + [OUT]:
        for b, x in adj[a].items():
            ia = -1 if a == OUT else int(a)
            ib = -1 if b == OUT else int(b)
            key = (min(ia, ib), max(ia, ib))
            edges[key] = x
    vert_list = list(verts.astype(np.int64))
    if adj[OUT]:
        vert_list.append(-1)
    return SubstituteGraph((h, w), np.array(vert_list, dtype=np.int64), edges)


def _terrain_edge_local(q: np.ndarray) -> np.ndarray:
    """Cells of ``q`` next to a NaN inside ``q`` (the subgrid edge itself is not terrain edge)."""
    valid = ~np.isnan(q)
    padded = np.pad(~valid, 1, constant_values=False)
    h, w = q.shape
    near = np.zeros_like(valid)
    for dr, dc in zip(DR, DC):
        near |= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    return valid & near


def pairwise_minimax(q: np.ndarray, outside: Optional[np.ndarray] = None) -> dict:
    """Lowest-path heights between all boundary cells of a subgrid, on the full graph."""
    q = np.asarray(q, dtype=np.float32)
    h, w = q.shape
    valid = ~np.isnan(q)
    edge_out = _terrain_edge_local(q) if outside is None else (_terrain_edge_local(q) | (outside & valid))
    n = h * w
    src, dst, wt = [], [], []
    e = q.reshape(-1).astype(np.float64)
    for r in range(h):
        for c in range(w):
            if not valid[r, c]:
                continue
            a = r * w + c
            for dr, dc in ((0, 1), (1, 1), (1, 0), (1, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and valid[rr, cc]:
                    b = rr * w + cc
                    src.append(a), dst.append(b), wt.append(max(e[a], e[b]))
            if edge_out[r, c]:
                src.append(a), dst.append(n), wt.append(e[a])
    keep = list(np.flatnonzero((_boundary_mask(h, w) & valid).reshape(-1)))
    if edge_out.any():
        keep.append(n)
    out = {}
    for a in keep:
        hgt = minimax_from(n + 1, src, dst, wt, a)
        for b in keep:
            if b > a:
                ia, ib = (-1 if a == n else int(a)), (-1 if b == n else int(b))
                out[(min(ia, ib), max(ia, ib))] = max(hgt[b], e[a] if a < n else -math.inf)
    return out


def substitute_minimax(g: SubstituteGraph) -> dict:
    """Boundary-pair lowest-path heights computed on the substitute graph."""
    ids = {int(v): i for i, v in enumerate(g.vertices)}
    u = [ids[a] for a, b in g.edges]
    v = [ids[b] for a, b in g.edges]
    wt = list(g.edges.values())
    h, w = g.shape
    out = {}
    verts = [int(x) for x in g.vertices]
    for a in verts:
        hgt = minimax_from(len(verts), u, v, wt, ids[a])
        for b in verts:
            if (min(a, b), max(a, b)) not in out and a != b:
                out[(min(a, b), max(a, b))] = hgt[ids[b]]
    return out


# ------------------------------------------------------------- separator route


def choose_flood_subgrid_size(memory: int, block_size: int) -> int:
    """Largest z whose z rows of elevation and output blocks plus 4 boundary rows fit."""
    B, budget = block_size, memory // block_size
    cost = lambda z: 2 * z * -(-4 * z // B) + 4 * -(-8 * z // B)
    if cost(3) > budget:
        raise TooSmallMemory(f"M={memory}, B={block_size} cannot hold a 3x3 subgrid")
    lo, hi = 3, 3
    while cost(hi * 2) <= budget:
        hi *= 2
    hi *= 2
    while lo < hi - 1:
        mid = (lo + hi) // 2
        lo, hi = (mid, hi) if cost(mid) <= budget else (lo, mid)
    return lo


def _read_rows(gf: GridFile, r0: int, r1: int, c0: int, c1: int, dtype) -> np.ndarray:
    s = gf.cell_size
    w = gf.dims.width
    rows = [np.frombuffer(gf.device.read_bytes(gf.offset + (r * w + c0) * s, (c1 - c0) * s),
                          dtype=dtype) for r in range(r0, r1)]
    return np.stack(rows)


def _write_rows(gf: GridFile, r0: int, c0: int, block: np.ndarray) -> None:
    s = gf.cell_size
    w = gf.dims.width
    for i, row in enumerate(block):
        gf.device.write_bytes(gf.offset + ((r0 + i) * w + c0) * s,
                              np.ascontiguousarray(row).tobytes())


def _interior_flood(q: np.ndarray, boundary_h: np.ndarray, edge_out: np.ndarray) -> np.ndarray:
    """Lowest-path heights inside a subgrid given final heights of its boundary cells."""
    h, w = q.shape
    seeds = _boundary_mask(h, w)
    lab0 = np.where(seeds, boundary_h, np.inf)
    interior_out = edge_out & ~seeds
    lab0 = np.where(interior_out, np.minimum(lab0, q), lab0)
    lab = _seeded_flood(q.astype(np.float64), lab0.astype(np.float64), seeds, DR, DC)
    return np.where(np.isnan(q), np.nan, lab).astype(np.float32)


@numba.njit(cache=True)
def _seeded_flood(e, lab0, fixed, dr, dc):
    h, w = e.shape
    n = h * w
    lab = lab0.copy().reshape(-1)
    done = np.zeros(n, dtype=np.uint8)
    keys = np.empty(8 * n + 1, dtype=np.float64)
    vals = np.empty(8 * n + 1, dtype=np.int64)
    size = 0
    for i in range(n):
        if lab[i] < np.inf:
            size = heap_push(keys, vals, size, lab[i], i)
    while size > 0:
        k, i, size = heap_pop(keys, vals, size)
        if done[i]:
            continue
        done[i] = 1
        r, c = i // w, i % w
        for j in range(8):
            rr, cc = r + dr[j], c + dc[j]
            if rr < 0 or rr >= h or cc < 0 or cc >= w or fixed[rr, cc]:
                continue
            x = e[rr, cc]
            if np.isnan(x):
                continue
            q = rr * w + cc
            cand = max(k, x)
            if cand < lab[q]:
                lab[q] = cand
                size = heap_push(keys, vals, size, cand, q)
    return lab.reshape(h, w)


def separator_flooding(elev: GridFile, memory: Optional[int] = None,
                       block_size: Optional[int] = None, z: Optional[int] = None) -> RunResult:
    """Three-phase flooding over z x z subgrids with shared boundaries (row-major file).

    Phase 1 writes each subgrid's substitute graph to the device; phase 2
    loads the combined boundary graph into memory and computes lowest-path
    heights of all separator cells; phase 3 recomputes each subgrid from its
    boundary heights and writes the flooded grid.
    """
    if elev.layout != Layout.ROW_MAJOR:
        raise ValueError("separator flooding reads row-major elevation files")
    dev = elev.device
    if z is None:
        z = choose_flood_subgrid_size(memory or dev.config.memory,
                                      block_size or dev.config.block_size)
    if z < 3:
        raise TooSmallMemory("subgrids need at least 3x3 cells")
    dims = elev.dims
    h, w = dims.shape
    sep = SeparatorSet(dims, z)
    before = dev.stats
    out = new_grid_file(dev, dims, GridKind.ELEVATION, Layout.ROW_MAJOR)
    hfile = dev.allocate(8 * sep.size)
    chunks = []

    # phase 1
    for r0, r1, c0, c1 in sep.subgrids():
        q = _read_rows(elev, r0, r1 + 1, c0, c1 + 1, np.float32)
        edge = np.zeros(q.shape, dtype=bool)
        edge[:, 0] |= c0 == 0
        edge[:, -1] |= c1 == w - 1
        edge[0, :] |= r0 == 0
        edge[-1, :] |= r1 == h - 1
        g = substitute_graph(q, edge)
        qw = c1 - c0 + 1
        rec = np.empty((len(g.edges), 3), dtype=np.int64)
        for i, ((a, b), x) in enumerate(g.edges.items()):
            ga = -1 if a < 0 else (r0 + a // qw) * w + c0 + a % qw
            gb = -1 if b < 0 else (r0 + b // qw) * w + c0 + b % qw
            rec[i] = ga, gb, np.float64(x).view(np.int64)
        off = dev.allocate(rec.nbytes)
        dev.write_bytes(off, rec.tobytes())
        chunks.append((off, rec.nbytes))

    # phase 2 (in memory)
    recs = np.concatenate([np.frombuffer(dev.read_bytes(o, n), dtype=np.int64).reshape(-1, 3)
                           for o, n in chunks])
    cells = sep.cells()
    node_of = {int(c): i for i, c in enumerate(cells)}
    OUT = len(cells)
    u = [OUT if a < 0 else node_of[int(a)] for a in recs[:, 0]]
    v = [OUT if b < 0 else node_of[int(b)] for b in recs[:, 1]]
    wt = recs[:, 2].copy().view(np.float64)
    hs = minimax_from(OUT + 1, u, v, wt, OUT)[:OUT]
    sidx = sep.index_array(cells)
    buf = np.full(sep.size, np.nan)
    buf[sidx] = hs
    dev.write_bytes(hfile, buf.tobytes())

    # phase 3
    for r0, r1, c0, c1 in sep.subgrids():
        q = _read_rows(elev, r0, r1 + 1, c0, c1 + 1, np.float32)
        bh = np.full(q.shape, np.inf)
        for (rr, cc), s0, n, step in sep.boundary_runs(r0, r1, c0, c1):
            span = step * (n - 1) + 1
            vals = np.frombuffer(dev.read_bytes(hfile + 8 * s0, 8 * span), dtype=np.float64)[::step]
            if rr is None:
                bh[1:1 + n, cc - c0] = vals
            else:
                bh[rr - r0, :] = vals
        edge = _terrain_edge_local(q)
        res = _interior_flood(q, np.where(np.isnan(bh), np.inf, bh), edge)
        bmask = _boundary_mask(*q.shape)
        res[bmask] = np.where(np.isnan(q[bmask]), np.nan, bh[bmask]).astype(np.float32)
        _write_rows(out, r0, c0, res)
    stats = dev.flush() - before
    return RunResult(out, stats, {"z": z, "separator_cells": sep.size})
