"""Cache-oblivious separator accumulation over a quadtree of shared-boundary subgrids.

The grid is padded (virtually, with NoData) to (2^k+1) x (2^k+1).  A subgrid
at level i has side 2^i + 1 and its four children share its middle row and
column, the "cross".  Leaves sit at the base level, side ``base_side``.

Phase 1 visits subgrids in post-order.  A leaf accumulates its interior and
adds the result to its boundary cells.  An internal subgrid links every
cross cell to the next cross or boundary cell downstream (directly or via a
child's pointer), accumulates along those links and adds the totals to its
boundary.  Every subgrid then pushes one pointer record (b, first boundary
cell downstream) per boundary cell b that flows into its interior.

Phase 2 pops the groups in reverse order.  Boundary values of a subgrid are
final when it is reached, so the inflow through its boundary can be pushed
along the links into the cross cells, and leaves recompute their interiors.

Intermediate values live in the output file.  Nothing here depends on M or B.
"""
from __future__ import annotations

import numba
import numpy as np

from .blockio import get_i64, get_u8, get_u64, set_i64, set_u64
from .grid import CODE_INDEX, DC, DR, GridKind
from .naive import NonTerminating, RunResult
from .separator import _accumulate_interior
from .storage import GridFile, new_grid_file
from .zorder import nb_cell_pos

REC = 16


def base_level(base_side: int) -> int:
    if base_side < 2:
        raise ValueError("base subgrids need side >= 2")
    lvl = (base_side - 1).bit_length() - 1
    if (1 << lvl) + 1 != base_side:
        raise ValueError(f"base side must be 2^l + 1 (or 2), got {base_side}")
    return lvl


def hierarchy_height(h: int, w: int) -> int:
    """Smallest k with the grid inside a (2^k+1) x (2^k+1) square."""
    k = 0
    while (1 << k) + 1 < max(h, w):
        k += 1
    return k


def build_hierarchy(h: int, w: int, k: int, leaf: int):
    """Post-order node list (level, row, col) and child table; subgrids off the grid are pruned."""
    levels, rows, cols, kids = [], [], [], []

    def visit(level, r, c):
        ch = [-1, -1, -1, -1]
        if level > leaf:
            half = 1 << (level - 1)
            for q in range(4):
                rr, cc = r + (q >> 1) * half, c + (q & 1) * half
                if rr < h and cc < w:
                    ch[q] = visit(level - 1, rr, cc)
        levels.append(level)
        rows.append(r)
        cols.append(c)
        kids.append(ch)
        return len(levels) - 1

    visit(k, 0, 0)
    as64 = lambda a: np.array(a, dtype=np.int64)
    return as64(levels), as64(rows), as64(cols), as64(kids).reshape(-1, 4)


# ------------------------------------------------------------------ helpers


@numba.njit(cache=True)
def _code(dv, fd_off, r, c, h, w, zl, Zt, Ft, Dt):
    if r >= h or c >= w:
        return np.uint8(255)
    return get_u8(dv, fd_off + nb_cell_pos(r, c, w, zl, Zt, Ft, Dt))


@numba.njit(cache=True)
def _acc_pos(r, c, w, zl, Zt, Ft, Dt, acc_off):
    return acc_off + 8 * nb_cell_pos(r, c, w, zl, Zt, Ft, Dt)


@numba.njit(cache=True)
def _ring(r, c, R, C, side):
    """Slot of a boundary cell of the square at (R, C); -1 if not on its boundary."""
    if r == R:
        return c - C
    if r == R + side - 1:
        return side + c - C
    if c == C:
        return 2 * side + r - R
    if c == C + side - 1:
        return 3 * side + r - R
    return -1


@numba.njit(cache=True)
def _x_id(r, c, R, C, n):
    """Index of a cross cell of the square at (R, C) with side n + 1, or -1."""
    half = n // 2
    if r <= R or r >= R + n or c <= C or c >= C + n:
        return -1
    if r == R + half:
        return c - C - 1
    if c == C + half:
        k = r - R - 1
        if r > R + half:
            k -= 1
        return (n - 1) + k
    return -1


@numba.njit(cache=True)
def _x_cell(k, R, C, n):
    half = n // 2
    if k < n - 1:
        return R + half, C + 1 + k
    k -= n - 1
    r = R + 1 + k
    if r >= R + half:
        r += 1
    return r, C + half


@numba.njit(cache=True)
def _load_children(dv, stack, goff, gcnt, kids, node, R, C, n, wp, ringdest):
    half = n // 2
    ringdest[:, :] = -1
    for q in range(4):
        ch = kids[node, q]
        if ch < 0:
            continue
        cr, cc = R + (q >> 1) * half, C + (q & 1) * half
        for t in range(gcnt[ch]):
            b = get_i64(dv, stack + goff[ch] + REC * t)
            d = get_i64(dv, stack + goff[ch] + REC * t + 8)
            ringdest[q, _ring(b // wp, b % wp, cr, cc, half + 1)] = d


@numba.njit(cache=True)
def _entry(ro, co, br, bc, R, C, n, wp, ringdest):
    """First cross-or-boundary cell reached from boundary cell (br, bc) via its out-neighbour
    (ro, co), which lies strictly inside the square; returns a padded cell id or -1."""
    if _x_id(ro, co, R, C, n) >= 0:
        return ro * wp + co
    half = n // 2
    q = (1 if ro > R + half else 0) * 2 + (1 if co > C + half else 0)
    cr, cc = R + (q >> 1) * half, C + (q & 1) * half
    return ringdest[q, _ring(br, bc, cr, cc, half + 1)]


@numba.njit(cache=True)
def _cross_links(dv, fd_off, h, w, zl, Zt, Ft, Dt, R, C, n, wp, ringdest, code_index, dr, dc,
                 link, valid):
    nx = 2 * (n - 1) - 1
    for k in range(nx):
        r, c = _x_cell(k, R, C, n)
        code = _code(dv, fd_off, r, c, h, w, zl, Zt, Ft, Dt)
        valid[k] = code != 255
        link[k] = -1
        j = code_index[code]
        if j >= 8:
            continue
        ro, co = r + dr[j], c + dc[j]
        if _x_id(ro, co, R, C, n) >= 0 or _ring(ro, co, R, C, n + 1) >= 0:
            link[k] = ro * wp + co
        else:
            link[k] = _entry(ro, co, r, c, R, C, n, wp, ringdest)
    return nx


@numba.njit(cache=True)
def _cross_order(link, valid, nx, R, C, n, wp, order):
    """Topological order of cross cells along links; -1 if the links form a cycle."""
    indeg = np.zeros(nx, dtype=np.int64)
    for k in range(nx):
        if valid[k] and link[k] >= 0:
            t = _x_id(link[k] // wp, link[k] % wp, R, C, n)
            if t >= 0:
                indeg[t] += 1
    top = 0
    for k in range(nx):
        if valid[k] and indeg[k] == 0:
            order[top] = k
            top += 1
    i = 0
    while i < top:
        k = order[i]
        i += 1
        if link[k] >= 0:
            t = _x_id(link[k] // wp, link[k] % wp, R, C, n)
            if t >= 0:
                indeg[t] -= 1
                if indeg[t] == 0:
                    order[top] = t
                    top += 1
    nvalid = 0
    for k in range(nx):
        if valid[k]:
            nvalid += 1
    return top if top == nvalid else -1


@numba.njit(cache=True)
def _push(dv, stack, top, b, d):
    set_i64(dv, stack + top, b)
    set_i64(dv, stack + top + 8, d)
    return top + REC


@numba.njit(cache=True)
def _load_square(dv, fd_off, h, w, zl, Zt, Ft, Dt, R, C, s, code_index, dr, dc, codes, out, bnd):
    for i in range(s):
        for j in range(s):
            codes[i * s + j] = _code(dv, fd_off, R + i, C + j, h, w, zl, Zt, Ft, Dt)
    for i in range(s):
        for j in range(s):
            p = i * s + j
            bnd[p] = i == 0 or j == 0 or i == s - 1 or j == s - 1
            k = code_index[codes[p]]
            out[p] = -1
            if k < 8:
                ii, jj = i + dr[k], j + dc[k]
                if 0 <= ii < s and 0 <= jj < s:
                    out[p] = ii * s + jj


# -------------------------------------------------------------------- phase 1


@numba.njit(cache=True)
def _phase_one(dv, fd_off, acc_off, stack, h, w, wp, zl, Zt, Ft, Dt, levels, rows, cols, kids,
               leaf, goff, gcnt, code_index, dr, dc):
    top = 0
    smax = (1 << levels[-1]) + 1
    cap = smax * smax if levels[-1] <= leaf else 0
    ls = (1 << leaf) + 1
    lcap = max(cap, ls * ls)
    codes = np.empty(lcap, dtype=np.uint8)
    out = np.empty(lcap, dtype=np.int64)
    bnd = np.empty(lcap, dtype=np.bool_)
    acc = np.empty(lcap, dtype=np.uint64)
    pending = np.empty(lcap, dtype=np.int64)
    marked = np.empty(lcap, dtype=np.uint8)
    nmax = 1 << levels[-1]
    ringdest = np.empty((4, 4 * (nmax // 2 + 1) + 4), dtype=np.int64)
    link = np.empty(2 * nmax + 1, dtype=np.int64)
    valid = np.empty(2 * nmax + 1, dtype=np.bool_)
    order = np.empty(2 * nmax + 1, dtype=np.int64)
    tot = np.empty(2 * nmax + 1, dtype=np.uint64)
    fdest = np.empty(2 * nmax + 1, dtype=np.int64)
    for node in range(len(levels)):
        lvl, R, C = levels[node], rows[node], cols[node]
        n = 1 << lvl
        goff[node] = top
        if lvl <= leaf:
            s = n + 1
            m = s * s
            _load_square(dv, fd_off, h, w, zl, Zt, Ft, Dt, R, C, s, code_index, dr, dc,
                         codes, out, bnd)
            for p in range(m):
                acc[p] = 0 if (bnd[p] or codes[p] == 255) else 1
            if _accumulate_interior(out, bnd, acc, m, pending, marked) < 0:
                return -1
            for p in range(m):
                if not bnd[p] or codes[p] == 255:
                    continue
                r, c = R + p // s, C + p % s
                if acc[p]:
                    pos = _acc_pos(r, c, w, zl, Zt, Ft, Dt, acc_off)
                    set_u64(dv, pos, get_u64(dv, pos) + acc[p])
                q = out[p]
                if q >= 0 and not bnd[q]:
                    steps = 0
                    while q >= 0 and not bnd[q]:
                        q = out[q]
                        steps += 1
                        if steps > m:
                            return -1
                    if q >= 0:
                        top = _push(dv, stack, top, r * wp + c, (R + q // s) * wp + C + q % s)
        else:
            _load_children(dv, stack, goff, gcnt, kids, node, R, C, n, wp, ringdest)
            nx = _cross_links(dv, fd_off, h, w, zl, Zt, Ft, Dt, R, C, n, wp, ringdest,
                              code_index, dr, dc, link, valid)
            cnt = _cross_order(link, valid, nx, R, C, n, wp, order)
            if cnt < 0:
                return -1
            for k in range(nx):
                tot[k] = 0
            for i in range(cnt):
                k = order[i]
                r, c = _x_cell(k, R, C, n)
                pos = _acc_pos(r, c, w, zl, Zt, Ft, Dt, acc_off)
                v = get_u64(dv, pos) + tot[k]
                set_u64(dv, pos, v)
                if link[k] >= 0:
                    lr, lc = link[k] // wp, link[k] % wp
                    t = _x_id(lr, lc, R, C, n)
                    if t >= 0:
                        tot[t] += v
                    else:
                        lp = _acc_pos(lr, lc, w, zl, Zt, Ft, Dt, acc_off)
                        set_u64(dv, lp, get_u64(dv, lp) + v)
            # first boundary cell downstream of each cross cell, in reverse topological order
            for i in range(cnt - 1, -1, -1):
                k = order[i]
                fdest[k] = -1
                if link[k] >= 0:
                    t = _x_id(link[k] // wp, link[k] % wp, R, C, n)
                    fdest[k] = link[k] if t < 0 else fdest[t]
            for side in range(4):
                for t in range(n + 1):
                    if side == 0:
                        r, c = R, C + t
                    elif side == 1:
                        r, c = R + n, C + t
                    elif side == 2:
                        r, c = R + t, C
                    else:
                        r, c = R + t, C + n
                    if (side >= 2 and (t == 0 or t == n)):
                        continue
                    code = _code(dv, fd_off, r, c, h, w, zl, Zt, Ft, Dt)
                    j = code_index[code]
                    if j >= 8:
                        continue
                    ro, co = r + dr[j], c + dc[j]
                    if ro <= R or ro >= R + n or co <= C or co >= C + n:
                        continue
                    e = _entry(ro, co, r, c, R, C, n, wp, ringdest)
                    if e >= 0:
                        x = _x_id(e // wp, e % wp, R, C, n)
                        if x >= 0:
                            e = fdest[x]
                    if e >= 0:
                        top = _push(dv, stack, top, r * wp + c, e)
        gcnt[node] = (top - goff[node]) // REC
    return top


# -------------------------------------------------------------------- phase 2


@numba.njit(cache=True)
def _solve_root_boundary(dv, stack, goff, gcnt, root, fd_off, acc_off, h, w, wp, n, zl, Zt, Ft,
                         Dt, code_index, dr, dc):
    """Finish the cells on the outer boundary using direct steps and the root's pointers."""
    m = 4 * (n + 1)
    link = np.full(m, -1, dtype=np.int64)
    valid = np.zeros(m, dtype=np.bool_)
    for t in range(gcnt[root]):
        b = get_i64(dv, stack + goff[root] + REC * t)
        d = get_i64(dv, stack + goff[root] + REC * t + 8)
        link[_ring(b // wp, b % wp, 0, 0, n + 1)] = _ring(d // wp, d % wp, 0, 0, n + 1)
    for side in range(4):
        for t in range(n + 1):
            r, c = (0, t) if side == 0 else (n, t) if side == 1 else (t, 0) if side == 2 else (t, n)
            if side >= 2 and (t == 0 or t == n):
                continue
            if n == 0 and side > 0:
                continue
            k = _ring(r, c, 0, 0, n + 1)
            code = _code(dv, fd_off, r, c, h, w, zl, Zt, Ft, Dt)
            valid[k] = code != 255
            j = code_index[code]
            if j < 8:
                ro, co = r + dr[j], c + dc[j]
                kk = _ring(ro, co, 0, 0, n + 1)
                if kk >= 0 and 0 <= ro <= n and 0 <= co <= n:
                    link[k] = kk
    indeg = np.zeros(m, dtype=np.int64)
    for k in range(m):
        if valid[k] and link[k] >= 0:
            indeg[link[k]] += 1
    order = np.empty(m, dtype=np.int64)
    top = 0
    for k in range(m):
        if valid[k] and indeg[k] == 0:
            order[top] = k
            top += 1
    i = 0
    while i < top:
        k = order[i]
        i += 1
        t = link[k]
        if t >= 0:
            indeg[t] -= 1
            if indeg[t] == 0:
                order[top] = t
                top += 1
    nvalid = 0
    for k in range(m):
        if valid[k]:
            nvalid += 1
    if top != nvalid:
        return -1
    side = n + 1
    for i in range(top):
        k = order[i]
        r, c = _ring_cell(k, side)
        pos = _acc_pos(r, c, w, zl, Zt, Ft, Dt, acc_off)
        v = get_u64(dv, pos)
        t = link[k]
        if t >= 0:
            tr, tc = _ring_cell(t, side)
            tp = _acc_pos(tr, tc, w, zl, Zt, Ft, Dt, acc_off)
            set_u64(dv, tp, get_u64(dv, tp) + v)
    return 0


@numba.njit(cache=True)
def _ring_cell(k, side):
    if k < side:
        return 0, k
    if k < 2 * side:
        return side - 1, k - side
    if k < 3 * side:
        return k - 2 * side, 0
    return k - 3 * side, side - 1


@numba.njit(cache=True)
def _phase_two(dv, fd_off, acc_off, stack, h, w, wp, zl, Zt, Ft, Dt, levels, rows, cols, kids,
               leaf, goff, gcnt, code_index, dr, dc):
    nmax = 1 << levels[-1]
    ls = (1 << min(leaf, levels[-1])) + 1
    lcap = ls * ls
    codes = np.empty(lcap, dtype=np.uint8)
    out = np.empty(lcap, dtype=np.int64)
    bnd = np.empty(lcap, dtype=np.bool_)
    acc = np.empty(lcap, dtype=np.uint64)
    pending = np.empty(lcap, dtype=np.int64)
    marked = np.empty(lcap, dtype=np.uint8)
    ringdest = np.empty((4, 4 * (nmax // 2 + 1) + 4), dtype=np.int64)
    link = np.empty(2 * nmax + 1, dtype=np.int64)
    valid = np.empty(2 * nmax + 1, dtype=np.bool_)
    order = np.empty(2 * nmax + 1, dtype=np.int64)
    inflow = np.empty(2 * nmax + 1, dtype=np.uint64)
    root = len(levels) - 1
    for node in range(root, -1, -1):
        lvl, R, C = levels[node], rows[node], cols[node]
        n = 1 << lvl
        # pop this subgrid's own group
        for t in range(gcnt[node]):
            get_i64(dv, stack + goff[node] + REC * t)
            get_i64(dv, stack + goff[node] + REC * t + 8)
        if node == root:
            if _solve_root_boundary(dv, stack, goff, gcnt, root, fd_off, acc_off, h, w, wp, n,
                                    zl, Zt, Ft, Dt, code_index, dr, dc) < 0:
                return -1
        if lvl <= leaf:
            s = n + 1
            m = s * s
            _load_square(dv, fd_off, h, w, zl, Zt, Ft, Dt, R, C, s, code_index, dr, dc,
                         codes, out, bnd)
            for p in range(m):
                acc[p] = 0 if (bnd[p] or codes[p] == 255) else 1
            for p in range(m):
                q = out[p]
                if bnd[p] and codes[p] != 255 and q >= 0 and not bnd[q]:
                    acc[q] += get_u64(dv, _acc_pos(R + p // s, C + p % s, w, zl, Zt, Ft, Dt,
                                                   acc_off))
            if _accumulate_interior(out, bnd, acc, m, pending, marked) < 0:
                return -1
            for p in range(m):
                if not bnd[p] and codes[p] != 255:
                    set_u64(dv, _acc_pos(R + p // s, C + p % s, w, zl, Zt, Ft, Dt, acc_off),
                            acc[p])
            continue
        _load_children(dv, stack, goff, gcnt, kids, node, R, C, n, wp, ringdest)
        nx = _cross_links(dv, fd_off, h, w, zl, Zt, Ft, Dt, R, C, n, wp, ringdest,
                          code_index, dr, dc, link, valid)
        cnt = _cross_order(link, valid, nx, R, C, n, wp, order)
        if cnt < 0:
            return -1
        for k in range(nx):
            inflow[k] = 0
        for side in range(4):
            for t in range(n + 1):
                if side >= 2 and (t == 0 or t == n):
                    continue
                r, c = (R, C + t) if side == 0 else (R + n, C + t) if side == 1 else \
                    (R + t, C) if side == 2 else (R + t, C + n)
                code = _code(dv, fd_off, r, c, h, w, zl, Zt, Ft, Dt)
                j = code_index[code]
                if j >= 8:
                    continue
                ro, co = r + dr[j], c + dc[j]
                if ro <= R or ro >= R + n or co <= C or co >= C + n:
                    continue
                e = _entry(ro, co, r, c, R, C, n, wp, ringdest)
                if e >= 0:
                    x = _x_id(e // wp, e % wp, R, C, n)
                    if x >= 0:
                        inflow[x] += get_u64(dv, _acc_pos(r, c, w, zl, Zt, Ft, Dt, acc_off))
        for i in range(cnt):
            k = order[i]
            if inflow[k] == 0:
                continue
            r, c = _x_cell(k, R, C, n)
            pos = _acc_pos(r, c, w, zl, Zt, Ft, Dt, acc_off)
            set_u64(dv, pos, get_u64(dv, pos) + inflow[k])
            if link[k] >= 0:
                t = _x_id(link[k] // wp, link[k] % wp, R, C, n)
                if t >= 0:
                    inflow[t] += inflow[k]
    return 0


@numba.njit(cache=True)
def _init(dv, fd_off, acc_off, n):
    for p in range(n):
        set_u64(dv, acc_off + 8 * p, np.uint64(0) if get_u8(dv, fd_off + p) == 255
                else np.uint64(1))


def cache_oblivious_accumulation(fd: GridFile, base_side: int = 17) -> RunResult:
    """Accumulate without knowing M or B; output uses the input's layout.

    ``info['pointers']`` is the number of pointer records pushed.
    """
    dev = fd.device
    h, w = fd.dims.shape
    leaf = base_level(base_side)
    k = hierarchy_height(h, w)
    wp = (1 << k) + 1
    levels, rows, cols, kids = build_hierarchy(h, w, k, leaf)
    capacity = int(sum(4 * ((1 << int(l)) + 1) for l in levels)) * REC
    before = dev.stats
    out = new_grid_file(dev, fd.dims, GridKind.FLOWACC, fd.layout, tables=fd.tables)
    stack = dev.allocate(max(capacity, 1))
    goff = np.zeros(len(levels), dtype=np.int64)
    gcnt = np.zeros(len(levels), dtype=np.int64)
    t = fd.tables
    _init(dev.state(), fd.offset, out.offset, fd.dims.n)
    args = (dev.state(), fd.offset, out.offset, stack, h, w, wp, fd.is_z, t.Z, t.F, t.D,
            levels, rows, cols, kids, leaf, goff, gcnt, CODE_INDEX, DR, DC)
    top = _phase_one(*args)
    if top < 0:
        raise NonTerminating("flow directions contain a cycle")
    if _phase_two(*args) < 0:
        raise NonTerminating("flow directions contain a cycle")
    stats = dev.flush() - before
    return RunResult(out, stats, {"pointers": int(gcnt.sum()), "levels": k + 1,
                                  "base_level": leaf, "subgrids": len(levels)})
