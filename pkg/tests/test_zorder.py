import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emflow.blockio import BlockDevice, DeviceConfig
from emflow.grid import CellRef, FlowAccGrid, GridDims, GridKind, Layout, NEIGHBOUR_DIRECTIONS, \
    out_neighbor, payload_bytes
from emflow.storage import get_grid, new_grid_file, put_grid
from emflow.zorder import (
    ConversionDirection, ConversionStrategy, build_segment_tables, convert_layout, deinterleave,
    file_offset_to_rowcol, interleave, rowcol_to_file_offset, z_neighbor_offset,
    zorder_permutation,
)


def test_interleave_examples():
    assert interleave(0, 0, 1) == 0
    assert interleave(1, 1, 1) == 3
    assert interleave(2, 3, 2) == 13
    assert deinterleave(0, 2) == (0, 0)
    assert deinterleave(13, 2) == (2, 3)


def test_interleave_exhaustive_small_m():
    for m in range(6):
        seen = set()
        for y in range(1 << m):
            for x in range(1 << m):
                z = interleave(y, x, m)
                assert deinterleave(z, m) == (y, x)
                seen.add(z)
        assert seen == set(range(4 ** m))


@given(st.integers(0, 16).flatmap(
    lambda m: st.tuples(st.just(m), st.integers(0, (1 << m) - 1), st.integers(0, (1 << m) - 1))))
def test_interleave_roundtrip(args):
    m, y, x = args
    z = interleave(y, x, m)
    assert z < 4 ** m
    assert deinterleave(z, m) == (y, x)


def test_interleave_rejects_wide_coordinates():
    with pytest.raises(ValueError):
        interleave(4, 0, 2)
    with pytest.raises(ValueError):
        deinterleave(16, 2)


def test_segment_tables_examples():
    t = build_segment_tables(GridDims(2, 3))
    assert (t.m, t.t, t.F.tolist(), t.Z.tolist()) == (2, 2, [0, 5], [0, 6])
    for dims in (GridDims(4, 4), GridDims(1, 1)):
        t = build_segment_tables(dims)
        assert (t.t, t.F.tolist(), t.Z.tolist()) == (1, [0], [0])


def _quadrant_order(h, w, m):
    """Cells of G' in recursive UL, UR, LL, LR order, restricted to the grid."""
    out = []

    def visit(r, c, size):
        if r >= h or c >= w:
            return
        if size == 1:
            out.append((r, c))
            return
        s = size // 2
        for dr, dc in ((0, 0), (0, s), (s, 0), (s, s)):
            visit(r + dr, c + dc, s)

    visit(0, 0, 1 << m)
    return out


@settings(max_examples=60)
@given(st.integers(1, 64), st.integers(1, 64))
def test_segment_tables_match_recursive_enumeration(h, w):
    dims = GridDims(h, w)
    t = build_segment_tables(dims)
    assert int(t.D.sum()) == h * w
    assert int((t.D + t.gaps).sum()) == 4 ** t.m
    assert np.all(np.diff(t.F) > 0) and np.all(np.diff(t.Z) > 0)
    assert t.t <= 2 * (h + w)
    expected = [r * w + c for r, c in _quadrant_order(h, w, t.m)]
    assert zorder_permutation(dims).tolist() == expected


def test_offset_examples():
    t = build_segment_tables(GridDims(2, 3))
    assert file_offset_to_rowcol(t, 5) == (1, 2)
    assert file_offset_to_rowcol(t, 0) == (0, 0)
    assert rowcol_to_file_offset(t, CellRef(1, 2)) == 5
    assert rowcol_to_file_offset(t, CellRef(0, 0)) == 0
    for p in range(6):
        assert rowcol_to_file_offset(t, file_offset_to_rowcol(t, p)) == p


def _check_bijection(dims):
    t = build_segment_tables(dims)
    cells = [file_offset_to_rowcol(t, p) for p in range(dims.n)]
    assert len(set(cells)) == dims.n
    assert all(dims.contains(*c) for c in cells)
    assert [rowcol_to_file_offset(t, c) for c in cells] == list(range(dims.n))


def test_offset_bijection_random_dims():
    rng = np.random.default_rng(3)
    for _ in range(100):
        h, w = rng.integers(1, 129, size=2)
        _check_bijection(GridDims(int(h), int(w)))
    for h, w in ((512, 3), (7, 512), (300, 451)):
        _check_bijection(GridDims(h, w))


def test_z_neighbor_examples():
    t = build_segment_tables(GridDims(4, 4))
    from emflow.grid import Direction
    assert z_neighbor_offset(t, 0, Direction.E) == 1
    assert z_neighbor_offset(t, 3, Direction.E) == 6
    assert z_neighbor_offset(t, 0, Direction.N) is None
    assert z_neighbor_offset(t, 0, Direction.SINK) is None


def test_z_neighbor_matches_row_col_oracle():
    rng = np.random.default_rng(4)
    for _ in range(100):
        h, w = (int(v) for v in rng.integers(1, 41, size=2))
        dims = GridDims(h, w)
        t = build_segment_tables(dims)
        for p in range(dims.n):
            c = file_offset_to_rowcol(t, p)
            for d in NEIGHBOUR_DIRECTIONS:
                o = out_neighbor(dims, c, d)
                want = None if o is None else rowcol_to_file_offset(t, o)
                assert z_neighbor_offset(t, p, d) == want


def _acc_grid(h, w, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 2**64 - 1, size=(h, w), dtype=np.uint64)
    return FlowAccGrid(GridDims(h, w), data)


def _convert(grid, layout, strategy, cfg=DeviceConfig(64, 64 * 64)):
    dev = BlockDevice(cfg)
    src = put_grid(dev, grid)
    dst = new_grid_file(dev, grid.dims, grid.kind, layout)
    stats = convert_layout(src, dst, strategy)
    return dst, stats


@pytest.mark.parametrize("strategy", list(ConversionStrategy))
def test_row_to_z_small_example(strategy):
    g = FlowAccGrid(GridDims(2, 3), np.arange(6, dtype=np.uint64).reshape(2, 3))
    dst, _ = _convert(g, Layout.Z_ORDER, strategy)
    raw = dst.device.peek(dst.offset, dst.nbytes).view(np.uint64)
    assert raw.tolist() == [0, 1, 3, 4, 2, 5]


@pytest.mark.parametrize("strategy", list(ConversionStrategy))
@pytest.mark.parametrize("shape", [(1, 1), (2, 3), (70, 50), (33, 130)])
def test_round_trip_is_bit_exact(strategy, shape):
    g = _acc_grid(*shape)
    z, _ = _convert(g, Layout.Z_ORDER, strategy)
    raw_z = z.device.peek(z.offset, z.nbytes).tobytes()
    assert raw_z == payload_bytes(g.with_layout(Layout.Z_ORDER))
    back = new_grid_file(z.device, g.dims, g.kind, Layout.ROW_MAJOR)
    convert_layout(z, back, strategy, ConversionDirection.Z_TO_ROW)
    assert get_grid(back) == g


def test_direction_must_match_layouts():
    g = _acc_grid(3, 3)
    dev = BlockDevice(DeviceConfig(64, 256))
    src = put_grid(dev, g)
    dst = new_grid_file(dev, g.dims, g.kind, Layout.Z_ORDER)
    with pytest.raises(ValueError):
        convert_layout(src, dst, ConversionStrategy.Z_ORDER_SCAN, ConversionDirection.Z_TO_ROW)
    same = new_grid_file(dev, g.dims, g.kind, Layout.ROW_MAJOR)
    with pytest.raises(ValueError):
        convert_layout(src, same, ConversionStrategy.Z_ORDER_SCAN)


def test_zscan_volume_is_scan_like():
    B = 64
    g = _acc_grid(257, 300)
    _, stats = _convert(g, Layout.Z_ORDER, ConversionStrategy.Z_ORDER_SCAN,
                        DeviceConfig(B, 4 * B * B))
    assert stats.io_volume <= 3 * 2 * g.dims.n * 8


def test_rowscan_writes_each_output_block_once():
    B, s = 64, 8
    g = _acc_grid(129, 211)
    side = math.isqrt(B // s) + 1
    frames = side * (-(-g.dims.width * s // B) + 2) + 4
    src_dev = BlockDevice(DeviceConfig(B, 4 * B))
    dst_dev = BlockDevice(DeviceConfig(B, frames * B))
    src = put_grid(src_dev, g)
    dst = new_grid_file(dst_dev, g.dims, GridKind.FLOWACC, Layout.Z_ORDER)
    convert_layout(src, dst, ConversionStrategy.ROW_BY_ROW_SCAN)
    assert dst_dev.stats.block_writes == -(-g.dims.n * s // B)
    assert dst_dev.stats.block_reads == 0
