import numpy as np
import pytest
from hypothesis import given, settings

from emflow.grid import FlowDirGrid, Layout
from emflow.naive import (
    TraversalOrder, brute_force_accumulation, conservation_residual,
    naive_accumulation,
)

from conftest import fd_from, flowdirs, place, random_flowdir

COMBOS = [(Layout.ROW_MAJOR, TraversalOrder.ROW_BY_ROW), (Layout.ROW_MAJOR, TraversalOrder.Z_ORDER),
          (Layout.Z_ORDER, TraversalOrder.ROW_BY_ROW), (Layout.Z_ORDER, TraversalOrder.Z_ORDER)]


def naive(fd, layout=Layout.ROW_MAJOR, order=TraversalOrder.ROW_BY_ROW):
    return naive_accumulation(place(fd, layout), order).grid.with_layout(Layout.ROW_MAJOR)


def test_chain():
    fd = fd_from([[1, 1, 1, 1]])
    assert naive(fd).data.tolist() == [[1, 2, 3, 4]]


def test_two_by_two():
    fd = fd_from([[1, 4], [1, 0]])
    assert naive(fd).data.tolist() == [[1, 2], [1, 4]]
    assert brute_force_accumulation(fd).data.tolist() == [[1, 2], [1, 4]]


def test_oracle_examples():
    assert brute_force_accumulation(fd_from([[0]])).data.tolist() == [[1]]
    star = fd_from([[2, 4, 8], [1, 0, 16], [128, 64, 32]])
    assert brute_force_accumulation(star).data[1, 1] == 9


def test_nodata_cells_are_zero():
    # (0, 2) points W into NoData and becomes a sink
    fd = fd_from([[4, 255, 16], [1, 1, 0]])
    assert naive(fd).data.tolist() == [[1, 0, 1], [2, 3, 4]]


@pytest.mark.parametrize("layout,order", COMBOS)
def test_matches_oracle_on_random_grids(layout, order):
    for seed in range(100):
        fd = random_flowdir(seed, 64, 64, 0.3 if seed % 4 == 0 else 0.0)
        assert naive(fd, layout, order) == brute_force_accumulation(fd)


def test_all_orders_and_layouts_agree():
    rng = np.random.default_rng(8)
    for seed in range(200):
        h, w = (int(v) for v in rng.integers(1, 129, size=2))
        fd = random_flowdir(seed, h, w, float(rng.choice([0.0, 0.0, 0.3])))
        outs = [naive(fd, l, o) for l, o in COMBOS]
        assert all(o == outs[0] for o in outs[1:])


@settings(max_examples=150)
@given(flowdirs(max_side=40))
def test_local_conservation(fd):
    acc = naive(fd)
    assert not conservation_residual(fd, acc.data).any()
    data = fd.data != 255
    assert (acc.data[data] >= 1).all() and (acc.data[data] <= fd.dims.n).all()
    assert (acc.data[~data] == 0).all()


@settings(max_examples=100)
@given(flowdirs(max_side=30))
def test_marks_are_cleared_and_each_cell_advanced_once(fd):
    res = naive_accumulation(place(fd), TraversalOrder.Z_ORDER)
    assert (res.grid.data >> np.uint64(63) == 0).all()
    assert res.info["inner_steps"] <= 4 * fd.dims.n


def test_cyclic_input_terminates():
    # a cycle cell always has an unmarked in-neighbour, so the walk never enters it
    cyc = FlowDirGrid.from_array([[1, 16, 16], [64, 2, 0]])
    res = naive_accumulation(place(cyc))
    assert res.info["inner_steps"] <= 4 * cyc.dims.n
