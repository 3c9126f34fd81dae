import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emflow.blockio import DeviceConfig
from emflow.grid import Layout
from emflow.naive import brute_force_accumulation
from emflow.oblivious import base_level, build_hierarchy, cache_oblivious_accumulation, \
    hierarchy_height

from conftest import fd_from, flowdirs, place, random_flowdir


def oblivious(fd, base=17, layout=Layout.ROW_MAJOR, config=None):
    gf = place(fd, layout) if config is None else place(fd, layout, config)
    res = cache_oblivious_accumulation(gf, base_side=base)
    return res.grid.with_layout(Layout.ROW_MAJOR), res.info


def test_chain():
    for base in (2, 3, 5, 17):
        assert oblivious(fd_from([[1, 1, 1, 1]]), base)[0].data.tolist() == [[1, 2, 3, 4]]


def test_base_side_validation():
    assert base_level(2) == 0 and base_level(3) == 1 and base_level(17) == 4
    for bad in (1, 4, 16):
        with pytest.raises(ValueError):
            base_level(bad)


def test_hierarchy_shape():
    assert hierarchy_height(1, 1) == 0
    assert hierarchy_height(257, 100) == 8
    assert hierarchy_height(258, 2) == 9
    levels, rows, cols, kids = build_hierarchy(17, 17, 4, 2)
    # post-order: root last, every child listed before its parent
    assert levels[-1] == 4 and len(levels) == 1 + 4 + 16
    pos = {i: i for i in range(len(levels))}
    for node, ch in enumerate(kids):
        assert all(pos[c] < pos[node] for c in ch if c >= 0)


@pytest.mark.parametrize("base", [2, 3, 17])
@pytest.mark.parametrize("layout", list(Layout))
def test_matches_oracle(base, layout):
    rng = np.random.default_rng(base * 10 + layout)
    for seed in range(40):
        h, w = (int(v) for v in rng.integers(1, 140, size=2))
        fd = random_flowdir(seed, h, w, 0.4 if seed % 3 == 0 else 0.0)
        assert oblivious(fd, base, layout)[0] == brute_force_accumulation(fd)


def test_exact_hierarchy_sizes():
    for side in (2, 3, 5, 9, 17, 33, 129, 257):
        fd = random_flowdir(side, side, side, 0.1)
        for base in (2, 17):
            assert oblivious(fd, base)[0] == brute_force_accumulation(fd)


@settings(max_examples=60)
@given(flowdirs(max_side=48), st.sampled_from([2, 3, 5, 9]))
def test_property(fd, base):
    assert oblivious(fd, base)[0] == brute_force_accumulation(fd)


def test_independent_of_memory_and_block_size():
    fd = random_flowdir(5, 90, 77, 0.2)
    a, ia = oblivious(fd, 5, config=DeviceConfig(64, 64 * 8))
    b, ib = oblivious(fd, 5, config=DeviceConfig(4096, 4096 * 64))
    assert a == b and ia["pointers"] == ib["pointers"]


@pytest.mark.parametrize("side", [33, 65, 129, 257])
def test_pointer_count_is_linear(side):
    for seed in range(3):
        fd = random_flowdir(seed, side, side)
        n = fd.dims.n
        assert oblivious(fd, 2)[1]["pointers"] <= 3 * n
        assert oblivious(fd, 17)[1]["pointers"] <= 0.5 * n
