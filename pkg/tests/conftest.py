import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from emflow.blockio import BlockDevice, DeviceConfig, Policy
from emflow.grid import FlowDirGrid, GridDims, Layout, normalize_directions
from emflow.storage import put_grid
from emflow.terrain import gen_random_directions, gen_random_drainage

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL = DeviceConfig(block_size=64, memory=64 * 64)
PINNED = DeviceConfig(block_size=64, memory=64 * 64, policy=Policy.LRU_WITH_PINNING)


def device(config: DeviceConfig = SMALL) -> BlockDevice:
    return BlockDevice(config)


def place(grid, layout=Layout.ROW_MAJOR, config: DeviceConfig = SMALL):
    dev = BlockDevice(config)
    return put_grid(dev, grid.with_layout(layout))


def fd_from(rows) -> FlowDirGrid:
    return normalize_directions(FlowDirGrid.from_array(np.array(rows, dtype=np.uint8)))


def random_flowdir(seed: int, h: int, w: int, nodata: float = 0.0) -> FlowDirGrid:
    """Alternate between two generators so both short noisy paths and long rivers appear."""
    dims = GridDims(h, w)
    if seed % 2:
        return gen_random_drainage(dims, seed, nodata_fraction=nodata)
    return gen_random_directions(dims, seed, nodata_fraction=nodata)


@st.composite
def flowdirs(draw, max_side: int = 24, nodata: bool = True):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    seed = draw(st.integers(0, 2**31 - 1))
    frac = draw(st.sampled_from([0.0, 0.2, 0.5])) if nodata and h * w >= 4 else 0.0
    return random_flowdir(seed, h, w, frac)


@st.composite
def raw_codes(draw, max_side: int = 8):
    """Arbitrary valid direction bytes, cycles allowed."""
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    codes = [0, 1, 2, 4, 8, 16, 32, 64, 128, 255]
    cells = draw(st.lists(st.sampled_from(codes), min_size=h * w, max_size=h * w))
    return np.array(cells, dtype=np.uint8).reshape(h, w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(criterion: int, ok: bool, detail: str) -> None:
        lines.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
