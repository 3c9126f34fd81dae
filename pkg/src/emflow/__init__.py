"""External-memory flow accumulation and flooding on grid terrains."""
from .blockio import BlockDevice, DeviceConfig, IoStats
from .grid import (Direction, ElevationGrid, FlowAccGrid, FlowDirGrid, GridDims, Layout,
                   read_grid, write_grid)
from .naive import TraversalOrder, brute_force_accumulation, naive_accumulation
from .oblivious import cache_oblivious_accumulation
from .separator import (cache_aware_accumulation, cache_aware_accumulation_z,
                        choose_subgrid_size, predicted_io_overhead)
from .storage import GridFile, get_grid, put_grid
from .tfp import tfp_accumulation

__all__ = [
    "BlockDevice", "DeviceConfig", "IoStats", "Direction", "ElevationGrid", "FlowAccGrid",
    "FlowDirGrid", "GridDims", "Layout", "read_grid", "write_grid", "TraversalOrder",
    "brute_force_accumulation", "naive_accumulation", "cache_oblivious_accumulation",
    "cache_aware_accumulation", "cache_aware_accumulation_z", "choose_subgrid_size",
    "predicted_io_overhead", "GridFile", "get_grid", "put_grid", "tfp_accumulation",
]

__version__ = "0.1.0"
