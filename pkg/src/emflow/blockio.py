"""A simulated block device in the two-level I/O model.

Data lives in one flat byte store (an in-memory array or a memory-mapped
file).  A cache of ``M // B`` frames sits in front of it with LRU
replacement, write-back and write-allocate.  Every access goes through
``touch``, which counts one block read per miss and one block write per
dirty eviction or flush.  Blocks that were never written to "disk" (freshly
allocated output space) are materialised without a read.

The cache logic is written as numba functions over a tuple of arrays (the
device *state*) so that the algorithms, which are also compiled, can call it
per cell.  ``BlockDevice`` is the Python-side owner of that state.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numba
import numpy as np

# meta slots
READS, WRITES, HEAD, TAIL, USED, PINNED, PEAK_PINNED, BSIZE, NFRAMES = range(9)


class DeviceError(Exception):
    pass


class OutOfRange(DeviceError):
    pass


class PinOverflow(DeviceError):
    pass


class PinningDisabled(DeviceError):
    pass


class Policy(enum.Enum):
    LRU = "lru"
    LRU_WITH_PINNING = "lru-pin"


@dataclass(frozen=True)
class DeviceConfig:
    block_size: int
    memory: int
    policy: Policy = Policy.LRU

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block size must be at least 1 byte")
        if self.memory < 2 * self.block_size:
            raise ValueError("memory must hold at least two blocks")
        if self.memory % self.block_size:
            raise ValueError("memory must be a multiple of the block size")

    @property
    def frames(self) -> int:
        return self.memory // self.block_size


@dataclass(frozen=True)
class IoStats:
    block_reads: int = 0
    block_writes: int = 0
    block_size: int = 1
    peak_pinned: int = 0

    @property
    def ios(self) -> int:
        return self.block_reads + self.block_writes

    @property
    def io_volume(self) -> int:
        return self.ios * self.block_size

    def __sub__(self, other: "IoStats") -> "IoStats":
        return IoStats(self.block_reads - other.block_reads,
                       self.block_writes - other.block_writes,
                       self.block_size, self.peak_pinned)

    def __add__(self, other: "IoStats") -> "IoStats":
        if self.block_size != other.block_size and self.ios and other.ios:
            raise ValueError("cannot add stats of devices with different block sizes")
        bs = self.block_size if self.ios else other.block_size
        return IoStats(self.block_reads + other.block_reads,
                       self.block_writes + other.block_writes, bs,
                       max(self.peak_pinned, other.peak_pinned))


CSV_FIELDS = ["algorithm", "N", "M", "B", "reads", "writes", "volume", "volume_factor"]


def stats_row(algorithm: str, n: int, config: DeviceConfig, stats: IoStats,
              in_out_bytes: int) -> dict:
    return {
        "algorithm": algorithm, "N": n, "M": config.memory, "B": config.block_size,
        "reads": stats.block_reads, "writes": stats.block_writes,
        "volume": stats.io_volume,
        "volume_factor": round(stats.io_volume / in_out_bytes, 6) if in_out_bytes else 0.0,
    }


def stats_csv(rows: list[dict], fields=CSV_FIELDS) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# ----------------------------------------------------------- compiled cache core
#
# state tuple: (data, meta, block_frame, ondisk, frame_block, prev, nxt, dirty, pins)
#
# These helpers never allocate, so they are compiled without reference
# counting; otherwise every call would incref and decref all nine arrays.

_kernel = numba.njit(cache=True, _nrt=False)


@_kernel
def _unlink(meta, prev, nxt, f):
    p = prev[f]
    n = nxt[f]
    if p >= 0:
        nxt[p] = n
    else:
        meta[HEAD] = n
    if n >= 0:
        prev[n] = p
    else:
        meta[TAIL] = p


@_kernel
def _push_front(meta, prev, nxt, f):
    h = meta[HEAD]
    prev[f] = -1
    nxt[f] = h
    if h >= 0:
        prev[h] = f
    meta[HEAD] = f
    if meta[TAIL] < 0:
        meta[TAIL] = f


@_kernel
def touch(dv, blk, write):
    """Bring block ``blk`` into the cache, updating LRU order and counters."""
    f = dv[2][blk]
    if f >= 0 and f == dv[1][HEAD]:
        if write:
            dv[7][f] = 1
        return f
    return _touch_slow(dv, blk, write)


@_kernel
def _touch_slow(dv, blk, write):
    meta = dv[1]
    block_frame = dv[2]
    ondisk = dv[3]
    frame_block = dv[4]
    prev = dv[5]
    nxt = dv[6]
    dirty = dv[7]
    pins = dv[8]
    f = block_frame[blk]
    if f >= 0:
        if meta[HEAD] != f:
            _unlink(meta, prev, nxt, f)
            _push_front(meta, prev, nxt, f)
    else:
        if meta[USED] < meta[NFRAMES]:
            f = meta[USED]
            meta[USED] += 1
        else:
            f = meta[TAIL]
            while f >= 0 and pins[f] > 0:
                f = prev[f]
            if f < 0:
                raise RuntimeError("every cache frame is pinned")
            old = frame_block[f]
            if dirty[f]:
                meta[WRITES] += 1
                ondisk[old] = 1
                dirty[f] = 0
            block_frame[old] = -1
            _unlink(meta, prev, nxt, f)
        if ondisk[blk]:
            meta[READS] += 1
        frame_block[f] = blk
        block_frame[blk] = f
        _push_front(meta, prev, nxt, f)
    if write:
        dirty[f] = 1
    return f


@_kernel
def touch_range(dv, off, n, write):
    if n <= 0:
        return
    bs = dv[1][BSIZE]
    for b in range(off // bs, (off + n - 1) // bs + 1):
        touch(dv, b, write)


@_kernel
def overwrite_range(dv, off, n):
    """Touch for writing; blocks the range covers entirely are not read first."""
    if n <= 0:
        return
    bs = dv[1][BSIZE]
    for b in range(off // bs, (off + n - 1) // bs + 1):
        if off <= b * bs and (b + 1) * bs <= off + n and dv[2][b] < 0:
            dv[3][b] = 0
        touch(dv, b, True)


@_kernel
def get_u8(dv, off):
    touch(dv, off // dv[1][BSIZE], False)
    return dv[0][off]


@_kernel
def set_u8(dv, off, v):
    touch(dv, off // dv[1][BSIZE], True)
    dv[0][off] = v


@_kernel
def _load64(d, off):
    v = np.uint64(0)
    for k in range(8):
        v |= np.uint64(d[off + k]) << np.uint64(8 * k)
    return v


@_kernel
def _store64(d, off, v):
    v = np.uint64(v)
    for k in range(8):
        d[off + k] = np.uint8((v >> np.uint64(8 * k)) & np.uint64(0xFF))


@_kernel
def get_u64(dv, off):
    touch_range(dv, off, 8, False)
    return _load64(dv[0], off)


@_kernel
def set_u64(dv, off, v):
    touch_range(dv, off, 8, True)
    _store64(dv[0], off, v)


@_kernel
def get_i64(dv, off):
    touch_range(dv, off, 8, False)
    return np.int64(_load64(dv[0], off))


@_kernel
def set_i64(dv, off, v):
    touch_range(dv, off, 8, True)
    _store64(dv[0], off, np.uint64(np.int64(v)))


@_kernel
def get_f32(dv, off):
    touch_range(dv, off, 4, False)
    return dv[0][off:off + 4].view(np.float32)[0]


@_kernel
def set_f32(dv, off, v):
    touch_range(dv, off, 4, True)
    dv[0][off:off + 4].view(np.float32)[0] = v


@_kernel
def _flush(dv):
    meta = dv[1]
    ondisk = dv[3]
    frame_block = dv[4]
    dirty = dv[7]
    for f in range(meta[USED]):
        if dirty[f]:
            meta[WRITES] += 1
            ondisk[frame_block[f]] = 1
            dirty[f] = 0


@_kernel
def _pin(dv, first, last, delta):
    meta = dv[1]
    pins = dv[8]
    for b in range(first, last + 1):
        f = touch(dv, b, False)
        if delta > 0:
            if pins[f] == 0:
                meta[PINNED] += 1
            pins[f] += 1
        elif pins[f] > 0:
            pins[f] -= 1
            if pins[f] == 0:
                meta[PINNED] -= 1
    if meta[PINNED] > meta[PEAK_PINNED]:
        meta[PEAK_PINNED] = meta[PINNED]


# ------------------------------------------------------------------ Python owner


class BlockDevice:
    """Byte-addressable store with an M-byte LRU cache of B-byte blocks.

    ``path`` selects a file backing (memory-mapped); otherwise the store is
    an in-memory array.  Counting is identical for both.
    """

    def __init__(self, config: DeviceConfig, path: Optional[str | Path] = None):
        self.config = config
        self.path = Path(path) if path is not None else None
        self._size = 0
        self._data = self._new_store(0)
        nf = config.frames
        self._meta = np.zeros(9, dtype=np.int64)
        self._meta[HEAD] = self._meta[TAIL] = -1
        self._meta[BSIZE] = config.block_size
        self._meta[NFRAMES] = nf
        self._block_frame = np.full(0, -1, dtype=np.int64)
        self._ondisk = np.zeros(0, dtype=np.uint8)
        self._frame_block = np.full(nf, -1, dtype=np.int64)
        self._prev = np.full(nf, -1, dtype=np.int64)
        self._nxt = np.full(nf, -1, dtype=np.int64)
        self._dirty = np.zeros(nf, dtype=np.uint8)
        self._pins = np.zeros(nf, dtype=np.int32)
        self.regions: dict[str, tuple[int, int]] = {}

    # storage management ---------------------------------------------------

    def _new_store(self, nbytes: int) -> np.ndarray:
        if self.path is None:
            return np.zeros(max(nbytes, 1), dtype=np.uint8)
        with open(self.path, "ab") as f:
            f.truncate(max(nbytes, 1))
        return np.memmap(self.path, dtype=np.uint8, mode="r+", shape=(max(nbytes, 1),))

    def _grow(self, nbytes: int) -> None:
        if nbytes <= len(self._data) and nbytes <= self._size:
            return
        if nbytes > len(self._data):
            cap = max(nbytes, 2 * len(self._data))
            if self.path is None:
                new = np.zeros(cap, dtype=np.uint8)
                new[:len(self._data)] = self._data
                self._data = new
            else:
                self._data.flush()
                del self._data
                self._data = self._new_store(cap)
        self._size = max(self._size, nbytes)
        bs = self.config.block_size
        nblocks = -(-len(self._data) // bs)
        if nblocks > len(self._block_frame):
            extra = nblocks - len(self._block_frame)
            self._block_frame = np.concatenate([self._block_frame, np.full(extra, -1, np.int64)])
            self._ondisk = np.concatenate([self._ondisk, np.zeros(extra, np.uint8)])

    @property
    def size(self) -> int:
        return self._size

    def allocate(self, nbytes: int, name: Optional[str] = None) -> int:
        """Reserve a block-aligned region of fresh (never written) space."""
        bs = self.config.block_size
        off = -(-self._size // bs) * bs
        self._grow(off + max(nbytes, 0))
        if name is not None:
            self.regions[name] = (off, nbytes)
        return off

    def load(self, offset: int, payload) -> None:
        """Place existing on-disk content, without I/O accounting."""
        payload = np.frombuffer(bytes(payload), dtype=np.uint8) if not isinstance(
            payload, np.ndarray) else payload.view(np.uint8).reshape(-1)
        end = offset + len(payload)
        self._check(offset, len(payload))
        self._data[offset:end] = payload
        if len(payload):
            bs = self.config.block_size
            self._ondisk[offset // bs:(end - 1) // bs + 1] = 1

    def peek(self, offset: int, n: int) -> np.ndarray:
        """Raw view of current content, without I/O accounting."""
        self._check(offset, n)
        return self._data[offset:offset + n]

    def state(self) -> tuple:
        return (self._data, self._meta, self._block_frame, self._ondisk, self._frame_block,
                self._prev, self._nxt, self._dirty, self._pins)

    # accounted access -------------------------------------------------------

    def _check(self, offset: int, n: int) -> None:
        if offset < 0 or n < 0 or offset + n > self._size:
            raise OutOfRange(f"range [{offset}, {offset + n}) outside device of {self._size} bytes")

    def read_bytes(self, offset: int, n: int) -> bytes:
        self._check(offset, n)
        touch_range(self.state(), offset, n, False)
        return self._data[offset:offset + n].tobytes()

    def write_bytes(self, offset: int, payload: bytes) -> None:
        self._check(offset, len(payload))
        overwrite_range(self.state(), offset, len(payload))
        self._data[offset:offset + len(payload)] = np.frombuffer(payload, dtype=np.uint8)

    def _block_span(self, offset: int, n: int) -> tuple[int, int]:
        bs = self.config.block_size
        return offset // bs, (offset + max(n, 1) - 1) // bs

    def pin(self, offset: int, n: int) -> None:
        if self.config.policy is not Policy.LRU_WITH_PINNING:
            raise PinningDisabled("pinning requires the LRU_WITH_PINNING policy")
        self._check(offset, n)
        first, last = self._block_span(offset, n)
        new = sum(1 for b in range(first, last + 1)
                  if self._block_frame[b] < 0 or self._pins[self._block_frame[b]] == 0)
        if self._meta[PINNED] + new > self.config.frames:
            raise PinOverflow(f"pinning {new} more blocks exceeds {self.config.frames} frames")
        _pin(self.state(), first, last, 1)

    def unpin(self, offset: int, n: int) -> None:
        if self.config.policy is not Policy.LRU_WITH_PINNING:
            raise PinningDisabled("pinning requires the LRU_WITH_PINNING policy")
        self._check(offset, n)
        first, last = self._block_span(offset, n)
        for b in range(first, last + 1):
            f = self._block_frame[b]
            if f >= 0 and self._pins[f] > 0:
                self._pins[f] -= 1
                if self._pins[f] == 0:
                    self._meta[PINNED] -= 1

    def flush(self) -> IoStats:
        _flush(self.state())
        if self.path is not None:
            self._data.flush()
        return self.stats

    def drop_cache(self) -> None:
        """Flush and empty the cache so the next access pattern starts cold."""
        if self._meta[PINNED]:
            raise DeviceError("cannot drop the cache while blocks are pinned")
        self.flush()
        used = self._frame_block[:self._meta[USED]]
        self._block_frame[used] = -1
        self._frame_block[:] = -1
        self._prev[:] = -1
        self._nxt[:] = -1
        self._meta[HEAD] = self._meta[TAIL] = -1
        self._meta[USED] = 0

    def reset_stats(self) -> None:
        self._meta[READS] = 0
        self._meta[WRITES] = 0
        self._meta[PEAK_PINNED] = self._meta[PINNED]

    @property
    def stats(self) -> IoStats:
        bs = self.config.block_size
        return IoStats(int(self._meta[READS]), int(self._meta[WRITES]), bs,
                       int(self._meta[PEAK_PINNED]) * bs)

    @property
    def cached_blocks(self) -> int:
        return int(self._meta[USED])

    @property
    def pinned_bytes(self) -> int:
        return int(self._meta[PINNED]) * self.config.block_size
