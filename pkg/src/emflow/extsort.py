"""External K-way merge sort of fixed-width u64 records on a block device.

Records are ``words`` little-endian 64-bit words; the sort key is one of the
words, interpreted as a signed 64-bit integer.  Runs of ``run_len`` records
are sorted in memory, then merged ``fan_in`` at a time until one run is left.
"""
from __future__ import annotations

import numba
import numpy as np

from ._heap import heap_pop, heap_push
from .blockio import BlockDevice, get_i64, set_i64


@numba.njit(cache=True)
def _read_records(dv, off, start, count, words, out):
    for i in range(count):
        base = off + (start + i) * words * 8
        for j in range(words):
            out[i, j] = get_i64(dv, base + 8 * j)


@numba.njit(cache=True)
def _write_record(dv, off, idx, words, rec):
    base = off + idx * words * 8
    for j in range(words):
        set_i64(dv, base + 8 * j, rec[j])


@numba.njit(cache=True)
def _form_runs(dv, src, n, words, key, dst, run_len):
    nruns = (n + run_len - 1) // run_len
    starts = np.empty(nruns + 1, dtype=np.int64)
    buf = np.empty((min(run_len, max(n, 1)), words), dtype=np.int64)
    for r in range(nruns):
        s = r * run_len
        cnt = min(run_len, n - s)
        starts[r] = s
        _read_records(dv, src, s, cnt, words, buf)
        order = np.argsort(buf[:cnt, key], kind="mergesort")
        for i in range(cnt):
            _write_record(dv, dst, s + i, words, buf[order[i]])
    starts[nruns] = n
    return starts


@numba.njit(cache=True)
def _merge_pass(dv, src, dst, starts, words, key, fan_in):
    nruns = len(starts) - 1
    ngroups = (nruns + fan_in - 1) // fan_in
    new_starts = np.empty(ngroups + 1, dtype=np.int64)
    cursor = np.empty(fan_in, dtype=np.int64)
    hkeys = np.empty(fan_in, dtype=np.int64)
    hvals = np.empty(fan_in, dtype=np.int64)
    rec = np.empty((1, words), dtype=np.int64)
    out = 0
    for g in range(ngroups):
        first = g * fan_in
        last = min(first + fan_in, nruns)
        new_starts[g] = starts[first]
        size = 0
        for r in range(first, last):
            cursor[r - first] = starts[r]
            if starts[r] < starts[r + 1]:
                k = get_i64(dv, src + starts[r] * words * 8 + key * 8)
                size = heap_push(hkeys, hvals, size, k, r - first)
        while size > 0:
            k, j, size = heap_pop(hkeys, hvals, size)
            _read_records(dv, src, cursor[j], 1, words, rec)
            _write_record(dv, dst, out, words, rec[0])
            out += 1
            cursor[j] += 1
            if cursor[j] < starts[first + j + 1]:
                k = get_i64(dv, src + cursor[j] * words * 8 + key * 8)
                size = heap_push(hkeys, hvals, size, k, j)
    new_starts[ngroups] = starts[nruns]
    return new_starts


def external_sort(dev: BlockDevice, src: int, n: int, words: int, key: int = 0,
                  run_len: int | None = None, fan_in: int | None = None) -> int:
    """Sort ``n`` records at ``src``; return the offset of the sorted copy.

    Two scratch regions of the input's size are allocated on the device.
    Defaults: runs of M bytes and fan-in (M/B - 1).
    """
    cfg = dev.config
    if run_len is None:
        run_len = max(1, cfg.memory // (8 * words))
    if fan_in is None:
        fan_in = max(2, cfg.frames - 1)
    nbytes = n * words * 8
    a = dev.allocate(nbytes)
    b = dev.allocate(nbytes)
    if n == 0:
        return a
    starts = _form_runs(dev.state(), src, n, words, key, a, run_len)
    cur, other = a, b
    while len(starts) > 2:
        starts = _merge_pass(dev.state(), cur, other, starts, words, key, fan_in)
        cur, other = other, cur
    return cur


def sort_passes(n: int, words: int, memory: int, block_size: int) -> int:
    """Number of read/write passes ``external_sort`` makes (run formation included)."""
    run_len = max(1, memory // (8 * words))
    fan_in = max(2, memory // block_size - 1)
    runs = -(-n // run_len)
    passes = 1
    while runs > 1:
        runs = -(-runs // fan_in)
        passes += 1
    return passes
