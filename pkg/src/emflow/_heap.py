"""Array-backed binary min-heap for compiled code, ordered by (key, val)."""
import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _less(keys, vals, i, j):
    return keys[i] < keys[j] or (keys[i] == keys[j] and vals[i] < vals[j])


@numba.njit(cache=True)
def heap_push(keys, vals, size, k, v):
    i = size
    keys[i] = k
    vals[i] = v
    while i > 0:
        p = (i - 1) >> 1
        if _less(keys, vals, i, p):
            keys[i], keys[p] = keys[p], keys[i]
            vals[i], vals[p] = vals[p], vals[i]
            i = p
        else:
            break
    return size + 1


@numba.njit(cache=True)
def heap_pop(keys, vals, size):
    k = keys[0]
    v = vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        left = 2 * i + 1
        if left >= size:
            break
        m = left
        if left + 1 < size and _less(keys, vals, left + 1, left):
            m = left + 1
        if _less(keys, vals, m, i):
            keys[i], keys[m] = keys[m], keys[i]
            vals[i], vals[m] = vals[m], vals[i]
            i = m
        else:
            break
    return k, v, size


def grow(keys, vals):
    return (np.concatenate([keys, np.empty_like(keys)]),
            np.concatenate([vals, np.empty_like(vals)]))
