"""Open-addressing hash table from packed block coordinates to storage slots.

Keys are three signed 21-bit block coordinates packed into one int64. The table
lives in two flat numpy arrays so that numba kernels can probe it directly.
"""

import numpy as np
import numba as nb

EMPTY = np.int64(-1)
COORD_BITS = 21
COORD_OFFSET = 1 << (COORD_BITS - 1)
COORD_MIN = -COORD_OFFSET
COORD_MAX = COORD_OFFSET - 1
_MASK21 = (1 << COORD_BITS) - 1


@nb.njit(cache=True, inline="always")
def pack(x, y, z):
    return (
        ((np.int64(x) + COORD_OFFSET) << 42)
        | ((np.int64(y) + COORD_OFFSET) << 21)
        | (np.int64(z) + COORD_OFFSET)
    )


@nb.njit(cache=True, inline="always")
def _mix(key):
    # splitmix64 finalizer
    h = np.uint64(key)
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    h = h ^ (h >> np.uint64(31))
    return h


@nb.njit(cache=True)
def lookup(keys, vals, key):
    mask = np.uint64(keys.shape[0] - 1)
    i = _mix(key) & mask
    while True:
        k = keys[i]
        if k == key:
            return vals[i]
        if k == EMPTY:
            return -1
        i = (i + np.uint64(1)) & mask


@nb.njit(cache=True)
def lookup_xyz(keys, vals, x, y, z):
    return lookup(keys, vals, pack(x, y, z))


@nb.njit(cache=True)
def insert(keys, vals, key, val):
    """Insert or overwrite; the caller keeps the load factor below one half."""
    mask = np.uint64(keys.shape[0] - 1)
    i = _mix(key) & mask
    while True:
        k = keys[i]
        if k == key or k == EMPTY:
            keys[i] = key
            vals[i] = val
            return
        i = (i + np.uint64(1)) & mask


@nb.njit(cache=True)
def lookup_many(keys, vals, coords):
    out = np.empty(coords.shape[0], np.int64)
    for i in range(coords.shape[0]):
        out[i] = lookup(keys, vals, pack(coords[i, 0], coords[i, 1], coords[i, 2]))
    return out


@nb.njit(cache=True)
def insert_many(keys, vals, coords, first_slot):
    for i in range(coords.shape[0]):
        insert(keys, vals, pack(coords[i, 0], coords[i, 1], coords[i, 2]), np.int64(first_slot + i))


@nb.njit(cache=True)
def rehash(old_keys, old_vals, new_keys, new_vals):
    for i in range(old_keys.shape[0]):
        if old_keys[i] != EMPTY:
            insert(new_keys, new_vals, old_keys[i], old_vals[i])


@nb.njit(cache=True)
def face_neighbors(keys, vals, coords):
    """Slots of the six face neighbours, ordered -x, +x, -y, +y, -z, +z; -1 if absent."""
    n = coords.shape[0]
    out = np.empty((n, 6), np.int64)
    for s in range(n):
        x, y, z = coords[s, 0], coords[s, 1], coords[s, 2]
        out[s, 0] = lookup(keys, vals, pack(x - 1, y, z))
        out[s, 1] = lookup(keys, vals, pack(x + 1, y, z))
        out[s, 2] = lookup(keys, vals, pack(x, y - 1, z))
        out[s, 3] = lookup(keys, vals, pack(x, y + 1, z))
        out[s, 4] = lookup(keys, vals, pack(x, y, z - 1))
        out[s, 5] = lookup(keys, vals, pack(x, y, z + 1))
    return out


class BlockHash:
    """Growable map from block coordinates to integer slots."""

    def __init__(self, capacity=64):
        cap = 16
        while cap < 2 * capacity:
            cap *= 2
        self.keys = np.full(cap, EMPTY, np.int64)
        self.vals = np.full(cap, -1, np.int64)
        self.size = 0

    def get(self, x, y, z):
        return int(lookup_xyz(self.keys, self.vals, x, y, z))

    def get_many(self, coords):
        coords = np.ascontiguousarray(coords, dtype=np.int64).reshape(-1, 3)
        return lookup_many(self.keys, self.vals, coords)

    def put(self, x, y, z, slot):
        if 2 * (self.size + 1) > self.keys.shape[0]:
            self._grow()
        insert(self.keys, self.vals, pack(x, y, z), np.int64(slot))
        self.size += 1

    def put_many(self, coords, first_slot):
        """Insert distinct, absent ``coords`` at consecutive slots."""
        n = coords.shape[0]
        while 2 * (self.size + n) > self.keys.shape[0]:
            self._grow()
        insert_many(self.keys, self.vals, np.ascontiguousarray(coords, dtype=np.int64), first_slot)
        self.size += n

    def _grow(self):
        keys = np.full(self.keys.shape[0] * 2, EMPTY, np.int64)
        vals = np.full(self.keys.shape[0] * 2, -1, np.int64)
        rehash(self.keys, self.vals, keys, vals)
        self.keys, self.vals = keys, vals
