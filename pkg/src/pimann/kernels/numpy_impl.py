"""Pure-numpy implementations of the hot scan kernels.

These are the fallback used when the compiled extension is unavailable. The
compiled and numpy paths must produce bit-identical results: everything is
integer arithmetic, and the bounded-heap update applies the exact same
insert/evict sequence in both backends.
"""

from __future__ import annotations

import numpy as np

COMPILED = False


def adc_scan(codes: np.ndarray, lut: np.ndarray) -> np.ndarray:
    """Sum LUT entries selected by each code row.

    codes: (P, M) uint8, lut: (M, kstar) uint16. Returns (P,) uint32.
    """
    p, m = codes.shape
    if p == 0:
        return np.zeros(0, dtype=np.uint32)
    kstar = lut.shape[1]
    flat = np.ascontiguousarray(lut, dtype=np.uint16).ravel()
    idx = codes.astype(np.int64) + (np.arange(m, dtype=np.int64) * kstar)[None, :]
    return flat[idx].astype(np.uint32).sum(axis=1, dtype=np.uint32)


def adc_scan_flat(addrs: np.ndarray, offsets: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Sum extended-LUT values at direct addresses, one row per offset span.

    addrs: flat address stream, offsets: (P+1,) int64 row boundaries with
    every row non-empty, table: (L,) uint32. Returns (P,) uint32.
    """
    nrows = offsets.shape[0] - 1
    if nrows == 0:
        return np.zeros(0, dtype=np.uint32)
    vals = table[addrs.astype(np.int64)].astype(np.uint32)
    return np.add.reduceat(vals, offsets[:-1]).astype(np.uint32)


def _key_gt(d1, s1, d2, s2):
    return d1 > d2 or (d1 == d2 and s1 > s2)


def _sift_up(hd, hs, hid, pos):
    while pos > 0:
        parent = (pos - 1) >> 1
        if _key_gt(hd[pos], hs[pos], hd[parent], hs[parent]):
            hd[pos], hd[parent] = hd[parent], hd[pos]
            hs[pos], hs[parent] = hs[parent], hs[pos]
            hid[pos], hid[parent] = hid[parent], hid[pos]
            pos = parent
        else:
            return


def _sift_down(hd, hs, hid, size):
    pos = 0
    while True:
        left = 2 * pos + 1
        if left >= size:
            return
        largest = left
        right = left + 1
        if right < size and _key_gt(hd[right], hs[right], hd[left], hs[left]):
            largest = right
        if _key_gt(hd[largest], hs[largest], hd[pos], hs[pos]):
            hd[pos], hd[largest] = hd[largest], hd[pos]
            hs[pos], hs[largest] = hs[largest], hs[pos]
            hid[pos], hid[largest] = hid[largest], hid[pos]
            pos = largest
        else:
            return


def _insert(hd, hs, hid, size, k, d, s, i):
    if size < k:
        hd[size] = d
        hs[size] = s
        hid[size] = i
        _sift_up(hd, hs, hid, size)
        return size + 1, True
    if d < hd[0]:
        hd[0] = d
        hs[0] = s
        hid[0] = i
        _sift_down(hd, hs, hid, size)
        return size, True
    return size, False


def topk_update(hd, hs, hid, size, seq0, dists, ids, k):
    """Stream (dists, ids) into a bounded max-heap keyed by (distance, seq).

    The heap arrays are updated in place. A candidate replaces the root only
    when its distance is strictly smaller; equal distances keep the incumbent.
    Returns (size, next_seq, inserted_count).
    """
    n = dists.shape[0]
    inserted = 0
    pos = 0
    size = int(size)
    while pos < n and size < k:
        size, ok = _insert(hd, hs, hid, size, k, int(dists[pos]), seq0 + pos, int(ids[pos]))
        if ok:
            inserted += 1
        pos += 1
    if pos < n:
        # Root distances only decrease, so anything >= the current root can
        # never insert later; pre-filter once and re-check survivors in order.
        cand = np.nonzero(dists[pos:] < hd[0])[0]
        for j in cand:
            at = pos + int(j)
            d = int(dists[at])
            if d < hd[0]:
                size, ok = _insert(hd, hs, hid, size, k, d, seq0 + at, int(ids[at]))
                inserted += 1
    return size, seq0 + n, inserted
