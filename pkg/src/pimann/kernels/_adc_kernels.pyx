# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled scan kernels: ADC accumulation and bounded top-k heap updates.

Mirrors pimann.kernels.numpy_impl exactly; both backends are exercised by the
test suite and must agree bit for bit.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

COMPILED = True


def adc_scan(cnp.uint8_t[:, ::1] codes not None, cnp.uint16_t[:, ::1] lut not None):
    cdef Py_ssize_t p = codes.shape[0]
    cdef Py_ssize_t m = codes.shape[1]
    cdef Py_ssize_t i, j
    cdef cnp.uint32_t acc
    out_arr = np.zeros(p, dtype=np.uint32)
    cdef cnp.uint32_t[::1] out = out_arr
    for i in range(p):
        acc = 0
        for j in range(m):
            acc += lut[j, codes[i, j]]
        out[i] = acc
    return out_arr


def adc_scan_flat(cnp.uint16_t[::1] addrs not None,
                  cnp.int64_t[::1] offsets not None,
                  cnp.uint32_t[::1] table not None):
    cdef Py_ssize_t nrows = offsets.shape[0] - 1
    cdef Py_ssize_t i, j
    cdef cnp.uint32_t acc
    out_arr = np.zeros(nrows, dtype=np.uint32)
    cdef cnp.uint32_t[::1] out = out_arr
    for i in range(nrows):
        acc = 0
        for j in range(offsets[i], offsets[i + 1]):
            acc += table[addrs[j]]
        out[i] = acc
    return out_arr


cdef inline bint _key_gt(cnp.uint32_t d1, cnp.int64_t s1,
                         cnp.uint32_t d2, cnp.int64_t s2) nogil:
    return d1 > d2 or (d1 == d2 and s1 > s2)


cdef void _sift_up(cnp.uint32_t[::1] hd, cnp.int64_t[::1] hs,
                   cnp.int64_t[::1] hid, Py_ssize_t pos) nogil:
    cdef Py_ssize_t parent
    cdef cnp.uint32_t td
    cdef cnp.int64_t ts, ti
    while pos > 0:
        parent = (pos - 1) >> 1
        if _key_gt(hd[pos], hs[pos], hd[parent], hs[parent]):
            td = hd[pos]; hd[pos] = hd[parent]; hd[parent] = td
            ts = hs[pos]; hs[pos] = hs[parent]; hs[parent] = ts
            ti = hid[pos]; hid[pos] = hid[parent]; hid[parent] = ti
            pos = parent
        else:
            return


cdef void _sift_down(cnp.uint32_t[::1] hd, cnp.int64_t[::1] hs,
                     cnp.int64_t[::1] hid, Py_ssize_t size) nogil:
    cdef Py_ssize_t pos = 0
    cdef Py_ssize_t left, right, largest
    cdef cnp.uint32_t td
    cdef cnp.int64_t ts, ti
    while True:
        left = 2 * pos + 1
        if left >= size:
            return
        largest = left
        right = left + 1
        if right < size and _key_gt(hd[right], hs[right], hd[left], hs[left]):
            largest = right
        if _key_gt(hd[largest], hs[largest], hd[pos], hs[pos]):
            td = hd[pos]; hd[pos] = hd[largest]; hd[largest] = td
            ts = hs[pos]; hs[pos] = hs[largest]; hs[largest] = ts
            ti = hid[pos]; hid[pos] = hid[largest]; hid[largest] = ti
            pos = largest
        else:
            return


def topk_update(cnp.uint32_t[::1] hd not None,
                cnp.int64_t[::1] hs not None,
                cnp.int64_t[::1] hid not None,
                Py_ssize_t size,
                cnp.int64_t seq0,
                cnp.uint32_t[::1] dists not None,
                cnp.int64_t[::1] ids not None,
                Py_ssize_t k):
    cdef Py_ssize_t n = dists.shape[0]
    cdef Py_ssize_t pos
    cdef cnp.uint32_t d
    cdef long inserted = 0
    for pos in range(n):
        d = dists[pos]
        if size < k:
            hd[size] = d
            hs[size] = seq0 + pos
            hid[size] = ids[pos]
            _sift_up(hd, hs, hid, size)
            size += 1
            inserted += 1
        elif d < hd[0]:
            hd[0] = d
            hs[0] = seq0 + pos
            hid[0] = ids[pos]
            _sift_down(hd, hs, hid, size)
            inserted += 1
    return size, seq0 + n, inserted
