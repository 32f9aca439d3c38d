# cython: language_level=3
"""Compiled mask kernels. Same API and bit-exact outputs as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.string cimport memcpy
from libc.stdint cimport uint8_t, uint32_t, int64_t, uint64_t

cnp.import_array()

BACKEND = "cython"


def rle_encode(flat):
    cdef const uint8_t[::1] m = np.ascontiguousarray(np.asarray(flat, dtype=np.uint8).ravel())
    cdef Py_ssize_t n = m.shape[0]
    if n == 0:
        return np.zeros(1, dtype=np.uint32)
    out_arr = np.empty(n + 1, dtype=np.uint32)
    cdef uint32_t[::1] out = out_arr
    cdef const uint8_t* p = &m[0]
    cdef Py_ssize_t i = 0, k = 0, stop
    cdef uint8_t prev = 0
    cdef uint32_t run = 0
    cdef uint64_t word, fill = 0
    while i < n:
        # skip whole 8-byte words that continue the current run
        while i + 8 <= n:
            memcpy(&word, p + i, 8)
            if word != fill:
                break
            run += 8
            i += 8
        stop = i + 8 if i + 8 <= n else n
        while i < stop:
            if p[i] != prev:
                out[k] = run
                k += 1
                run = 0
                prev = p[i]
                fill = prev * <uint64_t>0x0101010101010101
            run += 1
            i += 1
    out[k] = run
    k += 1
    return out_arr[:k].copy()


def rle_decode(counts, Py_ssize_t n):
    cdef const uint32_t[::1] c = np.ascontiguousarray(counts, dtype=np.uint32)
    cdef Py_ssize_t m = c.shape[0], i, j, p = 0
    cdef uint64_t total = 0
    for i in range(m):
        total += c[i]
    if total != <uint64_t>n:
        raise ValueError(f"run lengths sum to {total}, expected {n}")
    out_arr = np.zeros(n, dtype=np.uint8)
    cdef uint8_t[::1] out = out_arr
    for i in range(m):
        if i & 1:
            for j in range(p, p + <Py_ssize_t>c[i]):
                out[j] = 1
        p += c[i]
    return out_arr


def rle_area(counts):
    cdef const uint32_t[::1] c = np.ascontiguousarray(counts, dtype=np.uint32)
    cdef Py_ssize_t i
    cdef uint64_t a = 0
    for i in range(1, c.shape[0], 2):
        a += c[i]
    return int(a)


def rle_to_string(counts):
    cdef const uint32_t[::1] c = np.ascontiguousarray(counts, dtype=np.uint32)
    cdef Py_ssize_t m = c.shape[0], i, p = 0
    cdef int64_t x
    cdef int more
    cdef char ch
    buf = bytearray(m * 7 + 1)
    cdef unsigned char[::1] s = buf
    for i in range(m):
        x = <int64_t>c[i]
        if i > 2:
            x -= <int64_t>c[i - 2]
        more = 1
        while more:
            ch = <char>(x & 0x1F)
            x >>= 5
            if ch & 0x10:
                more = x != -1
            else:
                more = x != 0
            if more:
                ch |= 0x20
            s[p] = <unsigned char>(ch + 48)
            p += 1
    return bytes(buf[:p])


def rle_from_string(s):
    if isinstance(s, str):
        s = s.encode("ascii")
    cdef const unsigned char[::1] b = s
    cdef Py_ssize_t n = b.shape[0], p = 0, m = 0, k
    cdef int64_t x
    cdef int more, ch
    out_arr = np.empty(n, dtype=np.uint32)
    cdef uint32_t[::1] out = out_arr
    while p < n:
        x = 0
        k = 0
        more = 1
        while more:
            if p >= n:
                raise ValueError("truncated compressed RLE string")
            ch = <int>b[p] - 48
            if ch < 0 or ch > 63:
                raise ValueError(f"invalid byte {bytes([b[p]])!r} at offset {p} in compressed RLE")
            if 5 * k >= 63:
                raise ValueError("compressed RLE decodes to an out-of-range run length")
            x |= (<int64_t>(ch & 0x1F)) << (5 * k)
            more = ch & 0x20
            p += 1
            k += 1
            if not more and (ch & 0x10):
                x |= (<int64_t>-1) << (5 * k)
        if m > 2:
            x += <int64_t>out[m - 2]
        if x < 0 or x > 0xFFFFFFFF:
            raise ValueError("compressed RLE decodes to an out-of-range run length")
        out[m] = <uint32_t>x
        m += 1
    return out_arr[:m].copy()


cdef double _pair_iou(const uint32_t[::1] a, const uint32_t[::1] b):
    # Two-pointer walk over both run sequences accumulating the overlap of 1-runs.
    cdef Py_ssize_t ia = 0, ib = 0, na = a.shape[0], nb = b.shape[0]
    cdef uint64_t ca, cb, step, inter = 0, area_a = 0, area_b = 0
    cdef int va = 0, vb = 0
    cdef Py_ssize_t i
    for i in range(1, na, 2):
        area_a += a[i]
    for i in range(1, nb, 2):
        area_b += b[i]
    if area_a + area_b == 0:
        return 0.0
    ca = a[0] if na > 0 else 0
    cb = b[0] if nb > 0 else 0
    while ia < na and ib < nb:
        step = ca if ca < cb else cb
        if va and vb:
            inter += step
        ca -= step
        cb -= step
        while ca == 0 and ia < na:
            ia += 1
            va = 1 - va
            if ia < na:
                ca = a[ia]
        while cb == 0 and ib < nb:
            ib += 1
            vb = 1 - vb
            if ib < nb:
                cb = b[ib]
    return <double>inter / <double>(area_a + area_b - inter)


def rle_iou(dts, gts, Py_ssize_t n):
    """IoU matrix between two lists of run-length arrays over ``n`` pixels."""
    out_arr = np.zeros((len(dts), len(gts)), dtype=np.float64)
    if not dts or not gts:
        return out_arr
    cdef double[:, ::1] out = out_arr
    da = [np.ascontiguousarray(d, dtype=np.uint32) for d in dts]
    ga = [np.ascontiguousarray(g, dtype=np.uint32) for g in gts]
    for arr in da + ga:
        if int(arr.sum(dtype=np.uint64)) != n:
            raise ValueError("run lengths do not cover the mask")
    cdef Py_ssize_t i, j
    for i in range(len(da)):
        for j in range(len(ga)):
            out[i, j] = _pair_iou(da[i], ga[j])
    return out_arr


def box_iou(a, b):
    cdef const double[:, ::1] A = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    cdef const double[:, ::1] B = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    cdef Py_ssize_t na = A.shape[0], nb = B.shape[0], i, j
    out_arr = np.zeros((na, nb), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double iw, ih, inter, union
    for i in range(na):
        for j in range(nb):
            iw = min(A[i, 0] + A[i, 2], B[j, 0] + B[j, 2]) - max(A[i, 0], B[j, 0])
            ih = min(A[i, 1] + A[i, 3], B[j, 1] + B[j, 3]) - max(A[i, 1], B[j, 1])
            if iw > 0 and ih > 0:
                inter = iw * ih
            else:
                inter = 0.0
            union = A[i, 2] * A[i, 3] + B[j, 2] * B[j, 3] - inter
            if union > 0:
                out[i, j] = inter / union
    return out_arr


def rasterize(xy, Py_ssize_t h, Py_ssize_t w):
    """Even-odd fill of one closed polygon; a pixel is set iff its center is inside."""
    cdef const double[::1] p = np.ascontiguousarray(xy, dtype=np.float64)
    cdef Py_ssize_t nv = p.shape[0] // 2
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef uint8_t[:, ::1] out = out_arr
    xs_arr = np.empty(nv, dtype=np.float64)
    cdef double[::1] xs = xs_arr
    cdef Py_ssize_t j, e, m, a, b, i, lo, hi
    cdef double py, x1, y1, x2, y2, t
    for j in range(h):
        py = j + 0.5
        m = 0
        for e in range(nv):
            x1 = p[2 * e]
            y1 = p[2 * e + 1]
            x2 = p[2 * ((e + 1) % nv)]
            y2 = p[2 * ((e + 1) % nv) + 1]
            if (y1 > py) != (y2 > py):
                xs[m] = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
                m += 1
        if m == 0:
            continue
        # insertion sort; crossing counts per scanline are small
        for a in range(1, m):
            t = xs[a]
            b = a - 1
            while b >= 0 and xs[b] > t:
                xs[b + 1] = xs[b]
                b -= 1
            xs[b + 1] = t
        # pixel i is inside iff xs[2k] <= i + 0.5 < xs[2k+1]
        for a in range(0, m - 1, 2):
            t = xs[a] - 0.5
            if t >= w:
                break
            if t < 0:
                lo = 0
            else:
                lo = <Py_ssize_t>floor(t)
            while lo > 0 and (lo - 1) + 0.5 >= xs[a]:
                lo -= 1
            while lo < w and lo + 0.5 < xs[a]:
                lo += 1
            hi = lo
            while hi < w and hi + 0.5 < xs[a + 1]:
                out[j, hi] = 1
                hi += 1
    return out_arr
