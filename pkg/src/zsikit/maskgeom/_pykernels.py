"""Pure-Python/numpy mask kernels.

Reference implementation of every hot kernel; ``_ckernels`` must agree with
these outputs exactly. Masks are passed as flat column-major ``uint8``
buffers and run-lengths as ``uint32`` arrays.
"""
import numpy as np

BACKEND = "python"


def rle_encode(flat):
    flat = np.asarray(flat, dtype=np.uint8).ravel()
    n = flat.size
    if n == 0:
        return np.zeros(1, dtype=np.uint32)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [n]))
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    return runs.astype(np.uint32)


def rle_decode(counts, n):
    counts = np.asarray(counts, dtype=np.uint32)
    total = int(counts.sum(dtype=np.uint64))
    if total != n:
        raise ValueError(f"run lengths sum to {total}, expected {n}")
    values = (np.arange(counts.size) % 2).astype(np.uint8)
    return np.repeat(values, counts.astype(np.int64))


def rle_area(counts):
    counts = np.asarray(counts, dtype=np.uint32)
    return int(counts[1::2].sum(dtype=np.uint64))


def rle_to_string(counts):
    out = bytearray()
    counts = [int(c) for c in counts]
    for i, c in enumerate(counts):
        x = c - counts[i - 2] if i > 2 else c
        more = True
        while more:
            ch = x & 0x1F
            x >>= 5
            more = (x != -1) if (ch & 0x10) else (x != 0)
            if more:
                ch |= 0x20
            out.append(ch + 48)
    return bytes(out)


def rle_from_string(s):
    if isinstance(s, str):
        s = s.encode("ascii")
    counts = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise ValueError("truncated compressed RLE string")
            ch = s[p] - 48
            if ch < 0 or ch > 63:
                raise ValueError(f"invalid byte {s[p]!r} at offset {p} in compressed RLE")
            if 5 * k >= 63:
                raise ValueError("compressed RLE decodes to an out-of-range run length")
            x |= (ch & 0x1F) << (5 * k)
            more = bool(ch & 0x20)
            p += 1
            k += 1
            if not more and (ch & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        if x < 0 or x > 0xFFFFFFFF:
            raise ValueError("compressed RLE decodes to an out-of-range run length")
        counts.append(x)
    return np.asarray(counts, dtype=np.uint32)


def rle_iou(dts, gts, n):
    """IoU matrix between two lists of run-length arrays over ``n`` pixels."""
    out = np.zeros((len(dts), len(gts)), dtype=np.float64)
    if not dts or not gts:
        return out
    a = np.stack([rle_decode(c, n) for c in dts]).astype(np.float64)
    b = np.stack([rle_decode(c, n) for c in gts]).astype(np.float64)
    inter = a @ b.T
    union = a.sum(1)[:, None] + b.sum(1)[None, :] - inter
    np.divide(inter, union, out=out, where=union > 0)
    return out


def box_iou(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax2 = a[:, 0] + a[:, 2]
    ay2 = a[:, 1] + a[:, 3]
    bx2 = b[:, 0] + b[:, 2]
    by2 = b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def rasterize(xy, h, w):
    """Even-odd fill of one closed polygon; a pixel is set iff its center is inside."""
    xy = np.asarray(xy, dtype=np.float64)
    xs = xy[0::2]
    ys = xy[1::2]
    x1, y1 = xs, ys
    x2, y2 = np.roll(xs, -1), np.roll(ys, -1)
    out = np.zeros((h, w), dtype=np.uint8)
    px = np.arange(w, dtype=np.float64) + 0.5
    for j in range(h):
        py = j + 0.5
        crosses = (y1 > py) != (y2 > py)
        if not crosses.any():
            continue
        cx1, cy1, cx2, cy2 = x1[crosses], y1[crosses], x2[crosses], y2[crosses]
        xint = cx1 + (py - cy1) * (cx2 - cx1) / (cy2 - cy1)
        inside = (xint[None, :] > px[:, None]).sum(axis=1) % 2
        out[j] = inside
    return out
