"""Compiled inner loops for graph construction.

No fastmath anywhere. ``pair_dots`` fixes its float64 accumulation order
(eight interleaved partial sums over coordinates ``t % 8``, combined as a
balanced tree), so an edge weight depends only on its two vectors.
"""

import numba
import numpy as np


@numba.njit(nogil=True, cache=True)
def pair_dots(data, rows, cols):
    m = rows.shape[0]
    d = data.shape[1]
    d8 = d - d % 8
    out = np.empty(m, dtype=np.float32)
    for k in range(m):
        x = data[rows[k]]
        y = data[cols[k]]
        s0 = s1 = s2 = s3 = s4 = s5 = s6 = s7 = 0.0
        for t in range(0, d8, 8):
            s0 += np.float64(x[t]) * np.float64(y[t])
            s1 += np.float64(x[t + 1]) * np.float64(y[t + 1])
            s2 += np.float64(x[t + 2]) * np.float64(y[t + 2])
            s3 += np.float64(x[t + 3]) * np.float64(y[t + 3])
            s4 += np.float64(x[t + 4]) * np.float64(y[t + 4])
            s5 += np.float64(x[t + 5]) * np.float64(y[t + 5])
            s6 += np.float64(x[t + 6]) * np.float64(y[t + 6])
            s7 += np.float64(x[t + 7]) * np.float64(y[t + 7])
        for t in range(d8, d):
            s0 += np.float64(x[t]) * np.float64(y[t])
        out[k] = np.float32(((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7)))
    return out


@numba.njit(nogil=True, cache=True)
def _scan_mask(mask, total, row_off, col_off, ids):
    rows, m = mask.shape
    keys = np.empty(total, np.uint64)
    j = 0
    for r in range(rows):
        gr = r + row_off
        c0 = max(0, gr - col_off + 1)
        row = mask[r]
        # Hits are sparse: skip eight mask bytes at a time when all clear.
        lo = c0 + (-c0) % 8
        lo = min(lo, m)
        nw = (m - lo) // 8
        for c in range(c0, lo):
            if row[c]:
                keys[j] = (np.uint64(ids[gr]) << np.uint64(32)) | np.uint64(ids[c + col_off])
                j += 1
        words = row[lo:lo + nw * 8].view(np.uint64)
        for w in range(nw):
            if words[w] != 0:
                base = lo + w * 8
                for c in range(base, base + 8):
                    if row[c]:
                        keys[j] = (np.uint64(ids[gr]) << np.uint64(32)) | np.uint64(ids[c + col_off])
                        j += 1
        for c in range(lo + nw * 8, m):
            if row[c]:
                keys[j] = (np.uint64(ids[gr]) << np.uint64(32)) | np.uint64(ids[c + col_off])
                j += 1
    return keys[:j]


def scan_upper(g, row_off, col_off, cutoff, ids):
    """Pair keys ``ids[r] << 32 | ids[c]`` for entries of ``g`` that are
    ``>= cutoff`` and strictly above the diagonal.

    Entry ``g[r, c]`` stands for local items ``r + row_off`` and
    ``c + col_off``; ``ids`` maps local to global ids and must be increasing.
    """
    mask = np.ascontiguousarray(g >= cutoff)
    return _scan_mask(mask, np.count_nonzero(mask), row_off, col_off, ids)
