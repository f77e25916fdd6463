"""Hot inner loops: patch extraction, its adjoint, and dilated window counts.

Every kernel exists twice: a numba version (``*_numba``) and a vectorized
numpy version (``*_numpy``).  The public names dispatch to the numba version
unless ``DPCONV_NO_NUMBA`` is set; im2col is the exception (numpy wins).  Both are always importable so they can be
tested against each other.

Shared conventions:
  * ``xpad`` is an already zero-padded (n, c, hp, wp) float64 array.
  * ``cols`` has shape (c * kh * kw, n * ho * wo); rows are ordered
    (channel, tap row, tap column), columns (batch, out row, out column).
"""
import numpy as np

from ._accel import HAS_NUMBA, njit, prange


def _span(start, count, step):
    return slice(start, start + step * (count - 1) + 1, step)


# ---------------------------------------------------------------- numpy path

def im2col_numpy(xpad, kh, kw, stride, dilation, ho, wo):
    n, c = xpad.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xpad.dtype)
    for i in range(kh):
        rows = _span(i * dilation, ho, stride)
        for j in range(kw):
            patch = xpad[:, :, rows, _span(j * dilation, wo, stride)]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def col2im_numpy(cols, n, c, hp, wp, kh, kw, stride, dilation, ho, wo):
    cols = cols.reshape(c, kh, kw, n, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        rows = _span(i * dilation, ho, stride)
        for j in range(kw):
            out[:, :, rows, _span(j * dilation, wo, stride)] += cols[:, i, j].transpose(1, 0, 2, 3)
    return out


def window_sum_numpy(mpad, kh, kw, stride, dilation, ho, wo):
    """Count nonzero taps of a dilated kh x kw window, separably."""
    mpad = mpad.astype(np.int32, copy=False)
    across = np.zeros(mpad.shape[:2] + (wo,), dtype=np.int32)
    for j in range(kw):
        across += mpad[:, :, _span(j * dilation, wo, stride)]
    total = np.zeros((mpad.shape[0], ho, wo), dtype=np.int32)
    for i in range(kh):
        total += across[:, _span(i * dilation, ho, stride), :]
    return total


# ---------------------------------------------------------------- numba path

@njit(parallel=True)
def _im2col_nb(xpad, kh, kw, stride, dilation, ho, wo):
    n, c = xpad.shape[0], xpad.shape[1]
    cols = np.empty((c * kh * kw, n * ho * wo), dtype=xpad.dtype)
    for ch in prange(c):
        for i in range(kh):
            for j in range(kw):
                r = (ch * kh + i) * kw + j
                jj = j * dilation
                for b in range(n):
                    base = b * ho * wo
                    for y in range(ho):
                        yy = y * stride + i * dilation
                        off = base + y * wo
                        if stride == 1:
                            cols[r, off:off + wo] = xpad[b, ch, yy, jj:jj + wo]
                        else:
                            for x in range(wo):
                                cols[r, off + x] = xpad[b, ch, yy, x * stride + jj]
    return cols


@njit(parallel=True)
def _col2im_nb(cols, n, c, hp, wp, kh, kw, stride, dilation, ho, wo):
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    # parallel over channels: no two threads touch the same output plane
    for ch in prange(c):
        for i in range(kh):
            for j in range(kw):
                r = (ch * kh + i) * kw + j
                jj = j * dilation
                for b in range(n):
                    base = b * ho * wo
                    for y in range(ho):
                        yy = y * stride + i * dilation
                        off = base + y * wo
                        if stride == 1:
                            out[b, ch, yy, jj:jj + wo] += cols[r, off:off + wo]
                        else:
                            for x in range(wo):
                                out[b, ch, yy, x * stride + jj] += cols[r, off + x]
    return out


@njit
def _window_sum_nb(mpad, kh, kw, stride, dilation, ho, wo):
    n, hp = mpad.shape[0], mpad.shape[1]
    total = np.zeros((n, ho, wo), dtype=np.int32)
    across = np.empty((hp, wo), dtype=np.int32)
    for b in range(n):
        for y in range(hp):
            arow = across[y]
            arow[:] = 0
            for j in range(kw):
                off = j * dilation
                if stride == 1:
                    # contiguous slice lets LLVM vectorize the widening add
                    seg = mpad[b, y, off:off + wo]
                    for x in range(wo):
                        arow[x] += seg[x]
                else:
                    for x in range(wo):
                        arow[x] += mpad[b, y, x * stride + off]
        for y in range(ho):
            trow = total[b, y]
            for i in range(kh):
                arow = across[y * stride + i * dilation]
                for x in range(wo):
                    trow[x] += arow[x]
    return total


@njit
def _propagate_nb(mask, layers, cap):
    coverage = np.zeros(cap)
    m = mask.copy()
    for k in range(cap):
        kh, kw, stride, dilation, pad, threshold = layers[k]
        h, w = m.shape
        mp = np.zeros((1, h + 2 * pad, w + 2 * pad), dtype=np.uint8)
        mp[0, pad:pad + h, pad:pad + w] = m
        ho = (h + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
        wo = (w + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
        counts = _window_sum_nb(mp, kh, kw, stride, dilation, ho, wo)[0]
        m = np.empty((ho, wo), dtype=np.uint8)
        valid = 0
        for y in range(ho):
            for x in range(wo):
                v = 1 if counts[y, x] >= threshold else 0
                m[y, x] = v
                valid += v
        coverage[k] = valid / (ho * wo)
        if valid == ho * wo:
            return k + 1, coverage[:k + 1]
    return -1, coverage


def im2col_numba(xpad, kh, kw, stride, dilation, ho, wo):
    return _im2col_nb(np.ascontiguousarray(xpad), kh, kw, stride, dilation, ho, wo)


def col2im_numba(cols, n, c, hp, wp, kh, kw, stride, dilation, ho, wo):
    return _col2im_nb(np.ascontiguousarray(cols), n, c, hp, wp, kh, kw, stride, dilation, ho, wo)


def window_sum_numba(mpad, kh, kw, stride, dilation, ho, wo):
    mpad = np.ascontiguousarray(mpad, dtype=np.uint8)
    return _window_sum_nb(mpad, kh, kw, stride, dilation, ho, wo)


def propagate_numpy(mask, layers, cap):
    """Iterate mask updates; ``layers`` rows are (kh, kw, stride, dilation, pad, threshold).

    Returns (first 1-based layer with a fully valid mask or -1, coverages).
    """
    m = mask
    coverage = []
    for k in range(cap):
        kh, kw, stride, dilation, pad, threshold = (int(v) for v in layers[k])
        h, w = m.shape
        ho = (h + 2 * pad - dilation * (kh - 1) - 1) // stride + 1
        wo = (w + 2 * pad - dilation * (kw - 1) - 1) // stride + 1
        mp = np.pad(m, pad)[None]
        m = (window_sum_numpy(mp, kh, kw, stride, dilation, ho, wo)[0] >= threshold).astype(np.uint8)
        coverage.append(np.count_nonzero(m) / m.size)
        if coverage[-1] == 1.0:
            return k + 1, np.array(coverage)
    return -1, np.array(coverage)


def propagate_numba(mask, layers, cap):
    return _propagate_nb(np.ascontiguousarray(mask, dtype=np.uint8),
                         np.ascontiguousarray(layers, dtype=np.int64), cap)


# im2col is a pure memory copy; numpy's per-tap block copies beat the
# compiled row loop (see benchmarks/bench_kernels.py), so it stays on numpy.
im2col = im2col_numpy
if HAS_NUMBA:
    col2im, window_sum = col2im_numba, window_sum_numba
    propagate_masks = propagate_numba
else:
    col2im, window_sum = col2im_numpy, window_sum_numpy
    propagate_masks = propagate_numpy
