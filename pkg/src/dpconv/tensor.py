"""Dense 4-D tensors (n, c, h, w) and binary masks as plain float64 / uint8 arrays.

Masks use 1 for a valid pixel and 0 for a hole.  A mask is either one
(h, w) grid shared by the whole batch or a per-sample (n, h, w) stack.
"""
import numpy as np

from . import kernels
from .convspec import ConvSpec, ShapeError


def as_tensor4(x, name="tensor"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (n, c, h, w), got shape {x.shape}")
    return x


def as_mask(mask, name="mask"):
    m = np.asarray(mask)
    if m.ndim not in (2, 3):
        raise ShapeError(f"{name} must be (h, w) or (n, h, w), got shape {m.shape}")
    if m.dtype != np.uint8:
        if not np.all((m == 0) | (m == 1)):
            raise ValueError(f"{name} must contain only 0 and 1")
        m = m.astype(np.uint8)
    elif m.size and m.max() > 1:
        raise ValueError(f"{name} must contain only 0 and 1")
    return m


def mask_ratio(mask):
    """Fraction of hole (zero) pixels."""
    m = np.asarray(mask)
    return float(np.count_nonzero(m == 0)) / m.size


def batch_mask(mask, n):
    """View a mask as (n, h, w)."""
    mask = as_mask(mask)
    if mask.ndim == 2:
        return np.broadcast_to(mask, (n,) + mask.shape)
    if mask.shape[0] != n:
        raise ShapeError(f"mask batch {mask.shape[0]} does not match tensor batch {n}")
    return mask


def pad2d(x, padding):
    if padding == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(padding, padding), (padding, padding)]
    return np.pad(x, widths)


def _output_hw(h, w, kh, kw, stride, padding, dilation):
    eh, ew = dilation * (kh - 1) + 1, dilation * (kw - 1) + 1
    hp, wp = h + 2 * padding, w + 2 * padding
    if eh > hp or ew > wp:
        raise ShapeError(f"dilated kernel extent {eh}x{ew} exceeds padded input {hp}x{wp}")
    ho, wo = (hp - eh) // stride + 1, (wp - ew) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("convolution would produce an empty output")
    return ho, wo


def _check_conv_args(x, w, b):
    x = as_tensor4(x, "input")
    w = as_tensor4(w, "weights")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"weights expect {w.shape[1]} input channels, input has {x.shape[1]}")
    if b is not None:
        b = np.asarray(b, dtype=np.float64).reshape(-1)
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape[0]} != output channels {w.shape[0]}")
    return x, w, b


def conv2d_direct(x, w, b, spec: ConvSpec):
    """Reference dilated cross-correlation by direct summation.

    Deliberately slow; it is the oracle the fast paths are checked against.
    """
    x, w, b = _check_conv_args(x, w, b)
    if w.shape[2:] != spec.kernel_size:
        raise ShapeError(f"kernel {w.shape[2:]} does not match spec kernel {spec.kernel_size}")
    n, c, h, wd = x.shape
    kh, kw = spec.kernel_size
    s, p, d = spec.stride, spec.padding, spec.dilation
    ho, wo = _output_hw(h, wd, kh, kw, s, p, d)
    xp = pad2d(x, p)
    out = np.zeros((n, w.shape[0], ho, wo))
    for bi in range(n):
        for co in range(w.shape[0]):
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            for ci in range(c):
                                acc += xp[bi, ci, s * y + d * i, s * xx + d * j] * w[co, ci, i, j]
                    out[bi, co, y, xx] = acc + (0.0 if b is None else b[co])
    return out


def conv2d(x, w, b=None, stride=1, padding=0, dilation=1, return_cols=False):
    """Dilated cross-correlation through patch extraction and one GEMM."""
    x, w, b = _check_conv_args(x, w, b)
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = _output_hw(h, wd, kh, kw, stride, padding, dilation)
    cols = kernels.im2col(pad2d(x, padding), kh, kw, stride, dilation, ho, wo)
    out = (w.reshape(co, -1) @ cols).reshape(co, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b[None, :, None, None]
    out = np.ascontiguousarray(out)
    return (out, cols) if return_cols else out


def conv2d_backward(dy, x, w, stride=1, padding=0, dilation=1, cols=None, need_input=True):
    """Gradients of ``conv2d`` w.r.t. input, weights and bias."""
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = dy.shape[2:]
    if cols is None:
        cols = kernels.im2col(pad2d(x, padding), kh, kw, stride, dilation, ho, wo)
    dy_mat = dy.transpose(1, 0, 2, 3).reshape(co, -1)
    dw = (dy_mat @ cols.T).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    if not need_input:
        return None, dw, db
    dcols = w.reshape(co, -1).T @ dy_mat
    hp, wp = h + 2 * padding, wd + 2 * padding
    dxp = kernels.col2im(dcols, n, c, hp, wp, kh, kw, stride, dilation, ho, wo)
    if padding:
        dxp = dxp[:, :, padding:padding + h, padding:padding + wd]
    return np.ascontiguousarray(dxp), dw, db


def upsample_nearest(x, factor):
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    x = as_tensor4(x)
    if factor == 1:
        return x.copy()
    return x.repeat(factor, axis=2).repeat(factor, axis=3)


def upsample_nearest_backward(dy, factor):
    if factor == 1:
        return dy
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))


def concat_channels(a, b):
    a, b = as_tensor4(a, "a"), as_tensor4(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}: n/h/w differ")
    return np.concatenate([a, b], axis=1)


def split_channels(x, c_first):
    """Inverse of ``concat_channels``."""
    return x[:, :c_first], x[:, c_first:]
