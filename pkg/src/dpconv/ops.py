"""Dilated partial convolution: forward pass, mask update and gradients.

For every output position the dilated window over the mask gives a count
of valid taps.  The convolution of the masked input is rescaled by
taps / count, so a window that only sees a few valid pixels is not
dimmed; windows without any valid pixel output 0 and skip the bias.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .convspec import ConvSpec, ShapeError
from .tensor import as_mask, as_tensor4, conv2d, conv2d_backward, pad2d


@dataclass
class WindowStats:
    mask_sum: np.ndarray  # int32, valid-tap count per output position
    scale: np.ndarray     # float64, taps / mask_sum, or 0 where mask_sum == 0


@dataclass
class DPConvContext:
    masked_input: np.ndarray
    mask: np.ndarray
    weights: np.ndarray
    spec: ConvSpec
    stats: WindowStats
    cols: np.ndarray


def _as_batch(mask):
    m = as_mask(mask)
    return (m[None], True) if m.ndim == 2 else (m, False)


def window_mask_sum(mask, spec: ConvSpec):
    """Number of valid taps under each dilated window; padding counts as hole."""
    m, single = _as_batch(mask)
    ho, wo = spec.output_size(*m.shape[1:])
    kh, kw = spec.kernel_size
    counts = kernels.window_sum(pad2d(m, spec.padding), kh, kw, spec.stride, spec.dilation, ho, wo)
    return counts[0] if single else counts


def mask_update(mask, spec: ConvSpec):
    return (window_mask_sum(mask, spec) >= spec.mask_threshold).astype(np.uint8)


def window_stats(mask, spec: ConvSpec):
    msum = window_mask_sum(mask, spec)
    scale = np.zeros(msum.shape)
    np.divide(spec.taps, msum, out=scale, where=msum > 0)
    return WindowStats(msum, scale)


def dpconv_forward(x, mask, weights, bias, spec: ConvSpec, return_context=False):
    """Returns ``(output, new_mask, stats)`` (plus the backward context if asked).

    The same 2-D mask multiplies every input channel.  ``mask`` may also be
    a per-sample (n, h, w) stack.
    """
    x = as_tensor4(x, "input")
    weights = as_tensor4(weights, "weights")
    m, single = _as_batch(mask)
    if m.shape[1:] != x.shape[2:]:
        raise ShapeError(f"mask {m.shape[1:]} does not match input {x.shape[2:]}")
    if not single and m.shape[0] != x.shape[0]:
        raise ShapeError(f"mask batch {m.shape[0]} does not match input batch {x.shape[0]}")
    if weights.shape[2:] != spec.kernel_size or weights.shape[1] != x.shape[1]:
        raise ShapeError(f"weights {weights.shape} incompatible with input {x.shape} and "
                         f"kernel {spec.kernel_size}")

    stats = window_stats(m, spec)
    valid = stats.mask_sum > 0
    xm = x * m[:, None]
    raw, cols = conv2d(xm, weights, None, spec.stride, spec.padding, spec.dilation,
                       return_cols=True)
    out = raw * stats.scale[:, None]
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    out = np.where(valid[:, None], out, 0.0)
    new_mask = (stats.mask_sum >= spec.mask_threshold).astype(np.uint8)

    if single:
        new_mask = new_mask[0]
        user_stats = WindowStats(stats.mask_sum[0], stats.scale[0])
    else:
        user_stats = stats
    if not return_context:
        return out, new_mask, user_stats
    ctx = DPConvContext(xm, m, weights, spec, stats, cols)
    return out, new_mask, user_stats, ctx


def dpconv_backward(grad_output, ctx: DPConvContext, need_input=True):
    """Gradients w.r.t. input, weights and bias.

    The mask, the tap counts and the rescaling factor are treated as
    constants of the forward pass.
    """
    dy = np.asarray(grad_output, dtype=np.float64)
    scale = ctx.stats.scale
    expected = (ctx.masked_input.shape[0], ctx.weights.shape[0]) + scale.shape[1:]
    if dy.shape != expected:
        raise ShapeError(f"grad_output {dy.shape} does not match forward output {expected}")
    spec = ctx.spec
    g = dy * scale[:, None]
    dxm, dw, _ = conv2d_backward(g, ctx.masked_input, ctx.weights, spec.stride, spec.padding,
                                 spec.dilation, cols=ctx.cols, need_input=need_input)
    db = (dy * (ctx.stats.mask_sum > 0)[:, None]).sum(axis=(0, 2, 3))
    dx = dxm * ctx.mask[:, None] if need_input else None
    return dx, dw, db
