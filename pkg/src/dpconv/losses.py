"""Generator and discriminator objectives, each with its gradient.

Image losses are averaged over the batch; inside one image they follow
the per-image definitions (L1 sums normalized by C*H*W).  Gradient
helpers return d(loss)/d(input) with the same shape as the input.
"""
from dataclasses import dataclass

import numpy as np

from .convspec import ConvSpec, ShapeError
from .ops import mask_update
from .tensor import as_tensor4, batch_mask


@dataclass
class LossWeights:
    w_pixel: float = 10.0
    w_style: float = 120.0
    w_adv: float = 1e-3
    w_tv: float = 1e-4

    def __post_init__(self):
        if min(self.w_pixel, self.w_style, self.w_adv, self.w_tv) < 0:
            raise ValueError("loss weights must be nonnegative")


def _same_shape(*xs):
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise ShapeError(f"shape mismatch: {shape} vs {x.shape}")


def _mask4(mask, x):
    m = batch_mask(mask, x.shape[0])
    if m.shape[1:] != x.shape[2:]:
        raise ShapeError(f"mask {m.shape[1:]} does not match image {x.shape[2:]}")
    return m[:, None].astype(np.float64)


def composite_image(out, gt, mask):
    """Ground truth at valid pixels, network output inside the holes."""
    out, gt = as_tensor4(out, "out"), as_tensor4(gt, "gt")
    _same_shape(out, gt)
    m = _mask4(mask, out)
    return m * gt + (1.0 - m) * out


# ------------------------------------------------------------------ pixel

def pixel_loss(out, gt, mask):
    out, gt = as_tensor4(out, "out"), as_tensor4(gt, "gt")
    _same_shape(out, gt)
    m = _mask4(mask, out)
    diff = np.abs(out - gt)
    n = out.shape[0]
    per_image = out[0].size
    hole = ((1.0 - m) * diff).sum()
    valid = (m * diff).sum()
    return float((hole + valid) / (per_image * n))


def pixel_loss_grad(out, gt, mask):
    m = _mask4(mask, out)
    sign = np.sign(out - gt)
    return ((1.0 - m) * sign + m * sign) / out.size


# ------------------------------------------------------------------ style

def gram(features):
    """Channel inner products; (C, H, W) -> (C, C) or (n, C, H, W) -> (n, C, C)."""
    f = np.asarray(features, dtype=np.float64)
    flat = f.reshape(f.shape[:-2] + (-1,))
    return flat @ np.swapaxes(flat, -1, -2)


def _style_terms(feats_a, feats_gt):
    """Loss and d(loss)/d(feats_a) for one image set against the ground truth."""
    total, grads = 0.0, []
    for fa, fg in zip(feats_a, feats_gt):
        n, c, h, w = fa.shape
        k = 1.0 / (c * h * w)
        diff = k * (gram(fa) - gram(fg))
        total += np.abs(diff).sum() / (c * c * n)
        s = k * np.sign(diff) / (c * c * n)
        flat = fa.reshape(n, c, -1)
        grads.append(((s + np.swapaxes(s, -1, -2)) @ flat).reshape(fa.shape))
    return total, grads


def style_loss(out, comp, gt, extractor):
    return style_loss_and_grad(out, comp, gt, extractor, need_grad=False)[0]


def style_loss_and_grad(out, comp, gt, extractor, need_grad=True):
    """Returns (loss, d/d out, d/d comp) treating ``out`` and ``comp`` as independent inputs."""
    out, comp, gt = (as_tensor4(t) for t in (out, comp, gt))
    _same_shape(out, comp, gt)
    f_gt, _ = extractor.forward(gt)
    f_out, ctx_out = extractor.forward(out)
    f_comp, ctx_comp = extractor.forward(comp)
    l_out, g_out = _style_terms(f_out, f_gt)
    l_comp, g_comp = _style_terms(f_comp, f_gt)
    if not need_grad:
        return float(l_out + l_comp), None, None
    return (float(l_out + l_comp), extractor.backward(ctx_out, g_out),
            extractor.backward(ctx_comp, g_comp))


# --------------------------------------------------------- total variation

_ONE_PIXEL = ConvSpec.square(3)


def dilated_hole_region(mask):
    """Holes grown by one pixel in all eight directions, clipped to the image."""
    holes = 1 - np.asarray(mask, dtype=np.uint8)
    return mask_update(holes, _ONE_PIXEL).astype(bool)


def _tv_pairs(region, c, h, w, n):
    r = np.broadcast_to(region if region.ndim == 3 else region[None], (n, h, w))
    horiz = (r[:, :, :-1] & r[:, :, 1:])[:, None]
    vert = (r[:, :-1, :] & r[:, 1:, :])[:, None]
    return horiz, vert


def tv_loss(comp, region):
    comp = as_tensor4(comp, "comp")
    n, c, h, w = comp.shape
    region = np.asarray(region, dtype=bool)
    if region.shape[-2:] != (h, w):
        raise ShapeError(f"region {region.shape} does not match image {comp.shape}")
    horiz, vert = _tv_pairs(region, c, h, w, n)
    dx = np.abs(comp[:, :, :, 1:] - comp[:, :, :, :-1]) * horiz
    dy = np.abs(comp[:, :, 1:, :] - comp[:, :, :-1, :]) * vert
    return float((dx.sum() + dy.sum()) / (c * h * w * n))


def tv_loss_grad(comp, region):
    n, c, h, w = comp.shape
    horiz, vert = _tv_pairs(np.asarray(region, dtype=bool), c, h, w, n)
    scale = 1.0 / (c * h * w * n)
    g = np.zeros_like(comp)
    sx = np.sign(comp[:, :, :, 1:] - comp[:, :, :, :-1]) * horiz * scale
    sy = np.sign(comp[:, :, 1:, :] - comp[:, :, :-1, :]) * vert * scale
    g[:, :, :, 1:] += sx
    g[:, :, :, :-1] -= sx
    g[:, :, 1:, :] += sy
    g[:, :, :-1, :] -= sy
    return g


# ------------------------------------------------------------ adversarial

def lsgan_loss(scores, target):
    """mean((score - target)^2); ``target`` broadcasts (scalar or per-sample)."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if t.ndim == 1:
        t = t.reshape((-1,) + (1,) * (s.ndim - 1))
    return float(np.mean((s - t) ** 2))


def lsgan_grad(scores, target):
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if t.ndim == 1:
        t = t.reshape((-1,) + (1,) * (s.ndim - 1))
    return 2.0 * (s - t) / s.size


def adv_loss_g(fake_scores):
    """Least-squares generator loss: push discriminator scores on fakes to 1."""
    return lsgan_loss(fake_scores, 1.0)


def adv_loss_d(fake_scores, real_scores):
    return lsgan_loss(fake_scores, 0.0) + lsgan_loss(real_scores, 1.0)


# ------------------------------------------------------------------ total

def total_loss(parts, weights=None):
    """Weighted sum of (pixel, style, adv, tv); returns (total, weighted breakdown)."""
    weights = weights or LossWeights()
    if isinstance(parts, dict):
        parts = (parts["pixel"], parts["style"], parts["adv"], parts["tv"])
    pixel, style, adv, tv = parts
    breakdown = {
        "pixel": weights.w_pixel * pixel,
        "style": weights.w_style * style,
        "adv": weights.w_adv * adv,
        "tv": weights.w_tv * tv,
    }
    return sum(breakdown.values()), breakdown
