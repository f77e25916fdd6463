"""Central finite-difference checks of every hand-written backward pass."""
import numpy as np

from . import losses, ops
from .convspec import ConvSpec
from .features import ConvExtractor
from .nn import layers

TOLERANCE = 1e-4


def numerical_grad(f, x, eps=1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (mutated and restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic, numeric, floor=1e-3, atol=1e-8, reference=None):
    """Largest entrywise |a - n| / max(|a|, |n|, floor * R, atol), R = max|reference|.

    The floors keep entries that are zero up to rounding (1e-11 against an
    exact 0) from dominating.  ``atol`` sits above the resolution of a
    central difference with eps=1e-5 on O(1) objectives (about 1e-10).
    ``reference`` defaults to ``numeric``; pass the largest gradient of the
    whole operator when this parameter's true gradient is identically zero.
    """
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    if not a.size:
        return 0.0
    ref = n if reference is None else np.asarray(reference)
    scale = max(floor * float(np.abs(ref).max()), atol)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), scale)
    return float(np.max(np.abs(a - n) / denom))


def random_mask(rng, shape, hole_ratio):
    return (rng.random(shape) >= hole_ratio).astype(np.uint8)


def _keep_off_kinks(rng, shape, scale=1.0):
    # values far from 0 so |.| and leaky-relu kinks are not crossed by eps
    v = rng.uniform(0.1, 1.0, size=shape) * scale
    return v * rng.choice([-1.0, 1.0], size=shape)


# ----------------------------------------------------------------- checks

def check_dpconv(rng):
    n = int(rng.integers(1, 3))
    c_in, c_out = (int(v) for v in rng.integers(1, 4, size=2))
    half = int(rng.integers(0, 2))
    dilation = int(rng.choice([1, 2, 3]))
    stride = int(rng.choice([1, 2]))
    spec = ConvSpec(half, half, c_in, c_out, dilation, stride, padding=dilation * half)
    size = int(rng.integers(2 * half * dilation + 2, 2 * half * dilation + 6))
    x = rng.normal(size=(n, c_in, size, size))
    mask = random_mask(rng, (size, size), rng.uniform(0.1, 0.6))
    w = rng.normal(size=spec.weight_shape)
    b = rng.normal(size=c_out)
    out, _, _, ctx = ops.dpconv_forward(x, mask, w, b, spec, return_context=True)
    proj = rng.normal(size=out.shape)
    dx, dw, db = ops.dpconv_backward(proj, ctx)

    def f():
        return float((ops.dpconv_forward(x, mask, w, b, spec)[0] * proj).sum())

    return max(rel_error(dx, numerical_grad(f, x)), rel_error(dw, numerical_grad(f, w)),
               rel_error(db, numerical_grad(f, b)))


def check_attention(rng):
    c = int(rng.integers(2, 9))
    x = rng.normal(size=(int(rng.integers(1, 3)), c, int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    params = layers.init_attention_params(c, rng, gamma=rng.uniform(0.3, 1.5))
    for k in ("bq", "bk", "bv"):
        params[k] = rng.normal(0, 0.1, size=params[k].shape)
    out, ctx = layers.self_attention_forward(x, params)
    proj = rng.normal(size=out.shape)
    dx, grads = layers.self_attention_backward(proj, ctx, params)

    def f():
        return float((layers.self_attention_forward(x, params)[0] * proj).sum())

    pairs = [(dx, numerical_grad(f, x))] + [(grads[k], numerical_grad(f, params[k])) for k in params]
    # the key bias shifts every logit of a row equally, so its gradient is exactly zero
    biggest = max(float(np.abs(num).max()) for _, num in pairs)
    return max(rel_error(a, num, reference=biggest) for a, num in pairs)


def _image_pair(rng, min_size=2, max_size=7):
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 4))
    h, w = (int(v) for v in rng.integers(min_size, max_size, size=2))
    gt = rng.uniform(-1, 1, size=(n, c, h, w))
    out = gt + _keep_off_kinks(rng, gt.shape, 0.5)
    mask = random_mask(rng, (n, h, w), rng.uniform(0.1, 0.6))
    return out, gt, mask


def check_pixel(rng):
    out, gt, mask = _image_pair(rng)
    g = losses.pixel_loss_grad(out, gt, mask)
    return rel_error(g, numerical_grad(lambda: losses.pixel_loss(out, gt, mask), out))


def check_tv(rng):
    comp, _, mask = _image_pair(rng)
    # neighbouring values differ by at least 0.1 so eps never crosses |.|
    comp = np.cumsum(_keep_off_kinks(rng, comp.shape), axis=3)
    comp = comp + 7.0 * np.arange(comp.shape[2])[:, None]
    region = losses.dilated_hole_region(mask)
    g = losses.tv_loss_grad(comp, region)
    return rel_error(g, numerical_grad(lambda: losses.tv_loss(comp, region), comp))


def check_style(rng):
    n, c = int(rng.integers(1, 3)), 3
    size = int(rng.integers(4, 9))
    gt = rng.uniform(-1, 1, size=(n, c, size, size))
    out = rng.uniform(-1, 1, size=gt.shape)
    comp = rng.uniform(-1, 1, size=gt.shape)
    extractor = ConvExtractor.random(c, channels=(4, 6, 8), seed=int(rng.integers(1000)))
    _, d_out, d_comp = losses.style_loss_and_grad(out, comp, gt, extractor)

    def f():
        return losses.style_loss(out, comp, gt, extractor)

    return max(rel_error(d_out, numerical_grad(f, out)), rel_error(d_comp, numerical_grad(f, comp)))


def check_adversarial(rng):
    shape = (int(rng.integers(1, 4)), 1, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    fake, real = rng.normal(size=shape), rng.normal(size=shape)
    g_fake = losses.lsgan_grad(fake, 1.0)
    err = rel_error(g_fake, numerical_grad(lambda: losses.adv_loss_g(fake), fake))
    gd_fake, gd_real = losses.lsgan_grad(fake, 0.0), losses.lsgan_grad(real, 1.0)
    f = lambda: losses.adv_loss_d(fake, real)  # noqa: E731
    return max(err, rel_error(gd_fake, numerical_grad(f, fake)),
               rel_error(gd_real, numerical_grad(f, real)))


CHECKS = {
    "dpconv": check_dpconv,
    "self_attention": check_attention,
    "pixel_loss": check_pixel,
    "style_loss": check_style,
    "tv_loss": check_tv,
    "adversarial_loss": check_adversarial,
}


def run_gradcheck(trials=20, seed=0, checks=None):
    """Max relative error per operator over ``trials`` random configurations."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    report = {}
    for name, check in (checks or CHECKS).items():
        report[name] = max(check(rng) for _ in range(trials))
    return report
