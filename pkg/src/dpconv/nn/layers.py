"""Layers with hand-written backward passes.

Each layer owns ``params`` and matching ``grads`` (accumulated by
``backward``) and caches what it needs from the most recent ``forward``.
Calling ``forward`` twice before ``backward`` discards the first cache.
"""
import numpy as np

from ..convspec import ConvSpec
from ..ops import dpconv_backward, dpconv_forward
from ..tensor import as_tensor4, conv2d, conv2d_backward


def he_normal(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def _accumulate(self, name, g):
        self.grads[name] = self.grads[name] + g


# -------------------------------------------------------------- activations

class LeakyReLU:
    def __init__(self, slope=0.2):
        self.slope = slope

    def forward(self, x):
        self._pos = x > 0
        return np.where(self._pos, x, self.slope * x)

    def backward(self, dy):
        return np.where(self._pos, dy, self.slope * dy)


class ReLU(LeakyReLU):
    def __init__(self):
        super().__init__(0.0)


class Tanh:
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1.0 - self._y ** 2)


class Identity:
    def forward(self, x):
        return x

    def backward(self, dy):
        return dy


ACTIVATIONS = {"lrelu": LeakyReLU, "relu": ReLU, "tanh": Tanh, "none": Identity}


def activation(name):
    try:
        return ACTIVATIONS[name]()
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


# -------------------------------------------------------------- convolutions

class Conv2d(Layer):
    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, dilation=1, rng=None):
        super().__init__()
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.params = {"weight": he_normal(rng, (c_out, c_in, kh, kw)), "bias": np.zeros(c_out)}
        self.zero_grad()

    def forward(self, x):
        self._x = x
        y, self._cols = conv2d(x, self.params["weight"], self.params["bias"], self.stride,
                               self.padding, self.dilation, return_cols=True)
        return y

    def backward(self, dy, need_input=True):
        dx, dw, db = conv2d_backward(dy, self._x, self.params["weight"], self.stride, self.padding,
                                     self.dilation, cols=self._cols, need_input=need_input)
        self._accumulate("weight", dw)
        self._accumulate("bias", db)
        return dx


class PartialConv2d(Layer):
    """Dilated partial convolution; ``forward(x, mask)`` returns (y, new_mask)."""

    def __init__(self, spec: ConvSpec, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        self.params = {"weight": he_normal(rng, spec.weight_shape), "bias": np.zeros(spec.c_out)}
        self.zero_grad()

    def forward(self, x, mask):
        y, new_mask, _, self._ctx = dpconv_forward(x, mask, self.params["weight"],
                                                   self.params["bias"], self.spec,
                                                   return_context=True)
        return y, new_mask

    def backward(self, dy, need_input=True):
        dx, dw, db = dpconv_backward(dy, self._ctx, need_input=need_input)
        self._accumulate("weight", dw)
        self._accumulate("bias", db)
        return dx


# ------------------------------------------------------------ self-attention

def init_attention_params(channels, rng, gamma=0.0):
    ck = max(1, channels // 8)
    return {
        "wq": rng.normal(0, 1 / np.sqrt(channels), (ck, channels)), "bq": np.zeros(ck),
        "wk": rng.normal(0, 1 / np.sqrt(channels), (ck, channels)), "bk": np.zeros(ck),
        "wv": rng.normal(0, 1 / np.sqrt(channels), (channels, channels)), "bv": np.zeros(channels),
        "gamma": np.array(float(gamma)),
    }


def self_attention_forward(x, params):
    """x + gamma * (values aggregated with softmax(query . key) weights over positions).

    Returns (out, ctx); ``ctx["attention"][b, i, j]`` is the weight position i
    gives position j, each row summing to 1.
    """
    x = as_tensor4(x)
    n, c, h, w = x.shape
    if params["wv"].shape != (c, c):
        raise ValueError(f"attention parameters are for {params['wv'].shape[0]} channels, got {c}")
    flat = x.reshape(n, c, h * w)
    q = params["wq"] @ flat + params["bq"][:, None]
    k = params["wk"] @ flat + params["bk"][:, None]
    v = params["wv"] @ flat + params["bv"][:, None]
    s = np.swapaxes(q, 1, 2) @ k
    s -= s.max(axis=2, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=2, keepdims=True)
    o = v @ np.swapaxes(a, 1, 2)
    out = x + params["gamma"] * o.reshape(x.shape)
    return out, {"flat": flat, "q": q, "k": k, "v": v, "attention": a, "o": o}


def self_attention_backward(dy, ctx, params):
    n, c, h, w = dy.shape
    dyf = dy.reshape(n, c, h * w)
    flat, q, k, v, a, o = (ctx[key] for key in ("flat", "q", "k", "v", "attention", "o"))
    gamma = params["gamma"]
    grads = {"gamma": np.array((dyf * o).sum())}
    do = gamma * dyf
    dv = do @ a
    da = np.swapaxes(do, 1, 2) @ v
    ds = a * (da - (da * a).sum(axis=2, keepdims=True))
    dq = k @ np.swapaxes(ds, 1, 2)
    dk = q @ ds
    dx = dyf.copy()
    for name, d in (("q", dq), ("k", dk), ("v", dv)):
        grads["w" + name] = np.einsum("bcn,bdn->cd", d, flat)
        grads["b" + name] = d.sum(axis=(0, 2))
        dx += params["w" + name].T @ d
    return dx.reshape(dy.shape), grads


class SelfAttention(Layer):
    def __init__(self, channels, rng=None, gamma=0.0):
        super().__init__()
        self.params = init_attention_params(channels, rng or np.random.default_rng(0), gamma)
        self.zero_grad()

    def forward(self, x):
        y, self._ctx = self_attention_forward(x, self.params)
        return y

    def backward(self, dy):
        dx, grads = self_attention_backward(dy, self._ctx, self.params)
        for k, g in grads.items():
            self._accumulate(k, g)
        return dx
