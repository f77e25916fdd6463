import numpy as np

from .layers import Conv2d, LeakyReLU


class Discriminator:
    """Five stride-2 4x4 convolutions; returns a raw (unsquashed) score map.

    A 256x256 input yields an 8x8 map.
    """

    def __init__(self, in_channels=3, width=64, seed=0):
        rng = np.random.default_rng(seed)
        chans = [in_channels, width, 2 * width, 4 * width, 8 * width, 1]
        self.convs = [Conv2d(a, b, 4, stride=2, padding=1, rng=rng)
                      for a, b in zip(chans[:-1], chans[1:])]
        self.acts = [LeakyReLU(0.2) for _ in self.convs[:-1]]

    def named_layers(self):
        for k, conv in enumerate(self.convs):
            yield f"conv{k}", conv

    @property
    def params(self):
        return {f"{n}.{k}": v for n, layer in self.named_layers() for k, v in layer.params.items()}

    @property
    def grads(self):
        return {f"{n}.{k}": v for n, layer in self.named_layers() for k, v in layer.grads.items()}

    def load_params(self, params):
        for n, layer in self.named_layers():
            for k in layer.params:
                layer.params[k] = np.array(params[f"{n}.{k}"], dtype=np.float64)

    def zero_grad(self):
        for conv in self.convs:
            conv.zero_grad()

    def parameter_count(self):
        return int(sum(v.size for v in self.params.values()))

    def forward(self, x):
        h = x
        for k, conv in enumerate(self.convs):
            h = conv.forward(h)
            if k < len(self.acts):
                h = self.acts[k].forward(h)
        return h

    def backward(self, d_scores, need_input=True):
        g = d_scores
        for k in reversed(range(len(self.convs))):
            if k < len(self.acts):
                g = self.acts[k].backward(g)
            g = self.convs[k].backward(g, need_input=need_input or k > 0)
        return g
