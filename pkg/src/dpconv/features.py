"""Feature extractors feeding the Gram-matrix style loss.

An extractor maps an image batch to a list of activation maps, one per
level, and can push gradients of those maps back to the image.  The
default is a small fixed random network; trained weights can be loaded
from a float32 blob plus JSON sidecar.
"""
import json
from pathlib import Path

import numpy as np

from .tensor import as_tensor4, conv2d, conv2d_backward

WEIGHTS_FORMAT = "dpconv-extractor/1"


class FeatureExtractor:
    """Interface: ``forward`` returns (features, ctx); ``backward`` maps feature grads to input grad."""

    def forward(self, x):
        raise NotImplementedError

    def backward(self, ctx, grads):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)[0]


class IdentityExtractor(FeatureExtractor):
    """One level whose features are the image itself."""

    def forward(self, x):
        return [as_tensor4(x)], None

    def backward(self, ctx, grads):
        return grads[0]


class ConvExtractor(FeatureExtractor):
    """Chain of strided convolutions with tanh; each level's activation is a feature map."""

    def __init__(self, weights, biases, stride=2, padding=1):
        if not weights:
            raise ValueError("extractor needs at least one level")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.stride, self.padding = stride, padding

    @classmethod
    def random(cls, in_channels=3, channels=(8, 16, 32), seed=1234):
        rng = np.random.default_rng(seed)
        weights, biases, c = [], [], in_channels
        for co in channels:
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(9 * c), size=(co, c, 3, 3)))
            biases.append(rng.normal(0.0, 0.1, size=co))
            c = co
        return cls(weights, biases)

    @property
    def levels(self):
        return len(self.weights)

    def forward(self, x):
        h = as_tensor4(x)
        feats, ctx = [], []
        for w, b in zip(self.weights, self.biases):
            z, cols = conv2d(h, w, b, self.stride, self.padding, return_cols=True)
            a = np.tanh(z)
            ctx.append((h, cols, a))
            feats.append(a)
            h = a
        return feats, ctx

    def backward(self, ctx, grads):
        g = None
        for p in reversed(range(self.levels)):
            h, cols, a = ctx[p]
            if grads[p] is not None:
                g = grads[p] if g is None else g + grads[p]
            if g is None:
                continue
            dz = g * (1.0 - a * a)
            g, _, _ = conv2d_backward(dz, h, self.weights[p], self.stride, self.padding, cols=cols)
        if g is None:
            return np.zeros_like(ctx[0][0])
        return g

    def save(self, path):
        """Write ``path`` (float32 little-endian blob) and ``path.json`` (layout)."""
        path = Path(path)
        layers, blobs = [], []
        for w, b in zip(self.weights, self.biases):
            layers.append({"weight_shape": list(w.shape), "bias_shape": list(b.shape)})
            blobs += [w.ravel(), b.ravel()]
        np.concatenate(blobs).astype("<f4").tofile(path)
        sidecar = {"format": WEIGHTS_FORMAT, "stride": self.stride, "padding": self.padding,
                   "layers": layers}
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        if meta.get("format") != WEIGHTS_FORMAT:
            raise ValueError(f"unsupported extractor weights format {meta.get('format')!r}")
        flat = np.fromfile(path, dtype="<f4").astype(np.float64)
        weights, biases, pos = [], [], 0
        for layer in meta["layers"]:
            for shape, out in ((layer["weight_shape"], weights), (layer["bias_shape"], biases)):
                size = int(np.prod(shape))
                if pos + size > flat.size:
                    raise ValueError("extractor weights file is shorter than its sidecar describes")
                out.append(flat[pos:pos + size].reshape(shape))
                pos += size
        if pos != flat.size:
            raise ValueError("extractor weights file has trailing data")
        return cls(weights, biases, meta.get("stride", 2), meta.get("padding", 1))
