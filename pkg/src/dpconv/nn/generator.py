"""U-Net style inpainting generator built from partial convolutions.

Layout: partial-conv encoder -> residual block of dilated partial convs
-> decoder levels (nearest upsample, concatenate a skip, convolve), with
self-attention after one decoder level, and a final 1x1 conv + tanh.
The validity mask is threaded through the encoder and dilated block; the
decoder works on dense features.
"""
from dataclasses import dataclass, field, asdict

import numpy as np

from ..convspec import ConvSpec, ShapeError
from ..tensor import concat_channels, split_channels, upsample_nearest, upsample_nearest_backward
from .layers import Conv2d, PartialConv2d, SelfAttention, activation


class ConfigError(ValueError):
    pass


@dataclass
class EncoderLayer:
    spec: ConvSpec
    activation: str = "lrelu"


@dataclass
class DecoderLevel:
    skip: int        # 0 = masked input image, k = output of encoder layer k
    c_out: int
    kernel: int = 3
    upsample: int = 2
    activation: str = "relu"


@dataclass
class GeneratorConfig:
    resolution: tuple = (256, 256)
    in_channels: int = 3
    out_channels: int = 3
    encoder: list = field(default_factory=list)
    dilations: tuple = (2, 4, 8)
    residual: bool = True
    dilated_activation: str = "lrelu"
    decoder: list = field(default_factory=list)
    attention_level: int = 0  # decoder level followed by self-attention; None disables it
    attention_gamma: float = 0.0
    seed: int = 0

    @classmethod
    def default(cls, size=256, width=64, seed=0):
        w = width
        encoder = [
            EncoderLayer(ConvSpec.square(7, 3, w, stride=2)),
            EncoderLayer(ConvSpec.square(5, w, 2 * w, stride=2)),
            EncoderLayer(ConvSpec.square(5, 2 * w, 4 * w, stride=2)),
            EncoderLayer(ConvSpec.square(3, 4 * w, 4 * w)),
        ]
        decoder = [DecoderLevel(2, 2 * w), DecoderLevel(1, w), DecoderLevel(0, w)]
        return cls((size, size), 3, 3, encoder, (2, 4, 8), True, "lrelu", decoder, 0, 0.0, seed)

    def to_dict(self):
        d = asdict(self)
        d["resolution"] = list(self.resolution)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["resolution"] = tuple(d["resolution"])
        d["dilations"] = tuple(d["dilations"])
        d["encoder"] = [EncoderLayer(ConvSpec(**e["spec"]), e["activation"]) for e in d["encoder"]]
        d["decoder"] = [DecoderLevel(**lv) for lv in d["decoder"]]
        return cls(**d)

    def validate(self):
        """Shape-check the whole network; returns the feature shapes (c, h, w) per stage."""
        if not self.encoder:
            raise ConfigError("encoder must have at least one layer")
        for k, layer in enumerate(self.encoder[:4]):
            if layer.spec.dilation != 1:
                raise ConfigError(f"encoder layer {k + 1} must be undilated (first four layers)")
        if any(b < a for a, b in zip(self.dilations, self.dilations[1:])):
            raise ConfigError(f"dilation schedule {self.dilations} must be non-decreasing")
        c, (h, w) = self.in_channels, self.resolution
        skips = [(c, h, w)]
        for k, layer in enumerate(self.encoder):
            if layer.spec.c_in != c:
                raise ConfigError(f"encoder layer {k + 1} expects {layer.spec.c_in} channels, gets {c}")
            try:
                h, w = layer.spec.output_size(h, w)
            except ShapeError as exc:
                raise ConfigError(f"encoder layer {k + 1}: {exc}") from None
            c = layer.spec.c_out
            skips.append((c, h, w))
        for d in self.dilations:
            ConvSpec.square(3, c, c, dilation=d).output_size(h, w)
        bottleneck = (c, h, w)
        for k, level in enumerate(self.decoder):
            h, w = h * level.upsample, w * level.upsample
            if not 0 <= level.skip < len(skips):
                raise ConfigError(f"decoder level {k}: no skip source {level.skip}")
            sc, sh, sw = skips[level.skip]
            if (sh, sw) != (h, w):
                raise ConfigError(f"decoder level {k}: skip {level.skip} is {sh}x{sw}, "
                                  f"upsampled features are {h}x{w}")
            c = level.c_out
        if (h, w) != tuple(self.resolution):
            raise ConfigError(f"decoder ends at {h}x{w}, expected {self.resolution}")
        if self.attention_level is not None and not 0 <= self.attention_level < len(self.decoder):
            raise ConfigError(f"attention_level {self.attention_level} out of range")
        return skips, bottleneck


class Generator:
    """``forward(image, mask) -> image``; ``backward(d_out)`` fills ``grads``."""

    def __init__(self, config: GeneratorConfig):
        self.config = config
        skips, bottleneck = config.validate()
        rng = np.random.default_rng(config.seed)
        self.encoder = [PartialConv2d(layer.spec, rng) for layer in config.encoder]
        self.enc_act = [layer.activation for layer in config.encoder]
        c = bottleneck[0]
        self.dilated = [PartialConv2d(ConvSpec.square(3, c, c, dilation=d), rng)
                        for d in config.dilations]
        self.decoder = []
        for level in config.decoder:
            c_in = c + skips[level.skip][0]
            self.decoder.append(Conv2d(c_in, level.c_out, level.kernel,
                                       padding=level.kernel // 2, rng=rng))
            c = level.c_out
        self.attention = None
        if config.attention_level is not None and config.decoder:
            att_c = config.decoder[config.attention_level].c_out
            self.attention = SelfAttention(att_c, rng, config.attention_gamma)
        self.final = Conv2d(c, config.out_channels, 1, rng=rng)

    # parameters are exposed as one flat name -> array mapping
    def named_layers(self):
        for k, layer in enumerate(self.encoder):
            yield f"enc{k}", layer
        for k, layer in enumerate(self.dilated):
            yield f"dil{k}", layer
        for k, layer in enumerate(self.decoder):
            yield f"dec{k}", layer
        if self.attention is not None:
            yield "attn", self.attention
        yield "final", self.final

    @property
    def params(self):
        return {f"{name}.{k}": v for name, layer in self.named_layers()
                for k, v in layer.params.items()}

    @property
    def grads(self):
        return {f"{name}.{k}": v for name, layer in self.named_layers()
                for k, v in layer.grads.items()}

    def load_params(self, params):
        for name, layer in self.named_layers():
            for k in layer.params:
                value = np.asarray(params[f"{name}.{k}"], dtype=np.float64)
                if value.shape != layer.params[k].shape:
                    raise ShapeError(f"{name}.{k}: expected {layer.params[k].shape}, got {value.shape}")
                layer.params[k] = value.copy()

    def zero_grad(self):
        for _, layer in self.named_layers():
            layer.zero_grad()

    def parameter_count(self):
        return int(sum(v.size for v in self.params.values()))

    def forward(self, image, mask):
        mask = np.asarray(mask, dtype=np.uint8)
        h = image * (mask[:, None] if mask.ndim == 3 else mask)
        skips = [h]
        self.masks = []
        self._acts = []
        m = mask
        for layer, act_name in zip(self.encoder, self.enc_act):
            h, m = layer.forward(h, m)
            act = activation(act_name)
            h = act.forward(h)
            self._acts.append(act)
            self.masks.append(m)
            skips.append(h)
        self._dil_acts = []
        for layer in self.dilated:
            y, m = layer.forward(h, m)
            act = activation(self.config.dilated_activation)
            y = act.forward(y)
            self._dil_acts.append(act)
            self.masks.append(m)
            h = h + y if self.config.residual else y
        self._dec = []
        for k, (level, conv) in enumerate(zip(self.config.decoder, self.decoder)):
            up = upsample_nearest(h, level.upsample)
            h = conv.forward(concat_channels(up, skips[level.skip]))
            act = activation(level.activation)
            h = act.forward(h)
            self._dec.append((up.shape[1], act))
            if self.attention is not None and k == self.config.attention_level:
                h = self.attention.forward(h)
        self._out_act = activation("tanh")
        return self._out_act.forward(self.final.forward(h))

    def backward(self, d_out):
        """Accumulate parameter gradients (no gradient is returned for the image)."""
        g = self.final.backward(self._out_act.backward(d_out))
        skip_grads = {}
        for k in reversed(range(len(self.decoder))):
            level, conv = self.config.decoder[k], self.decoder[k]
            if self.attention is not None and k == self.config.attention_level:
                g = self.attention.backward(g)
            c_up, act = self._dec[k]
            g = conv.backward(act.backward(g))
            g_up, g_skip = split_channels(g, c_up)
            skip_grads[level.skip] = skip_grads.get(level.skip, 0) + g_skip
            g = upsample_nearest_backward(g_up, level.upsample)
        for layer, act in zip(reversed(self.dilated), reversed(self._dil_acts)):
            gy = layer.backward(act.backward(g))
            g = g + gy if self.config.residual else gy
        for k in reversed(range(len(self.encoder))):
            g = g + skip_grads.get(k + 1, 0)
            g = self.encoder[k].backward(self._acts[k].backward(g), need_input=k > 0)
