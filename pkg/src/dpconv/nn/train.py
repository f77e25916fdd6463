"""Adversarial training step for the inpainting generator."""
import math
from dataclasses import dataclass, field

import numpy as np

from ..data import synthetic_batch
from ..features import ConvExtractor
from ..losses import (LossWeights, composite_image, dilated_hole_region, lsgan_grad, lsgan_loss,
                      pixel_loss, pixel_loss_grad, style_loss_and_grad, total_loss, tv_loss,
                      tv_loss_grad)
from ..maskprop import generate_irregular_mask
from .discriminator import Discriminator
from .generator import Generator, GeneratorConfig
from .optim import Adam, AdamHyper

LOG_COLUMNS = ("step", "pixel", "style", "adv_g", "adv_d", "tv", "total")


class NumericalError(FloatingPointError):
    def __init__(self, term, step=None):
        self.term, self.step = term, step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite {term} loss{where}")


@dataclass
class TrainConfig:
    lr_g: float = 2e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size: int = 8
    steps: int = 200
    size: int = 64
    width: int = 32
    flip_prob: float = 0.1
    real_label: tuple = (0.7, 1.2)
    fake_label: tuple = (0.0, 0.3)
    hole_ratio: tuple = (0.05, 0.5)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must be a probability")
        for lo, hi in (self.real_label, self.fake_label, self.hole_ratio):
            if lo > hi:
                raise ValueError(f"range ({lo}, {hi}) is not ordered")


class Trainer:
    """Generator, discriminator, style extractor and both optimizers."""

    def __init__(self, config: TrainConfig, generator_config=None):
        self.config = config
        gcfg = generator_config or GeneratorConfig.default(config.size, config.width,
                                                           seed=config.seed)
        self.generator = Generator(gcfg)
        self.discriminator = Discriminator(gcfg.out_channels, config.width, seed=config.seed + 1)
        self.extractor = ConvExtractor.random(gcfg.out_channels)
        self.opt_g = Adam(self.generator.params,
                          AdamHyper(config.lr_g, config.beta1, config.beta2))
        self.opt_d = Adam(self.discriminator.params,
                          AdamHyper(config.lr_d, config.beta1, config.beta2))
        self.rng = np.random.default_rng(config.seed)

    def sample_batch(self):
        c, rng = self.config, self.rng
        images = synthetic_batch(rng, c.batch_size, c.size)
        masks = np.stack([
            generate_irregular_mask(c.size, c.size, rng.uniform(*c.hole_ratio),
                                    int(rng.integers(2 ** 31)))
            for _ in range(c.batch_size)])
        return images, masks

    def step(self, batch=None):
        return train_step(batch or self.sample_batch(), self, self.config, self.rng)


def _labels(rng, n, config):
    real = rng.uniform(*config.real_label, size=n)
    fake = rng.uniform(*config.fake_label, size=n)
    flip = rng.random(n) < config.flip_prob
    return np.where(flip, fake, real), np.where(flip, real, fake)


def _check(values):
    for name, v in values.items():
        if not math.isfinite(v):
            raise NumericalError(name)


def train_step(batch, nets, config: TrainConfig, rng):
    """One discriminator update, then one generator update; returns the loss record."""
    gt, masks = batch
    gen, disc, extractor = nets.generator, nets.discriminator, nets.extractor
    n = gt.shape[0]
    w = config.weights

    out = gen.forward(gt, masks)

    # discriminator: noisy, smoothed least-squares targets
    real_t, fake_t = _labels(rng, n, config)
    disc.zero_grad()
    s_fake = disc.forward(out)
    adv_d = lsgan_loss(s_fake, fake_t)
    disc.backward(lsgan_grad(s_fake, fake_t), need_input=False)
    s_real = disc.forward(gt)
    adv_d += lsgan_loss(s_real, real_t)
    disc.backward(lsgan_grad(s_real, real_t), need_input=False)
    _check({"adv_d": adv_d})
    nets.opt_d.step(disc.params, disc.grads)

    # generator
    comp = composite_image(out, gt, masks)
    region = dilated_hole_region(masks)
    pix = pixel_loss(out, gt, masks)
    style, d_style_out, d_style_comp = style_loss_and_grad(out, comp, gt, extractor)
    tv = tv_loss(comp, region)
    s_gen = disc.forward(out)
    adv_g = lsgan_loss(s_gen, 1.0)
    total, _ = total_loss((pix, style, adv_g, tv), w)
    _check({"pixel": pix, "style": style, "adv_g": adv_g, "tv": tv, "total": total})

    d_adv = disc.backward(lsgan_grad(s_gen, 1.0))
    hole = (1.0 - masks[:, None]).astype(np.float64)
    d_comp = w.w_style * d_style_comp + w.w_tv * tv_loss_grad(comp, region)
    d_out = (w.w_pixel * pixel_loss_grad(out, gt, masks) + w.w_style * d_style_out
             + w.w_adv * d_adv + hole * d_comp)
    gen.zero_grad()
    gen.backward(d_out)
    nets.opt_g.step(gen.params, gen.grads)
    disc.zero_grad()

    return {"pixel": pix, "style": style, "adv_g": adv_g, "adv_d": adv_d, "tv": tv,
            "total": total}


def train(config: TrainConfig, generator_config=None, on_step=None):
    """Run ``config.steps`` steps; returns (trainer, list of log records)."""
    trainer = Trainer(config, generator_config)
    log = []
    for k in range(config.steps):
        try:
            record = trainer.step()
        except NumericalError as exc:
            raise NumericalError(exc.term, k) from None
        record = {"step": k, **record}
        log.append(record)
        if on_step:
            on_step(record)
    return trainer, log
