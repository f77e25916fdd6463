"""Irregular masks and how fast stacked mask updates make them fully valid.

A stack of partial convolutions fills holes from their borders inwards:
every layer validates any output pixel whose window sees at least
``mask_threshold`` valid taps.  Dilated windows reach further, so dilated
stacks need fewer layers before no hole is left ("transparency").
"""
import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import cv2
import numpy as np

from . import kernels
from .convspec import ConvSpec, ShapeError
from .ops import mask_update
from .tensor import as_mask, mask_ratio

NOT_REACHED = -1

CSV_HEADER = ["stack", "bucket_lo", "bucket_hi", "mean_layers", "min_layers", "max_layers",
              "not_reached"]


class MaskGenerationError(RuntimeError):
    pass


class ExperimentConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# ------------------------------------------------------------------ masks

def _draw_stroke(holes, rng, target_px, scale, state):
    h, w = holes.shape
    lo = max(1, round(5 * scale))
    hi = max(lo + 1, round(30 * scale) + 1)
    thickness = int(rng.integers(lo, hi))
    y, x = rng.uniform(0, h), rng.uniform(0, w)
    angle = rng.uniform(0, 2 * np.pi)
    max_len = max(2.0, 0.01 * h * w / thickness)
    for _ in range(int(rng.integers(4, 13))):
        angle += rng.normal(0, 0.9)
        length = min(rng.uniform(5, 45) * scale + 1, max_len)
        ny = float(np.clip(y + length * np.sin(angle), 0, h - 1))
        nx = float(np.clip(x + length * np.cos(angle), 0, w - 1))
        cv2.line(holes, (int(x), int(y)), (int(nx), int(ny)), 1, thickness, cv2.LINE_8)
        y, x = ny, nx
        state["count"] = int(np.count_nonzero(holes))
        if state["count"] >= target_px:
            return


def generate_irregular_mask(h, w, target_ratio, seed, tolerance=0.03, max_attempts=20):
    """Free-form mask: random thick polyline strokes plus up to three ellipses.

    Returns a uint8 (h, w) mask with 1 = valid, 0 = hole, whose hole ratio is
    within ``tolerance`` of ``target_ratio``.  Deterministic in ``seed``
    (an int or a sequence of ints).
    """
    if not 0 < target_ratio < 0.9:
        raise ValueError(f"target_ratio must lie in (0, 0.9), got {target_ratio}")
    rng = np.random.default_rng(seed)
    total = h * w
    target_px = max(1, int(round(target_ratio * total)))
    scale = min(h, w) / 256.0
    achieved = 0.0
    for _ in range(max_attempts):
        holes = np.zeros((h, w), np.uint8)
        for _ in range(int(rng.integers(0, 4))):
            budget = (target_px - np.count_nonzero(holes)) * rng.uniform(0.1, 0.5)
            if budget < 4:
                break
            a = rng.uniform(0.5, 2.0) * math.sqrt(budget / math.pi)
            b = budget / (math.pi * a)
            center = (int(rng.integers(0, w)), int(rng.integers(0, h)))
            cv2.ellipse(holes, center, (max(1, int(a)), max(1, int(b))),
                        float(rng.uniform(0, 180)), 0, 360, 1, -1)
        state = {"count": int(np.count_nonzero(holes))}
        while state["count"] < target_px:
            _draw_stroke(holes, rng, target_px, scale, state)
        achieved = state["count"] / total
        if abs(achieved - target_ratio) <= tolerance and 0 < state["count"] < total:
            return (1 - holes).astype(np.uint8)
    raise MaskGenerationError(
        f"could not reach hole ratio {target_ratio:.3f} on {h}x{w} "
        f"(last attempt achieved {achieved:.3f})")


# ------------------------------------------------------------ propagation

@dataclass
class LayerStackSpec:
    layers: list
    name: str = "stack"

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a layer stack needs at least one layer")

    def expanded(self, cap):
        """The first ``cap`` layers, repeating the final layer as needed."""
        layers = list(self.layers[:cap])
        layers += [self.layers[-1]] * (cap - len(layers))
        return layers

    def check_resolution(self, h, w):
        for k, spec in enumerate(self.layers):
            try:
                h, w = spec.output_size(h, w)
            except ShapeError as exc:
                raise ShapeError(f"{self.name} layer {k + 1}: {exc}") from None
        return h, w


@dataclass
class TransparencyReport:
    per_layer_coverage: list
    layers_to_transparency: int  # NOT_REACHED if the cap was hit first
    cap: int
    masks: list = field(default_factory=list)

    @property
    def reached(self):
        return self.layers_to_transparency != NOT_REACHED


def propagate(stack: LayerStackSpec, mask, cap=20, keep_masks=False):
    m = as_mask(mask)
    if m.ndim != 2:
        raise ShapeError("propagate expects a single (h, w) mask")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    report = TransparencyReport([], NOT_REACHED, cap)
    if m.all():
        report.layers_to_transparency = 0
        return report
    layers = stack.expanded(cap)
    if not keep_masks:
        stack.check_resolution(*m.shape)
        table = np.array([[*s.kernel_size, s.stride, s.dilation, s.padding, s.mask_threshold]
                          for s in layers], dtype=np.int64)
        first, coverage = kernels.propagate_masks(m, table, cap)
        report.layers_to_transparency = int(first)
        report.per_layer_coverage = [float(c) for c in coverage]
        return report
    for k, spec in enumerate(layers, 1):
        try:
            m = mask_update(m, spec)
        except ShapeError as exc:
            raise ShapeError(f"{stack.name} layer {k}: {exc}") from None
        report.masks.append(m)
        coverage = float(np.count_nonzero(m)) / m.size
        report.per_layer_coverage.append(coverage)
        if coverage == 1.0:
            report.layers_to_transparency = k
            break
    return report


def baseline_stack(cap=20):
    return LayerStackSpec([ConvSpec.square(3)] * cap, "baseline")


def dilated_stack(cap=20, leading=4, schedule=(2, 4, 8)):
    """``leading`` undilated layers, then the dilation schedule on repeat."""
    layers = [ConvSpec.square(3)] * min(leading, cap)
    k = 0
    while len(layers) < cap:
        layers.append(ConvSpec.square(3, dilation=schedule[k % len(schedule)]))
        k += 1
    return LayerStackSpec(layers, "dilated")


REFERENCE_STACKS = {"baseline": baseline_stack, "dilated": dilated_stack}


def single_pixel_layers(radius, dilation, half):
    """Layers for one valid pixel to cover a square of the given radius (undilated stacks)."""
    return math.ceil(radius / (dilation * half))


# -------------------------------------------------------------- experiment

DEFAULT_BUCKETS = tuple((round(0.1 * k, 2), round(0.1 * (k + 1), 2)) for k in range(6))


@dataclass
class MaskExperimentConfig:
    mask_count: int = 12000
    buckets: tuple = DEFAULT_BUCKETS
    per_bucket: int = 2000
    cap: int = 20
    resolution: tuple = (256, 256)
    seed: int = 0
    stacks: tuple = ("baseline", "dilated")
    workers: int = 1

    def __post_init__(self):
        self.buckets = tuple((float(lo), float(hi)) for lo, hi in self.buckets)
        if self.per_bucket * len(self.buckets) != self.mask_count:
            raise ExperimentConfigError(
                f"per_bucket ({self.per_bucket}) x buckets ({len(self.buckets)}) "
                f"!= mask_count ({self.mask_count})")
        if self.cap < 1:
            raise ExperimentConfigError("cap must be >= 1")
        for lo, hi in self.buckets:
            if not 0 <= lo < hi <= 0.9:
                raise ExperimentConfigError(f"bad bucket [{lo}, {hi})")
        unknown = [s for s in self.stacks if s not in REFERENCE_STACKS]
        if unknown:
            raise ExperimentConfigError(f"unknown stacks {unknown}")

    def build_stacks(self):
        return [REFERENCE_STACKS[name](self.cap) for name in self.stacks]


def _parse_buckets(text):
    out = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        lo, hi = float(lo), float(hi)
        if not 0 <= lo < hi <= 0.9:
            raise ValueError(f"bad bucket {part.strip()!r}")
        out.append((lo, hi))
    return tuple(out)


def parse_experiment_config(text, overrides=None):
    """Parse ``key = value`` lines (``#`` comments) into a config.

    ``overrides`` (e.g. from command-line flags) win over file values.
    """
    raw, lines = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ExperimentConfigError(f"expected 'key = value', got {line!r}", lineno)
        raw[key], lines[key] = value, lineno
    raw.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})

    converters = {
        "mask_count": int, "per_bucket": int, "cap": int, "seed": int, "workers": int,
        "height": int, "width": int, "buckets": _parse_buckets,
        "resolution": lambda v: tuple(int(t) for t in v.lower().split("x")),
        "stacks": lambda v: tuple(t.strip() for t in v.split(",") if t.strip()),
    }
    values = {}
    for key, value in raw.items():
        if key not in converters:
            raise ExperimentConfigError(f"unknown key {key!r}", lines.get(key))
        try:
            values[key] = converters[key](value)
        except ValueError:
            raise ExperimentConfigError(f"bad value for {key}: {value!r}", lines.get(key)) from None

    h = values.pop("height", None)
    w = values.pop("width", None)
    if h is not None or w is not None:
        res = values.get("resolution", MaskExperimentConfig.resolution)
        values["resolution"] = (h or res[0], w or res[1])
    n_buckets = len(values.get("buckets", DEFAULT_BUCKETS))
    if "per_bucket" not in values and "mask_count" not in values:
        values["per_bucket"] = MaskExperimentConfig.per_bucket
    if "per_bucket" in values and "mask_count" not in values:
        values["mask_count"] = values["per_bucket"] * n_buckets
    elif "mask_count" in values and "per_bucket" not in values:
        if values["mask_count"] % n_buckets:
            raise ExperimentConfigError("mask_count is not divisible by the bucket count",
                                        lines.get("mask_count"))
        values["per_bucket"] = values["mask_count"] // n_buckets
    return MaskExperimentConfig(**values)


def bucket_mask(config, bucket, index, max_attempts=200):
    """Deterministic mask whose measured hole ratio falls inside the bucket."""
    lo, hi = config.buckets[bucket]
    h, w = config.resolution
    for attempt in range(max_attempts):
        seed = (config.seed, bucket, index, attempt)
        target = np.random.default_rng(seed + (1,)).uniform(max(lo, 0.002), hi)
        try:
            mask = generate_irregular_mask(h, w, target, seed)
        except MaskGenerationError:
            continue
        if lo <= mask_ratio(mask) < hi:
            return mask
    raise MaskGenerationError(
        f"bucket [{lo:.2f}, {hi:.2f}) stayed empty for mask {index} after {max_attempts} attempts")


def _run_bucket(config, stacks, bucket, mask_source):
    results = np.empty((len(stacks), config.per_bucket), dtype=np.int64)
    for i in range(config.per_bucket):
        mask = mask_source(bucket, i) if mask_source else bucket_mask(config, bucket, i)
        for s, stack in enumerate(stacks):
            results[s, i] = propagate(stack, mask, config.cap).layers_to_transparency
    return results


@dataclass
class ExperimentRow:
    stack: str
    bucket_lo: float
    bucket_hi: float
    mean_layers: float
    min_layers: int
    max_layers: int
    not_reached: int


def run_transparency_experiment(config: MaskExperimentConfig, stacks=None, mask_source=None):
    """Layers-to-transparency statistics per (stack, ratio bucket).

    Masks that never become transparent within ``config.cap`` layers are
    counted in ``not_reached`` and enter mean/min/max at the cap value.
    ``mask_source(bucket, index)`` may replace the random generator.
    """
    stacks = config.build_stacks() if stacks is None else list(stacks)
    if len(stacks) < 2:
        raise ValueError("need at least two stacks to compare")
    for stack in stacks:
        stack.check_resolution(*config.resolution)

    buckets = range(len(config.buckets))
    if config.workers > 1 and mask_source is None:
        with ProcessPoolExecutor(config.workers) as pool:
            per_bucket = list(pool.map(_run_bucket, [config] * len(buckets),
                                       [stacks] * len(buckets), buckets,
                                       [None] * len(buckets)))
    else:
        per_bucket = [_run_bucket(config, stacks, b, mask_source) for b in buckets]

    rows = []
    for s, stack in enumerate(stacks):
        for b, (lo, hi) in enumerate(config.buckets):
            layers = per_bucket[b][s]
            if layers.size == 0:
                raise MaskGenerationError(f"bucket [{lo}, {hi}) is empty")
            missed = layers == NOT_REACHED
            censored = np.where(missed, config.cap, layers)
            rows.append(ExperimentRow(stack.name, lo, hi, float(censored.mean()),
                                      int(censored.min()), int(censored.max()),
                                      int(missed.sum())))
    return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r.stack, f"{r.bucket_lo:.2f}", f"{r.bucket_hi:.2f}",
                         f"{r.mean_layers:.2f}", r.min_layers, r.max_layers, r.not_reached])
    return buf.getvalue()
