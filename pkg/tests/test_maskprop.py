import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpconv import ConvSpec, ShapeError, mask_update
from dpconv.maskprop import (CSV_HEADER, DEFAULT_BUCKETS, NOT_REACHED, ExperimentConfigError,
                             LayerStackSpec, MaskExperimentConfig, MaskGenerationError,
                             baseline_stack, bucket_mask, dilated_stack,
                             generate_irregular_mask, parse_experiment_config, propagate,
                             rows_to_csv, run_transparency_experiment, single_pixel_layers)
from dpconv.tensor import mask_ratio


def center_pixel(size):
    m = np.zeros((size, size), np.uint8)
    m[size // 2, size // 2] = 1
    return m


# ------------------------------------------------------------------ masks

def test_generator_is_deterministic():
    a = generate_irregular_mask(96, 80, 0.3, 5)
    b = generate_irregular_mask(96, 80, 0.3, 5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, generate_irregular_mask(96, 80, 0.3, 6))


@pytest.mark.parametrize("target", [0.05, 0.2, 0.35, 0.5, 0.7, 0.85])
def test_generator_hits_target_ratio(target):
    for seed in range(5):
        m = generate_irregular_mask(128, 128, target, seed)
        assert m.dtype == np.uint8 and set(np.unique(m)) <= {0, 1}
        assert abs(mask_ratio(m) - target) <= 0.03
        assert m.any()


def test_generator_tiny_target():
    m = generate_irregular_mask(256, 256, 1e-4, 3)
    assert 0 < mask_ratio(m) <= 0.03


def test_generator_rejects_bad_ratio():
    for bad in (0.0, -0.1, 0.9, 1.2):
        with pytest.raises(ValueError):
            generate_irregular_mask(32, 32, bad, 0)


def test_generator_reports_unreachable_ratio():
    # a single pixel cannot be half hole and still keep a valid pixel
    with pytest.raises(MaskGenerationError, match="achieved"):
        generate_irregular_mask(1, 1, 0.5, 0, max_attempts=3)


def test_generator_monte_carlo_mean():
    ratios = [mask_ratio(generate_irregular_mask(256, 256, 0.35, s)) for s in range(1000)]
    assert 0.32 <= np.mean(ratios) <= 0.38


def test_bucket_mask_lands_in_bucket():
    cfg = MaskExperimentConfig(mask_count=6, per_bucket=1, resolution=(64, 64))
    for b, (lo, hi) in enumerate(cfg.buckets):
        for i in range(3):
            assert lo <= mask_ratio(bucket_mask(cfg, b, i)) < hi


# ------------------------------------------------------------ propagation

def test_all_ones_is_transparent_at_zero():
    report = propagate(baseline_stack(), np.ones((16, 16), np.uint8))
    assert report.layers_to_transparency == 0 and report.reached


def test_single_pixel_9x9_undilated_takes_four_layers():
    report = propagate(LayerStackSpec([ConvSpec.square(3)]), center_pixel(9), cap=20)
    assert report.layers_to_transparency == 4
    assert report.per_layer_coverage == [9 / 81, 25 / 81, 49 / 81, 1.0]


def test_single_pixel_9x9_dilated_never_clears():
    report = propagate(LayerStackSpec([ConvSpec.square(3, dilation=2)]), center_pixel(9), cap=20)
    assert report.layers_to_transparency == NOT_REACHED
    assert len(report.per_layer_coverage) == 20


@pytest.mark.parametrize("kernel,radius", [(3, 1), (3, 6), (5, 6), (5, 7), (7, 9), (9, 4)])
def test_single_pixel_closed_form_undilated(kernel, radius):
    size = 2 * radius + 1
    report = propagate(LayerStackSpec([ConvSpec.square(kernel)]), center_pixel(size), cap=50)
    assert report.layers_to_transparency == single_pixel_layers(radius, 1, kernel // 2)


def test_fast_and_step_paths_agree(rng):
    for i in range(20):
        m = generate_irregular_mask(48, 48, rng.uniform(0.05, 0.7), i)
        for stack in (baseline_stack(12), dilated_stack(12)):
            fast = propagate(stack, m, 12)
            slow = propagate(stack, m, 12, keep_masks=True)
            assert fast.layers_to_transparency == slow.layers_to_transparency
            np.testing.assert_allclose(fast.per_layer_coverage, slow.per_layer_coverage,
                                       rtol=0, atol=0)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]))
def test_identical_layers_equal_iterated_updates(seed, dilation):
    rng = np.random.default_rng(seed)
    m = (rng.random((20, 17)) < 0.05).astype(np.uint8)
    spec = ConvSpec.square(3, dilation=dilation)
    report = propagate(LayerStackSpec([spec]), m, cap=8, keep_masks=True)
    expected = m
    for got in report.masks:
        expected = mask_update(expected, spec)
        np.testing.assert_array_equal(got, expected)


@given(st.integers(0, 2**32 - 1))
def test_coverage_is_monotone(seed):
    rng = np.random.default_rng(seed)
    m = generate_irregular_mask(64, 64, rng.uniform(0.05, 0.8), seed)
    for stack in (baseline_stack(), dilated_stack()):
        cov = propagate(stack, m, 20).per_layer_coverage
        assert all(b >= a for a, b in zip(cov, cov[1:]))
        assert all(0 <= c <= 1 for c in cov)


def test_cap_one_on_half_hole_mask():
    m = generate_irregular_mask(256, 256, 0.5, 11)
    report = propagate(baseline_stack(1), m, cap=1)
    assert report.layers_to_transparency == NOT_REACHED and len(report.per_layer_coverage) == 1


def test_short_stack_repeats_last_layer():
    stack = LayerStackSpec([ConvSpec.square(3), ConvSpec.square(5)])
    assert stack.expanded(4) == [ConvSpec.square(3)] + [ConvSpec.square(5)] * 3
    assert stack.expanded(1) == [ConvSpec.square(3)]


def test_stack_resolution_mismatch():
    stack = LayerStackSpec([ConvSpec.square(3, dilation=8, padding=0)])
    with pytest.raises(ShapeError, match="layer 1"):
        propagate(stack, np.zeros((10, 10), np.uint8))
    with pytest.raises(ShapeError):
        propagate(stack, np.zeros((10, 10), np.uint8), keep_masks=True)
    with pytest.raises(ValueError):
        LayerStackSpec([])


def test_reference_stacks():
    base, dil = baseline_stack(20), dilated_stack(20)
    assert len(base.layers) == len(dil.layers) == 20
    assert all(s == ConvSpec.square(3) for s in base.layers)
    assert [s.dilation for s in dil.layers[:10]] == [1, 1, 1, 1, 2, 4, 8, 2, 4, 8]
    assert all(s.stride == 1 and s.padding == s.dilation for s in dil.layers)


# ------------------------------------------------------------- experiment

def small_config(**kw):
    kw.setdefault("resolution", (64, 64))
    kw.setdefault("per_bucket", 6)
    kw.setdefault("mask_count", kw["per_bucket"] * len(kw.get("buckets", DEFAULT_BUCKETS)))
    return MaskExperimentConfig(**kw)


def test_experiment_rows_and_ordering():
    rows = run_transparency_experiment(small_config())
    assert len(rows) == 12
    base = [r for r in rows if r.stack == "baseline"]
    dil = [r for r in rows if r.stack == "dilated"]
    for b, d in zip(base, dil):
        assert (b.bucket_lo, b.bucket_hi) == (d.bucket_lo, d.bucket_hi)
        assert d.mean_layers <= b.mean_layers
        assert b.min_layers <= b.mean_layers <= b.max_layers


def test_experiment_is_deterministic_and_worker_independent():
    a = rows_to_csv(run_transparency_experiment(small_config(per_bucket=3)))
    b = rows_to_csv(run_transparency_experiment(small_config(per_bucket=3)))
    c = rows_to_csv(run_transparency_experiment(small_config(per_bucket=3, workers=2)))
    assert a == b == c


def test_experiment_cap_one_counts_misses():
    rows = run_transparency_experiment(small_config(cap=1, per_bucket=3))
    high = [r for r in rows if r.bucket_lo >= 0.3]
    assert all(r.not_reached > 0 for r in high)
    assert all(r.max_layers <= 1 for r in rows)


def test_experiment_single_pixel_closed_form():
    cfg = small_config(resolution=(33, 33), per_bucket=2, cap=20)
    stacks = [LayerStackSpec([ConvSpec.square(3)], "m1"), LayerStackSpec([ConvSpec.square(5)], "m2"),
              LayerStackSpec([ConvSpec.square(7)], "m3")]
    rows = run_transparency_experiment(cfg, stacks, mask_source=lambda b, i: center_pixel(33))
    for row, half in zip(rows[::6], (1, 2, 3)):
        expected = min(single_pixel_layers(16, 1, half), cfg.cap)
        assert row.mean_layers == expected
        assert row.not_reached == (2 if math.ceil(16 / half) > cfg.cap else 0)


def test_experiment_needs_two_stacks():
    with pytest.raises(ValueError):
        run_transparency_experiment(small_config(), [baseline_stack()])


def test_csv_format():
    rows = run_transparency_experiment(small_config(per_bucket=2))
    text = rows_to_csv(rows)
    lines = text.split("\n")
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[-1] == "" and "\r" not in text
    fields = lines[1].split(",")
    assert fields[0] == "baseline" and fields[1] == "0.00" and fields[2] == "0.10"
    assert len(fields[3].split(".")[1]) == 2


# ----------------------------------------------------------------- config

def test_config_defaults():
    cfg = parse_experiment_config("")
    assert (cfg.mask_count, cfg.per_bucket, cfg.cap, cfg.resolution) == (12000, 2000, 20, (256, 256))
    assert cfg.buckets == DEFAULT_BUCKETS


def test_config_parse_and_override():
    text = "# experiment\nper_bucket = 5\nresolution = 64x48  # small\ncap=7\nstacks = baseline, dilated\n"
    cfg = parse_experiment_config(text, {"cap": 3, "seed": None})
    assert cfg.per_bucket == 5 and cfg.mask_count == 30
    assert cfg.resolution == (64, 48) and cfg.cap == 3


def test_config_buckets_and_count():
    cfg = parse_experiment_config("buckets = 0.0-0.2, 0.2-0.4\nmask_count = 10\nheight = 40")
    assert cfg.buckets == ((0.0, 0.2), (0.2, 0.4)) and cfg.per_bucket == 5
    assert cfg.resolution == (40, 256)


@pytest.mark.parametrize("text,line", [
    ("cap = 3\nbogus = 1\n", 2),
    ("\n\ncap = three\n", 3),
    ("cap 3\n", 1),
    ("# c\nbuckets = 0.5-0.2\n", 2),
    ("mask_count = 7\n", 1),
])
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ExperimentConfigError, match=f"line {line}"):
        parse_experiment_config(text)


def test_config_invariants():
    with pytest.raises(ExperimentConfigError):
        MaskExperimentConfig(mask_count=10, per_bucket=2)
    with pytest.raises(ExperimentConfigError):
        MaskExperimentConfig(cap=0)
    with pytest.raises(ExperimentConfigError):
        MaskExperimentConfig(stacks=("baseline", "nope"))
