import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from errors import DimensionError, FormatError, UsageError
from literals import MANIFEST_FILE, SAMPLES_CSV_HEADER
from models.config import RCDConfig
from models.range_image import AngularResolution, RangeImage
from numerics.gradcheck import grad_check
from numerics.tensor import Param
from rcd.block import RCDBlock
from rcd.checkpoint import load_arrays, load_params, read_manifest, save_params
from rcd.flops import flop_count, flop_count_for, standard_conv_flops
from rcd.gating import gate_weights, soft_range_gate
from rcd.pattern import (dilation_rate, footprint_width, grid_pattern, pattern_drift, transform_pattern)
from rcd.sampler import bilinear_sample, bilinear_sample_vjp
from rcd.viz import footprint_extent, footprint_rows, range_overlay, write_pgm, write_samples_csv
from verification import run_suite

RES = AngularResolution(0.05, 0.05)


def naive_block(x, ranges, valid, block: RCDBlock) -> np.ndarray:
    """Pixel-by-pixel reference of the block forward pass"""
    p, config, res = block.rcd_params, block.config, block.res
    height, width, _ = x.shape
    lam, gamma = p.nominal_width, p.gate_scale
    squeezed = x @ p.squeeze_w.value + p.squeeze_b.value
    passed = x @ p.pass_w.value + p.pass_b.value
    out = np.zeros((height, width, p.c_out))
    for i in range(height):
        for j in range(width):
            r = ranges[i, j] if valid[i, j] and ranges[i, j] > 0 else config.range_floor
            sigma = math.atan(lam / r)
            features = []
            for g_row, g_col in p.pattern.value:
                row = min(max(i + sigma * g_row / res.rad_per_pixel_row, 0.0), height - 1)
                col = (j + sigma * g_col / res.rad_per_pixel_col) % width
                if col >= width:
                    col -= width
                r0 = min(int(math.floor(row)), max(height - 2, 0))
                r1 = min(r0 + 1, height - 1)
                c0 = min(int(math.floor(col)), width - 1)
                c1 = (c0 + 1) % width
                fr, fc = row - r0, col - c0

                def lerp(image):
                    return ((1 - fr) * (1 - fc) * image[r0, c0] + (1 - fr) * fc * image[r0, c1]
                            + fr * (1 - fc) * image[r1, c0] + fr * fc * image[r1, c1])

                r_hat = lerp(ranges)
                weight = math.exp(-0.5 * ((r_hat - ranges[i, j]) / gamma) ** 2) / (gamma * math.sqrt(2 * math.pi))
                features.extend(lerp(squeezed) * weight)
            pre = np.concatenate([features, passed[i, j]]) @ p.final_w.value + p.final_b.value
            normed = (pre - pre.mean()) / math.sqrt(pre.var() + config.norm_eps)
            normed = normed * p.norm_gain.value + p.norm_bias.value
            out[i, j] = np.where(normed > 0, normed, np.expm1(np.minimum(normed, 0.0)))
    return out


def random_block(rng, c_in=3, c_out=4, rows=2, cols=4, **overrides) -> RCDBlock:
    config = RCDConfig(pattern_rows=rows, pattern_cols=cols, sample_channels=2, **overrides)
    return RCDBlock.initialize(c_in, c_out, config, RES, rng)


def test_dilation_rate_examples():
    assert dilation_rate(1.0, 1.0) == pytest.approx(math.pi / 4)
    assert dilation_rate(2.0, 1.0) == pytest.approx(0.463648, abs=1e-6)
    assert dilation_rate(0.0, 1.0, range_floor=0.5) == pytest.approx(math.atan(2.0))


def test_dilation_rate_is_monotone():
    r = np.linspace(0.1, 100.0, 1000)
    assert np.all(np.diff(dilation_rate(r, 1.0)) < 0)
    lam = np.linspace(0.1, 10.0, 1000)
    assert np.all(np.diff(np.arctan(lam / 7.0)) > 0)


def test_metric_footprint_is_constant_far_from_the_sensor():
    lam = 1.3
    r = np.linspace(5 * lam, 100 * lam, 1000)
    assert np.max(np.abs(footprint_width(r, lam) - lam) / lam) <= 0.02


def test_grid_pattern():
    pattern = grid_pattern(8, 8)
    assert pattern.shape == (64, 2)
    np.testing.assert_allclose(pattern.mean(axis=0), 0.0, atol=1e-15)
    assert pattern.min() == pytest.approx(-0.5)
    assert pattern.max() == pytest.approx(0.5)


def test_zero_offsets_sit_on_the_pixel():
    ranges = np.full((3, 5), 10.0)
    transform = transform_pattern(ranges, np.ones((3, 5), dtype=bool), np.zeros((2, 2)), 1.0, RES)
    np.testing.assert_array_equal(transform.locations[1, 2], [[1.0, 2.0], [1.0, 2.0]])


def test_far_samples_collapse_onto_the_pixel():
    ranges = np.full((3, 5), 1e4)
    transform = transform_pattern(ranges, np.ones((3, 5), dtype=bool), grid_pattern(8, 8), 1.0,
                                  AngularResolution(0.01, 0.01))
    offsets = transform.locations[1, 2] - np.array([1.0, 2.0])
    assert np.max(np.abs(offsets)) < 0.01


def test_columns_wrap_around_the_azimuth():
    sigma = math.atan(1.0)
    res = AngularResolution(0.1, sigma / 4)
    transform = transform_pattern(np.ones((1, 4)), np.ones((1, 4), dtype=bool), np.array([[0.0, -0.5]]), 1.0, res)
    assert transform.locations[0, 0, 0, 1] == pytest.approx(2.0)
    assert transform.locations[0, 0, 0, 0] == 0.0


def test_bilinear_sample_examples():
    x = np.array([[[1.0], [3.0]]])
    assert bilinear_sample(x, np.array([0.0, 0.5]))[0] == pytest.approx(2.0)
    wrapped = np.zeros((2, 4, 1))
    wrapped[:, 3] = 4.0
    wrapped[:, 0] = 8.0
    assert bilinear_sample(wrapped, np.array([1.0, 3.5]))[0] == pytest.approx(6.0)


def test_bilinear_sample_is_exact_at_integer_locations(rng):
    x = rng.normal(size=(3, 4, 2))
    rows, cols = np.meshgrid(np.arange(3.0), np.arange(4.0), indexing="ij")
    sampled = bilinear_sample(x, np.stack([rows, cols], axis=-1))
    np.testing.assert_array_equal(sampled, x)


def test_sampling_wraps_consistently(rng):
    x = rng.normal(size=(3, 4, 2))
    locations = np.array([[0.25, 1.5], [1.75, 3.25], [2.0, 0.125]])
    shifted = locations + np.array([0.0, 4.0])
    np.testing.assert_allclose(bilinear_sample(x, locations), bilinear_sample(x, shifted), atol=1e-12)
    upstream = rng.normal(size=(3, 2))
    for a, b in zip(bilinear_sample_vjp(upstream, x, locations), bilinear_sample_vjp(upstream, x, shifted)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_gate_weight_examples():
    assert gate_weights(np.array([[[5.0]]]), np.array([[5.0]]), 1.0)[0, 0, 0] == pytest.approx(0.398942, abs=1e-6)
    gamma = 2.0
    weight = gate_weights(np.array([[[11.0]]]), np.array([[5.0]]), gamma)[0, 0, 0]
    assert weight == pytest.approx(0.398942 * math.exp(-4.5) / gamma, rel=1e-5)


@given(st.floats(min_value=0.0, max_value=20.0), st.floats(min_value=0.1, max_value=5.0))
def test_gate_depends_on_absolute_range_difference(delta, gamma):
    center = np.array([[30.0]])
    above = gate_weights(np.array([[[30.0 + delta]]]), center, gamma)
    below = gate_weights(np.array([[[30.0 - delta]]]), center, gamma)
    np.testing.assert_allclose(above, below, rtol=1e-9)


def test_soft_range_gate_scales_features():
    sampled = np.ones((1, 1, 2, 3))
    gated, weights = soft_range_gate(sampled, np.array([[[5.0, 8.0]]]), np.array([[5.0]]), 1.0)
    np.testing.assert_allclose(gated[0, 0, 0], weights[0, 0, 0])
    assert weights[0, 0, 0] > weights[0, 0, 1]


def test_block_zero_input_gives_zero_output(rng):
    block = random_block(rng)
    out = block.forward(np.zeros((3, 5, 3)), rng.uniform(5.0, 30.0, size=(3, 5)), np.ones((3, 5), dtype=bool))
    np.testing.assert_array_equal(out, 0.0)


def test_block_matches_naive_reference(rng):
    block = random_block(rng, c_in=5, c_out=6, rows=3, cols=3, lambda_init=2.0)
    x = rng.normal(size=(4, 8, 5))
    ranges = rng.uniform(3.0, 30.0, size=(4, 8))
    valid = rng.uniform(size=(4, 8)) > 0.2
    ranges[~valid] = 0.0
    np.testing.assert_allclose(block.forward(x, ranges, valid), naive_block(x, ranges, valid, block), atol=1e-10)


def test_single_pixel_block(rng):
    block = random_block(rng, c_in=3, c_out=4)
    p = block.rcd_params
    x = rng.normal(size=(1, 1, 3))
    out = block.forward(x, np.array([[12.0]]), np.ones((1, 1), dtype=bool))
    peak = 1.0 / (p.gate_scale * math.sqrt(2 * math.pi))
    squeezed = x[0, 0] @ p.squeeze_w.value + p.squeeze_b.value
    concat = np.concatenate([np.tile(squeezed * peak, p.n_samples), x[0, 0] @ p.pass_w.value + p.pass_b.value])
    pre = concat @ p.final_w.value + p.final_b.value
    normed = (pre - pre.mean()) / math.sqrt(pre.var() + block.config.norm_eps)
    np.testing.assert_allclose(out[0, 0], np.where(normed > 0, normed, np.expm1(np.minimum(normed, 0.0))),
                               atol=1e-12)


def test_fixed_dilation_matches_integer_gather(rng):
    res = AngularResolution(0.0625, 0.0625)
    config = RCDConfig(pattern_rows=2, pattern_cols=2, sample_channels=2, fixed_dilation=0.125)
    block = RCDBlock.initialize(3, 4, config, res, rng)
    p = block.rcd_params
    height, width = 4, 6
    x = rng.normal(size=(height, width, 3))
    ranges = rng.uniform(5.0, 30.0, size=(height, width))
    out = block.forward(x, ranges, np.ones((height, width), dtype=bool))

    offsets = np.rint(p.pattern.value * 0.125 / 0.0625).astype(int)
    squeezed = x @ p.squeeze_w.value + p.squeeze_b.value
    gamma = p.gate_scale
    expected = np.zeros_like(out)
    for i in range(height):
        for j in range(width):
            features = []
            for d_row, d_col in offsets:
                r, c = min(max(i + d_row, 0), height - 1), (j + d_col) % width
                weight = math.exp(-0.5 * ((ranges[r, c] - ranges[i, j]) / gamma) ** 2) / (gamma * math.sqrt(2 * math.pi))
                features.extend(squeezed[r, c] * weight)
            pre = np.concatenate([features, x[i, j] @ p.pass_w.value + p.pass_b.value]) @ p.final_w.value
            pre = pre + p.final_b.value
            normed = (pre - pre.mean()) / math.sqrt(pre.var() + config.norm_eps)
            expected[i, j] = np.where(normed > 0, normed, np.expm1(np.minimum(normed, 0.0)))
    np.testing.assert_allclose(out, expected, atol=1e-12)
    assert "log_lambda" not in block.params()


@pytest.mark.parametrize("seed", range(1, 11))
def test_block_gradient_check(seed):
    rng = np.random.default_rng(seed)
    block = random_block(rng, lambda_init=1.5, gamma_init=2.0)
    ranges = rng.uniform(4.0, 40.0, size=(3, 5))
    valid = rng.uniform(size=(3, 5)) > 0.1
    report = grad_check(block, [rng.normal(size=(3, 5, 3)), ranges, valid], wrt=[0], seed=seed, h=1e-6)
    assert report.passed, report
    assert {"pattern", "log_lambda", "log_gamma"} <= set(report.errors)


def test_block_gradient_check_at_the_borders():
    rng = np.random.default_rng(7)
    # a wide footprint pushes most samples past the top and bottom rows and around the azimuth
    block = random_block(rng, lambda_init=6.0)
    ranges = rng.uniform(3.0, 8.0, size=(2, 4))
    report = grad_check(block, [rng.normal(size=(2, 4, 3)), ranges, np.ones((2, 4), dtype=bool)], wrt=[0],
                        h=1e-6)
    assert report.passed, report


@pytest.mark.parametrize("seed", range(1, 11))
def test_sampler_gate_and_block_pass_gradient_check(seed):
    for report in run_suite(seed, (3, 5), composite=False):
        assert report.passed, report


def test_lambda_receives_a_gradient(rng):
    block = random_block(rng)
    block.forward(rng.normal(size=(3, 5, 3)), rng.uniform(4.0, 40.0, size=(3, 5)), np.ones((3, 5), dtype=bool))
    block.zero_grad()
    block.vjp(rng.normal(size=(3, 5, 4)))
    assert block.rcd_params.log_lambda.grad != 0.0
    assert np.any(block.rcd_params.pattern.grad != 0.0)


def test_block_vjp_is_linear(rng):
    block = random_block(rng)
    block.forward(rng.normal(size=(3, 5, 3)), rng.uniform(4.0, 40.0, size=(3, 5)), np.ones((3, 5), dtype=bool))
    upstream = rng.normal(size=(3, 5, 4))

    def gradients(scale: float):
        block.zero_grad()
        dx = block.vjp(scale * upstream)[0]
        return dx, {name: param.grad.copy() for name, param in block.params().items()}

    dx0, zero = gradients(0.0)
    np.testing.assert_array_equal(dx0, 0.0)
    assert all(np.all(grad == 0.0) for grad in zero.values())
    dx1, one = gradients(1.0)
    dx2, two = gradients(2.0)
    np.testing.assert_allclose(dx2, 2.0 * dx1, rtol=1e-12, atol=1e-14)
    for name in one:
        np.testing.assert_allclose(two[name], 2.0 * one[name], rtol=1e-12, atol=1e-14)


def test_block_errors(rng):
    block = random_block(rng)
    with pytest.raises(UsageError):
        block.vjp(np.zeros((3, 5, 4)))
    with pytest.raises(DimensionError):
        block.forward(np.zeros((3, 5, 2)), np.ones((3, 5)), np.ones((3, 5), dtype=bool))


def test_flop_counts():
    assert standard_conv_flops(7, 64, 64) == 401_408
    assert standard_conv_flops(5, 64, 64) == 204_800
    report = flop_count_for(RCDConfig())
    assert report.total == 45_440
    assert report.ratio >= 5
    sampler_free = flop_count(64, 64, 3, 0)
    assert sampler_free.total == 2 * standard_conv_flops(1, 64, 64) + 6 * 64


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"a.w": Param(rng.normal(size=(3, 2))), "a.b": Param(np.array(0.25))}
    save_params(tmp_path, params, {"lambda": 1.0, "gamma": 1.0, "n_samples": 64})
    manifest = read_manifest(tmp_path)
    assert manifest["params"]["a.w"]["shape"] == [3, 2]
    assert manifest["n_samples"] == 64
    restored = {"a.w": Param(np.zeros((3, 2))), "a.b": Param(np.array(0.0))}
    load_params(tmp_path, restored)
    np.testing.assert_allclose(restored["a.w"].value, params["a.w"].value, rtol=1e-6)
    assert float(restored["a.b"].value) == 0.25
    assert set(load_arrays(tmp_path)) == {"a.w", "a.b"}


def test_checkpoint_errors(tmp_path, rng):
    with pytest.raises(UsageError):
        read_manifest(tmp_path)
    save_params(tmp_path, {"w": Param(np.zeros(3))})
    with pytest.raises(FormatError):
        load_params(tmp_path, {"w": Param(np.zeros(4))})
    with pytest.raises(FormatError):
        load_params(tmp_path, {"w": Param(np.zeros(3)), "v": Param(np.zeros(1))})
    (tmp_path / MANIFEST_FILE).write_text(json.dumps({"format": 99, "params": {}}))
    with pytest.raises(FormatError):
        read_manifest(tmp_path)


def test_footprints_shrink_with_range():
    lam = 1.0
    res = AngularResolution(0.01, 0.01)
    extents = []
    for r in (5.0, 50.0):
        transform = transform_pattern(np.full((64, 128), r), np.ones((64, 128), dtype=bool), grid_pattern(8, 8),
                                      lam, res)
        extents.append(footprint_extent(transform, (32, 64)))
    expected = math.atan(lam / 5.0) / math.atan(lam / 50.0)
    assert extents[0][0] / extents[1][0] == pytest.approx(expected, rel=0.01)
    assert extents[0][1] / extents[1][1] == pytest.approx(expected, rel=0.01)


def test_viz_outputs(tmp_path):
    data = np.zeros((4, 8, 8))
    data[..., 0] = np.linspace(5.0, 40.0, 32).reshape(4, 8)
    image = RangeImage(data, np.ones((4, 8), dtype=bool))
    transform = transform_pattern(image.ranges, image.valid, grid_pattern(2, 2), 1.0, RES)
    rows = footprint_rows(transform, [(1, 2), (3, 7)])
    assert len(rows) == 8
    assert rows[0][:3] == (1, 2, 0)

    write_samples_csv(tmp_path / "samples.csv", rows)
    lines = (tmp_path / "samples.csv").read_text().splitlines()
    assert lines[0] == ",".join(SAMPLES_CSV_HEADER)
    assert len(lines) == 9

    overlay = range_overlay(image, rows)
    assert overlay.dtype == np.uint8
    for _, _, _, row, col in rows:
        assert overlay[int(round(row)), int(round(col)) % 8] == 255
    write_pgm(tmp_path / "overlay.pgm", overlay)
    payload = (tmp_path / "overlay.pgm").read_bytes()
    assert payload.startswith(b"P5\n8 4\n255\n")
    assert len(payload) == len(b"P5\n8 4\n255\n") + 32


def test_pattern_drift_reports_contraction():
    initial = grid_pattern(4, 4)
    learned = initial * 0.5
    summary = pattern_drift(initial, learned).summary()
    assert summary["mean_displacement"] > 0
    assert summary["inner_radial_change"] < 0
    assert summary["outer_radial_change"] < summary["inner_radial_change"]
