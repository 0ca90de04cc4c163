import numpy as np
import pytest

from adavsr.resample import (cubic_kernel, cubic_scale_spatial, midpoint_taps,
                             resample_axis, resample_taps)


def test_cubic_kernel_known_values():
    assert cubic_kernel(np.array([0.0]))[0] == pytest.approx(1.0)
    assert cubic_kernel(np.array([0.5]))[0] == pytest.approx(9 / 16)
    assert cubic_kernel(np.array([1.5]))[0] == pytest.approx(-1 / 16)
    assert cubic_kernel(np.array([2.0]))[0] == 0.0
    assert cubic_kernel(np.array([1.0]))[0] == pytest.approx(0.0)


def test_cubic_kernel_partition_of_unity():
    # 4 consecutive taps around any fractional position sum to 1
    for f in np.linspace(0, 0.999, 17):
        taps = cubic_kernel(np.array([-1 - f, -f, 1 - f, 2 - f]))
        assert taps.sum() == pytest.approx(1.0, abs=1e-12)


def test_resample_taps_weights_normalized():
    for in_size, out_size, anti in [(16, 4, True), (16, 64, False), (8, 8, False)]:
        idx, w = resample_taps(in_size, out_size, anti)
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert idx.min() >= 0 and idx.max() < in_size


def test_upscale_reproduces_linear_ramp_interior():
    # cubic interpolation is exact on linear data away from clamped edges
    x = np.arange(16, dtype=np.float64)
    up = resample_axis(x, 0, 64, antialias=False)
    centers = (np.arange(64) + 0.5) / 4.0 - 0.5
    interior = (centers >= 1) & (centers <= 14)
    assert np.allclose(up[interior], centers[interior], atol=1e-12)


def test_downscale_constant_preserved():
    arr = np.full((12, 16, 1), 0.37)
    out = cubic_scale_spatial(arr, 3, 4)
    assert out.shape == (3, 4, 1)
    assert np.allclose(out, 0.37, atol=1e-12)


def test_downscale_matches_direct_loop_oracle():
    rng = np.random.default_rng(11)
    arr = rng.random((16, 16, 1))
    out = cubic_scale_spatial(arr, 4, 4)

    def taps_oracle(in_size, out_size):
        scale = in_size / out_size
        rows = []
        for o in range(out_size):
            center = (o + 0.5) * scale - 0.5
            pairs = []
            for u in range(-2 * int(scale) - 2, in_size + 2 * int(scale) + 2):
                wgt = cubic_kernel(np.array([(u - center) / scale]))[0] / scale
                if wgt != 0.0:
                    pairs.append((min(max(u, 0), in_size - 1), wgt))
            total = sum(w for _, w in pairs)
            rows.append([(i, w / total) for i, w in pairs])
        return rows

    rows = taps_oracle(16, 4)
    expected = np.zeros((4, 4, 1))
    for oi, row_taps in enumerate(rows):
        for oj, col_taps in enumerate(rows):
            acc = 0.0
            for i, wi in row_taps:
                for j, wj in col_taps:
                    acc += wi * wj * arr[i, j, 0]
            expected[oi, oj, 0] = acc
    assert np.abs(out - expected).max() < 1e-12


def test_midpoint_taps_two_samples_reduce_to_average():
    idx, w = midpoint_taps(2)
    assert idx.shape == (1, 4)
    # clamped stencil: (-1, 9, 9, -1)/16 over (f0, f0, f1, f1)
    vals = np.array([3.0, 5.0])
    mid = (vals[idx[0]] * w).sum()
    assert mid == pytest.approx(4.0)
