import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adavsr.degrade import (BICUBIC_ALTERNATE, DegradationError,
                            DegradationTask, KernelSpec, MetaBatch,
                            TaskDistribution, TemporalOp, make_kernel,
                            make_meta_batch, sample_task, spatial_downscale,
                            task_from_line, task_to_line, temporal_downscale,
                            temporal_profile)
from adavsr.video import Video


def aniso(sigma1, sigma2, angle, support=13):
    return KernelSpec(kind="aniso_gaussian", sigma1=sigma1, sigma2=sigma2,
                      angle=angle, support=support)


def aniso_task(sigma1=1.0, sigma2=1.0, angle=0.0, support=13,
               temporal="alternate"):
    return DegradationTask(kernel=aniso(sigma1, sigma2, angle, support),
                           temporal=TemporalOp(temporal))


def gaussian_oracle(sigma1, sigma2, angle, support):
    """Independent pointwise construction of the rotated Gaussian."""
    half = (support - 1) // 2
    k = np.zeros((support, support))
    for iy, y in enumerate(range(-half, half + 1)):
        for ix, x in enumerate(range(-half, half + 1)):
            u = x * math.cos(angle) + y * math.sin(angle)
            w = -x * math.sin(angle) + y * math.cos(angle)
            k[iy, ix] = math.exp(-0.5 * ((u / sigma1) ** 2 + (w / sigma2) ** 2))
    return k / k.sum()


# ---------------------------------------------------------------------------
# kernels


def test_kernel_normalized_and_nonnegative():
    k = make_kernel(aniso(1.3, 0.4, 0.71))
    assert k.min() >= 0.0
    assert abs(k.sum() - 1.0) < 1e-6


def test_isotropic_kernel_is_rotationally_symmetric():
    k = make_kernel(aniso(1.0, 1.0, 0.0))
    assert np.abs(k - k.T).max() < 1e-12
    assert np.abs(k - np.rot90(k)).max() < 1e-12
    assert abs(k.sum() - 1.0) < 1e-6


def test_rotating_isotropic_kernel_is_identity():
    k0 = make_kernel(aniso(1.0, 1.0, 0.0))
    k60 = make_kernel(aniso(1.0, 1.0, math.pi / 3))
    assert np.abs(k0 - k60).max() < 1e-9


def test_quarter_turn_equals_transpose():
    k0 = make_kernel(aniso(2.0, 0.5, 0.0))
    k90 = make_kernel(aniso(2.0, 0.5, math.pi / 2))
    assert np.abs(k90 - k0.T).max() < 1e-9
    # against the independent pointwise oracle at both angles
    assert np.abs(k0 - gaussian_oracle(2.0, 0.5, 0.0, 13)).max() < 1e-12
    assert np.abs(k90 - gaussian_oracle(2.0, 0.5, math.pi / 2, 13)).max() < 1e-12


def test_make_kernel_rejects_bicubic():
    with pytest.raises(DegradationError, match="separable"):
        make_kernel(KernelSpec(kind="bicubic"))


def test_kernel_spec_validation():
    with pytest.raises(DegradationError):
        aniso(0.05, 1.0, 0.0)           # sigma below range
    with pytest.raises(DegradationError):
        aniso(1.0, 1.0, -0.1)           # angle out of range
    with pytest.raises(DegradationError):
        aniso(1.0, 1.0, 0.0, support=12)  # even support
    with pytest.raises(DegradationError):
        aniso(3.5, 1.0, 0.0, support=13)  # support too small for sigma


@settings(max_examples=40, deadline=None)
@given(sigma1=st.floats(0.2, 4.0), sigma2=st.floats(0.2, 4.0),
       angle=st.floats(0.0, math.pi, exclude_max=True))
def test_every_kernel_normalized(sigma1, sigma2, angle):
    support = max(13, 4 * math.ceil(max(sigma1, sigma2)) + 1)
    k = make_kernel(aniso(sigma1, sigma2, angle, support))
    assert k.min() >= 0.0
    assert abs(k.sum() - 1.0) < 1e-6


# ---------------------------------------------------------------------------
# spatial downscale


def test_downscale_constant_video_any_kernel():
    v = Video(np.full((2, 16, 16, 1), 0.5))
    for task in [aniso_task(1.0, 0.5, 0.3), BICUBIC_ALTERNATE]:
        out = spatial_downscale(v, task)
        assert (out.height, out.width, out.frame_count) == (4, 4, 2)
        assert np.abs(out.pixels - 0.5).max() < 1e-9


def test_downscale_shape_64_to_16():
    v = Video(np.random.default_rng(0).random((3, 64, 64, 1)))
    out = spatial_downscale(v, aniso_task())
    assert (out.height, out.width) == (16, 16)
    assert out.frame_count == 3


def test_downscale_requires_divisibility():
    v = Video(np.zeros((2, 18, 16, 1)))
    with pytest.raises(DegradationError, match="divisible"):
        spatial_downscale(v, aniso_task())


def downscale_oracle(v, kernel, stride=4, offset=2):
    """Direct double-loop reflect-padded convolution + stride subsampling."""
    pad = (kernel.shape[0] - 1) // 2
    padded = np.pad(v.pixels, ((0, 0), (pad, pad), (pad, pad), (0, 0)),
                    mode="reflect")
    m, h, w, c = v.pixels.shape
    out = np.zeros((m, h // stride, w // stride, c))
    for t in range(m):
        for i in range(h // stride):
            for j in range(w // stride):
                for ch in range(c):
                    acc = 0.0
                    for u in range(kernel.shape[0]):
                        for vv in range(kernel.shape[1]):
                            acc += (kernel[u, vv]
                                    * padded[t, offset + stride * i + u,
                                             offset + stride * j + vv, ch])
                    out[t, i, j, ch] = acc
    return np.clip(out, 0.0, 1.0)


def test_downscale_single_bright_pixel_matches_conv_oracle():
    pixels = np.zeros((2, 24, 24, 1))
    pixels[:, 11, 13, 0] = 1.0
    v = Video(pixels)
    task = aniso_task(1.0, 1.0, 0.0)
    out = spatial_downscale(v, task)
    expected = downscale_oracle(v, make_kernel(task.kernel))
    assert np.abs(out.pixels - expected).max() < 1e-6


def test_downscale_random_videos_match_conv_oracle():
    rng = np.random.default_rng(5)
    for trial in range(3):
        v = Video(rng.random((2, 32, 32, 1)))
        task = aniso_task(rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0),
                          rng.uniform(0, math.pi / 2))
        out = spatial_downscale(v, task)
        expected = downscale_oracle(v, make_kernel(task.kernel))
        assert np.abs(out.pixels - expected).max() < 1e-6


# ---------------------------------------------------------------------------
# temporal ops


def test_alternate_keeps_even_indices():
    pixels = np.stack([np.full((4, 4, 1), i / 10) for i in range(7)])
    out = temporal_downscale(Video(pixels), TemporalOp("alternate"))
    assert out.frame_count == 4
    assert np.allclose(out.pixels[:, 0, 0, 0], [0.0, 0.2, 0.4, 0.6])


def test_average3_constant_video():
    v = Video(np.full((6, 4, 4, 1), 0.3))
    out = temporal_downscale(v, TemporalOp("average3"))
    assert out.frame_count == 3
    assert np.abs(out.pixels - 0.3).max() < 1e-12


def test_average3_matches_index_arithmetic_oracle():
    pixels = np.stack([np.full((4, 4, 1), k / 4) for k in range(5)])
    out = temporal_downscale(Video(pixels), TemporalOp("average3"))
    m = 5
    vals = [k / 4 for k in range(m)]
    expected = []
    for k in range((m + 1) // 2):
        window = [vals[min(max(i, 0), m - 1)] for i in (2 * k - 1, 2 * k, 2 * k + 1)]
        expected.append(sum(window) / 3)
    assert np.allclose(out.pixels[:, 0, 0, 0], expected, atol=1e-12)


def test_temporal_downscale_needs_three_frames():
    with pytest.raises(DegradationError, match="M >= 3"):
        temporal_downscale(Video(np.zeros((2, 4, 4, 1))), TemporalOp("alternate"))


@settings(max_examples=20, deadline=None)
@given(m=st.integers(3, 9), kind=st.sampled_from(["alternate", "average3"]))
def test_temporal_length_is_ceil_half(m, kind):
    v = Video(np.random.default_rng(m).random((m, 4, 4, 1)))
    out = temporal_downscale(v, TemporalOp(kind))
    assert out.frame_count == (m + 1) // 2


# ---------------------------------------------------------------------------
# temporal profile


def test_profile_two_frames_reduces_to_average():
    rng = np.random.default_rng(1)
    v = Video(rng.random((2, 6, 6, 1)))
    out = temporal_profile(v)
    assert out.frame_count == 3
    assert np.abs(out.pixels[1] - (v.pixels[0] + v.pixels[1]) / 2).max() < 1e-9


def test_profile_constant_video():
    v = Video(np.full((5, 4, 4, 1), 0.8))
    out = temporal_profile(v)
    assert out.frame_count == 9
    assert np.abs(out.pixels - 0.8).max() < 1e-12


def profile_oracle(v):
    """Analytic clamped-stencil cubic interpolation, frame by frame."""
    m = v.frame_count
    out = [None] * (2 * m - 1)
    get = lambda i: v.pixels[min(max(i, 0), m - 1)]
    for k in range(m):
        out[2 * k] = v.pixels[k]
    for k in range(m - 1):
        out[2 * k + 1] = (-get(k - 1) + 9 * get(k) + 9 * get(k + 1) - get(k + 2)) / 16
    return np.stack(out)


def test_profile_linear_ramp():
    # cubic reproduces linear data: interior midpoints are exact ramp
    # midpoints; the clamped edge stencils follow the analytic oracle
    m = 6
    pixels = np.stack([np.full((4, 4, 1), 0.1 + 0.1 * k) for k in range(m)])
    v = Video(pixels)
    out = temporal_profile(v)
    expected = profile_oracle(v)
    assert np.abs(out.pixels - expected).max() < 1e-12
    for k in range(1, m - 2):  # full stencil in range
        midpoint = 0.1 + 0.1 * (k + 0.5)
        assert np.abs(out.pixels[2 * k + 1] - midpoint).max() < 1e-6


def test_profile_random_video_matches_oracle():
    rng = np.random.default_rng(9)
    v = Video(rng.random((5, 8, 8, 3)))
    assert np.abs(temporal_profile(v).pixels - profile_oracle(v)).max() < 1e-12


def test_profile_passes_through_inputs():
    rng = np.random.default_rng(2)
    v = Video(rng.random((4, 4, 4, 1)))
    out = temporal_profile(v)
    assert np.array_equal(out.pixels[0::2], v.pixels)


# ---------------------------------------------------------------------------
# task sampling


def test_sample_task_deterministic():
    dist = TaskDistribution(rng_seed=7)
    assert sample_task(dist, 5) == sample_task(dist, 5)
    assert sample_task(dist, 5) != sample_task(dist, 6)


def test_sample_task_parameter_ranges():
    dist = TaskDistribution(rng_seed=1)
    for i in range(1000):
        t = sample_task(dist, i)
        k = t.kernel
        assert 0.2 <= k.sigma1 <= 4.0 and 0.2 <= k.sigma2 <= 4.0
        assert 0.0 <= k.angle < math.pi
        assert k.support >= 4 * math.ceil(max(k.sigma1, k.sigma2)) + 1


def test_sample_task_temporal_frequencies():
    dist = TaskDistribution(rng_seed=2)
    kinds = [sample_task(dist, i).temporal.kind for i in range(1000)]
    frac = kinds.count("alternate") / 1000
    assert 0.4 <= frac <= 0.6
    assert 0.4 <= 1 - frac <= 0.6


def test_sample_task_respects_custom_ranges():
    dist = TaskDistribution(rng_seed=3, sigma_min=0.5, sigma_max=1.5,
                            angle_min=0.2, angle_max=0.4)
    for i in range(100):
        t = sample_task(dist, i)
        assert 0.5 <= t.kernel.sigma1 <= 1.5
        assert 0.2 <= t.kernel.angle <= 0.4


# ---------------------------------------------------------------------------
# meta batches


def toy_hr_videos(count=2, frames=7, size=64, seed=0):
    rng = np.random.default_rng(seed)
    return [Video(rng.random((frames, size, size, 1))) for _ in range(count)]


def test_meta_batch_structure():
    videos = toy_hr_videos(count=4)
    mb = make_meta_batch(videos, TaskDistribution(rng_seed=4), draw_index=0)
    assert len(mb.train_set) == 4 and len(mb.test_set) == 4
    assert mb.task_train != mb.task_test
    tr = mb.train_set[0]
    # source 64x64x7 -> V_lr 16x16x(4->3 trimmed) -> V_s 4x4x3 -> V_ts 4x4x2
    assert (tr.high.height, tr.high.frame_count) == (16, 3)
    assert (tr.mid.height, tr.mid.frame_count) == (4, 3)
    assert (tr.low.height, tr.low.frame_count) == (4, 2)
    te = mb.test_set[0]
    assert (te.high.height, te.high.frame_count) == (64, 7)
    assert (te.mid.height, te.mid.frame_count) == (16, 7)
    assert (te.low.height, te.low.frame_count) == (16, 4)


def test_meta_batch_frame_arithmetic_consistent():
    mb = make_meta_batch(toy_hr_videos(), TaskDistribution(rng_seed=5))
    for triple in mb.train_set + mb.test_set:
        assert triple.mid.frame_count == 2 * triple.low.frame_count - 1
        assert triple.high.height == 4 * triple.mid.height


def test_meta_batch_recompute_v_s_bit_for_bit():
    mb = make_meta_batch(toy_hr_videos(seed=3), TaskDistribution(rng_seed=6))
    for triple in mb.train_set:
        recomputed = spatial_downscale(triple.high, mb.task_train)
        assert np.array_equal(recomputed.pixels, triple.mid.pixels)
    for triple in mb.test_set:
        recomputed = temporal_downscale(triple.mid, mb.task_test.temporal)
        assert np.array_equal(recomputed.pixels, triple.low.pixels)


def test_meta_batch_resamples_equal_test_task():
    # degenerate sigma/angle ranges force identical kernels, so only the
    # temporal op can distinguish tasks; the builder must still return
    # distinct tasks
    dist = TaskDistribution(rng_seed=8, sigma_min=1.0, sigma_max=1.0,
                            angle_min=0.5, angle_max=0.5)
    for draw in range(5):
        mb = make_meta_batch(toy_hr_videos(count=1), dist, draw_index=draw)
        assert mb.task_train != mb.task_test
        assert mb.task_train.temporal != mb.task_test.temporal


def test_meta_batch_test_crop():
    videos = toy_hr_videos(count=2, size=128)
    mb = make_meta_batch(videos, TaskDistribution(rng_seed=9), test_crop=64)
    for te in mb.test_set:
        assert (te.high.height, te.high.width) == (64, 64)
        assert te.mid.height == 16


def test_meta_batch_rejects_small_videos():
    with pytest.raises(DegradationError, match="divisible"):
        make_meta_batch(toy_hr_videos(size=24), TaskDistribution(rng_seed=1))
    with pytest.raises(DegradationError, match="frames"):
        make_meta_batch(toy_hr_videos(frames=4), TaskDistribution(rng_seed=1))


def test_meta_batch_deterministic():
    videos = toy_hr_videos()
    a = make_meta_batch(videos, TaskDistribution(rng_seed=10), draw_index=3)
    b = make_meta_batch(videos, TaskDistribution(rng_seed=10), draw_index=3)
    assert a.task_train == b.task_train and a.task_test == b.task_test
    assert all(x.low == y.low for x, y in zip(a.train_set, b.train_set))


# ---------------------------------------------------------------------------
# task serialization


def test_task_line_round_trip_bit_exact():
    dist = TaskDistribution(rng_seed=11)
    for i in range(20):
        task = sample_task(dist, i)
        line = task_to_line(task)
        assert task_from_line(line) == task
        assert task_to_line(task_from_line(line)) == line


def test_task_line_format():
    task = DegradationTask(
        kernel=KernelSpec(kind="aniso_gaussian", sigma1=1.3, sigma2=0.4,
                          angle=0.71, support=13),
        temporal=TemporalOp("alternate"))
    line = task_to_line(task)
    assert line == ("kind=aniso_gaussian sigma1=1.3 sigma2=0.4 angle=0.71 "
                    "support=13 temporal=alternate")


def test_task_line_bicubic():
    line = task_to_line(BICUBIC_ALTERNATE)
    assert line == "kind=bicubic temporal=alternate"
    assert task_from_line(line) == BICUBIC_ALTERNATE


def test_task_line_rejects_garbage():
    with pytest.raises(DegradationError):
        task_from_line("kind=aniso_gaussian nonsense")
    with pytest.raises(DegradationError):
        task_from_line("kind=bicubic temporal=alternate extra=1")
