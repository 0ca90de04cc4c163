import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adavsr.video import Video, VideoError, extract_patch, load_video, save_video


def random_video(rng, m=4, h=16, w=16, c=1):
    return Video(rng.random((m, h, w, c)))


def test_video_shape_accessors():
    v = Video(np.zeros((7, 256, 448, 3)))
    assert (v.frame_count, v.height, v.width, v.channels) == (7, 256, 448, 3)


def test_video_rejects_single_frame():
    with pytest.raises(VideoError, match="frame_count < 2"):
        Video(np.zeros((1, 8, 8, 1)))


def test_video_rejects_bad_channels():
    with pytest.raises(VideoError):
        Video(np.zeros((2, 8, 8, 2)))


def test_video_pixels_immutable():
    v = Video(np.zeros((2, 4, 4, 1)))
    with pytest.raises(ValueError):
        v.pixels[0, 0, 0, 0] = 1.0


def test_load_video_from_saved_grayscale(tmp_path):
    rng = np.random.default_rng(0)
    v = random_video(rng, m=4, h=24, w=24, c=1)
    save_video(v, tmp_path / "clip")
    loaded = load_video(tmp_path / "clip")
    assert (loaded.frame_count, loaded.height, loaded.width, loaded.channels) == (4, 24, 24, 1)


def test_save_names_are_zero_padded(tmp_path):
    v = Video(np.full((7, 8, 8, 1), 0.5))
    save_video(v, tmp_path / "clip")
    names = sorted(p.name for p in (tmp_path / "clip").iterdir())
    assert names == [f"{i:06d}.png" for i in range(7)]


def test_round_trip_constant_video(tmp_path):
    v = Video(np.full((3, 8, 8, 3), 0.5))
    save_video(v, tmp_path / "clip")
    loaded = load_video(tmp_path / "clip")
    assert np.abs(loaded.pixels - v.pixels).max() <= 1.0 / 255.0


@pytest.mark.parametrize("channels", [1, 3])
def test_round_trip_random_video_quantization_bound(tmp_path, channels):
    rng = np.random.default_rng(7)
    for trial in range(5):
        v = random_video(rng, m=3, h=12, w=10, c=channels)
        d = tmp_path / f"clip{channels}_{trial}"
        save_video(v, d)
        loaded = load_video(d)
        assert np.abs(loaded.pixels - v.pixels).max() <= 1.0 / 255.0


def test_load_single_frame_directory_fails(tmp_path):
    v = Video(np.zeros((2, 8, 8, 1)))
    save_video(v, tmp_path / "clip")
    (tmp_path / "clip" / "000001.png").unlink()
    with pytest.raises(VideoError, match="frame_count < 2"):
        load_video(tmp_path / "clip")


def test_load_missing_directory_names_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="no_such"):
        load_video(tmp_path / "no_such")


def test_load_empty_directory_fails(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(VideoError, match="no PNG frames"):
        load_video(tmp_path / "empty")


def test_load_mismatched_dimensions_names_offender(tmp_path):
    d = tmp_path / "clip"
    save_video(Video(np.zeros((2, 8, 8, 1))), d)
    save_video(Video(np.zeros((2, 9, 8, 1))), tmp_path / "other")
    (tmp_path / "other" / "000000.png").rename(d / "000002.png")
    with pytest.raises(VideoError, match="000002.png"):
        load_video(d)


def test_load_unreadable_file_names_offender(tmp_path):
    d = tmp_path / "clip"
    save_video(Video(np.zeros((2, 8, 8, 1))), d)
    (d / "000002.png").write_bytes(b"not a png at all")
    with pytest.raises(VideoError, match="000002.png"):
        load_video(d)


def test_frame_ordering_is_lexicographic(tmp_path):
    d = tmp_path / "clip"
    d.mkdir()
    from PIL import Image
    for name, value in [("b.png", 200), ("a.png", 10), ("c.png", 90)]:
        Image.fromarray(np.full((4, 4), value, dtype=np.uint8), mode="L").save(d / name)
    v = load_video(d)
    got = [int(round(v.pixels[i, 0, 0, 0] * 255)) for i in range(3)]
    assert got == [10, 200, 90]


def test_extract_patch_matches_slicing_oracle():
    rng = np.random.default_rng(3)
    v = random_video(rng, m=3, h=20, w=28, c=3)
    patch = extract_patch(v, top=4, left=8, size=12)
    # brute-force loop oracle
    expected = np.empty((3, 12, 12, 3))
    for t in range(3):
        for i in range(12):
            for j in range(12):
                expected[t, i, j] = v.pixels[t, 4 + i, 8 + j]
    assert np.array_equal(patch.pixels, expected)


def test_extract_patch_full_size_is_identity():
    rng = np.random.default_rng(4)
    v = random_video(rng, m=2, h=16, w=16)
    assert extract_patch(v, 0, 0, 16) == v


def test_extract_patch_constant_preserved():
    v = Video(np.full((2, 16, 16, 1), 0.25))
    p = extract_patch(v, 2, 3, 8)
    assert np.all(p.pixels == 0.25)


def test_extract_patch_out_of_bounds():
    v = Video(np.zeros((2, 16, 16, 1)))
    with pytest.raises(VideoError, match="exceeds"):
        extract_patch(v, 8, 8, 12)


@settings(max_examples=25, deadline=None)
@given(top=st.integers(0, 8), left=st.integers(0, 8), size=st.integers(1, 8))
def test_extract_patch_idempotent_and_equals_slice(top, left, size):
    rng = np.random.default_rng(top * 100 + left * 10 + size)
    v = random_video(rng, m=2, h=16, w=16)
    once = extract_patch(v, top, left, size)
    again = extract_patch(v, top, left, size)
    assert once == again
    assert np.array_equal(once.pixels,
                          v.pixels[:, top:top + size, left:left + size, :])
