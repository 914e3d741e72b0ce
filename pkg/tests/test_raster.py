import numpy as np
import pytest

from pupilkit.raster import (Rect, as_gray, build_integral, downsample,
                             gaussian_blur, load_gray, rect_sum, rect_sums,
                             save_gray)


def test_rect_clip_inside():
    r = Rect(2, 3, 4, 5).clipped(100, 100)
    assert r == Rect(2, 3, 4, 5)


def test_rect_clip_overhang():
    r = Rect(-2, 95, 10, 10).clipped(100, 100)
    assert (r.x, r.y, r.w, r.h) == (0, 95, 8, 5)
    assert not r.empty


def test_rect_clip_outside_is_empty():
    assert Rect(200, 200, 5, 5).clipped(100, 100).empty


def test_integral_matches_direct_sums():
    rng = np.random.default_rng(7)
    img = rng.integers(0, 256, (37, 53), dtype=np.uint8)
    ii = build_integral(img)
    for _ in range(200):
        x = int(rng.integers(0, 53))
        y = int(rng.integers(0, 37))
        w = int(rng.integers(1, 53 - x + 1))
        h = int(rng.integers(1, 37 - y + 1))
        expected = int(img[y:y + h, x:x + w].sum())
        assert rect_sum(ii, Rect(x, y, w, h)) == expected


def test_rect_sum_strict_raises_out_of_bounds():
    ii = build_integral(np.zeros((10, 10), dtype=np.uint8))
    with pytest.raises(ValueError):
        rect_sum(ii, Rect(5, 5, 10, 10), strict=True)


def test_rect_sum_clamps_by_default():
    img = np.full((10, 10), 3, dtype=np.uint8)
    ii = build_integral(img)
    assert rect_sum(ii, Rect(8, 8, 10, 10)) == 3 * 4


def test_rect_sums_vectorised_matches_scalar():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (20, 30), dtype=np.uint8)
    ii = build_integral(img)
    x0 = np.array([0, 5, 10])
    y0 = np.array([0, 2, 4])
    x1 = x0 + 5
    y1 = y0 + 6
    got = rect_sums(ii, x0, y0, x1, y1)
    for k in range(3):
        assert got[k] == img[y0[k]:y1[k], x0[k]:x1[k]].sum()


def test_integral_no_overflow_at_large_sizes():
    img = np.full((2000, 2000), 255, dtype=np.uint8)
    ii = build_integral(img)
    assert rect_sum(ii, Rect(0, 0, 2000, 2000)) == 255 * 2000 * 2000


def test_as_gray_rejects_color():
    with pytest.raises(ValueError):
        as_gray(np.zeros((4, 4, 3), dtype=np.uint8))


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (16, 24), dtype=np.uint8)
    path = tmp_path / "frame.png"
    save_gray(img, path)
    assert np.array_equal(load_gray(path), img)


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (12, 18), dtype=np.uint8)
    path = tmp_path / "frame.pgm"
    save_gray(img, path)
    assert np.array_equal(load_gray(path), img)


def test_pgm_with_comment(tmp_path):
    path = tmp_path / "c.pgm"
    body = bytes(range(6))
    path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + body)
    img = load_gray(path)
    assert img.shape == (2, 3)
    assert img[1, 2] == 5


def test_load_rejects_color_png(tmp_path):
    from PIL import Image

    path = tmp_path / "rgb.png"
    Image.new("RGB", (4, 4)).save(path)
    with pytest.raises(ValueError):
        load_gray(path)


def test_blur_zero_sigma_is_identity():
    img = np.arange(100, dtype=np.uint8).reshape(10, 10)
    assert np.array_equal(gaussian_blur(img, 0.0), img)


def test_blur_preserves_constant_field():
    img = np.full((20, 20), 77, dtype=np.uint8)
    assert np.array_equal(gaussian_blur(img, 2.0), img)


def test_downsample_block_mean_oracle():
    img = np.array([[0, 2, 4, 6],
                    [8, 10, 12, 14],
                    [1, 3, 5, 7],
                    [9, 11, 13, 15]], dtype=np.uint8)
    out = downsample(img, 2)
    assert out.shape == (2, 2)
    assert out[0, 0] == round((0 + 2 + 8 + 10) / 4)
    assert out[1, 1] == round((5 + 7 + 13 + 15) / 4)


def test_downsample_identity():
    img = np.arange(16, dtype=np.uint8).reshape(4, 4)
    assert downsample(img, 1) is img
