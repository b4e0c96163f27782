import math

import numpy as np
import pytest

from csnln.evaluation import EvalRow, evaluate, format_table, load_hr_dir, mean_row, model_upscaler
from csnln.heatmap import MARKER, false_color, grid_to_pixels, nearest_upscale, render
from csnln.imageio import bicubic_resize, degrade, rgb_to_y, save_png
from csnln.metrics import psnr, ssim
from csnln.network import TOY, init_csnln


def images(seed=0, count=2, shape=(26, 30)):
    rng = np.random.default_rng(seed)
    return [(f"im{k}", rng.integers(0, 256, size=shape + (3,), dtype=np.uint8)) for k in range(count)]


def oracle_stub(pairs):
    """An 'upscaler' that returns the ground truth for each LR it is handed."""
    lookup = {degrade(hr, 2).tobytes(): hr for _, hr in pairs}
    return lambda lr: lookup[lr.tobytes()]


def test_identity_stub_scores_infinite_psnr():
    pairs = images()
    rows = evaluate(pairs, 2, oracle_stub(pairs))
    assert all(math.isinf(r.psnr) and r.ssim == 1.0 for r in rows)
    assert "inf" in format_table(rows)


def test_bicubic_column_matches_direct_computation():
    pairs = images(1)
    rows = evaluate(pairs, 2, lambda lr: bicubic_resize(lr, 2 * lr.shape[0], 2 * lr.shape[1]))
    for (name, hr), row in zip(pairs, rows):
        base = bicubic_resize(degrade(hr, 2), *hr.shape[:2])
        assert row.name == name
        assert row.bicubic_psnr == psnr(rgb_to_y(base), rgb_to_y(hr), border_crop=2)
        assert row.bicubic_ssim == ssim(rgb_to_y(base), rgb_to_y(hr), border_crop=2)
        assert row.psnr == row.bicubic_psnr and row.ssim == row.bicubic_ssim


def test_hr_is_mod_cropped_and_border_crop_is_honoured():
    pairs = images(2, count=1, shape=(27, 31))
    seen = []

    def upscale(lr):
        seen.append(lr.shape)
        return bicubic_resize(lr, 2 * lr.shape[0], 2 * lr.shape[1])

    a = evaluate(pairs, 2, upscale)[0]
    b = evaluate(pairs, 2, upscale, border_crop=0)[0]
    assert seen[0] == (13, 15, 3)
    assert a.psnr != b.psnr


def test_wrong_output_size_is_error():
    with pytest.raises(ValueError):
        evaluate(images(), 2, lambda lr: lr)


def test_model_table_is_deterministic():
    up = model_upscaler(init_csnln(TOY, seed=0))
    pairs = images(3, shape=(24, 24))
    assert format_table(evaluate(pairs, 2, up)) == format_table(evaluate(pairs, 2, up))


def test_table_layout():
    rows = [EvalRow("a", 30.0, 0.9, 28.0, 0.8), EvalRow("bb", 32.0, 0.7, 30.0, 0.6)]
    lines = format_table(rows).splitlines()
    assert len(lines) == 4 and lines[0].split() == ["image", "psnr", "ssim", "bic_psnr", "bic_ssim"]
    assert lines[-1].split() == ["mean", "31.00", "0.8000", "29.00", "0.7000"]
    assert mean_row(rows).psnr == 31.0


def test_load_hr_dir(tmp_path):
    with pytest.raises(ValueError):
        load_hr_dir(tmp_path)
    save_png(tmp_path / "b.png", np.zeros((4, 4, 3), dtype=np.uint8))
    save_png(tmp_path / "a.png", np.ones((4, 4, 3), dtype=np.uint8))
    assert [n for n, _ in load_hr_dir(tmp_path)] == ["a.png", "b.png"]


# --------------------------------------------------------------- heatmap

def test_false_color_ramp_endpoints():
    np.testing.assert_array_equal(false_color([0.0, 1 / 3, 2 / 3, 1.0]),
                                  [[0, 0, 0], [255, 0, 0], [255, 255, 0], [255, 255, 255]])


def test_false_color_is_monotone():
    c = false_color(np.linspace(0, 1, 50)).astype(int)
    assert (np.diff(c, axis=0) >= 0).all()


def test_nearest_upscale_and_cell_pixels():
    grid = np.arange(6).reshape(2, 3)
    up = nearest_upscale(grid, 4, 7)
    assert up.shape == (4, 7)
    for g in range(2):
        for h in range(3):
            rows, cols = grid_to_pixels((g, h), (2, 3), 4, 7)
            assert (up[rows, cols] == grid[g, h]).all()
            assert (up == grid[g, h]).sum() == (rows.stop - rows.start) * (cols.stop - cols.start)


def test_render_marks_query_and_peak():
    w = np.zeros((3, 3))
    w[2, 0] = 0.5
    img = render(w, 6, 6, query=(0, 5))
    assert img.shape == (6, 6, 3) and img.dtype == np.uint8
    np.testing.assert_array_equal(img[4:6, 0:2], 255)
    np.testing.assert_array_equal(img[0, 5], MARKER)
    np.testing.assert_array_equal(img[1, 5], MARKER)
    np.testing.assert_array_equal(img[0, 4], MARKER)
    np.testing.assert_array_equal(img[3, 3], 0)


def test_render_zero_weights_is_black():
    assert not render(np.zeros((2, 2)), 4, 4).any()
