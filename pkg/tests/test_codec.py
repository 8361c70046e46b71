import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saldefense.codec import (
    BASE_CHROMA,
    BASE_LUMA,
    build_quant_tables,
    code_blocks,
    compress_image_map,
    compress_image_uniform,
    compress_window,
    dct2,
    idct2,
)


def naive_dct2(block):
    """JPEG forward DCT straight from the cosine-sum definition."""
    out = np.zeros((8, 8))
    for u in range(8):
        for v in range(8):
            cu = 1 / math.sqrt(2) if u == 0 else 1.0
            cv = 1 / math.sqrt(2) if v == 0 else 1.0
            s = 0.0
            for x in range(8):
                for y in range(8):
                    s += (
                        block[x, y]
                        * math.cos((2 * x + 1) * u * math.pi / 16)
                        * math.cos((2 * y + 1) * v * math.pi / 16)
                    )
            out[u, v] = 0.25 * cu * cv * s
    return out


def naive_window(block, quality):
    """Pixel-by-pixel reference codec with the same conventions."""
    t = build_quant_tables(quality)
    rgb = block.astype(float)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    planes = [
        0.299 * r + 0.587 * g + 0.114 * b - 128,
        -0.168736 * r - 0.331264 * g + 0.5 * b,
        0.5 * r - 0.418688 * g - 0.081312 * b,
    ]
    rec = []
    for plane, table in zip(planes, (t.luma, t.chroma, t.chroma)):
        coef = naive_dct2(plane)
        q = np.vectorize(lambda c, d: math.copysign(math.floor(abs(c / d) + 0.5), c))(coef, table)
        rec.append(idct2(q * table))
    y, cb, cr = rec[0] + 128, rec[1], rec[2]
    out = np.stack([y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb], -1)
    return np.clip(np.floor(out + 0.5), 0, 255)


def test_quality_50_is_base():
    t = build_quant_tables(50)
    assert np.array_equal(t.luma, BASE_LUMA)
    assert np.array_equal(t.chroma, BASE_CHROMA)


def test_quality_100_is_all_ones():
    t = build_quant_tables(100)
    assert np.all(t.luma == 1) and np.all(t.chroma == 1)


def test_quality_80_luma_dc():
    # S = 200 - 160 = 40; floor((40 * 16 + 50) / 100) = 6
    assert build_quant_tables(80).luma[0, 0] == 6


def test_table_invariants_all_qualities():
    prev = None
    for q in range(1, 101):
        t = build_quant_tables(q)
        for tab in (t.luma, t.chroma):
            assert tab.min() >= 1 and tab.max() <= 255
        if prev is not None:
            assert np.all(t.luma <= prev.luma) and np.all(t.chroma <= prev.chroma)
        prev = t


@pytest.mark.parametrize("q", [0, 101, -5, 2.5])
def test_bad_quality(q):
    with pytest.raises(ValueError):
        build_quant_tables(q)


def test_dct_matches_cosine_sum():
    rng = np.random.default_rng(0)
    for _ in range(5):
        b = rng.uniform(-128, 128, (8, 8))
        assert np.allclose(dct2(b), naive_dct2(b), atol=1e-9)


def test_dct_roundtrip():
    rng = np.random.default_rng(1)
    b = rng.uniform(-1000, 1000, (200, 8, 8))
    assert np.max(np.abs(idct2(dct2(b)) - b)) <= 1e-9


def test_window_matches_naive_reference():
    rng = np.random.default_rng(2)
    for q in (5, 20, 50, 80, 95):
        block = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
        ours = compress_window(block, q).astype(int)
        ref = naive_window(block, q)
        # floating-point association differs, so a half-way rounding may flip
        assert np.max(np.abs(ours - ref)) <= 1
        assert np.mean(ours != ref) < 0.02


def test_constant_gray_block_is_untouched():
    block = np.full((8, 8, 3), 128, np.uint8)
    for q in (1, 10, 50, 80, 100):
        assert np.array_equal(compress_window(block, q), block)


def test_quality_100_error_bound():
    rng = np.random.default_rng(3)
    blocks = rng.integers(0, 256, (10_000, 8, 8, 3), dtype=np.uint8)
    out = code_blocks(blocks, 100)
    assert np.max(np.abs(out.astype(int) - blocks)) <= 3


def test_low_quality_is_lossier_on_average():
    rng = np.random.default_rng(4)
    blocks = rng.integers(0, 256, (200, 8, 8, 3), dtype=np.uint8)
    mse = lambda q: np.mean((code_blocks(blocks, q).astype(float) - blocks) ** 2)
    assert mse(10) >= mse(90)


def test_window_shape_checked():
    with pytest.raises(ValueError):
        compress_window(np.zeros((8, 7, 3), np.uint8), 50)


def test_uniform_equals_constant_grid():
    rng = np.random.default_rng(5)
    img = rng.integers(0, 256, (20, 27, 3), dtype=np.uint8)
    for q in (20, 80):
        grid = np.full((3, 4), q)
        assert np.array_equal(compress_image_uniform(img, q), compress_image_map(img, grid))


def test_gray_levels_survive_uniform_compression():
    for q in (20, 80, 100):
        worst = 0
        for v in range(256):
            img = np.full((8, 8, 3), v, np.uint8)
            worst = max(worst, int(np.max(np.abs(compress_image_uniform(img, q).astype(int) - v))))
        assert worst <= 2


def test_odd_size_roundtrip_shape():
    img = np.random.default_rng(6).integers(0, 256, (9, 9, 3), dtype=np.uint8)
    assert compress_image_uniform(img, 50).shape == (9, 9, 3)


def test_grid_mismatch():
    img = np.zeros((16, 16, 3), np.uint8)
    with pytest.raises(ValueError):
        compress_image_map(img, np.full((2, 3), 50))


def test_split_quality_grid():
    rng = np.random.default_rng(7)
    img = rng.integers(0, 256, (8, 16, 3), dtype=np.uint8)
    out = compress_image_map(img, [[100, 1]]).astype(int)
    left = np.abs(out[:, :8] - img[:, :8])
    right_mse = np.mean((out[:, 8:] - img[:, 8:]) ** 2)
    assert left.max() <= 3
    assert right_mse > np.mean(left**2)


def test_window_equals_standalone_window_coding():
    rng = np.random.default_rng(8)
    img = rng.integers(0, 256, (32, 40, 3), dtype=np.uint8)
    grid = rng.integers(1, 101, (4, 5))
    out = compress_image_map(img, grid)
    for i in range(4):
        for j in range(5):
            win = img[8 * i : 8 * i + 8, 8 * j : 8 * j + 8]
            assert np.array_equal(out[8 * i : 8 * i + 8, 8 * j : 8 * j + 8], compress_window(win, grid[i, j]))


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    cell=st.tuples(st.integers(0, 3), st.integers(0, 3)),
    q=st.integers(1, 100),
)
def test_changing_one_cell_is_local(seed, cell, q):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    grid = rng.integers(1, 101, (4, 4))
    base = compress_image_map(img, grid)
    grid2 = grid.copy()
    grid2[cell] = q
    changed = np.any(compress_image_map(img, grid2) != base, axis=2)
    outside = changed.copy()
    i, j = cell
    outside[8 * i : 8 * i + 8, 8 * j : 8 * j + 8] = False
    assert not outside.any()


def test_deterministic():
    img = np.random.default_rng(9).integers(0, 256, (24, 24, 3), dtype=np.uint8)
    grid = np.random.default_rng(10).integers(1, 101, (3, 3))
    assert np.array_equal(compress_image_map(img, grid), compress_image_map(img, grid))
