import numpy as np
import pytest

from cclab import bitgrid as bg
from cclab import synth


def random_grid(seed, size=64, density=0.4):
    mask = np.random.default_rng(seed).random((size, size)) < density
    return bg.BitGrid.from_bool(mask), mask


def test_count_ones_empty_and_full():
    assert bg.count_ones(bg.BitGrid.zeros(256, 256)) == 0
    assert bg.count_ones(bg.BitGrid.full(4, 4)) == 16


def test_count_ones_matches_naive_scan():
    rng = np.random.default_rng(0)
    mask = np.zeros(64 * 64, dtype=bool)
    mask[rng.choice(64 * 64, size=1234, replace=False)] = True
    mask = mask.reshape(64, 64)
    grid = bg.BitGrid.from_bool(mask)
    naive = sum(1 for y in range(64) for x in range(64) if mask[y, x])
    assert naive == 1234
    assert grid.count_ones() == naive


def test_count_ones_complement():
    for seed in range(5):
        grid, mask = random_grid(seed, size=37)  # non-multiple-of-8 width
        comp = bg.BitGrid.from_bool(~mask)
        assert grid.count_ones() + comp.count_ones() == 37 * 37


def test_padding_bits_must_be_zero():
    grid = bg.BitGrid.from_bool(np.ones((3, 5), dtype=bool))
    bad = bytearray(grid.bits)
    bad[0] |= 0x01  # a pad bit beyond column 5
    with pytest.raises(ValueError):
        bg.BitGrid(5, 3, bytes(bad))


def test_get_and_with_pixel():
    grid = bg.BitGrid.zeros(8, 8)
    grid2 = grid.with_pixel(3, 1)
    assert not grid.get(3, 1) and grid2.get(3, 1)
    assert bg.hamming_distance(grid, grid2) == 1
    with pytest.raises(IndexError):
        grid.get(8, 0)


def test_label_components_empty_grid():
    lab = bg.label_components(bg.BitGrid.zeros(16, 16))
    assert lab.num_components == 0
    assert not lab.labels.any()


def test_diagonal_is_not_connected():
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 0] = mask[1, 1] = True
    for algorithm in ("union_find", "bfs"):
        assert bg.num_components(bg.BitGrid.from_bool(mask), algorithm) == 2


def test_unknown_algorithm_rejected():
    with pytest.raises(ValueError):
        bg.label_components(bg.BitGrid.zeros(4, 4), "two_pass")


def test_union_find_matches_bfs_on_random_grids():
    for i in range(300):
        density = 0.05 + 0.9 * (i % 10) / 9
        grid, _ = random_grid(i, density=density)
        a = bg.label_components(grid, "union_find")
        b = bg.label_components(grid, "bfs")
        assert a.num_components == b.num_components
        # raster first-encounter ordering makes the labelings identical
        assert np.array_equal(a.labels, b.labels)


def test_label_grid_invariants():
    for i in range(20):
        grid, _ = random_grid(1000 + i, size=48, density=0.5)
        lab = bg.label_components(grid)
        lab.validate()


def test_count_invariant_under_symmetries():
    for i in range(20):
        grid, mask = random_grid(2000 + i, size=40, density=0.45)
        base = bg.num_components(grid)
        for variant in (mask.T, mask[::-1], mask[:, ::-1], np.rot90(mask)):
            assert bg.num_components(bg.BitGrid.from_bool(variant)) == base


def test_isolated_pixel_increments_count():
    rng = np.random.default_rng(7)
    for i in range(20):
        grid, mask = random_grid(3000 + i, size=32, density=0.2)
        free = np.argwhere(~mask)
        rng.shuffle(free)
        for y, x in free:
            neighbors = [
                (yy, xx)
                for yy, xx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1))
                if 0 <= yy < 32 and 0 <= xx < 32
            ]
            if not any(mask[yy, xx] for yy, xx in neighbors):
                before = bg.num_components(grid)
                after = bg.num_components(grid.with_pixel(int(x), int(y)))
                assert after == before + 1
                break


def test_bridge_two_circles_by_hand():
    mask = np.zeros((32, 32), dtype=bool)
    xs, ys = synth.raster_shape("circle", (8, 16), 8, 32)
    mask[ys, xs] = True
    right = xs[ys == 16].max()
    xs2, ys2 = synth.raster_shape("circle", (right + 6, 16), 8, 32)
    shift = (right + 2) - xs2[ys2 == 16].min()
    mask[ys2, xs2 + shift] = True
    grid = bg.BitGrid.from_bool(mask)
    assert bg.num_components(grid) == 2
    assert bg.num_components(grid.with_pixel(int(right) + 1, 16)) == 1


def test_bridge_pair_four_circles():
    a, b = bg.bridge_pair(7, 64, (5, 12))
    assert bg.num_components(a) == 4
    assert bg.num_components(b) == 3
    assert bg.hamming_distance(a, b) == 1


def test_bridge_pair_deterministic():
    a1, b1 = bg.bridge_pair(123, 64, (5, 12))
    a2, b2 = bg.bridge_pair(123, 64, (5, 12))
    assert a1.bits == a2.bits and b1.bits == b2.bits


def test_bridge_pair_seed_sweep():
    for seed in range(25):
        a, b = bg.bridge_pair(seed, 64, (5, 12))
        ca = bg.num_components(a)
        cb = bg.num_components(b)
        assert bg.hamming_distance(a, b) == 1
        assert cb == ca - 1


def test_bridge_pair_validation():
    with pytest.raises(ValueError):
        bg.bridge_pair(0, 64, (2, 5))
    with pytest.raises(ValueError):
        bg.bridge_pair(0, 16, (10, 12))


def test_hamming_distance_shape_mismatch():
    with pytest.raises(ValueError):
        bg.hamming_distance(bg.BitGrid.zeros(4, 4), bg.BitGrid.zeros(4, 5))
