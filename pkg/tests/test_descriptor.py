import numpy as np
import pytest

import oracles
from angiotune.descriptor import (
    BETTI_TAUS,
    BLOCKS,
    DESCRIPTOR_DIM,
    LAYOUT_TAG,
    MINKOWSKI_TAUS,
    betti_curve,
    betti_numbers,
    euler_number,
    extract_descriptor,
    layout_header,
    minkowski,
    perimeter,
    superlevel_set,
)
from angiotune.synthetic import tube_phantom


def square(n, frame=12):
    m = np.zeros((frame, frame), bool)
    o = (frame - n) // 2
    m[o : o + n, o : o + n] = True
    return m


class TestSuperlevelSet:
    def test_boundaries(self, rng):
        img = rng.random((6, 6))
        assert superlevel_set(img, 0.0).all()
        assert not superlevel_set(img, np.nextafter(img.max(), 2)).any()

    def test_checkerboard(self):
        cb = (np.indices((5, 5)).sum(0) % 2).astype(float)
        np.testing.assert_array_equal(superlevel_set(cb, 0.5), cb == 1)


class TestMinkowski:
    def test_solid_square(self):
        assert minkowski(square(3)) == (9, 12, 1)

    def test_square_with_hole(self):
        m = square(5)
        m[6, 6] = False
        area, _, chi = minkowski(m)
        assert (area, chi) == (24, 0)

    def test_border_counts_as_background(self):
        assert perimeter(np.ones((3, 4), bool)) == 14

    def test_diagonal_pixels_are_one_component(self):
        assert euler_number(np.eye(4, dtype=bool)) == 1
        assert betti_numbers(np.eye(4, dtype=bool)) == (1, 0)

    def test_ring_of_diagonals_encloses_4_connected_hole(self):
        m = np.zeros((5, 5), bool)
        m[1, 2] = m[2, 1] = m[2, 3] = m[3, 2] = True
        assert betti_numbers(m) == (1, 1)
        assert euler_number(m) == 0

    def test_random_masks_against_flood_fill(self, rng):
        for _ in range(300):
            m = rng.random((8, 8)) < rng.uniform(0.2, 0.8)
            b0, b1 = oracles.betti(m)
            assert betti_numbers(m) == (b0, b1)
            assert euler_number(m) == b0 - b1
            assert perimeter(m) == oracles.perimeter(m)

    def test_non_square_and_degenerate_shapes(self, rng):
        for shape in [(1, 1), (1, 9), (7, 1), (3, 11)]:
            for _ in range(20):
                m = rng.random(shape) < 0.5
                b0, b1 = oracles.betti(m)
                assert betti_numbers(m) == (b0, b1)
                assert euler_number(m) == b0 - b1

    def test_nested_sets_have_ordered_area(self, rng):
        img = rng.random((20, 20))
        areas = [minkowski(superlevel_set(img, t))[0] for t in MINKOWSKI_TAUS]
        assert all(a >= b for a, b in zip(areas, areas[1:]))


class TestBettiCurve:
    def test_constant_one(self):
        b0, b1, b2 = betti_curve(np.ones((8, 8)))
        assert (b0 == 1).all() and (b1 == 0).all() and (b2 == 0).all()

    def test_annulus(self):
        yy, xx = np.mgrid[:31, :31]
        r = np.hypot(yy - 15, xx - 15)
        img = np.where((r > 5) & (r < 11), 0.9, 0.1)
        b0, b1, _ = betti_curve(img, [0.5])
        assert (b0[0], b1[0]) == (1, 1)

    def test_all_3x3_patterns(self):
        for code in range(512):
            m = ((code >> np.arange(9)) & 1).reshape(3, 3).astype(bool)
            b0, b1, _ = betti_curve(m.astype(float), [0.5])
            assert (b0[0], b1[0]) == oracles.betti(m)


class TestDescriptor:
    def test_layout(self):
        assert DESCRIPTOR_DIM == 140
        assert [n for _, n in BLOCKS] == [32, 16, 16, 16, 20, 20, 20]
        assert len(layout_header()) == 140
        assert LAYOUT_TAG.startswith("phi140/")
        np.testing.assert_allclose(MINKOWSKI_TAUS, np.arange(1, 17) / 17)
        np.testing.assert_allclose(BETTI_TAUS, np.arange(1, 21) / 21)

    @pytest.mark.parametrize("level", [0.0, 1.0])
    def test_constant_image_outside_threshold_range(self, level):
        phi = extract_descriptor(np.full((16, 16), level))
        assert phi.shape == (140,)
        assert np.count_nonzero(phi[:32]) == 1
        np.testing.assert_array_equal(phi[32:], 0.0)

    def test_constant_image_inside_threshold_range_gives_steps(self):
        phi = extract_descriptor(np.full((16, 16), 0.4))
        area = phi[32:48]
        np.testing.assert_array_equal(area, (MINKOWSKI_TAUS <= 0.4).astype(float))
        np.testing.assert_array_equal(phi[80:100], (BETTI_TAUS <= 0.4).astype(float))

    def test_deterministic(self, tube64):
        img, _ = tube64
        np.testing.assert_array_equal(extract_descriptor(img), extract_descriptor(img.copy()))

    def test_range_and_betti2_block(self, rng):
        for _ in range(5):
            phi = extract_descriptor(rng.random((24, 24)) ** rng.uniform(0.3, 3))
            assert phi.min() >= 0.0 and phi.max() <= 1.0
            np.testing.assert_array_equal(phi[-20:], 0.0)

    def test_translation_invariance(self, rng):
        content = rng.random((20, 20))
        a = np.full((40, 40), 0.5)
        b = a.copy()
        a[3:23, 5:25] = content
        b[15:35, 11:31] = content
        np.testing.assert_array_equal(extract_descriptor(a), extract_descriptor(b))

    def test_tube_separates_from_noise(self):
        img, _ = tube_phantom((96, 96), width=5, seed=11)
        noise = np.random.default_rng(11).random((96, 96))
        assert np.linalg.norm(extract_descriptor(img) - extract_descriptor(noise)) > 0.5

    @pytest.mark.parametrize("block", range(7))
    def test_blocks_min_max_normalized(self, tube64, block):
        img, _ = tube64
        phi = extract_descriptor(img)
        start = sum(n for _, n in BLOCKS[:block])
        part = phi[start : start + BLOCKS[block][1]]
        if part.any():
            assert part.min() == 0.0 and part.max() == 1.0
