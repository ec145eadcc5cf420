import numpy as np
import pytest

from angiotune.cineselect import (
    CineSequence,
    best_frame,
    frame_histogram,
    list_frame_files,
    load_cine,
    low_band_peak,
    parse_band,
)
from angiotune.imgcore import save_image
from angiotune.synthetic import bolus_cine


class TestFrameHistogram:
    def test_constant_image(self):
        h = frame_histogram(np.full((10, 10), 0.5))
        assert h.bins == 256
        assert h.probs[128] == 1.0 and h.probs.sum() == 1.0

    def test_two_level_image(self):
        img = np.zeros((4, 4))
        img[2:] = 1.0
        h = frame_histogram(img)
        assert h.probs[0] == 0.5 and h.probs[255] == 0.5

    def test_probabilities_sum_to_one(self, rng):
        for bins in (2, 17, 256):
            assert abs(frame_histogram(rng.random((33, 21)), bins).probs.sum() - 1.0) <= 1e-9

    def test_eight_bit_levels_map_to_their_own_bin(self):
        levels = np.arange(256) / 255.0
        np.testing.assert_array_equal(frame_histogram(levels[None, :]).counts, 1)

    def test_rejects_single_bin(self):
        with pytest.raises(ValueError):
            frame_histogram(np.zeros((2, 2)), 1)


class TestBestFrame:
    def test_single_frame(self, rng):
        assert best_frame(CineSequence([rng.random((8, 8))])) == 0

    def test_taller_low_peak_wins(self):
        a = np.full((10, 10), 0.8)
        a[:3] = 0.1
        b = np.full((10, 10), 0.8)
        b[:6] = 0.1
        assert best_frame([a, b]) == 1

    def test_ties_go_to_earliest(self):
        f = np.full((6, 6), 0.1)
        assert best_frame([np.full((6, 6), 0.9), f, f.copy()]) == 1

    def test_empty_sequence(self):
        with pytest.raises(ValueError, match="no frames"):
            best_frame([])
        with pytest.raises(ValueError):
            CineSequence([])

    def test_mixed_shapes_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            CineSequence([np.zeros((3, 3)), np.zeros((3, 4))])

    @pytest.mark.parametrize("band", [(5, 2), (0, 256), (-1, 3)])
    def test_band_validation(self, band):
        with pytest.raises(ValueError):
            best_frame([np.zeros((2, 2))], band)

    def test_matches_exhaustive_criterion_on_bolus(self):
        frames, _ = bolus_cine(seed=3, peak=7)
        peaks = []
        for f in frames:
            idx = np.minimum((f.ravel() * 256).astype(int), 255)
            peaks.append(max(np.sum(idx == k) for k in range(64)) / idx.size)
        assert best_frame(frames) == int(np.argmax(peaks)) == 7

    def test_reversal_maps_index(self, rng):
        for _ in range(10):
            frames = [rng.random((12, 12)) ** rng.uniform(0.5, 3) for _ in range(6)]
            k = best_frame(frames)
            if sorted(low_band_peak(f) for f in frames)[-2] < low_band_peak(frames[k]):
                assert best_frame(frames[::-1]) == len(frames) - 1 - k

    def test_dominated_frame_does_not_change_selection(self, rng):
        frames = [rng.random((12, 12)) for _ in range(5)]
        k = best_frame(frames)
        frames.insert(2, np.full((12, 12), 0.9))
        assert best_frame(frames) == (k + 1 if k >= 2 else k)

    def test_merged_bins_agree_on_even_levels(self, rng):
        # with only even 8-bit levels, each 128-bin bucket holds one occupied 256-bin level
        for _ in range(10):
            frames = [2 * rng.integers(0, 128, (20, 20)) / 255.0 for _ in range(5)]
            assert best_frame(frames, (0, 63), 256) == best_frame(frames, (0, 31), 128)


class TestBand:
    def test_parse(self):
        assert parse_band("0:63") == (0, 63)
        with pytest.raises(ValueError):
            parse_band("0-63")


class TestCineFiles:
    def test_numeric_order(self, tmp_path):
        for i in (10, 2, 1):
            save_image(tmp_path / f"frame_{i}.pgm", np.full((4, 4), i / 20))
        (tmp_path / "notes.txt").write_text("x")
        assert [p.name for p in list_frame_files(tmp_path)] == ["frame_1.pgm", "frame_2.pgm", "frame_10.pgm"]
        cine, files = load_cine(tmp_path)
        assert len(cine) == 3 and cine.frames[2][0, 0] == pytest.approx(0.5, abs=1 / 255)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_cine(tmp_path / "absent")

    def test_directory_without_frames(self, tmp_path):
        with pytest.raises(ValueError, match="no frame images"):
            load_cine(tmp_path)
