import numpy as np
import pytest
from scipy import ndimage as ndi

from angiotune.imgcore import BY_ABS_ASC, BY_ABS_DESC, EigenField
from angiotune.morphpost import FilterParams
from angiotune.vesselness import (
    EIGEN_ORDER,
    apply_filter,
    filter_eigen,
    frangi_response,
    meijering_response,
    response_from_eigen,
    sato_response,
)


def eig(lam1, lam2, order):
    return EigenField(np.atleast_1d(np.asarray(lam1, float)), np.atleast_1d(np.asarray(lam2, float)), order)


PARAMS = {
    "meijering": FilterParams("meijering", sigma=2.0, threshold=0.1, disk_size=1, min_region=10),
    "sato": FilterParams("sato", sigma=2.0, threshold=0.1, disk_size=1, min_region=10),
    "frangi": FilterParams("frangi", sigma=2.0, threshold=0.5, alpha=0.65, beta=0.9, max_hole=470,
                           min_region=75),
}


@pytest.fixture(scope="module")
def tube_regions(tube64):
    _, mask = tube64
    dist = ndi.distance_transform_edt(mask)
    center = dist >= dist.max() - 0.5
    background = ~ndi.binary_dilation(mask, iterations=4)
    return center, background


class TestMeijering:
    def test_zero_eigenvalues(self):
        assert meijering_response(eig(0, 0, BY_ABS_DESC)).data[0] == 0.0

    def test_direct_substitution(self):
        assert meijering_response(eig(2, 2, BY_ABS_DESC), alpha=-0.5).data[0] == 1.0

    def test_clamped_at_zero(self):
        assert meijering_response(eig(-3, 1, BY_ABS_DESC)).data[0] == 0.0

    def test_bright_polarity_mirrors_dark(self):
        a = meijering_response(eig(2, 1, BY_ABS_DESC)).data
        b = meijering_response(eig(-2, -1, BY_ABS_DESC), dark_vessels=False).data
        np.testing.assert_array_equal(a, b)

    def test_rejects_wrong_ordering(self):
        with pytest.raises(ValueError, match="by_abs_desc"):
            meijering_response(eig(1, 2, BY_ABS_ASC))


class TestFrangi:
    def test_suppressed_where_lam2_positive(self):
        # bright-structure convention: lam2 > 0 gives zero
        v = frangi_response(eig([0.1, -0.1], [1.0, 1.0], BY_ABS_ASC), 0.65, 0.9, dark_vessels=False)
        np.testing.assert_array_equal(v.data, 0.0)

    def test_dark_polarity_keeps_valleys(self):
        v = frangi_response(eig(0.05, 1.0, BY_ABS_ASC), 0.65, 0.9).data[0]
        assert v > 0.3

    def test_zero_structure(self):
        assert frangi_response(eig(0, 0, BY_ABS_ASC), 0.65, 0.9).data[0] == 0.0

    def test_formula(self):
        l1, l2, a, b = -0.2, -0.9, 0.65, 0.9
        ra, s2 = abs(l2) / abs(l1), l1 * l1 + l2 * l2
        ref = (1 - np.exp(-ra**2 / (2 * a * a))) * (1 - np.exp(-s2 / (2 * b * b)))
        v = frangi_response(eig(l1, l2, BY_ABS_ASC), a, b, dark_vessels=False).data[0]
        assert v == pytest.approx(ref, rel=1e-12)

    def test_monotone_in_structure_strength(self):
        ratios = np.linspace(0.0, 1.0, 21)
        scales = np.linspace(0.0, 5.0, 101)
        l2 = -np.outer(np.ones_like(ratios), scales)
        l1 = ratios[:, None] * l2
        v = frangi_response(EigenField(l1, l2, BY_ABS_ASC), 0.65, 0.9, dark_vessels=False).data
        assert (np.diff(v, axis=1) >= 0).all()

    @pytest.mark.parametrize("alpha, beta", [(0.0, 1.0), (1.0, -0.5)])
    def test_rejects_non_positive_constants(self, alpha, beta):
        with pytest.raises(ValueError):
            frangi_response(eig(0, 1, BY_ABS_ASC), alpha, beta)


class TestSato:
    def test_suppressed_where_lam2_non_positive(self):
        v = sato_response(eig([0.1, 0.0], [-1.0, 0.0], BY_ABS_ASC), 2.0)
        np.testing.assert_array_equal(v.data, 0.0)

    def test_ideal_valley_responds(self):
        # lam1 = 0: the dominance ratio is unbounded, the shape factor is 1
        s = 1.5
        v = sato_response(eig(0.0, 2.0, BY_ABS_ASC), s).data[0]
        ref = np.exp(-1 / (2 * s * s)) * (1 - np.exp(-4 / (2 * s * s)))
        assert v == pytest.approx(ref, rel=1e-12)

    def test_rejects_non_positive_sigma(self):
        with pytest.raises(ValueError):
            sato_response(eig(0, 1, BY_ABS_ASC), 0.0)


class TestPhantomResponse:
    @pytest.mark.parametrize("filter", ["meijering", "frangi", "sato"])
    def test_centerline_beats_background(self, tube64, tube_regions, filter):
        img, _ = tube64
        center, background = tube_regions
        v = apply_filter(img, PARAMS[filter]).data
        assert np.median(v[center]) > np.median(v[background])
        if filter == "meijering":
            assert v[center].min() > np.median(v[background])

    def test_sato_centerline_above_background_95th_percentile(self, tube64, tube_regions):
        img, _ = tube64
        center, background = tube_regions
        v = apply_filter(img, PARAMS["sato"]).data
        assert np.median(v[center]) > np.percentile(v[background], 95)


class TestApplyFilter:
    @pytest.mark.parametrize("filter", ["meijering", "frangi", "sato"])
    def test_constant_image_gives_zero(self, filter):
        np.testing.assert_array_equal(apply_filter(np.full((32, 32), 0.6), PARAMS[filter]).data, 0.0)

    @pytest.mark.parametrize("filter", ["meijering", "frangi", "sato"])
    def test_normalized_and_deterministic(self, tube64, filter):
        img, _ = tube64
        a = apply_filter(img, PARAMS[filter])
        b = apply_filter(img.copy(), PARAMS[filter])
        np.testing.assert_array_equal(a.data, b.data)
        assert a.data.min() == 0.0 and a.data.max() == 1.0
        assert a.data.shape == img.shape

    @pytest.mark.parametrize("filter", ["meijering", "frangi", "sato"])
    def test_constant_shift_invariance(self, rng, filter):
        img = rng.uniform(0.2, 0.6, (40, 40))
        params = PARAMS[filter]
        for s in (params.sigma, 3.0):
            e1 = filter_eigen(img, filter, s)
            e2 = filter_eigen(img + 0.3, filter, s)
            r1 = response_from_eigen(e1, filter, s, params.alpha, params.beta).data
            r2 = response_from_eigen(e2, filter, s, params.alpha, params.beta).data
            np.testing.assert_allclose(r1, r2, atol=1e-6)

    @pytest.mark.parametrize("filter", ["meijering", "frangi", "sato"])
    def test_responses_non_negative_and_finite(self, rng, filter):
        for _ in range(5):
            img = rng.normal(size=(24, 24)) * rng.choice([1e-6, 1.0, 1e6])
            e = filter_eigen(img, filter, 1.5)
            v = response_from_eigen(e, filter, 1.5, PARAMS[filter].alpha, PARAMS[filter].beta).data
            assert np.isfinite(v).all() and (v >= 0).all()

    def test_multiscale_takes_pixelwise_max(self, tube64):
        img, _ = tube64
        p = PARAMS["meijering"]
        multi = apply_filter(img, p, sigmas=(1.5, 2.5))
        assert multi.sigma_used == (1.5, 2.5)
        raws = [response_from_eigen(filter_eigen(img, "meijering", s), "meijering", s).data for s in (1.5, 2.5)]
        ref = np.maximum(*raws)
        np.testing.assert_allclose(multi.data, (ref - ref.min()) / (ref.max() - ref.min()))

    def test_eigen_orders(self):
        assert EIGEN_ORDER == {"meijering": BY_ABS_DESC, "frangi": BY_ABS_ASC, "sato": BY_ABS_ASC}
