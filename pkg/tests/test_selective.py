import numpy as np
import pytest
from sklearn.base import clone

from selrel.exceptions import InputError
from selrel.explain import RelevanceVolume
from selrel.selective import (
    SelectiveConfig,
    SelectiveRelevance,
    SupportMask,
    apply_selective,
    selective_mask,
    selective_relevance,
    temporal_edge_map,
)
from selrel.volume import Volume3, sobel3, volume_stats

from conftest import brute_sobel


def _rv(data, method="dtd"):
    return RelevanceVolume(Volume3(np.asarray(data, np.float32)), method, 0)


class TestTemporalEdgeMap:
    def test_temporally_constant_is_zero(self, rng):
        frame = rng.normal(size=(6, 5)).astype(np.float32)
        data = np.broadcast_to(frame, (4, 6, 5)).copy()
        assert np.all(temporal_edge_map(_rv(data)).data == 0.0)

    def test_step_response_is_local_and_peaks_at_16(self):
        # uniform step from 0 to 1 between frames 3 and 4
        data = np.zeros((8, 6, 6), np.float32)
        data[4:] = 1.0
        g = temporal_edge_map(_rv(data)).data
        # response confined to frames 3..4 +/- kernel reach (2..5)
        assert np.all(g[:2] == 0.0) and np.all(g[6:] == 0.0)
        assert np.all(g[3] == 16.0) and np.all(g[4] == 16.0)
        assert np.all(g[2] == 0.0) and np.all(g[5] == 0.0)

    def test_delegates_to_sobel_bit_exact(self, random_volume):
        v = random_volume((5, 7, 6))
        np.testing.assert_array_equal(
            temporal_edge_map(_rv(v.data)).data, sobel3(v, "t").data
        )
        np.testing.assert_array_equal(
            temporal_edge_map(_rv(v.data)).data, brute_sobel(v.data, "t")
        )


class TestSelectiveMask:
    def test_all_zero_edges_empty_mask(self):
        g = Volume3(np.zeros((4, 4, 4), np.float32))
        mask, threshold = selective_mask(g, SelectiveConfig(4.0))
        assert threshold == 0.0
        assert mask.count() == 0

    def test_single_spike_selected(self):
        data = np.zeros((4, 4, 4), np.float32)
        data[1, 2, 3] = 100.0
        g = Volume3(data)
        std = volume_stats(g).std
        assert std == pytest.approx(12.4, abs=0.1)
        mask, threshold = selective_mask(g, SelectiveConfig(4.0))
        assert threshold == pytest.approx(4 * std)
        assert mask.count() == 1
        assert mask.volume.data[1, 2, 3] == 1.0

    def test_symmetric_distribution_selects_under_one_percent(self):
        rng = np.random.default_rng(77)
        # bounded symmetric values: 4 sigma leaves well under 1%
        data = rng.triangular(-1, 0, 1, size=(16, 32, 32)).astype(np.float32)
        mask, _ = selective_mask(Volume3(data), SelectiveConfig(4.0))
        assert mask.count() / data.size < 0.01

    def test_raw_mode_keeps_only_positive_edges(self):
        data = np.zeros((3, 3, 3), np.float32)
        data[0, 0, 0] = 50.0
        data[2, 2, 2] = -50.0
        magnitude, _ = selective_mask(Volume3(data), SelectiveConfig(2.0, use_magnitude=True))
        raw, _ = selective_mask(Volume3(data), SelectiveConfig(2.0, use_magnitude=False))
        assert magnitude.count() == 2
        assert raw.count() == 1
        assert raw.volume.data[0, 0, 0] == 1.0

    def test_strict_inequality_at_threshold(self):
        # with n_sigma=0 the threshold is 0; exact zeros must not be selected
        data = np.zeros((3, 3, 3), np.float32)
        data[1, 1, 1] = 5.0
        mask, threshold = selective_mask(Volume3(data), SelectiveConfig(0.0))
        assert threshold == 0.0
        assert mask.count() == 1

    def test_invalid_config(self):
        with pytest.raises(InputError):
            SelectiveConfig(-1.0)
        with pytest.raises(InputError):
            SelectiveConfig(float("nan"))


class TestApplySelective:
    def test_all_ones_mask_is_identity(self, random_volume):
        v = random_volume((4, 4, 4))
        mask = SupportMask(Volume3(np.ones((4, 4, 4), np.float32)))
        out = apply_selective(_rv(v.data), mask)
        np.testing.assert_array_equal(out.volume.data, v.data)
        assert out.method == "selective-dtd"

    def test_all_zero_mask(self, random_volume):
        v = random_volume((4, 4, 4))
        mask = SupportMask(Volume3(np.zeros((4, 4, 4), np.float32)))
        assert np.all(apply_selective(_rv(v.data), mask).volume.data == 0.0)

    def test_elementwise_oracle(self, rng):
        data = rng.normal(size=(5, 6, 4)).astype(np.float32)
        keep = (rng.uniform(size=(5, 6, 4)) > 0.5).astype(np.float32)
        out = apply_selective(_rv(data), SupportMask(Volume3(keep))).volume.data
        for idx in zip(*np.nonzero(keep)):
            assert out[idx] == data[idx]
        for idx in zip(*np.nonzero(1 - keep)):
            assert out[idx] == 0.0

    def test_dim_mismatch(self, random_volume):
        v = random_volume((4, 4, 4))
        mask = SupportMask(Volume3(np.ones((3, 4, 4), np.float32)))
        with pytest.raises(InputError):
            apply_selective(_rv(v.data), mask)

    def test_mask_values_validated(self):
        with pytest.raises(InputError):
            SupportMask(Volume3(np.full((2, 2, 2), 0.5, np.float32)))


class TestPipeline:
    def test_static_relevance_yields_all_zero(self, rng):
        frame = np.abs(rng.normal(size=(8, 8))).astype(np.float32)
        data = np.broadcast_to(frame, (6, 8, 8)).copy()
        result = selective_relevance(_rv(data))
        assert np.all(result.edge_map.data == 0.0)
        assert result.mask.count() == 0
        assert np.all(result.selected.volume.data == 0.0)
        assert result.threshold_value == 0.0

    def test_selected_support_within_relevance_support(self, rng):
        data = np.abs(rng.normal(size=(6, 8, 8))).astype(np.float32)
        result = selective_relevance(_rv(data))
        sel = result.selected.volume.data
        assert np.all((sel > 0) <= (data > 0))

    def test_threshold_monotonicity(self, rng):
        for seed in range(6):
            data = np.random.default_rng(seed).normal(size=(6, 10, 10)).astype(np.float32)
            edges = temporal_edge_map(_rv(data))
            masks = [
                selective_mask(edges, SelectiveConfig(n))[0] for n in (1.0, 2.0, 3.0, 4.0)
            ]
            for tighter, looser in zip(masks[1:], masks[:-1]):
                assert tighter.is_subset_of(looser)

    def test_mask_scale_equivariance(self, rng):
        data = rng.normal(size=(5, 7, 7)).astype(np.float32)
        r1 = selective_relevance(_rv(data))
        r2 = selective_relevance(_rv(7.5 * data))
        np.testing.assert_array_equal(r1.mask.volume.data, r2.mask.volume.data)

    def test_selected_mass_bounded_by_positive_mass(self, rng):
        data = rng.normal(size=(5, 7, 7)).astype(np.float32)
        result = selective_relevance(_rv(data))
        sel_sum = result.selected.volume.data.clip(0).sum(dtype=np.float64)
        assert sel_sum <= data.clip(0).sum(dtype=np.float64) + 1e-6


class TestEstimator:
    def test_sklearn_clone_round_trip(self):
        est = SelectiveRelevance(n_sigma=2.5, use_magnitude=False)
        params = clone(est).get_params()
        assert params == {"n_sigma": 2.5, "use_magnitude": False}

    def test_transform_matches_analyze(self, rng):
        data = rng.normal(size=(5, 6, 6)).astype(np.float32)
        est = SelectiveRelevance(n_sigma=1.0)
        np.testing.assert_array_equal(
            est.fit(None).transform(data), est.analyze(data).selected.volume.data
        )

    def test_fit_validates_params(self):
        with pytest.raises(InputError):
            SelectiveRelevance(n_sigma=-3.0).fit(None)
