import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import synthetic_predictions
from lwck.calibration import (
    PredictionSet,
    apply_temperature,
    bin_stats,
    ece,
    fit_temperature,
    golden_section,
    reliability_data,
)
from lwck.objectives import weighted_bce

WORKED = PredictionSet([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])


class TestPredictionSet:
    def test_validation(self):
        with pytest.raises(ValueError):
            PredictionSet([0.5], [1, 0])
        with pytest.raises(ValueError):
            PredictionSet([1.5], [1])
        with pytest.raises(ValueError):
            PredictionSet([0.5], [2])
        with pytest.raises(ValueError):
            PredictionSet([0.5], [1], logits=[0.0, 1.0])

    def test_multi_attribute_pooled(self):
        preds = PredictionSet(np.full((3, 2), 0.5), np.ones((3, 2)))
        assert len(preds) == 6


class TestBinStats:
    def test_worked_example(self):
        bins = bin_stats(WORKED, 10)
        occupied = [k for k in range(10) if bins.counts[k]]
        assert occupied == [0, 2, 7, 8]
        got = {(bins.acc[k], round(bins.conf[k], 12)) for k in occupied}
        assert got == {(1.0, 0.9), (1.0, 0.8), (0.0, 0.3), (0.0, 0.1)}

    def test_all_correct_confident(self):
        bins = bin_stats(PredictionSet(np.ones(5), np.ones(5)))
        assert bins.acc[-1] == 1.0 and bins.conf[-1] == 1.0

    def test_boundaries(self):
        bins = bin_stats(PredictionSet([0.0, 0.1, 0.2, 1.0], [0, 0, 0, 1]), 10)
        # 0 -> first bin, 0.1 closes the first bin, 0.2 closes the second
        assert bins.counts[0] == 2 and bins.counts[1] == 1 and bins.counts[9] == 1

    def test_empty_bins_are_none(self):
        bins = bin_stats(WORKED, 10)
        assert bins.acc[5] is None and bins.conf[5] is None

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.integers(1, 20))
    def test_partition(self, p_hat, m):
        preds = PredictionSet(p_hat, np.zeros(len(p_hat)))
        bins = bin_stats(preds, m)
        assert bins.counts.sum() == len(p_hat)
        assert 0.0 <= ece(bins) <= 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            bin_stats(WORKED, 0)
        with pytest.raises(ValueError):
            bin_stats(PredictionSet([], []))


class TestEce:
    def test_worked(self):
        assert ece(bin_stats(WORKED)) == pytest.approx(0.175, abs=1e-15)

    def test_calibrated_singletons(self):
        preds = PredictionSet([0.0, 1.0], [0, 1])
        assert ece(bin_stats(preds)) == 0.0

    def test_large_calibrated(self):
        rng = np.random.default_rng(0)
        p_hat = rng.uniform(size=100_000)
        labels = (rng.uniform(size=p_hat.size) < p_hat).astype(float)
        assert ece(bin_stats(PredictionSet(p_hat, labels))) <= 0.01

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            ece(bin_stats(WORKED), n=5)


class TestReliability:
    def test_worked_gaps(self):
        recs = reliability_data(bin_stats(WORKED))
        assert len(recs) == 4
        np.testing.assert_allclose(sorted(r["gap"] for r in recs), sorted([0.1, 0.2, -0.3, -0.1]), atol=1e-12)
        np.testing.assert_allclose(sorted(r["midpoint"] for r in recs), [0.05, 0.25, 0.75, 0.85], atol=1e-15)

    def test_calibrated_on_diagonal(self):
        recs = reliability_data(bin_stats(PredictionSet([0.0, 1.0, 1.0], [0, 1, 1])))
        assert all(r["gap"] == 0 for r in recs)
        assert len(recs) <= 10


class TestTemperature:
    def test_identity(self):
        z = np.array([-3.0, 0.0, 2.0])
        np.testing.assert_allclose(apply_temperature(z, 1.0), 1 / (1 + np.exp(-z)), rtol=1e-15)

    def test_limits(self):
        np.testing.assert_allclose(apply_temperature([-50.0, 50.0], 1e9), 0.5, atol=1e-6)
        assert apply_temperature([0.0], 0.3)[0] == 0.5
        assert np.all(np.isfinite(apply_temperature([-1e4, 1e4], 1.0)))

    def test_monotone(self):
        z = np.sort(np.random.default_rng(1).normal(size=50))
        for t in (0.1, 1.0, 7.0):
            assert np.all(np.diff(apply_temperature(z, t)) >= 0)

    def test_bad_t(self):
        with pytest.raises(ValueError):
            apply_temperature([0.0], 0.0)

    def test_golden_section(self):
        assert golden_section(lambda t: (t - 1.7) ** 2, 0.0, 5.0, 1e-8) == pytest.approx(1.7, abs=1e-7)

    @pytest.mark.parametrize("t_true,tol", [(1.0, 0.1), (2.0, 0.15)])
    def test_recovery(self, t_true, tol):
        preds = synthetic_predictions(0, 50_000, t_true)
        assert fit_temperature(preds) == pytest.approx(t_true, abs=tol)

    def test_never_worse_than_identity(self):
        preds = synthetic_predictions(1, 2_000, 1.3)
        t = fit_temperature(preds)

        def loss(temp):
            return weighted_bce(preds.p, apply_temperature(preds.logits, temp))

        assert loss(t) <= loss(1.0)
        assert fit_temperature(preds) == t

    def test_reduces_ece(self):
        preds = synthetic_predictions(2, 20_000, 2.0)
        t = fit_temperature(preds)
        scaled = PredictionSet(apply_temperature(preds.logits, t), preds.p)
        assert ece(bin_stats(scaled)) < ece(bin_stats(preds))

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_temperature(WORKED)
        with pytest.raises(ValueError):
            fit_temperature(PredictionSet([0.5, 0.6], [1, 1], [0.0, 0.4]))
        with pytest.raises(ValueError):
            fit_temperature(PredictionSet([0.5, 0.6], [0, 1], [0.0, 0.4]), t_min=2.0, t_max=1.0)
