import numpy as np
import pytest

from helpers import cp_tensor, diverging_instance
from lwck.cpd import AlsOptions, CPDecomposition, cp_als, reconstruct, sensitivity
from lwck.epc import (
    CONTRACT_TOL,
    EpcConfig,
    decompose_with_epc,
    default_threshold,
    epc_correct,
    needs_correction,
)
from lwck.tensor import frobenius_norm


def abs_error(x, cpd):
    return frobenius_norm(x - reconstruct(cpd))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EpcConfig(delta=-1.0)
        with pytest.raises(ValueError):
            EpcConfig(norm_threshold=-1.0)
        with pytest.raises(ValueError):
            EpcConfig(max_outer_iters=-1)

    def test_resolved_threshold(self):
        x = np.ones((2, 2, 2))
        assert EpcConfig().resolved(x).norm_threshold == pytest.approx(default_threshold(x))
        assert EpcConfig(norm_threshold=3.0).resolved(x).norm_threshold == 3.0


class TestNeedsCorrection:
    f = [np.ones((2, 2)) / np.sqrt(2)] * 3

    def test_below(self):
        assert not needs_correction(CPDecomposition(self.f, [1.0, 1.0]), EpcConfig(norm_threshold=10))

    def test_above(self):
        assert needs_correction(CPDecomposition(self.f, [100.0, 100.0]), EpcConfig(norm_threshold=10))

    def test_zero_threshold(self):
        assert needs_correction(CPDecomposition(self.f, [1e-9, 0.0]), EpcConfig(norm_threshold=0))

    def test_unresolved(self):
        with pytest.raises(ValueError):
            needs_correction(CPDecomposition(self.f, [1.0, 1.0]), EpcConfig())


class TestEpcCorrect:
    def test_rank1_fixed_point(self):
        rng = np.random.default_rng(0)
        x, _, _ = cp_tensor(rng, (4, 3, 2), 1)
        cpd = cp_als(x, 1)
        out = epc_correct(x, cpd, EpcConfig(delta=abs_error(x, cpd)))
        assert sensitivity(out) == pytest.approx(sensitivity(cpd), rel=1e-9)
        np.testing.assert_allclose(reconstruct(out), reconstruct(cpd), atol=1e-9)

    def test_diverging_instance(self):
        x, cpd = diverging_instance(0)
        delta = 1.05 * abs_error(x, cpd)
        out = epc_correct(x, cpd, EpcConfig(delta=delta))
        assert out.feasible
        assert abs_error(x, out) <= delta + CONTRACT_TOL
        assert sensitivity(out) * 10 <= sensitivity(cpd)

    @pytest.mark.parametrize("seed", range(20))
    def test_contract(self, seed):
        rng = np.random.default_rng(100 + seed)
        eps = 10.0 ** rng.uniform(-3, -1)
        x, cpd = diverging_instance(seed, eps=eps, noise_frac=rng.uniform(0.01, 0.1))
        delta = abs_error(x, cpd) * rng.uniform(1.0, 1.2)
        out = epc_correct(x, cpd, EpcConfig(delta=delta))
        assert abs_error(x, out) <= delta + CONTRACT_TOL
        assert sensitivity(out) <= sensitivity(cpd) + CONTRACT_TOL

    def test_idempotent(self):
        x, cpd = diverging_instance(1)
        cfg = EpcConfig(delta=1.05 * abs_error(x, cpd))
        once = epc_correct(x, cpd, cfg)
        twice = epc_correct(x, once, cfg)
        assert sensitivity(twice) == pytest.approx(sensitivity(once), rel=1e-6)

    def test_loose_budget(self):
        x, cpd = diverging_instance(2)
        delta = frobenius_norm(x)
        out = epc_correct(x, cpd, EpcConfig(delta=delta))
        assert abs_error(x, out) <= delta + CONTRACT_TOL
        assert sensitivity(out) <= sensitivity(cpd)
        assert sensitivity(out) <= 1e-12 * sensitivity(cpd)

    def test_infeasible_budget_flagged(self):
        x = np.random.default_rng(3).standard_normal((4, 3, 3))
        cpd = cp_als(x, 1)
        out = epc_correct(x, cpd, EpcConfig(delta=1e-6))
        assert not out.feasible
        assert out.history[0] > 1e-6


class TestDecomposeWithEpc:
    def test_loose_threshold_matches_als(self):
        rng = np.random.default_rng(4)
        x, _, _ = cp_tensor(rng, (4, 3, 3), 2)
        plain = cp_als(x, 2)
        out = decompose_with_epc(x, 2, AlsOptions(), EpcConfig(norm_threshold=1e12))
        np.testing.assert_array_equal(out.coeffs, plain.coeffs)

    def test_zero_outer_iters(self):
        x, _ = diverging_instance(5)
        plain = cp_als(x, 2)
        out = decompose_with_epc(x, 2, AlsOptions(), EpcConfig(norm_threshold=0.0, max_outer_iters=0))
        np.testing.assert_array_equal(out.coeffs, plain.coeffs)

    def test_not_worse_than_als(self):
        rng = np.random.default_rng(6)
        a, b = rng.standard_normal(4), rng.standard_normal(4)
        u, v = rng.standard_normal((2, 3))
        p, q = rng.standard_normal((2, 2))
        o = np.multiply.outer
        # rank-3 tensor with no good rank-2 fit: ALS terms diverge
        x = o(o(a, u), q) + o(o(a, v), p) + o(o(b, u), p)
        plain = cp_als(x, 2)
        cfg = EpcConfig(norm_threshold=2 * frobenius_norm(x) ** 2)
        out = decompose_with_epc(x, 2, AlsOptions(), cfg)
        assert sensitivity(out) <= sensitivity(plain) + 1e-9
        assert abs_error(x, out) <= abs_error(x, plain) + CONTRACT_TOL
