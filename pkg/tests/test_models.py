import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlis.models import (CorrelationError, Payoff, SdeModel, build_correlation, drift_diffusion,
                         equicorrelation, local_vol, payoff_eval, target_covariance)


class TestLocalVol:
    def test_at_origin(self):
        assert local_vol(0.0, 100.0, 0.05, 100.0) == pytest.approx(0.12, abs=1e-15)

    def test_one_year(self):
        # mpmath evaluation of the surface
        assert local_vol(1.0, 100.0, 0.05, 100.0) == pytest.approx(0.181858912318520468, rel=1e-13)

    def test_far_wings_approach_cap(self):
        xs = [100.0, 120.0, 150.0, 200.0, 400.0]
        vals = [local_vol(0.0, x, 0.05, 100.0) for x in xs]
        assert all(a < b for a, b in zip(vals, vals[1:]))
        assert vals[-1] == pytest.approx(0.72, abs=1e-12)
        left = [local_vol(0.0, x, 0.05, 100.0) for x in (100.0, 80.0, 50.0, 1.0)]
        assert all(a < b for a, b in zip(left, left[1:]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            local_vol(0.0, float("nan"), 0.05, 100.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 10), st.floats(1e-3, 1e4), st.floats(0, 0.2), st.floats(1, 500))
    def test_bounded(self, t, x, r, s):
        v = local_vol(t, x, r, s)
        assert 0 < v <= 0.72

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 5), st.floats(1, 300))
    def test_continuity(self, t, x):
        h = 1e-10
        a = local_vol(t, x, 0.05, 100.0)
        assert abs(local_vol(t + h, x + h, 0.05, 100.0) - a) < 1e-5


class TestPayoff:
    S = np.array([110.0, 105.0, 100.0, 95.0, 90.0])

    def test_basket_at_the_money(self):
        assert payoff_eval(Payoff("basket", 100.0, weights=[0.2] * 5), self.S) == pytest.approx(0.0, abs=1e-12)

    def test_basket_in_the_money(self):
        assert payoff_eval(Payoff("basket", 90.0, weights=[0.2] * 5), self.S) == pytest.approx(10.0)

    def test_best_of(self):
        assert payoff_eval(Payoff("best_of", 100.0), [110.0, 90.0]) == 10.0

    def test_call_and_discount(self):
        model = SdeModel.constant_vol(100.0, 0.05, 2.0, 0.2)
        p = Payoff("call", 100.0)
        assert payoff_eval(p, [120.0]) == 20.0
        assert payoff_eval(p, [120.0], model) == pytest.approx(20.0 * math.exp(-0.1))
        assert payoff_eval(Payoff("call", 100.0, discount=False), [120.0], model) == 20.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            payoff_eval(Payoff("basket", 100.0, weights=[0.5, 0.5]), self.S)

    def test_negative_weights_put_like(self):
        p = Payoff("basket", -100.0, weights=[-1.0])
        assert payoff_eval(p, [90.0]) == 10.0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=3, max_size=3),
           st.lists(st.floats(1, 300), min_size=3, max_size=3),
           st.floats(-100, 300), st.floats(0.01, 100))
    def test_basket_homogeneous(self, w, s, k, c):
        p = Payoff("basket", k, weights=w)
        pc = Payoff("basket", c * k, weights=w)
        a = payoff_eval(pc, c * np.array(s))
        b = c * payoff_eval(p, s)
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)
        assert a >= 0


class TestCorrelation:
    def test_identity(self):
        m = SdeModel.local_vol(100.0, 0.05, 1.0, correlation=0.0, assets=2)
        np.testing.assert_array_equal(build_correlation(m), np.eye(2))

    def test_two_by_two(self):
        m = SdeModel.local_vol(100.0, 0.05, 1.0, correlation=0.3, assets=2)
        expected = np.array([[1.0, 0.0], [0.3, 0.953939201416945665]])
        np.testing.assert_allclose(build_correlation(m), expected, rtol=1e-15)

    def test_heston_joint(self):
        m = SdeModel.heston(100.0, 0.03, 1.0, 2.0, 0.04, 0.25, -0.2, correlation=0.3, assets=2)
        lf = build_correlation(m)
        assert lf.shape == (4, 4)
        assert np.allclose(lf, np.tril(lf))
        # assemble the joint covariance independently
        gs = np.array([[1.0, 0.3], [0.3, 1.0]])
        g = -0.2
        cov = np.zeros((4, 4))
        cov[:2, :2] = gs
        cov[:2, 2:] = g * gs
        cov[2:, :2] = g * gs
        cov[2:, 2:] = g * g * gs + (1 - g * g) * np.eye(2)
        np.testing.assert_allclose(np.diag(cov[2:, 2:]), 1.0)
        assert np.linalg.norm(lf @ lf.T - cov) <= 1e-12 * np.linalg.norm(cov)
        np.testing.assert_allclose(lf, np.linalg.cholesky(cov), rtol=0, atol=1e-14)

    @pytest.mark.parametrize("d", [2, 3, 5, 10])
    def test_boundary_rejected(self, d):
        for rho in (-1.0 / (d - 1), 1.0):
            with pytest.raises(CorrelationError, match="correlation out of admissible range"):
                SdeModel.local_vol(100.0, 0.05, 1.0, correlation=rho, assets=d)

    def test_spot_vol_correlation_rejected(self):
        with pytest.raises(CorrelationError, match="spot_vol_correlation"):
            SdeModel.heston(100.0, 0.03, 1.0, 2.0, 0.04, 0.25, 1.0, assets=2)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 8), st.floats(0, 0.999), st.floats(-0.99, 0.99), st.booleans())
    def test_reconstruction(self, d, u, g, heston):
        lo = -1.0 / (d - 1) if d > 1 else -1.0
        rho = lo + (1 - lo) * (0.001 + 0.998 * u)
        if heston:
            m = SdeModel.heston(100.0, 0.03, 1.0, 2.0, 0.04, 0.1, g, correlation=rho, assets=d)
        else:
            m = SdeModel.local_vol(100.0, 0.05, 1.0, correlation=rho, assets=d)
        lf = m.correlation_factor
        cov = target_covariance(m)
        assert np.linalg.norm(lf @ lf.T - cov) <= 1e-12 * np.linalg.norm(cov)

    def test_equicorrelation(self):
        c = equicorrelation(3, 0.5)
        assert c[0, 0] == 1.0 and c[0, 1] == 0.5


class TestDriftDiffusion:
    def test_local_vol(self):
        m = SdeModel.local_vol(100.0, 0.05, 1.0, smile_center=100.0)
        drift, diff = drift_diffusion(m, 0.0, [100.0])
        assert drift[0] == pytest.approx(5.0)
        assert diff.shape == (1, 1)
        assert diff[0, 0] == pytest.approx(12.0)

    def test_heston(self):
        m = SdeModel.heston(100.0, 0.03, 1.0, kappa=2.0, mean_variance=0.04, vol_of_vol=0.25,
                            spot_vol_correlation=0.0)
        drift, diff = drift_diffusion(m, 0.0, [100.0, 0.04])
        np.testing.assert_allclose(drift, [3.0, 0.0], atol=1e-14)
        np.testing.assert_allclose(np.diag(diff), [20.0, 0.05], rtol=1e-14)
        assert diff[0, 1] == 0.0 and diff[1, 0] == 0.0

    def test_heston_truncation(self):
        m = SdeModel.heston(100.0, 0.03, 1.0, kappa=2.0, mean_variance=0.04, vol_of_vol=0.25,
                            spot_vol_correlation=0.0)
        drift, diff = drift_diffusion(m, 0.0, [100.0, -0.01])
        assert drift[1] == pytest.approx(2.0 * 0.04 + 2.0 * 0.01)
        np.testing.assert_array_equal(diff, np.zeros((2, 2)))

    def test_state_checks(self):
        m = SdeModel.local_vol(100.0, 0.05, 1.0)
        with pytest.raises(ValueError):
            drift_diffusion(m, 0.0, [100.0, 1.0])
        with pytest.raises(FloatingPointError):
            drift_diffusion(m, 0.0, [float("inf")])

    def test_shapes(self):
        m = SdeModel.heston(100.0, 0.03, 1.0, 2.0, 0.04, 0.01, -0.2, correlation=0.3, assets=10)
        assert (m.asset_count, m.driving_dim, m.state_dim) == (10, 20, 20)
        np.testing.assert_array_equal(m.initial_state()[10:], 0.04)

    def test_invalid_heston_parameters(self):
        with pytest.raises(ValueError, match="kappa"):
            SdeModel.heston(100.0, 0.03, 1.0, 0.0, 0.04, 0.01, -0.2)
