import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from uavlpm.citymap import Region
from uavlpm.identification import (LOS, NLOS, IdentificationConfig, fuse, identify, map_prior)
from uavlpm.lpm import LosProbabilityMap
from uavlpm.sensing import EchoMeasurement, UAV, BLOCKER
from uavlpm.tracking import KalmanBelief, measurement_fn, measurement_jacobian

BS = np.array([0.0, 0.0, 25.0])
REGION = Region([-100, -100, 0], [200, 200, 150], [50, 50, 50])
probs = st.floats(0.0, 1.0)
likes = st.floats(1e-30, 1e30)


def uniform_map(p, strength=10.0):
    a = np.full(REGION.counts, max(strength * p, 1e-6))
    b = np.full(REGION.counts, max(strength * (1 - p), 1e-6))
    return LosProbabilityMap(REGION, BS, a, b)


def belief():
    return KalmanBelief(np.array([80.0, 30, 60, 2, 1, 0]), np.diag([4.0] * 3 + [1.0] * 3))


def echo(z, origin=UAV):
    return EchoMeasurement(*z, echo_snr=100.0, origin=origin)


R = np.diag([1.0, 1e-4, 1e-4, 0.25])


class TestFuse:
    @given(likes, likes)
    def test_prior_one(self, l1, l2):
        d = fuse(1.0, l1, l2)
        assert d.state == LOS and d.posterior_los == 1.0

    @given(likes, likes)
    def test_prior_zero(self, l1, l2):
        d = fuse(0.0, l1, l2)
        assert d.state == NLOS and d.posterior_los == 0.0

    @given(likes, likes)
    def test_half_prior_is_ratio_test(self, l1, l2):
        assume(l1 != l2)
        assert (fuse(0.5, l1, l2).state == LOS) == (l1 > l2)

    @given(probs, likes, likes)
    def test_formula(self, p, l1, l2):
        d = fuse(p, l1, l2)
        den = p * l1 + (1 - p) * l2
        assert d.posterior_los == (p * l1 / den if den > 0 else p)
        assert (d.state == LOS) == (d.posterior_los >= 0.5)

    @given(probs, probs, likes, likes)
    def test_monotone_in_prior(self, p1, p2, l1, l2):
        lo, hi = sorted((p1, p2))
        assert fuse(lo, l1, l2).posterior_los <= fuse(hi, l1, l2).posterior_los + 1e-15

    @given(probs, st.floats(1e-6, 1e6), st.floats(1e-6, 1e6), st.floats(1e-3, 1e3))
    def test_likelihood_scale_invariance(self, p, l1, l2, c):
        a, b = fuse(p, l1, l2), fuse(p, c * l1, c * l2)
        assert a.posterior_los == pytest.approx(b.posterior_los, rel=1e-12, abs=1e-300)

    def test_tie_goes_to_los(self):
        assert fuse(0.5, 1.0, 1.0).state == LOS
        assert fuse(0.7, 1.0, 1.0, threshold=0.7).state == LOS


class TestIdentify:
    def test_uav_echo_is_los(self):
        b = belief()
        d = identify(b, echo(measurement_fn(b.mean, BS)), uniform_map(0.5), BS, R)
        assert d.state == LOS and d.prior_los == pytest.approx(0.5)

    def test_far_echo_is_nlos(self):
        b = belief()
        z = measurement_fn(b.mean, BS)
        z[0] -= 40.0  # blocker much closer than the predicted track
        d = identify(b, echo(z, BLOCKER), uniform_map(0.5), BS, R)
        assert d.state == NLOS

    def test_posterior_oracle(self):
        b = belief()
        z = measurement_fn(b.mean, BS) + np.array([2.0, 0.01, -0.01, 0.5])
        cfg = IdentificationConfig()
        d = identify(b, echo(z), uniform_map(0.3), BS, R, cfg)
        H = measurement_jacobian(b.mean, BS)
        S = H @ b.cov @ H.T + R
        nu = z - measurement_fn(b.mean, BS)
        l_los = multivariate_normal(np.zeros(4), S).pdf(nu)
        V = REGION.diagonal * 2 * math.pi * (math.pi / 2) * 100.0
        p = d.prior_los
        assert d.posterior_los == pytest.approx(p * l_los / (p * l_los + (1 - p) / V), rel=1e-9)
        assert d.likelihood_ratio == pytest.approx(l_los * V, rel=1e-9)

    def test_missed_detection(self):
        miss = EchoMeasurement(math.nan, math.nan, math.nan, math.nan, 0.0, UAV, False)
        d = identify(belief(), miss, uniform_map(0.8), BS, None)
        p = d.prior_los
        assert d.state == NLOS
        assert d.posterior_los == pytest.approx(p * 0.01 / (p * 0.01 + 1 - p), rel=1e-12)

    def test_prediction_outside_region_is_clamped(self):
        b = KalmanBelief(np.array([500.0, 30, 60, 0, 0, 0]), np.eye(6))
        d = identify(b, echo(measurement_fn(b.mean, BS)), uniform_map(0.5), BS, R)
        assert d.clamped
        p, clamped = map_prior(uniform_map(0.5), np.array([80.0, 30, 60]))
        assert not clamped

    def test_volume_default(self):
        assert IdentificationConfig().volume(REGION) == pytest.approx(
            REGION.diagonal * 2 * math.pi * math.pi / 2 * 100)
        assert IdentificationConfig(d_max=10, v_max=1).volume(REGION) == pytest.approx(
            10 * 2 * math.pi * math.pi / 2 * 2)
