import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, stats

from onebit_codec import capacity as cap

# Reference values from adaptive quadrature of the expectation (see quad_capacity).
QUAD_CAPACITY = {
    -10.0: 0.04300960029807685,
    0.0: 0.2786524795555182,
    5.0: 0.4949587124298075,
    10.0: 0.6875828532428333,
    30.0: 0.9671402578762852,
}
QUAD_GAMMA_MIN_DB = {1 / 3: 1.320276485041203, 1 / 2: 5.11642436859127}


def quad_capacity(gamma):
    """Independent evaluator: scipy quadrature over the half line, entropy via scipy."""
    def integrand(t):
        p = stats.norm.sf(t * math.sqrt(gamma))
        return (1.0 - stats.entropy([p, 1.0 - p], base=2)) * stats.norm.pdf(t)
    return 2.0 * integrate.quad(integrand, 0, np.inf, epsabs=1e-13, limit=200)[0]


class TestQFunction:
    def test_zero(self):
        assert cap.q_function(0.0) == 0.5

    @given(st.floats(-30, 30))
    def test_symmetry(self, t):
        assert cap.q_function(t) + cap.q_function(-t) == pytest.approx(1.0, abs=1e-15)

    def test_ten_percent_point(self):
        val = integrate.quad(lambda u: math.exp(-u * u / 2) / math.sqrt(2 * math.pi), 1.2816, np.inf)[0]
        assert abs(cap.q_function(1.2816) - 0.1) < 1e-4
        assert abs(cap.q_function(1.2816) - val) < 1e-12

    def test_deep_tail_accuracy(self):
        assert cap.q_function(10.0) == pytest.approx(7.619853024160527e-24, rel=1e-12)


class TestCapacityOneBit:
    def test_zero_snr(self):
        pt = cap.capacity_one_bit(0.0)
        assert pt.c_bits_per_use == 0.0

    def test_large_snr_tends_to_one(self):
        vals = [cap.capacity_one_bit(10 ** (g / 10), samples=10**5).c_bits_per_use for g in (20, 40, 60)]
        assert vals[0] < vals[1] < vals[2]
        assert vals[2] > 0.99

    @pytest.mark.parametrize("g_db", sorted(QUAD_CAPACITY))
    def test_matches_quadrature(self, g_db):
        pt = cap.capacity_one_bit(10 ** (g_db / 10), samples=10**6, seed=1)
        assert abs(pt.c_bits_per_use - QUAD_CAPACITY[g_db]) < 4 * pt.std_error + 1e-6

    def test_frozen_quadrature_values(self):
        for g_db, val in QUAD_CAPACITY.items():
            assert quad_capacity(10 ** (g_db / 10)) == pytest.approx(val, abs=1e-9)

    def test_bracket_continuous_extension(self):
        t = cap.one_bit_term(np.array([0.0, 50.0, -50.0]), 100.0)
        np.testing.assert_allclose(t, [0.0, 1.0, 1.0])

    def test_point_invariants(self):
        pt = cap.capacity_one_bit(2.0, samples=10**4)
        assert 0.0 <= pt.c_bits_per_use <= 1.0
        assert pt.std_error >= 0.0
        assert pt.gamma_db == pytest.approx(10 * math.log10(2.0))

    def test_sample_floor(self):
        with pytest.raises(ValueError):
            cap.capacity_one_bit(1.0, samples=100)

    def test_deterministic(self):
        a = cap.capacity_one_bit(1.5, samples=10**5, seed=3)
        b = cap.capacity_one_bit(1.5, samples=10**5, seed=3)
        assert a == b

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0, 1e6))
    def test_range(self, gamma):
        c = cap.capacity_one_bit(gamma, samples=10**4).c_bits_per_use
        assert 0.0 <= c <= 1.0


class TestMinSnr:
    @pytest.mark.parametrize("rate", [1 / 3, 1 / 2])
    def test_matches_quadrature_root(self, rate):
        res = cap.min_snr_for_rate(rate, samples=10**6, seed=0)
        assert abs(res.gamma_db - QUAD_GAMMA_MIN_DB[rate]) < 0.03

    def test_frozen_root_values(self):
        for rate, g_db in QUAD_GAMMA_MIN_DB.items():
            root = optimize.brentq(lambda d: quad_capacity(10 ** (d / 10)) - rate, -10, 20, xtol=1e-10)
            assert root == pytest.approx(g_db, abs=1e-6)

    def test_decreasing_in_rate(self):
        vals = [cap.min_snr_for_rate(r, samples=10**5).gamma_db for r in (0.5, 0.3, 0.1, 0.01)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_seed_invariance(self):
        a = cap.min_snr_for_rate(1 / 3, samples=10**6, seed=0).gamma_db
        b = cap.min_snr_for_rate(1 / 3, samples=10**6, seed=17).gamma_db
        assert abs(a - b) < 0.05

    @pytest.mark.parametrize("rate", [0.0, 1.0, 1.5])
    def test_unreachable(self, rate):
        with pytest.raises(ValueError):
            cap.min_snr_for_rate(rate, samples=10**4)

    def test_conventions(self):
        r = 1 / 3
        base = cap.min_snr_for_rate(r, samples=10**5)
        other = cap.min_snr_for_rate(r, samples=10**5, convention="2R")
        assert other.gamma_db == base.gamma_db
        assert other.ebn0_db == pytest.approx(base.gamma_db - 10 * math.log10(2 * r))
        assert cap.gamma_from_ebn0_db(cap.ebn0_from_gamma_db(3.0, r, "R"), r, "R") == pytest.approx(3.0)


class TestCurve:
    def test_monotone_grid(self):
        grid = np.linspace(-10, 30, 50)
        pts = cap.capacity_curve(grid, samples=10**5)
        c = np.array([p.c_bits_per_use for p in pts])
        assert np.all(np.diff(c) >= 0)

    def test_rate_dependent_axis_is_self_consistent(self):
        pts = cap.capacity_curve([2.0, 6.0], samples=10**5, convention="2R")
        for e, p in zip([2.0, 6.0], pts):
            assert p.ebn0_db == pytest.approx(e, abs=1e-6)
