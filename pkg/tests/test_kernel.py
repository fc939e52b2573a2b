from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import simpson
from stopgrad.kernel import (
    DomainError,
    TransitionKernel,
    UniformDeteriorationKernel,
    check_ifr,
    integrate_density,
)


@pytest.fixture(scope="module")
def uk() -> UniformDeteriorationKernel:
    return UniformDeteriorationKernel()


class ImprovingKernel(TransitionKernel):
    """Next state Uniform[0, 1-h]: health improves as h grows (anti-IFR)."""

    H = 1.0

    def density(self, h_next, h_cur):
        hn = np.asarray(h_next, dtype=float)
        hc = np.asarray(h_cur, dtype=float)
        width = np.where(hc < 1.0, 1.0 - hc, 1.0)
        out = np.where((hc < 1.0) & (hn <= 1.0 - hc), 1.0 / width, 0.0)
        return float(out) if np.ndim(h_next) == 0 and np.ndim(h_cur) == 0 else out

    def tail_mass(self, a, h_cur):
        aa = np.asarray(a, dtype=float)
        hc = np.asarray(h_cur, dtype=float)
        width = np.where(hc < 1.0, 1.0 - hc, 1.0)
        out = np.where(hc < 1.0, np.clip((1.0 - hc - aa) / width, 0.0, 1.0), 0.0)
        return float(out) if np.ndim(a) == 0 and np.ndim(h_cur) == 0 else out

    def ppf(self, u, h_cur):
        return (1.0 - np.asarray(h_cur, dtype=float)) * np.asarray(u, dtype=float)

    def density_discontinuities(self, h_cur):
        return (1.0 - h_cur,) if h_cur > 0.0 else ()


class TriangularKernel(TransitionKernel):
    """Density 2(h'-h)/(1-h)^2 on [h, 1]; only the density is implemented, so the
    quadrature/bisection defaults of the base class are exercised."""

    H = 1.0

    def density(self, h_next, h_cur):
        hn = np.asarray(h_next, dtype=float)
        hc = np.asarray(h_cur, dtype=float)
        width = np.where(hc < 1.0, 1.0 - hc, 1.0)
        out = np.where((hc < 1.0) & (hn >= hc) & (hn <= 1.0), 2.0 * (hn - hc) / width**2, 0.0)
        return float(out) if np.ndim(h_next) == 0 and np.ndim(h_cur) == 0 else out

    def density_discontinuities(self, h_cur):
        return (h_cur,) if h_cur < 1.0 else ()


class TestDensity:
    def test_paper_value(self, uk):
        assert uk.density(0.7, 0.5) == pytest.approx(2.0)

    def test_below_support(self, uk):
        assert uk.density(0.3, 0.5) == 0.0

    def test_from_zero(self, uk):
        assert uk.density(0.9, 0.0) == pytest.approx(1.0)

    def test_absorbing_endpoint_has_no_density(self, uk):
        assert uk.density(1.0, 1.0) == 0.0
        assert uk.point_masses(1.0) == ((1.0, 1.0),)

    def test_domain_errors(self, uk):
        with pytest.raises(DomainError):
            uk.density(1.2, 0.5)
        with pytest.raises(DomainError):
            uk.density(0.5, -0.1)

    def test_broadcasting(self, uk):
        hn = np.array([0.2, 0.6, 0.9])
        out = uk.density(hn, 0.5)
        np.testing.assert_allclose(out, [0.0, 2.0, 2.0])


class TestTailMass:
    def test_derived_value_matches_quadrature(self, uk):
        tm = uk.tail_mass(0.8, 0.5)
        assert tm == pytest.approx(0.4, abs=1e-12)
        quad = integrate_density(uk, 0.5, 0.8, 1.0)
        assert tm == pytest.approx(quad, abs=1e-8)

    def test_total_mass(self, uk):
        for h in (0.0, 0.3, 0.99, 1.0):
            assert uk.tail_mass(0.0, h) == pytest.approx(1.0)

    def test_support_entirely_above(self, uk):
        assert uk.tail_mass(0.5, 0.7) == pytest.approx(1.0)

    def test_normalization_on_grid(self, uk):
        for h in np.linspace(0.0, 1.0, 101)[:-1]:
            assert abs(integrate_density(uk, float(h)) - 1.0) < 1e-8

    def test_consistency_with_quadrature_on_grid(self, uk):
        for h in np.linspace(0.0, 0.95, 20):
            for a in np.linspace(0.0, 1.0, 11):
                quad = integrate_density(uk, float(h), float(a), 1.0)
                assert abs(uk.tail_mass(float(a), float(h)) - quad) < 1e-8

    def test_absorbing_region_keeps_its_mass(self, uk):
        # tail_mass(H_D, h) = 1 for h in the absorbing terminal set (here {1}).
        assert uk.tail_mass(1.0, 1.0) == pytest.approx(1.0)


class TestSampling:
    def test_inverse_cdf_form(self, uk):
        for u in (0.0, 0.25, 0.9):
            assert uk.ppf(u, 0.5) == pytest.approx(0.5 + 0.5 * u)

    def test_absorbing_endpoint(self, uk):
        rng = np.random.default_rng(0)
        assert uk.sample_next(1.0, rng) == pytest.approx(1.0)

    def test_single_draw_per_transition(self, uk):
        class Counting:
            calls = 0

            def random(self):
                Counting.calls += 1
                return 0.5

        uk.sample_next(0.3, Counting())
        assert Counting.calls == 1

    def test_empirical_cdf_matches_tail_mass(self, uk):
        n = 100_000
        rng = np.random.default_rng(1234)
        h = 0.5
        draws = np.sort([uk.ppf(u, h) for u in rng.random(n)])
        grid = np.linspace(h, 1.0, 401)
        emp_tail = 1.0 - np.searchsorted(draws, grid, side="left") / n
        true_tail = np.asarray(uk.tail_mass(grid, h))
        assert np.abs(emp_tail - true_tail).max() < 0.01

    def test_tail_frequencies_within_three_binomial_se(self, uk):
        n = 100_000
        rng = np.random.default_rng(77)
        draws = uk.ppf(rng.random(n), 0.0)
        assert abs(draws.mean() - 0.5) < 0.003
        for a in (0.2, 0.5, 0.9):
            p = uk.tail_mass(a, 0.0)
            freq = float((draws >= a).mean())
            se = np.sqrt(p * (1 - p) / n)
            assert abs(freq - p) <= 3 * se


class TestDefaultsViaTriangularKernel:
    def test_default_tail_mass_matches_closed_form(self):
        tk = TriangularKernel()
        for h in (0.0, 0.4):
            for a in (0.5, 0.8):
                exact = 1.0 - ((a - h) / (1.0 - h)) ** 2 if a >= h else 1.0
                assert tk.tail_mass(a, h) == pytest.approx(exact, abs=1e-7)

    def test_default_ppf_inverts_the_cdf(self):
        tk = TriangularKernel()
        for u in (0.1, 0.5, 0.95):
            x = tk.ppf(u, 0.2)
            assert 1.0 - tk.tail_mass(x, 0.2) == pytest.approx(u, abs=1e-7)

    def test_default_sample_next_distribution(self):
        tk = TriangularKernel()
        rng = np.random.default_rng(5)
        draws = np.array([tk.sample_next(0.0, rng) for _ in range(400)])
        # mean of the triangular law on [0, 1] peaked at 1 is 2/3
        assert abs(draws.mean() - 2.0 / 3.0) < 0.05


class TestIfr:
    def test_uniform_kernel_passes(self, uk):
        report = check_ifr(uk, np.linspace(0.0, 1.0, 101))
        assert report.passed and report.witness is None

    def test_uniform_kernel_passes_on_irregular_grid(self, uk):
        grid = np.unique(np.random.default_rng(8).random(200))
        assert check_ifr(uk, grid).passed

    def test_improving_kernel_fails_with_witness(self):
        report = check_ifr(ImprovingKernel(), np.linspace(0.0, 0.99, 101))
        assert not report.passed
        x0, x1, x2 = report.witness
        k = ImprovingKernel()
        assert x1 < x2
        assert k.tail_mass(x0, x1) > k.tail_mass(x0, x2)

    def test_single_point_grid_is_vacuous(self, uk):
        assert check_ifr(uk, [0.5]).passed

    def test_rejects_unsorted_grid(self, uk):
        with pytest.raises(ValueError):
            check_ifr(uk, [0.5, 0.2])


@settings(max_examples=60, deadline=None)
@given(
    a=st.floats(0.0, 1.0, allow_nan=False),
    a2=st.floats(0.0, 1.0, allow_nan=False),
    h=st.floats(0.0, 0.999, allow_nan=False),
)
def test_tail_mass_bounds_and_monotonicity(a, a2, h):
    uk = UniformDeteriorationKernel()
    lo, hi = sorted((a, a2))
    t_lo, t_hi = uk.tail_mass(lo, h), uk.tail_mass(hi, h)
    assert 0.0 <= t_hi <= t_lo <= 1.0


@settings(max_examples=60, deadline=None)
@given(
    u=st.floats(0.0, 1.0, allow_nan=False, exclude_max=True),
    u2=st.floats(0.0, 1.0, allow_nan=False, exclude_max=True),
    h=st.floats(0.0, 1.0, allow_nan=False),
)
def test_ppf_stays_in_support_and_is_monotone(u, u2, h):
    uk = UniformDeteriorationKernel()
    lo, hi = sorted((u, u2))
    x_lo, x_hi = uk.ppf(lo, h), uk.ppf(hi, h)
    assert h <= x_lo <= x_hi <= 1.0


def test_continuation_mean_reward_oracle_agrees_with_kernel():
    # E[8(1-h')] for h' ~ Uniform[theta, 1] equals 4(1-theta); quadrature on the
    # kernel density must agree with the independent oracle integration.
    uk = UniformDeteriorationKernel()
    theta = 0.8
    mean_r = simpson(lambda y: 8.0 * (1.0 - y) * np.asarray(uk.density(y, theta)), theta, 1.0)
    assert mean_r == pytest.approx(4.0 * (1.0 - theta), abs=1e-10)
