import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torusbfn.kernels import compiled_available, load_backend
from torusbfn.special import (
    DomainError,
    angle_to_frac,
    bessel_i0_log,
    bessel_ratio_i1_i0,
    circular_distance,
    frac_to_angle,
    wrap,
)

mpmath.mp.dps = 40


def series_log_i0(x, terms=60):
    """Power series sum (x/2)^(2k) / (k!)^2 in high precision."""
    x = mpmath.mpf(x)
    return float(mpmath.log(mpmath.fsum((x / 2) ** (2 * k) / mpmath.factorial(k) ** 2 for k in range(terms))))


def series_ratio(x, terms=80):
    x = mpmath.mpf(x)
    i0 = mpmath.fsum((x / 2) ** (2 * k) / mpmath.factorial(k) ** 2 for k in range(terms))
    i1 = mpmath.fsum((x / 2) ** (2 * k + 1) / (mpmath.factorial(k) * mpmath.factorial(k + 1)) for k in range(terms))
    return float(i1 / i0)


class TestLogI0:
    def test_zero(self, backend):
        assert bessel_i0_log(0.0) == 0.0

    def test_one_matches_series(self, backend):
        assert bessel_i0_log(1.0) == pytest.approx(math.log(1.2660658777520082), rel=1e-14)
        assert bessel_i0_log(1.0) == pytest.approx(series_log_i0(1.0), rel=1e-14)

    def test_large_argument_matches_asymptotic_oracle(self, backend):
        x = 1000.0
        oracle = x - 0.5 * math.log(2 * math.pi * x) + math.log(1 + 1 / (8 * x) + 9 / (128 * x * x))
        assert bessel_i0_log(x) == pytest.approx(oracle, rel=1e-8)

    def test_random_points_match_series(self, backend):
        xs = np.random.default_rng(0).uniform(0, 50, 200)
        ref = np.array([series_log_i0(x, terms=150) for x in xs])
        got = bessel_i0_log(xs)
        np.testing.assert_allclose(got, ref, rtol=1e-9)

    def test_relative_error_over_full_range(self, backend):
        xs = np.concatenate([np.geomspace(1e-6, 1e5, 300), [19.999, 20.0, 20.001]])
        ref = np.array([float(mpmath.log(mpmath.besseli(0, x))) for x in xs])
        got = bessel_i0_log(xs)
        # relative error measured on I0 itself, i.e. absolute error of its log
        np.testing.assert_allclose(np.expm1(got - ref), 0.0, atol=1e-10)

    def test_nonnegative(self, backend):
        assert np.all(bessel_i0_log(np.linspace(0, 1e4, 1001)) >= 0)

    @pytest.mark.parametrize("bad", [-1e-12, -3.0, np.nan, np.inf])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            bessel_i0_log(bad)

    def test_shape_preserved(self):
        x = np.arange(12.0).reshape(3, 4)
        assert bessel_i0_log(x).shape == (3, 4)
        assert isinstance(bessel_i0_log(2.0), float)


class TestRatio:
    def test_zero(self, backend):
        assert bessel_ratio_i1_i0(0.0) == 0.0

    def test_two_matches_series(self, backend):
        assert bessel_ratio_i1_i0(2.0) == pytest.approx(series_ratio(2.0), abs=1e-14)

    def test_large_argument(self, backend):
        x = 1e4
        assert abs(bessel_ratio_i1_i0(x) - (1 - 1 / (2 * x))) <= 1e-6
        assert bessel_ratio_i1_i0(x) == pytest.approx(1 - 1 / (2 * x) - 1 / (8 * x * x), abs=1e-10)

    def test_absolute_error_over_range(self, backend):
        xs = np.concatenate([np.geomspace(1e-6, 1e5, 300), [19.999, 20.0, 20.001]])
        ref = np.array([float(mpmath.besseli(1, x) / mpmath.besseli(0, x)) for x in xs])
        np.testing.assert_allclose(bessel_ratio_i1_i0(xs), ref, rtol=0, atol=1e-10)

    def test_strictly_increasing_and_bounded(self, backend):
        xs = np.linspace(0, 1e4, 10_000)
        r = bessel_ratio_i1_i0(xs)
        assert np.all(np.diff(r) > 0)
        assert np.all((r >= 0) & (r < 1))

    @pytest.mark.parametrize("bad", [-0.5, np.nan])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            bessel_ratio_i1_i0(bad)


@pytest.mark.skipif(not compiled_available(), reason="compiled kernels not built")
def test_backends_agree():
    py, cy = load_backend("python"), load_backend("compiled")
    x = np.concatenate([np.geomspace(1e-8, 1e5, 2000), np.linspace(15, 25, 500)])
    np.testing.assert_allclose(cy.log_i0(x), py.log_i0(x), rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(cy.ratio_i1_i0(x), py.ratio_i1_i0(x), rtol=0, atol=1e-13)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        load_backend("fortran")


class TestWrap:
    def test_examples(self):
        assert wrap(0.0) == 0.0
        assert wrap(3 * np.pi) == pytest.approx(-np.pi, abs=1e-15)
        assert wrap(0.3 + 2 * np.pi) == pytest.approx(0.3, abs=1e-15)

    def test_pi_maps_to_minus_pi(self):
        assert wrap(np.pi) == -np.pi

    def test_just_below_pi_never_reaches_pi(self):
        x = np.nextafter(np.pi, 0) + 2 * np.pi * np.arange(-5, 6)
        assert np.all(wrap(x) < np.pi)

    @given(st.floats(-1e6, 1e6, allow_nan=False), st.integers(-10, 10))
    def test_periodic(self, x, k):
        w = wrap(x)
        assert -np.pi <= w < np.pi
        # near -pi the two sides of the cut are the same point
        assert circular_distance(wrap(w + 2 * np.pi * k), w) <= 1e-9

    @given(st.floats(-1e3, 1e3, allow_nan=False))
    def test_congruent(self, x):
        assert math.remainder(wrap(x) - x, 2 * np.pi) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            wrap(bad)


class TestFractions:
    def test_examples(self):
        assert frac_to_angle(0.5) == 0.0
        assert angle_to_frac(frac_to_angle(0.5)) == 0.5
        assert frac_to_angle(0.0) == -np.pi
        assert frac_to_angle(0.3) == pytest.approx(2 * np.pi * 0.3 - np.pi, abs=1e-15)

    @settings(max_examples=300)
    @given(st.floats(0.0, 1.0, exclude_max=True))
    def test_round_trip(self, f):
        back = angle_to_frac(frac_to_angle(f))
        assert min(abs(back - f), 1 - abs(back - f)) <= 1e-14

    def test_round_trip_grid(self):
        f = np.linspace(0, 1, 100_001)[:-1]
        np.testing.assert_allclose(angle_to_frac(frac_to_angle(f)), f, atol=1e-14)

    def test_frac_output_in_unit_interval(self):
        a = np.nextafter(np.pi, 0) - np.arange(5) * 1e-17
        f = angle_to_frac(a)
        assert np.all((f >= 0) & (f < 1))

    @pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5, np.nan])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            frac_to_angle(bad)


def test_circular_distance():
    assert circular_distance(np.pi - 0.1, -np.pi + 0.1) == pytest.approx(0.2)
    assert circular_distance(0.0, np.pi) == pytest.approx(np.pi)
