import math

import numpy as np
import pytest
from scipy import special as sp

from oracles import chi2_upper_quantile_quad
from randconv.special import (
    chi2_lower_quantile,
    chi2_sf,
    chi2_upper_quantile,
    gammainc_lower,
    gammainc_upper,
)

# frozen from oracles.chi2_upper_quantile_quad(0.05, 3)
CHI2_3_UPPER_005 = 7.814727903251217

GRID_ALPHA = [0.9, 0.5, 0.1, 0.05, 1e-3, 2e-7, 1e-7]
GRID_M = [1, 2, 3, 10, 27]


@pytest.mark.parametrize("a", [0.5, 1.0, 1.5, 5.0, 13.5, 40.0])
@pytest.mark.parametrize("x", [1e-6, 0.1, 1.0, 3.0, 10.0, 50.0, 120.0])
def test_incomplete_gamma_matches_scipy(a, x):
    assert gammainc_lower(a, x) == pytest.approx(sp.gammainc(a, x), rel=1e-12, abs=1e-300)
    assert gammainc_upper(a, x) == pytest.approx(sp.gammaincc(a, x), rel=1e-10, abs=1e-300)


def test_incomplete_gamma_edges():
    assert gammainc_lower(2.0, 0.0) == 0.0
    assert gammainc_upper(2.0, 0.0) == 1.0
    with pytest.raises(ValueError):
        gammainc_lower(0.0, 1.0)
    with pytest.raises(ValueError):
        gammainc_upper(1.0, -1.0)


def test_exponential_median():
    assert chi2_upper_quantile(0.5, 2) == pytest.approx(2 * math.log(2), abs=1e-10)


def test_against_quadrature_oracle():
    assert chi2_upper_quantile(0.05, 3) == pytest.approx(CHI2_3_UPPER_005, abs=1e-8)


def test_quadrature_oracle_value_is_frozen_correctly():
    assert chi2_upper_quantile_quad(0.05, 3) == pytest.approx(CHI2_3_UPPER_005, abs=1e-9)


def test_worked_example_tail():
    assert math.sqrt(chi2_upper_quantile(2.002e-7, 3)) == pytest.approx(5.8, abs=0.05)


@pytest.mark.parametrize("alpha", GRID_ALPHA)
@pytest.mark.parametrize("m", GRID_M)
def test_quantile_inversion(alpha, m):
    x = chi2_upper_quantile(alpha, m)
    assert abs(chi2_sf(x, m) - alpha) < 1e-8
    assert x == pytest.approx(sp.chdtri(m, alpha), rel=1e-9)


@pytest.mark.parametrize("m", GRID_M)
def test_lower_quantile_keeps_relative_accuracy(m):
    for beta in (1e-3, 2e-7, 1e-12):
        x = chi2_lower_quantile(beta, m)
        assert x == pytest.approx(sp.chdtri(m, 1 - beta) if beta > 1e-9 else sp.gammaincinv(m / 2, beta) * 2, rel=1e-7)


def test_monotone_in_alpha_and_m():
    alphas = sorted(GRID_ALPHA + [0.3, 0.7, 0.99])
    for m in GRID_M:
        xs = [chi2_upper_quantile(a, m) for a in alphas]
        assert all(b < a for a, b in zip(xs, xs[1:]))
    for a in alphas:
        xs = [chi2_upper_quantile(a, m) for m in range(1, 30)]
        assert all(b > a_ for a_, b in zip(xs, xs[1:]))


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_alpha_domain(bad):
    with pytest.raises(ValueError):
        chi2_upper_quantile(bad, 3)


def test_rejects_bad_dof():
    with pytest.raises(ValueError):
        chi2_upper_quantile(0.5, 0)
