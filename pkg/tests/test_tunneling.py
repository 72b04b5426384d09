import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shuttlesim.constants import K_B, Q_E
from shuttlesim.tunneling import (
    SERIES_SWITCH,
    full_rates,
    kernel_derivatives,
    phi,
    phi_derivatives,
    position_factor,
    position_factors,
    rate,
    rates_at_voltage,
)

# u / (1 - exp(-u)) at 40 digits (mpmath), frozen
PSI = {
    -30.0: 2.8072868906523150768e-12,
    -3.5: 0.10898180740229925168,
    -1e-3: 0.99950008333333194444,
    -1e-4: 0.99995000083333333319,
    1e-4: 1.0000500008333333332,
    1e-3: 1.0005000833333319444,
    0.5: 1.2707470412683991421,
    3.5: 3.6089818074022992517,
    30.0: 30.000000000002807287,
}

# d^l/du^l of the same function, l = 0..6 (mpmath, frozen)
PSI_DERIVS = {
    -5.0: [0.0339182745315211555, 0.0273647094946560517, 0.0209523200799978476, 0.0147806978462440322,
           0.00901014422634331163, 0.00388786676771598527, -0.000227356543868157168],
    -1.0: [0.581976706869326424, 0.338696887338465895, 0.150947578709402755, 0.0296284952617979695,
           -0.022718211777988321, -0.0188381062292366392, 0.0099749659502881602],
    0.3: [1.15748877405302478, 0.54985048070052654, 0.165174668753816959, -0.00989352886919703625,
          -0.0322730784673432178, 0.00699438031341389101, 0.0223348376008270785],
    2.0: [2.3130352854993313, 0.794486812266510419, 0.113328424379854513, -0.0421909148496098557,
          -0.00253210452978360568, 0.0182915761542703041, -0.00905798123947893717],
    6.0: [6.01490946994106751, 0.98753839300012314, 0.010038627328026295, -0.00765951696987711301,
          0.00535653950374491725, -0.00318312622295336704, 0.00122480229825070248],
}

KT = K_B * 300.0


@pytest.mark.parametrize("u", sorted(PSI))
def test_phi_against_high_precision(u):
    assert phi(u * KT, KT) / KT == pytest.approx(PSI[u], rel=1e-13)


@pytest.mark.parametrize("u", sorted(PSI_DERIVS))
def test_phi_derivatives_against_high_precision(u):
    d = phi_derivatives(np.array([u * KT]), KT, 6)[:, 0]
    scaled = d * KT ** (np.arange(7) - 1.0)
    np.testing.assert_allclose(scaled, PSI_DERIVS[u], rtol=1e-9, atol=1e-15)


def test_phi_at_zero():
    assert phi(0.0, KT) == pytest.approx(KT, rel=1e-15)


@pytest.mark.parametrize("edge", [SERIES_SWITCH, -SERIES_SWITCH])
def test_phi_continuous_across_series_branch(edge):
    u = edge * np.array([1 - 1e-12, 1 + 1e-12])
    a, b = phi(u * KT, KT)
    assert abs(a - b) / abs(a) < 1e-12


@pytest.mark.parametrize("edge", [3.5, -3.5])
def test_derivatives_continuous_across_branch(edge):
    u = edge * np.array([1 - 1e-10, 1 + 1e-10])
    d = phi_derivatives(u * KT, KT, 8) * KT ** (np.arange(9) - 1.0)[:, None]
    np.testing.assert_allclose(d[:, 0], d[:, 1], rtol=1e-8, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-200, 200, allow_nan=False))
def test_detailed_balance_difference(u):
    # Phi(U) - Phi(-U) = U for every U
    assert phi(u * KT, KT) - phi(-u * KT, KT) == pytest.approx(u * KT, rel=1e-12, abs=1e-14 * KT)


@settings(max_examples=200, deadline=None)
@given(st.floats(-700, 700, allow_nan=False), st.floats(1e-6, 5))
def test_phi_positive_and_increasing(u, du):
    a, b = phi(np.array([u, u + du]) * KT, KT)
    assert a >= 0.0 and b >= a


def test_phi_rejects_non_finite():
    with pytest.raises(ValueError):
        phi(np.array([0.0, np.nan]), KT)


def test_rate_scaling_and_validation():
    U = np.array([-2e-21, 0.0, 5e-21])
    r1 = rate(U, 1e9, 300.0)
    np.testing.assert_allclose(rate(U, 2e9, 300.0), r1 / 2)
    np.testing.assert_allclose(r1, phi(U, KT) / (Q_E ** 2 * 1e9))
    np.testing.assert_allclose(rate(U, 1e9, 300.0, beta=1e40), r1 * (1 + 1e40 * U * U))
    with pytest.raises(ValueError):
        rate(U, 0.0, 300.0)
    with pytest.raises(ValueError):
        rate(U, 1e9, 0.0)


def test_kernel_derivatives_with_beta():
    beta = 3e40
    U0 = 2e-21
    h = 1e-25
    d = kernel_derivatives(np.array([U0]), KT, beta, 2)[:, 0]
    f = lambda U: phi(U, KT) * (1 + beta * U * U)  # noqa: E731
    assert d[0] == pytest.approx(f(U0), rel=1e-14)
    assert d[1] == pytest.approx((f(U0 + h) - f(U0 - h)) / (2 * h), rel=1e-6)
    assert d[2] == pytest.approx((f(U0 + h) - 2 * f(U0) + f(U0 - h)) / h ** 2, rel=1e-3)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5e-9, 5e-9), st.floats(-5e-9, 5e-9))
def test_position_factors(x1, x2):
    x = np.array([x1, x2])
    K = position_factors(x, 1e-8)
    np.testing.assert_allclose(K, np.exp(-np.array([x1, x2 - x1, -x2]) / 1e-8))
    # the three junction exponents cancel for equal decay lengths
    assert np.prod(K) == pytest.approx(1.0, rel=1e-12)
    assert position_factor(x, 2, [1e-8, 1e-8, 1e-8]) == K[1]


def test_position_factor_rejects_bad_length():
    with pytest.raises(ValueError):
        position_factor(np.zeros(2), 1, [1e-8, 0.0, 1e-8])


def test_full_rates_at_rest(chain, shuttles, drive):
    r = full_rates(chain, shuttles, np.zeros(2), np.zeros(2), drive.period / 4, drive)
    direct = rates_at_voltage(chain, shuttles, np.zeros(2), np.zeros(2), drive.V0)
    np.testing.assert_array_equal(r.gamma_plus, direct.gamma_plus)
    np.testing.assert_allclose(r.net, r.gamma_plus - r.gamma_minus)
    assert np.all(r.total > 0)
