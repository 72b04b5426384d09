import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shuttlesim.analysis import antisymmetry, small_signal_for
from shuttlesim.device import DriveWaveform, derive_constants
from shuttlesim.moments import (
    FIELD_NAMES,
    N_STATE,
    ClosureBreakdown,
    ClosureConfig,
    MomentModel,
    MomentState,
    circuit_rhs,
    full_rhs,
    integrate,
    isserlis_moment,
    moment_table,
    rate_expectation,
    rate_moments,
    variance_rhs,
    with_tier,
)
from shuttlesim.presets import chain_capacitance, chain_params
from shuttlesim.tunneling import rates_at_voltage


def pairing_moment(l1, l2, cov):
    """Sum over perfect pairings of the index multiset (brute force)."""
    idx = [0] * l1 + [1] * l2

    def rec(items):
        if not items:
            return 1.0
        if len(items) % 2:
            return 0.0
        first, rest = items[0], items[1:]
        return sum(cov[first, rest[k]] * rec(rest[:k] + rest[k + 1:]) for k in range(len(rest)))

    return rec(idx)


def random_cov(rng):
    a = rng.normal(size=(2, 2)) * rng.uniform(0.1, 3.0)
    return a @ a.T + 1e-3 * np.eye(2)


def test_isserlis_matches_pairings(rng):
    for _ in range(100):
        C = random_cov(rng)
        for l1 in range(9):
            for l2 in range(9 - l1):
                want = pairing_moment(l1, l2, C)
                got = isserlis_moment(l1, l2, C[0, 0], C[1, 1], C[0, 1])
                assert got == pytest.approx(want, rel=1e-12, abs=1e-14 * max(1.0, np.max(np.abs(C))) ** ((l1 + l2) / 2))


def test_moment_table_matches_isserlis(rng):
    C = random_cov(rng)
    M = moment_table(8, C[0, 0], C[1, 1], C[0, 1])
    for l1 in range(9):
        for l2 in range(9 - l1):
            assert M[l1, l2] == pytest.approx(isserlis_moment(l1, l2, C[0, 0], C[1, 1], C[0, 1]), rel=1e-13)


def test_isserlis_sampling(rng):
    C = np.array([[1.3, -0.4], [-0.4, 0.8]])
    z = rng.multivariate_normal(np.zeros(2), C, size=1_000_000)
    for l1, l2 in [(2, 0), (1, 1), (2, 2), (3, 1), (4, 0), (0, 4)]:
        s = z[:, 0] ** l1 * z[:, 1] ** l2
        se = s.std() / np.sqrt(s.size)
        assert abs(s.mean() - isserlis_moment(l1, l2, C[0, 0], C[1, 1], C[0, 1])) < 4 * se


def test_isserlis_validation():
    with pytest.raises(ValueError):
        isserlis_moment(-1, 2, 1.0, 1.0, 0.0)
    assert isserlis_moment(3, 0, 1.0, 1.0, 0.0) == 0.0


def test_rate_moments_against_quadrature(chain, shuttles):
    """Taylor-Isserlis expectations vs tensor Gauss-Hermite quadrature of the rate kernel."""
    D = np.array([[0.3, 0.1], [0.1, 0.25]])
    mean_n = np.array([0.2, -0.1])
    V = 0.01
    rm = rate_moments(chain, shuttles, V, mean_n, np.zeros(2), D, order=10, perturbed=False)
    t, w = np.polynomial.hermite_e.hermegauss(40)
    Lc = np.linalg.cholesky(D)
    z = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
    ww = np.outer(w, w).ravel() / (2 * np.pi)
    dn = z @ Lc.T
    rs = rates_at_voltage(chain, shuttles, mean_n + dn, np.zeros(2), V, perturbed=False, use_position=False)
    np.testing.assert_allclose(rm.mean[0], ww @ rs.gamma_plus, rtol=1e-7)
    np.testing.assert_allclose(rm.mean[1], ww @ rs.gamma_minus, rtol=1e-7)
    # the covariance terms carry one Taylor order less
    np.testing.assert_allclose(rm.cov[0], (ww[:, None] * rs.gamma_plus).T @ dn, rtol=1e-5)


def test_rate_expectation_fields(chain, shuttles, drive):
    s = MomentState(mean_n=np.array([0.1, 0.0]), D11=0.5, D22=0.5, D12=-0.1)
    fwd = rate_expectation(chain, shuttles, drive, s, 1e-9, 2, "+", L=6)
    bwd = rate_expectation(chain, shuttles, drive, s, 1e-9, 2, -1, L=6)
    assert fwd.net == pytest.approx(fwd.mean - bwd.mean)
    assert fwd.star == pytest.approx(fwd.mean + bwd.mean)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1.5), st.floats(1e9, 1e11))
def test_total_charge_ignores_middle_junction(n1, n2, d, R2):
    """d<n1 + n2>/dt involves only the outer junctions, whatever the middle one does."""
    const = derive_constants(chain_capacitance())
    drive = DriveWaveform(0.05, 1e8)
    y = MomentState(mean_n=np.array([n1, n2]), D11=d, D22=d, D12=0.2 * d).to_vector()
    out = []
    for r2 in (2e9, R2):
        p = chain_params(Q=1.0, resistance=[2e9, r2, 2e9], decay_length=1e-8)
        for f in (circuit_rhs, variance_rhs):
            o = f(const, p, drive, y, 3e-9)
            out.append(o.mean_n.sum())
    assert out[0] == pytest.approx(out[2], rel=1e-10, abs=1e-6)
    assert out[1] == pytest.approx(out[3], rel=1e-10, abs=1e-6)


def test_numba_matches_numpy(chain, shuttles, drive):
    m = MomentModel(chain, shuttles, drive, order=6)
    y = MomentState(mean_n=np.array([0.2, -0.3]), mean_x=np.array([1e-10, -2e-10]), mean_v=np.array([1.0, 2.0]),
                    D11=0.9, D22=0.8, D12=-0.3, Lambda=np.array([1e-21, 2e-21]), W=np.array([1e-4, 2e-4]),
                    Sigma=np.array([1e-14, -1e-14]), X=np.array([1e-11, 2e-11]), Y=np.array([1e-3, -1e-3])).to_vector()
    for tier in ("circuit", "variance", "full"):
        a, ra = m.jit_rhs(y, 2e-9, tier)
        b = m.rhs(tier)(y, 2e-9)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-300)
        np.testing.assert_allclose(ra, m.rates(y, 2e-9, tier), rtol=1e-10)
    cfg = ClosureConfig(order=4, steps_per_period=256)
    ta = integrate(chain, shuttles, drive, cfg, t_span=(0.0, drive.period))
    tb = integrate(chain, shuttles, drive, ClosureConfig(order=4, steps_per_period=256, backend="numpy"),
                   t_span=(0.0, drive.period))
    np.testing.assert_allclose(ta.states, tb.states, rtol=1e-9, atol=1e-25)


def test_rk4_richardson(chain, shuttles, drive):
    """Step-halving error estimate of one RK4 period stays below 1e-8 of each field's scale."""
    runs = [integrate(chain, shuttles, drive, ClosureConfig(steps_per_period=n), t_span=(0.0, drive.period))
            for n in (2048, 4096)]
    a, b = runs[0].states[-1], runs[1].states[-1]
    scale = np.max(np.abs(runs[1].states), axis=0)
    ok = scale > 0
    assert np.max(np.abs(a - b)[ok] / 15 / scale[ok]) < 1e-8


def test_steady_state_and_antisymmetry(chain, shuttles, drive):
    tr = integrate(chain, shuttles, drive, ClosureConfig(order=6))
    assert tr.converged
    assert tr.states.shape == (2049, N_STATE)
    from shuttlesim.analysis import PeriodSeries

    ps = PeriodSeries("full", tr.times, tr.current, tr.rates, True)
    assert antisymmetry(ps) < 1e-6
    # D stays a valid covariance over the period
    D11, D22, D12 = tr.field("D11"), tr.field("D22"), tr.field("D12")
    assert np.all(D11 > 0) and np.all(D12 ** 2 <= D11 * D22)


def test_circuit_tier_small_signal(chain, shuttles):
    d = DriveWaveform(0.002, 3e7)
    tr = integrate(chain, shuttles, d, ClosureConfig(tier="circuit"))
    n1 = tr.field("n1")[:-1]
    c1 = np.fft.rfft(n1)[1] * 2 / n1.size  # Re(c e^{iwt}) convention
    ss = small_signal_for(chain, shuttles, d)
    # <n1> = Im(n_bar e^{iwt}) = Re(-i n_bar e^{iwt})
    assert abs(c1) == pytest.approx(ss.amplitude, rel=0.02)
    assert np.angle(c1 / (-1j * ss.n_bar)) == pytest.approx(0.0, abs=0.02)


def test_breakdown_reported(chain, shuttles, drive):
    bad = MomentState(D11=0.1, D22=0.1, D12=0.5)
    with pytest.raises(ClosureBreakdown, match="D12"):
        full_rhs(chain, shuttles, drive, bad, 0.0)
    neg = MomentState(D11=-0.1, D22=0.1)
    with pytest.raises(ClosureBreakdown, match="D11"):
        full_rhs(chain, shuttles, drive, neg, 0.0)
    full_rhs(chain, shuttles, drive, bad, 0.0, check_bounds=False)


def test_state_vector_roundtrip():
    y = np.arange(N_STATE, dtype=float)
    s = MomentState.from_vector(y)
    np.testing.assert_array_equal(s.to_vector(), y)
    assert s.D[0, 1] == y[FIELD_NAMES.index("D12")]


def test_closure_config_validation():
    for kw in ({"tier": "exact"}, {"order": 3}, {"order": 0}, {"integrator": "bdf"}, {"steps_per_period": 3},
               {"tolerance": 0.0}, {"max_periods": 0}, {"backend": "cuda"}):
        with pytest.raises(ValueError):
            ClosureConfig(**kw)
    assert with_tier(ClosureConfig(), "circuit").tier == "circuit"
