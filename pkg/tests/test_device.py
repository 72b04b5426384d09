import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shuttlesim.constants import Q_E, T_MAT
from shuttlesim.device import (
    CapacitanceInput,
    DriveWaveform,
    ShuttleParams,
    derive_constants,
    energy_change,
    force_at_voltage,
    free_energies_at_voltage,
    free_energy,
    gate_offset,
    source_charge,
    stored_energy,
)
from shuttlesim.presets import chain_capacitance, chain_params

caps = st.tuples(
    st.floats(1e-18, 2e-17), st.floats(1e-19, 1e-17), st.floats(1e-18, 5e-17), st.floats(1e-19, 5e-18),
)
charges = st.tuples(st.integers(-6, 6), st.integers(-6, 6))
volts = st.floats(-0.5, 0.5)


def _cap(c):
    cj, c12, cd, cg = c
    return chain_capacitance(c_junction=cj, c_shuttle=c12, c_drain=cd, c_gate=cg)


def _at(cap, x):
    """Capacitance blocks moved to displacement x (blocks are linear in x)."""
    kw = {}
    for k in ("C_SS", "c_GS", "C_GG", "c_S", "c_G"):
        kw[k] = getattr(cap, k) + x[0] * getattr(cap, "d" + k)[0] + x[1] * getattr(cap, "d" + k)[1]
    kw["C00"] = cap.C00 + x @ cap.dC00
    return derive_constants(CapacitanceInput(**kw))


def _potential(const, n, n_G, V):
    """Stored energy minus source work at constant island charge -q n."""
    QS, QG = -Q_E * np.asarray(n, float), -Q_E * np.asarray(n_G, float)
    return stored_energy(const, QS, QG, V) - V * source_charge(const, QS, QG, V)


@settings(max_examples=60, deadline=None)
@given(caps)
def test_pump_coefficients_sum_to_one(c):
    const = derive_constants(_cap(c))
    assert const.kappa.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(caps, charges, st.integers(1, 3), st.sampled_from([1, -1]))
def test_energy_change_matches_stored_energy(c, n, j, d):
    cap = _cap(c)
    const = derive_constants(cap)
    params = chain_params(n_G=(1, -2))
    n = np.array(n, float)
    QG = -Q_E * params.n_G
    E = lambda m: stored_energy(const, -Q_E * m, QG, 0.0)  # noqa: E731
    expected = E(n + d * T_MAT[j - 1]) - E(n)
    assert energy_change(const, params, n, j, d) == pytest.approx(expected, rel=1e-9, abs=1e-12 * abs(const.E0[j - 1]))


@settings(max_examples=60, deadline=None)
@given(caps, charges, volts)
def test_free_energy_is_source_work_minus_energy(c, n, V):
    const = derive_constants(_cap(c))
    params = chain_params(n_G=(2, 1))
    n = np.array(n, float)
    up, um = free_energies_at_voltage(const, params, n, np.zeros(2), V, perturbed=False)
    G0 = _potential(const, n, params.n_G, V)
    for j in range(3):
        # junction 3 delivers the electron to the driven electrode itself
        into_source = 1.0 if j == 2 else 0.0
        fwd = -(_potential(const, n + T_MAT[j], params.n_G, V) - G0) + Q_E * V * into_source
        bwd = -(_potential(const, n - T_MAT[j], params.n_G, V) - G0) - Q_E * V * into_source
        scale = max(abs(const.E0[j]), Q_E * abs(V))
        assert up[j] == pytest.approx(fwd, abs=1e-9 * scale)
        assert um[j] == pytest.approx(bwd, abs=1e-9 * scale)


@settings(max_examples=60, deadline=None)
@given(caps, charges, volts, st.integers(0, 2))
def test_reverse_event_free_energy(c, n, V, j):
    """A backward event undoing a forward one releases exactly what the forward one cost."""
    const = derive_constants(_cap(c))
    params = chain_params(n_G=(1, 1))
    n = np.array(n, float)
    up, _ = free_energies_at_voltage(const, params, n, np.zeros(2), V, perturbed=False)
    _, um = free_energies_at_voltage(const, params, n + T_MAT[j], np.zeros(2), V, perturbed=False)
    assert um[j] == pytest.approx(-up[j], abs=1e-12 * abs(const.E0[j]))


@settings(max_examples=30, deadline=None)
@given(caps, charges, volts)
def test_force_is_minus_gradient_at_constant_charge(c, n, V):
    cap = _cap(c)
    const = derive_constants(cap)
    params = chain_params(n_G=(1, 0))
    n = np.array(n, float)
    F = force_at_voltage(const, params, n, V, include_neutral_term=True)
    h = 1e-13
    for s in range(2):
        e = np.zeros(2)
        e[s] = h
        fd = -(_potential(_at(cap, e), n, params.n_G, V) - _potential(_at(cap, -e), n, params.n_G, V)) / (2 * h)
        assert F[s] == pytest.approx(fd, rel=1e-5, abs=1e-9 * np.max(np.abs(F)) + 1e-22)


def test_neutral_term_is_opt_in(chain):
    p = chain_params()
    n = np.array([1.0, 2.0])
    diff = force_at_voltage(chain, p, n, 0.2, True) - force_at_voltage(chain, p, n, 0.2, False)
    np.testing.assert_allclose(diff, 0.5 * chain.dC0 * 0.04)


def test_free_energy_index_validation(chain, drive):
    p = chain_params()
    with pytest.raises(ValueError):
        free_energy(chain, p, [0, 0], [0, 0], 0.0, drive, 4, 1)
    with pytest.raises(ValueError):
        free_energy(chain, p, [0, 0], [0, 0], 0.0, drive, 1, 0)
    a = free_energy(chain, p, [0, 0], [0, 0], 0.0, drive, 2, "+")
    b = free_energy(chain, p, [0, 0], [0, 0], 0.0, drive, 2, 1)
    assert a == b


def test_gate_offset(gated):
    p = chain_params(n_G=(2, 0))
    np.testing.assert_allclose(gate_offset(gated, p), [-1.0, 0.0])
    with pytest.raises(ValueError):
        gate_offset(gated, chain_params(n_G=(1,)))


def test_capacitance_validation():
    good = chain_capacitance()
    with pytest.raises(ValueError, match="symmetric"):
        CapacitanceInput(C_SS=[[1e-18, 2e-19], [1e-19, 1e-18]], c_GS=np.zeros((0, 2)), C_GG=np.zeros((0, 0)),
                         c_S=[0, 0], c_G=[], C00=1e-17)
    with pytest.raises(ValueError, match="positive definite"):
        CapacitanceInput(C_SS=[[1e-18, 2e-18], [2e-18, 1e-18]], c_GS=np.zeros((0, 2)), C_GG=np.zeros((0, 0)),
                         c_S=[0, 0], c_G=[], C00=1e-17)
    with pytest.raises(ValueError, match="shape"):
        CapacitanceInput(C_SS=[1e-18, 1e-18], c_GS=np.zeros((0, 2)), C_GG=np.zeros((0, 0)),
                         c_S=[0, 0], c_G=[], C00=1e-17)
    back = CapacitanceInput.from_full(good.full_matrix(), good.full_derivative())
    np.testing.assert_allclose(back.full_matrix(), good.full_matrix())
    np.testing.assert_allclose(back.full_derivative(), good.full_derivative())


def test_shuttle_params_validation():
    with pytest.raises(ValueError):
        ShuttleParams(omega_s=1e8, m_s=1e-18, lambda_j=1e-9, R0_j=1e9, temperature=300)
    with pytest.raises(ValueError, match="integers"):
        chain_params(n_G=(0.5, 0))
    with pytest.raises(ValueError):
        chain_params(temperature=0.0)
    with pytest.raises(ValueError):
        ShuttleParams(omega_s=1e8, m_s=1e-18, lambda_j=1e-9, R0_j=1e9, temperature=300, Q=2, gamma_s=1e7)
    p = chain_params(Q=2.0)
    np.testing.assert_allclose(p.gamma_s, p.omega_s / 2)
    p2 = p.replace(gamma_s=1e6)
    np.testing.assert_allclose(p2.gamma_s, 1e6)


def test_drive_waveform():
    d = DriveWaveform(0.1, 2e8).with_harmonic(2, 0.03, 0.4)
    t = np.linspace(0, d.period, 7)
    np.testing.assert_allclose(d.voltage(t), 0.1 * np.sin(2e8 * t) + 0.03 * np.sin(4e8 * t + 0.4))
    h = 1e-13
    np.testing.assert_allclose(d.dvdt(t), (d.voltage(t + h) - d.voltage(t - h)) / (2 * h), rtol=1e-6, atol=1e-3)
    assert not d.half_wave_antisymmetric
    assert DriveWaveform(0.1, 2e8).with_harmonic(3, 0.02).half_wave_antisymmetric
    assert d.peak_bound == pytest.approx(0.13)
    with pytest.raises(ValueError):
        DriveWaveform(0.1, 0.0)
    with pytest.raises(ValueError):
        DriveWaveform(0.1, 1e8, ((1.5, 0.1, 0.0),))
