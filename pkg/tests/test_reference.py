import numpy as np
import pytest

from shuttlesim.analysis import PeriodSeries, antisymmetry, dc_current
from shuttlesim.device import DriveWaveform
from shuttlesim.reference import (
    LatticePdf,
    LatticeTooSmall,
    ReferenceConfig,
    equilibrium_pdf,
    evolve,
    lattice_bounds,
    total_variation,
)

BOUNDS = ((-8, 8), (-8, 8))


@pytest.fixture(scope="module")
def steady(chain, shuttles, drive):
    return evolve(chain, shuttles, drive, ReferenceConfig(steps_per_period=512))


def test_undriven_relaxes_to_boltzmann(chain, shuttles):
    d = DriveWaveform(0.0, 1e8)
    res = evolve(chain, shuttles, d, ReferenceConfig(steps_per_period=512, frozen=True), bounds=BOUNDS)
    assert res.converged
    eq = equilibrium_pdf(chain, shuttles, BOUNDS)
    assert total_variation(res.snapshots[0].P, eq.P) < 1e-7


def test_probability_conservation(chain, shuttles, drive):
    res = evolve(chain, shuttles, drive, ReferenceConfig(steps_per_period=512, renormalize=False),
                 bounds=BOUNDS, t_span=(0.0, 20 * drive.period))
    lost = 1.0 - res.mass_history[-1]
    assert 0.0 <= lost < 1e-6 * 20 / 100


def test_frozen_evolution_is_linear(chain, shuttles, drive):
    cfg = ReferenceConfig(steps_per_period=256, frozen=True, renormalize=False)
    shape = (17, 17)
    lo = np.array([-8, -8])
    Pa = np.zeros(shape)
    Pa[8, 8] = 1.0
    Pb = np.zeros(shape)
    Pb[9, 6] = 0.5
    Pb[7, 8] = 0.5
    run = lambda P: evolve(chain, shuttles, drive, cfg, t_span=(0.0, drive.period),  # noqa: E731
                           initial=LatticePdf(lo, P)).snapshots[40].P
    mix = run(0.3 * Pa + 0.7 * Pb)
    np.testing.assert_allclose(mix, 0.3 * run(Pa) + 0.7 * run(Pb), atol=1e-14)


def test_steady_state_forgets_initial_condition(chain, shuttles, drive, steady):
    P = np.zeros((17, 17))
    P[11, 5] = 1.0
    other = evolve(chain, shuttles, drive, ReferenceConfig(steps_per_period=512),
                   initial=LatticePdf(np.array([-8, -8]), P))
    assert other.converged
    np.testing.assert_allclose(other.mean_n, steady.mean_n, atol=1e-8)
    np.testing.assert_allclose(other.D, steady.D, atol=1e-8)


def test_odd_drive_current_antisymmetric(steady):
    assert steady.converged
    ps = PeriodSeries("reference", steady.times, steady.current, steady.rates, True)
    assert antisymmetry(ps) < 1e-6
    dc = dc_current(steady.rates)
    assert dc.periodic
    assert np.max(np.abs(dc.per_junction)) < 1e-6 * np.max(np.abs(steady.current))


def test_second_harmonic_rectifies_consistently(chain, shuttles):
    d = DriveWaveform(0.2, 1e8).with_harmonic(2, 0.06)
    res = evolve(chain, shuttles, d, ReferenceConfig(steps_per_period=512))
    dc = dc_current(res.rates)
    assert abs(dc.mean) > 0
    assert dc.relative_spread < 1e-3


def test_lattice_too_small(chain, shuttles, drive):
    with pytest.raises(LatticeTooSmall):
        evolve(chain, shuttles, drive, ReferenceConfig(steps_per_period=256, half_width=1))
    with pytest.raises(ValueError):
        evolve(chain, shuttles, drive, ReferenceConfig(steps_per_period=256), bounds=((-1, 0), (-1, 1)))


def test_lattice_bounds_cover_spread(chain, shuttles, drive):
    b = lattice_bounds(chain, shuttles, drive)
    assert b[0][0] <= -8 and b[0][1] >= 8
    assert lattice_bounds(chain, shuttles, drive, half_width=3) == ((-3, 3), (-3, 3))


def test_lattice_pdf_helpers():
    P = np.zeros((5, 5))
    P[2, 2] = 0.5
    P[0, 4] = 0.5
    pdf = LatticePdf(np.array([-2, -2]), P)
    assert pdf.mass() == 1.0
    assert pdf.edge_mass() == 0.5
    np.testing.assert_allclose(pdf.mean(), [-1.0, 1.0])
    np.testing.assert_allclose(pdf.covariance(), [[1.0, -1.0], [-1.0, 1.0]])
    assert pdf.window(np.array([-3, -3]), 3).sum() == 0.0  # partly off-lattice, no mass inside
    assert pdf.window(np.array([0, 0]), 2)[0, 0] == 0.5


@pytest.mark.parametrize("kw", [{"steps_per_period": 100}, {"n_snapshots": 3}, {"tolerance": 0.0},
                                {"half_width": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ReferenceConfig(**kw)
