"""Ready-made two-shuttle chain device used by examples, the CLI template and tests.

Geometry: source | S1 | S2 | drain-electrode, in a row. Shuttle s sits between
its neighbours with rest gaps ``gap``; each capacitance scales as 1/gap, which
fixes the x-derivatives. Optional gates couple one-to-one to each shuttle.
"""
from __future__ import annotations

import numpy as np

from .device import CapacitanceInput, DriveWaveform, ShuttleParams


def chain_capacitance(c_junction=4e-18, c_shuttle=2e-18, c_drain=10e-18, gap=2e-9,
                      c_gate=0.0, c_gate_ground=1e-18):
    Cj, C12, Cd, d = c_junction, c_shuttle, c_drain, gap
    g = 2 if c_gate > 0 else 0
    C_SS = np.array([[Cj + C12 + c_gate, -C12], [-C12, C12 + Cj + c_gate]])
    c_S = np.array([0.0, -Cj])
    # gaps: source-S1 = d + x1, S1-S2 = d - x1 + x2, S2-drain = d - x2
    dC_SS = np.array([
        [[-Cj / d + C12 / d, -C12 / d], [-C12 / d, C12 / d]],
        [[-C12 / d, C12 / d], [C12 / d, -C12 / d + Cj / d]],
    ])
    dc_S = np.array([[0.0, 0.0], [0.0, -Cj / d]])
    dC00 = np.array([0.0, Cj / d])
    if g:
        c_GS = np.array([[-c_gate, 0.0], [0.0, -c_gate]])
        C_GG = np.eye(2) * (c_gate + c_gate_ground)
        c_G = np.zeros(2)
    else:
        c_GS = np.zeros((0, 2))
        C_GG = np.zeros((0, 0))
        c_G = np.zeros(0)
    return CapacitanceInput(
        C_SS=C_SS, c_GS=c_GS, C_GG=C_GG, c_S=c_S, c_G=c_G, C00=Cj + Cd,
        dC_SS=dC_SS, dc_S=dc_S, dC00=dC00,
    )


def chain_params(omega_s=3e8, mass=1e-18, Q=1.5, decay_length=1e-10, resistance=1e9,
                 temperature=300.0, n_G=()):
    return ShuttleParams(
        omega_s=omega_s, m_s=mass, Q=Q, lambda_j=decay_length, R0_j=resistance,
        temperature=temperature, n_G=np.asarray(n_G, dtype=float),
    )


def sine_drive(V0=0.02, omega=1e8):
    return DriveWaveform(V0=V0, omega=omega)
