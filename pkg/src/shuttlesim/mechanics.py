"""Pillar mechanics: one-step integrators and the driven steady-state oracle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import K_B


@dataclass(frozen=True)
class MechState:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ValueError("non-finite mechanical state")

    @classmethod
    def rest(cls):
        return cls(np.zeros(2), np.zeros(2))


def acceleration(x, v, force, params):
    w2 = params.omega_s ** 2
    return -params.gamma_s * v - w2 * x - params.k2 * x * x - params.k3 * x ** 3 + force / params.m_s


def step(state, force, params, dt, method="semi-implicit", t=0.0, rng=None, thermal=False):
    """Advance ``state`` by ``dt`` under ``force`` (N, or a callable of time for RK4).

    ``semi-implicit``: velocity first, damping taken implicitly, then
    x' = x + dt v'. ``rk4``: classical fourth order.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, v = state.x, state.v
    if method == "semi-implicit":
        f = force(t) if callable(force) else np.asarray(force, dtype=float)
        rest = -params.omega_s ** 2 * x - params.k2 * x * x - params.k3 * x ** 3 + f / params.m_s
        v_new = (v + dt * rest) / (1.0 + params.gamma_s * dt)
        x_new = x + dt * v_new
    elif method == "rk4":
        fn = force if callable(force) else (lambda _t, f=np.asarray(force, dtype=float): f)

        def deriv(tt, xx, vv):
            return vv, acceleration(xx, vv, fn(tt), params)

        k1x, k1v = deriv(t, x, v)
        k2x, k2v = deriv(t + dt / 2, x + dt / 2 * k1x, v + dt / 2 * k1v)
        k3x, k3v = deriv(t + dt / 2, x + dt / 2 * k2x, v + dt / 2 * k2v)
        k4x, k4v = deriv(t + dt, x + dt * k3x, v + dt * k3v)
        x_new = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v_new = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    else:
        raise ValueError(f"unknown integrator {method!r}")
    if thermal:
        if rng is None:
            raise ValueError("thermal noise needs an rng")
        sigma = np.sqrt(2.0 * params.gamma_s * K_B * params.temperature * dt / params.m_s)
        v_new = v_new + sigma * rng.standard_normal(v_new.shape)
    return MechState(x_new, v_new)


def damped_frequency(params):
    """omega'_s = sqrt(omega_s^2 - gamma_s^2/4); rejects overdamped shuttles."""
    disc = params.omega_s ** 2 - params.gamma_s ** 2 / 4.0
    if np.any(disc <= 0):
        raise ValueError("overdamped shuttle (gamma >= 2 omega); the oracle needs gamma < 2 omega")
    return np.sqrt(disc)


def velocity_phase(params):
    """phi_s with tan(phi_s) = gamma_s / (2 omega'_s)."""
    return np.arctan2(params.gamma_s / 2.0, damped_frequency(params))


def response(params, omega):
    """Complex steady-state response x/F for F = Im(F0 e^{i(omega t + phase)}).

    Obtained from the Green's-function form of the damped oscillator,
    x(t) = (1/(m w')) int_0^inf F(t-u) e^{-gamma u/2} sin(w' u) du,
    whose Laplace integral at s = gamma/2 + i omega is w'/(s^2 + w'^2).
    """
    wd = damped_frequency(params)
    s = params.gamma_s / 2.0 + 1j * omega
    return (wd / (s * s + wd * wd)) / (params.m_s * wd)


def steady_state_oracle(amplitude, phase, omega, params):
    """Amplitude and phase of x_s(t) for a force F0 sin(omega t + phase) on each shuttle."""
    amplitude = np.broadcast_to(np.asarray(amplitude, dtype=float), (2,))
    phase = np.broadcast_to(np.asarray(phase, dtype=float), (2,))
    h = response(params, omega)
    z = amplitude * np.exp(1j * phase) * h
    return np.abs(z), np.angle(z)
