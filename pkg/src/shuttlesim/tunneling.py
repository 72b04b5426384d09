"""Orthodox tunneling rates.

Phi(U) = U / (1 - exp(-U/kT)) is evaluated through a short series near U=0 and
a cancellation-free direct form elsewhere. Higher derivatives of Phi (needed by
the moment closure) come from the Bernoulli series for |u| < 3.5 and from the
polynomial recursion of the Bose factor p(u) = 1/(1 - exp(-u)), p' = p - p^2,
outside.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import bernoulli, factorial

from .constants import K_B, Q_E, T_MAT
from .device import free_energies_at_voltage

SERIES_SWITCH = 1e-3
_DERIV_SWITCH = 3.5
_N_TERMS = 100


def _check_finite(U):
    if not np.all(np.isfinite(U)):
        raise ValueError("non-finite free energy passed to the rate kernel")


def phi(U, kT):
    """U / (1 - exp(-U/kT)) with a 4th-order series for |U/kT| < 1e-3."""
    U = np.asarray(U, dtype=float)
    _check_finite(U)
    u = U / kT
    small = np.abs(u) < SERIES_SWITCH
    out = np.empty_like(u)
    us = u[small]
    out[small] = kT * (1.0 + us / 2.0 + us * us / 12.0 - us ** 4 / 720.0)
    ub = u[~small]
    Ub = U[~small]
    with np.errstate(over="ignore"):
        pos = ub > 0
        res = np.empty_like(ub)
        res[pos] = Ub[pos] / -np.expm1(-ub[pos])
        # negative branch: |U| e^u / (1 - e^u), no overflow
        res[~pos] = -Ub[~pos] * np.exp(ub[~pos]) / -np.expm1(ub[~pos])
    out[~small] = res
    return out if out.ndim else float(out)


def rate(U, R0, temperature, beta=0.0):
    """Single-direction tunneling rate (1/s) for free-energy change U (J)."""
    if np.any(np.asarray(R0) <= 0):
        raise ValueError("R0 must be strictly positive")
    if temperature <= 0:
        raise ValueError("temperature must be strictly positive")
    kT = K_B * temperature
    U = np.asarray(U, dtype=float)
    out = phi(U, kT) / (Q_E * Q_E * np.asarray(R0, dtype=float))
    if np.any(np.asarray(beta) != 0):
        out = out * (1.0 + np.asarray(beta) * U * U)
    return out


# -- derivatives of Phi -----------------------------------------------------

@lru_cache(maxsize=None)
def _series_matrix(order):
    # row l: coefficients of d^l psi / du^l as a power series in u
    n = np.arange(_N_TERMS + 1)
    fact = factorial(n)
    b = bernoulli(_N_TERMS) * (-1.0) ** n / fact
    out = np.zeros((order + 1, _N_TERMS + 1))
    for l in range(order + 1):
        out[l, : _N_TERMS + 1 - l] = b[l:] * fact[l:] / fact[: _N_TERMS + 1 - l]
    return out


@lru_cache(maxsize=None)
def _bose_polys(order):
    # P_0(p) = p ; P_{l+1}(p) = P_l'(p) (p - p^2)
    polys = [np.array([0.0, 1.0])]
    for _ in range(order):
        polys.append(P.polymul(P.polyder(polys[-1]), [0.0, 1.0, -1.0]))
    return polys


def _psi_derivs(u, order):
    """d^l/du^l [u / (1 - e^-u)] for l = 0..order, shape (order+1, *u.shape)."""
    u = np.asarray(u, dtype=float)
    out = np.empty((order + 1,) + u.shape)
    small = np.abs(u) < _DERIV_SWITCH
    if np.any(small):
        us = u[small]
        van = np.vander(us, _N_TERMS + 1, increasing=True)
        out[:, small] = _series_matrix(order) @ van.T
    big = ~small
    if np.any(big):
        # evaluate at -|u| (p small, no cancellation), then reflect with
        # psi(u) = u + psi(-u)
        ub = u[big]
        um = -np.abs(ub)
        p = np.exp(um) / np.expm1(um)
        polys = _bose_polys(order)
        pv = [P.polyval(p, c) for c in polys]
        flip = ub > 0
        for l in range(order + 1):
            val = um * pv[0] if l == 0 else um * pv[l] + l * pv[l - 1]
            if l % 2:
                val = np.where(flip, -val, val)
            if l == 0:
                val = np.where(flip, ub + val, val)
            elif l == 1:
                val = np.where(flip, 1.0 + val, val)
            out[l][big] = val
    return out


def phi_derivatives(U, kT, order):
    """Y_l(U) = d^l Phi / dU^l for l = 0..order (l=0 uses :func:`phi`)."""
    U = np.asarray(U, dtype=float)
    _check_finite(U)
    d = _psi_derivs(U / kT, order)
    scale = kT ** (1.0 - np.arange(order + 1))
    d = d * scale.reshape((-1,) + (1,) * U.ndim)
    d[0] = phi(U, kT)
    return d


def kernel_derivatives(U, kT, beta, order):
    """Derivatives of Phi(U)(1 + beta U^2) for l = 0..order."""
    y = phi_derivatives(U, kT, order)
    beta = np.asarray(beta, dtype=float)
    if not np.any(beta != 0):
        return y
    U = np.asarray(U, dtype=float)
    out = y * (1.0 + beta * U * U)
    for l in range(1, order + 1):
        out[l] = out[l] + 2.0 * l * beta * U * y[l - 1]
        if l >= 2:
            out[l] = out[l] + l * (l - 1) * beta * y[l - 2]
    return out


# -- junction-level rates -----------------------------------------------------

def position_factors(x, lambda_j):
    """K_j(x) = exp(-x.T_j / lambda_j) for all three junctions, shape (..., 3)."""
    x = np.asarray(x, dtype=float)
    return np.exp(-(x @ T_MAT.T.astype(float)) / np.asarray(lambda_j, dtype=float))


def position_factor(x, j, lambda_j):
    """K_j(x) for junction ``j`` in 1..3; ``lambda_j`` is the 3-vector or a scalar."""
    lam = np.broadcast_to(np.asarray(lambda_j, dtype=float), (3,))
    if np.any(lam <= 0):
        raise ValueError("lambda_j must be strictly positive")
    return position_factors(x, lam)[..., j - 1]


@dataclass(frozen=True)
class RateSet:
    gamma_plus: np.ndarray
    gamma_minus: np.ndarray

    @property
    def net(self):
        return self.gamma_plus - self.gamma_minus

    @property
    def total(self):
        return self.gamma_plus + self.gamma_minus


def rates_at_voltage(const, params, n, x, V, perturbed=True, use_position=True):
    up, um = free_energies_at_voltage(const, params, n, x, V, perturbed)
    gp = rate(up, params.R0_j, params.temperature, params.beta_j)
    gm = rate(um, params.R0_j, params.temperature, params.beta_j)
    if use_position:
        k = position_factors(x, params.lambda_j)
        gp, gm = gp * k, gm * k
    return RateSet(gp, gm)


def full_rates(const, params, n, x, t, drive, perturbed=True):
    """Forward/backward rates of all junctions at state (n, x) and time t."""
    return rates_at_voltage(const, params, n, x, drive.voltage(t), perturbed)
