"""Deterministic moment models: circuit, n-variance and full weak-correlation tiers.

State vector layout (19 entries)::

    0-1 <n>   2-3 <x>   4-5 <v>   6 D11  7 D22  8 D12
    9-10 Lambda   11-12 W   13-14 Sigma   15-16 X   17-18 Y

Rate expectations use a Taylor expansion of the rate kernel around the mean
free energy with bivariate Gaussian central moments (Isserlis).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import factorial

import numpy as np

from .constants import Q_E, T_MAT
from .device import (
    force_at_voltage,
    force_slope_at_voltage,
    force_terms,
    free_energies_at_voltage,
    gate_offset,
)
from .tunneling import kernel_derivatives, position_factors

N_STATE = 19
SL_N, SL_X, SL_V = slice(0, 2), slice(2, 4), slice(4, 6)
I_D11, I_D22, I_D12 = 6, 7, 8
SL_LAM, SL_W, SL_SIG, SL_XC, SL_YC = slice(9, 11), slice(11, 13), slice(13, 15), slice(15, 17), slice(17, 19)
FIELD_NAMES = (
    "n1", "n2", "x1", "x2", "v1", "v2", "D11", "D22", "D12",
    "Lambda1", "Lambda2", "W1", "W2", "Sigma1", "Sigma2", "X1", "X2", "Y1", "Y2",
)
TIERS = ("circuit", "variance", "full")

_T = T_MAT.astype(float)


class ClosureBreakdown(RuntimeError):
    """A second-moment bound was violated along a trajectory."""


# -- Isserlis --------------------------------------------------------------

def _dfact(k):
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def isserlis_moment(l1, l2, D11, D22, D12):
    """E[(n1-<n1>)^l1 (n2-<n2>)^l2] for a bivariate Gaussian."""
    if l1 < 0 or l2 < 0:
        raise ValueError("moment orders must be non-negative")
    if (l1 + l2) % 2:
        return 0.0 * D11
    f1, f2 = factorial(l1), factorial(l2)
    total = 0.0
    if l1 % 2 == 0:
        for k in range(min(l1, l2) // 2 + 1):
            c = f1 * f2 / (_dfact(l1 - 2 * k) * _dfact(l2 - 2 * k) * factorial(2 * k))
            total = total + c * D11 ** (l1 // 2 - k) * D22 ** (l2 // 2 - k) * D12 ** (2 * k)
    else:
        for k in range((min(l1, l2) - 1) // 2 + 1):
            c = f1 * f2 / (_dfact(l1 - 2 * k - 1) * _dfact(l2 - 2 * k - 1) * factorial(2 * k + 1))
            total = total + c * D11 ** ((l1 - 1) // 2 - k) * D22 ** ((l2 - 1) // 2 - k) * D12 ** (2 * k + 1)
    return total


@lru_cache(maxsize=None)
def _moment_terms(order):
    # flat list of (target index, coefficient, p11, p22, p12) over all l1+l2 <= order
    rows = []
    for l1 in range(order + 1):
        for l2 in range(order + 1 - l1):
            if (l1 + l2) % 2:
                continue
            f = factorial(l1) * factorial(l2)
            if l1 % 2 == 0:
                for k in range(min(l1, l2) // 2 + 1):
                    c = f / (_dfact(l1 - 2 * k) * _dfact(l2 - 2 * k) * factorial(2 * k))
                    rows.append((l1 * (order + 1) + l2, c, l1 // 2 - k, l2 // 2 - k, 2 * k))
            else:
                for k in range((min(l1, l2) - 1) // 2 + 1):
                    c = f / (_dfact(l1 - 2 * k - 1) * _dfact(l2 - 2 * k - 1) * factorial(2 * k + 1))
                    rows.append((l1 * (order + 1) + l2, c, (l1 - 1) // 2 - k, (l2 - 1) // 2 - k, 2 * k + 1))
    arr = np.array(rows, dtype=float)
    return arr[:, 0].astype(np.int64), arr[:, 1], arr[:, 2:].astype(np.int64)


def moment_table(order, D11, D22, D12):
    """M[l1, l2] for l1 + l2 <= order (zero elsewhere)."""
    idx, coef, pw = _moment_terms(order)
    powers = np.empty((3, order + 1))
    for i, d in enumerate((D11, D22, D12)):
        powers[i] = float(d) ** np.arange(order + 1)
    vals = coef * powers[0, pw[:, 0]] * powers[1, pw[:, 1]] * powers[2, pw[:, 2]]
    M = np.zeros((order + 1) * (order + 1))
    np.add.at(M, idx, vals)
    return M.reshape(order + 1, order + 1)


@lru_cache(maxsize=None)
def _taylor_pairs(order):
    l1, l2 = np.array([(a, b) for a in range(order + 1) for b in range(order + 1 - a)]).T
    inv = 1.0 / np.array([factorial(a) * factorial(b) for a, b in zip(l1, l2)], dtype=float)
    return l1, l2, inv


# -- state container -------------------------------------------------------

@dataclass
class MomentState:
    mean_n: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mean_x: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mean_v: np.ndarray = field(default_factory=lambda: np.zeros(2))
    D11: float = 0.0
    D22: float = 0.0
    D12: float = 0.0
    Lambda: np.ndarray = field(default_factory=lambda: np.zeros(2))
    W: np.ndarray = field(default_factory=lambda: np.zeros(2))
    Sigma: np.ndarray = field(default_factory=lambda: np.zeros(2))
    X: np.ndarray = field(default_factory=lambda: np.zeros(2))
    Y: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def to_vector(self):
        y = np.empty(N_STATE)
        y[SL_N], y[SL_X], y[SL_V] = self.mean_n, self.mean_x, self.mean_v
        y[I_D11], y[I_D22], y[I_D12] = self.D11, self.D22, self.D12
        y[SL_LAM], y[SL_W], y[SL_SIG] = self.Lambda, self.W, self.Sigma
        y[SL_XC], y[SL_YC] = self.X, self.Y
        return y

    @classmethod
    def from_vector(cls, y):
        y = np.asarray(y, dtype=float)
        return cls(
            y[SL_N].copy(), y[SL_X].copy(), y[SL_V].copy(), float(y[I_D11]), float(y[I_D22]), float(y[I_D12]),
            y[SL_LAM].copy(), y[SL_W].copy(), y[SL_SIG].copy(), y[SL_XC].copy(), y[SL_YC].copy(),
        )

    @property
    def D(self):
        return np.array([[self.D11, self.D12], [self.D12, self.D22]])


@dataclass(frozen=True)
class ClosureConfig:
    tier: str = "full"
    order: int = 4
    integrator: str = "rk4"
    steps_per_period: int = 2048
    tolerance: float = 1e-6
    max_periods: int = 500
    min_periods: int = 2
    perturbed: bool = True
    check_bounds: bool = True
    include_neutral_term: bool = False
    backend: str = "numba"

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValueError(f"tier must be one of {TIERS}")
        if self.order < 2 or self.order % 2:
            raise ValueError("truncation order L must be even and >= 2")
        if self.integrator not in ("euler", "heun", "rk4"):
            raise ValueError("integrator must be euler, heun or rk4")
        if self.steps_per_period < 2 or self.steps_per_period % 2:
            raise ValueError("steps_per_period must be even and >= 2")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_periods < 1:
            raise ValueError("max_periods must be >= 1")
        if self.backend not in ("numba", "numpy"):
            raise ValueError("backend must be numba or numpy")


# -- rate expectations -----------------------------------------------------

@dataclass(frozen=True)
class RateMoments:
    """Per-junction expectations of the position-free rates Gamma_j^±(n, t).

    Leading axis 0/1 = forward/backward. ``cov[d, j, s]`` is
    <Gamma_j^d (n_s - <n_s>)>, ``grad[d, j, s]`` is <dGamma_j^d/dn_s>.
    """

    mean: np.ndarray  # (2, 3)
    cov: np.ndarray  # (2, 3, 2)
    grad: np.ndarray  # (2, 3, 2)

    @property
    def net(self):
        return self.mean[0] - self.mean[1]

    @property
    def star(self):
        return self.mean[0] + self.mean[1]

    @property
    def net_cov(self):
        return self.cov[0] - self.cov[1]

    @property
    def g(self):
        return self.grad[0] - self.grad[1]

    @property
    def g_star(self):
        return self.grad[0] + self.grad[1]


def _energy_gradient(const, x, perturbed):
    """e_j = dU_j^-/dn = -dU_j^+/dn, shape (3, 2)."""
    e = const.E_theta.copy()
    if perturbed:
        F0T = np.einsum("sab,jb->jsa", const.F0, _T)
        e = e + np.einsum("jsa,s->ja", F0T, x)
    return e


def rate_moments(const, params, V, mean_n, mean_x, D, order=4, perturbed=True):
    mean_n = np.asarray(mean_n, dtype=float)
    mean_x = np.asarray(mean_x, dtype=float)
    up, um = free_energies_at_voltage(const, params, mean_n, mean_x, V, perturbed)
    e = _energy_gradient(const, mean_x, perturbed)
    M = moment_table(order + 1, D[0, 0], D[1, 1], D[0, 1])
    pref = 1.0 / (Q_E * Q_E * params.R0_j)
    mean = np.empty((2, 3))
    cov = np.empty((2, 3, 2))
    grad = np.empty((2, 3, 2))
    l1, l2, inv = _taylor_pairs(order)
    pw = np.arange(order + 1)
    Mm, M1, M2 = M[l1, l2], M[l1 + 1, l2], M[l1, l2 + 1]
    for d, (U, sgn) in enumerate(((up, -1.0), (um, 1.0))):
        y = kernel_derivatives(U, params.kT, params.beta_j, order + 1)  # (order+2, 3)
        g = sgn * e  # (3, 2)
        g1p = g[:, 0][None, :] ** pw[:, None]  # (order+1, 3)
        g2p = g[:, 1][None, :] ** pw[:, None]
        coef = g1p[l1] * g2p[l2] * inv[:, None]  # (pairs, 3)
        cy = coef * y[l1 + l2]
        mean[d] = pref * (Mm @ cy)
        cov[d, :, 0] = pref * (M1 @ cy)
        cov[d, :, 1] = pref * (M2 @ cy)
        gr = Mm @ (coef * y[l1 + l2 + 1])
        grad[d] = (pref * gr)[:, None] * g
    return RateMoments(mean, cov, grad)


@dataclass(frozen=True)
class RateExpectation:
    mean: float  # <Gamma_j^dir>
    cov: np.ndarray  # <Gamma_j^dir (n_s - <n_s>)>
    net: float  # <Gamma_j>
    star: float  # <Gamma_j*>
    net_cov: np.ndarray
    g: np.ndarray  # <dGamma_j/dn_s>


def rate_expectation(const, params, drive, state, t, j, direction, L=4, perturbed=True):
    """Gaussian expectation of Gamma_j^dir(n, t) around ``state`` (no position factor)."""
    st = state if isinstance(state, MomentState) else MomentState.from_vector(state)
    rm = rate_moments(const, params, drive.voltage(t), st.mean_n, st.mean_x, st.D, L, perturbed)
    d = 0 if direction in (1, "+") else 1
    k = j - 1
    return RateExpectation(
        float(rm.mean[d, k]), rm.cov[d, k].copy(), float(rm.net[k]), float(rm.star[k]),
        rm.net_cov[k].copy(), rm.g[k].copy(),
    )


# -- right-hand sides --------------------------------------------------------

class MomentModel:
    """Binds device, shuttles and drive; evaluates tier right-hand sides on vectors."""

    def __init__(self, const, params, drive, order=4, perturbed=True, include_neutral_term=False,
                 check_bounds=True):
        self.const = const
        self.params = params
        self.drive = drive
        self.order = order
        self.perturbed = perturbed
        self.include_neutral_term = include_neutral_term
        self.check_bounds = check_bounds
        self.nGB = gate_offset(const, params)
        self.fg = force_terms(const, params)[0]
        self.sym = const.F0 + np.swapaxes(const.F0, 1, 2)
        lam = float(np.min(params.lambda_j))
        w = float(np.max(params.omega_s))
        # natural units per field, used for bound checks and convergence floors
        unit = np.ones(N_STATE)
        unit[SL_X] = lam
        unit[SL_V] = lam * w
        unit[SL_LAM] = lam * lam
        unit[SL_W] = (lam * w) ** 2
        unit[SL_SIG] = lam * lam * w
        unit[SL_XC] = lam
        unit[SL_YC] = lam * w
        self.unit = unit
        self._prm = None

    # compiled path -------------------------------------------------------
    def jit_params(self):
        """Argument tuple for the compiled right-hand sides (built once)."""
        if self._prm is None:
            from . import _jit_moments as jm

            c, p = self.const, self.params
            L = self.order
            fg, fgg, ag = force_terms(c, p)
            S, Pm = jm.kernel_tables(L + 1)
            midx, mcoef, mpw = _moment_terms(L + 1)
            l1, l2, inv = _taylor_pairs(L)
            f64 = lambda a: np.ascontiguousarray(a, dtype=float)  # noqa: E731
            self._prm = (
                L, bool(self.perturbed), bool(self.include_neutral_term),
                f64(c.E0), f64(c.E_theta), f64(c.kappa), f64(self.nGB), float(Q_E),
                f64(np.einsum("sab,jb->jsa", c.F0, _T)), f64(_T @ c.alpha.T), f64(_T @ fg.T),
                f64(p.R0_j), float(p.kT), f64(p.beta_j), f64(p.lambda_j),
                f64(c.F0), f64(fg), f64(fgg), f64(ag), f64(c.alpha), f64(c.dC0),
                f64(p.omega_s ** 2), f64(p.gamma_s), f64(p.m_s), f64(p.k2), f64(p.k3),
                f64(S), f64(Pm), np.ascontiguousarray(midx), f64(mcoef), np.ascontiguousarray(mpw),
                np.ascontiguousarray(l1, dtype=np.int64), np.ascontiguousarray(l2, dtype=np.int64), f64(inv),
            )
        return self._prm

    def jit_rhs(self, y, t, tier):
        """Compiled right-hand side and <Gamma_j>; same result as :meth:`rhs`."""
        from ._jit_moments import rhs_nb

        out, r = rhs_nb(TIERS.index(tier), np.ascontiguousarray(y, dtype=float),
                        float(self.drive.voltage(t)), self.jit_params())
        return out, r

    def initial_state(self):
        y = np.zeros(N_STATE)
        y[SL_N] = self.nGB
        return y

    # circuit -------------------------------------------------------------
    def circuit(self, y, t):
        c, p = self.const, self.params
        V = self.drive.voltage(t)
        n, x, v = y[SL_N], y[SL_X], y[SL_V]
        up, um = free_energies_at_voltage(c, p, n, x, V, perturbed=False)
        U = 0.5 * (up - um)
        net = position_factors(x, p.lambda_j) * U / (Q_E * Q_E * p.R0_j)
        out = np.zeros(N_STATE)
        out[SL_N] = net @ _T
        F = force_at_voltage(c, p, n, V, self.include_neutral_term)
        out[SL_X] = v
        out[SL_V] = -p.gamma_s * v - p.omega_s ** 2 * x - p.k2 * x * x - p.k3 * x ** 3 + F / p.m_s
        return out

    def circuit_rates(self, y, t):
        c, p = self.const, self.params
        n, x = y[SL_N], y[SL_X]
        up, um = free_energies_at_voltage(c, p, n, x, self.drive.voltage(t), perturbed=False)
        return position_factors(x, p.lambda_j) * 0.5 * (up - um) / (Q_E * Q_E * p.R0_j)

    # variance / full -------------------------------------------------------
    def _pieces(self, y, t, full):
        c, p = self.const, self.params
        V = self.drive.voltage(t)
        n, x = y[SL_N], y[SL_X]
        D = np.array([[y[I_D11], y[I_D12]], [y[I_D12], y[I_D22]]])
        rm = rate_moments(c, p, V, n, x, D, self.order, self.perturbed)
        K = position_factors(x, p.lambda_j)
        lam = p.lambda_j
        if full:
            Lam, X = y[SL_LAM], y[SL_XC]
            K = K * np.exp((_T * _T) @ Lam / (2.0 * lam * lam))
            tx = _T * X / lam[:, None]  # [j, s] = T_js X_s / lambda_j
            G = rm.net - np.sum(rm.g * tx, axis=1)
            Gs = rm.star - np.sum(rm.g_star * tx, axis=1)
            cov = K[:, None] * rm.net_cov - (K * rm.net)[:, None] * tx
        else:
            G, Gs = rm.net, rm.star
            cov = K[:, None] * rm.net_cov
        return V, D, rm, K, G, Gs, cov

    def moments(self, y, t, full):
        c, p = self.const, self.params
        V, D, rm, K, G, Gs, cov = self._pieces(y, t, full)
        n, x, v = y[SL_N], y[SL_X], y[SL_V]
        out = np.zeros(N_STATE)
        KG = K * G
        out[SL_N] = KG @ _T
        KGs = K * Gs
        out[I_D11] = np.sum(2.0 * _T[:, 0] * cov[:, 0] + _T[:, 0] ** 2 * KGs)
        out[I_D22] = np.sum(2.0 * _T[:, 1] * cov[:, 1] + _T[:, 1] ** 2 * KGs)
        out[I_D12] = np.sum(_T[:, 0] * cov[:, 1] + _T[:, 1] * cov[:, 0] + _T[:, 0] * _T[:, 1] * KGs)

        F = force_at_voltage(c, p, n, V, self.include_neutral_term) + np.einsum("sab,ab->s", c.F0, D)
        w2 = p.omega_s ** 2
        Lam = y[SL_LAM] if full else np.zeros(2)
        out[SL_X] = v
        out[SL_V] = (-p.gamma_s * v - w2 * x - p.k2 * (x * x + Lam) - p.k3 * (x ** 3 + 3.0 * x * Lam)
                     + F / p.m_s)
        if not full:
            return out
        W, S, X, Y = y[SL_W], y[SL_SIG], y[SL_XC], y[SL_YC]
        f = force_slope_at_voltage(c, p, n, V)
        grad_F = np.einsum("sab,b->sa", self.sym, n) + self.fg + Q_E * V * c.alpha
        covFn = np.array([(D @ grad_F[s])[s] for s in range(2)])
        w2e = w2 + 2.0 * p.k2 * x + 3.0 * p.k3 * (x * x + Lam)
        lam = p.lambda_j
        out[SL_LAM] = 2.0 * S
        out[SL_W] = 2.0 * (-p.gamma_s * W - w2e * S + Y * f / p.m_s)
        out[SL_SIG] = W - p.gamma_s * S - w2e * Lam + X * f / p.m_s
        tk = _T * K[:, None]
        tgl = (_T / lam[:, None]) * G[:, None]  # [j, s] = T_js G_j / lambda_j
        out[SL_XC] = np.sum(tk * (rm.g * X - tgl * Lam), axis=0) + Y
        out[SL_YC] = (np.sum(tk * (rm.g * Y - tgl * S), axis=0) - p.gamma_s * Y - w2e * X + covFn / p.m_s)
        return out

    def rates(self, y, t, tier):
        """<Gamma_j(n, x, t)> including position factors."""
        if tier == "circuit":
            return self.circuit_rates(y, t)
        _, _, _, K, G, _, _ = self._pieces(y, t, tier == "full")
        return K * G

    def rhs(self, tier):
        if tier == "circuit":
            return self.circuit
        full = tier == "full"
        return lambda y, t: self.moments(y, t, full)

    def check_many(self, ys, times, rtol=1e-6):
        """Bound check over a stored trajectory; raises at the first offending row."""
        u = self.unit
        z = ys / u
        tiny = 1e-12
        bad = np.any(z[:, [I_D11, I_D22, 9, 10, 11, 12]] < -tiny, axis=1)
        for i, a, b in ((I_D12, I_D11, I_D22), (15, 9, I_D11), (16, 10, I_D22), (17, 11, I_D11),
                        (18, 12, I_D22), (13, 9, 11), (14, 10, 12)):
            lim = (1.0 + rtol) * np.sqrt(np.maximum(z[:, a], 0.0) * np.maximum(z[:, b], 0.0)) + tiny
            bad |= np.abs(z[:, i]) > lim
        if np.any(bad):
            k = int(np.argmax(bad))
            self.check(ys[k], times[k], rtol)

    def check(self, y, t=None, rtol=1e-6):
        u = self.unit
        at = "" if t is None else f" at t={t:.6g} s"
        tiny = 1e-12
        for name, i in (("D11", I_D11), ("D22", I_D22), ("Lambda1", 9), ("Lambda2", 10), ("W1", 11), ("W2", 12)):
            if y[i] < -tiny * u[i]:
                raise ClosureBreakdown(f"{name} negative ({y[i]:.3e}){at}")
        pairs = (
            ("D12", I_D12, I_D11, I_D22),
            ("X1", 15, 9, I_D11), ("X2", 16, 10, I_D22),
            ("Y1", 17, 11, I_D11), ("Y2", 18, 12, I_D22),
            ("Sigma1", 13, 9, 11), ("Sigma2", 14, 10, 12),
        )
        for name, i, a, b in pairs:
            lhs = abs(y[i]) / u[i]
            rhs = (1.0 + rtol) * np.sqrt(max(y[a] / u[a], 0.0) * max(y[b] / u[b], 0.0)) + tiny
            if lhs > rhs:
                raise ClosureBreakdown(f"Cauchy-Schwarz bound on {name} violated{at}")


def _model_from(const, params, drive, L, perturbed=True, include_neutral_term=False, check_bounds=True):
    return MomentModel(const, params, drive, L, perturbed, include_neutral_term, check_bounds)


def _as_vec(state):
    return state.to_vector() if isinstance(state, MomentState) else np.asarray(state, dtype=float)


def circuit_rhs(const, params, drive, state, t, include_neutral_term=False):
    m = _model_from(const, params, drive, 2, False, include_neutral_term)
    return MomentState.from_vector(m.circuit(_as_vec(state), t))


def variance_rhs(const, params, drive, state, t, L=4, perturbed=True, include_neutral_term=False):
    m = _model_from(const, params, drive, L, perturbed, include_neutral_term)
    return MomentState.from_vector(m.moments(_as_vec(state), t, full=False))


def full_rhs(const, params, drive, state, t, L=4, perturbed=True, include_neutral_term=False, check_bounds=True):
    m = _model_from(const, params, drive, L, perturbed, include_neutral_term, check_bounds)
    y = _as_vec(state)
    if check_bounds:
        m.check(y, t)
    return MomentState.from_vector(m.moments(y, t, full=True))


# -- integration ---------------------------------------------------------------

def _stepper(name):
    if name == "euler":
        def st(f, y, t, h):
            return y + h * f(y, t)
    elif name == "heun":
        def st(f, y, t, h):
            k1 = f(y, t)
            k2 = f(y + h * k1, t + h)
            return y + 0.5 * h * (k1 + k2)
    else:
        def st(f, y, t, h):
            k1 = f(y, t)
            k2 = f(y + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(y + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(y + h * k3, t + h)
            return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return st


@dataclass
class MomentTrajectory:
    tier: str
    times: np.ndarray  # one period, steps+1 points, absolute times
    states: np.ndarray  # (steps+1, 19)
    rates: np.ndarray  # (3, steps+1) <Gamma_j>
    current: np.ndarray  # (steps+1,)
    converged: bool
    periods: int
    change_history: list
    config: ClosureConfig

    @property
    def phase_times(self):
        return self.times - self.times[0]

    def field(self, name):
        return self.states[:, FIELD_NAMES.index(name)]


def integrate(const, params, drive, cfg: ClosureConfig = ClosureConfig(), t_span=None, initial=None,
              model=None):
    """Step the chosen tier period by period until the periodic steady state.

    ``t_span`` = (t0, t1) integrates a fixed window instead (no convergence test);
    the returned trajectory then covers the whole window.
    """
    if model is None:
        model = MomentModel(const, params, drive, cfg.order, cfg.perturbed, cfg.include_neutral_term,
                            cfg.check_bounds)
    Tp = drive.period
    N = cfg.steps_per_period
    h = Tp / N
    y = model.initial_state() if initial is None else _as_vec(initial).copy()
    if cfg.tier == "circuit":
        y[6:] = 0.0
    elif cfg.tier == "variance":
        y[9:] = 0.0
    run = _runner(model, cfg)

    if t_span is not None:
        t0, t1 = t_span
        nsteps = max(1, int(round((t1 - t0) / h)))
        h = (t1 - t0) / nsteps
        times = t0 + h * np.arange(nsteps + 1)
        ys, rates = run(y, t0, h, nsteps, check=initial is not None)
        return _finish(model, cfg, times, ys, rates, True, 0, [])

    prev = prev_rates = None
    history = []
    ok_count = 0
    converged = False
    p = 0
    for p in range(1, cfg.max_periods + 1):
        # the start state has x = v = 0 exactly, so the bounds are saturated and
        # step error alone can cross them; they are enforced from period 2 on
        ys, rates = run(y, (p - 1) * Tp, h, N, check=p > 1)
        y = ys[-1].copy()
        if prev is not None:
            scale = np.maximum(np.max(np.abs(ys), axis=0), 1e-12 * model.unit)
            change = float(np.max(np.max(np.abs(ys - prev), axis=0) / scale))
            history.append(change)
            ok_count = ok_count + 1 if change < cfg.tolerance else 0
            if ok_count >= 2 and p >= cfg.min_periods:
                converged = True
                prev, prev_rates = ys, rates
                break
        prev, prev_rates = ys, rates
    times = (p - 1) * Tp + h * np.arange(N + 1)
    return _finish(model, cfg, times, prev, prev_rates, converged, p, history)


def _runner(model, cfg):
    """Returns run(y0, t0, h, nsteps) -> (states (nsteps+1, 19), rates (3, nsteps+1))."""
    tier = cfg.tier
    checking = tier == "full" and cfg.check_bounds

    if cfg.backend == "numba":
        from ._jit_moments import integrate_nb

        prm = model.jit_params()
        method = ("euler", "heun", "rk4").index(cfg.integrator)
        tid = TIERS.index(tier)
        cache = {}

        def run(y0, t0, h, nsteps, check=True):
            # V on the half-step grid; reused while (t0 mod period, h, nsteps) repeat
            key = (round((t0 % model.drive.period) / h, 6), h, nsteps)
            Vh = cache.get(key)
            if Vh is None:
                Vh = np.asarray(model.drive.voltage(t0 + 0.5 * h * np.arange(2 * nsteps + 1)), dtype=float)
                cache.clear()
                cache[key] = Vh
            ys = np.empty((nsteps + 1, N_STATE))
            rates = np.empty((3, nsteps + 1))
            integrate_nb(tid, method, np.ascontiguousarray(y0, dtype=float), Vh, h, nsteps, prm, ys, rates)
            times = t0 + h * np.arange(nsteps + 1)
            if not np.all(np.isfinite(ys)):
                k = int(np.argmax(~np.all(np.isfinite(ys), axis=1)))
                raise ClosureBreakdown(f"non-finite moment state at t={times[k]:.6g} s")
            if checking and check:
                model.check_many(ys, times)
            return ys, rates
        return run

    f = model.rhs(tier)
    step = _stepper(cfg.integrator)

    def run(y0, t0, h, nsteps, check=True):
        ys = np.empty((nsteps + 1, N_STATE))
        ys[0] = y = y0
        for k in range(nsteps):
            y = step(f, y, t0 + k * h, h)
            ys[k + 1] = y
            if not np.all(np.isfinite(y)):
                raise ClosureBreakdown(f"non-finite moment state at t={t0 + (k + 1) * h:.6g} s")
        times = t0 + h * np.arange(nsteps + 1)
        if checking and check:
            model.check_many(ys, times)
        rates = np.array([model.rates(ys[k], times[k], tier) for k in range(nsteps + 1)]).T
        return ys, rates
    return run


def _finish(model, cfg, times, ys, rates, converged, periods, history):
    c = model.const
    current = c.C0 * model.drive.dvdt(times) + Q_E * (c.kappa @ rates)
    return MomentTrajectory(cfg.tier, times, ys, rates, current, converged, periods, history, cfg)


def with_tier(cfg, tier):
    return replace(cfg, tier=tier)
