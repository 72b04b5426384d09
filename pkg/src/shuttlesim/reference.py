"""Reference solver: the marginal master equation on a truncated (n1, n2) lattice.

The charge distribution P(n, t) is evolved by RK4 method of lines with rates
evaluated at the mean displacement <x>; the mean mechanics are driven by the
lattice-averaged force. Probability that would tunnel off the lattice is
dropped, the lost mass is reported, and P is renormalized once per period.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _jit_lattice as jl
from .analysis import charge_spread, quasi_static_charge
from .constants import Q_E
from .device import gate_offset
from .monte_carlo import _dev_tuple, _mech_tuple, initial_charge
from .tunneling import position_factors


class LatticeTooSmall(RuntimeError):
    """Probability on the lattice edge exceeded the tolerance."""


@dataclass
class LatticePdf:
    n_lo: np.ndarray  # lattice value of index (0, 0)
    P: np.ndarray  # (N1, N2)
    mean_x: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mean_v: np.ndarray = field(default_factory=lambda: np.zeros(2))
    t: float = 0.0

    @property
    def n1(self):
        return self.n_lo[0] + np.arange(self.P.shape[0])

    @property
    def n2(self):
        return self.n_lo[1] + np.arange(self.P.shape[1])

    def mass(self):
        return float(self.P.sum())

    def edge_mass(self):
        P = self.P
        inner = P[1:-1, 1:-1].sum() if min(P.shape) > 2 else 0.0
        return float(P.sum() - inner)

    def mean(self):
        w = self.P / self.P.sum()
        return np.array([w.sum(axis=1) @ self.n1, w.sum(axis=0) @ self.n2])

    def covariance(self):
        w = self.P / self.P.sum()
        mu = self.mean()
        d1 = self.n1 - mu[0]
        d2 = self.n2 - mu[1]
        c11 = w.sum(axis=1) @ d1 ** 2
        c22 = w.sum(axis=0) @ d2 ** 2
        c12 = d1 @ w @ d2
        return np.array([[c11, c12], [c12, c22]])

    def window(self, lo, width):
        """Values on the square window [lo, lo + width) per shuttle (zeros off-lattice)."""
        out = np.zeros((width, width))
        a = np.asarray(lo, dtype=np.int64) - self.n_lo.astype(np.int64)
        for i in range(width):
            for k in range(width):
                p, r = a[0] + i, a[1] + k
                if 0 <= p < self.P.shape[0] and 0 <= r < self.P.shape[1]:
                    out[i, k] = self.P[p, r]
        return out


@dataclass(frozen=True)
class ReferenceConfig:
    steps_per_period: int = 1024
    tolerance: float = 1e-10
    max_periods: int = 500
    min_periods: int = 2
    half_width: int | None = None  # None: max(8, 6 sigma + drive excursion)
    frozen: bool = False
    perturbed: bool = True
    include_neutral_term: bool = False
    n_snapshots: int = 64
    edge_tolerance: float = 1e-6
    renormalize: bool = True

    def __post_init__(self):
        if self.steps_per_period < 2 or self.steps_per_period % self.n_snapshots:
            raise ValueError("steps_per_period must be a multiple of n_snapshots")
        if self.n_snapshots < 2 or self.n_snapshots % 2:
            raise ValueError("n_snapshots must be even and >= 2")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.half_width is not None and self.half_width < 1:
            raise ValueError("half_width must be >= 1")


@dataclass
class ReferenceResult:
    times: np.ndarray  # last period, steps+1 points
    mean_n: np.ndarray  # (steps+1, 2)
    D: np.ndarray  # (steps+1, 3): D11, D22, D12
    mean_x: np.ndarray
    mean_v: np.ndarray
    rates: np.ndarray  # (3, steps+1) <Gamma_j>
    current: np.ndarray
    snapshots: list  # LatticePdf at the n_snapshots phase points
    snapshot_times: np.ndarray
    converged: bool
    periods: int
    mass_history: np.ndarray  # total probability at each period end, before renormalizing
    max_edge_mass: float
    k_excursion: float  # max_j,t |K_j(<x>) - 1|
    bounds: tuple
    config: ReferenceConfig


def lattice_bounds(const, params, drive, half_width=None):
    """((lo1, hi1), (lo2, hi2)) centred on round(n_G B), inclusive."""
    c = initial_charge(const, params).astype(np.int64)
    if half_width is None:
        sig = charge_spread(const, params)
        amp = np.abs(quasi_static_charge(const, params, drive.peak_bound))
        half = np.maximum(8, np.ceil(6.0 * sig + amp)).astype(np.int64)
    else:
        half = np.array([half_width, half_width], dtype=np.int64)
    return tuple((int(c[s] - half[s]), int(c[s] + half[s])) for s in range(2))


def _observables(obs):
    mass = obs[:, 12:13]
    m = obs[:, :12] / mass
    mean_n = m[:, 0:2]
    D = np.stack([m[:, 2] - m[:, 0] ** 2, m[:, 3] - m[:, 1] ** 2, m[:, 4] - m[:, 0] * m[:, 1]], axis=1)
    return mean_n, D, m[:, 5:8].T, obs[:, 8:10], obs[:, 10:12]


def evolve(const, params, drive, cfg: ReferenceConfig = ReferenceConfig(), bounds=None, t_span=None,
           initial: LatticePdf | None = None) -> ReferenceResult:
    """Evolve to the periodic steady state (or over ``t_span`` when given).

    ``t_span`` = (0, k * period) runs exactly k periods without the convergence
    test; the returned series then cover the last period.
    """
    Tp = drive.period
    N = cfg.steps_per_period
    h = Tp / N
    if initial is not None:
        lo = np.asarray(initial.n_lo, dtype=np.int64)
        P = np.array(initial.P, dtype=float)
        xv = np.concatenate([initial.mean_x, initial.mean_v]).astype(float)
        bounds = ((int(lo[0]), int(lo[0]) + P.shape[0] - 1), (int(lo[1]), int(lo[1]) + P.shape[1] - 1))
    else:
        if bounds is None:
            bounds = lattice_bounds(const, params, drive, cfg.half_width)
        lo = np.array([bounds[0][0], bounds[1][0]], dtype=np.int64)
        shape = (bounds[0][1] - bounds[0][0] + 1, bounds[1][1] - bounds[1][0] + 1)
        if min(shape) < 3:
            raise ValueError("lattice must span at least 3 sites per shuttle")
        P = np.zeros(shape)
        c = initial_charge(const, params).astype(np.int64) - lo
        if not (0 <= c[0] < shape[0] and 0 <= c[1] < shape[1]):
            raise ValueError("lattice does not contain the initial charge state")
        P[c[0], c[1]] = 1.0
        xv = np.zeros(4)
    if cfg.frozen:
        xv[:] = 0.0

    dev = _dev_tuple(const, params)
    mech = _mech_tuple(params, h)
    Vh = np.ascontiguousarray(drive.voltage(0.5 * h * np.arange(2 * N + 1)), dtype=float)
    stride = N // cfg.n_snapshots
    snap_at = np.arange(cfg.n_snapshots, dtype=np.int64) * stride
    lo_f = lo.astype(float)

    fixed = None
    if t_span is not None:
        k = t_span[1] / Tp
        fixed = int(round(k))
        if fixed < 1 or abs(k - fixed) > 1e-9 or t_span[0] != 0:
            raise ValueError("t_span must be (0, k * period) for a whole number k >= 1")

    prev_obs = prev_P = None
    history = []
    ok_count = 0
    converged = fixed is not None
    max_edge = 0.0
    p = 0
    limit = fixed if fixed is not None else cfg.max_periods
    for p in range(1, limit + 1):
        obs = np.empty((N + 1, jl.NOBS))
        snaps = np.empty((cfg.n_snapshots,) + P.shape)
        jl.steps(P, xv, Vh, h, N, cfg.frozen, cfg.perturbed, cfg.include_neutral_term, lo_f, dev, mech, obs,
                 snap_at, snaps)
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(xv))):
            raise FloatingPointError(f"non-finite lattice state in period {p}")
        edge = float(np.max(obs[:, 13] / obs[:, 12]))
        max_edge = max(max_edge, edge)
        if edge > cfg.edge_tolerance:
            raise LatticeTooSmall(
                f"edge probability {edge:.3g} exceeds {cfg.edge_tolerance:g} in period {p}; "
                f"enlarge the lattice (current bounds {bounds})")
        mass = float(P.sum())
        history.append(mass)
        if cfg.renormalize:
            P /= mass
        if fixed is None and prev_obs is not None:
            cols = obs[:, :12]
            scale = np.maximum(np.max(np.abs(cols), axis=0), 1e-12 * np.max(np.abs(cols)))
            scale = np.where(scale > 0, scale, 1.0)
            change = max(float(np.max(np.max(np.abs(cols - prev_obs[:, :12]), axis=0) / scale)),
                         float(np.max(np.abs(P - prev_P))))
            ok_count = ok_count + 1 if change < cfg.tolerance else 0
            if ok_count >= 2 and p >= cfg.min_periods:
                converged = True
                prev_obs, prev_snaps = obs, snaps
                break
        prev_obs, prev_P, prev_snaps = obs, P.copy(), snaps

    obs, snaps = prev_obs, prev_snaps
    t0 = (p - 1) * Tp
    times = t0 + h * np.arange(N + 1)
    mean_n, D, rates, mx, mv = _observables(obs)
    current = const.C0 * drive.dvdt(times) + Q_E * (const.kappa @ rates)
    kx = float(np.max(np.abs(position_factors(mx, params.lambda_j) - 1.0)))
    snap_list = [LatticePdf(lo.copy(), snaps[i], mx[snap_at[i]].copy(), mv[snap_at[i]].copy(),
                            t0 + snap_at[i] * h) for i in range(cfg.n_snapshots)]
    return ReferenceResult(times, mean_n, D, mx, mv, rates, current, snap_list, snap_at * h, converged, p,
                           np.array(history), max_edge, kx, bounds, cfg)


def equilibrium_pdf(const, params, bounds):
    """Boltzmann weights exp(-E_C(n)/kT) on the lattice at V = 0 and x = 0 (normalized)."""
    lo = np.array([bounds[0][0], bounds[1][0]])
    n1 = np.arange(bounds[0][0], bounds[0][1] + 1)
    n2 = np.arange(bounds[1][0], bounds[1][1] + 1)
    dn = np.stack(np.meshgrid(n1, n2, indexing="ij"), axis=-1) - gate_offset(const, params)
    E = 0.5 * Q_E ** 2 * np.einsum("...a,ab,...b->...", dn, const.Cs_inv, dn)
    w = np.exp(-(E - E.min()) / params.kT)
    return LatticePdf(lo, w / w.sum())


def total_variation(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


__all__ = [
    "LatticePdf", "LatticeTooSmall", "ReferenceConfig", "ReferenceResult", "evolve", "lattice_bounds",
    "equilibrium_pdf", "total_variation",
]
