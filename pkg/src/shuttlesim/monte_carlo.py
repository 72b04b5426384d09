"""Ensemble kinetic Monte Carlo of the coupled shuttles.

Each step draws at most one event per junction with probabilities
Gamma_j^{+/-} dt, applies n <- n + mu_j T_j and then advances the pillars.
Statistics are phase-binned over the measurement periods.

Reproducibility: samples are processed in fixed-size chunks, chunk ``k``
drawing from ``PCG64(SeedSequence([master_seed, k]))``; chunk accumulators
are merged in chunk order, so results do not depend on the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _jit_mc as jm
from .constants import K_B, Q_E, T_MAT
from .device import force_terms, gate_offset

FIELDS = (
    "n1", "n2", "x1", "x2", "v1", "v2", "D11", "D22", "D12",
    "Lambda1", "Lambda2", "W1", "W2", "Sigma1", "Sigma2", "X1", "X2", "Y1", "Y2",
    "G1", "G2", "G3",
)
# raw-moment column -> (central field, mean columns it subtracts)
_CENTRAL = {
    6: (0, 0), 7: (1, 1), 8: (0, 1), 9: (2, 2), 10: (3, 3), 11: (4, 4), 12: (5, 5),
    13: (2, 4), 14: (3, 5), 15: (2, 0), 16: (3, 1), 17: (4, 0), 18: (5, 1),
}


class McAbort(RuntimeError):
    """Simulation stopped: event budget exceeded or non-finite state."""


@dataclass(frozen=True)
class McConfig:
    dt: float | None = None
    periods_burnin: int | None = None
    periods_measure: int = 2
    samples: int = 1000
    master_seed: int = 0
    event_budget: float = 0.05
    n_bins: int = 64
    chunk_size: int = 4096
    workers: int = 1
    frozen: bool = False
    perturbed: bool = True
    thermal: bool = False
    include_neutral_term: bool = False
    hist_halfwidth: int = 16

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 0 < self.event_budget <= 0.2:
            raise ValueError("event_budget must lie in (0, 0.2]")
        if self.periods_measure < 2:
            raise ValueError("periods_measure must be >= 2 (cross-time statistics span two periods)")
        if self.periods_burnin is not None and self.periods_burnin < 0:
            raise ValueError("periods_burnin must be >= 0")
        if self.n_bins < 2 or self.n_bins % 2:
            raise ValueError("n_bins must be even and >= 2")
        if self.chunk_size < 1 or self.workers < 1:
            raise ValueError("chunk_size and workers must be >= 1")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")


@dataclass
class SystemState:
    n: np.ndarray
    x: np.ndarray
    v: np.ndarray


@dataclass
class EnsembleStats:
    """Phase-binned ensemble statistics over the measurement periods.

    ``values``/``errors`` have shape (n_bins, len(FIELDS)); moments are bin
    averages over the measure periods, standard errors follow from the
    sample-to-sample scatter of the per-sample bin averages (delta method for
    the central moments).
    """

    times: np.ndarray  # bin centres within one period
    snapshot_times: np.ndarray  # bin starts (histograms, cross-time snapshots)
    values: np.ndarray
    errors: np.ndarray
    rate_mean: np.ndarray  # (n_bins, 3) bin-averaged <Gamma_j>
    rate_cov: np.ndarray  # (3 n_bins, 3 n_bins) covariance of per-sample rate vectors
    snap_mean: np.ndarray  # (2 periods, n_bins, 2)
    snap_cov: np.ndarray  # covariance of the flattened snapshots
    hist: np.ndarray  # (n_bins, W, W) counts of (n1, n2) in the last period
    hist_lo: np.ndarray  # lattice value of hist index 0 per shuttle
    overflow: np.ndarray  # (n_bins,) samples outside the histogram window
    events: np.ndarray  # (3, 2) forward/backward counts during measurement
    samples: int
    dt: float
    steps_per_period: int
    periods_burnin: int
    period: float
    config: McConfig
    initial_n: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def field(self, name):
        return self.values[:, FIELDS.index(name)]

    def error(self, name):
        return self.errors[:, FIELDS.index(name)]

    def distribution(self, b):
        """Normalized (n1, n2) histogram at snapshot ``b`` (window only)."""
        return self.hist[b] / self.samples


def _dev_tuple(const, params):
    fg, fgg, ag = force_terms(const, params)
    T = T_MAT.astype(float)
    f = lambda a: np.ascontiguousarray(a, dtype=float)  # noqa: E731
    return (
        f(const.E0), f(const.E_theta), f(const.kappa), f(gate_offset(const, params)), float(Q_E),
        f(np.einsum("sab,jb->jsa", const.F0, T)), f(T @ const.alpha.T), f(T @ fg.T),
        f(1.0 / (Q_E * Q_E * params.R0_j)), float(params.kT), f(params.beta_j), f(params.lambda_j),
        f(const.F0), f(fg), f(fgg), f(ag), f(const.alpha), f(const.dC0),
    )


def _mech_tuple(params, dt):
    sig = np.sqrt(2.0 * params.gamma_s * K_B * params.temperature * dt / params.m_s)
    f = lambda a: np.ascontiguousarray(a, dtype=float)  # noqa: E731
    return (f(params.omega_s ** 2), f(params.gamma_s), f(params.m_s), f(params.k2), f(params.k3), f(sig))


def default_dt(params, drive):
    return min(drive.period, 2.0 * np.pi / float(np.max(params.omega_s))) / 2000.0


def default_burnin(params, drive):
    """Drive periods covering at least 10 Q mechanical periods (slowest decay)."""
    decay = float(np.max(10.0 * 2.0 * np.pi / params.gamma_s))  # 10 Q periods = 10 * 2pi / gamma
    return max(1, math.ceil(decay / drive.period))


def initial_charge(const, params):
    return np.round(gate_offset(const, params))


def _grid(period, dt, n_bins):
    spb = max(1, math.ceil(period / (dt * n_bins)))
    return spb, period / (n_bins * spb)


class _Chunk:
    def __init__(self, nb, W, nc):
        self.acc1 = np.zeros((nb, jm.NQ))
        self.acc2 = np.zeros((nb, jm.NQ, jm.NQ))
        self.r1 = np.zeros(3 * nb)
        self.r2 = np.zeros((3 * nb, 3 * nb))
        self.c1 = np.zeros(nc)
        self.c2 = np.zeros((nc, nc))
        self.hist = np.zeros((nb, W, W), dtype=np.int64)
        self.overflow = np.zeros(nb, dtype=np.int64)
        self.events = np.zeros((3, 2), dtype=np.int64)
        self.status = np.zeros(3)

    def add(self, o):
        for k in ("acc1", "acc2", "r1", "r2", "c1", "c2", "hist", "overflow", "events"):
            getattr(self, k).__iadd__(getattr(o, k))


def _run(const, params, drive, cfg, dt, spb, n_burn, n_meas, samples):
    nb = cfg.n_bins
    S = nb * spb
    Vk = np.ascontiguousarray(drive.voltage(dt * np.arange(S)), dtype=float)
    n0 = initial_charge(const, params)
    W = 2 * cfg.hist_halfwidth + 1
    hist_lo = (n0 - cfg.hist_halfwidth).astype(np.int64)
    nc = 4 * nb
    dev = _dev_tuple(const, params)
    mech = _mech_tuple(params, dt)
    sizes = [min(cfg.chunk_size, samples - s) for s in range(0, samples, cfg.chunk_size)]

    def work(k):
        ch = _Chunk(nb, W, nc)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.master_seed, k])))
        jm.run_chunk(rng, sizes[k], n0, Vk, nb, spb, n_burn, n_meas, dt, cfg.event_budget, cfg.frozen,
                     cfg.perturbed, cfg.thermal, cfg.include_neutral_term, dev, mech, hist_lo,
                     ch.acc1, ch.acc2, ch.r1, ch.r2, ch.c1, ch.c2, ch.hist, ch.overflow, ch.events, ch.status)
        return ch

    if cfg.workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            chunks = list(ex.map(work, range(len(sizes))))
    else:
        chunks = [work(k) for k in range(len(sizes))]
    total = _Chunk(nb, W, nc)
    for ch in chunks:  # fixed merge order
        if ch.status[0] == 1:
            raise McAbort(f"event budget exceeded at t={ch.status[1]:.6g} s: "
                          f"sum of rates {ch.status[2]:.4g} 1/s, dt={dt:.4g} s; reduce dt")
        if ch.status[0] == 2:
            raise McAbort(f"non-finite mechanical state by t={ch.status[1]:.6g} s")
        total.add(ch)
    return total, hist_lo, n0


def _cov(s1, s2, N):
    mean = s1 / N
    if N < 2:
        return mean, np.zeros_like(s2)
    outer = np.einsum("...i,...j->...ij", mean, mean)
    return mean, (s2 / N - outer) * (N / (N - 1.0))


def _estimates(acc1, acc2, N):
    """Field values and standard errors from raw per-sample bin averages."""
    mean, cov = _cov(acc1, acc2, N)
    nb = mean.shape[0]
    vals = mean.copy()
    grads = np.zeros((nb, jm.NQ, jm.NQ))
    idx = np.arange(jm.NQ)
    grads[:, idx, idx] = 1.0
    for k, (a, b) in _CENTRAL.items():
        vals[:, k] = mean[:, k] - mean[:, a] * mean[:, b]
        grads[:, k, a] -= mean[:, b]
        grads[:, k, b] -= mean[:, a]
    var = np.einsum("bki,bij,bkj->bk", grads, cov, grads) / N
    return vals, np.sqrt(np.maximum(var, 0.0))


def simulate(const, params, drive, cfg: McConfig = McConfig()) -> EnsembleStats:
    Tp = drive.period
    nb = cfg.n_bins
    n_burn = default_burnin(params, drive) if cfg.periods_burnin is None else cfg.periods_burnin
    if cfg.dt is None:
        # auto-halve until a short pilot run respects the event budget, and
        # again if the full ensemble still meets a rarer excursion
        spb, dt = _grid(Tp, default_dt(params, drive), nb)
        pilot = McConfig(**{**cfg.__dict__, "samples": min(cfg.samples, 64), "dt": dt})
        for attempt in range(24):
            try:
                if attempt < 12:
                    _run(const, params, drive, pilot, dt, spb, 0, 2, pilot.samples)
                acc, hist_lo, n0 = _run(const, params, drive, cfg, dt, spb, n_burn, cfg.periods_measure,
                                        cfg.samples)
                break
            except McAbort as err:
                if "budget" not in str(err) or attempt == 23:
                    raise
                spb *= 2
                dt = Tp / (nb * spb)
    else:
        spb, dt = _grid(Tp, cfg.dt, nb)
        acc, hist_lo, n0 = _run(const, params, drive, cfg, dt, spb, n_burn, cfg.periods_measure, cfg.samples)
    N = cfg.samples
    vals, errs = _estimates(acc.acc1, acc.acc2, N)
    r_mean, r_cov = _cov(acc.r1, acc.r2, N)
    c_mean, c_cov = _cov(acc.c1, acc.c2, N)
    return EnsembleStats(
        times=(np.arange(nb) + 0.5) * Tp / nb,
        snapshot_times=np.arange(nb) * Tp / nb,
        values=vals, errors=errs,
        rate_mean=r_mean.reshape(nb, 3), rate_cov=r_cov,
        snap_mean=c_mean.reshape(2, nb, 2), snap_cov=c_cov,
        hist=acc.hist, hist_lo=hist_lo, overflow=acc.overflow, events=acc.events,
        samples=N, dt=dt, steps_per_period=nb * spb, periods_burnin=n_burn, period=Tp, config=cfg,
        initial_n=n0,
    )


# -- derived quantities -------------------------------------------------------

@dataclass(frozen=True)
class CurrentResult:
    times: np.ndarray
    current: np.ndarray  # bin-averaged I(t)
    current_se: np.ndarray
    dc: np.ndarray  # I_dc from each junction separately
    dc_se: np.ndarray
    spread: float  # max - min of the three estimates

    @property
    def dc_mean(self):
        return float(np.mean(self.dc))


def current(stats: EnsembleStats, const, params, drive) -> CurrentResult:
    """I(t) = C0 dV/dt + q sum_j kappa_j <Gamma_j>, bin-averaged, plus per-junction I_dc."""
    nb = stats.rate_mean.shape[0]
    Tp = stats.period
    edges = np.arange(nb + 1) * Tp / nb
    V = drive.voltage(edges)
    disp = const.C0 * np.diff(V) / (Tp / nb)  # exact bin average of C0 dV/dt
    # linear functionals of the per-sample rate vector, index b*3 + j
    W_I = np.zeros((nb, 3 * nb))
    for b in range(nb):
        W_I[b, 3 * b: 3 * b + 3] = Q_E * const.kappa
    I = disp + W_I @ stats.rate_mean.ravel()
    I_se = np.sqrt(np.maximum(np.einsum("bi,ij,bj->b", W_I, stats.rate_cov, W_I), 0.0) / stats.samples)
    W_dc = np.zeros((3, 3 * nb))
    for j in range(3):
        W_dc[j, j::3] = Q_E / nb
    dc = W_dc @ stats.rate_mean.ravel()
    dc_se = np.sqrt(np.maximum(np.einsum("ji,ik,jk->j", W_dc, stats.rate_cov, W_dc), 0.0) / stats.samples)
    return CurrentResult(stats.times, I, I_se, dc, dc_se, float(np.ptp(dc)))


def antisymmetry_residual(stats: EnsembleStats, const, drive):
    """max_b |I_b + I_{b+nb/2}| and its standard error (same bin-pair).

    Returns ``(residual, se_at_max, max_abs_I, z_max)`` where ``z_max`` is the
    largest |I_b + I_{b+h}| / SE over the bins.
    """
    nb = stats.rate_mean.shape[0]
    h = nb // 2
    Tp = stats.period
    edges = np.arange(nb + 1) * Tp / nb
    disp = const.C0 * np.diff(drive.voltage(edges)) / (Tp / nb)
    W = np.zeros((h, 3 * nb))
    for b in range(h):
        W[b, 3 * b: 3 * b + 3] = Q_E * const.kappa
        W[b, 3 * (b + h): 3 * (b + h) + 3] += Q_E * const.kappa
    s = disp[:h] + disp[h:] + W @ stats.rate_mean.ravel()
    se = np.sqrt(np.maximum(np.einsum("bi,ij,bj->b", W, stats.rate_cov, W), 0.0) / stats.samples)
    I = disp + stats.rate_mean @ (Q_E * const.kappa)
    k = int(np.argmax(np.abs(s)))
    z = np.abs(s) / np.where(se > 0, se, np.inf)
    return float(abs(s[k])), float(se[k]), float(np.max(np.abs(I))), float(np.max(z))


def correlation_probe(stats: EnsembleStats, omega=None):
    """Largest |corr(n_s(t), n_s'(t'))| over snapshot pairs with |t - t'| >= half a period."""
    nb = stats.snap_mean.shape[1]
    Tp = stats.period
    t = (np.arange(2)[:, None] * Tp + np.arange(nb)[None, :] * Tp / nb)
    t = np.repeat(t.ravel(), 2)
    C = stats.snap_cov
    sd = np.sqrt(np.maximum(np.diag(C), 0.0))
    ok = sd > 0
    half = (np.pi / omega) if omega is not None else Tp / 2.0
    far = np.abs(t[:, None] - t[None, :]) >= half * (1 - 1e-12)
    mask = far & ok[:, None] & ok[None, :]
    if not np.any(mask):
        return 0.0
    corr = C / np.outer(np.where(ok, sd, 1.0), np.where(ok, sd, 1.0))
    return float(np.max(np.abs(corr[mask])))


# -- single-sample trace ------------------------------------------------------

@dataclass
class SampleTrace:
    times: np.ndarray  # time after each step
    n: np.ndarray
    x: np.ndarray
    v: np.ndarray
    events: np.ndarray  # (steps, 3) in {-1, 0, 1}


def trace_sample(const, params, drive, dt, steps, seed=0, frozen=False, perturbed=True, thermal=False,
                 event_budget=0.05, include_neutral_term=False):
    """Run one sample and record every step (diagnostics and bookkeeping checks)."""
    Tp = drive.period
    S = max(1, int(round(Tp / dt)))
    dt = Tp / S
    Vk = np.ascontiguousarray(drive.voltage(dt * np.arange(S)), dtype=float)
    ns = np.empty((steps, 2))
    xs = np.empty((steps, 2))
    vs = np.empty((steps, 2))
    mus = np.empty((steps, 3), dtype=np.int64)
    status = np.zeros(3)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    jm.trace(rng, initial_charge(const, params).astype(float), Vk, steps, dt, event_budget, frozen, perturbed,
             thermal, include_neutral_term, _dev_tuple(const, params), _mech_tuple(params, dt),
             ns, xs, vs, mus, status)
    if status[0] == 1:
        raise McAbort(f"event budget exceeded at t={status[1]:.6g} s: sum of rates {status[2]:.4g} 1/s")
    return SampleTrace(dt * np.arange(1, steps + 1), ns, xs, vs, mus)
