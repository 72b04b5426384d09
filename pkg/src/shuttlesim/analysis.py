"""Post-processing: small-signal estimates, DC current, symmetry checks, harmonics and sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import Q_E, T_MAT

# -- analytic estimates -------------------------------------------------------


def charge_spread(const, params):
    """Equilibrium standard deviation of (n1, n2): sqrt(kT Cs / q^2) per shuttle."""
    Cs = np.linalg.inv(const.Cs_inv)
    return np.sqrt(params.kT * np.diag(Cs) / Q_E ** 2)


def quasi_static_charge(const, params, V):
    """Mean charge shift where the linearized net rates balance at a constant voltage V.

    Solves sum_j T_js U_j / R_j = 0 with U_j = q kappa_j V - E_theta_j . dn.
    This is the low-frequency limit of the circuit model, an upper bound on the
    driven excursion of <n>.
    """
    T = T_MAT.astype(float)
    g = 1.0 / params.R0_j
    A = np.einsum("js,j,jt->st", T, g, const.E_theta)
    b = np.einsum("js,j,j->s", T, g, Q_E * const.kappa)
    return np.linalg.solve(A, b) * V


@dataclass(frozen=True)
class SmallSignalResult:
    n_bar: complex  # complex amplitude of <n1>; <n1>(t) = Im(n_bar e^{i w t})
    phi: float
    omega_c: float
    n_bar2: complex = 0j

    @property
    def amplitude(self):
        return abs(self.n_bar)


def small_signal(E0, kappa, R0, V0, omega, rtol=1e-9):
    """First-order response of <n> for mirror-symmetric junctions (R1 = R3, E1 = E3, kappa1 = kappa3).

    With R_t = 2 R1 + R2, the corner is w_c = E2 R_t / (q^2 R1 R2) and the
    amplitude (q V0 / E2)(kappa1 - R1/R_t) / sqrt(1 + (w/w_c)^2). The response
    lags the drive by phi = arctan(w / w_c).
    """
    E0 = np.asarray(E0, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    R0 = np.broadcast_to(np.asarray(R0, dtype=float), (3,))
    for name, a in (("R0", R0), ("E0", E0), ("kappa", kappa)):
        if not math.isclose(a[0], a[2], rel_tol=rtol, abs_tol=0.0):
            raise ValueError(f"small-signal estimate needs symmetric junctions: {name}_1 != {name}_3 "
                             f"({a[0]:.6g} vs {a[2]:.6g})")
    R1, R2 = R0[0], R0[1]
    Rt = 2.0 * R1 + R2
    E2 = E0[1]
    wc = E2 * Rt / (Q_E ** 2 * R1 * R2)
    phi = math.atan2(omega, wc)
    amp = (Q_E * V0 / E2) * (kappa[0] - R1 / Rt) / math.sqrt(1.0 + (omega / wc) ** 2)
    n1 = amp * complex(math.cos(phi), -math.sin(phi))
    return SmallSignalResult(n1, phi, wc, -n1)


def small_signal_for(const, params, drive):
    if drive.harmonics and any(a != 0 for _, a, _ in drive.harmonics):
        raise ValueError("small-signal estimate needs a pure sine drive")
    return small_signal(const.E0, const.kappa, params.R0_j, drive.V0, drive.omega)


# -- DC current ------------------------------------------------------------------

@dataclass(frozen=True)
class DcCurrent:
    per_junction: np.ndarray  # (3,) amperes
    spread: float  # max - min
    periodic: bool

    @property
    def mean(self):
        return float(np.mean(self.per_junction))

    @property
    def relative_spread(self):
        m = np.max(np.abs(self.per_junction))
        return float(self.spread / m) if m > 0 else 0.0


def period_average(series, endpoint=True):
    """Trapezoidal average over one period of a uniform grid (last axis)."""
    y = np.asarray(series, dtype=float)
    if endpoint:
        n = y.shape[-1] - 1
        return (y[..., 1:-1].sum(axis=-1) + 0.5 * (y[..., 0] + y[..., -1])) / n
    return y.mean(axis=-1)


def dc_current(gamma_series, omega=None, endpoint=True, rtol=1e-6):
    """I_dc = q x period average of <Gamma_j> for each junction.

    ``gamma_series`` is (3, N+1) over exactly one period with both endpoints
    (``endpoint=True``) or (3, N) without the closing point. The result is
    flagged non-periodic when the endpoints differ by more than ``rtol`` of
    the series scale. ``omega`` is accepted for symmetry with the integral
    form; a uniform one-period grid makes it cancel.
    """
    g = np.atleast_2d(np.asarray(gamma_series, dtype=float))
    if g.shape[-1] == 0:
        raise ValueError("empty rate series")
    periodic = True
    if endpoint and g.shape[-1] > 1:
        scale = np.max(np.abs(g))
        periodic = bool(np.all(np.abs(g[:, 0] - g[:, -1]) <= rtol * scale)) if scale > 0 else True
    dc = Q_E * period_average(g, endpoint)
    return DcCurrent(dc, float(np.ptp(dc)), periodic)


# -- harmonic analysis -----------------------------------------------------------

def harmonic_decompose(series, omega=None, max_order=4, endpoint=False):
    """Complex Fourier amplitudes c_0 .. c_max of one uniformly sampled period.

    series(t) ~= c_0 + sum_k Re(c_k e^{i k w t}), so sin(w t) gives c_1 = -i.
    Set ``endpoint`` when the last sample repeats the first.
    """
    y = np.asarray(series, dtype=float)
    if endpoint:
        y = y[..., :-1]
    n = y.shape[-1]
    if n < 2 * max_order + 1:
        raise ValueError(f"{n} samples cannot resolve order {max_order}")
    X = np.fft.rfft(y, axis=-1) / n
    c = X[..., : max_order + 1].copy()
    c[..., 1:] *= 2.0
    return c


# -- bin averaging for cross-model comparison ----------------------------------

# second-moment columns of the 19-entry moment state -> the two mean columns they pair
_RAW = {6: (0, 0), 7: (1, 1), 8: (0, 1), 9: (2, 2), 10: (3, 3), 11: (4, 4), 12: (5, 5),
        13: (2, 4), 14: (3, 5), 15: (2, 0), 16: (3, 1), 17: (4, 0), 18: (5, 1)}


def bin_average(series, n_bins, endpoint=True):
    """Average a one-period uniform series (rows = time) over ``n_bins`` equal phase bins.

    Sample k belongs to bin k // (N / n_bins), the same left-closed binning
    the Monte Carlo uses for its step-start states.
    """
    y = np.asarray(series, dtype=float)
    if endpoint:
        y = y[:-1]
    N = y.shape[0]
    if N % n_bins:
        raise ValueError(f"{N} samples do not split into {n_bins} bins")
    return y.reshape((n_bins, N // n_bins) + y.shape[1:]).mean(axis=1)


def binned_moments(states, n_bins, endpoint=True):
    """Bin averages of a moment-state trajectory (N+1, 19), central moments formed after averaging.

    Raw second moments are averaged first and then centred with the bin
    means, so the result is directly comparable with Monte Carlo bin values.
    """
    y = np.asarray(states, dtype=float)
    raw = y.copy()
    for k, (a, b) in _RAW.items():
        raw[:, k] = y[:, k] + y[:, a] * y[:, b]
    r = bin_average(raw, n_bins, endpoint)
    for k, (a, b) in _RAW.items():
        r[:, k] -= r[:, a] * r[:, b]
    return r


# -- model runners -----------------------------------------------------------------

@dataclass
class PeriodSeries:
    """One steady-state period from any model: I(t) and <Gamma_j>(t), optional standard errors."""

    model: str
    times: np.ndarray
    current: np.ndarray
    rates: np.ndarray  # (3, len(times))
    endpoint: bool  # True when the last sample closes the period
    converged: bool = True
    current_se: np.ndarray | None = None
    dc_se: np.ndarray | None = None
    extra: dict = field(default_factory=dict)
    result: object = None


def run_model(model, const, params, drive, options=None) -> PeriodSeries:
    """Run ``model`` in {circuit, variance, full, reference, mc} to its periodic steady state.

    ``options`` is the tier's config object (ClosureConfig, ReferenceConfig or
    McConfig); None uses the defaults.
    """
    if model in ("circuit", "variance", "full"):
        from .moments import ClosureConfig, integrate

        cfg = replace(options or ClosureConfig(), tier=model)
        tr = integrate(const, params, drive, cfg)
        return PeriodSeries(model, tr.times, tr.current, tr.rates, True, tr.converged,
                            extra={"n1": tr.field("n1"), "x1": tr.field("x1")}, result=tr)
    if model == "reference":
        from .reference import ReferenceConfig, evolve

        res = evolve(const, params, drive, options or ReferenceConfig())
        return PeriodSeries(model, res.times, res.current, res.rates, True, res.converged,
                            extra={"n1": res.mean_n[:, 0], "x1": res.mean_x[:, 0]}, result=res)
    if model == "mc":
        from .monte_carlo import McConfig, current, simulate

        st = simulate(const, params, drive, options or McConfig())
        cr = current(st, const, params, drive)
        return PeriodSeries(model, cr.times, cr.current, st.rate_mean.T, False, True, cr.current_se, cr.dc_se,
                            extra={"n1": st.field("n1"), "x1": st.field("x1")}, result=st)
    raise ValueError(f"unknown model {model!r}")


def antisymmetry(series: PeriodSeries):
    """max_t |I(t) + I(t + T/2)| / max_t |I(t)| on the series' own grid."""
    I = np.asarray(series.current)
    if series.endpoint:
        I = I[:-1]
    n = I.shape[0]
    if n % 2:
        raise ValueError("antisymmetry check needs an even number of samples per period")
    h = n // 2
    s = I[:h] + I[h:]
    top = float(np.max(np.abs(I)))
    return float(np.max(np.abs(s)) / top) if top > 0 else 0.0


@dataclass
class SymmetryReport:
    model: str
    residual: float  # relative antisymmetry residual of the base run
    dc: np.ndarray  # per-junction I_dc of the base run
    z_max: float | None  # Monte Carlo only: largest |I(t)+I(t+T/2)| / SE
    residual_over_se: float | None  # Monte Carlo only: max |I+I'| / its SE
    routes: dict  # name -> per-junction I_dc (None when the route does not apply)
    route_se: dict
    converged: bool


def symmetry_probe(model, const, params, drive, options=None, harmonic_fraction=0.3, gate_bias=None):
    """Antisymmetry of I(t) for the base drive, then I_dc under the two symmetry-breaking routes.

    Routes: an added 2nd harmonic of ``harmonic_fraction * V0``, and gate
    electron numbers ``gate_bias`` (default one electron per gate; skipped on
    gate-free devices).
    """
    base = run_model(model, const, params, drive, options)
    z = rse = None
    if model == "mc":
        from .monte_carlo import antisymmetry_residual

        s, se, top, z = antisymmetry_residual(base.result, const, drive)
        res = s / top if top > 0 else 0.0
        rse = s / se if se > 0 else math.inf
        dc_base = Q_E * base.rates.mean(axis=1)
    else:
        res = antisymmetry(base)
        dc_base = dc_current(base.rates, endpoint=True).per_junction
    routes, route_se = {}, {}
    conv = base.converged

    def _dc(ps):
        if ps.endpoint:
            return dc_current(ps.rates, endpoint=True).per_junction, None
        return Q_E * ps.rates.mean(axis=1), ps.dc_se

    if harmonic_fraction:
        r = run_model(model, const, params, drive.with_harmonic(2, harmonic_fraction * drive.V0), options)
        routes["harmonic2"], route_se["harmonic2"] = _dc(r)
        conv = conv and r.converged
    if const.g > 0:
        bias = np.ones(const.g) if gate_bias is None else np.asarray(gate_bias, dtype=float)
        r = run_model(model, const, params.replace(n_G=bias), drive, options)
        routes["gate"], route_se["gate"] = _dc(r)
        conv = conv and r.converged
    else:
        routes["gate"], route_se["gate"] = None, None
    return SymmetryReport(model, res, dc_base, z, rse, routes, route_se, conv)


# -- sweeps ----------------------------------------------------------------------

SWEEP_AXES = ("frequency", "amplitude", "harmonic2")
SWEEP_COLUMNS = ("value", "I_dc", "I_dc_1", "I_dc_2", "I_dc_3", "n1_amplitude", "x1_amplitude", "converged")


@dataclass
class SweepTable:
    axis: str
    model: str
    rows: list  # tuples in SWEEP_COLUMNS order
    errors: dict  # grid index -> message for failed points

    def column(self, name):
        i = SWEEP_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)


def _drive_at(drive, axis, value):
    from .device import DriveWaveform

    if axis == "frequency":
        return DriveWaveform(drive.V0, value, drive.harmonics)
    if axis == "amplitude":
        return DriveWaveform(value, drive.omega, drive.harmonics)
    if axis == "harmonic2":
        harm = tuple(h for h in drive.harmonics if h[0] != 2) + ((2, value * drive.V0, 0.0),)
        return DriveWaveform(drive.V0, drive.omega, harm)
    raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")


def sweep(axis, grid, model, const, params, drive, options=None) -> SweepTable:
    """Run ``model`` at every grid value (frequency in rad/s, amplitude in V, or 2nd-harmonic fraction).

    Points are independent; a failing point is recorded in ``errors`` and
    the sweep continues. Amplitudes are first-harmonic magnitudes.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
    rows, errors = [], {}
    for i, value in enumerate(grid):
        try:
            ps = run_model(model, const, params, _drive_at(drive, axis, float(value)), options)
        except Exception as err:  # recorded per point, the sweep goes on
            errors[i] = f"{type(err).__name__}: {err}"
            rows.append((float(value),) + (math.nan,) * 6 + (False,))
            continue
        if ps.endpoint:
            dc = dc_current(ps.rates, endpoint=True).per_junction
        else:
            dc = Q_E * ps.rates.mean(axis=1)
        n1 = abs(harmonic_decompose(ps.extra["n1"], max_order=1, endpoint=ps.endpoint)[1])
        x1 = abs(harmonic_decompose(ps.extra["x1"], max_order=1, endpoint=ps.endpoint)[1])
        rows.append((float(value), float(np.mean(dc)), *map(float, dc), float(n1), float(x1), bool(ps.converged)))
    return SweepTable(axis, model, rows, errors)


# -- cross-model discrepancy -------------------------------------------------------

def distribution_tv(stats, ref):
    """Total-variation distance between Monte Carlo histograms and reference lattice PDFs per phase.

    Both sides must sample the same phases (MC bin starts, reference
    snapshots). Mass outside the MC window or off the reference lattice counts
    fully toward the distance.
    """
    nb = stats.hist.shape[0]
    if len(ref.snapshots) != nb:
        raise ValueError(f"{nb} MC phases vs {len(ref.snapshots)} reference snapshots")
    W = stats.hist.shape[1]
    out = np.empty(nb)
    for b in range(nb):
        p = stats.hist[b] / stats.samples
        snap = ref.snapshots[b]
        q = snap.window(stats.hist_lo, W) / snap.P.sum()
        outside = max(0.0, 1.0 - q.sum())
        out[b] = 0.5 * (np.abs(p - q).sum() + stats.overflow[b] / stats.samples + outside)
    return out


def max_se_deviation(stats, states, fields, endpoint=True):
    """Largest |model - MC| / SE per field, the model trajectory bin-averaged like the MC."""
    from .monte_carlo import FIELDS
    from .moments import FIELD_NAMES

    nb = stats.values.shape[0]
    m = binned_moments(states, nb, endpoint)
    out = {}
    for name in fields:
        i = FIELDS.index(name)
        se = stats.errors[:, i]
        d = np.abs(m[:, FIELD_NAMES.index(name)] - stats.values[:, i])
        out[name] = float(np.max(np.where(se > 0, d / np.where(se > 0, se, 1.0), np.where(d > 0, np.inf, 0.0))))
    return out
