"""Run configuration: a sectioned INI file, SI units throughout.

Vectors are comma-separated, matrices are rows separated by semicolons
(``C_SS = 6e-18, -2e-18; -2e-18, 6e-18``). An empty value is an empty
vector/matrix (used for gate blocks of a gate-free device). Unknown sections
and keys are rejected.
"""
from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .device import CapacitanceInput, DriveWaveform, ShuttleParams
from .monte_carlo import McConfig
from .moments import ClosureConfig
from .reference import ReferenceConfig


class ConfigError(ValueError):
    """Validation failure with a ``file:line: [section] key: reason`` message."""


def _floats(text):
    text = text.strip()
    if not text:
        return np.zeros(0)
    return np.array([float(t) for t in text.split(",")])


def _matrix(text):
    text = text.strip()
    if not text:
        return np.zeros((0, 0))
    rows = [_floats(r) for r in text.split(";")]
    if len({r.size for r in rows}) != 1:
        raise ValueError("matrix rows have different lengths")
    return np.vstack(rows)


def _scalar(text):
    return float(text)


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _opt(conv):
    def f(text):
        return None if text.strip().lower() in ("", "auto", "none") else conv(text)
    return f


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _harmonics(text):
    text = text.strip()
    if not text:
        return ()
    out = []
    for row in text.split(";"):
        v = _floats(row)
        if v.size not in (2, 3):
            raise ValueError("each harmonic is 'order, amplitude[, phase]'")
        out.append((_int(str(v[0])), float(v[1]), float(v[2]) if v.size == 3 else 0.0))
    return tuple(out)


def _word(*allowed):
    def f(text):
        t = text.strip()
        if t not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}")
        return t
    return f


def _grid(text):
    """Explicit list ``a, b, c`` or ``linspace(a, b, n)`` / ``logspace(a, b, n)`` (endpoints in SI)."""
    t = text.strip()
    m = re.fullmatch(r"(linspace|logspace)\(([^)]*)\)", t)
    if m:
        a, b, n = _floats(m.group(2))
        n = _int(str(n))
        if m.group(1) == "linspace":
            return np.linspace(a, b, n)
        if a <= 0 or b <= 0:
            raise ValueError("logspace endpoints must be positive")
        return np.geomspace(a, b, n)
    return _floats(t)


_DERIV_KEYS = ("dC_SS", "dc_GS", "dC_GG", "dc_S", "dc_G")

SCHEMA = {
    "run": {"units": _word("SI")},
    "device": {
        "C_SS": _matrix, "c_GS": _matrix, "C_GG": _matrix, "c_S": _floats, "c_G": _floats, "C00": _scalar,
        **{f"{k}.x{s}": (_floats if k in ("dc_S", "dc_G") else _matrix) for k in _DERIV_KEYS for s in (1, 2)},
        "dC00": _floats,
    },
    "shuttles": {
        "omega_s": _floats, "m_s": _floats, "Q": _opt(_scalar), "gamma_s": _opt(_floats),
        "lambda_j": _floats, "R0_j": _floats, "temperature": _scalar, "beta_j": _floats,
        "k2": _floats, "k3": _floats, "n_G": _floats,
    },
    "drive": {"V0": _scalar, "omega": _scalar, "harmonics": _harmonics},
    "model": {"include_neutral_term": _bool, "perturbed": _bool},
    "moments": {
        "tier": _word("circuit", "variance", "full"), "order": _int, "integrator": _word("euler", "heun", "rk4"),
        "steps_per_period": _int, "tolerance": _scalar, "max_periods": _int, "check_bounds": _bool,
    },
    "mc": {
        "samples": _int, "master_seed": _int, "dt": _opt(_scalar), "periods_burnin": _opt(_int),
        "periods_measure": _int, "event_budget": _scalar, "n_bins": _int, "chunk_size": _int, "workers": _int,
        "frozen": _bool, "thermal": _bool, "hist_halfwidth": _int,
    },
    "reference": {
        "steps_per_period": _int, "tolerance": _scalar, "max_periods": _int, "half_width": _opt(_int),
        "frozen": _bool, "edge_tolerance": _scalar,
    },
    "sweep": {"axis": _word("frequency", "amplitude", "harmonic2"), "grid": _grid,
              "model": _word("circuit", "variance", "full", "reference", "mc")},
    "symmetry": {"model": _word("circuit", "variance", "full", "reference", "mc"), "harmonic_fraction": _scalar,
                 "gate_bias": _floats, "tolerance": _scalar},
    "compare": {"tier": _word("circuit", "variance", "full"), "reference": _bool},
    "output": {"directory": str, "plots": _bool},
}
REQUIRED = {"run": ("units",), "device": ("C_SS", "c_S", "C00"),
            "shuttles": ("omega_s", "m_s", "lambda_j", "R0_j", "temperature"), "drive": ("V0", "omega")}


@dataclass(frozen=True)
class SweepSpec:
    axis: str = "frequency"
    grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    model: str = "circuit"


@dataclass(frozen=True)
class SymmetrySpec:
    model: str = "reference"
    harmonic_fraction: float = 0.3
    gate_bias: np.ndarray | None = None
    tolerance: float = 1e-6  # relative residual for deterministic models


@dataclass(frozen=True)
class CompareSpec:
    tier: str = "full"
    reference: bool = True


@dataclass(frozen=True)
class RunConfig:
    capacitance: CapacitanceInput
    params: ShuttleParams
    drive: DriveWaveform
    closure: ClosureConfig
    mc: McConfig
    reference: ReferenceConfig
    sweep: SweepSpec
    symmetry: SymmetrySpec
    compare: CompareSpec
    out_dir: str = "shuttlesim-out"
    plots: bool = True
    source: str = "<string>"
    digest: str = ""

    def with_overrides(self, seed=None, samples=None, tier=None, dt=None, order=None, plots=None, out=None):
        """Apply command-line overrides; ``dt`` sets the MC step and the deterministic grids."""
        mc, cl, ref = self.mc, self.closure, self.reference
        if seed is not None:
            mc = replace(mc, master_seed=int(seed))
        if samples is not None:
            mc = replace(mc, samples=int(samples))
        if tier is not None:
            cl = replace(cl, tier=tier)
        if order is not None:
            cl = replace(cl, order=int(order))
        if dt is not None:
            Tp = self.drive.period
            steps = max(2, int(np.ceil(Tp / dt)))
            cl = replace(cl, steps_per_period=steps + steps % 2)
            nsnap = ref.n_snapshots
            ref = replace(ref, steps_per_period=nsnap * max(1, int(np.ceil(steps / nsnap))))
            mc = replace(mc, dt=float(dt))
        return replace(self, mc=mc, closure=cl, reference=ref,
                       plots=self.plots if plots is None else plots, out_dir=self.out_dir if out is None else out)


def _line_index(text):
    """(section, key) -> 1-based line number, for diagnostics."""
    idx, sec = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            sec = m.group(1).strip()
            idx[(sec, None)] = no
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and sec is not None and not raw[:1].isspace():
            idx[(sec, m.group(1).strip())] = no
    return idx


def loads(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case-sensitive (C_SS vs c_S)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(f"{source}: {err}") from None
    lines = _line_index(text)

    def fail(sec, key, msg):
        no = lines.get((sec, key), lines.get((sec, None)))
        where = f"{source}:{no}" if no else source
        raise ConfigError(f"{where}: [{sec}]{' ' + key if key else ''}: {msg}")

    vals = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            fail(sec, None, f"unknown section (allowed: {', '.join(SCHEMA)})")
        vals[sec] = {}
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                fail(sec, key, "unknown key")
            try:
                vals[sec][key] = SCHEMA[sec][key](raw)
            except (ValueError, TypeError) as err:
                fail(sec, key, f"cannot parse {raw!r}: {err}")
    for sec, keys in REQUIRED.items():
        if sec not in vals:
            raise ConfigError(f"{source}: missing section [{sec}]")
        for k in keys:
            if k not in vals[sec]:
                fail(sec, None, f"missing key {k}")

    dev = vals["device"]
    try:
        g = dev.get("c_G", np.zeros(0)).size
        kw = dict(C_SS=dev["C_SS"], c_S=dev["c_S"], C00=dev["C00"],
                  c_GS=dev.get("c_GS", np.zeros((0, 2))).reshape(g, 2) if g == 0 else dev["c_GS"],
                  C_GG=dev.get("C_GG", np.zeros((0, 0))).reshape(g, g) if g == 0 else dev["C_GG"],
                  c_G=dev.get("c_G", np.zeros(0)))
        for k in _DERIV_KEYS:
            parts = [dev.get(f"{k}.x{s}") for s in (1, 2)]
            if any(p is not None for p in parts):
                shape = {"dC_SS": (2, 2), "dc_GS": (g, 2), "dC_GG": (g, g), "dc_S": (2,), "dc_G": (g,)}[k]
                kw[k] = np.stack([np.zeros(shape) if p is None else p.reshape(shape) for p in parts])
        if "dC00" in dev:
            kw["dC00"] = dev["dC00"]
        cap = CapacitanceInput(**kw)
    except ValueError as err:
        fail("device", None, str(err))

    sh = vals["shuttles"]
    try:
        pkw = {k: v for k, v in sh.items() if v is not None}
        params = ShuttleParams(**pkw)
        if params.n_G.size != cap.g:
            raise ValueError(f"n_G has {params.n_G.size} entries, device has {cap.g} gates")
    except (ValueError, TypeError) as err:
        fail("shuttles", None, str(err))

    dr = vals["drive"]
    try:
        drive = DriveWaveform(dr["V0"], dr["omega"], dr.get("harmonics", ()))
    except ValueError as err:
        fail("drive", None, str(err))

    model = vals.get("model", {})
    try:
        closure = ClosureConfig(**vals.get("moments", {}), **model)
    except (ValueError, TypeError) as err:
        fail("moments", None, str(err))
    try:
        mc = McConfig(**vals.get("mc", {}), **model)
    except (ValueError, TypeError) as err:
        fail("mc", None, str(err))
    try:
        ref = ReferenceConfig(**vals.get("reference", {}), **model)
    except (ValueError, TypeError) as err:
        fail("reference", None, str(err))
    sweep = SweepSpec(**vals.get("sweep", {}))
    sym = vals.get("symmetry", {})
    symmetry = SymmetrySpec(**sym)
    if symmetry.tolerance <= 0 or symmetry.harmonic_fraction < 0:
        fail("symmetry", None, "tolerance must be positive and harmonic_fraction non-negative")
    compare = CompareSpec(**vals.get("compare", {}))
    out = vals.get("output", {})
    return RunConfig(cap, params, drive, closure, mc, ref, sweep, symmetry, compare,
                     out_dir=out.get("directory", "shuttlesim-out"), plots=out.get("plots", True),
                     source=source, digest=hashlib.sha256(text.encode()).hexdigest())


def load(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"{path}: cannot read config: {err.strerror}") from None
    return loads(text, str(p))


EXAMPLE = """\
# Two shuttles in a row: source | S1 | S2 | drain, no gates.
[run]
units = SI

[device]
C_SS = 6e-18, -2e-18; -2e-18, 6e-18
c_S = 0, -4e-18
C00 = 14e-18
# x-derivatives (F/m): gaps scale as 1/d with d = 2 nm
dC_SS.x1 = -1e-9, -1e-9; -1e-9, 1e-9
dC_SS.x2 = -1e-9, 1e-9; 1e-9, 1e-9
dc_S.x2 = 0, -2e-9
dC00 = 0, 2e-9

[shuttles]
omega_s = 3e8
m_s = 1e-18
Q = 1.0
lambda_j = 1e-8
R0_j = 2e9
temperature = 300

[drive]
V0 = 0.02
omega = 1e8
harmonics =

[moments]
tier = full
order = 8

[mc]
samples = 10000
master_seed = 1
dt = 1.5339807878856412e-11
periods_burnin = 2
event_budget = 0.1

[sweep]
axis = frequency
grid = logspace(2e7, 4e8, 9)
model = circuit

[output]
directory = shuttlesim-out
plots = true
"""
