"""Command-line entry point: ``shuttlesim <command> --config run.ini [overrides]``.

Exit codes: 0 success, 1 invalid input or unwritable output, 2 runtime abort
(event budget, closure breakdown, lattice too small), 3 not converged (results
are still written and flagged).
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as rio
from .analysis import (binned_moments, dc_current, distribution_tv, max_se_deviation, small_signal_for, sweep,
                       symmetry_probe)
from .config import EXAMPLE, ConfigError, RunConfig, load
from .constants import Q_E
from .device import derive_constants
from .monte_carlo import FIELDS, McAbort, correlation_probe, current, simulate
from .moments import FIELD_NAMES, ClosureBreakdown, integrate
from .reference import LatticeTooSmall, evolve

COMMANDS = ("derive", "mc", "moments", "circuit", "reference", "sweep", "compare", "symmetry")
OK, INVALID, ABORT, NOT_CONVERGED = 0, 1, 2, 3
_UNITS = {"n": "1", "x": "m", "v": "m/s", "D": "1", "Lambda": "m^2", "W": "m^2/s^2", "Sigma": "m^2/s",
          "X": "m", "Y": "m/s", "G": "1/s"}


def _unit(field):
    return _UNITS[field.rstrip("0123456789")]


class _Run:
    """Output directory plus manifest; the manifest is written before any result."""

    def __init__(self, cfg: RunConfig, command, argv):
        self.cfg = cfg
        self.dir = Path(cfg.out_dir)
        self.t0 = time.time()
        self.files = []
        self.manifest = {
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "config_source": cfg.source,
            "config_hash": cfg.digest,
            "master_seed": cfg.mc.master_seed,
            "mc": {"dt": cfg.mc.dt, "samples": cfg.mc.samples, "periods_burnin": cfg.mc.periods_burnin,
                   "periods_measure": cfg.mc.periods_measure, "event_budget": cfg.mc.event_budget,
                   "n_bins": cfg.mc.n_bins, "chunk_size": cfg.mc.chunk_size, "frozen": cfg.mc.frozen,
                   "thermal": cfg.mc.thermal, "initial_state": "n = round(n_G B), x = v = 0"},
            "moments": {"tier": cfg.closure.tier, "order_L": cfg.closure.order,
                        "integrator": cfg.closure.integrator, "steps_per_period": cfg.closure.steps_per_period,
                        "tolerance": cfg.closure.tolerance},
            "reference": {"steps_per_period": cfg.reference.steps_per_period,
                          "tolerance": cfg.reference.tolerance, "half_width": cfg.reference.half_width,
                          "frozen": cfg.reference.frozen, "off_lattice_flux": "dropped and reported"},
            "switches": {
                "include_neutral_term": cfg.closure.include_neutral_term,
                "perturbed_free_energy": cfg.closure.perturbed,
                "mean_position_factor": "K_j(<x>) * exp(T_j Lambda T_j^T / (2 lambda_j^2)), diagonal Lambda",
                "mean_velocity_equation": "d<v>/dt = -gamma <v> - omega^2 <x> + <F>/m",
                "cross_shuttle_covariances": "omitted",
                "mc_mechanics": "semi-implicit Euler, implicit damping",
                "first_period_bound_check": "skipped (degenerate x = v = 0 start)",
            },
            "environment": rio.environment(),
            "status": "running",
        }

    def start(self):
        self.dir.mkdir(parents=True, exist_ok=True)
        rio.write_manifest(self.dir, self.manifest)

    def csv(self, name, columns):
        self.files.append(name)
        rio.write_csv(self.dir / name, columns)

    def svg(self, name, fn, *a, **kw):
        if self.cfg.plots:
            self.files.append(name)
            fn(self.dir / name, *a, **kw)

    def finish(self, status, **extra):
        self.manifest.update(extra)
        self.manifest["status"] = status
        self.manifest["wall_clock_s"] = round(time.time() - self.t0, 3)
        self.manifest["files"] = self.files
        rio.write_manifest(self.dir, self.manifest)


def _moment_columns(tr):
    cols = [("t", "s", tr.times)]
    for i, name in enumerate(FIELD_NAMES):
        cols.append((name, _unit(name), tr.states[:, i]))
    for j in range(3):
        cols.append((f"Gamma{j + 1}", "1/s", tr.rates[j]))
    cols.append(("I", "A", tr.current))
    return cols


def _dc_columns(dc, se=None):
    cols = [("junction", "1", np.arange(1, 4)), ("I_dc", "A", dc)]
    if se is not None:
        cols.append(("I_dc_se", "A", se))
    return cols


# -- commands ----------------------------------------------------------------------

def cmd_derive(cfg, run, const):
    print("junction  E0[J]                  E0[eV]                 kappa")
    for j in range(3):
        print(f"{j + 1:8d}  {const.E0[j]:.15e}  {const.E0[j] / Q_E:.15e}  {const.kappa[j]:.15f}")
    print(f"kappa sum = {const.kappa.sum():.15f}")
    print(f"C0 = {const.C0:.10e} F")
    run.csv("constants.csv", [("junction", "1", np.arange(1, 4)), ("E0", "J", const.E0),
                              ("E0_eV", "eV", const.E0 / Q_E), ("kappa", "1", const.kappa)])
    run.csv("shuttle_constants.csv", [("shuttle", "1", np.arange(1, 3)), ("zeta", "1", const.zeta),
                                      ("alpha_s1", "1/m", const.alpha[:, 0]),
                                      ("alpha_s2", "1/m", const.alpha[:, 1])])
    run.finish("ok", C0=const.C0)
    return OK


def cmd_moments(cfg, run, const, tier=None):
    closure = cfg.closure if tier is None else cfg.closure.__class__(**{**cfg.closure.__dict__, "tier": tier})
    tr = integrate(const, cfg.params, cfg.drive, closure)
    run.csv(f"{closure.tier}.csv", _moment_columns(tr))
    dc = dc_current(tr.rates, endpoint=True)
    run.csv(f"{closure.tier}_dc.csv", _dc_columns(dc.per_junction))
    extra = {}
    if closure.tier == "circuit":
        try:
            ss = small_signal_for(const, cfg.params, cfg.drive)
        except ValueError as err:
            print(f"small-signal estimate skipped: {err}")
        else:
            run.csv("small_signal.csv", [("n1_amplitude", "1", [ss.amplitude]), ("phi", "rad", [ss.phi]),
                                         ("omega_c", "rad/s", [ss.omega_c])])
            extra["small_signal"] = {"n1_amplitude": ss.amplitude, "phi": ss.phi, "omega_c": ss.omega_c}
            print(f"small-signal |n1| = {ss.amplitude:.6g}, omega_c = {ss.omega_c:.6g} rad/s")
    t = tr.phase_times
    run.svg(f"{closure.tier}_n.svg", rio.line_plot, t, [("<n1>", tr.field("n1")), ("<n2>", tr.field("n2"))],
            "t [s]", "<n>")
    run.svg(f"{closure.tier}_x.svg", rio.line_plot, t, [("<x1>", tr.field("x1")), ("<x2>", tr.field("x2"))],
            "t [s]", "<x> [m]")
    run.svg(f"{closure.tier}_current.svg", rio.line_plot, t, [("I", tr.current)], "t [s]", "I [A]")
    print(f"{closure.tier}: converged={tr.converged} after {tr.periods} periods; "
          f"I_dc per junction = {', '.join(f'{v:.6g}' for v in dc.per_junction)} A")
    run.finish("ok" if tr.converged else "not converged", converged=tr.converged, periods=tr.periods, **extra)
    return OK if tr.converged else NOT_CONVERGED


def _mc_files(run, st, cr, prefix="mc"):
    cols = [("t", "s", st.times)]
    for i, name in enumerate(FIELDS):
        unit = _unit(name)
        cols.append((name, unit, st.values[:, i]))
        cols.append((name + "_se", unit, st.errors[:, i]))
    cols += [("I", "A", cr.current), ("I_se", "A", cr.current_se)]
    run.csv(f"{prefix}_bins.csv", cols)
    run.csv(f"{prefix}_dc.csv", _dc_columns(cr.dc, cr.dc_se))
    nb, W, _ = st.hist.shape
    b, i1, i2 = np.meshgrid(np.arange(nb), np.arange(W), np.arange(W), indexing="ij")
    run.csv(f"{prefix}_histogram.csv", [("phase_bin", "1", b), ("t", "s", st.snapshot_times[b]),
                                        ("n1", "1", i1 + st.hist_lo[0]), ("n2", "1", i2 + st.hist_lo[1]),
                                        ("count", "1", st.hist)])
    t = st.times
    run.svg(f"{prefix}_n.svg", rio.line_plot, t, [("<n1>", st.field("n1"), st.error("n1")),
                                                 ("<n2>", st.field("n2"), st.error("n2"))], "t [s]", "<n>")
    run.svg(f"{prefix}_current.svg", rio.line_plot, t, [("I", cr.current, cr.current_se)], "t [s]", "I [A]")
    n1 = st.hist_lo[0] + np.arange(W)
    n2 = st.hist_lo[1] + np.arange(W)
    for b0 in (0, nb // 4):
        run.svg(f"{prefix}_histogram_bin{b0}.svg", rio.heatmap, n1, n2, st.distribution(b0),
                f"(n1, n2) at t = {st.snapshot_times[b0]:.4g} s")


def cmd_mc(cfg, run, const):
    st = simulate(const, cfg.params, cfg.drive, cfg.mc)
    cr = current(st, const, cfg.params, cfg.drive)
    probe = correlation_probe(st, cfg.drive.omega)
    _mc_files(run, st, cr)
    print(f"mc: {st.samples} samples, dt = {st.dt:.6g} s, {st.steps_per_period} steps/period")
    print(f"I_dc per junction = {', '.join(f'{v:.6g}' for v in cr.dc)} A (SE {', '.join(f'{v:.3g}' for v in cr.dc_se)})")
    print(f"correlation probe = {probe:.4g}")
    run.finish("ok", dt=st.dt, periods_burnin=st.periods_burnin, correlation_probe=probe,
               histogram_overflow=int(st.overflow.max()))
    return OK


def cmd_reference(cfg, run, const):
    res = evolve(const, cfg.params, cfg.drive, cfg.reference)
    cols = [("t", "s", res.times), ("n1", "1", res.mean_n[:, 0]), ("n2", "1", res.mean_n[:, 1]),
            ("D11", "1", res.D[:, 0]), ("D22", "1", res.D[:, 1]), ("D12", "1", res.D[:, 2]),
            ("x1", "m", res.mean_x[:, 0]), ("x2", "m", res.mean_x[:, 1]),
            ("v1", "m/s", res.mean_v[:, 0]), ("v2", "m/s", res.mean_v[:, 1])]
    cols += [(f"Gamma{j + 1}", "1/s", res.rates[j]) for j in range(3)] + [("I", "A", res.current)]
    run.csv("reference.csv", cols)
    dc = dc_current(res.rates, endpoint=True)
    run.csv("reference_dc.csv", _dc_columns(dc.per_junction))
    snaps = res.snapshots
    N1, N2 = snaps[0].P.shape
    b, i1, i2 = np.meshgrid(np.arange(len(snaps)), np.arange(N1), np.arange(N2), indexing="ij")
    P = np.stack([s.P for s in snaps])
    run.csv("reference_pdf.csv", [("phase_index", "1", b), ("t", "s", res.snapshot_times[b]),
                                  ("n1", "1", i1 + snaps[0].n_lo[0]), ("n2", "1", i2 + snaps[0].n_lo[1]),
                                  ("P", "1", P)])
    t = res.times - res.times[0]
    run.svg("reference_n.svg", rio.line_plot, t, [("<n1>", res.mean_n[:, 0]), ("<n2>", res.mean_n[:, 1])],
            "t [s]", "<n>")
    run.svg("reference_pdf0.svg", rio.heatmap, snaps[0].n1, snaps[0].n2, snaps[0].P, "(n1, n2) at phase 0")
    print(f"reference: converged={res.converged} after {res.periods} periods on lattice {res.bounds}; "
          f"max edge mass {res.max_edge_mass:.3g}; K excursion {res.k_excursion:.3g}")
    print(f"I_dc per junction = {', '.join(f'{v:.6g}' for v in dc.per_junction)} A")
    run.finish("ok" if res.converged else "not converged", converged=res.converged, periods=res.periods,
               lattice=res.bounds, max_edge_mass=res.max_edge_mass, k_excursion=res.k_excursion)
    return OK if res.converged else NOT_CONVERGED


def _model_options(cfg, model):
    if model in ("circuit", "variance", "full"):
        return cfg.closure
    return cfg.reference if model == "reference" else cfg.mc


def cmd_sweep(cfg, run, const):
    sp = cfg.sweep
    tab = sweep(sp.axis, sp.grid, sp.model, const, cfg.params, cfg.drive, _model_options(cfg, sp.model))
    unit = {"frequency": "rad/s", "amplitude": "V", "harmonic2": "1"}[sp.axis]
    rows = np.array(tab.rows, dtype=float).reshape(len(tab.rows), 8)
    run.csv("sweep.csv", [(sp.axis, unit, rows[:, 0]), ("I_dc", "A", rows[:, 1]), ("I_dc_1", "A", rows[:, 2]),
                          ("I_dc_2", "A", rows[:, 3]), ("I_dc_3", "A", rows[:, 4]),
                          ("n1_amplitude", "1", rows[:, 5]), ("x1_amplitude", "m", rows[:, 6]),
                          ("converged", "1", rows[:, 7].astype(bool))])
    if len(tab.rows):
        for metric, label in (("I_dc", "I_dc [A]"), ("n1_amplitude", "|<n1>| first harmonic"),
                              ("x1_amplitude", "|<x1>| first harmonic [m]")):
            run.svg(f"sweep_{metric}.svg", rio.line_plot, rows[:, 0], [(metric, tab.column(metric))],
                    f"{sp.axis} [{unit}]", label)
    for i, msg in tab.errors.items():
        print(f"point {i} ({rows[i, 0]:.6g}) failed: {msg}")
    all_conv = bool(np.all(rows[:, 7] == 1)) if len(rows) else True
    print(f"sweep: {len(tab.rows)} points, {len(tab.errors)} failed")
    run.finish("ok" if all_conv else "not converged", failures={str(k): v for k, v in tab.errors.items()})
    return OK if all_conv else NOT_CONVERGED


def cmd_compare(cfg, run, const):
    st = simulate(const, cfg.params, cfg.drive, cfg.mc)
    cr = current(st, const, cfg.params, cfg.drive)
    _mc_files(run, st, cr)
    closure = cfg.closure.__class__(**{**cfg.closure.__dict__, "tier": cfg.compare.tier})
    tr = integrate(const, cfg.params, cfg.drive, closure)
    run.csv(f"{closure.tier}.csv", _moment_columns(tr))
    fields = ["n1", "n2", "x1", "x2"] + (["D11", "D22", "D12"] if closure.tier != "circuit" else [])
    dev = max_se_deviation(st, tr.states, fields)
    nb = st.values.shape[0]
    mb = binned_moments(tr.states, nb)
    overlay = [("t", "s", st.times)]
    for f in fields:
        overlay += [(f + "_mc", _unit(f), st.field(f)), (f + "_mc_se", _unit(f), st.error(f)),
                    (f + "_" + closure.tier, _unit(f), mb[:, FIELD_NAMES.index(f)])]
    run.csv("overlay.csv", overlay)
    for f in ("n1", "x1", "D11") if closure.tier != "circuit" else ("n1", "x1"):
        run.svg(f"overlay_{f}.svg", rio.line_plot, st.times,
                [(f"MC {f}", st.field(f), st.error(f)), (f"{closure.tier} {f}", mb[:, FIELD_NAMES.index(f)])],
                "t [s]", f)
    probe = correlation_probe(st, cfg.drive.omega)
    metrics = {f"max_se_{k}": v for k, v in dev.items()}
    tv = None
    conv = tr.converged
    if cfg.compare.reference:
        ref_cfg = cfg.reference.__class__(**{**cfg.reference.__dict__, "n_snapshots": nb,
                                             "steps_per_period": nb * max(1, cfg.reference.steps_per_period // nb)})
        res = evolve(const, cfg.params, cfg.drive, ref_cfg)
        conv = conv and res.converged
        tv = distribution_tv(st, res)
        run.csv("tv.csv", [("phase_bin", "1", np.arange(nb)), ("t", "s", st.snapshot_times), ("tv", "1", tv)])
        metrics["max_tv"] = float(tv.max())
    names = list(metrics)
    run.csv("discrepancy.csv", [("metric", "-", np.array(names, dtype=str)),
                                ("value", "1", [metrics[k] for k in names])])
    for k in names:
        print(f"{k} = {metrics[k]:.4g}")
    print(f"correlation probe = {probe:.4g}")
    run.finish("ok" if conv else "not converged", metrics=metrics, correlation_probe=probe, converged=conv)
    return OK if conv else NOT_CONVERGED


def cmd_symmetry(cfg, run, const):
    sp = cfg.symmetry
    model = sp.model
    rep = symmetry_probe(model, const, cfg.params, cfg.drive, _model_options(cfg, model), sp.harmonic_fraction,
                         sp.gate_bias)
    odd = cfg.drive.half_wave_antisymmetric and not np.any(cfg.params.n_G)
    if model == "mc":
        ok = rep.residual_over_se < 3.0
        print(f"antisymmetry residual = {rep.residual:.4g} of max|I| "
              f"({rep.residual_over_se:.3g} standard errors; tolerance 3)")
    else:
        ok = rep.residual < sp.tolerance
        print(f"antisymmetry residual = {rep.residual:.4g} of max|I| (tolerance {sp.tolerance:g})")
    if odd:
        print("residual below tolerance: I(t) = -I(t + pi/omega) holds" if ok
              else "residual ABOVE tolerance for a symmetric configuration")
    else:
        print("configuration is not symmetric (gate bias or even harmonics); residual is informational")
    print(f"I_dc per junction = {', '.join(f'{v:.6g}' for v in rep.dc)} A")
    names, vals, ses = [], [], []
    for name, dc in rep.routes.items():
        if dc is None:
            print(f"route {name}: not applicable (no gates)")
            continue
        se = rep.route_se.get(name)
        print(f"route {name}: I_dc = {', '.join(f'{v:.6g}' for v in dc)} A")
        for j in range(3):
            names.append(f"{name}_{j + 1}")
            vals.append(dc[j])
            ses.append(np.nan if se is None else se[j])
    run.csv("symmetry.csv", [("residual", "1", [rep.residual]), ("within_tolerance", "1", [bool(ok)])])
    run.csv("symmetry_routes.csv", [("route", "-", np.array(names, dtype=str)), ("I_dc", "A", vals), ("I_dc_se", "A", ses)])
    run.finish("ok" if rep.converged else "not converged", residual=rep.residual, within_tolerance=bool(ok),
               symmetric_configuration=bool(odd), route_names=names, converged=rep.converged)
    return OK if rep.converged else NOT_CONVERGED


HANDLERS = {"derive": cmd_derive, "mc": cmd_mc, "moments": cmd_moments,
            "circuit": lambda cfg, run, const: cmd_moments(cfg, run, const, tier="circuit"),
            "reference": cmd_reference, "sweep": cmd_sweep, "compare": cmd_compare, "symmetry": cmd_symmetry}


def build_parser():
    p = argparse.ArgumentParser(prog="shuttlesim", description="Coupled electron-shuttle simulations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="INI run configuration")
        s.add_argument("--out", help="output directory (overrides [output] directory)")
        s.add_argument("--seed", type=int, help="MC master seed (overrides $SHUTTLESIM_SEED and the config)")
        s.add_argument("--samples", type=int, help="MC sample count")
        s.add_argument("--tier", choices=("circuit", "variance", "full"), help="moment tier")
        s.add_argument("--plot", action=argparse.BooleanOptionalAction, default=None, help="write SVG plots")
        s.add_argument("--dt", type=float, help="time step in seconds (MC step; sets the deterministic grids)")
        s.add_argument("--order", type=int, help="moment truncation order L")
    sub.add_parser("example", help="print a worked configuration file")
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv[:1] == ["example"]:
        sys.stdout.write(EXAMPLE)
        return OK
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # argparse usage errors -> validation exit code
        return OK if e.code == 0 else INVALID
    try:
        seed = args.seed
        if seed is None and os.environ.get("SHUTTLESIM_SEED", "").strip():
            try:
                seed = int(os.environ["SHUTTLESIM_SEED"])
            except ValueError:
                raise ConfigError(f"SHUTTLESIM_SEED={os.environ['SHUTTLESIM_SEED']!r} is not an integer") from None
        cfg = load(args.config).with_overrides(seed=seed, samples=args.samples, tier=args.tier, dt=args.dt,
                                               order=args.order, plots=args.plot, out=args.out)
        const = derive_constants(cfg.capacitance)
    except (ConfigError, ValueError, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return INVALID
    run = _Run(cfg, args.command, argv)
    try:
        run.start()
    except OSError as err:
        print(f"error: cannot write to {cfg.out_dir}: {err.strerror}", file=sys.stderr)
        return INVALID
    try:
        return HANDLERS[args.command](cfg, run, const)
    except (McAbort, ClosureBreakdown, LatticeTooSmall, FloatingPointError) as err:
        print(f"aborted: {err}", file=sys.stderr)
        run.finish("aborted", error=str(err))
        return ABORT
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        run.finish("invalid", error=str(err))
        return INVALID
    except OSError as err:
        print(f"error: cannot write results: {err}", file=sys.stderr)
        return INVALID


if __name__ == "__main__":
    sys.exit(main())
