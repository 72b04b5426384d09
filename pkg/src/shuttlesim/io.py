"""Result files: CSV tables with ``name[unit]`` headers, the run manifest, SVG plots."""
from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_csv(path, columns):
    """Write ``columns`` = [(name, unit, values), ...] as UTF-8 CSV.

    Floats use 17 significant digits, so reading back gives the same doubles.
    Columns must share one length; an empty table still gets its header.
    """
    path = Path(path)
    cols = [(n, u, np.asarray(v).ravel()) for n, u, v in columns]
    lengths = {c[2].size for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"columns of {path.name} differ in length: {sorted(lengths)}")
    nrow = lengths.pop() if lengths else 0
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{n}[{u}]" for n, u, _ in cols])
        for i in range(nrow):
            w.writerow([_fmt(c[2][i].item() if hasattr(c[2][i], "item") else c[2][i]) for c in cols])
    return path


def read_csv(path):
    """Inverse of :func:`write_csv`: returns ({name: array}, {name: unit}).

    Numeric columns come back as float arrays, text columns as str arrays.
    """
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    names, units = [], {}
    for h in header:
        name, unit = h[:-1].split("[", 1)
        names.append(name)
        units[name] = unit
    out = {}
    for i, n in enumerate(names):
        col = [r[i] for r in rows[1:]]
        try:
            out[n] = np.array([float(x) for x in col], dtype=float)
        except ValueError:
            out[n] = np.array(col, dtype=str)
    return out, units


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def write_manifest(out_dir, manifest):
    """Write (or rewrite) ``manifest.json``; the CLI writes it before any result file."""
    out = Path(out_dir)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return path


def environment():
    import numba
    import scipy

    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


# -- plots -----------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.fonttype"] = "path"  # glyphs as paths: no external fonts
    return plt


def line_plot(path, x, series, xlabel, ylabel, title=None):
    """``series`` = [(label, y) or (label, y, yerr)]; error bands drawn when given."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for s in series:
        label, y = s[0], np.asarray(s[1])
        line, = ax.plot(x, y, label=label)
        if len(s) > 2 and s[2] is not None:
            e = np.asarray(s[2])
            ax.fill_between(x, y - 3 * e, y + 3 * e, color=line.get_color(), alpha=0.25, linewidth=0)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)


def heatmap(path, n1, n2, P, title=None):
    """Probability over the (n1, n2) lattice as a vector cell plot."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 4.4))
    e1 = np.append(n1, n1[-1] + 1) - 0.5
    e2 = np.append(n2, n2[-1] + 1) - 0.5
    m = ax.pcolormesh(e1, e2, np.asarray(P).T, shading="flat", cmap="viridis")
    fig.colorbar(m, ax=ax, label="probability")
    ax.set_xlabel("n1")
    ax.set_ylabel("n2")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return Path(path)
