"""The three plot kinds and the render entry point.

Known column layouts get sensible defaults (which column is x, which are
y, what groups rows into curves); explicit PlotSpec fields always win.
Everything is drawn through a fresh Figure with a pinned style, so the
output bytes depend only on the input files and the PlotSpec fields.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import matplotlib
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .errors import PlotError
from .tables import Table, read_table

KINDS = ("loglog", "timeseries", "band")

FIGSIZE = (6.4, 4.2)
DPI = 120
MAX_LEGEND = 12

_STYLE = {
    "svg.hashsalt": "plotkit",
    "font.family": "DejaVu Sans",
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.autolayout": True,
}

_METADATA = {
    ".png": {"Software": "plotkit"},
    ".svg": {"Date": None},
}

# Defaults per published column layout: x, the y columns, and the columns
# whose distinct value tuples split rows into separate curves.
_SCHEMA_DEFAULTS = {
    ("n", "j1", "j2", "j3", "sample", "error"): {
        "x": "n", "y": ("error",), "group": ("j1", "j2", "j3"),
    },
    ("dt", "sample", "defect"): {"x": "dt", "y": ("defect",), "group": ()},
    ("t", "sample", "ratio"): {"x": "t", "y": ("ratio",), "group": ("sample",)},
    ("n", "sample", "sup_distance"): {
        "x": "n", "y": ("sup_distance",), "group": (),
    },
    ("t", "L2", "Hr", "Hgamma", "Besov", "energy_defect", "cutoff_factor"): {
        "x": "t", "y": ("L2", "Hr", "Hgamma", "Besov"), "group": (),
    },
}


@dataclass
class PlotSpec:
    """One figure request: input tables, kind, axes, output path.

    x, y, and group are optional; None means "use the layout default for
    each input table" (falling back to first column as x, last as y).
    """

    kind: str
    inputs: tuple
    out: str
    x: Optional[str] = None
    y: Optional[tuple] = None
    group: Optional[tuple] = None
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None
    title: Optional[str] = None


def _resolve(table: Table, spec: PlotSpec):
    """The (x, ys, group) columns to draw for one table."""
    schema = _SCHEMA_DEFAULTS.get(table.columns, {})
    x = spec.x if spec.x is not None else schema.get("x", table.columns[0])
    ys = spec.y if spec.y is not None else schema.get("y", (table.columns[-1],))
    group = spec.group if spec.group is not None else schema.get("group", ())
    table.index(x)
    for name in tuple(ys) + tuple(group):
        table.index(name)
    return x, tuple(ys), tuple(group)


def _fmt_value(v: float) -> str:
    if math.isfinite(v) and v == int(v):
        return str(int(v))
    return repr(v)


def _split(table: Table, group) -> list:
    """(label, rows) per distinct group-value tuple, sorted by value."""
    if not group:
        return [("", table.rows)]
    idx = [table.index(g) for g in group]
    buckets = {}
    for row in table.rows:
        key = tuple(row[i] for i in idx)
        buckets.setdefault(key, []).append(row)
    out = []
    for key in sorted(buckets):
        label = ",".join(f"{g}={_fmt_value(v)}" for g, v in zip(group, key))
        out.append((label, buckets[key]))
    return out


def _series(table: Table, rows, x: str, y: str):
    """Sorted (x, y) pairs for one curve."""
    xi, yi = table.index(x), table.index(y)
    return sorted((row[xi], row[yi]) for row in rows)


def _median(values) -> float:
    s = sorted(values)
    m = len(s) // 2
    return s[m] if len(s) % 2 else 0.5 * (s[m - 1] + s[m])


def _quartile(values, q: float) -> float:
    s = sorted(values)
    if len(s) == 1:
        return s[0]
    pos = q * (len(s) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def _aggregate(pairs):
    """Median of values sharing an x, as sorted (x, [values]) buckets."""
    buckets = {}
    for xv, yv in pairs:
        buckets.setdefault(xv, []).append(yv)
    return [(xv, buckets[xv]) for xv in sorted(buckets)]


def _curve_label(stem: str, label: str, y: str, many_y: bool) -> str:
    parts = [p for p in (stem, y if many_y else "", label) if p]
    return " ".join(parts)


def _draw_loglog(ax, tables, spec: PlotSpec) -> None:
    """Median magnitude of y against x, both axes logarithmic."""
    many_tables = len(tables) > 1
    for table in tables:
        x, ys, group = _resolve(table, spec)
        stem = Path(table.path).stem if many_tables else ""
        for y in ys:
            for label, rows in _split(table, group):
                pts = []
                for xv, bucket in _aggregate(_series(table, rows, x, y)):
                    if xv <= 0:
                        raise PlotError(
                            f"loglog needs positive {x!r} values, got {xv}"
                        )
                    mag = _median([abs(v) for v in bucket])
                    if mag > 0:
                        pts.append((xv, mag))
                if not pts:
                    raise PlotError(
                        f"column {y!r} has no nonzero magnitudes to draw "
                        f"on a log axis ({table.path})"
                    )
                ax.plot(
                    [p[0] for p in pts], [p[1] for p in pts],
                    marker="o", label=_curve_label(stem, label, y, len(ys) > 1),
                )
    ax.set_xscale("log")
    ax.set_yscale("log")


def _draw_timeseries(ax, tables, spec: PlotSpec) -> None:
    """One line per y column and group value, linear axes."""
    many_tables = len(tables) > 1
    for table in tables:
        x, ys, group = _resolve(table, spec)
        stem = Path(table.path).stem if many_tables else ""
        for y in ys:
            for label, rows in _split(table, group):
                pts = _series(table, rows, x, y)
                ax.plot(
                    [p[0] for p in pts], [p[1] for p in pts],
                    label=_curve_label(stem, label, y, len(ys) > 1),
                )


def _draw_band(ax, tables, spec: PlotSpec) -> None:
    """Median line with interquartile band; raw samples as faint dots."""
    many_tables = len(tables) > 1
    for table in tables:
        x, ys, group = _resolve(table, spec)
        if group:
            raise PlotError("band plots aggregate over samples; group must be empty")
        stem = Path(table.path).stem if many_tables else ""
        for y in ys:
            pairs = _series(table, table.rows, x, y)
            agg = _aggregate(pairs)
            xs = [a[0] for a in agg]
            med = [_median(a[1]) for a in agg]
            lo = [_quartile(a[1], 0.25) for a in agg]
            hi = [_quartile(a[1], 0.75) for a in agg]
            line, = ax.plot(
                xs, med, marker="o",
                label=_curve_label(stem, "median", y, len(ys) > 1),
            )
            ax.fill_between(xs, lo, hi, alpha=0.25, color=line.get_color())
            ax.plot(
                [p[0] for p in pairs], [p[1] for p in pairs],
                linestyle="none", marker=".", markersize=3, alpha=0.5,
                color=line.get_color(),
            )


_DRAWERS = {
    "loglog": _draw_loglog,
    "timeseries": _draw_timeseries,
    "band": _draw_band,
}


def render(spec: PlotSpec) -> str:
    """Draw the figure for spec and write it to spec.out; returns the path.

    Output format follows the suffix and must be .png or .svg.  Reading
    never mutates the inputs; writing creates the parent directory when
    missing.  Identical inputs and spec produce identical bytes.
    """
    if spec.kind not in KINDS:
        raise PlotError(f"unknown plot kind {spec.kind!r}; kinds are {KINDS}")
    if not spec.inputs:
        raise PlotError("no input CSV given")
    out = Path(spec.out)
    suffix = out.suffix.lower()
    if suffix not in _METADATA:
        raise PlotError(
            f"output must end in .png or .svg, got {out.name!r}"
        )
    tables = [read_table(p) for p in spec.inputs]
    first_x, first_ys, _ = _resolve(tables[0], spec)
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=FIGSIZE, dpi=DPI)
        FigureCanvasAgg(fig)
        ax = fig.add_subplot(111)
        _DRAWERS[spec.kind](ax, tables, spec)
        ax.set_xlabel(spec.xlabel if spec.xlabel is not None else first_x)
        ax.set_ylabel(
            spec.ylabel if spec.ylabel is not None else ", ".join(first_ys)
        )
        if spec.title:
            ax.set_title(spec.title)
        labels = [a.get_label() for a in ax.get_lines() if a.get_label()]
        labels = [t for t in labels if not t.startswith("_")]
        if labels and len(labels) <= MAX_LEGEND:
            ax.legend()
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, dpi=DPI, metadata=_METADATA[suffix])
    return str(out)
