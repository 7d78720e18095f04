"""CSV writers and figure output.

Data go to CSV only. Each figure is described by a small standalone
matplotlib script that reads those CSVs, so it can be edited and re-run
without this package; ``render`` executes the script once to produce the
PNG next to it. matplotlib is imported only inside the scripts.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import runpy
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if hasattr(v, "item"):  # numpy scalar
        return _cell(v.item())
    return str(v)


def write_rows(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def eps_tag(eps: float) -> str:
    return f"eps{eps:g}"


@dataclass
class Series:
    csv: str
    x: str
    y: str
    label: str
    style: str = "-"


@dataclass
class Figure:
    name: str
    xlabel: str
    ylabel: str
    series: list[Series]
    title: str = ""
    # (x, y, label) points drawn as black squares
    marks: list[tuple[float, float, str]] = field(default_factory=list)
    logy: bool = False


_SCRIPT = '''"""Standalone plot script; reads the CSVs in its own directory."""
import csv
import json
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
FIGURE = json.loads({figure_json!r})


def column(name, key):
    with open(os.path.join(HERE, name), newline="") as fh:
        return [float(r[key]) if r[key] != "" else float("nan") for r in csv.DictReader(fh)]


fig, ax = plt.subplots(figsize=(6.4, 4.0))
for s in FIGURE["series"]:
    ax.plot(column(s["csv"], s["x"]), column(s["csv"], s["y"]), s["style"], label=s["label"], lw=1.2)
for x, y, label in FIGURE["marks"]:
    ax.plot([x], [y], "ks", ms=6)
    ax.annotate(label, (x, y), textcoords="offset points", xytext=(4, 4), fontsize=8)
if FIGURE["logy"]:
    ax.set_yscale("log")
ax.set_xlabel(FIGURE["xlabel"])
ax.set_ylabel(FIGURE["ylabel"])
if FIGURE["title"]:
    ax.set_title(FIGURE["title"])
ax.grid(alpha=0.3)
ax.legend(fontsize=8)
fig.tight_layout()
fig.savefig(os.path.join(HERE, FIGURE["name"] + ".png"), dpi=120)
plt.close(fig)
'''


def write_plot_script(fig: Figure, out_dir: str | Path) -> Path:
    figure_json = {"name": fig.name, "xlabel": fig.xlabel, "ylabel": fig.ylabel, "title": fig.title,
                   "logy": fig.logy, "marks": [list(m) for m in fig.marks],
                   "series": [vars(s) for s in fig.series]}
    path = Path(out_dir) / f"plot_{fig.name}.py"
    path.write_text(_SCRIPT.format(figure_json=json.dumps(figure_json, sort_keys=True)))
    return path


def render(script: Path) -> Path | None:
    """Run a plot script in-process; returns the PNG path, or None if matplotlib is missing."""
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        log.warning("matplotlib not installed; skipped rendering %s", script.name)
        return None
    runpy.run_path(str(script), run_name="__main__")
    return script.with_suffix("").parent / (script.stem.removeprefix("plot_") + ".png")


def emit(fig: Figure, out_dir: str | Path, draw: bool = True) -> list[Path]:
    script = write_plot_script(fig, out_dir)
    png = render(script) if draw else None
    return [script] + ([png] if png else [])
