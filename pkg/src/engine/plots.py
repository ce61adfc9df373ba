"""
SVG plots for traces and experiment tables.
Figures are rendered off-screen with a fixed hash salt and no date stamp, so reruns
produce identical files.
"""

import io
import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

from utils.csv_io import atomic_write_text  # noqa: E402

from .trace_engine import TraceCurve  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "loewner-lab"
matplotlib.rcParams["svg.fonttype"] = "path"


def _write_svg(fig: Figure, path: Path) -> Path:
    buffer = io.StringIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    logger.debug("writing plot %s", path)
    return atomic_write_text(path, buffer.getvalue())


def plot_trace(trace: TraceCurve, path: Path, title: Optional[str] = None) -> Path:
    """Polyline of the trace in the upper half-plane."""
    fig = Figure(figsize=(5, 5))
    ax = fig.add_subplot(1, 1, 1)
    ax.plot(trace.points.real, trace.points.imag, lw=0.8, color="tab:blue")
    ax.axhline(0.0, color="black", lw=0.5)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.set_title(title or f"trace kappa={trace.kappa:g} n={trace.n} seed={trace.seed}")
    return _write_svg(fig, path)


def plot_loglog(
    xs: Sequence[float],
    series: Sequence[Sequence[Optional[float]]],
    labels: Sequence[str],
    path: Path,
    xlabel: str,
    ylabel: str = "distance",
    title: str = "",
) -> Path:
    """Log-log plot of one or more positive series; missing or nonpositive entries are skipped."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(1, 1, 1)
    for values, label in zip(series, labels):
        pairs = [(x, v) for x, v in zip(xs, values) if v is not None and v > 0]
        if pairs:
            px, py = zip(*pairs)
            ax.plot(px, py, marker="o", lw=1.0, label=label)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend()
    return _write_svg(fig, path)
