"""
SVG scatter and line plots (matplotlib, Agg backend).
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import matplotlib

matplotlib.use("agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _finish(fig, ax, path: PathLike, title: str, xlabel: str, ylabel: str) -> Path:
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(path, format="svg")
    except OSError as e:
        raise OSError(f"cannot write plot {path}: {e}") from e
    finally:
        plt.close(fig)
    return path


def emit_svg_scatter(points: np.ndarray, path: PathLike, title: str = "",
                     xlabel: str = "Re", ylabel: str = "Im",
                     log_x: bool = False, log_y: bool = False) -> int:
    """
    Scatter plot of complex values or (x, y) rows.

    Returns:
        int: number of points drawn (0 still yields a plot with axes)
    """
    data = np.asarray(points)
    if np.iscomplexobj(data):
        xs, ys = data.real.ravel(), data.imag.ravel()
    elif data.size == 0:
        xs = ys = np.zeros(0)
    else:
        data = data.reshape(-1, 2)
        xs, ys = data[:, 0], data[:, 1]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(xs, ys, s=6, marker="o")
    if log_x:
        ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    out = _finish(fig, ax, path, title, xlabel, ylabel)
    logger.info(f"Wrote scatter {out} ({xs.size} points)")
    return int(xs.size)


def emit_svg_lines(series: Dict[str, Sequence[Sequence[float]]], path: PathLike,
                   title: str = "", xlabel: str = "", ylabel: str = "",
                   log_x: bool = False, log_y: bool = False,
                   markers: Optional[str] = "o") -> int:
    """One line per named series of (x, y) pairs; returns the total point count."""
    fig, ax = plt.subplots(figsize=(6, 4))
    total = 0
    for label, pairs in series.items():
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        ax.plot(arr[:, 0], arr[:, 1], marker=markers, label=label)
        total += arr.shape[0]
    if log_x:
        ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    if series:
        ax.legend()
    out = _finish(fig, ax, path, title, xlabel, ylabel)
    logger.info(f"Wrote line plot {out} ({total} points)")
    return total
