"""Objective-versus-time figures for benchmark cells."""
import logging
from typing import Mapping, Optional

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .exceptions import PolyfwError
from .experiment import AggregateCurve
from .solvers import LABELS

__all__ = ["render_plot"]

logger = logging.getLogger(__name__)

# fixed hash salt and text-as-text keep the SVG byte-identical across runs
SVG_STYLE = {"svg.hashsalt": "polyfw", "svg.fonttype": "none"}


def _finite_mask(curve: AggregateCurve) -> np.ndarray:
    mask = np.isfinite(curve.time)
    for values in (curve.median, curve.p25, curve.p75):
        # log axis
        mask &= np.isfinite(values) & (values > 0)
    return mask


def render_plot(
    curves: Mapping[str, AggregateCurve], out_path, title: Optional[str] = None
) -> int:
    """
    Draw the median objective of every solver against wall time, with the
    interquartile range as a shaded band, and save it as SVG.

    :param curves: aggregate curves keyed by solver name
    :param out_path: path or writable text/binary buffer for the SVG
    :param title: figure title, typically ``"K=.., α=.."``
    :return: number of non-finite or non-positive points left out
    """
    if not curves:
        raise PolyfwError("nothing to plot: no aggregate curves")
    dropped = 0
    with matplotlib.rc_context(SVG_STYLE):
        fig = Figure(figsize=(6.4, 4.8))
        ax = fig.subplots()
        for solver, curve in curves.items():
            keep = _finite_mask(curve)
            dropped += int(np.count_nonzero(~keep))
            (line,) = ax.plot(
                curve.time[keep],
                curve.median[keep],
                label=LABELS.get(solver, solver),
                linewidth=1.5,
            )
            ax.fill_between(
                curve.time[keep],
                curve.p25[keep],
                curve.p75[keep],
                color=line.get_color(),
                alpha=0.25,
                linewidth=0,
            )
        ax.set_yscale("log")
        ax.set_xlabel("wall time [s]")
        ax.set_ylabel("objective")
        if title:
            ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        try:
            fig.savefig(out_path, format="svg", metadata={"Date": None})
        except OSError as e:
            raise PolyfwError(f"{out_path}: cannot write figure ({e.strerror})") from e
    if dropped:
        logger.warning("dropped %d non-finite point(s) from the figure", dropped)
    return dropped
