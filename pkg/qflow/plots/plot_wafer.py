# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

from typing import Optional, Tuple, Union

import numpy as np
from bokeh.plotting import figure
from matplotlib.axes import Axes

from qflow.plots.utils import get_plotting_function
from qflow.utils import NM_PER_MM
from qflow.waferplan import WaferPlan


def wafer_geometry(plan: WaferPlan) -> dict:
    """Die and scribe-lane boxes of a plan, in mm, as `(n, 4)` arrays of
    `xmin, ymin, xmax, ymax`."""
    dies = np.array(
        [list(plan.die_rect(s)) for s in plan.sites], dtype=float
    ).reshape(-1, 4) / NM_PER_MM
    lane = plan.scribe.lane_width_mm
    # lane strip right of and above every die
    right = np.column_stack([dies[:, 2], dies[:, 1], dies[:, 2] + lane, dies[:, 3] + lane])
    top = np.column_stack([dies[:, 0], dies[:, 3], dies[:, 2], dies[:, 3] + lane])
    return {
        "dies": dies,
        "lanes": np.vstack([right, top]),
        "radius": plan.wafer.diameter_mm / 2,
        "usable_radius": plan.usable_radius_mm,
        "title": f"{plan.wafer.diameter_mm:g} mm wafer, {plan.die_count} dies",
    }


def plot_wafer(
    plan: WaferPlan,
    ax: Optional[Axes] = None,
    backend: str = "matplotlib",
    figsize: Optional[Union[Tuple[float, float], int]] = None,
) -> Union[figure, Axes]:
    """Wafer map: wafer edge, usable area, die sites and scribe lanes.

    Parameters
    ----------
    plan :
        The wafer plan, see :py:func:`qflow.waferplan.plan_wafer`.
    ax :
        Where to draw the plot. Default is *None* (create a new figure). Only
        applies when `backend="matplotlib"`.
    backend :
        Select plotting backend (`"matplotlib"` or `"bokeh"`). Defaults to
        `"matplotlib"`.
    figsize :
        Figure size. Default is `(8, 8)` for Matplotlib backend, and `600` when
        using Bokeh backend.

    Returns
    -------
    plot :
        The matplotlib axes, or the bokeh figure containing the plot.

    See also
    --------
    plot_violations

    Examples
    --------

    .. jupyter-execute::

       from qflow.waferplan import plan_wafer
       from qflow.plots import plot_wafer

       plot_wafer(plan_wafer())

    """
    if figsize is None:
        if backend == "matplotlib":
            figsize = (8, 8)
        elif backend == "bokeh":
            figsize = 600

    plot_wafer_args = {"geometry": wafer_geometry(plan), "ax": ax, "figsize": figsize}

    plotting_function = get_plotting_function("plot_wafer", "plot_wafer", backend)
    plot = plotting_function(**plot_wafer_args)

    return plot
