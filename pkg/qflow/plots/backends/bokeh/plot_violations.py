# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

from bokeh.models import ColumnDataSource, HoverTool
from bokeh.palettes import Category10_10
from bokeh.plotting import figure


def plot_violations(geometry: dict, figsize: int = 700, ax=None) -> figure:
    """Plot an interactive violation map.

    Parameters
    ----------
    geometry : dict
        Output of :py:func:`qflow.plots.plot_violations.violation_geometry`.
    figsize : int
        Figure height and width. Default is `700`.
    ax : None
        Only apply when using Matplotlib backend.

    Returns
    -------
    violation_plot : :class:`bokeh.plotting.figure`
        The bokeh figure containing the plot.

    """
    violation_plot = figure(
        title=geometry["title"],
        height=figsize,
        width=figsize,
        x_axis_label="x (um)",
        y_axis_label="y (um)",
        match_aspect=True,
        output_backend="webgl",
    )

    for k, (label, polygons) in enumerate(geometry["layers"].items()):
        violation_plot.patches(
            xs=[p[:, 0] for p in polygons],
            ys=[p[:, 1] for p in polygons],
            fill_alpha=0,
            line_color=Category10_10[k % 10],
            line_width=0.5,
            legend_label=label,
        )

    boxes = geometry["violations"]
    if len(boxes):
        source = ColumnDataSource(
            data={
                "left": boxes[:, 0],
                "bottom": boxes[:, 1],
                "right": boxes[:, 2],
                "top": boxes[:, 3],
                "rule": geometry["rules"],
            }
        )
        renderer = violation_plot.quad(
            left="left",
            bottom="bottom",
            right="right",
            top="top",
            source=source,
            fill_color="#c56c5e",
            fill_alpha=0.6,
            line_color="#9d2b39",
        )
        violation_plot.add_tools(HoverTool(renderers=[renderer], tooltips=[("rule", "@rule")]))

    return violation_plot
