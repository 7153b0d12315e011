# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

from bokeh.plotting import figure


def plot_wafer(geometry: dict, figsize: int = 600, ax=None) -> figure:
    """Plot an interactive wafer map.

    Parameters
    ----------
    geometry : dict
        Output of :py:func:`qflow.plots.plot_wafer.wafer_geometry`.
    figsize : int
        Figure height and width. Default is `600`.
    ax : None
        Only apply when using Matplotlib backend.

    Returns
    -------
    wafer_plot : :class:`bokeh.plotting.figure`
        The bokeh figure containing the plot.

    """
    r = geometry["radius"]
    wafer_plot = figure(
        title=geometry["title"],
        height=figsize,
        width=figsize,
        x_axis_label="x (mm)",
        y_axis_label="y (mm)",
        x_range=[-r * 1.05, r * 1.05],
        y_range=[-r * 1.05, r * 1.05],
        match_aspect=True,
    )

    wafer_plot.ellipse(
        0, 0, width=2 * r, height=2 * r, fill_color="#f2f2f2", line_color="black"
    )
    u = geometry["usable_radius"]
    wafer_plot.ellipse(
        0,
        0,
        width=2 * u,
        height=2 * u,
        fill_alpha=0,
        line_color="gray",
        line_dash="dashed",
    )

    lanes = geometry["lanes"]
    if len(lanes):
        wafer_plot.quad(
            left=lanes[:, 0],
            bottom=lanes[:, 1],
            right=lanes[:, 2],
            top=lanes[:, 3],
            fill_alpha=0,
            line_alpha=0,
            hatch_pattern="/",
            hatch_color="#9ac1d4",
        )

    dies = geometry["dies"]
    if len(dies):
        wafer_plot.quad(
            left=dies[:, 0],
            bottom=dies[:, 1],
            right=dies[:, 2],
            top=dies[:, 3],
            fill_color="#4c72b0",
            fill_alpha=0.6,
            line_color="black",
            legend_label="Die sites",
        )

    return wafer_plot
