# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import logging
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from bokeh.plotting import figure
from matplotlib.axes import Axes

from qflow.drc import ViolationReport
from qflow.gds import FlatLayout
from qflow.pdk import PdkRuleSet
from qflow.plots.utils import get_plotting_function
from qflow.utils import NM_PER_UM

logger = logging.getLogger(__name__)


def violation_geometry(
    report: ViolationReport,
    flat: Optional[FlatLayout] = None,
    pdk: Optional[PdkRuleSet] = None,
    max_polygons: int = 20_000,
) -> dict:
    """Layer outlines and violation boxes in um.

    Returns
    -------
    geometry : dict
        `"layers"` maps a label to a list of `(n, 2)` vertex arrays,
        `"violations"` is an `(n, 4)` array of `xmin, ymin, xmax, ymax` and
        `"rules"` the matching rule ids.

    """
    layers: Dict[str, List[np.ndarray]] = {}
    if flat is not None:
        polygons = flat.polygons
        if len(polygons) > max_polygons:
            logger.warning(
                "Drawing %d of %d polygons in the violation map.", max_polygons, len(polygons)
            )
            polygons = polygons[:max_polygons]
        for p in polygons:
            purpose = pdk.purpose_of(p.layer, p.datatype) if pdk is not None else None
            label = f"{p.layer}/{p.datatype}" + (f" {purpose.value}" if purpose else "")
            layers.setdefault(label, []).append(
                np.asarray(p.polygon.vertices, dtype=float) / NM_PER_UM
            )
    violations = np.array(
        [list(v.location) for v in report.violations], dtype=float
    ).reshape(-1, 4) / NM_PER_UM
    return {
        "layers": dict(sorted(layers.items())),
        "violations": violations,
        "rules": [v.rule_id for v in report.violations],
        "title": f"{len(report.violations)} violation(s)",
    }


def plot_violations(
    report: ViolationReport,
    flat: Optional[FlatLayout] = None,
    pdk: Optional[PdkRuleSet] = None,
    ax: Optional[Axes] = None,
    backend: str = "matplotlib",
    figsize: Optional[Union[Tuple[float, float], int]] = None,
) -> Union[figure, Axes]:
    """Violation map: one box per violation over the layer outlines.

    Parameters
    ----------
    report :
        The DRC report, see :py:func:`qflow.drc.run_drc`.
    flat :
        The flattened layout that was checked. If `None`, only the violation boxes
        are drawn.
    pdk :
        The rule deck, used to label layers with their purpose.
    ax :
        Where to draw the plot. Default is *None* (create a new figure). Only
        applies when `backend="matplotlib"`.
    backend :
        Select plotting backend (`"matplotlib"` or `"bokeh"`). Defaults to
        `"matplotlib"`.
    figsize :
        Figure size. Default is `(10, 10)` for Matplotlib backend, and `700` when
        using Bokeh backend.

    Returns
    -------
    plot :
        The matplotlib axes, or the bokeh figure containing the plot.

    See also
    --------
    plot_wafer

    """
    if figsize is None:
        if backend == "matplotlib":
            figsize = (10, 10)
        elif backend == "bokeh":
            figsize = 700

    plot_violations_args = {
        "geometry": violation_geometry(report, flat, pdk),
        "ax": ax,
        "figsize": figsize,
    }

    plotting_function = get_plotting_function(
        "plot_violations", "plot_violations", backend
    )
    plot = plotting_function(**plot_violations_args)

    return plot
