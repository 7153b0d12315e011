# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

from typing import Dict, List, Optional, Union

from bokeh.models import Column, ColumnDataSource, DataTable, TableColumn
from tabulate import tabulate  # type: ignore

from qflow.chipgen import Census
from qflow.mdp import JobDeck
from qflow.process import StepPlan
from qflow.waferplan import WaferPlan, wafer_statistics


def _render(
    data: Dict[str, List],
    headers: List[str],
    backend: str,
    width: Optional[int],
    height: Optional[int],
    floatfmt: str = ".4f",
) -> Union[Column, str]:
    """Render a column dictionary with tabulate or as a Bokeh DataTable."""
    if backend == "bokeh":
        source = ColumnDataSource(data)
        columns = [TableColumn(field=k, title=h) for k, h in zip(data, headers)]
        table = Column(
            DataTable(
                source=source,
                columns=columns,
                width=width,
                height=height,
                index_position=None,
            )
        )
    elif backend == "tabulate":
        table = tabulate(data, headers=headers, tablefmt="rst", floatfmt=floatfmt)
    else:
        raise ValueError("Invalid backend, should be 'tabulate' or 'bokeh'.")
    return table


def step_plan_table(
    step_plan: StepPlan,
    backend: str = "tabulate",
    width: Optional[int] = 800,
    height: Optional[int] = 300,
) -> Union[Column, str]:
    """Format a step plan for nice rendering.

    Parameters
    ----------
    step_plan :
        The step plan obtained from :py:func:`qflow.process.map_layers`.
    backend :
        Which backend to use. Can be `"bokeh"` or `"tabulate"`. Defaults to `"tabulate"`.
    width, height :
        The table width and height (only for `"bokeh"` backend).

    Returns
    -------
    table :
        The formatted step plan, either as a string or as a Bokeh Column.

    """
    df = step_plan.to_frame()
    data = {
        "step": df["step_order"].tolist(),
        "name": df["name"].tolist(),
        "material": df["material"].tolist(),
        "lithography": df["lithography"].tolist(),
        "layers": df["gds_bindings"].tolist(),
        "polygons": df["polygon_count"].tolist(),
        "area": df["total_area_um2"].tolist(),
    }
    return _render(
        data,
        ["Step", "Name", "Material", "Lithography", "GDS layers", "Polygons", "Area (um2)"],
        backend,
        width,
        height,
        floatfmt=".1f",
    )


def wafer_table(
    plan: WaferPlan,
    backend: str = "tabulate",
    width: Optional[int] = 500,
    height: Optional[int] = 250,
) -> Union[Column, str]:
    """Format the wafer plan summary for nice rendering.

    Parameters
    ----------
    plan :
        The wafer plan obtained from :py:func:`qflow.waferplan.plan_wafer`.
    backend :
        Which backend to use. Can be `"bokeh"` or `"tabulate"`. Defaults to `"tabulate"`.
    width, height :
        The table width and height (only for `"bokeh"` backend).

    """
    stats = wafer_statistics(plan)
    data = {
        "variable": [
            "Wafer diameter",
            "Edge exclusion",
            "Die size",
            "Scribe lane",
            "Grid offset",
            "Die count",
            "Utilisation",
            "Die area fraction",
        ],
        "value": [
            f"{plan.wafer.diameter_mm:g} mm",
            f"{plan.wafer.edge_exclusion_mm:g} mm",
            f"{plan.die.width_mm:g} x {plan.die.height_mm:g} mm",
            f"{plan.scribe.lane_width_mm:g} mm",
            f"({plan.grid_offset_mm[0]:g}, {plan.grid_offset_mm[1]:g}) mm",
            str(stats.die_count),
            f"{100 * stats.utilisation:.1f} %",
            f"{100 * stats.die_area_fraction:.1f} %",
        ],
    }
    return _render(data, ["Variable", "Value"], backend, width, height)


def census_table(
    census: Census,
    backend: str = "tabulate",
    width: Optional[int] = 400,
    height: Optional[int] = 250,
) -> Union[Column, str]:
    """Format a chip census for nice rendering."""
    counts = census.to_dict()
    data = {
        "component": ["Xmon", "Resonator", "Coupler", "Feedline", "Airbridge", "Total"],
        "count": [
            counts[k]
            for k in ("xmon", "resonator", "coupler", "feedline", "airbridge", "total")
        ],
    }
    return _render(data, ["Component", "Count"], backend, width, height)


def job_deck_table(
    job_deck: JobDeck,
    backend: str = "tabulate",
    width: Optional[int] = 800,
    height: Optional[int] = 300,
) -> Union[Column, str]:
    """Format a job deck for nice rendering."""
    entries = job_deck.entries
    data = {
        "reticle": [e.reticle_id for e in entries],
        "step": [e.step_name for e in entries],
        "lithography": [e.lithography for e in entries],
        "dose": [f"{e.exposure_dose:g} {e.dose_unit}" for e in entries],
        "focus": [e.focus_offset_nm for e in entries],
        "alignment": [e.alignment_strategy for e in entries],
        "sites": [e.site_count for e in entries],
    }
    return _render(
        data,
        ["Reticle", "Step", "Lithography", "Dose", "Focus (nm)", "Alignment", "Sites"],
        backend,
        width,
        height,
    )
