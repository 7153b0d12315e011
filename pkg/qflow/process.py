# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

"""Process stack mapping, registration budgets and the Josephson junction chain."""

import logging
import math
from os import PathLike
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from qflow.drc import group_by_purpose, shifted_overlap_areas
from qflow.gds import FlatLayout
from qflow.geometry import Polygon, Rect, build_index, intersection_area
from qflow.pdk import AlignmentSpec, PdkRuleSet, ProcessLayer, ProcessStack, Purpose, load_pdk

logger = logging.getLogger(__name__)

FLUX_QUANTUM = 2.067833848e-15  # Wb
PLANCK = 6.62607015e-34  # J.s

# Junction critical-current deviation still considered acceptable.
IC_TOLERANCE = 0.05

STEP_PLAN_COLUMNS = [
    "step_order",
    "name",
    "material",
    "thickness_nm",
    "lithography",
    "gds_layer",
    "gds_datatype",
    "polygon_count",
    "total_area_um2",
    "gds_bindings",
]


class OrphanLayerError(ValueError):
    """Populated layers that no process step binds."""

    def __init__(self, orphans: List[Tuple[int, int]]):
        self.orphans = sorted(orphans)
        names = ", ".join(f"({layer}, {datatype})" for layer, datatype in self.orphans)
        super().__init__(f"Layers not bound to any process step: {names}.")


class JJParams(BaseModel):
    """Junction fabrication and circuit parameters.

    Parameters
    ----------
    critical_current_density :
        Critical current density J_c in uA/um².
    charging_energy_over_h :
        Charging energy E_C/h in MHz.

    """

    model_config = ConfigDict(frozen=True)

    critical_current_density: float = Field(default=0.5, gt=0)
    charging_energy_over_h: float = Field(default=250.0, gt=0)
    flux_quantum: float = FLUX_QUANTUM
    planck: float = PLANCK


class JJEstimate(NamedTuple):
    critical_current_na: float
    ej_over_h_ghz: float
    f01_ghz: float


class Sensitivity(NamedTuple):
    deviation: float
    ok: bool


class FrequencySpread(NamedTuple):
    ic_relative: float
    f01_relative: float
    f01_sigma_mhz: float


class RegistrationBudget(NamedTuple):
    layer_pair: Tuple[str, str]
    o_design_nm: int
    sigma_align_nm: int
    o_min_nm: int

    @property
    def feasible(self) -> bool:
        return self.o_min_nm > 0


class OverlapFinding(NamedTuple):
    """Interlayer overlap narrower than the registration budget allows."""

    layer_pair: Tuple[str, str]
    location: Rect
    extent_nm: Tuple[int, int]
    o_min_nm: int
    subjects: Tuple[str, str]


class StepEntry(NamedTuple):
    layer: ProcessLayer
    polygon_count: int
    area_nm2: int

    @property
    def total_area_um2(self) -> float:
        return self.area_nm2 / 1e6


class StepPlan:
    """Per-step polygon count and area, in process order."""

    def __init__(self, entries: List[StepEntry]):
        self.entries = sorted(entries, key=lambda e: e.layer.step_order)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def populated(self) -> List[StepEntry]:
        return [e for e in self.entries if e.polygon_count]

    def to_frame(self) -> pd.DataFrame:
        """One row per step, columns as in `STEP_PLAN_COLUMNS`.

        `gds_layer` and `gds_datatype` give the primary pair of a step and
        `gds_bindings` every pair it patterns, as `layer/datatype` joined by `;`.
        """
        rows = []
        for e in self.entries:
            p = e.layer
            layer, datatype = p.gds_binding if p.gds_binding else ("", "")
            rows.append(
                {
                    "step_order": p.step_order,
                    "name": p.name,
                    "material": p.material,
                    "thickness_nm": f"{p.thickness_nm[0]:g}-{p.thickness_nm[1]:g}",
                    "lithography": p.lithography,
                    "gds_layer": layer,
                    "gds_datatype": datatype,
                    "polygon_count": e.polygon_count,
                    "total_area_um2": round(e.total_area_um2, 6),
                    "gds_bindings": ";".join(f"{a}/{b}" for a, b in p.gds_bindings),
                }
            )
        return pd.DataFrame(rows, columns=STEP_PLAN_COLUMNS)

    def to_csv(self, path: Optional[Union[str, PathLike]] = None) -> str:
        """CSV text of the plan, also written to `path` when given."""
        text = self.to_frame().to_csv(index=False, lineterminator="\n")
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def default_stack() -> ProcessStack:
    """The seven-step Nb/Al-on-sapphire stack shipped in the `qeda` deck."""
    return load_pdk("qeda")[1]


def map_layers(flat: FlatLayout, stack: ProcessStack) -> StepPlan:
    """Map the populated layers of a flat layout to process steps.

    Parameters
    ----------
    flat :
        The flat layout.
    stack :
        The process stack.

    Returns
    -------
    plan :
        One entry per process step, in step order, including steps without
        geometry (count 0).

    Raises
    ------
    OrphanLayerError
        If a populated (layer, datatype) is not bound to any step.

    """
    bindings = stack.bindings()
    counts = flat.counts()
    areas = flat.areas()
    orphans = [pair for pair in counts if pair not in bindings]
    if orphans:
        raise OrphanLayerError(orphans)
    entries = []
    for p in stack.layers:
        n = sum(counts.get(tuple(b), 0) for b in p.gds_bindings)
        area = sum(areas.get(tuple(b), 0) for b in p.gds_bindings)
        entries.append(StepEntry(p, n, area))
    plan = StepPlan(entries)
    logger.info(
        "Mapped %d polygons onto %d steps (%d populated).",
        len(flat), len(plan), len(plan.populated()),
    )
    return plan


def registration_budget(o_design_nm: int, alignment: AlignmentSpec) -> RegistrationBudget:
    """Worst-case overlap left after 3-sigma misalignment.

    Parameters
    ----------
    o_design_nm :
        Designed overlap, in nm.
    alignment :
        Alignment spec of the layer pair.

    Returns
    -------
    budget :
        `o_min_nm = o_design_nm - sigma_align_nm`. The budget is infeasible when
        `o_min_nm <= 0`.

    Examples
    --------
    >>> from qflow.pdk import AlignmentSpec
    >>> spec = AlignmentSpec(layer_pair=("jj_top", "jj_bottom"), lithography="ebeam")
    >>> registration_budget(200, spec).o_min_nm
    150

    """
    if o_design_nm <= 0:
        raise ValueError("The designed overlap must be positive.")
    pair = (alignment.layer_pair[0].value, alignment.layer_pair[1].value)
    budget = RegistrationBudget(
        pair, int(o_design_nm), int(alignment.sigma_align_nm), int(o_design_nm - alignment.sigma_align_nm)
    )
    if not budget.feasible:
        logger.warning(
            "Registration budget %s/%s infeasible: %d nm design overlap under %d nm alignment.",
            pair[0], pair[1], o_design_nm, alignment.sigma_align_nm,
        )
    return budget


def overlap_extent(a: Polygon, b: Polygon) -> Tuple[int, int]:
    """Width and height of the bounding box of `a` intersected with `b`."""
    if intersection_area(a, b) <= 0:
        return (0, 0)
    xmin, ymin, xmax, ymax = a.to_shapely().intersection(b.to_shapely()).bounds
    return (int(round(xmax - xmin)), int(round(ymax - ymin)))


def check_interlayer_overlap(flat: FlatLayout, pdk: PdkRuleSet) -> List[OverlapFinding]:
    """Registration budgets compiled into an interlayer overlap rule.

    Every alignment spec carrying a designed overlap yields a budget; every
    overlapping polygon pair across its two purposes must then overlap by at least
    `o_min_nm` along both axes.

    Returns
    -------
    findings :
        The failing pairs. Empty when every overlap honours its budget.

    """
    groups = group_by_purpose(flat, pdk)
    findings: List[OverlapFinding] = []
    for spec in pdk.alignment:
        if spec.o_design_nm is None:
            continue
        budget = registration_budget(spec.o_design_nm, spec)
        upper, lower = groups[spec.layer_pair[0]], groups[spec.layer_pair[1]]
        spatial_index = build_index((j, p.polygon.bounds) for j, p in enumerate(lower))
        checked = 0
        for a in upper:
            for j in spatial_index.query(a.polygon.bounds):
                b = lower[j]
                extent = overlap_extent(a.polygon, b.polygon)
                if extent == (0, 0):
                    continue
                checked += 1
                if min(extent) >= budget.o_min_nm:
                    continue
                box = a.polygon.bounds
                other = b.polygon.bounds
                findings.append(
                    OverlapFinding(
                        budget.layer_pair,
                        Rect(
                            max(box.xmin, other.xmin),
                            max(box.ymin, other.ymin),
                            min(box.xmax, other.xmax),
                            min(box.ymax, other.ymax),
                        ),
                        extent,
                        budget.o_min_nm,
                        (a.trace, b.trace),
                    )
                )
        logger.info(
            "Interlayer overlap %s/%s: %d pairs checked against %d nm.",
            budget.layer_pair[0], budget.layer_pair[1], checked, budget.o_min_nm,
        )
    return sorted(findings, key=lambda f: (f.layer_pair, f.location, f.subjects))


def jj_chain(area_um2: float, params: Optional[JJParams] = None) -> JJEstimate:
    """Critical current, Josephson energy and transmon frequency of a junction.

    Parameters
    ----------
    area_um2 :
        Junction area in um².
    params :
        Junction parameters. Defaults to `JJParams()` (J_c = 0.5 uA/um²,
        E_C/h = 250 MHz).

    Returns
    -------
    estimate :
        `I_c = J_c A` (nA), `E_J/h = I_c Phi0 / (2 pi h)` (GHz) and
        `f01 = sqrt(8 E_J E_C) / h` (GHz).

    Examples
    --------
    >>> round(jj_chain(0.04).f01_ghz, 2)
    4.46

    """
    if area_um2 <= 0:
        raise ValueError("The junction area must be positive.")
    params = params or JJParams()
    ic = params.critical_current_density * area_um2 * 1e-6  # A
    ej_hz = ic * params.flux_quantum / (2 * math.pi * params.planck)
    ec_hz = params.charging_energy_over_h * 1e6
    f01_hz = math.sqrt(8 * ej_hz * ec_hz)
    return JJEstimate(ic * 1e9, ej_hz / 1e9, f01_hz / 1e9)


def jj_misalignment_sensitivity(bottom: Polygon, top: Polygon, tol_nm: int) -> Sensitivity:
    """Largest relative change of the junction area under ±`tol_nm` misalignment.

    Since I_c is proportional to the area, this is also the relative critical
    current deviation. The junction is acceptable when it stays within 5 %.

    Raises
    ------
    ValueError
        If the electrodes do not overlap.

    """
    areas = shifted_overlap_areas(bottom, top, int(tol_nm))
    nominal = areas[0]
    if nominal <= 0:
        raise ValueError("The junction electrodes do not overlap.")
    deviation = max(abs(a - nominal) for a in areas) / nominal
    return Sensitivity(deviation, deviation <= IC_TOLERANCE)


def frequency_spread(f01_ghz: float, resistance_cv: float = 0.03) -> FrequencySpread:
    """Qubit frequency spread caused by an across-wafer junction resistance spread.

    The critical current scales as the inverse of the normal-state resistance, so
    dI_c/I_c = dR/R, and `f01` scales as the square root of E_J, so
    df/f = dI_c / (2 I_c).

    """
    if f01_ghz <= 0 or resistance_cv < 0:
        raise ValueError("Frequency must be positive and the spread non-negative.")
    f_rel = resistance_cv / 2
    return FrequencySpread(resistance_cv, f_rel, f01_ghz * f_rel * 1e3)


def electrode_pairs(flat: FlatLayout, pdk: PdkRuleSet) -> List[Tuple[Polygon, Polygon]]:
    """Overlapping (bottom, top) electrode pairs of a flat layout."""
    groups = group_by_purpose(flat, pdk)
    bottoms, tops = groups[Purpose.jj_bottom], groups[Purpose.jj_top]
    spatial_index = build_index((j, p.polygon.bounds) for j, p in enumerate(tops))
    pairs = []
    for b in bottoms:
        for j in spatial_index.query(b.polygon.bounds):
            if intersection_area(b.polygon, tops[j].polygon) > 0:
                pairs.append((b.polygon, tops[j].polygon))
    return pairs
