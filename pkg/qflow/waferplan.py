# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

"""Step-and-repeat die tiling of a circular wafer."""

import logging
import math
from os import PathLike
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numba import jit
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from qflow.gds import Cell, CellRef, Layout, LayoutError, boundary, flatten
from qflow.geometry import Point, Rect, rectangle, regular_polygon
from qflow.utils import NM_PER_MM, dump_json, mm_to_nm, to_json

logger = logging.getLogger(__name__)

SCAN_STEP_MM = 0.5
OUTLINE_SEGMENTS = 256
WAFER_CELL = "WAFER"

PCM_ALIGN = "PCM_ALIGN"
PCM_JJ_ARRAY = "PCM_JJ_ARRAY"
PCM_RES_MONITOR = "PCM_RES_MONITOR"


class WaferSpec(BaseModel):
    """Circular wafer.

    Parameters
    ----------
    diameter_mm :
        Wafer diameter. Defaults to 300 mm.
    edge_exclusion_mm :
        Width of the rim where no die is placed. Defaults to 5 mm.
    outline_layer :
        (layer, datatype) of the polygonised wafer outline.

    """

    model_config = ConfigDict(frozen=True)

    diameter_mm: float = Field(default=300.0, gt=0)
    edge_exclusion_mm: float = Field(default=5.0, gt=0)
    outline_layer: Tuple[int, int] = (0, 0)

    @model_validator(mode="after")
    def _check(self) -> "WaferSpec":
        if self.edge_exclusion_mm >= self.diameter_mm / 2:
            raise ValueError("The edge exclusion must be smaller than the wafer radius.")
        return self

    @property
    def usable_radius_mm(self) -> float:
        return self.diameter_mm / 2 - self.edge_exclusion_mm


class DieSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    width_mm: float = Field(default=24.0, gt=0)
    height_mm: float = Field(default=28.0, gt=0)
    cell: str = "CHIP"


class ScribeSpec(BaseModel):
    """Scribe lanes and the process control monitors placed in them."""

    model_config = ConfigDict(frozen=True)

    lane_width_mm: float = Field(default=0.2, ge=0)
    pcm_cells: List[str] = Field(default_factory=lambda: [PCM_ALIGN, PCM_JJ_ARRAY, PCM_RES_MONITOR])


class Site(NamedTuple):
    column: int
    row: int
    origin: Point  # lower-left corner of the die, nm


class WaferStatistics(NamedTuple):
    die_count: int
    usable_area_mm2: float
    die_area_mm2: float
    utilisation: float
    die_area_fraction: float


class WaferPlan:
    """Accepted die sites of a wafer.

    Parameters
    ----------
    wafer, die, scribe :
        The specifications the plan was computed from.
    sites :
        Accepted sites, sorted by row then column.
    grid_offset_mm :
        Shift of the site grid from the wafer-centred position.

    """

    def __init__(
        self,
        wafer: WaferSpec,
        die: DieSpec,
        scribe: ScribeSpec,
        sites: List[Site],
        grid_offset_mm: Tuple[float, float] = (0.0, 0.0),
    ):
        self.wafer = wafer
        self.die = die
        self.scribe = scribe
        self.sites = sorted(sites, key=lambda s: (s.row, s.column))
        self.grid_offset_mm = grid_offset_mm

    @property
    def die_count(self) -> int:
        return len(self.sites)

    @property
    def pitch_mm(self) -> Tuple[float, float]:
        return _pitch_mm(self.die, self.scribe)

    @property
    def pitch_nm(self) -> Tuple[int, int]:
        return (mm_to_nm(self.pitch_mm[0]), mm_to_nm(self.pitch_mm[1]))

    @property
    def usable_radius_mm(self) -> float:
        return self.wafer.usable_radius_mm

    def die_rect(self, site: Site) -> Rect:
        w, h = mm_to_nm(self.die.width_mm), mm_to_nm(self.die.height_mm)
        return Rect(site.origin.x, site.origin.y, site.origin.x + w, site.origin.y + h)

    def to_dict(self) -> dict:
        return {
            "wafer": self.wafer.model_dump(mode="json"),
            "die": self.die.model_dump(mode="json"),
            "scribe": self.scribe.model_dump(mode="json"),
            "usable_radius_mm": self.usable_radius_mm,
            "pitch_mm": list(self.pitch_mm),
            "grid_offset": list(self.grid_offset_mm),
            "sites": [
                {"column": s.column, "row": s.row, "origin": [s.origin.x, s.origin.y]}
                for s in self.sites
            ],
            "die_count": self.die_count,
        }

    def to_json(self) -> str:
        return to_json(self.to_dict())

    def save(self, path: Union[str, PathLike]) -> Path:
        return dump_json(self.to_dict(), path)

    def __repr__(self) -> str:
        return f"WaferPlan(die_count={self.die_count}, grid_offset_mm={self.grid_offset_mm})"


def _pitch_mm(die: DieSpec, scribe: ScribeSpec) -> Tuple[float, float]:
    return (die.width_mm + scribe.lane_width_mm, die.height_mm + scribe.lane_width_mm)


@jit(nopython=True)
def _fits(cx2: int, cy2: int, w: int, h: int, r2x4: int) -> bool:
    """Corner test on doubled coordinates: every corner inside the circle."""
    for sx in (-1, 1):
        for sy in (-1, 1):
            x = cx2 + sx * w
            y = cy2 + sy * h
            if x * x + y * y > r2x4:
                return False
    return True


@jit(nopython=True)
def _count_sites(px: int, py: int, w: int, h: int, dx: int, dy: int, radius: int) -> int:
    """Dies fully inside the circle for site centres at ((i + 1/2) px + dx, (j + 1/2) py + dy)."""
    r2x4 = 4 * radius * radius
    ni = radius // px + 2
    nj = radius // py + 2
    n = 0
    for j in range(-nj, nj + 1):
        cy2 = (2 * j + 1) * py + 2 * dy
        for i in range(-ni, ni + 1):
            cx2 = (2 * i + 1) * px + 2 * dx
            if _fits(cx2, cy2, w, h, r2x4):
                n += 1
    return n


@jit(nopython=True)
def _scan_column(
    px: int, py: int, w: int, h: int, dx: int, dys: np.ndarray, radius: int
) -> np.ndarray:
    out = np.zeros(dys.shape[0], dtype=np.int64)
    for k in range(dys.shape[0]):
        out[k] = _count_sites(px, py, w, h, dx, dys[k], radius)
    return out


def _scan_offsets(pitch_nm: int, step_nm: int) -> np.ndarray:
    """Offsets on the scan grid covering one period, [-p/2, p/2)."""
    kmin = -((pitch_nm // 2) // step_nm)
    offsets = np.arange(kmin, pitch_nm // step_nm + 1, dtype=np.int64) * step_nm
    return offsets[(2 * offsets >= -pitch_nm) & (2 * offsets < pitch_nm)]


def _best(candidates: Iterable[Tuple[int, int, int]]) -> Tuple[int, int, int]:
    """Maximum count, then centred-most offset, then lexicographic offset."""
    return min(candidates, key=lambda c: (-c[0], c[1] ** 2 + c[2] ** 2, c[1], c[2]))


def _sites(
    px: int, py: int, w: int, h: int, dx: int, dy: int, radius: int
) -> List[Site]:
    r2x4 = 4 * radius * radius
    ni, nj = radius // px + 2, radius // py + 2
    sites = []
    for j in range(-nj, nj + 1):
        cy2 = (2 * j + 1) * py + 2 * dy
        for i in range(-ni, ni + 1):
            cx2 = (2 * i + 1) * px + 2 * dx
            if _fits(cx2, cy2, w, h, r2x4):
                sites.append(Site(i, j, Point((cx2 - w) // 2, (cy2 - h) // 2)))
    return sites


def plan_wafer(
    wafer: Optional[WaferSpec] = None,
    die: Optional[DieSpec] = None,
    scribe: Optional[ScribeSpec] = None,
    optimize: bool = True,
    scan_step_mm: float = SCAN_STEP_MM,
    verbose: bool = False,
) -> WaferPlan:
    """Place as many dies as fit inside the usable circle.

    Parameters
    ----------
    wafer :
        Wafer specification. Defaults to a 300 mm wafer with 5 mm edge exclusion.
    die :
        Die specification. Defaults to 24 x 28 mm.
    scribe :
        Scribe lanes. Defaults to 0.2 mm lanes carrying the three built-in PCMs.
    optimize :
        Scan grid offsets over one pitch period and keep the one accepting the
        most dies. If `False`, the grid is centred on the wafer.
    scan_step_mm :
        Resolution of the offset scan. Defaults to 0.5 mm.
    verbose :
        Show a progress bar over the scan.

    Returns
    -------
    plan :
        The wafer plan. A die is accepted when its four corners lie within
        `diameter / 2 - edge_exclusion` of the wafer centre.

    Notes
    -----
    Site centres lie at `((i + 1/2) px + dx, (j + 1/2) py + dy)` with the pitch
    `p = die + lane_width`. Ties between offsets are broken by the smallest
    `dx² + dy²`, then by the smallest `(dx, dy)`.

    Examples
    --------
    >>> plan_wafer(optimize=False).die_count
    72

    """
    wafer = wafer or WaferSpec()
    die = die or DieSpec()
    scribe = scribe or ScribeSpec()
    px, py = (mm_to_nm(v) for v in _pitch_mm(die, scribe))
    w, h = mm_to_nm(die.width_mm), mm_to_nm(die.height_mm)
    radius = mm_to_nm(wafer.usable_radius_mm)

    if optimize:
        step = mm_to_nm(scan_step_mm)
        if step <= 0:
            raise ValueError("The scan step must be positive.")
        dxs, dys = _scan_offsets(px, step), _scan_offsets(py, step)
        candidates = []
        for dx in tqdm(dxs, desc="Offset scan", disable=not verbose):
            counts = _scan_column(px, py, w, h, int(dx), dys, radius)
            candidates.extend((int(n), int(dx), int(dy)) for n, dy in zip(counts, dys))
        _, dx, dy = _best(candidates)
    else:
        dx, dy = 0, 0

    sites = _sites(px, py, w, h, dx, dy, radius)
    plan = WaferPlan(wafer, die, scribe, sites, (dx / NM_PER_MM, dy / NM_PER_MM))
    if plan.die_count == 0:
        logger.warning(
            "No %gx%g mm die fits on a %g mm wafer with %g mm edge exclusion.",
            die.width_mm, die.height_mm, wafer.diameter_mm, wafer.edge_exclusion_mm,
        )
    else:
        logger.info("Wafer plan: %d dies, grid offset %s mm.", plan.die_count, plan.grid_offset_mm)
    return plan


def exhaustive_die_count(
    wafer: WaferSpec, die: DieSpec, scribe: ScribeSpec, scan_step_mm: float = SCAN_STEP_MM
) -> Tuple[int, Tuple[float, float]]:
    """Best die count and offset by vectorised enumeration of every offset and site.

    Shares no code with `plan_wafer` beyond the offset grid definition and is used
    to cross-check it.

    """
    px, py = (mm_to_nm(v) for v in _pitch_mm(die, scribe))
    w, h = mm_to_nm(die.width_mm), mm_to_nm(die.height_mm)
    radius = mm_to_nm(wafer.usable_radius_mm)
    step = mm_to_nm(scan_step_mm)
    n = int(math.ceil(radius / min(px, py))) + 2
    idx = np.arange(-n, n + 1, dtype=np.int64)
    r2x4 = 4 * radius * radius
    best = []
    for dx in _scan_offsets(px, step):
        cx2 = (2 * idx + 1) * px + 2 * dx
        xs = np.maximum((cx2 - w) ** 2, (cx2 + w) ** 2)
        for dy in _scan_offsets(py, step):
            cy2 = (2 * idx + 1) * py + 2 * dy
            ys = np.maximum((cy2 - h) ** 2, (cy2 + h) ** 2)
            count = int(np.count_nonzero(xs[None, :] + ys[:, None] <= r2x4))
            best.append((count, int(dx), int(dy)))
    count, dx, dy = _best(best)
    return count, (dx / NM_PER_MM, dy / NM_PER_MM)


def die_count_band(
    die: Optional[DieSpec] = None,
    scribe: Optional[ScribeSpec] = None,
    exclusions_mm: Sequence[float] = (3.0, 4.0, 5.0),
    diameter_mm: float = 300.0,
) -> Tuple[int, int]:
    """Feasible die counts over a set of edge exclusions.

    Returns
    -------
    band :
        (smallest centred-grid count, largest optimised count).

    """
    die = die or DieSpec()
    scribe = scribe or ScribeSpec()
    low, high = [], []
    for exclusion in exclusions_mm:
        wafer = WaferSpec(diameter_mm=diameter_mm, edge_exclusion_mm=exclusion)
        low.append(plan_wafer(wafer, die, scribe, optimize=False).die_count)
        high.append(plan_wafer(wafer, die, scribe, optimize=True).die_count)
    return (min(low), max(high))


def wafer_statistics(plan: WaferPlan) -> WaferStatistics:
    usable = math.pi * plan.usable_radius_mm**2
    total = math.pi * (plan.wafer.diameter_mm / 2) ** 2
    die_area = plan.die.width_mm * plan.die.height_mm
    used = plan.die_count * die_area
    return WaferStatistics(plan.die_count, usable, die_area, used / usable, used / total)


###############
# PCM library #
###############


def pcm_alignment_mark(name: str = PCM_ALIGN) -> Cell:
    """Cross-shaped alignment mark on the base metal, 100 µm across."""
    return Cell(
        name,
        (
            boundary(1, 0, rectangle(-50_000, -5_000, 50_000, 5_000)),
            boundary(1, 0, rectangle(-5_000, 5_000, 5_000, 50_000)),
            boundary(1, 0, rectangle(-5_000, -50_000, 5_000, -5_000)),
        ),
    )


def pcm_jj_array(name: str = PCM_JJ_ARRAY, count: int = 5, pitch_nm: int = 20_000) -> Cell:
    """Row of crossed-strip test junctions of increasing area."""
    elements = []
    x0 = -(count - 1) * pitch_nm // 2
    for k in range(count):
        x = x0 + k * pitch_nm
        half = 100 * (k + 1)
        elements.append(boundary(2, 0, rectangle(x - 1_000, -half, x + 1_000, half)))
        elements.append(boundary(4, 0, rectangle(x - half, -1_000, x + half, 1_000)))
    return Cell(name, tuple(elements))


def pcm_resistance_monitor(name: str = PCM_RES_MONITOR) -> Cell:
    """Four-terminal line between two probe pads."""
    return Cell(
        name,
        (
            boundary(1, 1, rectangle(-90_000, -30_000, -30_000, 30_000)),
            boundary(1, 1, rectangle(-30_000, -2_500, 30_000, 2_500)),
            boundary(1, 1, rectangle(30_000, -30_000, 90_000, 30_000)),
        ),
    )


PCM_CELLS = {
    PCM_ALIGN: pcm_alignment_mark,
    PCM_JJ_ARRAY: pcm_jj_array,
    PCM_RES_MONITOR: pcm_resistance_monitor,
}


def pcm_positions(plan: WaferPlan) -> List[Point]:
    """Centres of the interior horizontal lane segments, row by row.

    A segment lies between two vertically adjacent accepted sites.

    """
    accepted = {(s.column, s.row): s for s in plan.sites}
    lane = mm_to_nm(plan.scribe.lane_width_mm)
    w, h = mm_to_nm(plan.die.width_mm), mm_to_nm(plan.die.height_mm)
    out = []
    for s in plan.sites:
        if (s.column, s.row + 1) in accepted:
            out.append(Point(s.origin.x + w // 2, s.origin.y + h + lane // 2))
    return out


def emit_wafer_layout(
    plan: WaferPlan,
    die_layout: Layout,
    scribe: Optional[ScribeSpec] = None,
    pcm_library: Optional[Dict[str, Cell]] = None,
) -> Layout:
    """Wafer-level layout with one die reference per site.

    Parameters
    ----------
    plan :
        The wafer plan.
    die_layout :
        Library containing the die cell named by `plan.die.cell`.
    scribe :
        Scribe specification. Defaults to the one of the plan.
    pcm_library :
        Extra PCM cells by name. PCMs are looked up there, then in `die_layout`,
        then among the built-in cells.

    Returns
    -------
    layout :
        A library whose top cell `WAFER` references the die at every site, one PCM
        per interior horizontal lane segment (cycling through `scribe.pcm_cells`)
        and the polygonised wafer outline.

    Raises
    ------
    LayoutError
        If the die cell or a PCM cell is missing.

    Notes
    -----
    Flattened, the layout holds `1 + die_count * die_polygons + pcm_polygons`
    polygons: the outline, every die polygon at every site and every polygon of
    the placed PCM cells. A PCM cell adds all of its polygons (three to ten for
    the built-in cells), not one per instance.

    """
    scribe = scribe or plan.scribe
    if plan.die.cell not in die_layout:
        raise LayoutError(f"Die cell {plan.die.cell!r} is not in {die_layout.library_name!r}.")
    die_flat = flatten(die_layout, plan.die.cell)
    ll = die_flat.bounds or Rect(0, 0, 0, 0)

    cells = list(die_layout.cells)
    extra: Dict[str, Cell] = {}
    positions = pcm_positions(plan) if scribe.pcm_cells else []
    for name in dict.fromkeys(scribe.pcm_cells):
        if pcm_library and name in pcm_library:
            extra[name] = pcm_library[name]
        elif name in die_layout:
            continue
        elif name in PCM_CELLS:
            extra[name] = PCM_CELLS[name](name)
        else:
            raise LayoutError(f"PCM cell {name!r} is missing.")
    cells.extend(extra.values())

    references = [
        CellRef(plan.die.cell, Point(s.origin.x - ll.xmin, s.origin.y - ll.ymin)) for s in plan.sites
    ]
    for k, pos in enumerate(positions):
        references.append(CellRef(scribe.pcm_cells[k % len(scribe.pcm_cells)], pos))

    layer, datatype = plan.wafer.outline_layer
    outline = regular_polygon(0, 0, mm_to_nm(plan.wafer.diameter_mm / 2), OUTLINE_SEGMENTS)
    if WAFER_CELL in {c.name for c in cells}:
        raise LayoutError(f"The die library already has a {WAFER_CELL!r} cell.")
    cells.append(Cell(WAFER_CELL, (boundary(layer, datatype, outline),), tuple(references)))
    logger.info(
        "Wafer layout: %d dies, %d PCM instances.", plan.die_count, len(positions)
    )
    return Layout(
        die_layout.library_name,
        cells,
        top_cell=WAFER_CELL,
        db_unit_nm=die_layout.db_unit_nm,
        user_unit=die_layout.user_unit,
    )
