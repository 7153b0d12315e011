# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

"""Parameterised superconducting test chips built from 500 um tiles."""

import json
import logging
import math
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pkg_resources  # type: ignore
from pydantic import BaseModel, ConfigDict, Field, model_validator

from qflow.gds import Cell, CellRef, Element, Layout, boundary, flatten
from qflow.geometry import Point, Rect, rectangle
from qflow.pdk import NON_FUNCTIONAL, PdkRuleSet, ProcessStack, Purpose, load_pdk
from qflow.waferplan import DieSpec

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0  # m/s
UM = 1_000  # nm


class ChipSizeError(ValueError):
    pass


##########
# Recipe #
##########


class XmonParams(BaseModel):
    """Cross-shaped transmon in a ground pocket.

    Parameters
    ----------
    arm_length_um, arm_width_um :
        Length and width of each arm of the cross.
    cpw_gap_um :
        Gap between the arm ends and the pocket edge.
    jj_size_nm :
        Side of the square junction formed by the two crossing electrodes.
    jj_overlap_nm :
        Length by which each electrode runs past the junction. Must exceed the
        misalignment tolerance of the deck for the junction area to stay constant.
    jj_lead_width_nm :
        Width of the leads connecting the junction to the cross and to ground.
    jj_offset_um :
        Distance between the end of the lower arm and the junction.

    """

    model_config = ConfigDict(frozen=True)

    arm_length_um: float = Field(default=260.0, gt=0)
    arm_width_um: float = Field(default=20.0, gt=0)
    cpw_gap_um: float = Field(default=40.0, gt=0)
    jj_size_nm: int = Field(default=200, gt=0)
    jj_overlap_nm: int = Field(default=900, gt=0)
    jj_lead_width_nm: int = Field(default=500, gt=0)
    jj_offset_um: float = Field(default=20.0, gt=0)

    @model_validator(mode="after")
    def _fits(self) -> "XmonParams":
        if self.jj_offset_um >= self.cpw_gap_um:
            raise ValueError("The junction must sit between the lower arm and the pocket edge.")
        if self.jj_lead_width_nm > self.jj_overlap_nm:
            raise ValueError("The ground lead must be narrower than the electrode overhang.")
        return self

    @property
    def pocket_um(self) -> float:
        return self.arm_length_um + 2 * self.cpw_gap_um


class ResonatorParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    width_um: float = Field(default=10.0, gt=0)
    half_span_um: float = Field(default=180.0, gt=0)
    pitch_um: float = Field(default=30.0, gt=0)
    max_runs: int = Field(default=13, ge=1)
    pocket_um: float = Field(default=400.0, gt=0)
    base_frequency_ghz: float = Field(default=6.5, gt=0)
    stagger_ghz: float = Field(default=0.1, ge=0)
    stagger_levels: int = Field(default=5, ge=1)


class FeedlineParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    conductor_width_um: float = Field(default=10.0, gt=0)
    gap_um: float = Field(default=6.0, gt=0)
    launch_wall_um: float = Field(default=94.0, gt=0)


class CouplerParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    half_length_um: float = Field(default=150.0, gt=0)
    bridge_offsets_um: List[float] = Field(default_factory=lambda: [-75.0, 75.0])


class AirbridgeParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    pad_um: float = Field(default=14.0, gt=0)
    pad_offset_um: float = Field(default=30.0, gt=0)
    span_width_um: float = Field(default=10.0, gt=0)


class GridParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_columns: int = Field(default=10, ge=1)


class ChipRecipe(BaseModel):
    """Every dimension of the generated chips, read from `recipes/default_chip.json`."""

    model_config = ConfigDict(frozen=True)

    schema_version: int = 1
    name: str = "default"
    description: str = ""
    tile_um: float = Field(default=500.0, gt=0)
    edge_clearance_um: float = Field(default=250.0, ge=0)
    defect_offset_um: float = Field(default=1000.0, gt=0)
    layers: Dict[Purpose, Tuple[int, int]]
    xmon: XmonParams = Field(default_factory=XmonParams)
    resonator: ResonatorParams = Field(default_factory=ResonatorParams)
    feedline: FeedlineParams = Field(default_factory=FeedlineParams)
    coupler: CouplerParams = Field(default_factory=CouplerParams)
    airbridge: AirbridgeParams = Field(default_factory=AirbridgeParams)
    grid: GridParams = Field(default_factory=GridParams)
    diamond: List[str]

    @model_validator(mode="after")
    def _check(self) -> "ChipRecipe":
        if self.xmon.pocket_um >= self.tile_um or self.resonator.pocket_um >= self.tile_um:
            raise ValueError("Component pockets must be smaller than the tile.")
        if len({len(row) for row in self.diamond}) != 1:
            raise ValueError("Diamond rows must have the same length.")
        unknown = set("".join(self.diamond)) - set(TILE_CODES)
        if unknown:
            raise ValueError(f"Unknown tile codes {sorted(unknown)} in the diamond layout.")
        return self

    def layer(self, purpose: Purpose) -> Tuple[int, int]:
        return tuple(self.layers[purpose])


def load_recipe(name: str = "default_chip") -> ChipRecipe:
    path = pkg_resources.resource_filename("qflow", f"recipes/{name}.json")
    with open(path, "r", encoding="utf-8") as f:
        return ChipRecipe.model_validate(json.load(f))


class ChipSpec(BaseModel):
    """What to generate.

    Parameters
    ----------
    qubit_count :
        Number of Xmon qubits.
    topology :
        `"diamond"` (the four-qubit benchmark chip) or `"grid"` (rows of qubits
        on both sides of feedlines, used for the scaling series).
    die :
        Die dimensions.
    seed :
        Seeds the assignment of staggered resonator frequencies.

    """

    model_config = ConfigDict(frozen=True)

    qubit_count: int = Field(default=4, ge=1)
    topology: str = Field(default="diamond", pattern="^(diamond|grid)$")
    die: DieSpec = Field(default_factory=DieSpec)
    seed: int = 0
    xmon: Optional[XmonParams] = None

    @model_validator(mode="after")
    def _check(self) -> "ChipSpec":
        if self.topology == "diamond" and self.qubit_count != 4:
            raise ValueError("The diamond topology holds exactly 4 qubits.")
        return self


class Census(NamedTuple):
    """Component counts of a generated chip."""

    xmon: int
    resonator: int
    coupler: int
    feedline: int
    airbridge: int
    resonator_frequencies_ghz: Tuple[float, ...] = ()

    @property
    def total(self) -> int:
        return self.xmon + self.resonator + self.coupler + self.feedline + self.airbridge

    def to_dict(self) -> dict:
        return {
            "xmon": self.xmon,
            "resonator": self.resonator,
            "coupler": self.coupler,
            "feedline": self.feedline,
            "airbridge": self.airbridge,
            "total": self.total,
            "resonator_frequencies_ghz": list(self.resonator_frequencies_ghz),
        }


#########
# Tiles #
#########


# G ground, Q qubit, R resonator, C coupler, S feedline segment, L launch
TILE_CODES = "GQRCSL"


def _nm(um: float) -> int:
    return int(round(um * UM))


def _rect(layer: Tuple[int, int], x0: float, y0: float, x1: float, y1: float) -> Element:
    """Boundary from a box given in um."""
    return boundary(layer[0], layer[1], rectangle(_nm(x0), _nm(y0), _nm(x1), _nm(y1)))


def quarter_wave_length_um(frequency_ghz: float, permittivity: float) -> float:
    """Length of a quarter-wave CPW resonator, `c / (4 f sqrt((er + 1) / 2))`."""
    return SPEED_OF_LIGHT / (4 * frequency_ghz * 1e9 * math.sqrt((permittivity + 1) / 2)) * 1e6


def meander_centerline(length_um: float, params: ResonatorParams) -> List[Tuple[int, int]]:
    """Centerline of a meander of about `length_um`, shorted to the pocket edge.

    Runs are horizontal, `pitch_um` apart, from the bottom of the pocket up. The
    last run ends on the pocket edge; the first run is shortened to trim the
    length.

    """
    half, pitch = params.half_span_um, params.pitch_um
    pocket_half = params.pocket_um / 2
    run = 2 * half
    extension = pocket_half - half

    def full(n: int) -> float:
        return n * run + (n - 1) * pitch + extension

    n = 1
    while n < params.max_runs and full(n) < length_um:
        n += 1
    deficit = min(max(full(n) - length_um, 0.0), run - extension)
    y0 = -half
    points = [(_nm(-half + deficit), _nm(y0))]
    for k in range(n):
        sign = 1 if k % 2 == 0 else -1
        end = sign * (half if k < n - 1 else pocket_half)
        points.append((_nm(end), _nm(y0 + k * pitch)))
        if k < n - 1:
            points.append((_nm(end), _nm(y0 + (k + 1) * pitch)))
    return points


def _bands(layer: Tuple[int, int], tile: float, pocket: float) -> Tuple[Element, ...]:
    """Four ground bands framing a square pocket."""
    t, p = tile / 2, pocket / 2
    return (
        _rect(layer, -t, -t, t, -p),
        _rect(layer, -t, p, t, t),
        _rect(layer, -t, -p, -p, p),
        _rect(layer, p, -p, t, p),
    )


class _Library:
    """Cells of one chip, created on first use."""

    def __init__(self, recipe: ChipRecipe, xmon: XmonParams, permittivity: float):
        self.recipe = recipe
        self.xmon_params = xmon
        self.permittivity = permittivity
        self.cells: Dict[str, Cell] = {}

    def _add(self, cell: Cell) -> str:
        self.cells.setdefault(cell.name, cell)
        return cell.name

    def ground(self) -> str:
        t = self.recipe.tile_um / 2
        return self._add(Cell("GROUND", (_rect(self.recipe.layer(Purpose.ground), -t, -t, t, t),)))

    def airbridge(self) -> str:
        r, b = self.recipe, self.recipe.airbridge
        pad, span = r.layer(Purpose.airbridge_pad), r.layer(Purpose.airbridge_span)
        h = b.pad_um / 2
        reach = b.pad_offset_um + h
        return self._add(
            Cell(
                "AIRBRIDGE",
                (
                    _rect(pad, -h, b.pad_offset_um, h, b.pad_offset_um + b.pad_um),
                    _rect(pad, -h, -b.pad_offset_um - b.pad_um, h, -b.pad_offset_um),
                    _rect(span, -b.span_width_um / 2, -reach, b.span_width_um / 2, reach),
                ),
            )
        )

    def junction(self) -> str:
        x = self.xmon_params
        r = self.recipe
        s, o = x.jj_size_nm // 2, x.jj_overlap_nm
        lead = x.jj_lead_width_nm
        y = -_nm(x.arm_length_um / 2 + x.jj_offset_um)
        arm_end = -_nm(x.arm_length_um / 2)
        floor = -_nm(x.pocket_um / 2)
        bottom, top, leads = r.layer(Purpose.jj_bottom), r.layer(Purpose.jj_top), r.layer(Purpose.jj_lead)
        return self._add(
            Cell(
                "JJ",
                (
                    boundary(*bottom, rectangle(-s - o, y - s, s + o, y + s)),
                    boundary(*top, rectangle(-s, y - s - o, s, y + s + o)),
                    # top electrode up to the lower arm
                    boundary(*leads, rectangle(-lead // 2, y + o, lead // 2, arm_end + UM)),
                    # bottom electrode down to the pocket edge
                    boundary(*leads, rectangle(-s - o, floor, -s - o + lead, y)),
                ),
            )
        )

    def xmon(self) -> str:
        x, r = self.xmon_params, self.recipe
        conductor = r.layer(Purpose.cpw_conductor)
        a, w = x.arm_length_um / 2, x.arm_width_um / 2
        elements = _bands(r.layer(Purpose.ground), r.tile_um, x.pocket_um) + (
            _rect(conductor, -a, -w, a, w),
            _rect(conductor, -w, -a, w, a),
        )
        return self._add(Cell("XMON", elements, (CellRef(self.junction()),)))

    def resonator(self, frequency_ghz: float) -> str:
        r, p = self.recipe, self.recipe.resonator
        name = f"RESONATOR_{int(round(frequency_ghz * 1000))}MHZ"
        if name in self.cells:
            return name
        length = quarter_wave_length_um(frequency_ghz, self.permittivity)
        layer, datatype = r.layer(Purpose.cpw_conductor)
        meander = Element(
            "path", layer, datatype, tuple(meander_centerline(length, p)), _nm(p.width_um), "flush"
        )
        return self._add(Cell(name, _bands(r.layer(Purpose.ground), r.tile_um, p.pocket_um) + (meander,)))

    def _cpw(self, name: str, x0: float, x1: float, bridges: List[float]) -> str:
        """Horizontal CPW section: conductor from `x0` to `x1`, ground above and
        below, optional ground walls closing it, airbridges at `bridges`."""
        r, f = self.recipe, self.recipe.feedline
        ground = r.layer(Purpose.ground)
        t = r.tile_um / 2
        w = f.conductor_width_um / 2
        edge = w + f.gap_um
        g0 = x0 - f.gap_um if x0 > -t else -t
        g1 = x1 + f.gap_um if x1 < t else t
        elements = [
            _rect(ground, g0, edge, g1, t),
            _rect(ground, g0, -t, g1, -edge),
            _rect(r.layer(Purpose.cpw_conductor), x0, -w, x1, w),
        ]
        if g0 > -t:
            elements.insert(0, _rect(ground, -t, -t, g0, t))
        if g1 < t:
            elements.append(_rect(ground, g1, -t, t, t))
        bridge = self.airbridge()
        refs = tuple(CellRef(bridge, Point(_nm(b), 0)) for b in bridges)
        return self._add(Cell(name, tuple(elements), refs))

    def feed(self) -> str:
        t = self.recipe.tile_um / 2
        return self._cpw("FEED", -t, t, [0.0])

    def launch(self) -> str:
        t = self.recipe.tile_um / 2
        f = self.recipe.feedline
        x0 = -t + f.launch_wall_um + f.gap_um
        return self._cpw("LAUNCH", x0, t, [(x0 + t) / 2])

    def coupler(self) -> str:
        c = self.recipe.coupler
        return self._cpw("COUPLER", -c.half_length_um, c.half_length_um, c.bridge_offsets_um)


##########
# Chips #
##########


def _frequencies(count: int, params: ResonatorParams, seed: int) -> List[float]:
    """Staggered resonator frequencies, assigned in a seeded order."""
    order = np.random.default_rng(seed).permutation(count)
    return [
        round(params.base_frequency_ghz + params.stagger_ghz * int(k % params.stagger_levels), 6)
        for k in order
    ]


def _diamond(recipe: ChipRecipe) -> List[List[str]]:
    return [list(row) for row in recipe.diamond]


def _grid(qubit_count: int, recipe: ChipRecipe) -> List[List[str]]:
    """Bands of five rows (qubits, resonators, feedline, mirrored resonators, mirrored
    qubits) holding up to `2 * columns` qubits each."""
    columns = min(recipe.grid.max_columns, math.ceil(qubit_count / 2))
    rows = []
    remaining = qubit_count
    while remaining > 0:
        upper = min(columns, math.ceil(min(remaining, 2 * columns) / 2))
        lower = min(columns, min(remaining, 2 * columns) - upper)
        remaining -= upper + lower
        top = ["G"] + ["Q"] * upper + ["G"] * (columns - upper) + ["G"]
        res = ["G"] + ["R"] * upper + ["G"] * (columns - upper) + ["G"]
        feed = ["L"] + ["S"] * columns + ["L"]
        res_low = ["G"] + ["r"] * lower + ["G"] * (columns - lower) + ["G"]
        bottom = ["G"] + ["q"] * lower + ["G"] * (columns - lower) + ["G"]
        rows.extend([top, res, feed, res_low, bottom])
    return rows


def tile_map(spec: ChipSpec, recipe: Optional[ChipRecipe] = None) -> List[List[str]]:
    """Tile codes row by row from the top. Lower-case codes are mirrored tiles."""
    recipe = recipe or load_recipe()
    if spec.topology == "diamond":
        return _diamond(recipe)
    return _grid(spec.qubit_count, recipe)


def generate_chip(
    spec: Optional[ChipSpec] = None,
    stack: Optional[ProcessStack] = None,
    recipe: Optional[ChipRecipe] = None,
) -> Tuple[Layout, Census]:
    """Generate a test chip.

    Parameters
    ----------
    spec :
        What to generate. Defaults to the four-qubit diamond chip.
    stack :
        Process stack, for the substrate permittivity used to size the resonators.
        Defaults to the stack of the `qeda` deck.
    recipe :
        Component dimensions. Defaults to `recipes/default_chip.json`.

    Returns
    -------
    layout :
        A hierarchical layout: one cell per component type, a `CHIP` top cell
        holding the die outline and one reference per tile.
    census :
        Component counts. Every feedline is one component and every airbridge is
        another.

    Raises
    ------
    ChipSizeError
        If the tiles and the edge clearance do not fit in the die.

    Examples
    --------
    >>> layout, census = generate_chip()
    >>> census.total
    28

    """
    spec = spec or ChipSpec()
    recipe = recipe or load_recipe()
    if stack is None:
        stack = load_pdk("qeda")[1]
    tiles = tile_map(spec, recipe)
    n_rows, n_cols = len(tiles), len(tiles[0])
    tile = _nm(recipe.tile_um)
    w, h = _nm(spec.die.width_mm * 1000), _nm(spec.die.height_mm * 1000)
    clearance = _nm(recipe.edge_clearance_um)
    if n_cols * tile + 2 * clearance > w or n_rows * tile + 2 * clearance > h:
        raise ChipSizeError(
            f"{spec.qubit_count} qubits need {n_cols * recipe.tile_um / 1000:g} x "
            f"{n_rows * recipe.tile_um / 1000:g} mm plus {recipe.edge_clearance_um:g} um "
            f"clearance, the die is {spec.die.width_mm:g} x {spec.die.height_mm:g} mm."
        )

    library = _Library(recipe, spec.xmon or recipe.xmon, stack.substrate_permittivity)
    n_res = sum(row.count("R") + row.count("r") for row in tiles)
    frequencies = iter(_frequencies(n_res, recipe.resonator, spec.seed))
    x0 = w // 2 - (n_cols - 1) * tile // 2
    y0 = h // 2 + (n_rows - 1) * tile // 2
    references = []
    used: List[float] = []
    for r, row in enumerate(tiles):
        for c, code in enumerate(row):
            origin = Point(x0 + c * tile, y0 - r * tile)
            mirrored = code.islower()
            code = code.upper()
            if code == "G":
                ref = CellRef(library.ground(), origin)
            elif code == "Q":
                ref = CellRef(library.xmon(), origin, reflection=mirrored)
            elif code == "R":
                f = next(frequencies)
                used.append(f)
                ref = CellRef(library.resonator(f), origin, reflection=mirrored)
            elif code == "C":
                ref = CellRef(library.coupler(), origin)
            elif code == "S":
                ref = CellRef(library.feed(), origin)
            else:
                # launches face the inside of the row
                ref = CellRef(library.launch(), origin, rotation=180.0 if c else 0.0)
            references.append(ref)

    outline_layer = recipe.layer(Purpose.chip_outline)
    text_layer = recipe.layer(Purpose.text)
    label = Element(
        "text",
        text_layer[0],
        text_layer[1],
        ((x0 - tile // 2, y0 + tile),),
        text=f"QFLOW {spec.topology.upper()} {spec.qubit_count}Q",
    )
    top = Cell(
        spec.die.cell,
        (boundary(*outline_layer, rectangle(0, 0, w, h)), label),
        tuple(references),
    )
    cells = [library.cells[k] for k in sorted(library.cells)] + [top]
    layout = Layout("QFLOW_CHIP", cells, top_cell=spec.die.cell)

    codes = "".join("".join(row).upper() for row in tiles)
    bridges = codes.count("S") + codes.count("L") + codes.count("C") * len(
        recipe.coupler.bridge_offsets_um
    )
    census = Census(
        codes.count("Q"),
        codes.count("R"),
        codes.count("C"),
        sum(1 for row in tiles if "L" in row),
        bridges,
        tuple(used),
    )
    logger.info(
        "Generated %s chip: %d components, %d tiles.", spec.topology, census.total, len(codes)
    )
    return layout, census


##################
# Defect planting #
##################


def _functional_bounds(flat, pdk: PdkRuleSet) -> Rect:
    purposes = {lp.pair: lp.purpose for lp in pdk.layer_map}
    boxes = [
        p.polygon.bounds
        for p in flat.polygons
        if purposes.get((p.layer, p.datatype)) not in NON_FUNCTIONAL
    ]
    return Rect.bounding(boxes)


def _defect(rule_id: str, flat, pdk: PdkRuleSet, offset_nm: int) -> List[Element]:
    def layer(purpose: Purpose) -> Tuple[int, int]:
        return pdk.layers_for(purpose)[0]

    def box(purpose: Purpose, x0: int, y0: int, x1: int, y1: int) -> Element:
        return boundary(*layer(purpose), rectangle(x0, y0, x1, y1))

    block = _functional_bounds(flat, pdk)
    outline = flat.on_layer(*pdk.outline_layer)[0].polygon.bounds
    x = block.xmin - offset_nm
    y = (block.ymin + block.ymax) // 2
    if x < outline.xmin + 200 * UM:
        raise ChipSizeError("No free space left of the components to plant a defect.")

    if rule_id == "R1":
        grounds = [p.polygon.bounds for p in flat.polygons if (p.layer, p.datatype) in pdk.layers_for(Purpose.ground)]
        target = min(grounds, key=lambda b: (-b.ymax, b.xmin))
        return [box(Purpose.cpw_conductor, target.xmin + 50 * UM, target.ymax + 2 * UM,
                    target.xmin + 150 * UM, target.ymax + 12 * UM)]
    if rule_id == "R2":
        return [box(Purpose.cpw_conductor, x, y, x + 4_900, y + 100 * UM)]
    if rule_id == "R3":
        # top electrode flush with the bottom edge of the junction
        return [
            box(Purpose.jj_bottom, x - 1_000, y - 100, x + 1_000, y + 100),
            box(Purpose.jj_top, x - 100, y - 100, x + 100, y + 1_000),
        ]
    if rule_id == "R4":
        return [box(Purpose.jj_lead, x, y, x + 80, y + 5 * UM)]
    if rule_id == "R5":
        return [
            box(Purpose.airbridge_pad, x, y, x + 14 * UM, y + 14 * UM),
            box(Purpose.airbridge_pad, x + 134 * UM, y, x + 148 * UM, y + 14 * UM),
            box(Purpose.airbridge_span, x + 7 * UM, y + 2 * UM, x + 141 * UM, y + 12 * UM),
        ]
    if rule_id == "R6":
        return [box(Purpose.airbridge_pad, x, y, x + 12 * UM, y + 8 * UM)]
    if rule_id == "R7":
        left = outline.xmin + 150 * UM
        return [box(Purpose.airbridge_pad, left, y, left + 14 * UM, y + 14 * UM)]
    if rule_id == "R8":
        return [
            box(Purpose.wiring, x, y, x + 10 * UM, y + 10 * UM),
            box(Purpose.wiring, x + 11_500, y, x + 21_500, y + 10 * UM),
        ]
    if rule_id == "R9":
        return [box(Purpose.ground, x, y, x + 20 * UM, y + 20 * UM)]
    raise ValueError(f"Unknown rule {rule_id!r}, expected R1 to R9.")


def inject_defect(
    layout: Layout, rule_id: str, pdk: Optional[PdkRuleSet] = None, recipe: Optional[ChipRecipe] = None
) -> Layout:
    """Plant one violation of a rule into a clean chip.

    The defect is added to the top cell, in free space left of the components
    (R1 excepted: its conductor sits 2 um above the topmost-left ground polygon,
    and R7: its pad sits 150 um from the chip edge).

    Parameters
    ----------
    layout :
        A clean chip, typically from :py:func:`generate_chip`.
    rule_id :
        `"R1"` to `"R9"`.
    pdk :
        Deck giving layers and thresholds. Defaults to `qeda`.

    Returns
    -------
    layout :
        A new layout; `layout` is left untouched.

    """
    pdk = pdk or load_pdk("qeda")[0]
    recipe = recipe or load_recipe()
    flat = flatten(layout)
    elements = _defect(rule_id, flat, pdk, _nm(recipe.defect_offset_um))
    top = layout.cell(layout.top_cell)
    cells = [
        c._replace(elements=c.elements + tuple(elements)) if c.name == top.name else c
        for c in layout.cells
    ]
    logger.info("Planted a %s defect (%d shapes).", rule_id, len(elements))
    return Layout(
        layout.library_name,
        cells,
        top_cell=layout.top_cell,
        db_unit_nm=layout.db_unit_nm,
        user_unit=layout.user_unit,
    )
