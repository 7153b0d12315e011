# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

"""Mask data preparation: fracture, reticles, job deck, tape-out gate and the
foundry package."""

import json
import logging
import math
import os
import shutil
import tempfile
from os import PathLike
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

from joblib import Parallel, delayed
from tabulate import tabulate  # type: ignore
from tqdm import tqdm

from qflow.drc import ViolationReport
from qflow.gds import MAX_DEPTH, FlatLayout, FlatPolygon, Layout, LayoutError, flatten, write_gds
from qflow.geometry import Rect, Trapezoid, build_index, decompose_trapezoids, intersection_area
from qflow.pdk import NON_FUNCTIONAL, ExposureDefaults, PdkRuleSet, ProcessStack
from qflow.process import StepPlan
from qflow.utils import resolve_n_jobs, sha256_file, sha256_lines, to_json
from qflow.waferplan import WaferPlan

logger = logging.getLogger(__name__)

TRAP_HEADER = "TRAP v1 layer={layer} datatype={datatype} dbu=1nm"
DOSE_UNITS = {"optical": "mJ/cm2", "ebeam": "uC/cm2"}
PACKAGE_FORMAT = 1

PACKAGE_FILES = (
    "layout.gds",
    "wafer.gds",
    "drc_report.json",
    "tapeout_report.json",
    "step_plan.csv",
    "wafer_plan.json",
    "mask",
    "jobdeck.json",
)


class FractureError(ValueError):
    """Polygons that cannot be fractured, listed by provenance."""

    def __init__(self, message: str, polygons: Sequence[str] = ()):
        self.polygons = list(polygons)
        if self.polygons:
            message += " " + ", ".join(self.polygons)
        super().__init__(message)


class ReticleError(ValueError):
    pass


class JobDeckError(ValueError):
    pass


class GateError(RuntimeError):
    """The package gate refused to write a package."""


############
# Fracture #
############


class TrapezoidSet(NamedTuple):
    """Fractured (layer, datatype).

    Overlapping source polygons are fractured independently, so the overlap is
    exposed twice; `double_exposures` counts such polygon pairs.

    """

    layer: int
    datatype: int
    trapezoids: Tuple[Trapezoid, ...]
    source_count: int
    polygon_area2: int
    cuts: int
    double_exposures: int = 0

    @property
    def shape_count(self) -> int:
        return len(self.trapezoids)

    @property
    def total_area(self) -> float:
        """Area covered by the trapezoids in nm²."""
        return sum(t.area2 for t in self.trapezoids) / 2

    @property
    def bounds(self) -> Optional[Rect]:
        return Rect.bounding(t.bounds for t in self.trapezoids)

    def lines(self) -> List[str]:
        return [" ".join(str(v) for v in t) for t in sorted(self.trapezoids)]

    @property
    def checksum(self) -> str:
        """Order-independent digest of the trapezoid multiset."""
        return sha256_lines(self.lines())


def _slab_count(polygon) -> int:
    return len(set(int(y) for y in polygon.vertices[:, 1])) - 1


def _double_exposures(polygons: List[FlatPolygon]) -> int:
    spatial_index = build_index((i, p.polygon.bounds) for i, p in enumerate(polygons))
    pairs = 0
    for i, p in enumerate(polygons):
        for j in spatial_index.query(p.polygon.bounds):
            if j > i and intersection_area(p.polygon, polygons[j].polygon) > 0:
                pairs += 1
    return pairs


def _fracture(polygons: List[FlatPolygon], layer: int, datatype: int) -> TrapezoidSet:
    invalid = [p.trace for p in polygons if not p.polygon.is_valid()]
    if invalid:
        raise FractureError(
            f"Layer ({layer}, {datatype}) has {len(invalid)} invalid polygons:", invalid
        )
    traps: List[Trapezoid] = []
    area2 = cuts = 0
    for p in polygons:
        pieces = decompose_trapezoids(p.polygon)
        slabs = _slab_count(p.polygon)
        drift = abs(sum(t.area2 for t in pieces) - p.polygon.area2)
        if drift > 2 * slabs:
            logger.warning("Fracture of %s moved the area by %d/2 nm².", p.trace, drift)
        traps.extend(pieces)
        area2 += p.polygon.area2
        cuts += slabs
    doubles = _double_exposures(polygons)
    if doubles:
        logger.warning(
            "Layer (%d, %d): %d overlapping polygon pairs will be exposed twice.",
            layer, datatype, doubles,
        )
    return TrapezoidSet(layer, datatype, tuple(traps), len(polygons), area2, cuts, doubles)


def fracture_layer(flat: FlatLayout, layer: int, datatype: int) -> TrapezoidSet:
    """Decompose every polygon of a layer into horizontal trapezoids.

    Parameters
    ----------
    flat :
        The flat layout.
    layer, datatype :
        The layer to fracture.

    Returns
    -------
    trapezoids :
        The trapezoids of all polygons, polygon by polygon. Polygons are not
        merged first: overlaps stay and are counted in `double_exposures`.

    Raises
    ------
    FractureError
        If the layer is empty or holds self-intersecting or degenerate polygons,
        which are named by provenance.

    Examples
    --------
    >>> from qflow.gds import FlatLayout, FlatPolygon
    >>> from qflow.geometry import rectangle
    >>> flat = FlatLayout([FlatPolygon(1, 0, rectangle(0, 0, 10, 10), ("TOP", "#0"))])
    >>> fracture_layer(flat, 1, 0).shape_count
    1

    """
    polygons = flat.on_layer(layer, datatype)
    if not polygons:
        raise FractureError(f"Layer ({layer}, {datatype}) is not populated.")
    return _fracture(polygons, layer, datatype)


def mask_layers(flat: FlatLayout, stack: ProcessStack) -> List[Tuple[int, int]]:
    """Populated layers patterned by a lithographic step."""
    bindings = stack.bindings()
    return [
        pair for pair in flat.layers() if pair in bindings and bindings[pair].is_lithographic
    ]


def fracture_layers(
    flat: FlatLayout,
    layers: Optional[Sequence[Tuple[int, int]]] = None,
    n_jobs: Optional[int] = None,
    verbose: bool = False,
) -> List[TrapezoidSet]:
    """Fracture several layers, one job per layer.

    Parameters
    ----------
    flat :
        The flat layout.
    layers :
        (layer, datatype) pairs. Defaults to every populated layer.
    n_jobs :
        Number of workers, capped by `QFLOW_THREADS`.
    verbose :
        Show a progress bar.

    """
    by_layer = flat.by_layer()
    layers = list(layers) if layers is not None else flat.layers()
    missing = [pair for pair in layers if pair not in by_layer]
    if missing:
        raise FractureError(f"Layers not populated: {missing}.")
    sets = Parallel(n_jobs=resolve_n_jobs(n_jobs))(
        delayed(_fracture)(by_layer[pair], *pair)
        for pair in tqdm(layers, desc="Fracture", disable=not verbose)
    )
    for s in sets:
        logger.info(
            "Layer (%d, %d): %d polygons -> %d trapezoids.",
            s.layer, s.datatype, s.source_count, s.shape_count,
        )
    return list(sets)


def trap_name(layer: int, datatype: int) -> str:
    return f"{layer}_{datatype}.trap"


def write_trap(tset: TrapezoidSet, path: Union[str, PathLike]) -> Path:
    """Write a `.trap` file: header line then one sorted trapezoid per line."""
    path = Path(path)
    text = "\n".join([TRAP_HEADER.format(layer=tset.layer, datatype=tset.datatype)] + tset.lines())
    path.write_text(text + "\n", encoding="utf-8")
    return path


def read_trap(path: Union[str, PathLike]) -> TrapezoidSet:
    """Read a `.trap` file back. Source counts and areas are taken from the trapezoids."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FractureError(f"{path} is empty.")
    fields = dict(item.split("=", 1) for item in lines[0].split()[2:] if "=" in item)
    if not lines[0].startswith("TRAP v1") or fields.get("dbu") != "1nm":
        raise FractureError(f"{path} does not start with a TRAP v1 header.")
    try:
        layer, datatype = int(fields["layer"]), int(fields["datatype"])
        traps = tuple(Trapezoid(*(int(v) for v in line.split())) for line in lines[1:] if line)
    except (KeyError, TypeError, ValueError) as err:
        raise FractureError(f"Malformed trapezoid file {path}.") from err
    area2 = sum(t.area2 for t in traps)
    return TrapezoidSet(layer, datatype, traps, len(traps), area2, 0)


############
# Reticles #
############


class ReticleData(NamedTuple):
    reticle_id: str
    layers: Tuple[Tuple[int, int], ...]
    field_size_um: Tuple[float, float]
    trap_files: Tuple[str, ...]
    shape_count: int
    checksum: str
    step_order: Optional[int] = None
    step_name: str = ""

    def to_dict(self) -> dict:
        return {
            "reticle_id": self.reticle_id,
            "layers": [list(pair) for pair in self.layers],
            "field_size_um": list(self.field_size_um),
            "trap_files": list(self.trap_files),
            "shape_count": self.shape_count,
            "checksum": self.checksum,
            "step_order": self.step_order,
            "step_name": self.step_name,
        }


def exposure_field(flat: FlatLayout, pdk: PdkRuleSet, margin_nm: int = 0) -> Rect:
    """Single-die exposure field: chip outline bounds plus a margin."""
    outline = [p for p in flat.polygons if (p.layer, p.datatype) == pdk.outline_layer]
    bounds = Rect.bounding(p.polygon.bounds for p in outline) or flat.bounds
    if bounds is None:
        raise ReticleError("An empty layout has no exposure field.")
    return bounds.expand(margin_nm)


def build_reticles(
    sets: Sequence[TrapezoidSet], field: Rect, stack: Optional[ProcessStack] = None
) -> List[ReticleData]:
    """One reticle per populated process step.

    Every (layer, datatype) bound to the same step is exposed through the same
    reticle, so the M1 ground plane and the M1 resonators share one mask.

    Parameters
    ----------
    sets :
        Fractured layers.
    field :
        Exposure field in nm. Every trapezoid must lie inside it.
    stack :
        The process stack binding layers to steps. Without it, every populated
        (layer, datatype) gets its own reticle.

    Returns
    -------
    reticles :
        Ordered by process step. The checksum of a reticle is the digest of the
        merged trapezoid multiset of its layers.

    Raises
    ------
    ReticleError
        If a trapezoid leaves the field or a layer is given twice.

    """
    bindings = stack.bindings() if stack else {}
    groups: Dict[Tuple[int, ...], List[TrapezoidSet]] = {}
    seen = set()
    for s in sorted(sets, key=lambda s: (s.layer, s.datatype)):
        pair = (s.layer, s.datatype)
        if pair in seen:
            raise ReticleError(f"Layer {pair} fractured twice.")
        seen.add(pair)
        if not s.trapezoids:
            logger.info("Layer %s has no geometry, no reticle.", pair)
            continue
        outside = [t for t in s.trapezoids if not field.contains(t.bounds)]
        if outside:
            raise ReticleError(
                f"{len(outside)} shapes of layer {pair} leave the exposure field {tuple(field)}, "
                f"first at {tuple(outside[0].bounds)}."
            )
        step = bindings.get(pair)
        key = (0, step.step_order) if step else (1,) + pair
        groups.setdefault(key, []).append(s)

    reticles = []
    for key, members in sorted(groups.items()):
        layers = tuple((s.layer, s.datatype) for s in members)
        step = bindings.get(layers[0])
        reticles.append(
            ReticleData(
                f"RET_S{step.step_order}" if step else f"RET_{layers[0][0]}_{layers[0][1]}",
                layers,
                (field.width / 1000, field.height / 1000),
                tuple(f"mask/{trap_name(*pair)}" for pair in layers),
                sum(s.shape_count for s in members),
                sha256_lines(line for s in members for line in s.lines()),
                step.step_order if step else None,
                step.name if step else "",
            )
        )
    if stack is not None:
        for pair, step in sorted(bindings.items()):
            if step.is_lithographic and pair not in seen:
                logger.info("No geometry on %s (%s).", pair, step.name)
        populated = {r.step_order for r in reticles}
        for step in stack.layers:
            if step.is_lithographic and step.step_order not in populated:
                logger.info("Step %r has no geometry: no reticle.", step.name)
    logger.info("%d reticles built.", len(reticles))
    return reticles


############
# Job deck #
############


class JobDeckEntry(NamedTuple):
    reticle_id: str
    layers: Tuple[Tuple[int, int], ...]
    step_order: int
    step_name: str
    lithography: str
    exposure_dose: float
    dose_unit: str
    focus_offset_nm: float
    alignment_strategy: str
    step_pitch_mm: Tuple[float, float]
    site_count: int
    site_list: str = "wafer_plan.json#/sites"
    trap_files: Tuple[str, ...] = ()


class JobDeck(NamedTuple):
    entries: Tuple[JobDeckEntry, ...]
    step_pitch_mm: Tuple[float, float]
    grid_offset_mm: Tuple[float, float]
    site_count: int

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "step_pitch_mm": list(self.step_pitch_mm),
            "grid_offset_mm": list(self.grid_offset_mm),
            "site_count": self.site_count,
            "entries": [
                {
                    **e._asdict(),
                    "layers": [list(pair) for pair in e.layers],
                    "step_pitch_mm": list(e.step_pitch_mm),
                    "trap_files": list(e.trap_files),
                }
                for e in self.entries
            ],
        }

    def to_json(self) -> str:
        return to_json(self.to_dict())


def build_job_deck(
    plan: WaferPlan,
    reticles: Sequence[ReticleData],
    stack: ProcessStack,
    exposure: Optional[Dict[int, ExposureDefaults]] = None,
) -> JobDeck:
    """Exposure job deck stepping every reticle over the wafer plan.

    Parameters
    ----------
    plan :
        The wafer plan; its pitch is the stepping pitch and its sites the site list.
    reticles :
        The reticles, one per populated lithographic step.
    stack :
        The process stack giving lithography kind and exposure defaults.
    exposure :
        Exposure settings by step order, overriding the stack defaults.

    Raises
    ------
    JobDeckError
        If a reticle has no lithographic step or spans several steps, or if its
        step has no exposure settings or a non-positive dose.

    """
    exposure = exposure or {}
    entries = []
    for r in reticles:
        steps = [stack.layer_for(*pair) for pair in r.layers]
        orders = {s.step_order if s is not None else None for s in steps}
        if len(orders) != 1:
            raise JobDeckError(f"Reticle {r.reticle_id} spans {len(orders)} process steps.")
        step = steps[0]
        if step is None or not step.is_lithographic:
            raise JobDeckError(f"Reticle {r.reticle_id} is not bound to a lithographic step.")
        settings = exposure.get(step.step_order, step.exposure)
        if settings is None:
            raise JobDeckError(f"Step {step.name!r} has no exposure defaults.")
        if not settings.dose > 0:
            raise JobDeckError(f"Step {step.name!r} has a non-positive dose {settings.dose}.")
        entries.append(
            JobDeckEntry(
                r.reticle_id,
                r.layers,
                step.step_order,
                step.name,
                step.lithography,
                float(settings.dose),
                DOSE_UNITS[step.lithography],
                float(settings.focus_offset_nm),
                settings.alignment_strategy,
                plan.pitch_mm,
                plan.die_count,
                trap_files=r.trap_files,
            )
        )
    entries.sort(key=lambda e: (e.step_order, e.layers))
    return JobDeck(tuple(entries), plan.pitch_mm, plan.grid_offset_mm, plan.die_count)


##################
# Tape-out gate #
##################


class TapeoutCheck(NamedTuple):
    id: str
    name: str
    passed: bool
    details: str = ""


class TapeoutReport(NamedTuple):
    checks: Tuple[TapeoutCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> List[TapeoutCheck]:
        return [c for c in self.checks if not c.passed]

    def check(self, check_id: str) -> TapeoutCheck:
        for c in self.checks:
            if c.id == check_id:
                return c
        raise KeyError(f"No tape-out check {check_id}.")

    def to_dict(self) -> dict:
        return {"overall": "pass" if self.ok else "fail", "checks": [c._asdict() for c in self.checks]}

    def to_json(self) -> str:
        return to_json(self.to_dict())

    def to_text(self) -> str:
        rows = [[c.id, c.name, "pass" if c.passed else "FAIL", c.details] for c in self.checks]
        table = tabulate(rows, headers=["Check", "Name", "Result", "Details"], tablefmt="rst")
        return f"{table}\nTape-out: {'pass' if self.ok else 'fail'}\n"


def _examples(items: Sequence[str], n: int = 3) -> str:
    shown = ", ".join(items[:n])
    return shown + (f" and {len(items) - n} more" if len(items) > n else "")


def tapeout_check(
    layout: Layout, flat: Optional[FlatLayout], pdk: PdkRuleSet
) -> TapeoutReport:
    """The seven tape-out compliance checks.

    ======  ===========================================================
    T1      grid alignment: no vertex left the 1 nm grid when flattening
    T2      flattenability: acyclic, at most 16 levels, flatten succeeds
    T3      bounding-box integrity: functional geometry inside the outline
    T4      no zero-area polygon
    T5      layer whitelist: every populated layer is in the layer map
    T6      no self-intersecting polygon
    T7      units: 1 nm database unit, user unit of the deck
    ======  ===========================================================

    Parameters
    ----------
    layout :
        The hierarchical layout.
    flat :
        Its flat expansion, computed here when `None`.
    pdk :
        The rule deck.

    Returns
    -------
    report :
        Always seven entries. Failures are recorded, never raised.

    """
    checks = []

    # T2 first, the other checks need the flat layout
    problems = []
    cycle = layout.find_cycle()
    if cycle:
        problems.append("cycle " + " -> ".join(cycle))
    else:
        depth = layout.depth()
        if depth > MAX_DEPTH:
            problems.append(f"depth {depth} > {MAX_DEPTH}")
        if flat is None:
            try:
                flat = flatten(layout)
            except (LayoutError, ValueError) as err:
                problems.append(f"flatten failed: {err}")
    t2 = TapeoutCheck("T2", "hierarchy flattening", not problems, "; ".join(problems))

    if flat is None:
        flat = FlatLayout([])
        missing = "not evaluated, layout does not flatten"
        t1 = TapeoutCheck("T1", "nanometer-grid alignment", False, missing)
        t3 = TapeoutCheck("T3", "bounding-box integrity", False, missing)
    else:
        t1 = TapeoutCheck(
            "T1",
            "nanometer-grid alignment",
            flat.snapped == 0,
            f"{flat.snapped} vertices off grid" if flat.snapped else "",
        )
        t3 = _bounding_box_check(flat, pdk)
    checks.extend([t1, t2, t3])

    degenerate = [p.trace for p in flat.polygons if p.polygon.area2 == 0]
    checks.append(
        TapeoutCheck(
            "T4",
            "no degenerate polygons",
            not degenerate,
            f"{len(degenerate)} zero-area: {_examples(degenerate)}" if degenerate else "",
        )
    )

    mapped = {lp.pair for lp in pdk.layer_map}
    unknown = [pair for pair in flat.layers() if pair not in mapped]
    checks.append(
        TapeoutCheck(
            "T5",
            "layer whitelist",
            not unknown,
            "unmapped " + ", ".join(f"({l},{d})" for l, d in unknown) if unknown else "",
        )
    )

    crossing = [
        p.trace for p in flat.polygons if p.polygon.area2 > 0 and not p.polygon.is_simple()
    ]
    checks.append(
        TapeoutCheck(
            "T6",
            "no self-intersections",
            not crossing,
            f"{len(crossing)} self-intersecting: {_examples(crossing)}" if crossing else "",
        )
    )

    units = []
    if layout.db_unit_nm != 1 or pdk.db_unit_nm != 1:
        units.append(f"database unit {layout.db_unit_nm} nm")
    if not math.isclose(layout.user_unit, pdk.user_unit, rel_tol=1e-9):
        units.append(f"user unit {layout.user_unit:g} m, deck expects {pdk.user_unit:g} m")
    checks.append(TapeoutCheck("T7", "units consistency", not units, "; ".join(units)))

    report = TapeoutReport(tuple(checks))
    for c in report.failed():
        logger.warning("Tape-out %s (%s) failed: %s", c.id, c.name, c.details)
    return report


def _bounding_box_check(flat: FlatLayout, pdk: PdkRuleSet) -> TapeoutCheck:
    name = "bounding-box integrity"
    outline = flat.on_layer(*pdk.outline_layer)
    if len(outline) != 1:
        return TapeoutCheck("T3", name, False, f"expected one chip outline, found {len(outline)}")
    shape = outline[0].polygon
    box = shape.bounds
    rectangular = shape.is_rectilinear and len(shape) == 4
    region = None if rectangular else shape.to_shapely()
    purposes = {lp.pair: lp.purpose for lp in pdk.layer_map}
    outside = []
    for p in flat.polygons:
        purpose = purposes.get((p.layer, p.datatype))
        if purpose in NON_FUNCTIONAL:
            continue
        inside = box.contains(p.polygon.bounds)
        if inside and region is not None:
            inside = region.covers(p.polygon.to_shapely())
        if not inside:
            outside.append(p.trace)
    return TapeoutCheck(
        "T3",
        name,
        not outside,
        f"{len(outside)} polygons outside the outline: {_examples(outside)}" if outside else "",
    )


###########
# Package #
###########


class FoundryPackage(NamedTuple):
    path: Path
    manifest: dict

    @property
    def files(self) -> List[str]:
        out = []
        for entry in self.manifest["entries"]:
            out.extend(f["path"] for f in entry.get("files", [entry]) if f.get("path"))
        return sorted(out)


def _file_entry(root: Path, relative: str, kind: str) -> dict:
    path = root / relative
    return {"path": relative, "kind": kind, "sha256": sha256_file(path), "bytes": path.stat().st_size}


def _manifest_digest(entries: List[dict]) -> str:
    return sha256_lines([to_json(e) for e in entries])


def _gate(drc: ViolationReport, tapeout: TapeoutReport, waiver: Optional[str]) -> Optional[dict]:
    if drc.ok and not drc.errors and tapeout.ok:
        return None
    reasons = []
    if drc.violations:
        v = drc.violations[0]
        reasons.append(
            f"{len(drc.violations)} DRC violations (first: {v.rule_id} at "
            f"({v.location.xmin}, {v.location.ymin}) nm, {v.message})"
        )
    if drc.errors:
        reasons.append(f"DRC incomplete ({'; '.join(drc.errors)})")
    for c in tapeout.failed():
        reasons.append(f"tape-out {c.id} failed ({c.details})")
    if not waiver:
        raise GateError("Package refused: " + "; ".join(reasons) + ".")
    logger.warning("Gate waived (%s): %s", waiver, "; ".join(reasons))
    return {
        "note": waiver,
        "violations": len(drc.violations),
        "drc_errors": list(drc.errors),
        "failed_checks": [c.id for c in tapeout.failed()],
    }


def export_package(
    out: Union[str, PathLike],
    layout: Layout,
    wafer_layout: Layout,
    drc: ViolationReport,
    tapeout: TapeoutReport,
    step_plan: StepPlan,
    plan: WaferPlan,
    sets: Sequence[TrapezoidSet],
    job_deck: JobDeck,
    waiver: Optional[str] = None,
    overwrite: bool = False,
) -> FoundryPackage:
    """Write the foundry submission package.

    The package is assembled in a temporary sibling directory, its checksums
    re-read and verified, then renamed to `out`. Nothing is left on disk when the
    gate or a write fails.

    Parameters
    ----------
    out :
        Package directory.
    layout, wafer_layout :
        Die and wafer layouts.
    drc, tapeout :
        The verification reports. The package is refused unless the DRC report is
        clean and complete (no rule skipped, no polygon excluded) and every
        tape-out check passes.
    step_plan, plan, sets, job_deck :
        Process mapping table, wafer plan, fractured layers and job deck.
    waiver :
        Note that lets a failing design through. It is recorded in the manifest.
    overwrite :
        Replace an existing package directory.

    Returns
    -------
    package :
        Path and manifest. The manifest lists nine entries: the eight artefacts
        (the mask entry lists its trap files) and the manifest digest.

    Raises
    ------
    GateError
        If the gate fails without a waiver.
    FileExistsError
        If `out` exists and `overwrite` is `False`.

    """
    waived = _gate(drc, tapeout, waiver)
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise FileExistsError(f"{out} already exists.")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
    try:
        (tmp / "layout.gds").write_bytes(write_gds(layout))
        (tmp / "wafer.gds").write_bytes(write_gds(wafer_layout))
        (tmp / "drc_report.json").write_text(drc.to_json(), encoding="utf-8")
        (tmp / "tapeout_report.json").write_text(tapeout.to_json(), encoding="utf-8")
        step_plan.to_csv(tmp / "step_plan.csv")
        plan.save(tmp / "wafer_plan.json")
        (tmp / "mask").mkdir()
        for s in sorted(sets, key=lambda s: (s.layer, s.datatype)):
            write_trap(s, tmp / "mask" / trap_name(s.layer, s.datatype))
        (tmp / "jobdeck.json").write_text(job_deck.to_json(), encoding="utf-8")

        entries = [
            _file_entry(tmp, "layout.gds", "layout"),
            _file_entry(tmp, "wafer.gds", "wafer_layout"),
            _file_entry(tmp, "drc_report.json", "drc_report"),
            _file_entry(tmp, "tapeout_report.json", "tapeout_report"),
            _file_entry(tmp, "step_plan.csv", "step_plan"),
            _file_entry(tmp, "wafer_plan.json", "wafer_plan"),
        ]
        traps = [
            _file_entry(tmp, f"mask/{p.name}", "trapezoids")
            for p in sorted((tmp / "mask").iterdir())
        ]
        entries.append(
            {
                "path": "mask",
                "kind": "mask_data",
                "files": traps,
                "sha256": sha256_lines(f"{t['path']} {t['sha256']}" for t in traps),
            }
        )
        entries.append(_file_entry(tmp, "jobdeck.json", "jobdeck"))
        entries.append({"path": "manifest.json", "kind": "manifest", "sha256": _manifest_digest(entries)})
        manifest = {"format": PACKAGE_FORMAT, "entries": entries, "waiver": waived}
        (tmp / "manifest.json").write_text(to_json(manifest), encoding="utf-8")

        problems = verify_package(tmp)
        if problems:
            raise GateError("Package verification failed: " + "; ".join(problems))
        if out.exists():
            shutil.rmtree(out)
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    logger.info("Foundry package written to %s.", out)
    return FoundryPackage(out, manifest)


def verify_package(path: Union[str, PathLike]) -> List[str]:
    """Re-read a package and compare every file with its manifest checksum.

    Returns
    -------
    problems :
        One message per missing or altered file. Empty for a sound package.

    """
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as err:
        return [f"manifest.json unreadable: {err}"]
    problems = []
    entries = manifest.get("entries", [])
    listed_entries = {e.get("path") for e in entries}
    problems.extend(f"{name} not in manifest" for name in PACKAGE_FILES if name not in listed_entries)
    files = [f for e in entries for f in e.get("files", [e]) if e.get("kind") != "manifest"]
    for f in files:
        target = root / f["path"]
        if not target.is_file():
            problems.append(f"{f['path']} missing")
        elif sha256_file(target) != f["sha256"]:
            problems.append(f"{f['path']} checksum mismatch")
    listed = {f["path"] for f in files}
    if root.joinpath("mask").is_dir():
        for p in sorted(root.joinpath("mask").iterdir()):
            if f"mask/{p.name}" not in listed:
                problems.append(f"mask/{p.name} not in manifest")
    own = [e for e in entries if e.get("kind") == "manifest"]
    if len(own) != 1 or own[0]["sha256"] != _manifest_digest(
        [e for e in entries if e.get("kind") != "manifest"]
    ):
        problems.append("manifest digest mismatch")
    return problems
