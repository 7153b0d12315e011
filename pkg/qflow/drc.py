# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

"""Quantum-specific design rule checks over a flat layout."""

import json
import logging
import time
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from tabulate import tabulate  # type: ignore

from qflow.gds import FlatLayout, FlatPolygon
from qflow.geometry import (
    OVERLAP,
    Polygon,
    Rect,
    boundary_distance,
    build_index,
    intersection_area,
    min_spacing,
    min_width,
    point_in_polygon,
    rectangle,
)
from qflow.pdk import NON_FUNCTIONAL, PdkRuleSet, Purpose, RuleKind, RuleSpec
from qflow.utils import resolve_n_jobs

logger = logging.getLogger(__name__)

# Relative overlap-area change tolerated under misalignment (1 ppm).
OVERLAP_RTOL_PPM = 1


class Violation(NamedTuple):
    """A single rule failure.

    `measured` and `required` are in nm, except for ground connectivity (number of
    ground components against 1) and JJ overlap margin (area deviation in ppm).

    """

    rule_id: str
    location: Rect
    measured: int
    required: int
    subjects: Tuple[str, ...]
    message: str

    def sort_key(self) -> tuple:
        return (int(self.rule_id[1:]), self.location.xmin, self.location.ymin, self.subjects)

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "location": list(self.location),
            "measured": self.measured,
            "required": self.required,
            "subjects": list(self.subjects),
            "message": self.message,
        }


class RuleResult(NamedTuple):
    rule_id: str
    violations: List[Violation]
    checks: int
    candidates: int


class ViolationReport:
    """Outcome of a DRC run.

    Parameters
    ----------
    violations :
        The failures, sorted on `(rule, location.xmin, location.ymin, subjects)`.
    stats :
        Per-rule `{"checks": n, "failed": k}`.
    errors :
        Report-level problems (rules skipped for missing layers, bad outlines).
    candidate_pairs_examined :
        Polygon pairs returned by the spatial queries (or enumerated in brute-force
        mode) over all rules. It depends on the search mode; every other field of
        the report is the same in both modes.
    deck :
        Name of the rule deck.
    elapsed :
        Wall time in seconds. Not part of the serialised report.

    """

    def __init__(
        self,
        violations: List[Violation],
        stats: Dict[str, Dict[str, int]],
        errors: Optional[List[str]] = None,
        candidate_pairs_examined: int = 0,
        deck: str = "",
        elapsed: float = 0.0,
    ):
        self.violations = sorted(violations, key=Violation.sort_key)
        self.stats = {k: stats[k] for k in sorted(stats, key=lambda r: int(r[1:]))}
        self.errors = sorted(errors or [])
        self.candidate_pairs_examined = candidate_pairs_examined
        self.deck = deck
        self.elapsed = elapsed

    @property
    def total_checks(self) -> int:
        return sum(s["checks"] for s in self.stats.values())

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, rule_id: Optional[str] = None) -> int:
        if rule_id is None:
            return len(self.violations)
        return sum(1 for v in self.violations if v.rule_id == rule_id)

    def to_dict(self) -> dict:
        return {
            "deck": self.deck,
            "summary": {
                "violations": len(self.violations),
                "checks": self.total_checks,
                "candidate_pairs_examined": self.candidate_pairs_examined,
                "ok": self.ok,
            },
            "stats": self.stats,
            "errors": self.errors,
            "violations": [v.to_dict() for v in self.violations],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        """Aligned-column rendering for the console."""
        stats = tabulate(
            [[rule, s["checks"], s["failed"]] for rule, s in self.stats.items()],
            headers=["Rule", "Checks", "Failed"],
            tablefmt="rst",
        )
        lines = [f"DRC report ({self.deck})", "", stats, ""]
        if self.violations:
            rows = [
                [
                    v.rule_id,
                    f"({v.location.xmin / 1000:.3f}, {v.location.ymin / 1000:.3f})",
                    v.measured,
                    v.required,
                    v.message,
                ]
                for v in self.violations
            ]
            lines.append(
                tabulate(
                    rows,
                    headers=["Rule", "Location (um)", "Measured", "Required", "Message"],
                    tablefmt="rst",
                )
            )
        else:
            lines.append("No violation.")
        for error in self.errors:
            lines.append(f"Error: {error}")
        lines.append(
            f"{len(self.violations)} violations, {self.total_checks} checks, "
            f"{self.candidate_pairs_examined} candidate pairs."
        )
        return "\n".join(lines) + "\n"

    def __repr__(self) -> str:
        return f"ViolationReport(violations={len(self.violations)}, checks={self.total_checks})"


###########
# Helpers #
###########


def _candidate_pairs(
    a: Sequence[FlatPolygon],
    b: Optional[Sequence[FlatPolygon]],
    margin: int,
    use_index: bool,
) -> Tuple[List[Tuple[int, int]], int]:
    """Pairs whose boxes grown by `margin` intersect.

    With `b=None` the pairs are taken within `a`, as `(i, j)` with `i < j`. Returns
    the sorted pairs and the number of pairs examined to find them.

    """
    same = b is None
    others = a if same else b
    pairs: List[Tuple[int, int]] = []
    examined = 0
    if use_index:
        spatial_index = build_index((j, p.polygon.bounds) for j, p in enumerate(others))
        for i, p in enumerate(a):
            hits = spatial_index.query(p.polygon.bounds.expand(margin))
            for j in hits:
                if same and j == i:
                    continue
                examined += 1
                if not same or i < j:
                    pairs.append((i, j))
    else:
        for i, p in enumerate(a):
            box = p.polygon.bounds.expand(margin)
            for j in range(i + 1 if same else 0, len(others)):
                examined += 1
                if box.intersects(others[j].polygon.bounds):
                    pairs.append((i, j))
    return sorted(pairs), examined


def _gap_box(ra: Rect, rb: Rect) -> Rect:
    """Box spanning the gap between two boxes (their overlap where they overlap)."""
    x0, x1 = sorted((max(ra.xmin, rb.xmin), min(ra.xmax, rb.xmax)))
    y0, y1 = sorted((max(ra.ymin, rb.ymin), min(ra.ymax, rb.ymax)))
    return Rect(x0, y0, x1, y1)


def shifted_overlap_areas(bottom: Polygon, top: Polygon, tol_nm: int) -> List[int]:
    """Overlap area of `bottom` and `top` for every shift of `top` in {-tol, 0, +tol}².

    The nominal (unshifted) area comes first, the eight other shifts follow in
    lexicographic order. For rectilinear electrodes the extrema over the whole
    misalignment box are reached on this grid.

    """
    shifts = [(0, 0)] + [
        (dx, dy)
        for dx in (-tol_nm, 0, tol_nm)
        for dy in (-tol_nm, 0, tol_nm)
        if (dx, dy) != (0, 0)
    ]
    return [intersection_area(bottom, top, shift) for shift in shifts]


#########
# Rules #
#########


def check_width(
    polygons: Sequence[FlatPolygon],
    threshold: int,
    rule_id: str = "R2",
    pad: bool = False,
) -> RuleResult:
    """Minimum width of every polygon (R2, R4) or pad size (R6).

    Parameters
    ----------
    polygons :
        Polygons of the checked purpose.
    threshold :
        Minimum width in nm. A polygon exactly at the threshold passes.
    rule_id :
        Rule identifier reported in the violations.
    pad :
        Also require the bounding box to be at least `threshold` on both sides and
        report the smaller of the width and the short side.

    """
    violations = []
    for p in polygons:
        width = min_width(p.polygon)
        bounds = p.polygon.bounds
        measured = min(width, bounds.width, bounds.height) if pad else width
        if measured < threshold:
            what = "pad size" if pad else "width"
            violations.append(
                Violation(
                    rule_id,
                    bounds,
                    measured,
                    threshold,
                    (p.trace,),
                    f"{what} {measured} nm below {threshold} nm",
                )
            )
    return RuleResult(rule_id, violations, len(polygons), 0)


def check_spacing(
    a: Sequence[FlatPolygon],
    b: Optional[Sequence[FlatPolygon]],
    threshold: int,
    rule_id: str = "R1",
    use_index: bool = True,
) -> RuleResult:
    """Spacing between two polygon sets (R1) or within one set (R8, `b=None`).

    Touching or overlapping polygons are treated as connected and never fail. A
    separation exactly at the threshold passes.

    """
    pairs, examined = _candidate_pairs(a, b, threshold, use_index)
    others = a if b is None else b
    violations = []
    for i, j in pairs:
        pa, pb = a[i], others[j]
        d = min_spacing(pa.polygon, pb.polygon)
        if d == OVERLAP or d == 0 or d >= threshold:
            continue
        subjects = (pa.trace, pb.trace) if b is not None else tuple(sorted((pa.trace, pb.trace)))
        violations.append(
            Violation(
                rule_id,
                _gap_box(pa.polygon.bounds, pb.polygon.bounds),
                d,
                threshold,
                subjects,
                f"spacing {d} nm below {threshold} nm",
            )
        )
    return RuleResult(rule_id, violations, len(pairs), examined)


def check_jj_overlap_margin(
    bottoms: Sequence[FlatPolygon],
    tops: Sequence[FlatPolygon],
    tol_nm: int,
    rule_id: str = "R3",
    use_index: bool = True,
) -> RuleResult:
    """Overlap area of each junction must not change under ±`tol_nm` misalignment.

    Every intersecting (bottom, top) pair is one check. The pair fails when the
    spread of the nine shifted overlap areas exceeds 1 ppm of the nominal area; the
    violation reports the largest relative deviation from nominal in ppm.

    """
    pairs, examined = _candidate_pairs(bottoms, tops, 0, use_index)
    violations = []
    checks = 0
    for i, j in pairs:
        bottom, top = bottoms[i], tops[j]
        areas = shifted_overlap_areas(bottom.polygon, top.polygon, tol_nm)
        nominal = areas[0]
        if nominal <= 0:
            continue
        checks += 1
        if (max(areas) - min(areas)) * 1_000_000 <= nominal * OVERLAP_RTOL_PPM:
            continue
        deviation = max(abs(a - nominal) for a in areas)
        ppm = -(-deviation * 1_000_000 // nominal)
        violations.append(
            Violation(
                rule_id,
                _gap_box(bottom.polygon.bounds, top.polygon.bounds),
                ppm,
                OVERLAP_RTOL_PPM,
                (bottom.trace, top.trace),
                f"junction area changes by {ppm / 1e4:.2f}% under {tol_nm} nm misalignment",
            )
        )
    return RuleResult(rule_id, violations, checks, examined)


def check_airbridge(
    spans: Sequence[FlatPolygon],
    pads: Sequence[FlatPolygon],
    span_range: Tuple[int, int],
    rule_id: str = "R5",
    use_index: bool = True,
) -> RuleResult:
    """Each bridge must land on exactly two pads spaced within `span_range`.

    The span length is the spacing between the two pads the bridge touches.

    """
    lo, hi = span_range
    pairs, examined = _candidate_pairs(spans, pads, 0, use_index)
    touching: Dict[int, List[int]] = {i: [] for i in range(len(spans))}
    for i, j in pairs:
        if min_spacing(spans[i].polygon, pads[j].polygon) <= 0:
            touching[i].append(j)
    violations = []
    for i, span in enumerate(spans):
        landed = touching[i]
        bounds = span.polygon.bounds
        if len(landed) != 2:
            violations.append(
                Violation(
                    rule_id,
                    bounds,
                    len(landed),
                    2,
                    (span.trace,) + tuple(pads[j].trace for j in landed),
                    "dangling bridge" if len(landed) < 2 else "bridge lands on more than two pads",
                )
            )
            continue
        p1, p2 = pads[landed[0]], pads[landed[1]]
        length = max(0, min_spacing(p1.polygon, p2.polygon))
        if lo <= length <= hi:
            continue
        violations.append(
            Violation(
                rule_id,
                bounds,
                length,
                lo if length < lo else hi,
                (span.trace, p1.trace, p2.trace),
                f"span {length} nm outside [{lo}, {hi}] nm",
            )
        )
    return RuleResult(rule_id, violations, len(spans), examined)


def check_edge_clearance(
    outline: FlatPolygon,
    polygons: Sequence[FlatPolygon],
    threshold: int,
    rule_id: str = "R7",
) -> RuleResult:
    """Every functional polygon lies inside the outline, `threshold` away from its edge.

    Polygons crossing or outside the outline are reported with a distance of 0.

    """
    violations = []
    for p in polygons:
        d = boundary_distance(p.polygon, outline.polygon)
        x, y = p.polygon.vertices[0]
        if d > 0 and point_in_polygon(x, y, outline.polygon) != 1:
            d = 0
        if d >= threshold:
            continue
        violations.append(
            Violation(
                rule_id,
                p.polygon.bounds,
                d,
                threshold,
                (p.trace,),
                f"{d} nm from the chip edge, {threshold} nm required"
                if d
                else "geometry crosses or lies outside the chip outline",
            )
        )
    return RuleResult(rule_id, violations, len(polygons), 0)


def _axis_edges(p: Polygon) -> List[Tuple[str, int, int, int, int]]:
    """Axis-aligned edges as `(axis, position, low, high, outward sign)`."""
    xy = p.vertices
    out = []
    for k in range(len(xy)):
        x0, y0 = (int(v) for v in xy[k])
        x1, y1 = (int(v) for v in xy[(k + 1) % len(xy)])
        if y0 == y1 and x0 != x1:
            # counterclockwise ring: interior on the left
            out.append(("h", y0, min(x0, x1), max(x0, x1), -1 if x1 > x0 else 1))
        elif x0 == x1 and y0 != y1:
            out.append(("v", x0, min(y0, y1), max(y0, y1), 1 if y1 > y0 else -1))
    return out


def _slots(
    grounds: Sequence[FlatPolygon], slot_max: int, min_length: int, use_index: bool
) -> Tuple[List[Tuple[Rect, int, int, int]], int]:
    """Gaps between facing ground edges longer than `min_length`.

    Returns `(slot box, length, i, j)` tuples, where the edge of polygon `i` faces
    the edge of polygon `j`, and the number of pairs examined.

    """
    edges = [_axis_edges(g.polygon) for g in grounds]
    pairs, examined = _candidate_pairs(grounds, None, slot_max, use_index)
    ordered = [(i, i) for i in range(len(grounds))] + pairs + [(j, i) for i, j in pairs]
    slots = []
    for i, j in sorted(ordered):
        for axis, pos, lo, hi, sign in edges[i]:
            if sign != 1:
                continue
            for axis2, pos2, lo2, hi2, sign2 in edges[j]:
                if axis2 != axis or sign2 != -1 or not 0 < pos2 - pos <= slot_max:
                    continue
                length = min(hi, hi2) - max(lo, lo2)
                if length <= min_length:
                    continue
                if axis == "h":
                    box = Rect(max(lo, lo2), pos, min(hi, hi2), pos2)
                else:
                    box = Rect(pos, max(lo, lo2), pos2, min(hi, hi2))
                slots.append((box, length, i, j))
    return slots, examined


def check_ground_continuity(
    grounds: Sequence[FlatPolygon],
    spans: Sequence[FlatPolygon],
    max_gap: int,
    slot_max: int = 100_000,
    rule_id: str = "R9",
    use_index: bool = True,
) -> RuleResult:
    """Ground connectivity and bridged slots.

    Ground polygons that touch or overlap form components; every component beyond
    the largest one is reported. Two facing axis-aligned ground edges closer than
    `slot_max` define a slot when the box between them holds no ground; a slot
    whose facing length exceeds `max_gap` must be crossed by an airbridge span.

    Parameters
    ----------
    grounds :
        Ground polygons.
    spans :
        Airbridge span polygons.
    max_gap :
        Longest unbridged slot, in nm.
    slot_max :
        Widest separation still examined as a slot, in nm. Defaults to 100 um.

    Notes
    -----
    Slanted edges never form slots. A slot box partially filled with other ground is
    skipped, so the slot check errs on the permissive side for such shapes.

    """
    violations: List[Violation] = []
    n = len(grounds)
    if n == 0:
        return RuleResult(rule_id, [], 0, 0)

    pairs, examined = _candidate_pairs(grounds, None, 0, use_index)
    touching = [
        (i, j) for i, j in pairs if min_spacing(grounds[i].polygon, grounds[j].polygon) <= 0
    ]
    rows = np.array([i for i, _ in touching], dtype=np.int64)
    cols = np.array([j for _, j in touching], dtype=np.int64)
    graph = coo_matrix((np.ones(len(touching)), (rows, cols)), shape=(n, n))
    n_components, labels = connected_components(graph, directed=False)
    checks = n_components
    if n_components > 1:
        members: Dict[int, List[int]] = {}
        for k, label in enumerate(labels):
            members.setdefault(int(label), []).append(k)
        groups = sorted(
            members.values(),
            key=lambda ks: (
                -sum(grounds[k].polygon.area2 for k in ks),
                min(grounds[k].polygon.bounds for k in ks),
            ),
        )
        for island in groups[1:]:
            violations.append(
                Violation(
                    rule_id,
                    Rect.bounding(grounds[k].polygon.bounds for k in island),
                    n_components,
                    1,
                    tuple(sorted(grounds[k].trace for k in island)),
                    "ground island disconnected from the main ground plane",
                )
            )

    slots, slot_examined = _slots(grounds, slot_max, max_gap, use_index)
    examined += slot_examined
    ground_index = build_index((k, g.polygon.bounds) for k, g in enumerate(grounds))
    span_index = build_index((k, s.polygon.bounds) for k, s in enumerate(spans))
    for box, length, i, j in slots:
        region = rectangle(*box)
        if any(
            intersection_area(region, grounds[k].polygon) > 0 for k in ground_index.query(box)
        ):
            continue
        checks += 1
        hits = span_index.query(box) if use_index else range(len(spans))
        if any(intersection_area(region, spans[k].polygon) > 0 for k in hits):
            continue
        violations.append(
            Violation(
                rule_id,
                box,
                length,
                max_gap,
                tuple(sorted({grounds[i].trace, grounds[j].trace})),
                f"unbridged ground slot {length} nm long",
            )
        )
    return RuleResult(rule_id, violations, checks, examined)


##########
# Engine #
##########


def group_by_purpose(flat: FlatLayout, pdk: PdkRuleSet) -> Dict[Purpose, List[FlatPolygon]]:
    """Valid polygons of each mapped purpose, in flat order."""
    groups: Dict[Purpose, List[FlatPolygon]] = {p: [] for p in Purpose}
    purposes = {lp.pair: lp.purpose for lp in pdk.layer_map}
    for p in flat.polygons:
        purpose = purposes.get((p.layer, p.datatype))
        if purpose is not None and p.polygon.is_valid():
            groups[purpose].append(p)
    return groups


def _run_rule(
    rule: RuleSpec, groups: Dict[Purpose, List[FlatPolygon]], use_index: bool
) -> RuleResult:
    kind = rule.kind
    first = groups[rule.purposes[0]]
    if kind == RuleKind.min_width:
        return check_width(first, rule.threshold, rule.id)
    if kind == RuleKind.min_pad:
        return check_width(first, rule.threshold, rule.id, pad=True)
    if kind == RuleKind.spacing_between_purposes:
        return check_spacing(first, groups[rule.purposes[1]], rule.threshold, rule.id, use_index)
    if kind == RuleKind.same_layer_spacing:
        parts = [check_spacing(groups[p], None, rule.threshold, rule.id, use_index) for p in rule.purposes]
        return RuleResult(
            rule.id,
            [v for r in parts for v in r.violations],
            sum(r.checks for r in parts),
            sum(r.candidates for r in parts),
        )
    if kind == RuleKind.overlap_margin:
        return check_jj_overlap_margin(first, groups[rule.purposes[1]], rule.threshold, rule.id, use_index)
    if kind == RuleKind.range_span:
        return check_airbridge(first, groups[rule.purposes[1]], rule.threshold_range, rule.id, use_index)
    if kind == RuleKind.edge_clearance:
        functional = [
            p for purpose, polys in groups.items() if purpose not in NON_FUNCTIONAL for p in polys
        ]
        return check_edge_clearance(first[0], functional, rule.threshold, rule.id)
    if kind == RuleKind.continuity:
        spans = groups[rule.purposes[1]] if len(rule.purposes) > 1 else []
        return check_ground_continuity(
            first, spans, rule.threshold, rule.slot_max_nm or 100_000, rule.id, use_index
        )
    raise ValueError(f"Unknown rule kind {kind}.")


def run_drc(
    flat: FlatLayout,
    pdk: PdkRuleSet,
    n_jobs: Optional[int] = None,
    use_index: bool = True,
) -> ViolationReport:
    """Run every enabled rule of a deck over a flat layout.

    Parameters
    ----------
    flat :
        The flat layout.
    pdk :
        The rule deck.
    n_jobs :
        Rules evaluated in parallel. Defaults to `1`, capped by `QFLOW_THREADS`.
    use_index :
        Find candidate pairs with the R-tree (default). `False` enumerates all
        pairs, which is the reference used to validate the index.

    Returns
    -------
    report :
        The violations in canonical order. The report does not depend on `n_jobs`.

    Notes
    -----
    Checks are counted per polygon for width, pad and edge rules, per candidate
    pair for spacing rules, per overlapping junction for the overlap margin, per
    bridge for the span rule and per component plus per slot for ground continuity.
    A rule whose purposes have no layer is skipped with a report-level error.

    Examples
    --------
    >>> from qflow.chipgen import ChipSpec, generate_chip
    >>> from qflow.gds import flatten
    >>> from qflow.pdk import load_pdk
    >>> pdk, stack = load_pdk("qeda")
    >>> layout, census = generate_chip(ChipSpec(qubit_count=4), stack)
    >>> run_drc(flatten(layout), pdk).ok
    True

    """
    start = time.perf_counter()
    groups = group_by_purpose(flat, pdk)
    invalid = len(flat.invalid())
    errors: List[str] = []
    if invalid:
        errors.append(f"{invalid} invalid polygons excluded from the checks")

    rules = []
    for rule in pdk.enabled_rules():
        missing = [p.value for p in rule.purposes if not pdk.layers_for(p)]
        if missing:
            errors.append(f"{rule.id} skipped: purpose {', '.join(missing)} has no layer")
            continue
        if rule.kind == RuleKind.edge_clearance and len(groups[Purpose.chip_outline]) != 1:
            errors.append(
                f"{rule.id} skipped: expected one chip outline, "
                f"found {len(groups[Purpose.chip_outline])}"
            )
            continue
        rules.append(rule)

    n_jobs = resolve_n_jobs(n_jobs)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_run_rule)(rule, groups, use_index) for rule in rules
    )
    violations = [v for r in results for v in r.violations]
    stats = {r.rule_id: {"checks": r.checks, "failed": len(r.violations)} for r in results}
    report = ViolationReport(
        violations,
        stats,
        errors,
        sum(r.candidates for r in results),
        pdk.name,
        time.perf_counter() - start,
    )
    for error in report.errors:
        logger.error(error)
    logger.info(
        "DRC %s: %d violations over %d checks in %.3f s.",
        pdk.name, len(report.violations), report.total_checks, report.elapsed,
    )
    return report


def candidates_per_polygon(report: ViolationReport, flat: FlatLayout) -> float:
    """Candidate pairs examined per flat polygon, the quantity that stays bounded
    when the engine scales linearly."""
    return report.candidate_pairs_examined / max(1, len(flat))


def report_from_dict(data: dict) -> ViolationReport:
    """Rebuild a report from its serialised form."""
    violations = [
        Violation(
            v["rule_id"],
            Rect(*v["location"]),
            v["measured"],
            v["required"],
            tuple(v["subjects"]),
            v["message"],
        )
        for v in data["violations"]
    ]
    return ViolationReport(
        violations,
        data["stats"],
        data.get("errors", []),
        data["summary"]["candidate_pairs_examined"],
        data.get("deck", ""),
    )
