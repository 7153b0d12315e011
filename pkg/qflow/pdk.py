# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

"""Process design kit: rule decks, layer map, alignment and process stack."""

import json
import logging
from enum import Enum
from os import PathLike
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import pkg_resources  # type: ignore
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SHIPPED_DECKS = ("qeda", "cmc")

# Alignment accuracy (3 sigma) by lithography when a deck omits it.
DEFAULT_SIGMA_NM = {"optical": 500, "ebeam": 50}


class PdkError(ValueError):
    """Schema violation in a PDK document.

    Parameters
    ----------
    message :
        What went wrong.
    path :
        Dotted path of the offending field (e.g. `"rules.4.threshold_nm"`).

    """

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class Purpose(str, Enum):
    ground = "ground"
    cpw_conductor = "cpw_conductor"
    jj_bottom = "jj_bottom"
    jj_top = "jj_top"
    jj_lead = "jj_lead"
    airbridge_pad = "airbridge_pad"
    airbridge_span = "airbridge_span"
    wiring = "wiring"
    chip_outline = "chip_outline"
    scribe = "scribe"
    text = "text"


# Purposes that carry no functional metal.
NON_FUNCTIONAL = (Purpose.chip_outline, Purpose.scribe, Purpose.text)


class RuleKind(str, Enum):
    spacing_between_purposes = "spacing_between_purposes"
    min_width = "min_width"
    overlap_margin = "overlap_margin"
    range_span = "range_span"
    min_pad = "min_pad"
    edge_clearance = "edge_clearance"
    same_layer_spacing = "same_layer_spacing"
    continuity = "continuity"


# Rule identifiers are bound to one kind each.
RULE_KINDS = {
    "R1": RuleKind.spacing_between_purposes,
    "R2": RuleKind.min_width,
    "R3": RuleKind.overlap_margin,
    "R4": RuleKind.min_width,
    "R5": RuleKind.range_span,
    "R6": RuleKind.min_pad,
    "R7": RuleKind.edge_clearance,
    "R8": RuleKind.same_layer_spacing,
    "R9": RuleKind.continuity,
}


class _Model(BaseModel):
    model_config = ConfigDict(extra="allow", frozen=True)


class LayerPurpose(_Model):
    gds_layer: int = Field(ge=0, le=255)
    gds_datatype: int = Field(ge=0, le=255)
    purpose: Purpose

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.gds_layer, self.gds_datatype)


class RuleSpec(_Model):
    """One DRC rule.

    `threshold_nm` is a single value, except for `range_span` rules which take a
    `[min, max]` range. Ground continuity also reads `slot_max_nm`, the widest gap
    between facing ground edges still examined as a slot.

    """

    id: str
    kind: RuleKind
    purposes: List[Purpose] = Field(min_length=1)
    threshold_nm: Union[int, List[int]]
    enabled: bool = True
    slot_max_nm: Optional[int] = None
    description: str = ""

    @model_validator(mode="after")
    def _check(self) -> "RuleSpec":
        if self.id not in RULE_KINDS:
            raise ValueError(f"Unknown rule id {self.id!r}, expected R1 to R9.")
        if RULE_KINDS[self.id] != self.kind:
            raise ValueError(
                f"{self.id} must be a {RULE_KINDS[self.id].value} rule, got {self.kind.value}."
            )
        values = self.threshold_nm if isinstance(self.threshold_nm, list) else [self.threshold_nm]
        if self.kind == RuleKind.range_span:
            if not isinstance(self.threshold_nm, list) or len(self.threshold_nm) != 2:
                raise ValueError(f"{self.id} (range_span) needs a [min, max] threshold range.")
            if self.threshold_nm[0] > self.threshold_nm[1]:
                raise ValueError(f"{self.id} range minimum exceeds its maximum.")
        elif isinstance(self.threshold_nm, list):
            raise ValueError(f"{self.id} takes a single threshold value.")
        if any(v <= 0 for v in values):
            raise ValueError(f"{self.id} thresholds must be positive.")
        if self.slot_max_nm is not None and self.slot_max_nm <= 0:
            raise ValueError(f"{self.id} slot_max_nm must be positive.")
        return self

    @property
    def threshold(self) -> int:
        """Single threshold (lower bound of the range for `range_span`)."""
        if isinstance(self.threshold_nm, list):
            return self.threshold_nm[0]
        return self.threshold_nm

    @property
    def threshold_range(self) -> Tuple[int, int]:
        if isinstance(self.threshold_nm, list):
            return (self.threshold_nm[0], self.threshold_nm[1])
        return (self.threshold_nm, self.threshold_nm)


class AlignmentSpec(_Model):
    """Registration between two purposes, `layer_pair[0]` aligned to `layer_pair[1]`."""

    layer_pair: Tuple[Purpose, Purpose]
    lithography: str = Field(pattern="^(optical|ebeam)$")
    sigma_align_nm: int = Field(gt=0)
    o_design_nm: Optional[int] = Field(default=None, gt=0)

    @model_validator(mode="before")
    @classmethod
    def _default_sigma(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("sigma_align_nm") is None:
            lithography = data.get("lithography")
            if lithography in DEFAULT_SIGMA_NM:
                data = {**data, "sigma_align_nm": DEFAULT_SIGMA_NM[lithography]}
        return data


class ExposureDefaults(_Model):
    """Exposure settings of a lithographic step, in the dose unit of its lithography."""

    dose: float
    focus_offset_nm: float = 0.0
    alignment_strategy: str = ""


class ProcessLayer(_Model):
    step_order: int = Field(ge=0)
    name: str
    material: str = Field(pattern="^(sapphire|Nb|Al|AlOx|HR-Si)$")
    thickness_nm: Tuple[float, float]
    lithography: str = Field(pattern="^(none|optical|ebeam|oxidation)$")
    function: str = ""
    gds_bindings: List[Tuple[int, int]] = Field(default_factory=list)
    exposure: Optional[ExposureDefaults] = None

    @field_validator("thickness_nm")
    @classmethod
    def _ordered(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if value[0] <= 0 or value[0] > value[1]:
            raise ValueError("thickness range must be positive with min <= max.")
        return value

    @property
    def gds_binding(self) -> Optional[Tuple[int, int]]:
        """Primary (layer, datatype) of the step."""
        return self.gds_bindings[0] if self.gds_bindings else None

    @property
    def is_lithographic(self) -> bool:
        return self.lithography in ("optical", "ebeam")


class ProcessStack(_Model):
    layers: List[ProcessLayer]
    substrate_permittivity: float = Field(default=10.0, gt=0)

    @field_validator("layers")
    @classmethod
    def _check_layers(cls, layers: List[ProcessLayer]) -> List[ProcessLayer]:
        orders = sorted(p.step_order for p in layers)
        if orders != list(range(len(layers))):
            raise ValueError("step_order must be unique and contiguous from 0.")
        substrates = [p for p in layers if p.lithography == "none"]
        if len(substrates) != 1 or substrates[0].step_order != 0:
            raise ValueError("The stack needs exactly one substrate (lithography none) at step 0.")
        seen: Dict[Tuple[int, int], str] = {}
        for p in layers:
            for binding in p.gds_bindings:
                if binding in seen:
                    raise ValueError(
                        f"GDS binding {tuple(binding)} used by both {seen[binding]!r} and {p.name!r}."
                    )
                seen[binding] = p.name
        return sorted(layers, key=lambda p: p.step_order)

    @property
    def substrate(self) -> ProcessLayer:
        return self.layers[0]

    def layer_for(self, layer: int, datatype: int) -> Optional[ProcessLayer]:
        """Process step bound to a (layer, datatype) pair."""
        for p in self.layers:
            if (layer, datatype) in p.gds_bindings:
                return p
        return None

    def bindings(self) -> Dict[Tuple[int, int], ProcessLayer]:
        return {b: p for p in self.layers for b in p.gds_bindings}


class PdkRuleSet(_Model):
    """Rule deck with its layer map and alignment table.

    A rule may name a purpose the layer map does not bind; :py:func:`validate_pdk`
    reports it and :py:func:`qflow.drc.run_drc` skips the rule.

    """

    name: str
    rules: List[RuleSpec]
    layer_map: List[LayerPurpose]
    alignment: List[AlignmentSpec] = Field(default_factory=list)
    source: str = ""
    user_unit: float = Field(default=1e-6, gt=0)
    db_unit_nm: int = Field(default=1, ge=1)

    @field_validator("layer_map")
    @classmethod
    def _check_layer_map(cls, layer_map: List[LayerPurpose]) -> List[LayerPurpose]:
        pairs = [lp.pair for lp in layer_map]
        duplicated = sorted({p for p in pairs if pairs.count(p) > 1})
        if duplicated:
            raise ValueError(f"(layer, datatype) pairs bound twice: {duplicated}.")
        outlines = [lp for lp in layer_map if lp.purpose == Purpose.chip_outline]
        if len(outlines) != 1:
            raise ValueError(f"chip_outline must map to exactly one pair, got {len(outlines)}.")
        return layer_map

    @field_validator("rules")
    @classmethod
    def _unique_ids(cls, rules: List[RuleSpec]) -> List[RuleSpec]:
        ids = [r.id for r in rules]
        for rule_id in ids:
            if ids.count(rule_id) > 1:
                raise ValueError(f"Duplicate rule id {rule_id}.")
        return sorted(rules, key=lambda r: int(r.id[1:]))

    def rule(self, rule_id: str) -> RuleSpec:
        for r in self.rules:
            if r.id == rule_id:
                return r
        raise KeyError(f"Rule {rule_id} is not defined in deck {self.name!r}.")

    def has_rule(self, rule_id: str) -> bool:
        return any(r.id == rule_id for r in self.rules)

    def enabled_rules(self) -> List[RuleSpec]:
        return [r for r in self.rules if r.enabled]

    def layers_for(self, purpose: Union[Purpose, str]) -> List[Tuple[int, int]]:
        purpose = Purpose(purpose)
        return sorted(lp.pair for lp in self.layer_map if lp.purpose == purpose)

    def purpose_of(self, layer: int, datatype: int) -> Optional[Purpose]:
        for lp in self.layer_map:
            if lp.pair == (layer, datatype):
                return lp.purpose
        return None

    @property
    def outline_layer(self) -> Tuple[int, int]:
        return self.layers_for(Purpose.chip_outline)[0]

    def alignment_for(self, purpose: Union[Purpose, str]) -> List[AlignmentSpec]:
        """Alignment specs that register `purpose` to an earlier layer."""
        purpose = Purpose(purpose)
        return [a for a in self.alignment if a.layer_pair[0] == purpose]


class PdkDocument(_Model):
    schema_version: int
    name: str
    layer_map: List[LayerPurpose]
    rules: List[RuleSpec]
    alignment: List[AlignmentSpec] = Field(default_factory=list)
    stack: List[ProcessLayer]
    substrate_permittivity: float = 10.0
    source: str = ""
    user_unit: float = 1e-6
    db_unit_nm: int = 1

    @field_validator("schema_version")
    @classmethod
    def _supported(cls, value: int) -> int:
        if value > SCHEMA_VERSION:
            raise ValueError(f"Schema version {value} is newer than supported ({SCHEMA_VERSION}).")
        return value


class PdkReport(BaseModel):
    """Cross-check result of a deck and a stack. Gaps are blocking, notes are not."""

    gaps: List[str] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.gaps


def _warn_extra(model: BaseModel, path: str = ""):
    for key in sorted(model.model_extra or {}):
        logger.warning("Unknown PDK field %s ignored.", f"{path}{key}")
    for name in type(model).model_fields:
        value = getattr(model, name)
        if isinstance(value, BaseModel):
            _warn_extra(value, f"{path}{name}.")
        elif isinstance(value, list):
            for i, item in enumerate(value):
                if isinstance(item, BaseModel):
                    _warn_extra(item, f"{path}{name}.{i}.")


def _error_path(err: ValidationError) -> str:
    first = err.errors()[0]
    return ".".join(str(part) for part in first["loc"])


def shipped_deck_path(name: str) -> Path:
    """Path of a deck shipped with the package (`"qeda"` or `"cmc"`)."""
    return Path(pkg_resources.resource_filename("qflow", f"pdks/{name}.json"))


def load_pdk(
    document: Union[str, PathLike, Dict[str, Any]]
) -> Tuple[PdkRuleSet, ProcessStack]:
    """Load and validate a PDK document.

    Parameters
    ----------
    document :
        The name of a shipped deck (`"qeda"` or `"cmc"`), a path to a JSON file, a
        JSON string or an already parsed dictionary.

    Returns
    -------
    pdk :
        The rule deck with its layer map and alignment table.
    stack :
        The process stack.

    Raises
    ------
    PdkError
        If the document is not valid JSON or breaks the schema. The error carries the
        path of the offending field.

    Notes
    -----
    Unknown fields are logged as warnings and ignored. Optional fields take their
    defaults (alignment accuracy 500 nm for optical and 50 nm for e-beam
    lithography, substrate permittivity 10).

    Examples
    --------
    >>> from qflow.pdk import load_pdk
    >>> pdk, stack = load_pdk("qeda")
    >>> pdk.rule("R1").threshold
    3000

    """
    if isinstance(document, dict):
        data = document
    else:
        text = str(document)
        if text in SHIPPED_DECKS:
            path: Optional[Path] = shipped_deck_path(text)
        elif isinstance(document, PathLike) or not text.lstrip().startswith("{"):
            path = Path(document)
        else:
            path = None
        try:
            raw = path.read_text(encoding="utf-8") if path is not None else text
            data = json.loads(raw)
        except OSError as err:
            raise PdkError(f"Cannot read PDK document: {err}") from err
        except json.JSONDecodeError as err:
            raise PdkError(f"Invalid JSON at line {err.lineno}: {err.msg}") from err
    if not isinstance(data, dict):
        raise PdkError("A PDK document must be a JSON object.")
    if "schema_version" not in data:
        raise PdkError("Missing field.", "schema_version")

    try:
        doc = PdkDocument.model_validate(data)
        pdk = PdkRuleSet(
            name=doc.name,
            rules=doc.rules,
            layer_map=doc.layer_map,
            alignment=doc.alignment,
            source=doc.source,
            user_unit=doc.user_unit,
            db_unit_nm=doc.db_unit_nm,
        )
        stack = ProcessStack(layers=doc.stack, substrate_permittivity=doc.substrate_permittivity)
    except ValidationError as err:
        messages = "; ".join(
            f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in err.errors()
        )
        raise PdkError(messages, _error_path(err)) from err

    _warn_extra(doc)
    logger.info(
        "Loaded PDK %r: %d rules, %d layers, %d process steps.",
        pdk.name, len(pdk.rules), len(pdk.layer_map), len(stack.layers),
    )
    return pdk, stack


def validate_pdk(pdk: PdkRuleSet, stack: ProcessStack) -> PdkReport:
    """Cross-check a deck against a process stack.

    Parameters
    ----------
    pdk :
        The rule deck.
    stack :
        The process stack.

    Returns
    -------
    report :
        `gaps` lists enabled rules binding a purpose without any layer and
        lithographic steps without alignment spec. `notes` lists lithographic steps
        whose layers no enabled rule checks (for example airbridges in a deck without
        airbridge rules).

    """
    report = PdkReport()
    for rule in pdk.enabled_rules():
        missing = [p.value for p in rule.purposes if not pdk.layers_for(p)]
        if missing:
            report.gaps.append(
                f"{rule.id}: purpose {', '.join(missing)} has no layer in the layer map"
            )

    checked = {p for r in pdk.enabled_rules() for p in r.purposes}
    for step in stack.layers:
        if not step.is_lithographic:
            continue
        purposes = [pdk.purpose_of(*b) for b in step.gds_bindings]
        purposes = [p for p in purposes if p is not None]
        if not any(pdk.alignment_for(p) for p in purposes):
            report.gaps.append(f"{step.name}: no alignment spec for a {step.lithography} step")
        if purposes and not checked.intersection(purposes):
            report.notes.append(
                f"{step.name}: layers {[p.value for p in purposes]} are not checked by any enabled rule"
            )
    return report
