# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

"""GDSII stream reading, writing and hierarchy flattening."""

import logging
import math
import struct
from os import PathLike
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Set, Tuple, Union

import numpy as np

from qflow.geometry import Point, Polygon, Rect, path_to_polygon

logger = logging.getLogger(__name__)

# Record type codes (high byte of the GDSII tag).
RECORDS = {
    "HEADER": 0x00,
    "BGNLIB": 0x01,
    "LIBNAME": 0x02,
    "UNITS": 0x03,
    "ENDLIB": 0x04,
    "BGNSTR": 0x05,
    "STRNAME": 0x06,
    "ENDSTR": 0x07,
    "BOUNDARY": 0x08,
    "PATH": 0x09,
    "SREF": 0x0A,
    "AREF": 0x0B,
    "TEXT": 0x0C,
    "LAYER": 0x0D,
    "DATATYPE": 0x0E,
    "WIDTH": 0x0F,
    "XY": 0x10,
    "ENDEL": 0x11,
    "SNAME": 0x12,
    "COLROW": 0x13,
    "NODE": 0x15,
    "TEXTTYPE": 0x16,
    "PRESENTATION": 0x17,
    "STRING": 0x19,
    "STRANS": 0x1A,
    "MAG": 0x1B,
    "ANGLE": 0x1C,
    "PATHTYPE": 0x21,
    "ELFLAGS": 0x26,
    "PROPATTR": 0x2B,
    "PROPVALUE": 0x2C,
    "BOX": 0x2D,
    "BOXTYPE": 0x2E,
}
RECORD_NAMES = {v: k for k, v in RECORDS.items()}

# Data type codes (low byte of the tag).
NO_DATA, BIT_ARRAY, INT16, INT32, REAL8, ASCII = 0, 1, 2, 3, 5, 6

PATHTYPES = {0: "flush", 1: "round", 2: "extend"}
PATHTYPE_CODES = {v: k for k, v in PATHTYPES.items()}

STRANS_REFLECT = 0x8000
MAX_DEPTH = 16
_FIXED_DATE = (2000, 1, 1, 0, 0, 0)


class GdsFormatError(ValueError):
    """Malformed or inconsistent GDSII stream.

    Parameters
    ----------
    message :
        What went wrong.
    offset :
        Byte offset of the offending record.

    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class LayoutError(ValueError):
    """Layout that breaks a structural invariant."""


class Element(NamedTuple):
    """Drawn element of a cell: `"boundary"`, `"path"` or `"text"`."""

    kind: str
    layer: int
    datatype: int
    coords: Tuple[Tuple[int, int], ...]
    width: int = 0
    endcap: str = "flush"
    text: str = ""


class ArraySpec(NamedTuple):
    columns: int
    rows: int
    column_step: Point
    row_step: Point


class CellRef(NamedTuple):
    """Placement of a cell inside another one.

    The child is mirrored about the x axis (if `reflection`), rotated
    counterclockwise by `rotation` degrees, scaled by `magnification` and finally
    moved to `translation`. Arrays repeat the placement on a `columns` x `rows`
    lattice.

    """

    target: str
    translation: Point = Point(0, 0)
    rotation: float = 0.0
    reflection: bool = False
    magnification: float = 1.0
    array: Optional[ArraySpec] = None


class Cell(NamedTuple):
    name: str
    elements: Tuple[Element, ...] = ()
    references: Tuple[CellRef, ...] = ()


def boundary(layer: int, datatype: int, polygon: Polygon) -> Element:
    """Boundary element from a polygon."""
    return Element(
        "boundary", layer, datatype, tuple((int(x), int(y)) for x, y in polygon.vertices)
    )


class Layout:
    """Hierarchical GDSII library.

    Parameters
    ----------
    library_name :
        The library name.
    cells :
        The cells, in file order. Names must be unique.
    top_cell :
        Name of the top cell. Defaults to the single unreferenced cell (the one with
        the deepest hierarchy, then the last one, when several are unreferenced).
    db_unit_nm :
        Nanometers per database unit of the source stream. Coordinates are always
        held in nm.
    user_unit :
        Meters per user unit. Defaults to `1e-6`.
    validate :
        Check names, references and acyclicity. Defaults to `True`.

    Raises
    ------
    LayoutError
        If an invariant is broken and `validate` is `True`.

    """

    def __init__(
        self,
        library_name: str,
        cells: List[Cell],
        top_cell: Optional[str] = None,
        db_unit_nm: int = 1,
        user_unit: float = 1e-6,
        validate: bool = True,
    ):
        self.library_name = library_name
        self.cells: Tuple[Cell, ...] = tuple(cells)
        self.db_unit_nm = int(db_unit_nm)
        self.user_unit = float(user_unit)
        self._by_name: Dict[str, Cell] = {c.name: c for c in self.cells}
        if validate:
            self.validate()
        self.top_cell = top_cell if top_cell is not None else self._guess_top()
        if validate and self.top_cell not in self._by_name:
            raise LayoutError(f"Top cell {self.top_cell!r} is not in the library.")

    def validate(self):
        if self.db_unit_nm < 1:
            raise LayoutError("The database unit must be at least 1 nm.")
        if len(self._by_name) != len(self.cells):
            seen: Set[str] = set()
            for c in self.cells:
                if c.name in seen:
                    raise LayoutError(f"Duplicate cell name {c.name!r}.")
                seen.add(c.name)
        for c in self.cells:
            if not c.name:
                raise LayoutError("Cell names cannot be empty.")
            for ref in c.references:
                if ref.target not in self._by_name:
                    raise LayoutError(
                        f"Cell {c.name!r} references undefined cell {ref.target!r}."
                    )
                if ref.array is not None and (ref.array.columns < 1 or ref.array.rows < 1):
                    raise LayoutError(f"Array reference in {c.name!r} has no element.")
        cycle = self.find_cycle()
        if cycle:
            raise LayoutError("Cyclic reference: " + " -> ".join(cycle))

    def cell(self, name: str) -> Cell:
        try:
            return self._by_name[name]
        except KeyError as err:
            raise KeyError(f"No cell named {name!r} in library {self.library_name!r}.") from err

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def cell_names(self) -> List[str]:
        return [c.name for c in self.cells]

    def children(self, name: str) -> List[str]:
        return [r.target for r in self._by_name[name].references if r.target in self._by_name]

    def find_cycle(self) -> Optional[List[str]]:
        """A reference cycle as a list of cell names, or `None`."""
        state: Dict[str, int] = {}
        stack: List[str] = []

        def visit(name: str) -> Optional[List[str]]:
            state[name] = 1
            stack.append(name)
            for child in self.children(name):
                if state.get(child) == 1:
                    return stack[stack.index(child):] + [child]
                if child not in state:
                    found = visit(child)
                    if found:
                        return found
            stack.pop()
            state[name] = 2
            return None

        for c in self.cells:
            if c.name not in state:
                found = visit(c.name)
                if found:
                    return found
        return None

    def depth(self, name: Optional[str] = None) -> int:
        """Number of hierarchy levels below and including `name`."""
        memo: Dict[str, int] = {}

        def walk(n: str, trail: Tuple[str, ...]) -> int:
            if n in trail:
                raise LayoutError("Cyclic reference: " + " -> ".join(trail + (n,)))
            if n not in memo:
                kids = self.children(n)
                memo[n] = 1 + max((walk(k, trail + (n,)) for k in kids), default=0)
            return memo[n]

        return walk(name or self.top_cell, ())

    def _guess_top(self) -> str:
        if not self.cells:
            raise LayoutError("A layout needs at least one cell.")
        referenced = {r.target for c in self.cells for r in c.references}
        roots = [c.name for c in self.cells if c.name not in referenced]
        if not roots:
            return self.cells[-1].name
        if len(roots) > 1:
            logger.info("Several unreferenced cells %s, picking the deepest.", roots)
        return max(reversed(roots), key=lambda n: self.depth(n))

    def polygon_count(self) -> int:
        """Boundary and path elements over the whole library (not expanded)."""
        return sum(1 for c in self.cells for e in c.elements if e.kind != "text")

    def semantically_equal(self, other: "Layout") -> bool:
        """Same cells, element multisets and transforms."""
        if not isinstance(other, Layout):
            return False
        if (
            self.library_name != other.library_name
            or self.db_unit_nm != other.db_unit_nm
            or not math.isclose(self.user_unit, other.user_unit, rel_tol=1e-12)
            or self.top_cell != other.top_cell
            or set(self._by_name) != set(other._by_name)
        ):
            return False
        for name, cell in self._by_name.items():
            theirs = other._by_name[name]
            if sorted(cell.elements) != sorted(theirs.elements):
                return False
            if sorted(map(_ref_key, cell.references)) != sorted(
                map(_ref_key, theirs.references)
            ):
                return False
        return True

    def __repr__(self) -> str:
        return (
            f"Layout({self.library_name!r}, cells={len(self.cells)}, "
            f"top={self.top_cell!r}, db_unit_nm={self.db_unit_nm})"
        )


def _ref_key(ref: CellRef) -> tuple:
    return (
        ref.target,
        tuple(ref.translation),
        round(ref.rotation % 360.0, 9),
        bool(ref.reflection),
        round(ref.magnification, 12),
        tuple(ref.array) if ref.array else (),
    )


#############
# Real8 I/O #
#############


def _real8_decode(data: bytes) -> float:
    """IBM System/370 8-byte real to float."""
    sign = -1.0 if data[0] & 0x80 else 1.0
    exponent = (data[0] & 0x7F) - 64
    mantissa = int.from_bytes(data[1:8], "big")
    return sign * math.ldexp(mantissa, 4 * exponent - 56)


def _real8_encode(value: float) -> bytes:
    if value == 0:
        return bytes(8)
    sign = 0x80 if value < 0 else 0
    value = abs(value)
    exponent = 64
    while value >= 1:
        value /= 16
        exponent += 1
    while value < 1 / 16:
        value *= 16
        exponent -= 1
    mantissa = int(round(value * 2**56))
    if mantissa >= 2**56:
        mantissa //= 16
        exponent += 1
    return bytes([sign | exponent]) + mantissa.to_bytes(7, "big")


############
# Reading #
############


class _Record(NamedTuple):
    offset: int
    rtype: int
    dtype: int
    payload: bytes


def _records(data: bytes) -> Iterator[_Record]:
    pos = 0
    n = len(data)
    while pos < n:
        if n - pos < 4:
            raise GdsFormatError("Truncated record header", pos)
        length, rtype, dtype = struct.unpack(">HBB", data[pos : pos + 4])
        if length == 0 and rtype == 0:
            # zero padding after ENDLIB
            break
        if length < 4 or length % 2:
            raise GdsFormatError(f"Invalid record length {length}", pos)
        if pos + length > n:
            raise GdsFormatError(
                f"Truncated {RECORD_NAMES.get(rtype, hex(rtype))} record", pos
            )
        yield _Record(pos, rtype, dtype, data[pos + 4 : pos + length])
        pos += length


def _ints(rec: _Record, fmt: str) -> Tuple[int, ...]:
    size = struct.calcsize(fmt)
    if len(rec.payload) % size:
        raise GdsFormatError("Payload size does not match its data type", rec.offset)
    return struct.unpack(f">{len(rec.payload) // size}{fmt}", rec.payload)


def _ascii(rec: _Record) -> str:
    return rec.payload.rstrip(b"\x00").decode("ascii", errors="replace")


def _reals(rec: _Record) -> List[float]:
    if len(rec.payload) % 8:
        raise GdsFormatError("REAL8 payload size is not a multiple of 8", rec.offset)
    return [_real8_decode(rec.payload[i : i + 8]) for i in range(0, len(rec.payload), 8)]


def parse_gds(data: bytes, top: Optional[str] = None) -> Layout:
    """Parse a GDSII stream.

    Parameters
    ----------
    data :
        The stream content.
    top :
        Force the top cell. Defaults to the unreferenced cell.

    Returns
    -------
    layout :
        The library. Coordinates are converted to nm; a database unit that is not an
        integral number of nm is rejected.

    Raises
    ------
    GdsFormatError
        On truncated records, missing HEADER/UNITS/ENDLIB, non-integral units,
        references to undefined cells and cyclic references. The message carries the
        byte offset of the offending record.

    Notes
    -----
    BOUNDARY, PATH, TEXT, SREF and AREF are read. Other records (BOX, NODE,
    properties, plugin records) are skipped with a warning and are not written back.

    Examples
    --------
    >>> from qflow.gds import parse_gds, write_gds
    >>> layout = parse_gds(open("chip.gds", "rb").read())  # doctest: +SKIP
    >>> write_gds(layout) == open("chip.gds", "rb").read()  # doctest: +SKIP

    """
    library_name = ""
    db_unit_nm: Optional[int] = None
    user_unit = 1e-6
    cells: List[Cell] = []
    cell_offsets: Dict[str, int] = {}
    ref_offsets: List[Tuple[str, str, int]] = []
    seen_header = seen_endlib = False

    cell_name: Optional[str] = None
    cell_start = 0
    elements: List[Element] = []
    references: List[CellRef] = []
    el: Optional[dict] = None
    skipping = False
    last_offset = 0

    for rec in _records(data):
        last_offset = rec.offset
        name = RECORD_NAMES.get(rec.rtype)
        if not seen_header:
            if name != "HEADER":
                raise GdsFormatError("Stream does not start with HEADER", rec.offset)
            seen_header = True
            continue
        if name in ("BGNLIB", "PRESENTATION", "ELFLAGS", "PROPATTR", "PROPVALUE"):
            continue
        elif name == "LIBNAME":
            library_name = _ascii(rec)
        elif name == "UNITS":
            reals = _reals(rec)
            if len(reals) != 2 or reals[0] <= 0 or reals[1] <= 0:
                raise GdsFormatError("UNITS needs two positive reals", rec.offset)
            db_in_user, db_in_m = reals
            scaled = db_in_m * 1e9
            db_unit_nm = int(round(scaled))
            if db_unit_nm < 1 or abs(scaled - db_unit_nm) > 1e-6 * max(1.0, scaled):
                raise GdsFormatError(
                    f"Database unit of {db_in_m} m is not an integral number of nm",
                    rec.offset,
                )
            user_unit = db_in_m / db_in_user
        elif name == "BGNSTR":
            cell_start = rec.offset
            cell_name, elements, references = None, [], []
        elif name == "STRNAME":
            cell_name = _ascii(rec)
            cell_offsets[cell_name] = cell_start
        elif name == "ENDSTR":
            if cell_name is None:
                raise GdsFormatError("ENDSTR without structure name", rec.offset)
            cells.append(Cell(cell_name, tuple(elements), tuple(references)))
            cell_name = None
        elif name in ("BOUNDARY", "PATH", "SREF", "AREF", "TEXT"):
            el = {"kind": name, "offset": rec.offset}
            skipping = False
        elif name in ("BOX", "NODE"):
            logger.warning("Skipping unsupported %s element at byte %d.", name, rec.offset)
            el, skipping = None, True
        elif name == "ENDEL":
            if el is not None:
                if db_unit_nm is None:
                    raise GdsFormatError("Element found before UNITS", rec.offset)
                _close_element(el, db_unit_nm, elements, references, ref_offsets, cell_name)
            el, skipping = None, False
        elif name == "ENDLIB":
            seen_endlib = True
            break
        elif el is not None and name is not None:
            _element_field(el, name, rec)
        elif skipping and name is not None:
            continue
        else:
            logger.warning(
                "Skipping unsupported record 0x%02X at byte %d.", rec.rtype, rec.offset
            )

    if not seen_header:
        raise GdsFormatError("Missing HEADER record", 0)
    if db_unit_nm is None:
        raise GdsFormatError("Missing UNITS record", last_offset)
    if not seen_endlib:
        raise GdsFormatError("Missing ENDLIB record", len(data))

    names = {c.name for c in cells}
    for parent, target, offset in ref_offsets:
        if target not in names:
            raise GdsFormatError(f"Cell {parent!r} references undefined cell {target!r}", offset)
    layout = Layout(
        library_name, cells, top_cell=top, db_unit_nm=db_unit_nm, user_unit=user_unit,
        validate=False,
    )
    cycle = layout.find_cycle()
    if cycle:
        raise GdsFormatError("Cyclic reference " + " -> ".join(cycle), cell_offsets[cycle[0]])
    layout.validate()
    if layout.top_cell not in layout:
        raise GdsFormatError(f"Unknown top cell {layout.top_cell!r}", 0)
    return layout


def _element_field(el: dict, name: str, rec: _Record):
    if name in ("LAYER", "DATATYPE", "TEXTTYPE", "PATHTYPE"):
        value = _ints(rec, "h")[0]
        if name in ("LAYER", "DATATYPE", "TEXTTYPE") and not 0 <= value <= 255:
            raise GdsFormatError(f"{name} {value} outside 0-255", rec.offset)
        el["datatype" if name == "TEXTTYPE" else name.lower()] = value
    elif name == "WIDTH":
        el["width"] = abs(_ints(rec, "i")[0])
    elif name == "XY":
        xy = _ints(rec, "i")
        el["xy"] = [(xy[i], xy[i + 1]) for i in range(0, len(xy) - 1, 2)]
        el["xy_offset"] = rec.offset
    elif name == "SNAME":
        el["sname"] = _ascii(rec)
    elif name == "STRANS":
        el["strans"] = _ints(rec, "H")[0]
    elif name == "MAG":
        el["mag"] = _reals(rec)[0]
    elif name == "ANGLE":
        el["angle"] = _reals(rec)[0]
    elif name == "COLROW":
        el["colrow"] = _ints(rec, "h")[:2]
    elif name == "STRING":
        el["string"] = _ascii(rec)
    else:
        logger.warning("Ignoring %s record inside an element at byte %d.", name, rec.offset)


def _close_element(
    el: dict,
    db_unit_nm: int,
    elements: List[Element],
    references: List[CellRef],
    ref_offsets: List[Tuple[str, str, int]],
    cell_name: Optional[str],
):
    kind = el["kind"]
    offset = el["offset"]
    if "xy" not in el:
        raise GdsFormatError(f"{kind} without XY", offset)
    xy = [(x * db_unit_nm, y * db_unit_nm) for x, y in el["xy"]]
    if kind in ("BOUNDARY", "PATH", "TEXT") and "layer" not in el:
        raise GdsFormatError(f"{kind} without LAYER", offset)

    if kind == "BOUNDARY":
        if len(xy) > 1 and xy[0] == xy[-1]:
            xy = xy[:-1]
        if len(set(xy)) < 3:
            raise GdsFormatError("BOUNDARY needs at least 3 distinct vertices", offset)
        elements.append(Element("boundary", el["layer"], el.get("datatype", 0), tuple(xy)))
    elif kind == "PATH":
        width = el.get("width", 0) * db_unit_nm
        if len(xy) < 2 or width <= 0:
            raise GdsFormatError("PATH needs 2 points and a positive WIDTH", offset)
        code = el.get("pathtype", 0)
        if code not in PATHTYPES:
            logger.warning("Path type %d at byte %d read as flush.", code, offset)
        elements.append(
            Element(
                "path", el["layer"], el.get("datatype", 0), tuple(xy), width,
                PATHTYPES.get(code, "flush"),
            )
        )
    elif kind == "TEXT":
        elements.append(
            Element("text", el["layer"], el.get("datatype", 0), tuple(xy[:1]), text=el.get("string", ""))
        )
    else:
        if "sname" not in el:
            raise GdsFormatError(f"{kind} without SNAME", offset)
        strans = el.get("strans", 0)
        array = None
        if kind == "AREF":
            if "colrow" not in el or len(xy) != 3:
                raise GdsFormatError("AREF needs COLROW and 3 XY points", offset)
            cols, rows = el["colrow"]
            if cols < 1 or rows < 1:
                raise GdsFormatError("AREF with empty COLROW", offset)
            (x0, y0), (x1, y1), (x2, y2) = xy
            if (x1 - x0) % cols or (y1 - y0) % cols or (x2 - x0) % rows or (y2 - y0) % rows:
                raise GdsFormatError("AREF lattice is not on the database grid", offset)
            array = ArraySpec(
                cols, rows,
                Point((x1 - x0) // cols, (y1 - y0) // cols),
                Point((x2 - x0) // rows, (y2 - y0) // rows),
            )
        references.append(
            CellRef(
                el["sname"],
                Point(*xy[0]),
                float(el.get("angle", 0.0)),
                bool(strans & STRANS_REFLECT),
                float(el.get("mag", 1.0)),
                array,
            )
        )
        ref_offsets.append((cell_name or "", el["sname"], offset))


def read_gds(path: Union[str, PathLike], top: Optional[str] = None) -> Layout:
    """Read a GDSII file from disk."""
    return parse_gds(Path(path).read_bytes(), top=top)


###########
# Writing #
###########


def _record(name: str, dtype: int, payload: bytes = b"") -> bytes:
    if len(payload) % 2:
        payload += b"\x00"
    return struct.pack(">HBB", len(payload) + 4, RECORDS[name], dtype) + payload


def _int16(name: str, *values: int) -> bytes:
    return _record(name, INT16, struct.pack(f">{len(values)}h", *values))


def _string(name: str, value: str) -> bytes:
    return _record(name, ASCII, value.encode("ascii"))


def _xy(points: List[Tuple[int, int]], db_unit_nm: int) -> bytes:
    flat: List[int] = []
    for x, y in points:
        for v in (x, y):
            if v % db_unit_nm:
                raise LayoutError(f"Coordinate {v} nm is not on the {db_unit_nm} nm grid.")
            v //= db_unit_nm
            if not -(2**31) <= v < 2**31:
                raise LayoutError(f"Coordinate {v} overflows 32-bit database units.")
            flat.append(v)
    if len(flat) > 8190 * 2:
        raise LayoutError("Element has more than 8190 vertices.")
    return _record("XY", INT32, struct.pack(f">{len(flat)}i", *flat))


def write_gds(layout: Layout) -> bytes:
    """Serialise a layout to a GDSII stream.

    The output is deterministic: library and structure dates are fixed.

    Raises
    ------
    LayoutError
        If a coordinate overflows 32-bit signed database units.

    """
    db = layout.db_unit_nm
    db_in_m = db * 1e-9
    out = [
        _int16("HEADER", 600),
        _int16("BGNLIB", *(_FIXED_DATE * 2)),
        _string("LIBNAME", layout.library_name),
        _record("UNITS", REAL8, _real8_encode(db_in_m / layout.user_unit) + _real8_encode(db_in_m)),
    ]
    for cell in layout.cells:
        out.append(_int16("BGNSTR", *(_FIXED_DATE * 2)))
        out.append(_string("STRNAME", cell.name))
        for e in cell.elements:
            out.append(_write_element(e, db))
        for ref in cell.references:
            out.append(_write_reference(ref, db))
        out.append(_record("ENDSTR", NO_DATA))
    out.append(_record("ENDLIB", NO_DATA))
    return b"".join(out)


def _write_element(e: Element, db: int) -> bytes:
    parts: List[bytes] = []
    if e.kind == "boundary":
        parts += [_record("BOUNDARY", NO_DATA), _int16("LAYER", e.layer), _int16("DATATYPE", e.datatype)]
        parts.append(_xy(list(e.coords) + [e.coords[0]], db))
    elif e.kind == "path":
        parts += [_record("PATH", NO_DATA), _int16("LAYER", e.layer), _int16("DATATYPE", e.datatype)]
        parts.append(_int16("PATHTYPE", PATHTYPE_CODES[e.endcap]))
        if e.width % db:
            raise LayoutError(f"Path width {e.width} nm is not on the {db} nm grid.")
        parts.append(_record("WIDTH", INT32, struct.pack(">i", e.width // db)))
        parts.append(_xy(list(e.coords), db))
    elif e.kind == "text":
        parts += [_record("TEXT", NO_DATA), _int16("LAYER", e.layer), _int16("TEXTTYPE", e.datatype)]
        parts.append(_xy(list(e.coords), db))
        parts.append(_string("STRING", e.text))
    else:
        raise LayoutError(f"Unknown element kind {e.kind!r}.")
    parts.append(_record("ENDEL", NO_DATA))
    return b"".join(parts)


def _write_reference(ref: CellRef, db: int) -> bytes:
    parts = [_record("AREF" if ref.array else "SREF", NO_DATA), _string("SNAME", ref.target)]
    if ref.reflection or ref.magnification != 1.0 or ref.rotation != 0.0:
        parts.append(
            _record("STRANS", BIT_ARRAY, struct.pack(">H", STRANS_REFLECT if ref.reflection else 0))
        )
        if ref.magnification != 1.0:
            parts.append(_record("MAG", REAL8, _real8_encode(ref.magnification)))
        if ref.rotation != 0.0:
            parts.append(_record("ANGLE", REAL8, _real8_encode(ref.rotation)))
    x, y = ref.translation
    if ref.array:
        a = ref.array
        parts.append(_int16("COLROW", a.columns, a.rows))
        pts = [
            (x, y),
            (x + a.columns * a.column_step.x, y + a.columns * a.column_step.y),
            (x + a.rows * a.row_step.x, y + a.rows * a.row_step.y),
        ]
        parts.append(_xy(pts, db))
    else:
        parts.append(_xy([(x, y)], db))
    parts.append(_record("ENDEL", NO_DATA))
    return b"".join(parts)


def write_gds_file(layout: Layout, path: Union[str, PathLike]) -> Path:
    """Write a layout to disk and return the path."""
    path = Path(path)
    path.write_bytes(write_gds(layout))
    return path


##############
# Flattening #
##############


class FlatPolygon(NamedTuple):
    layer: int
    datatype: int
    polygon: Polygon
    provenance: Tuple[str, ...]

    @property
    def trace(self) -> str:
        return "/".join(self.provenance)


class FlatText(NamedTuple):
    layer: int
    datatype: int
    position: Point
    text: str
    provenance: Tuple[str, ...]


class FlatLayout:
    """Flattened polygon soup with provenance.

    Parameters
    ----------
    polygons :
        Polygons with their layer, datatype and provenance trace (cell names and
        placements from the top cell down to the element index).
    texts :
        Text annotations, carried along but never checked.
    db_unit_nm :
        Database unit of the source layout.
    snapped :
        Number of vertices moved onto the grid while flattening.

    """

    def __init__(
        self,
        polygons: List[FlatPolygon],
        texts: Optional[List[FlatText]] = None,
        db_unit_nm: int = 1,
        snapped: int = 0,
    ):
        self.polygons: Tuple[FlatPolygon, ...] = tuple(polygons)
        self.texts: Tuple[FlatText, ...] = tuple(texts or ())
        self.db_unit_nm = db_unit_nm
        self.snapped = snapped
        self.bounds: Optional[Rect] = Rect.bounding(p.polygon.bounds for p in self.polygons)

    def __len__(self) -> int:
        return len(self.polygons)

    def layers(self) -> List[Tuple[int, int]]:
        return sorted({(p.layer, p.datatype) for p in self.polygons})

    def by_layer(self) -> Dict[Tuple[int, int], List[FlatPolygon]]:
        out: Dict[Tuple[int, int], List[FlatPolygon]] = {}
        for p in self.polygons:
            out.setdefault((p.layer, p.datatype), []).append(p)
        return out

    def on_layer(self, layer: int, datatype: int) -> List[FlatPolygon]:
        return [p for p in self.polygons if p.layer == layer and p.datatype == datatype]

    def counts(self) -> Dict[Tuple[int, int], int]:
        return {k: len(v) for k, v in sorted(self.by_layer().items())}

    def areas(self) -> Dict[Tuple[int, int], int]:
        """Total area per layer in nm² (overlaps counted twice)."""
        return {k: sum(p.polygon.area2 for p in v) // 2 for k, v in sorted(self.by_layer().items())}

    def invalid(self) -> List[FlatPolygon]:
        return [p for p in self.polygons if not p.polygon.is_valid()]

    def extended(self, polygons: List[FlatPolygon]) -> "FlatLayout":
        return FlatLayout(list(self.polygons) + list(polygons), list(self.texts), self.db_unit_nm, self.snapped)


class _Transform(NamedTuple):
    m: np.ndarray  # 2x2
    t: np.ndarray  # 2

    @classmethod
    def identity(cls) -> "_Transform":
        return cls(np.eye(2), np.zeros(2))

    def then(self, inner: "_Transform") -> "_Transform":
        """Compose: apply `inner` first, then `self`."""
        return _Transform(self.m @ inner.m, self.m @ inner.t + self.t)


def _rotation_matrix(angle: float) -> np.ndarray:
    a = angle % 360.0
    exact = {0.0: (1, 0), 90.0: (0, 1), 180.0: (-1, 0), 270.0: (0, -1)}
    if a in exact:
        c, s = exact[a]
    else:
        c, s = math.cos(math.radians(a)), math.sin(math.radians(a))
    return np.array([[c, -s], [s, c]], dtype=np.float64)


def _ref_transform(ref: CellRef, offset: Tuple[int, int] = (0, 0)) -> _Transform:
    m = _rotation_matrix(ref.rotation) * ref.magnification
    if ref.reflection:
        m = m @ np.array([[1.0, 0.0], [0.0, -1.0]])
    t = np.array([ref.translation.x + offset[0], ref.translation.y + offset[1]], dtype=np.float64)
    return _Transform(m, t)


def _describe(ref: CellRef, col: int = 0, row: int = 0, offset=(0, 0)) -> str:
    x = ref.translation.x + offset[0]
    y = ref.translation.y + offset[1]
    label = f"{ref.target}@({x},{y})"
    if ref.rotation % 360:
        label += f"r{ref.rotation:g}"
    if ref.reflection:
        label += "m"
    if ref.magnification != 1.0:
        label += f"x{ref.magnification:g}"
    if ref.array:
        label += f"[{col},{row}]"
    return label


def flatten(layout: Layout, top: Optional[str] = None) -> FlatLayout:
    """Expand the hierarchy under `top` into a flat polygon list.

    Each element of each transitively referenced cell appears once per instance.
    Placements apply reflection, then rotation, then magnification, then translation;
    array references are expanded. Paths become polygons and texts are kept apart.
    Vertices that leave the grid (arbitrary angles, fractional magnification) are
    rounded to the nearest nm and counted in `FlatLayout.snapped`.

    Parameters
    ----------
    layout :
        The hierarchical layout.
    top :
        Cell to expand. Defaults to the layout top cell.

    Returns
    -------
    flat :
        The flat layout.

    Raises
    ------
    LayoutError
        If `top` is unknown or the reference graph has a cycle.

    """
    top = top or layout.top_cell
    if top not in layout:
        raise LayoutError(f"Unknown top cell {top!r}.")
    cycle = layout.find_cycle()
    if cycle:
        raise LayoutError("Cyclic reference: " + " -> ".join(cycle))

    local: Dict[str, List[Tuple[int, int, np.ndarray, int]]] = {}
    polygons: List[FlatPolygon] = []
    texts: List[FlatText] = []
    snapped = 0

    def local_geometry(cell: Cell) -> List[Tuple[int, int, np.ndarray, int]]:
        if cell.name not in local:
            items = []
            for i, e in enumerate(cell.elements):
                if e.kind == "boundary":
                    xy = np.asarray(e.coords, dtype=np.float64)
                elif e.kind == "path":
                    xy = path_to_polygon(e.coords, e.width, e.endcap).vertices.astype(np.float64)
                else:
                    continue
                items.append((e.layer, e.datatype, xy, i))
            local[cell.name] = items
        return local[cell.name]

    def emit(name: str, tr: _Transform, trail: Tuple[str, ...]):
        nonlocal snapped
        cell = layout.cell(name)
        for layer, datatype, xy, i in local_geometry(cell):
            moved = xy @ tr.m.T + tr.t
            rounded = np.rint(moved)
            off = int(np.count_nonzero(np.abs(moved - rounded).max(axis=1) > 1e-6))
            if off:
                snapped += off
                logger.warning(
                    "%d vertices of %s snapped to the grid.", off, "/".join(trail + (f"#{i}",))
                )
            polygons.append(
                FlatPolygon(layer, datatype, Polygon(rounded.astype(np.int64)), trail + (f"#{i}",))
            )
        for i, e in enumerate(cell.elements):
            if e.kind == "text":
                p = tr.m @ np.asarray(e.coords[0], dtype=np.float64) + tr.t
                texts.append(
                    FlatText(e.layer, e.datatype, Point(int(round(p[0])), int(round(p[1]))), e.text, trail + (f"#{i}",))
                )
        for ref in cell.references:
            if ref.array is None:
                emit(ref.target, tr.then(_ref_transform(ref)), trail + (_describe(ref),))
                continue
            a = ref.array
            for row in range(a.rows):
                for col in range(a.columns):
                    off = (
                        col * a.column_step.x + row * a.row_step.x,
                        col * a.column_step.y + row * a.row_step.y,
                    )
                    emit(
                        ref.target,
                        tr.then(_ref_transform(ref, off)),
                        trail + (_describe(ref, col, row, off),),
                    )

    emit(top, _Transform.identity(), (top,))
    return FlatLayout(polygons, texts, layout.db_unit_nm, snapped)


def expansion_count(layout: Layout, top: Optional[str] = None) -> int:
    """Polygons `flatten` will produce, from reference counts alone."""
    memo: Dict[str, int] = {}

    def count(name: str) -> int:
        if name not in memo:
            cell = layout.cell(name)
            n = sum(1 for e in cell.elements if e.kind != "text")
            for ref in cell.references:
                k = ref.array.columns * ref.array.rows if ref.array else 1
                n += k * count(ref.target)
            memo[name] = n
        return memo[name]

    return count(top or layout.top_cell)
