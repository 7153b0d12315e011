# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import shutil
import struct
import tempfile
import unittest
from pathlib import Path
from unittest import TestCase

import pytest

from qflow.chipgen import ChipSpec, generate_chip
from qflow.gds import (
    ArraySpec,
    Cell,
    CellRef,
    Element,
    GdsFormatError,
    Layout,
    LayoutError,
    boundary,
    expansion_count,
    flatten,
    parse_gds,
    read_gds,
    write_gds,
    write_gds_file,
)
from qflow.geometry import Point, Rect, rectangle
from qflow.waferplan import emit_wafer_layout, plan_wafer


def small_layout() -> Layout:
    """A two-level library using every element and reference kind."""
    unit = Cell(
        "UNIT",
        (
            boundary(1, 0, rectangle(0, 0, 1000, 2000)),
            Element("path", 5, 0, ((0, 0), (0, 5000)), 500, "round"),
            Element("text", 10, 0, ((100, 100),), text="unit"),
        ),
    )
    top = Cell(
        "TOP",
        (boundary(0, 0, rectangle(-50_000, -50_000, 50_000, 50_000)),),
        (
            CellRef("UNIT", Point(1000, 0), rotation=90.0),
            CellRef("UNIT", Point(-20_000, 0), reflection=True),
            CellRef("UNIT", Point(0, 20_000), magnification=2.0),
            CellRef(
                "UNIT",
                Point(-40_000, -40_000),
                array=ArraySpec(2, 3, Point(5000, 0), Point(0, 8000)),
            ),
        ),
    )
    return Layout("TESTLIB", [unit, top])


class TestGds(TestCase):
    def test_round_trip(self):
        """Test parse(write(layout)) on a small library"""
        layout = small_layout()
        data = write_gds(layout)
        parsed = parse_gds(data)
        assert parsed.semantically_equal(layout)
        assert parsed.top_cell == "TOP"
        assert write_gds(layout) == data
        assert parse_gds(write_gds(parsed)).semantically_equal(parsed)

    def test_round_trip_generated(self):
        """Test round trips of the 50-qubit chip and of a wafer layout"""
        chip, _ = generate_chip(ChipSpec(qubit_count=50, topology="grid"))
        parsed = parse_gds(write_gds(chip))
        assert parsed.semantically_equal(chip)
        assert parse_gds(write_gds(parsed)).semantically_equal(parsed)

        diamond, _ = generate_chip()
        wafer = emit_wafer_layout(plan_wafer(optimize=False), diamond)
        parsed = parse_gds(write_gds(wafer))
        assert parsed.semantically_equal(wafer)

    def test_files(self):
        """Test read_gds and write_gds_file"""
        folder = tempfile.mkdtemp()
        try:
            path = write_gds_file(small_layout(), Path(folder, "small.gds"))
            assert read_gds(path).semantically_equal(small_layout())
        finally:
            shutil.rmtree(folder)

    def test_malformed(self):
        """Test errors raised on broken streams"""
        data = write_gds(small_layout())
        with pytest.raises(GdsFormatError):
            parse_gds(b"")
        with pytest.raises(GdsFormatError):
            parse_gds(data[:-4])
        with pytest.raises(GdsFormatError):
            parse_gds(data[:-7])
        # first record is not HEADER
        with pytest.raises(GdsFormatError) as err:
            parse_gds(struct.pack(">HBB", 4, 0x04, 0) + data)
        assert err.value.offset == 0

        # reference to a cell that is not in the stream
        broken = Layout("LIBX", [Cell("A", (), (CellRef("B"),)), Cell("B")])
        stream = write_gds(broken).replace(b"B\x00", b"C\x00", 1)
        with pytest.raises(GdsFormatError):
            parse_gds(stream)

    def test_layout_validation(self):
        """Test structural invariants of Layout"""
        a = Cell("A", (), (CellRef("B"),))
        b = Cell("B", (), (CellRef("A"),))
        with pytest.raises(LayoutError):
            Layout("LIB", [a, b])
        with pytest.raises(LayoutError):
            Layout("LIB", [Cell("A", (), (CellRef("MISSING"),))])
        with pytest.raises(LayoutError):
            Layout("LIB", [Cell("A"), Cell("A")])
        layout = small_layout()
        assert layout.depth() == 2
        assert "UNIT" in layout
        assert layout.polygon_count() == 3
        with pytest.raises(KeyError):
            layout.cell("NOPE")

    def test_flatten(self):
        """Test placements and provenance of flattened polygons"""
        layout = small_layout()
        flat = flatten(layout)
        assert len(flat) == expansion_count(layout) == 1 + 2 * (3 + 6)
        assert flat.snapped == 0
        assert len(flat.texts) == 9

        rects = [p for p in flat.polygons if p.layer == 1]
        bounds = {p.provenance[1]: p.polygon.bounds for p in rects}
        assert bounds["UNIT@(1000,0)r90"] == Rect(-1000, 0, 1000, 1000)
        assert bounds["UNIT@(-20000,0)m"] == Rect(-20_000, -2000, -19_000, 0)
        assert bounds["UNIT@(0,20000)x2"] == Rect(0, 20_000, 2000, 24_000)
        array = [b for k, b in bounds.items() if k.endswith("]")]
        assert len(array) == 6
        assert Rect.bounding(array) == Rect(-40_000, -40_000, -34_000, -22_000)
        assert all(p.trace.startswith("TOP/") for p in flat.polygons)
        assert flat.counts()[(1, 0)] == 9

    def test_flatten_snapping(self):
        """Off-grid rotations are rounded and counted"""
        unit = Cell("UNIT", (boundary(1, 0, rectangle(0, 0, 1000, 1000)),))
        top = Cell("TOP", (), (CellRef("UNIT", rotation=30.0),))
        flat = flatten(Layout("LIB", [unit, top]))
        assert flat.snapped > 0
        with pytest.raises(LayoutError):
            flatten(Layout("LIB", [unit, top]), top="NOPE")


if __name__ == "__main__":
    unittest.main(argv=["first-arg-is-ignored"], exit=False)
