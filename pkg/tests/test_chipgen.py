# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import unittest
from unittest import TestCase

import numpy as np
import pytest

from qflow.chipgen import (
    ChipRecipe,
    ChipSizeError,
    ChipSpec,
    XmonParams,
    generate_chip,
    inject_defect,
    load_recipe,
    meander_centerline,
    quarter_wave_length_um,
    tile_map,
)
from qflow.drc import run_drc
from qflow.gds import flatten, write_gds
from qflow.pdk import load_pdk
from qflow.waferplan import DieSpec


class TestChipgen(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.pdk, cls.stack = load_pdk("qeda")
        cls.recipe = load_recipe()

    def test_recipe(self):
        """Test the shipped recipe and its validation"""
        assert self.recipe.tile_um == 500
        assert self.recipe.xmon.pocket_um == 340
        assert tile_map(ChipSpec(), self.recipe) == [list(row) for row in self.recipe.diamond]

        data = self.recipe.model_dump(mode="json")
        data["diamond"] = ["GQX", "GGG"]
        with pytest.raises(ValueError):
            ChipRecipe.model_validate(data)
        data = self.recipe.model_dump(mode="json")
        data["diamond"] = ["GQ", "GGG"]
        with pytest.raises(ValueError):
            ChipRecipe.model_validate(data)
        data = self.recipe.model_dump(mode="json")
        data["tile_um"] = 300
        with pytest.raises(ValueError):
            ChipRecipe.model_validate(data)

    def test_spec(self):
        """Test chip specification checks"""
        with pytest.raises(ValueError):
            ChipSpec(qubit_count=5, topology="diamond")
        with pytest.raises(ValueError):
            ChipSpec(qubit_count=0, topology="grid")
        with pytest.raises(ValueError):
            ChipSpec(topology="ring")
        with pytest.raises(ValueError):
            XmonParams(jj_offset_um=50)
        with pytest.raises(ValueError):
            XmonParams(jj_lead_width_nm=1000)

    def test_census(self):
        """The diamond chip holds 28 components"""
        layout, census = generate_chip(stack=self.stack)
        assert census.total == 28
        assert (census.xmon, census.resonator, census.coupler) == (4, 4, 4)
        assert census.feedline == 1
        assert census.airbridge == 15
        assert sorted(census.resonator_frequencies_ghz) == [6.5, 6.6, 6.7, 6.8]
        assert census.to_dict()["total"] == 28
        assert layout.top_cell == "CHIP"
        for name in ("XMON", "JJ", "AIRBRIDGE", "GROUND", "FEED", "LAUNCH", "COUPLER", "RESONATOR_6500MHZ"):
            assert name in layout

        _, census = generate_chip(ChipSpec(qubit_count=1, topology="grid"), self.stack)
        assert census.to_dict() == {
            "xmon": 1,
            "resonator": 1,
            "coupler": 0,
            "feedline": 1,
            "airbridge": 3,
            "total": 6,
            "resonator_frequencies_ghz": [6.5],
        }

    def test_tile_map(self):
        """Grid chips are bands of five rows around a feedline"""
        tiles = tile_map(ChipSpec(qubit_count=50, topology="grid"), self.recipe)
        assert len(tiles) == 15
        assert {len(row) for row in tiles} == {12}
        assert sum(row.count("Q") + row.count("q") for row in tiles) == 50
        assert ["".join(row) for row in tiles[:3]] == ["GQQQQQQQQQQG", "GRRRRRRRRRRG", "LSSSSSSSSSSL"]

        tiles = tile_map(ChipSpec(qubit_count=3, topology="grid"), self.recipe)
        assert ["".join(row) for row in tiles] == ["GQQG", "GRRG", "LSSL", "GrGG", "GqGG"]

    def test_resonator_length(self):
        """Meanders follow the quarter-wave length"""
        length = quarter_wave_length_um(6.5, 10.0)
        assert length == pytest.approx(4916.6, abs=0.1)
        assert quarter_wave_length_um(6.9, 10.0) < length

        points = np.array(meander_centerline(length, self.recipe.resonator), dtype=float)
        assert len(points) == 26
        drawn = np.hypot(*np.diff(points, axis=0).T).sum() / 1000
        assert drawn == pytest.approx(length, abs=0.05)
        # the meander stays inside its pocket
        half = self.recipe.resonator.pocket_um * 1000 / 2
        assert np.abs(points).max() <= half

    def test_determinism(self):
        """The same spec always gives the same stream"""
        spec = ChipSpec(qubit_count=8, topology="grid", seed=7)
        first, census = generate_chip(spec, self.stack)
        second, again = generate_chip(spec, self.stack)
        assert write_gds(first) == write_gds(second)
        assert census == again

        _, other = generate_chip(ChipSpec(qubit_count=50, topology="grid", seed=8), self.stack)
        _, base = generate_chip(ChipSpec(qubit_count=50, topology="grid", seed=7), self.stack)
        assert sorted(other.resonator_frequencies_ghz) == sorted(base.resonator_frequencies_ghz)
        assert other.resonator_frequencies_ghz != base.resonator_frequencies_ghz

    def test_clean(self):
        """Generated chips pass the qeda deck at every size"""
        for n in (1, 2, 4, 8, 16, 32):
            layout, _ = generate_chip(ChipSpec(qubit_count=n, topology="grid"), self.stack)
            report = run_drc(flatten(layout), self.pdk)
            assert report.ok, f"{n} qubits: {report.to_text()}"

    def test_scaling(self):
        """Polygon counts grow linearly with the qubit count"""
        flat = flatten(generate_chip(ChipSpec(qubit_count=50, topology="grid"), self.stack)[0])
        assert abs(len(flat) - 1016) <= 0.1 * 1016

        one = flatten(generate_chip(ChipSpec(qubit_count=20, topology="grid"), self.stack)[0])
        two = flatten(generate_chip(ChipSpec(qubit_count=40, topology="grid"), self.stack)[0])
        # one outline per chip, the rest doubles with the number of bands
        assert len(two) - 1 == 2 * (len(one) - 1)

    def test_chip_size(self):
        """Chips that do not fit their die are refused"""
        small = DieSpec(width_mm=2.0, height_mm=2.0)
        with pytest.raises(ChipSizeError):
            generate_chip(ChipSpec(die=small), self.stack)
        with pytest.raises(ChipSizeError):
            generate_chip(ChipSpec(qubit_count=500, topology="grid"), self.stack)

        # fits, but leaves no room to plant a defect
        tight, _ = generate_chip(ChipSpec(die=DieSpec(width_mm=4.5, height_mm=4.0)), self.stack)
        assert run_drc(flatten(tight), self.pdk).ok
        with pytest.raises(ChipSizeError):
            inject_defect(tight, "R2", self.pdk)

    def test_inject_defect(self):
        """Defects are added to a copy of the layout"""
        layout, _ = generate_chip(stack=self.stack)
        before = write_gds(layout)
        planted = inject_defect(layout, "R8", self.pdk)
        assert write_gds(layout) == before
        assert len(flatten(planted)) == len(flatten(layout)) + 2
        assert planted.top_cell == layout.top_cell


if __name__ == "__main__":
    unittest.main(argv=["first-arg-is-ignored"], exit=False)
