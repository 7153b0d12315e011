# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import math
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest import TestCase

import numpy as np
import pytest

from qflow.chipgen import generate_chip
from qflow.gds import Cell, Layout, boundary, flatten
from qflow.geometry import rectangle
from qflow.pdk import AlignmentSpec, load_pdk
from qflow.process import (
    STEP_PLAN_COLUMNS,
    JJParams,
    OrphanLayerError,
    check_interlayer_overlap,
    default_stack,
    electrode_pairs,
    frequency_spread,
    jj_chain,
    jj_misalignment_sensitivity,
    map_layers,
    registration_budget,
)


def fixture(shapes):
    elements = [boundary(0, 0, rectangle(0, 0, 1_000_000, 1_000_000))]
    elements += [boundary(layer, datatype, polygon) for layer, datatype, polygon in shapes]
    return flatten(Layout("FIXTURE", [Cell("TOP", tuple(elements))]))


class TestProcess(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.pdk, cls.stack = load_pdk("qeda")
        cls.flat = flatten(generate_chip(stack=cls.stack)[0])

    def test_jj_chain(self):
        """Test the junction chain against a hand evaluation"""
        estimate = jj_chain(0.04)
        ic = 0.5e-6 * 0.04
        ej = ic * 2.067833848e-15 / (2 * math.pi * 6.62607015e-34)
        f01 = math.sqrt(8 * ej * 250e6)
        assert estimate.critical_current_na == pytest.approx(20.0)
        assert estimate.ej_over_h_ghz == pytest.approx(9.93, rel=5e-3)
        assert abs(estimate.f01_ghz - f01 / 1e9) / (f01 / 1e9) < 5e-3
        assert abs(estimate.f01_ghz - 4.46) / 4.46 < 5e-3

        # f01 scales as the square root of the area
        for k in (0.25, 2.0, 3.0, 10.0):
            scaled = jj_chain(0.04 * k).f01_ghz
            assert abs(scaled - math.sqrt(k) * estimate.f01_ghz) <= 1e-12 * scaled

        params = JJParams(critical_current_density=1.0, charging_energy_over_h=200.0)
        assert jj_chain(0.04, params).critical_current_na == pytest.approx(40.0)
        with pytest.raises(ValueError):
            jj_chain(0.0)

    def test_registration_budget(self):
        """o_min is the designed overlap minus the alignment accuracy"""
        rng = np.random.default_rng(42)
        for _ in range(100):
            o_design = int(rng.integers(1, 10_000))
            sigma = int(rng.integers(1, 2_000))
            lithography = "ebeam" if rng.random() < 0.5 else "optical"
            spec = AlignmentSpec(
                layer_pair=("jj_top", "jj_bottom"),
                lithography=lithography,
                sigma_align_nm=sigma,
            )
            budget = registration_budget(o_design, spec)
            assert budget.o_min_nm == o_design - sigma
            assert budget.feasible == (o_design > sigma)
            assert budget.layer_pair == ("jj_top", "jj_bottom")

        spec = AlignmentSpec(layer_pair=("jj_top", "jj_bottom"), lithography="ebeam")
        assert spec.sigma_align_nm == 50
        assert registration_budget(200, spec).o_min_nm == 150
        with pytest.raises(ValueError):
            registration_budget(0, spec)

    def test_interlayer_overlap(self):
        """Registration budgets applied to overlapping layers"""
        assert check_interlayer_overlap(self.flat, self.pdk) == []

        flat = fixture(
            [
                (2, 0, rectangle(400_000, 400_000, 402_000, 400_200)),
                (4, 0, rectangle(401_000, 400_100, 401_200, 402_000)),
            ]
        )
        findings = check_interlayer_overlap(flat, self.pdk)
        assert len(findings) == 1
        assert findings[0].layer_pair == ("jj_top", "jj_bottom")
        assert findings[0].extent_nm == (200, 100)
        assert findings[0].o_min_nm == 150

    def test_misalignment_sensitivity(self):
        """Crossed electrodes are insensitive to misalignment"""
        pairs = electrode_pairs(self.flat, self.pdk)
        assert len(pairs) == 4
        for bottom, top in pairs:
            sensitivity = jj_misalignment_sensitivity(bottom, top, 50)
            assert sensitivity.deviation == 0.0
            assert sensitivity.ok

        bottom = rectangle(0, 0, 2_000, 200)
        flush = rectangle(0, 100, 200, 2_000)
        sensitivity = jj_misalignment_sensitivity(bottom, flush, 50)
        assert sensitivity.deviation == pytest.approx(0.5)
        assert not sensitivity.ok
        with pytest.raises(ValueError):
            jj_misalignment_sensitivity(bottom, rectangle(5_000, 5_000, 6_000, 6_000), 50)

    def test_frequency_spread(self):
        """Test the frequency spread of a junction resistance spread"""
        spread = frequency_spread(4.46, 0.03)
        assert spread.ic_relative == 0.03
        assert spread.f01_relative == pytest.approx(0.015)
        assert spread.f01_sigma_mhz == pytest.approx(66.9)
        with pytest.raises(ValueError):
            frequency_spread(-1.0)
        with pytest.raises(ValueError):
            frequency_spread(4.46, -0.01)

    def test_map_layers(self):
        """Every populated layer lands on one process step"""
        plan = map_layers(self.flat, self.stack)
        assert len(plan) == len(self.stack.layers) == 7
        assert [e.layer.step_order for e in plan] == list(range(7))
        assert sum(e.polygon_count for e in plan) == len(self.flat)
        populated = {e.layer.name for e in plan.populated()}
        assert "Tunnel barrier" not in populated
        assert {"Substrate", "Base metal (M1)", "JJ bottom electrode", "JJ top electrode"} <= populated

        counts = self.flat.counts()
        m1 = [e for e in plan if e.layer.step_order == 1][0]
        assert m1.polygon_count == counts[(1, 0)] + counts[(1, 1)]
        assert m1.total_area_um2 > 0

        df = plan.to_frame()
        assert list(df.columns) == STEP_PLAN_COLUMNS
        assert df["step_order"].tolist() == list(range(7))
        assert df["gds_bindings"].iloc[1] == "1/0;1/1"

        folder = tempfile.mkdtemp()
        try:
            path = Path(folder, "step_plan.csv")
            text = plan.to_csv(path)
            assert path.read_text(encoding="utf-8") == text
            assert text.splitlines()[0] == ",".join(STEP_PLAN_COLUMNS)
        finally:
            shutil.rmtree(folder)

    def test_step_plan_schema(self):
        """Every step plan column is documented"""
        schema = Path(__file__).parents[1] / "docs" / "step-plan-schema.md"
        text = schema.read_text(encoding="utf-8")
        for column in STEP_PLAN_COLUMNS:
            assert f"`{column}`" in text, column
        assert "`1/0;1/1`" in text

    def test_orphan_layers(self):
        """Populated layers without a process step are rejected"""
        flat = fixture(
            [
                (1, 0, rectangle(400_000, 400_000, 410_000, 410_000)),
                (7, 0, rectangle(420_000, 400_000, 430_000, 410_000)),
                (7, 3, rectangle(440_000, 400_000, 450_000, 410_000)),
            ]
        )
        with pytest.raises(OrphanLayerError) as err:
            map_layers(flat, self.stack)
        assert err.value.orphans == [(7, 0), (7, 3)]
        assert "(7, 0)" in str(err.value)

    def test_default_stack(self):
        """The default stack is the qeda stack"""
        stack = default_stack()
        assert stack == self.stack
        assert [p.material for p in stack.layers] == ["sapphire", "Nb", "Al", "AlOx", "Al", "Nb", "Al"]


if __name__ == "__main__":
    unittest.main(argv=["first-arg-is-ignored"], exit=False)
