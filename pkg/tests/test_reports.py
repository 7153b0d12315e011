# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import unittest
from unittest import TestCase

import pytest
from bokeh.models import Column

from qflow.chipgen import generate_chip
from qflow.gds import flatten
from qflow.mdp import (
    build_job_deck,
    build_reticles,
    exposure_field,
    fracture_layers,
    mask_layers,
)
from qflow.pdk import load_pdk
from qflow.process import map_layers
from qflow.reports import census_table, job_deck_table, step_plan_table, wafer_table
from qflow.waferplan import plan_wafer


class TestReports(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.pdk, cls.stack = load_pdk("qeda")
        layout, cls.census = generate_chip()
        cls.flat = flatten(layout)
        cls.plan = plan_wafer(optimize=False)

    def test_step_plan_table(self):
        """Test the step_plan_table function"""
        step_plan = map_layers(self.flat, self.stack)
        table = step_plan_table(step_plan)
        assert isinstance(table, str)
        assert "Tunnel barrier" in table
        assert "1/0;1/1" in table
        assert isinstance(step_plan_table(step_plan, backend="bokeh"), Column)
        with pytest.raises(ValueError):
            step_plan_table(step_plan, backend="html")

    def test_wafer_table(self):
        """Test the wafer_table function"""
        table = wafer_table(self.plan)
        assert "Die count" in table
        assert "72" in table
        assert "24 x 28 mm" in table
        assert isinstance(wafer_table(self.plan, backend="bokeh"), Column)

    def test_census_table(self):
        """Test the census_table function"""
        table = census_table(self.census)
        assert "Airbridge" in table
        assert "28" in table
        assert isinstance(census_table(self.census, backend="bokeh"), Column)

    def test_job_deck_table(self):
        """Test the job_deck_table function"""
        sets = fracture_layers(self.flat, mask_layers(self.flat, self.stack))
        reticles = build_reticles(sets, exposure_field(self.flat, self.pdk), self.stack)
        job_deck = build_job_deck(self.plan, reticles, self.stack)
        table = job_deck_table(job_deck)
        assert "RET_S1" in table
        assert "mJ/cm2" in table and "uC/cm2" in table
        assert isinstance(job_deck_table(job_deck, backend="bokeh"), Column)
        with pytest.raises(ValueError):
            job_deck_table(job_deck, backend="latex")


if __name__ == "__main__":
    unittest.main(argv=["first-arg-is-ignored"], exit=False)
