# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import unittest
from unittest import TestCase

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pytest  # noqa: E402
from bokeh.models import Plot  # noqa: E402
from matplotlib.axes import Axes  # noqa: E402

from qflow.chipgen import generate_chip, inject_defect  # noqa: E402
from qflow.drc import run_drc  # noqa: E402
from qflow.gds import flatten  # noqa: E402
from qflow.pdk import load_pdk  # noqa: E402
from qflow.plots import plot_violations, plot_wafer  # noqa: E402
from qflow.plots.plot_violations import violation_geometry  # noqa: E402
from qflow.plots.plot_wafer import wafer_geometry  # noqa: E402
from qflow.waferplan import plan_wafer  # noqa: E402


class TestPlots(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.pdk, _ = load_pdk("qeda")
        layout, _ = generate_chip()
        cls.flat = flatten(inject_defect(layout, "R2"))
        cls.report = run_drc(cls.flat, cls.pdk)
        cls.plan = plan_wafer(optimize=False)

    def test_plot_wafer(self):
        """Test plot_wafer function"""
        geometry = wafer_geometry(self.plan)
        assert geometry["dies"].shape == (72, 4)
        assert geometry["lanes"].shape == (144, 4)
        assert geometry["usable_radius"] == 145.0
        assert np.allclose(geometry["dies"][:, 2] - geometry["dies"][:, 0], 24.0)

        ax = plot_wafer(self.plan)
        assert isinstance(ax, Axes)
        assert "72 dies" in ax.get_title()

        _, ax = plt.subplots()
        assert plot_wafer(self.plan, ax=ax) is ax

        assert isinstance(plot_wafer(self.plan, backend="bokeh"), Plot)
        with pytest.raises(KeyError):
            plot_wafer(self.plan, backend="plotly")

        plt.close("all")

    def test_plot_violations(self):
        """Test plot_violations function"""
        geometry = violation_geometry(self.report, self.flat, self.pdk)
        assert geometry["rules"] == ["R2"]
        assert geometry["violations"].shape == (1, 4)
        assert sum(len(v) for v in geometry["layers"].values()) == len(self.flat)
        assert any(label.endswith("cpw_conductor") for label in geometry["layers"])

        # without the layout only the boxes are drawn
        assert violation_geometry(self.report)["layers"] == {}
        small = violation_geometry(self.report, self.flat, max_polygons=10)
        assert sum(len(v) for v in small["layers"].values()) == 10

        for backend in ["matplotlib", "bokeh"]:
            plot_violations(self.report, self.flat, self.pdk, backend=backend)
        ax = plot_violations(self.report)
        assert ax.get_title() == "1 violation(s)"

        plt.close("all")


if __name__ == "__main__":
    unittest.main(argv=["first-arg-is-ignored"], exit=False)
