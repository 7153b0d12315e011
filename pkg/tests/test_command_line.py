# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import io
import json
import shutil
import tempfile
import unittest
from contextlib import redirect_stderr
from pathlib import Path
from unittest import TestCase

import pytest

from qflow.chipgen import generate_chip, inject_defect
from qflow.gds import Cell, Layout, boundary, write_gds_file
from qflow.geometry import rectangle
from qflow.mdp import verify_package
from qflow.pdk import shipped_deck_path
from qflow.reports.command_line import RunConfig, build_parser, main


def call(*argv) -> tuple:
    """Run the command line, return the exit code and what went to stderr."""
    err = io.StringIO()
    with redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, err.getvalue()


class TestCommandLine(TestCase):
    def setUp(self):
        self.folder = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.folder)

    def test_pipeline(self):
        """The whole flow on a generated chip"""
        out = self.folder / "run"
        code, err = call("pipeline", "--gen", "qubits=4", "topology=diamond", "-o", out)
        assert code == 0, err
        assert err.strip().endswith("qflow pipeline: ok")
        for name in (
            "layout.gds",
            "census.json",
            "census.txt",
            "drc_report.json",
            "drc_report.txt",
            "drc_violations.svg",
            "step_plan.csv",
            "step_plan.txt",
            "wafer_plan.json",
            "wafer_map.svg",
            "reticles.json",
            "tapeout_report.json",
            "jobdeck.txt",
            "run_metadata.json",
        ):
            assert (out / name).is_file(), name
        assert list((out / "mask").glob("*.trap"))
        assert verify_package(out / "package") == []

        census = json.loads((out / "census.json").read_text(encoding="utf-8"))
        assert census["total"] == 28
        metadata = json.loads((out / "run_metadata.json").read_text(encoding="utf-8"))
        assert metadata["exit_code"] == 0
        assert metadata["command"] == "pipeline"
        assert {"drc", "map", "plan", "fracture", "tapeout", "export"} <= set(metadata["elapsed_s"])

    def test_gen(self):
        """Generate a grid chip"""
        out = self.folder / "gen"
        code, _ = call("gen", "--gen", "qubits=2", "topology=grid", "--format", "json", "-o", out)
        assert code == 0
        census = json.loads((out / "census.json").read_text(encoding="utf-8"))
        assert census["xmon"] == 2
        assert (out / "layout.gds").is_file()
        assert not (out / "census.txt").exists()

    def test_drc_failure(self):
        """A layout with a planted defect exits with 1, reports included"""
        layout, _ = generate_chip()
        path = write_gds_file(inject_defect(layout, "R4"), self.folder / "defect.gds")
        out = self.folder / "drc"
        code, err = call("drc", path, "-o", out)
        assert code == 1
        assert "qflow drc: failed: 1 DRC violations" in err
        report = json.loads((out / "drc_report.json").read_text(encoding="utf-8"))
        assert [v["rule_id"] for v in report["violations"]] == ["R4"]
        assert (out / "drc_violations.svg").is_file()

        # the package is refused, and nothing is left behind
        out = self.folder / "export"
        code, err = call("export", path, "-o", out)
        assert code == 1
        assert "Package refused" in err
        assert not (out / "package").exists()
        assert not [p for p in out.iterdir() if p.name.startswith(".package")]

        code, _ = call("export", path, "-o", out, "--waiver", "lead width accepted")
        assert code == 0
        manifest = json.loads((out / "package" / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["waiver"]["note"] == "lead width accepted"

    def test_drc_incomplete(self):
        """A rule skipped for a missing layer purpose fails the run"""
        deck = json.loads(shipped_deck_path("qeda").read_text(encoding="utf-8"))
        deck["layer_map"] = [lp for lp in deck["layer_map"] if lp["purpose"] != "jj_lead"]
        pdk = self.folder / "partial.json"
        pdk.write_text(json.dumps(deck), encoding="utf-8")
        layout, _ = generate_chip()
        path = write_gds_file(layout, self.folder / "chip.gds")

        out = self.folder / "drc"
        code, err = call("drc", path, "--pdk", pdk, "-o", out)
        assert code == 1
        assert "DRC incomplete: R4 skipped" in err
        report = json.loads((out / "drc_report.json").read_text(encoding="utf-8"))
        assert report["violations"] == []
        assert report["errors"]

    def test_errors(self):
        """Stages that cannot run exit with 2"""
        out = self.folder / "errors"
        code, err = call("drc", self.folder / "missing.gds", "-o", out)
        assert code == 2
        assert "qflow drc: error:" in err

        broken = self.folder / "broken.gds"
        broken.write_bytes(b"not a gds stream")
        assert call("drc", broken, "-o", out)[0] == 2
        assert call("drc", "-o", out)[0] == 2
        assert call("gen", "--gen", "wings=3", "-o", out)[0] == 2
        assert call("gen", "--gen", "qubits", "-o", out)[0] == 2
        assert call("plan", "--die-mm", "24by28", "-o", out)[0] == 2
        assert call("drc", "--deck", "nope", "--gen", "qubits=4", "-o", out)[0] == 2

        orphan = Layout(
            "ORPHAN",
            [
                Cell(
                    "CHIP",
                    (
                        boundary(0, 0, rectangle(0, 0, 1_000_000, 1_000_000)),
                        boundary(7, 0, rectangle(400_000, 400_000, 410_000, 410_000)),
                    ),
                )
            ],
        )
        path = write_gds_file(orphan, self.folder / "orphan.gds")
        code, err = call("map", path, "-o", out)
        assert code == 2
        assert "(7, 0)" in err

        with pytest.raises(SystemExit):
            build_parser().parse_args(["frobnicate"])

    def test_plan(self):
        """Plan a wafer from the command line"""
        out = self.folder / "plan"
        code, _ = call("plan", "--edge-exclusion-mm", "5", "--die-mm", "24x28", "-o", out)
        assert code == 0
        plan = json.loads((out / "wafer_plan.json").read_text(encoding="utf-8"))
        assert 72 <= plan["die_count"] <= 80
        assert (out / "wafer_plan.txt").read_text(encoding="utf-8").count("Die count") == 1

    def test_config(self):
        """Test generator options of the run configuration"""
        config = RunConfig(
            command="gen",
            out=self.folder,
            die_mm="10x12",
            gen={"qubits": "8", "topology": "grid", "arm_length_um": "250", "seed": "3"},
        )
        spec = config.chip_spec()
        assert spec.qubit_count == 8
        assert spec.topology == "grid"
        assert spec.seed == 3
        assert spec.xmon.arm_length_um == 250
        assert spec.die.width_mm == 10 and spec.die.height_mm == 12
        with pytest.raises(ValueError):
            RunConfig(command="gen", formats={"pdf"})
        with pytest.raises(ValueError):
            RunConfig(command="lint")


if __name__ == "__main__":
    unittest.main(argv=["first-arg-is-ignored"], exit=False)
