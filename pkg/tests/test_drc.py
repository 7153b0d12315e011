# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import json
import time
import unittest
from unittest import TestCase

import numpy as np
import pytest

from qflow.chipgen import ChipSpec, generate_chip, inject_defect
from qflow.drc import (
    candidates_per_polygon,
    check_spacing,
    check_width,
    report_from_dict,
    run_drc,
)
from qflow.gds import Cell, Layout, boundary, flatten
from qflow.geometry import Polygon, rectangle
from qflow.pdk import load_pdk

RULES = [f"R{i}" for i in range(1, 10)]

# (layer, datatype) pairs used to build random fixtures
FIXTURE_LAYERS = [(1, 0), (1, 1), (2, 0), (4, 0), (4, 1), (5, 0), (5, 1), (6, 0)]


def fixture(shapes, size_um: int = 1000):
    """Flat layout with a square outline and `(layer, datatype, polygon)` shapes."""
    elements = [boundary(0, 0, rectangle(0, 0, size_um * 1000, size_um * 1000))]
    elements += [boundary(layer, datatype, polygon) for layer, datatype, polygon in shapes]
    return flatten(Layout("FIXTURE", [Cell("TOP", tuple(elements))]))


def random_fixture(seed: int):
    """Up to 50 rectangles packed in a 60 um window, away from the chip edge."""
    rng = np.random.default_rng(seed)
    shapes = []
    for _ in range(int(rng.integers(5, 51))):
        layer, datatype = FIXTURE_LAYERS[int(rng.integers(len(FIXTURE_LAYERS)))]
        x, y = (int(v) for v in rng.integers(400_000, 460_000, 2))
        w, h = (int(v) for v in rng.integers(50, 20_000, 2))
        shapes.append((layer, datatype, rectangle(x, y, x + w, y + h)))
    return fixture(shapes)


def without_candidate_count(report) -> str:
    """Report JSON without the mode-dependent candidate counter."""
    lines = report.to_json().splitlines(keepends=True)
    kept = [line for line in lines if '"candidate_pairs_examined"' not in line]
    assert len(kept) == len(lines) - 1
    return "".join(kept)


class TestDrc(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.pdk, cls.stack = load_pdk("qeda")
        cls.chip, cls.census = generate_chip(stack=cls.stack)

    def test_clean_chip(self):
        """The generated diamond chip passes every rule"""
        flat = flatten(self.chip)
        report = run_drc(flat, self.pdk)
        assert report.ok, report.to_text()
        assert report.errors == []
        assert list(report.stats) == RULES
        assert report.total_checks > 0
        assert all(s["failed"] == 0 for s in report.stats.values())

    def test_injection(self):
        """Every planted defect yields exactly one violation of its rule"""
        for rule_id in RULES:
            layout = inject_defect(self.chip, rule_id, self.pdk)
            report = run_drc(flatten(layout), self.pdk)
            assert [v.rule_id for v in report.violations] == [rule_id], report.to_text()
            assert report.stats[rule_id]["failed"] == 1
        with pytest.raises(ValueError):
            inject_defect(self.chip, "R10", self.pdk)

    def test_injection_measurements(self):
        """Measured values of planted defects"""
        report = run_drc(flatten(inject_defect(self.chip, "R2", self.pdk)), self.pdk)
        assert report.violations[0].measured == 4_900
        assert report.violations[0].required == 5_000
        report = run_drc(flatten(inject_defect(self.chip, "R1", self.pdk)), self.pdk)
        assert report.violations[0].measured == 2_000
        report = run_drc(flatten(inject_defect(self.chip, "R8", self.pdk)), self.pdk)
        assert report.violations[0].measured == 1_500
        assert report.violations[0].required == 2_000
        report = run_drc(flatten(inject_defect(self.chip, "R9", self.pdk)), self.pdk)
        assert report.violations[0].measured == 2
        assert report.violations[0].required == 1

    def test_cmc_deck(self):
        """The cmc deck runs its own rule set with its own thresholds"""
        cmc, _ = load_pdk("cmc")
        report = run_drc(flatten(self.chip), cmc)
        assert report.ok
        assert list(report.stats) == ["R1", "R2", "R3", "R7", "R8"]

        # 2 um gaps and 4.9 um lines are legal under cmc
        for rule_id in ("R1", "R2"):
            layout = inject_defect(self.chip, rule_id, self.pdk)
            assert run_drc(flatten(layout), cmc).ok
        # an isolated ground island is not checked
        layout = inject_defect(self.chip, "R9", self.pdk)
        assert run_drc(flatten(layout), cmc).ok

    def test_ground_slot(self):
        """A long notch in the ground plane must be bridged"""
        um = 1000
        notched = Polygon(
            [
                (400 * um, 400 * um),
                (600 * um, 400 * um),
                (600 * um, 600 * um),
                (510 * um, 600 * um),
                (510 * um, 500 * um),
                (490 * um, 500 * um),
                (490 * um, 600 * um),
                (400 * um, 600 * um),
            ]
        )
        report = run_drc(fixture([(1, 0, notched)]), self.pdk)
        assert [v.rule_id for v in report.violations] == ["R9"]
        slot = report.violations[0]
        assert slot.measured == 100 * um
        assert tuple(slot.location) == (490 * um, 500 * um, 510 * um, 600 * um)

        bridge = [
            (5, 1, rectangle(440 * um, 540 * um, 454 * um, 554 * um)),
            (5, 1, rectangle(546 * um, 540 * um, 560 * um, 554 * um)),
            (6, 0, rectangle(447 * um, 542 * um, 553 * um, 552 * um)),
        ]
        report = run_drc(fixture([(1, 0, notched)] + bridge), self.pdk)
        assert report.ok, report.to_text()

        # a short notch needs no bridge
        shallow = Polygon(
            [
                (400 * um, 400 * um),
                (600 * um, 400 * um),
                (600 * um, 600 * um),
                (510 * um, 600 * um),
                (510 * um, 560 * um),
                (490 * um, 560 * um),
                (490 * um, 600 * um),
                (400 * um, 600 * um),
            ]
        )
        assert run_drc(fixture([(1, 0, shallow)]), self.pdk).ok

    def test_thresholds(self):
        """Values exactly at a threshold pass"""
        flat = fixture(
            [
                (1, 1, rectangle(400_000, 400_000, 405_000, 500_000)),
                (1, 1, rectangle(408_000, 400_000, 410_000, 500_000)),
            ]
        )
        lines = flat.on_layer(1, 1)
        wide = [p for p in lines if p.polygon.bounds.width == 5_000]
        assert check_width(wide, 5_000).violations == []
        assert len(check_width(wide, 5_001).violations) == 1
        assert check_spacing(lines, None, 3_000).violations == []
        assert len(check_spacing(lines, None, 3_001).violations) == 1

    def test_oracle_equivalence(self):
        """The R-tree and the all-pairs enumeration write the same report"""
        for seed in range(50):
            flat = random_fixture(seed)
            indexed = run_drc(flat, self.pdk, use_index=True)
            brute = run_drc(flat, self.pdk, use_index=False)
            assert without_candidate_count(indexed) == without_candidate_count(brute), seed
            assert indexed.stats == brute.stats

    def test_parallel(self):
        """The report does not depend on the number of jobs"""
        flat = flatten(inject_defect(self.chip, "R8", self.pdk))
        assert run_drc(flat, self.pdk, n_jobs=1).to_json() == run_drc(
            flat, self.pdk, n_jobs=2
        ).to_json()

    def test_candidate_scaling(self):
        """Candidate pairs per polygon stay bounded and the run time grows linearly"""
        series = (4, 8, 16, 32, 50)
        flats = [
            flatten(generate_chip(ChipSpec(qubit_count=n, topology="grid"), self.stack)[0])
            for n in series
        ]
        ratios = np.array([candidates_per_polygon(run_drc(flat, self.pdk), flat) for flat in flats])
        assert np.all(np.abs(ratios / ratios.mean() - 1) <= 0.25), ratios
        assert ratios.max() <= ratios.min() * 1.25 / 0.75

        # all-pairs enumeration grows with the chip
        brute = [candidates_per_polygon(run_drc(f, self.pdk, use_index=False), f) for f in flats[::4]]
        assert brute[1] > 4 * brute[0]

        # least-squares fit of the wall time on a log-log scale
        run_drc(flats[0], self.pdk, n_jobs=1)
        sizes, times = [], []
        for flat in flats:
            elapsed = []
            for _ in range(3):
                start = time.perf_counter()
                run_drc(flat, self.pdk, n_jobs=1)
                elapsed.append(time.perf_counter() - start)
            sizes.append(len(flat))
            times.append(min(elapsed))
        x, y = np.log(sizes), np.log(times)
        exponent, intercept = np.polyfit(x, y, 1)
        residuals = y - (exponent * x + intercept)
        r2 = 1 - np.sum(residuals**2) / np.sum((y - y.mean()) ** 2)
        assert exponent <= 1.2, (sizes, times)
        assert r2 > 0.95, (sizes, times)

    def test_report(self):
        """Test serialisation and rendering of reports"""
        flat = flatten(inject_defect(self.chip, "R6", self.pdk))
        report = run_drc(flat, self.pdk)
        data = json.loads(report.to_json())
        assert data["summary"]["violations"] == 1
        assert data["summary"]["ok"] is False
        assert data["violations"][0]["rule_id"] == "R6"
        assert report_from_dict(data).to_json() == report.to_json()
        text = report.to_text()
        assert "R6" in text
        assert "1 violations" in text
        assert run_drc(flatten(self.chip), self.pdk).to_text().count("No violation.") == 1

    def test_missing_layers(self):
        """Rules whose purposes have no layer are skipped with an error"""
        data = self.pdk.model_dump(mode="json")
        data["layer_map"] = [lp for lp in data["layer_map"] if lp["purpose"] != "jj_lead"]
        pdk = type(self.pdk).model_validate(data)
        report = run_drc(flatten(self.chip), pdk)
        assert "R4" not in report.stats
        assert any(e.startswith("R4 skipped") for e in report.errors)


if __name__ == "__main__":
    unittest.main(argv=["first-arg-is-ignored"], exit=False)
