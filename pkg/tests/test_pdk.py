# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

import json
import logging
import unittest
from pathlib import Path
from unittest import TestCase

import pytest

from qflow.pdk import (
    PdkError,
    Purpose,
    RuleKind,
    load_pdk,
    shipped_deck_path,
    validate_pdk,
)


def qeda_document() -> dict:
    return json.loads(shipped_deck_path("qeda").read_text(encoding="utf-8"))


class TestPdk(TestCase):
    def test_load_qeda(self):
        """Test thresholds of the shipped qeda deck"""
        pdk, stack = load_pdk("qeda")
        expected = {
            "R1": 3000,
            "R2": 5000,
            "R3": 50,
            "R4": 100,
            "R6": 10000,
            "R7": 200000,
            "R8": 2000,
            "R9": 50000,
        }
        for rule_id, threshold in expected.items():
            assert pdk.rule(rule_id).threshold == threshold
        assert pdk.rule("R5").threshold_range == (50000, 100000)
        assert pdk.rule("R5").kind == RuleKind.range_span
        assert pdk.rule("R9").slot_max_nm == 100000
        assert [r.id for r in pdk.enabled_rules()] == [f"R{i}" for i in range(1, 10)]

        assert pdk.outline_layer == (0, 0)
        assert pdk.layers_for(Purpose.ground) == [(1, 0)]
        assert pdk.layers_for("jj_top") == [(4, 0)]
        assert pdk.purpose_of(6, 0) == Purpose.airbridge_span
        assert pdk.purpose_of(99, 0) is None

        assert stack.substrate_permittivity == 10.0
        assert stack.substrate.material == "sapphire"
        assert [p.step_order for p in stack.layers] == list(range(len(stack.layers)))
        assert stack.layer_for(2, 0).material == "Al"
        assert stack.layer_for(99, 0) is None

    def test_load_cmc(self):
        """Test the cmc deck and its relation to qeda"""
        qeda, _ = load_pdk("qeda")
        cmc, _ = load_pdk("cmc")
        assert not cmc.has_rule("R5")
        assert not cmc.has_rule("R6")
        assert not cmc.rule("R9").enabled
        assert "R9" not in [r.id for r in cmc.enabled_rules()]
        # cmc allows narrower gaps and lines
        assert cmc.rule("R1").threshold < qeda.rule("R1").threshold
        assert cmc.rule("R2").threshold < qeda.rule("R2").threshold
        assert cmc.rule("R7").threshold < qeda.rule("R7").threshold
        # but asks for a wider JJ overlap margin
        assert cmc.rule("R3").threshold > qeda.rule("R3").threshold
        with pytest.raises(KeyError):
            cmc.rule("R5")

    def test_load_sources(self):
        """Test loading from a dict, a JSON string and a path"""
        data = qeda_document()
        from_dict, _ = load_pdk(data)
        from_text, _ = load_pdk(json.dumps(data))
        from_path, _ = load_pdk(shipped_deck_path("qeda"))
        assert from_dict == from_text == from_path
        assert from_dict.name == "qeda"

    def test_deck_copies(self):
        """The decks under pdks/ are the ones shipped with the package"""
        root = Path(__file__).parents[1] / "pdks"
        assert sorted(p.stem for p in root.glob("*.json")) == ["cmc", "qeda"]
        for name in ("qeda", "cmc"):
            assert (root / f"{name}.json").read_bytes() == shipped_deck_path(name).read_bytes(), name

    def test_defaults(self):
        """Optional fields take their documented defaults"""
        data = qeda_document()
        data.pop("substrate_permittivity")
        for spec in data["alignment"]:
            spec.pop("sigma_align_nm")
        pdk, stack = load_pdk(data)
        assert stack.substrate_permittivity == 10.0
        sigmas = {a.lithography: a.sigma_align_nm for a in pdk.alignment}
        assert sigmas == {"optical": 500, "ebeam": 50}

    def test_errors(self):
        """Test PdkError on broken documents"""
        with pytest.raises(PdkError):
            load_pdk("{not json")
        with pytest.raises(PdkError):
            load_pdk("/nonexistent/deck.json")

        data = qeda_document()
        data.pop("schema_version")
        with pytest.raises(PdkError) as err:
            load_pdk(data)
        assert err.value.path == "schema_version"

        data = qeda_document()
        data["schema_version"] = 99
        with pytest.raises(PdkError):
            load_pdk(data)

        # R5 needs a [min, max] range
        data = qeda_document()
        r5 = [r for r in data["rules"] if r["id"] == "R5"][0]
        r5["threshold_nm"] = 50000
        with pytest.raises(PdkError) as err:
            load_pdk(data)
        assert err.value.path.startswith("rules")

        # rule ids are bound to their kind
        data = qeda_document()
        data["rules"][0]["kind"] = "min_width"
        with pytest.raises(PdkError):
            load_pdk(data)

        # a (layer, datatype) pair bound twice
        data = qeda_document()
        data["layer_map"].append({"gds_layer": 1, "gds_datatype": 0, "purpose": "wiring"})
        with pytest.raises(PdkError):
            load_pdk(data)

        data = qeda_document()
        data["rules"][1]["threshold_nm"] = -5
        with pytest.raises(PdkError):
            load_pdk(data)

        data = qeda_document()
        data["stack"][1]["material"] = "Cu"
        with pytest.raises(PdkError):
            load_pdk(data)

    def test_unknown_fields(self):
        """Unknown fields are ignored with a warning"""
        data = qeda_document()
        data["vendor_notes"] = "ignored"
        data["rules"][0]["color"] = "red"
        with self.assertLogs("qflow.pdk", level=logging.WARNING) as logs:
            pdk, _ = load_pdk(data)
        assert pdk.rule("R1").threshold == 3000
        assert any("vendor_notes" in line for line in logs.output)
        assert any("rules.0.color" in line for line in logs.output)

    def test_validate_pdk(self):
        """Test the cross-check of decks and stacks"""
        for name in ("qeda", "cmc"):
            report = validate_pdk(*load_pdk(name))
            assert report.ok, report.gaps

        data = qeda_document()
        data["alignment"] = [
            a for a in data["alignment"] if a["layer_pair"][0] != "jj_bottom"
        ]
        report = validate_pdk(*load_pdk(data))
        assert not report.ok
        assert any("no alignment spec" in gap for gap in report.gaps)

        # airbridges are not checked by the cmc deck
        report = validate_pdk(*load_pdk("cmc"))
        assert any("Airbridge" in note for note in report.notes)


if __name__ == "__main__":
    unittest.main(argv=["first-arg-is-ignored"], exit=False)
