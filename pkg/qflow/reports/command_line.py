# Author: Nicolas Legrand <nicolas.legrand@cfin.au.dk>

"""The `qflow` command: pipeline stages from a GDSII layout to a foundry package.

Exit codes: 0 when every check passes, 1 when a stage ran but found violations
or failing checks (its reports are still written), 2 when a stage could not run.

"""

import argparse
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator  # noqa: E402

from qflow import __version__ as version  # noqa: E402
from qflow.chipgen import ChipSpec, XmonParams, generate_chip, load_recipe  # noqa: E402
from qflow.drc import run_drc  # noqa: E402
from qflow.gds import Layout, flatten, read_gds, write_gds_file  # noqa: E402
from qflow.mdp import (  # noqa: E402
    GateError,
    build_job_deck,
    build_reticles,
    export_package,
    exposure_field,
    fracture_layers,
    mask_layers,
    tapeout_check,
    trap_name,
    write_trap,
)
from qflow.pdk import load_pdk  # noqa: E402
from qflow.plots import plot_violations, plot_wafer  # noqa: E402
from qflow.process import map_layers  # noqa: E402
from qflow.reports.tables import (  # noqa: E402
    census_table,
    job_deck_table,
    step_plan_table,
    wafer_table,
)
from qflow.utils import dump_json  # noqa: E402
from qflow.waferplan import DieSpec, ScribeSpec, WaferSpec, emit_wafer_layout, plan_wafer  # noqa: E402

logger = logging.getLogger(__name__)

COMMANDS = ("gen", "drc", "map", "plan", "fracture", "tapeout", "export", "pipeline")
FORMATS = ("json", "text", "svg")
LOG_FORMAT = "%(asctime)s | %(levelname)-7s | %(message)s"

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

# --gen keys that map onto the chip specification; the others go to XmonParams
GEN_ALIASES = {"qubits": "qubit_count", "qubit_count": "qubit_count", "topology": "topology"}


class RunConfig(BaseModel):
    """Options of one `qflow` run, checked before any stage starts."""

    model_config = ConfigDict(frozen=True)

    command: str = Field(pattern="^(" + "|".join(COMMANDS) + ")$")
    layout: Optional[Path] = None
    pdk: Optional[Path] = None
    deck: str = "qeda"
    out: Path = Path("qflow_out")
    formats: Set[str] = set(FORMATS)
    waiver: Optional[str] = None
    overwrite: bool = False
    wafer_diameter_mm: float = Field(default=300.0, gt=0)
    edge_exclusion_mm: float = Field(default=5.0, ge=0)
    scribe_mm: float = Field(default=0.2, ge=0)
    die_mm: Tuple[float, float] = (24.0, 28.0)
    seed: int = 0
    n_jobs: Optional[int] = None
    verbose: int = 0
    gen: Dict[str, str] = Field(default_factory=dict)

    @field_validator("layout", "pdk")
    @classmethod
    def _exists(cls, value: Optional[Path]) -> Optional[Path]:
        if value is not None and not value.is_file():
            raise ValueError(f"{value} does not exist.")
        return value

    @field_validator("formats")
    @classmethod
    def _formats(cls, value: Set[str]) -> Set[str]:
        unknown = value - set(FORMATS)
        if unknown:
            raise ValueError(f"Unknown report formats {sorted(unknown)}.")
        return value

    @field_validator("die_mm", mode="before")
    @classmethod
    def _die(cls, value):
        if isinstance(value, str):
            try:
                w, h = (float(v) for v in value.lower().split("x"))
            except ValueError as err:
                raise ValueError(f"Die size must read WxH in mm, got {value!r}.") from err
            return (w, h)
        return value

    @property
    def wafer(self) -> WaferSpec:
        return WaferSpec(
            diameter_mm=self.wafer_diameter_mm, edge_exclusion_mm=self.edge_exclusion_mm
        )

    @property
    def die(self) -> DieSpec:
        return DieSpec(width_mm=self.die_mm[0], height_mm=self.die_mm[1])

    @property
    def scribe(self) -> ScribeSpec:
        return ScribeSpec(lane_width_mm=self.scribe_mm)

    def chip_spec(self) -> ChipSpec:
        spec: dict = {"die": self.die, "seed": self.seed}
        xmon: dict = {}
        for key, value in self.gen.items():
            if key in GEN_ALIASES:
                spec[GEN_ALIASES[key]] = value
            elif key == "seed":
                spec["seed"] = int(value)
            elif key in XmonParams.model_fields:
                xmon[key] = value
            else:
                raise ValueError(f"Unknown generator option {key!r}.")
        if xmon:
            spec["xmon"] = XmonParams(**{**load_recipe().xmon.model_dump(), **xmon})
        return ChipSpec.model_validate(spec)


class StageFailure(Exception):
    """A stage ran and its verdict is negative."""


class Run:
    """State shared by the stages of one invocation."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.out = config.out
        self.out.mkdir(parents=True, exist_ok=True)
        self.pdk, self.stack = load_pdk(config.pdk if config.pdk else config.deck)
        self.timings: Dict[str, float] = {}
        self.failures: List[str] = []
        self._layout: Optional[Layout] = None
        self._flat = None
        self.results: dict = {}

    def timed(self, stage: str, func):
        start = time.perf_counter()
        try:
            return func()
        finally:
            self.timings[stage] = round(time.perf_counter() - start, 6)

    @property
    def layout(self) -> Layout:
        if self._layout is None:
            if self.config.layout is not None:
                self._layout = read_gds(self.config.layout)
                logger.info("Read %s (%d cells).", self.config.layout, len(self._layout.cells))
            elif self.config.gen or self.config.command in ("gen", "pipeline"):
                self._layout = self.timed("gen", self.generate)
            else:
                raise ValueError("No layout given: pass a GDSII file or --gen options.")
        return self._layout

    @property
    def flat(self):
        if self._flat is None:
            self._flat = flatten(self.layout)
        return self._flat

    def write_text(self, name: str, text: str):
        if "text" in self.config.formats:
            (self.out / name).write_text(text, encoding="utf-8")

    def write_json(self, name: str, data):
        if "json" in self.config.formats:
            dump_json(data, self.out / name)

    def write_svg(self, name: str, plot):
        if "svg" in self.config.formats:
            plot.figure.savefig(self.out / name, format="svg", metadata={"Date": None})
        plt.close("all")

    ##########
    # Stages #
    ##########

    def generate(self) -> Layout:
        spec = self.config.chip_spec()
        layout, census = generate_chip(spec, self.stack)
        write_gds_file(layout, self.out / "layout.gds")
        self.write_json("census.json", census.to_dict())
        self.write_text("census.txt", census_table(census) + "\n")
        self.results["census"] = census
        return layout

    def drc(self):
        report = run_drc(self.flat, self.pdk, n_jobs=self.config.n_jobs)
        (self.out / "drc_report.json").write_text(report.to_json(), encoding="utf-8")
        self.write_text("drc_report.txt", report.to_text())
        self.write_svg("drc_violations.svg", plot_violations(report, self.flat, self.pdk))
        self.results["drc"] = report
        if not report.ok:
            self.failures.append(f"{len(report.violations)} DRC violations")
        if report.errors:
            self.failures.append(f"DRC incomplete: {'; '.join(report.errors)}")
        return report

    def map(self):
        step_plan = map_layers(self.flat, self.stack)
        step_plan.to_csv(self.out / "step_plan.csv")
        self.write_text("step_plan.txt", step_plan_table(step_plan) + "\n")
        self.results["step_plan"] = step_plan
        return step_plan

    def plan(self):
        c = self.config
        plan = plan_wafer(c.wafer, c.die, c.scribe, verbose=c.verbose > 0)
        plan.save(self.out / "wafer_plan.json")
        self.write_text("wafer_plan.txt", wafer_table(plan) + "\n")
        self.write_svg("wafer_map.svg", plot_wafer(plan))
        self.results["plan"] = plan
        return plan

    def fracture(self):
        flat = self.flat
        sets = fracture_layers(
            flat, mask_layers(flat, self.stack), n_jobs=self.config.n_jobs,
            verbose=self.config.verbose > 0,
        )
        reticles = build_reticles(sets, exposure_field(flat, self.pdk), self.stack)
        mask = self.out / "mask"
        mask.mkdir(exist_ok=True)
        for s in sets:
            write_trap(s, mask / trap_name(s.layer, s.datatype))
        dump_json([r.to_dict() for r in reticles], self.out / "reticles.json")
        self.results["sets"] = sets
        self.results["reticles"] = reticles
        return sets, reticles

    def tapeout(self):
        try:
            flat = self.flat
        except Exception as err:
            # T2 reports the flatten failure
            logger.warning("Flatten failed: %s", err)
            flat = None
        report = tapeout_check(self.layout, flat, self.pdk)
        (self.out / "tapeout_report.json").write_text(report.to_json(), encoding="utf-8")
        self.write_text("tapeout_report.txt", report.to_text())
        self.results["tapeout"] = report
        if not report.ok:
            self.failures.append(
                "tape-out checks failed: " + ", ".join(c.id for c in report.failed())
            )
        return report

    def export(self):
        r = self.results
        for stage, key in (
            ("drc", "drc"),
            ("tapeout", "tapeout"),
            ("map", "step_plan"),
            ("plan", "plan"),
            ("fracture", "sets"),
        ):
            if key not in r:
                self.timed(stage, getattr(self, stage))
        drc, tapeout, step_plan, plan = r["drc"], r["tapeout"], r["step_plan"], r["plan"]
        job_deck = build_job_deck(plan, r["reticles"], self.stack)
        wafer_layout = emit_wafer_layout(plan, self.layout, self.config.scribe)
        self.write_text("jobdeck.txt", job_deck_table(job_deck) + "\n")
        try:
            package = export_package(
                self.out / "package",
                self.layout,
                wafer_layout,
                drc,
                tapeout,
                step_plan,
                plan,
                r["sets"],
                job_deck,
                waiver=self.config.waiver,
                overwrite=self.config.overwrite,
            )
        except GateError as err:
            raise StageFailure(str(err)) from err
        if self.config.waiver and self.failures:
            logger.warning("Waived: %s.", "; ".join(self.failures))
            self.failures.clear()
        self.results["package"] = package
        return package

    def pipeline(self):
        for stage in ("drc", "map", "plan", "fracture", "tapeout", "export"):
            self.timed(stage, getattr(self, stage))


def run(config: RunConfig) -> Tuple[int, str]:
    """Run one command and write its reports.

    Returns
    -------
    code :
        The exit code.
    status :
        One-line verdict.

    """
    started = datetime.now(timezone.utc)
    run_ = Run(config)
    try:
        if config.command == "gen":
            run_.layout
        else:
            run_.timed(config.command, getattr(run_, config.command))
        code = EXIT_FAIL if run_.failures else EXIT_OK
        status = "; ".join(run_.failures) if run_.failures else "ok"
    except StageFailure as err:
        code, status = EXIT_FAIL, str(err)
    dump_json(
        {
            "command": config.command,
            "version": version,
            "started": started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "elapsed_s": run_.timings,
            "exit_code": code,
        },
        config.out / "run_metadata.json",
    )
    return code, status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qflow",
        description="Verification and mask data preparation for superconducting quantum chips.",
    )
    parser.add_argument("--version", action="version", version=f"qflow {version}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "Generate a test chip.",
        "drc": "Run the design rule check.",
        "map": "Map layers to process steps.",
        "plan": "Plan die sites on the wafer.",
        "fracture": "Fracture mask layers into trapezoids.",
        "tapeout": "Run the tape-out checks.",
        "export": "Write the foundry package.",
        "pipeline": "Run every stage in order.",
    }
    for command in COMMANDS:
        p = sub.add_parser(command, help=helps[command])
        if command not in ("gen", "plan"):
            p.add_argument("layout", nargs="?", help="GDSII layout.")
        p.add_argument("--pdk", help="PDK deck file (JSON).")
        p.add_argument("--deck", default="qeda", help="Shipped deck name. Defaults to qeda.")
        p.add_argument("-o", "--out", default="qflow_out", help="Output directory.")
        p.add_argument(
            "--format", nargs="+", choices=FORMATS, default=list(FORMATS),
            help="Report formats.",
        )
        p.add_argument("--waiver", help="Waiver note letting a failing design be packaged.")
        p.add_argument("--overwrite", action="store_true", help="Replace an existing package.")
        p.add_argument("--wafer-diameter-mm", type=float, default=300.0)
        p.add_argument("--edge-exclusion-mm", type=float, default=5.0)
        p.add_argument("--scribe-mm", type=float, default=0.2)
        p.add_argument("--die-mm", default="24x28", help="Die size WxH in mm.")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--n-jobs", type=int, default=None, help="Number of workers.")
        p.add_argument(
            "--gen", nargs="+", action="extend", default=[], metavar="KEY=VALUE",
            help="Generator options, e.g. qubits=4 topology=diamond.",
        )
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _parse_gen(items: List[str]) -> Dict[str, str]:
    options = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"Generator option {item!r} must read KEY=VALUE.")
        options[key.strip()] = value.strip()
    return options


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format=LOG_FORMAT,
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
    )
    try:
        config = RunConfig(
            command=args.command,
            layout=getattr(args, "layout", None),
            pdk=args.pdk,
            deck=args.deck,
            out=args.out,
            formats=set(args.format),
            waiver=args.waiver,
            overwrite=args.overwrite,
            wafer_diameter_mm=args.wafer_diameter_mm,
            edge_exclusion_mm=args.edge_exclusion_mm,
            scribe_mm=args.scribe_mm,
            die_mm=args.die_mm,
            seed=args.seed,
            n_jobs=args.n_jobs,
            verbose=args.verbose,
            gen=_parse_gen(args.gen),
        )
        code, status = run(config)
    except (ValidationError, ValueError, KeyError, OSError) as err:
        logger.debug("Run aborted.", exc_info=True)
        print(f"qflow {args.command}: error: {err}".replace("\n", " "), file=sys.stderr)
        return EXIT_ERROR
    verdict = status if code == EXIT_OK else f"failed: {status}"
    print(f"qflow {args.command}: {verdict}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
