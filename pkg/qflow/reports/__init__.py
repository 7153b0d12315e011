from .command_line import RunConfig, main, run
from .tables import census_table, job_deck_table, step_plan_table, wafer_table

__all__ = [
    "RunConfig",
    "main",
    "run",
    "step_plan_table",
    "wafer_table",
    "census_table",
    "job_deck_table",
]
