import json

from ._wildsphere import Run, build, dimension_table, solve_s, truncation_energy

__all__ = ["Run", "build", "dimension_table", "ledger", "solve_s", "truncation_energy"]


def ledger(run):
    """The energy ledger of a run as a dict."""
    return json.loads(run.ledger_json())
