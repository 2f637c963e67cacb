"""Shared fixtures.

Scenario runs dominate the suite's wall time, so each builtin scenario is
executed at most twice per session (the determinism check needs exactly
two) and every test that wants its numbers reads from the same cache.
Sweeps are cached the same way.
"""

import csv
import io
import time
from contextlib import redirect_stderr, redirect_stdout

import pytest

from flushsim.cli import main as cli_main
from flushsim.scenario_io import build_world, report_json, resolve_scenario


class ScenarioRuns:
    """Two independent runs of one builtin scenario."""

    def __init__(self, name: str):
        self.name = name
        cfg, text = resolve_scenario(name)
        t0 = time.perf_counter()
        self.report = build_world(cfg, text).run()
        self.wall_s = time.perf_counter() - t0
        cfg2, text2 = resolve_scenario(name)
        self.report_again = build_world(cfg2, text2).run()
        self.json = report_json(self.report)
        self.json_again = report_json(self.report_again)


@pytest.fixture(scope="session")
def run_scenario():
    cache = {}

    def get(name: str) -> ScenarioRuns:
        if name not in cache:
            cache[name] = ScenarioRuns(name)
        return cache[name]

    return get


def run_cli(argv):
    """Invoke the CLI in-process. Returns (exit_code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = cli_main(argv)
    return code, out.getvalue(), err.getvalue()


class SweepResult:
    def __init__(self, code, rows, wall_s):
        self.code = code
        self.rows = rows
        self.wall_s = wall_s

    def cell(self, axis_value, volume, column):
        for row in self.rows:
            if row["volume"] == volume and row[self.axis] == str(axis_value):
                return float(row[column])
        raise KeyError((axis_value, volume))


@pytest.fixture(scope="session")
def run_sweep(tmp_path_factory):
    cache = {}
    root = tmp_path_factory.mktemp("sweeps")

    def get(scenario: str, axis: str, values: str) -> SweepResult:
        key = (scenario, axis, values)
        if key not in cache:
            out = root / f"{scenario}-{axis}.csv"
            t0 = time.perf_counter()
            code, _, _ = run_cli(
                ["sweep", scenario, "--axis", axis, "--values", values,
                 "--out", str(out)]
            )
            wall = time.perf_counter() - t0
            rows = []
            if code == 0:
                with open(out, newline="") as fh:
                    rows = list(csv.DictReader(fh))
            res = SweepResult(code, rows, wall)
            res.axis = axis
            cache[key] = res
        return cache[key]

    return get
