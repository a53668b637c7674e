import json
import os
import time

import pytest

from eegdann.harness import cli

# (criterion, verdict, detail) rows collected by the acceptance suite.
VERDICTS = []


def record(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    VERDICTS.append(line)
    print(line)
    return ok


def run_loso(out_dir, *extra):
    """Run the bench-preset study through the command line; return (study.json, seconds)."""
    start = time.perf_counter()
    code = cli.main(["loso", "--preset", "bench", "--out", str(out_dir), *extra])
    elapsed = time.perf_counter() - start
    assert code == 0, f"loso exited with {code}"
    with open(os.path.join(out_dir, "study.json"), encoding="utf-8") as fh:
        return json.load(fh), elapsed


@pytest.fixture(scope="session")
def bench_study(tmp_path_factory):
    return run_loso(tmp_path_factory.mktemp("bench"))


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
