import time
from dataclasses import dataclass, field

import pytest

from mnd import cli
from mnd.config import load_config

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail):
    ACCEPTANCE[number] = (title, bool(passed), detail)


@dataclass
class DeskRun:
    cfg: object
    out: str
    layout: object
    seconds: dict = field(default_factory=dict)
    train_data: object = None
    test_data: object = None
    classifier: object = None
    report: object = None
    attack_records: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    claims: list = field(default_factory=list)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """The full default pipeline (seed 0), run once per session with per-stage timing."""
    cfg = load_config()
    out = str(tmp_path_factory.mktemp("desk"))
    run = DeskRun(cfg, out, cli.Layout(out, cfg))

    def timed(name, fn):
        t0 = time.perf_counter()
        value = fn(cfg, out)
        run.seconds[name] = time.perf_counter() - t0
        return value

    run.train_data, run.test_data = timed("gen-data", cli.cmd_gen_data)
    run.classifier, run.report = timed("train", cli.cmd_train)
    run.attack_records = timed("attack", cli.cmd_attack)
    run.reports = timed("evaluate", cli.cmd_evaluate)
    run.claims = cli.ordering_summary(run.reports)
    cli.write_summary(out, run.claims)
    return run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
