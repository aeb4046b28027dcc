import os

import pytest

from commute_od.config import load_config
from commute_od.pipeline import run


def make_config(out_dir, **overrides):
    sets = [f"out_dir={out_dir}"] + [f"{k}={v}" for k, v in overrides.items()]
    return load_config(None, sets)


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """A 60-agent synthetic world run through every stage once."""
    out = tmp_path_factory.mktemp("world")
    cfg = make_config(out, synth_agents=60, seed=7)
    run("synth", cfg)
    run("all", cfg)
    return out


def read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


@pytest.fixture
def chicago():
    from commute_od.ingest import load_zone

    return load_zone("America/Chicago")


def pytest_report_header(config):
    from commute_od import BACKEND

    return f"commute_od kernel backend: {BACKEND} (pure-python forced: {bool(os.environ.get('COMMUTE_OD_PURE_PYTHON'))})"


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
