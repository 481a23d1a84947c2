import json
from pathlib import Path

import pytest

from agot.agents import Agents
from agot.backend import MockBackend, MockScript
from agot.cli import bundled_script
from agot.config import AgotConfig
from agot.engine import Engine

DATA = Path(__file__).parent / "data"


def script_dict(name):
    return json.loads(bundled_script(name).read_text(encoding="utf-8"))


def mock_agents(script, **cfg):
    if isinstance(script, dict):
        base = dict(script.get("config") or {})
        base.update(cfg)
        script = MockScript.from_dict(script)
    else:
        base = dict(script.config or {})
        base.update(cfg)
    config = AgotConfig.from_dict(base)
    return Agents(MockBackend(script), config), config


def run_script(script, query=None, **cfg):
    agents, config = mock_agents(script, **cfg)
    if query is None:
        query = script["query"] if isinstance(script, dict) else script.query
    return Engine(agents, config).run_query(query), agents


@pytest.fixture
def fig5():
    return script_dict("fig5.json")


@pytest.fixture
def fig5_record(fig5):
    record, _ = run_script(fig5, concurrent=False)
    return record


# --- acceptance report ----------------------------------------------------------

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
