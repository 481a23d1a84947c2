import json
import os

import pytest

from agot.cli import SETTINGS, build_parser, main, resolve_config, UsageError

from conftest import DATA, script_dict

GOLDEN = __import__("pathlib").Path(__file__).parent / "golden"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("AGOT_") or key.startswith("OPENAI_"):
            monkeypatch.delenv(key)


# --- run ------------------------------------------------------------------------

def test_run_fig5(capsys, tmp_path):
    rec = tmp_path / "rec.json"
    dot = tmp_path / "g.dot"
    assert main(["run", "--mock", "fig5.json", "--record", str(rec), "--dot", str(dot)]) == 0
    out, err = capsys.readouterr()
    assert "8 Gpc" in out
    assert "17 nodes, 2 complex (11.8%)" in err
    assert json.loads(rec.read_text())["tally"]["total_nodes"] == 17
    assert dot.read_text().count("subgraph cluster_") == 2


def test_run_single_node(capsys):
    assert main(["run", "--d-max", "0", "--l-max", "1", "--n-max", "1", "--mock", "minimal.json",
                 "What is 2 + 2?"]) == 0
    out, err = capsys.readouterr()
    assert out.strip() == "4" and "[1 nodes, 0 complex" in err


def test_run_missing_api_key(capsys):
    assert main(["run", "what?"]) == 2
    assert "AGOT_API_KEY" in capsys.readouterr().err


def test_replay_alias(capsys):
    assert main(["replay", "fig5"]) == 0
    assert "8 Gpc" in capsys.readouterr().out


def test_run_failure_exit_code(capsys, tmp_path):
    script = script_dict("fig5.json")
    script["steps"] = [s for s in script["steps"] if s["role"] != "select_final"]
    script["steps"] = [s for s in script["steps"] if not (s["role"] == "evaluate" and s["key"] == "0.1")]
    p = tmp_path / "broken.json"
    p.write_text(json.dumps(script))
    assert main(["run", "--mock", str(p), "--concurrent", "false"]) == 1
    assert "run failed" in capsys.readouterr().err


def test_unknown_mock_script(capsys):
    assert main(["run", "--mock", "nope.json", "q"]) == 2
    assert "not found" in capsys.readouterr().err


# --- config precedence ----------------------------------------------------------

def test_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"d_max": 2, "l_max": 4, "n_max": 2, "model": "file-model"}))
    env = {"AGOT_L_MAX": "2", "AGOT_N_MAX": "4"}
    r = resolve_config({"n_max": "1"}, env, cfg)
    assert (r.agot.d_max, r.agot.l_max, r.agot.n_max) == (2, 2, 1)
    assert r.agot.model == "file-model" and r.agot.temperature == 0.3
    assert r.sources == {**{s.name: "default" for s in SETTINGS}, "d_max": "file", "l_max": "env",
                         "n_max": "flag", "model": "file"}


def test_config_file_from_env(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"temperature": 0.7}))
    assert resolve_config({}, {"AGOT_CONFIG": str(cfg)}).agot.temperature == 0.7


@pytest.mark.parametrize("setting", SETTINGS, ids=lambda s: s.name)
def test_every_setting_has_file_env_and_flag(setting, tmp_path):
    sample = {int: "2", float: "0.5", str: "x"}.get(setting.type, "false")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({setting.name: sample}))
    assert resolve_config({}, {}, cfg).sources[setting.name] == "file"
    assert resolve_config({}, {setting.env: sample}, cfg).sources[setting.name] == "env"
    assert resolve_config({setting.name: sample}, {setting.env: sample}, cfg).sources[setting.name] == "flag"
    parsed = build_parser().parse_args(["config", setting.flag, sample])
    assert getattr(parsed, setting.name) == sample


@pytest.mark.parametrize("flags,env,msg", [({"d_max": "-1"}, {}, "d_max"),
                                           ({"l_max": "x"}, {}, "invalid"),
                                           ({}, {"AGOT_CONCURRENT": "maybe"}, "boolean")])
def test_invalid_settings(flags, env, msg):
    with pytest.raises(UsageError, match=msg):
        resolve_config(flags, env)


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"depth": 3}')
    with pytest.raises(UsageError, match="unknown setting"):
        resolve_config({}, {}, cfg)


def test_config_command(capsys, monkeypatch):
    monkeypatch.setenv("AGOT_L_MAX", "2")
    assert main(["config", "--d-max", "0"]) == 0
    out = capsys.readouterr().out
    assert "d_max" in out and "[flag]" in out and "l_max" in out and "[env]" in out


# --- help golden ----------------------------------------------------------------

COMMANDS = ["run", "replay", "bench", "export", "capture", "table", "config"]


def help_text():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    parts = [parser.format_help()] + [sub.choices[c].format_help() for c in COMMANDS]
    return "\n".join(parts)


def test_help_golden(monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    text = help_text()
    path = GOLDEN / "help.txt"
    if os.environ.get("UPDATE_GOLDEN"):
        path.write_text(text, encoding="utf-8")
    assert text == path.read_text(encoding="utf-8")
    for c in COMMANDS:
        assert c in text
    for s in SETTINGS:
        assert s.flag in text and s.env in text


# --- bench ----------------------------------------------------------------------

def game24_script(tmp_path, answers):
    steps = []
    for item_id, text in answers.items():
        steps += [{"role": "gen_initial", "key": f"{item_id}:L0", "payload": {
                      "strategy": "s", "thoughts": [{"title": "t", "content": "c", "final": True}]}},
                  {"role": "evaluate", "key": f"{item_id}:0.0",
                   "payload": {"answer": text, "option": None}}]
    p = tmp_path / "script.json"
    p.write_text(json.dumps({"steps": steps}))
    return p


def test_bench_and_resume(capsys, tmp_path):
    script = game24_script(tmp_path, {"g24-1": "(7-8/8)*4", "g24-2": "1+1+1+1",
                                      "g24-3": "8/(3-8/3)"})
    run_dir = tmp_path / "run"
    assert main(["bench", str(DATA / "game24.csv"), "--format", "game24-csv", "--framework",
                 "AGoT", "--mock", str(script), "--run-dir", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert "3/3 items" in out and "accuracy: 66.7" in out and "mean nodes: 1.0" in out
    summary = (run_dir / "summary.json").read_text()
    lines = (run_dir / "items.jsonl").read_text()
    # resuming a finished run makes no calls: an empty-ish script would underrun otherwise
    empty = tmp_path / "none.json"
    empty.write_text(json.dumps({"steps": [{"role": "io", "payload": {}}]}))
    assert main(["bench", str(DATA / "game24.csv"), "--format", "game24-csv", "--framework",
                 "AGoT", "--mock", str(empty), "--resume", str(run_dir)]) == 0
    assert (run_dir / "summary.json").read_text() == summary
    assert (run_dir / "items.jsonl").read_text() == lines


def test_bench_resume_requires_run(capsys, tmp_path):
    assert main(["bench", str(DATA / "game24.csv"), "--format", "game24-csv", "--framework",
                 "IO", "--mock", "minimal", "--resume", str(tmp_path)]) == 2


def test_bench_shuffle_seed_deterministic(capsys, tmp_path):
    steps = [{"role": "io", "key": f"{q}:answer", "payload": {"answer": "x", "option": "A"}}
             for q in ("q1", "q2")]
    script = tmp_path / "s.json"
    script.write_text(json.dumps({"steps": steps}))
    summaries = []
    for name in ("a", "b"):
        assert main(["bench", str(DATA / "gpqa.jsonl"), "--format", "gpqa-mcq", "--framework", "IO",
                     "--mock", str(script), "--shuffle-seed", "7", "--run-dir",
                     str(tmp_path / name)]) == 0
        summaries.append((tmp_path / name / "summary.json").read_text())
    assert summaries[0] == summaries[1]


def test_bench_bad_dataset(capsys, tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("1,2,x,4\n")
    assert main(["bench", str(p), "--format", "game24-csv", "--framework", "IO",
                 "--mock", "minimal"]) == 2
    assert "g.csv:1" in capsys.readouterr().err


def test_table_command(capsys, tmp_path):
    answers = {"g24-1": "(7-8/8)*4", "g24-2": "nope", "g24-3": "nope"}
    steps = [{"role": "io", "key": f"{k}:answer", "payload": {"answer": v, "option": None}}
             for k, v in answers.items()]
    s = tmp_path / "io.json"
    s.write_text(json.dumps({"steps": steps}))
    assert main(["bench", str(DATA / "game24.csv"), "--format", "game24-csv", "--framework", "IO",
                 "--mock", str(s), "--run-dir", str(tmp_path / "io")]) == 0
    a = game24_script(tmp_path, {"g24-1": "(7-8/8)*4", "g24-2": "x", "g24-3": "8/(3-8/3)"})
    assert main(["bench", str(DATA / "game24.csv"), "--format", "game24-csv", "--framework",
                 "AGoT", "--mock", str(a), "--run-dir", str(tmp_path / "agot"),
                 "--baseline", str(tmp_path / "io")]) == 0
    assert "(+100.0% vs IO)" in capsys.readouterr().out
    out = tmp_path / "t.csv"
    assert main(["table", str(tmp_path / "io"), str(tmp_path / "agot"), "--dataset", "G24",
                 "-o", str(out)]) == 0
    assert out.read_text().splitlines()[1] == "G24,accuracy,33.3,66.7,+100.0"


# --- export / capture ---------------------------------------------------------

@pytest.fixture
def record_file(tmp_path, capsys):
    rec = tmp_path / "rec.json"
    assert main(["run", "--mock", "fig5", "--record", str(rec)]) == 0
    capsys.readouterr()
    return rec


def test_export_dot(record_file, capsys):
    assert main(["export", str(record_file), "--format", "dot"]) == 0
    dot = capsys.readouterr().out
    assert dot.count("subgraph cluster_") == 2
    assert dot.count("{ rank=same;") == 3 + 2 + 2


def test_export_json_round_trip(record_file, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["export", str(record_file), "--format", "json", "-o", str(a)]) == 0
    assert main(["export", str(a), "--format", "json", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_export_unknown_format(record_file, capsys):
    assert main(["export", str(record_file), "--format", "svg"]) == 2


def test_export_corrupt_record(record_file, tmp_path, capsys):
    data = json.loads(record_file.read_text())
    del data["forest"]["graphs"][0]["layers"]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert main(["export", str(bad), "--format", "json"]) == 1
    assert "layers" in capsys.readouterr().err
    bad.write_text("{not json")
    assert main(["export", str(bad), "--format", "json"]) == 1


def test_capture_round_trip(tmp_path, capsys):
    trace = tmp_path / "t.jsonl"
    assert main(["run", "--mock", "fig5", "--trace", str(trace)]) == 0
    first = capsys.readouterr().out
    script = tmp_path / "captured.json"
    query = script_dict("fig5.json")["query"]
    assert main(["capture", str(trace), "-o", str(script), "--query", query]) == 0
    assert main(["run", "--mock", str(script)]) == 0
    assert capsys.readouterr().out.splitlines()[-1] == first.strip()
