import json
import threading

import pytest

from agot.agents import AgentError, Agents
from agot.backend import MockBackend, MockScript
from agot.config import AgotConfig
from agot.engine import (Engine, JsonlTraceWriter, RunFailed, RunRecord, run_agot, run_query,
                         script_from_trace)
from agot.graph import (ROOT, GraphError, NodeStatus, Position, dumps_forest, max_total_nodes,
                        parse_heritage, validate_forest)

from alg_oracle import scripted_run
from conftest import mock_agents, run_script, script_dict

P = Position


def th(i, final=False, parents=()):
    return {"title": f"t{i}", "content": f"c{i}", "final": final,
            "parents": [{"layer": l, "node": n} for l, n in parents]}


def init(*ts):
    return {"strategy": "s", "thoughts": [{k: v for k, v in t.items() if k != "parents"}
                                          for t in ts]}


def layer(*ts):
    return {"strategy": "s", "thoughts": list(ts)}


def ans(text):
    return {"answer": text, "option": None}


def cx(v):
    return {"reasoning": "r", "is_complex": v}


# --- worked example -------------------------------------------------------------

def test_fig5_structure(fig5_record):
    forest = fig5_record.forest
    top = forest.root
    assert [len(l) for l in top.layers] == [3, 1, 1]
    assert {n.position for n in top.iter_nodes() if n.status is NodeStatus.EXPANDED_COMPLEX} \
        == {P(0, 0), P(1, 0)}
    assert top.nodes[P(2, 0)].status is NodeStatus.FINAL
    nested = [g for h, g in forest.graphs.items() if h]
    assert sorted(g.heritage_prefix for g in nested) == [(P(0, 0),), (P(1, 0),)]
    assert all(g.n_layers == 2 for g in nested)
    assert "8 Gpc" in fig5_record.final_answer.text
    assert fig5_record.tally == {"total_nodes": 17, "complex_nodes": 2,
                                 "complex_pct": pytest.approx(100 * 2 / 17), "graphs": 3}
    assert validate_forest(forest, AgotConfig()) == []


def test_fig5_nested_answer_feeds_parent(fig5_record):
    top = fig5_record.forest.root
    child = fig5_record.forest.graphs[(P(0, 0),)]
    assert top.nodes[P(0, 0)].answer == child.final_answer


# --- control flow -----------------------------------------------------------------

def test_final_at_layer_zero_returns_immediately():
    script = {"query": "q", "steps": [
        {"role": "gen_initial", "key": "L0", "payload": init(th(0), th(1, True))},
        {"role": "evaluate", "key": "0.1", "payload": ans("done")}]}
    record, agents = run_script(script)
    assert record.forest.root.n_layers == 1
    assert record.final_answer.text == "done"
    assert agents.calls.trace() == [("gen_initial", "L0"), ("evaluate", "0.1")]
    # the unprocessed sibling stays a plain new node
    assert record.forest.root.nodes[P(0, 0)].status is NodeStatus.NEW


def test_depth_guard_d_max_zero():
    steps = [{"role": "gen_initial", "key": "L0", "payload": init(th(0), th(1))},
             {"role": "check_complexity", "payload": cx(True)},
             {"role": "check_complexity", "payload": cx(True)},
             {"role": "evaluate", "key": "0.0", "payload": ans("a")},
             {"role": "evaluate", "key": "0.1", "payload": ans("b")},
             {"role": "select_final", "key": "final", "payload": {"title": "w", "content": "w"}},
             {"role": "evaluate", "key": "final", "payload": ans("ab")}]
    record, agents = run_script({"query": "q", "steps": steps}, d_max=0, l_max=1)
    assert len(record.forest.graphs) == 1
    assert not any(r == "check_complexity" for r, _ in agents.calls.trace())


def test_single_node_config():
    record, _ = run_script(script_dict("minimal.json"), d_max=0, l_max=1, n_max=1)
    assert record.tally["total_nodes"] == 1 and record.tally["complex_nodes"] == 0
    assert record.final_answer.text == "4"


def test_single_node_config_synthesized():
    script = {"query": "q", "steps": [
        {"role": "gen_initial", "key": "L0", "payload": init(th(0), th(1), th(2))},
        {"role": "evaluate", "key": "0.0", "payload": ans("a")},
        {"role": "select_final", "key": "final", "payload": {"title": "w", "content": "w"}},
        {"role": "evaluate", "key": "final", "payload": ans("z")}]}
    record, agents = run_script(script, d_max=0, l_max=1, n_max=1)
    assert record.tally["total_nodes"] == 1
    assert record.forest.root.synthesized_final is not None


def test_phi_called_exactly_once_without_final():
    script = {"query": "q", "steps": [
        {"role": "gen_initial", "key": "L0", "payload": init(th(0))},
        {"role": "check_complexity", "payload": cx(False)},
        {"role": "check_complexity", "payload": cx(False)},
        {"role": "evaluate", "key": "0.0", "payload": ans("a")},
        {"role": "gen_layer", "key": "L1", "payload": layer(th(0, parents=[(0, 0)]))},
        {"role": "evaluate", "key": "1.0", "payload": ans("b")},
        {"role": "select_final", "key": "final",
         "payload": {"title": "consolidate findings", "content": "c"}},
        {"role": "evaluate", "key": "final", "payload": ans("ab")}]}
    record, agents = run_script(script, l_max=2)
    roles = [r for r, _ in agents.calls.trace()]
    assert roles.count("select_final") == 1
    assert record.forest.root.synthesized_final.title == "consolidate findings"
    assert record.final_answer.text == "ab"


def test_phi_never_called_with_final(fig5_record):
    assert not any(c.role == "select_final" and "/" not in c.key and c.key == "final"
                   for c in fig5_record.calls)


def test_recursion_matches_verdicts(fig5, fig5_record):
    verdicts = {s["key"]: s["payload"]["is_complex"] for s in fig5["steps"]
                if s["role"] == "check_complexity"}
    for h, g in fig5_record.forest.graphs.items():
        for n in g.iter_nodes():
            key = "/".join(f"{p.layer}.{p.node}" for p in n.heritage)
            if key in verdicts:
                assert (n.status is NodeStatus.EXPANDED_COMPLEX) == verdicts[key]


def test_nested_graph_completes_before_next_layer():
    # every graph-building call of a nested graph precedes the next layer of its parent
    for seed in range(20):
        script, _ = scripted_run(seed, 2, 3, 3, p_complex=0.5, p_final=0.1)
        record, agents = run_script(script, concurrent=True)
        trace = agents.calls.trace()
        for i, (role, key) in enumerate(trace):
            if role != "gen_layer":
                continue
            prefix, _, lyr = key.rpartition("L")
            prev = int(lyr) - 1
            spawned = f"{prefix}{prev}."
            later = [k for _, k in trace[i + 1:]]
            assert not any(k.startswith(spawned) and "/" in k[len(spawned):] for k in later)


def test_missing_task_rejected():
    agents, cfg = mock_agents(script_dict("minimal.json"))
    with pytest.raises(ValueError):
        Engine(agents, cfg).run_agot("q", (P(0, 0),))
    with pytest.raises(GraphError):
        Engine(agents, cfg).run_agot("q", (P(0, 0), P(0, 0)))


def test_empty_query_rejected():
    agents, cfg = mock_agents(script_dict("minimal.json"))
    with pytest.raises(ValueError):
        run_query("  ", cfg, agents)


def test_module_level_run_agot():
    agents, cfg = mock_agents(script_dict("minimal.json"))
    answer, g = run_agot("What is 2 + 2?", ROOT, None, cfg, agents)
    assert answer.text == "4" and g.n_nodes == 1


# --- failures -------------------------------------------------------------------

def test_evaluation_failure_aborts_with_partial_forest():
    script = {"query": "q", "steps": [
        {"role": "gen_initial", "key": "L0", "payload": init(th(0), th(1))},
        {"role": "check_complexity", "payload": cx(False)},
        {"role": "check_complexity", "payload": cx(False)},
        {"role": "evaluate", "key": "0.0", "payload": ans("a")}]}
    with pytest.raises(RunFailed) as info:
        run_script(script, concurrent=False)
    forest = info.value.forest
    assert forest.root.n_nodes == 2
    assert forest.root.nodes[P(0, 0)].answer.text == "a"
    assert "evaluate[0.1]" in str(info.value)
    assert len(info.value.calls) == 4


def test_failure_in_concurrent_layer_reported():
    script = {"query": "q", "steps": [
        {"role": "gen_initial", "key": "L0", "payload": init(th(0), th(1), th(2))},
        {"role": "check_complexity", "payload": cx(False)},
        {"role": "evaluate", "key": "0.0", "payload": ans("a")},
        {"role": "evaluate", "key": "0.2", "payload": ans("c")}]}
    with pytest.raises(RunFailed, match="0.1"):
        run_script(script, concurrent=True)


# --- determinism and accounting ------------------------------------------------

def test_same_script_twice_is_byte_identical(fig5):
    a, _ = run_script(fig5)
    b, _ = run_script(fig5)
    assert a.dumps(timings=False) == b.dumps(timings=False)


def test_concurrency_does_not_change_forest(fig5):
    a, _ = run_script(fig5, concurrent=True)
    b, _ = run_script(fig5, concurrent=False)
    assert dumps_forest(a.forest) == dumps_forest(b.forest)


def test_usage_is_sum_of_calls(fig5_record):
    total = sum(c.usage.total_tokens for c in fig5_record.calls)
    assert fig5_record.usage.total_tokens == total > 0
    d = fig5_record.to_dict()
    assert d["usage"]["total_tokens"] == total
    assert d["usage"]["calls"] == len(fig5_record.calls) == 22


def test_record_round_trip(fig5_record):
    again = RunRecord.from_dict(json.loads(fig5_record.dumps()))
    assert again.dumps() == fig5_record.dumps()


def test_final_answer_equals_root(fig5_record):
    assert fig5_record.final_answer == fig5_record.forest.root.final_answer


# --- traces ---------------------------------------------------------------------

def test_trace_capture_replays(tmp_path, fig5):
    path = tmp_path / "trace.jsonl"
    writer = JsonlTraceWriter(path)
    script = MockScript.from_dict(fig5)
    agents = Agents(MockBackend(script), AgotConfig(), log_sink=writer)
    first = Engine(agents).run_query(fig5["query"])
    writer.close()
    events = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(events) == 22 and {"role", "key", "latency", "payload"} <= set(events[0])
    captured = script_from_trace(path)
    second, _ = run_script(captured, query=fig5["query"])
    assert dumps_forest(second.forest) == dumps_forest(first.forest)


def test_trace_bad_line(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"role": "io"}\nnot json\n')
    with pytest.raises(ValueError, match=":2:"):
        script_from_trace(path)
