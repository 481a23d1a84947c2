"""The adaptive graph-of-thoughts engine.

One coordinator builds each graph layer by layer. After a layer is generated,
a final-flagged thought ends the graph immediately; otherwise every node is
either expanded into a nested graph (when judged complex and the depth budget
allows) or answered directly. The next layer starts only after all of that has
finished. A graph that reaches ``l_max`` layers without a final thought gets a
synthesized one.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .agents import AgentError, Agents, CallRecord, GraphContext, graph_context, node_context
from .backend import Usage
from .config import AgotConfig
from .graph import (ROOT, Answer, Graph, GraphError, NodeStatus, Position, RunForest, Thought,
                    add_layer, forest_from_dict, forest_to_dict, heritage_str)

log = logging.getLogger(__name__)


class RunFailed(RuntimeError):
    """A run aborted; ``forest`` holds whatever had been built so far."""

    def __init__(self, message, forest: RunForest, calls=()):
        super().__init__(message)
        self.forest = forest
        self.calls = list(calls)


def layer_key(h: tuple, layer: int) -> str:
    prefix = heritage_str(h)
    return f"{prefix}/L{layer}" if prefix else f"L{layer}"


def final_key(h: tuple) -> str:
    prefix = heritage_str(h)
    return f"{prefix}/final" if prefix else "final"


def tally(forest: RunForest) -> dict:
    total = sum(g.n_nodes for g in forest.graphs.values())
    complex_nodes = sum(1 for g in forest.graphs.values() for n in g.nodes.values()
                        if n.status is NodeStatus.EXPANDED_COMPLEX)
    return {"total_nodes": total, "complex_nodes": complex_nodes,
            "complex_pct": 100.0 * complex_nodes / total if total else 0.0,
            "graphs": len(forest.graphs)}


@dataclass
class RunRecord:
    query: str
    final_answer: Answer
    forest: RunForest
    calls: list = field(default_factory=list)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def tally(self) -> dict:
        return tally(self.forest)

    @property
    def usage(self) -> Usage:
        total = Usage()
        for c in self.calls:
            total = total + c.usage
        return total

    def to_dict(self, timings: bool = True) -> dict:
        """Without ``timings`` the record is reproducible: latencies and wall time are
        dropped and calls are listed by step key instead of completion order."""
        ordered = self.calls if timings else sorted(
            self.calls, key=lambda c: (c.key, c.role, c.attempt))
        calls = []
        for c in ordered:
            d = c.to_dict()
            if not timings:
                d.pop("latency")
            calls.append(d)
        u = self.usage
        out = {
            "query": self.query,
            "final_answer": self.final_answer.text,
            "final_option": self.final_answer.option,
            "config": self.config,
            "tally": self.tally,
            "usage": {"prompt_tokens": u.prompt_tokens, "completion_tokens": u.completion_tokens,
                      "total_tokens": u.total_tokens, "calls": len(self.calls)},
            "calls": calls,
            "forest": forest_to_dict(self.forest),
        }
        if timings:
            out["wall_time"] = self.wall_time
        return out

    def dumps(self, timings: bool = True) -> str:
        return json.dumps(self.to_dict(timings), indent=2, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        for key in ("query", "final_answer", "forest"):
            if key not in d:
                raise GraphError(f"run record: missing field {key!r}")
        calls = [CallRecord(c["role"], c["key"], c.get("model", ""), c.get("attempt", 0),
                            Usage(c.get("prompt_tokens", 0), c.get("completion_tokens", 0)),
                            c.get("latency", 0.0), c.get("error")) for c in d.get("calls", [])]
        return cls(query=d["query"], final_answer=Answer(d["final_answer"], d.get("final_option")),
                   forest=forest_from_dict(d["forest"]), calls=calls,
                   wall_time=d.get("wall_time", 0.0), config=d.get("config", {}))


class Engine:
    def __init__(self, agents: Agents, config: Optional[AgotConfig] = None):
        self.agents = agents
        self.config = config or agents.config
        self._forest_lock = threading.Lock()

    def run_query(self, query: str) -> RunRecord:
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        forest = RunForest()
        start = time.perf_counter()
        first_call = len(self.agents.calls)
        try:
            answer, _ = self.run_agot(query, ROOT, None, forest=forest)
        except (AgentError, GraphError) as exc:
            raise RunFailed(str(exc), forest, self.agents.calls.records[first_call:]) from exc
        return RunRecord(query=query, final_answer=answer, forest=forest,
                         calls=list(self.agents.calls.records[first_call:]),
                         wall_time=time.perf_counter() - start, config=self.config.to_dict())

    def run_agot(self, query: str, heritage: tuple = ROOT, parent: Optional[GraphContext] = None,
                 *, forest: Optional[RunForest] = None, task: Optional[Thought] = None):
        """Build the graph at ``heritage`` and return ``(final_answer, graph)``.

        ``query`` is always the original query; ``task`` is the complex
        thought being decomposed when ``heritage`` is non-empty.
        """
        cfg = self.config
        if len(heritage) > cfg.d_max:
            raise GraphError(f"heritage depth {len(heritage)} exceeds d_max={cfg.d_max}")
        if heritage and task is None:
            raise ValueError("a nested graph needs the complex thought it decomposes")
        forest = forest if forest is not None else RunForest()
        with self._forest_lock:
            g = forest.new_graph(heritage)
        d = len(heritage)

        for layer in range(cfg.l_max):
            key = layer_key(heritage, layer)
            if layer == 0 and d == 0:
                proposal = self.agents.gen_initial(query, cfg.n_max, key)
            elif layer == 0:
                proposal = self.agents.gen_nested_initial(task, parent, cfg.n_max, key)
            else:
                proposal = self.agents.gen_layer(graph_context(query, g, task), cfg.n_max, key)
            add_layer(g, proposal.thoughts, proposal.strategy, proposal.edges,
                      proposal.final_flags, l_max=cfg.l_max, n_max=cfg.n_max)

            fi = proposal.final_index
            if fi is not None:
                pos = Position(layer, fi)
                node = g.nodes[pos]
                answer = self.agents.evaluate(node.thought, node_context(query, g, pos, task),
                                              heritage_str(node.heritage))
                node.answer = answer
                node.status = NodeStatus.FINAL
                g.final_answer = answer
                return answer, g

            positions = list(g.layers[layer])
            if cfg.concurrent and len(positions) > 1:
                with ThreadPoolExecutor(max_workers=len(positions)) as pool:
                    futures = [pool.submit(self._process_node, query, forest, g, pos, task)
                               for pos in positions]
                    errors = [f.exception() for f in futures]
                first_error = next((e for e in errors if e is not None), None)
                if first_error is not None:
                    raise first_error
            else:
                for pos in positions:
                    self._process_node(query, forest, g, pos, task)

        ctx = graph_context(query, g, task)
        key = final_key(heritage)
        thought = self.agents.select_final(ctx, key)
        answer = self.agents.evaluate(thought, ctx, key)
        g.synthesized_final = thought
        g.final_answer = answer
        return answer, g

    def _process_node(self, query, forest, g: Graph, pos: Position, task):
        node = g.nodes[pos]
        ctx = node_context(query, g, pos, task)
        key = heritage_str(node.heritage)
        # the complexity verdict cannot matter at the depth limit, so it is not requested there
        if len(g.heritage_prefix) < self.config.d_max \
                and self.agents.check_complexity(node.thought, ctx, key):
            answer, child = self.run_agot(query, node.heritage, ctx, forest=forest, task=node.thought)
            node.answer = answer
            node.nested = child.heritage_prefix
            node.status = NodeStatus.EXPANDED_COMPLEX
        else:
            node.answer = self.agents.evaluate(node.thought, ctx, key)
            node.status = NodeStatus.EVALUATED_DIRECT


def run_agot(query, heritage, parent, cfg: AgotConfig, agents: Agents, forest=None, task=None):
    return Engine(agents, cfg).run_agot(query, heritage, parent, forest=forest, task=task)


def run_query(query, cfg: AgotConfig, agents: Agents) -> RunRecord:
    return Engine(agents, cfg).run_query(query)


class JsonlTraceWriter:
    """Appends one JSON object per agent call; usable as an ``Agents`` log sink."""

    def __init__(self, path):
        self._fh = open(path, "a", encoding="utf-8")
        self._lock = threading.Lock()

    def __call__(self, event: dict):
        line = json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()

    def close(self):
        self._fh.close()


def script_from_trace(path) -> dict:
    """Turn a JSON-lines call trace into a keyed mock script (successful calls only)."""
    steps = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                ev = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: {exc.msg}") from None
            if ev.get("error") or ev.get("payload") is None:
                continue
            steps.setdefault((ev["role"], ev["key"]), {
                "role": ev["role"], "key": ev["key"], "payload": ev["payload"],
                "usage": {"prompt_tokens": ev.get("prompt_tokens", 0),
                          "completion_tokens": ev.get("completion_tokens", 0)}})
    return {"steps": list(steps.values())}
