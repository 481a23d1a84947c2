"""LLM agents for the six graph actions, plus the judge and baseline agents.

An agent is a (model, instruction, schema) triple. Each call renders a prompt
from a :class:`GraphContext`, sends it through a backend and parses the
structured reply. A reply that fails schema validation or semantic checks gets
one corrective retry that echoes the error back to the model.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

from .backend import Backend, BackendError, CompletionRequest, SchemaValidationError, Usage
from .config import AgotConfig
from .graph import (Answer, Edge, Graph, GraphError, Position, Strategy, Thought, ancestors,
                    heritage_str)

log = logging.getLogger(__name__)

AGENT_ROLES = ("gen_initial", "gen_nested_initial", "gen_layer", "check_complexity",
               "evaluate", "select_final", "judge", "io", "cot")


class AgentError(RuntimeError):
    """An agent could not produce a usable reply."""


class ProposalError(ValueError):
    """A reply parsed against the schema but breaks a semantic rule."""


@dataclass(frozen=True)
class AgentSpec:
    model: str
    instruction: str
    schema: dict

    def __post_init__(self):
        if not self.model or not self.instruction.strip() or not self.schema:
            raise ValueError("AgentSpec needs a model, an instruction and a schema")
        if "name" not in self.schema or "schema" not in self.schema:
            raise ValueError("schema descriptor needs 'name' and 'schema'")


def _read_resource(resource_dir, sub, name):
    if resource_dir is not None:
        path = Path(resource_dir) / sub / name
        if path.exists():
            return path.read_text(encoding="utf-8")
    res = resources.files("agot").joinpath("resources").joinpath(sub).joinpath(name)
    return res.read_text(encoding="utf-8")


def load_specs(config: AgotConfig = AgotConfig(), resource_dir=None) -> dict:
    """Build one AgentSpec per role from the bundled (or overriding) resource files."""
    specs = {}
    for role in AGENT_ROLES:
        instruction = _read_resource(resource_dir, "instructions", f"{role}.txt")
        schema = json.loads(_read_resource(resource_dir, "schemas", f"{role}.json"))
        specs[role] = AgentSpec(config.model_for(role), instruction, schema)
    return specs


@dataclass(frozen=True)
class LayerProposal:
    thoughts: tuple
    strategy: Strategy
    edges: tuple = ()
    final_flags: tuple = ()

    def __post_init__(self):
        if len(self.final_flags) != len(self.thoughts):
            raise ProposalError("one final flag per thought is required")
        if sum(self.final_flags) > 1:
            raise ProposalError("at most one thought may be flagged final")

    @property
    def final_index(self) -> Optional[int]:
        for i, f in enumerate(self.final_flags):
            if f:
                return i
        return None


@dataclass(frozen=True)
class ContextNode:
    position: Position
    title: str
    content: str
    answer: Optional[str]


@dataclass(frozen=True)
class GraphContext:
    """What an agent gets to see of a graph.

    ``task`` is the text the graph is working on: the original query for the
    top graph, the complex node's thought for a nested one.
    """

    query: str
    heritage: tuple = ()
    task: Optional[Thought] = None
    strategies: tuple = ()
    nodes: tuple = ()
    n_layers: int = 0

    @property
    def positions(self) -> frozenset:
        return frozenset(n.position for n in self.nodes)


def _context_nodes(g: Graph, positions) -> tuple:
    out = []
    for p in positions:
        n = g.nodes[p]
        out.append(ContextNode(p, n.thought.title, n.thought.content,
                               n.answer.text if n.answer else None))
    return tuple(out)


def node_context(query: str, g: Graph, pos: Position, task: Optional[Thought] = None) -> GraphContext:
    """Context for acting on one node: its ancestor chain plus every layer strategy."""
    return GraphContext(query, g.heritage_prefix, task, tuple(s.text for s in g.strategies),
                        _context_nodes(g, ancestors(g, pos)), g.n_layers)


def graph_context(query: str, g: Graph, task: Optional[Thought] = None) -> GraphContext:
    """Context for acting on a whole graph (next-layer generation, final synthesis)."""
    positions = [p for layer in g.layers for p in layer]
    return GraphContext(query, g.heritage_prefix, task, tuple(s.text for s in g.strategies),
                        _context_nodes(g, positions), g.n_layers)


def _render_node(n: ContextNode) -> str:
    lines = [f"[{n.position.layer}.{n.position.node}] {n.title}".rstrip(), f"Thought: {n.content}"]
    lines.append(f"Answer: {n.answer}" if n.answer is not None else "Answer: (not evaluated)")
    return "\n".join(lines)


def render_context(ctx: GraphContext, budget: int = 12000) -> str:
    """Serialize a context into labeled sections.

    When the node listing would exceed ``budget`` characters, the oldest
    nodes are dropped first and replaced by a marker line.
    """
    head = [f"## Original task\n{ctx.query.strip()}"]
    if ctx.task is not None:
        head.append(f"## Current sub-task (graph {heritage_str(ctx.heritage)})\n"
                    f"{ctx.task.title}: {ctx.task.content}".rstrip())
    if ctx.strategies:
        head.append("## Layer strategies\n" + "\n".join(
            f"- Layer {i}: {s}" for i, s in enumerate(ctx.strategies)))
    blocks = [_render_node(n) for n in ctx.nodes]

    def assemble(dropped):
        body = blocks[dropped:]
        if dropped:
            body = [f"({dropped} earlier thoughts omitted for length)"] + body
        parts = head + (["## Thoughts so far\n" + "\n\n".join(body)] if blocks else [])
        return "\n\n".join(parts)

    dropped = 0
    text = assemble(0)
    while len(text) > budget and dropped < len(blocks):
        dropped += 1
        text = assemble(dropped)
    return text


@dataclass(frozen=True)
class CallRecord:
    role: str
    key: str
    model: str
    attempt: int
    usage: Usage
    latency: float
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {"role": self.role, "key": self.key, "model": self.model, "attempt": self.attempt,
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
                "latency": self.latency, "error": self.error}


class CallLog:
    """Thread-safe record of every completed backend call (including rejected replies)."""

    def __init__(self, sink: Optional[Callable[[dict], None]] = None):
        self._lock = threading.Lock()
        self.records: list = []
        self.sink = sink

    def add(self, rec: CallRecord, payload=None):
        with self._lock:
            self.records.append(rec)
            if self.sink is not None:
                event = rec.to_dict()
                event["seq"] = len(self.records) - 1
                event["payload"] = payload
                self.sink(event)

    def trace(self) -> list:
        """(role, key) for first attempts, in completion order."""
        with self._lock:
            return [(r.role, r.key) for r in self.records if r.attempt == 0]

    def total_usage(self) -> Usage:
        with self._lock:
            total = Usage()
            for r in self.records:
                total = total + r.usage
            return total

    def __len__(self):
        return len(self.records)


def _thought_from(item: dict) -> Thought:
    try:
        return Thought(item.get("title", "").strip(), item.get("content", "").strip())
    except GraphError as exc:
        raise ProposalError(str(exc)) from None


def parse_proposal(payload: dict, n_max: int, layer: Optional[int] = None,
                   existing: frozenset = frozenset()) -> LayerProposal:
    """Turn a generator reply into a LayerProposal.

    ``layer`` is the index the new layer will get; pass it (and the existing
    positions) for next-layer replies, whose thoughts name their parents.
    Extra thoughts beyond ``n_max`` are dropped with a warning; when several
    thoughts are flagged final only the first keeps its flag.
    """
    items = payload.get("thoughts") or []
    if not items:
        raise ProposalError("the reply contains no thoughts")
    if len(items) > n_max:
        log.warning("reply proposed %d thoughts; keeping the first %d", len(items), n_max)
        items = items[:n_max]
    strategy = str(payload.get("strategy", "")).strip()
    if not strategy:
        raise ProposalError("the strategy is empty")
    thoughts = tuple(_thought_from(it) for it in items)
    flags = [bool(it.get("final", False)) for it in items]
    if sum(flags) > 1:
        first = flags.index(True)
        log.warning("%d thoughts flagged final; honoring thought %d", sum(flags), first)
        flags = [i == first for i in range(len(flags))]
    edges = []
    if layer is not None:
        for i, it in enumerate(items):
            target = Position(layer, i)
            seen = set()
            for par in it.get("parents", ()):
                try:
                    src = Position(int(par["layer"]), int(par["node"]))
                except (KeyError, TypeError, ValueError, GraphError):
                    raise ProposalError(f"thought {i}: malformed parent {par!r}") from None
                if src not in existing:
                    raise ProposalError(
                        f"thought {i}: parent {src.layer}.{src.node} is not an existing thought; "
                        f"valid parents are {sorted(f'{p.layer}.{p.node}' for p in existing)}")
                if src not in seen:
                    seen.add(src)
                    edges.append(Edge(src, target))
    return LayerProposal(thoughts, Strategy(strategy), tuple(edges), tuple(flags))


class Agents:
    """Binds agent specs to a backend and records every call.

    ``key`` arguments are the step keys the mock backend uses to find scripted
    replies; the engine derives them from heritages.
    """

    def __init__(self, backend: Backend, config: AgotConfig = AgotConfig(), specs=None,
                 resource_dir=None, log_sink=None, key_prefix: str = ""):
        self.backend = backend
        self.config = config
        self.specs = specs or load_specs(config, resource_dir)
        self.calls = CallLog(log_sink)
        self.key_prefix = key_prefix

    def fork(self, key_prefix: str = "") -> "Agents":
        """Same backend and specs, fresh call log; step keys get ``key_prefix``."""
        return Agents(self.backend, self.config, self.specs, log_sink=self.calls.sink,
                      key_prefix=key_prefix)

    # -- plumbing --------------------------------------------------------

    def build_messages(self, role: str, user: str, **fmt) -> list:
        instruction = self.specs[role].instruction
        if fmt:
            instruction = instruction.format(**fmt)
        return [{"role": "system", "content": instruction.strip()},
                {"role": "user", "content": user}]

    def _call(self, role, key, user, parse, *, temperature="config", fmt=None):
        spec = self.specs[role]
        key = self.key_prefix + key
        messages = self.build_messages(role, user, **(fmt or {}))
        if temperature == "config":
            temperature = self.config.temperature
        last_error = None
        for attempt in range(2):
            req = CompletionRequest(spec.model, tuple(messages), spec.schema, temperature, role, key)
            try:
                res = self.backend.complete(req)
            except SchemaValidationError as exc:
                self.calls.add(CallRecord(role, key, spec.model, attempt, Usage(), 0.0, str(exc)))
                last_error, raw = exc, exc.raw
            except BackendError as exc:
                raise AgentError(f"{role}[{key}]: backend failure: {exc}") from exc
            else:
                try:
                    value = parse(res.payload)
                except ProposalError as exc:
                    self.calls.add(CallRecord(role, key, spec.model, attempt, res.usage,
                                              res.latency, str(exc)), res.payload)
                    last_error, raw = exc, res.raw
                else:
                    self.calls.add(CallRecord(role, key, spec.model, attempt, res.usage,
                                              res.latency), res.payload)
                    return value
            messages = messages + [
                {"role": "assistant", "content": raw or ""},
                {"role": "user", "content": f"Your reply was rejected: {last_error}\n"
                                            "Reply again, following the response schema exactly."},
            ]
        raise AgentError(f"{role}[{key}]: no valid reply after a corrective retry: {last_error}")

    def _budget(self) -> int:
        return self.config.context_chars

    # -- graph actions ---------------------------------------------------

    def gen_initial(self, query: str, n_max: int, key: str = "L0") -> LayerProposal:
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        user = f"## Task\n{query.strip()}\n\nPropose the first thoughts (at most {n_max})."
        return self._call("gen_initial", key, user, lambda p: parse_proposal(p, n_max),
                          fmt={"n_max": n_max})

    def gen_nested_initial(self, thought: Thought, parent: GraphContext, n_max: int,
                           key: str) -> LayerProposal:
        user = (render_context(parent, self._budget())
                + f"\n\n## Sub-task to decompose\n{thought.title}: {thought.content}".rstrip()
                + f"\n\nPropose the first thoughts for this sub-task (at most {n_max}).")
        return self._call("gen_nested_initial", key, user, lambda p: parse_proposal(p, n_max),
                          fmt={"n_max": n_max})

    def gen_layer(self, ctx: GraphContext, n_max: int, key: str) -> LayerProposal:
        if ctx.n_layers < 1:
            raise ValueError("next-layer generation needs at least one completed layer")
        user = (render_context(ctx, self._budget())
                + f"\n\nPropose the thoughts for layer {ctx.n_layers} (at most {n_max}), "
                  "naming each one's parents.")
        existing = ctx.positions
        return self._call("gen_layer", key, user,
                          lambda p: parse_proposal(p, n_max, ctx.n_layers, existing),
                          fmt={"n_max": n_max})

    def check_complexity(self, thought: Thought, ctx: GraphContext, key: str) -> bool:
        user = (render_context(ctx, self._budget())
                + f"\n\n## Thought to classify\n{thought.title}: {thought.content}".rstrip())
        try:
            return self._call("check_complexity", key, user, lambda p: bool(p["is_complex"]))
        except AgentError as exc:
            log.warning("complexity check failed, treating thought as simple: %s", exc)
            return False

    def evaluate(self, thought: Thought, ctx: GraphContext, key: str) -> Answer:
        user = (render_context(ctx, self._budget())
                + f"\n\n## Thought to answer\n{thought.title}: {thought.content}".rstrip())

        def parse(p):
            text = str(p.get("answer", "")).strip()
            if not text:
                raise ProposalError("the answer is empty")
            return Answer(text, p.get("option"))

        return self._call("evaluate", key, user, parse)

    def select_final(self, ctx: GraphContext, key: str) -> Thought:
        if not ctx.nodes:
            raise ValueError("final-thought synthesis needs a non-empty graph")
        user = render_context(ctx, self._budget()) + "\n\nWrite the final thought."

        def parse(p):
            return _thought_from(p)

        return self._call("select_final", key, user, parse)

    # -- scoring and baselines ------------------------------------------

    def judge(self, question: str, prediction: str, reference: str, key: str = "") -> bool:
        user = (f"## Question\n{question.strip()}\n\n## Reference answer\n{reference.strip()}"
                f"\n\n## Predicted answer\n{prediction.strip()}")
        return self._call("judge", key, user, lambda p: bool(p["equivalent"]), temperature=0.0)

    def io(self, query: str, key: str = "") -> Answer:
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        return self._call("io", key, query.strip(), _answer_parser, temperature=None)

    def cot(self, query: str, key: str = "") -> Answer:
        if not query or not query.strip():
            raise ValueError("query must be non-empty")
        return self._call("cot", key, query.strip(), _answer_parser, temperature=None)


def _answer_parser(p) -> Answer:
    text = str(p.get("answer", "")).strip()
    if not text:
        raise ProposalError("the answer field is missing or empty")
    return Answer(text, p.get("option"))
