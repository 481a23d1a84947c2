"""Hierarchical layered-DAG data model for adaptive graph-of-thoughts runs.

A run is a forest of graphs. Every graph is keyed by a *heritage*: the
sequence of ``(layer, node)`` positions of the complex nodes that lead to it
from the top-level graph (the empty heritage). A node's own heritage is its
graph's heritage with the node's position appended.

Nothing in this module knows about language models; it only enforces the
construction discipline (bounded layers, bounded width, edges that point to
later layers) and offers serialization helpers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional


class GraphError(ValueError):
    """Raised when a structural operation would break a graph invariant."""


class DepthError(GraphError):
    pass


@dataclass(frozen=True, order=True)
class Position:
    layer: int
    node: int

    def __post_init__(self):
        for name in ("layer", "node"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise GraphError(f"position {name} must be a non-negative int, got {value!r}")

    def as_list(self) -> list[int]:
        return [self.layer, self.node]

    def __str__(self) -> str:
        return f"({self.layer},{self.node})"


Heritage = tuple  # tuple[Position, ...]; the empty tuple is the top-level graph
ROOT: tuple = ()


def make_heritage(pairs: Iterable) -> tuple:
    """Build a heritage from ``[layer, node]`` pairs or Position objects."""
    out = []
    for p in pairs:
        out.append(p if isinstance(p, Position) else Position(*p))
    return tuple(out)


def heritage_child(h: tuple, p: Position, d_max: Optional[int] = None) -> tuple:
    """Append ``p`` to ``h``.

    Node heritages can be at most ``d_max + 1`` long, so when ``d_max`` is
    given a heritage already that long cannot be extended.
    """
    if d_max is not None and len(h) >= d_max + 1:
        raise DepthError(f"heritage {heritage_str(h)!r} already has length {len(h)} = d_max + 1")
    return tuple(h) + (p,)


def depth(h: tuple) -> int:
    return len(h)


def heritage_str(h: tuple) -> str:
    """Compact, stable rendering used for keys: ``"0.0/1.2"``; root is ``""``."""
    return "/".join(f"{p.layer}.{p.node}" for p in h)


def parse_heritage(text: str) -> tuple:
    if not text:
        return ROOT
    try:
        return tuple(Position(*(int(x) for x in part.split("."))) for part in text.split("/"))
    except (TypeError, ValueError) as exc:
        raise GraphError(f"malformed heritage string {text!r}") from exc


@dataclass(frozen=True)
class Thought:
    title: str
    content: str

    def __post_init__(self):
        if not isinstance(self.content, str) or not self.content.strip():
            raise GraphError("thought content must be non-empty")


@dataclass(frozen=True)
class Strategy:
    text: str


@dataclass(frozen=True)
class Answer:
    text: str
    option: Optional[str] = field(default=None, compare=False)  # MCQ letter, when the agent gave one

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise GraphError("answer text must be non-empty")

    def __str__(self) -> str:
        return self.text


class NodeStatus(str, enum.Enum):
    NEW = "new"
    EVALUATED_DIRECT = "evaluated_direct"
    EXPANDED_COMPLEX = "expanded_complex"
    FINAL = "final"


@dataclass
class Node:
    heritage: tuple
    thought: Thought
    strategy_layer: int
    answer: Optional[Answer] = None
    nested: Optional[tuple] = None  # heritage key of the nested graph in the forest
    status: NodeStatus = NodeStatus.NEW
    is_final_candidate: bool = False

    @property
    def position(self) -> Position:
        return self.heritage[-1]


@dataclass(frozen=True)
class Edge:
    source: Position
    target: Position


@dataclass
class Graph:
    heritage_prefix: tuple = ROOT
    layers: list = field(default_factory=list)  # list[list[Position]]
    nodes: dict = field(default_factory=dict)  # Position -> Node
    edges: list = field(default_factory=list)  # list[Edge]
    strategies: list = field(default_factory=list)  # list[Strategy], one per layer
    final_answer: Optional[Answer] = None
    # Set only when the final thought was synthesized after the layer budget ran out.
    synthesized_final: Optional[Thought] = None

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node(self, pos: Position) -> Node:
        try:
            return self.nodes[pos]
        except KeyError:
            raise GraphError(f"unknown node {pos} in graph {heritage_str(self.heritage_prefix)!r}") from None

    def iter_nodes(self) -> Iterator[Node]:
        for layer in self.layers:
            for pos in layer:
                yield self.nodes[pos]

    def final_node(self) -> Optional[Node]:
        for n in self.iter_nodes():
            if n.status is NodeStatus.FINAL:
                return n
        return None

    def parents(self, pos: Position) -> list:
        return sorted(e.source for e in self.edges if e.target == pos)


def add_layer(g: Graph, thoughts, strategy: Strategy, edges=(), final_flags=None, *,
              l_max: Optional[int] = None, n_max: Optional[int] = None) -> int:
    """Append a new layer of ``New`` nodes to ``g`` and return its index.

    ``edges`` must originate at existing nodes and end at nodes of the new
    layer. Bounds are only checked for the limits that are passed in.
    """
    thoughts = list(thoughts)
    if not thoughts:
        raise GraphError("a layer needs at least one thought")
    if n_max is not None and len(thoughts) > n_max:
        raise GraphError(f"{len(thoughts)} thoughts exceed n_max={n_max}")
    if l_max is not None and g.n_layers >= l_max:
        raise GraphError(f"graph already has {g.n_layers} layers (l_max={l_max})")
    flags = list(final_flags) if final_flags is not None else [False] * len(thoughts)
    if len(flags) != len(thoughts):
        raise GraphError("final_flags must have one entry per thought")
    if not isinstance(strategy, Strategy) or not strategy.text.strip():
        raise GraphError("a generated layer needs a non-empty strategy")

    layer = g.n_layers
    new_positions = [Position(layer, i) for i in range(len(thoughts))]
    new_set = set(new_positions)
    edges = list(edges)
    for e in edges:
        if e.target not in new_set:
            raise GraphError(f"edge target {e.target} is not a node of the new layer {layer}")
        if e.source not in g.nodes:
            raise GraphError(f"edge source {e.source} does not exist")
        if e.source.layer >= e.target.layer:
            raise GraphError(f"edge {e.source}->{e.target} does not point to a later layer")
    if len(set(edges)) != len(edges):
        raise GraphError("duplicate edge in proposal")

    for pos, thought, flag in zip(new_positions, thoughts, flags):
        g.nodes[pos] = Node(
            heritage=g.heritage_prefix + (pos,),
            thought=thought,
            strategy_layer=layer,
            is_final_candidate=bool(flag),
        )
    g.layers.append(new_positions)
    g.strategies.append(strategy)
    g.edges.extend(edges)
    return layer


def ancestors(g: Graph, pos: Position) -> list:
    """Every node reachable from ``pos`` by walking edges backwards, in topological order."""
    g.node(pos)
    incoming: dict = {}
    for e in g.edges:
        incoming.setdefault(e.target, []).append(e.source)
    seen = set()
    stack = list(incoming.get(pos, ()))
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(incoming.get(cur, ()))
    # (layer, node) order is a valid topological order because edges go to later layers
    return sorted(seen)


def topological_order(g: Graph) -> list:
    """Kahn's algorithm over the node table; raises GraphError on a cycle."""
    indeg = {p: 0 for p in g.nodes}
    out: dict = {p: [] for p in g.nodes}
    for e in g.edges:
        if e.source in out and e.target in indeg:
            out[e.source].append(e.target)
            indeg[e.target] += 1
    ready = sorted(p for p, d in indeg.items() if d == 0)
    order = []
    while ready:
        p = ready.pop(0)
        order.append(p)
        for q in sorted(out[p]):
            indeg[q] -= 1
            if indeg[q] == 0:
                ready.append(q)
        ready.sort()
    if len(order) != len(indeg):
        raise GraphError("graph contains a cycle")
    return order


@dataclass
class RunForest:
    graphs: dict = field(default_factory=dict)  # heritage -> Graph

    @property
    def root(self) -> Graph:
        return self.graphs[ROOT]

    def new_graph(self, heritage: tuple) -> Graph:
        if heritage in self.graphs:
            raise GraphError(f"graph {heritage_str(heritage)!r} already exists")
        g = Graph(heritage_prefix=tuple(heritage))
        self.graphs[g.heritage_prefix] = g
        return g

    def ordered(self) -> list:
        """Graphs sorted by heritage so serialization is independent of creation order."""
        return [self.graphs[k] for k in sorted(self.graphs)]

    def lookup(self, heritage: tuple) -> Node:
        """Resolve a node heritage to its node."""
        if not heritage:
            raise GraphError("the empty heritage names the top graph, not a node")
        g = self.graphs.get(tuple(heritage[:-1]))
        if g is None:
            raise GraphError(f"no graph with heritage {heritage_str(heritage[:-1])!r}")
        return g.node(heritage[-1])


def global_sets(forest: RunForest):
    """Union of node heritages and edges over every graph of the forest.

    Edges are lifted to heritage pairs so that edges from different graphs
    never collide.
    """
    nodes = set()
    edges = set()
    for h, g in forest.graphs.items():
        for n in g.nodes.values():
            nodes.add(n.heritage)
        for e in g.edges:
            edges.add((h + (e.source,), h + (e.target,)))
    return nodes, edges


def max_total_nodes(d_max: int, l_max: int, n_max: int) -> int:
    """Worst-case node count when every node at every allowed depth expands."""
    per_graph = l_max * n_max
    return sum(per_graph ** (k + 1) for k in range(d_max + 1))


def validate(g: Graph, cfg=None) -> list:
    """Return human-readable invariant violations for ``g``; empty means valid.

    ``cfg`` is anything with ``d_max``, ``l_max`` and ``n_max`` attributes;
    without it only the bound-free invariants are checked.
    """
    problems = []
    if cfg is not None:
        if len(g.heritage_prefix) > cfg.d_max:
            problems.append(
                f"graph heritage length {len(g.heritage_prefix)} exceeds d_max={cfg.d_max}")
        if g.n_layers > cfg.l_max:
            problems.append(f"{g.n_layers} layers exceed l_max={cfg.l_max}")
    if len(g.strategies) != g.n_layers:
        problems.append("strategy count does not match layer count")

    listed = set()
    for li, layer in enumerate(g.layers):
        if not layer:
            problems.append(f"layer {li} is empty")
        if cfg is not None and len(layer) > cfg.n_max:
            problems.append(f"layer {li} has {len(layer)} nodes (n_max={cfg.n_max})")
        for ni, pos in enumerate(layer):
            if pos != Position(li, ni):
                problems.append(f"layer {li} slot {ni} holds {pos}")
            listed.add(pos)
    if listed != set(g.nodes):
        problems.append("node table does not match layer listing")

    for pos, n in g.nodes.items():
        if tuple(n.heritage[:-1]) != tuple(g.heritage_prefix) or n.heritage[-1] != pos:
            problems.append(f"node {pos} has inconsistent heritage {heritage_str(n.heritage)!r}")
        if (n.nested is not None) != (n.status is NodeStatus.EXPANDED_COMPLEX):
            problems.append(f"node {pos}: nested graph handle does not match status {n.status.value}")
        if n.status in (NodeStatus.EVALUATED_DIRECT, NodeStatus.EXPANDED_COMPLEX, NodeStatus.FINAL) \
                and n.answer is None:
            problems.append(f"node {pos} is {n.status.value} but has no answer")

    seen_edges = set()
    for e in g.edges:
        if e in seen_edges:
            problems.append(f"duplicate edge {e.source}->{e.target}")
        seen_edges.add(e)
        if e.source not in g.nodes or e.target not in g.nodes:
            problems.append(f"dangling edge {e.source}->{e.target}")
        elif e.source.layer >= e.target.layer:
            problems.append(f"edge {e.source}->{e.target} does not descend")

    finals = [n for n in g.nodes.values() if n.status is NodeStatus.FINAL]
    if len(finals) > 1:
        problems.append(f"{len(finals)} final nodes")
    if g.final_answer is not None:
        if finals:
            if finals[0].answer != g.final_answer:
                problems.append("final node answer differs from graph final answer")
            if g.synthesized_final is not None:
                problems.append("graph has both a final node and a synthesized final thought")
        elif g.synthesized_final is None:
            problems.append("final answer set without a final node or synthesized final thought")
    elif finals:
        problems.append("final node present but graph has no final answer")
    return problems


def validate_forest(forest: RunForest, cfg=None) -> list:
    problems = []
    if ROOT not in forest.graphs:
        return ["forest has no top-level graph"]
    for h, g in forest.graphs.items():
        prefix = heritage_str(h) or "<root>"
        problems.extend(f"[{prefix}] {p}" for p in validate(g, cfg))
        if h:
            try:
                parent = forest.lookup(h)
            except GraphError as exc:
                problems.append(f"[{prefix}] {exc}")
                continue
            if parent.status is not NodeStatus.EXPANDED_COMPLEX or parent.nested != h:
                problems.append(f"[{prefix}] parent node is not an expanded complex node")
        for n in g.nodes.values():
            if n.nested is not None and n.nested not in forest.graphs:
                problems.append(f"[{prefix}] node {n.position} points at missing graph")
    return problems


# --- serialization -------------------------------------------------------

def _heritage_json(h) -> list:
    return [p.as_list() for p in h]


def node_to_dict(n: Node) -> dict:
    return {
        "heritage": _heritage_json(n.heritage),
        "title": n.thought.title,
        "content": n.thought.content,
        "strategy_layer": n.strategy_layer,
        "answer": n.answer.text if n.answer else None,
        "nested": _heritage_json(n.nested) if n.nested is not None else None,
        "status": n.status.value,
        "is_final_candidate": n.is_final_candidate,
    }


def graph_to_dict(g: Graph) -> dict:
    return {
        "heritage": _heritage_json(g.heritage_prefix),
        "strategies": [s.text for s in g.strategies],
        "layers": [[node_to_dict(g.nodes[p]) for p in layer] for layer in g.layers],
        "edges": [[e.source.as_list(), e.target.as_list()] for e in g.edges],
        "final_answer": g.final_answer.text if g.final_answer else None,
        "synthesized_final": (
            {"title": g.synthesized_final.title, "content": g.synthesized_final.content}
            if g.synthesized_final else None),
    }


def forest_to_dict(forest: RunForest) -> dict:
    return {"graphs": [graph_to_dict(g) for g in forest.ordered()]}


def _field(d, key, where):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise GraphError(f"{where}: missing field {key!r}") from None


def graph_from_dict(d: dict) -> Graph:
    where = "graph"
    g = Graph(heritage_prefix=make_heritage(_field(d, "heritage", where)))
    where = f"graph {heritage_str(g.heritage_prefix)!r}"
    g.strategies = [Strategy(s) for s in _field(d, "strategies", where)]
    for li, layer in enumerate(_field(d, "layers", where)):
        row = []
        for ni, nd in enumerate(layer):
            nwhere = f"{where} node ({li},{ni})"
            try:
                status = NodeStatus(_field(nd, "status", nwhere))
            except ValueError:
                raise GraphError(f"{nwhere}: bad status {nd.get('status')!r}") from None
            answer = _field(nd, "answer", nwhere)
            nested = _field(nd, "nested", nwhere)
            node = Node(
                heritage=make_heritage(_field(nd, "heritage", nwhere)),
                thought=Thought(_field(nd, "title", nwhere), _field(nd, "content", nwhere)),
                strategy_layer=int(_field(nd, "strategy_layer", nwhere)),
                answer=Answer(answer) if answer is not None else None,
                nested=make_heritage(nested) if nested is not None else None,
                status=status,
                is_final_candidate=bool(_field(nd, "is_final_candidate", nwhere)),
            )
            pos = Position(li, ni)
            g.nodes[pos] = node
            row.append(pos)
        g.layers.append(row)
    for pair in _field(d, "edges", where):
        try:
            src, dst = pair
            g.edges.append(Edge(Position(*src), Position(*dst)))
        except (TypeError, ValueError):
            raise GraphError(f"{where}: malformed edge {pair!r}") from None
    fa = _field(d, "final_answer", where)
    g.final_answer = Answer(fa) if fa is not None else None
    sf = d.get("synthesized_final")
    g.synthesized_final = Thought(sf["title"], sf["content"]) if sf else None
    return g


def forest_from_dict(d: dict) -> RunForest:
    forest = RunForest()
    for gd in _field(d, "graphs", "forest"):
        g = graph_from_dict(gd)
        if g.heritage_prefix in forest.graphs:
            raise GraphError(f"duplicate graph {heritage_str(g.heritage_prefix)!r}")
        forest.graphs[g.heritage_prefix] = g
    return forest


def dumps_forest(forest: RunForest) -> str:
    return json.dumps(forest_to_dict(forest), indent=2, ensure_ascii=False, sort_keys=True)


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ")


def to_dot(forest: RunForest) -> str:
    """Graphviz rendering: nested graphs become clusters hanging off their complex node."""
    def node_id(h):
        return "n_" + (heritage_str(h).replace(".", "_").replace("/", "__") or "root")

    lines = ["digraph agot {", "  rankdir=TB;", "  node [shape=box, style=rounded];"]

    def emit(g: Graph, indent: str):
        for li, layer in enumerate(g.layers):
            lines.append(f"{indent}{{ rank=same;")
            for pos in layer:
                n = g.nodes[pos]
                label = _dot_escape(n.thought.title or n.thought.content[:40])
                attrs = [f'label="{label}\\n{pos}"']
                if n.status is NodeStatus.EXPANDED_COMPLEX:
                    attrs.append('color="orange"')
                elif n.status is NodeStatus.FINAL:
                    attrs.append("peripheries=2")
                lines.append(f"{indent}  {node_id(n.heritage)} [{', '.join(attrs)}];")
            lines.append(f"{indent}}}")
        for e in g.edges:
            src = node_id(g.heritage_prefix + (e.source,))
            dst = node_id(g.heritage_prefix + (e.target,))
            lines.append(f"{indent}{src} -> {dst};")
        for n in g.iter_nodes():
            if n.nested is not None and n.nested in forest.graphs:
                child = forest.graphs[n.nested]
                cid = node_id(n.heritage).replace("n_", "cluster_", 1)
                lines.append(f"{indent}subgraph {cid} {{")
                lines.append(f'{indent}  label="{_dot_escape(n.thought.title)}"; style=dashed;')
                emit(child, indent + "  ")
                lines.append(f"{indent}}}")
                if child.layers:
                    first = child.layers[0][0]
                    lines.append(f"{indent}{node_id(n.heritage)} -> "
                                 f"{node_id(child.heritage_prefix + (first,))} [style=dotted];")

    emit(forest.root, "  ")
    lines.append("}")
    return "\n".join(lines) + "\n"
