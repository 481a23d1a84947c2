"""Adaptive graph-of-thoughts reasoning engine with baselines and scoring."""

from .agents import AgentError, Agents, AgentSpec, GraphContext, LayerProposal, load_specs
from .backend import HttpBackend, MockBackend, MockScript, load_script
from .config import AgotConfig
from .engine import Engine, RunFailed, RunRecord, run_agot, run_query
from .graph import (Answer, Edge, Graph, Node, NodeStatus, Position, RunForest, Strategy,
                    Thought)

__version__ = "0.1.0"

__all__ = [
    "AgentError", "Agents", "AgentSpec", "GraphContext", "LayerProposal", "load_specs",
    "HttpBackend", "MockBackend", "MockScript", "load_script", "AgotConfig", "Engine",
    "RunFailed", "RunRecord", "run_agot", "run_query", "Answer", "Edge", "Graph", "Node",
    "NodeStatus", "Position", "RunForest", "Strategy", "Thought",
]
