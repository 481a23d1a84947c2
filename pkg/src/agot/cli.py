"""Command-line entry point: ``agot run | replay | bench | export | capture | table | config``.

Settings resolve as defaults < JSON config file < ``AGOT_*`` environment < flags.
Exit codes: 0 success, 1 run failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from . import __version__
from .agents import Agents
from .backend import BackendError, HttpBackend, MissingCredentials, MockBackend, ScriptError, load_script
from .bench import (FORMATS, FRAMEWORKS, DatasetError, load_dataset, run_benchmark, shuffle_items,
                    write_comparison_csv)
from .config import AgotConfig
from .engine import Engine, JsonlTraceWriter, RunFailed, RunRecord, script_from_trace
from .graph import GraphError, dumps_forest, to_dot, validate_forest

log = logging.getLogger("agot")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Setting:
    name: str
    type: type
    default: object
    help: str

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")

    @property
    def env(self) -> str:
        return "AGOT_" + self.name.upper()


SETTINGS = (
    Setting("d_max", int, 1, "maximum nesting depth"),
    Setting("l_max", int, 3, "maximum layers per graph"),
    Setting("n_max", int, 3, "maximum nodes per layer"),
    Setting("temperature", float, 0.3, "sampling temperature for graph agents"),
    Setting("model", str, "gpt-4o-mini", "model id for every agent"),
    Setting("max_in_flight", int, 8, "cap on concurrent backend requests"),
    Setting("concurrent", _bool, True, "run independent work concurrently (true/false)"),
    Setting("context_chars", int, 12000, "character budget for rendered graph context"),
    Setting("mock", str, None, "mock script to replay instead of calling a live backend"),
    Setting("base_url", str, None, "chat-completions base URL for the live backend"),
    Setting("resource_dir", str, None, "directory overriding bundled instructions/schemas"),
)
AGOT_FIELDS = ("d_max", "l_max", "n_max", "temperature", "model", "max_in_flight", "concurrent",
               "context_chars")


@dataclass(frozen=True)
class CliConfig:
    agot: AgotConfig
    mock: Optional[str]
    base_url: Optional[str]
    resource_dir: Optional[str]
    sources: dict  # setting name -> where its value came from

    def to_dict(self) -> dict:
        return {**self.agot.to_dict(), "mock": self.mock, "base_url": self.base_url,
                "resource_dir": self.resource_dir}


class UsageError(Exception):
    pass


def resolve_config(flags: dict, env=None, config_path=None) -> CliConfig:
    """Merge settings from defaults, a JSON config file, the environment and flags."""
    env = os.environ if env is None else env
    values = {s.name: s.default for s in SETTINGS}
    sources = {s.name: "default" for s in SETTINGS}
    config_path = config_path or env.get("AGOT_CONFIG")
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_path}: {exc}") from None
        known = {s.name: s for s in SETTINGS}
        for key, value in data.items():
            name = key.replace("-", "_")
            if name not in known:
                raise UsageError(f"{config_path}: unknown setting {key!r}")
            values[name] = value
            sources[name] = "file"
    for s in SETTINGS:
        if s.env in env and env[s.env] != "":
            values[s.name] = env[s.env]
            sources[s.name] = "env"
        if flags.get(s.name) is not None:
            values[s.name] = flags[s.name]
            sources[s.name] = "flag"
    try:
        for s in SETTINGS:
            if values[s.name] is not None:
                values[s.name] = s.type(values[s.name])
        agot = AgotConfig(**{k: values[k] for k in AGOT_FIELDS})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid setting: {exc}") from None
    return CliConfig(agot, values["mock"], values["base_url"], values["resource_dir"], sources)


def bundled_script(name: str) -> Optional[Path]:
    base = resources.files("agot").joinpath("resources").joinpath("scripts")
    for candidate in (name, f"{name}.json"):
        res = base.joinpath(candidate)
        if res.is_file():
            return Path(str(res))
    return None


def _script_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_script(name)
    if bundled is None:
        raise UsageError(f"mock script {name!r} not found (nor among bundled scripts)")
    return bundled


def make_agents(cfg: CliConfig, trace=None):
    """Backend + agents for a resolved configuration; returns (agents, mock script or None)."""
    script = None
    if cfg.mock:
        script = load_script(_script_path(cfg.mock))
        backend = MockBackend(script, cfg.agot.max_in_flight)
    else:
        backend = HttpBackend(cfg.base_url, max_in_flight=cfg.agot.max_in_flight)
    sink = JsonlTraceWriter(trace) if trace else None
    return Agents(backend, cfg.agot, resource_dir=cfg.resource_dir, log_sink=sink), script


def _add_settings(p: argparse.ArgumentParser):
    g = p.add_argument_group("settings (each also readable from the config file and AGOT_* env)")
    g.add_argument("--config", help="JSON config file (env AGOT_CONFIG)")
    for s in SETTINGS:
        metavar = s.name.upper() if s.type is not _bool else "BOOL"
        g.add_argument(s.flag, dest=s.name, default=None, metavar=metavar,
                       help=f"{s.help} (env {s.env}; default {s.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agot", description="Adaptive graph-of-thoughts reasoning and benchmarking.")
    parser.add_argument("--version", action="version", version=f"agot {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log agent activity")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("run", help="answer one query with the graph engine")
    p.add_argument("query", nargs="?", help="query text (defaults to the mock script's query)")
    p.add_argument("--record", help="write the full run record (JSON) here")
    p.add_argument("--dot", help="write a Graphviz rendering of the forest here")
    p.add_argument("--trace", help="append one JSON line per agent call to this file")
    _add_settings(p)

    p = sub.add_parser("replay", help="run a mock script end to end (shorthand for run --mock)")
    p.add_argument("script", help="mock script path or bundled name (fig5, minimal)")
    p.add_argument("query", nargs="?", help="override the script's query")
    p.add_argument("--record", help="write the full run record (JSON) here")
    p.add_argument("--dot", help="write a Graphviz rendering of the forest here")
    _add_settings(p)

    p = sub.add_parser("bench", help="run a framework over a dataset")
    p.add_argument("dataset", help="dataset file")
    p.add_argument("--format", required=True, choices=FORMATS, dest="fmt")
    p.add_argument("--framework", required=True, choices=FRAMEWORKS)
    p.add_argument("--run-dir", help="output directory (created if missing)")
    p.add_argument("--resume", metavar="DIR", help="continue the run stored in DIR")
    p.add_argument("--shuffle-seed", help="shuffle multiple-choice options with this seed")
    p.add_argument("--baseline", metavar="DIR", help="IO run directory for relative changes")
    p.add_argument("--no-judge", action="store_true", help="skip judge-based scoring")
    p.add_argument("--limit", type=int, help="only the first N items")
    _add_settings(p)

    p = sub.add_parser("export", help="render a stored run record as DOT or JSON")
    p.add_argument("record", help="run record JSON file")
    p.add_argument("--format", required=True, dest="fmt", help="dot or json")
    p.add_argument("-o", "--output", help="output file (default stdout)")

    p = sub.add_parser("capture", help="turn a call trace into a keyed mock script")
    p.add_argument("trace", help="JSON-lines trace written by run --trace")
    p.add_argument("-o", "--output", required=True, help="script file to write")
    p.add_argument("--query", help="query to embed in the script")

    p = sub.add_parser("table", help="framework comparison table from benchmark run directories")
    p.add_argument("run_dirs", nargs="+", help="run directories (one per framework)")
    p.add_argument("--dataset", default="dataset", help="dataset label for the table")
    p.add_argument("-o", "--output", required=True, help="CSV file to write")

    p = sub.add_parser("config", help="print the resolved configuration and where each value came from")
    _add_settings(p)
    return parser


def _settings_from(args) -> dict:
    return {s.name: getattr(args, s.name, None) for s in SETTINGS}


def _finish_run(record: RunRecord, args):
    print(record.final_answer.text)
    t = record.tally
    print(f"[{t['total_nodes']} nodes, {t['complex_nodes']} complex "
          f"({t['complex_pct']:.1f}%), {len(record.calls)} calls, "
          f"{record.usage.total_tokens} tokens]", file=sys.stderr)
    if args.record:
        Path(args.record).write_text(record.dumps(), encoding="utf-8")
    if args.dot:
        Path(args.dot).write_text(to_dot(record.forest), encoding="utf-8")


def cmd_run(args) -> int:
    flags = _settings_from(args)
    if args.command == "replay":
        flags["mock"] = args.script
    cfg = resolve_config(flags, config_path=args.config)
    agents, script = make_agents(cfg, getattr(args, "trace", None))
    query = args.query or (script.query if script else None)
    if not query:
        raise UsageError("no query given (and the mock script has none)")
    try:
        record = Engine(agents, cfg.agot).run_query(query)
    finally:
        if agents.calls.sink is not None:
            agents.calls.sink.close()
    _finish_run(record, args)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = resolve_config(_settings_from(args), config_path=args.config)
    run_dir = args.resume or args.run_dir
    if args.resume and not Path(args.resume, "config.json").exists():
        raise UsageError(f"{args.resume} does not hold a benchmark run")
    items = load_dataset(args.dataset, args.fmt)
    if args.limit is not None:
        items = items[:args.limit]
    if args.shuffle_seed is not None:
        items = shuffle_items(items, args.shuffle_seed)
    baseline = None
    if args.baseline:
        baseline = json.loads(Path(args.baseline, "summary.json").read_text(encoding="utf-8"))
    agents, _ = make_agents(cfg)
    run = run_benchmark(items, args.framework, cfg.agot, agents, dataset=Path(args.dataset).stem,
                        run_dir=run_dir, baseline=baseline, use_judge=not args.no_judge)
    s = run.summary
    print(f"{run.dataset} / {run.framework}: {s['completed']}/{s['items']} items, "
          f"{s['errors']} errors")
    for m, v in s["metrics"].items():
        extra = ""
        d = s.get("delta_vs_io", {}).get(m)
        if d is not None:
            extra = f"  ({d:+.1f}% vs IO)"
        print(f"  {m}: {'n/a' if v is None else f'{v:.1f}'}{extra}")
    if "mean_total_nodes" in s:
        print(f"  mean nodes: {s['mean_total_nodes']:.1f}, "
              f"mean complex: {s['mean_complex_pct']:.1f}%")
    return EXIT_OK if s["errors"] == 0 else EXIT_FAILURE


def load_record(path) -> RunRecord:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if "forest" not in data and "graphs" in data:
        data = {"query": "", "final_answer": "-", "forest": data}
    try:
        return RunRecord.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphError(f"{path}: corrupt record: {exc}") from None


def cmd_export(args) -> int:
    if args.fmt not in ("dot", "json"):
        raise UsageError(f"unknown export format {args.fmt!r} (use dot or json)")
    record = load_record(args.record)
    text = to_dot(record.forest) if args.fmt == "dot" else dumps_forest(record.forest) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_capture(args) -> int:
    script = script_from_trace(args.trace)
    if args.query:
        script["query"] = args.query
    Path(args.output).write_text(json.dumps(script, indent=2, ensure_ascii=False), encoding="utf-8")
    print(f"wrote {len(script['steps'])} steps to {args.output}")
    return EXIT_OK


def cmd_table(args) -> int:
    summaries = {}
    for d in args.run_dirs:
        conf = json.loads(Path(d, "config.json").read_text(encoding="utf-8"))
        summaries[conf["framework"]] = json.loads(Path(d, "summary.json").read_text(encoding="utf-8"))
    write_comparison_csv(args.output, args.dataset, summaries)
    print(Path(args.output).read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = resolve_config(_settings_from(args), config_path=args.config)
    out = cfg.to_dict()
    width = max(len(k) for k in out)
    for k, v in out.items():
        src = cfg.sources.get(k, "default")
        print(f"{k.ljust(width)}  {json.dumps(v)}  [{src}]")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "replay": cmd_run, "bench": cmd_bench, "export": cmd_export,
            "capture": cmd_capture, "table": cmd_table, "config": cmd_config}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, MissingCredentials, ScriptError, DatasetError) as exc:
        print(f"agot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunFailed as exc:
        problems = validate_forest(exc.forest) if exc.forest.graphs else []
        print(f"agot: run failed: {exc} ({sum(g.n_nodes for g in exc.forest.graphs.values())} "
              f"nodes built{'; ' + str(len(problems)) + ' open invariants' if problems else ''})",
              file=sys.stderr)
        return EXIT_FAILURE
    except (BackendError, GraphError, ValueError, OSError) as exc:
        print(f"agot: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
