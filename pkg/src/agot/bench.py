"""Benchmark datasets, IO/CoT baselines and a resumable benchmark runner.

A run directory holds ``config.json``, ``items.jsonl`` (one appended record
per finished item), ``summary.json`` and ``summary.csv``. AGoT runs also keep
the full run record of each item under ``records/``.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .agents import AgentError, Agents
from .backend import BackendError
from .config import AgotConfig
from .engine import Engine, RunFailed
from .graph import Answer, GraphError
from .scoring import (LETTERS, CrosswordSolution, McqItem, check_game24, crossword_scores,
                      delta_pct, exact_match, extract_expression, extract_option, f1_token, laas,
                      mcq_shuffle, parse_grid)

log = logging.getLogger(__name__)

FORMATS = ("gpqa-mcq", "hotpot-qa", "morehop-qa", "hybrid-qa", "game24-csv", "crossword-json")
FRAMEWORKS = ("IO", "CoT", "AGoT")
CATEGORY = {"mcq": "reasoning", "qa": "retrieval", "game24": "explorative",
            "crossword": "explorative"}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class QaItem:
    question: str
    answer: str
    context: str = ""


@dataclass(frozen=True)
class Game24Item:
    numbers: tuple

    def __post_init__(self):
        if len(self.numbers) != 4:
            raise ValueError(f"Game of 24 needs 4 numbers, got {len(self.numbers)}")


@dataclass(frozen=True)
class CrosswordItem:
    clues: tuple
    solution: CrosswordSolution


@dataclass(frozen=True)
class DatasetItem:
    id: str
    kind: str  # mcq | qa | game24 | crossword
    payload: object

    @property
    def category(self) -> str:
        return CATEGORY[self.kind]


# --- loading ----------------------------------------------------------------

def _read_records(path: Path):
    """Yield (line_or_index, record) from a JSON array or a JSON-lines file."""
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
        yield from ((i + 1, rec) for i, rec in enumerate(data))
        return
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            yield line_no, json.loads(line)
        except json.JSONDecodeError as exc:
            yield line_no, DatasetError(f"invalid JSON: {exc.msg}")


def _context_text(ctx) -> str:
    if ctx is None:
        return ""
    if isinstance(ctx, str):
        return ctx
    parts = []
    for entry in ctx:
        if isinstance(entry, (list, tuple)) and len(entry) == 2:
            title, sents = entry
            body = " ".join(sents) if isinstance(sents, (list, tuple)) else str(sents)
            parts.append(f"{title}: {body}")
        else:
            parts.append(str(entry))
    return "\n".join(parts)


def _mcq_from_record(rec, n):
    options = rec.get("options")
    if not isinstance(options, list) or len(options) < 2:
        raise ValueError("needs an 'options' list with at least two entries")
    gold = rec.get("gold", 0)
    if isinstance(gold, str) and len(gold) == 1 and gold.upper() in LETTERS:
        gold = LETTERS.index(gold.upper())
    return DatasetItem(str(rec.get("id", n)), "mcq",
                       McqItem(str(rec["question"]), tuple(str(o) for o in options), int(gold)))


def _load_gpqa(path: Path):
    if path.suffix.lower() == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row_no, row in enumerate(reader, 2):
                try:
                    opts = [row["Correct Answer"]] + [row[f"Incorrect Answer {k}"] for k in (1, 2, 3)]
                    item = DatasetItem(row.get("Record ID") or str(row_no - 1), "mcq",
                                       McqItem(row["Question"].strip(),
                                               tuple(o.strip() for o in opts), 0))
                    yield row_no, item
                except (KeyError, AttributeError) as exc:
                    yield row_no, DatasetError(f"missing column {exc}")
        return
    for n, rec in _read_records(path):
        if isinstance(rec, Exception):
            yield n, rec
            continue
        try:
            yield n, _mcq_from_record(rec, n)
        except (KeyError, TypeError, ValueError) as exc:
            yield n, DatasetError(str(exc))


def _load_qa(path: Path):
    for n, rec in _read_records(path):
        if isinstance(rec, Exception):
            yield n, rec
            continue
        try:
            answer = rec.get("answer", rec.get("answer-text", rec.get("answer_text")))
            question = rec["question"]
            if not isinstance(answer, str) or not answer.strip() or not str(question).strip():
                raise ValueError("needs a non-empty 'question' and 'answer'")
            ident = rec.get("id", rec.get("_id", rec.get("question_id", n)))
            context = _context_text(rec.get("context"))
            yield n, DatasetItem(str(ident), "qa", QaItem(str(question), answer, context))
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            yield n, DatasetError(str(exc) if isinstance(exc, ValueError) else f"missing {exc}")


def _load_game24(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    puzzle_col = None
    start = 0
    if rows and not any(c.strip().lstrip("-").isdigit() for c in rows[0][:4]):
        header = [c.strip().lower() for c in rows[0]]
        puzzle_col = header.index("puzzles") if "puzzles" in header else None
        start = 1
    for i, row in enumerate(rows[start:], start + 1):
        if not any(c.strip() for c in row):
            continue
        try:
            cells = row[puzzle_col].split() if puzzle_col is not None else row[:4]
            numbers = tuple(int(c) for c in cells)
            yield i, DatasetItem(f"g24-{i - start}", "game24", Game24Item(numbers))
        except (ValueError, IndexError) as exc:
            yield i, DatasetError(f"bad puzzle row {row!r}: {exc}")


def _load_crossword(path: Path):
    for n, rec in _read_records(path):
        if isinstance(rec, Exception):
            yield n, rec
            continue
        try:
            if isinstance(rec, list):
                # [clues, flat letters] pairs as in the common 5x5 mini-crossword dump
                clues, letters = rec
                size = int(len(letters) ** 0.5)
                grid = ["".join(letters[r * size:(r + 1) * size]) for r in range(size)]
                ident = str(n)
            else:
                clues, grid, ident = rec["clues"], rec["grid"], str(rec.get("id", n))
            sol = CrosswordSolution.from_grid(grid)
            yield n, DatasetItem(ident, "crossword", CrosswordItem(tuple(clues), sol))
        except (KeyError, TypeError, ValueError) as exc:
            yield n, DatasetError(str(exc))


_LOADERS = {
    "gpqa-mcq": _load_gpqa,
    "hotpot-qa": _load_qa,
    "morehop-qa": _load_qa,
    "hybrid-qa": _load_qa,
    "game24-csv": _load_game24,
    "crossword-json": _load_crossword,
}


def load_dataset(path, fmt: str) -> list:
    """Load and validate a dataset file; all malformed rows are reported together."""
    if fmt not in _LOADERS:
        raise DatasetError(f"unknown dataset format {fmt!r}; expected one of {', '.join(FORMATS)}")
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: no such file")
    if not path.read_text(encoding="utf-8").strip():
        log.warning("%s is empty", path)
        return []
    items, problems = [], []
    for where, item in _LOADERS[fmt](path):
        if isinstance(item, Exception):
            problems.append(f"{path}:{where}: {item}")
        else:
            items.append(item)
    if problems:
        raise DatasetError("malformed dataset rows:\n" + "\n".join(problems))
    ids = [it.id for it in items]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate item ids")
    return items


def shuffle_items(items, seed) -> list:
    """Shuffle the options of every MCQ item, seeded per item so order doesn't matter."""
    out = []
    for it in items:
        if it.kind == "mcq":
            it = DatasetItem(it.id, it.kind, mcq_shuffle(it.payload, f"{seed}:{it.id}"))
        out.append(it)
    return out


# --- prompts, baselines, scoring ------------------------------------------

def task_prompt(item: DatasetItem) -> str:
    p = item.payload
    if item.kind == "mcq":
        return p.prompt()
    if item.kind == "qa":
        ctx = f"Context:\n{p.context}\n\n" if p.context else ""
        return f"{ctx}Question: {p.question}\nGive a short answer (a few words)."
    if item.kind == "game24":
        nums = " ".join(str(n) for n in p.numbers)
        return (f"Use the numbers {nums} with +, -, *, / and parentheses to make 24. "
                "Use every number exactly once. Give the final answer as a single arithmetic "
                "expression.")
    if item.kind == "crossword":
        rows, cols = p.solution.shape
        clues = "\n".join(f"- {c}" for c in p.clues)
        return (f"Solve this {rows}x{cols} mini crossword. The first {rows} clues are the rows "
                f"(across) from top to bottom, the next {cols} are the columns (down) from left "
                f"to right.\n{clues}\n\nGive the solved grid as {rows} lines of {cols} letters.")
    raise ValueError(f"unknown item kind {item.kind!r}")


def run_io(query: str, agents: Agents) -> Answer:
    return agents.io(query, "answer")


def run_cot(query: str, agents: Agents) -> Answer:
    return agents.cot(query, "answer")


def score_item(item: DatasetItem, answer: Answer, judge: Optional[Agents]) -> dict:
    """Metric values in [0, 1] for one answered item; ``None`` marks a failed judgement."""
    p = item.payload
    text = answer.text
    if item.kind == "mcq":
        n = len(p.options)
        letter = (answer.option or "").strip().strip("()").upper()
        how = "field"
        if not letter or letter not in LETTERS[:n]:
            letter, how = extract_option(text, n), "regex"
        if letter is not None:
            return {"accuracy": float(letter == p.gold_letter), "choice": letter,
                    "extraction": how}
        if judge is None:
            return {"accuracy": 0.0, "choice": None, "extraction": "none"}
        verdict = laas(text, p.options[p.gold], judge, p.stem, "mcq-judge")
        return {"accuracy": None if verdict is None else float(verdict), "choice": None,
                "extraction": "judge"}
    if item.kind == "qa":
        out = {"em": float(exact_match(text, p.answer)), "f1": f1_token(text, p.answer)}
        if judge is not None:
            verdict = laas(text, p.answer, judge, p.question, "laas")
            out["laas"] = None if verdict is None else float(verdict)
        return out
    if item.kind == "game24":
        expr = extract_expression(text)
        ok, reason = check_game24(p.numbers, expr)
        return {"accuracy": float(ok), "expression": expr, "reason": reason}
    if item.kind == "crossword":
        rows, cols = p.solution.shape
        grid = parse_grid(text, rows, cols)
        if grid is None:
            return {"letter_acc": 0.0, "word_acc": 0.0, "parsed": False}
        pred = CrosswordSolution(grid, p.solution.words)
        letter_acc, word_acc = crossword_scores(pred, p.solution)
        return {"letter_acc": letter_acc, "word_acc": word_acc, "parsed": True}
    raise ValueError(f"unknown item kind {item.kind!r}")


METRICS = {"mcq": ("accuracy",), "qa": ("laas", "em", "f1"), "game24": ("accuracy",),
           "crossword": ("letter_acc", "word_acc")}


# --- running ------------------------------------------------------------------

@dataclass
class BenchmarkRun:
    dataset: str
    framework: str
    config: dict
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _run_one(item: DatasetItem, framework: str, agents: Agents, cfg: AgotConfig,
             run_dir: Optional[Path], use_judge: bool) -> dict:
    worker = agents.fork(f"{item.id}:")
    rec = {"id": item.id, "framework": framework, "category": item.category}
    try:
        prompt = task_prompt(item)
        run_record = None
        if framework == "IO":
            answer = run_io(prompt, worker)
        elif framework == "CoT":
            answer = run_cot(prompt, worker)
        else:
            run_record = Engine(worker, cfg).run_query(prompt)
            answer = run_record.final_answer
        calls_before_judge = len(worker.calls.records)
        scores = score_item(item, answer, worker if use_judge else None)
    except (AgentError, RunFailed, BackendError, GraphError, ValueError) as exc:
        rec.update(status="error", error=f"{type(exc).__name__}: {exc}")
        return rec
    usage = worker.calls.total_usage()
    rec.update(status="ok", answer=answer.text, option=answer.option, scores=scores,
               calls=calls_before_judge, total_tokens=usage.total_tokens)
    if run_record is not None:
        rec["tally"] = run_record.tally
        if run_dir is not None:
            rec_dir = run_dir / "records"
            rec_dir.mkdir(exist_ok=True)
            safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in item.id)
            (rec_dir / f"{safe}.json").write_text(run_record.dumps(), encoding="utf-8")
    return rec


def load_records(run_dir) -> dict:
    """Latest record per item id from ``items.jsonl`` (later lines win)."""
    path = Path(run_dir) / "items.jsonl"
    out = {}
    if not path.exists():
        return out
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["id"]] = rec
    return out


def summarize(items, records: dict, baseline: Optional[dict] = None) -> dict:
    """Aggregate per-item records (dataset order) into percentages and node statistics."""
    kinds = {it.kind for it in items}
    metrics = [m for k in ("mcq", "qa", "game24", "crossword") if k in kinds for m in METRICS[k]]
    ordered = [records[it.id] for it in items if it.id in records]
    ok = [r for r in ordered if r.get("status") == "ok"]
    summary = {"items": len(items), "completed": len(ok),
               "errors": sum(1 for r in ordered if r.get("status") == "error"),
               "missing": len(items) - len(ordered), "metrics": {}, "excluded": {}}
    for m in metrics:
        values = [r["scores"].get(m) for r in ok if m in r["scores"]]
        scored = [v for v in values if v is not None]
        summary["excluded"][m] = len(values) - len(scored)
        summary["metrics"][m] = 100.0 * sum(scored) / len(scored) if scored else None
    tallies = [r["tally"] for r in ok if r.get("tally")]
    if tallies:
        summary["mean_total_nodes"] = sum(t["total_nodes"] for t in tallies) / len(tallies)
        summary["mean_complex_pct"] = sum(t["complex_pct"] for t in tallies) / len(tallies)
    if baseline:
        summary["delta_vs_io"] = {}
        for m, v in summary["metrics"].items():
            b = baseline.get("metrics", {}).get(m)
            summary["delta_vs_io"][m] = (delta_pct(b, v) if v is not None and b else None)
    return summary


def _write_summary(run_dir: Path, run: BenchmarkRun):
    (run_dir / "summary.json").write_text(
        json.dumps(run.summary, indent=2, sort_keys=True), encoding="utf-8")
    with (run_dir / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "framework", "metric", "value", "delta_vs_io_pct", "excluded"])
        for m, v in run.summary["metrics"].items():
            d = run.summary.get("delta_vs_io", {}).get(m)
            w.writerow([run.dataset, run.framework, m, "" if v is None else f"{v:.1f}",
                        "" if d is None else f"{d:+.1f}", run.summary["excluded"][m]])
        for k in ("mean_total_nodes", "mean_complex_pct"):
            if k in run.summary:
                w.writerow([run.dataset, run.framework, k, f"{run.summary[k]:.2f}", "", 0])


def run_benchmark(items, framework: str, cfg: AgotConfig, agents: Agents, *,
                  dataset: str = "dataset", run_dir=None, baseline: Optional[dict] = None,
                  use_judge: bool = True) -> BenchmarkRun:
    """Run ``framework`` over ``items``, resuming from ``run_dir`` when it has records.

    Items that already have a successful record are skipped; errored items are
    retried. Records are appended by this thread only, as items finish.
    """
    if framework not in FRAMEWORKS:
        raise ValueError(f"unknown framework {framework!r}; expected one of {FRAMEWORKS}")
    if not items:
        raise ValueError("dataset is empty")
    run = BenchmarkRun(dataset, framework, {"agot": cfg.to_dict(), "framework": framework,
                                            "dataset": dataset})
    done = {}
    out = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg_path = run_dir / "config.json"
        if cfg_path.exists():
            previous = json.loads(cfg_path.read_text(encoding="utf-8"))
            if previous.get("framework") != framework:
                raise ValueError(f"{run_dir} holds a {previous.get('framework')} run, not {framework}")
        else:
            cfg_path.write_text(json.dumps(run.config, indent=2, sort_keys=True), encoding="utf-8")
        done = load_records(run_dir)
        out = (run_dir / "items.jsonl").open("a", encoding="utf-8")
    pending = [it for it in items if done.get(it.id, {}).get("status") != "ok"]
    if len(pending) < len(items):
        log.info("resuming: %d of %d items already done", len(items) - len(pending), len(items))
    try:
        workers = max(1, min(cfg.max_in_flight, len(pending))) if cfg.concurrent else 1
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one, it, framework, agents, cfg, run_dir, use_judge)
                       for it in pending]
            for fut in as_completed(futures):
                rec = fut.result()
                done[rec["id"]] = rec
                if out is not None:
                    out.write(json.dumps(rec, sort_keys=True) + "\n")
                    out.flush()
                    os.fsync(out.fileno())
    finally:
        if out is not None:
            out.close()
    run.records = [done[it.id] for it in items if it.id in done]
    run.summary = summarize(items, done, baseline)
    if run_dir is not None:
        _write_summary(run_dir, run)
    return run


# --- comparison tables --------------------------------------------------------

def comparison_rows(summaries: dict) -> list:
    """Rows of a framework comparison table.

    ``summaries`` maps framework name to a summary dict. Each row holds one
    metric, the value for every framework present and its change relative to IO.
    """
    frameworks = [f for f in FRAMEWORKS if f in summaries]
    metrics = []
    for f in frameworks:
        for m in summaries[f]["metrics"]:
            if m not in metrics:
                metrics.append(m)
    rows = []
    for m in metrics:
        row = {"metric": m}
        io = summaries.get("IO", {}).get("metrics", {}).get(m)
        for f in frameworks:
            v = summaries[f]["metrics"].get(m)
            row[f] = v
            if f != "IO":
                row[f"delta_{f}_pct"] = delta_pct(io, v) if io and v is not None else None
        rows.append(row)
    return rows


def write_comparison_csv(path, dataset: str, summaries: dict):
    rows = comparison_rows(summaries)
    frameworks = [f for f in FRAMEWORKS if f in summaries]
    header = ["dataset", "metric"]
    for f in frameworks:
        header.append(f)
        if f != "IO":
            header.append(f"delta_{f}_pct")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            cells = [dataset, r["metric"]]
            for col in header[2:]:
                v = r.get(col)
                cells.append("" if v is None else (f"{v:+.1f}" if col.startswith("delta") else f"{v:.1f}"))
            w.writerow(cells)
