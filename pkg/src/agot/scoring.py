"""Answer scoring: EM/F1, judge-based equivalence, Game of 24, crosswords, MCQ shuffling."""

from __future__ import annotations

import ast
import itertools
import random
import re
import string
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

# --- exact match and token F1 -------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b", re.UNICODE)
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and English articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def f1_token(pred: str, gold: str) -> float:
    pred_toks = normalize_answer(pred).split()
    gold_toks = normalize_answer(gold).split()
    if not pred_toks or not gold_toks:
        # both empty counts as agreement so that an exact match always has F1 = 1
        return float(pred_toks == gold_toks)
    common = Counter(pred_toks) & Counter(gold_toks)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_toks)
    recall = overlap / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def laas(pred: str, gold: str, agents, question: str = "", key: str = "") -> Optional[int]:
    """Judge-based semantic equivalence: 1, 0, or None if the judge failed.

    ``agents`` is an :class:`agot.agents.Agents` bound to the judge backend.
    """
    from .agents import AgentError

    try:
        return int(agents.judge(question, pred, gold, key))
    except AgentError:
        return None


# --- Game of 24 -----------------------------------------------------------

_SYMBOLS = {"×": "*", "x": "*", "X": "*", "÷": "/", "−": "-", "–": "-"}


class ExpressionError(ValueError):
    pass


def _eval(node, used: list) -> Fraction:
    if isinstance(node, ast.Expression):
        return _eval(node.body, used)
    if isinstance(node, ast.Constant) and isinstance(node.value, int) \
            and not isinstance(node.value, bool):
        used.append(node.value)
        return Fraction(node.value)
    if isinstance(node, ast.BinOp):
        left = _eval(node.left, used)
        right = _eval(node.right, used)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            if right == 0:
                raise ZeroDivisionError("division by zero")
            return left / right
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def evaluate_expression(expression: str):
    """Evaluate ``+ - * /`` arithmetic exactly; returns (value, numbers used)."""
    text = expression
    for sym, rep in _SYMBOLS.items():
        text = text.replace(sym, rep)
    text = text.split("=")[0].strip()
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {expression!r}: {exc.msg}") from None
    used: list = []
    value = _eval(tree, used)
    return value, used


def check_game24(numbers, expression: str):
    """Return ``(ok, reason)``; reason is empty when the expression is valid."""
    try:
        value, used = evaluate_expression(expression)
    except ExpressionError as exc:
        return False, str(exc)
    except ZeroDivisionError:
        return False, "division by zero"
    if sorted(used) != sorted(int(n) for n in numbers):
        return False, f"uses {sorted(used)}, expected {sorted(numbers)}"
    if value != 24:
        return False, f"evaluates to {value}"
    return True, ""


def verify_game24(numbers, expression: str) -> bool:
    return check_game24(numbers, expression)[0]


def solve_game24(numbers, target: int = 24) -> Optional[str]:
    """Exhaustive search: repeatedly combine any two remaining values with any operator."""
    dead = set()  # multisets of values already shown to be unsolvable

    def search(items):
        if len(items) == 1:
            return items[0][1] if items[0][0] == target else None
        state = tuple(sorted(v for v, _ in items))
        if state in dead:
            return None
        for i, j in itertools.combinations(range(len(items)), 2):
            (a, ea), (b, eb) = items[i], items[j]
            rest = [items[k] for k in range(len(items)) if k not in (i, j)]
            candidates = [(a + b, f"({ea} + {eb})"), (a * b, f"({ea} * {eb})"),
                          (a - b, f"({ea} - {eb})"), (b - a, f"({eb} - {ea})")]
            if b != 0:
                candidates.append((a / b, f"({ea} / {eb})"))
            if a != 0:
                candidates.append((b / a, f"({eb} / {ea})"))
            for value, expr in candidates:
                found = search(rest + [(value, expr)])
                if found is not None:
                    return found
        dead.add(state)
        return None

    found = search([(Fraction(n), str(n)) for n in numbers])
    if found is not None and found.startswith("(") and found.endswith(")"):
        found = found[1:-1]
    return found


_EXPR_LINE = re.compile(r"[0-9()+\-*/×÷−\s]+")


def extract_expression(text: str) -> str:
    """Pull the most likely arithmetic expression out of a free-text answer."""
    lhs_candidates = []
    for line in text.splitlines():
        left = line.split("=")[0]
        for m in _EXPR_LINE.finditer(left):
            chunk = m.group().strip()
            if sum(c.isdigit() for c in chunk) and any(op in chunk for op in "+-*/×÷−"):
                lhs_candidates.append(chunk)
    if not lhs_candidates:
        return text.strip()
    return max(lhs_candidates, key=len)


# --- crosswords -----------------------------------------------------------

BLOCK = "#"


@dataclass(frozen=True)
class Slot:
    row: int
    col: int
    across: bool
    length: int

    def cells(self):
        for k in range(self.length):
            yield (self.row, self.col + k) if self.across else (self.row + k, self.col)


@dataclass(frozen=True)
class CrosswordSolution:
    grid: tuple  # tuple of equal-length strings; BLOCK marks black squares
    words: tuple  # tuple of Slot

    def __post_init__(self):
        if not self.grid or len({len(r) for r in self.grid}) != 1:
            raise ValueError("crossword grid must be a non-empty rectangle")
        rows, cols = self.shape
        for s in self.words:
            for r, c in s.cells():
                if not (0 <= r < rows and 0 <= c < cols) or self.grid[r][c] == BLOCK:
                    raise ValueError(f"word slot {s} leaves the letter cells of the grid")

    @property
    def shape(self):
        return len(self.grid), len(self.grid[0])

    @classmethod
    def from_grid(cls, rows) -> "CrosswordSolution":
        """Derive word slots as maximal across/down runs of two or more letter cells."""
        grid = tuple(r.upper() for r in rows)
        n_rows, n_cols = len(grid), len(grid[0]) if grid else 0
        slots = []
        for across in (True, False):
            outer, inner = (n_rows, n_cols) if across else (n_cols, n_rows)
            for a in range(outer):
                b = 0
                while b < inner:
                    cell = grid[a][b] if across else grid[b][a]
                    if cell == BLOCK:
                        b += 1
                        continue
                    start = b
                    while b < inner and (grid[a][b] if across else grid[b][a]) != BLOCK:
                        b += 1
                    if b - start >= 2:
                        slots.append(Slot(a, start, True, b - start) if across
                                     else Slot(start, a, False, b - start))
        return cls(grid, tuple(slots))

    def letter(self, r, c) -> str:
        return self.grid[r][c]

    def word(self, slot: Slot) -> str:
        return "".join(self.grid[r][c] for r, c in slot.cells())


def crossword_scores(pred: CrosswordSolution, gold: CrosswordSolution):
    """Letter accuracy over gold letter cells and word accuracy over gold word slots."""
    if pred.shape != gold.shape:
        raise ValueError(f"grid shapes differ: {pred.shape} vs {gold.shape}")
    rows, cols = gold.shape
    cells = [(r, c) for r in range(rows) for c in range(cols) if gold.grid[r][c] != BLOCK]
    letters = sum(pred.grid[r][c].upper() == gold.grid[r][c].upper() for r, c in cells)
    words = sum(pred.word(s).upper() == gold.word(s).upper() for s in gold.words)
    letter_acc = letters / len(cells) if cells else 0.0
    word_acc = words / len(gold.words) if gold.words else 0.0
    return letter_acc, word_acc


def parse_grid(text: str, rows: int, cols: int) -> Optional[tuple]:
    """Find ``rows`` consecutive lines of ``cols`` letters (spaces ignored) in model output."""
    lines = []
    for raw in text.splitlines():
        cleaned = re.sub(r"[\s|,]", "", raw).upper()
        if len(cleaned) == cols and all(ch.isalpha() or ch == BLOCK for ch in cleaned):
            lines.append(cleaned)
            if len(lines) == rows:
                return tuple(lines)
        else:
            lines = []
    flat = re.sub(r"[^A-Za-z#]", "", text).upper()
    if len(flat) == rows * cols:
        return tuple(flat[i * cols:(i + 1) * cols] for i in range(rows))
    return None


# --- multiple choice ------------------------------------------------------

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True)
class McqItem:
    stem: str
    options: tuple
    gold: int

    def __post_init__(self):
        if not 0 <= self.gold < len(self.options):
            raise ValueError(f"gold index {self.gold} outside {len(self.options)} options")

    @property
    def gold_letter(self) -> str:
        return LETTERS[self.gold]

    def prompt(self) -> str:
        opts = "\n".join(f"({LETTERS[i]}) {o}" for i, o in enumerate(self.options))
        return f"{self.stem.strip()}\n\n{opts}\n\nAnswer with the letter of the correct option."


def shuffle_permutation(n: int, seed) -> list:
    """perm[i] = index in the original options of the option shown at position i."""
    perm = list(range(n))
    random.Random(seed).shuffle(perm)
    return perm


def mcq_shuffle(item: McqItem, seed) -> McqItem:
    perm = shuffle_permutation(len(item.options), seed)
    return McqItem(item.stem, tuple(item.options[p] for p in perm), perm.index(item.gold))


def mcq_unshuffle(item: McqItem, perm) -> McqItem:
    options = [None] * len(perm)
    for shown, original in enumerate(perm):
        options[original] = item.options[shown]
    return McqItem(item.stem, tuple(options), perm[item.gold])


_LETTER_PATTERNS = [
    re.compile(r"answer\s*(?:is|:)?\s*\(?([A-Z])\)?(?![A-Za-z])", re.IGNORECASE),
    re.compile(r"option\s*\(?([A-Z])\)?(?![A-Za-z])", re.IGNORECASE),
    re.compile(r"^\s*\(?([A-Z])\)?\s*$"),
    re.compile(r"\(([A-Z])\)"),
]


def extract_option(text: str, n_options: int) -> Optional[str]:
    """Regex pass for an option letter in free text; None when nothing unambiguous is found."""
    valid = LETTERS[:n_options]
    for pat in _LETTER_PATTERNS:
        found = [m.upper() for m in pat.findall(text) if m.upper() in valid]
        if found:
            return found[-1]
    return None


def delta_pct(baseline: float, value: float) -> float:
    """Relative improvement of ``value`` over ``baseline`` in percent."""
    if baseline == 0:
        raise ZeroDivisionError("relative change against a zero baseline is undefined")
    return (value - baseline) / baseline * 100.0
