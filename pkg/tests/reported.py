"""Reference absolute scores and relative changes (percent vs. IO) for the two comparison tables."""

# (dataset, model, io, agot, delta)
GPQA_MODELS = [
    ("GPQA_D", "gpt-4o-mini", 54.6, 55.1, 0.9),
    ("GPQA_S", "gpt-4o-mini", 37.4, 49.5, 32.4),
    ("GPQA_S", "gpt-4o", 39.4, 57.6, 46.2),
]

# dataset -> (io, {framework: (score, delta)})
FRAMEWORKS = {
    "GPQA_D": (54.6, {"CoT": (49.0, -10.3), "AIoT": (48.0, -12.1), "AGoT": (55.1, 0.9)}),
    "GPQA_S": (37.4, {"CoT": (38.6, 3.2), "AIoT": (39.4, 5.4), "AGoT": (49.5, 32.4)}),
    "HotpotQA": (72.0, {"CoT": (75.0, 4.2), "AIoT": (76.0, 5.6), "AGoT": (80.0, 11.1)}),
    "MoreHopQA": (55.0, {"CoT": (63.0, 14.5), "AIoT": (70.0, 27.3), "AGoT": (72.0, 30.9)}),
    "HybridQA": (68.0, {"CoT": (64.0, -5.9), "AIoT": (77.0, 13.2), "AGoT": (84.0, 23.5)}),
    "Crossword Letters": (18.6, {"CoT": (19.2, 3.2), "AIoT": (33.5, 80.1), "AGoT": (34.7, 86.6)}),
    "Crossword Words": (2.5, {"CoT": (3.0, 20.0), "AIoT": (11.0, 340.0), "AGoT": (11.1, 344.0)}),
    "Game of 24": (10.0, {"CoT": (20.0, 100.0), "AIoT": (25.0, 150.0), "AGoT": (50.0, 400.0)}),
}


def delta_cells():
    """Every (label, io, value, reported delta) cell of both tables."""
    cells = [(f"{d} {m} AGoT", io, x, delta) for d, m, io, x, delta in GPQA_MODELS]
    for dataset, (io, cols) in FRAMEWORKS.items():
        for fw, (x, delta) in cols.items():
            cells.append((f"{dataset} {fw}", io, x, delta))
    return cells
