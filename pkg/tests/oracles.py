"""Independent reference implementations used to check the scoring code."""

import functools
import itertools
from fractions import Fraction


def _ap(f, a, b):
    return None if a is None or b is None else f(a, b)


_OPS = (lambda a, b: a + b, lambda a, b: a - b, lambda a, b: a * b,
        lambda a, b: a / b if b != 0 else None)


@functools.lru_cache(maxsize=None)
def _solvable(nums):
    for a, b, c, d in set(itertools.permutations([Fraction(n) for n in nums])):
        for f, g, h in itertools.product(_OPS, repeat=3):
            # the five binary trees over four ordered leaves
            shapes = (_ap(h, _ap(g, _ap(f, a, b), c), d), _ap(h, _ap(f, a, _ap(g, b, c)), d),
                      _ap(h, _ap(f, a, b), _ap(g, c, d)), _ap(f, a, _ap(h, _ap(g, b, c), d)),
                      _ap(f, a, _ap(g, b, _ap(h, c, d))))
            if 24 in shapes:
                return True
    return False


def game24_solvable(nums) -> bool:
    """All operand orders x all operator triples x all parenthesizations, exact arithmetic."""
    return _solvable(tuple(sorted(nums)))


def random_expression(rng, nums):
    parts = [str(n) for n in rng.sample(list(nums), len(nums))]
    while len(parts) > 1:
        i = rng.randrange(len(parts) - 1)
        parts[i:i + 2] = [f"({parts[i]} {rng.choice('+-*/')} {parts[i + 1]})"]
    return parts[0]
