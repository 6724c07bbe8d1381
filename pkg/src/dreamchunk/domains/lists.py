"""Integer-list processing with map, fold and a few list and arithmetic builtins."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from ..evaluation import DomainError
from ..library import Primitive
from ..tasks import Task
from ..types import BOOL, INT, arguments, arrow, returns, tlist
from .base import DomainSpec

LIST = tlist(INT)
MAGNITUDE = 10**6


def _guard(v: int) -> int:
    if abs(v) > MAGNITUDE:
        raise DomainError("integer out of range")
    return v


def _head(xs):
    if not xs:
        raise DomainError("head of empty list")
    return xs[0]


def _tail(xs):
    if not xs:
        raise DomainError("tail of empty list")
    return xs[1:]


def _fold(xs, z, f):
    acc = z
    for x in reversed(xs):
        acc = f(x)(acc)
    return acc


def _cons(x, xs):
    if len(xs) >= 64:
        raise DomainError("list too long")
    return (x,) + xs


PRIMITIVES = [
    Primitive("map", arrow(arrow(INT, INT), LIST, LIST), impl=lambda f, xs: tuple(f(x) for x in xs)),
    Primitive("fold", arrow(LIST, INT, arrow(INT, INT, INT), INT), impl=_fold),
    Primitive("cons", arrow(INT, LIST, LIST), impl=_cons),
    Primitive("head", arrow(LIST, INT), impl=_head),
    Primitive("tail", arrow(LIST, LIST), impl=_tail),
    Primitive("empty", LIST, impl=()),
    Primitive("is_empty", arrow(LIST, BOOL), impl=lambda xs: len(xs) == 0),
    Primitive("if", arrow(BOOL, INT, INT, INT), impl=lambda c, a, b: a if c else b),
    Primitive("+", arrow(INT, INT, INT), impl=lambda a, b: _guard(a + b)),
    Primitive("-", arrow(INT, INT, INT), impl=lambda a, b: _guard(a - b)),
    Primitive("*", arrow(INT, INT, INT), impl=lambda a, b: _guard(a * b)),
    Primitive("0", INT, impl=0),
    Primitive("1", INT, impl=1),
]

HIDDEN_CHUNKS = {
    "incr_all": "(lambda (map (lambda (+ $0 1)) $0))",
    "double_all": "(lambda (map (lambda (+ $0 $0)) $0))",
    "sum": "(lambda (fold $0 0 (lambda (lambda (+ $0 $1)))))",
}


def random_value(tp, rng: np.random.Generator):
    if tp == INT:
        return int(rng.integers(0, 10))
    if tp == LIST:
        return tuple(int(v) for v in rng.integers(0, 10, size=int(rng.integers(1, 6))))
    if tp == BOOL:
        return bool(rng.integers(2))
    raise ValueError(f"no generator for {tp}")


def random_inputs(request, rng: np.random.Generator) -> Tuple:
    return tuple(random_value(t, rng) for t in arguments(request))


def _sign(v) -> str:
    return "<" if v < 0 else (">" if v > 0 else "=")


def _majority(signs) -> str:
    signs = list(signs)
    best = max(sorted(set(signs)), key=signs.count)
    return best if signs.count(best) * 2 > len(signs) else "?"


def featurize(task: Task) -> str:
    """Coarse signature: output kind, length relation, element relation, emptiness."""
    pairs = [(xs[0], y) for xs, y in task.examples]
    if returns(task.request) == LIST:
        length = _majority(_sign(len(y) - len(x)) for x, y in pairs)
        same = [(x, y) for x, y in pairs if len(x) == len(y) and x]
        elem = _majority(_sign(sum(y) - sum(x)) for x, y in same) if same else "?"
        empty = "e" if any(len(y) == 0 for _, y in pairs) else "n"
        return f"L{length}{elem}{empty}"
    vs_sum = _majority(_sign(y - sum(x)) for x, y in pairs)
    vs_head = _majority(_sign(y - x[0]) for x, y in pairs if x)
    return f"I{vs_sum}{vs_head}"


def value_ok(v) -> bool:
    if isinstance(v, tuple):
        return all(abs(x) <= 1000 for x in v)
    return abs(v) <= 1000


def make_list_domain(seed: int = 0) -> DomainSpec:
    return DomainSpec(
        name="list",
        primitives=list(PRIMITIVES),
        requests=[arrow(LIST, LIST), arrow(LIST, INT)],
        input_generator=random_inputs,
        featurizer=featurize,
        hidden_chunks=dict(HIDDEN_CHUNKS),
        n_examples=15,
        seed=seed,
        value_ok=value_ok,
    )
