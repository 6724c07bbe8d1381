"""Polynomials of one integer variable built from +, * and small constants."""
from __future__ import annotations

from typing import List, Tuple

import numpy as np

from ..evaluation import DomainError
from ..library import Primitive
from ..tasks import Task
from ..types import INT, arrow
from .base import DomainSpec

MAX_DEGREE = 4
MAGNITUDE = 10**9


def _guard(v: int) -> int:
    if abs(v) > MAGNITUDE:
        raise DomainError("integer out of range")
    return v


PRIMITIVES = [
    Primitive("+", arrow(INT, INT, INT), impl=lambda a, b: _guard(a + b)),
    Primitive("*", arrow(INT, INT, INT), impl=lambda a, b: _guard(a * b)),
    Primitive("0", INT, impl=0),
    Primitive("1", INT, impl=1),
    Primitive("2", INT, impl=2),
]

# each hole is used once, so these are the shapes a learner can recover
HIDDEN_CHUNKS = {
    "incr": "(lambda (+ $0 1))",
    "double_plus": "(lambda (lambda (+ (* 2 $1) $0)))",
}


def degree(outputs: List[int]) -> int:
    """Smallest d whose d-th finite differences vanish (inputs 0..n-1)."""
    diffs = list(outputs)
    for d in range(len(outputs)):
        if all(v == 0 for v in diffs):
            return d - 1
        diffs = [b - a for a, b in zip(diffs, diffs[1:])]
    return len(outputs)


def task_inputs(request, rng: np.random.Generator, n: int) -> List[Tuple]:
    return [(x,) for x in range(n)]


def random_inputs(request, rng: np.random.Generator) -> Tuple:
    return (int(rng.integers(0, 10)),)


def featurize(task: Task) -> str:
    ys = [y for (x,), y in sorted(task.examples)]
    d = min(degree(ys), MAX_DEGREE + 1)
    parity = "e" if all(y % 2 == 0 for y in ys) else ("o" if all(y % 2 for y in ys) else "m")
    return f"d{d}{parity}"


def make_arith_domain(seed: int = 0) -> DomainSpec:
    return DomainSpec(
        name="arith",
        primitives=list(PRIMITIVES),
        requests=[arrow(INT, INT)],
        input_generator=random_inputs,
        featurizer=featurize,
        hidden_chunks=dict(HIDDEN_CHUNKS),
        n_examples=10,
        seed=seed,
        value_ok=lambda v: abs(v) <= 10**6,
        inputs_for_task=task_inputs,
        task_filter=within_degree,
        notes="10 input/output pairs per task (inputs 0..9); full-scale setups use 50",
    )


def within_degree(outputs: List[int]) -> bool:
    return 1 <= degree(outputs) <= MAX_DEGREE
