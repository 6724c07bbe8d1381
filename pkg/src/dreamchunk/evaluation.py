"""Call-by-value evaluation with a step budget.

Expressions are compiled to nested Python closures once and then applied to
each example.  Every function application (including calls made by
primitives such as ``map`` into program-supplied lambdas) costs one step.
"""
from __future__ import annotations

from typing import Any, Callable, Sequence

from .program import Expression, Index, Lambda, Prim, TypedProgram

DEFAULT_STEP_BUDGET = 10_000


class EvaluationError(Exception):
    """Base class: the program does not produce a value."""


class DomainError(EvaluationError):
    """A primitive was applied outside its domain (e.g. head of [])."""


class StepBudgetExceeded(EvaluationError):
    pass


class _Counter:
    __slots__ = ("steps", "budget")

    def __init__(self, budget: int):
        self.steps = 0
        self.budget = budget

    def tick(self) -> None:
        self.steps += 1
        if self.steps > self.budget:
            raise StepBudgetExceeded(f"exceeded {self.budget} evaluation steps")


def curry(fn: Callable, arity: int) -> Any:
    """Turn an ``arity``-argument Python function into nested 1-arg calls."""
    if arity == 0:
        return fn()

    def collect(args):
        if len(args) == arity:
            return fn(*args)
        return lambda x: collect(args + (x,))

    return collect(())


def _compile(e: Expression, library, counter: _Counter, chunks: dict):
    if isinstance(e, Index):
        i = e.i

        def var(env):
            for _ in range(i):
                env = env[1]
            return env[0]

        return var
    if isinstance(e, Prim):
        prim = library.get(e.name)
        if prim.definition is None:
            v = library.value_of(e.name)
            return lambda env: v
        # chunks run inline so their steps count against the caller's budget
        if e.name not in chunks:
            chunks[e.name] = None
            chunks[e.name] = _compile(prim.definition, library, counter, chunks)
        return lambda env: chunks[e.name](None)
    if isinstance(e, Lambda):
        body = _compile(e.body, library, counter, chunks)

        def closure(env):
            def fn(x):
                counter.tick()
                return body((x, env))

            return fn

        return closure
    f = _compile(e.f, library, counter, chunks)
    x = _compile(e.x, library, counter, chunks)

    def app(env):
        fv = f(env)
        xv = x(env)
        counter.tick()
        return fv(xv)

    return app


class CompiledProgram:
    """A closed expression compiled against a library, reusable across inputs."""

    def __init__(self, expr: Expression, library, step_budget: int = DEFAULT_STEP_BUDGET):
        self.expr = expr
        self.step_budget = step_budget
        self._counter = _Counter(step_budget)
        self._code = _compile(expr, library, self._counter, {})

    def __call__(self, *inputs):
        self._counter.steps = 0
        try:
            value = self._code(None)
            for x in inputs:
                self._counter.tick()
                value = value(x)
        except RecursionError:
            raise StepBudgetExceeded("recursion limit reached") from None
        return value


def evaluate(p, inputs: Sequence, library, step_budget: int = DEFAULT_STEP_BUDGET):
    """Apply program ``p`` (TypedProgram or Expression) to ``inputs``.

    Raises :class:`DomainError` or :class:`StepBudgetExceeded`.
    """
    expr = p.expr if isinstance(p, TypedProgram) else p
    return CompiledProgram(expr, library, step_budget)(*inputs)
