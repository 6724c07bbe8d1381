"""De Bruijn-indexed lambda-calculus expressions.

Terms are immutable and compare structurally, so alpha-equivalence is plain
``==``.  The canonical text form is an S-expression::

    (map (lambda (+ $0 1)) $0)

where ``$i`` is the de Bruijn index ``i`` and ``lambda`` binds one variable.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from .types import (TypeContext, UnificationError, arrow, canonical)


class Expression:
    """Base class for the four term constructors."""

    __slots__ = ()

    def __str__(self) -> str:
        return render(self)


@dataclass(frozen=True, repr=False)
class Prim(Expression):
    name: str

    def __repr__(self) -> str:
        return f"Prim({self.name!r})"


@dataclass(frozen=True, repr=False)
class Index(Expression):
    i: int

    def __repr__(self) -> str:
        return f"Index({self.i})"


@dataclass(frozen=True, repr=False)
class Apply(Expression):
    f: Expression
    x: Expression

    def __repr__(self) -> str:
        return f"Apply({self.f!r}, {self.x!r})"


@dataclass(frozen=True, repr=False)
class Lambda(Expression):
    body: Expression

    def __repr__(self) -> str:
        return f"Lambda({self.body!r})"


class InferenceError(Exception):
    """Raised when an expression is ill-typed; ``subterm`` is the culprit."""

    def __init__(self, message: str, subterm: Optional[Expression] = None):
        super().__init__(message)
        self.subterm = subterm


@dataclass(frozen=True)
class TypedProgram:
    expr: Expression
    type: object

    def __str__(self) -> str:
        return render(self.expr)


# -- construction helpers ---------------------------------------------------

def apply(head: Expression, *args: Expression) -> Expression:
    for a in args:
        head = Apply(head, a)
    return head


def lambdas(body: Expression, n: int) -> Expression:
    for _ in range(n):
        body = Lambda(body)
    return body


def application_parse(e: Expression) -> Tuple[Expression, List[Expression]]:
    """Split ``((h a) b)`` into ``(h, [a, b])``."""
    args = []
    while isinstance(e, Apply):
        args.append(e.x)
        e = e.f
    args.reverse()
    return e, args


def strip_lambdas(e: Expression) -> Tuple[int, Expression]:
    n = 0
    while isinstance(e, Lambda):
        e = e.body
        n += 1
    return n, e


# -- structural queries -----------------------------------------------------

def size(e: Expression) -> int:
    """Number of primitive and index occurrences (lambda/apply are free)."""
    if isinstance(e, (Prim, Index)):
        return 1
    if isinstance(e, Apply):
        return size(e.f) + size(e.x)
    return size(e.body)


def free_indices(e: Expression, depth: int = 0) -> set:
    """Free de Bruijn indices of ``e``, expressed relative to its top."""
    if isinstance(e, Index):
        return {e.i - depth} if e.i >= depth else set()
    if isinstance(e, Apply):
        return free_indices(e.f, depth) | free_indices(e.x, depth)
    if isinstance(e, Lambda):
        return free_indices(e.body, depth + 1)
    return set()


def is_closed(e: Expression) -> bool:
    return not free_indices(e)


def primitives_used(e: Expression) -> List[str]:
    out = []
    stack = [e]
    while stack:
        e = stack.pop()
        if isinstance(e, Prim):
            out.append(e.name)
        elif isinstance(e, Apply):
            stack.append(e.x)
            stack.append(e.f)
        elif isinstance(e, Lambda):
            stack.append(e.body)
    return out


def count_lambdas(e: Expression) -> int:
    if isinstance(e, Lambda):
        return 1 + count_lambdas(e.body)
    if isinstance(e, Apply):
        return count_lambdas(e.f) + count_lambdas(e.x)
    return 0


# -- de Bruijn manipulation -------------------------------------------------

def shift(e: Expression, d: int, cutoff: int = 0) -> Expression:
    """Add ``d`` to every index >= ``cutoff``.  Raises on negative results."""
    if d == 0:
        return e
    if isinstance(e, Index):
        if e.i >= cutoff:
            if e.i + d < 0:
                raise ValueError(f"shift would make index {e.i} negative")
            return Index(e.i + d)
        return e
    if isinstance(e, Apply):
        return Apply(shift(e.f, d, cutoff), shift(e.x, d, cutoff))
    if isinstance(e, Lambda):
        return Lambda(shift(e.body, d, cutoff + 1))
    return e


def substitute(e: Expression, value: Expression, depth: int = 0) -> Expression:
    """Beta-substitute ``value`` for index ``depth`` in ``e`` (the body of a redex)."""
    if isinstance(e, Index):
        if e.i == depth:
            return shift(value, depth)
        if e.i > depth:
            return Index(e.i - 1)
        return e
    if isinstance(e, Apply):
        return Apply(substitute(e.f, value, depth), substitute(e.x, value, depth))
    if isinstance(e, Lambda):
        return Lambda(substitute(e.body, value, depth + 1))
    return e


class NormalizationLimit(Exception):
    pass


def beta_normal_form(e: Expression, max_steps: int = 100_000) -> Expression:
    """Normal-order reduction to beta-normal form."""
    steps = [0]

    def step() -> None:
        steps[0] += 1
        if steps[0] > max_steps:
            raise NormalizationLimit(f"no normal form within {max_steps} steps")

    def whnf(e: Expression) -> Expression:
        while True:
            head, args = application_parse(e)
            if isinstance(head, Lambda) and args:
                step()
                e = apply(substitute(head.body, args[0]), *args[1:])
            else:
                return e

    def norm(e: Expression) -> Expression:
        e = whnf(e)
        if isinstance(e, Lambda):
            return Lambda(norm(e.body))
        head, args = application_parse(e)
        if not args:
            return head
        return apply(norm(head), *[norm(a) for a in args])

    return norm(e)


# -- rendering and parsing --------------------------------------------------

def render(e: Expression) -> str:
    if isinstance(e, Prim):
        return e.name
    if isinstance(e, Index):
        return f"${e.i}"
    if isinstance(e, Lambda):
        return f"(lambda {render(e.body)})"
    head, args = application_parse(e)
    return "(" + " ".join([render(head)] + [render(a) for a in args]) + ")"


_SEXP_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")


def _sexp_tokens(text: str) -> List[str]:
    toks = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _SEXP_TOKEN.match(text, pos)
        if not m:
            raise ValueError(f"bad expression syntax at {text[pos:]!r}")
        toks.append(m.group(1))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return toks


def parse(text: str) -> Expression:
    """Inverse of :func:`render`."""
    toks = _sexp_tokens(text)
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(toks):
            raise ValueError(f"unexpected end of {text!r}")
        tok = toks[pos]
        pos += 1
        return tok

    def atom(tok: str) -> Expression:
        if tok.startswith("$"):
            return Index(int(tok[1:]))
        if tok == "lambda":
            raise ValueError("lambda outside of parentheses")
        return Prim(tok)

    def expr() -> Expression:
        tok = take()
        if tok == ")":
            raise ValueError(f"unbalanced ')' in {text!r}")
        if tok != "(":
            return atom(tok)
        if pos < len(toks) and toks[pos] == "lambda":
            take()
            body = expr()
            if take() != ")":
                raise ValueError(f"lambda takes one body in {text!r}")
            return Lambda(body)
        items = []
        while pos < len(toks) and toks[pos] != ")":
            items.append(expr())
        take()
        if not items:
            raise ValueError("empty application")
        return apply(items[0], *items[1:])

    e = expr()
    if pos != len(toks):
        raise ValueError(f"trailing tokens in {text!r}")
    return e


# -- type inference ---------------------------------------------------------

def infer_type(e: Expression, types_of: Union[Callable[[str], object], Dict[str, object], "object"],
               env: Sequence = ()) -> object:
    """Principal type of ``e``.

    ``types_of`` maps a primitive name to its polytype; a :class:`Library`
    (anything with a ``type_of`` method) or a plain dict both work.  Each
    primitive occurrence is instantiated freshly.  ``env`` gives the types
    of free indices, innermost first.
    """
    if hasattr(types_of, "type_of"):
        lookup = types_of.type_of
    elif isinstance(types_of, dict):
        lookup = types_of.__getitem__
    else:
        lookup = types_of
    ctx = TypeContext()
    env_types = list(env)
    t, ctx = _infer(e, lookup, env_types, ctx)
    return canonical(ctx.apply(t))


def _infer(e, lookup, env, ctx):
    if isinstance(e, Prim):
        try:
            t = lookup(e.name)
        except KeyError:
            raise InferenceError(f"unknown primitive {e.name}", e) from None
        return ctx.instantiate(t)
    if isinstance(e, Index):
        if e.i >= len(env):
            raise InferenceError(f"unbound index ${e.i}", e)
        return env[e.i], ctx
    if isinstance(e, Lambda):
        v, ctx = ctx.fresh()
        body_t, ctx = _infer(e.body, lookup, [v] + env, ctx)
        return arrow(v, body_t), ctx
    f_t, ctx = _infer(e.f, lookup, env, ctx)
    x_t, ctx = _infer(e.x, lookup, env, ctx)
    r, ctx = ctx.fresh()
    try:
        ctx = ctx.unify(f_t, arrow(x_t, r))
    except UnificationError as err:
        raise InferenceError(f"ill-typed application {render(e)}: {err}", e) from None
    return r, ctx
