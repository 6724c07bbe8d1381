"""Simple polymorphic types: type variables, constructors and arrows.

Arrows are ordinary constructors named ``->`` with two arguments.  All
construction goes through the helpers below so that structural equality and
hashing are well defined.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

ARROW = "->"


class UnificationError(Exception):
    """Raised when two types cannot be made equal."""


@dataclass(frozen=True)
class TVar:
    id: int
    ground = False

    def __str__(self) -> str:
        return f"t{self.id}"


@dataclass(frozen=True, eq=False)
class TCon:
    name: str
    args: Tuple[Union["TVar", "TCon"], ...] = ()

    # hash and groundness are cached: types are compared and hashed constantly
    def __post_init__(self):
        object.__setattr__(self, "ground", all(a.ground for a in self.args))
        object.__setattr__(self, "_hash", hash((self.name, self.args)))

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, TCon) or self._hash != other._hash:
            return False
        return self.name == other.name and self.args == other.args

    @property
    def is_arrow(self) -> bool:
        return self.name == ARROW

    def __str__(self) -> str:
        return render_type(self)


Type = Union[TVar, TCon]


def tcon(name: str, *args) -> TCon:
    return TCon(name, tuple(args))


def arrow(*types) -> TCon:
    """Right-associated arrow: ``arrow(a, b, c)`` is ``a -> (b -> c)``."""
    if len(types) < 2:
        raise ValueError("arrow needs at least two types")
    result = types[-1]
    for t in reversed(types[:-1]):
        result = TCon(ARROW, (t, result))
    return result


INT = tcon("int")
BOOL = tcon("bool")


def tlist(t) -> TCon:
    return TCon("list", (t,))


def is_arrow(t) -> bool:
    return isinstance(t, TCon) and t.name == ARROW


def arguments(t) -> List:
    """Argument types of a curried function type, outermost first."""
    out = []
    while is_arrow(t):
        out.append(t.args[0])
        t = t.args[1]
    return out


def returns(t):
    while is_arrow(t):
        t = t.args[1]
    return t


def free_vars(t) -> set:
    out = set()
    stack = [t]
    while stack:
        t = stack.pop()
        if isinstance(t, TVar):
            out.add(t.id)
        else:
            stack.extend(t.args)
    return out


def is_ground(t) -> bool:
    return t.ground


def apply_subst(t, subst: Dict[int, object]):
    """Fully resolve ``t`` under a (possibly triangular) substitution."""
    if not subst:
        return t
    if isinstance(t, TVar):
        if t.id in subst:
            return apply_subst(subst[t.id], subst)
        return t
    if t.ground:
        return t
    return TCon(t.name, tuple(apply_subst(a, subst) for a in t.args))


def _occurs(v: int, t, subst) -> bool:
    t = _walk(t, subst)
    if isinstance(t, TVar):
        return t.id == v
    return any(_occurs(v, a, subst) for a in t.args)


def _walk(t, subst):
    while isinstance(t, TVar) and t.id in subst:
        t = subst[t.id]
    return t


def _unify_into(a, b, subst: dict) -> None:
    a = _walk(a, subst)
    b = _walk(b, subst)
    if isinstance(a, TVar):
        if isinstance(b, TVar) and a.id == b.id:
            return
        if _occurs(a.id, b, subst):
            raise UnificationError(f"occurs check: {a} in {apply_subst(b, subst)}")
        subst[a.id] = b
        return
    if isinstance(b, TVar):
        _unify_into(b, a, subst)
        return
    if a.name != b.name or len(a.args) != len(b.args):
        raise UnificationError(f"cannot unify {apply_subst(a, subst)} with {apply_subst(b, subst)}")
    for x, y in zip(a.args, b.args):
        _unify_into(x, y, subst)


def unify(a, b, subst: Optional[Dict[int, object]] = None) -> Dict[int, object]:
    """Most general unifier of ``a`` and ``b``, extending ``subst``.

    Returns an idempotent substitution (every binding is fully resolved).
    Raises :class:`UnificationError` on a constructor clash or occurs-check
    violation.  The input substitution is never mutated.
    """
    work = dict(subst) if subst else {}
    _unify_into(a, b, work)
    return {v: apply_subst(t, work) for v, t in work.items()}


def can_unify(a, b) -> bool:
    try:
        _unify_into(a, b, {})
    except UnificationError:
        return False
    return True


def canonical(t, mapping: Optional[dict] = None):
    """Rename type variables to 0, 1, ... in order of first appearance."""
    if t.ground:
        return t
    mapping = {} if mapping is None else mapping

    def go(t):
        if isinstance(t, TVar):
            if t.id not in mapping:
                mapping[t.id] = TVar(len(mapping))
            return mapping[t.id]
        if not t.args:
            return t
        return TCon(t.name, tuple(go(a) for a in t.args))

    return go(t)


def shift_vars(t, offset: int):
    if isinstance(t, TVar):
        return TVar(t.id + offset)
    if not t.args:
        return t
    return TCon(t.name, tuple(shift_vars(a, offset) for a in t.args))


class TypeContext:
    """Immutable substitution plus a fresh-variable counter.

    Used to thread type information through left-to-right program traversal.
    Operations return new contexts; the dictionary is copied only when a new
    binding is added.
    """

    __slots__ = ("subst", "next_var")

    def __init__(self, subst: Optional[dict] = None, next_var: int = 0):
        self.subst = subst if subst is not None else {}
        self.next_var = next_var

    def apply(self, t):
        return apply_subst(t, self.subst)

    def fresh(self) -> Tuple[TVar, "TypeContext"]:
        return TVar(self.next_var), TypeContext(self.subst, self.next_var + 1)

    def instantiate(self, t) -> Tuple[object, "TypeContext"]:
        """Rename all variables of a polytype apart from this context."""
        vs = free_vars(t)
        if not vs:
            return t, self
        offset = self.next_var - min(vs)
        return shift_vars(t, offset), TypeContext(self.subst, offset + max(vs) + 1)

    def unify(self, a, b) -> "TypeContext":
        a = _walk(a, self.subst)
        b = _walk(b, self.subst)
        if a == b and is_ground(a):
            return self
        work = dict(self.subst)
        _unify_into(a, b, work)
        if len(work) == len(self.subst):
            return self
        return TypeContext(work, self.next_var)

    def __repr__(self) -> str:
        return f"TypeContext({self.subst!r}, next_var={self.next_var})"


EMPTY_CONTEXT = TypeContext()


# -- rendering / parsing ----------------------------------------------------

def render_type(t) -> str:
    if isinstance(t, TVar):
        return f"t{t.id}"
    if t.name == ARROW:
        a, b = t.args
        left = render_type(a)
        if is_arrow(a):
            left = f"({left})"
        return f"{left} -> {render_type(b)}"
    if not t.args:
        return t.name
    return f"{t.name}({', '.join(render_type(a) for a in t.args)})"


_TOKEN = re.compile(r"\s*(->|\(|\)|,|[A-Za-z_][A-Za-z0-9_]*)")


def _tokens(text: str) -> Iterator[str]:
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ValueError(f"bad type syntax at {text[pos:]!r}")
        yield m.group(1)
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1


def parse_type(text: str):
    """Inverse of :func:`render_type`; ``t<k>`` denotes a type variable."""
    toks = list(_tokens(text))
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else None

    def take(expected=None):
        nonlocal pos
        tok = peek()
        if tok is None or (expected is not None and tok != expected):
            raise ValueError(f"expected {expected!r} in type {text!r}, got {tok!r}")
        pos += 1
        return tok

    def atom():
        tok = take()
        if tok == "(":
            t = arrow_type()
            take(")")
            return t
        if re.fullmatch(r"t\d+", tok):
            return TVar(int(tok[1:]))
        if peek() == "(":
            take("(")
            args = [arrow_type()]
            while peek() == ",":
                take(",")
                args.append(arrow_type())
            take(")")
            return TCon(tok, tuple(args))
        return TCon(tok)

    def arrow_type():
        left = atom()
        if peek() == "->":
            take("->")
            return TCon(ARROW, (left, arrow_type()))
        return left

    t = arrow_type()
    if pos != len(toks):
        raise ValueError(f"trailing tokens in type {text!r}")
    return t


def iter_subterms(t) -> Iterable:
    yield t
    if isinstance(t, TCon):
        for a in t.args:
            yield from iter_subterms(a)
