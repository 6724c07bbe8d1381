"""Component libraries: builtin primitives, learned chunks and their weights."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .evaluation import curry
from .program import (Apply, Expression, Index, Lambda, Prim, TypedProgram, beta_normal_form,
                      infer_type, is_closed, parse, render)
from .types import arguments, canonical, parse_type, render_type

LIBRARY_FORMAT = "dreamchunk-library"
LIBRARY_VERSION = 1


class ChunkError(ValueError):
    """Rejected chunk installation."""


class DuplicateChunkError(ChunkError):
    def __init__(self, message: str, existing: str):
        super().__init__(message)
        self.existing = existing


@dataclass(frozen=True, eq=False)
class Primitive:
    """A library component.

    Builtins carry ``impl``, an uncurried Python function taking ``arity``
    arguments, or the value itself for arity 0.  Chunks carry a closed
    ``definition`` instead and record the cycle they were learned in.
    """

    name: str
    type: Any
    impl: Optional[Callable] = None
    definition: Optional[Expression] = None
    origin: Optional[int] = None

    @property
    def arity(self) -> int:
        return len(arguments(self.type))

    @property
    def is_chunk(self) -> bool:
        return self.definition is not None

    def __repr__(self) -> str:
        kind = f"chunk from cycle {self.origin}" if self.is_chunk else "builtin"
        return f"<Primitive {self.name} : {render_type(self.type)} ({kind})>"


class Library:
    """Ordered, immutable set of primitives with log-weights ``theta``.

    ``variable_weight`` is the log-weight of the single pseudo-component that
    stands for "use some bound variable".
    """

    def __init__(self, primitives: Sequence[Primitive], theta: Optional[Mapping[str, float]] = None,
                 variable_weight: Optional[float] = None):
        self.primitives: Tuple[Primitive, ...] = tuple(primitives)
        self._by_name = {p.name: p for p in self.primitives}
        if len(self._by_name) != len(self.primitives):
            raise ValueError("primitive names must be unique")
        self._index = {p.name: i for i, p in enumerate(self.primitives)}
        uniform = -math.log(len(self.primitives) + 1)
        theta = dict(theta) if theta is not None else {}
        self.theta: Dict[str, float] = {p.name: float(theta.get(p.name, uniform)) for p in self.primitives}
        self.variable_weight = float(uniform if variable_weight is None else variable_weight)
        for name, w in self.theta.items():
            if not math.isfinite(w):
                raise ValueError(f"non-finite weight for {name}")
        self._values: Dict[str, Any] = {}
        self._inlined: Dict[str, Expression] = {}

    # -- lookup ------------------------------------------------------------
    def __len__(self) -> int:
        return len(self.primitives)

    def __iter__(self):
        return iter(self.primitives)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> Primitive:
        return self._by_name[name]

    def type_of(self, name: str):
        return self._by_name[name].type

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def names(self) -> List[str]:
        return [p.name for p in self.primitives]

    @property
    def chunks(self) -> List[Primitive]:
        return [p for p in self.primitives if p.is_chunk]

    def value_of(self, name: str):
        """Curried Python value of a builtin."""
        if name not in self._values:
            p = self._by_name[name]
            if p.is_chunk:
                raise ValueError(f"{name} is a chunk; evaluate it through its definition")
            self._values[name] = curry(p.impl, p.arity) if p.arity else p.impl
        return self._values[name]

    def with_theta(self, theta: Mapping[str, float], variable_weight: float) -> "Library":
        return Library(self.primitives, theta, variable_weight)

    def inlined_definition(self, name: str) -> Expression:
        """Chunk definition with nested chunks expanded, in normal form."""
        if name not in self._inlined:
            self._inlined[name] = inline(self, self._by_name[name].definition)
        return self._inlined[name]

    def __repr__(self) -> str:
        return f"<Library of {len(self)} primitives ({len(self.chunks)} chunks)>"


def _expand(lib: Library, e: Expression) -> Expression:
    if isinstance(e, Prim):
        p = lib.get(e.name)
        return lib.inlined_definition(e.name) if p.is_chunk else e
    if isinstance(e, Apply):
        return Apply(_expand(lib, e.f), _expand(lib, e.x))
    if isinstance(e, Lambda):
        return Lambda(_expand(lib, e.body))
    return e


def inline(lib: Library, e: Expression) -> Expression:
    """Replace every chunk by its definition and beta-normalize."""
    return beta_normal_form(_expand(lib, e))


def next_chunk_name(lib: Library) -> str:
    k = len(lib.chunks)
    while f"chunk{k}" in lib:
        k += 1
    return f"chunk{k}"


def install_chunk(lib: Library, f, origin: Optional[int] = None,
                  name: Optional[str] = None) -> Tuple[Library, str]:
    """Add closed program ``f`` as a new primitive.

    The new weight is the mean of the existing weights.  Raises
    :class:`ChunkError` when ``f`` is open or ill-typed and
    :class:`DuplicateChunkError` when it inlines to an existing chunk.
    """
    expr = f.expr if isinstance(f, TypedProgram) else f
    if not is_closed(expr):
        raise ChunkError(f"cannot chunk open fragment {render(expr)}")
    tp = canonical(infer_type(expr, lib))
    normal = inline(lib, expr)
    for p in lib.chunks:
        if lib.inlined_definition(p.name) == normal:
            raise DuplicateChunkError(f"{render(expr)} duplicates {p.name}", p.name)
    name = name or next_chunk_name(lib)
    if name in lib:
        raise ChunkError(f"name {name} already in library")
    weights = list(lib.theta.values())
    theta = dict(lib.theta)
    theta[name] = sum(weights) / len(weights) if weights else 0.0
    new = Library(lib.primitives + (Primitive(name, tp, definition=expr, origin=origin),), theta,
                  lib.variable_weight)
    return new, name


def component_counts(programs: Iterable[Expression]) -> Tuple[Dict[str, int], int]:
    """Occurrences of each primitive and of variables across programs."""
    counts: Dict[str, int] = {}
    variables = 0
    for e in programs:
        stack = [e]
        while stack:
            e = stack.pop()
            if isinstance(e, Prim):
                counts[e.name] = counts.get(e.name, 0) + 1
            elif isinstance(e, Index):
                variables += 1
            elif isinstance(e, Apply):
                stack.append(e.f)
                stack.append(e.x)
            else:
                stack.append(e.body)
    return counts, variables


def fit_theta(lib: Library, programs: Iterable) -> Library:
    """Laplace-smoothed (pseudo-count 1) usage frequencies as log-weights.

    ``programs`` may contain expressions, typed programs or beams.
    """
    exprs = []
    for item in programs:
        if hasattr(item, "entries"):
            exprs.extend(entry.program.expr for entry in item.entries)
        elif isinstance(item, TypedProgram):
            exprs.append(item.expr)
        else:
            exprs.append(item)
    counts, variables = component_counts(exprs)
    total = sum(counts.get(n, 0) for n in lib.names) + variables + len(lib) + 1
    theta = {n: math.log((counts.get(n, 0) + 1) / total) for n in lib.names}
    return lib.with_theta(theta, math.log((variables + 1) / total))


# -- serialization ----------------------------------------------------------

def library_to_dict(lib: Library) -> dict:
    return {
        "format": LIBRARY_FORMAT,
        "version": LIBRARY_VERSION,
        "variable_weight": lib.variable_weight,
        "primitives": [
            {
                "name": p.name,
                "type": render_type(p.type),
                "kind": "chunk" if p.is_chunk else "builtin",
                "definition": render(p.definition) if p.is_chunk else None,
                "origin": p.origin,
                "theta": lib.theta[p.name],
            }
            for p in lib.primitives
        ],
    }


def dump_library(lib: Library) -> str:
    return json.dumps(library_to_dict(lib), indent=1, sort_keys=True) + "\n"


def load_library(text: str, builtins: Mapping[str, Primitive]) -> Library:
    """Rebuild a library; builtin implementations are looked up by name."""
    doc = json.loads(text)
    if doc.get("format") != LIBRARY_FORMAT:
        raise ValueError("not a library file")
    if doc.get("version") != LIBRARY_VERSION:
        raise ValueError(f"unsupported library version {doc.get('version')}")
    prims = []
    theta = {}
    for rec in doc["primitives"]:
        tp = parse_type(rec["type"])
        if rec["kind"] == "builtin":
            if rec["name"] not in builtins:
                raise ValueError(f"unknown builtin {rec['name']}")
            prims.append(replace(builtins[rec["name"]], type=tp))
        else:
            prims.append(Primitive(rec["name"], tp, definition=parse(rec["definition"]), origin=rec["origin"]))
        theta[rec["name"]] = rec["theta"]
    return Library(prims, theta, doc["variable_weight"])
