"""Chunk candidates, refactoring and the three chunk-scoring criteria.

A candidate is a connected piece of some beam program.  Argument positions
that were cut off become wrapper variables, so the candidate closes into an
ordinary program ``lambda ... lambda body``; ``size`` counts only the
components that were kept.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from .library import ChunkError, Library, inline, install_chunk
from .models import (NEG_INF, ContextPrior, NotGenerable, fragment_steps, function_logprob_as_part,
                     is_generable, program_logprob)
from .program import (Apply, Expression, Index, InferenceError, Lambda, Prim, TypedProgram, apply,
                      application_parse, free_indices, infer_type, lambdas, render, shift, size)
from .search import Beam, check_solution
from .tasks import Task

log = logging.getLogger(__name__)

CRITERIA = ("ddc-pc", "ddc-avg", "compression")
DEFAULT_FRAGMENT_CAP = 8
_HOLE = Prim("\0hole")


class DegenerateInputError(ValueError):
    """Caching benefit asked of a probability-one program."""


@dataclass(frozen=True)
class Candidate:
    fragment: Expression           # body under the wrapper lambdas
    closed: TypedProgram
    arity: int
    size: int
    occurrences: FrozenSet[Tuple[str, int]] = field(default=frozenset(), compare=False)

    @property
    def rendering(self) -> str:
        return render(self.closed.expr)

    def __str__(self) -> str:
        return self.rendering


@dataclass
class ScoredCandidate:
    candidate: Candidate
    criterion: str
    score: float
    diagnostics: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    never_generated: bool = False
    uses: int = 0


# -- extraction -------------------------------------------------------------

def _options(e: Expression, d: int, cap: int) -> List[Tuple[Expression, int]]:
    """Fragments rooted at component node ``e`` (internal binder depth ``d``).

    Each option is ``(template, size)``; cut arguments appear as ``_HOLE``.
    """
    head, args = application_parse(e)
    if isinstance(head, Index) and head.i >= d:
        return []
    if isinstance(head, Lambda):
        return []
    partial = [(head, 1)]
    for a in args:
        choices = []
        if all(i >= d for i in free_indices(a)):
            choices.append((_HOLE, 0))
        n_lam = 0
        body = a
        while isinstance(body, Lambda):
            body = body.body
            n_lam += 1
        for tpl, s in _options(body, d + n_lam, cap):
            choices.append((lambdas(tpl, n_lam), s))
        if not choices:
            return []
        nxt = []
        for tpl, s in partial:
            for ctpl, cs in choices:
                if s + cs <= cap:
                    nxt.append((Apply(tpl, ctpl), s + cs))
        partial = nxt
        if not partial:
            return []
    return partial


def _count_holes(e: Expression) -> int:
    if e == _HOLE:
        return 1
    if isinstance(e, Apply):
        return _count_holes(e.f) + _count_holes(e.x)
    if isinstance(e, Lambda):
        return _count_holes(e.body)
    return 0


def _number_holes(tpl: Expression, arity: int) -> Expression:
    """Replace holes left to right by wrapper-variable indices."""
    k = 0

    def go(e, d):
        nonlocal k
        if e == _HOLE:
            out = Index(d + arity - 1 - k)
            k += 1
            return out
        if isinstance(e, Apply):
            f = go(e.f, d)
            return Apply(f, go(e.x, d))
        if isinstance(e, Lambda):
            return Lambda(go(e.body, d + 1))
        return e

    return go(tpl, 0)


def close_fragment(template: Expression, lib: Library) -> Optional[Candidate]:
    arity = _count_holes(template)
    body = _number_holes(template, arity)
    closed = lambdas(body, arity)
    try:
        tp = infer_type(closed, lib)
    except InferenceError:
        return None
    return Candidate(body, TypedProgram(closed, tp), arity, size(body) - arity)


def _component_nodes(e: Expression):
    """Yield every component node (application spine root) of ``e``."""
    while isinstance(e, Lambda):
        e = e.body
    yield e
    _, args = application_parse(e)
    for a in args:
        yield from _component_nodes(a)


def extract_candidates(beams: Mapping[str, Beam], lib: Library, cap: int = DEFAULT_FRAGMENT_CAP,
                       min_size: int = 2) -> List[Candidate]:
    """All distinct connected fragments of beam programs with ``min_size <= size <= cap``.

    Fragments that inline to an existing chunk are left out.  The result is
    sorted by rendering.
    """
    found: Dict[Expression, Candidate] = {}
    occ: Dict[Expression, set] = {}
    for tid in sorted(beams):
        for k, entry in enumerate(beams[tid].entries):
            seen_here = set()
            for node in _component_nodes(entry.program.expr):
                for tpl, s in _options(node, 0, cap):
                    if s < min_size or tpl in seen_here:
                        continue
                    seen_here.add(tpl)
                    arity = _count_holes(tpl)
                    closed = lambdas(_number_holes(tpl, arity), arity)
                    if closed not in found:
                        cand = close_fragment(tpl, lib)
                        if cand is None:
                            continue
                        found[closed] = cand
                        occ[closed] = set()
                    occ[closed].add((tid, k))
    existing = {lib.inlined_definition(p.name) for p in lib.chunks}
    out = []
    for closed, cand in found.items():
        if existing and inline(lib, closed) in existing:
            continue
        out.append(Candidate(cand.fragment, cand.closed, cand.arity, cand.size, frozenset(occ[closed])))
    out.sort(key=lambda c: c.rendering)
    return out


# -- matching and refactoring -----------------------------------------------

def _match(pat: Expression, tgt: Expression, d: int, arity: int, binds: list) -> bool:
    if isinstance(pat, Index):
        if pat.i < d:
            return tgt == pat
        j = arity - 1 - (pat.i - d)
        if any(i < d for i in free_indices(tgt)):
            return False
        value = shift(tgt, -d)
        if binds[j] is None:
            binds[j] = value
            return True
        return binds[j] == value
    if isinstance(pat, Prim):
        return tgt == pat
    if isinstance(pat, Apply):
        return isinstance(tgt, Apply) and _match(pat.f, tgt.f, d, arity, binds) and _match(pat.x, tgt.x, d, arity, binds)
    return isinstance(tgt, Lambda) and _match(pat.body, tgt.body, d + 1, arity, binds)


def _rewrite(e: Expression, pattern: Expression, arity: int, name: str, counter: list) -> Expression:
    """Greedy top-down, leftmost replacement at component nodes."""
    if isinstance(e, Lambda):
        return Lambda(_rewrite(e.body, pattern, arity, name, counter))
    binds = [None] * arity
    if _match(pattern, e, 0, arity, binds):
        counter[0] += 1
        return apply(Prim(name), *[_rewrite(b, pattern, arity, name, counter) for b in binds])
    head, args = application_parse(e)
    if not args:
        return e
    return apply(head, *[_rewrite(a, pattern, arity, name, counter) for a in args])


def count_uses(p, f: Candidate) -> int:
    """Non-overlapping uses of ``f`` found by the refactoring rewrite."""
    expr = p.expr if isinstance(p, TypedProgram) else p
    counter = [0]
    _rewrite(expr, f.fragment, f.arity, "\0count", counter)
    return counter[0]


def refactor(p: TypedProgram, f: Candidate, lib: Library, name: str) -> TypedProgram:
    """Rewrite ``p`` to call chunk ``name`` (``f`` installed in ``lib``).

    The result is kept only if the models can still generate it and it
    inlines to the same normal form; otherwise ``p`` is returned unchanged.
    """
    counter = [0]
    new = _rewrite(p.expr, f.fragment, f.arity, name, counter)
    if counter[0] == 0:
        return p
    if not is_generable(lib, p.type, new) or inline(lib, new) != inline(lib, p.expr):
        log.info("refactoring of %s with %s rejected", render(p.expr), name)
        return p
    return TypedProgram(new, p.type)


def refactor_beams(beams: Mapping[str, Beam], f: Candidate, lib: Library, name: str) -> Dict[str, Beam]:
    out = {}
    for tid, beam in beams.items():
        nb = Beam(beam.task_id, beam.capacity, [], beam.expansions_to_first, beam.expansions)
        for e in beam.entries:
            nb.add(refactor(e.program, f, lib, name), e.logprob)
        out[tid] = nb
    return out


# -- caching benefit and criteria -------------------------------------------

def caching_benefit(q_f: float, q_p: float, n: int) -> float:
    """Share of the program's negative log-probability removed by caching ``f``.

    ``n * q_f / q_p`` clamped to [0, 1].
    """
    if n < 0:
        raise ValueError("use count must be non-negative")
    if n == 0:
        return 0.0
    if q_p == 0.0:
        raise DegenerateInputError("program has probability one")
    if q_p == NEG_INF:
        return 0.0
    value = n * q_f / q_p
    if value > 1.0:
        log.debug("caching benefit %.6g clamped to 1", value)
        return 1.0
    return max(value, 0.0)


def chunk_benefit(f: Candidate, p: TypedProgram, task: Task, model, prior: Optional[ContextPrior],
                  lib: Optional[Library] = None) -> float:
    lib = lib or model.library
    if not check_solution(p, task, lib):
        return 0.0
    n = count_uses(p, f)
    if n == 0:
        return 0.0
    return caching_benefit(function_logprob_as_part(model, task, f, prior), program_logprob(model, task, p), n)


class Scorer:
    """Scores many candidates against one snapshot of beams, model and library.

    Per-task and per-program quantities are cached so that each candidate
    only pays for the programs it actually occurs in.  ``prior`` is either a
    single pooled context prior or a mapping from task id to a prior.
    """

    def __init__(self, tasks: Sequence[Task], beams: Mapping[str, Beam], model, lib: Library,
                 prior=None):
        self.tasks = sorted(tasks, key=lambda t: t.id)
        self.beams = beams
        self.model = model
        self.lib = lib
        self.prior = prior
        # tasks sharing a bucket and a prior share q(f|x)
        self._groups: Dict[tuple, Task] = {}
        self._group_of: Dict[str, tuple] = {}
        for t in self.tasks:
            p = prior.get(t.id) if isinstance(prior, Mapping) else prior
            key = (model.bucket(t), id(p))
            self._groups.setdefault(key, t)
            self._group_of[t.id] = key
        self._q_p: Dict[Tuple[str, int], float] = {}
        self._solves: Dict[Tuple[str, int], bool] = {}
        by_id = {t.id: t for t in self.tasks}
        for tid in sorted(beams):
            task = by_id.get(tid)
            for k, e in enumerate(beams[tid].entries):
                self._q_p[(tid, k)] = program_logprob(model, task, e.program) if task else NEG_INF
                self._solves[(tid, k)] = bool(task) and check_solution(e.program, task, lib)
        self._n_prims = len(lib) + (1 if any(_has_lambda(e.program.expr) for b in beams.values()
                                             for e in b.entries) else 0)

    def _prior_for(self, task: Task):
        return self.prior.get(task.id) if isinstance(self.prior, Mapping) else self.prior

    def _uses(self, f: Candidate) -> Dict[Tuple[str, int], int]:
        out = {}
        where = f.occurrences or {(tid, k) for tid, b in self.beams.items() for k in range(len(b.entries))}
        for tid, k in sorted(where):
            if tid in self.beams and k < len(self.beams[tid].entries):
                n = count_uses(self.beams[tid].entries[k].program, f)
                if n:
                    out[(tid, k)] = n
        return out

    def _q_f(self, f: Candidate) -> Dict[str, float]:
        """log q(f|x) for every task."""
        try:
            steps = fragment_steps(self.lib, f.closed, f.arity)
        except NotGenerable:
            return {t.id: NEG_INF for t in self.tasks}
        per_group = {key: function_logprob_as_part(self.model, t, f, self._prior_for(t), steps=steps)
                     for key, t in self._groups.items()}
        return {t.id: per_group[self._group_of[t.id]] for t in self.tasks}

    def ddc_avg(self, f: Candidate) -> ScoredCandidate:
        qf = self._q_f(f)
        diag = {t.id: (math.exp(qf[t.id]), 0.0) for t in self.tasks}
        score = sum(v[0] for v in diag.values()) / len(diag) if diag else 0.0
        return ScoredCandidate(f, "ddc-avg", score, diag, uses=sum(self._uses(f).values()))

    def ddc_pc(self, f: Candidate) -> ScoredCandidate:
        qf = self._q_f(f)
        uses = self._uses(f)
        diag = {}
        num = den = 0.0
        for t in self.tasks:
            w = math.exp(qf[t.id])
            inner = 0.0
            for (tid, k), n in uses.items():
                if tid != t.id or not self._solves[(tid, k)]:
                    continue
                c = caching_benefit(qf[t.id], self._q_p[(tid, k)], n)
                inner += c * math.exp(self._q_p[(tid, k)])
            diag[t.id] = (w, inner)
            num += w * inner
            den += w
        if den == 0.0:
            return ScoredCandidate(f, "ddc-pc", 0.0, diag, never_generated=True, uses=sum(uses.values()))
        return ScoredCandidate(f, "ddc-pc", num / den, diag, uses=sum(uses.values()))

    def compression(self, f: Candidate) -> ScoredCandidate:
        uses = self._uses(f)
        D = self._n_prims
        total = 0.0
        diag = {}
        for (tid, k), n in sorted(uses.items()):
            s = size(self.beams[tid].entries[k].program.expr)
            contrib = n / (s * D ** s)
            total += contrib
            prev = diag.get(tid, (0.0, 0.0))
            diag[tid] = (0.0, prev[1] + contrib)
        return ScoredCandidate(f, "compression", f.size * total, diag, uses=sum(uses.values()))

    def score(self, f: Candidate, criterion: str) -> ScoredCandidate:
        if criterion == "ddc-pc":
            return self.ddc_pc(f)
        if criterion == "ddc-avg":
            return self.ddc_avg(f)
        if criterion == "compression":
            return self.compression(f)
        raise ValueError(f"unknown criterion {criterion!r}")


def _has_lambda(e: Expression) -> bool:
    if isinstance(e, Lambda):
        return True
    if isinstance(e, Apply):
        return _has_lambda(e.f) or _has_lambda(e.x)
    return False


def score_ddc_pc(f: Candidate, tasks: Sequence[Task], beams, model, prior=None) -> ScoredCandidate:
    return Scorer(tasks, beams, model, model.library, prior).ddc_pc(f)


def score_ddc_avg(f: Candidate, tasks: Sequence[Task], model, prior=None) -> ScoredCandidate:
    return Scorer(tasks, {}, model, model.library, prior).ddc_avg(f)


def score_compression(f: Candidate, beams, lib: Library) -> ScoredCandidate:
    D = len(lib) + (1 if any(_has_lambda(e.program.expr) for b in beams.values() for e in b.entries) else 0)
    total = 0.0
    diag = {}
    uses_total = 0
    for tid in sorted(beams):
        for e in beams[tid].entries:
            n = count_uses(e.program, f)
            if n:
                s = size(e.program.expr)
                total += n / (s * D ** s)
                uses_total += n
                diag[tid] = (0.0, diag.get(tid, (0.0, 0.0))[1] + n / (s * D ** s))
    return ScoredCandidate(f, "compression", f.size * total, diag, uses=uses_total)


def ranking_key(s: ScoredCandidate):
    return (-s.score, -s.candidate.size, s.candidate.rendering)


def select_top_k(scored: Iterable[ScoredCandidate], k: int, lib: Optional[Library] = None,
                 threshold: Optional[float] = None) -> List[ScoredCandidate]:
    """Best ``k`` candidates, skipping ones equivalent after inlining.

    Ties prefer larger candidates, then the rendering.  Candidates with score
    0 are never selected.  With ``threshold`` set, every candidate scoring at
    least that much is taken instead (``k`` still caps the count when > 0).
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    ordered = sorted(scored, key=ranking_key)
    taken = []
    seen = set()
    if lib is not None:
        seen = {lib.inlined_definition(p.name) for p in lib.chunks}
    limit = k if threshold is None or k > 0 else len(ordered)
    for s in ordered:
        if len(taken) >= limit:
            break
        if s.score <= 0.0 or (threshold is not None and s.score < threshold):
            continue
        normal = inline(lib, s.candidate.closed.expr) if lib is not None else s.candidate.closed.expr
        if normal in seen:
            continue
        seen.add(normal)
        taken.append(s)
    return taken


def install_selected(selected: Sequence[ScoredCandidate], lib: Library, beams: Mapping[str, Beam],
                     origin: Optional[int] = None
                     ) -> Tuple[Library, Dict[str, Beam], List[Tuple[str, Candidate, ScoredCandidate]]]:
    """Install chunks in order, refactoring beams and later chunk definitions.

    Returns the new library, the refactored beams and ``(name, candidate,
    scored)`` for every chunk actually installed.
    """
    installed: List[Tuple[str, Candidate, ScoredCandidate]] = []
    for s in selected:
        cand = s.candidate
        closed = cand.closed
        for name, prev, _ in installed:
            closed = refactor(closed, prev, lib, name)
        if closed is not cand.closed:
            body = closed.expr
            for _ in range(cand.arity):
                body = body.body
            cand = Candidate(body, closed, cand.arity, cand.size, cand.occurrences)
        try:
            new_lib, name = install_chunk(lib, closed, origin=origin)
        except ChunkError as err:
            log.info("skipping candidate %s: %s", cand.rendering, err)
            continue
        lib = new_lib
        beams = refactor_beams(beams, cand, lib, name)
        installed.append((name, cand, s))
    return lib, dict(beams), installed


def dump_chunk_report(rows: Sequence[Tuple[str, int, ScoredCandidate, bool]]) -> str:
    lines = ["criterion,rank,candidate,size,score,uses,installed"]
    for criterion, rank, s, inst in rows:
        lines.append(f"{criterion},{rank},\"{s.candidate.rendering}\",{s.candidate.size},{s.score:.17g},{s.uses},"
                     f"{int(inst)}")
    return "\n".join(lines) + "\n"
