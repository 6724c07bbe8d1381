"""Generative and recognition models over well-typed programs.

Both models assign a score to every library component plus one
pseudo-component for "some bound variable".  At each point of a program the
scores are renormalized over the components whose return type unifies with
the requested type; variable mass is split evenly among valid variables.

The generative model is a unigram over components (weights come from the
library's ``theta``).  The recognition model is a bigram: its scores depend
on the parent component, the argument index and a task feature bucket.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .library import Library
from .program import (Expression, Index, Lambda, Prim, TypedProgram, apply, application_parse, render)
from .tasks import Task
from .types import (TypeContext, UnificationError, arguments, canonical, is_arrow, is_ground, render_type,
                    returns)

log = logging.getLogger(__name__)

ROOT = "<root>"
VARIABLE = "<var>"
NEG_INF = float("-inf")


class EmptySupportError(ValueError):
    """No component can fill the requested hole."""


class NotGenerable(ValueError):
    """The program cannot be produced by the models (typing or shape mismatch)."""


@dataclass(frozen=True)
class BigramContext:
    parent: str
    arg_index: int
    requested_type: Any

    def sort_key(self):
        return (self.parent, self.arg_index, render_type(self.requested_type))


class Choice(NamedTuple):
    component: int          # library index, or len(library) for a variable
    head: Expression        # Prim or Index
    arg_types: tuple
    context: Optional[TypeContext]   # None: caller's context is unchanged


# -- typed choice sets ------------------------------------------------------

class Typer:
    """Computes which components may fill a hole; cached per library."""

    def __init__(self, library: Library):
        self.library = library
        self.n = len(library)
        self._prims = []
        for i, p in enumerate(library.primitives):
            mono = is_ground(p.type)
            self._prims.append((i, Prim(p.name), p.type, returns(p.type), tuple(arguments(p.type)), mono))
        self._cache: Dict[tuple, list] = {}

    def choices(self, request, env: Sequence, tctx: TypeContext) -> Tuple[list, Optional[tuple]]:
        """Valid choices for a hole of type ``request`` with variables ``env``.

        Returns ``(choices, key)``; ``key`` is non-None when the result only
        depends on ``(request, env)`` and may be cached by callers.
        """
        request = tctx.apply(request)
        env = tuple(tctx.apply(t) for t in env) if tctx.subst else tuple(env)
        ground = request.ground and all(t.ground for t in env)
        key = (request, env) if ground else None
        if key is not None:
            hit = self._cache.get(key)
            if hit is not None:
                return hit, key
        out = []
        pure = ground
        for i, head, tp, ret, args, mono in self._prims:
            if mono and ground:
                if ret == request:
                    out.append(Choice(i, head, args, None))
                continue
            inst, c = tctx.instantiate(tp)
            try:
                c = c.unify(returns(inst), request)
            except UnificationError:
                continue
            arg_types = tuple(c.apply(a) for a in arguments(inst))
            if ground and all(is_ground(a) for a in arg_types):
                out.append(Choice(i, head, arg_types, None))
            else:
                pure = False
                out.append(Choice(i, head, arg_types, c))
        for j, vt in enumerate(env):
            if ground:
                if returns(vt) == request:
                    out.append(Choice(self.n, Index(j), tuple(arguments(vt)), None))
                continue
            try:
                c = tctx.unify(returns(vt), request)
            except UnificationError:
                continue
            out.append(Choice(self.n, Index(j), tuple(c.apply(a) for a in arguments(vt)), c))
        if key is not None and pure:
            self._cache[key] = out
            return out, key
        return out, None


def typer_for(library: Library) -> Typer:
    typer = getattr(library, "_typer", None)
    if typer is None:
        typer = Typer(library)
        library._typer = typer
    return typer


def _logsumexp(xs: Sequence[float]) -> float:
    m = max(xs)
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(sum(math.exp(x - m) for x in xs))


class _ModelBase:
    library: Library
    unigram: bool

    def __init__(self, library: Library):
        self.library = library
        self.typer = typer_for(library)
        self._mass_cache: Dict[tuple, list] = {}

    def bucket(self, task: Optional[Task]):
        return None

    def logits(self, bucket, parent: str, arg: int) -> Sequence[float]:
        raise NotImplementedError

    def log_masses(self, bucket, parent: str, arg: int, choices: list, key=None) -> List[float]:
        """Log-probabilities of ``choices`` after renormalization."""
        if key is not None:
            ck = (bucket, parent, arg) + key if not self.unigram else key
            hit = self._mass_cache.get(ck)
            if hit is not None:
                return hit
        if not choices:
            return []
        scores = self.logits(bucket, parent, arg)
        n = len(self.library)
        n_vars = 0
        terms = []
        for c in choices:
            if c.component == n:
                n_vars += 1
            else:
                terms.append(scores[c.component])
        if n_vars:
            terms.append(scores[n])
        z = _logsumexp(terms)
        var_term = scores[n] - math.log(n_vars) - z if n_vars else 0.0
        out = [var_term if c.component == n else scores[c.component] - z for c in choices]
        if key is not None:
            self._mass_cache[ck] = out
        return out

    def distribution(self, bucket, parent, arg, request, env, tctx):
        choices, key = self.typer.choices(request, env, tctx)
        return choices, self.log_masses(bucket, parent, arg, choices, key)


class GenerativeModel(_ModelBase):
    """Unigram prior whose weights are the library's ``theta``."""

    unigram = True

    def __init__(self, library: Library):
        super().__init__(library)
        self._scores = tuple(library.theta[n] for n in library.names) + (library.variable_weight,)

    def logits(self, bucket, parent, arg):
        return self._scores


class RecognitionModel(_ModelBase):
    """Task-conditioned log-linear bigram table.

    The score of component ``c`` in context ``(bucket, parent, arg)`` is
    ``shared[parent, arg][c] + specific[bucket, parent, arg][c]``; missing rows
    are zero.  With ``contextual=False`` parent and argument are ignored and
    the model is a (bucketed) unigram.
    """

    def __init__(self, library: Library, featurizer: Optional[Callable[[Task], Any]] = None,
                 shared: Optional[Dict[tuple, np.ndarray]] = None,
                 specific: Optional[Dict[tuple, np.ndarray]] = None, contextual: bool = True):
        super().__init__(library)
        self.featurizer = featurizer
        self.contextual = contextual
        self.shared = dict(shared or {})
        self.specific = dict(specific or {})
        self.unigram = not contextual
        self.objective_trace: List[float] = []
        self._logit_cache: Dict[tuple, tuple] = {}
        self._zeros = (0.0,) * (len(library) + 1)

    def bucket(self, task):
        if task is None or self.featurizer is None:
            return None
        return self.featurizer(task)

    def row_key(self, parent, arg):
        return (parent, arg) if self.contextual else ("*", 0)

    def logits(self, bucket, parent, arg):
        rk = self.row_key(parent, arg)
        ck = (bucket,) + rk
        hit = self._logit_cache.get(ck)
        if hit is not None:
            return hit
        s = self.shared.get(rk)
        b = self.specific.get((bucket,) + rk) if bucket is not None else None
        if s is None and b is None:
            out = self._zeros
        elif b is None:
            out = tuple(float(x) for x in s)
        elif s is None:
            out = tuple(float(x) for x in b)
        else:
            out = tuple(float(x) for x in s + b)
        self._logit_cache[ck] = out
        return out

    def log_masses(self, bucket, parent, arg, choices, key=None):
        if key is not None:
            key = key + (bucket,) if self.unigram else key
        return super().log_masses(bucket, parent, arg, choices, key)


def uniform_recognition_model(library: Library, featurizer=None, contextual: bool = True) -> RecognitionModel:
    return RecognitionModel(library, featurizer, contextual=contextual)


# -- distributions ----------------------------------------------------------

def component_label(c: Choice, library: Library) -> str:
    return render(c.head)


def component_distribution(model, task: Optional[Task], ctx: BigramContext, env: Sequence = ()) -> Dict[str, float]:
    """Normalized distribution over valid components for a hole.

    Keys are component names (``$i`` for variables).  Raises
    :class:`EmptySupportError` if nothing can fill the hole.
    """
    choices, masses = model.distribution(model.bucket(task), ctx.parent, ctx.arg_index, ctx.requested_type,
                                         env, TypeContext(next_var=_fresh_base(ctx.requested_type, env)))
    if not choices:
        raise EmptySupportError(f"no component has type {render_type(ctx.requested_type)}")
    return {render(c.head): math.exp(m) for c, m in zip(choices, masses)}


def _fresh_base(*types) -> int:
    from .types import free_vars
    vs = set()
    for t in types:
        if isinstance(t, (tuple, list)):
            for u in t:
                vs |= free_vars(u)
        else:
            vs |= free_vars(t)
    return max(vs) + 1 if vs else 0


# -- walking programs -------------------------------------------------------

@dataclass
class Step:
    """One component choice inside a program."""

    parent: str
    arg_index: int
    request: Any
    env: tuple
    choices: list
    chosen: int
    key: Optional[tuple]

    @property
    def choice(self) -> Choice:
        return self.choices[self.chosen]

    @property
    def context(self) -> BigramContext:
        return BigramContext(self.parent, self.arg_index, canonical(self.request))


def walk_program(library: Library, request, expr: Expression, env: Sequence = (), n_wrappers: int = 0,
                 parent: str = ROOT, arg_index: int = 0) -> List[Step]:
    """Every component choice made when generating ``expr`` at ``request``.

    The last ``n_wrappers`` entries of ``env`` are lambda-introduced wrapper
    variables: their occurrences are not choices and they are not offered as
    candidates.  Raises :class:`NotGenerable` when ``expr`` is outside the
    support (ill-typed, not eta-long, or wrong number of arguments).
    """
    typer = typer_for(library)
    out: List[Step] = []
    tctx = TypeContext(next_var=_fresh_base(request, env))
    _walk(typer, request, expr, tuple(env), tctx, parent, arg_index, n_wrappers, out)
    return out


def _walk(typer, request, expr, env, tctx, parent, arg, n_wrappers, out):
    request = tctx.apply(request)
    if is_arrow(request):
        if isinstance(expr, Lambda):
            return _walk(typer, request.args[1], expr.body, (request.args[0],) + env, tctx, parent, arg,
                         n_wrappers, out)
        if isinstance(expr, Index) and n_wrappers and expr.i >= len(env) - n_wrappers:
            return _unify_or_fail(tctx, env[expr.i], request)
        raise NotGenerable(f"expected a lambda at arrow type {render_type(request)}, got {render(expr)}")
    head, args = application_parse(expr)
    if isinstance(head, Index) and n_wrappers and head.i >= len(env) - n_wrappers:
        if args:
            raise NotGenerable("wrapper variable applied to arguments")
        return _unify_or_fail(tctx, env[head.i], request)
    visible = env[:len(env) - n_wrappers] if n_wrappers else env
    choices, key = typer.choices(request, visible, tctx)
    for k, c in enumerate(choices):
        if c.head == head:
            break
    else:
        raise NotGenerable(f"{render(head)} cannot produce {render_type(request)}")
    if len(args) != len(c.arg_types):
        raise NotGenerable(f"{render(head)} needs {len(c.arg_types)} arguments, got {len(args)}")
    out.append(Step(parent, arg, request, visible, choices, k, key))
    if c.context is not None:
        tctx = c.context
    label = head.name if isinstance(head, Prim) else VARIABLE
    for j, (at, a) in enumerate(zip(c.arg_types, args)):
        tctx = _walk(typer, at, a, env, tctx, label, j, n_wrappers, out)
    return tctx


def _unify_or_fail(tctx, a, b):
    try:
        return tctx.unify(a, b)
    except UnificationError as err:
        raise NotGenerable(str(err)) from None


def steps_logprob(model, bucket, steps: Iterable[Step]) -> float:
    total = 0.0
    for s in steps:
        total += model.log_masses(bucket, s.parent, s.arg_index, s.choices, s.key)[s.chosen]
    return total


def program_logprob(model, task: Optional[Task], program, request=None) -> float:
    """Sum of component log-masses; ``-inf`` if the program is outside the support."""
    if isinstance(program, TypedProgram):
        expr, request = program.expr, (request or program.type)
    else:
        expr = program
        if request is None:
            if task is None:
                raise ValueError("need a request type for a bare expression")
            request = task.request
    try:
        steps = walk_program(model.library, request, expr)
    except NotGenerable:
        return NEG_INF
    return steps_logprob(model, model.bucket(task), steps)


def is_generable(library: Library, request, expr: Expression) -> bool:
    try:
        walk_program(library, request, expr)
    except NotGenerable:
        return False
    return True


# -- context priors and function-as-part probabilities ----------------------

@dataclass(frozen=True)
class ContextPrior:
    probs: Dict[BigramContext, float]
    provenance: str = "pooled"

    def __post_init__(self):
        total = sum(self.probs.values())
        if self.probs and abs(total - 1.0) > 1e-9:
            raise ValueError(f"context prior sums to {total}")

    def items(self):
        return sorted(self.probs.items(), key=lambda kv: kv[0].sort_key())


def _beam_programs(beams) -> Iterable[TypedProgram]:
    if isinstance(beams, dict):
        beams = beams.values()
    for b in beams:
        if hasattr(b, "entries"):
            for e in b.entries:
                yield e.program
        else:
            yield b


def uniform_context_prior(lib: Library) -> ContextPrior:
    slots = []
    for p in lib.primitives:
        for i, at in enumerate(arguments(p.type)):
            slots.append(BigramContext(p.name, i, canonical(returns(at))))
    slots = sorted(set(slots), key=BigramContext.sort_key)
    if not slots:
        return ContextPrior({}, "uniform-fallback")
    return ContextPrior({c: 1.0 / len(slots) for c in slots}, "uniform-fallback")


def estimate_context_prior(beams, lib: Library, task_id: Optional[str] = None) -> ContextPrior:
    """Frequencies of (parent, argument, requested type) over beam programs.

    Pooled over all tasks unless ``task_id`` picks a single task's beam.
    """
    counts: Counter = Counter()
    if task_id is not None:
        beams = [beams[task_id]] if task_id in beams else []
    for prog in _beam_programs(beams):
        try:
            steps = walk_program(lib, prog.type, prog.expr)
        except NotGenerable:
            continue
        counts.update(s.context for s in steps)
    total = sum(counts.values())
    if total == 0:
        return uniform_context_prior(lib)
    return ContextPrior({c: n / total for c, n in sorted(counts.items(), key=lambda kv: kv[0].sort_key())},
                        "pooled" if task_id is None else "per-task")


def fragment_steps(library: Library, closed: TypedProgram, arity: int) -> List[Step]:
    """Choices inside a reverse-eta-closed fragment, wrapper variables ignored."""
    tp = closed.type
    wrappers = []
    for _ in range(arity):
        wrappers.append(tp.args[0])
        tp = tp.args[1]
    body = closed.expr
    for _ in range(arity):
        body = body.body
    return walk_program(library, tp, body, tuple(reversed(wrappers)), n_wrappers=arity)


def function_logprob_as_part(model, task: Optional[Task], f, prior: Optional[ContextPrior] = None,
                             steps: Optional[List[Step]] = None) -> float:
    """Log-probability of generating ``f`` somewhere inside a program.

    ``f`` is a :class:`~dreamchunk.decompiler.Candidate` (or a pair
    ``(closed, arity)``).  The root component is averaged over the context
    prior restricted to contexts where the root is type-valid; the remaining
    components are scored in their contexts inside ``f``.  Unigram models
    need no averaging.
    """
    if steps is None:
        closed, arity = (f.closed, f.arity) if hasattr(f, "closed") else f
        try:
            steps = fragment_steps(model.library, closed, arity)
        except NotGenerable:
            return NEG_INF
    bucket = model.bucket(task)
    if model.unigram:
        # same summation order as program_logprob, so a whole program scores identically
        return steps_logprob(model, bucket, steps)
    rest = steps_logprob(model, bucket, steps[1:])
    root = steps[0]
    if prior is None or not prior.probs:
        prior = uniform_context_prior(model.library)
    head = root.choice.head
    terms = []
    weights = []
    for ctx, p in prior.items():
        choices, key = model.typer.choices(ctx.requested_type, (), TypeContext(next_var=_fresh_base(ctx.requested_type)))
        for k, c in enumerate(choices):
            if c.head == head:
                lm = model.log_masses(bucket, ctx.parent, ctx.arg_index, choices, key)[k]
                terms.append(math.log(p) + lm)
                weights.append(p)
                break
    if not terms:
        return NEG_INF
    return _logsumexp(terms) - math.log(sum(weights)) + rest


# -- fitting ----------------------------------------------------------------

def _observations(pairs, lib, model_shape, weight_total):
    """Flatten (program, task) pairs into per-choice training rows."""
    rows = []
    if not pairs:
        return rows
    w = weight_total / len(pairs)
    for prog, task in pairs:
        expr = prog.expr if isinstance(prog, TypedProgram) else prog
        request = task.request if task is not None else prog.type
        try:
            steps = walk_program(lib, request, expr)
        except NotGenerable:
            log.warning("skipping untypable training program %s", render(expr))
            continue
        bucket = model_shape.bucket(task)
        for s in steps:
            support = sorted({c.component for c in s.choices})
            rows.append((bucket, model_shape.row_key(s.parent, s.arg_index), s.choice.component, support, w))
    return rows


def fit_recognition(replays: Sequence[Tuple[Any, Task]], fantasies: Sequence[Tuple[Any, Task]], lib: Library,
                    featurizer: Optional[Callable[[Task], Any]] = None, *, contextual: bool = True,
                    replay_weight: float = 0.5, l2_shared: float = 1e-4, l2_specific: float = 1e-3,
                    max_iter: int = 300, tol: float = 1e-6) -> RecognitionModel:
    """Maximum (penalized) likelihood recognition model, trained from scratch.

    Replays and fantasies each get a fixed share of the objective regardless
    of how many pairs they hold.  Optimized with L-BFGS; the objective after
    every accepted iterate is kept in ``objective_trace``.
    """
    shape = RecognitionModel(lib, featurizer, contextual=contextual)
    if replays and fantasies:
        shares = (replay_weight, 1.0 - replay_weight)
    else:
        shares = (1.0, 1.0)
    rows = _observations(list(replays), lib, shape, shares[0]) + _observations(list(fantasies), lib, shape, shares[1])
    if not rows:
        return shape
    n_comp = len(lib) + 1
    shared_keys = sorted({r[1] for r in rows})
    spec_keys = sorted({(r[0],) + r[1] for r in rows if r[0] is not None}, key=repr)
    s_index = {k: i for i, k in enumerate(shared_keys)}
    b_index = {k: i for i, k in enumerate(spec_keys)}
    n_s, n_b = len(shared_keys), len(spec_keys)
    N = len(rows)
    sr = np.array([s_index[r[1]] for r in rows])
    br = np.array([b_index[(r[0],) + r[1]] if r[0] is not None else n_b for r in rows])
    chosen = np.array([r[2] for r in rows])
    mask = np.zeros((N, n_comp), dtype=bool)
    for i, r in enumerate(rows):
        mask[i, r[3]] = True
    weights = np.array([r[4] for r in rows])
    onehot = np.zeros((N, n_comp))
    onehot[np.arange(N), chosen] = 1.0
    aranged = np.arange(N)

    def unpack(theta):
        S = theta[:n_s * n_comp].reshape(n_s, n_comp)
        B = np.zeros((n_b + 1, n_comp))
        B[:n_b] = theta[n_s * n_comp:].reshape(n_b, n_comp)
        return S, B

    def objective(theta):
        S, B = unpack(theta)
        L = S[sr] + B[br]
        Lm = np.where(mask, L, -np.inf)
        m = Lm.max(axis=1, keepdims=True)
        ex = np.where(mask, np.exp(Lm - m), 0.0)
        z = ex.sum(axis=1, keepdims=True)
        lse = (m + np.log(z))[:, 0]
        ll = L[aranged, chosen] - lse
        value = float(weights @ ll) - 0.5 * l2_shared * float((S ** 2).sum()) - 0.5 * l2_specific * float((B[:n_b] ** 2).sum())
        g = weights[:, None] * (onehot - ex / z)
        gS = np.zeros_like(S)
        np.add.at(gS, sr, g)
        gB = np.zeros_like(B)
        np.add.at(gB, br, g)
        gS -= l2_shared * S
        grad = np.concatenate([gS.ravel(), (gB[:n_b] - l2_specific * B[:n_b]).ravel()])
        return -value, -grad

    theta0 = np.zeros(n_s * n_comp + n_b * n_comp)
    trace = [-objective(theta0)[0]]

    def callback(intermediate_result):
        trace.append(-float(intermediate_result.fun))
        if abs(trace[-1] - trace[-2]) < tol:
            raise StopIteration

    res = minimize(objective, theta0, jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxiter": max_iter, "ftol": 0.0, "gtol": 1e-10})
    theta = res.x
    final = -objective(theta)[0]
    if final < trace[-1]:
        theta = theta0 if len(trace) == 1 else theta
    S, B = unpack(theta)
    model = RecognitionModel(lib, featurizer, {k: S[i].copy() for k, i in s_index.items()},
                             {k: B[i].copy() for k, i in b_index.items()}, contextual=contextual)
    model.objective_trace = trace
    return model


def training_objective(model: RecognitionModel, replays, fantasies, replay_weight: float = 0.5) -> float:
    """Weighted log-likelihood part of the fitting objective."""
    shares = (replay_weight, 1.0 - replay_weight) if replays and fantasies else (1.0, 1.0)
    total = 0.0
    for pairs, share in ((replays, shares[0]), (fantasies, shares[1])):
        for prog, task in pairs:
            total += share / len(pairs) * program_logprob(model, task, prog, request=task.request)
    return total


# -- sampling ---------------------------------------------------------------

class DeadEnd(Exception):
    pass


def sample_program(model, request, rng, task: Optional[Task] = None, max_depth: int = 8) -> Optional[TypedProgram]:
    """Top-down sample; ``None`` on a dead end (empty support or depth cap)."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    bucket = model.bucket(task)
    tctx = TypeContext(next_var=_fresh_base(request))
    try:
        expr, tctx = _sample(model, bucket, request, (), tctx, ROOT, 0, 1, max_depth, rng)
    except DeadEnd:
        return None
    return TypedProgram(expr, canonical(tctx.apply(request)))


def _sample(model, bucket, request, env, tctx, parent, arg, depth, max_depth, rng):
    request = tctx.apply(request)
    if is_arrow(request):
        body, tctx = _sample(model, bucket, request.args[1], (request.args[0],) + env, tctx, parent, arg, depth,
                             max_depth, rng)
        return Lambda(body), tctx
    if depth > max_depth:
        raise DeadEnd
    choices, masses = model.distribution(bucket, parent, arg, request, env, tctx)
    if not choices:
        raise DeadEnd
    u = rng.random()
    acc = 0.0
    k = len(choices) - 1
    for i, m in enumerate(masses):
        acc += math.exp(m)
        if u < acc:
            k = i
            break
    c = choices[k]
    if c.context is not None:
        tctx = c.context
    label = c.head.name if isinstance(c.head, Prim) else VARIABLE
    args = []
    for j, at in enumerate(c.arg_types):
        a, tctx = _sample(model, bucket, at, env, tctx, label, j, depth + 1, max_depth, rng)
        args.append(a)
    return apply(c.head, *args), tctx


# -- dumps ------------------------------------------------------------------

def dump_model(model: RecognitionModel) -> str:
    """CSV rows ``bucket,parent,arg,component,score`` in a fixed order.

    Rows with bucket ``*`` are the shared scores used for unseen buckets;
    other rows are the effective (shared + bucket) scores.
    """
    names = model.library.names + [VARIABLE]
    lines = ["bucket,parent,arg,component,score"]
    for rk in sorted(model.shared, key=repr):
        for c, v in zip(names, model.shared[rk]):
            lines.append(f"*,{rk[0]},{rk[1]},{c},{float(v):.17g}")
    for bk in sorted(model.specific, key=repr):
        rk = bk[1:]
        eff = model.specific[bk] + model.shared.get(rk, 0.0)
        for c, v in zip(names, eff):
            lines.append(f"{bk[0]},{rk[0]},{rk[1]},{c},{float(v):.17g}")
    return "\n".join(lines) + "\n"
