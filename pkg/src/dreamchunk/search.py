"""Best-first enumeration, solution checking and per-task beams."""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence

from .evaluation import DEFAULT_STEP_BUDGET, CompiledProgram
from .library import Library
from .models import ROOT, VARIABLE, program_logprob
from .program import Apply, Lambda, Prim, TypedProgram, render
from .tasks import Task
from .types import TypeContext, canonical, is_arrow

TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SearchBudget:
    expansions: int
    seconds: Optional[float] = None

    def __post_init__(self):
        if self.expansions < 0:
            raise ValueError("expansion budget must be non-negative")


class Emitted(NamedTuple):
    program: TypedProgram
    logprob: float


@dataclass
class SearchStats:
    expansions: int = 0
    emitted: int = 0
    emitted_mass: float = 0.0
    pruned_mass: float = 0.0       # depth cap or holes nothing can fill
    frontier_mass: float = 0.0     # partial programs left when the search stopped
    exhausted: bool = False


class _Hole(NamedTuple):
    request: object
    env: tuple
    parent: str
    arg: int
    depth: int
    n_lambdas: int
    bound: float


def _open_hole(model, bucket, request, env, tctx, parent, arg, depth, bounds):
    """Strip arrows off ``request`` (they become lambdas) and bound the hole.

    Returns ``None`` when nothing can fill the hole.
    """
    request = tctx.apply(request)
    n = 0
    while request.is_arrow if request.ground else is_arrow(request):
        env = (request.args[0],) + env
        request = tctx.apply(request.args[1])
        n += 1
    bound = 0.0
    if request.ground and all(tctx.apply(t).ground for t in env):
        key = (parent, arg, request, env)
        bound = bounds.get(key)
        if bound is None:
            choices, masses = model.distribution(bucket, parent, arg, request, env, tctx)
            bound = max(masses) if choices else None
            bounds[key] = bound
        if bound is None:
            return None
    return _Hole(request, env, parent, arg, depth, n, bound)


def _build(choices):
    """Rebuild an expression from its preorder choice list."""
    seq = []
    while choices is not None:
        seq.append(choices[0])
        choices = choices[1]
    seq.reverse()
    pos = 0

    def build():
        nonlocal pos
        n_lambdas, head, n_args = seq[pos]
        pos += 1
        e = head
        for _ in range(n_args):
            e = Apply(e, build())
        for _ in range(n_lambdas):
            e = Lambda(e)
        return e

    return build()


def enumerate_programs(task: Task, model, lib: Library, budget: SearchBudget, max_depth: Optional[int] = None,
                       stats: Optional[SearchStats] = None, request=None) -> Iterator[Emitted]:
    """Complete programs of the requested type in non-increasing probability.

    Partial programs are expanded best-first by ``logp + sum of hole bounds``,
    where a hole's bound is its largest valid component mass (or 0 when its
    type is not yet known).  Programs whose log-probabilities agree to within
    ``TIE_TOLERANCE`` are emitted in order of their rendering.  ``budget``
    counts expansions of partial programs; once it is spent the complete
    programs already at the front of the queue are still emitted.
    """
    if stats is None:
        stats = SearchStats()
    if budget.expansions == 0:
        return
    if model.library is not lib:
        raise ValueError("model was built for a different library")
    request = request if request is not None else task.request
    bucket = model.bucket(task)
    tctx = TypeContext(next_var=1 + max([v for v in _vars(request)], default=-1))
    bounds: dict = {}
    root = _open_hole(model, bucket, request, (), tctx, ROOT, 0, 1, bounds)
    if root is None:
        return
    deadline = time.monotonic() + budget.seconds if budget.seconds else None
    seq = 0
    # partial programs keyed by -(logp + hole bounds); complete ones by -logp
    partial: list = [(-root.bound, seq, (0.0, root.bound, (root, None), None, tctx))]
    complete: list = []
    while partial or complete:
        if complete and (not partial or -partial[0][0] < -complete[0][0] - TIE_TOLERANCE):
            # nothing left in the frontier can tie with the best complete program
            top = -complete[0][0]
            group = []
            while complete and -complete[0][0] >= top - TIE_TOLERANCE:
                group.append(heapq.heappop(complete)[2])
            if len(group) > 1:
                group.sort(key=lambda g: render(g[0].expr))
            for prog, lp in group:
                stats.emitted += 1
                stats.emitted_mass += math.exp(lp)
                yield Emitted(prog, lp)
            continue
        if not partial:
            break
        if stats.expansions >= budget.expansions or (deadline is not None and time.monotonic() > deadline):
            break
        _, _, payload = heapq.heappop(partial)
        stats.expansions += 1
        logp, bound_sum, holes, choices, tctx = payload
        hole, rest = holes
        bound_sum -= hole.bound
        opts, masses = model.distribution(bucket, hole.parent, hole.arg, hole.request, hole.env, tctx)
        for c, m in zip(opts, masses):
            new_logp = logp + m
            ctx = c.context if c.context is not None else tctx
            label = c.head.name if isinstance(c.head, Prim) else VARIABLE
            new_choices = ((hole.n_lambdas, c.head, len(c.arg_types)), choices)
            kids = []
            dead = False
            for j, at in enumerate(c.arg_types):
                if max_depth is not None and hole.depth + 1 > max_depth:
                    dead = True
                    break
                h = _open_hole(model, bucket, at, hole.env, ctx, label, j, hole.depth + 1, bounds)
                if h is None:
                    dead = True
                    break
                kids.append(h)
            if dead:
                stats.pruned_mass += math.exp(new_logp)
                continue
            new_holes = rest
            new_bound = bound_sum
            for h in reversed(kids):
                new_holes = (h, new_holes)
                new_bound += h.bound
            seq += 1
            if new_holes is None:
                expr = _build(new_choices)
                prog = TypedProgram(expr, canonical(ctx.apply(request)))
                heapq.heappush(complete, (-new_logp, seq, (prog, new_logp)))
            else:
                heapq.heappush(partial, (-(new_logp + new_bound), seq, (new_logp, new_bound, new_holes, new_choices, ctx)))
    stats.exhausted = not partial
    stats.frontier_mass = sum(math.exp(item[2][0]) for item in partial)


def _vars(t):
    from .types import free_vars
    return free_vars(t)


# -- checking and beams -----------------------------------------------------

def check_solution(p, task: Task, lib: Library, step_budget: int = DEFAULT_STEP_BUDGET) -> bool:
    """True iff ``p`` reproduces every example; any runtime failure is False."""
    expr = p.expr if isinstance(p, TypedProgram) else p
    try:
        fn = CompiledProgram(expr, lib, step_budget)
        for inputs, expected in task.examples:
            if fn(*inputs) != expected:
                return False
    except Exception:  # noqa: BLE001 - any failure to evaluate means "does not solve"
        return False
    return True


@dataclass(frozen=True)
class BeamEntry:
    program: TypedProgram
    logprob: float


@dataclass
class Beam:
    """Best solutions found for one task, highest probability first."""

    task_id: str
    capacity: int = 5
    entries: List[BeamEntry] = field(default_factory=list)
    expansions_to_first: Optional[int] = field(default=None, compare=False)
    expansions: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return True

    def add(self, program: TypedProgram, logprob: float) -> bool:
        """Insert keeping order, capacity and uniqueness; True if kept."""
        if any(e.program.expr == program.expr for e in self.entries):
            return False
        self.entries.append(BeamEntry(program, logprob))
        self.entries.sort(key=lambda e: (-e.logprob, render(e.program.expr)))
        if len(self.entries) > self.capacity:
            dropped = self.entries.pop()
            return dropped.program.expr != program.expr
        return True

    def copy(self) -> "Beam":
        return Beam(self.task_id, self.capacity, list(self.entries), self.expansions_to_first, self.expansions)

    @property
    def best(self) -> Optional[BeamEntry]:
        return self.entries[0] if self.entries else None


def merge_beams(old: Beam, new: Beam) -> Beam:
    out = old.copy()
    for e in new.entries:
        out.add(e.program, e.logprob)
    return out


def rescore_beam(beam: Beam, model, task: Task) -> Beam:
    """Recompute scores under ``model``; entries outside its support are dropped."""
    out = Beam(beam.task_id, beam.capacity, [], beam.expansions_to_first, beam.expansions)
    for e in beam.entries:
        lp = program_logprob(model, task, e.program)
        if lp > float("-inf"):
            out.add(e.program, lp)
    return out


def solve_task(task: Task, model, lib: Library, budget: SearchBudget, capacity: int = 5,
               step_budget: int = DEFAULT_STEP_BUDGET, max_depth: Optional[int] = None) -> Beam:
    """Enumerate until ``capacity`` solutions are found or the budget is spent."""
    beam = Beam(task.id, capacity)
    stats = SearchStats()
    for prog, lp in enumerate_programs(task, model, lib, budget, max_depth=max_depth, stats=stats):
        if check_solution(prog, task, lib, step_budget):
            if beam.expansions_to_first is None:
                beam.expansions_to_first = stats.expansions
            beam.add(prog, lp)
            if len(beam) >= capacity:
                break
    beam.expansions = stats.expansions
    return beam


def wake(tasks: Sequence[Task], model, lib: Library, budget: SearchBudget, capacity: int = 5,
         step_budget: int = DEFAULT_STEP_BUDGET) -> Dict[str, Beam]:
    """Independent search for each task; unsolved tasks get empty beams."""
    return {t.id: solve_task(t, model, lib, budget, capacity, step_budget) for t in tasks}


def dump_beams(beams: Dict[str, Beam]) -> str:
    lines = ["task_id,rank,program,logprob"]
    for tid in sorted(beams):
        for rank, e in enumerate(beams[tid].entries):
            lines.append(f"{tid},{rank},\"{render(e.program.expr)}\",{e.logprob:.17g}")
    return "\n".join(lines) + "\n"
