"""One learning cycle: wake, abstraction sleep and dream sleep, plus test evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .decompiler import (CRITERIA, DEFAULT_FRAGMENT_CAP, ScoredCandidate, Scorer, extract_candidates, install_selected,
                         ranking_key, select_top_k)
from .domains.base import DomainSpec, run_examples
from .library import Library, fit_theta
from .models import (GenerativeModel, RecognitionModel, estimate_context_prior, fit_recognition, sample_program)
from .program import TypedProgram, primitives_used, render, size
from .search import Beam, SearchBudget, dump_beams, merge_beams, rescore_beam, solve_task, wake
from .tasks import Task

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CycleConfig:
    criterion: str = "ddc-pc"
    batch_size: int = 10
    wake_budget: int = 10_000
    test_budget: int = 50_000
    beam_cap: int = 5
    top_k: int = 2
    frag_cap: int = DEFAULT_FRAGMENT_CAP
    fantasies: int = 200
    fantasy_attempts: int = 10
    replay_weight: float = 0.5
    contextual: bool = True
    per_task_prior: bool = False
    fit_iterations: int = 300
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {', '.join(CRITERIA)}")
        for name in ("batch_size", "wake_budget", "test_budget", "beam_cap", "frag_cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("top_k", "fantasies"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class InstalledChunk:
    cycle: int
    name: str
    rendering: str          # definition in terms of the library at install time
    inlined: str            # definition over builtins only
    size: int
    score: float
    criterion: str


@dataclass
class CycleMetrics:
    seed: int
    cycle: int
    train_solved: int
    test_pct: float
    mean_expansions_all: float
    mean_expansions_solved: float
    chunks_installed: int
    mean_chunk_size: float

    FIELDS = ("seed", "cycle", "train_solved", "test_pct", "mean_expansions_all", "mean_expansions_solved",
              "chunks_installed", "mean_chunk_size")

    def row(self) -> str:
        def fmt(v):
            if isinstance(v, float):
                return "nan" if math.isnan(v) else f"{v:.6f}"
            return str(v)
        return ",".join(fmt(getattr(self, f)) for f in self.FIELDS)


@dataclass
class TestResult:
    task_id: str
    solved: bool
    expansions: int
    program: Optional[str]
    size: Optional[int]
    chunks_used: Tuple[str, ...] = ()


@dataclass
class CycleState:
    library: Library
    model: RecognitionModel
    cycle: int = 0
    beams: Dict[str, Beam] = field(default_factory=dict)
    observed: Set[str] = field(default_factory=set)
    solved_ever: Set[str] = field(default_factory=set)
    metrics: List[CycleMetrics] = field(default_factory=list)
    chunks: List[InstalledChunk] = field(default_factory=list)
    chunk_reports: List[Tuple[int, List[Tuple[str, int, ScoredCandidate, bool]]]] = field(default_factory=list)
    tests: List[List[TestResult]] = field(default_factory=list)
    snapshots: List[Tuple[int, str, str]] = field(default_factory=list)   # (cycle, phase, beam dump)
    fantasy_counts: List[int] = field(default_factory=list)


def initial_state(spec: DomainSpec, contextual: bool = True) -> CycleState:
    lib = spec.base_library()
    return CycleState(lib, RecognitionModel(lib, spec.featurizer, contextual=contextual))


def _rng(seed: int, cycle: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, cycle, stream])


# -- phases -----------------------------------------------------------------

def abstraction_sleep(state: CycleState, tasks: Sequence[Task], config: CycleConfig
                      ) -> Tuple[Library, Dict[str, Beam], List[InstalledChunk], list]:
    """Score candidates from the beams, install the best ``top_k`` and refactor."""
    lib = state.library
    beams = {tid: b for tid, b in state.beams.items() if b.entries}
    report: list = []
    if (config.top_k == 0 and config.threshold is None) or not beams:
        return lib, dict(state.beams), [], report
    candidates = extract_candidates(beams, lib, config.frag_cap)
    if not candidates:
        return lib, dict(state.beams), [], report
    observed = [t for t in tasks if t.id in state.observed]
    if config.per_task_prior:
        prior = {t.id: estimate_context_prior(beams, lib, task_id=t.id) for t in observed}
    else:
        prior = estimate_context_prior(beams, lib)
    scorer = Scorer(observed, beams, state.model, lib, prior)
    scored = [scorer.score(c, config.criterion) for c in candidates]
    selected = select_top_k(scored, config.top_k, lib, config.threshold)
    new_lib, new_beams, installed = install_selected(selected, lib, state.beams, origin=state.cycle)
    chosen = {id(s) for _, _, s in installed}
    ranked = sorted(scored, key=ranking_key)
    for rank, s in enumerate(ranked[:50]):
        report.append((config.criterion, rank, s, id(s) in chosen))
    chunks = []
    for name, cand, s in installed:
        chunks.append(InstalledChunk(state.cycle, name, render(new_lib.get(name).definition),
                                     render(new_lib.inlined_definition(name)), cand.size, s.score,
                                     config.criterion))
    return new_lib, new_beams, chunks, report


def make_fantasies(lib: Library, spec: DomainSpec, n: int, rng: np.random.Generator, attempts: int = 10
                   ) -> List[Tuple[TypedProgram, Task]]:
    """Programs sampled from the generative model, run on fresh inputs."""
    if n == 0:
        return []
    gen = GenerativeModel(lib)
    out = []
    tries = 0
    while len(out) < n and tries < n * attempts:
        tries += 1
        request = spec.requests[int(rng.integers(len(spec.requests)))]
        prog = sample_program(gen, request, rng)
        if prog is None:
            continue
        inputs = spec.sample_inputs(request, rng, spec.n_examples)
        outputs = run_examples(prog.expr, lib, inputs, spec.value_ok)
        if outputs is None:
            continue
        task = Task(f"fantasy-{len(out)}", request, tuple(zip(inputs, outputs)), spec.name, "fantasy")
        out.append((TypedProgram(prog.expr, request), task))
    if not out:
        log.warning("no valid fantasies after %d attempts; fitting on replays only", tries)
    return out


def dream_sleep(state: CycleState, spec: DomainSpec, tasks_by_id: Dict[str, Task], config: CycleConfig,
                seed: int) -> Tuple[RecognitionModel, int]:
    fantasies = make_fantasies(state.library, spec, config.fantasies, _rng(seed, state.cycle, 2),
                               config.fantasy_attempts)
    replays = [(e.program, tasks_by_id[tid]) for tid in sorted(state.beams) for e in state.beams[tid].entries]
    model = fit_recognition(replays, fantasies, state.library, spec.featurizer, contextual=config.contextual,
                            replay_weight=config.replay_weight, max_iter=config.fit_iterations)
    return model, len(fantasies)


def evaluate_tests(tests: Sequence[Task], model, lib: Library, budget: int) -> List[TestResult]:
    chunk_names = {p.name for p in lib.chunks}
    out = []
    for t in tests:
        beam = solve_task(t, model, lib, SearchBudget(budget), capacity=1)
        if beam.entries:
            e = beam.entries[0].program.expr
            used = tuple(sorted(chunk_names & set(primitives_used(e))))
            out.append(TestResult(t.id, True, beam.expansions_to_first or 0, render(e), size(e), used))
        else:
            out.append(TestResult(t.id, False, beam.expansions, None, None))
    return out


def run_cycle(state: CycleState, spec: DomainSpec, train: Sequence[Task], test: Sequence[Task],
              config: CycleConfig, seed: int) -> CycleState:
    """Advance ``state`` by one cycle (mutates and returns it)."""
    state.cycle += 1
    tasks_by_id = {t.id: t for t in train}
    rng = _rng(seed, state.cycle, 1)
    k = min(config.batch_size, len(train))
    picks = sorted(int(i) for i in rng.choice(len(train), size=k, replace=False))
    batch = [train[i] for i in picks]
    state.observed.update(t.id for t in batch)

    # wake
    found = wake(batch, state.model, state.library, SearchBudget(config.wake_budget), config.beam_cap)
    for tid in sorted(found):
        if found[tid].entries:
            state.beams[tid] = merge_beams(state.beams[tid], found[tid]) if tid in state.beams else found[tid]
    batch_solved = sum(1 for t in batch if found[t.id].entries)
    state.solved_ever.update(tid for tid, b in state.beams.items() if b.entries)
    state.snapshots.append((state.cycle, "wake", dump_beams(state.beams)))

    # abstraction sleep
    lib, beams, chunks, report = abstraction_sleep(state, train, config)
    state.library = fit_theta(lib, list(beams.values()))
    state.beams = beams
    state.chunks.extend(chunks)
    state.chunk_reports.append((state.cycle, report))
    state.snapshots.append((state.cycle, "abstraction", dump_beams(state.beams)))

    # dream sleep
    state.model, n_fantasies = dream_sleep(state, spec, tasks_by_id, config, seed)
    state.fantasy_counts.append(n_fantasies)
    state.beams = {tid: rescore_beam(b, state.model, tasks_by_id[tid]) for tid, b in state.beams.items()}

    # test
    results = evaluate_tests(test, state.model, state.library, config.test_budget)
    state.tests.append(results)
    solved = [r for r in results if r.solved]
    expansions_all = [r.expansions if r.solved else config.test_budget for r in results]
    state.metrics.append(CycleMetrics(
        seed=seed,
        cycle=state.cycle,
        train_solved=batch_solved,
        test_pct=100.0 * len(solved) / len(results) if results else 0.0,
        mean_expansions_all=float(np.mean(expansions_all)) if results else math.nan,
        mean_expansions_solved=float(np.mean([r.expansions for r in solved])) if solved else math.nan,
        chunks_installed=len(chunks),
        mean_chunk_size=float(np.mean([c.size for c in chunks])) if chunks else math.nan,
    ))
    return state


def recovered_hidden_chunks(state: CycleState, spec: DomainSpec) -> List[str]:
    """Hidden chunks that some installed chunk equals after inlining."""
    hidden = spec.hidden_normal_forms()
    mine = {state.library.inlined_definition(c.name) for c in state.chunks if c.name in state.library}
    return [name for name, nf in hidden.items() if nf in mine]
