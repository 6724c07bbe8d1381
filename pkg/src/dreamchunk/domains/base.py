"""Shared machinery for toy domains: task sampling from a hidden library."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..evaluation import CompiledProgram, EvaluationError
from ..library import Library, Primitive, inline, install_chunk
from ..models import GenerativeModel, sample_program
from ..program import Expression, parse, primitives_used, render, size
from ..tasks import Task

log = logging.getLogger(__name__)

MAX_GROUND_TRUTH_SIZE = 12
EVAL_STEPS = 5_000


@dataclass
class DomainSpec:
    """Everything the learner and the task generator need to know about a domain.

    ``hidden_chunks`` maps names to definitions (S-expressions over the
    builtins); the learner never sees them.  ``chunk_boost`` raises their
    share when sampling ground-truth programs.
    """

    name: str
    primitives: List[Primitive]
    requests: List[Any]
    input_generator: Callable[[Any, np.random.Generator], Tuple]
    featurizer: Callable[[Task], Any]
    hidden_chunks: Dict[str, str]
    n_examples: int
    seed: int = 0
    chunk_boost: float = 3.0
    max_inlined_size: int = 10
    value_ok: Callable[[Any], bool] = field(default=lambda v: True)
    inputs_for_task: Optional[Callable[[Any, np.random.Generator, int], List[Tuple]]] = None
    task_filter: Optional[Callable[[list], bool]] = None
    notes: str = ""

    def base_library(self) -> Library:
        return Library(self.primitives)

    def builtins(self) -> Dict[str, Primitive]:
        return {p.name: p for p in self.primitives}

    def ground_truth_library(self) -> Library:
        lib = self.base_library()
        for name in sorted(self.hidden_chunks):
            lib, _ = install_chunk(lib, parse(self.hidden_chunks[name]), name=name)
        weights = {}
        base = -math.log(len(lib) + 1)
        for p in lib.primitives:
            weights[p.name] = base + (math.log(self.chunk_boost) if p.is_chunk else 0.0)
        return lib.with_theta(weights, base)

    def hidden_normal_forms(self) -> Dict[str, Expression]:
        lib = self.ground_truth_library()
        return {name: lib.inlined_definition(name) for name in sorted(self.hidden_chunks)}

    def sample_inputs(self, request, rng: np.random.Generator, n: int) -> List[Tuple]:
        if self.inputs_for_task is not None:
            return self.inputs_for_task(request, rng, n)
        return [self.input_generator(request, rng) for _ in range(n)]


def run_examples(expr: Expression, lib: Library, inputs: Sequence[Tuple], value_ok=lambda v: True,
                 steps: int = EVAL_STEPS) -> Optional[list]:
    """Outputs of ``expr`` on every input, or None if any evaluation fails."""
    fn = CompiledProgram(expr, lib, steps)
    out = []
    for xs in inputs:
        try:
            y = fn(*xs)
        except (EvaluationError, ArithmeticError, ValueError, TypeError):
            return None
        if not value_ok(y):
            return None
        out.append(y)
    return out


def generate_tasks(spec: DomainSpec, n_train: int, n_test: int, seed: int, max_attempts: int = 200_000
                   ) -> Tuple[List[Task], List[Task]]:
    """Disjoint train/test tasks sampled from the hidden library.

    Every ground-truth program uses at least one hidden chunk, has size at
    most 12 over the hidden library, produces input-dependent outputs and
    differs in behaviour from every other task.
    """
    if n_train <= 0 or n_test <= 0:
        raise ValueError("n_train and n_test must be positive")
    rng = np.random.default_rng([seed, 7919])
    gt = spec.ground_truth_library()
    model = GenerativeModel(gt)
    chunk_names = set(spec.hidden_chunks)
    probe_rng = np.random.default_rng([seed, 104729])
    probes = {render_req(r): spec.sample_inputs(r, probe_rng, 8) for r in spec.requests}
    behaviours = set()
    tasks: List[Task] = []
    attempts = 0
    while len(tasks) < n_train + n_test:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError(f"could only generate {len(tasks)} tasks for domain {spec.name}")
        request = spec.requests[int(rng.integers(len(spec.requests)))]
        prog = sample_program(model, request, rng)
        if prog is None:
            continue
        if size(prog.expr) > MAX_GROUND_TRUTH_SIZE or not chunk_names & set(primitives_used(prog.expr)):
            continue
        if size(inline(gt, prog.expr)) > spec.max_inlined_size:
            continue
        probe_out = run_examples(prog.expr, gt, probes[render_req(request)], spec.value_ok)
        if probe_out is None or len(set(map(repr, probe_out))) < 2:
            continue
        key = (render_req(request), repr(probe_out))
        if key in behaviours:
            continue
        inputs = spec.sample_inputs(request, rng, spec.n_examples)
        outputs = run_examples(prog.expr, gt, inputs, spec.value_ok)
        if (outputs is None or len(set(map(repr, outputs))) < 2
                or (spec.task_filter is not None and not spec.task_filter(outputs))):
            log.debug("discarding degenerate task %s", render(prog.expr))
            continue
        behaviours.add(key)
        k = len(tasks)
        split = "train" if k < n_train else "test"
        idx = k if split == "train" else k - n_train
        tasks.append(Task(f"{spec.name}-{split}-{idx:03d}", request, tuple(zip(inputs, outputs)), spec.name,
                          split, render(prog.expr)))
    return tasks[:n_train], tasks[n_train:]


def render_req(r) -> str:
    from ..types import render_type
    return render_type(r)
