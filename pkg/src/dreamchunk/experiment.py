"""Multi-seed experiments, criterion comparisons and report files."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .decompiler import CRITERIA, dump_chunk_report
from .domains import DOMAINS, DomainSpec, generate_tasks, make_domain
from .library import Library, dump_library
from .models import dump_model
from .program import Prim, parse, size
from .search import dump_beams
from .tasks import Task, dump_tasks
from .wake_sleep import CycleConfig, CycleMetrics, CycleState, initial_state, recovered_hidden_chunks, run_cycle

log = logging.getLogger(__name__)

DEFAULT_TOP_K = {"list": 2, "arith": 1}


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class RunConfig:
    domain: str = "list"
    criterion: str = "ddc-pc"
    cycles: int = 10
    batch_size: int = 10
    wake_budget: int = 10_000
    test_budget: int = 50_000
    beam_cap: int = 5
    top_k: Optional[int] = None          # None: the domain default
    frag_cap: int = 8
    fantasies: int = 200
    seeds: Tuple[int, ...] = (0,)
    out: Optional[str] = None
    n_train: int = 30
    n_test: int = 20
    contextual: bool = True
    per_task_prior: bool = False
    write_checkpoints: bool = True

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ConfigError("domain", f"unknown domain {self.domain!r}")
        if self.criterion not in CRITERIA:
            raise ConfigError("criterion", f"must be one of {', '.join(CRITERIA)}")
        for name in ("cycles", "batch_size", "wake_budget", "test_budget", "beam_cap", "frag_cap", "n_train",
                     "n_test"):
            if getattr(self, name) <= 0:
                raise ConfigError(name, "must be positive")
        if self.fantasies < 0:
            raise ConfigError("fantasies", "must be non-negative")
        if self.top_k is not None and self.top_k < 0:
            raise ConfigError("top_k", "must be non-negative")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds", "need at least one seed and no repeats")

    @property
    def k(self) -> int:
        return DEFAULT_TOP_K[self.domain] if self.top_k is None else self.top_k

    def cycle_config(self) -> CycleConfig:
        return CycleConfig(criterion=self.criterion, batch_size=self.batch_size, wake_budget=self.wake_budget,
                           test_budget=self.test_budget, beam_cap=self.beam_cap, top_k=self.k,
                           frag_cap=self.frag_cap, fantasies=self.fantasies, contextual=self.contextual,
                           per_task_prior=self.per_task_prior)

    def describe(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["top_k"] = self.k
        d.pop("out")
        d.pop("write_checkpoints")
        return d


@dataclass
class SeedRun:
    seed: int
    spec: DomainSpec
    train: List[Task]
    test: List[Task]
    state: CycleState
    seconds: List[float] = field(default_factory=list)


@dataclass
class ExperimentResult:
    config: RunConfig
    runs: Dict[int, SeedRun]
    summary: dict


def run_seed(config: RunConfig, seed: int, out_dir: Optional[str] = None) -> SeedRun:
    spec = make_domain(config.domain, seed)
    train, test = generate_tasks(spec, config.n_train, config.n_test, seed)
    state = initial_state(spec, config.contextual)
    run = SeedRun(seed, spec, train, test, state)
    cc = config.cycle_config()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write(os.path.join(out_dir, "tasks.jsonl"), dump_tasks(train + test))
    for _ in range(config.cycles):
        t0 = time.perf_counter()
        run_cycle(state, spec, train, test, cc, seed)
        run.seconds.append(time.perf_counter() - t0)
        m = state.metrics[-1]
        log.info("seed %d cycle %d: train %d, test %.1f%%, chunks %d", seed, m.cycle, m.train_solved, m.test_pct,
                 m.chunks_installed)
        if out_dir and config.write_checkpoints:
            _write_checkpoint(os.path.join(out_dir, f"cycle-{state.cycle:02d}"), state)
    return run


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_checkpoint(path: str, state: CycleState) -> None:
    os.makedirs(path, exist_ok=True)
    _write(os.path.join(path, "library.json"), dump_library(state.library))
    _write(os.path.join(path, "model.csv"), dump_model(state.model))
    _write(os.path.join(path, "beams.csv"), dump_beams(state.beams))
    cycle, report = state.chunk_reports[-1]
    _write(os.path.join(path, "chunks.csv"), dump_chunk_report(report))
    lines = ["task_id,solved,expansions,size,program"]
    for r in state.tests[-1]:
        lines.append(f"{r.task_id},{int(r.solved)},{r.expansions},{'' if r.size is None else r.size},"
                     f"\"{r.program or ''}\"")
    _write(os.path.join(path, "solutions.csv"), "\n".join(lines) + "\n")


# -- reports ----------------------------------------------------------------

def metrics_csv(rows: Sequence[CycleMetrics]) -> str:
    return ",".join(CycleMetrics.FIELDS) + "\n" + "".join(r.row() + "\n" for r in rows)


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return math.nan, math.nan
    return float(np.mean(vals)), float(np.std(vals))


def mentions(expr, name: str, lib: Library, memo: Optional[dict] = None) -> bool:
    """Does ``expr`` use chunk ``name``, directly or inside other chunks?"""
    memo = {} if memo is None else memo
    stack = [expr]
    while stack:
        e = stack.pop()
        if isinstance(e, Prim):
            if e.name == name:
                return True
            if e.name in lib and lib.get(e.name).is_chunk:
                if e.name not in memo:
                    memo[e.name] = False
                    memo[e.name] = mentions(lib.get(e.name).definition, name, lib, memo)
                if memo[e.name]:
                    return True
        elif hasattr(e, "f"):
            stack.extend((e.f, e.x))
        elif hasattr(e, "body"):
            stack.append(e.body)
    return False


def chunk_table(runs: Dict[int, SeedRun]) -> str:
    """Every installed chunk with its sizes."""
    lines = ["seed,cycle,name,size,inlined_size,score,criterion,definition,inlined"]
    for seed in sorted(runs):
        for c in runs[seed].state.chunks:
            lines.append(f"{seed},{c.cycle},{c.name},{c.size},{size(parse(c.inlined))},{c.score:.17g},{c.criterion},"
                         f"\"{c.rendering}\",\"{c.inlined}\"")
    return "\n".join(lines) + "\n"


def usefulness(runs: Dict[int, SeedRun], early_cycles: int = 2) -> List[dict]:
    """Share of test tasks ever solved by a program using each early chunk."""
    out = []
    for seed in sorted(runs):
        run = runs[seed]
        lib = run.state.library
        for c in run.state.chunks:
            if c.cycle > early_cycles:
                continue
            solved = set()
            for results in run.state.tests:
                for r in results:
                    if r.solved and mentions(parse(r.program), c.name, lib):
                        solved.add(r.task_id)
            out.append({"seed": seed, "cycle": c.cycle, "name": c.name, "definition": c.inlined,
                        "test_pct": 100.0 * len(solved) / len(run.test)})
    return out


def solved_test_sizes(run: SeedRun, cycle: int) -> List[int]:
    return [r.size for r in run.state.tests[cycle - 1] if r.solved]


def summarize(config: RunConfig, runs: Dict[int, SeedRun]) -> dict:
    per_cycle = []
    for c in range(1, config.cycles + 1):
        rows = [runs[s].state.metrics[c - 1] for s in sorted(runs)]
        entry = {"cycle": c}
        for f in CycleMetrics.FIELDS[2:]:
            mean, std = _mean_std([float(getattr(r, f)) for r in rows])
            entry[f + "_mean"] = mean
            entry[f + "_std"] = std
        sizes = [float(np.mean(solved_test_sizes(runs[s], c))) for s in sorted(runs) if solved_test_sizes(runs[s], c)]
        entry["solved_test_size_mean"] = float(np.mean(sizes)) if sizes else math.nan
        per_cycle.append(entry)
    all_chunks = [c for s in sorted(runs) for c in runs[s].state.chunks]
    spec = next(iter(runs.values())).spec
    return {
        "config": config.describe(),
        "domain_notes": spec.notes,
        "per_cycle": per_cycle,
        "mean_chunk_size": float(np.mean([c.size for c in all_chunks])) if all_chunks else math.nan,
        "chunks_total": len(all_chunks),
        "hidden_chunks": sorted(spec.hidden_chunks),
        "hidden_chunks_recovered": {str(s): recovered_hidden_chunks(runs[s].state, runs[s].spec) for s in sorted(runs)},
        "train_solved_ever": {str(s): len(runs[s].state.solved_ever) for s in sorted(runs)},
        "usefulness": usefulness(runs),
    }


def _json(obj) -> str:
    def clean(v):
        if isinstance(v, float) and math.isnan(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, list):
            return [clean(x) for x in v]
        return v
    return json.dumps(clean(obj), indent=1, sort_keys=True) + "\n"


def run_experiment(config: RunConfig) -> ExperimentResult:
    """Run every seed and, if ``config.out`` is set, write the report files."""
    runs = {}
    for seed in config.seeds:
        sub = os.path.join(config.out, f"seed-{seed}") if config.out else None
        runs[seed] = run_seed(config, seed, sub)
    summary = summarize(config, runs)
    if config.out:
        os.makedirs(config.out, exist_ok=True)
        rows = [m for s in sorted(runs) for m in runs[s].state.metrics]
        _write(os.path.join(config.out, "metrics.csv"), metrics_csv(rows))
        _write(os.path.join(config.out, "summary.json"), _json(summary))
        _write(os.path.join(config.out, "chunk_table.csv"), chunk_table(runs))
        _write(os.path.join(config.out, "timing.json"),
               _json({str(s): runs[s].seconds for s in sorted(runs)}))
    return ExperimentResult(config, runs, summary)


# -- comparisons ------------------------------------------------------------

def first_divergence(a: CycleState, b: CycleState) -> Optional[Tuple[int, str]]:
    """First (cycle, phase) at which the stored beams of two runs differ."""
    for (ca, pa, da), (cb, pb, db) in zip(a.snapshots, b.snapshots):
        if da != db:
            return ca, pa
    return None


def compare(configs: Sequence[RunConfig], results: Optional[Sequence[ExperimentResult]] = None,
            out: Optional[str] = None) -> dict:
    """Side-by-side report for configurations that differ only in criterion."""
    if len(configs) < 2:
        raise ConfigError("criteria", "need at least two configurations")
    base = configs[0]
    for c in configs[1:]:
        if c.domain != base.domain:
            raise ConfigError("domain", "configurations must share the domain")
        if c.seeds != base.seeds:
            raise ConfigError("seeds", "configurations must share the seeds")
        if replace(c, criterion=base.criterion, out=base.out) != base:
            raise ConfigError("criterion", "configurations may differ only in criterion")
    if results is None:
        results = [run_experiment(c) for c in configs]
    labels = [f"{i}:{c.criterion}" if [x.criterion for x in configs].count(c.criterion) > 1 else c.criterion
              for i, c in enumerate(configs)]
    lines = ["seed,cycle," + ",".join(f"{l}_test_pct" for l in labels) + ",max_diff"]
    for seed in base.seeds:
        for cyc in range(1, base.cycles + 1):
            vals = [r.runs[seed].state.metrics[cyc - 1].test_pct for r in results]
            lines.append(f"{seed},{cyc}," + ",".join(f"{v:.6f}" for v in vals) + f",{max(vals) - min(vals):.6f}")
    divergence = {}
    for seed in base.seeds:
        marks = []
        for r in results[1:]:
            d = first_divergence(results[0].runs[seed].state, r.runs[seed].state)
            marks.append(None if d is None else {"cycle": d[0], "phase": d[1]})
        divergence[str(seed)] = marks
    report = {
        "labels": labels,
        "divergence": divergence,
        "mean_chunk_size": {l: r.summary["mean_chunk_size"] for l, r in zip(labels, results)},
        "final_test_pct": {l: r.summary["per_cycle"][-1]["test_pct_mean"] for l, r in zip(labels, results)},
    }
    if out:
        os.makedirs(out, exist_ok=True)
        _write(os.path.join(out, "comparison.csv"), "\n".join(lines) + "\n")
        _write(os.path.join(out, "comparison.json"), _json(report))
        for l, r in zip(labels, results):
            _write(os.path.join(out, f"chunk_table_{l.replace(':', '_')}.csv"), chunk_table(r.runs))
    report["table"] = "\n".join(lines) + "\n"
    return report
