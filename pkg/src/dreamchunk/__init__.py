"""Typed program synthesis with library learning by chunking.

The pieces, bottom up: ``types`` and ``program`` (the lambda calculus),
``library`` (primitives and learned chunks), ``models`` (generative and
recognition distributions over programs), ``search`` (best-first
enumeration), ``decompiler`` (chunk candidates and their scores),
``wake_sleep`` (one learning cycle) and ``experiment`` (multi-seed runs).
"""
from .decompiler import (Candidate, ScoredCandidate, caching_benefit, chunk_benefit, count_uses,
                         extract_candidates, refactor, score_compression, score_ddc_avg, score_ddc_pc,
                         select_top_k)
from .domains import make_domain, generate_tasks
from .evaluation import evaluate
from .library import Library, Primitive, fit_theta, inline, install_chunk
from .models import (BigramContext, ContextPrior, GenerativeModel, RecognitionModel, component_distribution,
                     estimate_context_prior, fit_recognition, function_logprob_as_part, program_logprob,
                     sample_program)
from .program import Expression, TypedProgram, infer_type, parse, render
from .search import Beam, SearchBudget, check_solution, enumerate_programs, wake
from .tasks import Task
from .types import parse_type, render_type, unify

__version__ = "0.1.0"
