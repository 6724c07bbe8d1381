import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dreamchunk.domains.lists import PRIMITIVES as LIST_PRIMS, featurize as list_features
from dreamchunk.library import Library, Primitive
from dreamchunk.models import (ROOT, BigramContext, ContextPrior, EmptySupportError, GenerativeModel,
                               RecognitionModel, component_distribution, dump_model, estimate_context_prior,
                               fit_recognition, function_logprob_as_part, program_logprob, sample_program,
                               training_objective, uniform_context_prior)
from dreamchunk.program import TypedProgram, parse, render
from dreamchunk.search import SearchBudget, enumerate_programs
from dreamchunk.tasks import Task
from dreamchunk.types import BOOL, INT, TVar, arrow, tlist

from conftest import beam_of, const_task

TWICE = TypedProgram(parse("(lambda (f (f $0)))"), arrow(INT, INT))
LIST = tlist(INT)


def at_int(parent=ROOT, arg=0):
    return BigramContext(parent, arg, INT)


def table(lib, rows):
    """Recognition model with hand-set probabilities per (parent, arg) row."""
    shared = {}
    for key, probs in rows.items():
        v = np.zeros(len(lib) + 1)
        for name, p in probs.items():
            v[len(lib) if name == "<var>" else lib.index(name)] = math.log(p)
        shared[key] = v
    return RecognitionModel(lib, shared=shared)


# -- component_distribution ---------------------------------------------------

def test_uniform_distribution_over_valid_components(fig1):
    assert component_distribution(GenerativeModel(fig1), None, at_int()) == pytest.approx({"f": 0.5, "n": 0.5})


def test_bool_request_has_empty_support(fig1):
    with pytest.raises(EmptySupportError):
        component_distribution(GenerativeModel(fig1), None, BigramContext(ROOT, 0, BOOL))


def test_zero_score_recognition_model_is_uniform(fig1):
    d = component_distribution(RecognitionModel(fig1), None, at_int("f"), env=(INT, BOOL))
    assert d == pytest.approx({"f": 1 / 3, "n": 1 / 3, "$0": 1 / 3})


def test_variable_mass_is_shared_among_valid_variables(fig1):
    d = component_distribution(GenerativeModel(fig1), None, at_int(), env=(INT, INT))
    assert d["$0"] == d["$1"] == pytest.approx(1 / 6)
    assert d["f"] == pytest.approx(1 / 3)


def random_library(draw_weights, n_extra):
    prims = [Primitive("f", arrow(INT, INT)), Primitive("n", INT), Primitive("b", BOOL),
             Primitive("map", arrow(arrow(TVar(0), TVar(1)), tlist(TVar(0)), tlist(TVar(1)))),
             Primitive("head", arrow(tlist(TVar(0)), TVar(0)))][:2 + n_extra]
    return Library(prims, {p.name: w for p, w in zip(prims, draw_weights)}, draw_weights[-1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 2), min_size=6, max_size=6), st.integers(0, 3),
       st.sampled_from([INT, BOOL, LIST, TVar(0), arrow(INT, INT)]),
       st.lists(st.sampled_from([INT, BOOL, LIST, TVar(3)]), max_size=3))
def test_distributions_are_normalized(weights, n_extra, request, env):
    lib = random_library(weights, n_extra)
    for model in (GenerativeModel(lib), table(lib, {})):
        try:
            d = component_distribution(model, None, BigramContext(ROOT, 0, request), env=tuple(env))
        except EmptySupportError:
            continue
        assert abs(sum(d.values()) - 1.0) <= 1e-9


# -- program_logprob -----------------------------------------------------------

def test_program_logprob_examples(fig1):
    g = GenerativeModel(fig1)
    assert program_logprob(g, None, TypedProgram(parse("n"), INT)) == pytest.approx(math.log(1 / 2))
    assert program_logprob(g, None, TypedProgram(parse("(f (f n))"), INT)) == pytest.approx(math.log(1 / 8))


def test_program_outside_support_is_minus_infinity(fig1):
    g = GenerativeModel(fig1)
    assert program_logprob(g, None, TypedProgram(parse("n"), BOOL)) == -math.inf
    assert program_logprob(g, None, TypedProgram(parse("(n n)"), INT)) == -math.inf
    # not eta-long: a function returned without its lambda
    assert program_logprob(g, None, TypedProgram(parse("f"), arrow(INT, INT))) == -math.inf


def test_bigram_program_logprob_uses_parent(fig1):
    m = table(fig1, {(ROOT, 0): {"f": 0.8, "n": 0.2}, ("f", 0): {"f": 0.3, "n": 0.7}})
    assert program_logprob(m, None, TypedProgram(parse("(f (f n))"), INT)) == pytest.approx(math.log(0.8 * 0.3 * 0.7))


# -- function_logprob_as_part -------------------------------------------------

def test_unigram_function_as_part_ignores_prior(fig1):
    g = GenerativeModel(fig1)
    single = ContextPrior({at_int("f"): 1.0})
    for prior in (None, single, uniform_context_prior(fig1)):
        assert function_logprob_as_part(g, None, (TWICE, 1), prior) == pytest.approx(math.log(1 / 4))


def test_single_context_prior_collapses(fig1):
    m = table(fig1, {(ROOT, 0): {"f": 0.8, "n": 0.2}, ("f", 0): {"f": 0.3, "n": 0.7}})
    lp = function_logprob_as_part(m, None, (TWICE, 1), ContextPrior({at_int("f"): 1.0}))
    assert lp == pytest.approx(math.log(0.3 * 0.3))


def test_two_context_prior_hand_sum(fig1):
    m = table(fig1, {(ROOT, 0): {"f": 0.8, "n": 0.2}, ("f", 0): {"f": 0.3, "n": 0.7}})
    prior = ContextPrior({at_int(): 0.5, at_int("f"): 0.5})
    # root f: 0.5*0.8 + 0.5*0.3; inner f under parent f: 0.3; wrapper variable is free
    assert function_logprob_as_part(m, None, (TWICE, 1), prior) == pytest.approx(math.log(0.55 * 0.3))


def test_root_valid_in_no_context_is_minus_infinity(fig1):
    m = table(fig1, {})
    prior = ContextPrior({BigramContext("x", 0, BOOL): 1.0})
    assert function_logprob_as_part(m, None, (TWICE, 1), prior) == -math.inf


def test_empty_prior_falls_back_to_uniform(fig1):
    m = table(fig1, {(ROOT, 0): {"f": 0.8, "n": 0.2}, ("f", 0): {"f": 0.3, "n": 0.7}})
    a = function_logprob_as_part(m, None, (TWICE, 1), ContextPrior({}))
    b = function_logprob_as_part(m, None, (TWICE, 1), uniform_context_prior(fig1))
    assert a == b == pytest.approx(math.log(0.3 * 0.3))


# -- context priors --------------------------------------------------------------

def test_context_prior_from_single_beam(fig1):
    prior = estimate_context_prior({"t": beam_of("t", "(f n)")}, fig1)
    assert prior.probs == pytest.approx({at_int(): 0.5, at_int("f"): 0.5})
    assert prior.provenance == "pooled"


def test_context_prior_empty_beams_is_uniform_fallback(fig1):
    prior = estimate_context_prior({}, fig1)
    assert prior.provenance == "uniform-fallback"
    assert prior.probs == {at_int("f"): 1.0}


def test_context_prior_is_scale_invariant(fig1):
    one = estimate_context_prior({"a": beam_of("a", "(f (f n))")}, fig1)
    two = estimate_context_prior({"a": beam_of("a", "(f (f n))"), "b": beam_of("b", "(f (f n))")}, fig1)
    assert one.probs == pytest.approx(two.probs)


def test_per_task_prior(fig1):
    beams = {"a": beam_of("a", "n"), "b": beam_of("b", "(f n)")}
    prior = estimate_context_prior(beams, fig1, task_id="a")
    assert prior.provenance == "per-task" and prior.probs == {at_int(): 1.0}


def test_context_prior_rejects_unnormalized():
    with pytest.raises(ValueError):
        ContextPrior({at_int(): 0.4})


# -- fitting ---------------------------------------------------------------------

def test_fit_learns_a_deterministic_slot(fig1):
    t = const_task("t", 1)
    model = fit_recognition([(TypedProgram(parse("(f n)"), INT), t)] * 4, [], fig1)
    d = component_distribution(model, t, at_int("f"))
    assert d["n"] >= 0.99


def test_fit_on_nothing_is_uniform(fig1):
    model = fit_recognition([], [], fig1)
    assert component_distribution(model, None, at_int()) == pytest.approx({"f": 0.5, "n": 0.5})


def test_single_program_is_the_mode_at_its_task():
    lib = Library(LIST_PRIMS)
    prog = TypedProgram(parse("(lambda (map (lambda (+ $0 1)) $0))"), arrow(LIST, LIST))
    task = Task("t", arrow(LIST, LIST), ((((1, 2),), (2, 3)),))
    model = fit_recognition([(prog, task)], [], lib, list_features)
    first = next(iter(enumerate_programs(task, model, lib, SearchBudget(10_000))))
    assert first.program.expr == prog.expr


def test_fit_objective_never_decreases(fig1):
    replays = [(TypedProgram(parse("(f (f n))"), INT), const_task("a", 2)),
               (TypedProgram(parse("n"), INT), const_task("b", 0))]
    fantasies = [(TypedProgram(parse("(f n)"), INT), const_task("c", 1))]
    model = fit_recognition(replays, fantasies, fig1)
    trace = model.objective_trace
    assert len(trace) >= 2
    assert all(b >= a - 1e-12 for a, b in zip(trace, trace[1:]))
    assert training_objective(model, replays, fantasies) > training_objective(RecognitionModel(fig1), replays, fantasies)


def test_replay_and_fantasy_shares_are_fixed(fig1):
    # one replay against many fantasies still gets half of the objective
    replays = [(TypedProgram(parse("n"), INT), const_task("a", 0))]
    fantasies = [(TypedProgram(parse("(f n)"), INT), const_task(f"c{i}", 1)) for i in range(20)]
    model = fit_recognition(replays, fantasies, fig1)
    d = component_distribution(model, None, at_int())
    assert d["n"] == pytest.approx(0.5, abs=0.02)


# -- sampling --------------------------------------------------------------------

def test_sampling_is_typed_and_deterministic(fig1):
    g = GenerativeModel(fig1)
    a = sample_program(g, INT, 7)
    b = sample_program(g, INT, 7)
    assert a is not None and a.expr == b.expr and a.type == INT
    f = sample_program(GenerativeModel(Library(LIST_PRIMS)), arrow(LIST, INT), 3)
    if f is not None:
        assert program_logprob(GenerativeModel(Library(LIST_PRIMS)), None, f) > -math.inf


def test_sampling_frequencies_match_probabilities(fig1):
    g = GenerativeModel(fig1)
    rng = np.random.default_rng(0)
    n = 10_000
    counts = Counter(render(p.expr) if p else None for p in (sample_program(g, INT, rng) for _ in range(n)))
    assert abs(counts["n"] / n - 0.5) <= 0.02
    for text in ("n", "(f n)", "(f (f n))"):
        p = math.exp(program_logprob(g, None, TypedProgram(parse(text), INT)))
        assert abs(counts[text] / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_depth_cap_is_a_dead_end(fig1):
    g = GenerativeModel(fig1.with_theta({"f": 0.0, "n": -50.0}, -50.0))
    assert sample_program(g, INT, 0, max_depth=4) is None


def test_model_dump_is_ordered_csv(fig1):
    m = table(fig1, {(ROOT, 0): {"f": 0.8, "n": 0.2}})
    text = dump_model(m)
    lines = text.splitlines()
    assert lines[0] == "bucket,parent,arg,component,score"
    assert lines[1].startswith("*,<root>,0,f,") and len(lines) == 4
    assert dump_model(m) == text
