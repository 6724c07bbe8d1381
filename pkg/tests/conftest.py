import math

import pytest

from dreamchunk.library import Library, Primitive
from dreamchunk.program import TypedProgram, parse
from dreamchunk.search import Beam
from dreamchunk.tasks import Task
from dreamchunk.types import INT, arrow


def fig1_library(**theta):
    """Two components: an increment ``f : int -> int`` and a constant ``n = 0``."""
    lib = Library([Primitive("f", arrow(INT, INT), impl=lambda x: x + 1), Primitive("n", INT, impl=0)])
    if theta:
        return lib.with_theta({**lib.theta, **theta}, lib.variable_weight)
    return lib


def const_task(tid, value, request=INT):
    return Task(tid, request, (((), value),))


def beam_of(tid, *programs, request=INT, capacity=5):
    b = Beam(tid, capacity)
    for k, text in enumerate(programs):
        b.add(TypedProgram(parse(text), request), -float(k + 1))
    return b


@pytest.fixture
def fig1():
    return fig1_library()


def close(a, b, tol=1e-12):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)


ACCEPTANCE = []


def report(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
