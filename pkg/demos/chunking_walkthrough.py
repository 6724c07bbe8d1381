"""Why chunking helps: a two-component library and one useful chunk.

With ``f : int -> int`` and ``n : int`` equally weighted, the program
``f(f(f(f(n))))`` has probability 1/32. Caching ``f(f(n))`` as a new
primitive makes it reachable in far fewer steps.

    python3 demos/chunking_walkthrough.py
"""
import math

from dreamchunk import (Beam, GenerativeModel, Library, Primitive, RecognitionModel, SearchBudget, Task,
                        TypedProgram, enumerate_programs, extract_candidates, parse, program_logprob, render)
from dreamchunk.decompiler import Scorer, install_selected, select_top_k
from dreamchunk.library import fit_theta
from dreamchunk.models import estimate_context_prior
from dreamchunk.types import INT, arrow


def show_enumeration(lib, depth=4):
    task = Task("demo", INT, (((), 0),))
    for e in enumerate_programs(task, GenerativeModel(lib), lib, SearchBudget(10_000), max_depth=depth):
        print(f"  {math.exp(e.logprob):8.4f}  {render(e.program.expr)}")


def main():
    lib = Library([Primitive("f", arrow(INT, INT), impl=lambda x: x + 1), Primitive("n", INT, impl=0)],
                  {"f": math.log(0.5), "n": math.log(0.5)})
    print("programs in order of probability:")
    show_enumeration(lib)

    # two solved tasks, as a wake phase would leave them
    beams, tasks = {}, []
    for tid, text in (("two", "(f (f n))"), ("four", "(f (f (f (f n))))")):
        prog = TypedProgram(parse(text), INT)
        task = Task(tid, INT, (((), text.count("f")),))
        beam = Beam(tid)
        beam.add(prog, program_logprob(GenerativeModel(lib), task, prog))
        beams[tid], tasks = beam, tasks + [task]

    model = RecognitionModel(lib, contextual=False)
    scorer = Scorer(tasks, beams, model, lib, estimate_context_prior(beams, lib))
    scored = sorted((scorer.ddc_pc(c) for c in extract_candidates(beams, lib)), key=lambda s: -s.score)
    print("\ncandidate chunks by ddc-pc:")
    for s in scored:
        print(f"  {s.score:.6f}  {s.candidate.rendering}")

    new_lib, new_beams, installed = install_selected(select_top_k(scored, 1, lib), lib, beams, origin=1)
    name = installed[0][0]
    print(f"\ninstalled {name} = {render(new_lib.get(name).definition)}")
    for tid in sorted(new_beams):
        print(f"  {tid}: {render(new_beams[tid].entries[0].program.expr)}")
    print("\nafter refitting weights:")
    show_enumeration(fit_theta(new_lib, list(new_beams.values())), depth=3)


if __name__ == "__main__":
    main()
