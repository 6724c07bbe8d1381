"""Induction tasks and their one-JSON-document-per-line file format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, List, Optional, Tuple

from .types import TCon, TVar, arguments, parse_type, render_type, returns


@dataclass(frozen=True)
class Task:
    """Requested type plus input/output examples.

    ``ground_truth`` is the rendering of the generating program.  The learner
    never looks at it; reports use it for chunk-recovery statistics.
    """

    id: str
    request: Any
    examples: Tuple[Tuple[Tuple[Any, ...], Any], ...]
    domain: str = ""
    split: str = "train"
    ground_truth: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.examples:
            raise ValueError(f"task {self.id} has no examples")
        n = len(arguments(self.request))
        for inputs, _ in self.examples:
            if len(inputs) != n:
                raise ValueError(f"task {self.id}: example arity {len(inputs)} != {n}")


def value_to_json(value, tp):
    if isinstance(tp, TCon) and tp.name == "list":
        return [value_to_json(v, tp.args[0]) for v in value]
    return value


def value_from_json(value, tp):
    if isinstance(tp, TCon):
        if tp.name == "list":
            return tuple(value_from_json(v, tp.args[0]) for v in value)
        if tp.name == "int":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"expected int, got {value!r}")
            return value
        if tp.name == "bool":
            if not isinstance(value, bool):
                raise ValueError(f"expected bool, got {value!r}")
            return value
    if isinstance(tp, TVar):
        return value
    raise ValueError(f"no literal syntax for type {render_type(tp)}")


def render_task(task: Task) -> str:
    args = arguments(task.request)
    out = returns(task.request)
    doc = {
        "id": task.id,
        "domain": task.domain,
        "type": render_type(task.request),
        "split": task.split,
        "examples": [
            {"inputs": [value_to_json(v, t) for v, t in zip(inputs, args)],
             "output": value_to_json(output, out)}
            for inputs, output in task.examples
        ],
    }
    if task.ground_truth is not None:
        doc["ground_truth"] = task.ground_truth
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def parse_task(text: str) -> Task:
    doc = json.loads(text)
    request = parse_type(doc["type"])
    args = arguments(request)
    out = returns(request)
    examples = tuple(
        (tuple(value_from_json(v, t) for v, t in zip(ex["inputs"], args)), value_from_json(ex["output"], out))
        for ex in doc["examples"]
    )
    return Task(doc["id"], request, examples, doc.get("domain", ""), doc.get("split", "train"),
                doc.get("ground_truth"))


def dump_tasks(tasks: Iterable[Task]) -> str:
    return "".join(render_task(t) + "\n" for t in tasks)


def load_tasks(text: str) -> List[Task]:
    return [parse_task(line) for line in text.splitlines() if line.strip()]
