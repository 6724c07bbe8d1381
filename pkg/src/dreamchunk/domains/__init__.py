"""Toy task domains."""
from __future__ import annotations

from .arith import make_arith_domain
from .base import DomainSpec, generate_tasks, run_examples
from .lists import make_list_domain

DOMAINS = {"list": make_list_domain, "arith": make_arith_domain}


def make_domain(name: str, seed: int = 0) -> DomainSpec:
    try:
        return DOMAINS[name](seed)
    except KeyError:
        raise ValueError(f"unknown domain {name!r}; choose from {', '.join(sorted(DOMAINS))}") from None


__all__ = ["DOMAINS", "DomainSpec", "generate_tasks", "make_domain", "run_examples"]
