"""Synthetic routes: trees of one-step reactions from a target down to leaves."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence


@dataclass(frozen=True)
class Step:
    product: str
    reactants: tuple[str, ...]
    rule_id: str
    logp: float = 0.0

    def to_json(self) -> dict:
        return {
            "product": self.product,
            "reactants": list(self.reactants),
            "rule_id": self.rule_id,
            "logp": self.logp,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Step":
        return cls(obj["product"], tuple(sorted(obj["reactants"])), obj["rule_id"], float(obj["logp"]))


@dataclass(frozen=True, eq=False)
class Route:
    """A route ``(target, steps, intermediates, leaves)``.

    ``steps`` are stored in pre-order: the step making ``target`` first, then
    for each reactant in sorted order the subtree that makes it. A molecule
    is a leaf when it is never a step product.
    """

    target: str
    steps: tuple[Step, ...]
    log_prob: float = 0.0

    @cached_property
    def products(self) -> frozenset[str]:
        return frozenset(s.product for s in self.steps)

    @cached_property
    def leaves(self) -> frozenset[str]:
        return frozenset(r for s in self.steps for r in s.reactants if r not in self.products)

    @cached_property
    def intermediates(self) -> frozenset[str]:
        return self.products - {self.target}

    @cached_property
    def key(self) -> tuple:
        """Canonical serialization used for dedup and tie-breaks."""
        return tuple((s.product, s.reactants, s.rule_id) for s in self.steps)

    @cached_property
    def depth(self) -> int:
        """Longest root-to-leaf reaction count."""
        if not self.steps:
            return 0
        pos = 0

        def walk() -> int:
            nonlocal pos
            step = self.steps[pos]
            pos += 1
            deepest = 0
            for r in step.reactants:
                if r in self.products and pos < len(self.steps) and self.steps[pos].product == r:
                    deepest = max(deepest, walk())
            return deepest + 1

        return walk()

    @property
    def num_reactions(self) -> int:
        return len(self.steps)

    def with_log_prob(self, log_prob: float) -> "Route":
        return Route(self.target, self.steps, log_prob)

    def is_complete(self, inventory: Iterable[str] | frozenset[str]) -> bool:
        inv = inventory if isinstance(inventory, (set, frozenset)) else set(inventory)
        return bool(self.steps) and self.leaves <= inv

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Route):
            return NotImplemented
        return self.target == other.target and self.key == other.key

    def __hash__(self) -> int:
        return hash((self.target, self.key))

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "log_prob": self.log_prob,
            "steps": [s.to_json() for s in self.steps],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Route":
        steps = tuple(Step.from_json(s) for s in obj["steps"])
        return cls(obj["target"], steps, float(obj.get("log_prob", 0.0)))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))


def sum_log_prob(steps: Sequence[Step]) -> float:
    return math.fsum(s.logp for s in steps)


def dedup_routes(routes: Iterable[Route]) -> list[Route]:
    seen: set = set()
    out = []
    for r in routes:
        k = (r.target, r.key)
        if k not in seen:
            seen.add(k)
            out.append(r)
    return out
