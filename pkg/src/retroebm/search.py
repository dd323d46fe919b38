"""Multi-step planners built on a one-step model.

All planners share one search space. A partial route has expanded nodes
and open molecules. Each step expands the largest open molecule (ties: the
smallest canonical string, then the smallest tree position) with the
model's top proposals. A reactant may not repeat a molecule on its own
root-to-leaf path, nodes deeper than ``max_depth`` reactions cannot be
expanded, and inventory molecules close immediately.

Tree positions are tuples of child indices, so sorting expanded nodes by
position yields the pre-order step list of the finished route.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

from .proposer import OneStepModel, propose_topk, step_log_prob
from .route import Route, Step, dedup_routes

__all__ = [
    "Route",
    "SearchLimits",
    "beam_search_plan",
    "retrostar_plan",
    "greedy_dfs_plan",
    "route_log_prob",
    "OracleValue",
    "zero_value",
]


@dataclass(frozen=True)
class SearchLimits:
    beam_width: int = 10
    max_depth: int = 6
    expansions_budget: int = 500
    proposals_per_node: int = 10

    def __post_init__(self) -> None:
        for name in ("beam_width", "max_depth", "expansions_budget", "proposals_per_node"):
            if getattr(self, name) < 1 and not (name == "expansions_budget" and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")


class _Open(NamedTuple):
    path: tuple[int, ...]
    mol: str
    ancestors: frozenset[str]


class _State(NamedTuple):
    logp: float
    expanded: tuple[tuple[tuple[int, ...], Step], ...]
    open: tuple[_Open, ...]

    @property
    def key(self) -> tuple:
        steps = sorted(self.expanded)
        return (
            tuple((s.product, s.reactants, s.rule_id) for _, s in steps),
            tuple(sorted((o.path, o.mol) for o in self.open)),
        )

    def to_route(self, target: str) -> Route:
        steps = tuple(s for _, s in sorted(self.expanded))
        return Route(target, steps, self.logp)


def _atoms(smiles: str) -> int:
    return sum(1 for ch in smiles if ch.isupper())


def _select(open_nodes: tuple[_Open, ...]) -> _Open:
    return min(open_nodes, key=lambda o: (-_atoms(o.mol), o.mol, o.path))


def _root(target: str) -> _State:
    return _State(0.0, (), (_Open((), target, frozenset()),))


def _children(
    state: _State, model: OneStepModel, inventory: frozenset[str], limits: SearchLimits
) -> list[_State]:
    node = _select(state.open)
    if len(node.path) >= limits.max_depth:
        return []
    rest = tuple(o for o in state.open if o is not node)
    banned = node.ancestors | {node.mol}
    out = []
    for outcome in propose_topk(model, node.mol, limits.proposals_per_node):
        if any(r in banned for r in outcome.reactants):
            continue
        step = Step(node.mol, outcome.reactants, outcome.rule_id, outcome.logp)
        new_open = rest + tuple(
            _Open(node.path + (k,), r, banned) for k, r in enumerate(outcome.reactants) if r not in inventory
        )
        out.append(_State(state.logp + outcome.logp, state.expanded + ((node.path, step),), new_open))
    return out


def _check_target(target: str, inventory: frozenset[str]) -> None:
    if target in inventory:
        raise ValueError(f"target {target} is already a starting material")


def beam_search_plan(
    target: str, model: OneStepModel, inventory: Iterable[str], limits: SearchLimits
) -> list[Route]:
    """Fixed-width beam over partial routes scored by accumulated log-prob.

    Finished routes stay in the beam and compete for its slots; the search
    ends when the beam holds no unfinished route.
    """
    inventory = frozenset(inventory)
    _check_target(target, inventory)
    beam = [_root(target)]
    while any(s.open for s in beam):
        pool: list[_State] = []
        for s in beam:
            if s.open:
                pool.extend(_children(s, model, inventory, limits))
            else:
                pool.append(s)
        pool.sort(key=lambda s: (-s.logp, s.key))
        beam = pool[: limits.beam_width]
    routes = [s.to_route(target) for s in beam]
    return dedup_routes(sorted(routes, key=lambda r: (-r.log_prob, r.key)))


ValueFn = Callable[[str, int], float]


def zero_value(mol: str, remaining_depth: int) -> float:
    return 0.0


class OracleValue:
    """Exact minimal ``-log p`` cost to close ``mol`` within a depth budget.

    Uses the same proposals as the planner; computed lazily and memoized.
    """

    def __init__(self, model: OneStepModel, inventory: Iterable[str], proposals_per_node: int) -> None:
        self.model = model
        self.inventory = frozenset(inventory)
        self.k = proposals_per_node
        self._memo: dict[tuple[str, int], float] = {}

    def __call__(self, mol: str, remaining_depth: int) -> float:
        if mol in self.inventory:
            return 0.0
        if remaining_depth <= 0:
            return math.inf
        key = (mol, remaining_depth)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        # cycles are never cheaper, so the recursion needs no path check;
        # the provisional inf also stops mol -> ... -> mol loops
        self._memo[key] = math.inf
        best = math.inf
        for o in propose_topk(self.model, mol, self.k):
            cost = -o.logp
            for r in o.reactants:
                cost += self(r, remaining_depth - 1)
                if cost >= best:
                    break
            best = min(best, cost)
        self._memo[key] = best
        return best


def retrostar_plan(
    target: str,
    model: OneStepModel,
    inventory: Iterable[str],
    value_fn: ValueFn | str,
    limits: SearchLimits,
) -> list[Route]:
    """Best-first search over partial routes (Retro*-style).

    Priority is the route's cost so far (``-log p``) plus ``value_fn`` summed
    over its open molecules. Each pop of an unfinished route counts as one
    expansion. Stops after ``beam_width`` finished routes or when the
    expansion budget is spent.
    """
    inventory = frozenset(inventory)
    _check_target(target, inventory)
    if isinstance(value_fn, str):
        if value_fn == "zero":
            value_fn = zero_value
        elif value_fn == "oracle":
            value_fn = OracleValue(model, inventory, limits.proposals_per_node)
        else:
            raise ValueError(f"unknown value function {value_fn!r}")

    def priority(s: _State) -> float:
        return -s.logp + sum(value_fn(o.mol, limits.max_depth - len(o.path)) for o in s.open)

    found: list[Route] = []
    expansions = 0
    counter = 0
    root = _root(target)
    heap = [(priority(root), root.key, counter, root)]
    while heap and len(found) < limits.beam_width:
        _, _, _, state = heapq.heappop(heap)
        if not state.open:
            found.append(state.to_route(target))
            continue
        if expansions >= limits.expansions_budget:
            break
        expansions += 1
        for child in _children(state, model, inventory, limits):
            f = priority(child)
            if math.isinf(f):
                continue
            counter += 1
            heapq.heappush(heap, (f, child.key, counter, child))
    return dedup_routes(sorted(found, key=lambda r: (-r.log_prob, r.key)))


class _BudgetSpent(Exception):
    pass


def greedy_dfs_plan(
    target: str, model: OneStepModel, inventory: Iterable[str], limits: SearchLimits
) -> Route | None:
    """Depth-first search taking proposals in rank order, backtracking on dead ends."""
    inventory = frozenset(inventory)
    _check_target(target, inventory)
    expansions = 0

    def dfs(state: _State) -> _State | None:
        nonlocal expansions
        if not state.open:
            return state
        for child in _children(state, model, inventory, limits):
            expansions += 1
            if expansions > limits.expansions_budget:
                raise _BudgetSpent
            done = dfs(child)
            if done is not None:
                return done
        return None

    try:
        result = dfs(_root(target))
    except _BudgetSpent:
        return None
    return result.to_route(target) if result is not None else None


def greedy_restarts_plan(
    target: str, model: OneStepModel, inventory: Iterable[str], limits: SearchLimits
) -> list[Route]:
    """Multi-restart greedy DFS: restart ``k`` forces the root's ``k``-th proposal."""
    inventory = frozenset(inventory)
    _check_target(target, inventory)
    routes = []
    for first in _children(_root(target), model, inventory, limits)[: limits.beam_width]:
        if not first.open:
            routes.append(first.to_route(target))
            continue
        expansions = 0

        def dfs(state: _State) -> _State | None:
            nonlocal expansions
            if not state.open:
                return state
            for child in _children(state, model, inventory, limits):
                expansions += 1
                if expansions > limits.expansions_budget:
                    raise _BudgetSpent
                done = dfs(child)
                if done is not None:
                    return done
            return None

        try:
            done = dfs(first)
        except _BudgetSpent:
            done = None
        if done is not None:
            routes.append(done.to_route(target))
    return dedup_routes(sorted(routes, key=lambda r: (-r.log_prob, r.key)))


class InconsistentRouteError(ValueError):
    pass


def route_log_prob(route: Route, model: OneStepModel) -> float:
    """Sum of the model's step log-probabilities over every reaction."""
    total = 0.0
    for s in route.steps:
        lp = step_log_prob(model, s.product, s.reactants, s.rule_id)
        if math.isinf(lp):
            raise InconsistentRouteError(f"step {s.product} -> {s.reactants} is not a model outcome")
        total += lp
    return total
