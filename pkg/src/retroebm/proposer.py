"""Template-classifier one-step retrosynthesis model.

``P(rule | product)`` is a softmax over the rules that apply to the product,
scored linearly from its fingerprint. A rule that splits the product in
``n`` distinct ways gives each outcome ``1/n`` of its mass, so the outcome
distribution of every product sums to one.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .molcore import DEFAULT_NBITS, DEFAULT_RADIUS, fingerprint_of
from .rxn import ReactionRecord, ReactionRule, apply_retro_rule

log = logging.getLogger(__name__)


class CorruptReactionError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0


@dataclass(frozen=True)
class Outcome:
    reactants: tuple[str, ...]
    rule_id: str
    logp: float

    @property
    def probability(self) -> float:
        return math.exp(self.logp)


@dataclass(eq=False)
class OneStepModel:
    rules: list[ReactionRule]
    weights: np.ndarray  # (num_rules, nbits)
    bias: np.ndarray  # (num_rules,)
    radius: int = DEFAULT_RADIUS
    nbits: int = DEFAULT_NBITS
    loss_history: list[float] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def zeros(cls, rules: Sequence[ReactionRule], radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS):
        return cls(list(rules), np.zeros((len(rules), nbits)), np.zeros(len(rules)), radius, nbits)

    @property
    def rule_ids(self) -> list[str]:
        return [r.id for r in self.rules]

    def logits(self, product: str) -> np.ndarray:
        bits = sorted(fingerprint_of(product, self.radius, self.nbits).bits)
        return self.weights[:, bits].sum(axis=1) + self.bias

    def outcomes(self, product: str) -> list[Outcome]:
        """Every outcome with its log-probability, best first."""
        hit = self._cache.get(product)
        if hit is not None:
            return hit
        per_rule = []
        for k, rule in enumerate(self.rules):
            sets = apply_retro_rule(rule, product)
            if sets:
                per_rule.append((k, rule, sets))
        if not per_rule:
            self._cache[product] = []
            return []
        z = self.logits(product)[[k for k, _, _ in per_rule]]
        log_norm = float(np.logaddexp.reduce(z))
        out = []
        for (k, rule, sets), zk in zip(per_rule, z):
            lp = float(zk) - log_norm - math.log(len(sets))
            out.extend(Outcome(rs, rule.id, lp) for rs in sets)
        out.sort(key=lambda o: (-o.logp, o.reactants, o.rule_id))
        self._cache[product] = out
        return out

    def to_json(self) -> dict:
        return {
            "radius": self.radius,
            "nbits": self.nbits,
            "rule_ids": self.rule_ids,
            "rules": [r.to_json() for r in self.rules],
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict, rules: Sequence[ReactionRule] | None = None) -> "OneStepModel":
        if rules is None:
            rules = [ReactionRule.from_json(r) for r in obj["rules"]]
        by_id = {r.id: r for r in rules}
        ordered = [by_id[i] for i in obj["rule_ids"]]
        return cls(
            ordered,
            np.asarray(obj["weights"], dtype=float),
            np.asarray(obj["bias"], dtype=float),
            int(obj["radius"]),
            int(obj["nbits"]),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path: str | Path, rules: Sequence[ReactionRule] | None = None) -> "OneStepModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh), rules)


def propose_topk(model: OneStepModel, product: str, k: int) -> list[Outcome]:
    """Top ``k`` reactant sets for ``product`` by probability."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return model.outcomes(product)[:k]


def step_log_prob(model: OneStepModel, product: str, reactants: Sequence[str], rule_id: str | None = None) -> float:
    """Log-probability of one retro step; ``-inf`` if no rule yields it.

    Without ``rule_id`` the mass of every rule producing the set is summed.
    """
    key = tuple(sorted(reactants))
    lps = [o.logp for o in model.outcomes(product) if o.reactants == key and (rule_id is None or o.rule_id == rule_id)]
    if not lps:
        return -math.inf
    if len(lps) == 1:
        return lps[0]
    return float(np.logaddexp.reduce(lps))


def _dataset(reactions: Sequence[ReactionRecord], rules: Sequence[ReactionRule], radius: int, nbits: int):
    index = {r.id: k for k, r in enumerate(rules)}
    n = len(reactions)
    X = np.zeros((n, nbits))
    mask = np.zeros((n, len(rules)), dtype=bool)
    y = np.zeros(n, dtype=np.int64)
    for i, rec in enumerate(reactions):
        if rec.rule_id not in index:
            raise CorruptReactionError(f"unknown rule {rec.rule_id!r}")
        X[i, sorted(fingerprint_of(rec.product, radius, nbits).bits)] = 1.0
        for k, rule in enumerate(rules):
            mask[i, k] = bool(apply_retro_rule(rule, rec.product))
        y[i] = index[rec.rule_id]
        if rec.reactants not in apply_retro_rule(rules[y[i]], rec.product):
            raise CorruptReactionError(f"rule {rec.rule_id} does not produce {rec.product} from {rec.reactants}")
    return X, mask, y


def _masked_ce(W, b, X, mask, y):
    z = X @ W.T + b
    z = np.where(mask, z, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    p = np.exp(z - zmax)
    p /= p.sum(axis=1, keepdims=True)
    rows = np.arange(len(y))
    loss = float(np.mean(-np.log(p[rows, y])))
    g = p
    g[rows, y] -= 1.0
    g /= len(y)
    return loss, g.T @ X, g.sum(axis=0)


def train_onestep(
    reactions: Sequence[ReactionRecord],
    rules: Sequence[ReactionRule],
    hyper: TrainConfig | None = None,
    radius: int = DEFAULT_RADIUS,
    nbits: int = DEFAULT_NBITS,
) -> OneStepModel:
    """Fit the rule classifier with mini-batch Adam from an all-zero start."""
    hyper = hyper or TrainConfig()
    if not reactions:
        raise ValueError("no reactions to train on")
    X, mask, y = _dataset(reactions, rules, radius, nbits)
    model = OneStepModel.zeros(rules, radius, nbits)
    W, b = model.weights, model.bias
    mW, vW = np.zeros_like(W), np.zeros_like(W)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    t = 0
    for epoch in range(hyper.epochs):
        perm = rng.permutation(len(y))
        for start in range(0, len(y), hyper.batch_size):
            idx = perm[start : start + hyper.batch_size]
            _, gW, gb = _masked_ce(W, b, X[idx], mask[idx], y[idx])
            t += 1
            for p, g, m, v in ((W, gW, mW, vW), (b, gb, mb, vb)):
                m *= hyper.beta1
                m += (1 - hyper.beta1) * g
                v *= hyper.beta2
                v += (1 - hyper.beta2) * g * g
                mhat = m / (1 - hyper.beta1**t)
                vhat = v / (1 - hyper.beta2**t)
                p -= hyper.lr * mhat / (np.sqrt(vhat) + hyper.eps)
        loss = _masked_ce(W, b, X, mask, y)[0]
        model.loss_history.append(loss)
        log.info("one-step epoch %d loss %.6f", epoch + 1, loss)
    return model
