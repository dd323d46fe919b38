"""Conditional residual energy reranking of synthetic routes.

The joint model scores a route ``T`` for target ``m`` under criterion ``c``
as ``P_base(T | m) * exp(-E(T | m, c))``. Only ``E`` is learned: it is
fitted on route pairs ordered by a heuristic reward, with the
Bradley-Terry log-likelihood ``log sigmoid(E(T_l) - E(T_w))``. The
normalizer never has to be computed because inference only ranks a fixed
candidate set by ``-log P_base + E``.

The energy is a one-hidden-layer tanh network over
``[fp(target) | fp(leaves) | tanimoto | n_leaves / 8 | depth / 8]``;
intermediate molecules are deliberately not seen.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .molcore import DEFAULT_NBITS, DEFAULT_RADIUS, fingerprint_of, fingerprint_union, tanimoto
from .proposer import OneStepModel
from .route import Route, dedup_routes
from .rxn import ReactionRule, forward_oracle
from .search import SearchLimits, beam_search_plan

log = logging.getLogger(__name__)

PAIR_EPS = 1e-9
HIDDEN = 32
CRITERIA = ("feasibility", "material_similarity", "forward_feasibility", "shortest_route")


# --------------------------------------------------------------------------
# reward


@dataclass(frozen=True)
class RewardContext:
    """What a reward needs besides the route: rules and fingerprint config."""

    rules: tuple[ReactionRule, ...]
    radius: int = DEFAULT_RADIUS
    nbits: int = DEFAULT_NBITS
    oracle_width: int = 512
    weights: tuple[float, float] = (1.0, 1.0)


def _forward_term(route: Route, target: str, ctx: RewardContext) -> float:
    produced = forward_oracle(
        sorted(route.leaves), target, ctx.rules, depth_limit=route.depth, width=ctx.oracle_width,
        radius=ctx.radius, nbits=ctx.nbits,
    )
    return tanimoto(fingerprint_of(produced, ctx.radius, ctx.nbits), fingerprint_of(target, ctx.radius, ctx.nbits))


def _material_term(route: Route, ref_materials: Iterable[str], ctx: RewardContext) -> float:
    ref = sorted(ref_materials)
    if not ref:
        raise ValueError("material similarity needs reference materials")
    return tanimoto(
        fingerprint_union(sorted(route.leaves), ctx.radius, ctx.nbits),
        fingerprint_union(ref, ctx.radius, ctx.nbits),
    )


def _feasibility(route, target, ref, ctx):
    wf, wm = ctx.weights
    return wf * _forward_term(route, target, ctx) + wm * _material_term(route, ref, ctx)


REWARDS: dict[str, Callable[[Route, str, Iterable[str], RewardContext], float]] = {
    "feasibility": _feasibility,
    "forward_feasibility": lambda route, target, ref, ctx: _forward_term(route, target, ctx),
    "material_similarity": lambda route, target, ref, ctx: _material_term(route, ref, ctx),
    "shortest_route": lambda route, target, ref, ctx: -float(route.num_reactions),
}


def phi_reward(route: Route, target: str, ref_materials: Iterable[str], criterion: str, ctx: RewardContext) -> float:
    """Heuristic route reward; higher means the route better meets ``criterion``.

    ``feasibility`` adds the similarity of the forward-simulated product to
    the target and the similarity of the leaves to the reference leaves.
    """
    try:
        fn = REWARDS[criterion]
    except KeyError:
        raise ValueError(f"unknown criterion {criterion!r}") from None
    return fn(route, target, ref_materials, ctx)


# --------------------------------------------------------------------------
# preference pairs


@dataclass(frozen=True)
class PreferencePair:
    target: str
    winner: Route
    loser: Route
    phi_w: float
    phi_l: float

    def __post_init__(self) -> None:
        if not self.phi_w > self.phi_l + PAIR_EPS:
            raise ValueError("winner must have strictly larger reward")

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "winner": self.winner.to_json(),
            "loser": self.loser.to_json(),
            "phi_w": self.phi_w,
            "phi_l": self.phi_l,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PreferencePair":
        return cls(obj["target"], Route.from_json(obj["winner"]), Route.from_json(obj["loser"]), obj["phi_w"], obj["phi_l"])


def pairs_for_target(
    target: str,
    reference: Route,
    samples: Sequence[Route],
    criterion: str,
    ctx: RewardContext,
    max_pairs: int = 20,
) -> list[PreferencePair]:
    """Rank ``{reference} | samples`` by reward and emit gap-positive pairs.

    Every ordered pair whose reward gap exceeds ``PAIR_EPS`` qualifies; the
    ``max_pairs`` with the largest gaps are kept.
    """
    candidates = dedup_routes([reference, *samples])
    ref_leaves = sorted(reference.leaves)
    scored = [(phi_reward(r, target, ref_leaves, criterion, ctx), r) for r in candidates]
    scored.sort(key=lambda x: (-x[0], x[1].key))
    ref_phi = scored[[r for _, r in scored].index(reference)][0]
    if scored[0][0] > ref_phi + PAIR_EPS:
        log.warning("reference route for %s is outscored under %s", target, criterion)
    pairs = []
    for i, (pw, w) in enumerate(scored):
        for pl, l in scored[i + 1 :]:
            if pw > pl + PAIR_EPS:
                pairs.append((pw - pl, w, l, pw, pl))
    pairs.sort(key=lambda x: (-x[0], x[1].key, x[2].key))
    return [PreferencePair(target, w, l, pw, pl) for _, w, l, pw, pl in pairs[:max_pairs]]


def build_preference_pairs(
    targets: Sequence[str],
    references: dict[str, list[Route]],
    model: OneStepModel,
    inventory: Iterable[str],
    criterion: str,
    ctx: RewardContext,
    k_samples: int = 10,
    limits: SearchLimits | None = None,
    samples: dict[str, list[Route]] | None = None,
) -> list[PreferencePair]:
    """Preference dataset from each target's reference and sampled routes.

    Samples are the top ``k_samples`` beam-search routes unless precomputed
    ``samples`` are passed in.
    """
    inventory = frozenset(inventory)
    limits = limits or SearchLimits(beam_width=k_samples)
    out: list[PreferencePair] = []
    for target in sorted(targets):
        refs = references.get(target)
        if not refs:
            continue
        if samples is not None:
            cand = samples.get(target, [])[:k_samples]
        else:
            cand = beam_search_plan(target, model, inventory, limits)[:k_samples]
        out.extend(pairs_for_target(target, refs[0], cand, criterion, ctx))
    return out


def save_pairs(pairs: Iterable[PreferencePair], path: str | Path) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_json(), sort_keys=True) + "\n")


def load_pairs(path: str | Path) -> list[PreferencePair]:
    with open(path) as fh:
        return [PreferencePair.from_json(json.loads(line)) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# energy model


@dataclass(eq=False)
class EnergyModel:
    criterion: str
    w1: np.ndarray  # (hidden, feature_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float
    nbits: int = DEFAULT_NBITS
    radius: int = DEFAULT_RADIUS

    def __post_init__(self) -> None:
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.w1.shape[1] != feature_dim(self.nbits):
            raise ValueError("w1 does not match the feature layout")

    @classmethod
    def zeros(cls, criterion: str = "feasibility", nbits: int = DEFAULT_NBITS, hidden: int = HIDDEN, radius: int = DEFAULT_RADIUS):
        return cls(criterion, np.zeros((hidden, feature_dim(nbits))), np.zeros(hidden), np.zeros(hidden), 0.0, nbits, radius)

    @classmethod
    def uniform(cls, rng: np.random.Generator, criterion: str = "feasibility", nbits: int = DEFAULT_NBITS,
                hidden: int = HIDDEN, scale: float = 0.05, radius: int = DEFAULT_RADIUS):
        d = feature_dim(nbits)
        return cls(
            criterion,
            rng.uniform(-scale, scale, (hidden, d)),
            rng.uniform(-scale, scale, hidden),
            rng.uniform(-scale, scale, hidden),
            float(rng.uniform(-scale, scale)),
            nbits,
            radius,
        )

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, np.array([self.b2])]

    def with_params(self, params: Sequence[np.ndarray]) -> "EnergyModel":
        w1, b1, w2, b2 = params
        return EnergyModel(self.criterion, w1.copy(), b1.copy(), w2.copy(), float(b2[0]), self.nbits, self.radius)

    def energies(self, X: np.ndarray) -> np.ndarray:
        return np.tanh(X @ self.w1.T + self.b1) @ self.w2 + self.b2

    def to_json(self) -> dict:
        return {
            "criterion": self.criterion,
            "nbits": self.nbits,
            "radius": self.radius,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EnergyModel":
        return cls(
            obj["criterion"],
            np.asarray(obj["w1"], dtype=float),
            np.asarray(obj["b1"], dtype=float),
            np.asarray(obj["w2"], dtype=float),
            float(obj["b2"]),
            int(obj["nbits"]),
            int(obj.get("radius", DEFAULT_RADIUS)),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path: str | Path) -> "EnergyModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


class EnergyRegistry(dict):
    """One trained energy head per criterion."""

    def register(self, model: EnergyModel) -> None:
        self[model.criterion] = model


def feature_dim(nbits: int) -> int:
    return 2 * nbits + 3


def route_features(route: Route, target: str, nbits: int = DEFAULT_NBITS, radius: int = DEFAULT_RADIUS) -> np.ndarray:
    x = np.zeros(feature_dim(nbits))
    fp_t = fingerprint_of(target, radius, nbits)
    fp_b = fingerprint_union(sorted(route.leaves), radius, nbits)
    x[sorted(fp_t.bits)] = 1.0
    x[[nbits + b for b in sorted(fp_b.bits)]] = 1.0
    x[2 * nbits] = tanimoto(fp_t, fp_b)
    x[2 * nbits + 1] = len(route.leaves) / 8.0
    x[2 * nbits + 2] = route.depth / 8.0
    return x


def energy_score(model: EnergyModel, route: Route, target: str | None = None) -> float:
    """``E(route | target)`` for a complete route."""
    target = route.target if target is None else target
    x = route_features(route, target, model.nbits, model.radius)
    return float(model.energies(x[None, :])[0])


def _pair_matrices(model: EnergyModel, batch: Sequence[PreferencePair]) -> tuple[np.ndarray, np.ndarray]:
    Xw = np.stack([route_features(p.winner, p.target, model.nbits, model.radius) for p in batch])
    Xl = np.stack([route_features(p.loser, p.target, model.nbits, model.radius) for p in batch])
    return Xw, Xl


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bt_loss_and_grad_arrays(
    model: EnergyModel, Xw: np.ndarray, Xl: np.ndarray, l2: float = 1e-4
) -> tuple[float, list[np.ndarray]]:
    """Bradley-Terry loss and exact gradient on precomputed features.

    ``L = mean(softplus(E_w - E_l)) + l2 * ||theta||^2`` which equals
    ``-mean(log sigmoid(-E_w + E_l))`` plus the penalty.
    """
    if len(Xw) == 0:
        raise ValueError("empty batch")
    hw = np.tanh(Xw @ model.w1.T + model.b1)
    hl = np.tanh(Xl @ model.w1.T + model.b1)
    ew = hw @ model.w2 + model.b2
    el = hl @ model.w2 + model.b2
    margin = ew - el
    n = len(Xw)
    loss = float(np.mean(_softplus(margin)))
    # dL/dE_w = sigmoid(margin) / n, dL/dE_l = -dL/dE_w
    g = _sigmoid(margin) / n
    g_w2 = hw.T @ g - hl.T @ g
    # b2 cancels in the margin
    g_b2 = np.zeros(1)
    dw = np.outer(g, model.w2) * (1.0 - hw**2)
    dl = np.outer(-g, model.w2) * (1.0 - hl**2)
    g_w1 = dw.T @ Xw + dl.T @ Xl
    g_b1 = dw.sum(axis=0) + dl.sum(axis=0)
    grads = [g_w1, g_b1, g_w2, g_b2]
    if l2:
        params = model.params()
        loss += l2 * float(sum(np.sum(p * p) for p in params))
        grads = [g + 2.0 * l2 * p for g, p in zip(grads, params)]
    return loss, grads


def bt_loss_and_grad(
    model: EnergyModel, batch: Sequence[PreferencePair], l2: float = 1e-4
) -> tuple[float, list[np.ndarray]]:
    """Bradley-Terry loss over preference pairs and its gradient w.r.t. ``[w1, b1, w2, b2]``."""
    if not batch:
        raise ValueError("empty batch")
    Xw, Xl = _pair_matrices(model, batch)
    return bt_loss_and_grad_arrays(model, Xw, Xl, l2)


@dataclass
class EnergyTrainConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 40
    l2: float = 1e-4
    holdout: float = 0.1
    init_scale: float = 0.05
    seed: int = 0


@dataclass
class EnergyTrainResult:
    model: EnergyModel
    train_loss: list[float] = field(default_factory=list)
    heldout_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1
    initial_loss: float = math.nan


def _pair_accuracy(model: EnergyModel, Xw: np.ndarray, Xl: np.ndarray) -> float:
    if len(Xw) == 0:
        return math.nan
    return float(np.mean(model.energies(Xw) < model.energies(Xl)))


def train_energy_detailed(
    pairs: Sequence[PreferencePair],
    hyper: EnergyTrainConfig | None = None,
    criterion: str = "feasibility",
    nbits: int = DEFAULT_NBITS,
    radius: int = DEFAULT_RADIUS,
) -> EnergyTrainResult:
    hyper = hyper or EnergyTrainConfig()
    if not pairs:
        raise ValueError("no preference pairs")
    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    model = EnergyModel.uniform(rng, criterion, nbits, HIDDEN, hyper.init_scale, radius)
    Xw, Xl = _pair_matrices(model, pairs)
    order = rng.permutation(len(pairs))
    n_hold = int(round(hyper.holdout * len(pairs))) if len(pairs) >= 10 else 0
    hold, train = order[:n_hold], order[n_hold:]
    Xw_tr, Xl_tr = Xw[train], Xl[train]
    Xw_ho, Xl_ho = Xw[hold], Xl[hold]

    params = model.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    result = EnergyTrainResult(model=model)
    result.initial_loss = bt_loss_and_grad_arrays(model, Xw_tr, Xl_tr, 0.0)[0]
    best_acc = -math.inf
    best = model.with_params(params)
    t = 0
    for epoch in range(hyper.epochs):
        perm = rng.permutation(len(train))
        for start in range(0, len(train), hyper.batch_size):
            idx = perm[start : start + hyper.batch_size]
            current = model.with_params(params)
            _, grads = bt_loss_and_grad_arrays(current, Xw_tr[idx], Xl_tr[idx], hyper.l2)
            t += 1
            for p, g, mm, vv in zip(params, grads, m, v):
                mm *= hyper.beta1
                mm += (1 - hyper.beta1) * g
                vv *= hyper.beta2
                vv += (1 - hyper.beta2) * g * g
                p -= hyper.lr * (mm / (1 - hyper.beta1**t)) / (np.sqrt(vv / (1 - hyper.beta2**t)) + hyper.eps)
        current = model.with_params(params)
        loss = bt_loss_and_grad_arrays(current, Xw_tr, Xl_tr, 0.0)[0]
        acc = _pair_accuracy(current, Xw_ho, Xl_ho) if n_hold else _pair_accuracy(current, Xw_tr, Xl_tr)
        result.train_loss.append(loss)
        result.heldout_accuracy.append(acc)
        log.info("energy epoch %d loss %.6f heldout-acc %.4f", epoch + 1, loss, acc)
        if acc > best_acc:
            best_acc = acc
            best = current
            result.best_epoch = epoch
    result.model = best
    return result


def train_energy(
    pairs: Sequence[PreferencePair],
    hyper: EnergyTrainConfig | None = None,
    criterion: str = "feasibility",
    nbits: int = DEFAULT_NBITS,
) -> EnergyModel:
    """Fit ``E`` with Adam; returns the epoch with the best held-out pair accuracy."""
    return train_energy_detailed(pairs, hyper, criterion, nbits).model


# --------------------------------------------------------------------------
# inference


def rank_scores(candidates: Sequence[Route], model: EnergyModel | None, mode: str = "residual") -> list[float]:
    """Ranking scores (lower is better) for the ablation modes.

    ``base``: ``-log P``; ``residual``: ``-log P + E``; ``energy``: ``E``;
    ``inverted``: ``-log P - E``.
    """
    energies = [energy_score(model, r) if model is not None else 0.0 for r in candidates]
    if mode == "base":
        return [-r.log_prob for r in candidates]
    if mode == "residual":
        return [-r.log_prob + e for r, e in zip(candidates, energies)]
    if mode == "energy":
        return energies
    if mode == "inverted":
        return [-r.log_prob - e for r, e in zip(candidates, energies)]
    raise ValueError(f"unknown ranking mode {mode!r}")


def rerank_routes(candidates: Sequence[Route], model: EnergyModel, mode: str = "residual") -> list[Route]:
    """Sort candidates ascending by ``-log P(T) + E(T)`` (ties: route key)."""
    if not candidates:
        raise ValueError("no candidates to rerank")
    for r in candidates:
        if not math.isfinite(r.log_prob):
            raise ValueError("candidate without a finite log-probability")
    scores = rank_scores(candidates, model, mode)
    order = sorted(range(len(candidates)), key=lambda i: (scores[i], candidates[i].key))
    return [candidates[i] for i in order]
