import math

import numpy as np
import pytest

from retroebm.crebm import (
    EnergyModel,
    EnergyRegistry,
    EnergyTrainConfig,
    PreferencePair,
    RewardContext,
    bt_loss_and_grad,
    bt_loss_and_grad_arrays,
    build_preference_pairs,
    energy_score,
    feature_dim,
    load_pairs,
    pairs_for_target,
    phi_reward,
    rerank_routes,
    route_features,
    save_pairs,
    train_energy_detailed,
)
from retroebm.molcore import fingerprint_of, fingerprint_union
from retroebm.pipeline import plan_targets
from retroebm.route import Route, Step
from retroebm.rxn import DEFAULT_RULES, _site_signature
from retroebm.search import SearchLimits

CTX = RewardContext(tuple(DEFAULT_RULES))


@pytest.fixture(scope="module")
def samples(small_bench, small_model):
    limits = SearchLimits(beam_width=10, max_depth=3)
    return plan_targets(small_bench.splits["train"], small_model, small_bench.inventory, "beam", limits)


@pytest.fixture(scope="module")
def pairs(small_bench, small_model, samples):
    return build_preference_pairs(
        small_bench.splits["train"], small_bench.references, small_model, small_bench.inventory,
        "feasibility", CTX, samples=samples,
    )


def _random_pairs_arrays(rng, n, nbits):
    d = feature_dim(nbits)
    Xw = (rng.random((n, d)) < 0.1).astype(float)
    Xl = (rng.random((n, d)) < 0.1).astype(float)
    Xw[:, -3:] = rng.random((n, 3))
    Xl[:, -3:] = rng.random((n, 3))
    return Xw, Xl


# reward


def test_reference_scores_two(small_bench):
    for t in small_bench.splits["test"] + small_bench.splits["val"]:
        ref = small_bench.references[t][0]
        assert phi_reward(ref, t, ref.leaves, "feasibility", CTX) == 2.0


def test_disjoint_materials_score_zero():
    route = Route("CN", (Step("CN", ("BrBr", "II"), "r01"),))
    ref = {"CCl", "FN"}
    leaves_fp = fingerprint_union(sorted(route.leaves))
    # precondition: the leaves share no bit with the target or the reference leaves
    assert not leaves_fp.bits & fingerprint_of("CN").bits
    assert not leaves_fp.bits & fingerprint_union(sorted(ref)).bits
    assert phi_reward(route, "CN", ref, "feasibility", CTX) == 0.0


def test_sibling_swap_is_strictly_between(small_bench):
    inv = sorted(small_bench.inventory)
    checked = 0
    for t in small_bench.splits["train"]:
        ref = small_bench.references[t][0]
        leaf = sorted(ref.leaves)[0]
        sig = _site_signature(leaf)
        siblings = [m for m in inv if m != leaf and m not in ref.leaves and _site_signature(m) & sig]
        if not siblings:
            continue
        sub = siblings[0]
        steps = tuple(
            Step(s.product, tuple(sorted(sub if r == leaf else r for r in s.reactants)), s.rule_id) for s in ref.steps
        )
        v = phi_reward(Route(t, steps), t, ref.leaves, "feasibility", CTX)
        assert 0.0 < v < 2.0
        checked += 1
        if checked == 20:
            break
    assert checked > 5


def test_criteria_decompose(small_bench, samples):
    for t in small_bench.splits["train"][:20]:
        ref = small_bench.references[t][0]
        for r in samples[t][:3]:
            f = phi_reward(r, t, ref.leaves, "forward_feasibility", CTX)
            m = phi_reward(r, t, ref.leaves, "material_similarity", CTX)
            assert phi_reward(r, t, ref.leaves, "feasibility", CTX) == pytest.approx(f + m, abs=1e-12)
            assert phi_reward(r, t, ref.leaves, "shortest_route", CTX) == -r.num_reactions


def test_unknown_criterion(small_bench):
    t = small_bench.splits["test"][0]
    ref = small_bench.references[t][0]
    with pytest.raises(ValueError):
        phi_reward(ref, t, ref.leaves, "cost", CTX)


def test_material_term_needs_reference(small_bench):
    t = small_bench.splits["test"][0]
    ref = small_bench.references[t][0]
    with pytest.raises(ValueError):
        phi_reward(ref, t, [], "material_similarity", CTX)


# preference pairs


def test_identical_samples_give_no_pairs(small_bench):
    t = small_bench.splits["train"][0]
    ref = small_bench.references[t][0]
    assert pairs_for_target(t, ref, [ref] * 10, "feasibility", CTX) == []


def test_two_distinct_candidates_give_one_pair(small_bench, samples):
    for t in small_bench.splits["train"]:
        ref = small_bench.references[t][0]
        others = [r for r in samples.get(t, []) if phi_reward(r, t, ref.leaves, "feasibility", CTX) < 2.0 - 1e-6]
        if others:
            pairs = pairs_for_target(t, ref, others[:1], "feasibility", CTX)
            assert len(pairs) == 1
            assert pairs[0].winner == ref and pairs[0].phi_w > pairs[0].phi_l
            return
    pytest.fail("no target with a distinct sample")


def test_pair_invariants(pairs):
    per_target = {}
    for p in pairs:
        assert p.phi_w > p.phi_l + 1e-9
        per_target[p.target] = per_target.get(p.target, 0) + 1
    assert pairs and max(per_target.values()) <= 20


def test_pair_cap_keeps_largest_gaps(small_bench, samples):
    for t in small_bench.splits["train"]:
        ref = small_bench.references[t][0]
        full = pairs_for_target(t, ref, samples.get(t, []), "feasibility", CTX, max_pairs=10_000)
        if len(full) > 3:
            capped = pairs_for_target(t, ref, samples.get(t, []), "feasibility", CTX, max_pairs=3)
            gaps = sorted((p.phi_w - p.phi_l for p in full), reverse=True)
            assert [p.phi_w - p.phi_l for p in capped] == gaps[:3]
            return
    pytest.skip("no target with more than 3 pairs")


def test_pair_validation(small_bench):
    t = small_bench.splits["train"][0]
    ref = small_bench.references[t][0]
    with pytest.raises(ValueError):
        PreferencePair(t, ref, ref, 1.0, 1.0)


def test_pairs_reproducible_and_round_trip(tmp_path, small_bench, small_model, samples, pairs):
    again = build_preference_pairs(
        small_bench.splits["train"], small_bench.references, small_model, small_bench.inventory,
        "feasibility", CTX, samples=samples,
    )
    save_pairs(pairs, tmp_path / "a.jsonl")
    save_pairs(again, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    back = load_pairs(tmp_path / "a.jsonl")
    assert [(p.target, p.winner.key, p.loser.key, p.phi_w, p.phi_l) for p in back] == [
        (p.target, p.winner.key, p.loser.key, p.phi_w, p.phi_l) for p in pairs
    ]


def test_pairs_without_samples_run_beam(small_bench, small_model, samples):
    targets = small_bench.splits["train"][:15]
    direct = build_preference_pairs(
        targets, small_bench.references, small_model, small_bench.inventory, "feasibility", CTX,
        limits=SearchLimits(beam_width=10, max_depth=3),
    )
    cached = build_preference_pairs(
        targets, small_bench.references, small_model, small_bench.inventory, "feasibility", CTX, samples=samples
    )
    assert [(p.winner.key, p.loser.key) for p in direct] == [(p.winner.key, p.loser.key) for p in cached]


# energy


def test_zero_energy(small_bench):
    model = EnergyModel.zeros()
    for t in small_bench.splits["test"][:10]:
        for r in small_bench.references[t]:
            assert energy_score(model, r, t) == 0.0


def test_energy_ignores_interior(small_bench):
    rng = np.random.default_rng(0)
    model = EnergyModel.uniform(rng, scale=0.5)
    ref = None
    for t in small_bench.splits["train"]:
        if len(small_bench.references[t]) > 1:
            ref = small_bench.references[t]
            break
    assert ref is not None
    a, b = ref[0], ref[1]
    if a.leaves == b.leaves and a.depth == b.depth:
        assert energy_score(model, a) == energy_score(model, b)
    # same target, same leaves and same depth through a renamed interior step
    fake = Route(a.target, tuple(Step(s.product, s.reactants, "other") for s in a.steps))
    assert energy_score(model, fake) == energy_score(model, a)


def test_feature_layout(small_bench):
    t = small_bench.splits["test"][0]
    r = small_bench.references[t][0]
    x = route_features(r, t, 64)
    assert x.shape == (feature_dim(64),)
    assert set(np.unique(x[:128])) <= {0.0, 1.0}
    assert x[128] == pytest.approx(
        len(fingerprint_of(t, 2, 64).bits & fingerprint_union(sorted(r.leaves), 2, 64).bits)
        / len(fingerprint_of(t, 2, 64).bits | fingerprint_union(sorted(r.leaves), 2, 64).bits)
    )
    assert x[129] == len(r.leaves) / 8 and x[130] == r.depth / 8


def test_energy_validation():
    with pytest.raises(ValueError):
        EnergyModel.zeros(criterion="cost")
    with pytest.raises(ValueError):
        EnergyModel("feasibility", np.zeros((32, 10)), np.zeros(32), np.zeros(32), 0.0, 64)


def test_energy_round_trip(tmp_path):
    m = EnergyModel.uniform(np.random.default_rng(1), nbits=64)
    m.save(tmp_path / "e.json")
    back = EnergyModel.load(tmp_path / "e.json")
    for p, q in zip(m.params(), back.params()):
        assert np.array_equal(p, q)


def test_registry():
    reg = EnergyRegistry()
    reg.register(EnergyModel.zeros("shortest_route", nbits=64))
    assert reg["shortest_route"].criterion == "shortest_route"


# Bradley-Terry loss


def test_loss_at_zero_is_ln2():
    Xw, Xl = _random_pairs_arrays(np.random.default_rng(0), 17, 64)
    loss, grads = bt_loss_and_grad_arrays(EnergyModel.zeros(nbits=64), Xw, Xl, l2=0.0)
    assert abs(loss - math.log(2.0)) < 1e-12
    assert all(g.shape == p.shape for g, p in zip(grads, EnergyModel.zeros(nbits=64).params()))


def _fd_check(rng, nbits, l2):
    model = EnergyModel.uniform(rng, nbits=nbits, scale=0.3)
    Xw, Xl = _random_pairs_arrays(rng, 6, nbits)
    _, grads = bt_loss_and_grad_arrays(model, Xw, Xl, l2)
    params = model.params()
    analytic, numeric = [], []
    h = 1e-5
    for k, p in enumerate(params):
        flat = p.reshape(-1)
        idx = range(flat.size) if flat.size <= 300 else rng.choice(flat.size, 300, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = bt_loss_and_grad_arrays(model.with_params(params), Xw, Xl, l2)[0]
            flat[i] = old - h
            down = bt_loss_and_grad_arrays(model.with_params(params), Xw, Xl, l2)[0]
            flat[i] = old
            numeric.append((up - down) / (2 * h))
            analytic.append(grads[k].reshape(-1)[i])
    a, n = np.array(analytic), np.array(numeric)
    return np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-30)


@pytest.mark.parametrize("l2", [0.0, 1e-2])
def test_gradient_matches_finite_differences(l2):
    rng = np.random.default_rng(123)
    worst = max(_fd_check(rng, 32, l2) for _ in range(10))
    assert worst < 1e-5


def test_loss_vanishes_as_margin_grows():
    # one hidden unit reads a bit only the loser has; scaling its output weight
    # raises E(loser) - E(winner)
    d = feature_dim(64)
    Xw, Xl = np.zeros((1, d)), np.zeros((1, d))
    Xl[0, 5] = 1.0
    prev = math.inf
    for s in (0.0, 1.0, 5.0, 20.0, 80.0):
        m = EnergyModel.zeros(nbits=64)
        m.w1[0, 5] = 1.0
        m.w2[0] = s
        loss = bt_loss_and_grad_arrays(m, Xw, Xl, l2=0.0)[0]
        assert loss < prev
        prev = loss
    assert prev < 1e-20


def test_bt_on_pairs_and_empty_batch(pairs):
    model = EnergyModel.zeros()
    loss, _ = bt_loss_and_grad(model, pairs[:8], l2=0.0)
    assert abs(loss - math.log(2.0)) < 1e-12
    with pytest.raises(ValueError):
        bt_loss_and_grad(model, [])


# training


def test_training_basics(pairs):
    res = train_energy_detailed(pairs, EnergyTrainConfig(epochs=5, seed=3))
    assert abs(res.initial_loss - math.log(2.0)) < 0.05
    assert len(res.train_loss) == 5
    assert 0 <= res.best_epoch < 5
    assert res.heldout_accuracy[res.best_epoch] == max(res.heldout_accuracy)
    again = train_energy_detailed(pairs, EnergyTrainConfig(epochs=5, seed=3))
    for p, q in zip(res.model.params(), again.model.params()):
        assert np.array_equal(p, q)


def test_training_needs_pairs():
    with pytest.raises(ValueError):
        train_energy_detailed([])


# reranking


def test_zero_energy_keeps_base_order(samples):
    zero = EnergyModel.zeros()
    for t, cands in list(samples.items())[:30]:
        if cands:
            assert rerank_routes(cands, zero) == sorted(cands, key=lambda r: (-r.log_prob, r.key))


def test_rerank_contract(samples):
    rng = np.random.default_rng(5)
    model = EnergyModel.uniform(rng, scale=0.3)
    shifted = EnergyModel(model.criterion, model.w1, model.b1, model.w2, model.b2 + 7.5)
    for t, cands in list(samples.items())[:30]:
        if not cands:
            continue
        ranked = rerank_routes(cands, model)
        scores = [-r.log_prob + energy_score(model, r) for r in ranked]
        assert scores[0] == min(scores)
        assert [r.key for r in rerank_routes(cands, shifted)] == [r.key for r in ranked]


def test_rerank_errors(samples):
    with pytest.raises(ValueError):
        rerank_routes([], EnergyModel.zeros())
    route = next(r for rs in samples.values() for r in rs)
    with pytest.raises(ValueError):
        rerank_routes([route.with_log_prob(-math.inf)], EnergyModel.zeros())
    with pytest.raises(ValueError):
        rerank_routes([route], EnergyModel.zeros(), mode="sideways")
