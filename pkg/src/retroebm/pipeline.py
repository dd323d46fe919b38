"""Staged end-to-end experiment with content-addressed intermediates.

Every stage writes into ``<workdir>/<stage>-<key>/`` where ``key`` hashes the
stage name, its parameters and the keys of the stages it reads. A directory
holding a ``DONE`` marker is reused as is, so changing one knob only re-runs
the stages downstream of it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .benchmark import Benchmark, BenchmarkConfig, generate_benchmark
from .crebm import (
    EnergyModel,
    EnergyTrainConfig,
    RewardContext,
    build_preference_pairs,
    load_pairs,
    save_pairs,
    train_energy_detailed,
)
from .metrics import evaluate_topk, rerank_pool, run_ablation, write_report
from .proposer import OneStepModel, TrainConfig, train_onestep
from .route import Route
from .rxn import ReactionRecord
from .search import SearchLimits, beam_search_plan, greedy_restarts_plan, retrostar_plan

log = logging.getLogger(__name__)

PLANNERS = ("beam", "retrostar", "retrostar_oracle", "greedy")


@dataclass
class PipelineConfig:
    seed: int = 17
    benchmark: dict = field(default_factory=dict)
    onestep: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)
    criterion: str = "feasibility"
    k_samples: int = 10
    kmax: int = 5
    second_planner: str = "retrostar_oracle"

    def __post_init__(self) -> None:
        if self.second_planner not in PLANNERS:
            raise ValueError(f"unknown planner {self.second_planner!r}")
        # validate the nested sections early
        BenchmarkConfig(**self.benchmark)
        TrainConfig(**self.onestep)
        SearchLimits(**self.search)
        EnergyTrainConfig(**self.energy)

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


# --------------------------------------------------------------------------
# shared helpers (also used by the CLI)


def training_reactions(bench: Benchmark) -> list[ReactionRecord]:
    """Distinct reactions on the reference routes of training targets."""
    seen = set()
    for target in bench.splits["train"]:
        for route in bench.references[target]:
            for s in route.steps:
                seen.add((s.product, s.reactants, s.rule_id))
    return [ReactionRecord(p, r, rid) for p, r, rid in sorted(seen)]


def plan_targets(
    targets: Sequence[str],
    model: OneStepModel,
    inventory: Iterable[str],
    algo: str,
    limits: SearchLimits,
    k: int | None = None,
) -> dict[str, list[Route]]:
    """Candidate routes per target, best first, truncated to ``k``."""
    inventory = frozenset(inventory)
    if algo == "beam":
        fn: Callable[[str], list[Route]] = lambda t: beam_search_plan(t, model, inventory, limits)
    elif algo == "retrostar":
        fn = lambda t: retrostar_plan(t, model, inventory, "zero", limits)
    elif algo == "retrostar_oracle":
        from .search import OracleValue

        value = OracleValue(model, inventory, limits.proposals_per_node)
        fn = lambda t: retrostar_plan(t, model, inventory, value, limits)
    elif algo == "greedy":
        fn = lambda t: greedy_restarts_plan(t, model, inventory, limits)
    else:
        raise ValueError(f"unknown planner {algo!r}")
    k = k if k is not None else limits.beam_width
    return {t: fn(t)[:k] for t in sorted(targets)}


def save_routes(plans: Mapping[str, Sequence[Route]], path: str | Path) -> None:
    with open(path, "w") as fh:
        for target in sorted(plans):
            for route in plans[target]:
                fh.write(route.dumps() + "\n")


def load_routes(path: str | Path) -> dict[str, list[Route]]:
    """Routes grouped by target in file order (the file order is the ranking)."""
    out: dict[str, list[Route]] = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                route = Route.from_json(json.loads(line))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{n}: malformed route ({exc})") from None
            out.setdefault(route.target, []).append(route)
    return out


# --------------------------------------------------------------------------
# staging


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Stages:
    def __init__(self, workdir: str | Path) -> None:
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)

    def run(self, name: str, params: dict, inputs: Sequence[str], build: Callable[[Path], None]) -> tuple[Path, str]:
        key = _digest({"stage": name, "params": params, "inputs": list(inputs)})
        path = self.workdir / f"{name}-{key}"
        if (path / "DONE").exists():
            log.info("stage %s: cached at %s", name, path.name)
            return path, key
        if path.exists():
            shutil.rmtree(path)
        tmp = self.workdir / f".{name}-{key}.tmp"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir()
        log.info("stage %s: building %s", name, path.name)
        build(tmp)
        (tmp / "DONE").write_text(key + "\n")
        tmp.rename(path)
        return path, key


@dataclass
class PipelineResult:
    summary: dict
    report_dir: Path


def run_pipeline(config: PipelineConfig, workdir: str | Path, report_dir: str | Path | None = None) -> PipelineResult:
    """Benchmark -> one-step model -> planning -> preferences -> energy -> reports."""
    st = Stages(workdir)
    report_dir = Path(report_dir) if report_dir is not None else Path(workdir) / "reports"
    limits = SearchLimits(**config.search)
    bcfg = BenchmarkConfig(**config.benchmark)

    bench_dir, bench_key = st.run(
        "benchmark", {"config": asdict(bcfg), "seed": config.seed}, [],
        lambda out: generate_benchmark(bcfg, config.seed).save(out),
    )
    bench = Benchmark.load(bench_dir)

    hyper = TrainConfig(**{"seed": config.seed, **config.onestep})

    def _train(out: Path) -> None:
        train_onestep(training_reactions(bench), bench.rules, hyper).save(out / "model.json")

    model_dir, model_key = st.run("onestep", asdict(hyper), [bench_key], _train)
    model = OneStepModel.load(model_dir / "model.json")

    def _plan(split: str, algo: str) -> tuple[dict[str, list[Route]], str]:
        def build(out: Path) -> None:
            save_routes(plan_targets(bench.splits[split], model, bench.inventory, algo, limits), out / "routes.jsonl")

        d, key = st.run(f"plan-{algo}-{split}", {"limits": asdict(limits)}, [bench_key, model_key], build)
        return load_routes(d / "routes.jsonl"), key

    train_plans, train_plan_key = _plan("train", "beam")
    test_plans, test_plan_key = _plan("test", "beam")

    ctx = RewardContext(tuple(bench.rules))

    def _prefs(out: Path) -> None:
        pairs = build_preference_pairs(
            bench.splits["train"], bench.references, model, bench.inventory, config.criterion, ctx,
            k_samples=config.k_samples, samples=train_plans,
        )
        save_pairs(pairs, out / "prefs.jsonl")

    prefs_dir, prefs_key = st.run(
        "prefs", {"criterion": config.criterion, "k_samples": config.k_samples, "oracle_width": ctx.oracle_width},
        [bench_key, train_plan_key], _prefs,
    )
    pairs = load_pairs(prefs_dir / "prefs.jsonl")

    ehyper = EnergyTrainConfig(**{"seed": config.seed, **config.energy})

    def _energy(out: Path) -> None:
        res = train_energy_detailed(pairs, ehyper, config.criterion)
        res.model.save(out / "energy.json")
        with open(out / "trace.json", "w") as fh:
            json.dump(
                {
                    "initial_loss": res.initial_loss,
                    "train_loss": res.train_loss,
                    "heldout_accuracy": res.heldout_accuracy,
                    "best_epoch": res.best_epoch,
                },
                fh, indent=1,
            )

    energy_dir, _ = st.run("energy", asdict(ehyper), [prefs_key], _energy)
    energy = EnergyModel.load(energy_dir / "energy.json")
    trace = json.loads((energy_dir / "trace.json").read_text())

    test = bench.splits["test"]
    refs = {t: bench.references[t] for t in test}
    ablation = run_ablation(test_plans, energy, refs, test, config.kmax)
    write_report(ablation, report_dir / "ablation")
    write_report(ablation["base"], report_dir / "eval_base")
    write_report(ablation["residual"], report_dir / "eval_reranked")

    second_plans, _ = _plan("test", config.second_planner)
    second_base = evaluate_topk(rerank_pool(second_plans, energy, "base"), refs, test, config.kmax, "base")
    second_res = evaluate_topk(rerank_pool(second_plans, energy, "residual"), refs, test, config.kmax, "residual")
    second_res.delta = {k: round(second_res.topk[k] - second_base.topk[k], 4) for k in second_res.topk}
    write_report({"base": second_base, "residual": second_res}, report_dir / f"plug_{config.second_planner}")

    base, res = ablation["base"], ablation["residual"]
    summary = {
        "seed": config.seed,
        "splits": {k: len(v) for k, v in bench.splits.items()},
        "n_pairs": len(pairs),
        "energy": {
            "initial_loss": trace["initial_loss"],
            "best_epoch": trace["best_epoch"],
            "best_heldout_accuracy": max(trace["heldout_accuracy"]),
        },
        "top1": {mode: rep.topk[1] for mode, rep in ablation.items()},
        "topk": {mode: {str(k): v for k, v in rep.topk.items()} for mode, rep in ablation.items()},
        "depth_top1": {
            str(d): {"n": n, "base": acc, "residual": res.depth_top1[d][1], "delta": round(res.depth_top1[d][1] - acc, 4)}
            for d, (n, acc) in base.depth_top1.items()
        },
        "plug_and_play": {
            "planner": config.second_planner,
            "base_top1": second_base.topk[1],
            "residual_top1": second_res.topk[1],
            "delta": round(second_res.topk[1] - second_base.topk[1], 4),
        },
    }
    report_dir.mkdir(parents=True, exist_ok=True)
    with open(report_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return PipelineResult(summary, report_dir)
