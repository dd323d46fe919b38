"""Command-line entry point: ``retroebm <subcommand> ...``.

Exit status is 0 on success and 2 when inputs fail validation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .benchmark import Benchmark, BenchmarkConfig, InfeasibleConfigError, generate_benchmark
from .crebm import (
    CRITERIA,
    EnergyModel,
    EnergyTrainConfig,
    RewardContext,
    build_preference_pairs,
    load_pairs,
    save_pairs,
    train_energy,
)
from .metrics import ABLATION_MODES, evaluate_topk, rerank_pool, run_ablation, write_report
from .molcore import SmilesError
from .pipeline import (
    PipelineConfig,
    load_routes,
    plan_targets,
    run_pipeline,
    save_routes,
    training_reactions,
)
from .proposer import CorruptReactionError, OneStepModel, TrainConfig, train_onestep
from .search import SearchLimits

EXIT_INVALID = 2


class ValidationError(Exception):
    pass


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return obj


def _report_prefix(path: str) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".csv") else p


def _split(bench: Benchmark, name: str) -> list[str]:
    if name not in bench.splits:
        raise ValidationError(f"unknown split {name!r}; have {sorted(bench.splits)}")
    return bench.splits[name]


def cmd_gen_benchmark(args) -> None:
    cfg = BenchmarkConfig(**_read_json(args.config))
    bench = generate_benchmark(cfg, args.seed)
    bench.save(args.out)
    print(json.dumps({k: len(v) for k, v in bench.splits.items()}))


def cmd_train_onestep(args) -> None:
    bench = Benchmark.load(args.benchmark)
    hyper = TrainConfig(**{**_read_json(args.config), "seed": args.seed})
    if args.epochs is not None:
        hyper.epochs = args.epochs
    model = train_onestep(training_reactions(bench), bench.rules, hyper)
    model.save(args.out)
    if model.loss_history:
        print(f"final loss {model.loss_history[-1]:.6f}")


def cmd_plan(args) -> None:
    bench = Benchmark.load(args.benchmark)
    model = OneStepModel.load(args.model)
    limits = SearchLimits(
        beam_width=args.beam_width, max_depth=args.max_depth,
        expansions_budget=args.budget, proposals_per_node=args.proposals,
    )
    algo = args.algo
    if algo == "retrostar" and args.value == "oracle":
        algo = "retrostar_oracle"
    plans = plan_targets(_split(bench, args.split), model, bench.inventory, algo, limits, args.k)
    save_routes(plans, args.out)
    solved = sum(1 for v in plans.values() if v)
    print(f"{solved}/{len(plans)} targets with at least one route")


def cmd_build_prefs(args) -> None:
    bench = Benchmark.load(args.benchmark)
    if args.criterion not in CRITERIA:
        raise ValidationError(f"unknown criterion {args.criterion!r}")
    samples = load_routes(args.routes)
    targets = _split(bench, args.split)
    stray = sorted(set(samples) - set(targets))
    if stray:
        raise ValidationError(f"routes for {len(stray)} targets outside split {args.split!r}")
    ctx = RewardContext(tuple(bench.rules))
    pairs = build_preference_pairs(
        targets, bench.references, None, bench.inventory, args.criterion, ctx,
        k_samples=args.k_samples, samples=samples,
    )
    save_pairs(pairs, args.out)
    print(f"{len(pairs)} preference pairs")


def cmd_train_crebm(args) -> None:
    pairs = load_pairs(args.prefs)
    if not pairs:
        raise ValidationError("preference file holds no pairs")
    hyper = EnergyTrainConfig(**{**_read_json(args.config), "seed": args.seed})
    model = train_energy(pairs, hyper, args.criterion)
    model.save(args.out)


def cmd_rerank(args) -> None:
    plans = load_routes(args.routes)
    energy = EnergyModel.load(args.energy)
    save_routes(rerank_pool(plans, energy, args.mode), args.out)


def cmd_evaluate(args) -> None:
    bench = Benchmark.load(args.benchmark)
    targets = _split(bench, args.split)
    report = evaluate_topk(load_routes(args.routes), bench.references, targets, args.kmax, args.mode)
    write_report(report, _report_prefix(args.report))
    print(" ".join(f"top{k}={v:.2f}" for k, v in report.topk.items()))


def cmd_ablate(args) -> None:
    bench = Benchmark.load(args.benchmark)
    targets = _split(bench, args.split)
    energy = EnergyModel.load(args.energy)
    reports = run_ablation(load_routes(args.routes), energy, bench.references, targets, args.kmax)
    write_report(reports, _report_prefix(args.report))
    for mode, rep in reports.items():
        print(f"{mode:9s} top1={rep.topk[1]:.2f} delta={rep.delta[1]:+.2f}")


def cmd_pipeline(args) -> None:
    cfg = PipelineConfig(**_read_json(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    result = run_pipeline(cfg, args.workdir, args.report_dir)
    print(json.dumps(result.summary["top1"], sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retroebm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-benchmark", help="generate a synthetic benchmark directory")
    s.add_argument("--config", help="JSON benchmark config")
    s.add_argument("--seed", type=int, default=17)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_benchmark)

    s = sub.add_parser("train-onestep", help="train the one-step rule classifier")
    s.add_argument("--benchmark", required=True)
    s.add_argument("--seed", type=int, default=17)
    s.add_argument("--config", help="JSON optimizer config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_onestep)

    s = sub.add_parser("plan", help="plan routes for a split")
    s.add_argument("--model", required=True)
    s.add_argument("--benchmark", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--algo", choices=("greedy", "beam", "retrostar"), default="beam")
    s.add_argument("--value", choices=("zero", "oracle"), default="zero", help="Retro* value function")
    s.add_argument("--beam-width", type=int, default=10)
    s.add_argument("--k", type=int, default=10, help="routes kept per target")
    s.add_argument("--proposals", type=int, default=10, help="one-step proposals per expansion")
    s.add_argument("--max-depth", type=int, default=6)
    s.add_argument("--budget", type=int, default=500, help="expansion budget per target")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("build-prefs", help="build preference pairs from sampled routes")
    s.add_argument("--routes", required=True)
    s.add_argument("--benchmark", required=True)
    s.add_argument("--split", default="train")
    s.add_argument("--criterion", default="feasibility")
    s.add_argument("--k-samples", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_prefs)

    s = sub.add_parser("train-crebm", help="train the energy model on preference pairs")
    s.add_argument("--prefs", required=True)
    s.add_argument("--seed", type=int, default=17)
    s.add_argument("--criterion", default="feasibility")
    s.add_argument("--config", help="JSON optimizer config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_crebm)

    s = sub.add_parser("rerank", help="rerank candidate routes by -log P + E")
    s.add_argument("--routes", required=True)
    s.add_argument("--energy", required=True)
    s.add_argument("--mode", choices=ABLATION_MODES, default="residual")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rerank)

    s = sub.add_parser("evaluate", help="top-k exact-match report")
    s.add_argument("--routes", required=True)
    s.add_argument("--benchmark", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--kmax", type=int, default=5)
    s.add_argument("--mode", default="base", help="label stored in the report")
    s.add_argument("--report", required=True, help="output prefix; .json and .csv are written")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="compare the four ranking modes")
    s.add_argument("--routes", required=True)
    s.add_argument("--energy", required=True)
    s.add_argument("--benchmark", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--kmax", type=int, default=5)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("pipeline", help="run every stage with cached intermediates")
    s.add_argument("--config", help="JSON pipeline config")
    s.add_argument("--seed", type=int)
    s.add_argument("--workdir", required=True)
    s.add_argument("--report-dir")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (
        ValidationError, ValueError, KeyError, TypeError, FileNotFoundError, NotADirectoryError,
        SmilesError, CorruptReactionError, InfeasibleConfigError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return 0


if __name__ == "__main__":
    sys.exit(main())
