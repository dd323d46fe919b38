"""Set-wise exact-match evaluation and the ranking ablation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .crebm import EnergyModel, rerank_routes
from .route import Route

ABLATION_MODES = ("base", "residual", "energy", "inverted")
MODE_LABELS = {
    "base": "-log P",
    "residual": "-log P + E",
    "energy": "E",
    "inverted": "-log P - E",
}

def exact_match_starting_materials(predicted: Iterable[str], references: Sequence[Iterable[str]]) -> bool:
    """True iff ``predicted`` equals, as a set, at least one reference set."""
    if not references:
        raise ValueError("no reference sets")
    pred = frozenset(predicted)
    return any(pred == frozenset(ref) for ref in references)


@dataclass
class TargetRecord:
    target: str
    predicted: list[list[str]]
    matched_rank: int | None
    depth: int


@dataclass
class EvalReport:
    mode: str
    records: list[TargetRecord]
    topk: dict[int, float]
    depth_top1: dict[int, tuple[int, float]]
    delta: dict[int, float] = field(default_factory=dict)

    @property
    def n_targets(self) -> int:
        return len(self.records)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "label": MODE_LABELS.get(self.mode, self.mode),
            "n_targets": self.n_targets,
            "topk": {str(k): v for k, v in self.topk.items()},
            "delta": {str(k): v for k, v in self.delta.items()},
            "depth_top1": {str(d): {"n": n, "top1": acc} for d, (n, acc) in self.depth_top1.items()},
            "records": [
                {"target": r.target, "depth": r.depth, "matched_rank": r.matched_rank, "predicted": r.predicted}
                for r in self.records
            ],
        }


def _pct(hits: int, n: int) -> float:
    return round(100.0 * hits / n, 4) if n else 0.0


def evaluate_topk(
    results: Mapping[str, Sequence[Route]],
    references: Mapping[str, Sequence[Route]],
    targets: Sequence[str] | None = None,
    kmax: int = 5,
    mode: str = "base",
) -> EvalReport:
    """Top-k exact-match accuracy (percent) plus top-1 by reference depth.

    A target's depth is the shallowest of its reference routes. Targets
    without candidates count as misses.
    """
    targets = sorted(targets if targets is not None else references)
    records = []
    for t in targets:
        refs = references.get(t)
        if not refs:
            raise ValueError(f"target {t} has no reference routes")
        ref_sets = [r.leaves for r in refs]
        ranked = list(results.get(t, ()))
        rank = None
        for i, route in enumerate(ranked[:kmax]):
            if exact_match_starting_materials(route.leaves, ref_sets):
                rank = i + 1
                break
        records.append(
            TargetRecord(t, [sorted(r.leaves) for r in ranked[:kmax]], rank, min(r.depth for r in refs))
        )
    n = len(records)
    topk = {k: _pct(sum(1 for r in records if r.matched_rank is not None and r.matched_rank <= k), n) for k in range(1, kmax + 1)}
    depth_top1 = {}
    for d in sorted({r.depth for r in records}):
        bucket = [r for r in records if r.depth == d]
        depth_top1[d] = (len(bucket), _pct(sum(1 for r in bucket if r.matched_rank == 1), len(bucket)))
    return EvalReport(mode, records, topk, depth_top1)


def rerank_pool(candidates: Mapping[str, Sequence[Route]], energy: EnergyModel | None, mode: str) -> dict[str, list[Route]]:
    out = {}
    for t in sorted(candidates):
        pool = list(candidates[t])
        if not pool:
            out[t] = []
            continue
        out[t] = rerank_routes(pool, energy, mode)
    return out


def run_ablation(
    candidates: Mapping[str, Sequence[Route]],
    energy: EnergyModel,
    references: Mapping[str, Sequence[Route]],
    targets: Sequence[str] | None = None,
    kmax: int = 5,
) -> dict[str, EvalReport]:
    """Evaluate the four rankings of one shared candidate pool per target."""
    reports = {}
    for mode in ABLATION_MODES:
        reports[mode] = evaluate_topk(rerank_pool(candidates, energy, mode), references, targets, kmax, mode)
    base = reports["base"].topk
    for rep in reports.values():
        rep.delta = {k: round(rep.topk[k] - base[k], 4) for k in rep.topk}
    return reports


def write_report(reports: Mapping[str, EvalReport] | EvalReport, prefix: str | Path) -> tuple[Path, Path]:
    """Write ``<prefix>.json`` and ``<prefix>.csv``; returns both paths."""
    if isinstance(reports, EvalReport):
        reports = {reports.mode: reports}
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    json_path = prefix.with_suffix(".json")
    csv_path = prefix.with_suffix(".csv")
    with open(json_path, "w") as fh:
        json.dump({m: r.to_json() for m, r in reports.items()}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        any_report = next(iter(reports.values()))
        ks = sorted(any_report.topk)
        depths = sorted({d for r in reports.values() for d in r.depth_top1})
        writer.writerow(
            ["mode", "ranking"] + [f"top{k}" for k in ks] + [f"delta{k}" for k in ks] + [f"depth{d}_top1" for d in depths]
        )
        for mode, rep in reports.items():
            writer.writerow(
                [mode, MODE_LABELS.get(mode, mode)]
                + [f"{rep.topk[k]:.4f}" for k in ks]
                + [f"{rep.delta.get(k, 0.0):.4f}" for k in ks]
                + [f"{rep.depth_top1[d][1]:.4f}" if d in rep.depth_top1 else "" for d in depths]
            )
    return json_path, csv_path
