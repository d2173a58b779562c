"""Tool-selection scoring: per-item records and per-modality aggregates.

``avg_q`` is the query-weighted (micro) mean and ``avg_m`` the unweighted
mean over the modalities present; that is the arithmetic the published
result tables satisfy.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .embed import Provider
from .errors import DataError, EmptyEval, GenerationError, UnknownTool
from .llmclient import GenerationRecord
from .retrieve import ToolIndex, embed_task
from .tooldesc import MODALITIES, Modality, Query

RECALL_KS = (1, 3, 5, 10)

Generator = Callable[[Query], GenerationRecord]


@dataclass(frozen=True)
class EvalItem:
    query_id: str
    modality: Modality
    gt_tool_id: str
    selected_tool_id: str | None
    correct: bool
    rank_of_gt: int
    generation_failed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        if self.correct != (self.selected_tool_id == self.gt_tool_id) or self.correct != (self.rank_of_gt == 1):
            raise DataError(f"inconsistent eval item {self.query_id}")

    def to_record(self) -> dict:
        return {"query_id": self.query_id, "modality": self.modality.value, "gt_tool_id": self.gt_tool_id,
                "selected_tool_id": self.selected_tool_id, "correct": self.correct,
                "rank_of_gt": self.rank_of_gt, "generation_failed": self.generation_failed}

    @classmethod
    def from_record(cls, rec: dict) -> "EvalItem":
        return cls(rec["query_id"], rec["modality"], rec["gt_tool_id"], rec["selected_tool_id"],
                   rec["correct"], rec["rank_of_gt"], rec.get("generation_failed", False))


@dataclass
class EvalReport:
    accuracy: dict[str, float]
    counts: dict[str, int]
    avg_q: float
    avg_m: float
    recall_at_k: dict[int, dict[str, float]] = field(default_factory=dict)
    generation_failures: int = 0

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "counts": self.counts,
            "avg_q": self.avg_q,
            "avg_m": self.avg_m,
            "recall_at_k": {str(k): v for k, v in self.recall_at_k.items()},
            "generation_failures": self.generation_failures,
        }

    def render(self) -> str:
        cols = [m.value for m in MODALITIES if m.value in self.accuracy]
        head = cols + ["Avg_q", "Avg_m"]
        vals = [f"{self.accuracy[c]:.1f}" for c in cols] + [f"{self.avg_q:.1f}", f"{self.avg_m:.1f}"]
        ns = [str(self.counts[c]) for c in cols] + [str(sum(self.counts.values())), ""]
        widths = [max(len(h), len(v), len(n)) for h, v, n in zip(head, vals, ns)]
        lines = [
            "          " + "  ".join(h.rjust(w) for h, w in zip(head, widths)),
            "Accuracy  " + "  ".join(v.rjust(w) for v, w in zip(vals, widths)),
            "Items     " + "  ".join(n.rjust(w) for n, w in zip(ns, widths)),
        ]
        return "\n".join(line.rstrip() for line in lines)


def _pct(num: int, den: int) -> float:
    return 100.0 * num / den


def recall_at_k(items: Sequence[EvalItem], k: int) -> float:
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if not items:
        raise EmptyEval("no evaluation items")
    return _pct(sum(it.rank_of_gt <= k for it in items), len(items))


def aggregate(items: Sequence[EvalItem], ks: Sequence[int] = RECALL_KS) -> EvalReport:
    if not items:
        raise EmptyEval("no evaluation items")
    by_mod: dict[str, list[EvalItem]] = {}
    for it in items:
        by_mod.setdefault(it.modality.value, []).append(it)
    present = [m.value for m in MODALITIES if m.value in by_mod]
    accuracy = {m: _pct(sum(it.correct for it in by_mod[m]), len(by_mod[m])) for m in present}
    counts = {m: len(by_mod[m]) for m in present}
    recall = {k: {**{m: recall_at_k(by_mod[m], k) for m in present}, "All": recall_at_k(items, k)} for k in ks}
    return EvalReport(
        accuracy=accuracy,
        counts=counts,
        avg_q=_pct(sum(it.correct for it in items), len(items)),
        avg_m=math.fsum(accuracy.values()) / len(accuracy),
        recall_at_k=recall,
        generation_failures=sum(it.generation_failed for it in items),
    )


def aggregate_from_accuracies(accuracy: dict[str, float], counts: dict[str, int]) -> tuple[float, float]:
    """(avg_q, avg_m) from already-computed per-modality accuracies and item counts."""
    present = [m for m in accuracy if counts.get(m, 0) > 0]
    if not present:
        raise EmptyEval("no modality with items")
    total = sum(counts[m] for m in present)
    avg_q = math.fsum(counts[m] * accuracy[m] for m in present) / total
    avg_m = math.fsum(accuracy[m] for m in present) / len(present)
    return avg_q, avg_m


def evaluate_one(q: Query, generator: Generator, index: ToolIndex, provider: Provider) -> EvalItem:
    gt = q.gt_tool_id
    if gt is None or gt not in index:
        raise UnknownTool(str(gt))
    try:
        record = generator(q)
    except GenerationError:
        record = None
    if record is None or record.parsed is None:
        return EvalItem(q.query_id, q.modality, gt, None, False, len(index) + 1, generation_failed=True)
    scores = index.scores(embed_task(record.parsed, index, provider))
    selected = index.tool_ids[int(index.order(scores)[0])]
    rank = index.rank(scores, gt)
    return EvalItem(q.query_id, q.modality, gt, selected, selected == gt, rank)


def evaluate(queries: Sequence[Query], generator: Generator, index: ToolIndex, provider: Provider,
             parallelism: int = 1) -> tuple[list[EvalItem], EvalReport]:
    """Generate, retrieve and score every query exactly once, in input order."""
    if not queries:
        raise EmptyEval("no evaluation items")
    for q in queries:
        if q.gt_tool_id is None or q.gt_tool_id not in index:
            raise UnknownTool(str(q.gt_tool_id))
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        items = list(pool.map(lambda q: evaluate_one(q, generator, index, provider), queries))
    return items, aggregate(items)


def dump_items(items: Sequence[EvalItem], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in items:
            fh.write(json.dumps(it.to_record(), ensure_ascii=False) + "\n")
