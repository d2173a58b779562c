"""Preference pairs for DPO from ranked candidate descriptions.

For each query the candidate whose embedding ranks the ground-truth tool
best becomes the chosen response; the rejected one is drawn uniformly from
the rest. Sets where every candidate ranks the tool identically are dropped.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .embed import Provider
from .errors import DataError, TooFewCandidates, UnknownTool
from .llmclient import GenerationRecord
from .retrieve import ToolIndex, embed_task
from .tooldesc import STRATEGIES, DecodingStrategy, TaskDescription, canonical_text
from .corpus import floor_fraction

DEFAULT_EVAL_FRACTION = 409 / 3390


@dataclass(frozen=True)
class CandidateSet:
    query_id: str
    gt_tool_id: str
    candidates: tuple[GenerationRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        strategies = [c.strategy for c in self.candidates]
        if len(set(strategies)) != len(strategies):
            raise DataError(f"query {self.query_id}: repeated decoding strategy in candidate set")


@dataclass(frozen=True)
class PreferencePair:
    query_id: str
    chosen: TaskDescription
    rejected: TaskDescription
    chosen_rank: int
    rejected_rank: int
    chosen_strategy: DecodingStrategy
    rejected_strategy: DecodingStrategy

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "chosen": self.chosen.fields(),
            "rejected": self.rejected.fields(),
            "chosen_rank": self.chosen_rank,
            "rejected_rank": self.rejected_rank,
            "chosen_strategy": self.chosen_strategy.value,
            "rejected_strategy": self.rejected_strategy.value,
        }


@dataclass(frozen=True)
class Discard:
    query_id: str
    reason: str


@dataclass
class PrefBuildReport:
    input_sets: int = 0
    pairs_emitted: int = 0
    sets_discarded_all_equal: int = 0
    sets_discarded_parse_failures: int = 0
    unparsed_candidates: int = 0
    strategy_wins: Counter = field(default_factory=Counter)
    train_pairs: int = 0
    eval_pairs: int = 0

    def to_json(self) -> dict:
        return {
            "input_sets": self.input_sets,
            "pairs_emitted": self.pairs_emitted,
            "sets_discarded_all_equal": self.sets_discarded_all_equal,
            "sets_discarded_parse_failures": self.sets_discarded_parse_failures,
            "unparsed_candidates": self.unparsed_candidates,
            "strategy_wins": {s.value: self.strategy_wins.get(s, 0) for s in STRATEGIES},
            "train_pairs": self.train_pairs,
            "eval_pairs": self.eval_pairs,
        }


def rank_candidates(cset: CandidateSet, index: ToolIndex, provider: Provider) -> list[tuple[GenerationRecord, int]]:
    """Rank of the ground-truth tool under each parsed candidate, in input order."""
    if cset.gt_tool_id not in index:
        raise UnknownTool(cset.gt_tool_id)
    parsed = [c for c in cset.candidates if c.parsed is not None]
    if len(parsed) < 2:
        raise TooFewCandidates(f"query {cset.query_id}: {len(parsed)} parsed candidate(s), need 2")
    ranked = []
    for cand in parsed:
        vec = embed_task(cand.parsed, index, provider)
        ranked.append((cand, index.rank(index.scores(vec), cset.gt_tool_id)))
    return ranked


def _text(c: GenerationRecord) -> str:
    t = c.parsed
    return canonical_text(t, t.format)


def build_pair(query_id: str, ranked: list[tuple[GenerationRecord, int]],
               rng: np.random.Generator | int) -> PreferencePair | Discard:
    """Chosen = first minimum-rank candidate; rejected uniform over the others.

    Candidates whose text is identical to the chosen one are left out of the
    rejected pool, so chosen and rejected always differ.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    ranks = [r for _, r in ranked]
    if len(set(ranks)) == 1:
        return Discard(query_id, "all_equal")
    best = ranks.index(min(ranks))
    chosen, chosen_rank = ranked[best]
    pool = [i for i in range(len(ranked)) if i != best and _text(ranked[i][0]) != _text(chosen)]
    pick = pool[int(rng.integers(len(pool)))]
    rejected, rejected_rank = ranked[pick]
    return PreferencePair(query_id, chosen.parsed, rejected.parsed, chosen_rank, rejected_rank,
                          chosen.strategy, rejected.strategy)


def build_dataset(sets: list[CandidateSet], index: ToolIndex, provider: Provider, seed: int,
                  eval_fraction: float = DEFAULT_EVAL_FRACTION):
    """Pairs for every set, shuffled; the last floor(eval_fraction * n) are held out.

    Returns ``(train_pairs, eval_pairs, report)``.
    """
    if not 0.0 <= eval_fraction < 1.0:
        raise DataError(f"eval_fraction must lie in [0, 1), got {eval_fraction}")
    rng = np.random.default_rng(seed)
    report = PrefBuildReport(input_sets=len(sets))
    pairs: list[PreferencePair] = []
    for cset in sets:
        report.unparsed_candidates += sum(c.parsed is None for c in cset.candidates)
        try:
            ranked = rank_candidates(cset, index, provider)
        except TooFewCandidates:
            report.sets_discarded_parse_failures += 1
            continue
        out = build_pair(cset.query_id, ranked, rng)
        if isinstance(out, Discard):
            report.sets_discarded_all_equal += 1
            continue
        report.strategy_wins[out.chosen_strategy] += 1
        pairs.append(out)
    report.pairs_emitted = len(pairs)
    pairs = [pairs[i] for i in rng.permutation(len(pairs))]
    n_eval = floor_fraction(eval_fraction, len(pairs))
    train, held = pairs[:len(pairs) - n_eval], pairs[len(pairs) - n_eval:]
    report.train_pairs, report.eval_pairs = len(train), len(held)
    return train, held, report


def group_candidates(records: list[GenerationRecord], gt_of: dict[str, str]) -> list[CandidateSet]:
    """Group generation records by query id, keeping first-seen query order."""
    by_query: dict[str, list[GenerationRecord]] = {}
    for rec in records:
        by_query.setdefault(rec.query_id, []).append(rec)
    sets = []
    for qid, recs in by_query.items():
        if qid not in gt_of:
            raise DataError(f"generation for query {qid!r} has no ground-truth tool")
        recs.sort(key=lambda r: STRATEGIES.index(r.strategy))
        sets.append(CandidateSet(qid, gt_of[qid], recs))
    return sets


def dump_pairs(pairs: list[PreferencePair], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False) + "\n")
