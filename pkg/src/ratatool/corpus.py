"""Tool corpora and query sets: JSONL I/O, cleaning, tool-level splitting, statistics."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import requests

from .errors import DataError, EmptyModalityError, NetworkError, NotFound, SchemaError, UnknownTool
from .tooldesc import (MODALITIES, Modality, Query, ToolDescription, canonical_text,
                       query_from_record, tool_from_record)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToolCorpus:
    tools: tuple[ToolDescription, ...]
    corpus_id: str = "corpus"

    def __post_init__(self):
        object.__setattr__(self, "tools", tuple(self.tools))
        seen = set()
        for t in self.tools:
            if t.tool_id in seen:
                raise SchemaError(t.tool_id, "duplicate tool_id")
            seen.add(t.tool_id)

    def __len__(self):
        return len(self.tools)

    def by_id(self) -> dict[str, ToolDescription]:
        return {t.tool_id: t for t in self.tools}


@dataclass(frozen=True)
class QuerySet:
    queries: tuple[Query, ...]
    set_id: str = "queries"

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        seen = set()
        for q in self.queries:
            if q.query_id in seen:
                raise SchemaError(q.query_id, "duplicate query_id")
            seen.add(q.query_id)

    def __len__(self):
        return len(self.queries)


def _read_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def _with_line(path, lineno, fn, rec):
    try:
        return fn(rec)
    except SchemaError as exc:
        raise SchemaError(exc.key, f"{path}:{lineno}: {exc.problem}") from None


def load_tools(path, corpus_id: str | None = None) -> ToolCorpus:
    path = Path(path)
    tools = [_with_line(path, n, tool_from_record, rec) for n, rec in _read_jsonl(path)]
    return ToolCorpus(tools, corpus_id or path.stem)


def load_queries(path, set_id: str | None = None) -> QuerySet:
    path = Path(path)
    queries = [_with_line(path, n, query_from_record, rec) for n, rec in _read_jsonl(path)]
    return QuerySet(queries, set_id or path.stem)


def dump_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def save_tools(corpus: ToolCorpus, path) -> None:
    dump_jsonl((t.to_record() for t in corpus.tools), path)


def save_queries(queries: QuerySet, path) -> None:
    dump_jsonl((q.to_record() for q in queries.queries), path)


# -- cleaning ---------------------------------------------------------------

@dataclass
class CleanReport:
    removals: list[dict] = field(default_factory=list)
    remapped: list[dict] = field(default_factory=list)

    @property
    def duplicate_tools(self) -> int:
        return sum(r["reason"] == "duplicate tool" for r in self.removals)

    def is_empty(self) -> bool:
        return not self.removals and not self.remapped

    def to_json(self) -> dict:
        return {"removals": self.removals, "remapped": self.remapped}


def clean(tools: ToolCorpus, queries: QuerySet) -> tuple[ToolCorpus, QuerySet, CleanReport]:
    """Collapse duplicate tools, drop dangling and duplicate queries.

    Tools with identical canonical text collapse onto the lexicographically
    smallest tool_id; queries pointing at a collapsed tool are re-pointed at
    the survivor. Order of the survivors is preserved.
    """
    report = CleanReport()
    groups: dict[str, list[str]] = {}
    for t in tools.tools:
        groups.setdefault(canonical_text(t), []).append(t.tool_id)
    survivor_of: dict[str, str] = {}
    for ids in groups.values():
        keep = min(ids)
        for tid in ids:
            survivor_of[tid] = keep
    kept_tools = []
    for t in tools.tools:
        keep = survivor_of[t.tool_id]
        if keep == t.tool_id:
            kept_tools.append(t)
        else:
            report.removals.append({"kind": "tool", "id": t.tool_id, "reason": "duplicate tool", "kept": keep})

    first_by_key: dict[tuple, str] = {}
    candidates = []
    for q in queries.queries:
        gt = q.gt_tool_id
        if gt is not None:
            if gt not in survivor_of:
                report.removals.append({"kind": "query", "id": q.query_id, "reason": "dangling gt_tool_id"})
                continue
            if survivor_of[gt] != gt:
                report.remapped.append({"query_id": q.query_id, "from": gt, "to": survivor_of[gt]})
                q = Query(q.query_id, q.text, q.attachments, survivor_of[gt])
        candidates.append(q)
        key = (q.text, q.attachments, q.gt_tool_id)
        if key not in first_by_key or q.query_id < first_by_key[key]:
            first_by_key[key] = q.query_id
    kept_queries = []
    for q in candidates:
        keep = first_by_key[(q.text, q.attachments, q.gt_tool_id)]
        if keep == q.query_id:
            kept_queries.append(q)
        else:
            report.removals.append({"kind": "query", "id": q.query_id, "reason": "duplicate query", "kept": keep})
    return ToolCorpus(kept_tools, tools.corpus_id), QuerySet(kept_queries, queries.set_id), report


# -- splitting --------------------------------------------------------------

def floor_fraction(ratio: float, n: int) -> int:
    """floor(ratio * n), reading ratio as the simplest nearby rational.

    0.9 is taken as 9/10 and 409/3390 as itself, so binary rounding of the
    float never moves the floor across an integer.
    """
    return math.floor(Fraction(float(ratio)).limit_denominator(1_000_000) * n)


@dataclass(frozen=True)
class SplitAssignment:
    train_tool_ids: frozenset[str]
    test_tool_ids: frozenset[str]
    ratio: float
    seed: int

    def side_of(self, tool_id: str) -> str:
        if tool_id in self.train_tool_ids:
            return "train"
        if tool_id in self.test_tool_ids:
            return "test"
        raise UnknownTool(tool_id)

    def to_json(self) -> dict:
        return {
            "ratio": self.ratio,
            "seed": self.seed,
            "train_tool_ids": sorted(self.train_tool_ids),
            "test_tool_ids": sorted(self.test_tool_ids),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SplitAssignment":
        return cls(frozenset(obj["train_tool_ids"]), frozenset(obj["test_tool_ids"]), obj["ratio"], obj["seed"])


def split_tools(corpus: ToolCorpus, queries: QuerySet | None, ratio: float, seed: int) -> SplitAssignment:
    """Tool-level split, stratified by tool modality.

    Within each modality the sorted tool ids are shuffled with a PRNG seeded
    from (seed, modality index); the first floor(ratio * n) go to train.
    """
    if not 0 < ratio < 1:
        raise DataError(f"split ratio must lie in (0, 1), got {ratio}")
    if not 0 <= seed < 2**64:
        raise DataError(f"seed must be a 64-bit unsigned integer, got {seed}")
    known = {t.tool_id for t in corpus.tools}
    if queries is not None:
        for q in queries.queries:
            if q.gt_tool_id is not None and q.gt_tool_id not in known:
                raise UnknownTool(q.gt_tool_id)
    train: set[str] = set()
    test: set[str] = set()
    for m_index, modality in enumerate(MODALITIES):
        ids = sorted(t.tool_id for t in corpus.tools if t.modality is modality)
        if not ids:
            continue
        if len(ids) < 2:
            raise EmptyModalityError(f"modality {modality.value} has {len(ids)} tool(s); need at least 2")
        rng = np.random.default_rng([seed, m_index])
        order = rng.permutation(len(ids))
        n_train = floor_fraction(ratio, len(ids))
        train.update(ids[i] for i in order[:n_train])
        test.update(ids[i] for i in order[n_train:])
    return SplitAssignment(frozenset(train), frozenset(test), float(ratio), int(seed))


def partition_queries(queries: QuerySet, split: SplitAssignment) -> tuple[QuerySet, QuerySet]:
    """Queries follow their ground-truth tool; queries without one are dropped."""
    train, test = [], []
    for q in queries.queries:
        if q.gt_tool_id is None:
            continue
        (train if split.side_of(q.gt_tool_id) == "train" else test).append(q)
    return QuerySet(train, queries.set_id + "-train"), QuerySet(test, queries.set_id + "-test")


# -- statistics -------------------------------------------------------------

ROWS = ("train", "test", "overall")
COLUMNS = ("Text", "Image", "Audio", "All")


def _zero_table() -> dict[str, dict[str, int]]:
    return {row: {col: 0 for col in COLUMNS} for row in ROWS}


@dataclass
class DatasetStats:
    queries: dict[str, dict[str, int]] = field(default_factory=_zero_table)
    tools: dict[str, dict[str, int]] = field(default_factory=_zero_table)

    def to_json(self) -> dict:
        return {"unique_queries": self.queries, "unique_tools": self.tools}

    def render(self) -> str:
        head = ["", *(f"Q:{c}" for c in COLUMNS), *(f"T:{c}" for c in COLUMNS)]
        body = [[row.capitalize(), *(f"{self.queries[row][c]:,}" for c in COLUMNS),
                 *(f"{self.tools[row][c]:,}" for c in COLUMNS)] for row in ROWS]
        widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
        lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
                 for r in [head, *body]]
        return "\n".join(lines)


def stats(corpus: ToolCorpus, queries: QuerySet, split: SplitAssignment | None = None) -> DatasetStats:
    """Table-1 style counts. Without a split every item counts as train."""
    out = DatasetStats()

    def side(tool_id: str) -> str:
        return "train" if split is None else split.side_of(tool_id)

    for t in corpus.tools:
        s = side(t.tool_id)
        out.tools[s][t.modality.value] += 1
    for q in queries.queries:
        if q.gt_tool_id is None:
            continue
        s = side(q.gt_tool_id)
        out.queries[s][q.modality.value] += 1
    for table in (out.queries, out.tools):
        for col in COLUMNS[:-1]:
            table["overall"][col] = table["train"][col] + table["test"][col]
        for row in ROWS:
            table[row]["All"] = sum(table[row][c] for c in COLUMNS[:-1])
    return out


# -- model cards ------------------------------------------------------------

DEFAULT_CARD_BASE = "https://huggingface.co"


def fetch_model_card(repo_id: str, endpoint: str = DEFAULT_CARD_BASE, *, attempts: int = 3,
                     base_delay: float = 0.5, timeout: float = 30.0, session: requests.Session | None = None,
                     sleep: Callable[[float], None] = time.sleep) -> str:
    """GET ``<endpoint>/<repo_id>/raw/main/README.md`` with exponential backoff.

    404 is final. Connection errors and 5xx/429 responses are retried.
    """
    url = f"{endpoint.rstrip('/')}/{repo_id}/raw/main/README.md"
    http = session or requests
    last = ""
    for attempt in range(attempts):
        if attempt:
            sleep(base_delay * 2 ** (attempt - 1))
        try:
            resp = http.get(url, timeout=timeout)
        except requests.RequestException as exc:
            last = str(exc)
            log.warning("fetch %s failed (attempt %d): %s", repo_id, attempt + 1, exc)
            continue
        if resp.status_code == 404:
            raise NotFound(repo_id)
        if resp.status_code == 429 or resp.status_code >= 500:
            last = f"HTTP {resp.status_code}"
            log.warning("fetch %s got %s (attempt %d)", repo_id, resp.status_code, attempt + 1)
            continue
        if resp.status_code >= 400:
            raise NetworkError(f"{repo_id}: HTTP {resp.status_code}")
        return resp.content.decode("utf-8", errors="replace")
    raise NetworkError(f"{repo_id}: giving up after {attempts} attempts ({last})")


def fetch_model_cards(repo_ids: list[str], endpoint: str = DEFAULT_CARD_BASE, *, parallelism: int = 4,
                      **kwargs) -> list[str]:
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(lambda r: fetch_model_card(r, endpoint, **kwargs), repo_ids))
