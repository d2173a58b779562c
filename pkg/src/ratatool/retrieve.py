"""Exact inner-product retrieval over a tool index."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .corpus import ToolCorpus
from .embed import EmbeddingVector, Provider, _format_values
from .errors import DataError, DimensionMismatch, EmptyCorpus, IndexMismatch, UnknownTool
from .tooldesc import DescriptionFormat, TaskDescription, canonical_text

INDEX_VERSION = 1


class ToolIndex:
    """Immutable (tool_id, vector) table with its provenance.

    Vectors live in one C-contiguous float64 matrix. Scores are computed row
    by row with an identical reduction order, so identical rows always score
    identically.
    """

    def __init__(self, tool_ids, matrix, *, corpus_id: str, format: DescriptionFormat,
                 provider_id: str, model_id: str):
        tool_ids = tuple(tool_ids)
        matrix = np.array(matrix, dtype=np.float64, order="C", copy=True)
        if matrix.ndim != 2 or matrix.shape[0] != len(tool_ids):
            if len(tool_ids) == 0:
                matrix = np.zeros((0, matrix.shape[-1] if matrix.ndim == 2 else 0))
            else:
                raise DimensionMismatch("index matrix shape does not match tool ids")
        if len(set(tool_ids)) != len(tool_ids):
            raise DataError("duplicate tool ids in index")
        matrix.setflags(write=False)
        self.tool_ids = tool_ids
        self.matrix = matrix
        self.corpus_id = corpus_id
        self.format = DescriptionFormat(format)
        self.provider_id = provider_id
        self.model_id = model_id
        # position of each entry in ascending tool_id order, the tie-break key
        order = sorted(range(len(tool_ids)), key=tool_ids.__getitem__)
        id_rank = np.empty(len(tool_ids), dtype=np.int64)
        id_rank[order] = np.arange(len(tool_ids))
        self._id_rank = id_rank
        self._pos = {tid: i for i, tid in enumerate(tool_ids)}

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.tool_ids)

    def __contains__(self, tool_id) -> bool:
        return tool_id in self._pos

    @property
    def entries(self) -> Iterator[tuple[str, EmbeddingVector]]:
        for tid, row in zip(self.tool_ids, self.matrix):
            yield tid, EmbeddingVector(tuple(row.tolist()), self.provider_id, self.model_id)

    def provenance(self) -> dict:
        return {"corpus_id": self.corpus_id, "format": self.format.value,
                "provider_id": self.provider_id, "model_id": self.model_id}

    def scores(self, vec) -> np.ndarray:
        q = np.asarray(vec.values if isinstance(vec, EmbeddingVector) else vec, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimensionMismatch(f"query dim {q.shape[-1] if q.ndim else 0} != index dim {self.dim}")
        return (self.matrix * q).sum(axis=1)

    def order(self, scores: np.ndarray) -> np.ndarray:
        """Entry positions sorted by descending score, then ascending tool_id."""
        return np.lexsort((self._id_rank, -scores))

    def rank(self, scores: np.ndarray, tool_id: str) -> int:
        if tool_id not in self._pos:
            raise UnknownTool(tool_id)
        i = self._pos[tool_id]
        s = scores[i]
        better = np.count_nonzero(scores > s)
        tied_before = np.count_nonzero((scores == s) & (self._id_rank < self._id_rank[i]))
        return int(better + tied_before + 1)


@dataclass(frozen=True)
class RetrievalResult:
    ranking: tuple[tuple[str, float], ...]

    @property
    def selected(self) -> str:
        return self.ranking[0][0]


def build_index(corpus: ToolCorpus, provider: Provider, format=DescriptionFormat.JSON) -> ToolIndex:
    if len(corpus) == 0:
        raise EmptyCorpus("empty tool corpus")
    format = DescriptionFormat(format)
    vectors = provider.embed([canonical_text(t, format) for t in corpus.tools])
    dims = {v.dim for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed embedding dimensions {sorted(dims)}")
    return ToolIndex([t.tool_id for t in corpus.tools], [v.values for v in vectors],
                     corpus_id=corpus.corpus_id, format=format,
                     provider_id=provider.provider_id, model_id=provider.model_id)


def similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"{a.dim} != {b.dim}")
    return sum(x * y for x, y in zip(a.values, b.values))


def embed_task(task: TaskDescription, index: ToolIndex, provider: Provider) -> EmbeddingVector:
    fmt = DescriptionFormat.NL if task.format is DescriptionFormat.NL else index.format
    return provider.embed([canonical_text(task, fmt)])[0]


def rank_vector(vec, index: ToolIndex, k: int | None = None) -> RetrievalResult:
    if len(index) == 0:
        raise EmptyCorpus("empty tool index")
    scores = index.scores(vec)
    order = index.order(scores)
    if k is not None:
        order = order[:k]
    return RetrievalResult(tuple((index.tool_ids[i], float(scores[i])) for i in order))


def select_tool(task: TaskDescription, index: ToolIndex, provider: Provider, k: int | None = None) -> RetrievalResult:
    if len(index) == 0:
        raise EmptyCorpus("empty tool index")
    return rank_vector(embed_task(task, index, provider), index, k)


def rank_of(task: TaskDescription, index: ToolIndex, provider: Provider, target_tool_id: str) -> int:
    if target_tool_id not in index:
        raise UnknownTool(target_tool_id)
    vec = embed_task(task, index, provider)
    return index.rank(index.scores(vec), target_tool_id)


# -- persistence ------------------------------------------------------------

def save_index(index: ToolIndex, path) -> None:
    header = {"version": INDEX_VERSION, "dim": index.dim, "count": len(index), **index.provenance()}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for tid, row in zip(index.tool_ids, index.matrix):
            fh.write('{"tool_id": %s, "values": %s}\n' % (json.dumps(tid, ensure_ascii=False),
                                                          _format_values(row.tolist())))


def load_index(path, expect: dict | None = None) -> ToolIndex:
    """Load an index file; ``expect`` holds provenance fields that must match."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty index file")
    try:
        header = json.loads(lines[0])
        rows = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid index file ({exc.msg})") from None
    if header.get("version") != INDEX_VERSION:
        raise DataError(f"{path}: unsupported index version {header.get('version')!r}")
    for key, want in (expect or {}).items():
        if want is not None and header.get(key) != want:
            raise IndexMismatch(f"{path}: index {key} is {header.get(key)!r}, active config wants {want!r}")
    matrix = np.array([r["values"] for r in rows], dtype=np.float64).reshape(len(rows), header["dim"])
    return ToolIndex([r["tool_id"] for r in rows], matrix, corpus_id=header["corpus_id"],
                     format=header["format"], provider_id=header["provider_id"], model_id=header["model_id"])
