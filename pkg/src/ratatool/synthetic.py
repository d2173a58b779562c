"""Seeded synthetic tool corpora and query sets for offline runs."""

from __future__ import annotations

import random

from .corpus import QuerySet, ToolCorpus
from .tooldesc import MODALITIES, Attachment, Modality, Query, ToolDescription

_SYLLABLES = ["ka", "lo", "mi", "ne", "ru", "ta", "vo", "zi", "pe", "sa", "do", "fu", "gi", "ho", "ju", "be"]
_MEDIA = {Modality.IMAGE: ("image", "image/png"), Modality.AUDIO: ("audio", "audio/wav")}


def _words(rng: random.Random, n: int) -> list[str]:
    return ["".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 4))) for _ in range(n)]


def split_counts(total: int, weights=(0.5, 0.3, 0.2)) -> tuple[int, ...]:
    counts = [int(total * w) for w in weights]
    counts[0] += total - sum(counts)
    return tuple(counts)


def make_corpus(n_tools: int = 50, n_queries: int = 300, seed: int = 0,
                corpus_id: str = "synthetic") -> tuple[ToolCorpus, QuerySet]:
    """Tools spread over the three modalities; every query names its tool.

    Each query's modality matches its tool's modality.
    """
    rng = random.Random(seed)
    vocab = sorted(set(_words(rng, 600)))
    tools = []
    per_mod = split_counts(n_tools)
    i = 0
    for modality, n in zip(MODALITIES, per_mod):
        for _ in range(n):
            fields = [" ".join(rng.sample(vocab, rng.randint(6, 12))) for _ in range(3)]
            tools.append(ToolDescription(f"tool-{i:04d}", *fields, modality=modality,
                                         source=f"synthetic://{corpus_id}/{i}"))
            i += 1
    queries = []
    for j in range(n_queries):
        tool = tools[j % len(tools)] if j < len(tools) else rng.choice(tools)
        text = "please " + " ".join(rng.sample(vocab, rng.randint(4, 9)))
        atts: tuple[Attachment, ...] = ()
        if tool.modality in _MEDIA:
            kind, media = _MEDIA[tool.modality]
            atts = (Attachment(kind, f"synthetic://{kind}/{j:05d}", media),)
        queries.append(Query(f"q-{j:05d}", text, atts, tool.tool_id))
    return ToolCorpus(tools, corpus_id), QuerySet(queries, corpus_id + "-queries")
