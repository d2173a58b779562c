"""Write the small synthetic fixture used by the CLI tests.

The expected report is computed by brute force: exact rational dot products,
a full sort by (-score, tool_id) and hand-rolled counting. It does not call
the package's retrieval or evaluation code.

    python3 scripts/make_synthetic_fixture.py [--out tests/fixtures/synthetic]
"""

from __future__ import annotations

import argparse
import json
from fractions import Fraction
from pathlib import Path

from ratatool.corpus import save_queries, save_tools
from ratatool.embed import hash_embed
from ratatool.llmclient import MockGenerator
from ratatool.synthetic import make_corpus
from ratatool.tooldesc import DescriptionFormat, canonical_text

N_TOOLS, N_QUERIES, CORPUS_SEED = 20, 60, 7
NOISE, GEN_SEED, DIM = 0.7, 0, 64


def brute_force_report(corpus, queries, noise, seed, dim):
    def exact(values):
        return [Fraction(x) for x in values]

    tool_vecs = [(t.tool_id, exact(hash_embed(canonical_text(t, DescriptionFormat.JSON), dim)))
                 for t in corpus.tools]
    gen = MockGenerator(corpus, noise, seed)
    hits: dict[str, list[int]] = {}
    for q in queries.queries:
        task = gen(q).parsed
        qv = exact(hash_embed(canonical_text(task, DescriptionFormat.JSON), dim))
        # exact arithmetic so genuine ties stay ties and break on tool_id
        scored = sorted(((-sum(a * b for a, b in zip(qv, v)), tid) for tid, v in tool_vecs))
        row = hits.setdefault(q.modality.value, [0, 0])
        row[0] += scored[0][1] == q.gt_tool_id
        row[1] += 1
    order = [m for m in ("Text", "Image", "Audio") if m in hits]
    accuracy = {m: 100.0 * hits[m][0] / hits[m][1] for m in order}
    counts = {m: hits[m][1] for m in order}
    return {
        "accuracy": accuracy,
        "counts": counts,
        "avg_q": 100.0 * sum(h[0] for h in hits.values()) / sum(h[1] for h in hits.values()),
        "avg_m": sum(accuracy.values()) / len(accuracy),
        "settings": {"noise": noise, "seed": seed, "embed_dim": dim, "format": "JSON"},
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "tests/fixtures/synthetic"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus, queries = make_corpus(N_TOOLS, N_QUERIES, CORPUS_SEED)
    save_tools(corpus, out / "tools.jsonl")
    save_queries(queries, out / "queries.jsonl")
    report = brute_force_report(corpus, queries, NOISE, GEN_SEED, DIM)
    (out / "expected_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(report, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
