"""Accuracy of the mock generator as its word-replacement noise grows.

    python3 scripts/noise_sweep.py --tools 50 --queries 300 --dim 256
"""

from __future__ import annotations

import argparse

from ratatool.embed import LocalEmbedder
from ratatool.evaluation import evaluate
from ratatool.llmclient import MockGenerator
from ratatool.retrieve import build_index
from ratatool.synthetic import make_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tools", type=int, default=50)
    ap.add_argument("--queries", type=int, default=300)
    ap.add_argument("--dim", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--levels", default="0,0.25,0.5,0.75,0.9,1.0")
    args = ap.parse_args()

    corpus, queries = make_corpus(args.tools, args.queries, args.seed)
    provider = LocalEmbedder(args.dim)
    index = build_index(corpus, provider)
    print(f"{'noise':>5}  {'Text':>5}  {'Image':>5}  {'Audio':>5}  {'Avg_q':>5}  {'Avg_m':>5}  {'R@5':>5}")
    for noise in (float(x) for x in args.levels.split(",")):
        _, r = evaluate(queries.queries, MockGenerator(corpus, noise, args.seed), index, provider)
        acc = [r.accuracy.get(m, float("nan")) for m in ("Text", "Image", "Audio")]
        print(f"{noise:>5.2f}  " + "  ".join(f"{a:>5.1f}" for a in acc)
              + f"  {r.avg_q:>5.1f}  {r.avg_m:>5.1f}  {r.recall_at_k[5]['All']:>5.1f}")


if __name__ == "__main__":
    main()
