"""Recompute Avg_q / Avg_m for the published result rows from their per-modality accuracies.

    python3 scripts/reproduce_table_aggregates.py [--rows tests/fixtures/published_rows.json]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from ratatool.evaluation import aggregate_from_accuracies

DEFAULT_ROWS = Path(__file__).resolve().parent.parent / "tests/fixtures/published_rows.json"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", default=str(DEFAULT_ROWS))
    ap.add_argument("--tolerance", type=float, default=0.1)
    args = ap.parse_args()
    data = json.loads(Path(args.rows).read_text(encoding="utf-8"))
    counts = data["test_counts"]
    print(f"{'row':<12} {'Text':>5} {'Image':>5} {'Audio':>5}  {'Avg_q':>6} {'pub':>5}  {'Avg_m':>6} {'pub':>5}  ok")
    failures = 0
    for name, (text, image, audio, pub_q, pub_m) in data["rows"].items():
        q, m = aggregate_from_accuracies({"Text": text, "Image": image, "Audio": audio}, counts)
        ok = abs(q - pub_q) <= args.tolerance and abs(m - pub_m) <= args.tolerance
        failures += not ok
        print(f"{name:<12} {text:>5.1f} {image:>5.1f} {audio:>5.1f}  {q:>6.2f} {pub_q:>5.1f}  {m:>6.2f} {pub_m:>5.1f}  "
              f"{'yes' if ok else 'NO'}")
    print(f"{len(data['rows']) - failures}/{len(data['rows'])} rows within {args.tolerance}")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main())
