"""``ratatool`` command line.

Every subcommand writes machine-readable results under ``--out`` together
with ``<command>.manifest.json`` (config snapshot, input checksums, version).
Passing that manifest back via ``--manifest`` re-runs the command.
Exit codes: 2 usage/config, 3 data/schema, 4 remote service.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .align import DpoConfig, batch_dpo_report, load_dpo_examples
from .config import RunConfig, build_config, env_token, read_config_file, read_manifest
from .corpus import (ToolCorpus, QuerySet, clean, load_queries, load_tools, partition_queries,
                     save_queries, save_tools, split_tools, stats, SplitAssignment)
from .embed import CachedProvider, EmbeddingCache, LocalEmbedder, RemoteEmbedder
from .errors import ConfigError, DataError, RataToolError
from .evaluation import dump_items, evaluate
from .llmclient import (ClientGenerator, GenerationConfig, GenerationRecord, HttpChatClient,
                        MockGenerator, describe_batch, parse_description)
from .prefgen import build_dataset, dump_pairs, group_candidates
from .retrieve import build_index, load_index, rank_vector, save_index, embed_task
from .tooldesc import DecodingStrategy, DescriptionFormat

log = logging.getLogger("ratatool")

COMMANDS = ("ingest", "split", "stats", "build-index", "describe", "select", "evaluate", "prefgen", "dpo-report")

# flag name -> RunConfig key
_FLAGS = {
    "corpus": str, "queries": str, "index": str, "cache": str, "split": str, "generations": str,
    "input": str, "task": str, "out": str, "provider": str, "embed_dim": int, "format": str,
    "generator": str, "noise": float, "strategies": str, "seed": int, "ratio": float, "side": str,
    "k": int, "beta": float, "eval_fraction": float, "parallelism": int,
}


class Run:
    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.inputs: dict[str, str] = {}

    def need(self, key: str) -> Path:
        value = getattr(self.cfg, key)
        if value is None:
            raise ConfigError(f"{self.command}: --{key.replace('_', '-')} is required")
        path = Path(value)
        if not path.exists():
            raise ConfigError(f"{self.command}: input not found: {path}")
        self.inputs[value] = hashlib.sha256(path.read_bytes()).hexdigest()
        return path

    def output(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def write_json(self, name: str, obj) -> Path:
        path = self.output(name)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
        return path

    def write_manifest(self) -> None:
        self.write_json(f"{self.command}.manifest.json", {
            "command": self.command,
            "version": __version__,
            "config": self.cfg.snapshot(),
            "inputs": dict(sorted(self.inputs.items())),
        })

    # -- shared builders ----------------------------------------------------

    def provider(self):
        cfg = self.cfg
        if cfg.provider == "local":
            inner = LocalEmbedder(cfg.embed_dim)
        else:
            inner = RemoteEmbedder(cfg.embed_url or os.environ.get("RATATOOL_EMBED_URL", ""),
                                   cfg.embed_model or os.environ.get("RATATOOL_EMBED_MODEL", ""),
                                   env_token("embed"), parallelism=cfg.parallelism)
        if cfg.cache:
            return CachedProvider(inner, EmbeddingCache(cfg.cache))
        return inner

    def chat_client(self) -> HttpChatClient:
        cfg = self.cfg
        return HttpChatClient(cfg.chat_url or os.environ.get("RATATOOL_CHAT_URL", ""),
                              cfg.chat_model or os.environ.get("RATATOOL_CHAT_MODEL", ""), env_token("chat"))

    def load_index(self, provider):
        return load_index(self.need("index"), expect={"format": self.cfg.format,
                                                      "provider_id": provider.provider_id,
                                                      "model_id": provider.model_id})

    def split_assignment(self) -> SplitAssignment | None:
        if self.cfg.split is None:
            return None
        return SplitAssignment.from_json(json.loads(self.need("split").read_text(encoding="utf-8")))

    def corpus_side(self) -> ToolCorpus:
        corpus = load_tools(self.need("corpus"))
        split = self.split_assignment()
        if split is None or self.cfg.side == "all":
            return corpus
        keep = split.train_tool_ids if self.cfg.side == "train" else split.test_tool_ids
        return ToolCorpus([t for t in corpus.tools if t.tool_id in keep], f"{corpus.corpus_id}-{self.cfg.side}")

    def strategies(self) -> list[DecodingStrategy]:
        try:
            return [DecodingStrategy(s.strip()) for s in self.cfg.strategies.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"unknown decoding strategy: {exc}") from None

    def generator(self, corpus: ToolCorpus | None):
        if self.cfg.generator == "mock":
            if corpus is None:
                corpus = load_tools(self.need("corpus"))
            return MockGenerator(corpus, self.cfg.noise, self.cfg.seed)
        return ClientGenerator(self.chat_client(), DescriptionFormat(self.cfg.format))


# -- subcommands ------------------------------------------------------------

def cmd_ingest(run: Run) -> None:
    tools, queries, report = clean(load_tools(run.need("corpus")), load_queries(run.need("queries")))
    save_tools(tools, run.output("tools.jsonl"))
    save_queries(queries, run.output("queries.jsonl"))
    run.write_json("clean_report.json", report.to_json())
    print(f"{len(tools)} tools, {len(queries)} queries, {len(report.removals)} removals")


def cmd_split(run: Run) -> None:
    corpus = load_tools(run.need("corpus"))
    queries = load_queries(run.need("queries"))
    split = split_tools(corpus, queries, run.cfg.ratio, run.cfg.seed)
    train_q, test_q = partition_queries(queries, split)
    run.write_json("split.json", split.to_json())
    save_queries(train_q, run.output("train_queries.jsonl"))
    save_queries(test_q, run.output("test_queries.jsonl"))
    print(f"train {len(split.train_tool_ids)} tools / {len(train_q)} queries; "
          f"test {len(split.test_tool_ids)} tools / {len(test_q)} queries")


def cmd_stats(run: Run) -> None:
    result = stats(load_tools(run.need("corpus")), load_queries(run.need("queries")), run.split_assignment())
    run.write_json("stats.json", result.to_json())
    print(result.render())


def cmd_build_index(run: Run) -> None:
    corpus = run.corpus_side()
    index = build_index(corpus, run.provider(), run.cfg.format)
    path = Path(run.cfg.index) if run.cfg.index else run.output("index.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_index(index, path)
    print(f"indexed {len(index)} tools (dim {index.dim}) -> {path}")


def cmd_describe(run: Run) -> None:
    queries = load_queries(run.need("queries")).queries
    configs = [GenerationConfig.preset(s, run.cfg.seed) for s in run.strategies()]
    fmt = DescriptionFormat(run.cfg.format)
    if run.cfg.generator == "mock":
        gen = run.generator(None)
        records = [gen(q, c) for q in queries for c in configs]
    else:
        records = describe_batch(queries, fmt, configs, run.chat_client(), parallelism=run.cfg.parallelism)
    with open(run.output("generations.jsonl"), "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_record(), ensure_ascii=False) + "\n")
    failed = sum(r.parsed is None for r in records)
    print(f"{len(records)} generations, {failed} unparsed")


def cmd_select(run: Run) -> None:
    provider = run.provider()
    index = run.load_index(provider)
    if run.cfg.task is None:
        raise ConfigError("select: --task is required (JSON description or prose)")
    task_text = run.cfg.task
    if Path(task_text).is_file():
        task_text = run.need("task").read_text(encoding="utf-8")
    task = parse_description(task_text, run.cfg.format)
    if len(index) == 0:
        raise DataError("empty tool index")
    result = rank_vector(embed_task(task, index, provider), index, run.cfg.k)
    run.write_json("selection.json", {"selected": result.selected,
                                      "ranking": [{"tool_id": t, "score": s} for t, s in result.ranking]})
    for i, (tid, score) in enumerate(result.ranking, 1):
        print(f"{i:>3}  {score: .6f}  {tid}")


class _RecordedGenerator:
    def __init__(self, path: Path):
        self.by_query: dict[str, GenerationRecord] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = GenerationRecord.from_record(json.loads(line))
                    self.by_query.setdefault(rec.query_id, rec)

    def __call__(self, q, config=None):
        if q.query_id not in self.by_query:
            raise DataError(f"no recorded generation for query {q.query_id!r}")
        return self.by_query[q.query_id]


def cmd_evaluate(run: Run) -> None:
    provider = run.provider()
    corpus = run.corpus_side()
    queries = load_queries(run.need("queries"))
    split = run.split_assignment()
    if split is not None and run.cfg.side != "all":
        train_q, test_q = partition_queries(queries, split)
        queries = train_q if run.cfg.side == "train" else test_q
    index = run.load_index(provider) if run.cfg.index else build_index(corpus, provider, run.cfg.format)
    generator = _RecordedGenerator(run.need("generations")) if run.cfg.generations else run.generator(corpus)
    items, report = evaluate(queries.queries, generator, index, provider, parallelism=run.cfg.parallelism)
    dump_items(items, run.output("eval_items.jsonl"))
    run.write_json("eval_report.json", report.to_json())
    print(report.render())


def cmd_prefgen(run: Run) -> None:
    provider = run.provider()
    index = run.load_index(provider)
    queries = load_queries(run.need("queries"))
    gt_of = {q.query_id: q.gt_tool_id for q in queries.queries if q.gt_tool_id is not None}
    with open(run.need("generations"), encoding="utf-8") as fh:
        records = [GenerationRecord.from_record(json.loads(line)) for line in fh if line.strip()]
    sets = group_candidates(records, gt_of)
    train, held, report = build_dataset(sets, index, provider, run.cfg.seed, run.cfg.eval_fraction)
    dump_pairs(train, run.output("pref_train.jsonl"))
    dump_pairs(held, run.output("pref_eval.jsonl"))
    run.write_json("prefgen_report.json", report.to_json())
    print(f"{report.pairs_emitted} pairs ({len(train)} train / {len(held)} eval), "
          f"{report.sets_discarded_all_equal} all-equal, {report.sets_discarded_parse_failures} unparsed")


def cmd_dpo_report(run: Run) -> None:
    with open(run.need("input"), encoding="utf-8") as fh:
        examples = load_dpo_examples(fh)
    report = batch_dpo_report(examples, DpoConfig(run.cfg.beta))
    run.write_json("dpo_report.json", report.to_json())
    print(f"n={report.n} mean_loss={report.mean_loss:.6f} mean_margin={report.mean_margin:.6f} "
          f"implicit_accuracy={report.implicit_accuracy:.4f}")


HANDLERS = {
    "ingest": cmd_ingest, "split": cmd_split, "stats": cmd_stats, "build-index": cmd_build_index,
    "describe": cmd_describe, "select": cmd_select, "evaluate": cmd_evaluate, "prefgen": cmd_prefgen,
    "dpo-report": cmd_dpo_report,
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--manifest", help="re-run with the config snapshot of a previous run")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, typ in _FLAGS.items():
        common.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    parser = argparse.ArgumentParser(prog="ratatool", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        layers = []
        if args.manifest:
            layers.append(read_manifest(args.manifest))
        if args.config:
            layers.append(read_config_file(args.config))
        layers.append({k: getattr(args, k) for k in _FLAGS})
        run = Run(args.command, build_config(*layers))
        HANDLERS[args.command](run)
        run.write_manifest()
    except RataToolError as exc:
        print(f"ratatool {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
