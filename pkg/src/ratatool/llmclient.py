"""Description generation: prompt templates, a chat-completion client, parsing.

Decoding happens on the remote model; records are only labelled with the
strategy that was requested.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence
from urllib.parse import urlparse

import requests

from .corpus import ToolCorpus
from .errors import (ApiError, ConfigError, DataError, GenerationError, MissingPlaceholder,
                     ParseError, SchemaError, UnknownTool)
from .tooldesc import (DESCRIPTION_KEYS, Attachment, AttachmentKind, DecodingStrategy,
                       DescriptionFormat, Query, TaskDescription, ToolDescription, validate_tool)

log = logging.getLogger(__name__)

PLACEHOLDERS = ("model_card", "query", "query_2_image")
REPROMPT_SUFFIX = "\n\nReturn only a valid JSON object."
IMAGE_MARKER = "<image>"


class TemplateName(str, Enum):
    JSON_MODEL_DESCRIPTION = "JsonModelDescription"
    JSON_INFERENCE = "JsonInference"
    NL_MODEL_DESCRIPTION = "NlModelDescription"
    NL_INFERENCE = "NlInference"


_ASSETS = {
    TemplateName.JSON_MODEL_DESCRIPTION: ("json_model_description.txt", 1),
    TemplateName.JSON_INFERENCE: ("json_inference.txt", 2),
    TemplateName.NL_MODEL_DESCRIPTION: ("nl_model_description.txt", 1),
    TemplateName.NL_INFERENCE: ("nl_inference.txt", 2),
}

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: TemplateName
    body: str
    in_context_examples: int

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(_PLACEHOLDER_RE.findall(self.body)))


def load_template(name: TemplateName | str) -> PromptTemplate:
    name = TemplateName(name)
    filename, shots = _ASSETS[name]
    text = resources.files("ratatool").joinpath("prompts", filename).read_text(encoding="utf-8")
    # the asset's final newline terminates the file, it is not prompt text
    return PromptTemplate(name, text[:-1] if text.endswith("\n") else text, shots)


def template_for(kind: str, format: DescriptionFormat) -> PromptTemplate:
    nl = DescriptionFormat(format) is DescriptionFormat.NL
    if kind == "tool":
        return load_template(TemplateName.NL_MODEL_DESCRIPTION if nl else TemplateName.JSON_MODEL_DESCRIPTION)
    return load_template(TemplateName.NL_INFERENCE if nl else TemplateName.JSON_INFERENCE)


def render_prompt(template: PromptTemplate, args: dict[str, Any]) -> str:
    """Substitute ``{name}`` placeholders; every other byte is left alone."""
    for name in template.placeholders:
        if name not in args:
            raise MissingPlaceholder(name)
    return _PLACEHOLDER_RE.sub(lambda m: str(args[m.group(1)]), template.body)


# -- generation configs -----------------------------------------------------

@dataclass(frozen=True)
class GenerationConfig:
    strategy: DecodingStrategy
    temperature: float
    num_beams: int
    do_sample: bool
    seed: int | None = None

    def __post_init__(self):
        s = DecodingStrategy(self.strategy)
        object.__setattr__(self, "strategy", s)
        want = _PRESETS[s]
        if (self.temperature, self.num_beams, self.do_sample) != want:
            raise ConfigError(f"{s.value} requires temperature/beams/sampling {want}, "
                              f"got {(self.temperature, self.num_beams, self.do_sample)}")

    @classmethod
    def preset(cls, strategy, seed: int | None = None) -> "GenerationConfig":
        t, b, s = _PRESETS[DecodingStrategy(strategy)]
        return cls(strategy, t, b, s, seed)


# (temperature, num_beams, do_sample)
_PRESETS = {
    DecodingStrategy.GREEDY: (0.0, 1, False),
    DecodingStrategy.BEAM5: (0.0, 5, False),
    DecodingStrategy.SAMPLE_T07: (0.7, 1, True),
    DecodingStrategy.SAMPLE_T10: (1.0, 1, True),
    DecodingStrategy.SAMPLE_BEAM3: (1.0, 3, True),
}


@dataclass(frozen=True)
class GenerationRecord:
    query_id: str
    strategy: DecodingStrategy
    raw_output: str
    parsed: TaskDescription | None = None
    parse_error: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", DecodingStrategy(self.strategy))
        if (self.parsed is None) == (self.parse_error is None):
            raise DataError("exactly one of parsed / parse_error must be set")

    def to_record(self) -> dict:
        rec: dict[str, Any] = {"query_id": self.query_id, "strategy": self.strategy.value,
                               "raw_output": self.raw_output}
        if self.parsed is not None:
            rec["format"] = self.parsed.format.value
            rec["parsed"] = self.parsed.fields()
        else:
            rec["parse_error"] = self.parse_error
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "GenerationRecord":
        parsed = None
        if rec.get("parsed") is not None:
            p = rec["parsed"]
            parsed = TaskDescription(rec["format"], p["input"], p["process"], p["output"],
                                     rec["strategy"], rec["raw_output"])
        return cls(rec["query_id"], rec["strategy"], rec["raw_output"], parsed, rec.get("parse_error"))


# -- chat client ------------------------------------------------------------

class ChatClient(Protocol):
    def complete(self, content: list[dict], config: GenerationConfig) -> str: ...


def attachment_part(att: Attachment) -> dict:
    """Chat content part for an attachment; local files are inlined as base64."""
    ref = att.payload_ref
    scheme = urlparse(ref).scheme
    if scheme in ("http", "https", "data"):
        url = ref
        data = None
    else:
        path = Path(urlparse(ref).path if scheme == "file" else ref)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read attachment {ref}: {exc}") from None
        data = base64.b64encode(raw).decode("ascii")
        url = f"data:{att.media_type};base64,{data}"
    if att.kind is AttachmentKind.IMAGE:
        return {"type": "image_url", "image_url": {"url": url}}
    if data is None:
        return {"type": "input_audio", "input_audio": {"url": url, "format": att.media_type.split("/", 1)[1]}}
    return {"type": "input_audio", "input_audio": {"data": data, "format": att.media_type.split("/", 1)[1]}}


class HttpChatClient:
    """OpenAI-style ``/chat/completions`` client."""

    def __init__(self, endpoint: str, model_id: str, token: str | None = None, *, attempts: int = 3,
                 base_delay: float = 0.5, timeout: float = 120.0, session: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if not endpoint or not model_id:
            raise ConfigError("chat endpoint/model not configured (RATATOOL_CHAT_URL, RATATOOL_CHAT_MODEL)")
        self.endpoint = endpoint
        self.model_id = model_id
        self.token = token
        self.attempts = attempts
        self.base_delay = base_delay
        self.timeout = timeout
        self.session = session or requests.Session()
        self.sleep = sleep

    @classmethod
    def from_env(cls, env=None, **kwargs) -> "HttpChatClient":
        env = os.environ if env is None else env
        return cls(env.get("RATATOOL_CHAT_URL", ""), env.get("RATATOOL_CHAT_MODEL", ""),
                   env.get("RATATOOL_CHAT_TOKEN"), **kwargs)

    def payload(self, content: list[dict], config: GenerationConfig) -> dict:
        body: dict[str, Any] = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": content}],
            "temperature": config.temperature,
        }
        if config.num_beams > 1:
            body["num_beams"] = config.num_beams
        if config.seed is not None:
            body["seed"] = config.seed
        return body

    def complete(self, content: list[dict], config: GenerationConfig) -> str:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = self.payload(content, config)
        last = ""
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.base_delay * 2 ** (attempt - 1))
            try:
                resp = self.session.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last = str(exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
                continue
            if resp.status_code >= 400:
                raise GenerationError(str(ApiError(resp.status_code, resp.text)))
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise GenerationError(f"malformed chat response: {resp.text[:200]}") from None
        raise GenerationError(f"chat request failed after {self.attempts} attempts ({last})")


class ScriptedClient:
    """Returns canned replies in order and records every request."""

    def __init__(self, replies: Sequence[str | Exception]):
        self.replies = list(replies)
        self.calls: list[tuple[list[dict], GenerationConfig]] = []

    def complete(self, content, config):
        self.calls.append((content, config))
        reply = self.replies[min(len(self.calls), len(self.replies)) - 1]
        if isinstance(reply, Exception):
            raise reply
        return reply


# -- parsing ----------------------------------------------------------------

def _balanced_end(text: str, start: int) -> int | None:
    depth = 0
    in_str = False
    escaped = False
    for i in range(start, len(text)):
        c = text[i]
        if in_str:
            if escaped:
                escaped = False
            elif c == "\\":
                escaped = True
            elif c == '"':
                in_str = False
        elif c == '"':
            in_str = True
        elif c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


# the inference prompt's own example omits commas between fields; models copy it
_MISSING_COMMA = re.compile(r'"(\s*\n\s*)(?=")')


def extract_json_object(text: str) -> dict | None:
    """First balanced ``{...}`` span that decodes to a JSON object."""
    for m in re.finditer(r"\{", text):
        end = _balanced_end(text, m.start())
        if end is None:
            continue
        span = text[m.start():end]
        for candidate in (span, _MISSING_COMMA.sub(r'",\1', span)):
            try:
                obj = json.loads(candidate)
            except json.JSONDecodeError:
                continue
            if isinstance(obj, dict):
                return obj
    return None


def parse_description(raw: str, format: DescriptionFormat, strategy=DecodingStrategy.GREEDY) -> TaskDescription:
    format = DescriptionFormat(format)
    if format is DescriptionFormat.NL:
        prose = raw.strip()
        if not prose:
            raise ParseError("empty NL description", [raw])
        return TaskDescription.from_prose(prose, strategy, raw)
    obj = extract_json_object(raw)
    if obj is None:
        raise ParseError("no JSON object found in generation", [raw])
    try:
        tool = validate_tool(obj)
    except SchemaError as exc:
        raise ParseError(f"generated JSON failed validation: {exc}", [raw]) from None
    return TaskDescription(format, tool.input, tool.process, tool.output, strategy, raw)


# -- operations -------------------------------------------------------------

def describe_tool(model_card: str, format: DescriptionFormat, client: ChatClient,
                  config: GenerationConfig | None = None) -> TaskDescription:
    """Turn a model card into description fields, re-prompting once on a bad reply."""
    if not model_card.strip():
        raise DataError("empty model card")
    config = config or GenerationConfig.preset(DecodingStrategy.GREEDY)
    prompt = render_prompt(template_for("tool", format), {"model_card": model_card})
    raws = []
    for text in (prompt, prompt + REPROMPT_SUFFIX):
        raw = client.complete([{"type": "text", "text": text}], config)
        raws.append(raw)
        try:
            return parse_description(raw, format, config.strategy)
        except ParseError:
            log.info("unparseable model description (attempt %d)", len(raws))
    raise ParseError("no valid description after re-prompt", raws)


def as_tool(desc: TaskDescription, tool_id: str, modality, source: str | None = None) -> ToolDescription:
    if desc.format is not DescriptionFormat.JSON:
        raise DataError("only JSON descriptions can become corpus tools")
    return ToolDescription(tool_id, desc.input, desc.process, desc.output, modality, source)


def query_content(q: Query, format: DescriptionFormat) -> list[dict]:
    prompt = render_prompt(template_for("task", format), {"query": q.text, "query_2_image": IMAGE_MARKER})
    return [{"type": "text", "text": prompt}] + [attachment_part(a) for a in q.attachments]


def describe_task(q: Query, format: DescriptionFormat, config: GenerationConfig, client: ChatClient) -> GenerationRecord:
    """One generation for one query. Parse failures land in the record."""
    raw = client.complete(query_content(q, format), config)
    try:
        parsed = parse_description(raw, format, config.strategy)
    except ParseError as exc:
        return GenerationRecord(q.query_id, config.strategy, raw, parse_error=str(exc))
    return GenerationRecord(q.query_id, config.strategy, raw, parsed=parsed)


def describe_batch(queries: Sequence[Query], format: DescriptionFormat, configs: Sequence[GenerationConfig],
                   client: ChatClient, parallelism: int = 2) -> list[GenerationRecord]:
    """Every (query, config) combination, returned in query-then-config order."""
    jobs = [(q, c) for q in queries for c in configs]
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(lambda job: describe_task(job[0], format, job[1], client), jobs))


# -- mock generator ---------------------------------------------------------

def corpus_vocabulary(corpus: ToolCorpus) -> list[str]:
    words = {w for t in corpus.tools for k in DESCRIPTION_KEYS for w in getattr(t, k).split()}
    return sorted(words)


def mock_generate(q: Query, corpus: ToolCorpus, noise: float, seed: int,
                  strategy=DecodingStrategy.GREEDY, vocabulary: list[str] | None = None) -> TaskDescription:
    """Ground-truth description with a seeded fraction of words replaced.

    round(noise * n_words) word positions, chosen without replacement, each
    get a uniformly drawn corpus word. The PRNG is keyed on (seed, query id,
    strategy) so results do not depend on call order.
    """
    if not 0.0 <= noise <= 1.0:
        raise DataError(f"noise must lie in [0, 1], got {noise}")
    tools = corpus.by_id()
    if q.gt_tool_id not in tools:
        raise UnknownTool(str(q.gt_tool_id))
    gt = tools[q.gt_tool_id]
    strategy = DecodingStrategy(strategy)
    fields = [getattr(gt, k).split() for k in DESCRIPTION_KEYS]
    slots = [(f, i) for f, words in enumerate(fields) for i in range(len(words))]
    n_replace = round(noise * len(slots))
    if n_replace:
        vocab = vocabulary if vocabulary is not None else corpus_vocabulary(corpus)
        rng = random.Random(f"{seed}\x1f{q.query_id}\x1f{strategy.value}")
        for f, i in rng.sample(slots, n_replace):
            fields[f][i] = rng.choice(vocab)
    texts = [" ".join(words) for words in fields]
    raw = json.dumps(dict(zip(DESCRIPTION_KEYS, texts)), ensure_ascii=False)
    return TaskDescription(DescriptionFormat.JSON, *texts, strategy=strategy, raw=raw)


class MockGenerator:
    """Generator backed by :func:`mock_generate`; same call shape as the real one."""

    def __init__(self, corpus: ToolCorpus, noise: float = 0.0, seed: int = 0):
        self.corpus = corpus
        self.noise = noise
        self.seed = seed
        self._vocab = corpus_vocabulary(corpus)

    def __call__(self, q: Query, config: GenerationConfig | None = None) -> GenerationRecord:
        strategy = config.strategy if config else DecodingStrategy.GREEDY
        task = mock_generate(q, self.corpus, self.noise, self.seed, strategy, self._vocab)
        return GenerationRecord(q.query_id, strategy, task.raw, parsed=task)


class ClientGenerator:
    """Generator that calls a chat client through :func:`describe_task`."""

    def __init__(self, client: ChatClient, format: DescriptionFormat = DescriptionFormat.JSON):
        self.client = client
        self.format = DescriptionFormat(format)

    def __call__(self, q: Query, config: GenerationConfig | None = None) -> GenerationRecord:
        return describe_task(q, self.format, config or GenerationConfig.preset(DecodingStrategy.GREEDY), self.client)
