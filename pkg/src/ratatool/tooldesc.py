"""Description schema shared by tools and generated task descriptions.

A description has three text fields (``input``, ``process``, ``output``).
Tools additionally carry an identity and the modality class of the queries
they serve. Everything here is immutable once constructed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Union

from .errors import MixedModalityError, SchemaError

DESCRIPTION_KEYS = ("input", "process", "output")


class Modality(str, Enum):
    TEXT = "Text"
    IMAGE = "Image"
    AUDIO = "Audio"


MODALITIES = (Modality.TEXT, Modality.IMAGE, Modality.AUDIO)


class DescriptionFormat(str, Enum):
    JSON = "JSON"
    NL = "NL"


class DecodingStrategy(str, Enum):
    GREEDY = "Greedy"
    BEAM5 = "Beam5"
    SAMPLE_T07 = "SampleT07"
    SAMPLE_T10 = "SampleT10"
    SAMPLE_BEAM3 = "SampleBeam3"


STRATEGIES = tuple(DecodingStrategy)


def _require_text(value: Any, key: str, *, allow_empty: bool = False) -> str:
    if not isinstance(value, str):
        raise SchemaError(key, "wrong type for field")
    value = value.strip()
    if not value and not allow_empty:
        raise SchemaError(key, "empty field")
    return value


@dataclass(frozen=True)
class ToolDescription:
    tool_id: str
    input: str
    process: str
    output: str
    modality: Modality = Modality.TEXT
    source: str | None = None

    def __post_init__(self):
        for key in ("tool_id",) + DESCRIPTION_KEYS:
            object.__setattr__(self, key, _require_text(getattr(self, key), key))
        try:
            object.__setattr__(self, "modality", Modality(self.modality))
        except ValueError:
            raise SchemaError("modality", "invalid value for field") from None
        if self.source is not None and not isinstance(self.source, str):
            raise SchemaError("source", "wrong type for field")

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "tool_id": self.tool_id,
            "input": self.input,
            "process": self.process,
            "output": self.output,
            "modality": self.modality.value,
        }
        if self.source is not None:
            rec["source"] = self.source
        return rec


@dataclass(frozen=True)
class TaskDescription:
    """A generated description of what a query asks for.

    NL descriptions keep their prose in ``process``; ``input`` and ``output``
    are empty.
    """

    format: DescriptionFormat
    input: str
    process: str
    output: str
    strategy: DecodingStrategy = DecodingStrategy.GREEDY
    raw: str = ""

    def __post_init__(self):
        object.__setattr__(self, "format", DescriptionFormat(self.format))
        object.__setattr__(self, "strategy", DecodingStrategy(self.strategy))
        nl = self.format is DescriptionFormat.NL
        for key in DESCRIPTION_KEYS:
            allow_empty = nl and key != "process"
            object.__setattr__(self, key, _require_text(getattr(self, key), key, allow_empty=allow_empty))

    @classmethod
    def from_prose(cls, prose: str, strategy=DecodingStrategy.GREEDY, raw: str | None = None) -> "TaskDescription":
        return cls(DescriptionFormat.NL, "", prose, "", strategy, prose if raw is None else raw)

    def fields(self) -> dict[str, str]:
        return {k: getattr(self, k) for k in DESCRIPTION_KEYS}


class AttachmentKind(str, Enum):
    IMAGE = "image"
    AUDIO = "audio"


@dataclass(frozen=True)
class Attachment:
    kind: AttachmentKind
    payload_ref: str
    media_type: str

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", AttachmentKind(self.kind))
        except ValueError:
            raise SchemaError("kind", "invalid value for field") from None
        if not isinstance(self.payload_ref, str) or not self.payload_ref.strip():
            raise SchemaError("payload_ref", "empty field")
        if not isinstance(self.media_type, str) or self.media_type.split("/", 1)[0] != self.kind.value:
            raise SchemaError("media_type", f"media type inconsistent with kind {self.kind.value} for field")

    def to_record(self) -> dict[str, str]:
        return {"kind": self.kind.value, "payload_ref": self.payload_ref, "media_type": self.media_type}


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    attachments: tuple[Attachment, ...] = field(default_factory=tuple)
    gt_tool_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "query_id", _require_text(self.query_id, "query_id"))
        object.__setattr__(self, "text", _require_text(self.text, "text"))
        object.__setattr__(self, "attachments", tuple(self.attachments))
        if self.gt_tool_id is not None:
            object.__setattr__(self, "gt_tool_id", _require_text(self.gt_tool_id, "gt_tool_id"))
        modality_class(self)

    @property
    def modality(self) -> Modality:
        return modality_class(self)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "query_id": self.query_id,
            "text": self.text,
            "attachments": [a.to_record() for a in self.attachments],
        }
        if self.gt_tool_id is not None:
            rec["gt_tool_id"] = self.gt_tool_id
        return rec


def modality_class(q: Query) -> Modality:
    kinds = {a.kind for a in q.attachments}
    if len(kinds) > 1:
        raise MixedModalityError(f"query {q.query_id!r} mixes image and audio attachments")
    if not kinds:
        return Modality.TEXT
    return Modality.IMAGE if AttachmentKind.IMAGE in kinds else Modality.AUDIO


def _check_keys(obj: Any, allowed: tuple[str, ...], required: tuple[str, ...]) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError("<root>", "expected a JSON object at")
    for key in obj:
        if key not in allowed:
            raise SchemaError(key, "unknown key")
    for key in required:
        if key not in obj:
            raise SchemaError(key, "missing field")
    return obj


def content_id(input: str, process: str, output: str) -> str:
    """Stable identifier derived from description content."""
    text = canonical_json(input, process, output)
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def validate_tool(raw_json: str | dict, *, tool_id: str | None = None,
                  modality: Modality = Modality.TEXT, source: str | None = None) -> ToolDescription:
    """Parse a three-field description object into a ToolDescription.

    The object must hold exactly ``input``, ``process`` and ``output``.
    Identity is not part of the object; when ``tool_id`` is omitted a
    content-derived id is used.
    """
    if isinstance(raw_json, str):
        try:
            obj = json.loads(raw_json)
        except json.JSONDecodeError as exc:
            raise SchemaError("<root>", f"invalid JSON ({exc.msg}) at") from None
    else:
        obj = raw_json
    _check_keys(obj, DESCRIPTION_KEYS, DESCRIPTION_KEYS)
    values = [_require_text(obj[k], k) for k in DESCRIPTION_KEYS]
    if tool_id is None:
        tool_id = content_id(*values)
    return ToolDescription(tool_id, *values, modality=modality, source=source)


def tool_from_record(rec: Any) -> ToolDescription:
    """Parse one corpus JSONL line (already decoded)."""
    _check_keys(rec, ("tool_id",) + DESCRIPTION_KEYS + ("modality", "source"),
                ("tool_id",) + DESCRIPTION_KEYS + ("modality",))
    return ToolDescription(rec["tool_id"], rec["input"], rec["process"], rec["output"],
                           rec["modality"], rec.get("source"))


def query_from_record(rec: Any) -> Query:
    _check_keys(rec, ("query_id", "text", "attachments", "gt_tool_id"), ("query_id", "text", "attachments"))
    if not isinstance(rec["attachments"], list):
        raise SchemaError("attachments", "wrong type for field")
    atts = []
    for a in rec["attachments"]:
        _check_keys(a, ("kind", "payload_ref", "media_type"), ("kind", "payload_ref", "media_type"))
        atts.append(Attachment(a["kind"], a["payload_ref"], a["media_type"]))
    return Query(rec["query_id"], rec["text"], tuple(atts), rec.get("gt_tool_id"))


def canonical_json(input: str, process: str, output: str) -> str:
    return json.dumps({"input": input, "process": process, "output": output}, ensure_ascii=False)


def canonical_text(d: Union[ToolDescription, TaskDescription], format: DescriptionFormat = DescriptionFormat.JSON) -> str:
    """Deterministic single-line text fed to the embedder.

    JSON: keys in the order input, process, output with ``", "``/``": "``
    separators. NL: the prose of an NL task description verbatim; for
    three-field descriptions the fields joined by single spaces.
    """
    format = DescriptionFormat(format)
    if format is DescriptionFormat.JSON:
        if isinstance(d, TaskDescription) and d.format is DescriptionFormat.NL:
            raise SchemaError("format", "NL description cannot be rendered as JSON; check")
        return canonical_json(d.input, d.process, d.output)
    if isinstance(d, TaskDescription) and d.format is DescriptionFormat.NL:
        return d.process
    return " ".join((d.input, d.process, d.output))
