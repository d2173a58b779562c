import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ratatool.errors import MixedModalityError, SchemaError
from ratatool.tooldesc import (STRATEGIES, Attachment, DecodingStrategy, DescriptionFormat, Modality, Query,
                               TaskDescription, ToolDescription, canonical_text, modality_class,
                               query_from_record, tool_from_record, validate_tool)

RUBERT = {
    "input": "Text written in Russian, provided as a sentence, paragraph, or document.",
    "process": "Analyze the linguistic and semantic content of the Russian text and transform it into a "
               "multidimensional vector representation that captures meaning, syntax, and contextual nuances.",
    "output": "A numerical embedding vector that encodes the semantic information of the input text, suitable "
              "for downstream tasks such as similarity comparison, clustering, or classification.",
}


def test_validate_rubert_example():
    tool = validate_tool(json.dumps(RUBERT), tool_id="DeepPavlov/rubert-base-cased")
    assert tool.input == RUBERT["input"]
    assert tool.process.startswith("Analyze the linguistic")
    assert tool.output.endswith("or classification.")


def test_empty_field_rejected():
    with pytest.raises(SchemaError) as exc:
        validate_tool('{"input":"x","process":"y","output":""}')
    assert exc.value.key == "output"
    assert "empty" in str(exc.value)


def test_unknown_key_rejected():
    with pytest.raises(SchemaError) as exc:
        validate_tool('{"input":"x","process":"y","output":"z","extra":1}')
    assert exc.value.key == "extra"


@pytest.mark.parametrize("raw, key", [
    ('{"input":"x","process":"y"}', "output"),
    ('{"input":"x","process":2,"output":"z"}', "process"),
    ('{"input":"   ","process":"y","output":"z"}', "input"),
])
def test_schema_errors_name_the_key(raw, key):
    with pytest.raises(SchemaError) as exc:
        validate_tool(raw)
    assert exc.value.key == key


def test_non_object_rejected():
    with pytest.raises(SchemaError):
        validate_tool("[1, 2]")
    with pytest.raises(SchemaError):
        validate_tool("not json")


def test_whitespace_trimmed_at_edges_only():
    tool = validate_tool({"input": "  a  b ", "process": "\nline1\n\nline2\n", "output": "c"})
    assert tool.input == "a  b"
    assert tool.process == "line1\n\nline2"


def test_canonical_text_fixed_order():
    tool = ToolDescription("t", "a", "b", "c")
    assert canonical_text(tool, DescriptionFormat.JSON) == '{"input": "a", "process": "b", "output": "c"}'


def test_canonical_text_ignores_construction_order():
    a = validate_tool('{"output":"c","input":"a","process":"b"}', tool_id="t")
    b = validate_tool('{"input":"a","process":"b","output":"c"}', tool_id="t")
    assert canonical_text(a).encode() == canonical_text(b).encode()
    assert canonical_text(a) == canonical_text(a)


def test_canonical_text_nl():
    task = TaskDescription.from_prose("This model translates text.")
    assert canonical_text(task, DescriptionFormat.NL) == "This model translates text."
    tool = ToolDescription("t", "a", "b", "c")
    assert canonical_text(tool, DescriptionFormat.NL) == "a b c"


def test_nl_task_cannot_render_as_json():
    with pytest.raises(SchemaError):
        canonical_text(TaskDescription.from_prose("prose"), DescriptionFormat.JSON)


def test_task_description_invariants():
    with pytest.raises(SchemaError):
        TaskDescription(DescriptionFormat.JSON, "a", "", "c")
    with pytest.raises(SchemaError):
        TaskDescription(DescriptionFormat.NL, "", "", "")
    assert TaskDescription(DescriptionFormat.NL, "", "p", "").process == "p"


def test_exactly_five_strategies():
    assert [s.value for s in STRATEGIES] == ["Greedy", "Beam5", "SampleT07", "SampleT10", "SampleBeam3"]
    assert len(DecodingStrategy) == 5


def _q(*kinds):
    media = {"image": "image/png", "audio": "audio/wav"}
    return Query("q", "hello", tuple(Attachment(k, f"file{i}", media[k]) for i, k in enumerate(kinds)))


def test_modality_class():
    assert modality_class(_q()) is Modality.TEXT
    assert modality_class(_q("image")) is Modality.IMAGE
    assert modality_class(_q("audio", "audio")) is Modality.AUDIO
    with pytest.raises(MixedModalityError):
        _q("image", "audio")


def test_attachment_media_type_must_match_kind():
    with pytest.raises(SchemaError):
        Attachment("image", "x.wav", "audio/wav")
    with pytest.raises(SchemaError):
        Attachment("image", "", "image/png")


def test_jsonl_records_round_trip():
    tool = ToolDescription("t1", "a", "b", "c", Modality.AUDIO, "https://example.org/card")
    assert tool_from_record(json.loads(json.dumps(tool.to_record()))) == tool
    q = Query("q1", "text", (Attachment("image", "img.png", "image/png"),), "t1")
    assert query_from_record(json.loads(json.dumps(q.to_record()))) == q
    with pytest.raises(SchemaError):
        tool_from_record({**tool.to_record(), "bogus": 1})


field_text = st.text(min_size=1).filter(lambda s: s.strip() == s and s)


@given(field_text, field_text, field_text, st.sampled_from(list(Modality)))
def test_round_trip_property(i, p, o, m):
    tool = ToolDescription("tool", i, p, o, m)
    back = validate_tool(canonical_text(tool, DescriptionFormat.JSON), tool_id="tool", modality=m)
    assert back == tool


@given(field_text, field_text, field_text, field_text, field_text, field_text)
def test_canonical_text_injective(a, b, c, x, y, z):
    one = ToolDescription("t", a, b, c)
    two = ToolDescription("t", x, y, z)
    assert (canonical_text(one) == canonical_text(two)) == ((a, b, c) == (x, y, z))


@given(st.dictionaries(st.sampled_from(["input", "process", "output", "name", "tool"]), st.just("v")))
def test_schema_closure(obj):
    try:
        validate_tool(obj)
    except SchemaError:
        assert set(obj) != {"input", "process", "output"}
    else:
        assert set(obj) == {"input", "process", "output"}
