import hashlib
import json
import math
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import CountingProvider, StubServer
from ratatool.embed import (CachedProvider, EmbeddingCache, EmbeddingVector, LocalEmbedder, RemoteEmbedder,
                            cache_get_or_embed, cache_key, embed_local, fnv1a_64, tokenize)
from ratatool.errors import ApiError, CacheCorruption, ConfigError, DataError, DimensionMismatch

# published FNV-1a 64-bit test vectors
FNV_VECTORS = [(b"", 0xCBF29CE484222325), (b"a", 0xAF63DC4C8601EC8C), (b"foobar", 0x85944171F73967E8)]

GOLDEN_TEXTS = ["", "Hello, world!", "Text written in Russian, provided as a sentence.",
                "Привет мир 42 times", "a_b-c  D"]
GOLDEN_DIGEST = "ef570591cfea47da8c484bd8f21bb1e5aa0858ea5392c6c9adbca34ef24139d0"


@pytest.mark.parametrize("data, expected", FNV_VECTORS)
def test_fnv1a_reference_vectors(data, expected):
    assert fnv1a_64(data) == expected


def test_tokenize():
    assert tokenize("Hello, WORLD__x 42") == ["hello", "world", "x", "42"]
    assert tokenize("  ") == []


def test_single_token_bucket_and_sign():
    # fnv1a("a") = 0xaf63dc4c8601ec8c: bucket 0x8c % 8 = 4, bit 32 of the hash is 0 -> +1
    assert embed_local(["a"], 8)[0].values == (0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)


def test_empty_text_maps_to_e0():
    v = embed_local([""], 16)[0]
    assert v.values == (1.0,) + (0.0,) * 15


def test_local_embedder_is_bit_exact_golden():
    """Packed big-endian float64 bytes pinned; any platform must reproduce them."""
    h = hashlib.sha256()
    for v in embed_local(GOLDEN_TEXTS, 64):
        h.update(struct.pack(">64d", *v.values))
    assert h.hexdigest() == GOLDEN_DIGEST


def test_local_dim_floor():
    with pytest.raises(ConfigError):
        LocalEmbedder(4)


@given(st.text(), st.integers(8, 300))
def test_local_is_pure_and_normalized(text, dim):
    a = embed_local([text], dim)[0]
    b = embed_local([text], dim)[0]
    assert a.values == b.values
    assert a.dim == dim
    assert abs(math.sqrt(sum(x * x for x in a.values)) - 1.0) <= 1e-9
    assert abs(sum(x * x for x in a.values) - 1.0) <= 1e-9


def test_vector_rejects_non_finite():
    with pytest.raises(DataError):
        EmbeddingVector((1.0, float("nan")), "p", "m")


# -- remote client -------------------------------------------------------------

def _embed_reply(*rows):
    return {"data": [{"index": i, "embedding": r} for i, r in enumerate(rows)]}


def test_remote_normalizes_on_receipt():
    with StubServer({"/v1/embeddings": [(200, _embed_reply([3.0, 4.0]))]}) as srv:
        client = RemoteEmbedder(srv.url + "/v1/embeddings", "emb-model", "secret")
        (v,) = client.embed(["hello"])
        method, path, headers, body = srv.requests[0]
    assert v.values == pytest.approx((0.6, 0.8), abs=1e-15)
    assert method == "POST"
    assert body == {"model": "emb-model", "input": ["hello"]}
    assert headers["Authorization"] == "Bearer secret"


def test_remote_preserves_order_by_index():
    reply = {"data": [{"index": 1, "embedding": [0.0, 2.0]}, {"index": 0, "embedding": [5.0, 0.0]}]}
    with StubServer({"/e": [(200, reply)]}) as srv:
        vs = RemoteEmbedder(srv.url + "/e", "m").embed(["first", "second"])
    assert [v.values for v in vs] == [(1.0, 0.0), (0.0, 1.0)]


def test_remote_dimension_mismatch():
    with StubServer({"/e": [(200, _embed_reply([1, 0, 0, 0], [1, 0, 0, 0, 0]))]}) as srv:
        with pytest.raises(DimensionMismatch):
            RemoteEmbedder(srv.url + "/e", "m").embed(["a", "b"])


def test_remote_batches_and_retries():
    rows = [[float(i + 1), 1.0] for i in range(5)]
    script = {"/e": [(502, "bad gateway"), (200, _embed_reply(*rows[:2])), (200, _embed_reply(*rows[2:4])),
                     (200, _embed_reply(rows[4]))]}
    delays = []
    with StubServer(script) as srv:
        client = RemoteEmbedder(srv.url + "/e", "m", batch_size=2, parallelism=1, sleep=delays.append)
        vs = client.embed([f"t{i}" for i in range(5)])
        sizes = [len(r[3]["input"]) for r in srv.requests]
    assert sizes == [2, 2, 2, 1]
    assert delays == [0.5]
    assert len(vs) == 5 and all(abs(v.norm() - 1) < 1e-12 for v in vs)


def test_remote_client_error_is_not_retried():
    with StubServer({"/e": [(401, "unauthorized")]}) as srv:
        with pytest.raises(ApiError) as exc:
            RemoteEmbedder(srv.url + "/e", "m").embed(["a"])
        assert len(srv.requests) == 1
    assert exc.value.status == 401


def test_remote_from_env():
    env = {"RATATOOL_EMBED_URL": "http://x/e", "RATATOOL_EMBED_MODEL": "m", "RATATOOL_EMBED_TOKEN": "tok"}
    client = RemoteEmbedder.from_env(env)
    assert (client.endpoint, client.model_id, client.token) == ("http://x/e", "m", "tok")
    with pytest.raises(ConfigError):
        RemoteEmbedder.from_env({})


# -- cache ---------------------------------------------------------------------

def test_cache_key_layout():
    expected = hashlib.sha256(b"prov\x1fmodel\x1ftext").hexdigest()
    assert cache_key("prov", "model", "text") == expected


def test_cache_hit_skips_provider(tmp_path):
    provider = CountingProvider()
    cache = EmbeddingCache(tmp_path / "c.jsonl")
    first = cache_get_or_embed("hello world", provider, cache)
    second = cache_get_or_embed("hello world", provider, cache)
    assert provider.calls == 1
    assert first == second


def test_cache_distinguishes_models(tmp_path):
    cache = EmbeddingCache(tmp_path / "c.jsonl")
    p1, p2 = CountingProvider(model_id="m1"), CountingProvider(model_id="m2")
    cache_get_or_embed("same", p1, cache)
    cache_get_or_embed("same", p2, cache)
    assert p1.calls == p2.calls == 1
    assert len(cache) == 2


def test_cache_survives_reload_exactly(tmp_path):
    path = tmp_path / "c.jsonl"
    provider = CountingProvider(LocalEmbedder(32))
    texts = ["alpha beta", "gamma", "delta epsilon zeta"]
    stored = [cache_get_or_embed(t, provider, EmbeddingCache(path)) for t in texts]
    reloaded = EmbeddingCache(path)
    again = CountingProvider(LocalEmbedder(32))
    assert [cache_get_or_embed(t, again, reloaded) for t in texts] == stored
    assert again.calls == 0


@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=1, max_size=8))
def test_cache_value_serialization_round_trips(values):
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        cache = EmbeddingCache(f"{d}/c.jsonl")
        vec = EmbeddingVector(tuple(values), "p", "m")
        cache.put("k", vec)
        assert EmbeddingCache(f"{d}/c.jsonl").get("k") == vec


def test_cache_corruption_reports_line(tmp_path):
    path = tmp_path / "c.jsonl"
    provider = CountingProvider()
    cache = EmbeddingCache(path)
    cache_get_or_embed("one", provider, cache)
    cache_get_or_embed("two", provider, cache)
    with open(path, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(CacheCorruption) as exc:
        EmbeddingCache(path)
    assert exc.value.line == 3


def test_cache_dim_mismatch_is_corruption(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps({"key": "k", "dim": 3, "values": [1.0, 0.0], "provider_id": "p",
                                "model_id": "m"}) + "\n")
    with pytest.raises(CacheCorruption):
        EmbeddingCache(path)


def test_cached_provider_batches_only_misses(tmp_path):
    inner = CountingProvider()
    cached = CachedProvider(inner, EmbeddingCache(tmp_path / "c.jsonl"))
    a = cached.embed(["x", "y", "x"])
    b = cached.embed(["y", "z"])
    assert inner.calls == 2
    assert inner.texts == ["x", "y", "z"]
    assert a[1] == b[0]
