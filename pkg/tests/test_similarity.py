import json

import httpx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from seqnav.geometry import Pose
from seqnav.similarity import (
    DegenerateInputError, ProviderError, RemoteEmbeddingClient, SyntheticOracleProvider, cosine,
    observation_digest,
)
from seqnav.world import Observation

KEYWORDS = {"couch": {"couch", "sofa"}, "fireplace": {"fireplace", "hearth"}}


def obs(*labels, pose=Pose(1.0, 2.0, 90)):
    return Observation(pose, tuple((l, 0.0, 1.0) for l in labels), ())


def test_cosine_cases():
    assert cosine([1, 2], [1, 2]) == pytest.approx(1.0, abs=1e-12)
    assert cosine([1, 0], [0, 3]) == 0.0
    assert cosine([1, 2], [-1, -2]) == pytest.approx(-1.0, abs=1e-12)


def test_cosine_zero_vector():
    with pytest.raises(DegenerateInputError):
        cosine([0, 0], [1, 0])


def test_cosine_dimension_mismatch():
    with pytest.raises(ValueError):
        cosine([1, 0], [1, 0, 0])


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_cosine_bounded(u, v):
    if np.linalg.norm(u) == 0 or np.linalg.norm(v) == 0:
        return
    assert -1.0 <= cosine(u, v) <= 1.0


# ------------------------------------------------------------------ oracle


def test_oracle_visible_reference():
    p = SyntheticOracleProvider(KEYWORDS, noise_sigma=0)
    assert p.score("walk past the couch", obs("couch")) == pytest.approx(0.95)


def test_oracle_invisible_reference():
    p = SyntheticOracleProvider(KEYWORDS, noise_sigma=0)
    assert p.score("stop by the fireplace", obs("couch")) == pytest.approx(0.05)


def test_oracle_partial_overlap():
    p = SyntheticOracleProvider(KEYWORDS, noise_sigma=0)
    assert p.score("go from the sofa to the hearth", obs("couch")) == pytest.approx(0.05 + 0.45)


def test_oracle_is_deterministic_and_seeded():
    a = SyntheticOracleProvider(KEYWORDS, seed=1).score("the couch", obs("couch"))
    b = SyntheticOracleProvider(KEYWORDS, seed=1).score("the couch", obs("couch"))
    c = SyntheticOracleProvider(KEYWORDS, seed=2).score("the couch", obs("couch"))
    assert a == b != c


def test_synonyms_tie_exactly_under_noise():
    p = SyntheticOracleProvider(KEYWORDS, noise_sigma=0.05, seed=3)
    o = obs("couch")
    assert p.score("walk to the couch", o) == p.score("wait next to the sofa", o)


@given(st.floats(-50, 50), st.floats(-50, 50), st.sampled_from([0.0, 90.0, 195.0]))
def test_noise_is_truncated(x, y, h):
    p = SyntheticOracleProvider(KEYWORDS, noise_sigma=0.02)
    s = p.score("the couch", obs(pose=Pose(x, y, h)))
    assert abs(s - 0.05) <= 3 * 0.02 + 1e-12


def test_oracle_rejects_empty_phrase():
    with pytest.raises(ValueError):
        SyntheticOracleProvider(KEYWORDS).score("  ", obs())


# ------------------------------------------------------------------ remote


class FakeEmbedder:
    """Embeds texts and observation digests by a fixed table."""

    def __init__(self, table, fail=None):
        self.table = table
        self.calls = 0
        self.fail = fail

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.calls += 1
        if self.fail == "timeout":
            raise httpx.ReadTimeout("slow", request=request)
        if self.fail == "garbage":
            return httpx.Response(200, text="not json")
        if self.fail == "short":
            return httpx.Response(200, json={"embeddings": []})
        body = json.loads(request.content)
        items = body.get("texts") or body.get("tokens")
        return httpx.Response(200, json={"embeddings": [self.table.get(t, [1.0, 0.0]) for t in items]})


def _client(handler, **kw):
    return RemoteEmbeddingClient("http://embed.invalid/v1", transport=httpx.MockTransport(handler), **kw)


def test_remote_identical_embeddings_score_one():
    o = obs("couch")
    fake = FakeEmbedder({"the couch": [0.0, 2.0], observation_digest(o): [0.0, 5.0]})
    assert _client(fake).score("the couch", o) == 1.0


def test_remote_caches_requests():
    o = obs("couch")
    fake = FakeEmbedder({})
    c = _client(fake)
    c.score_many(["a", "b"], o)
    c.score_many(["b", "a"], o)
    assert fake.calls == 2  # one for the observation, one for both texts


def test_remote_disk_cache(tmp_path):
    path = str(tmp_path / "cache.json")
    o = obs("couch")
    first = _client(FakeEmbedder({"x": [1.0, 1.0]}), cache_path=path).score("x", o)
    fake = FakeEmbedder({}, fail="timeout")
    assert _client(fake, cache_path=path).score("x", o) == first
    assert fake.calls == 0


@pytest.mark.parametrize("fail", ["timeout", "garbage", "short"])
def test_remote_failures_raise(fail):
    with pytest.raises(ProviderError):
        _client(FakeEmbedder({}, fail=fail)).score("x", obs())


def test_remote_zero_embedding_rejected():
    o = obs()
    with pytest.raises(ProviderError):
        _client(FakeEmbedder({"x": [0.0, 0.0]})).score("x", o)
