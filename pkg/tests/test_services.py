import json
import threading

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rareger.corpus import Hypothesis
from rareger.errors import CacheCorruptionError, ClientError, ServiceUnavailable, TransientServiceError
from rareger.phonetics import G2pLexicon, default_lexicon
from rareger.services import (
    AsrClient,
    AuditLog,
    ChatClient,
    ChatExchange,
    ConfusionModel,
    HttpAsrBackend,
    HttpTtsBackend,
    MockChatBackend,
    OpenAICompatibleBackend,
    RetryPolicy,
    TtsClient,
    build_confusion_model,
    load_confusion_model,
    save_confusion_model,
)
from rareger.simulate import SimulatedAsrBackend, SimulatedTtsBackend, read_simulated_blob
from rareger.store import BlobStore, JsonlCache, content_key

NO_SLEEP = RetryPolicy(max_retries=2, backoff_base=0.0)


# -- chat ---------------------------------------------------------------------------------

def test_mock_canned_response():
    client = ChatClient(MockChatBackend({"hi": "hello"}))
    assert client.chat(ChatExchange.user("hi")) == "hello"


def test_temperature_zero_is_cached_and_sampling_is_not():
    backend = MockChatBackend(default="x")
    client = ChatClient(backend, model_id="m", cache=JsonlCache())
    for _ in range(3):
        client.chat(ChatExchange.user("q", temperature=0.0))
    assert len(backend.calls) == 1
    client.chat(ChatExchange.user("q", temperature=0.7))
    client.chat(ChatExchange.user("q", temperature=0.7))
    assert len(backend.calls) == 3


def test_cache_key_depends_on_model():
    a = ChatExchange.user("q", model_id="m1").cache_key()
    b = ChatExchange.user("q", model_id="m2").cache_key()
    assert a != b


def test_500_three_times_becomes_unavailable():
    fails = [TransientServiceError("HTTP 500")] * 3
    backend = MockChatBackend(default="ok", failures=fails)
    client = ChatClient(backend, retry=NO_SLEEP)
    with pytest.raises(ServiceUnavailable):
        client.chat(ChatExchange.user("q"))
    assert client.n_calls == 3


def test_transient_failures_then_success():
    backend = MockChatBackend(default="ok", failures=[TransientServiceError("HTTP 429")] * 2)
    assert ChatClient(backend, retry=NO_SLEEP).chat(ChatExchange.user("q")) == "ok"


def test_client_error_is_not_retried():
    backend = MockChatBackend(failures=[ClientError("bad", status=400)])
    client = ChatClient(backend, retry=NO_SLEEP)
    with pytest.raises(ClientError):
        client.chat(ChatExchange.user("q"))
    assert client.n_calls == 1


def test_backoff_delays_are_exponential_and_capped():
    slept = []
    policy = RetryPolicy(max_retries=4, backoff_base=1.0, backoff_max=3.0, sleep=slept.append)
    backend = MockChatBackend(default="ok", failures=[TransientServiceError("x")] * 4)
    ChatClient(backend, retry=policy).chat(ChatExchange.user("q"))
    assert slept == [1.0, 2.0, 3.0, 3.0]


def test_concurrency_bound_is_respected():
    backend = MockChatBackend(default="ok", delay=0.02)
    client = ChatClient(backend, max_concurrency=3)
    threads = [threading.Thread(target=client.chat, args=(ChatExchange.user(f"q{i}", temperature=0.5),))
               for i in range(12)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(backend.calls) == 12
    assert backend.max_in_flight <= 3


def test_audit_log_records_payloads(tmp_path):
    audit = AuditLog(tmp_path / "audit.jsonl")
    ChatClient(MockChatBackend(default="ok"), audit=audit).chat(ChatExchange.user("q"))
    rec = json.loads((tmp_path / "audit.jsonl").read_text().splitlines()[0])
    assert rec["service"] == "chat" and rec["response"] == "ok"
    assert rec["request"]["messages"] == [{"role": "user", "content": "q"}]


def test_openai_backend_wire_format_and_errors():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        if len(seen) == 1:
            return httpx.Response(503)
        return httpx.Response(200, json={"choices": [{"message": {"content": "fixed"}}]})

    backend = OpenAICompatibleBackend("https://llm.test/v1", "key", transport=httpx.MockTransport(handler))
    client = ChatClient(backend, model_id="gpt-x", retry=NO_SLEEP)
    assert client.chat(ChatExchange.user("q")) == "fixed"
    assert seen[-1] == {"model": "gpt-x", "messages": [{"role": "user", "content": "q"}], "temperature": 0.0}

    bad = OpenAICompatibleBackend("https://llm.test/v1",
                                  transport=httpx.MockTransport(lambda r: httpx.Response(401, text="no")))
    with pytest.raises(ClientError) as exc:
        ChatClient(bad, retry=NO_SLEEP).chat(ChatExchange.user("q"))
    assert exc.value.status == 401


def test_http_tts_and_asr_adapters(tmp_path):
    def handler(request):
        if request.url.path == "/synthesize":
            return httpx.Response(200, content=b"RIFF" + request.content)
        assert request.url.params["n"] == "2"
        return httpx.Response(200, json={"nbest": [{"text": "a", "score": -1.0}, {"text": "b"}]})

    transport = httpx.MockTransport(handler)
    store = BlobStore(tmp_path / "store")
    tts = TtsClient(HttpTtsBackend("https://svc.test", transport=transport), store, 2)
    loc = tts.synthesize(tts.job("hello", 1))
    assert store.get(loc).startswith(b"RIFF")
    asr = AsrClient(HttpAsrBackend("https://svc.test", transport=transport), store)
    assert asr.transcribe(loc, 2).nbest == (Hypothesis("a", -1.0), Hypothesis("b", None))


# -- TTS ------------------------------------------------------------------------------------

def test_tts_is_content_addressed(tmp_path):
    store = BlobStore(tmp_path)
    tts = TtsClient(SimulatedTtsBackend(), store, 7, cache=JsonlCache())
    a = tts.synthesize(tts.job("the sun", 3))
    assert tts.synthesize(tts.job("the sun", 3)) == a
    assert tts.n_calls == 1
    assert tts.synthesize(tts.job("the sun", 4)) != a
    meta = read_simulated_blob(store.get(a))
    assert (meta["text"], meta["speaker_id"]) == ("the sun", 3)


def test_speaker_out_of_range(tmp_path):
    tts = TtsClient(SimulatedTtsBackend(), BlobStore(tmp_path), 2)
    with pytest.raises(ValueError):
        tts.synthesize(tts.job("x", 3))


# -- ASR ------------------------------------------------------------------------------------

def _asr(model, tmp_path=None):
    return AsrClient(SimulatedAsrBackend(model), None)


def test_zero_noise_channel_returns_reference():
    res = _asr(ConfusionModel()).transcribe("The sun, is rising.", 5)
    assert res.texts == ["The sun, is rising."] * 5


def test_forced_substitution():
    res = _asr(ConfusionModel({"sun": (("son", 1.0),)}, p_sub=1.0)).transcribe("the sun is rising", 3)
    assert "son" in res.nbest[0].text.split()


def test_simulated_asr_is_deterministic():
    model = ConfusionModel({"sun": (("son", 1.0), ("sin", 1.0))}, p_sub=0.5, p_del=0.1, p_ins=0.1, seed=9)
    assert _asr(model).transcribe("the sun is rising", 5) == _asr(model).transcribe("the sun is rising", 5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(["the", "sun", "is", "up"]), min_size=1, max_size=8), st.integers(1, 6),
       st.integers(0, 2 ** 16))
def test_simulated_asr_nbest_shape(words, n, seed):
    model = ConfusionModel({"sun": (("son", 1.0),)}, p_sub=0.4, p_del=0.1, seed=seed)
    res = _asr(model).transcribe(" ".join(words), n)
    assert len(res.nbest) == n
    scores = [h.score for h in res.nbest]
    assert scores == sorted(scores, reverse=True)


def test_asr_cache_avoids_repeat_calls():
    client = AsrClient(SimulatedAsrBackend(ConfusionModel()), None, cache=JsonlCache())
    client.transcribe("x y", 2)
    client.transcribe("x y", 2)
    assert client.n_calls == 1


# -- confusion model --------------------------------------------------------------------------

def test_sun_son_are_mutual_confusables():
    lex = default_lexicon("en_arpabet")
    model = build_confusion_model(lex, 1)
    assert "son" in dict(model.sub_table["sun"])
    assert "sun" in dict(model.sub_table["son"])


def test_threshold_zero_only_homophones():
    lex = G2pLexicon({"sun": "S AH1 N", "son": "S AH1 N", "sin": "S IH1 N"})
    model = build_confusion_model(lex, 0)
    assert model.sub_table == {"sun": (("son", 1.0),), "son": (("sun", 1.0),)}
    weights = dict(build_confusion_model(lex, 1).sub_table["sun"])
    assert weights == {"son": 1.0, "sin": 0.5}


def test_single_word_lexicon_empty_table():
    assert build_confusion_model(G2pLexicon({"sun": "S AH1 N"}), 2).sub_table == {}


def test_confusion_model_validation_and_io(tmp_path):
    with pytest.raises(ValueError):
        ConfusionModel(p_sub=0.8, p_del=0.5)
    with pytest.raises(ValueError):
        ConfusionModel({"a": (("b", 0.0),)})
    model = ConfusionModel({"a": (("b", 2.0),)}, p_sub=0.2, seed=3).merged({"A": ["c"]})
    assert model.sub_table["a"] == (("b", 2.0), ("c", 1.0))
    save_confusion_model(model, tmp_path / "m.json")
    assert load_confusion_model(tmp_path / "m.json") == model


# -- store ----------------------------------------------------------------------------------

def test_jsonl_cache_persists_and_detects_corruption(tmp_path):
    path = tmp_path / "c.jsonl"
    cache = JsonlCache(path)
    cache.put("k", {"v": [1, 2]})
    assert JsonlCache(path).get("k") == {"v": [1, 2]}
    path.write_text(path.read_text().replace("[1,2]", "[1,3]"))
    with pytest.raises(CacheCorruptionError):
        JsonlCache(path)


def test_blob_store_layout_and_integrity(tmp_path):
    store = BlobStore(tmp_path)
    digest = store.put(b"abc")
    assert store.path_for(digest) == tmp_path / digest[:2] / digest
    assert store.put(b"abc") == digest
    store.path_for(digest).write_bytes(b"abd")
    with pytest.raises(CacheCorruptionError):
        store.get(digest)


def test_content_key_is_order_sensitive_and_stable():
    assert content_key("a", 1) == content_key("a", 1)
    assert content_key("a", 1) != content_key(1, "a")
    assert content_key({"x": 1, "y": 2}) == content_key({"y": 2, "x": 1})
