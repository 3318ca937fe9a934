"""Oracle determinism and HTTP client behavior against a local stub server."""

import time

import numpy as np
import pytest

from kcm import (BackendError, BackendHTTPError, BackendMalformedResponse,
                 BackendTimeout, CountingBackend, HttpBackend, HttpBackendConfig,
                 LargeModelResponse, OracleBackend, OracleSpec, Region, Sample,
                 Split, oracle_predict)

from conftest import StubHandler


def make_sample(sid=0, region=Region.HEAD, label=1):
    return Sample(id=sid, features=np.array([0.1, -0.2]), label=label,
                  region=region, split=Split.TRAIN)


# --- response invariants ---------------------------------------------------------

def test_response_validation():
    good = LargeModelResponse(distribution=np.array([0.7, 0.3]), confidence=0.7,
                              latency_s=0.0, cost_units=1.0)
    good.validate()
    with pytest.raises(BackendMalformedResponse):
        LargeModelResponse(distribution=np.array([0.7, 0.2]), confidence=0.7,
                           latency_s=0.0, cost_units=1.0).validate()
    with pytest.raises(BackendMalformedResponse):
        LargeModelResponse(distribution=np.array([0.7, 0.3]), confidence=0.3,
                           latency_s=0.0, cost_units=1.0).validate()
    with pytest.raises(BackendMalformedResponse):
        LargeModelResponse(distribution=np.array([1.2, -0.2]), confidence=1.2,
                           latency_s=0.0, cost_units=1.0).validate()


# --- oracle ----------------------------------------------------------------------

def test_oracle_perfect_accuracy_always_correct():
    spec = OracleSpec(region_accuracy={r: 1.0 for r in Region}, seed=4)
    for sid in range(200):
        response = oracle_predict(spec, make_sample(sid, label=sid % 5), sid % 5, 5)
        assert int(np.argmax(response.distribution)) == sid % 5


def test_oracle_zero_accuracy_never_correct():
    spec = OracleSpec(region_accuracy={r: 0.0 for r in Region}, seed=4)
    for sid in range(200):
        response = oracle_predict(spec, make_sample(sid, label=2), 2, 5)
        assert int(np.argmax(response.distribution)) != 2


def test_oracle_empirical_accuracy_tracks_target():
    spec = OracleSpec(region_accuracy={r: 0.6 for r in Region}, seed=9)
    hits = 0
    n = 10_000
    for sid in range(n):
        response = oracle_predict(spec, make_sample(sid, label=sid % 7), sid % 7, 7)
        hits += int(np.argmax(response.distribution)) == sid % 7
    assert abs(hits / n - 0.6) <= 0.01


def test_oracle_is_deterministic():
    spec = OracleSpec(seed=13)
    sample = make_sample(42, region=Region.TAIL, label=3)
    a = oracle_predict(spec, sample, 3, 6)
    b = oracle_predict(spec, sample, 3, 6)
    assert a.distribution.tobytes() == b.distribution.tobytes()
    assert a.confidence == b.confidence
    # a different seed changes the stream
    c = oracle_predict(OracleSpec(seed=14), sample, 3, 6)
    assert a.distribution.tobytes() != c.distribution.tobytes()


def test_oracle_confidence_ranges_split_by_correctness():
    spec = OracleSpec(region_accuracy={r: 0.5 for r in Region},
                      confidence_correct=(0.985, 0.999),
                      confidence_wrong=(0.50, 0.97), seed=3)
    for sid in range(500):
        response = oracle_predict(spec, make_sample(sid, label=1), 1, 4)
        correct = int(np.argmax(response.distribution)) == 1
        if correct:
            assert 0.985 <= response.confidence <= 0.999
        else:
            assert 0.50 <= response.confidence <= 0.97


def test_oracle_unknown_region():
    spec = OracleSpec(region_accuracy={Region.HEAD: 1.0}, seed=0)
    with pytest.raises(BackendError):
        oracle_predict(spec, make_sample(0, region=Region.TAIL), 1, 4)


def test_cost_accounting():
    backend = CountingBackend(OracleBackend(OracleSpec(per_call_cost=2.5), num_classes=4))
    for sid in range(7):
        backend.predict(make_sample(sid))
    assert backend.calls == 7
    assert backend.cost_units == pytest.approx(7 * 2.5)


# --- http ------------------------------------------------------------------------

LABELS4 = ["a", "b", "c", "d"]


def test_http_uniform_distribution(stub_server):
    backend = HttpBackend(HttpBackendConfig(endpoint=stub_server), LABELS4)
    response = backend.predict(make_sample(1))
    assert response.confidence == pytest.approx(0.25)
    assert response.model_name == "stub"
    request = StubHandler.seen[0]["body"]
    assert request["version"] == 1
    assert request["labels"] == LABELS4
    assert request["sample_id"] == 1
    assert request["features"] == [0.1, -0.2]


def test_http_distribution_not_summing_is_malformed(stub_server):
    StubHandler.behavior["mode"] = "short_sum"
    backend = HttpBackend(HttpBackendConfig(endpoint=stub_server), LABELS4)
    with pytest.raises(BackendMalformedResponse):
        backend.predict(make_sample(2))


def test_http_wrong_length_is_malformed(stub_server):
    StubHandler.behavior["mode"] = "short_list"
    backend = HttpBackend(HttpBackendConfig(endpoint=stub_server), LABELS4)
    with pytest.raises(BackendMalformedResponse):
        backend.predict(make_sample(2))


def test_http_bad_wire_version_is_malformed(stub_server):
    StubHandler.behavior["mode"] = "bad_version"
    backend = HttpBackend(HttpBackendConfig(endpoint=stub_server), LABELS4)
    with pytest.raises(BackendMalformedResponse):
        backend.predict(make_sample(2))


def test_http_timeout_attempts_counted(stub_server):
    StubHandler.behavior["delay"] = 0.5
    config = HttpBackendConfig(endpoint=stub_server, timeout_s=0.1,
                               max_retries=2, backoff_s=0.01)
    backend = HttpBackend(config, LABELS4)
    with pytest.raises(BackendTimeout):
        backend.predict(make_sample(3))
    deadline = time.monotonic() + 2.0
    while len(StubHandler.seen) < config.max_retries + 1 and time.monotonic() < deadline:
        time.sleep(0.02)  # slow handlers may still be draining
    assert len(StubHandler.seen) == config.max_retries + 1


def test_http_client_error_fails_fast(stub_server):
    StubHandler.behavior["status"] = 404
    backend = HttpBackend(HttpBackendConfig(endpoint=stub_server, max_retries=3,
                                            backoff_s=0.01), LABELS4)
    with pytest.raises(BackendHTTPError) as info:
        backend.predict(make_sample(4))
    assert info.value.status == 404
    assert len(StubHandler.seen) == 1  # no retries on 4xx


def test_http_server_error_retried_then_raised(stub_server):
    StubHandler.behavior["status"] = 503
    config = HttpBackendConfig(endpoint=stub_server, max_retries=2, backoff_s=0.01)
    backend = HttpBackend(config, LABELS4)
    with pytest.raises(BackendHTTPError) as info:
        backend.predict(make_sample(5))
    assert info.value.status == 503
    assert len(StubHandler.seen) == config.max_retries + 1


def test_http_unreachable_endpoint():
    config = HttpBackendConfig(endpoint="http://127.0.0.1:9/predict",
                               timeout_s=0.2, max_retries=1, backoff_s=0.01)
    backend = HttpBackend(config, LABELS4)
    with pytest.raises(BackendTimeout):
        backend.predict(make_sample(6))


def test_http_bearer_token_header(stub_server, monkeypatch):
    monkeypatch.setenv("KCM_BEARER_TOKEN", "sesame")
    backend = HttpBackend(HttpBackendConfig(endpoint=stub_server), LABELS4)
    backend.predict(make_sample(7))
    assert StubHandler.seen[0]["auth"] == "Bearer sesame"


def test_http_prompt_carried_in_request(stub_server):
    from kcm import build_prompt
    backend = HttpBackend(HttpBackendConfig(endpoint=stub_server), LABELS4)
    sample = make_sample(8)
    prompt = build_prompt(sample, np.array([0.4, 0.3, 0.2, 0.1]), 0.5, LABELS4)
    backend.predict(sample, prompt)
    assert "the confidence of the small model is 0.5000" in StubHandler.seen[0]["body"]["prompt"]
