"""Pluggable large-model backends: a deterministic oracle and an HTTP client."""

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .data import Region, Sample

__all__ = [
    "BackendError",
    "BackendTimeout",
    "BackendHTTPError",
    "BackendMalformedResponse",
    "LargeModelResponse",
    "OracleSpec",
    "oracle_predict",
    "OracleBackend",
    "HttpBackendConfig",
    "HttpBackend",
    "CountingBackend",
    "WIRE_VERSION",
]

log = logging.getLogger("kcm.backends")

WIRE_VERSION = 1

DISTRIBUTION_TOL = 1e-9


class BackendError(RuntimeError):
    """Base class for large-model backend failures."""


class BackendTimeout(BackendError):
    """Request exceeded its deadline (after all retries)."""


class BackendHTTPError(BackendError):
    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"backend returned HTTP {status}{': ' + detail if detail else ''}")
        self.status = status


class BackendMalformedResponse(BackendError):
    """Response did not satisfy the wire contract."""


@dataclass(frozen=True)
class LargeModelResponse:
    """Teacher prediction: class distribution, its max as confidence, call cost."""

    distribution: np.ndarray
    confidence: float
    latency_s: float
    cost_units: float
    model_name: str = "oracle"

    def validate(self):
        d = self.distribution
        if d.ndim != 1 or d.size == 0:
            raise BackendMalformedResponse("distribution must be a nonempty vector")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise BackendMalformedResponse("distribution entries must be finite and nonnegative")
        if abs(float(d.sum()) - 1.0) > DISTRIBUTION_TOL:
            raise BackendMalformedResponse(f"distribution sums to {float(d.sum())!r}, not 1")
        if abs(self.confidence - float(d.max())) > DISTRIBUTION_TOL:
            raise BackendMalformedResponse("confidence must equal the max distribution entry")
        return self


@dataclass(frozen=True)
class OracleSpec:
    """Synthetic stand-in for a large model, repeatable from (seed, sample id).

    Each region gets a target accuracy; confidence is drawn uniformly from
    ``confidence_correct`` or ``confidence_wrong``. The wrong-answer range sits
    below typical gate thresholds so low-quality teacher labels get filtered.
    """

    region_accuracy: dict = field(
        default_factory=lambda: {Region.HEAD: 0.60, Region.MED: 0.57, Region.TAIL: 0.57}
    )
    confidence_correct: tuple = (0.985, 0.999)
    confidence_wrong: tuple = (0.50, 0.97)
    seed: int = 0
    per_call_cost: float = 1.0
    model_name: str = "oracle"

    def accuracy_for(self, region: Region) -> float:
        try:
            return self.region_accuracy[region]
        except KeyError:
            raise BackendError(f"oracle has no accuracy for region {region!r}") from None


def _unit_draw(seed: int, sample_id: int, channel: str) -> float:
    digest = hashlib.sha256(f"{seed}|{sample_id}|{channel}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def oracle_predict(spec: OracleSpec, sample: Sample, true_label: int,
                   num_classes: int) -> LargeModelResponse:
    """Deterministic synthetic teacher: correct with the region's probability."""
    if num_classes < 2:
        raise ValueError("oracle needs at least two classes")
    accuracy = spec.accuracy_for(sample.region)
    correct = _unit_draw(spec.seed, sample.id, "hit") < accuracy
    if correct:
        predicted = true_label
        lo, hi = spec.confidence_correct
    else:
        offset = int(_unit_draw(spec.seed, sample.id, "miss") * (num_classes - 1))
        predicted = (true_label + 1 + min(offset, num_classes - 2)) % num_classes
        lo, hi = spec.confidence_wrong
    conf = lo + _unit_draw(spec.seed, sample.id, "conf") * (hi - lo)

    distribution = np.full(num_classes, (1.0 - conf) / (num_classes - 1))
    distribution[predicted] = conf
    return LargeModelResponse(
        distribution=distribution,
        confidence=float(distribution.max()),
        latency_s=0.0,
        cost_units=spec.per_call_cost,
        model_name=spec.model_name,
    ).validate()


class OracleBackend:
    """Backend adapter around :func:`oracle_predict` (reads the sample's label)."""

    def __init__(self, spec: OracleSpec, num_classes: int):
        self.spec = spec
        self.num_classes = num_classes

    def predict(self, sample: Sample, prompt=None) -> LargeModelResponse:
        return oracle_predict(self.spec, sample, sample.label, self.num_classes)


@dataclass(frozen=True)
class HttpBackendConfig:
    endpoint: str
    timeout_s: float = 10.0
    max_retries: int = 2
    backoff_s: float = 0.25
    per_call_cost: float = 1.0
    token_env: str = "KCM_BEARER_TOKEN"


class HttpBackend:
    """JSON-over-HTTP large model client with bounded retries and backoff.

    Request: {version, sample_id, features, prompt, labels}.
    Response: {version, distribution, model_name}. Confidence is derived as
    the distribution max. Timeouts, connection failures, and 5xx responses
    are retried; 4xx and contract violations fail immediately.
    """

    def __init__(self, config: HttpBackendConfig, label_names: list, session=None):
        self.config = config
        self.label_names = list(label_names)
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def predict(self, sample: Sample, prompt=None) -> LargeModelResponse:
        payload = {
            "version": WIRE_VERSION,
            "sample_id": sample.id,
            "features": [float(v) for v in sample.features],
            "prompt": prompt.template_text if prompt is not None else "",
            "labels": self.label_names,
        }
        body = json.dumps(payload)
        last_exc = None
        start = time.monotonic()
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.config.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self.session.post(
                    self.config.endpoint,
                    data=body,
                    headers=self._headers(),
                    timeout=self.config.timeout_s,
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_exc = exc
                log.warning("backend attempt %d/%d failed: %s",
                            attempt + 1, self.config.max_retries + 1, exc)
                continue
            if 500 <= resp.status_code < 600:
                last_exc = BackendHTTPError(resp.status_code, resp.text[:200])
                log.warning("backend attempt %d/%d failed: %s",
                            attempt + 1, self.config.max_retries + 1, last_exc)
                continue
            if not (200 <= resp.status_code < 300):
                raise BackendHTTPError(resp.status_code, resp.text[:200])
            return self._parse(resp, time.monotonic() - start)
        if isinstance(last_exc, BackendHTTPError):
            raise last_exc
        raise BackendTimeout(
            f"no response from {self.config.endpoint} "
            f"after {self.config.max_retries + 1} attempts: {last_exc}"
        )

    def _parse(self, resp, latency: float) -> LargeModelResponse:
        try:
            data = resp.json()
        except ValueError as exc:
            raise BackendMalformedResponse(f"response is not JSON: {exc}") from exc
        if not isinstance(data, dict) or data.get("version") != WIRE_VERSION:
            raise BackendMalformedResponse(f"unsupported wire version {data.get('version')!r}"
                                           if isinstance(data, dict) else "response is not an object")
        dist = data.get("distribution")
        if not isinstance(dist, list) or len(dist) != len(self.label_names):
            raise BackendMalformedResponse(
                f"distribution must list {len(self.label_names)} probabilities"
            )
        try:
            arr = np.array([float(v) for v in dist], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise BackendMalformedResponse(f"non-numeric distribution entry: {exc}") from exc
        return LargeModelResponse(
            distribution=arr,
            confidence=float(arr.max()) if arr.size else 0.0,
            latency_s=latency,
            cost_units=self.config.per_call_cost,
            model_name=str(data.get("model_name", "remote")),
        ).validate()


class CountingBackend:
    """Wrapper that counts calls and accumulates cost; used for audits."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.cost_units = 0.0

    def predict(self, sample: Sample, prompt=None) -> LargeModelResponse:
        self.calls += 1
        response = self.inner.predict(sample, prompt)
        self.cost_units += response.cost_units
        return response
