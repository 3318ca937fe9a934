"""The collaboration engine: confidence gates, three-way routing, prompt
augmentation for large-model requests, and KL distillation of the small model.

Naming convention: the *judgment* model is the pre-trained gatekeeper, the
*small* model is its distilled successor, and the *large* model is whatever
backend answers the samples neither of them is sure about.
"""

import csv
import io
import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum

import numpy as np

from .backends import BackendError
from .classifiers import ClassifierHandle, clone_model, softmax
from .data import Dataset, Sample, Split
from .kan import NumericalError

__all__ = [
    "ConfidenceSource",
    "ConfidenceScore",
    "RouteTarget",
    "RoutingDecision",
    "KlDirection",
    "SecondGate",
    "DistillationConfig",
    "TrainingPartition",
    "PromptAugmentation",
    "DecisionRecord",
    "DecisionLog",
    "confidence",
    "rank_classes",
    "build_prompt",
    "kl_loss",
    "route",
    "partition_training",
    "train_kcm",
    "infer",
]

log = logging.getLogger("kcm.collab")

KL_FLOOR = 1e-12


class ConfidenceSource(str, Enum):
    JUDGMENT = "judgment"
    SMALL = "small"
    LARGE = "large"


@dataclass(frozen=True)
class ConfidenceScore:
    value: float
    source: ConfidenceSource


class RouteTarget(str, Enum):
    JUDGMENT = "judgment"
    SMALL = "small"
    LARGE = "large"


@dataclass(frozen=True)
class RoutingDecision:
    target: RouteTarget
    confidence_trace: tuple
    degraded: bool = False


class KlDirection(str, Enum):
    STUDENT_FIRST = "student_first"
    TEACHER_FIRST = "teacher_first"


class SecondGate(str, Enum):
    """What the second routing gate consults when the judgment model abstains.

    SMALL keeps the large model out of the gate entirely (the cost-preserving
    default); LARGE probes the backend's confidence on every escalated sample
    and is intended for audit runs only.
    """

    SMALL = "small"
    LARGE = "large"


@dataclass(frozen=True)
class DistillationConfig:
    epsilon: float = 0.98
    learning_rate: float = 1e-2
    epochs: int = 10
    kl_direction: KlDirection = KlDirection.STUDENT_FIRST
    loss_mix: float = 0.5
    batch_size: int = 32
    second_gate: SecondGate = SecondGate.SMALL

    def validate(self, *, training: bool = False):
        # epsilon == 1 is the degenerate always-escalate setting used by audit
        # and baseline runs; training requires a real gate.
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if training and self.epsilon >= 1.0:
            raise ValueError("training requires epsilon strictly below 1")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not (0.0 <= self.loss_mix <= 1.0):
            raise ValueError(f"loss_mix must be in [0, 1], got {self.loss_mix}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        return self

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "kl_direction": self.kl_direction.value,
            "loss_mix": self.loss_mix,
            "batch_size": self.batch_size,
            "second_gate": self.second_gate.value,
        }


@dataclass(frozen=True)
class TrainingPartition:
    """Disjoint id sets: x1 the judgment model keeps, x2 distilled from the
    large model (with cached teacher distributions), x3 unresolved."""

    x1: tuple
    x2: tuple
    x3: tuple
    teacher_targets: dict
    diverted: tuple = ()

    def validate(self, all_ids=None):
        sets = [set(self.x1), set(self.x2), set(self.x3)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("partition sets must be pairwise disjoint")
        if all_ids is not None and set.union(*sets) != set(all_ids):
            raise ValueError("partition must cover the training set exactly")
        if set(self.teacher_targets) != sets[1]:
            raise ValueError("teacher targets must cover x2 exactly")
        for sid, dist in self.teacher_targets.items():
            if abs(float(np.sum(dist)) - 1.0) > 1e-9:
                raise ValueError(f"teacher distribution for sample {sid} does not sum to 1")
        return self

    def sizes(self) -> dict:
        return {"x1": len(self.x1), "x2": len(self.x2), "x3": len(self.x3),
                "diverted": len(self.diverted)}


@dataclass(frozen=True)
class PromptAugmentation:
    sample_id: int
    small_model_confidence: float
    small_model_top_classes: tuple
    template_text: str


def confidence(logits, source: ConfidenceSource = ConfidenceSource.JUDGMENT):
    """Softmax distribution and its max entry as the model's confidence."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("logits must be a nonempty vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    distribution = softmax(z)
    return distribution, ConfidenceScore(value=float(distribution.max()), source=source)


def rank_classes(distribution, label_names) -> tuple:
    """(name, probability) pairs, best first; ties broken by ascending class index."""
    dist = np.asarray(distribution, dtype=np.float64)
    if dist.shape != (len(label_names),):
        raise ValueError(f"distribution length {dist.shape} does not match "
                         f"{len(label_names)} labels")
    order = sorted(range(dist.size), key=lambda i: (-dist[i], i))
    return tuple((label_names[i], float(dist[i])) for i in order)


def build_prompt(sample: Sample, small_distribution, judgment_confidence: float,
                 label_names) -> PromptAugmentation:
    """Render the escalation prompt: the gate confidence plus the small model's
    class ranking, so the backend can discount classes the small side owns."""
    ranked = rank_classes(small_distribution, label_names)
    listing = ", ".join(f"{name} ({p:.4f})" for name, p in ranked)
    text = (
        f"the confidence of the small model is {judgment_confidence:.4f}; "
        f"small-model class ranking: {listing}"
    )
    return PromptAugmentation(
        sample_id=sample.id,
        small_model_confidence=float(judgment_confidence),
        small_model_top_classes=ranked,
        template_text=text,
    )


def kl_loss(p, q) -> float:
    """KL(p || q) with 0 * ln(0/q) = 0 and q floored at 1e-12; never negative."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"p and q must be vectors of equal length, got {p.shape} and {q.shape}")
    for name, vec in (("p", p), ("q", q)):
        if np.any(vec < 0) or not np.all(np.isfinite(vec)):
            raise ValueError(f"{name} must be a distribution (nonnegative, finite)")
        if abs(float(vec.sum()) - 1.0) > 1e-9:
            raise ValueError(f"{name} sums to {float(vec.sum())!r}, not 1")
    mask = p > 0
    total = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], KL_FLOOR)))))
    return max(total, 0.0)


def route(sample: Sample, judgment: ClassifierHandle, small: ClassifierHandle,
          config: DistillationConfig, large_confidence: float | None = None) -> RoutingDecision:
    """Three-way gate: judgment if it is confident, else small, else large.

    Never calls the large model itself. With ``second_gate=LARGE`` the caller
    must probe the backend and pass its confidence in ``large_confidence``.
    """
    config.validate()
    _, c_x = confidence(judgment.predict_logits(sample.features), ConfidenceSource.JUDGMENT)
    if c_x.value > config.epsilon:
        return RoutingDecision(target=RouteTarget.JUDGMENT, confidence_trace=(c_x,))

    if config.second_gate == SecondGate.LARGE:
        if large_confidence is None:
            raise ValueError("second_gate=LARGE requires the probed large-model confidence")
        second = ConfidenceScore(value=float(large_confidence), source=ConfidenceSource.LARGE)
    else:
        _, second = confidence(small.predict_logits(sample.features), ConfidenceSource.SMALL)

    target = RouteTarget.SMALL if second.value > config.epsilon else RouteTarget.LARGE
    return RoutingDecision(target=target, confidence_trace=(c_x, second))


def partition_training(dataset: Dataset, judgment: ClassifierHandle, backend,
                       config: DistillationConfig, split: Split = Split.TRAIN) -> TrainingPartition:
    """Split the training set by the two confidence gates.

    The backend is consulted only for samples the judgment model is unsure
    about; backend failures divert the sample to x3 with a warning rather than
    dropping it.
    """
    config.validate(training=True)
    x1, x2, x3, diverted = [], [], [], []
    teacher_targets = {}
    for sample in dataset.split(split):
        _, c_x = confidence(judgment.predict_logits(sample.features),
                            ConfidenceSource.JUDGMENT)
        if c_x.value > config.epsilon:
            x1.append(sample.id)
            continue
        try:
            response = backend.predict(sample).validate()
        except BackendError as exc:
            log.warning("backend failed for sample %d, diverting to x3: %s", sample.id, exc)
            x3.append(sample.id)
            diverted.append(sample.id)
            continue
        if response.confidence > config.epsilon:
            x2.append(sample.id)
            teacher_targets[sample.id] = response.distribution
        else:
            x3.append(sample.id)
    return TrainingPartition(
        x1=tuple(x1), x2=tuple(x2), x3=tuple(x3),
        teacher_targets=teacher_targets, diverted=tuple(diverted),
    ).validate(all_ids=[s.id for s in dataset.split(split)])


def _kl_batch_loss_and_grad(logits, teachers, direction: KlDirection):
    """Mean KL over a batch plus its gradient at the student logits."""
    student = softmax(logits)
    t = np.maximum(teachers, KL_FLOOR)
    s = np.maximum(student, KL_FLOOR)
    n = logits.shape[0]
    if direction == KlDirection.STUDENT_FIRST:
        per_sample = np.sum(student * (np.log(s) - np.log(t)), axis=1)
        grad = student * ((np.log(s) - np.log(t)) - per_sample[:, None]) / n
    else:
        per_sample = np.sum(teachers * (np.log(t) - np.log(s)), axis=1)
        grad = (student - teachers) / n
    return float(np.mean(per_sample)), grad


def train_kcm(partition: TrainingPartition, judgment: ClassifierHandle, dataset: Dataset,
              config: DistillationConfig, seed: int,
              initial_small: ClassifierHandle | None = None) -> ClassifierHandle:
    """Distill the small model from the cached teachers.

    Starts from a deep copy of the judgment model (or ``initial_small`` when a
    different architecture is being distilled) and alternates, each epoch, one
    sweep toward the cached large-model distributions on x2 (weighted by
    ``loss_mix``) and one sweep toward the judgment model's own distributions
    on x1 (weighted by its complement). An empty partition is a strict no-op.
    """
    config.validate(training=True)
    partition.validate()
    small = clone_model(initial_small if initial_small is not None else judgment)
    small.loss_curve = []

    by_id = {s.id: s for s in dataset.samples}
    x2_ids = [sid for sid in partition.x2]
    x1_ids = [sid for sid in partition.x1]

    def features_for(ids):
        return np.array([by_id[sid].features for sid in ids])

    sweeps = []
    if x2_ids:
        teachers_x2 = np.array([partition.teacher_targets[sid] for sid in x2_ids])
        sweeps.append(("large_teacher", features_for(x2_ids), teachers_x2, config.loss_mix))
    if x1_ids:
        feats_x1 = features_for(x1_ids)
        teachers_x1 = judgment.predict_proba(feats_x1)
        sweeps.append(("judgment_teacher", feats_x1, teachers_x1, 1.0 - config.loss_mix))
    if not sweeps:
        return small

    rng = np.random.default_rng(seed)
    for epoch in range(config.epochs):
        for term, feats, teachers, weight in sweeps:
            Z = small.normalize(feats)
            order = rng.permutation(len(Z))
            total = 0.0
            for start in range(0, len(Z), config.batch_size):
                idx = order[start : start + config.batch_size]
                logits, cache = small.network.forward_with_cache(Z[idx])
                loss, grad = _kl_batch_loss_and_grad(logits, teachers[idx], config.kl_direction)
                total += loss * len(idx)
                if weight > 0.0:
                    small.network.apply_gradients(
                        small.network.backward(cache, weight * grad), config.learning_rate
                    )
                    try:
                        small.network.validate_finite()
                    except NumericalError as exc:
                        raise NumericalError(
                            f"distillation diverged at epoch {epoch} ({term}): {exc}"
                        ) from exc
            mean_loss = total / len(Z)
            if not np.isfinite(mean_loss):
                raise NumericalError(f"distillation diverged at epoch {epoch} ({term})")
            small.loss_curve.append({"epoch": epoch, "term": term, "loss": mean_loss})
    return small


@dataclass(frozen=True)
class DecisionRecord:
    sample_id: int
    target: RouteTarget
    c_x: float
    c_s: float | None
    degraded: bool
    timestamp: str


class DecisionLog:
    """Append-only routing log; appends are safe from concurrent threads."""

    FIELDS = ("sample_id", "target", "c_x", "c_s", "degraded", "timestamp")

    def __init__(self):
        self._records = []
        self._lock = threading.Lock()

    def append(self, record: DecisionRecord):
        with self._lock:
            self._records.append(record)

    def records(self) -> list:
        with self._lock:
            return list(self._records)

    def __len__(self):
        return len(self._records)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.FIELDS)
        for r in self.records():
            writer.writerow([
                r.sample_id, r.target.value, repr(r.c_x),
                "" if r.c_s is None else repr(r.c_s),
                int(r.degraded), r.timestamp,
            ])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())

    def lm_rate_percent(self) -> float:
        records = self.records()
        if not records:
            return 0.0
        large = sum(1 for r in records if r.target == RouteTarget.LARGE)
        return 100.0 * large / len(records)


def _trace_values(decision: RoutingDecision):
    c_x = decision.confidence_trace[0].value
    c_s = decision.confidence_trace[1].value if len(decision.confidence_trace) > 1 else None
    return c_x, c_s


def infer(sample: Sample, judgment: ClassifierHandle, small: ClassifierHandle,
          backend, config: DistillationConfig, label_names,
          log_sink: DecisionLog | None = None):
    """Route one sample and produce its prediction.

    Large-model requests always carry a prompt augmentation; if the backend
    fails, the small model answers and the decision is flagged degraded.
    """
    config.validate()
    large_confidence = None
    probe_response = None
    probe_failed = False
    if config.second_gate == SecondGate.LARGE:
        _, c_x_probe = confidence(judgment.predict_logits(sample.features),
                                  ConfidenceSource.JUDGMENT)
        if not c_x_probe.value > config.epsilon:
            small_dist = small.predict_proba(sample.features)
            prompt = build_prompt(sample, small_dist, c_x_probe.value, label_names)
            try:
                probe_response = backend.predict(sample, prompt).validate()
                large_confidence = probe_response.confidence
            except BackendError as exc:
                log.warning("gate probe failed for sample %d, using small model: %s",
                            sample.id, exc)
                probe_failed = True
                large_confidence = 0.0  # unprobeable gate cannot pass

    decision = route(sample, judgment, small, config, large_confidence=large_confidence)

    degraded = False
    if decision.target == RouteTarget.JUDGMENT:
        prediction = int(judgment.predict_label(sample.features[None, :])[0])
    elif decision.target == RouteTarget.SMALL:
        prediction = int(small.predict_label(sample.features[None, :])[0])
    elif probe_failed:
        prediction = int(np.argmax(small.predict_proba(sample.features)))
        degraded = True
    elif probe_response is not None:
        prediction = int(np.argmax(probe_response.distribution))
    else:
        c_x = decision.confidence_trace[0].value
        small_dist = small.predict_proba(sample.features)
        prompt = build_prompt(sample, small_dist, c_x, label_names)
        try:
            response = backend.predict(sample, prompt).validate()
            prediction = int(np.argmax(response.distribution))
        except BackendError as exc:
            log.warning("backend failed for sample %d, using small model: %s", sample.id, exc)
            prediction = int(np.argmax(small_dist))
            degraded = True

    if degraded:
        decision = RoutingDecision(target=decision.target,
                                   confidence_trace=decision.confidence_trace, degraded=True)
    if log_sink is not None:
        c_x, c_s = _trace_values(decision)
        log_sink.append(DecisionRecord(
            sample_id=sample.id, target=decision.target, c_x=c_x, c_s=c_s,
            degraded=decision.degraded,
            timestamp=datetime.now(timezone.utc).isoformat(),
        ))
    return prediction, decision
