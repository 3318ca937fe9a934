"""Experiment drivers: cascade evaluation, KAN-vs-MLP ablation, forgetting."""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .backends import CountingBackend
from .classifiers import ArchSpec, ClassifierHandle, ModelKind, train_supervised
from .collab import (DecisionLog, DistillationConfig, infer, partition_training,
                     train_kcm)
from .data import Dataset, Region, Split
from .kan import CapacityMatchError, KanNetwork, match_capacity

__all__ = [
    "EvalReport",
    "AblationResult",
    "ForgettingReport",
    "evaluate_cascade",
    "run_ablation",
    "run_forgetting_benchmark",
    "default_phase_intervals",
    "forgetting_score",
]

REPORT_FORMAT_VERSION = 1


@dataclass
class EvalReport:
    """Per-region accuracy, large-model rate, and cost for one cascade run."""

    arm: str
    regions: dict            # region name -> {"count": int, "correct": int}
    lm_rate_pct: float
    backend_calls: int
    cost_units: float
    config: dict
    seed: int
    dataset_hash: str
    id_stream_hash: str
    decisions: DecisionLog = field(default=None, repr=False)

    @staticmethod
    def _pct(correct: int, count: int) -> float:
        return 100.0 * correct / count

    def accuracy_pct(self, region: str) -> float:
        cell = self.regions[region]
        return self._pct(cell["correct"], cell["count"])

    @property
    def overall(self) -> dict:
        return {
            "count": sum(c["count"] for c in self.regions.values()),
            "correct": sum(c["correct"] for c in self.regions.values()),
        }

    @property
    def overall_accuracy_pct(self) -> float:
        o = self.overall
        return self._pct(o["correct"], o["count"])

    def to_json_dict(self) -> dict:
        regions = {
            name: {**cell, "accuracy_pct": self.accuracy_pct(name)}
            for name, cell in sorted(self.regions.items())
        }
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "kind": "cascade_eval",
            "arm": self.arm,
            "regions": regions,
            "overall": {**self.overall, "accuracy_pct": self.overall_accuracy_pct},
            "lm_rate_pct": self.lm_rate_pct,
            "backend_calls": self.backend_calls,
            "cost_units": self.cost_units,
            "config": self.config,
            "seed": self.seed,
            "dataset_hash": self.dataset_hash,
            "id_stream_hash": self.id_stream_hash,
        }

    def render_table(self) -> str:
        lines = [f"{'data':<10}{'accuracy (%)':>14}", "-" * 24]
        for name in (Region.HEAD.value, Region.MED.value, Region.TAIL.value):
            if name in self.regions:
                lines.append(f"{name:<10}{self.accuracy_pct(name):>14.2f}")
        lines.append(f"{'overall':<10}{self.overall_accuracy_pct:>14.2f}")
        lines.append(f"{'LM rate':<10}{self.lm_rate_pct:>14.2f}")
        return "\n".join(lines)


def _id_stream_hash(ids) -> str:
    return hashlib.sha256(",".join(str(i) for i in ids).encode("ascii")).hexdigest()


def evaluate_cascade(dataset: Dataset, judgment: ClassifierHandle, small: ClassifierHandle,
                     backend, config: DistillationConfig, *, seed: int = 0,
                     split: Split = Split.TEST, arm: str = "kcm") -> EvalReport:
    """Route every sample of the split and aggregate accuracy by region.

    The LM rate is recounted from the decision log rather than read off a
    counter; regions with no samples are omitted from the report.
    """
    samples = dataset.split(split)
    if not samples:
        raise ValueError(f"split {split.value!r} is empty")
    counter = CountingBackend(backend)
    decisions = DecisionLog()
    regions = {}
    for sample in samples:
        prediction, _ = infer(sample, judgment, small, counter, config,
                              dataset.label_names, log_sink=decisions)
        cell = regions.setdefault(sample.region.value, {"count": 0, "correct": 0})
        cell["count"] += 1
        cell["correct"] += int(prediction == sample.label)
    return EvalReport(
        arm=arm,
        regions=regions,
        lm_rate_pct=decisions.lm_rate_percent(),
        backend_calls=counter.calls,
        cost_units=counter.cost_units,
        config=config.to_dict(),
        seed=seed,
        dataset_hash=dataset.content_hash(),
        id_stream_hash=_id_stream_hash(s.id for s in samples),
        decisions=decisions,
    )


@dataclass
class AblationResult:
    """Paired cascade reports sharing one judgment model and one partition."""

    reports: dict
    parameter_counts: dict
    partition_sizes: dict

    def to_json_dict(self, arm: str) -> dict:
        data = self.reports[arm].to_json_dict()
        data["kind"] = "ablation_arm"
        data["parameter_count"] = self.parameter_counts[arm]
        data["partition_sizes"] = self.partition_sizes
        return data

    def render_table(self) -> str:
        arms = list(self.reports)
        lines = [f"{'data':<10}" + "".join(f"{a + ' (%)':>14}" for a in arms),
                 "-" * (10 + 14 * len(arms))]
        for name in (Region.HEAD.value, Region.MED.value, Region.TAIL.value, "overall"):
            row = f"{name:<10}"
            for a in arms:
                rep = self.reports[a]
                if name == "overall":
                    row += f"{rep.overall_accuracy_pct:>14.2f}"
                elif name in rep.regions:
                    row += f"{rep.accuracy_pct(name):>14.2f}"
                else:
                    row += f"{'-':>14}"
            lines.append(row)
        lines.append(f"{'LM rate':<10}" + "".join(
            f"{self.reports[a].lm_rate_pct:>14.2f}" for a in arms))
        lines.append(f"{'params':<10}" + "".join(
            f"{self.parameter_counts[a]:>14d}" for a in arms))
        return "\n".join(lines)


def _arm_name(kind: ModelKind) -> str:
    return "kcm" if kind == ModelKind.KAN else "mcm"


def run_ablation(dataset: Dataset, config: DistillationConfig, backend, *,
                 arch: ArchSpec = ArchSpec(), seed: int = 0,
                 supervised_epochs: int = 100, supervised_lr: float = 0.5,
                 arms=(ModelKind.KAN, ModelKind.MLP)) -> AblationResult:
    """Distill one small model per arm under an identical pipeline.

    Both arms share the same judgment model, the same training partition, the
    same backend, and the same evaluation stream, so the only varied factor is
    the small model's architecture. The non-KAN arm is bootstrapped as a
    capacity-matched MLP trained on the same split before distillation.
    """
    judgment = train_supervised(dataset, arch, seed, epochs=supervised_epochs,
                                learning_rate=supervised_lr)
    partition = partition_training(dataset, judgment, backend, config)

    reports, param_counts = {}, {}
    arm_names = []
    for kind in arms:
        if kind == ModelKind.KAN:
            small = train_kcm(partition, judgment, dataset, config, seed)
        else:
            matched = match_capacity(judgment.network, seed=seed)
            mlp_arch = arch.with_kind(ModelKind.MLP, hidden=matched.dims[1:-1])
            bootstrap = train_supervised(dataset, mlp_arch, seed, epochs=supervised_epochs,
                                         learning_rate=supervised_lr)
            small = train_kcm(partition, judgment, dataset, config, seed,
                              initial_small=bootstrap)
        name = _arm_name(kind)
        if name in reports:  # identical-kind control runs
            name = f"{name}_control"
        param_counts[name] = small.network.parameter_count()
        reports[name] = evaluate_cascade(dataset, judgment, small, backend, config,
                                         seed=seed, arm=name)
        arm_names.append(name)

    counts = [param_counts[a] for a in arm_names]
    low, high = min(counts), max(counts)
    if low < 0.9 * high:
        raise CapacityMatchError(
            f"arm parameter counts {dict(param_counts)} differ by more than 10%"
        )
    sizes = partition.sizes()
    return AblationResult(reports=reports, parameter_counts=param_counts,
                          partition_sizes=sizes)


def default_phase_intervals(n: int, lo: float = -1.0, hi: float = 1.0) -> tuple:
    """n disjoint, contiguous intervals covering [lo, hi]."""
    if n < 1:
        raise ValueError("need at least one phase")
    edges = np.linspace(lo, hi, n + 1)
    return tuple((float(a), float(b)) for a, b in zip(edges[:-1], edges[1:]))


def forgetting_score(retention) -> float:
    """Mean over tasks of (best retention ever seen) - (final retention)."""
    last = len(retention) - 1
    drops = []
    for j in range(len(retention[0])):
        seen = [retention[i][j] for i in range(j, last + 1)]
        drops.append(max(seen) - retention[last][j])
    return float(np.mean(drops))


@dataclass
class ForgettingReport:
    """Retention matrix for sequential single-region regression tasks."""

    model_kind: str
    phases: tuple
    retention: list          # retention[i][j], None for j > i
    score: float
    seed: int

    def recompute_score(self) -> float:
        return forgetting_score(self.retention)

    def to_json_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "kind": "forgetting",
            "model_kind": self.model_kind,
            "phases": [list(p) for p in self.phases],
            "retention": self.retention,
            "forgetting_score": self.score,
            "seed": self.seed,
        }

    def render_table(self) -> str:
        n = len(self.phases)
        lines = [f"{self.model_kind}: retention after each phase (rows) per task (cols)"]
        header = f"{'phase':<8}" + "".join(f"{f'task {j}':>10}" for j in range(n))
        lines.append(header)
        for i, row in enumerate(self.retention):
            cells = "".join(f"{v:>10.4f}" if v is not None else f"{'-':>10}" for v in row)
            lines.append(f"{i:<8}" + cells)
        lines.append(f"forgetting score: {self.score:.6f}")
        return "\n".join(lines)


def _peak_target(x: np.ndarray, interval) -> np.ndarray:
    a, b = interval
    center = 0.5 * (a + b)
    sigma = (b - a) / 8.0
    return np.exp(-0.5 * ((x - center) / sigma) ** 2)


def _validate_phases(phases):
    phases = tuple((float(a), float(b)) for a, b in phases)
    if not phases:
        raise ValueError("need at least one phase")
    for a, b in phases:
        if not a < b:
            raise ValueError(f"phase interval ({a}, {b}) is empty")
    ordered = sorted(phases)
    for (a1, b1), (a2, b2) in zip(ordered, ordered[1:]):
        if a2 < b1:
            raise ValueError(f"phases ({a1}, {b1}) and ({a2}, {b2}) overlap")
    return phases


def run_forgetting_benchmark(model_kind, phases, seed: int, *,
                             grid_intervals: int = 30, order: int = 3,
                             epochs_per_phase: int = 500, learning_rate: float = 0.1,
                             batch_size: int = 32, samples_per_phase: int = 256,
                             eval_points: int = 128) -> ForgettingReport:
    """Train one 1-D regressor phase by phase, each phase a disjoint input
    region holding one Gaussian peak, and record retention on every region
    seen so far. ``epochs_per_phase=0`` gives the frozen-model control.

    Retention is 1 - RMSE against the region's peak, floored at zero; the
    score is the retention drop from each task's best to its final value.
    """
    phases = _validate_phases(phases if not isinstance(phases, int)
                              else default_phase_intervals(phases))
    kind = ModelKind(model_kind)
    lo = min(a for a, _ in phases)
    hi = max(b for _, b in phases)

    rng = np.random.default_rng(seed)
    kan = KanNetwork.create([1, 1], order=order, num_intervals=grid_intervals,
                            input_range=(lo, hi), rng=np.random.default_rng(seed))
    if kind == ModelKind.KAN:
        net = kan
    else:
        net = match_capacity(kan, seed=seed)

    eval_grids = [np.linspace(a, b, eval_points)[:, None] for a, b in phases]
    eval_targets = [_peak_target(g[:, 0], p) for g, p in zip(eval_grids, phases)]

    def retention_for(j) -> float:
        pred = net.forward(eval_grids[j])[:, 0]
        rmse = float(np.sqrt(np.mean((pred - eval_targets[j]) ** 2)))
        return max(0.0, 1.0 - rmse)

    n = len(phases)
    retention = [[None] * n for _ in range(n)]
    for i, interval in enumerate(phases):
        a, b = interval
        X = (a + (b - a) * rng.random(samples_per_phase))[:, None]
        y = _peak_target(X[:, 0], interval)[:, None]
        for _ in range(epochs_per_phase):
            order_idx = rng.permutation(samples_per_phase)
            for start in range(0, samples_per_phase, batch_size):
                idx = order_idx[start : start + batch_size]
                pred, cache = net.forward_with_cache(X[idx])
                upstream = 2.0 * (pred - y[idx]) / len(idx)
                net.apply_gradients(net.backward(cache, upstream), learning_rate)
        net.validate_finite()
        for j in range(i + 1):
            retention[i][j] = retention_for(j)

    return ForgettingReport(
        model_kind=kind.value,
        phases=phases,
        retention=retention,
        score=forgetting_score(retention),
        seed=seed,
    )
