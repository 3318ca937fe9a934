"""Command-line entry point: generate | train | infer | eval | ablate | forget."""

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .backends import (BackendError, HttpBackend, HttpBackendConfig, OracleBackend,
                       OracleSpec)
from .classifiers import (ArchSpec, ModelKind, load_handle, save_handle,
                          train_supervised)
from .collab import (DecisionLog, DistillationConfig, KlDirection, SecondGate,
                     infer, partition_training, train_kcm)
from .data import (CsvSchema, DataError, Dataset, LongTailSpec, Region, Split,
                   generate_longtail, load_csv, save_dataset)
from .evaluation import (evaluate_cascade, run_ablation, run_forgetting_benchmark)
from .kan import CapacityMatchError, NumericalError

log = logging.getLogger("kcm.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4
EXIT_NUMERIC = 5


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict:
    """Parse 'key = value' lines; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))


_CONVERTERS = {
    "epsilon": float,
    "learning_rate": float,
    "epochs": int,
    "kl_direction": KlDirection,
    "loss_mix": float,
    "batch_size": int,
    "second_gate": SecondGate,
    "seed": int,
    "backend": str,
    "hidden": lambda s: tuple(int(v) for v in str(s).split(",") if v != ""),
    "order": int,
    "num_intervals": int,
    "supervised_epochs": int,
    "supervised_lr": float,
    "oracle_head": float,
    "oracle_med": float,
    "oracle_tail": float,
    "oracle_seed": int,
    "oracle_cost": float,
    "oracle_conf_correct": lambda s: tuple(float(v) for v in str(s).split(",")),
    "oracle_conf_wrong": lambda s: tuple(float(v) for v in str(s).split(",")),
    "http_timeout": float,
    "http_retries": int,
    "http_backoff": float,
    "num_classes": int,
    "feature_dim": int,
    "max_per_class": int,
    "imbalance": float,
    "separation": float,
    "noise": float,
    "test_per_class": int,
    "val_per_class": int,
    "phases": int,
    "model_kind": str,
    "split": str,
}

_DEFAULTS = {
    "seed": 0,  # generate/train require the flag; read-only commands may default
    "epsilon": 0.98,
    "learning_rate": 1e-2,
    "epochs": 10,
    "kl_direction": KlDirection.STUDENT_FIRST,
    "loss_mix": 0.5,
    "batch_size": 32,
    "second_gate": SecondGate.SMALL,
    "backend": "oracle",
    "hidden": (16, 16),
    "order": 3,
    "num_intervals": 5,
    "supervised_epochs": 150,
    "supervised_lr": 0.5,
    "oracle_head": 0.60,
    "oracle_med": 0.57,
    "oracle_tail": 0.57,
    "oracle_seed": 0,
    "oracle_cost": 1.0,
    "oracle_conf_correct": (0.985, 0.999),
    "oracle_conf_wrong": (0.50, 0.97),
    "http_timeout": 10.0,
    "http_retries": 2,
    "http_backoff": 0.25,
    "num_classes": 9,
    "feature_dim": 16,
    "max_per_class": 150,
    "imbalance": 10.0,
    "separation": 5.0,
    "noise": 1.0,
    "test_per_class": 20,
    "val_per_class": 10,
    "phases": 5,
    "model_kind": "both",
    "split": "test",
}


def resolve_settings(args) -> dict:
    """Merge defaults, config file, then command-line flags (flags win)."""
    settings = dict(_DEFAULTS)
    if getattr(args, "config", None):
        for key, raw in load_config_file(args.config).items():
            if key not in _CONVERTERS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                settings[key] = _CONVERTERS[key](raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"config key {key!r}: bad value {raw!r} ({exc})") from exc
    for key in _CONVERTERS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = _CONVERTERS[key](flag) if not isinstance(flag, tuple) else flag
    return settings


def _settings_snapshot(settings: dict) -> dict:
    snap = {}
    for key, value in settings.items():
        if isinstance(value, (KlDirection, SecondGate)):
            snap[key] = value.value
        elif isinstance(value, tuple):
            snap[key] = list(value)
        else:
            snap[key] = value
    return snap


def write_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def _snapshot(outdir: Path, command: str, settings: dict):
    write_json(outdir / "config_snapshot.json",
               {"command": command, "settings": _settings_snapshot(settings)})


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _distill_config(settings) -> DistillationConfig:
    return DistillationConfig(
        epsilon=settings["epsilon"],
        learning_rate=settings["learning_rate"],
        epochs=settings["epochs"],
        kl_direction=settings["kl_direction"],
        loss_mix=settings["loss_mix"],
        batch_size=settings["batch_size"],
        second_gate=settings["second_gate"],
    ).validate()


def _arch(settings) -> ArchSpec:
    return ArchSpec(
        kind=ModelKind.KAN,
        hidden=tuple(settings["hidden"]),
        order=settings["order"],
        num_intervals=settings["num_intervals"],
    )


def make_backend(settings, label_names):
    choice = settings["backend"]
    if choice == "oracle":
        spec = OracleSpec(
            region_accuracy={
                Region.HEAD: settings["oracle_head"],
                Region.MED: settings["oracle_med"],
                Region.TAIL: settings["oracle_tail"],
            },
            confidence_correct=tuple(settings["oracle_conf_correct"]),
            confidence_wrong=tuple(settings["oracle_conf_wrong"]),
            seed=settings["oracle_seed"],
            per_call_cost=settings["oracle_cost"],
        )
        return OracleBackend(spec, num_classes=len(label_names))
    if choice.startswith("http://") or choice.startswith("https://"):
        config = HttpBackendConfig(
            endpoint=choice,
            timeout_s=settings["http_timeout"],
            max_retries=settings["http_retries"],
            backoff_s=settings["http_backoff"],
        )
        return HttpBackend(config, label_names)
    raise ConfigError(f"unknown backend {choice!r} (use 'oracle' or an http(s) URL)")


def _load_dataset(args) -> Dataset:
    return load_csv(args.data, CsvSchema())


def _load_models(models_dir):
    mdir = Path(models_dir)
    judgment = load_handle(mdir / "judgment.kcmnet")
    small = load_handle(mdir / "small.kcmnet")
    return judgment, small


def cmd_generate(args) -> int:
    settings = resolve_settings(args)
    outdir = _outdir(args)
    spec = LongTailSpec(
        num_classes=settings["num_classes"],
        feature_dim=settings["feature_dim"],
        max_per_class=settings["max_per_class"],
        imbalance=settings["imbalance"],
        separation=settings["separation"],
        noise=settings["noise"],
        test_per_class=settings["test_per_class"],
        val_per_class=settings["val_per_class"],
        seed=settings["seed"],
    )
    dataset = generate_longtail(spec)
    save_dataset(dataset, outdir / "dataset.csv")
    _snapshot(outdir, "generate", settings)
    print(f"wrote {outdir / 'dataset.csv'} ({len(dataset.samples)} samples, "
          f"{dataset.num_classes} classes)")
    return EXIT_OK


def cmd_train(args) -> int:
    settings = resolve_settings(args)
    outdir = _outdir(args)
    dataset = _load_dataset(args)
    config = _distill_config(settings)
    seed = settings["seed"]

    judgment = train_supervised(dataset, _arch(settings), seed,
                                epochs=settings["supervised_epochs"],
                                learning_rate=settings["supervised_lr"],
                                batch_size=settings["batch_size"])
    backend = make_backend(settings, dataset.label_names)
    partition = partition_training(dataset, judgment, backend, config)
    small = train_kcm(partition, judgment, dataset, config, seed)

    save_handle(judgment, outdir / "judgment.kcmnet")
    save_handle(small, outdir / "small.kcmnet")
    write_json(outdir / "partition_summary.json", {
        "sizes": partition.sizes(),
        "train_size": len(dataset.split(Split.TRAIN)),
        "warnings": len(partition.diverted),
    })
    write_json(outdir / "loss_curves.json", {
        "judgment_supervised": judgment.loss_curve,
        "small_distillation": small.loss_curve,
    })
    _snapshot(outdir, "train", settings)
    sizes = partition.sizes()
    print(f"trained judgment + small models; partition "
          f"x1={sizes['x1']} x2={sizes['x2']} x3={sizes['x3']} "
          f"(backend warnings: {sizes['diverted']})")
    return EXIT_OK


def cmd_infer(args) -> int:
    settings = resolve_settings(args)
    outdir = _outdir(args)
    dataset = _load_dataset(args)
    config = _distill_config(settings)
    judgment, small = _load_models(args.models)
    backend = make_backend(settings, dataset.label_names)
    split = Split(settings["split"])

    decisions = DecisionLog()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "prediction", "prediction_name", "target", "degraded"])
    for sample in dataset.split(split):
        prediction, decision = infer(sample, judgment, small, backend, config,
                                     dataset.label_names, log_sink=decisions)
        writer.writerow([sample.id, prediction, dataset.label_names[prediction],
                         decision.target.value, int(decision.degraded)])
    (outdir / "predictions.csv").write_text(buf.getvalue(), encoding="utf-8")
    decisions.write_csv(outdir / "decisions.csv")
    _snapshot(outdir, "infer", settings)
    print(f"wrote predictions for {len(decisions)} samples "
          f"(LM rate {decisions.lm_rate_percent():.2f}%)")
    return EXIT_OK


def cmd_eval(args) -> int:
    settings = resolve_settings(args)
    outdir = _outdir(args)
    dataset = _load_dataset(args)
    config = _distill_config(settings)
    judgment, small = _load_models(args.models)
    backend = make_backend(settings, dataset.label_names)

    report = evaluate_cascade(dataset, judgment, small, backend, config,
                              seed=settings["seed"], split=Split(settings["split"]))
    write_json(outdir / "report.json", report.to_json_dict())
    (outdir / "report.txt").write_text(report.render_table() + "\n", encoding="utf-8")
    report.decisions.write_csv(outdir / "decisions.csv")
    _snapshot(outdir, "eval", settings)
    print(report.render_table())
    return EXIT_OK


def cmd_ablate(args) -> int:
    settings = resolve_settings(args)
    outdir = _outdir(args)
    dataset = _load_dataset(args)
    config = _distill_config(settings)
    backend = make_backend(settings, dataset.label_names)

    result = run_ablation(dataset, config, backend, arch=_arch(settings),
                          seed=settings["seed"],
                          supervised_epochs=settings["supervised_epochs"],
                          supervised_lr=settings["supervised_lr"])
    for arm in result.reports:
        write_json(outdir / f"report_{arm}.json", result.to_json_dict(arm))
    (outdir / "comparison.txt").write_text(result.render_table() + "\n", encoding="utf-8")
    _snapshot(outdir, "ablate", settings)
    print(result.render_table())
    return EXIT_OK


def cmd_forget(args) -> int:
    settings = resolve_settings(args)
    outdir = _outdir(args)
    kinds = [settings["model_kind"]]
    if settings["model_kind"] == "both":
        kinds = [ModelKind.KAN.value, ModelKind.MLP.value]
    tables = []
    for kind in kinds:
        report = run_forgetting_benchmark(kind, settings["phases"], settings["seed"])
        write_json(outdir / f"forgetting_{kind}.json", report.to_json_dict())
        tables.append(report.render_table())
    (outdir / "forgetting.txt").write_text("\n\n".join(tables) + "\n", encoding="utf-8")
    _snapshot(outdir, "forget", settings)
    print("\n\n".join(tables))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kcm",
        description="Confidence-gated collaboration between small spline-network "
                    "models and large model backends.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seed_required=False, data=False, models=False):
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--seed", type=int, required=seed_required, default=None,
                       help="run seed" + (" (required)" if seed_required else ""))
        p.add_argument("--epsilon", type=float, default=None, help="confidence gate threshold")
        p.add_argument("--backend", default=None, help="'oracle' or an http(s) endpoint")
        p.add_argument("--out", required=True, help="output directory")
        if data:
            p.add_argument("--data", required=True, help="dataset CSV path")
        if models:
            p.add_argument("--models", required=True, help="directory holding trained models")

    p = sub.add_parser("generate", help="write a synthetic long-tail dataset")
    common(p, seed_required=True)
    for flag, key in [("--classes", "num_classes"), ("--feature-dim", "feature_dim"),
                      ("--max-per-class", "max_per_class"), ("--imbalance", "imbalance"),
                      ("--separation", "separation"), ("--noise", "noise"),
                      ("--test-per-class", "test_per_class"),
                      ("--val-per-class", "val_per_class")]:
        p.add_argument(flag, dest=key, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the judgment model, partition, distill")
    common(p, seed_required=True, data=True)
    p.add_argument("--epochs", default=None, help="distillation epochs")
    p.add_argument("--supervised-epochs", dest="supervised_epochs", default=None)
    p.add_argument("--learning-rate", dest="learning_rate", default=None)
    p.add_argument("--hidden", default=None, help="comma-separated hidden widths")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="routed inference over a dataset split")
    common(p, data=True, models=True)
    p.add_argument("--split", default=None, choices=[s.value for s in Split])
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="cascade evaluation report on the test split")
    common(p, data=True, models=True)
    p.add_argument("--split", default=None, choices=[s.value for s in Split])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="paired KAN-vs-MLP collaborative runs")
    common(p, seed_required=True, data=True)
    p.add_argument("--epochs", default=None, help="distillation epochs")
    p.add_argument("--supervised-epochs", dest="supervised_epochs", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("forget", help="sequential-phase retention benchmark")
    common(p, seed_required=True)
    p.add_argument("--phases", default=None, help="number of sequential regions")
    p.add_argument("--model-kind", dest="model_kind", default=None,
                   choices=["kan", "mlp", "both"])
    p.set_defaults(func=cmd_forget)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (NumericalError, CapacityMatchError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
