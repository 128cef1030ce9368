"""Command-line entry point for batch experiments.

Subcommands:
    fit-encoders      Stage I: fit the augmentation encoders, write a checkpoint.
    pretrain-teacher  Train and checkpoint the teacher model.
    train             Full alternating training (needs the two checkpoints above).
    eval              Evaluate a trained student checkpoint on the test split.
    export-curves     Render the CSV curves (and optional plots) from a run record.
    ablate            Compare full training against plain distillation over seeds.

Exit codes: 0 success, 2 configuration error (including missing prerequisite
artifacts), 3 fit failure, 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

import torch

from . import __version__
from .augment import MODES
from .checkpoint import (
    KIND_ENCODERS,
    KIND_STUDENT,
    KIND_TEACHER,
    KIND_TRAIN,
    load_checkpoint,
    save_checkpoint,
)
from .config import ExperimentConfig, load_config
from .datasets import provide_dataset
from .encoders import MetaEncoderSet
from .exceptions import ConfigError, FitFailure, TrainingDiverged
from .models import build_model, count_parameters, evaluate_accuracy, pretrain_teacher
from .record import RunRecord, export_curves
from .sampling import AugmentParams
from .trainer import TrainingLoop, stage1_fit_encoders

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FIT = 3
EXIT_DIVERGED = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="augdistill", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"augdistill {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None,
                       help="experiment config file (JSON); defaults apply if omitted")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--mode", choices=MODES, default=None,
                       help="override the augmentation combination mode")
        p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("fit-encoders", help="run the Stage-I encoder fit")
    common(p)

    p = sub.add_parser("pretrain-teacher", help="pretrain and checkpoint the teacher")
    common(p)

    p = sub.add_parser("train", help="run the full alternating training")
    common(p)
    p.add_argument("--teacher", type=Path, default=None,
                   help="teacher checkpoint (default: <out>/teacher.ckpt)")
    p.add_argument("--encoders", type=Path, default=None,
                   help="encoder checkpoint (default: <out>/encoders.ckpt)")
    p.add_argument("--resume", type=Path, default=None,
                   help="resume from a train checkpoint")
    p.add_argument("--stop-after", type=int, default=None,
                   help="stop after this many epochs (for interrupt/resume testing)")
    p.add_argument("--plots", action="store_true", help="also render PNG curve plots")

    p = sub.add_parser("eval", help="evaluate a student checkpoint")
    common(p)
    p.add_argument("--student", type=Path, required=True, help="student checkpoint path")

    p = sub.add_parser("export-curves", help="export CSV curves from a run record")
    common(p)
    p.add_argument("--record", type=Path, required=True, help="run_record.json path")
    p.add_argument("--plots", action="store_true", help="also render PNG curve plots")

    p = sub.add_parser("ablate", help="compare full training vs plain distillation")
    common(p)
    p.add_argument("--teacher", type=Path, default=None)
    p.add_argument("--encoders", type=Path, default=None)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds (>= 1)")
    return parser


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        overrides["mode"] = args.mode
    if overrides:
        cfg = cfg.with_overrides(**overrides)
    return cfg


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig, argv: list[str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": f"augdistill-{__version__}",
        "seed": cfg["seed"],
        "config_hash": cfg.config_hash(),
        "argv": argv,
        "config": cfg.data,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require(path: Path | None, default: Path, what: str) -> Path:
    p = path if path is not None else default
    if not p.exists():
        raise ConfigError(f"missing {what} checkpoint: {p} (run the producing subcommand first)")
    return p


def _load_teacher(path: Path, cfg: ExperimentConfig, n_classes: int):
    record = load_checkpoint(path, kind=KIND_TEACHER)
    payload = record["payload"]
    spec = cfg.teacher_spec(n_classes)
    if payload["spec"] != {"family": spec.family, "width": spec.width,
                           "depth": spec.depth, "n_classes": spec.n_classes}:
        raise ConfigError(
            f"{path}: teacher checkpoint spec {payload['spec']} does not match the config"
        )
    teacher = build_model(spec, seed=cfg["seed"])
    teacher.load_state_dict(payload["state"])
    teacher.eval()
    for p in teacher.parameters():
        p.requires_grad_(False)
    return teacher, payload.get("accuracy")


def _load_encoders(path: Path, cfg: ExperimentConfig):
    record = load_checkpoint(path, kind=KIND_ENCODERS)
    payload = record["payload"]
    prior_dim = cfg["train"]["prior_dim"]
    if payload["prior_dim"] != prior_dim:
        raise ConfigError(f"{path}: encoder checkpoint prior_dim {payload['prior_dim']} "
                          f"does not match the config ({prior_dim})")
    encoders = MetaEncoderSet(channels=payload["channels"], prior_dim=prior_dim,
                              seed=cfg["seed"])
    encoders.load_state_dict(payload["state"])
    encoders.freeze()
    return encoders


def _cmd_fit_encoders(args, argv) -> int:
    cfg = _load_experiment(args)
    _write_manifest(args.out, "fit-encoders", cfg, argv)
    data = provide_dataset(**cfg.dataset_kwargs())
    train_cfg = cfg.train_config()
    encoders = MetaEncoderSet(channels=data.train_x.shape[1],
                              prior_dim=train_cfg.prior_dim, seed=cfg["seed"])
    report = stage1_fit_encoders(data, encoders, train_cfg)
    payload = {
        "state": encoders.state_dict(),
        "prior_dim": train_cfg.prior_dim,
        "channels": data.train_x.shape[1],
        "fit_report": report.to_dict(),
    }
    save_checkpoint(args.out / "encoders.ckpt", KIND_ENCODERS, cfg.config_hash(), payload)
    (args.out / "fit_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    for r in report.results:
        mse = "-" if r.mse is None else f"{r.mse:.2e}"
        print(f"{r.policy:12s} {r.status:10s} mse={mse} {'ok' if r.ok else 'FAIL'}")
    if not report.all_ok:
        names = ", ".join(r.policy for r in report.failures)
        print(f"fit failure: {names} above the {report.mse_bound} MSE bound", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


def _cmd_pretrain_teacher(args, argv) -> int:
    cfg = _load_experiment(args)
    _write_manifest(args.out, "pretrain-teacher", cfg, argv)
    data = provide_dataset(**cfg.dataset_kwargs())
    spec = cfg.teacher_spec(data.n_classes)
    t = cfg["teacher"]
    teacher, acc = pretrain_teacher(
        spec, data.train_x, data.train_y, data.test_x, data.test_y,
        epochs=t["pretrain_epochs"], seed=cfg["seed"], lr=t["pretrain_lr"],
        batch_size=cfg["train"]["batch_size"], min_accuracy=t["min_accuracy"],
    )
    payload = {
        "state": teacher.state_dict(),
        "spec": {"family": spec.family, "width": spec.width,
                 "depth": spec.depth, "n_classes": spec.n_classes},
        "accuracy": acc,
    }
    save_checkpoint(args.out / "teacher.ckpt", KIND_TEACHER, cfg.config_hash(), payload)
    (args.out / "teacher_metrics.json").write_text(
        json.dumps({"test_accuracy": acc, "parameters": count_parameters(teacher)}) + "\n")
    print(f"teacher test accuracy: {acc:.4f}")
    return EXIT_OK


def _train_once(cfg: ExperimentConfig, data, teacher, encoders,
                out: Path | None = None, resume: Path | None = None,
                stop_after: int | None = None) -> tuple[RunRecord, torch.nn.Module]:
    train_cfg = cfg.train_config()
    student_spec = cfg.student_spec(data.n_classes)
    teacher_params = count_parameters(teacher)
    student = build_model(student_spec, seed=cfg["seed"] + 1)
    if count_parameters(student) > teacher_params:
        raise ConfigError(
            "student has more parameters than the teacher; pick a smaller student"
        )
    loop = TrainingLoop(train_cfg, data, teacher, student, encoders)
    if resume is not None:
        record = load_checkpoint(resume, kind=KIND_TRAIN, expect_hash=cfg.config_hash())
        loop.load_state_dict(record["payload"]["loop"])
    hook = None
    if out is not None:
        def hook(lp: TrainingLoop) -> None:
            save_checkpoint(out / "train.ckpt", KIND_TRAIN, cfg.config_hash(),
                            {"loop": lp.state_dict()})
    loop.run(stop_after=stop_after, on_epoch_end=hook)
    return loop.record, student


def _cmd_train(args, argv) -> int:
    cfg = _load_experiment(args)
    _write_manifest(args.out, "train", cfg, argv)
    data = provide_dataset(**cfg.dataset_kwargs())
    teacher_path = _require(args.teacher, args.out / "teacher.ckpt", "teacher")
    encoders_path = _require(args.encoders, args.out / "encoders.ckpt", "encoder")
    teacher, _ = _load_teacher(teacher_path, cfg, data.n_classes)
    encoders = _load_encoders(encoders_path, cfg)
    record, student = _train_once(cfg, data, teacher, encoders, out=args.out,
                                  resume=args.resume, stop_after=args.stop_after)
    record.save(args.out / "run_record.json")
    if record.epochs:
        export_curves(record, args.out, plots=args.plots)
        final = record.epochs[-1]
        print(f"epoch {final.epoch}: test accuracy {final.test_accuracy:.4f}")
    save_checkpoint(args.out / "student.ckpt", KIND_STUDENT, cfg.config_hash(), {
        "state": student.state_dict(),
        "spec": {"family": cfg["student"]["family"], "width": cfg["student"]["width"],
                 "depth": cfg["student"]["depth"], "n_classes": data.n_classes},
    })
    return EXIT_OK


def _cmd_eval(args, argv) -> int:
    cfg = _load_experiment(args)
    _write_manifest(args.out, "eval", cfg, argv)
    data = provide_dataset(**cfg.dataset_kwargs())
    record = load_checkpoint(args.student, kind=KIND_STUDENT)
    spec = cfg.student_spec(data.n_classes)
    student = build_model(spec, seed=cfg["seed"] + 1)
    student.load_state_dict(record["payload"]["state"])
    acc = evaluate_accuracy(student, data.test_x, data.test_y)
    (args.out / "eval.json").write_text(json.dumps({"test_accuracy": acc}) + "\n")
    print(f"test accuracy: {acc:.4f}")
    return EXIT_OK


def _cmd_export_curves(args, argv) -> int:
    cfg = _load_experiment(args)
    _write_manifest(args.out, "export-curves", cfg, argv)
    if not args.record.exists():
        raise ConfigError(f"missing run record: {args.record}")
    record = RunRecord.load(args.record)
    files = export_curves(record, args.out, plots=args.plots)
    for f in files:
        print(f)
    return EXIT_OK


def _cmd_ablate(args, argv) -> int:
    cfg = _load_experiment(args)
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    _write_manifest(args.out, "ablate", cfg, argv)
    data = provide_dataset(**cfg.dataset_kwargs())
    teacher_path = _require(args.teacher, args.out / "teacher.ckpt", "teacher")
    encoders_path = _require(args.encoders, args.out / "encoders.ckpt", "encoder")

    variants = {
        "vanilla-kd": {"train": {"search_epochs": [], "augment_batch": False}},
        "tst": {},
    }
    accs: dict[str, list[float]] = {name: [] for name in variants}
    base_seed = cfg["seed"]
    for i in range(args.seeds):
        for name, overrides in variants.items():
            run_cfg = cfg.with_overrides(seed=base_seed + i, **overrides)
            teacher, _ = _load_teacher(teacher_path, cfg, data.n_classes)
            encoders = _load_encoders(encoders_path, cfg)
            record, _ = _train_once(run_cfg, data, teacher, encoders)
            accs[name].append(record.epochs[-1].test_accuracy)
    rows = []
    for name in ("vanilla-kd", "tst"):
        vals = accs[name]
        mean = statistics.fmean(vals)
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        rows.append({"variant": name, "mean_accuracy": mean, "std_accuracy": std,
                     "per_seed": vals})
    table = {"seeds": [base_seed + i for i in range(args.seeds)], "rows": rows}
    (args.out / "ablation.json").write_text(json.dumps(table, indent=2) + "\n")
    lines = ["variant,mean_accuracy,std_accuracy," +
             ",".join(f"seed_{s}" for s in table["seeds"])]
    for row in rows:
        lines.append(",".join([row["variant"], f"{row['mean_accuracy']:.9g}",
                               f"{row['std_accuracy']:.9g}",
                               *[f"{v:.9g}" for v in row["per_seed"]]]))
    with open(args.out / "ablation.csv", "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    for row in rows:
        print(f"{row['variant']:12s} mean={row['mean_accuracy']:.4f} "
              f"std={row['std_accuracy']:.4f} per-seed={row['per_seed']}")
    return EXIT_OK


_COMMANDS = {
    "fit-encoders": _cmd_fit_encoders,
    "pretrain-teacher": _cmd_pretrain_teacher,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "export-curves": _cmd_export_curves,
    "ablate": _cmd_ablate,
}


def run_command(argv: list[str]) -> int:
    """Parse and execute one CLI invocation; returns the exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, argv)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FitFailure as e:
        print(f"fit failure: {e}", file=sys.stderr)
        return EXIT_FIT
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        if e.diagnostics:
            print(json.dumps(e.diagnostics, indent=2), file=sys.stderr)
        return EXIT_DIVERGED


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
