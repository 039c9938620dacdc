"""Command-line entry point.

Subcommands: pack validate, episode sample, finetune, eval, ablate,
metrics icv / ib, gradcheck, synth. Every run that writes outputs also
writes a manifest next to them (resolved config, seeds, input digests), and
report directories hold machine-readable JSON/CSV/JSONL alongside rendered
PNG figures. Exit codes: 0 success, 1 validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .domain_gap import ib_report, icv_report
from .episodes import EpisodeSpec, sample_episode
from .errors import ConfigError, ProtoAdaptError, ValidationError
from .evaluation import (
    COCO_THRESHOLDS,
    STAGES,
    episode_fingerprint,
    evaluate_stage,
    run_ablation,
)
from .featurepack import load_feature_pack, save_feature_pack, validation_report
from .fixtures import GRADCHECK_LOSSES, run_gradcheck
from .manifest import RunManifest, file_digest, write_manifest
from .reporting import (
    format_eval_table,
    render_attention_heatmap,
    render_loss_curves,
    render_prototype_similarity,
    render_stage_bars,
    write_eval_csv,
    write_json,
    write_train_log_jsonl,
)
from .synth import BenchmarkSpec, make_benchmark_pack
from .training import (
    FinetuneConfig,
    MODULE_DP,
    build_prototypes,
    compute_attention_weights,
    finetune,
    init_frozen_params,
    save_adaptation,
)

GRADCHECK_TOLERANCE = 1e-4


def _add_episode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pack", required=True, help="feature-pack file")
    p.add_argument("--n", type=int, default=None, help="classes per episode (default: all in pack)")
    p.add_argument("--k", type=int, default=5, help="support instances per class")
    p.add_argument("--n-bg", type=int, default=None, help="background instances (default from config, 530)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", default=None, help="comma-separated class names instead of --n")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON file mirroring the finetune configuration")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--tau-proto", type=float, default=None)
    p.add_argument("--tau-domain", type=float, default=None)
    p.add_argument("--cls-temperature", type=float, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--proposal-jitter", type=float, default=None)
    p.add_argument("--modules", default=None, help="comma-separated subset of FT-heads,LIF,IR,DP")


_CONFIG_KEYS = {
    "lr", "epochs", "alpha", "tau_proto", "tau_domain", "cls_temperature",
    "top_k", "n_background", "proposal_jitter", "enabled_modules", "seed",
}


def _resolve_config(args) -> FinetuneConfig:
    values: dict = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
        unknown = set(loaded) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}; valid: {sorted(_CONFIG_KEYS)}")
        values.update(loaded)
    for flag, key in (
        ("lr", "lr"), ("epochs", "epochs"), ("alpha", "alpha"), ("tau_proto", "tau_proto"),
        ("tau_domain", "tau_domain"), ("cls_temperature", "cls_temperature"),
        ("top_k", "top_k"), ("proposal_jitter", "proposal_jitter"),
    ):
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    if getattr(args, "modules", None):
        values["enabled_modules"] = [m.strip() for m in args.modules.split(",") if m.strip()]
    if getattr(args, "n_bg", None) is not None:
        values["n_background"] = args.n_bg
    values["seed"] = args.seed
    if "enabled_modules" in values:
        values["enabled_modules"] = frozenset(values["enabled_modules"])
    return FinetuneConfig(**values)


def _build_episode(args, pack, config: FinetuneConfig):
    if args.classes:
        names = [c.strip() for c in args.classes.split(",")]
        index = {name: i for i, name in enumerate(pack.class_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise ValidationError(f"classes not in pack: {missing}")
        class_indices = tuple(index[n] for n in names)
        n_way = len(class_indices)
    else:
        class_indices = None
        n_way = args.n if args.n is not None else len(pack.class_names)
    spec = EpisodeSpec(
        n_way=n_way,
        k_shot=args.k,
        n_background=config.n_background,
        seed=args.seed,
        class_indices=class_indices,
    )
    return sample_episode(pack, spec)


def _drop_dp_if_single_class(config: FinetuneConfig, n_way: int) -> FinetuneConfig:
    # single-class episodes never run the domain prompter
    if n_way == 1 and MODULE_DP in config.enabled_modules:
        print("note: single-class episode, domain prompter disabled", file=sys.stderr)
        return replace(config, enabled_modules=config.enabled_modules - {MODULE_DP})
    return config


def _manifest_for(args, command: str, config: FinetuneConfig, extra: dict | None = None) -> RunManifest:
    cfg = config.as_dict()
    if extra:
        cfg.update(extra)
    inputs = {}
    if getattr(args, "pack", None):
        inputs[str(args.pack)] = file_digest(args.pack)
    if getattr(args, "config", None):
        inputs[str(args.config)] = file_digest(args.config)
    return RunManifest(command=command, config=cfg, seeds={"seed": args.seed}, inputs=inputs)


def _cmd_pack_validate(args) -> int:
    pack = load_feature_pack(args.path)
    print(validation_report(pack))
    return 0


def _cmd_episode_sample(args) -> int:
    pack = load_feature_pack(args.pack)
    config = _resolve_config(args)
    episode = _build_episode(args, pack, config)
    payload = {
        "dataset_id": pack.dataset_id,
        "n_way": episode.n_way,
        "k_shot": episode.k_shot,
        "classes": episode.class_names,
        "support_indices": episode.support_indices,
        "background_count": len(episode.background_indices),
        "query_images": len(episode.query_indices),
        "query_records": sum(len(v) for v in episode.query_indices.values()),
        "fingerprint": episode_fingerprint(episode),
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
        write_manifest(str(args.out) + ".manifest.json", _manifest_for(args, "episode sample", config))
    print(text)
    return 0


def _cmd_finetune(args) -> int:
    pack = load_feature_pack(args.pack)
    config = _resolve_config(args)
    episode = _build_episode(args, pack, config)
    config = _drop_dp_if_single_class(config, episode.n_way)

    before = build_prototypes(init_frozen_params(episode, config)).object_prototypes.data
    params, log = finetune(episode, config)
    epochs = config.resolved_epochs(episode.k_shot)
    print(f"finetuned {epochs} epochs in {log.wall_time_seconds:.2f}s, final loss {log.total[-1]:.6f}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_adaptation(out_dir / "checkpoint.pac", params)
    write_train_log_jsonl(out_dir / "train_log.jsonl", log)
    write_manifest(
        out_dir / "manifest.json",
        _manifest_for(args, "finetune", config, {"n": episode.n_way, "k": episode.k_shot}),
    )
    if not args.no_figures:
        render_loss_curves(out_dir / "loss_curves.png", log)
        render_attention_heatmap(
            out_dir / "attention_weights.png", compute_attention_weights(params), episode.class_names
        )
        after = build_prototypes(params).object_prototypes.data
        render_prototype_similarity(
            out_dir / "prototype_similarity.png", before @ before.T, after @ after.T, episode.class_names
        )
    print(f"wrote {out_dir}/checkpoint.pac")
    return 0


def _parse_thresholds(args) -> tuple[float, ...]:
    if args.iou_threshold is not None:
        return (args.iou_threshold,)
    return COCO_THRESHOLDS


def _cmd_eval(args) -> int:
    pack = load_feature_pack(args.pack)
    config = _resolve_config(args)
    episode = _build_episode(args, pack, config)
    config = _drop_dp_if_single_class(config, episode.n_way)
    report = evaluate_stage(episode, config, args.stage, _parse_thresholds(args), not args.no_detection)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "report.json", report.as_dict())
    table = format_eval_table([report])
    (out_dir / "report.txt").write_text(table + "\n")
    if args.emit_csv:
        write_eval_csv(out_dir / "report.csv", [report])
    if report.train_log is not None:
        write_train_log_jsonl(out_dir / "train_log.jsonl", report.train_log)
        if not args.no_figures:
            render_loss_curves(out_dir / "loss_curves.png", report.train_log)
    write_manifest(
        out_dir / "manifest.json",
        _manifest_for(args, "eval", config, {"stage": args.stage, "n": episode.n_way, "k": episode.k_shot}),
    )
    print(table)
    return 0


def _cmd_ablate(args) -> int:
    pack = load_feature_pack(args.pack)
    config = _resolve_config(args)
    episode = _build_episode(args, pack, config)
    config = _drop_dp_if_single_class(config, episode.n_way)
    stages = tuple(s.strip() for s in args.stages.split(",") if s.strip())
    workers = int(os.environ.get("PROTOADAPT_WORKERS", "1"))
    reports = run_ablation(
        episode, config, stages, _parse_thresholds(args), not args.no_detection, max_workers=workers
    )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "ablation.json", {"stages": [r.as_dict() for r in reports]})
    table = format_eval_table(reports)
    (out_dir / "ablation.txt").write_text(table + "\n")
    if args.emit_csv:
        write_eval_csv(out_dir / "ablation.csv", reports)
    if not args.no_figures:
        render_stage_bars(out_dir / "stage_scores.png", reports)
    write_manifest(
        out_dir / "manifest.json",
        _manifest_for(args, "ablate", config, {"stages": list(stages), "n": episode.n_way, "k": episode.k_shot}),
    )
    print(table)
    return 0


def _cmd_metrics_icv(args) -> int:
    pack = load_feature_pack(args.features)
    # the ICV formula runs on the features exactly as stored, not the
    # normalized view the adaptation pipeline uses
    matrix = np.asarray(pack.raw, dtype=np.float64)
    report = icv_report(pack.dataset_id, matrix)
    if report.icv_value is None:
        print(f"{report.dataset_id}: ICV not applicable (single class)")
    else:
        print(f"{report.dataset_id}: {report.icv_value:.3f} {report.icv_level}")
    if args.out:
        write_json(args.out, report.as_dict())
    return 0


def _cmd_metrics_ib(args) -> int:
    try:
        survey = json.loads(Path(args.survey).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"cannot read survey {args.survey}: {e}") from e
    if all(isinstance(v, (int, float)) for v in survey.values()):
        survey = {"survey": survey}
    reports = []
    for dataset_id, shares in sorted(survey.items()):
        report = ib_report(
            dataset_id,
            float(shares.get("slight", 0.0)),
            float(shares.get("moderate", 0.0)),
            float(shares.get("significant", 0.0)),
        )
        reports.append(report)
        print(f"{report.dataset_id}: {report.ib_value:.3f} {report.ib_level}")
    if args.out:
        write_json(args.out, {"datasets": [r.as_dict() for r in reports]})
    return 0


def _cmd_gradcheck(args) -> int:
    losses = GRADCHECK_LOSSES if args.all or not args.loss else tuple(args.loss)
    worst = run_gradcheck(losses, count=args.count, seed=args.seed, eps=args.eps)
    failed = False
    for name in losses:
        err = worst[name]
        ok = err <= GRADCHECK_TOLERANCE
        failed |= not ok
        print(f"{name:<10} max relative error {err:.3e}  {'ok' if ok else 'FAIL'}")
    return 1 if failed else 0


def _cmd_synth(args) -> int:
    spec = BenchmarkSpec(
        n_classes=args.n_classes,
        dim=args.dim,
        per_class=args.per_class,
        n_background=args.n_bg,
        seed=args.seed,
        noise=args.noise,
        outlier_fraction=args.outlier_fraction,
        outlier_scale=args.outlier_scale,
        confusion=args.confusion,
    )
    pack = make_benchmark_pack(spec)
    save_feature_pack(pack, args.out)
    manifest = RunManifest(
        command="synth",
        config={
            "n_classes": spec.n_classes, "dim": spec.dim, "per_class": spec.per_class,
            "n_background": spec.n_background, "noise": spec.noise,
            "outlier_fraction": spec.outlier_fraction, "outlier_scale": spec.outlier_scale,
            "confusion": spec.confusion,
        },
        seeds={"seed": spec.seed},
    )
    write_manifest(str(args.out) + ".manifest.json", manifest)
    print(f"wrote {args.out}: {len(pack.records)} records, {len(pack.class_names)} classes, dim {pack.dim}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protoadapt",
        description="few-shot adaptation over frozen instance embeddings",
    )
    parser.add_argument("--version", action="version", version=f"protoadapt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_pack = sub.add_parser("pack", help="feature-pack utilities")
    pack_sub = p_pack.add_subparsers(dest="pack_command", required=True)
    p_validate = pack_sub.add_parser("validate", help="check a feature-pack file")
    p_validate.add_argument("path")
    p_validate.set_defaults(fn=_cmd_pack_validate)

    p_episode = sub.add_parser("episode", help="episode utilities")
    episode_sub = p_episode.add_subparsers(dest="episode_command", required=True)
    p_sample = episode_sub.add_parser("sample", help="sample an N-way K-shot episode")
    _add_episode_args(p_sample)
    _add_config_args(p_sample)
    p_sample.add_argument("--out", default=None, help="write the episode summary JSON here")
    p_sample.set_defaults(fn=_cmd_episode_sample)

    p_ft = sub.add_parser("finetune", help="adapt to one episode and save a checkpoint")
    _add_episode_args(p_ft)
    _add_config_args(p_ft)
    p_ft.add_argument("--out-dir", default="finetune-out")
    p_ft.add_argument("--no-figures", action="store_true")
    p_ft.set_defaults(fn=_cmd_finetune)

    p_eval = sub.add_parser("eval", help="finetune (unless frozen) and evaluate one stage")
    _add_episode_args(p_eval)
    _add_config_args(p_eval)
    p_eval.add_argument("--stage", default="full", choices=STAGES)
    p_eval.add_argument("--iou-threshold", type=float, default=None,
                        help="single-threshold mAP instead of the 0.50:0.95 average")
    p_eval.add_argument("--no-detection", action="store_true", help="classification accuracy only")
    p_eval.add_argument("--emit-csv", action="store_true")
    p_eval.add_argument("--no-figures", action="store_true")
    p_eval.add_argument("--out-dir", default="eval-out")
    p_eval.set_defaults(fn=_cmd_eval)

    p_ablate = sub.add_parser("ablate", help="stage-by-stage module ablation on one episode")
    _add_episode_args(p_ablate)
    _add_config_args(p_ablate)
    p_ablate.add_argument("--stages", default="frozen,FT-heads,+LIF,+IR,full")
    p_ablate.add_argument("--iou-threshold", type=float, default=None)
    p_ablate.add_argument("--no-detection", action="store_true")
    p_ablate.add_argument("--emit-csv", action="store_true")
    p_ablate.add_argument("--no-figures", action="store_true")
    p_ablate.add_argument("--out-dir", default="ablate-out")
    p_ablate.set_defaults(fn=_cmd_ablate)

    p_metrics = sub.add_parser("metrics", help="domain-gap measures")
    metrics_sub = p_metrics.add_subparsers(dest="metrics_command", required=True)
    p_icv = metrics_sub.add_parser("icv", help="inter-class variance of a text-feature pack")
    p_icv.add_argument("--features", required=True)
    p_icv.add_argument("--out", default=None)
    p_icv.set_defaults(fn=_cmd_metrics_icv)
    p_ib = metrics_sub.add_parser("ib", help="indefinable-boundaries score from survey percentages")
    p_ib.add_argument("--survey", required=True)
    p_ib.add_argument("--out", default=None)
    p_ib.set_defaults(fn=_cmd_metrics_ib)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_grad.add_argument("--all", action="store_true")
    p_grad.add_argument("--loss", action="append", choices=GRADCHECK_LOSSES)
    p_grad.add_argument("--count", type=int, default=20)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--eps", type=float, default=1e-5)
    p_grad.set_defaults(fn=_cmd_gradcheck)

    p_synth = sub.add_parser("synth", help="generate the synthetic benchmark pack")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--n-classes", type=int, default=5)
    p_synth.add_argument("--dim", type=int, default=64)
    p_synth.add_argument("--per-class", type=int, default=25)
    p_synth.add_argument("--n-bg", type=int, default=60)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--noise", type=float, default=0.35)
    p_synth.add_argument("--outlier-fraction", type=float, default=0.3)
    p_synth.add_argument("--outlier-scale", type=float, default=6.0)
    p_synth.add_argument("--confusion", type=float, default=0.25)
    p_synth.set_defaults(fn=_cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ProtoAdaptError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
