"""Command-line interface.

Subcommands: train, score, eval, synth, noise, contaminate, zero-train,
params. Every one accepts --config <file> (JSON) plus a flag override for
each config field; flags win over the file, the file wins over defaults.
Tables are CSV with a header row; floats are written with repr so reruns are
byte-identical. Exit code 0 on success; on failure one line "error: ..." on
stderr and a nonzero exit.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from .config import ConfigError, ExperimentConfig, SynthConfig, load_config
from .data import SynthParams, write_tracks
from .experiments import (
    evaluate,
    load_or_synth,
    make_benchmark_tracks,
    param_audit,
    run_contamination,
    run_noise_robustness,
    run_zero_training,
)
from .flow import load_model, save_model
from .scoring import roc_points
from .train import build_model, train

__all__ = ["main"]


def _fmt(value) -> str:
    """Deterministic cell rendering: repr for floats, str otherwise."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="JSON config file (missing keys take defaults)")
    for f in fields(ExperimentConfig):
        if f.name == "synth":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            parser.add_argument(flag, dest=f.name, default=None,
                                action=argparse.BooleanOptionalAction)
        elif f.type == "int":
            parser.add_argument(flag, dest=f.name, default=None, type=int)
        elif f.type == "float":
            parser.add_argument(flag, dest=f.name, default=None, type=float)
        else:  # str and str | None
            parser.add_argument(flag, dest=f.name, default=None)
    for f in fields(SynthConfig):
        flag = "--synth-" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f"synth_{f.name}", default=None,
                            type=int)


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for f in fields(ExperimentConfig):
        if f.name == "synth":
            continue
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    for f in fields(SynthConfig):
        value = getattr(args, f"synth_{f.name}", None)
        if value is not None:
            setattr(cfg.synth, f.name, value)
    cfg.validate()
    return cfg


def _out(cfg: ExperimentConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _checkpoint_path(cfg: ExperimentConfig) -> str:
    return cfg.checkpoint or _out(cfg, "model.json")


def _require_checkpoint(cfg: ExperimentConfig):
    path = _checkpoint_path(cfg)
    if not os.path.exists(path):
        raise FileNotFoundError(
            f"checkpoint {path} not found (run `train` first or pass --checkpoint)")
    return load_model(path)


def _float_list(text: str, what: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ValueError(f"{what} must be a comma-separated list of numbers") \
            from None


def _frames_csv(cfg: ExperimentConfig, rows, name: str) -> str:
    path = _out(cfg, name)
    _write_csv(path, ["video", "frame", "score", "label"],
               [[r.video, r.frame, r.score, r.label] for r in rows])
    return path


# -- subcommand bodies --------------------------------------------------------------


def _cmd_synth(cfg: ExperimentConfig) -> int:
    train_tracks, test_tracks, pool_tracks = make_benchmark_tracks(cfg)
    names = {}
    for name, tracks in (("train", train_tracks), ("test", test_tracks),
                         ("pool", pool_tracks)):
        path = _out(cfg, f"{name}.jsonl")
        write_tracks(path, tracks)
        names[name] = {"path": path, "tracks": len(tracks)}
    manifest = {
        "generator": "walker-benchmark-v1",
        "seed": cfg.seed,
        "sizes": asdict(cfg.synth),
        "kinematics": asdict(SynthParams()),
        "files": names,
    }
    with open(_out(cfg, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {sum(v['tracks'] for v in names.values())} tracks to {cfg.out_dir}")
    return 0


def _cmd_train(cfg: ExperimentConfig) -> int:
    train_ds, _test_ds, _pool_ds = load_or_synth(cfg)
    model = build_model(cfg)
    result = train(model, train_ds, cfg)
    ckpt = _checkpoint_path(cfg)
    save_model(model, ckpt, config=cfg.to_dict())
    _write_csv(_out(cfg, "loss.csv"), ["epoch", "mean_nll"],
               [[i, loss] for i, loss in enumerate(result.epoch_losses)])
    final = result.epoch_losses[-1] if result.epoch_losses else float("nan")
    print(f"trained {result.steps} steps on {len(train_ds.segments)} segments; "
          f"final epoch nll={final}; checkpoint={ckpt}")
    return 0


def _cmd_score(cfg: ExperimentConfig) -> int:
    model = _require_checkpoint(cfg)
    _train_ds, test_ds, _pool_ds = load_or_synth(cfg)
    ev = evaluate(model, test_ds, cfg)
    path = _out(cfg, "segments.csv")
    _write_csv(path, ["video", "person", "start_frame", "score"],
               [[s.video, s.person, s.start_frame, float(sc)]
                for s, sc in zip(test_ds.segments, ev.segment_scores)])
    _frames_csv(cfg, ev.rows, "frames.csv")
    print(f"scored {len(test_ds.segments)} segments "
          f"across {len(test_ds.frame_labels)} videos -> {path}")
    return 0


def _cmd_eval(cfg: ExperimentConfig) -> int:
    model = _require_checkpoint(cfg)
    _train_ds, test_ds, _pool_ds = load_or_synth(cfg)
    ev = evaluate(model, test_ds, cfg)
    _frames_csv(cfg, ev.rows, "frames.csv")
    scores = np.array([-r.score for r in ev.rows])
    labels = np.array([r.label for r in ev.rows])
    pts = roc_points(scores, labels)
    _write_csv(_out(cfg, "roc.csv"), ["fpr", "tpr", "threshold"],
               [[float(a), float(b), float(c)] for a, b, c in pts])
    with open(_out(cfg, "metrics.json"), "w") as fh:
        json.dump({"micro_auc": ev.auc, "frames": len(ev.rows),
                   "positives": int(labels.sum())}, fh, sort_keys=True)
        fh.write("\n")
    print(f"micro_auc={ev.auc!r} over {len(ev.rows)} frames")
    return 0


def _cmd_noise(cfg: ExperimentConfig, scales: list[float]) -> int:
    train_ds, test_ds, _pool_ds = load_or_synth(cfg)
    rows = run_noise_robustness(cfg, scales, train_ds, test_ds)
    _write_csv(_out(cfg, "noise.csv"), ["scale", "auc", "drop"],
               [[r["scale"], r["auc"], r["drop"]] for r in rows])
    for r in rows:
        print(f"S={r['scale']}: auc={r['auc']!r} drop={r['drop']!r}")
    return 0


def _cmd_contaminate(cfg: ExperimentConfig, fractions: list[float]) -> int:
    train_ds, test_ds, pool_ds = load_or_synth(cfg)
    rows = run_contamination(cfg, fractions, train_ds, test_ds, pool_ds)
    _write_csv(_out(cfg, "contamination.csv"),
               ["fraction", "replaced", "auc", "drop"],
               [[r["fraction"], r["replaced"], r["auc"], r["drop"]]
                for r in rows])
    for r in rows:
        print(f"fraction={r['fraction']}: auc={r['auc']!r} drop={r['drop']!r} "
              f"replaced={r['replaced']}")
    return 0


def _cmd_zero_train(cfg: ExperimentConfig, trials: int, workers: int) -> int:
    train_ds, test_ds, _pool_ds = load_or_synth(cfg)
    result = run_zero_training(cfg, trials, train_ds, test_ds, workers=workers)
    _write_csv(_out(cfg, "zero_train.csv"), ["trial", "auc"],
               [[t, auc] for t, auc in enumerate(result["aucs"])])
    summary = {k: result[k] for k in ("trials", "mean_auc", "std_auc",
                                      "min_auc", "max_auc")}
    with open(_out(cfg, "zero_train_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True)
        fh.write("\n")
    print(f"zero-training mean_auc={result['mean_auc']!r} "
          f"over {trials} trials (std={result['std_auc']!r})")
    return 0


def _cmd_params(cfg: ExperimentConfig) -> int:
    ckpt = cfg.checkpoint
    model = load_model(ckpt) if ckpt and os.path.exists(ckpt) else build_model(cfg)
    rows, total = param_audit(model)
    _write_csv(_out(cfg, "params.csv"), ["name", "shape", "count"],
               [[r["name"], "x".join(str(e) for e in r["shape"]) or "scalar",
                 r["count"]] for r in rows])
    per_layer: dict[str, int] = {}
    for r in rows:
        layer = r["name"].split(".", 1)[1] if "." in r["name"] else r["name"]
        group = layer.split(".")[0]
        per_layer[group] = per_layer.get(group, 0) + r["count"]
    for group in sorted(per_layer):
        print(f"{group}: {per_layer[group]}")
    print(f"total={total}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="skelflow",
        description="Skeleton-sequence anomaly detection with a "
                    "graph-attentive normalizing flow.")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = ("train", "score", "eval", "synth", "noise", "contaminate",
                "zero-train", "params")
    parsers = {}
    for name in commands:
        p = sub.add_parser(name)
        _add_config_flags(p)
        parsers[name] = p
    parsers["noise"].add_argument("--scales", default="0,0.05,0.1",
                                  help="comma-separated noise scales")
    parsers["contaminate"].add_argument("--fractions", default="0,0.05,0.1",
                                        help="comma-separated fractions")
    parsers["zero-train"].add_argument("--trials", type=int, default=100)
    parsers["zero-train"].add_argument("--workers", type=int, default=1)

    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "synth":
            return _cmd_synth(cfg)
        if args.command == "train":
            return _cmd_train(cfg)
        if args.command == "score":
            return _cmd_score(cfg)
        if args.command == "eval":
            return _cmd_eval(cfg)
        if args.command == "noise":
            return _cmd_noise(cfg, _float_list(args.scales, "--scales"))
        if args.command == "contaminate":
            return _cmd_contaminate(
                cfg, _float_list(args.fractions, "--fractions"))
        if args.command == "zero-train":
            return _cmd_zero_train(cfg, args.trials, args.workers)
        if args.command == "params":
            return _cmd_params(cfg)
        raise ValueError(f"unknown command {args.command!r}")
    except (OSError, ValueError, ConfigError, RuntimeError) as err:
        message = str(err).splitlines()[0] if str(err) else type(err).__name__
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
