"""
Command-line driver.

    oradapt gen       write source/target datasets
    oradapt pretrain  source-only clip model + source temporal model
    oradapt adapt     UDA or SSDA adaptation from a pretrain checkpoint
    oradapt eval      score a clip/temporal checkpoint pair on target data
    oradapt sweep     lambda / beta / labeled_fraction sweeps -> CSV
    oradapt ablate    alignment x sampling switch table -> CSV
    oradapt rerun     replay a command from its manifest

Configuration is INI-style; precedence is --override > --seed > file > defaults.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .adapt import AdaptConfig
from .augment import AugmentConfig
from .datagen import load_dataset, save_dataset
from .evaluation import MetricsReport
from .nn import ChecksumError, load_checkpoint, save_checkpoint
from .pipeline import (ABLATION_ROWS, Datasets, ExperimentConfig, Pretrained, adapt_clip_model,
                       evaluate, final_temporal_model, labeled_target_split, make_datasets,
                       pretrain_source, rng_stream, run_ablation, run_ssda, run_uda,
                       train_temporal, video_features)

SECTIONS: dict[str, tuple[str, ...]] = {
    "data": ("num_classes", "feature_dim", "imbalance_ratio", "class_noise_std",
             "duration_log_std", "video_length", "mean_scale", "spec_seed", "n_source_videos",
             "n_target_videos", "shift", "shift_scale_std", "shift_offset_std",
             "shift_drift_pairs", "shift_drift_strength", "shift_duration_std",
             "shift_transition_std", "shift_seed"),
    "model": ("clip_length", "hidden", "latent", "gru_hidden"),
    "train": ("batch_size", "pretrain_epochs", "adapt_epochs", "steps_per_epoch",
              "temporal_epochs", "lr_clip", "lr_temporal", "target_sampling",
              "labeled_fraction", "seed"),
    "eval": ("n_eval_per_class",),
    "adapt": tuple(f.name for f in fields(AdaptConfig)),
    "augment": tuple(f.name for f in fields(AugmentConfig)),
}
_NESTED = ("adapt", "augment")


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


def _field_types() -> dict[str, dict[str, str]]:
    types = {s: {} for s in SECTIONS}
    top = {f.name: f.type for f in fields(ExperimentConfig)}
    for s, keys in SECTIONS.items():
        src = ({f.name: f.type for f in fields(AdaptConfig if s == "adapt" else AugmentConfig)}
               if s in _NESTED else top)
        for k in keys:
            types[s][k] = src[k]
    return types


_TYPES = _field_types()


def _convert(section: str, key: str, raw: str):
    kind = _TYPES[section][key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{section}.{key}: expected {kind}, got {raw!r}") from None


def _resolve_key(key: str) -> tuple[str, str]:
    if "." in key:
        section, name = key.split(".", 1)
        if section in SECTIONS and name in SECTIONS[section]:
            return section, name
    else:
        hits = [s for s, keys in SECTIONS.items() if key in keys]
        if len(hits) == 1:
            return hits[0], key
        if len(hits) > 1:
            raise ConfigError(f"ambiguous key {key!r}; qualify it as one of "
                              + ", ".join(f"{s}.{key}" for s in hits))
    raise ConfigError(f"unknown key {key!r}; valid keys: " + ", ".join(
        f"{s}.{k}" for s, keys in SECTIONS.items() for k in keys))


def parse_config(path: str | Path | None = None, overrides: list[str] | None = None
                 ) -> ExperimentConfig:
    """Defaults, then the INI file, then ``key=value`` overrides (last wins)."""
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        parser.read(path)
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]; valid: {', '.join(SECTIONS)}")
            for key, raw in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]; valid keys: "
                                      + ", ".join(SECTIONS[section]))
                values[section][key] = _convert(section, key, raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        section, name = _resolve_key(key.strip())
        values[section][name] = _convert(section, name, raw)
    top = {k: v for s in SECTIONS if s not in _NESTED for k, v in values[s].items()}
    cfg = ExperimentConfig(adapt=AdaptConfig(**values["adapt"]),
                           augment=AugmentConfig(**values["augment"]), **top)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def write_config(cfg: ExperimentConfig, path: str | Path) -> Path:
    d = cfg.to_dict()
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section, keys in SECTIONS.items():
        src = d[section] if section in _NESTED else d
        parser[section] = {k: str(src[k]) for k in keys}
    path = Path(path)
    with open(path, "w") as fh:
        parser.write(fh)
    return path


# -- metrics and manifests --------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_metrics(report: MetricsReport, path: str | Path) -> Path:
    """One JSON record per epoch of the report's main stage, then a summary record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(_jsonable(r), sort_keys=True) for r in report.epochs]
    summary = dict(report.summary(), stage="summary")
    if report.baselines:
        summary["baselines"] = {k: v.summary() for k, v in report.baselines.items()}
    lines.append(json.dumps(_jsonable(summary), sort_keys=True))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_metrics(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list
    args: dict
    artifacts: dict = field(default_factory=dict)
    tool_version: str = __version__
    started: float = 0.0
    finished: float = 0.0

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(_jsonable(self.__dict__), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


class Layout:
    """Where each command reads and writes inside --out-dir."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.data = self.root / "data"
        self.ckpt = self.root / "checkpoints"
        self.metrics = self.root / "metrics"

    def checkpoint(self, name: str) -> Path:
        return self.ckpt / f"{name}.ckpt"

    def metrics_file(self, name: str) -> Path:
        return self.metrics / f"{name}.jsonl"

    def manifest(self, command: str) -> Path:
        return self.root / f"manifest_{command}.json"

    def require(self, path: Path, hint: str) -> Path:
        if not path.exists():
            raise MissingArtifact(f"missing {path} (run `oradapt {hint}` first)")
        return path

    def prepare(self) -> None:
        for d in (self.data, self.ckpt, self.metrics):
            d.mkdir(parents=True, exist_ok=True)


def _load_data(layout: Layout) -> Datasets:
    layout.require(layout.data, "gen")
    src, tgt = load_dataset(layout.data, "source"), load_dataset(layout.data, "target")
    if not src or not tgt:
        raise MissingArtifact(f"missing dataset files in {layout.data} (run `oradapt gen` first)")
    return Datasets(src, tgt)


# -- commands ------------------------------------------------------------------------------------

def cmd_gen(cfg: ExperimentConfig, layout: Layout, args) -> dict:
    data = make_datasets(cfg)
    src = save_dataset(data.source, layout.data, "source")
    tgt = save_dataset(data.target, layout.data, "target")
    return {"dataset_dir": str(layout.data), "n_files": len(src) + len(tgt)}


def cmd_pretrain(cfg: ExperimentConfig, layout: Layout, args) -> dict:
    data = _load_data(layout)
    clip, trace = pretrain_source(cfg, data.source)
    gru, gtrace = train_temporal(video_features(clip, data.source, cfg.clip_length), cfg,
                                 rng_stream(cfg.seed, "temporal_source"))
    save_checkpoint(clip, layout.checkpoint("clip_pretrained"))
    save_checkpoint(gru, layout.checkpoint("temporal_source"))
    report = evaluate(cfg, clip, gru, data.target, "pretrained")
    report.epochs = trace
    report.stage_traces = {"temporal_source": gtrace}
    write_metrics(report, layout.metrics_file("pretrain"))
    return {"clip": str(layout.checkpoint("clip_pretrained")),
            "temporal": str(layout.checkpoint("temporal_source")),
            "metrics": str(layout.metrics_file("pretrain"))}


def _pretrained_from_disk(layout: Layout) -> Pretrained:
    data = _load_data(layout)
    clip = load_checkpoint(layout.require(layout.checkpoint("clip_pretrained"), "pretrain"))
    gru = load_checkpoint(layout.require(layout.checkpoint("temporal_source"), "pretrain"))
    return Pretrained(data, clip, gru, [], [])


def cmd_adapt(cfg: ExperimentConfig, layout: Layout, args) -> dict:
    pre = _pretrained_from_disk(layout)
    mode = getattr(args, "mode", "uda")
    labeled = []
    if mode == "ssda":
        fraction = cfg.labeled_fraction if args.labeled_fraction is None else args.labeled_fraction
        cfg = replace(cfg, labeled_fraction=fraction)
        labeled = labeled_target_split(cfg, fraction)
    run = adapt_clip_model(cfg, pre, labeled)
    temporal_videos = pre.datasets.source + [pre.datasets.target[i] for i in labeled]
    gru, gtrace = final_temporal_model(cfg, run.clip, temporal_videos)
    save_checkpoint(run.clip, layout.checkpoint("clip_adapted"))
    save_checkpoint(gru, layout.checkpoint("temporal_final"))
    report = evaluate(cfg, run.clip, gru, pre.datasets.target, mode)
    report.epochs = run.trace
    report.diagnostics["labeled_videos"] = labeled
    write_metrics(report, layout.metrics_file("adapt"))
    return {"clip": str(layout.checkpoint("clip_adapted")),
            "temporal": str(layout.checkpoint("temporal_final")),
            "metrics": str(layout.metrics_file("adapt"))}


def cmd_eval(cfg: ExperimentConfig, layout: Layout, args) -> dict:
    data = _load_data(layout)
    stage = getattr(args, "which", "adapted")
    names = {"adapted": ("clip_adapted", "temporal_final", "adapt"),
             "pretrained": ("clip_pretrained", "temporal_source", "pretrain")}[stage]
    clip = load_checkpoint(layout.require(layout.checkpoint(names[0]), names[2]))
    gru = load_checkpoint(layout.require(layout.checkpoint(names[1]), names[2]))
    report = evaluate(cfg, clip, gru, data.target, f"eval-{stage}")
    write_metrics(report, layout.metrics_file("eval"))
    return {"metrics": str(layout.metrics_file("eval"))}


def _parse_values(raw: str) -> list[float]:
    vals = [float(v) for v in raw.split(",") if v.strip()]
    if not vals:
        raise ConfigError("--values must list at least one number")
    return vals


SWEEP_PARAMS = ("lambda", "beta", "labeled_fraction")
SWEEP_COLUMNS = ["param", "value", "accuracy", "mAP", "st_accuracy", "st_mAP", "n_seeds", "status"]


def sweep_rows(cfg: ExperimentConfig, param: str, values: list[float], seeds: list[int]) -> list[dict]:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"--param must be one of {SWEEP_PARAMS}")
    rows = []
    for value in values:
        row = {"param": param, "value": value, "st_accuracy": "", "st_mAP": "", "n_seeds": len(seeds)}
        try:
            acc, mAP, st_acc, st_mAP = [], [], [], []
            for seed in seeds:
                c = replace(cfg, seed=seed)
                if param == "lambda":
                    r = run_uda(replace(c, adapt=replace(c.adapt, lambda_max=value)))
                elif param == "beta":
                    if value != int(value) or value < 1:
                        raise ValueError(f"beta must be a positive integer, got {value}")
                    r = run_uda(replace(c, adapt=replace(c.adapt, beta=int(value))))
                else:
                    r = run_ssda(c, value)
                    st_acc.append(r.baselines["S+T"].balanced_clip_accuracy)
                    st_mAP.append(r.baselines["S+T"].mAP)
                acc.append(r.balanced_clip_accuracy)
                mAP.append(r.mAP)
            row.update(accuracy=float(np.mean(acc)), mAP=float(np.mean(mAP)), status="ok")
            if st_acc:
                row.update(st_accuracy=float(np.mean(st_acc)), st_mAP=float(np.mean(st_mAP)))
        except Exception as exc:  # a failed cell is reported, the sweep goes on
            row.update(accuracy="", mAP="", status=f"failed: {exc}")
        rows.append(row)
    return rows


def ablation_rows(cfg: ExperimentConfig, seeds: list[int]) -> list[dict]:
    rows = []
    for name, (da, ps) in ABLATION_ROWS.items():
        reports = [run_ablation(replace(cfg, seed=s), da, ps) for s in seeds]
        rows.append({"case": name, "distribution_alignment": da, "pseudo_sampling": ps,
                     "accuracy": float(np.mean([r.balanced_clip_accuracy for r in reports])),
                     "mAP": float(np.mean([r.mAP for r in reports])), "n_seeds": len(seeds)})
    return rows


def write_csv(rows: list[dict], path: Path, columns: list[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def cmd_sweep(cfg: ExperimentConfig, layout: Layout, args) -> dict:
    values = _parse_values(args.values)
    rows = sweep_rows(cfg, args.param, values, args.seed_list)
    path = write_csv(rows, layout.metrics / f"sweep_{args.param}.csv", SWEEP_COLUMNS)
    return {"summary": str(path)}


def cmd_ablate(cfg: ExperimentConfig, layout: Layout, args) -> dict:
    rows = ablation_rows(cfg, args.seed_list)
    path = write_csv(rows, layout.metrics / "ablation.csv",
                     ["case", "distribution_alignment", "pseudo_sampling", "accuracy", "mAP", "n_seeds"])
    return {"summary": str(path)}


COMMANDS = {"gen": cmd_gen, "pretrain": cmd_pretrain, "adapt": cmd_adapt, "eval": cmd_eval,
            "sweep": cmd_sweep, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="experiment seed (overrides train.seed)")
    common.add_argument("--seeds", help="comma-separated seeds for sweep/ablate (default 0-4)")
    common.add_argument("--out-dir", default="runs", help="artifact directory")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, repeatable; KEY may be section-qualified")

    parser = argparse.ArgumentParser(prog="oradapt", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate datasets")
    sub.add_parser("pretrain", parents=[common], help="source pretraining")
    p = sub.add_parser("adapt", parents=[common], help="domain adaptation")
    p.add_argument("--mode", choices=("uda", "ssda"), default="uda")
    p.add_argument("--labeled-fraction", type=float, default=None)
    p = sub.add_parser("eval", parents=[common], help="evaluate checkpoints on target data")
    p.add_argument("--which", choices=("adapted", "pretrained"), default="adapted")
    p = sub.add_parser("sweep", parents=[common], help="hyperparameter sweep")
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    sub.add_parser("ablate", parents=[common], help="component ablation")
    p = sub.add_parser("rerun", help="replay a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None, help="write to a different directory")
    return parser


def _execute(command: str, cfg: ExperimentConfig, args, layout: Layout, seeds: list[int]) -> int:
    layout.prepare()
    manifest = RunManifest(command=command, config=cfg.to_dict(), seeds=seeds,
                           args={k: v for k, v in vars(args).items()
                                 if k in ("mode", "labeled_fraction", "which", "param", "values")},
                           started=time.time())
    manifest.artifacts = COMMANDS[command](cfg, layout, args)
    manifest.artifacts["out_dir"] = str(layout.root)
    manifest.finished = time.time()
    manifest.write(layout.manifest(command))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            m = RunManifest.read(args.manifest)
            cfg = ExperimentConfig.from_dict(m.config)
            cfg.validate()
            ns = argparse.Namespace(**m.args, seed_list=m.seeds)
            out = Path(args.out_dir) if args.out_dir else Path(m.artifacts["out_dir"])
            return _execute(m.command, cfg, ns, Layout(out), m.seeds)
        overrides = list(args.override)
        if args.seed is not None:
            overrides.insert(0, f"train.seed={args.seed}")
        cfg = parse_config(args.config, overrides)
        args.seed_list = ([int(s) for s in args.seeds.split(",")] if args.seeds
                          else ([cfg.seed] if args.command not in ("sweep", "ablate")
                                else [0, 1, 2, 3, 4]))
        return _execute(args.command, cfg, args, Layout(args.out_dir), args.seed_list)
    except (ConfigError, MissingArtifact, ChecksumError) as exc:
        print(f"oradapt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"oradapt {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
