"""Command-line surface.

Grammar: ``srseg <command> [--config PATH] [--seed N] [--out DIR]
[key=value ...]`` with commands

* ``synth``   generate the synthetic dataset (train + test splits)
* ``degrade`` materialize the LR tile cache for a dataset
* ``train``   run one training mode end to end, checkpointing as it goes
* ``eval``    score a saved checkpoint on the test split, emit panels
* ``report``  combine finished runs into one comparison table
* ``sweep``   materialize the loss-balance grid as child configs (no launch)

Every command writes ``run.json`` into its output directory: config
fingerprint, seed, library versions, and the relative path of every artifact
the run produced. Wall-clock timestamps appear only inside its metadata block,
so rerunning a deterministic command changes nothing else. Exit status is 0 on
success, 2 on usage errors, 1 on runtime failures (with a diagnostic on
stderr). The environment variable ``SRSEG_DATA_ROOT`` overrides ``data.root``.
"""

import argparse
import datetime
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__, config
from .checkpoint import load_checkpoint, load_module_tensors, resolve_checkpoint
from .data import load_dataset, load_samples, synth_generate
from .metrics import MetricsReport
from .reporting import emit_report
from .training import build_networks, evaluate, run_experiment

log = logging.getLogger("srseg")


def _load_values(args, extra_overrides=()):
    text = None
    source = "<defaults>"
    if args.config:
        text = Path(args.config).read_text()
        source = str(args.config)
    overrides = list(getattr(args, "overrides", []) or []) + list(extra_overrides)
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    values = config.resolve(text, overrides, source)
    env_root = os.environ.get("SRSEG_DATA_ROOT")
    if env_root:
        values["data.root"] = env_root
    return values


def _write_run_json(out_dir, command, values, artifacts):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "fingerprint": config.fingerprint(values),
        "seed": values["train.seed"],
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
            "srseg": __version__,
        },
        "artifacts": sorted(str(p) for p in artifacts),
        "metadata": {
            "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        },
    }
    (out_dir / "run.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _tree(out_dir):
    out_dir = Path(out_dir)
    return [p.relative_to(out_dir) for p in sorted(out_dir.rglob("*"))
            if p.is_file() and p.name != "run.json"]


def _ensure_synthetic(values):
    """Generate the synthetic splits on first use, from a fixed seed so every
    training seed sees the same data."""
    root = Path(values["data.root"])
    spec = config.degradation_spec(values)
    for split, n in (("train", values["data.synth_n"]),
                     ("test", values["data.synth_test_n"])):
        if not (root / "synthetic" / split / "classes.txt").is_file():
            log.info("generating synthetic %s split (n=%d)", split, n)
            synth_generate(root, 0, n, values["data.synth_classes"],
                           values["data.tile"], spec, split)


def _manifests(values):
    if values["data.dataset"] == "synthetic":
        _ensure_synthetic(values)
    spec = config.degradation_spec(values)
    return (load_dataset(values["data.root"], values["data.dataset"], spec, "train"),
            load_dataset(values["data.root"], values["data.dataset"], spec, "test"))


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args):
    extra = []
    if args.n is not None:
        extra.append(f"data.synth_n={args.n}")
    if args.classes is not None:
        extra.append(f"data.synth_classes={args.classes}")
    if args.tile is not None:
        extra.append(f"data.tile={args.tile}")
    if args.factor is not None:
        extra.append(f"data.factor={args.factor}")
    values = _load_values(args, extra)
    if args.out:
        values["data.root"] = str(args.out)
    root = Path(values["data.root"])
    spec = config.degradation_spec(values)
    seed = values["train.seed"]
    for split, n in (("train", values["data.synth_n"]),
                     ("test", values["data.synth_test_n"])):
        manifest = synth_generate(root, seed, n, values["data.synth_classes"],
                                  values["data.tile"], spec, split)
        print(f"synthetic/{split}: {len(manifest.records)} samples "
              f"({values['data.synth_classes']} classes, "
              f"tile {values['data.tile']}, x{spec.factor})")
    out_dir = root / "synthetic"
    _write_run_json(out_dir, "synth", values, _tree(out_dir))
    return 0


def cmd_degrade(args):
    values = _load_values(args)
    train_m, test_m = _manifests(values)
    tile = values["data.tile"]
    total = 0
    for manifest in (train_m, test_m):
        total += len(load_samples(manifest, tile, cache=True))
    print(f"{values['data.dataset']}: cached {total} LR tiles at "
          f"x{values['data.factor']}")
    out_dir = Path(values["data.root"]) / values["data.dataset"]
    _write_run_json(out_dir, "degrade", values, _tree(out_dir))
    return 0


def cmd_train(args):
    extra = [f"train.mode={args.mode}"] if args.mode else []
    values = _load_values(args, extra)
    fp = config.fingerprint(values)
    run_dir = Path(args.out) if args.out else Path("runs") / f"run_{fp[:12]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.cfg").write_text(config.canonical_text(values))

    train_m, test_m = _manifests(values)
    cfg = config.train_config(values)
    sr_cfg = config.sr_config(values)
    seg_cfg = config.seg_config(values, num_classes=train_m.num_classes)
    report, ckpt = run_experiment(
        train_m, test_m, cfg, sr_cfg, seg_cfg, run_dir,
        meta={"fingerprint": fp}, resume=args.resume,
        cache=values["data.cache"])
    _write_run_json(run_dir, "train", values, _tree(run_dir))
    print(f"run dir: {run_dir}")
    print(f"checkpoint: {ckpt}")
    for key in ("psnr", "acc", "norm_acc", "miou", "kappa"):
        print(f"{key}: {getattr(report, key)}")
    return 0


def cmd_eval(args):
    run_dir = Path(args.run)
    cfg_path = run_dir / "config.cfg"
    if args.config is None and not cfg_path.is_file():
        raise FileNotFoundError(f"no config.cfg under {run_dir}; pass --config")
    text = Path(args.config or cfg_path).read_text()
    values = config.resolve(text, list(args.overrides or []),
                            str(args.config or cfg_path))
    env_root = os.environ.get("SRSEG_DATA_ROOT")
    if env_root:
        values["data.root"] = env_root

    ckpt_dir = resolve_checkpoint(run_dir, args.checkpoint)
    state, containers = load_checkpoint(ckpt_dir)
    train_m, test_m = _manifests(values)
    cfg = config.train_config(values)
    nets = build_networks(cfg, config.sr_config(values),
                          config.seg_config(values, train_m.num_classes))
    for name, net in nets.items():
        load_module_tensors(net, containers[f"{name}_params"])

    out_dir = Path(args.out) if args.out else run_dir / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    report, panels = evaluate(
        nets, test_m, cfg,
        meta={"mode": cfg.mode, "dataset": test_m.name,
              "factor": values["data.factor"], "checkpoint": str(ckpt_dir),
              "epoch": state["epoch"]},
        cache=values["data.cache"], collect_panels=args.panels)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    emit_report([report], out_dir, panels=[panels], palette=test_m.palette)
    _write_run_json(out_dir, "eval", values, _tree(out_dir))
    print(f"evaluated {ckpt_dir} (epoch {state['epoch']})")
    for key in ("psnr", "acc", "norm_acc", "miou", "kappa"):
        print(f"{key}: {getattr(report, key)}")
    return 0


def cmd_report(args):
    reports = []
    for run in args.runs:
        path = Path(run)
        if path.is_dir():
            path = path / "report.json"
        if not path.is_file():
            raise FileNotFoundError(f"no report.json found for run '{run}'")
        reports.append(MetricsReport.from_dict(json.loads(path.read_text())))
    out_dir = Path(args.out) if args.out else Path("report")
    written = emit_report(reports, out_dir)
    values = _load_values(args)
    _write_run_json(out_dir, "report", values, _tree(out_dir))
    print((out_dir / "comparison.csv").read_text(), end="")
    print(f"{len(written)} files under {out_dir}")
    return 0


def cmd_sweep(args):
    values = _load_values(args)
    out_dir = Path(args.out) if args.out else Path("sweep")
    out_dir.mkdir(parents=True, exist_ok=True)
    children = config.sweep_configs(values)
    index = []
    for child in children:
        tag = f"a{child['train.alpha']:g}_b{child['train.beta']:g}"
        child_dir = out_dir / tag
        child_dir.mkdir(parents=True, exist_ok=True)
        (child_dir / "config.cfg").write_text(config.canonical_text(child))
        index.append(f"{tag}\t{config.fingerprint(child)}")
    (out_dir / "index.tsv").write_text("\n".join(index) + "\n")
    _write_run_json(out_dir, "sweep", values, _tree(out_dir))
    print(f"materialized {len(children)} configs under {out_dir} (not launched)")
    return 0


# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", default=None, help="key = value config file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override train.seed")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("overrides", nargs="*", metavar="key=value",
                     help="config overrides")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="srseg",
        description="joint super-resolution + segmentation pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--n", type=int, default=None, help="training samples")
    p.add_argument("--classes", type=int, default=None, help="class count")
    p.add_argument("--tile", type=int, default=None, help="tile size")
    p.add_argument("--factor", type=int, default=None, help="degradation factor")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("degrade", help="materialize the LR tile cache")
    _add_common(p)
    p.set_defaults(func=cmd_degrade)

    p = subs.add_parser("train", help="train one mode end to end")
    p.add_argument("--mode", default=None,
                   choices=["lr_baseline", "end2end", "hr_baseline"])
    p.add_argument("--resume", default=None,
                   help="'last', an epoch number, or a checkpoint path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="score a saved checkpoint")
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--checkpoint", default="last",
                   help="'last', an epoch number, or a path")
    p.add_argument("--panels", type=int, default=3,
                   help="tile panels to export")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("report", help="combine runs into one table")
    p.add_argument("--runs", nargs="+", required=True,
                   help="run directories or report.json paths")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    p = subs.add_parser("sweep", help="materialize the loss-balance grid")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("SRSEG_LOGLEVEL", "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        if os.environ.get("SRSEG_DEBUG"):
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
