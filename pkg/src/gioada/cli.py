"""Command-line entry point: ``gioada {train,evaluate,translate,ablate,gen-toy}``.

Any ``--section.key value`` (or ``--section.key=value``) argument overrides the
matching config entry. Exit codes: 0 success, 1 runtime failure, 2 bad usage
or configuration.
"""

from __future__ import annotations

import argparse
import functools
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .core import ClassSet, ConfigError, Domain, class_set_from_config, deprocess_image, load_config
from .data import DatasetError, DatasetSpec, FolderDataset, save_samples, toy_benchmark
from .data.adapters import write_rgb
from .evaluation import colorize, evaluate_samples, miou, render_ablation, render_table
from .losses import NonFiniteLossError
from .networks import PretrainedWeightsError
from .trainer import (CapabilityError, GIOAdaTrainer, HygieneError, IncompatibleCheckpointError, Variant,
                      load_task_network, predict_with, run_training)

log = logging.getLogger("gioada")

RUN_ROOT_ENV = "GIOADA_RUN_ROOT"
ABLATION_AXES = {
    "input": ["na", "cg-proxy", "gd", "+d", "+s", "+sd"],
    "output": ["na", "ss", "depth", "sep", "joint"],
}


class UsageError(Exception):
    pass


def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


@dataclass
class RunManifest:
    """Everything needed to reproduce a run; its hash names cached ablation runs."""

    variant: str
    config: dict
    package_version: str = __version__
    torch_version: str = torch.__version__
    python: str = platform.python_version()
    created: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S"))

    def key(self) -> str:
        ident = json.dumps({"variant": self.variant, "config": self.config, "version": self.package_version},
                           sort_keys=True, default=str)
        return hashlib.sha256(ident.encode()).hexdigest()[:12]

    def write(self, run_dir: Path) -> Path:
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / "manifest.json"
        path.write_text(json.dumps({**asdict(self), "key": self.key()}, indent=2, default=str))
        return path


# ---------------------------------------------------------------------------
# datasets


@functools.lru_cache(maxsize=2)
def _toy_splits(key: str) -> dict:
    return toy_benchmark(json.loads(key))


def load_role(config: dict, role: str) -> list:
    """Samples for ``source``, ``target`` or ``eval`` as configured under ``data.<role>``."""
    d = config["data"][role]
    if d["layout"] == "toy" and not d["root"]:
        key = json.dumps({"toy": config["toy"], "depth": config["depth"]}, sort_keys=True)
        return _toy_splits(key)[role]
    if not d["root"]:
        raise ConfigError(f"data.{role}.root is required for layout {d['layout']!r}")
    domain = Domain.SOURCE if role == "source" else Domain.TARGET
    spec = DatasetSpec(d["root"], d["layout"], class_set_from_config(config), d["split"], d["resize"], domain)
    return list(FolderDataset(spec))


# ---------------------------------------------------------------------------
# commands


def _variant(config: dict, text: str | None) -> Variant:
    if text:
        return Variant.parse(text)
    return Variant(config["variant"]["input"], config["variant"]["output"])


def _score(predict, samples, class_set: ClassSet) -> dict:
    cm = evaluate_samples(predict, samples, class_set)
    ious, mean = miou(cm)
    out = {"miou": mean, "per_class": dict(zip(class_set.names, [None if np.isnan(v) else v for v in ious])),
           "pixel_accuracy": cm.pixel_accuracy(), "n_images": len(samples), "classes": class_set.names}
    if class_set.eval_subset is not None:
        out["miou_subset"] = miou(cm, class_set.eval_subset)[1]
    return out


def train_one(config: dict, variant: Variant, run_dir: Path, resume: bool = False) -> dict:
    """Train, write manifest/checkpoints/metrics into ``run_dir`` and return the metrics."""
    manifest = RunManifest(variant.label, config)
    manifest.write(run_dir)
    source, target = load_role(config, "source"), load_role(config, "target")
    result = run_training(source, target, variant, config, run_dir=run_dir, resume=resume)
    metrics = {"variant": variant.label, "steps": result.trainer.step, "key": manifest.key()}
    eval_set = load_role(config, "eval")
    if any(s.labels is not None for s in eval_set):
        metrics.update(_score(lambda x: result.trainer.predict(x)[0], eval_set, result.trainer.class_set))
    (run_dir / "metrics.json").write_text(json.dumps(metrics, indent=2))
    return metrics


def cmd_train(args, config) -> int:
    variant = _variant(config, args.variant)
    run_dir = Path(args.run_dir) if args.run_dir else \
        run_root() / f"{variant.label}-{RunManifest(variant.label, config).key()}"
    metrics = train_one(config, variant, run_dir, resume=args.resume)
    print(f"run: {run_dir}")
    if "miou" in metrics:
        print(f"target mIoU: {metrics['miou'] * 100:.1f}")
    return 0


def cmd_evaluate(args, config) -> int:
    net, classes, _ = load_task_network(args.model)
    expected = class_set_from_config(config)
    if classes.names != expected.names:
        raise ConfigError(f"checkpoint predicts classes {classes.names} but the dataset uses {expected.names}")
    samples = load_role(config, "eval")
    metrics = _score(lambda x: predict_with(net, x)[0], samples, classes)
    table = render_table({args.name: [0.0 if v is None else v for v in metrics["per_class"].values()]}, classes)
    out = Path(args.out) if args.out else Path(args.model).parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    (out / "table.md").write_text(table + "\n")
    for s in samples[: args.dump]:
        pred = predict_with(net, s.image[None])[0][0]
        write_rgb(out / "pred" / f"{s.id}.png", colorize(pred, classes))
        if s.labels is not None:
            write_rgb(out / "gt" / f"{s.id}.png", colorize(s.labels, classes))
    print(table)
    return 0


def cmd_translate(args, config) -> int:
    if not Path(args.checkpoint).exists():
        raise DatasetError(f"checkpoint {args.checkpoint} does not exist")
    try:
        trainer = GIOAdaTrainer.from_checkpoint(args.checkpoint)
    except CapabilityError:
        raise CapabilityError(f"{args.checkpoint} holds only the task network; translation needs a full "
                              "training checkpoint (checkpoint.pt)") from None
    samples = load_role(config, "source")
    out = Path(args.out)
    for s in samples[: args.limit or None]:
        write_rgb(out / f"{s.id}.png", deprocess_image(trainer.translate(s)))
    print(f"translated {min(len(samples), args.limit or len(samples))} images into {out}")
    return 0


def cmd_ablate(args, config) -> int:
    variants = args.variants.split(",") if args.variants else ABLATION_AXES[args.axis]
    seeds = [int(s) for s in args.seeds.split(",")]
    root = run_root() / "ablate"
    results, raw = {}, {}
    for text in variants:
        variant = Variant.parse(text)
        scores = []
        for seed in seeds:
            cfg = json.loads(json.dumps(config))
            cfg["seed"] = seed
            run_dir = root / RunManifest(variant.label, cfg).key()
            cached = run_dir / "metrics.json"
            if cached.exists() and not args.force:
                metrics = json.loads(cached.read_text())
                log.info("cached %s seed %d: %s", text, seed, run_dir)
            else:
                metrics = train_one(cfg, variant, run_dir)
            scores.append(metrics["miou"])
        raw[text] = scores
        results[text] = float(np.mean(scores))
    table = render_ablation(results)
    root.mkdir(parents=True, exist_ok=True)
    (root / f"ablation_{args.axis}.json").write_text(json.dumps({"mean": results, "per_seed": raw}, indent=2))
    (root / f"ablation_{args.axis}.md").write_text(table + "\n")
    print(table)
    return 0


def cmd_gen_toy(args, config) -> int:
    splits = toy_benchmark(config)
    out = Path(args.out)
    save_samples(splits["source"], out / "source")
    save_samples(splits["target"], out / "target")
    save_samples(splits["eval"], out / "target_val")
    print(f"wrote {', '.join(f'{k}={len(v)}' for k, v in splits.items())} scenes under {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gioada", description=__doc__.splitlines()[0],
                                epilog="Config overrides: --section.key value (see README for keys).")
    p.add_argument("--version", action="version", version=f"gioada {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")

    t = sub.add_parser("train", help="train one variant")
    common(t)
    t.add_argument("--variant", help="na, +sd, joint, full, or input:output")
    t.add_argument("--run-dir", help=f"output directory (default: ${RUN_ROOT_ENV}/<variant>-<hash>)")
    t.add_argument("--resume", action="store_true", help="continue from run-dir/checkpoint.pt")

    e = sub.add_parser("evaluate", help="score a model on data.eval")
    common(e)
    e.add_argument("--model", required=True, help="model.pt or checkpoint.pt")
    e.add_argument("--out", help="output directory (default: next to the model)")
    e.add_argument("--name", default="model", help="row label in the table")
    e.add_argument("--dump", type=int, default=8, help="colorized predictions to write")

    tr = sub.add_parser("translate", help="render source images through the transform network")
    common(tr)
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--limit", type=int, default=0)

    a = sub.add_parser("ablate", help="train a variant sweep and tabulate target mIoU")
    common(a)
    a.add_argument("--axis", choices=sorted(ABLATION_AXES), default="output")
    a.add_argument("--variants", help="comma-separated, overrides --axis")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--force", action="store_true", help="retrain cached runs")

    g = sub.add_parser("gen-toy", help="write the toy benchmark to disk")
    common(g)
    g.add_argument("--out", required=True)
    return p


def parse_overrides(extra: list[str]) -> list[tuple[str, str]]:
    overrides, i = [], 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--") or "." not in arg.split("=", 1)[0]:
            raise UsageError(f"unrecognized argument {arg!r}")
        if "=" in arg:
            key, value = arg[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"{arg} needs a value")
            key, value = arg[2:], extra[i + 1]
            i += 2
        overrides.append((key, value))
    return overrides


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "translate": cmd_translate, "ablate": cmd_ablate,
            "gen-toy": cmd_gen_toy}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = load_config(args.config, parse_overrides(extra))
        return COMMANDS[args.command](args, config)
    except (UsageError, ConfigError, IncompatibleCheckpointError) as e:
        print(f"gioada {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (DatasetError, CapabilityError, HygieneError, NonFiniteLossError, PretrainedWeightsError,
            FileNotFoundError) as e:
        print(f"gioada {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
