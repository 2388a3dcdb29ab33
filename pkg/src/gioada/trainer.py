"""Alternating min-max training of the transform, task and discriminator networks."""

from __future__ import annotations

import copy
import enum
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import losses as L
from .core import (ClassSet, ConfigError, DepthNormalizer, LossWeights, Sample, class_set_from_config,
                   encode_input, encoded_channels, normalize_depth, normalizer_from_config, weights_from_config)
from .data.pairs import as_dataset, make_pair_iterator
from .networks import (Backbone, PatchDiscriminatorConfig, TaskNetConfig, TransformNetConfig, init_params,
                       param_checksum, to_nchw)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gioada-checkpoint/1"
INFERENCE_FORMAT = "gioada-inference/1"


class IncompatibleCheckpointError(RuntimeError):
    pass


class CapabilityError(RuntimeError):
    pass


class HygieneError(AssertionError):
    pass


class InputLevel(str, enum.Enum):
    OFF = "off"
    ADV_ONLY = "cg-proxy"
    GD = "gd"
    GD_PLUS_D = "gd+d"
    GD_PLUS_S = "gd+s"
    GD_PLUS_SD = "gd+sd"


class OutputLevel(str, enum.Enum):
    OFF = "off"
    SS = "ss"
    DEPTH = "depth"
    SEP = "sep"
    JOINT = "joint"


# short names used in the ablation tables
INPUT_LABELS = {InputLevel.OFF: "na", InputLevel.ADV_ONLY: "cg-proxy", InputLevel.GD: "gd",
                InputLevel.GD_PLUS_D: "+d", InputLevel.GD_PLUS_S: "+s", InputLevel.GD_PLUS_SD: "+sd"}
OUTPUT_LABELS = {OutputLevel.OFF: "na", OutputLevel.SS: "ss", OutputLevel.DEPTH: "depth",
                 OutputLevel.SEP: "sep", OutputLevel.JOINT: "joint"}


@dataclass(frozen=True)
class Variant:
    input_level: InputLevel = InputLevel.OFF
    output_level: OutputLevel = OutputLevel.OFF

    def __post_init__(self):
        object.__setattr__(self, "input_level", InputLevel(self.input_level))
        object.__setattr__(self, "output_level", OutputLevel(self.output_level))

    @classmethod
    def baseline(cls):
        return cls(InputLevel.OFF, OutputLevel.OFF)

    @classmethod
    def full(cls):
        return cls(InputLevel.GD_PLUS_SD, OutputLevel.JOINT)

    @classmethod
    def parse(cls, text: str) -> "Variant":
        """Table abbreviations (``na``, ``+sd``, ``joint``, ...), ``full``, or ``input:output``."""
        text = text.strip().lower()
        if ":" in text:
            i, o = text.split(":", 1)
            return cls(i or "off", o or "off")
        if text in ("na", "off", "baseline"):
            return cls.baseline()
        if text in ("full", "gio-ada"):
            return cls.full()
        for level, label in INPUT_LABELS.items():
            if text in (label, level.value):
                return cls(level, OutputLevel.OFF)
        for level, label in OUTPUT_LABELS.items():
            if text in (label, level.value):
                return cls(InputLevel.OFF, level)
        raise ConfigError(f"unknown variant {text!r}")

    @property
    def label(self) -> str:
        if self == Variant.full():
            return "full"
        if self.output_level is OutputLevel.OFF:
            return INPUT_LABELS[self.input_level]
        if self.input_level is InputLevel.OFF:
            return OUTPUT_LABELS[self.output_level]
        return f"{self.input_level.value}:{self.output_level.value}"


@dataclass(frozen=True)
class Wiring:
    """Which components a variant trains, and their channel counts."""

    transform: bool
    transform_semantics: bool
    transform_depth: bool
    transform_in_channels: int | None
    task_guides_transform: bool
    image_discriminator: bool
    # (name, input channels) per output discriminator
    output_discriminators: tuple[tuple[str, int], ...]
    depth_head: bool = True


def variant_wiring(variant: Variant, num_classes: int) -> Wiring:
    il, ol = variant.input_level, variant.output_level
    transform = il is not InputLevel.OFF
    sem = il in (InputLevel.GD_PLUS_S, InputLevel.GD_PLUS_SD)
    dep = il in (InputLevel.GD_PLUS_D, InputLevel.GD_PLUS_SD)
    outputs = {
        OutputLevel.OFF: (),
        OutputLevel.SS: (("seg", num_classes),),
        OutputLevel.DEPTH: (("depth", 1),),
        OutputLevel.SEP: (("seg", num_classes), ("depth", 1)),
        OutputLevel.JOINT: (("joint", num_classes + 1),),
    }[ol]
    return Wiring(
        transform=transform,
        transform_semantics=sem,
        transform_depth=dep,
        transform_in_channels=encoded_channels(num_classes, sem, dep) if transform else None,
        task_guides_transform=transform and il is not InputLevel.ADV_ONLY,
        image_discriminator=transform,
        output_discriminators=outputs,
    )


@dataclass
class TrainConfig:
    epochs: int = 10
    max_steps: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    gan_loss: str = "nonsaturating"
    output_adv_sides: str = "both"
    d_output_input: str = "softmax"
    checkpoint_every: int = 0
    hygiene_every: int = 0
    augment: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.gan_loss not in L.GAN_LOSSES:
            raise ConfigError(f"gan_loss must be one of {L.GAN_LOSSES}")
        if self.output_adv_sides not in ("both", "source"):
            raise ConfigError("output_adv_sides must be 'both' or 'source'")
        if self.d_output_input not in ("softmax", "logits"):
            raise ConfigError("d_output_input must be 'softmax' or 'logits'")


@dataclass
class ModelConfig:
    backbone: str = "tiny"
    tiny_width: int = 32
    tiny_output_stride: int = 2
    transform_width: int = 16
    transform_blocks: int = 2
    transform_image_skip: bool = True
    disc_width: int = 32
    disc_layers: int = 1
    pretrained: str = ""
    depth_head: bool = True


def train_config_from(config: dict) -> TrainConfig:
    t = config["train"]
    return TrainConfig(weights=weights_from_config(config), seed=int(config["seed"]),
                       **{k: t[k] for k in TrainConfig.__dataclass_fields__ if k in t})


def model_config_from(config: dict) -> ModelConfig:
    m = config["model"]
    return ModelConfig(**{k: m[k] for k in ModelConfig.__dataclass_fields__ if k in m})


def _set_requires_grad(nets, flag: bool):
    for net in nets:
        for p in net.parameters():
            p.requires_grad_(flag)


class GIOAdaTrainer:
    """Owns the networks and optimizers of one run and performs train steps."""

    def __init__(self, variant: Variant, class_set: ClassSet, train_cfg: TrainConfig | None = None,
                 model_cfg: ModelConfig | None = None, normalizer: DepthNormalizer = DepthNormalizer(),
                 dtype: torch.dtype = torch.float32):
        self.variant = variant
        self.class_set = class_set
        self.train_cfg = train_cfg or TrainConfig()
        self.model_cfg = model_cfg or ModelConfig()
        self.normalizer = normalizer
        self.dtype = dtype
        self.step = 0
        self.hygiene_checks = 0
        c = class_set.num_classes
        self.wiring = w = variant_wiring(variant, c)
        if w.output_discriminators and any(n != "seg" for n, _ in w.output_discriminators) \
                and not self.model_cfg.depth_head:
            raise ConfigError(f"variant {variant.label} aligns depth but the depth head is disabled")

        seed = self.train_cfg.seed
        mc = self.model_cfg
        if Backbone(mc.backbone) is Backbone.TINY:
            self.task_cfg = TaskNetConfig.tiny(c, depth_head=mc.depth_head, width=mc.tiny_width,
                                               output_stride=mc.tiny_output_stride)
        else:
            self.task_cfg = TaskNetConfig(c, Backbone.VGG16, depth_head=mc.depth_head)
        self.g_task = init_params(self.task_cfg, seed * 16 + 1, pretrained=mc.pretrained or None)
        self.g_img = self.d_img = None
        self.transform_cfg = self.image_disc_cfg = None
        if w.transform:
            self.transform_cfg = TransformNetConfig(w.transform_in_channels, mc.transform_width,
                                                    mc.transform_blocks, mc.transform_image_skip)
            self.g_img = init_params(self.transform_cfg, seed * 16 + 2)
        if w.image_discriminator:
            self.image_disc_cfg = PatchDiscriminatorConfig(3, mc.disc_layers, mc.disc_width)
            self.d_img = init_params(self.image_disc_cfg, seed * 16 + 3)
        self.output_disc_cfgs = {name: PatchDiscriminatorConfig(ch, mc.disc_layers, mc.disc_width)
                                 for name, ch in w.output_discriminators}
        self.d_out = {name: init_params(cfg, seed * 16 + 4 + k)
                      for k, (name, cfg) in enumerate(self.output_disc_cfgs.items())}
        for net in self.networks().values():
            net.to(dtype).train()

        tc = self.train_cfg
        betas = (tc.beta1, tc.beta2)
        self.opt_g = torch.optim.Adam([p for n in self.generators() for p in n.parameters()], lr=tc.lr, betas=betas)
        d_params = [p for n in self.discriminators() for p in n.parameters()]
        self.opt_d = torch.optim.Adam(d_params, lr=tc.lr, betas=betas) if d_params else None

    # -- bookkeeping -------------------------------------------------------

    @classmethod
    def from_config(cls, config: dict, variant: Variant | None = None, dtype=torch.float32) -> "GIOAdaTrainer":
        if variant is None:
            variant = Variant(config["variant"]["input"], config["variant"]["output"])
        return cls(variant, class_set_from_config(config), train_config_from(config), model_config_from(config),
                   normalizer_from_config(config), dtype=dtype)

    def networks(self) -> dict[str, torch.nn.Module]:
        nets = {"g_task": self.g_task}
        if self.g_img is not None:
            nets["g_img"] = self.g_img
        if self.d_img is not None:
            nets["d_img"] = self.d_img
        nets.update({f"d_out_{k}": v for k, v in self.d_out.items()})
        return nets

    def generators(self):
        return [n for n in (self.g_img, self.g_task) if n is not None]

    def discriminators(self):
        return ([self.d_img] if self.d_img is not None else []) + list(self.d_out.values())

    def generator_checksum(self) -> str:
        return "".join(param_checksum(n) for n in self.generators())

    def discriminator_checksum(self) -> str:
        return "".join(param_checksum(n) for n in self.discriminators())

    # -- forward helpers ---------------------------------------------------

    def _tensor(self, arr) -> torch.Tensor:
        return to_nchw(arr, self.dtype)

    def encode(self, sample: Sample) -> torch.Tensor:
        w = self.wiring
        enc = encode_input(sample, self.class_set.num_classes, self.normalizer, w.transform_semantics,
                           w.transform_depth, self.class_set.ignore_index)
        return self._tensor(enc)

    def output_maps(self, name: str, seg_logits, depth):
        soft = self.train_cfg.d_output_input == "softmax"
        if name == "seg":
            return L.output_concat(seg_logits, None, use_softmax=soft)
        if name == "depth":
            return depth.unsqueeze(1)
        return L.output_concat(seg_logits, depth, use_softmax=soft)

    def source_forward(self, sample: Sample):
        """(translated image or None, seg logits, depth) for a source sample."""
        x_hat = None
        if self.g_img is not None:
            x_hat = self.g_img(self.encode(sample))
            task_in = x_hat if self.wiring.task_guides_transform else x_hat.detach()
        else:
            task_in = self._tensor(sample.image)
        seg, depth = self.g_task(task_in)
        return x_hat, seg, depth

    def supervised_targets(self, sample: Sample):
        labels = sample.training_labels()
        depth = sample.training_depth()
        if labels is None:
            raise ValueError(f"sample {sample.id!r} has no training labels")
        lab = torch.as_tensor(np.asarray(labels), dtype=torch.long)[None]
        gt = valid = None
        if depth is not None:
            gt = torch.as_tensor(normalize_depth(depth, self.normalizer), dtype=self.dtype)[None]
            valid = torch.as_tensor(np.asarray(depth) > 0)[None]
        return lab, gt, valid

    def generator_losses(self, src: Sample, tgt: Sample | None = None) -> dict:
        """Generator-side loss tensors for one pair (fresh forward; discriminators only read)."""
        src_out = self.source_forward(src)
        seg_t = dep_t = None
        if self.d_out:
            seg_t, dep_t = self.g_task(self._tensor(tgt.image))
        return self._generator_terms(src, src_out, seg_t, dep_t)

    # -- the alternating step ------------------------------------------------

    def train_step(self, src: Sample, tgt: Sample) -> L.LossReport:
        tc = self.train_cfg
        check = tc.hygiene_every > 0 and self.step % tc.hygiene_every == 0
        report = L.LossReport()

        # (1) forward both domains
        tgt_img = self._tensor(tgt.image).requires_grad_(check)
        src_out = self.source_forward(src)
        x_hat, seg_s, dep_s = src_out
        seg_t = dep_t = None
        if self.d_out:
            seg_t, dep_t = self.g_task(tgt_img)

        # (2) discriminator phase on detached inputs
        if self.opt_d is not None:
            g_sum = self.generator_checksum() if check else None
            _set_requires_grad(self.discriminators(), True)
            self.opt_d.zero_grad(set_to_none=True)
            d_loss = 0.0
            if self.d_img is not None:
                l_img = L.adv_disc_loss(self.d_img(tgt_img.detach()), self.d_img(x_hat.detach()), tc.gan_loss)
                report.adv_image_d = l_img.item()
                d_loss = d_loss + l_img
            if self.d_out:
                l_out = 0.0
                for name, disc in self.d_out.items():
                    real = self.output_maps(name, seg_t.detach(), None if dep_t is None else dep_t.detach())
                    fake = self.output_maps(name, seg_s.detach(), None if dep_s is None else dep_s.detach())
                    l_out = l_out + L.adv_disc_loss(disc(real), disc(fake), tc.gan_loss)
                report.adv_output_d = l_out.item()
                d_loss = d_loss + l_out
            self._check_finite(d_loss, "discriminator")
            d_loss.backward()
            self.opt_d.step()
            if check and self.generator_checksum() != g_sum:
                raise HygieneError(f"step {self.step}: discriminator update changed generator parameters")

        # (3) generator phase with frozen discriminators
        d_sum = self.discriminator_checksum() if check else None
        _set_requires_grad(self.discriminators(), False)
        self.opt_g.zero_grad(set_to_none=True)
        terms = self._generator_terms(src, src_out, seg_t, dep_t)
        for k in ("seg", "depth", "adv_image_g", "adv_output_g", "total_g"):
            if terms[k] is not None:
                self._check_finite(terms[k], k)
                setattr(report, k, terms[k].item())
        if check:
            self._check_target_isolation(terms, tgt_img)
        terms["total_g"].backward()
        self.opt_g.step()
        _set_requires_grad(self.discriminators(), True)
        if check:
            if self.discriminator_checksum() != d_sum:
                raise HygieneError(f"step {self.step}: generator update changed discriminator parameters")
            self.hygiene_checks += 1
        self.step += 1
        return report

    def _generator_terms(self, src, src_out, seg_t, dep_t):
        tc = self.train_cfg
        x_hat, seg_s, dep_s = src_out
        lab, gt, valid = self.supervised_targets(src)
        terms = {"seg": L.seg_loss(seg_s, lab, self.class_set.ignore_index), "depth": None,
                 "adv_image_g": None, "adv_output_g": None}
        if dep_s is not None and gt is not None:
            terms["depth"] = L.depth_loss(dep_s, gt, valid)
        if self.d_img is not None:
            terms["adv_image_g"] = L.adv_gen_loss(self.d_img(x_hat), tc.gan_loss)
        if self.d_out:
            total = 0.0
            for name, disc in self.d_out.items():
                fake = disc(self.output_maps(name, seg_s, dep_s))
                real = disc(self.output_maps(name, seg_t, dep_t)) if tc.output_adv_sides == "both" else None
                total = total + L.adv_gen_loss(fake, tc.gan_loss, real_scores=real)
            terms["adv_output_g"] = total
        terms["total_g"] = L.total_generator_loss(terms["seg"], terms["depth"], terms["adv_image_g"],
                                                  terms["adv_output_g"], tc.weights)
        return terms

    def _check_finite(self, value, name):
        if not torch.isfinite(value).all():
            raise L.NonFiniteLossError(f"step {self.step}: non-finite {name} loss ({value.item()})")

    def _check_target_isolation(self, terms, tgt_img):
        sup = terms["seg"] + (terms["depth"] if terms["depth"] is not None else 0.0)
        (grad,) = torch.autograd.grad(sup, [tgt_img], retain_graph=True, allow_unused=True)
        if grad is not None and grad.abs().max().item() != 0.0:
            raise HygieneError(f"step {self.step}: target sample contributed gradient to supervised losses")

    # -- inference -----------------------------------------------------------

    @torch.no_grad()
    def predict(self, images: np.ndarray | Sequence[np.ndarray], batch_size: int = 8):
        """NxHxWx3 images in [-1, 1] -> (labels NxHxW, normalized depth NxHxW or None)."""
        return predict_with(self.g_task, images, self.dtype, batch_size)

    @torch.no_grad()
    def translate(self, sample: Sample) -> np.ndarray:
        if self.g_img is None:
            raise CapabilityError(f"variant {self.variant.label} has no image transform network")
        was = self.g_img.training
        self.g_img.eval()
        try:
            return self.g_img(self.encode(sample))[0].permute(1, 2, 0).cpu().numpy()
        finally:
            self.g_img.train(was)

    # -- persistence ---------------------------------------------------------

    def config_echo(self) -> dict:
        tc = asdict(self.train_cfg)
        return {
            "variant": {"input": self.variant.input_level.value, "output": self.variant.output_level.value},
            "classes": self.class_set.to_dict(),
            "depth": {"d_min": self.normalizer.d_min, "d_max": self.normalizer.d_max},
            "model": asdict(self.model_cfg),
            "train": tc,
        }

    def state_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "config": self.config_echo(),
            "step": self.step,
            "hygiene_checks": self.hygiene_checks,
            "dtype": str(self.dtype),
            "nets": {k: v.state_dict() for k, v in self.networks().items()},
            "optim": {"g": self.opt_g.state_dict(), "d": self.opt_d.state_dict() if self.opt_d else None},
            "rng": {"torch": torch.get_rng_state()},
        }

    def load_state_dict(self, state: dict) -> None:
        if state.get("format") != CHECKPOINT_FORMAT:
            raise IncompatibleCheckpointError(f"not a training checkpoint (format={state.get('format')!r})")
        check_compatible(state["config"], self.config_echo())
        for k, net in self.networks().items():
            net.load_state_dict(state["nets"][k])
        self.opt_g.load_state_dict(state["optim"]["g"])
        if self.opt_d is not None:
            self.opt_d.load_state_dict(state["optim"]["d"])
        self.step = int(state["step"])
        self.hygiene_checks = int(state.get("hygiene_checks", 0))
        torch.set_rng_state(state["rng"]["torch"])

    def save_checkpoint(self, path: str | Path, epoch: int | None = None) -> Path:
        state = self.state_dict()
        state["epoch"] = epoch
        return atomic_save(state, path)

    def export_inference(self, path: str | Path) -> Path:
        return atomic_save({
            "format": INFERENCE_FORMAT,
            "task_config": asdict(self.task_cfg) | {"backbone": self.task_cfg.backbone.value},
            "classes": self.class_set.to_dict(),
            "depth": {"d_min": self.normalizer.d_min, "d_max": self.normalizer.d_max},
            "nets": {"g_task": self.g_task.state_dict()},
        }, path)

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "GIOAdaTrainer":
        state = torch.load(path, map_location="cpu", weights_only=False)
        if state.get("format") != CHECKPOINT_FORMAT:
            raise CapabilityError(f"{path} is not a full training checkpoint")
        cfg = state["config"]
        tc = dict(cfg["train"])
        weights = LossWeights(**tc.pop("weights"))
        dtype = getattr(torch, state.get("dtype", "torch.float32").split(".")[-1])
        trainer = cls(Variant(cfg["variant"]["input"], cfg["variant"]["output"]), ClassSet.from_dict(cfg["classes"]),
                      TrainConfig(weights=weights, **tc), ModelConfig(**cfg["model"]),
                      DepthNormalizer(**cfg["depth"]), dtype=dtype)
        trainer.load_state_dict(state)
        return trainer


# keys that may differ between an interrupted run and its resumption
_RESUMABLE_KEYS = {"epochs", "max_steps", "checkpoint_every", "hygiene_every"}


def check_compatible(saved: dict, current: dict) -> None:
    def strip(cfg):
        cfg = copy.deepcopy(cfg)
        for k in _RESUMABLE_KEYS:
            cfg["train"].pop(k, None)
        return json.loads(json.dumps(cfg, default=str))

    a, b = strip(saved), strip(current)
    if a != b:
        diffs = [k for k in sorted(set(a) | set(b)) if a.get(k) != b.get(k)]
        raise IncompatibleCheckpointError(f"checkpoint was trained with a different configuration ({', '.join(diffs)})")


def atomic_save(obj, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def load_task_network(path: str | Path):
    """(task net, class set, normalizer) from a training checkpoint or an inference export."""
    state = torch.load(path, map_location="cpu", weights_only=False)
    fmt = state.get("format")
    if fmt == INFERENCE_FORMAT:
        cfg = TaskNetConfig(**state["task_config"])
        net = init_params(cfg, 0)
        net.load_state_dict(state["nets"]["g_task"])
        return net.eval(), ClassSet.from_dict(state["classes"]), DepthNormalizer(**state["depth"])
    if fmt == CHECKPOINT_FORMAT:
        trainer = GIOAdaTrainer.from_checkpoint(path)
        return trainer.g_task.eval(), trainer.class_set, trainer.normalizer
    raise CapabilityError(f"{path}: unknown checkpoint format {fmt!r}")


@torch.no_grad()
def predict_with(task_net, images, dtype=torch.float32, batch_size: int = 8):
    images = np.stack(list(images)) if not isinstance(images, np.ndarray) else images
    if images.ndim == 3:
        images = images[None]
    was = task_net.training
    task_net.eval()
    labels, depths = [], []
    try:
        for i in range(0, len(images), batch_size):
            seg, depth = task_net(to_nchw(images[i:i + batch_size], dtype))
            labels.append(seg.argmax(1).cpu().numpy())
            if depth is not None:
                depths.append(depth.cpu().numpy())
    finally:
        task_net.train(was)
    return np.concatenate(labels), (np.concatenate(depths) if depths else None)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    checkpoint: Path | None
    inference: Path | None
    history: list[dict]
    trainer: GIOAdaTrainer


def run_training(source, target, variant: Variant | None = None, config: dict | None = None,
                 run_dir: str | Path | None = None, resume: bool = False, trainer: GIOAdaTrainer | None = None,
                 callback: Callable[[int, L.LossReport, GIOAdaTrainer], None] | None = None,
                 stop_at: int | None = None) -> TrainResult:
    """Train for ``epochs * len(source)`` steps (or ``train.max_steps`` when > 0).

    Losses go to ``run_dir/train_log.jsonl`` (one JSON record per step),
    checkpoints to ``run_dir/checkpoint.pt``; the G_task-only export is
    written to ``run_dir/model.pt`` at the end. ``stop_at`` halts early
    (after checkpointing), which is how an interrupted run is simulated.
    """
    from .core import load_config

    config = config if config is not None else load_config()
    source, target = as_dataset(source), as_dataset(target)
    run_dir = Path(run_dir) if run_dir is not None else None
    ckpt = run_dir / "checkpoint.pt" if run_dir else None

    if trainer is None:
        trainer = GIOAdaTrainer.from_config(config, variant)
        if resume and ckpt is not None and ckpt.exists():
            state = torch.load(ckpt, map_location="cpu", weights_only=False)
            trainer.load_state_dict(state)
            log.info("resumed from %s at step %d", ckpt, trainer.step)
    tc = trainer.train_cfg
    total = tc.max_steps if tc.max_steps > 0 else tc.epochs * len(source)
    end = total if stop_at is None else min(total, stop_at)

    history = []
    log_file = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(run_dir / "train_log.jsonl", "a" if trainer.step else "w")
    try:
        pairs = make_pair_iterator(source, target, tc.seed, start_step=trainer.step,
                                   n_steps=max(end - trainer.step, 0), augment_p=0.5 if tc.augment else 0.0)
        for src, tgt in pairs:
            step = trainer.step
            report = trainer.train_step(src, tgt)
            rec = {"step": step, **report.to_dict()}
            history.append(rec)
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
            if callback is not None:
                callback(step, report, trainer)
            if ckpt is not None and tc.checkpoint_every and trainer.step % tc.checkpoint_every == 0:
                trainer.save_checkpoint(ckpt, epoch=trainer.step // len(source))
            if step % 100 == 0:
                log.debug("step %d seg=%.4f total=%.4f", step, report.seg, report.total_g)
    finally:
        if log_file:
            log_file.close()

    inference = None
    if ckpt is not None:
        trainer.save_checkpoint(ckpt, epoch=trainer.step // len(source))
        if trainer.step >= total:
            inference = trainer.export_inference(run_dir / "model.pt")
    return TrainResult(ckpt, inference, history, trainer)
