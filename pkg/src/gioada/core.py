"""Domain types, label/depth encodings and run configuration."""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

IGNORE_INDEX = 255


class ConfigError(ValueError):
    """Invalid configuration value or key."""


class Domain(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass
class Sample:
    """One scene. ``image`` is HxWx3 in [-1, 1], ``depth`` in meters."""

    image: np.ndarray
    depth: np.ndarray | None = None
    labels: np.ndarray | None = None
    domain: Domain = Domain.SOURCE
    id: str = ""
    # target labels are only for scoring, never for training
    labels_eval_only: bool = False

    def __post_init__(self):
        self.domain = Domain(self.domain)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got shape {self.image.shape}")
        hw = self.image.shape[:2]
        for name in ("depth", "labels"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != hw:
                raise ValueError(f"{name} shape {arr.shape} does not match image {hw}")
        if self.domain is Domain.TARGET and self.labels is not None:
            self.labels_eval_only = True

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[:2]

    def validate(self) -> None:
        """Check the value-range invariants (image in [-1,1], finite non-negative depth)."""
        if not np.all(np.isfinite(self.image)) or self.image.min() < -1 - 1e-6 or self.image.max() > 1 + 1e-6:
            raise ValueError(f"sample {self.id!r}: image values outside [-1, 1]")
        if self.depth is not None and (not np.all(np.isfinite(self.depth)) or self.depth.min() < 0):
            raise ValueError(f"sample {self.id!r}: depth must be finite and >= 0")

    def training_labels(self) -> np.ndarray | None:
        return None if self.labels_eval_only else self.labels

    def training_depth(self) -> np.ndarray | None:
        return None if self.domain is Domain.TARGET else self.depth


@dataclass(frozen=True)
class LossWeights:
    lambda_depth: float = 0.1
    lambda_image: float = 0.1
    lambda_output: float = 0.001

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ConfigError(f"{k} must be >= 0, got {v}")


@dataclass(frozen=True)
class DepthNormalizer:
    d_min: float = 0.0
    d_max: float = 100.0

    def __post_init__(self):
        if not (0 <= self.d_min < self.d_max):
            raise ConfigError(f"need 0 <= d_min < d_max, got d_min={self.d_min}, d_max={self.d_max}")


VKITTI_NORMALIZER = DepthNormalizer(0.0, 655.35)
TOY_NORMALIZER = DepthNormalizer(0.0, 100.0)


@dataclass
class ClassSet:
    names: list[str]
    palette: list[tuple[int, int, int]]
    ignore_index: int = IGNORE_INDEX
    eval_subset: list[int] | None = None

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ConfigError("class names must be unique")
        if len(self.palette) != len(self.names):
            raise ConfigError(f"palette has {len(self.palette)} colors for {len(self.names)} classes")
        if 0 <= self.ignore_index < len(self.names):
            raise ConfigError(f"ignore_index {self.ignore_index} collides with a class index")
        if self.eval_subset is not None and any(not 0 <= c < len(self.names) for c in self.eval_subset):
            raise ConfigError("eval_subset contains an out-of-range class index")

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "palette": [list(p) for p in self.palette],
            "ignore_index": self.ignore_index,
            "eval_subset": self.eval_subset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSet":
        return cls(
            names=list(d["names"]),
            palette=[tuple(p) for p in d["palette"]],
            ignore_index=d.get("ignore_index", IGNORE_INDEX),
            eval_subset=d.get("eval_subset"),
        )


# Cityscapes colors for the evaluation class sets
_CS_COLORS = {
    "road": (128, 64, 128), "sidewalk": (244, 35, 232), "building": (70, 70, 70),
    "wall": (102, 102, 156), "fence": (190, 153, 153), "pole": (153, 153, 153),
    "traffic light": (250, 170, 30), "traffic sign": (220, 220, 0),
    "vegetation": (107, 142, 35), "terrain": (152, 251, 152), "sky": (70, 130, 180),
    "person": (220, 20, 60), "rider": (255, 0, 0), "car": (0, 0, 142),
    "truck": (0, 0, 70), "bus": (0, 60, 100), "motorbike": (0, 0, 230),
    "bicycle": (119, 11, 32), "obstacle": (0, 0, 142),
}


def _cs(names, **kw):
    return ClassSet(names=list(names), palette=[_CS_COLORS[n] for n in names], **kw)


VKITTI_CLASSES = _cs(["road", "building", "pole", "traffic light", "traffic sign",
                      "vegetation", "terrain", "sky", "car", "truck"])
SYNTHIA_CLASSES = _cs(["road", "sidewalk", "building", "wall", "fence", "pole", "traffic light",
                       "traffic sign", "vegetation", "sky", "person", "rider", "car", "bus",
                       "motorbike", "bicycle"],
                      eval_subset=[0, 1, 2, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15])
TOY_CLASSES = _cs(["sky", "road", "building", "obstacle"])

CLASS_SETS = {"vkitti": VKITTI_CLASSES, "synthia": SYNTHIA_CLASSES, "toy": TOY_CLASSES}


def one_hot(labels: np.ndarray, num_classes: int, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """HxW integer labels -> HxWxC {0,1} map; ignored pixels get the all-zero vector."""
    labels = np.asarray(labels)
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise ValueError(f"label value {int(labels[bad].flat[0])} out of range for {num_classes} classes "
                         f"(ignore_index={ignore_index})")
    out = np.zeros(labels.shape + (num_classes,), dtype=np.float32)
    idx = np.nonzero(valid)
    out[idx + (labels[idx].astype(np.int64),)] = 1.0
    return out


def normalize_depth(depth: np.ndarray, norm: DepthNormalizer) -> np.ndarray:
    return np.clip((np.asarray(depth, dtype=np.float64) - norm.d_min) / (norm.d_max - norm.d_min), 0.0, 1.0)


def denormalize_depth(value: np.ndarray, norm: DepthNormalizer) -> np.ndarray:
    return np.asarray(value, dtype=np.float64) * (norm.d_max - norm.d_min) + norm.d_min


def preprocess_image(rgb_uint8: np.ndarray) -> np.ndarray:
    """8-bit RGB -> float32 in [-1, 1] (mean 0.5, scale 0.5)."""
    return (np.asarray(rgb_uint8, dtype=np.float32) / 255.0 - 0.5) / 0.5


def deprocess_image(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(image) * 0.5 + 0.5) * 255.0), 0, 255).astype(np.uint8)


def encode_input(sample: Sample, num_classes: int, norm: DepthNormalizer,
                 use_semantics: bool = True, use_depth: bool = True,
                 ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Stack [image(3), one-hot(C), depth(1)] into an HxWx(3+C+1) array.

    The semantic/depth parts can be dropped for the ablation variants that feed
    the transform network less side information.
    """
    if sample.domain is not Domain.SOURCE:
        raise ValueError("encode_input needs a SOURCE sample")
    parts = [sample.image.astype(np.float32)]
    if use_semantics:
        if sample.labels is None:
            raise ValueError(f"sample {sample.id!r} has no labels")
        parts.append(one_hot(sample.labels, num_classes, ignore_index))
    if use_depth:
        if sample.depth is None:
            raise ValueError(f"sample {sample.id!r} has no depth")
        parts.append(normalize_depth(sample.depth, norm)[..., None].astype(np.float32))
    return np.concatenate(parts, axis=-1)


def encoded_channels(num_classes: int, use_semantics: bool = True, use_depth: bool = True) -> int:
    return 3 + (num_classes if use_semantics else 0) + (1 if use_depth else 0)


# ---------------------------------------------------------------------------
# run configuration

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "classes": "toy",
    "variant": {"input": "gd+sd", "output": "joint"},
    "weights": {"lambda_depth": 0.1, "lambda_image": 0.1, "lambda_output": 0.001},
    "depth": {"d_min": 0.0, "d_max": 100.0},
    "train": {
        "epochs": 10,
        "max_steps": 0,
        "lr": 2e-4,
        "beta1": 0.5,
        "beta2": 0.999,
        "gan_loss": "nonsaturating",
        "output_adv_sides": "both",
        "d_output_input": "softmax",
        "checkpoint_every": 0,
        "hygiene_every": 0,
        "augment": True,
    },
    "model": {
        "backbone": "tiny",
        "tiny_width": 32,
        "tiny_output_stride": 2,
        "depth_head": True,
        "transform_width": 16,
        "transform_blocks": 2,
        "transform_image_skip": True,
        "disc_width": 32,
        "disc_layers": 1,
        "pretrained": "",
    },
    "data": {
        "source": {"layout": "toy", "root": "", "split": "train", "resize": None},
        "target": {"layout": "toy", "root": "", "split": "train", "resize": None},
        "eval": {"layout": "toy", "root": "", "split": "val", "resize": None},
    },
    "toy": {
        "world_seed": 0,
        "image_size": [32, 64],
        "n_source": 100,
        "n_target": 100,
        "n_eval": 50,
        "shift": {"hue_delta": 0.08, "texture_noise": 0.04, "brightness_delta": -0.1},
    },
}


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def config_keys(config: dict | None = None) -> list[str]:
    return sorted(_flatten(config if config is not None else DEFAULT_CONFIG))


def _merge(base: dict, update: dict, path: str = "") -> dict:
    for k, v in update.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(config_keys())}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {key!r} expects a mapping")
            _merge(base[k], v, key + ".")
        else:
            base[k] = v
    return base


def _coerce(raw: str, current: Any) -> Any:
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, str):
        return raw
    return json.loads(raw)


def set_dotted(config: dict, key: str, raw: str) -> None:
    """Set ``a.b.c`` from a string, coercing to the type of the existing value."""
    node = config
    parts = key.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(config_keys())}")
        node = node[p]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(config_keys())}")
    try:
        node[parts[-1]] = _coerce(raw, node[parts[-1]])
    except (ValueError, json.JSONDecodeError) as e:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({e})") from None


def load_config(path: str | Path | None = None, overrides: Sequence[tuple[str, str]] = ()) -> dict:
    """Defaults <- JSON file <- dotted overrides."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as f:
            _merge(config, json.load(f))
    for key, raw in overrides:
        set_dotted(config, key, raw)
    return config


def class_set_from_config(config: dict) -> ClassSet:
    classes = config["classes"]
    if isinstance(classes, dict):
        return ClassSet.from_dict(classes)
    try:
        return CLASS_SETS[classes]
    except KeyError:
        raise ConfigError(f"unknown class set {classes!r}; choose from {sorted(CLASS_SETS)}") from None


def weights_from_config(config: dict) -> LossWeights:
    return LossWeights(**config["weights"])


def normalizer_from_config(config: dict) -> DepthNormalizer:
    return DepthNormalizer(**config["depth"])
