"""Procedural two-domain street world with exact depth and labels.

Scenes are built from a ground plane, sky at maximum depth, building facades
and box obstacles, composited with a z-buffer so depth and semantics agree.
The target domain reuses the geometry distribution and applies an appearance
shift (hue rotation, brightness change, extra texture noise).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Domain, Sample

SKY, ROAD, BUILDING, OBSTACLE = 0, 1, 2, 3

CAMERA_HEIGHT = 1.6
BASE_NOISE = 0.03

_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class ToyShift:
    hue_delta: float = 0.0
    texture_noise: float = 0.0
    brightness_delta: float = 0.0

    @property
    def is_null(self) -> bool:
        return self.hue_delta == 0 and self.texture_noise == 0 and self.brightness_delta == 0


@dataclass(frozen=True)
class ToyWorldConfig:
    seed: int = 0
    image_size: tuple[int, int] = (32, 64)
    n_scenes: int = 100
    shift: ToyShift = field(default_factory=ToyShift)
    d_max: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        if isinstance(self.shift, dict):
            object.__setattr__(self, "shift", ToyShift(**self.shift))


# YIQ lets a hue rotation be a rotation of the chroma plane
_RGB2YIQ = np.array([[0.299, 0.587, 0.114],
                     [0.596, -0.274, -0.322],
                     [0.211, -0.523, 0.312]])
_YIQ2RGB = np.linalg.inv(_RGB2YIQ)


def rotate_hue(rgb: np.ndarray, fraction: float) -> np.ndarray:
    a = 2 * np.pi * fraction
    rot = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
    m = _YIQ2RGB @ rot @ _RGB2YIQ
    return rgb @ m.T


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return np.array([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i])


def _scene_geometry(rng: np.random.Generator, h: int, w: int, d_max: float):
    focal = float(w)
    horizon = rng.uniform(0.35, 0.5) * h
    rows = np.arange(h)[:, None] + 0.5
    cols = np.arange(w)[None, :] + 0.5

    labels = np.full((h, w), SKY, dtype=np.int64)
    depth = np.full((h, w), d_max, dtype=np.float64)
    below = rows > horizon + 1e-6
    ground = np.where(below, CAMERA_HEIGHT * focal / np.maximum(rows - horizon, 1e-6), np.inf)
    ground = np.broadcast_to(np.minimum(ground, d_max), (h, w))
    road = np.broadcast_to(below, (h, w))
    labels[road] = ROAD
    depth[road] = ground[road]

    objects = []
    for _ in range(rng.integers(1, 4)):
        d = rng.uniform(15.0, 60.0)
        height_m = rng.uniform(8.0, 25.0)
        width_px = rng.uniform(0.15, 0.45) * w
        x0 = rng.choice([rng.uniform(-0.1, 0.2), rng.uniform(0.5, 0.9)]) * w
        objects.append((BUILDING, d, x0, x0 + width_px, height_m))
    for _ in range(rng.integers(1, 4)):
        d = rng.uniform(5.0, 35.0)
        width_px = rng.uniform(1.6, 2.6) * focal / d
        xc = rng.uniform(0.1, 0.9) * w
        objects.append((OBSTACLE, d, xc - width_px / 2, xc + width_px / 2, rng.uniform(1.2, 2.2)))

    for cls, d, x0, x1, height_m in objects:
        bottom = horizon + CAMERA_HEIGHT * focal / d
        top = bottom - height_m * focal / d
        mask = (rows >= top) & (rows < bottom) & (cols >= x0) & (cols < x1) & (d < depth)
        labels[mask] = cls
        depth[mask] = d
    return labels, depth, horizon


def _render(rng: np.random.Generator, labels, depth, horizon, d_max, shift: ToyShift):
    h, w = labels.shape
    jitter = lambda s: rng.uniform(-s, s)  # noqa: E731
    colors = {
        SKY: _hsv_to_rgb(0.58 + jitter(0.02), 0.55 + jitter(0.1), 0.9 + jitter(0.05)),
        ROAD: _hsv_to_rgb(0.0, 0.0, 0.38 + jitter(0.06)),
        BUILDING: _hsv_to_rgb(0.08 + jitter(0.03), 0.55 + jitter(0.1), 0.6 + jitter(0.08)),
        OBSTACLE: _hsv_to_rgb((0.98 + jitter(0.03)) % 1.0, 0.8 + jitter(0.1), 0.75 + jitter(0.1)),
    }
    rgb = np.zeros((h, w, 3))
    for cls, c in colors.items():
        rgb[labels == cls] = c
    rows = np.arange(h)[:, None]
    # sky brightens toward the horizon, facades carry a window grid
    sky = labels == SKY
    rgb[sky] += (0.15 * np.clip(rows / max(horizon, 1.0), 0, 1))[..., None].repeat(w, 1)[sky]
    cols = np.arange(w)[None, :]
    windows = ((rows % 4) < 2) & ((cols % 4) < 2) & (labels == BUILDING)
    rgb[windows] *= 0.7
    # aerial perspective ties appearance to geometry
    haze = (np.clip(depth / d_max, 0, 1) * 0.3)[..., None]
    haze[sky] = 0.0
    rgb = rgb * (1 - haze) + 0.75 * haze
    rgb += rng.normal(0.0, BASE_NOISE, size=rgb.shape)

    if shift.hue_delta:
        rgb = rotate_hue(rgb, shift.hue_delta)
    rgb += shift.brightness_delta
    if shift.texture_noise:
        rgb += rng.normal(0.0, shift.texture_noise, size=rgb.shape)
    return np.clip(rgb, 0.0, 1.0)


def generate_toy(config: ToyWorldConfig, domain: Domain | str, split: str = "train") -> list[Sample]:
    """Generate ``config.n_scenes`` scenes for one domain.

    SOURCE scenes are unshifted and carry depth and labels for training.
    TARGET scenes are rendered with ``config.shift``; their labels are kept
    only for scoring (``labels_eval_only``) and no depth is attached.
    """
    domain = Domain(domain)
    dom_code = 0 if domain is Domain.SOURCE else 1
    rng = np.random.default_rng([config.seed, dom_code, _SPLIT_CODES[split]])
    shift = ToyShift() if domain is Domain.SOURCE else config.shift
    h, w = config.image_size
    samples = []
    for i in range(config.n_scenes):
        labels, depth, horizon = _scene_geometry(rng, h, w, config.d_max)
        rgb = _render(rng, labels, depth, horizon, config.d_max, shift)
        image = (rgb * 2.0 - 1.0).astype(np.float32)
        samples.append(Sample(
            image=image,
            depth=depth.astype(np.float32) if domain is Domain.SOURCE else None,
            labels=labels,
            domain=domain,
            id=f"toy_{domain.value}_{split}_{i:05d}",
            labels_eval_only=domain is Domain.TARGET,
        ))
    return samples


def toy_benchmark(config: dict) -> dict[str, list[Sample]]:
    """Source, target and held-out target-val splits described by ``config["toy"]``.

    The world is fixed by ``toy.world_seed`` so that training seeds vary only
    the networks, pair order and augmentation.
    """
    t = config["toy"]
    world = dict(seed=int(t["world_seed"]), image_size=tuple(t["image_size"]), shift=ToyShift(**t["shift"]),
                 d_max=float(config["depth"]["d_max"]))
    return {
        "source": generate_toy(ToyWorldConfig(n_scenes=int(t["n_source"]), **world), Domain.SOURCE),
        "target": generate_toy(ToyWorldConfig(n_scenes=int(t["n_target"]), **world), Domain.TARGET),
        "eval": generate_toy(ToyWorldConfig(n_scenes=int(t["n_eval"]), **world), Domain.TARGET, split="val"),
    }
