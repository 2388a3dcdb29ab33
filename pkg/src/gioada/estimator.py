"""Scikit-learn style front end over :class:`~gioada.trainer.GIOAdaTrainer`.

Arrays follow image conventions rather than the 2-D ``(n_samples, n_features)``
layout: ``X`` is ``N x H x W x 3`` (uint8, or float in [-1, 1]), ``y`` is
``N x H x W`` integer labels (``255`` = ignore) and ``depth`` is
``N x H x W`` metres.
"""
from __future__ import annotations

import copy
import json

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (CLASS_SETS, DEFAULT_CONFIG, IGNORE_INDEX, ConfigError, Domain, Sample, denormalize_depth,
                   preprocess_image, set_dotted)
from .evaluation import ConfusionMatrix, accumulate, miou
from .trainer import InputLevel, Variant, run_training


def check_images(X, name: str = "X") -> np.ndarray:
    """Validate an image batch and return float32 in [-1, 1]."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (n, height, width, 3), got {X.shape}")
    if X.dtype == np.uint8:
        return preprocess_image(X)
    X = check_array(X, allow_nd=True, dtype=np.float32, ensure_all_finite=True, input_name=name)
    if X.min() < -1.0 - 1e-6 or X.max() > 1.0 + 1e-6:
        raise ValueError(f"float {name} must lie in [-1, 1] (pass uint8 for 0..255 images)")
    return X


def check_label_maps(y, n_classes: int, shape: tuple[int, ...], name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if y.shape != tuple(shape):
        raise ValueError(f"{name} has shape {y.shape}, expected {tuple(shape)}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError(f"{name} must hold integer class ids")
    y = y.astype(np.int64)
    bad = (y != IGNORE_INDEX) & ((y < 0) | (y >= n_classes))
    if bad.any():
        raise ValueError(f"{name} holds ids {sorted(np.unique(y[bad]).tolist())} outside 0..{n_classes - 1} "
                         f"(and not the ignore id {IGNORE_INDEX})")
    return y


def check_depth_maps(depth, shape: tuple[int, ...], name: str = "depth") -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim == 2:
        depth = depth[None]
    if depth.shape != tuple(shape):
        raise ValueError(f"{name} has shape {depth.shape}, expected {tuple(shape)}")
    depth = check_array(depth, allow_nd=True, dtype=np.float32, input_name=name)
    if depth.min() < 0:
        raise ValueError(f"{name} must be non-negative metres")
    return depth


class GIOAdaSegmenter(BaseEstimator):
    """Domain-adaptive semantic segmentation with an auxiliary depth head.

    Parameters
    ----------
    variant : str
        Ablation variant (``"na"``, ``"+sd"``, ``"joint"``, ``"full"``, or ``"input:output"``).
    classes : str
        Class set name: ``"toy"``, ``"vkitti"`` or ``"synthia"``.
    lambda_depth, lambda_image, lambda_output : float
        Loss weights.
    max_steps : int
        Number of alternating updates (one source/target pair each).
    lr : float
        Adam learning rate for both optimizers.
    d_max : float
        Depth normalisation ceiling in metres.
    backbone : str
        ``"tiny"`` or ``"vgg16"``.
    augment : bool
        Random horizontal flips during training.
    config : dict or None
        Extra dotted-key overrides, e.g. ``{"model.disc_layers": 3}``.
    random_state : int
        Seeds initialisation, pair order and augmentation.
    """

    def __init__(self, variant: str = "full", classes: str = "toy", lambda_depth: float = 0.1,
                 lambda_image: float = 0.1, lambda_output: float = 0.001, max_steps: int = 2000,
                 lr: float = 2e-4, d_max: float = 100.0, backbone: str = "tiny", augment: bool = True,
                 config: dict | None = None, random_state: int = 0):
        self.variant = variant
        self.classes = classes
        self.lambda_depth = lambda_depth
        self.lambda_image = lambda_image
        self.lambda_output = lambda_output
        self.max_steps = max_steps
        self.lr = lr
        self.d_max = d_max
        self.backbone = backbone
        self.augment = augment
        self.config = config
        self.random_state = random_state

    def _build_config(self) -> dict:
        if self.classes not in CLASS_SETS:
            raise ConfigError(f"classes must be one of {sorted(CLASS_SETS)}")
        if int(self.max_steps) < 1:
            raise ConfigError("max_steps must be >= 1")
        cfg = copy.deepcopy(DEFAULT_CONFIG)
        cfg["seed"] = int(self.random_state)
        cfg["classes"] = self.classes
        cfg["weights"] = {"lambda_depth": float(self.lambda_depth), "lambda_image": float(self.lambda_image),
                          "lambda_output": float(self.lambda_output)}
        cfg["depth"]["d_max"] = float(self.d_max)
        cfg["train"].update(max_steps=int(self.max_steps), lr=float(self.lr), augment=bool(self.augment))
        cfg["model"]["backbone"] = self.backbone
        for key, value in (self.config or {}).items():
            set_dotted(cfg, key, value if isinstance(value, str) else json.dumps(value))
        return cfg

    def fit(self, X, y, depth=None, X_target=None, callback=None):
        """Train on labelled source ``(X, y, depth)`` and unlabelled target ``X_target``."""
        variant = Variant.parse(self.variant)
        config = self._build_config()
        n_classes = CLASS_SETS[self.classes].num_classes
        X = check_images(X)
        y = check_label_maps(y, n_classes, X.shape[:3])
        if depth is not None:
            depth = check_depth_maps(depth, X.shape[:3])
        elif variant.input_level in (InputLevel.GD_PLUS_D, InputLevel.GD_PLUS_SD):
            raise ValueError(f"variant {variant.label!r} feeds source depth to the transform network; pass depth=")
        adversarial = variant != Variant.baseline()
        if X_target is None:
            if adversarial:
                raise ValueError(f"variant {variant.label!r} adapts to a target domain; pass X_target=")
            X_target = X  # never read by the baseline, only paired
        X_target = check_images(X_target, "X_target")

        source = [Sample(image=X[i], labels=y[i], depth=None if depth is None else depth[i],
                         domain=Domain.SOURCE, id=f"src{i}") for i in range(len(X))]
        target = [Sample(image=X_target[i], domain=Domain.TARGET, id=f"tgt{i}") for i in range(len(X_target))]
        result = run_training(source, target, variant, config, callback=callback)
        self.trainer_ = result.trainer
        self.history_ = result.history
        self.classes_ = np.arange(n_classes)
        self.class_names_ = list(result.trainer.class_set.names)
        self.n_steps_ = result.trainer.step
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "trainer_")
        return self.trainer_.predict(check_images(X))[0]

    def predict_depth(self, X) -> np.ndarray:
        """Depth in metres, or raises if the model has no depth head."""
        check_is_fitted(self, "trainer_")
        depth = self.trainer_.predict(check_images(X))[1]
        if depth is None:
            raise ValueError("this model was trained without a depth head")
        return denormalize_depth(depth, self.trainer_.normalizer)

    def transform(self, X, y=None, depth=None) -> np.ndarray:
        """Translate source images toward the target domain with G_img.

        Geometry-aware variants need the same ``y``/``depth`` they were fit on.
        """
        check_is_fitted(self, "trainer_")
        X = check_images(X)
        w = self.trainer_.wiring
        n = len(self.classes_)
        if w.transform_semantics and y is None:
            raise ValueError("this transform network takes semantic maps; pass y=")
        if w.transform_depth and depth is None:
            raise ValueError("this transform network takes depth maps; pass depth=")
        y = check_label_maps(y, n, X.shape[:3]) if y is not None else [None] * len(X)
        depth = check_depth_maps(depth, X.shape[:3]) if depth is not None else [None] * len(X)
        return np.stack([self.trainer_.translate(Sample(image=X[i], labels=y[i], depth=depth[i]))
                         for i in range(len(X))])

    def score(self, X, y) -> float:
        """Mean IoU over the class set's evaluation subset."""
        check_is_fitted(self, "trainer_")
        X = check_images(X)
        y = check_label_maps(y, len(self.classes_), X.shape[:3])
        cm = ConfusionMatrix(len(self.classes_))
        for p, g in zip(self.predict(X), y):
            accumulate(cm, p, g)
        return miou(cm, self.trainer_.class_set.eval_subset)[1]
