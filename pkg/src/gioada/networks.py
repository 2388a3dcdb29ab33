"""Image transform network, dual-head task network and PatchGAN discriminators."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class ShapeError(ValueError):
    pass


class PretrainedWeightsError(RuntimeError):
    pass


class Backbone(str, enum.Enum):
    VGG16 = "vgg16"
    TINY = "tiny"


@dataclass(frozen=True)
class TransformNetConfig:
    in_channels: int
    base_width: int = 64
    n_residual_blocks: int = 6
    # residual path from the input image to the output (off = plain CycleGAN generator)
    image_skip: bool = False

    def __post_init__(self):
        if self.in_channels < 3:
            raise ValueError(f"in_channels must be >= 3, got {self.in_channels}")
        if self.n_residual_blocks < 1:
            raise ValueError("n_residual_blocks must be >= 1")

    @classmethod
    def for_size(cls, in_channels: int, height: int, **kw) -> "TransformNetConfig":
        """CycleGAN convention: 9 residual blocks at >=256px, 6 below."""
        kw.setdefault("n_residual_blocks", 9 if height >= 256 else 6)
        return cls(in_channels=in_channels, **kw)


@dataclass(frozen=True)
class TaskNetConfig:
    num_classes: int
    backbone: Backbone = Backbone.VGG16
    depth_head: bool = True
    output_stride: int = 8
    width: int = 32

    def __post_init__(self):
        object.__setattr__(self, "backbone", Backbone(self.backbone))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.backbone is Backbone.VGG16 and self.output_stride != 8:
            raise ValueError("the DeepLab VGG16 backbone has output stride 8")
        if self.backbone is Backbone.TINY and self.output_stride not in (1, 2, 4):
            raise ValueError("TINY backbone supports output_stride 1, 2 or 4")

    @classmethod
    def tiny(cls, num_classes: int, **kw) -> "TaskNetConfig":
        kw.setdefault("output_stride", 2)
        return cls(num_classes=num_classes, backbone=Backbone.TINY, **kw)


@dataclass(frozen=True)
class PatchDiscriminatorConfig:
    in_channels: int
    n_layers: int = 3
    base_width: int = 64
    kernel_size: int = 4
    padding: int = 1

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")

    @property
    def strides(self) -> tuple[int, ...]:
        return (2,) * self.n_layers + (1, 1)

    def receptive_field(self) -> int:
        rf = 1
        for s in reversed(self.strides):
            rf = (rf - 1) * s + self.kernel_size
        return rf

    def output_size(self, size: int) -> int:
        for s in self.strides:
            size = (size + 2 * self.padding - self.kernel_size) // s + 1
        return size


# ---------------------------------------------------------------------------
# image transform network


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class TransformNet(nn.Module):
    """CycleGAN-style generator whose first conv takes image + side channels."""

    def __init__(self, cfg: TransformNetConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(cfg.in_channels, w, 7),
            nn.InstanceNorm2d(w),
            nn.ReLU(True),
        ]
        for mult in (1, 2):
            layers += [
                nn.Conv2d(w * mult, w * mult * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(w * mult * 2),
                nn.ReLU(True),
            ]
        layers += [ResidualBlock(w * 4) for _ in range(cfg.n_residual_blocks)]
        for mult in (4, 2):
            layers += [
                nn.ConvTranspose2d(w * mult, w * mult // 2, 3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(w * mult // 2),
                nn.ReLU(True),
            ]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(w, 3, 7)]
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"transform net expects {self.cfg.in_channels} input channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        ph, pw = (-h) % 4, (-w) % 4
        xp = F.pad(x, (0, pw, 0, ph), mode="replicate") if ph or pw else x
        out = self.model(xp)[..., :h, :w]
        if self.cfg.image_skip:
            out = out + torch.atanh(x[:, :3].clamp(-0.999, 0.999))
        return torch.tanh(out)


# ---------------------------------------------------------------------------
# task network


def _conv_relu(cin, cout, stride=1, dilation=1):
    return [nn.Conv2d(cin, cout, 3, stride=stride, padding=dilation, dilation=dilation), nn.ReLU(True)]


class TinyBackbone(nn.Module):
    """Four plain conv blocks; no normalization so appearance shifts are not normalized away."""

    def __init__(self, width: int, output_stride: int):
        super().__init__()
        s2 = 2 if output_stride >= 2 else 1
        s3 = 2 if output_stride >= 4 else 1
        w = width
        self.features = nn.Sequential(
            *_conv_relu(3, w),
            *_conv_relu(w, w, stride=s2),
            *_conv_relu(w, 2 * w, stride=s3),
            *_conv_relu(2 * w, 2 * w, dilation=2),
        )
        self.out_channels = 2 * w

    def forward(self, x):
        return self.features(x)


# torchvision vgg16 ``features`` layout; pool4/pool5 are stride 1 and conv5 is dilated (DeepLab)
_VGG16_PLAN = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "m", 512, 512, 512, "m"]


class VGG16Backbone(nn.Module):
    def __init__(self):
        super().__init__()
        layers = []
        cin = 3
        dilation = 1
        for v in _VGG16_PLAN:
            if v == "M":
                layers.append(nn.MaxPool2d(3, stride=2, padding=1, ceil_mode=True))
            elif v == "m":
                layers.append(nn.MaxPool2d(3, stride=1, padding=1))
                dilation = 2
            else:
                layers += [nn.Conv2d(cin, v, 3, padding=dilation, dilation=dilation), nn.ReLU(True)]
                cin = v
        self.features = nn.Sequential(*layers)
        self.out_channels = 512

    def forward(self, x):
        return self.features(x)


def _deeplab_head(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, 1024, 3, padding=12, dilation=12), nn.ReLU(True), nn.Dropout2d(0.5),
        nn.Conv2d(1024, 1024, 1), nn.ReLU(True), nn.Dropout2d(0.5),
        nn.Conv2d(1024, cout, 1),
    )


def _tiny_head(cin, cout, width):
    return nn.Sequential(*_conv_relu(cin, width), nn.Conv2d(width, cout, 1))


class TaskNet(nn.Module):
    """Shared backbone with a segmentation head and an optional depth head.

    ``forward`` returns ``(seg_logits, depth)`` at input resolution; depth is
    sigmoid-squashed into the normalized [0, 1] range or ``None``.
    """

    def __init__(self, cfg: TaskNetConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.backbone is Backbone.VGG16:
            self.backbone = VGG16Backbone()
            make_head = _deeplab_head
        else:
            self.backbone = TinyBackbone(cfg.width, cfg.output_stride)
            make_head = lambda cin, cout: _tiny_head(cin, cout, cfg.width)  # noqa: E731
        self.seg_head = make_head(self.backbone.out_channels, cfg.num_classes)
        self.depth_head = make_head(self.backbone.out_channels, 1) if cfg.depth_head else None

    def forward(self, x):
        if x.shape[1] != 3:
            raise ShapeError(f"task net expects 3 input channels, got {x.shape[1]}")
        size = x.shape[-2:]
        feats = self.backbone(x)
        seg = F.interpolate(self.seg_head(feats), size=size, mode="bilinear", align_corners=False)
        depth = None
        if self.depth_head is not None:
            d = F.interpolate(self.depth_head(feats), size=size, mode="bilinear", align_corners=False)
            depth = torch.sigmoid(d[:, 0])
        return seg, depth


# ---------------------------------------------------------------------------
# discriminator


class PatchDiscriminator(nn.Module):
    """pix2pix N-layer PatchGAN; emits a raw logit map."""

    def __init__(self, cfg: PatchDiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        k, p, w = cfg.kernel_size, cfg.padding, cfg.base_width
        layers = [nn.Conv2d(cfg.in_channels, w, k, stride=2, padding=p), nn.LeakyReLU(0.2, True)]
        mult = 1
        for n in range(1, cfg.n_layers + 1):
            prev, mult = mult, min(2 ** n, 8)
            stride = 2 if n < cfg.n_layers else 1
            layers += [
                nn.Conv2d(w * prev, w * mult, k, stride=stride, padding=p),
                nn.InstanceNorm2d(w * mult),
                nn.LeakyReLU(0.2, True),
            ]
        layers.append(nn.Conv2d(w * mult, 1, k, stride=1, padding=p))
        self.model = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"discriminator expects {self.cfg.in_channels} channels, got {x.shape[1]}")
        rf = self.cfg.receptive_field()
        if min(x.shape[-2:]) < rf:
            raise ShapeError(f"input {tuple(x.shape[-2:])} is smaller than the receptive field {rf}")
        return self.model(x)[:, 0]


# ---------------------------------------------------------------------------
# construction / initialization


def _gaussian_init(module: nn.Module, gen: torch.Generator, std: float | None) -> None:
    """Conv weights ~ N(0, std) (He-scaled when ``std`` is None), biases 0."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            s = std
            if s is None:
                fan_in = m.weight[0].numel() if isinstance(m, nn.Conv2d) else m.weight.shape[0] * m.weight[0, 0].numel()
                s = float(np.sqrt(2.0 / fan_in))
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * s)
                if m.bias is not None:
                    m.bias.zero_()


def load_pretrained_backbone(backbone: VGG16Backbone, path: str | Path) -> list[tuple[str, tuple]]:
    """Load torchvision-style ``features.*`` VGG16 weights; returns the loaded manifest."""
    path = Path(path)
    if not path.is_file():
        raise PretrainedWeightsError(f"pretrained weight file not found: {path}")
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:  # corrupt / foreign file
        raise PretrainedWeightsError(f"cannot read pretrained weights from {path}: {e}") from e
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    own = backbone.state_dict()
    manifest = []
    for key, tensor in own.items():
        if key not in state:
            raise PretrainedWeightsError(f"{path}: missing backbone key {key!r}")
        if tuple(state[key].shape) != tuple(tensor.shape):
            raise PretrainedWeightsError(
                f"{path}: shape mismatch for {key!r}: file {tuple(state[key].shape)} vs model {tuple(tensor.shape)}")
        manifest.append((key, tuple(tensor.shape)))
    backbone.load_state_dict({k: state[k] for k in own})
    return manifest


def init_params(cfg, seed: int, pretrained: str | Path | None = None) -> nn.Module:
    """Build the network described by ``cfg`` with seeded Gaussian weights."""
    gen = torch.Generator().manual_seed(int(seed))
    if isinstance(cfg, TransformNetConfig):
        net = TransformNet(cfg)
        _gaussian_init(net, gen, 0.02)
    elif isinstance(cfg, PatchDiscriminatorConfig):
        net = PatchDiscriminator(cfg)
        _gaussian_init(net, gen, 0.02)
    elif isinstance(cfg, TaskNetConfig):
        net = TaskNet(cfg)
        _gaussian_init(net, gen, None)
        if pretrained:
            if cfg.backbone is not Backbone.VGG16:
                raise PretrainedWeightsError("pretrained weights are only supported for the VGG16 backbone")
            load_pretrained_backbone(net.backbone, pretrained)
    else:
        raise TypeError(f"unknown network config {type(cfg).__name__}")
    return net


def param_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def to_nchw(hwc: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """HxWxC (or NxHxWxC) array -> NxCxHxW tensor."""
    t = torch.as_tensor(np.asarray(hwc), dtype=dtype)
    if t.ndim == 3:
        t = t[None]
    return t.permute(0, 3, 1, 2).contiguous()


def to_hwc(nchw: torch.Tensor) -> np.ndarray:
    return nchw.detach().cpu().permute(0, 2, 3, 1).numpy()
