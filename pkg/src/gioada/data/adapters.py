"""On-disk dataset adapters.

Directory layouts (``root`` is ``DatasetSpec.root``):

VKITTI / TOY
    images/<id>.png   8-bit RGB
    depth/<id>.png    16-bit, centimeters
    labels/<id>.png   8-bit category ids (see ``labelmaps/vkitti.json`` / ``toy.json``)
KITTI
    {training,testing}/image_2/<id>.png, training/semantic/<id>.png (Cityscapes labelIds)
CITYSCAPES
    leftImg8bit/<split>/<city>/<id>_leftImg8bit.png
    gtFine/<split>/<city>/<id>_gtFine_labelIds.png
SYNTHIA (RAND-CITYSCAPES)
    RGB/<id>.png, GT/LABELS/<id>.png (16-bit, class id in the first channel),
    Depth/Depth/<id>.png (16-bit, centimeters in the first channel)
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import cv2
import numpy as np

from ..core import ClassSet, ConfigError, Domain, Sample, preprocess_image


class DatasetError(IOError):
    pass


class Layout(str, enum.Enum):
    VKITTI = "vkitti"
    KITTI = "kitti"
    SYNTHIA = "synthia"
    CITYSCAPES = "cityscapes"
    TOY = "toy"


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


# (H, W); Cityscapes is used at half resolution
DEFAULT_RESIZE = {Layout.CITYSCAPES: (512, 1024)}
_LABELMAP_FILE = {
    Layout.VKITTI: "vkitti.json", Layout.TOY: "toy.json", Layout.KITTI: "cityscapes.json",
    Layout.CITYSCAPES: "cityscapes.json", Layout.SYNTHIA: "synthia.json",
}
_SYNTHETIC = {Layout.VKITTI, Layout.SYNTHIA, Layout.TOY}


@dataclass(frozen=True)
class DatasetSpec:
    root: Path
    layout: Layout
    class_set: ClassSet
    split: Split = Split.TRAIN
    resize: tuple[int, int] | None = None
    domain: Domain | None = None
    labelmap: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))
        object.__setattr__(self, "layout", Layout(self.layout))
        object.__setattr__(self, "split", Split(self.split))
        if self.resize is not None:
            object.__setattr__(self, "resize", tuple(int(v) for v in self.resize))
        if self.domain is None:
            object.__setattr__(self, "domain", Domain.SOURCE if self.layout in _SYNTHETIC else Domain.TARGET)
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def effective_resize(self):
        return self.resize if self.resize is not None else DEFAULT_RESIZE.get(self.layout)

    def __hash__(self):
        return hash((str(self.root), self.layout, self.split, self.resize, self.domain))


# ---------------------------------------------------------------------------
# label mapping


def read_labelmap(path: Path | str | None, layout: Layout) -> dict:
    if path is None:
        text = resources.files("gioada.data").joinpath("labelmaps", _LABELMAP_FILE[layout]).read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def build_lut(labelmap: dict, class_set: ClassSet) -> np.ndarray:
    """Raw id -> class index lookup table. Ids missing from the table map to -1 (invalid)."""
    lut = np.full(65536, -1, dtype=np.int64)
    index = {n: i for i, n in enumerate(class_set.names)}
    for raw, name in labelmap.get("ids", {}).items():
        lut[int(raw)] = index.get(name, class_set.ignore_index) if name is not None else class_set.ignore_index
    return lut


def remap_labels(raw: np.ndarray, lut: np.ndarray, source: str = "") -> np.ndarray:
    out = lut[raw.astype(np.int64)]
    if (out < 0).any():
        bad = np.unique(raw[out < 0])
        raise DatasetError(f"{source}: label ids {bad.tolist()} are not in the label mapping table")
    return out


def remap_colors(raw_rgb: np.ndarray, labelmap: dict, class_set: ClassSet, source: str = "") -> np.ndarray:
    index = {n: i for i, n in enumerate(class_set.names)}
    out = np.full(raw_rgb.shape[:2], -1, dtype=np.int64)
    for key, name in labelmap["colors"].items():
        color = np.array([int(v) for v in key.split(",")])
        mask = np.all(raw_rgb == color, axis=-1)
        out[mask] = index.get(name, class_set.ignore_index) if name is not None else class_set.ignore_index
    if (out < 0).any():
        bad = np.unique(raw_rgb[out < 0].reshape(-1, 3), axis=0)[:5]
        raise DatasetError(f"{source}: label colors {bad.tolist()} are not in the label mapping table")
    return out


# ---------------------------------------------------------------------------
# file access


def read_image(path: Path, flags=cv2.IMREAD_UNCHANGED) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    img = cv2.imread(str(path), flags)
    if img is None:
        raise DatasetError(f"cannot decode image: {path}")
    return img


def read_rgb(path: Path) -> np.ndarray:
    return cv2.cvtColor(read_image(path, cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB)


def write_rgb(path: Path, rgb: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), cv2.cvtColor(np.asarray(rgb, dtype=np.uint8), cv2.COLOR_RGB2BGR))


def write_gray(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), arr)


def _first_channel(arr: np.ndarray) -> np.ndarray:
    # cv2 returns BGR, so the "first" (R) channel is the last one
    return arr[..., 2] if arr.ndim == 3 else arr


def decode_depth_cm(raw: np.ndarray) -> np.ndarray:
    """16-bit centimeter depth -> meters."""
    return _first_channel(raw).astype(np.float32) / 100.0


def _files(layout: Layout, root: Path, split: Split) -> list[tuple[Path, Path | None, Path | None]]:
    """(image, labels, depth) triples; labels/depth may be None."""
    if layout in (Layout.VKITTI, Layout.TOY):
        images = sorted((root / "images").glob("*.png"))
        return [(p, root / "labels" / p.name, root / "depth" / p.name) for p in images]
    if layout is Layout.SYNTHIA:
        images = sorted((root / "RGB").glob("*.png"))
        return [(p, root / "GT" / "LABELS" / p.name, root / "Depth" / "Depth" / p.name) for p in images]
    if layout is Layout.KITTI:
        sub = "testing" if split is Split.TEST else "training"
        images = sorted((root / sub / "image_2").glob("*.png"))
        return [(p, root / sub / "semantic" / p.name, None) for p in images]
    if layout is Layout.CITYSCAPES:
        images = sorted((root / "leftImg8bit" / split.value).glob("*/*_leftImg8bit.png"))
        out = []
        for p in images:
            stem = p.name[: -len("_leftImg8bit.png")]
            out.append((p, root / "gtFine" / split.value / p.parent.name / f"{stem}_gtFine_labelIds.png", None))
        return out
    raise ConfigError(f"unknown layout {layout}")


@lru_cache(maxsize=32)
def _index(spec: DatasetSpec):
    if not spec.root.is_dir():
        raise DatasetError(f"dataset root does not exist: {spec.root}")
    files = _files(spec.layout, spec.root, spec.split)
    if not files:
        raise DatasetError(f"no images found for layout {spec.layout.value} under {spec.root}")
    labelmap = read_labelmap(spec.labelmap, spec.layout)
    return files, labelmap, build_lut(labelmap, spec.class_set)


def dataset_length(spec: DatasetSpec) -> int:
    return len(_index(spec)[0])


def _resize(arr: np.ndarray, size: tuple[int, int] | None, interp) -> np.ndarray:
    if size is None or arr.shape[:2] == tuple(size):
        return arr
    return cv2.resize(arr, (size[1], size[0]), interpolation=interp)


def load_sample(spec: DatasetSpec, index: int) -> Sample:
    files, labelmap, lut = _index(spec)
    if not 0 <= index < len(files):
        raise IndexError(f"index {index} out of range for dataset of length {len(files)}")
    img_path, lab_path, dep_path = files[index]
    size = spec.effective_resize

    image = preprocess_image(_resize(read_rgb(img_path), size, cv2.INTER_LINEAR))

    labels = None
    if lab_path is not None and lab_path.is_file():
        raw = read_image(lab_path)
        if "colors" in labelmap and raw.ndim == 3 and raw.dtype == np.uint8:
            mapped = remap_colors(cv2.cvtColor(raw, cv2.COLOR_BGR2RGB), labelmap, spec.class_set, str(lab_path))
        else:
            mapped = remap_labels(_first_channel(raw), lut, str(lab_path))
        labels = _resize(mapped.astype(np.uint8) if spec.class_set.ignore_index < 256 else mapped,
                         size, cv2.INTER_NEAREST).astype(np.int64)
    elif spec.domain is Domain.SOURCE:
        raise DatasetError(f"missing label file for source sample: {lab_path}")

    depth = None
    if spec.domain is Domain.SOURCE and dep_path is not None:
        depth = _resize(decode_depth_cm(read_image(dep_path)), size, cv2.INTER_NEAREST)

    sample = Sample(image=image, depth=depth, labels=labels, domain=spec.domain,
                    id=img_path.stem, labels_eval_only=spec.domain is Domain.TARGET)
    sample.validate()
    return sample


class FolderDataset:
    """Sequence view over a :class:`DatasetSpec`."""

    def __init__(self, spec: DatasetSpec):
        self.spec = spec
        self._len = dataset_length(spec)

    def __len__(self):
        return self._len

    def __getitem__(self, index):
        return load_sample(self.spec, index)


def save_samples(samples, root: Path | str) -> Path:
    """Write samples in the VKITTI/TOY layout (labels and depth only when present)."""
    root = Path(root)
    for s in samples:
        name = f"{s.id}.png"
        write_rgb(root / "images" / name, ((s.image * 0.5 + 0.5) * 255).round().clip(0, 255))
        if s.labels is not None:
            write_gray(root / "labels" / name, s.labels.astype(np.uint8))
        if s.depth is not None:
            write_gray(root / "depth" / name, np.clip(np.rint(s.depth * 100.0), 0, 65535).astype(np.uint16))
    return root
