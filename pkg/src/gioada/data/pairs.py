"""Flip augmentation and the (source, target) mini-batch stream."""

from __future__ import annotations

import dataclasses
from typing import Iterator, Sequence

import numpy as np

from ..core import ConfigError, Domain, Sample
from .adapters import DatasetSpec, FolderDataset


def hflip(sample: Sample) -> Sample:
    flip = lambda a: None if a is None else np.ascontiguousarray(a[:, ::-1])  # noqa: E731
    return dataclasses.replace(sample, image=flip(sample.image), depth=flip(sample.depth),
                               labels=flip(sample.labels))


def augment(sample: Sample, rng: np.random.Generator, p: float = 0.5, force: bool | None = None) -> Sample:
    """Random horizontal flip of image, labels and depth together."""
    do_flip = rng.random() < p if force is None else force
    return hflip(sample) if do_flip else sample


def as_dataset(data) -> Sequence[Sample]:
    return FolderDataset(data) if isinstance(data, DatasetSpec) else data


def pair_indices(n_source: int, n_target: int, seed: int, step: int) -> tuple[int, int]:
    """Indices used at global ``step``.

    Source order is reshuffled each epoch (epoch length = ``n_source``);
    target indices run through independently reshuffled cycles.
    """
    epoch, offset = divmod(step, n_source)
    src = np.random.default_rng([seed, 0, epoch]).permutation(n_source)[offset]
    cycle, toff = divmod(step, n_target)
    tgt = np.random.default_rng([seed, 1, cycle]).permutation(n_target)[toff]
    return int(src), int(tgt)


def make_pair_iterator(source, target, seed: int, start_step: int = 0, n_steps: int | None = None,
                       augment_p: float = 0.5) -> Iterator[tuple[Sample, Sample]]:
    """Yield ``(source_sample, target_sample)`` pairs starting at ``start_step``.

    Everything is a function of ``(seed, step)`` so a resumed run sees the
    same stream. ``n_steps=None`` yields one source epoch.
    """
    source, target = as_dataset(source), as_dataset(target)
    if len(source) == 0 or len(target) == 0:
        raise ConfigError("source and target datasets must be non-empty")
    if n_steps is None:
        n_steps = len(source)
    for step in range(start_step, start_step + n_steps):
        i, j = pair_indices(len(source), len(target), seed, step)
        s, t = source[i], target[j]
        if s.domain is not Domain.SOURCE or t.domain is not Domain.TARGET:
            raise ConfigError(f"expected (SOURCE, TARGET) samples, got ({s.domain.value}, {t.domain.value})")
        if augment_p > 0:
            s = augment(s, np.random.default_rng([seed, 2, step]), augment_p)
            t = augment(t, np.random.default_rng([seed, 3, step]), augment_p)
        yield s, t
