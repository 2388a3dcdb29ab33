from .adapters import (DatasetError, DatasetSpec, FolderDataset, Layout, Split, dataset_length,
                       decode_depth_cm, load_sample, save_samples)
from .pairs import augment, hflip, make_pair_iterator, pair_indices
from .toy import ToyShift, ToyWorldConfig, generate_toy, toy_benchmark

__all__ = [
    "DatasetError", "DatasetSpec", "FolderDataset", "Layout", "Split", "ToyShift", "ToyWorldConfig",
    "augment", "dataset_length", "decode_depth_cm", "generate_toy", "hflip", "load_sample",
    "make_pair_iterator", "pair_indices", "save_samples", "toy_benchmark",
]
