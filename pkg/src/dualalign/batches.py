"""Deterministic mini-batch sampling over slice datasets.

Batches are a pure function of (seed, iteration): epoch ``e`` uses the
permutation drawn from ``default_rng([seed, e])`` and the final partial batch
of every epoch is dropped. This makes checkpoint resume trivially exact.
"""

from __future__ import annotations

from typing import Iterator, Optional, Sequence

import numpy as np

from .core import Slice2D, SliceBatch
from .errors import EmptyDataset
from .preprocess import AugmentConfig, augment


def batches_per_epoch(dataset: Sequence[Slice2D], batch_size: int) -> int:
    return len(dataset) // batch_size


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _augment_seed(seed: int, epoch: int, position: int) -> int:
    return int(np.random.SeedSequence((seed, epoch, position)).generate_state(1)[0])


def batch_at(
    dataset: Sequence[Slice2D],
    batch_size: int,
    seed: int,
    iteration: int,
    augment_cfg: Optional[AugmentConfig] = None,
) -> SliceBatch:
    """The batch served at a given iteration index (0-based)."""
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    per_epoch = batches_per_epoch(dataset, batch_size)
    if per_epoch == 0:
        raise EmptyDataset(
            f"{len(dataset)} slices cannot fill a batch of {batch_size}"
        )
    epoch, pos = divmod(iteration, per_epoch)
    perm = _epoch_permutation(seed, epoch, len(dataset))
    picks = perm[pos * batch_size : (pos + 1) * batch_size]

    domain = dataset[picks[0]].domain
    samples = []
    for j, idx in enumerate(picks):
        s = dataset[idx]
        if s.domain != domain:
            raise ValueError("batch would mix domains")
        if augment_cfg is not None and augment_cfg.enabled:
            s = augment(s, augment_cfg, _augment_seed(seed, epoch, pos * batch_size + j))
        samples.append(s)

    images = np.stack([s.pixels for s in samples])[..., None]
    labels = None
    if all(s.label is not None for s in samples):
        labels = np.stack([s.label for s in samples])
    return SliceBatch(images, labels, domain)


def batch_stream(
    dataset: Sequence[Slice2D],
    batch_size: int,
    seed: int,
    augment_cfg: Optional[AugmentConfig] = None,
) -> Iterator[SliceBatch]:
    """Endless stream of shuffled batches, deterministic under the seed."""
    if len(dataset) == 0:
        raise EmptyDataset("dataset is empty")
    if batches_per_epoch(dataset, batch_size) == 0:
        raise EmptyDataset(f"{len(dataset)} slices cannot fill a batch of {batch_size}")
    iteration = 0
    while True:
        yield batch_at(dataset, batch_size, seed, iteration, augment_cfg)
        iteration += 1
