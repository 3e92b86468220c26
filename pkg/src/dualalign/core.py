"""Shared domain types: volumes, slices, batches, loss weights and records.

Conventions used throughout the package:

* volume arrays are indexed ``(x, y, z)`` = (sagittal, coronal, axial) with a
  physical voxel spacing in mm per axis,
* images are stored as float32, label maps as integer class indices with
  class 0 reserved for background,
* all types here are immutable value objects; arrays must not be mutated
  after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .errors import LabelOutOfRange, NonFiniteData, ShapeMismatch

DOMAINS = ("source", "target")

SLICING_AXES = {"sagittal": 0, "coronal": 1, "axial": 2}


def _check_domain(domain: str) -> None:
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")


@dataclass(frozen=True)
class Volume3D:
    """A 3D scalar image with voxel spacing; the unit of evaluation."""

    voxels: np.ndarray
    spacing: tuple[float, float, float]
    modality: str = "source"
    subject_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.voxels)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"voxels must be a non-empty 3D array, got shape {v.shape}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing components must be > 0, got {self.spacing}")
        object.__setattr__(self, "voxels", v.astype(np.float32, copy=False))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True)
class LabelVolume:
    """Integer class indices paired with a Volume3D of equal shape."""

    labels: np.ndarray
    num_classes: int
    spacing: tuple[float, float, float]

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3:
            raise ValueError(f"labels must be 3D, got shape {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ValueError(f"labels must be integer-typed, got {lab.dtype}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise LabelOutOfRange(
                f"labels must lie in [0, {self.num_classes}), got range "
                f"[{lab.min()}, {lab.max()}]"
            )
        object.__setattr__(self, "labels", lab.astype(np.int32, copy=False))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class Slice2D:
    """A single square training slice; labeled iff it comes from the labeled side."""

    pixels: np.ndarray
    label: Optional[np.ndarray] = None
    domain: str = "source"

    def __post_init__(self):
        _check_domain(self.domain)
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValueError(f"pixels must be square 2D, got shape {px.shape}")
        if (self.label is None) == (self.domain == "source"):
            raise ValueError("label must be present exactly for source-domain slices")
        object.__setattr__(self, "pixels", px.astype(np.float32, copy=False))
        if self.label is not None:
            lab = np.asarray(self.label)
            if lab.shape != px.shape:
                raise ShapeMismatch(f"label shape {lab.shape} != pixels {px.shape}")
            object.__setattr__(self, "label", lab.astype(np.int32, copy=False))

    @property
    def resolution(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class SliceBatch:
    """A homogeneous mini-batch of slices, images stored B x H x W x 1."""

    images: np.ndarray
    labels: Optional[np.ndarray]
    domain: str

    def __post_init__(self):
        _check_domain(self.domain)
        img = np.asarray(self.images)
        if img.ndim != 4 or img.shape[0] < 1 or img.shape[3] != 1:
            raise ValueError(f"images must be B x H x W x 1 with B >= 1, got {img.shape}")
        object.__setattr__(self, "images", img.astype(np.float32, copy=False))
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != img.shape[:3]:
                raise ShapeMismatch(f"labels shape {lab.shape} != images {img.shape[:3]}")
            object.__setattr__(self, "labels", lab.astype(np.int64, copy=False))

    @property
    def batch_size(self) -> int:
        return self.images.shape[0]


@dataclass(frozen=True)
class LossWeights:
    """Trade-off coefficients for the eight terms of the overall objective.

    ``adv_target`` multiplies the target-domain image GAN term; the remaining
    seven are the trade-off parameters of the overall objective with their
    published defaults. A weight of exactly 0 disables the term entirely,
    including the matching discriminator head.
    """

    adv_target: float = 1.0
    adv_source: float = 0.1
    cycle: float = 10.0
    seg_main: float = 1.0
    seg_aux: float = 0.1
    adv_pred_main: float = 0.1
    adv_pred_aux: float = 0.01
    adv_source_aux: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


# Generator-phase objective terms, in the order they enter the total objective.
GEN_TERMS = (
    "adv_target",
    "adv_source",
    "cycle",
    "seg_main",
    "seg_aux",
    "adv_pred_main",
    "adv_pred_aux",
    "adv_source_aux",
)

# Per-discriminator losses (each head tracked separately).
DISC_TERMS = ("d_target", "d_source", "d_source_aux", "d_pred_main", "d_pred_aux")


@dataclass
class LossRecord:
    """Per-iteration loss values; ``None`` marks a term disabled in this run."""

    iteration: int = 0
    adv_target: Optional[float] = None
    adv_source: Optional[float] = None
    cycle: Optional[float] = None
    seg_main: Optional[float] = None
    seg_aux: Optional[float] = None
    adv_pred_main: Optional[float] = None
    adv_pred_aux: Optional[float] = None
    adv_source_aux: Optional[float] = None
    d_target: Optional[float] = None
    d_source: Optional[float] = None
    d_source_aux: Optional[float] = None
    d_pred_main: Optional[float] = None
    d_pred_aux: Optional[float] = None

    def set(self, name: str, value: float) -> None:
        if not np.isfinite(value):
            raise NonFiniteData(f"loss term {name} is not finite: {value}")
        setattr(self, name, float(value))

    def present(self) -> dict:
        """All recorded terms; disabled terms are absent, never zero."""
        out = {"iteration": self.iteration}
        for name in GEN_TERMS + DISC_TERMS:
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        return out


def validate_pair(volume: Volume3D, labels: LabelVolume) -> None:
    """Check that a volume/label pair is consistent; raise on any violation."""
    if volume.shape != labels.shape:
        raise ShapeMismatch(f"volume shape {volume.shape} != label shape {labels.shape}")
    if volume.spacing != labels.spacing:
        raise ShapeMismatch(
            f"volume spacing {volume.spacing} != label spacing {labels.spacing}"
        )
    if not np.isfinite(volume.voxels).all():
        raise NonFiniteData("volume contains NaN or Inf voxels")
    lab = labels.labels
    if lab.min() < 0 or lab.max() >= labels.num_classes:
        raise LabelOutOfRange(
            f"labels outside [0, {labels.num_classes}): [{lab.min()}, {lab.max()}]"
        )
